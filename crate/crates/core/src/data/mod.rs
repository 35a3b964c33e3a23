//! Paired-data synthesis and loading: scene generation, the degradation
//! model, patch cropping, translational registration, dataset splitting,
//! and grayscale PGM I/O.

mod degrade;
mod image;
mod manifest;
mod patches;
mod register;
mod scene;
mod split;

pub use degrade::{blur_reflect, degrade, motion_blur_kernel, DegradationConfig};
pub use image::{GrayImage, PgmDepth, RawPgm};
pub use manifest::{read_manifest, write_manifest, PairEntry};
pub use patches::{crop_patches, Patch, PatchGrid};
pub use register::{register_patch, Registration};
pub use scene::synth_scene;
pub use split::{split_dataset, SplitSpec};
