//! Two-stage training orchestration, validation, and the lambda sweep.

mod config;
mod dataset;
mod run;

pub use config::{Ablation, TrainConfig};
pub use dataset::{epoch_order, load_items, load_manifest_items, stack, synth_items, TrainItem};
pub use run::{
    default_sweep_grid, input_baseline, lambda_sweep, parameter_fingerprint, pretrain_teacher,
    sweep_csv, train_student, validate_student, validate_teacher, EpochRow, SweepRow, TrainReport,
};
