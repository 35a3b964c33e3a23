//! The two restoration networks: the mask-free student (the only model
//! used at inference) and the mask-guided teacher, plus checkpoint
//! persistence for both.

mod checkpoint;
mod config;
mod student;
mod teacher;

use rand::Rng;

use crate::tensor::{Scalar, Shape, Tensor};

pub use checkpoint::{load_student, load_teacher, save_student, save_teacher};
pub use config::RestorerConfig;
pub use student::StudentModel;
pub use teacher::{FusionMode, TeacherModel};

/// He-style initialization for a (out, in, k, k) conv weight.
pub(crate) fn he_conv_init<T: Scalar>(
    out_ch: usize,
    in_ch: usize,
    k: usize,
    rng: &mut impl Rng,
) -> Tensor<T> {
    let std = (2.0 / (in_ch * k * k) as f64).sqrt();
    Tensor::randn(Shape::new(out_ch, in_ch, k, k), std, rng)
}
