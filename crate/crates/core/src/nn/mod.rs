//! Small dense-matrix autodiff used by every trainable model in the crate.

pub mod check;
mod matrix;
mod optim;
mod params;
mod tape;

pub use matrix::{argmax, dot, log_softmax, sigmoid, softmax, Matrix};
pub use optim::{AdamW, WarmupSchedule};
pub use params::{ParamId, Params};
pub use tape::{Grads, Tape, Var};

use rand::Rng;

/// Inverted-dropout mask: kept entries scaled by `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Matrix {
    let keep = 1.0 - rate;
    let data = (0..rows * cols)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    Matrix::from_vec(rows, cols, data)
}
