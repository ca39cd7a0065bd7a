//! Numeric substrate: dense `f64` matrices, a define-by-run autodiff tape,
//! Adam, seeded random streams and a finite-difference gradient checker.

mod adam;
mod dense;
mod gradcheck;
pub mod kernels;
mod rng;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use dense::Tensor;
pub use gradcheck::grad_check;
pub use rng::Rng;
pub use tape::{Tape, Var};

pub(crate) use tape::softmax_rows_value;

/// Glorot-uniform initialisation with bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform_range(-a, a)).collect();
    Tensor::new(rows, cols, data).expect("shape")
}
