//! Small deterministic neural-network engine with hand-written gradients.
//!
//! Everything is `f64` so that analytic gradients can be checked against
//! central finite differences.

mod adam;
pub mod checkpoint;
mod dense;
mod gradcheck;
mod gru;
mod params;
mod schedule;
mod tensor;

pub use adam::AdamState;
pub use dense::{dropout_mask, elu, glorot_uniform, hadamard, Activation, DenseCache, DenseLayer};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use gru::{gru_step, GruCache, GruCell};
pub use params::ParamSet;
pub use schedule::{EpochRecord, Observation, PlateauTracker, TrainSchedule};
pub use tensor::{dot, Tensor2};

use crate::error::{shape_err, Result};

/// Mean squared error over all entries and its gradient w.r.t. `pred`.
pub fn mse(pred: &Tensor2, target: &Tensor2) -> Result<(f64, Tensor2)> {
    if pred.shape() != target.shape() {
        return Err(shape_err!("mse: {:?} vs {:?}", pred.shape(), target.shape()));
    }
    let n = pred.data().len().max(1) as f64;
    let mut grad = Tensor2::zeros(pred.rows(), pred.cols());
    let mut loss = 0.0;
    for ((g, p), t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        loss += d * d;
        *g = 2.0 * d / n;
    }
    Ok((loss / n, grad))
}

/// Derives a child seed from a parent seed and a stream tag (SplitMix64 finalizer).
pub fn derive_seed(parent: u64, tag: u64) -> u64 {
    let mut z = parent ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
