use super::Tensor2;
use crate::error::{shape_err, Result};

/// A model whose trainable parameters can be enumerated in a fixed order.
///
/// The visiting order defines the flat layout used by the optimizer, the
/// gradient checker and the checkpoint format, so gradient bundles must be
/// values of the same type as the model they belong to.
pub trait ParamSet {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &Tensor2));

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor2));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.for_each_param(&mut |_, t| n += t.data().len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.for_each_param(&mut |_, t| out.extend_from_slice(t.data()));
        out
    }

    fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.num_params();
        if flat.len() != expected {
            return Err(shape_err!(
                "flat parameter vector has {} values, model has {}",
                flat.len(),
                expected
            ));
        }
        let mut offset = 0;
        self.for_each_param_mut(&mut |_, t| {
            let n = t.data().len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        });
        Ok(())
    }

    /// Sets every parameter to zero; used to build gradient accumulators.
    fn zero_all(&mut self) {
        self.for_each_param_mut(&mut |_, t| t.fill(0.0));
    }
}
