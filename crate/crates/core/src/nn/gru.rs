use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dense::{glorot_uniform, hadamard};
use super::{ParamSet, Tensor2};
use crate::error::{shape_err, Result};

/// Single-layer GRU cell with reset gate `r`, update gate `u` and candidate `n`:
///
/// ```text
/// r  = σ(x·Wr + h·Ur + br)
/// u  = σ(x·Wu + h·Uu + bu)
/// n  = tanh(x·Wn + (r ⊙ h)·Un + bn)
/// h' = u ⊙ h + (1 − u) ⊙ n
/// ```
///
/// Rows of `x` and `h` are independent sequences of a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub w_reset: Tensor2,
    pub w_update: Tensor2,
    pub w_cand: Tensor2,
    pub u_reset: Tensor2,
    pub u_update: Tensor2,
    pub u_cand: Tensor2,
    pub b_reset: Tensor2,
    pub b_update: Tensor2,
    pub b_cand: Tensor2,
}

#[derive(Debug, Clone)]
pub struct GruCache {
    input: Tensor2,
    hidden: Tensor2,
    reset: Tensor2,
    update: Tensor2,
    cand: Tensor2,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            w_reset: glorot_uniform(input_dim, hidden, rng),
            w_update: glorot_uniform(input_dim, hidden, rng),
            w_cand: glorot_uniform(input_dim, hidden, rng),
            u_reset: glorot_uniform(hidden, hidden, rng),
            u_update: glorot_uniform(hidden, hidden, rng),
            u_cand: glorot_uniform(hidden, hidden, rng),
            b_reset: Tensor2::zeros(1, hidden),
            b_update: Tensor2::zeros(1, hidden),
            b_cand: Tensor2::zeros(1, hidden),
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w_reset: Tensor2::zeros(input_dim, hidden),
            w_update: Tensor2::zeros(input_dim, hidden),
            w_cand: Tensor2::zeros(input_dim, hidden),
            u_reset: Tensor2::zeros(hidden, hidden),
            u_update: Tensor2::zeros(hidden, hidden),
            u_cand: Tensor2::zeros(hidden, hidden),
            b_reset: Tensor2::zeros(1, hidden),
            b_update: Tensor2::zeros(1, hidden),
            b_cand: Tensor2::zeros(1, hidden),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_reset.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_reset.cols()
    }

    fn gate(x_part: Tensor2, h_part: &Tensor2, bias: &Tensor2, f: impl Fn(f64) -> f64) -> Tensor2 {
        let mut g = x_part;
        g.add_assign(h_part);
        let b = bias.data();
        for r in 0..g.rows() {
            for (v, bj) in g.row_mut(r).iter_mut().zip(b) {
                *v = f(*v + bj);
            }
        }
        g
    }

    pub fn step_batch(&self, input: &Tensor2, hidden: &Tensor2) -> Result<(Tensor2, GruCache)> {
        let h = self.hidden_dim();
        if input.cols() != self.input_dim() || hidden.cols() != h || input.rows() != hidden.rows() {
            return Err(shape_err!(
                "GRU step: input {:?}, hidden {:?}, cell {}→{}",
                input.shape(),
                hidden.shape(),
                self.input_dim(),
                h
            ));
        }
        let reset = Self::gate(
            input.matmul(&self.w_reset)?,
            &hidden.matmul(&self.u_reset)?,
            &self.b_reset,
            sigmoid,
        );
        let update = Self::gate(
            input.matmul(&self.w_update)?,
            &hidden.matmul(&self.u_update)?,
            &self.b_update,
            sigmoid,
        );
        let rh = hadamard(&reset, hidden);
        let cand = Self::gate(
            input.matmul(&self.w_cand)?,
            &rh.matmul(&self.u_cand)?,
            &self.b_cand,
            f64::tanh,
        );
        let mut next = Tensor2::zeros(hidden.rows(), h);
        for (((o, &u), &hp), &n) in next
            .data_mut()
            .iter_mut()
            .zip(update.data())
            .zip(hidden.data())
            .zip(cand.data())
        {
            *o = u * hp + (1.0 - u) * n;
        }
        Ok((
            next,
            GruCache {
                input: input.clone(),
                hidden: hidden.clone(),
                reset,
                update,
                cand,
            },
        ))
    }

    /// Back-propagates one step. Returns `(dL/d input, dL/d previous hidden)`.
    pub fn backward_step(
        &self,
        cache: &GruCache,
        grad_next: &Tensor2,
        grads: &mut GruCell,
    ) -> Result<(Tensor2, Tensor2)> {
        let (rows, h) = cache.hidden.shape();
        if grad_next.shape() != (rows, h) {
            return Err(shape_err!("GRU backward: gradient {:?}", grad_next.shape()));
        }
        let mut d_cand_pre = Tensor2::zeros(rows, h);
        let mut d_update_pre = Tensor2::zeros(rows, h);
        let mut d_hidden = Tensor2::zeros(rows, h);
        for i in 0..rows * h {
            let g = grad_next.data()[i];
            let u = cache.update.data()[i];
            let n = cache.cand.data()[i];
            let hp = cache.hidden.data()[i];
            d_cand_pre.data_mut()[i] = g * (1.0 - u) * (1.0 - n * n);
            d_update_pre.data_mut()[i] = g * (hp - n) * u * (1.0 - u);
            d_hidden.data_mut()[i] = g * u;
        }
        let rh = hadamard(&cache.reset, &cache.hidden);
        grads.w_cand.add_assign(&cache.input.matmul_tn(&d_cand_pre)?);
        grads.u_cand.add_assign(&rh.matmul_tn(&d_cand_pre)?);
        add_col_sums(&mut grads.b_cand, &d_cand_pre);

        let d_rh = d_cand_pre.matmul_nt(&self.u_cand)?;
        let mut d_reset_pre = Tensor2::zeros(rows, h);
        for i in 0..rows * h {
            let r = cache.reset.data()[i];
            let hp = cache.hidden.data()[i];
            d_reset_pre.data_mut()[i] = d_rh.data()[i] * hp * r * (1.0 - r);
            d_hidden.data_mut()[i] += d_rh.data()[i] * r;
        }

        grads.w_reset.add_assign(&cache.input.matmul_tn(&d_reset_pre)?);
        grads.u_reset.add_assign(&cache.hidden.matmul_tn(&d_reset_pre)?);
        add_col_sums(&mut grads.b_reset, &d_reset_pre);
        grads.w_update.add_assign(&cache.input.matmul_tn(&d_update_pre)?);
        grads.u_update.add_assign(&cache.hidden.matmul_tn(&d_update_pre)?);
        add_col_sums(&mut grads.b_update, &d_update_pre);

        let mut d_input = d_reset_pre.matmul_nt(&self.w_reset)?;
        d_input.add_assign(&d_update_pre.matmul_nt(&self.w_update)?);
        d_input.add_assign(&d_cand_pre.matmul_nt(&self.w_cand)?);
        d_hidden.add_assign(&d_reset_pre.matmul_nt(&self.u_reset)?);
        d_hidden.add_assign(&d_update_pre.matmul_nt(&self.u_update)?);
        Ok((d_input, d_hidden))
    }
}

fn add_col_sums(bias: &mut Tensor2, delta: &Tensor2) {
    for (b, s) in bias.data_mut().iter_mut().zip(delta.column_sums()) {
        *b += s;
    }
}

/// One GRU update for a single sequence.
pub fn gru_step(cell: &GruCell, input: &[f64], hidden: &[f64]) -> Result<Vec<f64>> {
    let x = Tensor2::from_vec(1, input.len(), input.to_vec())?;
    let h = Tensor2::from_vec(1, hidden.len(), hidden.to_vec())?;
    let (next, _) = cell.step_batch(&x, &h)?;
    Ok(next.into_data())
}

impl ParamSet for GruCell {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &Tensor2)) {
        f("w_reset", &self.w_reset);
        f("w_update", &self.w_update);
        f("w_cand", &self.w_cand);
        f("u_reset", &self.u_reset);
        f("u_update", &self.u_update);
        f("u_cand", &self.u_cand);
        f("b_reset", &self.b_reset);
        f("b_update", &self.b_update);
        f("b_cand", &self.b_cand);
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor2)) {
        f("w_reset", &mut self.w_reset);
        f("w_update", &mut self.w_update);
        f("w_cand", &mut self.w_cand);
        f("u_reset", &mut self.u_reset);
        f("u_update", &mut self.u_update);
        f("u_cand", &mut self.u_cand);
        f("b_reset", &mut self.b_reset);
        f("b_update", &mut self.b_update);
        f("b_cand", &mut self.b_cand);
    }
}
