//! Contrastive predictive coding.
//!
//! A frame-wise encoder maps log-mel frames to latents `z_t`, a GRU summarizes
//! `z_≤t` into a context `c_t`, and for every prediction step `k` a bilinear
//! score `z_{t+k}ᵀ W_k c_t` ranks the true future latent against the latents
//! at the same offset in the other utterances of the minibatch (InfoNCE).
//!
//! Each `W_k` is stored transposed (context × latent) so that the prediction
//! for a row of contexts is a single product `C · W_kᵀ`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{segment, FeatureKind, LogMelFrames, UtteranceFeatures, N_MELS, SEGMENT_FRAMES};
use crate::error::{input_err, shape_err, Error, Result};
use crate::nn::{
    derive_seed, dropout_mask, glorot_uniform, hadamard, Activation, AdamState, DenseCache, DenseLayer, EpochRecord,
    GruCache, GruCell, ParamSet, PlateauTracker, Tensor2, TrainSchedule,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpcConfig {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub context_dim: usize,
    pub encoder_layers: usize,
    pub steps: usize,
    pub dropout: f64,
}

impl Default for CpcConfig {
    /// 40 → 256 → 256 → 256 ELU encoder, 256-unit GRU, 12 prediction steps, 20% dropout.
    fn default() -> Self {
        Self {
            input_dim: N_MELS,
            latent_dim: 256,
            context_dim: 256,
            encoder_layers: 3,
            steps: 12,
            dropout: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpcModel {
    pub config: CpcConfig,
    pub encoder: Vec<DenseLayer>,
    pub gru: GruCell,
    /// `predictors[k-1]` is `W_kᵀ`, shape context × latent.
    pub predictors: Vec<Tensor2>,
}

impl CpcModel {
    pub fn new<R: Rng + ?Sized>(config: CpcConfig, rng: &mut R) -> Self {
        let mut encoder = Vec::with_capacity(config.encoder_layers);
        let mut in_dim = config.input_dim;
        for _ in 0..config.encoder_layers {
            encoder.push(DenseLayer::new(in_dim, config.latent_dim, Activation::Elu, rng));
            in_dim = config.latent_dim;
        }
        let gru = GruCell::new(config.latent_dim, config.context_dim, rng);
        let predictors = (0..config.steps)
            .map(|_| glorot_uniform(config.context_dim, config.latent_dim, rng))
            .collect();
        Self {
            config,
            encoder,
            gru,
            predictors,
        }
    }

    pub fn zeros(config: CpcConfig) -> Self {
        let mut in_dim = config.input_dim;
        let encoder = (0..config.encoder_layers)
            .map(|_| {
                let l = DenseLayer::zeros(in_dim, config.latent_dim, Activation::Elu);
                in_dim = config.latent_dim;
                l
            })
            .collect();
        Self {
            config,
            encoder,
            gru: GruCell::zeros(config.latent_dim, config.context_dim),
            predictors: (0..config.steps)
                .map(|_| Tensor2::zeros(config.context_dim, config.latent_dim))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config)
    }

    /// Frame-wise encoder, dropout disabled.
    pub fn encode_frames(&self, frames: &Tensor2) -> Result<Tensor2> {
        let mut h = frames.clone();
        for layer in &self.encoder {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::nn::checkpoint::save(path, "cpc", self, &self.config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let config: CpcConfig = crate::nn::checkpoint::load_architecture(path)?;
        let mut model = Self::zeros(config);
        crate::nn::checkpoint::load_into(path, "cpc", &mut model)?;
        Ok(model)
    }
}

impl ParamSet for CpcModel {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &Tensor2)) {
        for (i, l) in self.encoder.iter().enumerate() {
            l.for_each_param(&mut |n, t| f(&format!("encoder{i}.{n}"), t));
        }
        self.gru.for_each_param(&mut |n, t| f(&format!("gru.{n}"), t));
        for (k, w) in self.predictors.iter().enumerate() {
            f(&format!("predictor{}", k + 1), w);
        }
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor2)) {
        for (i, l) in self.encoder.iter_mut().enumerate() {
            l.for_each_param_mut(&mut |n, t| f(&format!("encoder{i}.{n}"), t));
        }
        self.gru.for_each_param_mut(&mut |n, t| f(&format!("gru.{n}"), t));
        for (k, w) in self.predictors.iter_mut().enumerate() {
            f(&format!("predictor{}", k + 1), w);
        }
    }
}

/// B equal-length utterances of log-mel frames.
#[derive(Debug, Clone)]
pub struct CpcBatch {
    pub frames: Vec<Tensor2>,
    /// Real (unpadded) frame count per utterance.
    pub valid: Vec<usize>,
    pub ids: Vec<String>,
}

impl CpcBatch {
    pub fn new(frames: Vec<Tensor2>, valid: Vec<usize>, ids: Vec<String>) -> Result<Self> {
        let b = frames.len();
        if b == 0 || valid.len() != b || ids.len() != b {
            return Err(shape_err!("batch of {b} utterances with {} lengths and {} ids", valid.len(), ids.len()));
        }
        let (t, d) = frames[0].shape();
        for (i, f) in frames.iter().enumerate() {
            if f.shape() != (t, d) {
                return Err(shape_err!("utterance {i} is {:?}, expected {:?}", f.shape(), (t, d)));
            }
            if valid[i] > t {
                return Err(shape_err!("utterance {i} claims {} valid of {t} frames", valid[i]));
            }
        }
        Ok(Self { frames, valid, ids })
    }

    /// All frames of all utterances treated as real.
    pub fn unpadded(frames: Vec<Tensor2>) -> Result<Self> {
        let valid = frames.iter().map(Tensor2::rows).collect();
        let ids = (0..frames.len()).map(|i| i.to_string()).collect();
        Self::new(frames, valid, ids)
    }

    pub fn from_segments(segments: &[LogMelFrames], ids: Vec<String>) -> Result<Self> {
        Self::new(
            segments.iter().map(|s| s.frames.clone()).collect(),
            segments.iter().map(|s| s.valid_frames).collect(),
            ids,
        )
    }

    pub fn size(&self) -> usize {
        self.frames.len()
    }

    pub fn len_frames(&self) -> usize {
        self.frames[0].rows()
    }

    fn stacked(&self) -> Tensor2 {
        let (t, d) = self.frames[0].shape();
        let mut data = Vec::with_capacity(self.size() * t * d);
        for f in &self.frames {
            data.extend_from_slice(f.data());
        }
        Tensor2::from_vec(self.size() * t, d, data).expect("consistent batch")
    }
}

/// Activations of one forward pass. Row `b·T + t` of `z`/`c` belongs to
/// utterance `b` at time `t`.
struct ForwardState {
    batch: usize,
    frames: usize,
    inputs: Vec<Tensor2>,
    caches: Vec<DenseCache>,
    masks: Vec<Option<Tensor2>>,
    z: Tensor2,
    c: Tensor2,
    gru_caches: Vec<GruCache>,
}

fn forward_state<R: Rng + ?Sized>(model: &CpcModel, batch: &CpcBatch, mut rng: Option<&mut R>) -> Result<ForwardState> {
    if batch.frames[0].cols() != model.config.input_dim {
        return Err(shape_err!(
            "model expects {} input features, batch has {}",
            model.config.input_dim,
            batch.frames[0].cols()
        ));
    }
    let (b, t) = (batch.size(), batch.len_frames());
    let mut h = batch.stacked();
    let mut inputs = Vec::new();
    let mut caches = Vec::new();
    let mut masks = Vec::new();
    for layer in &model.encoder {
        let (out, cache) = layer.forward_cached(&h)?;
        inputs.push(h);
        caches.push(cache);
        h = match rng.as_deref_mut() {
            Some(r) if model.config.dropout > 0.0 => {
                let m = dropout_mask(out.rows(), out.cols(), model.config.dropout, r);
                let dropped = hadamard(&out, &m);
                masks.push(Some(m));
                dropped
            }
            _ => {
                masks.push(None);
                out
            }
        };
    }
    let z = h;
    let hd = model.config.context_dim;
    let mut c = Tensor2::zeros(b * t, hd);
    let mut hidden = Tensor2::zeros(b, hd);
    let mut gru_caches = Vec::with_capacity(t);
    for step in 0..t {
        let idx: Vec<usize> = (0..b).map(|i| i * t + step).collect();
        let x = z.select_rows(&idx);
        let (next, cache) = model.gru.step_batch(&x, &hidden)?;
        for (i, &row) in idx.iter().enumerate() {
            c.row_mut(row).copy_from_slice(next.row(i));
        }
        gru_caches.push(cache);
        hidden = next;
    }
    Ok(ForwardState {
        batch: b,
        frames: t,
        inputs,
        caches,
        masks,
        z,
        c,
        gru_caches,
    })
}

/// Per-utterance latents `z` and contexts `c` (each T × dim), dropout off,
/// zero initial GRU state.
pub fn cpc_forward(model: &CpcModel, batch: &CpcBatch) -> Result<(Vec<Tensor2>, Vec<Tensor2>)> {
    let st = forward_state::<ChaCha8Rng>(model, batch, None)?;
    let split = |m: &Tensor2| -> Vec<Tensor2> {
        (0..st.batch)
            .map(|b| m.select_rows(&(b * st.frames..(b + 1) * st.frames).collect::<Vec<_>>()))
            .collect()
    };
    Ok((split(&st.z), split(&st.c)))
}

/// Anchors used for step `k`: `(b, t)` with `t < T − K`, both `t` and `t + k`
/// real frames of utterance `b`.
fn anchors(batch: &CpcBatch, steps: usize, k: usize) -> Vec<(usize, usize)> {
    let t_max = batch.len_frames() - steps;
    let mut out = Vec::new();
    for (b, &valid) in batch.valid.iter().enumerate() {
        for t in 0..t_max {
            if t + k < valid {
                out.push((b, t));
            }
        }
    }
    out
}

fn check_loss_input(model: &CpcModel, batch: &CpcBatch) -> Result<()> {
    if batch.size() < 2 {
        return Err(input_err!("InfoNCE needs at least 2 utterances per batch, got {}", batch.size()));
    }
    if batch.len_frames() <= model.config.steps {
        return Err(input_err!(
            "utterances have {} frames; need more than {} prediction steps",
            batch.len_frames(),
            model.config.steps
        ));
    }
    Ok(())
}

/// Loss and (optionally) gradients. `rng` drives dropout; `None` disables it.
fn loss_and_grad<R: Rng + ?Sized>(
    model: &CpcModel,
    batch: &CpcBatch,
    rng: Option<&mut R>,
    want_grad: bool,
) -> Result<(f64, Option<CpcModel>)> {
    check_loss_input(model, batch)?;
    let st = forward_state(model, batch, rng)?;
    let (b_count, t_len) = (st.batch, st.frames);
    let steps = model.config.steps;
    let mut grads = want_grad.then(|| model.zeros_like());
    let mut d_z = Tensor2::zeros(st.z.rows(), st.z.cols());
    let mut d_c = Tensor2::zeros(st.c.rows(), st.c.cols());

    let per_step: Vec<Vec<(usize, usize)>> = (1..=steps).map(|k| anchors(batch, steps, k)).collect();
    let active = per_step.iter().filter(|a| !a.is_empty()).count();
    if active == 0 {
        return Err(input_err!("batch has no valid anchor positions"));
    }
    // running means stay exact when every term is identical
    let mut total = 0.0;
    let mut seen_steps = 0usize;
    for (ki, anchor_list) in per_step.iter().enumerate() {
        if anchor_list.is_empty() {
            continue;
        }
        let k = ki + 1;
        let w = &model.predictors[ki];
        let pred = st.c.matmul(w)?;
        let mut d_pred = Tensor2::zeros(pred.rows(), pred.cols());
        let weight = 1.0 / (anchor_list.len() as f64 * active as f64);
        let mut step_loss = 0.0;
        let mut seen = 0usize;
        let mut logits = Vec::with_capacity(b_count);
        let mut cands = Vec::with_capacity(b_count);
        for &(b, t) in anchor_list {
            let row = b * t_len + t;
            let p = pred.row(row);
            logits.clear();
            cands.clear();
            for (bp, &valid) in batch.valid.iter().enumerate() {
                if t + k < valid {
                    let zrow = bp * t_len + t + k;
                    cands.push((bp, zrow));
                    logits.push(crate::nn::dot(st.z.row(zrow), p));
                }
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            let lse = max + sum.ln();
            let pos = cands.iter().position(|&(bp, _)| bp == b).expect("anchor is its own candidate");
            seen += 1;
            step_loss += (lse - logits[pos] - step_loss) / seen as f64;
            if grads.is_some() {
                for (j, &(bp, zrow)) in cands.iter().enumerate() {
                    let mut g = (logits[j] - lse).exp();
                    if bp == b {
                        g -= 1.0;
                    }
                    let g = g * weight;
                    if g == 0.0 {
                        continue;
                    }
                    for (dz, &pv) in d_z.row_mut(zrow).iter_mut().zip(p) {
                        *dz += g * pv;
                    }
                    let zr = st.z.row(zrow);
                    for (dp, &zv) in d_pred.row_mut(row).iter_mut().zip(zr) {
                        *dp += g * zv;
                    }
                }
            }
        }
        seen_steps += 1;
        total += (step_loss - total) / seen_steps as f64;
        if let Some(g) = grads.as_mut() {
            g.predictors[ki].add_assign(&st.c.matmul_tn(&d_pred)?);
            d_c.add_assign(&d_pred.matmul_nt(w)?);
        }
    }
    let loss = total;
    let Some(mut g) = grads else {
        return Ok((loss, None));
    };

    // back-propagation through time
    let hd = model.config.context_dim;
    let mut carry = Tensor2::zeros(b_count, hd);
    for step in (0..t_len).rev() {
        let idx: Vec<usize> = (0..b_count).map(|i| i * t_len + step).collect();
        let mut d_h = d_c.select_rows(&idx);
        d_h.add_assign(&carry);
        let (d_x, d_prev) = model.gru.backward_step(&st.gru_caches[step], &d_h, &mut g.gru)?;
        for (i, &row) in idx.iter().enumerate() {
            for (a, v) in d_z.row_mut(row).iter_mut().zip(d_x.row(i)) {
                *a += v;
            }
        }
        carry = d_prev;
    }

    let mut d = d_z;
    for li in (0..model.encoder.len()).rev() {
        if let Some(m) = &st.masks[li] {
            d = hadamard(&d, m);
        }
        d = model.encoder[li].backward(&st.inputs[li], &st.caches[li], &d, &mut g.encoder[li])?;
    }
    Ok((loss, Some(g)))
}

/// InfoNCE loss averaged over prediction steps and anchors.
///
/// `rng` supplies dropout masks (training mode); pass `None` for evaluation.
pub fn infonce_loss<R: Rng + ?Sized>(model: &CpcModel, batch: &CpcBatch, rng: Option<&mut R>) -> Result<f64> {
    loss_and_grad(model, batch, rng, false).map(|(l, _)| l)
}

/// InfoNCE loss and its gradient with respect to every model parameter.
pub fn infonce_loss_and_grad<R: Rng + ?Sized>(
    model: &CpcModel,
    batch: &CpcBatch,
    rng: Option<&mut R>,
) -> Result<(f64, CpcModel)> {
    let (l, g) = loss_and_grad(model, batch, rng, true)?;
    Ok((l, g.expect("gradient requested")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpcTrainConfig {
    pub model: CpcConfig,
    pub schedule: TrainSchedule,
    pub batch_size: usize,
    pub segment_frames: usize,
    pub val_fraction: f64,
}

impl Default for CpcTrainConfig {
    fn default() -> Self {
        Self {
            model: CpcConfig::default(),
            schedule: TrainSchedule::cpc_default(),
            batch_size: 8,
            segment_frames: SEGMENT_FRAMES,
            val_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CpcTraining {
    /// Checkpoint with the lowest validation loss.
    pub model: CpcModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Contiguous batches; a trailing short batch is dropped unless it is the only one.
fn batch_indices(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let full: Vec<Vec<usize>> = order.chunks_exact(batch_size).map(<[usize]>::to_vec).collect();
    if full.is_empty() && order.len() >= 2 {
        vec![order.to_vec()]
    } else {
        full
    }
}

fn make_batch<R: Rng + ?Sized>(
    data: &[LogMelFrames],
    idx: &[usize],
    segment_frames: usize,
    rng: &mut R,
) -> Result<CpcBatch> {
    let segs: Vec<LogMelFrames> = idx.iter().map(|&i| segment(&data[i], segment_frames, rng)).collect();
    CpcBatch::from_segments(&segs, idx.iter().map(|i| i.to_string()).collect())
}

/// Trains a CPC model with an 80:20 utterance split, Adam, plateau lr
/// reduction and early stopping; the best-validation checkpoint is returned.
pub fn train_cpc(data: &[LogMelFrames], config: &CpcTrainConfig, seed: u64) -> Result<CpcTraining> {
    if data.len() < 10 {
        return Err(input_err!("CPC training needs at least 10 utterances, got {}", data.len()));
    }
    if config.batch_size < 2 {
        return Err(input_err!("batch size must be at least 2"));
    }
    if config.segment_frames <= config.model.steps {
        return Err(input_err!(
            "segment length {} must exceed the {} prediction steps",
            config.segment_frames,
            config.model.steps
        ));
    }
    if let Some(bad) = data.iter().position(|u| u.frames.cols() != config.model.input_dim) {
        return Err(shape_err!(
            "utterance {bad} has {} bands, model expects {}",
            data[bad].frames.cols(),
            config.model.input_dim
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = CpcModel::new(config.model, &mut rng);

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((data.len() as f64 * config.val_fraction).round() as usize).clamp(2, data.len() - 2);
    let (val_idx, train_idx) = order.split_at(n_val);
    let (val_idx, mut train_idx) = (val_idx.to_vec(), train_idx.to_vec());

    let mut val_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x7661_6c));
    let val_batches: Vec<CpcBatch> = batch_indices(&val_idx, config.batch_size)
        .iter()
        .map(|b| make_batch(data, b, config.segment_frames, &mut val_rng))
        .collect::<Result<_>>()?;

    let mut adam = AdamState::new(model.num_params(), config.schedule.initial_lr);
    let mut tracker = PlateauTracker::new(config.schedule);
    let mut history = Vec::new();
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut params = model.flatten();
    for epoch in 1..=config.schedule.max_epochs {
        train_idx.shuffle(&mut rng);
        let mut train_sum = 0.0;
        let mut n_batches = 0;
        for b in batch_indices(&train_idx, config.batch_size) {
            let batch = make_batch(data, &b, config.segment_frames, &mut rng)?;
            let (loss, grad) = infonce_loss_and_grad(&model, &batch, Some(&mut rng))?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite training loss at epoch {epoch}")));
            }
            adam.lr = tracker.lr();
            adam.update(&mut params, &grad.flatten())?;
            model.assign_flat(&params)?;
            train_sum += loss;
            n_batches += 1;
        }
        let val_loss = val_batches
            .iter()
            .map(|b| infonce_loss::<ChaCha8Rng>(&model, b, None))
            .sum::<Result<f64>>()?
            / val_batches.len() as f64;
        let lr = tracker.lr();
        let obs = tracker.observe(val_loss);
        history.push(EpochRecord {
            epoch,
            train_loss: train_sum / n_batches.max(1) as f64,
            val_loss,
            lr,
        });
        if obs.improved {
            best = model.clone();
            best_epoch = epoch;
        }
        if obs.stop {
            break;
        }
    }
    Ok(CpcTraining {
        model: best,
        history,
        best_epoch,
        best_val_loss: tracker.best(),
    })
}

/// Mean of the encoder outputs over the real (unpadded) frames.
pub fn extract_cpc_features(model: &CpcModel, utterance_id: &str, frames: &LogMelFrames) -> Result<UtteranceFeatures> {
    if frames.valid_frames == 0 {
        return Err(input_err!("utterance '{utterance_id}' has no real frames"));
    }
    let z = model.encode_frames(&frames.valid())?;
    let n = z.rows() as f64;
    let vector = z.column_sums().into_iter().map(|s| s / n).collect();
    Ok(UtteranceFeatures {
        utterance_id: utterance_id.to_string(),
        kind: FeatureKind::Cpc,
        vector,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;

    fn tiny_config() -> CpcConfig {
        CpcConfig {
            input_dim: 3,
            latent_dim: 4,
            context_dim: 4,
            encoder_layers: 2,
            steps: 3,
            dropout: 0.0,
        }
    }

    fn random_batch(b: usize, t: usize, d: usize, seed: u64) -> CpcBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CpcBatch::unpadded((0..b).map(|_| glorot_uniform(t, d, &mut rng)).collect()).unwrap()
    }

    #[test]
    fn zero_model_gives_zero_latents_and_uniform_loss() {
        let cfg = CpcConfig {
            steps: 12,
            ..tiny_config()
        };
        let model = CpcModel::zeros(cfg);
        let batch = random_batch(8, 20, 3, 1);
        let (z, c) = cpc_forward(&model, &batch).unwrap();
        assert!(z.iter().chain(&c).all(|m| m.data().iter().all(|&v| v == 0.0)));
        let l = infonce_loss::<ChaCha8Rng>(&model, &batch, None).unwrap();
        assert_eq!(l, 8f64.ln());
    }

    #[test]
    fn single_utterance_forward_ok_but_loss_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = CpcModel::new(tiny_config(), &mut rng);
        let batch = random_batch(1, 10, 3, 2);
        assert!(cpc_forward(&model, &batch).is_ok());
        assert!(matches!(infonce_loss::<ChaCha8Rng>(&model, &batch, None), Err(Error::Input(_))));
    }

    #[test]
    fn short_sequences_rejected() {
        let model = CpcModel::zeros(tiny_config());
        let batch = random_batch(2, 3, 3, 0);
        assert!(infonce_loss::<ChaCha8Rng>(&model, &batch, None).is_err());
    }

    #[test]
    fn dominant_positive_drives_loss_to_zero() {
        // identity-like predictor and well separated one-hot latents
        let cfg = CpcConfig {
            input_dim: 2,
            latent_dim: 2,
            context_dim: 2,
            encoder_layers: 1,
            steps: 1,
            dropout: 0.0,
        };
        let mut model = CpcModel::zeros(cfg);
        model.encoder[0].weights = Tensor2::identity(2);
        model.gru.w_cand = Tensor2::identity(2);
        model.gru.w_cand.scale(50.0);
        model.gru.b_update = Tensor2::filled(1, 2, -50.0);
        let mut w = Tensor2::identity(2);
        w.scale(100.0);
        model.predictors[0] = w;
        let a = Tensor2::from_vec(4, 2, vec![5., 0., 5., 0., 5., 0., 5., 0.]).unwrap();
        let b = Tensor2::from_vec(4, 2, vec![0., 5., 0., 5., 0., 5., 0., 5.]).unwrap();
        let batch = CpcBatch::unpadded(vec![a, b]).unwrap();
        let l = infonce_loss::<ChaCha8Rng>(&model, &batch, None).unwrap();
        assert!(l < 1e-10, "{l}");
    }

    #[test]
    fn gradient_matches_finite_differences_with_dropout_mask() {
        let cfg = CpcConfig {
            dropout: 0.3,
            ..tiny_config()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = CpcModel::new(cfg, &mut rng);
        let batch = random_batch(3, 8, 3, 10);
        let (_, g) = infonce_loss_and_grad(&model, &batch, Some(&mut ChaCha8Rng::seed_from_u64(77))).unwrap();
        let p = model.flatten();
        let mut probe = model.clone();
        let r = grad_check(
            |q| {
                probe.assign_flat(q)?;
                infonce_loss(&probe, &batch, Some(&mut ChaCha8Rng::seed_from_u64(77)))
            },
            &p,
            &g.flatten(),
            1e-5,
            None,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn context_is_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = CpcModel::new(tiny_config(), &mut rng);
        let batch = random_batch(2, 10, 3, 5);
        let (_, c0) = cpc_forward(&model, &batch).unwrap();
        let mut perturbed = batch.clone();
        for j in 0..3 {
            perturbed.frames[0][(6, j)] += 1.0;
        }
        let (_, c1) = cpc_forward(&model, &perturbed).unwrap();
        for t in 0..6 {
            assert_eq!(c0[0].row(t), c1[0].row(t));
        }
        assert_ne!(c0[0].row(6), c1[0].row(6));
    }

    #[test]
    fn features_ignore_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = CpcModel::new(tiny_config(), &mut rng);
        let f = LogMelFrames::from_frames(glorot_uniform(7, 3, &mut rng), 16000);
        let base = extract_cpc_features(&model, "u", &f).unwrap();
        assert_eq!(base.vector.len(), 4);
        for target in [10, 50] {
            let padded = segment(&f, target, &mut rng);
            let v = extract_cpc_features(&model, "u", &padded).unwrap();
            assert_eq!(v.vector, base.vector);
        }
        let one = LogMelFrames::from_frames(f.frames.select_rows(&[2]), 16000);
        let v = extract_cpc_features(&model, "u", &one).unwrap();
        assert_eq!(v.vector, model.encode_frames(&one.frames).unwrap().row(0));
        let mut empty = f.clone();
        empty.valid_frames = 0;
        assert!(extract_cpc_features(&model, "u", &empty).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cpc.ckpt");
        let model = CpcModel::new(tiny_config(), &mut ChaCha8Rng::seed_from_u64(8));
        model.save(&p).unwrap();
        assert_eq!(CpcModel::load(&p).unwrap(), model);
    }
}
