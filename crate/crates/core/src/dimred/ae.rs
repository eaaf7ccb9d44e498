use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{input_err, shape_err, Error, Result};
use crate::nn::{
    checkpoint, dropout_mask, hadamard, mse, Activation, AdamState, DenseCache, DenseLayer, EpochRecord,
    ParamSet, PlateauTracker, Tensor2, TrainSchedule,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AeConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub bottleneck: usize,
    /// Dropout rate on the hidden (non-bottleneck) layers.
    pub dropout: f64,
}

impl AeConfig {
    pub fn new(input_dim: usize, bottleneck: usize) -> Self {
        Self { input_dim, hidden: 512, bottleneck, dropout: 0.1 }
    }

    fn widths(&self) -> [(usize, usize, Activation, bool); 6] {
        let (d, h, b) = (self.input_dim, self.hidden, self.bottleneck);
        [
            (d, h, Activation::Elu, true),
            (h, h, Activation::Elu, true),
            (h, b, Activation::Elu, false),
            (b, h, Activation::Elu, true),
            (h, h, Activation::Elu, true),
            (h, d, Activation::Identity, false),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AeTrainConfig {
    pub model: AeConfig,
    pub schedule: TrainSchedule,
    pub batch_size: usize,
    pub val_fraction: f64,
}

impl AeTrainConfig {
    pub fn new(input_dim: usize, bottleneck: usize) -> Self {
        Self {
            model: AeConfig::new(input_dim, bottleneck),
            schedule: TrainSchedule::autoencoder_default(),
            batch_size: 1024,
            val_fraction: 0.2,
        }
    }
}

/// Six dense layers; the first three form the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct AeModel {
    pub config: AeConfig,
    pub layers: Vec<DenseLayer>,
}

impl AeModel {
    pub fn new<R: Rng + ?Sized>(config: AeConfig, rng: &mut R) -> Self {
        let layers = config.widths().iter().map(|&(i, o, a, _)| DenseLayer::new(i, o, a, rng)).collect();
        Self { config, layers }
    }

    pub fn zeros(config: AeConfig) -> Self {
        let layers = config.widths().iter().map(|&(i, o, a, _)| DenseLayer::zeros(i, o, a)).collect();
        Self { config, layers }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, "ae", self, &self.config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let config: AeConfig = checkpoint::load_architecture(path)?;
        let mut model = Self::zeros(config);
        checkpoint::load_into(path, "ae", &mut model)?;
        Ok(model)
    }

    fn check_input(&self, x: &Tensor2) -> Result<()> {
        if x.cols() != self.config.input_dim {
            return Err(shape_err!(
                "autoencoder expects {} columns, got {}",
                self.config.input_dim,
                x.cols()
            ));
        }
        Ok(())
    }

    fn run(&self, x: &Tensor2, layers: std::ops::Range<usize>) -> Result<Tensor2> {
        let mut h = x.clone();
        for l in &self.layers[layers] {
            h = l.forward(&h)?;
        }
        Ok(h)
    }
}

impl ParamSet for AeModel {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &Tensor2)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.for_each_param(&mut |n, t| f(&format!("layer{i}.{n}"), t));
        }
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor2)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.for_each_param_mut(&mut |n, t| f(&format!("layer{i}.{n}"), t));
        }
    }
}

/// Bottleneck codes with dropout disabled.
pub fn ae_encode(model: &AeModel, x: &Tensor2) -> Result<Tensor2> {
    model.check_input(x)?;
    model.run(x, 0..3)
}

pub fn ae_decode(model: &AeModel, codes: &Tensor2) -> Result<Tensor2> {
    if codes.cols() != model.config.bottleneck {
        return Err(shape_err!(
            "decoder expects {} code columns, got {}",
            model.config.bottleneck,
            codes.cols()
        ));
    }
    model.run(codes, 3..6)
}

pub fn ae_reconstruct(model: &AeModel, x: &Tensor2) -> Result<Tensor2> {
    model.check_input(x)?;
    model.run(x, 0..6)
}

/// Reconstruction MSE and its parameter gradient. `masks` are fixed
/// inverted-dropout masks for the layers flagged for dropout (or `None`).
pub fn ae_loss_and_grad(model: &AeModel, x: &Tensor2, masks: &[Option<Tensor2>]) -> Result<(f64, AeModel)> {
    model.check_input(x)?;
    if masks.len() != model.layers.len() {
        return Err(shape_err!("{} dropout masks for {} layers", masks.len(), model.layers.len()));
    }
    let mut inputs = Vec::with_capacity(6);
    let mut caches: Vec<DenseCache> = Vec::with_capacity(6);
    let mut h = x.clone();
    for (l, mask) in model.layers.iter().zip(masks) {
        let (out, cache) = l.forward_cached(&h)?;
        inputs.push(h);
        caches.push(cache);
        h = match mask {
            Some(m) => hadamard(&out, m),
            None => out,
        };
    }
    let (loss, mut grad) = mse(&h, x)?;
    let mut grads = AeModel::zeros(model.config);
    for i in (0..model.layers.len()).rev() {
        if let Some(m) = &masks[i] {
            grad = hadamard(&grad, m);
        }
        grad = model.layers[i].backward(&inputs[i], &caches[i], &grad, &mut grads.layers[i])?;
    }
    Ok((loss, grads))
}

fn sample_masks<R: Rng + ?Sized>(config: &AeConfig, rows: usize, rng: &mut R) -> Vec<Option<Tensor2>> {
    config
        .widths()
        .iter()
        .map(|&(_, o, _, drop)| (drop && config.dropout > 0.0).then(|| dropout_mask(rows, o, config.dropout, rng)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct AeTraining {
    pub model: AeModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub val_indices: Vec<usize>,
}

/// Adam on MSE with an 80:20 split; returns the best-validation model.
pub fn ae_train(x: &Tensor2, config: &AeTrainConfig, seed: u64) -> Result<AeTraining> {
    let n = x.rows();
    if n < 10 {
        return Err(input_err!("autoencoder training needs at least 10 rows, got {n}"));
    }
    if x.cols() != config.model.input_dim {
        return Err(shape_err!(
            "autoencoder configured for {} columns, got {}",
            config.model.input_dim,
            x.cols()
        ));
    }
    if !x.is_finite() {
        return Err(input_err!("autoencoder input contains non-finite values"));
    }
    if config.batch_size == 0 {
        return Err(input_err!("batch size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = AeModel::new(config.model, &mut rng);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = ((n as f64 * config.val_fraction).round() as usize).clamp(1, n - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let (mut val_idx, mut train_idx) = (val_idx.to_vec(), train_idx.to_vec());
    val_idx.sort_unstable();
    let x_val = x.select_rows(&val_idx);

    let mut adam = AdamState::new(model.num_params(), config.schedule.initial_lr);
    let mut tracker = PlateauTracker::new(config.schedule);
    let mut params = model.flatten();
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut history = Vec::new();
    for epoch in 1..=config.schedule.max_epochs {
        train_idx.shuffle(&mut rng);
        let (mut train_sum, mut seen) = (0.0, 0usize);
        for chunk in train_idx.chunks(config.batch_size) {
            let xb = x.select_rows(chunk);
            let masks = sample_masks(&config.model, xb.rows(), &mut rng);
            let (loss, grads) = ae_loss_and_grad(&model, &xb, &masks)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite autoencoder loss at epoch {epoch}")));
            }
            adam.lr = tracker.lr();
            adam.update(&mut params, &grads.flatten())?;
            model.assign_flat(&params)?;
            train_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let (val_loss, _) = mse(&ae_reconstruct(&model, &x_val)?, &x_val)?;
        let lr = tracker.lr();
        let obs = tracker.observe(val_loss);
        history.push(EpochRecord { epoch, train_loss: train_sum / seen as f64, val_loss, lr });
        if obs.improved {
            best = model.clone();
            best_epoch = epoch;
        }
        if obs.stop {
            break;
        }
    }
    Ok(AeTraining { model: best, history, best_epoch, best_val_loss: tracker.best(), val_indices: val_idx })
}
