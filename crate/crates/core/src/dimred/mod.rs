//! Dimensionality reducers: PCA, bottleneck autoencoder and exact t-SNE,
//! plus the fixed set of pipelines built from them.

mod ae;
mod pca;
mod tsne;

pub use ae::{
    ae_decode, ae_encode, ae_loss_and_grad, ae_reconstruct, ae_train, AeConfig, AeModel, AeTrainConfig,
    AeTraining,
};
pub use pca::{pca_fit, pca_inverse, pca_transform, PcaModel};
pub use tsne::{joint_probabilities, tsne_embed, TsneConfig, TsneInit, TsneResult};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{input_err, Error, Result};
use crate::features::ZScore;
use crate::nn::{derive_seed, Tensor2, TrainSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reducer {
    None,
    Pca32,
    Ae32,
    Pca2,
    Ae2,
    Tsne2,
    Pca32Tsne2,
    Ae32Tsne2,
}

impl Reducer {
    pub const ALL: [Reducer; 8] = [
        Reducer::None,
        Reducer::Pca32,
        Reducer::Ae32,
        Reducer::Pca2,
        Reducer::Ae2,
        Reducer::Tsne2,
        Reducer::Pca32Tsne2,
        Reducer::Ae32Tsne2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Reducer::None => "none",
            Reducer::Pca32 => "pca32",
            Reducer::Ae32 => "ae32",
            Reducer::Pca2 => "pca2",
            Reducer::Ae2 => "ae2",
            Reducer::Tsne2 => "tsne2",
            Reducer::Pca32Tsne2 => "pca32_tsne2",
            Reducer::Ae32Tsne2 => "ae32_tsne2",
        }
    }

    /// Output width for an input of width `input_dim`.
    pub fn output_dim(self, input_dim: usize) -> usize {
        match self {
            Reducer::None => input_dim,
            Reducer::Pca32 | Reducer::Ae32 => 32,
            _ => 2,
        }
    }

    fn stages(self) -> &'static [Stage] {
        match self {
            Reducer::None => &[],
            Reducer::Pca32 => &[Stage::Pca(32)],
            Reducer::Ae32 => &[Stage::Ae(32)],
            Reducer::Pca2 => &[Stage::Pca(2)],
            Reducer::Ae2 => &[Stage::Ae(2)],
            Reducer::Tsne2 => &[Stage::Tsne],
            Reducer::Pca32Tsne2 => &[Stage::Pca(32), Stage::Tsne],
            Reducer::Ae32Tsne2 => &[Stage::Ae(32), Stage::Tsne],
        }
    }
}

impl fmt::Display for Reducer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Reducer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Reducer::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| input_err!("unknown reducer '{s}'"))
    }
}

#[derive(Debug, Clone, Copy)]
enum Stage {
    Pca(usize),
    Ae(usize),
    Tsne,
}

/// Training knobs shared by every pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReducerOptions {
    pub ae_schedule: TrainSchedule,
    pub ae_hidden: usize,
    pub ae_batch_size: usize,
    pub tsne: TsneConfig,
    /// z-score the input of every stage (fit on that stage's input).
    pub zscore: bool,
}

impl Default for ReducerOptions {
    fn default() -> Self {
        Self {
            ae_schedule: TrainSchedule::autoencoder_default(),
            ae_hidden: 512,
            ae_batch_size: 1024,
            tsne: TsneConfig::default(),
            zscore: true,
        }
    }
}

/// Runs a reducer pipeline on `x`. Stochastic stages draw seeds from `seed`.
pub fn reduce(x: &Tensor2, reducer: Reducer, options: &ReducerOptions, seed: u64) -> Result<Tensor2> {
    let mut h = x.clone();
    for (k, stage) in reducer.stages().iter().enumerate() {
        if options.zscore {
            h = ZScore::fit(&h)?.apply(&h)?;
        }
        let stage_seed = derive_seed(seed, k as u64);
        h = match *stage {
            Stage::Pca(d) => {
                let d = d.min(h.cols());
                pca_transform(&pca_fit(&h, d)?, &h)?
            }
            Stage::Ae(b) => {
                let mut cfg = AeTrainConfig::new(h.cols(), b);
                cfg.model.hidden = options.ae_hidden;
                cfg.schedule = options.ae_schedule;
                cfg.batch_size = options.ae_batch_size;
                let trained = ae_train(&h, &cfg, stage_seed)?;
                ae_encode(&trained.model, &h)?
            }
            Stage::Tsne => {
                let cfg = TsneConfig { seed: stage_seed, ..options.tsne };
                tsne_embed(&h, &cfg)?.embedding
            }
        };
    }
    Ok(h)
}
