use serde::{Deserialize, Serialize};

/// Validation-driven learning-rate plateau reduction plus early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub initial_lr: f64,
    /// Multiplier applied on a plateau; `None` disables reduction.
    pub reduce_factor: Option<f64>,
    pub reduce_patience: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
}

impl TrainSchedule {
    /// lr 1e-4, ×0.7 after 20 stale epochs, stop after 100 stale epochs.
    pub fn cpc_default() -> Self {
        Self {
            initial_lr: 1e-4,
            reduce_factor: Some(0.7),
            reduce_patience: 20,
            early_stop_patience: 100,
            max_epochs: 10_000,
        }
    }

    /// lr 1e-4, no plateau reduction, stop after 300 stale epochs.
    pub fn autoencoder_default() -> Self {
        Self {
            initial_lr: 1e-4,
            reduce_factor: None,
            reduce_patience: 0,
            early_stop_patience: 300,
            max_epochs: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub reduced_lr: bool,
    pub stop: bool,
}

/// Tracks the best validation loss and the two patience counters.
#[derive(Debug, Clone)]
pub struct PlateauTracker {
    schedule: TrainSchedule,
    lr: f64,
    best: f64,
    since_best: usize,
    since_reduce: usize,
    epochs: usize,
}

impl PlateauTracker {
    pub fn new(schedule: TrainSchedule) -> Self {
        Self {
            schedule,
            lr: schedule.initial_lr,
            best: f64::INFINITY,
            since_best: 0,
            since_reduce: 0,
            epochs: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, val_loss: f64) -> Observation {
        self.epochs += 1;
        let improved = val_loss < self.best;
        let mut reduced_lr = false;
        if improved {
            self.best = val_loss;
            self.since_best = 0;
            self.since_reduce = 0;
        } else {
            self.since_best += 1;
            self.since_reduce += 1;
            if let Some(f) = self.schedule.reduce_factor {
                if self.since_reduce > self.schedule.reduce_patience {
                    self.lr *= f;
                    self.since_reduce = 0;
                    reduced_lr = true;
                }
            }
        }
        let stop = self.since_best > self.schedule.early_stop_patience || self.epochs >= self.schedule.max_epochs;
        Observation {
            improved,
            reduced_lr,
            stop,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}
