use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlateauConfig {
    /// Stale epochs before the learning rate is reduced.
    pub lr_patience: usize,
    /// Stale epochs before training stops.
    pub stop_patience: usize,
    pub reduction_factor: f64,
    pub min_lr: f64,
    /// A loss counts as an improvement only if it beats the best by at least this much.
    pub min_delta: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            lr_patience: 10,
            stop_patience: 20,
            reduction_factor: 0.1,
            min_lr: 1e-6,
            min_delta: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerStep {
    pub learning_rate: f64,
    pub improved: bool,
    pub reduced: bool,
    pub should_stop: bool,
}

/// Reduce-on-plateau learning-rate schedule with early stopping.
///
/// Both patience counters reset on improvement. The reduction counter also
/// resets after each reduction, so a long plateau reduces every
/// `lr_patience` epochs until `stop_patience` is reached.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    config: PlateauConfig,
    learning_rate: f64,
    best: f64,
    since_improvement: usize,
    since_reduction: usize,
    stopped: bool,
}

impl PlateauScheduler {
    pub fn new(config: PlateauConfig, learning_rate: f64) -> Self {
        Self {
            config,
            learning_rate,
            best: f64::INFINITY,
            since_improvement: 0,
            since_reduction: 0,
            stopped: false,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.since_improvement
    }

    pub fn should_stop(&self) -> bool {
        self.stopped
    }

    /// Call once per epoch with the validation loss.
    pub fn step(&mut self, validation_loss: f64) -> SchedulerStep {
        let improved = validation_loss.is_finite()
            && (self.best.is_infinite() || self.best - validation_loss >= self.config.min_delta);
        let mut reduced = false;
        if improved {
            self.best = validation_loss;
            self.since_improvement = 0;
            self.since_reduction = 0;
        } else {
            self.since_improvement += 1;
            self.since_reduction += 1;
            if self.since_reduction >= self.config.lr_patience {
                let next =
                    (self.learning_rate * self.config.reduction_factor).max(self.config.min_lr);
                reduced = next < self.learning_rate;
                self.learning_rate = next.min(self.learning_rate);
                self.since_reduction = 0;
            }
            if self.since_improvement >= self.config.stop_patience {
                self.stopped = true;
            }
        }
        SchedulerStep {
            learning_rate: self.learning_rate,
            improved,
            reduced,
            should_stop: self.stopped,
        }
    }
}
