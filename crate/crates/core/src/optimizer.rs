//! AdamW with per-group hyperparameters, reduce-on-plateau scheduling and
//! early stopping on validation loss.

use serde::{Deserialize, Serialize};

use crate::error::{FnrError, Result};
use crate::tensor::{Real, Tensor2};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamGroupConfig {
    pub name: String,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl ParamGroupConfig {
    pub fn classifier_default() -> Self {
        ParamGroupConfig {
            name: "classifier".into(),
            lr: 0.005,
            weight_decay: 0.07,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn projector_default() -> Self {
        ParamGroupConfig {
            name: "projector".into(),
            lr: 1e-3,
            weight_decay: 1e-3,
            ..Self::classifier_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(FnrError::Config(format!("group {}: {what}", self.name)));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr must be > 0");
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return bad("weight_decay must be >= 0");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) || !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("betas must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        Ok(())
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    step: u64,
    first: Vec<Tensor2<T>>,
    second: Vec<Tensor2<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let (first, second) = shapes
            .into_iter()
            .map(|(r, c)| (Tensor2::zeros(r, c), Tensor2::zeros(r, c)))
            .unzip();
        AdamW {
            step: 0,
            first,
            second,
        }
    }

    pub fn from_parts(step: u64, first: Vec<Tensor2<T>>, second: Vec<Tensor2<T>>) -> Result<Self> {
        if first.len() != second.len()
            || first
                .iter()
                .zip(&second)
                .any(|(m, v)| m.shape() != v.shape())
        {
            return Err(FnrError::Contract("moment tensors do not pair up".into()));
        }
        Ok(AdamW {
            step,
            first,
            second,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor2<T>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor2<T>] {
        &self.second
    }

    /// One update of every parameter:
    ///
    /// ```text
    /// m ← β1 m + (1−β1) g          v ← β2 v + (1−β2) g²
    /// θ ← θ − lr·f · m̂ / (√v̂ + ε) − lr·f · wd · θ
    /// ```
    ///
    /// with bias-corrected `m̂`, `v̂` and `f` the scheduler's lr factor.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor2<T>],
        grads: &[&Tensor2<T>],
        groups: &[&ParamGroupConfig],
        lr_factor: f64,
    ) -> Result<()> {
        let n = self.first.len();
        if params.len() != n || grads.len() != n || groups.len() != n {
            return Err(FnrError::Contract(format!(
                "optimizer tracks {n} tensors but got {} params, {} grads, {} groups",
                params.len(),
                grads.len(),
                groups.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(FnrError::Contract(format!(
                    "gradient {i} does not match its parameter shape"
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        for i in 0..n {
            let grp = groups[i];
            let (b1, b2) = (T::from_f64(grp.beta1), T::from_f64(grp.beta2));
            let (one_m_b1, one_m_b2) = (T::from_f64(1.0 - grp.beta1), T::from_f64(1.0 - grp.beta2));
            let bc1 = T::from_f64(1.0 - grp.beta1.powi(t));
            let bc2 = T::from_f64(1.0 - grp.beta2.powi(t));
            let lr = T::from_f64(grp.lr * lr_factor);
            let wd = T::from_f64(grp.weight_decay);
            let eps = T::from_f64(grp.epsilon);

            let theta = params[i].data_mut();
            let g = grads[i].data();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for j in 0..theta.len() {
                m[j] = b1 * m[j] + one_m_b1 * g[j];
                v[j] = b2 * v[j] + one_m_b2 * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                let decay = lr * wd * theta[j];
                let update = lr * m_hat / (v_hat.sqrt() + eps);
                theta[j] = theta[j] - update - decay;
            }
        }
        Ok(())
    }
}

/// Halves the lr factor after `patience` epochs without an improvement of at
/// least `threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub reduce_by: f64,
    pub patience: usize,
    pub threshold: f64,
    /// Lowest allowed factor.
    pub min_factor: f64,
    pub best: Option<f64>,
    pub bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(reduce_by: f64, patience: usize, threshold: f64, min_factor: f64) -> Self {
        PlateauScheduler {
            factor: 1.0,
            reduce_by,
            patience,
            threshold,
            min_factor: min_factor.min(1.0),
            best: None,
            bad_epochs: 0,
        }
    }

    /// Floor chosen so every group's effective lr stays at or above `min_lr`.
    pub fn for_groups(groups: &[&ParamGroupConfig], min_lr: f64) -> Self {
        let smallest = groups.iter().map(|g| g.lr).fold(f64::INFINITY, f64::min);
        Self::new(0.5, 5, 1e-4, min_lr / smallest)
    }

    /// Feeds one epoch's validation loss and returns the factor to use next.
    pub fn update(&mut self, val_loss: f64) -> Result<f64> {
        if !val_loss.is_finite() {
            return Err(FnrError::Numeric(format!("validation loss is {val_loss}")));
        }
        match self.best {
            Some(best) if !(val_loss < best - self.threshold) => {
                self.bad_epochs += 1;
                if self.bad_epochs >= self.patience {
                    self.factor = (self.factor * self.reduce_by).max(self.min_factor);
                    self.bad_epochs = 0;
                }
            }
            _ => {
                self.best = Some(val_loss);
                self.bad_epochs = 0;
            }
        }
        Ok(self.factor)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    /// A new minimum validation loss; the caller should snapshot parameters.
    pub new_best: bool,
    pub stop: bool,
}

/// Stops after `patience` epochs without an improvement of at least
/// `threshold`, and tracks the strict minimum for the returned snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub threshold: f64,
    pub reference: Option<f64>,
    pub since_improvement: usize,
    pub best_loss: Option<f64>,
    pub best_epoch: usize,
    pub epochs_seen: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, threshold: f64) -> Self {
        EarlyStopping {
            patience,
            threshold,
            reference: None,
            since_improvement: 0,
            best_loss: None,
            best_epoch: 0,
            epochs_seen: 0,
        }
    }

    pub fn check(&mut self, val_loss: f64) -> Result<StopDecision> {
        if !val_loss.is_finite() {
            return Err(FnrError::Numeric(format!("validation loss is {val_loss}")));
        }
        self.epochs_seen += 1;
        match self.reference {
            Some(r) if !(val_loss < r - self.threshold) => self.since_improvement += 1,
            _ => {
                self.reference = Some(val_loss);
                self.since_improvement = 0;
            }
        }
        let new_best = self.best_loss.is_none_or(|b| val_loss < b);
        if new_best {
            self.best_loss = Some(val_loss);
            self.best_epoch = self.epochs_seen;
        }
        Ok(StopDecision {
            new_best,
            stop: self.since_improvement >= self.patience,
        })
    }
}

/// Everything that evolves across a training run apart from the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub adam: AdamW<T>,
    pub scheduler: PlateauScheduler,
    pub early_stopping: EarlyStopping,
    pub epoch: usize,
}

impl<T: Real> TrainState<T> {
    pub fn lr_factor(&self) -> f64 {
        self.scheduler.factor
    }
}
