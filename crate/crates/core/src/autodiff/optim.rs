use std::f64::consts::PI;

use super::{Gradients, ParamId, ParamStore, TensorError};

/// Cosine annealing from `base_lr` down to `floor_ratio * base_lr` over `total` steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineSchedule {
    pub base_lr: f64,
    pub floor_ratio: f64,
    pub total: usize,
}

impl CosineSchedule {
    pub fn new(base_lr: f64, total: usize) -> Self {
        Self {
            base_lr,
            floor_ratio: 0.01,
            total,
        }
    }

    pub fn lr_at(&self, t: usize) -> f64 {
        let floor = self.floor_ratio * self.base_lr;
        if self.total == 0 {
            return self.base_lr;
        }
        let frac = t.min(self.total) as f64 / self.total as f64;
        floor + 0.5 * (self.base_lr - floor) * (1.0 + (PI * frac).cos())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam over a fixed group of parameters with a cosine learning-rate schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub params: Vec<ParamId>,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step_count: u64,
    pub schedule: CosineSchedule,
    pub config: AdamConfig,
    epoch: usize,
}

impl Adam {
    pub fn new(store: &ParamStore, params: Vec<ParamId>, schedule: CosineSchedule) -> Self {
        let m: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; store.get(*p).numel()]).collect();
        Self {
            v: m.clone(),
            m,
            params,
            step_count: 0,
            schedule,
            config: AdamConfig::default(),
            epoch: 0,
        }
    }

    /// Position on the schedule (the schedule is measured in epochs).
    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn lr(&self) -> f64 {
        self.schedule.lr_at(self.epoch)
    }

    /// One update from gradients on a tape. Parameters without a gradient are left alone.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<(), TensorError> {
        let collected: Vec<Option<Vec<f64>>> = self
            .params
            .iter()
            .map(|p| grads.param(*p).map(<[f64]>::to_vec))
            .collect();
        self.step_with(store, &collected)
    }

    /// One update from explicit per-parameter gradients, aligned with `self.params`.
    pub fn step_with(
        &mut self,
        store: &mut ParamStore,
        grads: &[Option<Vec<f64>>],
    ) -> Result<(), TensorError> {
        if grads.len() != self.params.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                left: vec![self.params.len()],
                right: vec![grads.len()],
            });
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.len() != store.get(self.params[i]).numel() {
                    return Err(TensorError::ShapeMismatch {
                        op: "adam_step",
                        left: store.get(self.params[i]).shape().to_vec(),
                        right: vec![g.len()],
                    });
                }
            }
        }
        self.step_count += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let lr = self.lr();
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = store.get_mut(self.params[i]).data_mut();
            for j in 0..g.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                p[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `target ← (1 − tau)·target + tau·online`, elementwise over paired parameters.
pub fn soft_update(
    store: &mut ParamStore,
    targets: &[ParamId],
    online: &[ParamId],
    tau: f64,
) -> Result<(), TensorError> {
    if targets.len() != online.len() {
        return Err(TensorError::ShapeMismatch {
            op: "soft_update",
            left: vec![targets.len()],
            right: vec![online.len()],
        });
    }
    for (t, o) in targets.iter().zip(online) {
        if store.get(*t).shape() != store.get(*o).shape() {
            return Err(TensorError::ShapeMismatch {
                op: "soft_update",
                left: store.get(*t).shape().to_vec(),
                right: store.get(*o).shape().to_vec(),
            });
        }
        let src = store.get(*o).data().to_vec();
        for (d, s) in store.get_mut(*t).data_mut().iter_mut().zip(src) {
            *d = (1.0 - tau) * *d + tau * s;
        }
    }
    Ok(())
}
