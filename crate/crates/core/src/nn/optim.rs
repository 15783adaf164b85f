use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::params::{ParamId, Params};
use super::tape::Grads;

/// Linear warmup to the base rate, then constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarmupSchedule {
    pub base_lr: f64,
    pub warmup_steps: usize,
}

impl WarmupSchedule {
    pub fn new(base_lr: f64, total_steps: usize, warmup_proportion: f64) -> Self {
        WarmupSchedule {
            base_lr,
            warmup_steps: (total_steps as f64 * warmup_proportion).round() as usize,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            self.base_lr * (step + 1) as f64 / self.warmup_steps as f64
        } else {
            self.base_lr
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    frozen: Vec<ParamId>,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
}

impl AdamW {
    pub fn new(params: &Params, weight_decay: f64) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, m)| Matrix::zeros(m.rows, m.cols))
                .collect::<Vec<_>>()
        };
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            clip_norm: None,
            frozen: Vec::new(),
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn with_clip(mut self, max_norm: f64) -> Self {
        self.clip_norm = Some(max_norm);
        self
    }

    /// Excludes a parameter from updates.
    pub fn freeze(&mut self, id: ParamId) {
        self.frozen.push(id);
    }

    pub fn step(&mut self, params: &mut Params, grads: &Grads, lr: f64) {
        self.t += 1;
        let clip = match self.clip_norm {
            Some(max) => {
                let n = grads.norm();
                if n > max {
                    max / n
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let ids: Vec<ParamId> = params.ids().collect();
        for id in ids {
            if self.frozen.contains(&id) {
                continue;
            }
            let g = &grads.0[id.0];
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            let p = params.get_mut(id);
            for k in 0..p.data.len() {
                let gk = g.data[k] * clip;
                m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * gk;
                v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * gk * gk;
                let mhat = m.data[k] / bc1;
                let vhat = v.data[k] / bc2;
                p.data[k] -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * p.data[k]);
            }
        }
    }
}
