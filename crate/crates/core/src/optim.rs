//! AdamW with decoupled weight decay and the learning-rate schedules used by
//! the training stages.

use alloc::vec::Vec;

use crate::params::{ParamGrads, ParamStore};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub enum LrSchedule {
    Constant(f64),
    /// Linear warmup over `warmup_steps`, then cosine decay to `min_lr` at
    /// `total_steps`.
    WarmupCosine {
        base_lr: f64,
        min_lr: f64,
        warmup_steps: usize,
        total_steps: usize,
    },
}

impl LrSchedule {
    /// The pretraining schedule: warmup over 5% of the run, cosine to zero.
    pub fn pretrain(base_lr: f64, total_steps: usize) -> Self {
        let warmup = libm::ceil(total_steps as f64 * 0.05) as usize;
        LrSchedule::WarmupCosine {
            base_lr,
            min_lr: 0.0,
            warmup_steps: warmup,
            total_steps,
        }
    }

    /// Learning rate for the 0-based `step`.
    pub fn lr(&self, step: usize) -> f64 {
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::WarmupCosine {
                base_lr,
                min_lr,
                warmup_steps,
                total_steps,
            } => {
                if step < warmup_steps {
                    base_lr * (step + 1) as f64 / warmup_steps as f64
                } else if total_steps <= warmup_steps {
                    base_lr
                } else {
                    let t = ((step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64).min(1.0);
                    min_lr + 0.5 * (base_lr - min_lr) * (1.0 + libm::cos(core::f64::consts::PI * t))
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
    pub max_grad_norm: Option<f64>,
    step: usize,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamW {
    pub fn new(store: &ParamStore, schedule: LrSchedule, weight_decay: f64) -> Self {
        let zeros: Vec<Matrix> = store
            .params()
            .iter()
            .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay,
            schedule,
            max_grad_norm: Some(1.0),
            step: 0,
            second: zeros.clone(),
            first: zeros,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        self.schedule.lr(self.step)
    }

    /// Applies one update; parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) {
        let lr = self.schedule.lr(self.step);
        self.step += 1;
        let clip = match self.max_grad_norm {
            Some(max) => {
                let norm = grads.global_norm();
                if norm > max && norm > 0.0 {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let Some(g) = grads.get(crate::params::ParamId(i)) else { continue };
            let decay = if p.no_decay { 0.0 } else { self.weight_decay };
            let m = self.first[i].as_mut_slice();
            let v = self.second[i].as_mut_slice();
            for (((w, gi), mi), vi) in p.value.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
                let gi = gi * clip;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * (mhat / (libm::sqrt(vhat) + self.eps) + decay * *w);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_then_cosine() {
        let s = LrSchedule::pretrain(1.0, 100);
        assert!((s.lr(0) - 0.2).abs() < 1e-12);
        assert!((s.lr(4) - 1.0).abs() < 1e-12);
        assert!(s.lr(50) < 1.0 && s.lr(50) > 0.0);
        assert!(s.lr(99) < 0.01);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("w", Matrix::filled(1, 2, 3.0), false);
        let mut opt = AdamW::new(&store, LrSchedule::Constant(0.1), 0.0);
        for _ in 0..300 {
            let w = store.value(id).clone();
            let mut g = w.clone();
            g.scale_assign(2.0);
            let grads = ParamGrads::from_vec(alloc::vec![Some(g)]);
            opt.step(&mut store, &grads);
        }
        assert!(store.value(id).as_slice().iter().all(|v| v.abs() < 0.05));
    }
}
