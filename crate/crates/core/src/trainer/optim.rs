use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::params::{ParamGroup, ParamStore};

/// Linear warmup from 0, constant hold, then linear decay to 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub warmup_frac: f64,
    pub hold_frac: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            warmup_frac: 0.4,
            hold_frac: 0.4,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        let ok = self.warmup_frac >= 0.0 && self.hold_frac >= 0.0 && self.warmup_frac + self.hold_frac <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "warmup_frac {} + hold_frac {} must lie in [0, 1]",
                self.warmup_frac, self.hold_frac
            )))
        }
    }

    pub fn lr_at(&self, step: f64, total_steps: usize, peak: f64) -> Result<f64> {
        if total_steps == 0 {
            return Err(Error::invalid("lr_at", "total_steps must be positive"));
        }
        let total = total_steps as f64;
        if !(0.0..=total).contains(&step) {
            return Err(Error::invalid("lr_at", format!("step {step} outside [0, {total}]")));
        }
        let warm_end = self.warmup_frac * total;
        let hold_end = (self.warmup_frac + self.hold_frac) * total;
        Ok(if step < warm_end {
            peak * step / warm_end
        } else if step <= hold_end {
            peak
        } else {
            peak * (total - step) / (total - hold_end)
        })
    }
}

/// The default 40 % / 40 % / 20 % schedule.
pub fn lr_at(step: usize, total_steps: usize, peak: f64) -> Result<f64> {
    Schedule::default().lr_at(step as f64, total_steps, peak)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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

/// Adam moments for every parameter of a store.
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
        Self {
            cfg,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    /// One bias-corrected update. Rejects the whole step if any gradient is
    /// not finite, leaving parameters and moments untouched.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &[Vec<f64>],
        lr: impl Fn(ParamGroup) -> f64,
    ) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::shape("adam_step", &[store.len()], &[grads.len()]));
        }
        for ((_, p), g) in store.iter().zip(grads) {
            if g.len() != p.value.numel() {
                return Err(Error::shape("adam_step", p.value.shape(), &[g.len()]));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NanGradient(p.name.clone()));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.group)).collect();
        for (i, (id, group)) in ids.into_iter().enumerate() {
            let rate = lr(group);
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            let mut value = store.get(id).to_vec();
            for j in 0..value.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                value[j] -= rate * mhat / (vhat.sqrt() + eps);
            }
            let shape = store.get(id).shape().to_vec();
            store.set(id, Tensor::new(shape, value)?);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_boundaries() {
        let t = 1000;
        assert_eq!(lr_at(0, t, 2e-3).unwrap(), 0.0);
        assert_eq!(lr_at(400, t, 2e-3).unwrap(), 2e-3);
        assert_eq!(lr_at(800, t, 2e-3).unwrap(), 2e-3);
        assert!((lr_at(900, t, 2e-3).unwrap() - 1e-3).abs() < 1e-18);
        assert_eq!(lr_at(t, t, 2e-3).unwrap(), 0.0);
        assert!(lr_at(0, 0, 1.0).is_err());
    }
}
