use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates for one flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
        }
    }
}

impl AdamW {
    /// One decoupled-decay update: `p ← p − lr·wd·p − lr·m̂/(√v̂ + eps)`.
    pub fn step<T: Real>(
        &self,
        params: &mut [T],
        grads: &[T],
        state: &mut AdamState<T>,
        lr: f64,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != state.m.len() {
            return Err(Error::shape(format!(
                "AdamW got {} params, {} grads, {} state slots",
                params.len(),
                grads.len(),
                state.m.len()
            )));
        }
        state.step += 1;
        let t = state.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let bc1 = T::of(1.0 - self.beta1.powi(t));
        let bc2 = T::of(1.0 - self.beta2.powi(t));
        let lr_t = T::of(lr);
        let decay = T::of(lr * self.weight_decay);
        let eps = T::of(self.eps);
        for i in 0..params.len() {
            let g = grads[i];
            params[i] = params[i] - decay * params[i];
            state.m[i] = b1 * state.m[i] + (T::one() - b1) * g;
            state.v[i] = b2 * state.v[i] + (T::one() - b2) * g * g;
            let m_hat = state.m[i] / bc1;
            let v_hat = state.v[i] / bc2;
            params[i] = params[i] - lr_t * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `peak` over `warmup` steps, then linear decay to 0 at `total`.
pub fn lr_schedule(step: usize, peak: f64, warmup: usize, total: usize) -> f64 {
    if step < warmup {
        peak * step as f64 / warmup as f64
    } else if total <= warmup {
        peak
    } else {
        peak * total.saturating_sub(step) as f64 / (total - warmup) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_no_decay_is_identity() {
        let opt = AdamW {
            weight_decay: 0.0,
            ..AdamW::default()
        };
        let mut p = vec![1.0f64, -2.0];
        let mut s = AdamState::new(2);
        opt.step(&mut p, &[0.0, 0.0], &mut s, 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let opt = AdamW {
            weight_decay: 0.0,
            ..AdamW::default()
        };
        let mut p = vec![0.0f64, 0.0];
        let mut s = AdamState::new(2);
        opt.step(&mut p, &[3.0, -0.02], &mut s, 1e-3).unwrap();
        assert!((p[0] + 1e-3).abs() < 1e-9);
        assert!((p[1] - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn schedule_shape() {
        assert_eq!(lr_schedule(0, 5e-4, 2000, 3000), 0.0);
        assert_eq!(lr_schedule(2000, 5e-4, 2000, 3000), 5e-4);
        assert!((lr_schedule(2500, 5e-4, 2000, 3000) - 2.5e-4).abs() < 1e-18);
        assert_eq!(lr_schedule(3000, 5e-4, 2000, 3000), 0.0);
        assert_eq!(lr_schedule(1000, 5e-4, 2000, 3000), 2.5e-4);
    }
}
