use serde::{Deserialize, Serialize};

use super::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient; `weight_decay * param` is added to the gradient
    /// before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        AdamState {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<(), TensorError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TensorError::ShapeMismatch {
            op: "adam_step",
            left: vec![params.len()],
            right: vec![grads.len(), state.m.len()],
        });
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(super::mismatch("adam_step", p, g));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            let gi = g.data()[i] + cfg.weight_decay * p[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Learning-rate schedules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// `lr0 · rate^(step / decay_steps)`, evaluated per optimizer step.
    ExponentialSteps {
        rate: f64,
        decay_steps: f64,
    },
    /// Geometric per-epoch decay reaching `decay · lr0` after `span` of the
    /// epoch budget, then constant.
    FractionalSpan {
        decay: f64,
        span: f64,
    },
}

impl LrSchedule {
    pub fn fractional(decay: f64) -> Self {
        LrSchedule::FractionalSpan { decay, span: 0.9 }
    }

    pub fn lr(&self, lr0: f64, step: u64, epoch: usize, total_epochs: usize) -> f64 {
        match *self {
            LrSchedule::Constant => lr0,
            LrSchedule::ExponentialSteps { rate, decay_steps } => lr0 * rate.powf(step as f64 / decay_steps),
            LrSchedule::FractionalSpan { decay, span } => {
                let horizon = span * total_epochs as f64;
                if horizon <= 0.0 {
                    return lr0 * decay;
                }
                let progress = (epoch as f64).min(horizon) / horizon;
                lr0 * decay.powf(progress)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_leaves_params() {
        let mut p = vec![Tensor::row(&[1.0, -2.0])];
        let g = vec![Tensor::zeros(vec![1, 2])];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 0.1, &AdamConfig::default()).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Tensor::scalar(0.5)];
        let g = vec![Tensor::scalar(1.0)];
        let mut s = AdamState::new(&p);
        let lr = 1e-3;
        adam_step(&mut p, &g, &mut s, lr, &AdamConfig::default()).unwrap();
        // m_hat = v_hat = 1  =>  delta = lr / (1 + eps)
        let expected = 0.5 - lr / (1.0 + 1e-8);
        assert!((p[0].item() - expected).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![Tensor::scalar(0.5)];
        let g = vec![Tensor::zeros(vec![1, 2])];
        let mut s = AdamState::new(&p);
        assert!(adam_step(&mut p, &g, &mut s, 0.1, &AdamConfig::default()).is_err());
    }

    #[test]
    fn deterministic_trajectories() {
        let run = || {
            let mut p = vec![Tensor::row(&[0.3, -0.7])];
            let mut s = AdamState::new(&p);
            let cfg = AdamConfig {
                weight_decay: 1e-5,
                ..Default::default()
            };
            for k in 0..50 {
                let g = vec![p[0].map(|x| 2.0 * x + k as f64 * 1e-3)];
                adam_step(&mut p, &g, &mut s, 0.01, &cfg).unwrap();
            }
            p[0].data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn exponential_schedule() {
        let s = LrSchedule::ExponentialSteps {
            rate: 0.5,
            decay_steps: 840.0,
        };
        assert_eq!(s.lr(1e-3, 0, 0, 10), 1e-3);
        assert!((s.lr(1e-3, 840, 0, 10) - 5e-4).abs() < 1e-18);
    }

    #[test]
    fn fractional_schedule() {
        let s = LrSchedule::fractional(0.08);
        let lr0 = 2.1e-5;
        assert_eq!(s.lr(lr0, 0, 0, 100), lr0);
        assert!((s.lr(lr0, 0, 90, 100) - 0.08 * lr0).abs() < 1e-12 * lr0);
        assert_eq!(s.lr(lr0, 0, 95, 100), s.lr(lr0, 0, 90, 100));
        // geometric: equal ratios per epoch
        let r1 = s.lr(lr0, 0, 10, 100) / s.lr(lr0, 0, 9, 100);
        let r2 = s.lr(lr0, 0, 50, 100) / s.lr(lr0, 0, 49, 100);
        assert!((r1 - r2).abs() < 1e-12);
    }
}
