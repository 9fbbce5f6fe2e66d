use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW) weight decay.
    pub weight_decay: f64,
    /// Global-norm gradient clipping threshold.
    pub grad_clip: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// L2 norm of the gradient before clipping.
    pub grad_norm: f64,
    /// Factor the gradient was multiplied by (1 when not clipped).
    pub clip_scale: f64,
}

pub fn global_norm(g: &[f64]) -> f64 {
    g.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One AdamW update of `params` against the descent gradient `grad`.
///
/// A non-finite gradient leaves `params` and `state` untouched and returns a
/// numeric error.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<StepStats> {
    if params.len() != grad.len() || state.m.len() != grad.len() {
        return Err(Error::input(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grad.len(),
            state.m.len()
        )));
    }
    let grad_norm = global_norm(grad);
    if !grad_norm.is_finite() {
        return Err(Error::numeric("non-finite gradient"));
    }
    let clip_scale = match cfg.grad_clip {
        Some(c) if grad_norm > c => c / grad_norm,
        _ => 1.0,
    };
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grad[i] * clip_scale;
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        params[i] -= cfg.lr * (mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * params[i]);
    }
    Ok(StepStats { grad_norm, clip_scale })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.0,
            grad_clip: Some(1.0),
        }
    }

    #[test]
    fn first_step_moves_by_lr_in_sign_direction() {
        let mut p = vec![1.0, -2.0, 0.5];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.3, -0.1, 0.0], &mut s, &cfg(0.01)).unwrap();
        assert!((p[0] - 0.99).abs() < 1e-7);
        assert!((p[1] + 1.99).abs() < 1e-7);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn clipping_reports_pre_clip_norm() {
        let mut p = vec![0.0; 2];
        let mut s = AdamState::new(2);
        let st = adam_step(&mut p, &[3.0, 4.0], &mut s, &cfg(0.1)).unwrap();
        assert_eq!(st.grad_norm, 5.0);
        assert!((st.clip_scale - 0.2).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_leaves_params_alone() {
        let mut p = vec![1.0, 2.0];
        let mut s = AdamState::new(2);
        let err = adam_step(&mut p, &[f64::NAN, 0.0], &mut s, &cfg(0.1)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(s.steps(), 0);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = vec![3.0, -1.0];
        let mut s = AdamState::new(2);
        for _ in 0..2000 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            adam_step(&mut p, &g, &mut s, &cfg(0.01)).unwrap();
        }
        assert!(p.iter().all(|x| x.abs() < 1e-2), "{p:?}");
    }
}
