//! Adam optimizer over the flat parameter buffer.
//!
//! Moments are kept in the model's scalar type; the update itself is
//! computed in f64 so bias correction stays accurate at early steps.

use super::{ParamBuf, Real};
use crate::error::{Error, Result};

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(n_params: usize) -> Self {
        AdamState { m: vec![T::zero(); n_params], v: vec![T::zero(); n_params], step: 0 }
    }
}

/// One Adam update. Fails with the diverged error if any gradient is
/// non-finite; `epoch` and `step_in_epoch` only label that error.
pub fn adam_step<T: Real>(
    params: &mut ParamBuf<T>,
    grads: &ParamBuf<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
    epoch: usize,
    step_in_epoch: usize,
) -> Result<()> {
    if params.data.len() != grads.data.len() || params.data.len() != state.m.len() {
        return Err(Error::LengthMismatch {
            context: "optimizer buffers",
            left: params.data.len(),
            right: grads.data.len(),
        });
    }
    if grads.data.iter().any(|g| !g.is_finite()) {
        return Err(Error::Diverged { epoch, step: step_in_epoch });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let b1 = cfg.beta1;
    let b2 = cfg.beta2;
    for i in 0..params.data.len() {
        let g = grads.data[i].to_f64();
        let m = b1 * state.m[i].to_f64() + (1.0 - b1) * g;
        let v = b2 * state.v[i].to_f64() + (1.0 - b2) * g * g;
        state.m[i] = T::from_f64(m);
        state.v[i] = T::from_f64(v);
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        let update = cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        params.data[i] = T::from_f64(params.data[i].to_f64() - update);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(v: Vec<f64>) -> ParamBuf<f64> {
        ParamBuf { data: v }
    }

    #[test]
    fn first_step_moves_by_learning_rate_up_to_epsilon() {
        let cfg = AdamConfig { learning_rate: 0.1, ..AdamConfig::default() };
        let mut params = flat(vec![1.0, -2.0, 0.5]);
        let grads = flat(vec![3.0, -0.7, 1e-3]);
        let mut state = AdamState::new(3);
        adam_step(&mut params, &grads, &mut state, &cfg, 0, 0).unwrap();
        // Bias-corrected m/sqrt(v) equals sign(g) on step one, so every
        // parameter moves by almost exactly the learning rate.
        let expected = [1.0 - 0.1, -2.0 + 0.1, 0.5 - 0.1];
        for (p, e) in params.data.iter().zip(expected) {
            assert!((p - e).abs() < 1e-4, "{p} vs {e}");
        }
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradients_leave_parameters_untouched_but_advance_step() {
        let cfg = AdamConfig::default();
        let mut params = flat(vec![0.25, -0.75]);
        let grads = flat(vec![0.0, 0.0]);
        let mut state = AdamState::new(2);
        adam_step(&mut params, &grads, &mut state, &cfg, 0, 0).unwrap();
        adam_step(&mut params, &grads, &mut state, &cfg, 0, 1).unwrap();
        assert_eq!(params.data, vec![0.25, -0.75]);
        assert_eq!(state.step, 2);
    }

    #[test]
    fn quadratic_converges_near_its_minimum() {
        // Minimize (x - 3)^2 from x = 0 with the step size used for the
        // convergence contract.
        let cfg = AdamConfig { learning_rate: 0.1, ..AdamConfig::default() };
        let mut params = flat(vec![0.0]);
        let mut state = AdamState::new(1);
        for step in 0..200 {
            let g = 2.0 * (params.data[0] - 3.0);
            adam_step(&mut params, &flat(vec![g]), &mut state, &cfg, 0, step).unwrap();
        }
        assert!((params.data[0] - 3.0).abs() < 0.05, "ended at {}", params.data[0]);
    }

    #[test]
    fn non_finite_gradient_reports_divergence() {
        let cfg = AdamConfig::default();
        let mut params = flat(vec![1.0]);
        let mut state = AdamState::new(1);
        let err = adam_step(&mut params, &flat(vec![f64::NAN]), &mut state, &cfg, 3, 17).unwrap_err();
        match err {
            Error::Diverged { epoch, step } => {
                assert_eq!((epoch, step), (3, 17));
            }
            other => panic!("unexpected error {other:?}"),
        }
        // The failed step must not half-apply: parameters and state
        // untouched.
        assert_eq!(params.data, vec![1.0]);
        assert_eq!(state.step, 0);
        assert_eq!(state.m, vec![0.0]);
    }
}
