//! Bias-corrected Adam.

use super::denoiser::DenoiserParams;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub lr: f64,
    pub eps_hat: f64,
}

impl AdamState {
    /// Zeroed moments with `beta1 = 0.9`, `beta2 = 0.99`.
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: 0.9,
            beta2: 0.99,
            lr,
            eps_hat: 1e-8,
        }
    }
}

/// Applies one Adam update to a raw parameter slice. A gradient with any
/// non-finite entry is rejected and leaves both parameters and state
/// untouched.
pub fn adam_update(values: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if values.len() != grads.len() || state.m.len() != grads.len() || state.v.len() != grads.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moments",
            values.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2) = (state.beta1, state.beta2);
    for i in 0..values.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        values[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps_hat);
    }
    Ok(())
}

pub fn adam_step(params: &mut DenoiserParams, grads: &[f64], state: &mut AdamState) -> Result<()> {
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    adam_update(params.values_mut(), grads, state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_values() {
        let mut x = vec![0.5, -1.5];
        let mut s = AdamState::new(2, 1e-2);
        adam_update(&mut x, &[0.0, 0.0], &mut s).unwrap();
        assert_eq!(x, vec![0.5, -1.5]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        for &g in &[3.0, -0.02, 1e3] {
            let mut x = vec![0.0];
            let mut s = AdamState::new(1, 0.1);
            adam_update(&mut x, &[g], &mut s).unwrap();
            let expected = -0.1 * f64::signum(g) * g.abs() / (g.abs() + 1e-8);
            assert!((x[0] - expected).abs() < 1e-12, "{} vs {expected}", x[0]);
        }
    }

    #[test]
    fn scalar_recurrence() {
        // m_k = 0.9 m + 0.1 g, v_k = 0.99 v + 0.01 g², evaluated by hand
        let (g, lr, eps) = (0.7f64, 0.05f64, 1e-8f64);
        let mut x = vec![1.0];
        let mut s = AdamState::new(1, lr);
        let (mut m, mut v, mut want) = (0.0f64, 0.0f64, 1.0f64);
        for k in 1..=25 {
            adam_update(&mut x, &[g], &mut s).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.99 * v + 0.01 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(k));
            let vh = v / (1.0 - 0.99f64.powi(k));
            want -= lr * mh / (vh.sqrt() + eps);
            assert!((x[0] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn non_finite_gradient_skipped() {
        let mut x = vec![1.0, 2.0];
        let mut s = AdamState::new(2, 0.1);
        assert!(adam_update(&mut x, &[f64::NAN, 1.0], &mut s).is_err());
        assert_eq!(s.step, 0);
        assert_eq!(x, vec![1.0, 2.0]);
        assert!(s.m.iter().all(|&v| v == 0.0));
    }
}
