use crate::error::{Error, Result};

/// Adam moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    /// Standard moments `β₁ = 0.9`, `β₂ = 0.999`, `ε = 1e-8`.
    pub fn new(len: usize) -> Self {
        Self::with_betas(len, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(len: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            beta1,
            beta2,
            eps,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != state.len() || grads.len() != state.len() {
        return Err(Error::shape(format!(
            "adam state has {} entries, params {}, grads {}",
            state.len(),
            params.len(),
            grads.len()
        )));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(format!(
            "gradient entry {i} is {} at step {}",
            grads[i],
            state.step + 1
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut state = AdamState::new(2);
        let mut p = vec![1.0, -1.0];
        adam_step(&mut state, &mut p, &[3.0, -0.5], 0.1).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert!((p[1] + 0.9).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut state = AdamState::new(3);
        let mut p = vec![0.25, -4.0, 7.5];
        for _ in 0..10 {
            adam_step(&mut state, &mut p, &[0.0; 3], 0.1).unwrap();
        }
        assert_eq!(p, vec![0.25, -4.0, 7.5]);
        assert_eq!(state.steps(), 10);
    }

    #[test]
    fn constant_gradient_steps_by_lr() {
        let mut state = AdamState::new(2);
        let mut p = vec![0.0, 0.0];
        let mut prev = p.clone();
        for _ in 0..1000 {
            prev.copy_from_slice(&p);
            adam_step(&mut state, &mut p, &[0.3, -12.0], 0.01).unwrap();
        }
        assert!((prev[0] - p[0] - 0.01).abs() < 1e-9);
        assert!((p[1] - prev[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut state = AdamState::new(1);
        let mut p = vec![5.0];
        for _ in 0..2000 {
            let g = 2.0 * (p[0] - 2.0);
            adam_step(&mut state, &mut p, &[g], 0.05).unwrap();
        }
        assert!((p[0] - 2.0).abs() < 1e-3);
    }

    #[test]
    fn rejects_nan_and_shape() {
        let mut state = AdamState::new(2);
        let mut p = vec![0.0, 0.0];
        let err = adam_step(&mut state, &mut p, &[f64::NAN, 0.0], 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(_)));
        assert_eq!(p, vec![0.0, 0.0]);
        assert!(adam_step(&mut state, &mut p, &[0.0], 0.1).is_err());
        assert!(adam_step(&mut state, &mut p, &[0.0, 0.0], 0.0).is_err());
    }
}
