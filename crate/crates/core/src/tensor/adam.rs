use super::Float;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    /// The usual transformer recipe.
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

/// First/second moment estimates, one array per parameter, plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Float> {
    pub config: AdamConfig,
    pub t: u64,
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
}

impl<T: Float> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            t: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }
}

/// One bias-corrected Adam update of every `(name, values)` parameter.
///
/// The whole step is rejected, leaving parameters and state untouched, if any
/// gradient entry is non-finite.
pub fn adam_step<T: Float>(
    params: &mut [(&str, &mut [T])],
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::invalid(format!("adam: learning rate {lr} must be positive")));
    }
    if params.len() != grads.len() {
        return Err(Error::invalid(format!(
            "adam: {} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.len() != g.len() {
            return Err(Error::shape("adam_step", &[p.len()], &[g.len()]));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
    }
    if state.first.is_empty() {
        state.first = params.iter().map(|(_, p)| vec![T::zero(); p.len()]).collect();
        state.second = state.first.clone();
    }
    if state.first.len() != params.len() || state.first.iter().zip(params.iter()).any(|(m, (_, p))| m.len() != p.len()) {
        return Err(Error::invalid("adam: moment arrays do not match the parameters"));
    }

    state.t += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let t = state.t as i32;
    let c1 = T::lit(1.0 - beta1.powi(t));
    let c2 = T::lit(1.0 - beta2.powi(t));
    let (b1, b2) = (T::lit(beta1), T::lit(beta2));
    let (ob1, ob2) = (T::lit(1.0 - beta1), T::lit(1.0 - beta2));
    let (lr, eps) = (T::lit(lr), T::lit(eps));

    for (((_, p), g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + ob1 * g[i];
            v[i] = b2 * v[i] + ob2 * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] = p[i] - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fresh() -> AdamState<f64> {
        AdamState::new(AdamConfig::default())
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut w = vec![0.5, -1.5];
        let mut state = fresh();
        adam_step(&mut [("w", &mut w[..])], &[vec![0.0, 0.0]], &mut state, 0.1).unwrap();
        assert_eq!(w, vec![0.5, -1.5]);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut w = vec![0.0];
        let mut state = fresh();
        adam_step(&mut [("w", &mut w[..])], &[vec![1.0]], &mut state, 0.1).unwrap();
        assert!((w[0] + 0.1).abs() < 1e-8, "{}", w[0]);
        adam_step(&mut [("w", &mut w[..])], &[vec![1.0]], &mut state, 0.1).unwrap();
        assert_eq!(state.t, 2);
    }

    #[test]
    fn non_finite_gradient_is_named_and_rejected() {
        let mut w = vec![1.0];
        let mut b = vec![2.0];
        let mut state = fresh();
        let err = adam_step(
            &mut [("w", &mut w[..]), ("bias", &mut b[..])],
            &[vec![0.1], vec![f64::NAN]],
            &mut state,
            0.1,
        )
        .unwrap_err();
        assert!(err.to_string().contains("bias"));
        assert_eq!(state.t, 0);
        assert_eq!((w[0], b[0]), (1.0, 2.0));
    }

    #[test]
    fn rejects_bad_lr() {
        let mut w = vec![1.0];
        assert!(adam_step(&mut [("w", &mut w[..])], &[vec![0.0]], &mut fresh(), 0.0).is_err());
    }
}
