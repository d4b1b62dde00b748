use super::{NumericsError, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    /// Number of applied steps; the next update uses `t + 1`.
    pub t: u64,
    /// Steps rejected because a gradient was not finite.
    pub skipped: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        Self {
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            t: 0,
            skipped: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    SkippedNonFinite,
}

/// Bias-corrected Adam with decoupled weight decay (`p -= lr * wd * p` before
/// the moment update is applied).
pub fn adam_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<StepOutcome, NumericsError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(NumericsError::ShapeMismatch {
            op: "adam_step",
            left: vec![params.len()],
            right: vec![grads.len(), state.m.len()],
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.len() != g.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "adam_step",
                left: p.shape().to_vec(),
                right: vec![g.len()],
            });
        }
    }
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        state.skipped += 1;
        return Ok(StepOutcome::SkippedNonFinite);
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::c(cfg.beta1), T::c(cfg.beta2));
    let lr = T::c(cfg.lr);
    let decay = T::c(cfg.lr * cfg.weight_decay);
    let bc1 = T::c(1.0 - cfg.beta1.powi(t));
    let bc2 = T::c(1.0 - cfg.beta2.powi(t));
    let eps = T::c(cfg.eps);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g[j];
            m[j] = b1 * m[j] + (T::one() - b1) * gj;
            v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *w -= decay * *w;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(StepOutcome::Applied)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> Vec<Tensor<f64>> {
        vec![Tensor::filled(vec![3], v)]
    }

    #[test]
    fn zero_gradient_no_decay_is_noop() {
        let mut p = one_param(0.7);
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig::default();
        for _ in 0..5 {
            adam_step(&mut p, &[vec![0.0; 3]], &mut st, &cfg).unwrap();
        }
        assert_eq!(p, one_param(0.7));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = one_param(0.0);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[vec![1.0; 3]], &mut st, &AdamConfig::default()).unwrap();
        // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
        for &w in p[0].data() {
            assert!((w + 1e-3).abs() < 1e-6, "{w}");
        }
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let mut p = one_param(0.0);
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig {
            lr: 0.01,
            ..Default::default()
        };
        let mut prev = 0.0;
        let mut last_step = 0.0;
        for _ in 0..2000 {
            adam_step(&mut p, &[vec![0.3; 3]], &mut st, &cfg).unwrap();
            let now = p[0].data()[0];
            last_step = prev - now;
            prev = now;
        }
        assert!((last_step - 0.01).abs() < 1e-6, "{last_step}");
    }

    #[test]
    fn decoupled_weight_decay() {
        let mut p = one_param(2.0);
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..Default::default()
        };
        adam_step(&mut p, &[vec![0.0; 3]], &mut st, &cfg).unwrap();
        assert!((p[0].data()[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_skips_step() {
        let mut p = one_param(1.0);
        let mut st = AdamState::new(&p);
        let out = adam_step(
            &mut p,
            &[vec![0.0, f64::NAN, 1.0]],
            &mut st,
            &AdamConfig::default(),
        )
        .unwrap();
        assert_eq!(out, StepOutcome::SkippedNonFinite);
        assert_eq!(st.skipped, 1);
        assert_eq!(st.t, 0);
        assert_eq!(p, one_param(1.0));
        assert!(adam_step(&mut p, &[vec![0.0; 2]], &mut st, &AdamConfig::default()).is_err());
    }
}
