use super::{ModelConfig, ModelParams};

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step(params: &mut ModelParams, state: &mut AdamState, grads: &ModelParams, config: &ModelConfig) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    let pairs = [
        (&mut params.w0, &mut state.m.w0, &mut state.v.w0, &grads.w0),
        (&mut params.w1, &mut state.m.w1, &mut state.v.w1, &grads.w1),
    ];
    for (p, m, v, g) in pairs {
        let p = p.as_mut_slice();
        let m = m.as_mut_slice();
        let v = v.as_mut_slice();
        for (i, &gi) in g.as_slice().iter().enumerate() {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn scalar(x: f64) -> ModelParams {
        ModelParams {
            w0: Matrix::from_rows(&[vec![x]]),
            w1: Matrix::from_rows(&[vec![0.0]]),
        }
    }

    fn config() -> ModelConfig {
        ModelConfig::for_registry(1)
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = scalar(1.0);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &mut s, &scalar(0.0), &config());
        assert_eq!(p, scalar(1.0));
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar(1.0);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &mut s, &scalar(1.0), &config());
        // m̂ = 1, v̂ = 1, step = lr / (1 + eps)
        let expected = 1.0 - 1e-2 / (1.0 + 1e-8);
        assert!((p.w0[(0, 0)] - expected).abs() < 1e-15);
        assert!((p.w0[(0, 0)] - 0.99).abs() < 1e-8);
    }

    #[test]
    fn momentum_carries_after_gradient_stops() {
        let cfg = config();
        let mut p = scalar(1.0);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &mut s, &scalar(1.0), &cfg);
        let mut expected = 1.0 - 1e-2 / (1.0 + 1e-8);
        // Hand recurrence with g = 0 for t = 2, 3.
        let (mut m, mut v) = (0.1, 0.001);
        for t in 2..=3 {
            adam_step(&mut p, &mut s, &scalar(0.0), &cfg);
            m *= 0.9;
            v *= 0.999;
            let m_hat = m / (1.0 - 0.9f64.powi(t));
            let v_hat = v / (1.0 - 0.999f64.powi(t));
            expected -= 1e-2 * m_hat / (v_hat.sqrt() + 1e-8);
            assert!((p.w0[(0, 0)] - expected).abs() < 1e-14, "t={t}");
        }
        assert!(p.w0[(0, 0)] < 0.99 - 1e-3);
        assert!(s.m.w0[(0, 0)] != 0.0);
    }
}
