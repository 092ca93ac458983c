use super::LossError;

pub const DEFAULT_LR: f64 = 5e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<(), LossError> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(LossError::ShapeMismatch(format!(
            "{} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![1.0, -2.0, 3.5];
        let mut s = AdamState::new(3, DEFAULT_LR);
        adam_step(&mut p, &[0.0; 3], &mut s).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![0.0; 4];
        let g = [0.05, -7.0, 250.0, -0.5];
        let mut s = AdamState::new(4, DEFAULT_LR);
        adam_step(&mut p, &g, &mut s).unwrap();
        for (x, gi) in p.iter().zip(g) {
            assert_relative_eq!(-x, DEFAULT_LR * gi.signum(), max_relative = 1e-6);
        }
    }

    #[test]
    fn two_steps_match_hand_rolled_update() {
        let g = 0.3;
        let (lr, b1, b2, eps) = (1e-2, 0.5, 0.999, 1e-8);
        let mut p = vec![1.0];
        let mut s = AdamState::new(1, lr);
        adam_step(&mut p, &[g], &mut s).unwrap();
        adam_step(&mut p, &[g], &mut s).unwrap();

        let mut x = 1.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - f64::powi(b1, t));
            let vh = v / (1.0 - f64::powi(b2, t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        assert_relative_eq!(p[0], x, max_relative = 1e-14);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let mut p = vec![0.0; 2];
        let mut s = AdamState::new(2, DEFAULT_LR);
        assert!(matches!(adam_step(&mut p, &[1.0], &mut s), Err(LossError::ShapeMismatch(_))));
    }
}
