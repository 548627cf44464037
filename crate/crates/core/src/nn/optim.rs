use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// Outcome of one clipped optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    /// Norm of the bias-corrected Adam direction.
    pub direction_norm: f64,
    /// `min(base_lr, base_lr / ‖direction‖)`.
    pub effective_lr: f64,
    /// Norm of the change actually applied to the parameters.
    pub displacement: f64,
}

/// One Adam step whose displacement is bounded by `base_lr`.
///
/// The bias-corrected direction `D` is scaled by
/// `min(base_lr, base_lr / ‖D‖)`, so `‖Δparams‖ <= base_lr` on every call.
/// Non-finite gradients reject the step and leave `params` and `state`
/// untouched.
pub fn adam_clipped_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    base_lr: f64,
) -> Result<StepInfo> {
    check_dim("adam gradients", params.len(), grads.len())?;
    check_dim("adam state", params.len(), state.len())?;
    if !(base_lr > 0.0 && base_lr.is_finite()) {
        return Err(Error::Config(format!(
            "learning rate must be positive, got {base_lr}"
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite gradient component {i}: {}",
            grads[i]
        )));
    }

    let t = state.t + 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t.min(i32::MAX as u64) as i32);
    let c2 = 1.0 - b2.powi(t.min(i32::MAX as u64) as i32);

    let mut direction = Vec::with_capacity(grads.len());
    for ((m, v), &g) in state.m.iter_mut().zip(state.v.iter_mut()).zip(grads) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        direction.push(m_hat / (v_hat.sqrt() + state.eps));
    }
    state.t = t;

    let direction_norm = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
    let effective_lr = if direction_norm > 1.0 {
        base_lr / direction_norm
    } else {
        base_lr
    };
    let mut sq = 0.0;
    for (p, d) in params.iter_mut().zip(&direction) {
        let before = *p;
        *p -= effective_lr * d;
        let delta = *p - before;
        sq += delta * delta;
    }
    Ok(StepInfo {
        direction_norm,
        effective_lr,
        displacement: sq.sqrt(),
    })
}

/// `target <- (1 - tau) * target + tau * online`.
pub fn polyak_update(target: &mut [f64], online: &[f64], tau: f64) -> Result<()> {
    check_dim("polyak update", target.len(), online.len())?;
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Config(format!("tau must lie in (0, 1], got {tau}")));
    }
    if tau == 1.0 {
        target.copy_from_slice(online);
        return Ok(());
    }
    for (t, &o) in target.iter_mut().zip(online) {
        *t = (1.0 - tau) * *t + tau * o;
    }
    Ok(())
}

/// Linear interpolation from `start` to `end` over `steps`, then held at `end`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub start: f64,
    pub end: f64,
    pub steps: u64,
}

impl LrSchedule {
    pub const fn new(start: f64, end: f64, steps: u64) -> Self {
        Self { start, end, steps }
    }

    pub const fn constant(value: f64) -> Self {
        Self::new(value, value, 0)
    }

    pub fn at(&self, step: u64) -> f64 {
        if self.steps == 0 || step >= self.steps {
            return self.end;
        }
        let frac = step as f64 / self.steps as f64;
        self.start + (self.end - self.start) * frac
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.start > 0.0 && self.end > 0.0 && self.start.is_finite() && self.end.is_finite())
        {
            return Err(Error::Config(format!(
                "{name}: learning rates must be positive and finite"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_with_direction_norm(norm: f64, lr: f64) -> (StepInfo, Vec<f64>) {
        // On the first step the direction is sign(g) per component, so a
        // gradient with k non-zero entries has ‖D‖ ≈ √k.
        let k = (norm * norm).round() as usize;
        let mut params = vec![0.0; k];
        let grads = vec![0.5; k];
        let mut st = AdamState::new(k);
        let info = adam_clipped_step(&mut params, &grads, &mut st, lr).unwrap();
        (info, params)
    }

    #[test]
    fn large_direction_is_clipped_to_base_lr() {
        let (info, params) = step_with_direction_norm(10.0, 1e-3);
        assert!((info.direction_norm - 10.0).abs() < 1e-6);
        assert!((info.effective_lr - 1e-4).abs() < 1e-10);
        let norm = params.iter().map(|p| p * p).sum::<f64>().sqrt();
        assert!((norm - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn small_direction_uses_base_lr() {
        // second step with a gradient that flips sign keeps ‖D‖ well below 1
        let mut params = vec![0.0];
        let mut st = AdamState::new(1);
        adam_clipped_step(&mut params, &[1.0], &mut st, 1e-3).unwrap();
        let before = params[0];
        let info = adam_clipped_step(&mut params, &[-1.0], &mut st, 1e-3).unwrap();
        assert!(info.direction_norm < 1.0);
        assert_eq!(info.effective_lr, 1e-3);
        assert!(((params[0] - before).abs() - 1e-3 * info.direction_norm).abs() < 1e-15);
    }

    #[test]
    fn half_norm_direction_moves_half_base_lr() {
        let mut params = vec![0.0];
        let mut st = AdamState::new(1);
        // hand-set moments so the bias-corrected direction is exactly 0.5 on step 2
        st.t = 1;
        st.m = vec![0.0];
        st.v = vec![0.0];
        let g = 1.0;
        // m2 = 0.1 g, v2 = 0.001 g², corrections 0.19 and 0.001999
        let info = adam_clipped_step(&mut params, &[g], &mut st, 1e-3).unwrap();
        let expected_dir = (0.1 / 0.19) / ((0.001 / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        assert!((info.direction_norm - expected_dir).abs() < 1e-12);
        assert!(info.direction_norm < 1.0);
        assert!((info.displacement - 1e-3 * expected_dir).abs() < 1e-15);
    }

    #[test]
    fn first_step_moments() {
        let mut params = vec![0.0];
        let mut st = AdamState::new(1);
        let info = adam_clipped_step(&mut params, &[1.0], &mut st, 1e-3).unwrap();
        assert!((st.m[0] - 0.1).abs() < 1e-15);
        assert!((st.v[0] - 0.001).abs() < 1e-15);
        assert_eq!(st.t, 1);
        assert!((info.direction_norm - 1.0).abs() < 1e-7);
    }

    #[test]
    fn non_finite_gradients_reject_the_step() {
        let mut params = vec![1.0, 2.0];
        let mut st = AdamState::new(2);
        let err = adam_clipped_step(&mut params, &[f64::NAN, 0.0], &mut st, 1e-3);
        assert!(matches!(err, Err(Error::Numerical(_))));
        assert_eq!(params, vec![1.0, 2.0]);
        assert_eq!(st.t, 0);
        assert!(adam_clipped_step(&mut params, &[0.0, 0.0], &mut st, 0.0).is_err());
    }

    #[test]
    fn polyak_cases() {
        let mut t = vec![0.0, 1.0];
        polyak_update(&mut t, &[1.0, 3.0], 1.0).unwrap();
        assert_eq!(t, vec![1.0, 3.0]);

        let mut t = vec![0.0];
        polyak_update(&mut t, &[1.0], 0.005).unwrap();
        assert!((t[0] - 0.005).abs() < 1e-15);

        let mut t = vec![0.3, -0.7];
        polyak_update(&mut t, &[0.3, -0.7], 0.005).unwrap();
        assert_eq!(t, vec![0.3, -0.7]);

        assert!(polyak_update(&mut t, &[1.0], 0.5).is_err());
        assert!(polyak_update(&mut t, &[1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn linear_schedule() {
        let total = 1000;
        let s = LrSchedule::new(3e-5, 1e-6, total);
        assert_eq!(s.at(0), 3e-5);
        assert!((s.at(total / 2) - 1.55e-5).abs() < 1e-18);
        assert_eq!(s.at(total + 7), 1e-6);
        assert_eq!(LrSchedule::constant(5e-6).at(123), 5e-6);
    }
}
