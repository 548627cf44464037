use super::HALF_LN_2PI;
use crate::error::{check_dim, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Largest action magnitude ever emitted, keeping samples inside the open box.
const ACTION_LIMIT: f64 = 1.0 - f64::EPSILON;

/// Policy head split into mean and clamped log standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianHeadOutput {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    /// True where the raw log-std fell outside the clamp (no gradient flows).
    clamped: Vec<bool>,
}

impl GaussianHeadOutput {
    pub fn new(mean: Vec<f64>, raw_log_std: Vec<f64>) -> Result<Self> {
        check_dim("gaussian head", mean.len(), raw_log_std.len())?;
        let clamped = raw_log_std
            .iter()
            .map(|&l| !(LOG_STD_MIN..=LOG_STD_MAX).contains(&l))
            .collect();
        let log_std = raw_log_std
            .into_iter()
            .map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect();
        Ok(Self {
            mean,
            log_std,
            clamped,
        })
    }

    /// Splits a raw network output `[mean..., log_std...]`.
    pub fn from_raw(raw: &[f64]) -> Result<Self> {
        let dim = raw.len() / 2;
        check_dim("gaussian head raw output", 2 * dim, raw.len())?;
        Self::new(raw[..dim].to_vec(), raw[dim..].to_vec())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Deterministic action `tanh(mean)` used for evaluation.
    pub fn mode(&self) -> Vec<f64> {
        self.mean
            .iter()
            .map(|m| m.tanh().clamp(-ACTION_LIMIT, ACTION_LIMIT))
            .collect()
    }

    /// Reparameterised draw `tanh(mean + std * noise)` with its log-density
    /// under the squashed distribution.
    pub fn sample(&self, noise: &[f64]) -> Result<SquashedSample> {
        check_dim("gaussian noise", self.dim(), noise.len())?;
        let mut action = Vec::with_capacity(self.dim());
        let mut pre_tanh = Vec::with_capacity(self.dim());
        let mut log_prob = 0.0;
        for ((&m, &ls), &e) in self.mean.iter().zip(&self.log_std).zip(noise) {
            let u = m + ls.exp() * e;
            log_prob += -0.5 * e * e - ls - HALF_LN_2PI - log_one_minus_tanh_sq(u);
            pre_tanh.push(u);
            action.push(u.tanh().clamp(-ACTION_LIMIT, ACTION_LIMIT));
        }
        Ok(SquashedSample {
            action,
            log_prob,
            pre_tanh,
        })
    }
}

/// `ln(1 - tanh²(u))` without cancellation for large `|u|`.
#[inline]
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SquashedSample {
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub pre_tanh: Vec<f64>,
}

/// Gradient with respect to the raw head outputs `[mean..., log_std...]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrad {
    pub d_mean: Vec<f64>,
    pub d_log_std: Vec<f64>,
}

impl HeadGrad {
    pub fn into_raw(self) -> Vec<f64> {
        let mut v = self.d_mean;
        v.extend(self.d_log_std);
        v
    }
}

/// Back-propagates `d_action · a + d_log_prob · log π(a)` through the
/// reparameterised sample to the head outputs (noise held fixed).
pub fn squashed_gaussian_grads(
    head: &GaussianHeadOutput,
    noise: &[f64],
    sample: &SquashedSample,
    d_action: &[f64],
    d_log_prob: f64,
) -> Result<HeadGrad> {
    check_dim("gaussian noise", head.dim(), noise.len())?;
    check_dim("action gradient", head.dim(), d_action.len())?;
    let mut d_mean = Vec::with_capacity(head.dim());
    let mut d_log_std = Vec::with_capacity(head.dim());
    for i in 0..head.dim() {
        let t = sample.pre_tanh[i].tanh();
        let std = head.log_std[i].exp();
        let jac = 1.0 - t * t;
        // d log π / d u = 2 tanh(u); d u / d mean = 1; d u / d log_std = std * noise
        let du = d_action[i] * jac + d_log_prob * 2.0 * t;
        d_mean.push(du);
        let dls = if head.clamped[i] {
            0.0
        } else {
            du * std * noise[i] - d_log_prob
        };
        d_log_std.push(dls);
    }
    Ok(HeadGrad { d_mean, d_log_std })
}
