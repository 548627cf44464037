//! Parameterised energy function `φ(d, ḋ) = σ + d_min^n − d^n − k·ḋ`, the
//! one-step safe action constraint built from it, and its ζ-gradients.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_BOUNDS: (f64, f64) = (0.5, 4.0);
pub const K_BOUNDS: (f64, f64) = (0.0, 5.0);
pub const SIGMA_BOUNDS: (f64, f64) = (0.0, 2.0);

/// Distance to the hazard and its rate of change.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinematicPair {
    pub d: f64,
    pub d_dot: f64,
}

impl KinematicPair {
    pub const fn new(d: f64, d_dot: f64) -> Self {
        Self { d, d_dot }
    }
}

/// Tunable certificate parameters ζ = (σ, n, k) plus the fixed slack and radius.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyIndexParams {
    pub sigma: f64,
    pub n: f64,
    pub k: f64,
    #[serde(default)]
    pub eta_d: f64,
    pub d_min: f64,
}

impl SafetyIndexParams {
    pub fn new(sigma: f64, n: f64, k: f64, d_min: f64) -> Self {
        Self {
            sigma,
            n,
            k,
            eta_d: 0.0,
            d_min,
        }
    }

    pub fn with_eta(mut self, eta_d: f64) -> Self {
        self.eta_d = eta_d;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.sigma, self.n, self.k, self.eta_d, self.d_min];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("safety index parameters must be finite".into()));
        }
        if self.d_min <= 0.0 || self.eta_d < 0.0 {
            return Err(Error::Config(
                "safety index needs d_min > 0 and eta_d >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.sigma, self.n, self.k]
    }

    /// Applies a step `ζ - delta` to (σ, n, k), then projects onto the box.
    pub fn offset(&self, delta: [f64; 3]) -> Self {
        project_params(Self {
            sigma: self.sigma - delta[0],
            n: self.n - delta[1],
            k: self.k - delta[2],
            ..*self
        })
    }
}

/// Named parameter sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexPreset {
    /// `d_min − d`: the raw safety specification.
    #[serde(rename = "phi0")]
    Phi0,
    /// Hand-tuned `(σ, n, k) = (0.3, 2, 1)`.
    PhiH,
    /// Verified-feasible `(σ, n, k) = (0.04, 2, 1)`.
    PhiF,
    /// Parameters recovered from a checkpoint.
    Learned,
}

impl IndexPreset {
    /// Fixed parameters for the closed-form presets; `None` for `Learned`.
    pub fn params(self, d_min: f64) -> Option<SafetyIndexParams> {
        match self {
            Self::Phi0 => Some(SafetyIndexParams::new(0.0, 1.0, 0.0, d_min)),
            Self::PhiH => Some(SafetyIndexParams::new(0.3, 2.0, 1.0, d_min)),
            Self::PhiF => Some(SafetyIndexParams::new(0.04, 2.0, 1.0, d_min)),
            Self::Learned => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Phi0 => "phi0",
            Self::PhiH => "phi_h",
            Self::PhiF => "phi_f",
            Self::Learned => "learned",
        }
    }
}

impl fmt::Display for IndexPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IndexPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phi0" => Ok(Self::Phi0),
            "phi_h" => Ok(Self::PhiH),
            "phi_f" => Ok(Self::PhiF),
            "learned" => Ok(Self::Learned),
            other => Err(Error::Config(format!(
                "unknown safety index `{other}` (expected phi0, phi_h, phi_f or learned)"
            ))),
        }
    }
}

fn check_distance(d: f64) -> Result<()> {
    if d > 0.0 && d.is_finite() {
        Ok(())
    } else {
        Err(Error::Degenerate(format!(
            "safety index needs a positive distance, got {d}"
        )))
    }
}

pub fn phi(zeta: &SafetyIndexParams, kp: KinematicPair) -> Result<f64> {
    check_distance(kp.d)?;
    Ok(zeta.sigma + zeta.d_min.powf(zeta.n) - kp.d.powf(zeta.n) - zeta.k * kp.d_dot)
}

pub fn phi0(d: f64, d_min: f64) -> f64 {
    d_min - d
}

/// `Δφ = φ(s') − max{φ(s) − η_D, 0}`; the constraint holds iff `Δφ < 0`.
pub fn delta_phi(zeta: &SafetyIndexParams, kp: KinematicPair, kp_next: KinematicPair) -> Result<f64> {
    let now = phi(zeta, kp)?;
    let next = phi(zeta, kp_next)?;
    Ok(next - (now - zeta.eta_d).max(0.0))
}

/// Violation predicate matching the strict safe action constraint.
#[inline]
pub fn violates(delta: f64) -> bool {
    delta >= 0.0
}

/// Mean positive part of `Δφ` over a batch of transitions.
pub fn sis_loss(
    batch: &[(KinematicPair, KinematicPair)],
    zeta: &SafetyIndexParams,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Usage("safety index loss over an empty batch".into()));
    }
    let mut total = 0.0;
    for &(kp, kp_next) in batch {
        total += delta_phi(zeta, kp, kp_next)?.max(0.0);
    }
    Ok(total / batch.len() as f64)
}

/// Partial derivatives of a scalar with respect to (σ, n, k).
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ZetaGrad {
    pub sigma: f64,
    pub n: f64,
    pub k: f64,
}

impl ZetaGrad {
    pub fn as_array(&self) -> [f64; 3] {
        [self.sigma, self.n, self.k]
    }

    pub fn scaled(self, s: f64) -> Self {
        Self {
            sigma: self.sigma * s,
            n: self.n * s,
            k: self.k * s,
        }
    }

    pub fn add(self, o: Self) -> Self {
        Self {
            sigma: self.sigma + o.sigma,
            n: self.n + o.n,
            k: self.k + o.k,
        }
    }
}

pub fn grad_phi(zeta: &SafetyIndexParams, kp: KinematicPair) -> Result<ZetaGrad> {
    check_distance(kp.d)?;
    Ok(ZetaGrad {
        sigma: 1.0,
        n: zeta.d_min.powf(zeta.n) * zeta.d_min.ln() - kp.d.powf(zeta.n) * kp.d.ln(),
        k: -kp.d_dot,
    })
}

/// ∇_ζ Δφ. When `φ(s) − η_D > 0` both energies contribute; otherwise only
/// `φ(s')` does. The tie `φ(s) = η_D` takes the second branch.
pub fn grad_delta_phi(
    zeta: &SafetyIndexParams,
    kp: KinematicPair,
    kp_next: KinematicPair,
) -> Result<ZetaGrad> {
    let next = grad_phi(zeta, kp_next)?;
    if phi(zeta, kp)? - zeta.eta_d > 0.0 {
        let now = grad_phi(zeta, kp)?;
        Ok(next.add(now.scaled(-1.0)))
    } else {
        Ok(next)
    }
}

/// Clamps (σ, n, k) into their admissible box.
pub fn project_params(zeta: SafetyIndexParams) -> SafetyIndexParams {
    SafetyIndexParams {
        sigma: zeta.sigma.clamp(SIGMA_BOUNDS.0, SIGMA_BOUNDS.1),
        n: zeta.n.clamp(N_BOUNDS.0, N_BOUNDS.1),
        k: zeta.k.clamp(K_BOUNDS.0, K_BOUNDS.1),
        ..zeta
    }
}
