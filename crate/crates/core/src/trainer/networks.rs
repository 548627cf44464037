use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::nn::{AdamState, GaussianHeadOutput, Mlp, MlpSpec, ParamVector, SquashedSample};

/// Hidden layer widths shared by every network in the bundle.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("networks.hidden widths must be >= 1".into()));
        }
        Ok(())
    }
}

/// Bounded multiplier `λ = min(softplus(o), λ_max)` and `dλ/do`.
#[inline]
pub fn lambda_activation(pre: f64, lambda_max: f64) -> (f64, f64) {
    let sp = crate::nn::softplus(pre);
    if sp >= lambda_max {
        (lambda_max, 0.0)
    } else {
        (sp, sigmoid(pre))
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Policy θ, twin reward critics w₁/w₂ with targets, constraint critic,
/// multiplier network ξ and the entropy temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkBundle {
    pub policy_net: Mlp,
    pub critic_net: Mlp,
    pub multiplier_net: Mlp,
    pub policy: ParamVector,
    pub q1: ParamVector,
    pub q2: ParamVector,
    pub q1_target: ParamVector,
    pub q2_target: ParamVector,
    pub q_phi: ParamVector,
    pub multiplier: ParamVector,
    pub log_alpha: f64,
}

impl NetworkBundle {
    pub fn new<R: Rng + ?Sized>(config: &NetworkConfig, init_alpha: f64, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let policy_net = Mlp::new(MlpSpec::new(OBS_DIM, config.hidden.clone(), 2 * ACTION_DIM)?)?;
        let critic_net = Mlp::new(MlpSpec::new(OBS_DIM + ACTION_DIM, config.hidden.clone(), 1)?)?;
        let multiplier_net = Mlp::new(MlpSpec::new(OBS_DIM, config.hidden.clone(), 1)?)?;
        let policy = policy_net.init_params(rng, 0.01);
        let q1 = critic_net.init_params(rng, 1.0);
        let q2 = critic_net.init_params(rng, 1.0);
        let q_phi = critic_net.init_params(rng, 1.0);
        let multiplier = multiplier_net.init_params(rng, 0.01);
        Ok(Self {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            policy_net,
            critic_net,
            multiplier_net,
            policy,
            q1,
            q2,
            q_phi,
            multiplier,
            log_alpha: init_alpha.ln(),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn heads(&self, obs: ArrayView2<f64>) -> Result<Vec<GaussianHeadOutput>> {
        let raw = self.policy_net.predict_batch(&self.policy, obs)?;
        raw.rows()
            .into_iter()
            .map(|r| GaussianHeadOutput::from_raw(r.as_slice().expect("row-major")))
            .collect()
    }

    /// Reparameterised actions for every row of `obs`.
    pub fn sample_actions(
        &self,
        obs: ArrayView2<f64>,
        noise: ArrayView2<f64>,
    ) -> Result<PolicySamples> {
        let heads = self.heads(obs)?;
        let mut actions = Array2::zeros((heads.len(), ACTION_DIM));
        let mut log_prob = Array1::zeros(heads.len());
        let mut samples = Vec::with_capacity(heads.len());
        for (i, head) in heads.iter().enumerate() {
            let s = head.sample(noise.row(i).as_slice().expect("row-major"))?;
            for j in 0..ACTION_DIM {
                actions[[i, j]] = s.action[j];
            }
            log_prob[i] = s.log_prob;
            samples.push(s);
        }
        Ok(PolicySamples {
            heads,
            samples,
            actions,
            log_prob,
        })
    }

    /// Deterministic evaluation action `tanh(mean)`.
    pub fn greedy_action(&self, obs: &[f64]) -> Result<[f64; ACTION_DIM]> {
        let raw = self.policy_net.forward(&self.policy, obs)?;
        let mode = GaussianHeadOutput::from_raw(&raw)?.mode();
        Ok([mode[0], mode[1]])
    }

    pub fn critic(&self, params: &ParamVector, obs: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>> {
        let input = critic_input(obs, actions);
        let out = self.critic_net.predict_batch(params, input.view())?;
        Ok(out.column(0).to_owned())
    }

    /// `λ_ξ(s)` for every row of `obs`, with `dλ/do` at each pre-activation.
    pub fn lambdas(&self, obs: ArrayView2<f64>, lambda_max: f64) -> Result<(Array1<f64>, Array1<f64>)> {
        let pre = self.multiplier_net.predict_batch(&self.multiplier, obs)?;
        let mut lam = Array1::zeros(pre.nrows());
        let mut slope = Array1::zeros(pre.nrows());
        for (i, &o) in pre.column(0).iter().enumerate() {
            let (l, s) = lambda_activation(o, lambda_max);
            lam[i] = l;
            slope[i] = s;
        }
        Ok((lam, slope))
    }
}

pub(crate) fn critic_input(obs: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[obs, actions]).expect("rows agree")
}

pub struct PolicySamples {
    pub heads: Vec<GaussianHeadOutput>,
    pub samples: Vec<SquashedSample>,
    pub actions: Array2<f64>,
    pub log_prob: Array1<f64>,
}

/// One Adam state per trained parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerStates {
    pub policy: AdamState,
    pub q1: AdamState,
    pub q2: AdamState,
    pub q_phi: AdamState,
    pub multiplier: AdamState,
    pub log_alpha: AdamState,
}

impl OptimizerStates {
    pub fn new(nets: &NetworkBundle) -> Self {
        Self {
            policy: AdamState::new(nets.policy.len()),
            q1: AdamState::new(nets.q1.len()),
            q2: AdamState::new(nets.q2.len()),
            q_phi: AdamState::new(nets.q_phi.len()),
            multiplier: AdamState::new(nets.multiplier.len()),
            log_alpha: AdamState::new(1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_is_bounded() {
        for &o in &[-50.0, -1.0, 0.0, 3.0, 200.0] {
            let (l, s) = lambda_activation(o, 10.0);
            assert!((0.0..=10.0).contains(&l));
            assert!(s >= 0.0);
        }
        assert_eq!(lambda_activation(200.0, 10.0), (10.0, 0.0));
        assert_eq!(lambda_activation(0.3, 0.0), (0.0, 0.0));
        assert!((lambda_activation(0.0, 100.0).0 - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
