use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::LrSchedule;
use super::updates::MultiplierFloors;

/// Learning-rate schedules, indexed by gradient step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRates {
    pub actor: LrSchedule,
    pub critic: LrSchedule,
    pub multiplier: LrSchedule,
    pub alpha: LrSchedule,
    pub sis: LrSchedule,
}

impl Default for LearningRates {
    // The step bound applies to the whole displacement vector, so these are
    // per-step displacement budgets rather than per-coordinate Adam rates.
    fn default() -> Self {
        Self {
            actor: LrSchedule::new(2e-2, 2e-3, 200_000),
            critic: LrSchedule::new(3e-2, 3e-3, 200_000),
            multiplier: LrSchedule::new(1e-2, 1e-3, 200_000),
            alpha: LrSchedule::new(3e-3, 3e-4, 200_000),
            sis: LrSchedule::new(1e-4, 1e-5, 200_000),
        }
    }
}

impl LearningRates {
    pub fn validate(&self) -> Result<()> {
        self.actor.validate("trainer.lr.actor")?;
        self.critic.validate("trainer.lr.critic")?;
        self.multiplier.validate("trainer.lr.multiplier")?;
        self.alpha.validate("trainer.lr.alpha")?;
        self.sis.validate("trainer.lr.sis")?;
        // All schedules are piecewise linear, so checking every breakpoint
        // checks every step.
        let mut points = vec![0u64];
        for s in [&self.actor, &self.multiplier, &self.sis] {
            points.push(s.steps);
        }
        for &t in &points {
            let (a, m, z) = (self.actor.at(t), self.multiplier.at(t), self.sis.at(t));
            if !(z <= m && m <= a) {
                return Err(Error::Config(format!(
                    "learning rates must satisfy sis <= multiplier <= actor at every step; \
                     at step {t}: sis {z}, multiplier {m}, actor {a}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub policy_interval: u64,
    pub multiplier_interval: u64,
    pub sis_interval: u64,
    pub tau: f64,
    pub lambda_max: f64,
    pub constraint_margin: f64,
    pub multiplier_floors: MultiplierFloors,
    pub target_entropy: f64,
    pub init_alpha: f64,
    pub buffer_capacity: usize,
    pub warmup_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub total_steps: u64,
    pub sis_enabled: bool,
    pub lr: LearningRates,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            batch_size: 128,
            policy_interval: 3,
            multiplier_interval: 12,
            sis_interval: 24,
            tau: 0.005,
            lambda_max: 100.0,
            constraint_margin: 0.0,
            multiplier_floors: MultiplierFloors {
                q: Some(-0.01),
                pre: Some(-4.0),
            },
            target_entropy: -2.0,
            init_alpha: 0.1,
            buffer_capacity: 100_000,
            warmup_steps: 1000,
            eval_interval: 2000,
            eval_episodes: 10,
            total_steps: 200_000,
            sis_enabled: true,
            lr: LearningRates::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("trainer.{m}")));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(1 <= self.policy_interval
            && self.policy_interval < self.multiplier_interval
            && self.multiplier_interval < self.sis_interval)
        {
            return bad("intervals must satisfy 1 <= policy < multiplier < sis");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.lambda_max >= 0.0 && self.lambda_max.is_finite()) {
            return bad("lambda_max must be finite and >= 0");
        }
        if !self.constraint_margin.is_finite() || !self.target_entropy.is_finite() {
            return bad("constraint_margin and target_entropy must be finite");
        }
        let MultiplierFloors { q, pre } = self.multiplier_floors;
        if q.is_some_and(|f| !(f.is_finite() && f <= 0.0)) || pre.is_some_and(|f| !f.is_finite()) {
            return bad("multiplier_floors must be finite, with q <= 0");
        }
        if !(self.init_alpha > 0.0 && self.init_alpha.is_finite()) {
            return bad("init_alpha must be > 0");
        }
        if self.buffer_capacity < self.batch_size {
            return bad("buffer_capacity must be >= batch_size");
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return bad("eval_interval and eval_episodes must be >= 1");
        }
        self.lr.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainerConfig::default().validate().unwrap();
    }

    #[test]
    fn interval_ordering_enforced() {
        let c = TrainerConfig {
            multiplier_interval: 30,
            ..TrainerConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn lr_ordering_enforced() {
        let mut c = TrainerConfig::default();
        c.lr.sis = LrSchedule::new(8e-6, 1e-6, 200_000);
        c.lr.multiplier = LrSchedule::constant(5e-6);
        c.lr.actor = LrSchedule::new(3e-5, 1e-6, 200_000);
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("sis <= multiplier"), "{err}");
    }

    #[test]
    fn toml_roundtrip_and_unknown_keys() {
        let c = TrainerConfig::default();
        let s = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<TrainerConfig>(&s).unwrap(), c);
        assert!(toml::from_str::<TrainerConfig>("gama = 0.9").is_err());
        let partial: TrainerConfig = toml::from_str("batch_size = 64").unwrap();
        assert_eq!(partial.batch_size, 64);
        assert_eq!(partial.gamma, 0.99);
    }
}
