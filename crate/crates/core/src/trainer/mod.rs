//! Three-timescale Lagrangian soft actor-critic with certificate synthesis.

mod buffer;
mod config;
mod lemma2;
mod networks;
pub mod updates;

pub use buffer::{Batch, ReplayBuffer, Transition};
pub use config::{LearningRates, TrainerConfig};
pub use lemma2::lemma2_fixture_check;
pub use networks::{lambda_activation, NetworkBundle, NetworkConfig, OptimizerStates, PolicySamples};

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{distance_features, Action, EnvState, PointEnv, ACTION_DIM};
use crate::error::{Error, Result};
use crate::nn::StepInfo;
use crate::safety_index::{delta_phi, phi, violates, SafetyIndexParams};

/// Consecutive rejected gradient steps tolerated before training aborts.
const MAX_REJECTED: u32 = 10;

const EVAL_STREAM: u64 = 1;

/// Monotone counters of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub env_steps: u64,
    pub grad_steps: u64,
    pub policy_updates: u64,
    pub multiplier_updates: u64,
    pub sis_updates: u64,
    pub episodes: u64,
    pub rejected_steps: u64,
}

/// Parameter groups subject to the clipped-step contract.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Q1,
    Q2,
    QPhi,
    LogAlpha,
    Policy,
    Multiplier,
    Zeta,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuditEntry {
    pub grad_step: u64,
    pub group: Group,
    pub rate: f64,
    pub step: StepInfo,
}

/// Latest scalar diagnostics from the update rules.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub q1: f64,
    pub q2: f64,
    pub q_phi: f64,
    pub policy: f64,
    pub multiplier: f64,
    pub entropy: f64,
}

/// One periodic evaluation, serialized as one JSON line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub env_step: u64,
    pub grad_step: u64,
    pub return_mean: f64,
    pub return_std: f64,
    pub cost_sum: u64,
    pub violation_mean: f64,
    pub episode_costs: Vec<u64>,
    pub episode_violations: Vec<u64>,
    pub sigma: f64,
    pub n: f64,
    pub k: f64,
    pub lambda_mean: f64,
    /// Mean λ over visited states with positive energy `φ(s) > 0`.
    pub lambda_hot: f64,
    pub alpha: f64,
    pub losses: Losses,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EvalRecord>,
}

impl TrainingLog {
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    /// Per-episode (cost, violation) pairs of the last `n` evaluation episodes.
    pub fn final_episodes(&self, n: usize) -> Vec<(u64, u64)> {
        let all: Vec<(u64, u64)> = self
            .records
            .iter()
            .flat_map(|r| r.episode_costs.iter().copied().zip(r.episode_violations.iter().copied()))
            .collect();
        all[all.len().saturating_sub(n)..].to_vec()
    }
}

/// Saved RNG position; restoring it reproduces the stream exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

fn normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, ACTION_DIM), |_| StandardNormal.sample(rng))
}

pub struct Trainer {
    pub config: TrainerConfig,
    pub env: PointEnv,
    pub nets: NetworkBundle,
    pub opt: OptimizerStates,
    pub zeta: SafetyIndexParams,
    pub buffer: ReplayBuffer,
    pub counters: Counters,
    pub losses: Losses,
    pub seed: u64,
    rng: ChaCha8Rng,
    eval_rng: ChaCha8Rng,
    state: EnvState,
    rejected_streak: u32,
    audit: Option<Vec<AuditEntry>>,
}

impl Trainer {
    pub fn new(
        config: TrainerConfig,
        env: PointEnv,
        networks: &NetworkConfig,
        zeta: SafetyIndexParams,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        zeta.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut eval_rng = ChaCha8Rng::seed_from_u64(seed);
        eval_rng.set_stream(EVAL_STREAM);
        let nets = NetworkBundle::new(networks, config.init_alpha, &mut rng)?;
        let opt = OptimizerStates::new(&nets);
        let buffer = ReplayBuffer::new(config.buffer_capacity)?;
        let state = env.reset(&mut rng);
        Ok(Self {
            config,
            env,
            nets,
            opt,
            zeta,
            buffer,
            counters: Counters::default(),
            losses: Losses::default(),
            seed,
            rng,
            eval_rng,
            state,
            rejected_streak: 0,
            audit: None,
        })
    }

    /// Starts recording every parameter displacement.
    pub fn enable_audit(&mut self) {
        self.audit = Some(Vec::new());
    }

    pub fn audit(&self) -> &[AuditEntry] {
        self.audit.as_deref().unwrap_or(&[])
    }

    pub fn rng_states(&self) -> (RngState, RngState) {
        (RngState::capture(&self.rng), RngState::capture(&self.eval_rng))
    }

    /// Rebuilds a trainer around restored learned state. The replay buffer
    /// starts empty and the environment restarts from a fresh episode.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        config: TrainerConfig,
        env: PointEnv,
        nets: NetworkBundle,
        opt: OptimizerStates,
        zeta: SafetyIndexParams,
        counters: Counters,
        seed: u64,
        rngs: (RngState, RngState),
    ) -> Result<Self> {
        config.validate()?;
        let buffer = ReplayBuffer::new(config.buffer_capacity)?;
        let mut rng = rngs.0.restore();
        let state = env.reset(&mut rng);
        Ok(Self {
            config,
            env,
            nets,
            opt,
            zeta,
            buffer,
            counters,
            losses: Losses::default(),
            seed,
            rng,
            eval_rng: rngs.1.restore(),
            state,
            rejected_streak: 0,
            audit: None,
        })
    }

    /// Takes one environment step (random during warmup, π_θ afterwards) and
    /// stores the enriched transition.
    pub fn collect_step(&mut self) -> Result<Transition> {
        let obs = self.env.observe(&self.state);
        let action = if self.counters.env_steps < self.config.warmup_steps {
            [self.rng.random_range(-1.0..=1.0), self.rng.random_range(-1.0..=1.0)]
        } else {
            let noise = normal_matrix(&mut self.rng, 1);
            let obs_m = Array2::from_shape_vec((1, obs.len()), obs.to_vec()).expect("shape");
            let s = self.nets.sample_actions(obs_m.view(), noise.view())?;
            [s.actions[[0, 0]], s.actions[[0, 1]]]
        };
        let kin = distance_features(&self.state).pair();
        let (next, res) = self.env.step(&self.state, Action::from_slice(&action))?;
        let t = Transition {
            obs,
            action,
            reward: res.reward,
            next_obs: res.observation,
            done: res.done,
            kin,
            kin_next: res.kinematics,
        };
        self.buffer.push(t.clone());
        self.counters.env_steps += 1;
        self.state = if res.done {
            self.counters.episodes += 1;
            self.env.reset(&mut self.rng)
        } else {
            next
        };
        Ok(t)
    }

    fn record(&mut self, group: Group, rate: f64, step: StepInfo) {
        if let Some(a) = self.audit.as_mut() {
            a.push(AuditEntry {
                grad_step: self.counters.grad_steps,
                group,
                rate,
                step,
            });
        }
    }

    /// One gradient step `k`: critics and temperature always; θ, ξ and ζ on
    /// their intervals. A numerical failure rejects the remainder of the step.
    pub fn gradient_step(&mut self) -> Result<()> {
        match self.try_gradient_step() {
            Ok(()) => {
                self.rejected_streak = 0;
                Ok(())
            }
            Err(Error::Numerical(msg)) => {
                self.counters.rejected_steps += 1;
                self.rejected_streak += 1;
                if self.rejected_streak >= MAX_REJECTED {
                    Err(Error::Numerical(format!(
                        "{MAX_REJECTED} consecutive rejected gradient steps, last at step {}: {msg}; \
                         zeta = ({}, {}, {}), log_alpha = {}",
                        self.counters.grad_steps,
                        self.zeta.sigma,
                        self.zeta.n,
                        self.zeta.k,
                        self.nets.log_alpha
                    )))
                } else {
                    Ok(())
                }
            }
            Err(e) => Err(e),
        }
    }

    fn try_gradient_step(&mut self) -> Result<()> {
        let cfg = self.config.clone();
        self.counters.grad_steps += 1;
        let k = self.counters.grad_steps;
        let t = k - 1;
        let batch = self.buffer.sample(&mut self.rng, cfg.batch_size)?;
        let n = batch.len();

        let critic_lr = cfg.lr.critic.at(t);
        let next_noise = normal_matrix(&mut self.rng, n);
        let r = updates::update_reward_critics(
            &mut self.nets,
            &mut self.opt,
            &batch,
            next_noise.view(),
            cfg.gamma,
            cfg.tau,
            critic_lr,
        )?;
        self.losses.q1 = r.q1_loss;
        self.losses.q2 = r.q2_loss;
        self.record(Group::Q1, critic_lr, r.q1_step);
        self.record(Group::Q2, critic_lr, r.q2_step);

        let (lphi, info) =
            updates::update_constraint_critic(&mut self.nets, &mut self.opt, &batch, &self.zeta, critic_lr)?;
        self.losses.q_phi = lphi;
        self.record(Group::QPhi, critic_lr, info);

        let alpha_lr = cfg.lr.alpha.at(t);
        let noise = normal_matrix(&mut self.rng, n);
        let (entropy, info) = updates::update_temperature(
            &mut self.nets,
            &mut self.opt,
            batch.obs.view(),
            noise.view(),
            cfg.target_entropy,
            alpha_lr,
        )?;
        self.losses.entropy = entropy;
        self.record(Group::LogAlpha, alpha_lr, info);

        if k % cfg.policy_interval == 0 {
            let lr = cfg.lr.actor.at(t);
            let noise = normal_matrix(&mut self.rng, n);
            let (pg, info) = updates::update_policy(
                &mut self.nets,
                &mut self.opt,
                batch.obs.view(),
                noise.view(),
                cfg.lambda_max,
                lr,
            )?;
            self.losses.policy = pg.loss;
            self.counters.policy_updates += 1;
            self.record(Group::Policy, lr, info);
        }
        if k % cfg.multiplier_interval == 0 {
            let lr = cfg.lr.multiplier.at(t);
            let noise = normal_matrix(&mut self.rng, n);
            let (mg, info) = updates::update_multiplier(
                &mut self.nets,
                &mut self.opt,
                batch.obs.view(),
                noise.view(),
                cfg.lambda_max,
                cfg.constraint_margin,
                cfg.multiplier_floors,
                lr,
            )?;
            self.losses.multiplier = mg.objective;
            self.counters.multiplier_updates += 1;
            self.record(Group::Multiplier, lr, info);
        }
        if cfg.sis_enabled && k % cfg.sis_interval == 0 {
            let lr = cfg.lr.sis.at(t);
            let (g, _skipped) = updates::sis_gradient(&self.nets, &batch, &self.zeta, cfg.lambda_max)?;
            let (next, info) = updates::clipped_sis_step(&self.zeta, g, lr)?;
            self.zeta = next;
            self.counters.sis_updates += 1;
            self.record(Group::Zeta, lr, info);
        }
        Ok(())
    }

    /// Greedy evaluation episodes on the dedicated evaluation stream.
    pub fn evaluate(&mut self) -> Result<EvalRecord> {
        let episodes = self.config.eval_episodes;
        let mut returns = Vec::with_capacity(episodes);
        let mut costs = Vec::with_capacity(episodes);
        let mut violations = Vec::with_capacity(episodes);
        let mut lambda_sum = 0.0;
        let mut lambda_count = 0usize;
        let (mut hot_sum, mut hot_count) = (0.0, 0usize);
        for _ in 0..episodes {
            let mut s = self.env.reset(&mut self.eval_rng);
            let (mut ret, mut cost, mut viol) = (0.0, 0u64, 0u64);
            let mut visited = Vec::with_capacity(self.env.config().max_steps as usize);
            let mut hot = Vec::new();
            loop {
                let obs = self.env.observe(&s);
                visited.extend_from_slice(&obs);
                hot.push(phi(&self.zeta, distance_features(&s).pair()).is_ok_and(|p| p > 0.0));
                let a = self.nets.greedy_action(&obs)?;
                let kin = distance_features(&s).pair();
                let (next, res) = self.env.step(&s, Action::from_slice(&a))?;
                ret += res.reward;
                cost += res.cost as u64;
                if let Ok(dp) = delta_phi(&self.zeta, kin, res.kinematics) {
                    viol += violates(dp) as u64;
                }
                s = next;
                if res.done {
                    break;
                }
            }
            let rows = visited.len() / crate::env::OBS_DIM;
            let obs_m = Array2::from_shape_vec((rows, crate::env::OBS_DIM), visited).expect("shape");
            let (lam, _) = self.nets.lambdas(obs_m.view(), self.config.lambda_max)?;
            lambda_sum += lam.sum();
            lambda_count += rows;
            for (l, h) in lam.iter().zip(&hot) {
                if *h {
                    hot_sum += l;
                    hot_count += 1;
                }
            }
            returns.push(ret);
            costs.push(cost);
            violations.push(viol);
        }
        let r = ArrayView1::from(&returns);
        Ok(EvalRecord {
            env_step: self.counters.env_steps,
            grad_step: self.counters.grad_steps,
            return_mean: r.mean().unwrap_or(0.0),
            return_std: r.std(0.0),
            cost_sum: costs.iter().sum(),
            violation_mean: violations.iter().sum::<u64>() as f64 / episodes as f64,
            episode_costs: costs,
            episode_violations: violations,
            sigma: self.zeta.sigma,
            n: self.zeta.n,
            k: self.zeta.k,
            lambda_mean: lambda_sum / lambda_count.max(1) as f64,
            lambda_hot: hot_sum / hot_count.max(1) as f64,
            alpha: self.nets.alpha(),
            losses: self.losses,
        })
    }

    /// Runs until `total_steps` environment steps, calling `on_eval` after
    /// every periodic evaluation.
    pub fn train_with<F: FnMut(&EvalRecord)>(&mut self, total_steps: u64, mut on_eval: F) -> Result<TrainingLog> {
        let mut log = TrainingLog::default();
        while self.counters.env_steps < total_steps {
            self.collect_step()?;
            if self.counters.env_steps > self.config.warmup_steps
                && self.buffer.len() >= self.config.batch_size
            {
                self.gradient_step()?;
            }
            if self.counters.env_steps % self.config.eval_interval == 0 {
                let rec = self.evaluate()?;
                on_eval(&rec);
                log.records.push(rec);
            }
        }
        Ok(log)
    }

    pub fn train(&mut self, total_steps: u64) -> Result<TrainingLog> {
        self.train_with(total_steps, |_| {})
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::safety_index::IndexPreset;

    fn small(seed: u64) -> Trainer {
        let cfg = TrainerConfig {
            batch_size: 16,
            buffer_capacity: 500,
            warmup_steps: 50,
            eval_interval: 100,
            eval_episodes: 2,
            ..TrainerConfig::default()
        };
        let env = PointEnv::new(EnvConfig::default()).unwrap();
        let zeta = IndexPreset::PhiH.params(0.5).unwrap();
        Trainer::new(cfg, env, &NetworkConfig { hidden: vec![8, 8] }, zeta, seed).unwrap()
    }

    #[test]
    fn collect_grows_buffer_and_is_deterministic() {
        let mut a = small(3);
        let mut b = small(3);
        for i in 0..130 {
            let ta = a.collect_step().unwrap();
            let tb = b.collect_step().unwrap();
            assert_eq!(ta, tb);
            assert_eq!(a.buffer.len(), i + 1);
        }
        assert_eq!(a.counters.episodes, 1);
    }

    #[test]
    fn interval_arithmetic() {
        let mut t = small(4);
        for _ in 0..60 {
            t.collect_step().unwrap();
        }
        for _ in 0..24 {
            t.gradient_step().unwrap();
        }
        assert_eq!(t.counters.grad_steps, 24);
        assert_eq!(t.counters.policy_updates, 8);
        assert_eq!(t.counters.multiplier_updates, 2);
        assert_eq!(t.counters.sis_updates, 1);
    }

    #[test]
    fn sis_disabled_freezes_zeta() {
        let mut t = small(5);
        t.config.sis_enabled = false;
        let z = t.zeta;
        t.train(300).unwrap();
        assert_eq!(t.zeta, z);
        assert_eq!(t.counters.sis_updates, 0);
    }

    #[test]
    fn same_seed_same_log() {
        let la = small(6).train(300).unwrap().to_json_lines();
        let lb = small(6).train(300).unwrap().to_json_lines();
        assert_eq!(la, lb);
        assert_eq!(la.lines().count(), 3);
        assert_ne!(la, small(7).train(300).unwrap().to_json_lines());
    }

    #[test]
    fn rng_state_roundtrip() {
        let mut r = ChaCha8Rng::seed_from_u64(9);
        r.set_stream(4);
        let _: u64 = r.random();
        let mut copy = RngState::capture(&r).restore();
        assert_eq!(r.random::<u64>(), copy.random::<u64>());
    }
}
