//! The individual gradient steps of one training iteration.
//!
//! Each function takes its noise explicitly so a frozen batch plus frozen
//! noise gives a reproducible gradient. Gradient flow is cut between groups:
//! the policy step treats λ and every critic as constants, the multiplier
//! step treats Q_φ as constant, and the certificate step treats λ as constant.

use ndarray::{s, Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::buffer::Batch;
use super::networks::{critic_input, sigmoid, NetworkBundle, OptimizerStates};
use crate::env::{ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::nn::{adam_clipped_step, polyak_update, squashed_gaussian_grads, ParamVector, StepInfo};
use crate::safety_index::{delta_phi, grad_delta_phi, project_params, SafetyIndexParams, ZetaGrad};

/// Soft Bellman target `r + γ(1 − done)(min Q̄(s', a') − α log π(a'|s'))`.
#[inline]
pub fn soft_bellman_target(
    reward: f64,
    gamma: f64,
    done: f64,
    min_q_next: f64,
    alpha: f64,
    log_prob_next: f64,
) -> f64 {
    reward + gamma * (1.0 - done) * (min_q_next - alpha * log_prob_next)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticReport {
    pub q1_loss: f64,
    pub q2_loss: f64,
    pub q1_step: StepInfo,
    pub q2_step: StepInfo,
}

fn ensure_finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("{what} is not finite")))
    }
}

/// Squared-error regression of the critic `params` onto `targets`; rows with
/// zero weight are ignored.
fn regress_critic(
    nets: &NetworkBundle,
    params: &mut ParamVector,
    state: &mut crate::nn::AdamState,
    input: ArrayView2<f64>,
    targets: &Array1<f64>,
    weights: Option<&Array1<f64>>,
    lr: f64,
) -> Result<(f64, StepInfo)> {
    let (out, cache) = nets.critic_net.forward_batch(params, input)?;
    let n = match weights {
        Some(w) => w.sum(),
        None => targets.len() as f64,
    };
    if n == 0.0 {
        return Err(Error::Usage("critic regression with no usable rows".into()));
    }
    let mut upstream = Array2::zeros((targets.len(), 1));
    let mut loss = 0.0;
    for i in 0..targets.len() {
        let w = weights.map_or(1.0, |w| w[i]);
        let err = out[[i, 0]] - targets[i];
        loss += w * err * err;
        upstream[[i, 0]] = 2.0 * w * err / n;
    }
    let loss = ensure_finite("critic loss", loss / n)?;
    let (grads, _) = nets.critic_net.backward_batch(params, &cache, upstream.view())?;
    let info = adam_clipped_step(params, &grads, state, lr)?;
    Ok((loss, info))
}

/// Twin soft Q-learning step followed by Polyak averaging of both targets.
#[allow(clippy::too_many_arguments)]
pub fn update_reward_critics(
    nets: &mut NetworkBundle,
    opt: &mut OptimizerStates,
    batch: &Batch,
    next_noise: ArrayView2<f64>,
    gamma: f64,
    tau: f64,
    lr: f64,
) -> Result<CriticReport> {
    let next = nets.sample_actions(batch.next_obs.view(), next_noise)?;
    let q1n = nets.critic(&nets.q1_target, batch.next_obs.view(), next.actions.view())?;
    let q2n = nets.critic(&nets.q2_target, batch.next_obs.view(), next.actions.view())?;
    let alpha = nets.alpha();
    let targets = Array1::from_shape_fn(batch.len(), |i| {
        soft_bellman_target(
            batch.rewards[i],
            gamma,
            batch.done[i],
            q1n[i].min(q2n[i]),
            alpha,
            next.log_prob[i],
        )
    });
    let input = critic_input(batch.obs.view(), batch.actions.view());

    let mut q1 = std::mem::take(&mut nets.q1);
    let r1 = regress_critic(nets, &mut q1, &mut opt.q1, input.view(), &targets, None, lr);
    nets.q1 = q1;
    let (q1_loss, q1_step) = r1?;

    let mut q2 = std::mem::take(&mut nets.q2);
    let r2 = regress_critic(nets, &mut q2, &mut opt.q2, input.view(), &targets, None, lr);
    nets.q2 = q2;
    let (q2_loss, q2_step) = r2?;

    polyak_update(&mut nets.q1_target, &nets.q1, tau)?;
    polyak_update(&mut nets.q2_target, &nets.q2, tau)?;
    Ok(CriticReport {
        q1_loss,
        q2_loss,
        q1_step,
        q2_step,
    })
}

/// Δφ under the current ζ for every row; degenerate rows get weight 0.
pub fn constraint_targets(batch: &Batch, zeta: &SafetyIndexParams) -> (Array1<f64>, Array1<f64>) {
    let mut z = Array1::zeros(batch.len());
    let mut w = Array1::zeros(batch.len());
    for i in 0..batch.len() {
        if let Ok(v) = delta_phi(zeta, batch.kin[i], batch.kin_next[i]) {
            z[i] = v;
            w[i] = 1.0;
        }
    }
    (z, w)
}

/// One regression step of Q_φ onto the one-step Δφ (no bootstrapping).
pub fn update_constraint_critic(
    nets: &mut NetworkBundle,
    opt: &mut OptimizerStates,
    batch: &Batch,
    zeta: &SafetyIndexParams,
    lr: f64,
) -> Result<(f64, StepInfo)> {
    let (targets, weights) = constraint_targets(batch, zeta);
    let input = critic_input(batch.obs.view(), batch.actions.view());
    let mut q_phi = std::mem::take(&mut nets.q_phi);
    let r = regress_critic(
        nets,
        &mut q_phi,
        &mut opt.q_phi,
        input.view(),
        &targets,
        Some(&weights),
        lr,
    );
    nets.q_phi = q_phi;
    r
}

/// Per-row `∂Q/∂a` of a critic.
fn action_gradient(
    nets: &NetworkBundle,
    params: &ParamVector,
    obs: ArrayView2<f64>,
    actions: ArrayView2<f64>,
) -> Result<(Array1<f64>, Array2<f64>)> {
    let input = critic_input(obs, actions);
    let (out, cache) = nets.critic_net.forward_batch(params, input.view())?;
    let ones = Array2::ones((obs.nrows(), 1));
    let dx = nets
        .critic_net
        .input_gradient_batch(params, &cache, ones.view())?;
    Ok((
        out.column(0).to_owned(),
        dx.slice(s![.., OBS_DIM..OBS_DIM + ACTION_DIM]).to_owned(),
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyGradient {
    pub loss: f64,
    pub grads: ParamVector,
    pub mean_log_prob: f64,
    pub mean_lambda: f64,
}

/// `J_π(θ) = mean(α log π(a|s) − min(Q₁, Q₂)(s, a) + λ_ξ(s) Q_φ(s, a))` with
/// `a = f_θ(ε; s)`, and its reparameterised gradient.
pub fn policy_loss_and_grad(
    nets: &NetworkBundle,
    obs: ArrayView2<f64>,
    noise: ArrayView2<f64>,
    lambda_max: f64,
) -> Result<PolicyGradient> {
    let n = obs.nrows();
    let (raw, cache) = nets.policy_net.forward_batch(&nets.policy, obs)?;
    let mut heads = Vec::with_capacity(n);
    let mut samples = Vec::with_capacity(n);
    let mut actions = Array2::zeros((n, ACTION_DIM));
    for i in 0..n {
        let head = crate::nn::GaussianHeadOutput::from_raw(raw.row(i).as_slice().expect("row-major"))?;
        let s = head.sample(noise.row(i).as_slice().expect("row-major"))?;
        for j in 0..ACTION_DIM {
            actions[[i, j]] = s.action[j];
        }
        heads.push(head);
        samples.push(s);
    }
    let (q1, dq1) = action_gradient(nets, &nets.q1, obs, actions.view())?;
    let (q2, dq2) = action_gradient(nets, &nets.q2, obs, actions.view())?;
    let (qp, dqp) = action_gradient(nets, &nets.q_phi, obs, actions.view())?;
    let (lam, _) = nets.lambdas(obs, lambda_max)?;
    let alpha = nets.alpha();

    let inv_n = 1.0 / n as f64;
    let mut upstream = Array2::zeros((n, 2 * ACTION_DIM));
    let mut loss = 0.0;
    let mut sum_logp = 0.0;
    for i in 0..n {
        let use_first = q1[i] <= q2[i];
        let (qmin, dq) = if use_first { (q1[i], dq1.row(i)) } else { (q2[i], dq2.row(i)) };
        let logp = samples[i].log_prob;
        loss += alpha * logp - qmin + lam[i] * qp[i];
        sum_logp += logp;
        let d_action: Vec<f64> = (0..ACTION_DIM)
            .map(|j| -dq[j] + lam[i] * dqp[[i, j]])
            .collect();
        let hg = squashed_gaussian_grads(
            &heads[i],
            noise.row(i).as_slice().expect("row-major"),
            &samples[i],
            &d_action,
            alpha,
        )?
        .into_raw();
        for (j, g) in hg.into_iter().enumerate() {
            upstream[[i, j]] = g * inv_n;
        }
    }
    let (grads, _) = nets
        .policy_net
        .backward_batch(&nets.policy, &cache, upstream.view())?;
    Ok(PolicyGradient {
        loss: ensure_finite("policy loss", loss * inv_n)?,
        grads,
        mean_log_prob: sum_logp * inv_n,
        mean_lambda: lam.mean().unwrap_or(0.0),
    })
}

pub fn update_policy(
    nets: &mut NetworkBundle,
    opt: &mut OptimizerStates,
    obs: ArrayView2<f64>,
    noise: ArrayView2<f64>,
    lambda_max: f64,
    lr: f64,
) -> Result<(PolicyGradient, StepInfo)> {
    let pg = policy_loss_and_grad(nets, obs, noise, lambda_max)?;
    let info = adam_clipped_step(&mut nets.policy, &pg.grads, &mut opt.policy, lr)?;
    Ok((pg, info))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiplierGradient {
    /// `J_λ(ξ) = mean λ_ξ(s)(Q_φ(s, a) − margin)`.
    pub objective: f64,
    /// Ascent direction `∇_ξ J_λ`.
    pub ascent: ParamVector,
    pub mean_lambda: f64,
}

/// Optional guards on the multiplier ascent: `q` bounds Q_φ from below,
/// `pre` stops descent once the pre-activation reaches it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultiplierFloors {
    pub q: Option<f64>,
    pub pre: Option<f64>,
}

pub fn multiplier_objective_and_grad(
    nets: &NetworkBundle,
    obs: ArrayView2<f64>,
    noise: ArrayView2<f64>,
    lambda_max: f64,
    margin: f64,
    floors: MultiplierFloors,
) -> Result<MultiplierGradient> {
    let n = obs.nrows();
    let pol = nets.sample_actions(obs, noise)?;
    let qp = nets.critic(&nets.q_phi, obs, pol.actions.view())?;
    let (pre, cache) = nets.multiplier_net.forward_batch(&nets.multiplier, obs)?;
    let inv_n = 1.0 / n as f64;
    let mut upstream = Array2::zeros((n, 1));
    let mut objective = 0.0;
    let mut sum_lam = 0.0;
    for i in 0..n {
        let o = pre[[i, 0]];
        let (lam, mut slope) = super::networks::lambda_activation(o, lambda_max);
        let q = floors.q.map_or(qp[i], |f| qp[i].max(f));
        let excess = q - margin;
        if excess < 0.0 && slope == 0.0 {
            // at the cap: descent is still admissible
            slope = sigmoid(o);
        }
        if let Some(f) = floors.pre.filter(|&f| o <= f) {
            // below the floor: no further descent, ascent at the floor's slope
            slope = if excess > 0.0 { sigmoid(f) } else { 0.0 };
        }
        objective += lam * excess;
        sum_lam += lam;
        upstream[[i, 0]] = excess * slope * inv_n;
    }
    let (ascent, _) = nets
        .multiplier_net
        .backward_batch(&nets.multiplier, &cache, upstream.view())?;
    Ok(MultiplierGradient {
        objective: ensure_finite("multiplier objective", objective * inv_n)?,
        ascent,
        mean_lambda: sum_lam * inv_n,
    })
}

/// Clipped Adam ascent on `J_λ`.
pub fn update_multiplier(
    nets: &mut NetworkBundle,
    opt: &mut OptimizerStates,
    obs: ArrayView2<f64>,
    noise: ArrayView2<f64>,
    lambda_max: f64,
    margin: f64,
    floors: MultiplierFloors,
    lr: f64,
) -> Result<(MultiplierGradient, StepInfo)> {
    let mg = multiplier_objective_and_grad(nets, obs, noise, lambda_max, margin, floors)?;
    let descent: Vec<f64> = mg.ascent.iter().map(|g| -g).collect();
    let info = adam_clipped_step(&mut nets.multiplier, &descent, &mut opt.multiplier, lr)?;
    Ok((mg, info))
}

/// `G_ζ = mean λ_ξ(s) ∇_ζ Δφ(s)` over the batch, with the number of rows
/// skipped for degenerate kinematics.
pub fn sis_gradient(
    nets: &NetworkBundle,
    batch: &Batch,
    zeta: &SafetyIndexParams,
    lambda_max: f64,
) -> Result<(ZetaGrad, usize)> {
    let (lam, _) = nets.lambdas(batch.obs.view(), lambda_max)?;
    let mut total = ZetaGrad::default();
    let mut used = 0usize;
    for i in 0..batch.len() {
        match grad_delta_phi(zeta, batch.kin[i], batch.kin_next[i]) {
            Ok(g) => {
                total = total.add(g.scaled(lam[i]));
                used += 1;
            }
            Err(Error::Degenerate(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Ok((ZetaGrad::default(), batch.len()));
    }
    Ok((total.scaled(1.0 / used as f64), batch.len() - used))
}

/// `ζ ← Π(ζ − β̄ G)` with `β̄ = min(β, β/‖G‖)`. The projection can only
/// shorten the step, so the displacement stays bounded by `lr`.
pub fn clipped_sis_step(
    zeta: &SafetyIndexParams,
    grad: ZetaGrad,
    lr: f64,
) -> Result<(SafetyIndexParams, StepInfo)> {
    let g = grad.as_array();
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite certificate gradient".into()));
    }
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let effective_lr = if norm > 1.0 { lr / norm } else { lr };
    let next = project_params(zeta.offset([
        effective_lr * g[0],
        effective_lr * g[1],
        effective_lr * g[2],
    ]));
    let before = zeta.as_array();
    let after = next.as_array();
    let displacement = (0..3)
        .map(|i| (after[i] - before[i]).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok((
        next,
        StepInfo {
            direction_norm: norm,
            effective_lr,
            displacement,
        },
    ))
}

/// `∂/∂ log α` of `−log α · mean(log π + H̄)`.
#[inline]
pub fn temperature_gradient(mean_log_prob: f64, target_entropy: f64) -> f64 {
    -(mean_log_prob + target_entropy)
}

pub fn update_temperature(
    nets: &mut NetworkBundle,
    opt: &mut OptimizerStates,
    obs: ArrayView2<f64>,
    noise: ArrayView2<f64>,
    target_entropy: f64,
    lr: f64,
) -> Result<(f64, StepInfo)> {
    let pol = nets.sample_actions(obs, noise)?;
    let mean_log_prob = pol.log_prob.mean().unwrap_or(0.0);
    let g = temperature_gradient(mean_log_prob, target_entropy);
    let mut p = [nets.log_alpha];
    let info = adam_clipped_step(&mut p, &[g], &mut opt.log_alpha, lr)?;
    nets.log_alpha = p[0];
    Ok((-mean_log_prob, info))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::safety_index::{IndexPreset, KinematicPair};
    use crate::trainer::buffer::Transition;
    use crate::trainer::networks::NetworkConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn nets(seed: u64) -> NetworkBundle {
        let cfg = NetworkConfig { hidden: vec![16, 16] };
        NetworkBundle::new(&cfg, 0.2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn noise(rows: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, ACTION_DIM), |_| StandardNormal.sample(&mut rng))
    }

    fn batch(rows: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rand::Rng::random::<f64>(&mut rng);
        let items: Vec<Transition> = (0..rows)
            .map(|_| {
                let d = u(0.6, 2.5);
                let dd = u(-1.5, 1.5);
                let obs = [u(-1.0, 1.0), u(4.0, 6.5), u(0.5, 1.0), u(-0.5, 0.5), u(0.0, 2.0), d, dd];
                let d2 = d + 0.1 * dd;
                let dd2 = dd + u(-0.2, 0.2);
                let mut next_obs = obs;
                next_obs[5] = d2;
                next_obs[6] = dd2;
                Transition {
                    obs,
                    action: [u(-1.0, 1.0), u(-1.0, 1.0)],
                    reward: u(-2.0, 0.0),
                    next_obs,
                    done: false,
                    kin: KinematicPair::new(d, dd),
                    kin_next: KinematicPair::new(d2, dd2),
                }
            })
            .collect();
        Batch::from_transitions(&items)
    }

    #[test]
    fn bellman_target_examples() {
        let y = soft_bellman_target(1.0, 0.99, 0.0, 2.0, 0.2, -1.0);
        assert!((y - 3.178).abs() < 1e-12);
        assert_eq!(soft_bellman_target(1.0, 0.99, 1.0, 2.0, 0.2, -1.0), 1.0);
    }

    #[test]
    fn critic_loss_descends_on_frozen_batch() {
        let mut n = nets(1);
        let mut opt = OptimizerStates::new(&n);
        let b = batch(64, 2);
        let nz = noise(64, 3);
        // freeze targets by using tau = 1 on a copy: compare successive losses
        // for a fixed regression problem instead
        let input = critic_input(b.obs.view(), b.actions.view());
        let targets = b.rewards.clone();
        let mut losses = Vec::new();
        let mut q1 = n.q1.clone();
        for _ in 0..100 {
            let (l, _) = regress_critic(&n, &mut q1, &mut opt.q1, input.view(), &targets, None, 5e-3).unwrap();
            losses.push(l);
        }
        assert!(losses.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{losses:?}");
        assert!(losses[99] < 0.5 * losses[0]);
        // the full twin update also runs and returns finite losses
        let r = update_reward_critics(&mut n, &mut opt, &b, nz.view(), 0.99, 0.005, 1e-3).unwrap();
        assert!(r.q1_loss.is_finite() && r.q2_loss.is_finite());
    }

    #[test]
    fn constraint_target_example() {
        let zeta = IndexPreset::Phi0.params(0.5).unwrap();
        let t = Transition {
            obs: [0.0; OBS_DIM],
            action: [0.0; ACTION_DIM],
            reward: 0.0,
            next_obs: [0.0; OBS_DIM],
            done: false,
            kin: KinematicPair::new(0.6, -1.0),
            kin_next: KinematicPair::new(0.4, -1.0),
        };
        let b = Batch::from_transitions([&t]);
        let (z, w) = constraint_targets(&b, &zeta);
        assert!((z[0] - 0.1).abs() < 1e-12);
        assert_eq!(w[0], 1.0);
        let (z2, _) = constraint_targets(&b, &IndexPreset::PhiH.params(0.5).unwrap());
        assert_ne!(z[0], z2[0]);
    }

    #[test]
    fn constant_constraint_critic_fits_the_mean() {
        // zero last-layer weights and train only the output bias
        let n = nets(4);
        let b = batch(32, 5);
        let zeta = IndexPreset::PhiH.params(0.5).unwrap();
        let (z, _) = constraint_targets(&b, &zeta);
        let mut p = n.q_phi.clone();
        let last = n.critic_net.layout().layers.last().unwrap().clone();
        for w in &mut p[last.weight.clone()] {
            *w = 0.0;
        }
        let input = critic_input(b.obs.view(), b.actions.view());
        let mut st = crate::nn::AdamState::new(1);
        let sched = crate::nn::LrSchedule::new(1e-2, 1e-5, 6000);
        for t in 0..6000 {
            let (out, cache) = n.critic_net.forward_batch(&p, input.view()).unwrap();
            let up = Array2::from_shape_fn((b.len(), 1), |(i, _)| 2.0 * (out[[i, 0]] - z[i]) / b.len() as f64);
            let (g, _) = n.critic_net.backward_batch(&p, &cache, up.view()).unwrap();
            let mut bias = [p[last.bias.start]];
            adam_clipped_step(&mut bias, &[g[last.bias.start]], &mut st, sched.at(t)).unwrap();
            p[last.bias.start] = bias[0];
        }
        let mean = z.mean().unwrap();
        assert!((p[last.bias.start] - mean).abs() < 1e-3);
    }

    #[test]
    fn zero_lambda_cap_removes_constraint_term() {
        let mut n = nets(6);
        // make Q_φ sensitive to actions so the constraint term would matter
        for v in n.q_phi.iter_mut() {
            *v *= 3.0;
        }
        let b = batch(32, 7);
        let nz = noise(32, 8);
        let with = policy_loss_and_grad(&n, b.obs.view(), nz.view(), 100.0).unwrap();
        let without = policy_loss_and_grad(&n, b.obs.view(), nz.view(), 0.0).unwrap();
        assert_eq!(without.mean_lambda, 0.0);
        assert!(with.grads.iter().zip(without.grads.iter()).any(|(a, b)| (a - b).abs() > 1e-9));
    }

    #[test]
    fn policy_gradient_matches_finite_differences() {
        let n = nets(9);
        let b = batch(8, 10);
        let nz = noise(8, 11);
        let pg = policy_loss_and_grad(&n, b.obs.view(), nz.view(), 50.0).unwrap();
        let h = 1e-6;
        for idx in [0usize, 5, 40, 200, n.policy.len() - 1] {
            let mut plus = n.clone();
            plus.policy[idx] += h;
            let mut minus = n.clone();
            minus.policy[idx] -= h;
            let lp = policy_loss_and_grad(&plus, b.obs.view(), nz.view(), 50.0).unwrap().loss;
            let lm = policy_loss_and_grad(&minus, b.obs.view(), nz.view(), 50.0).unwrap().loss;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - pg.grads[idx]).abs() < 1e-6 * (1.0 + fd.abs()), "param {idx}: {fd} vs {}", pg.grads[idx]);
        }
    }

    #[test]
    fn multiplier_moves_with_constraint_sign() {
        for (bias, up) in [(0.5, true), (-0.5, false)] {
            let mut n = nets(12);
            // constant Q_φ = bias
            let last = n.critic_net.layout().layers.last().unwrap().clone();
            for w in &mut n.q_phi[last.weight.clone()] {
                *w = 0.0;
            }
            n.q_phi[last.bias.start] = bias;
            let mut opt = OptimizerStates::new(&n);
            let b = batch(16, 13);
            let nz = noise(16, 14);
            let (before, _) = n.lambdas(b.obs.view(), 100.0).unwrap();
            update_multiplier(&mut n, &mut opt, b.obs.view(), nz.view(), 100.0, 0.0, MultiplierFloors::default(), 1e-2).unwrap();
            let (after, _) = n.lambdas(b.obs.view(), 100.0).unwrap();
            let moved = after.sum() - before.sum();
            assert_eq!(moved > 0.0, up, "bias {bias}: moved {moved}");
        }
    }

    #[test]
    fn multiplier_respects_cap() {
        let mut n = nets(15);
        let last = n.multiplier_net.layout().layers.last().unwrap().clone();
        n.multiplier[last.bias.start] = 50.0;
        let mut opt = OptimizerStates::new(&n);
        let b = batch(16, 16);
        let nz = noise(16, 17);
        for _ in 0..10 {
            update_multiplier(&mut n, &mut opt, b.obs.view(), nz.view(), 10.0, 0.0, MultiplierFloors::default(), 1.0).unwrap();
            let (l, _) = n.lambdas(b.obs.view(), 10.0).unwrap();
            assert!(l.iter().all(|&v| (0.0..=10.0).contains(&v)));
        }
    }

    #[test]
    fn sis_step_cases() {
        let n = nets(18);
        let b = batch(16, 19);
        let zeta = IndexPreset::PhiH.params(0.5).unwrap();
        let (g, skipped) = sis_gradient(&n, &b, &zeta, 0.0).unwrap();
        assert_eq!(skipped, 0);
        assert_eq!(g, ZetaGrad::default());
        let (z2, info) = clipped_sis_step(&zeta, g, 1e-3).unwrap();
        assert_eq!(z2, zeta);
        assert_eq!(info.displacement, 0.0);

        // every row far from the hazard: low-energy branch, ∂Δφ/∂σ = 1
        let mut far = b.clone();
        for kp in far.kin.iter_mut().chain(far.kin_next.iter_mut()) {
            kp.d += 2.0;
        }
        let (g, _) = sis_gradient(&n, &far, &zeta, 100.0).unwrap();
        assert!(g.sigma > 0.0);
        let (z3, info) = clipped_sis_step(&zeta, g, 1e-2).unwrap();
        assert!(z3.sigma < zeta.sigma);
        assert!(info.displacement <= 1e-2 + 1e-15);

        let edge = SafetyIndexParams { k: 0.0, ..zeta };
        let (z4, _) = clipped_sis_step(&edge, ZetaGrad { sigma: 0.0, n: 0.0, k: 1.0 }, 1.0).unwrap();
        assert_eq!(z4.k, 0.0);
    }

    #[test]
    fn temperature_sign() {
        // entropy above target (log π small) pushes α down
        assert!(temperature_gradient(-5.0, -2.0) > 0.0);
        assert!(temperature_gradient(3.0, -2.0) < 0.0);
        let mut n = nets(20);
        let mut opt = OptimizerStates::new(&n);
        let b = batch(16, 21);
        let nz = noise(16, 22);
        for _ in 0..5 {
            update_temperature(&mut n, &mut opt, b.obs.view(), nz.view(), -2.0, 0.5).unwrap();
            assert!(n.alpha() > 0.0);
        }
    }
}
