use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

/// GAE over a single stream where `dones[t]` marks a terminal transition (no bootstrap).
/// `values` carries one trailing entry for the state after the last step.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n + 1 || dones.len() != n {
        return Err(Error::usage(format!(
            "gae: {n} rewards need {} values and {n} done flags, got {} and {}",
            n + 1,
            values.len(),
            dones.len()
        )));
    }
    let next: Vec<f64> = (0..n).map(|t| if dones[t] { 0.0 } else { values[t + 1] }).collect();
    gae_bootstrapped(rewards, &values[..n], &next, dones, gamma, lambda)
}

/// GAE with explicit per-step bootstrap values: `next_values[t]` is the value of the
/// state reached at `t` (zero when terminal) and `episode_end[t]` stops the recursion.
pub fn gae_bootstrapped(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    episode_end: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || next_values.len() != n || episode_end.len() != n {
        return Err(Error::usage("gae: arrays must have equal length"));
    }
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        if episode_end[t] {
            running = 0.0;
        }
        let delta = rewards[t] + gamma * next_values[t] - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// `(adv - mean) / (std + 1e-8)` with the population standard deviation; also returns
/// the mean and standard deviation used.
pub fn normalize_advantages(adv: &[f64]) -> Result<(Vec<f64>, f64, f64)> {
    if adv.is_empty() {
        return Err(Error::usage("normalize_advantages: empty batch"));
    }
    let n = adv.len() as f64;
    let mu = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mu) * (a - mu)).sum::<f64>() / n;
    let sigma = var.sqrt();
    Ok((adv.iter().map(|a| (a - mu) / (sigma + 1e-8)).collect(), mu, sigma))
}

/// Mean clipped surrogate `min(r A, clip(r) A)` (to be maximized).
pub fn ppo_clip_loss(log_probs_new: &[f64], log_probs_old: &[f64], adv: &[f64], eps: f64) -> f64 {
    let n = adv.len() as f64;
    log_probs_new
        .iter()
        .zip(log_probs_old)
        .zip(adv)
        .map(|((n, o), a)| {
            let r = (n - o).exp();
            (r * a).min(r.clamp(1.0 - eps, 1.0 + eps) * a)
        })
        .sum::<f64>()
        / n
}

/// Pessimistic clipped surrogate for a cost, `max(r A_C, clip(r) A_C)` (to be minimized).
pub fn cost_clip_loss(log_probs_new: &[f64], log_probs_old: &[f64], adv: &[f64], eps: f64) -> f64 {
    let n = adv.len() as f64;
    log_probs_new
        .iter()
        .zip(log_probs_old)
        .zip(adv)
        .map(|((n, o), a)| {
            let r = (n - o).exp();
            (r * a).max(r.clamp(1.0 - eps, 1.0 + eps) * a)
        })
        .sum::<f64>()
        / n
}

/// Constant part of the violation term: `((1 - gamma)(J_C - d) + mu) / sigma`, with
/// `sigma` floored at `1e-8`.
pub fn violation_offset(j_c: f64, d: f64, gamma: f64, mu: f64, sigma: f64) -> f64 {
    ((1.0 - gamma) * (j_c - d) + mu) / sigma.max(1e-8)
}

pub fn cost_violation_term(clip_loss_cost: f64, j_c: f64, d: f64, gamma: f64, mu: f64, sigma: f64) -> f64 {
    clip_loss_cost + violation_offset(j_c, d, gamma, mu, sigma)
}

/// `L_R - sum_j kappa_j max(0, v_j)` (to be maximized).
pub fn p3o_loss(reward_clip_loss: f64, violations: &[f64], kappa: &[f64]) -> f64 {
    assert_eq!(violations.len(), kappa.len(), "one kappa per violation term");
    reward_clip_loss - violations.iter().zip(kappa).map(|(v, k)| k * v.max(0.0)).sum::<f64>()
}

/// Graph form of the clipped surrogates. `log_prob` is the `B x 1` new log density,
/// `old` and `adv` are `B x 1` constants.
pub fn clip_surrogate(g: &mut Graph, log_prob: Var, old: Var, adv: Var, eps: f64, pessimistic: bool) -> Result<Var> {
    let diff = g.sub(log_prob, old)?;
    let ratio = g.exp(diff);
    let unclipped = g.mul(ratio, adv)?;
    let clipped_ratio = g.clamp(ratio, 1.0 - eps, 1.0 + eps);
    let clipped = g.mul(clipped_ratio, adv)?;
    let s = if pessimistic {
        g.max(unclipped, clipped)?
    } else {
        g.min(unclipped, clipped)?
    };
    Ok(g.mean(s))
}

/// Graph form of the penalized objective. `cost_terms[j]` is the cost surrogate node and
/// `offsets[j]` the constant violation offset.
pub fn p3o_objective(g: &mut Graph, reward_surrogate: Var, cost_terms: &[Var], offsets: &[f64], kappa: &[f64]) -> Var {
    let mut obj = reward_surrogate;
    for ((&c, &off), &k) in cost_terms.iter().zip(offsets).zip(kappa) {
        let v = g.add_scalar(c, off);
        let hinge = g.max_scalar(v, 0.0);
        let pen = g.scale(hinge, -k);
        obj = g.add(obj, pen).expect("scalar shapes");
    }
    obj
}
