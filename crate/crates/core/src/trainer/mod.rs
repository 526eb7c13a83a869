//! Rollout collection, advantage estimation and the penalized clipped-policy update.

mod agent;
mod config;
pub mod losses;
pub mod nets;
mod normalizer;
mod run;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

pub use agent::{Agent, PolicyOutput};
pub use config::{Mode, NetConfig, TrainConfig};
pub use losses::{
    cost_clip_loss, cost_violation_term, gae, gae_bootstrapped, normalize_advantages, p3o_loss, ppo_clip_loss,
    violation_offset,
};
pub use nets::{NetInput, N_VALUE_HEADS};
pub use normalizer::RunningNorm;
pub use run::{checkpoint_base, run_training, TrainOutcome};

use crate::autodiff::nn::gaussian_logprob_value;
use crate::autodiff::{adam_step, gaussian_logprob, AdamConfig, AdamState, Graph, Mat, ParamStore};
use crate::cbf::CbfConfig;
use crate::env::{Curriculum, EnvConfig, EpisodeSummary, Env, StepResult, ACTION_DIM, CRITIC_EXTRA_WIDTH, N_COSTS};
use crate::error::{Error, Result};
use crate::world::Scenario;

/// Transitions from `n_envs` environments over `horizon` steps, stored step-major
/// (index `t * n_envs + e`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBatch {
    pub n_envs: usize,
    pub horizon: usize,
    pub actor_obs: Vec<Vec<f64>>,
    pub extras: Vec<Vec<f64>>,
    pub actions: Vec<[f64; ACTION_DIM]>,
    pub log_probs: Vec<f64>,
    /// Reward used for learning (shaped in reward-shaping mode).
    pub rewards: Vec<f64>,
    pub env_rewards: Vec<f64>,
    pub costs: Vec<[f64; N_COSTS]>,
    pub values: Vec<[f64; N_VALUE_HEADS]>,
    /// Value of the state reached by each transition; zero after a terminal step.
    pub next_values: Vec<[f64; N_VALUE_HEADS]>,
    pub terminated: Vec<bool>,
    pub episode_end: Vec<bool>,
    pub episodes: Vec<EpisodeSummary>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    fn channel(&self, k: usize) -> Vec<f64> {
        if k == 0 {
            self.rewards.clone()
        } else {
            self.costs.iter().map(|c| c[k - 1]).collect()
        }
    }

    /// Per-environment GAE for head `k`, returned in batch order.
    pub fn advantages(&self, k: usize, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let signal = self.channel(k);
        let n = self.n_envs;
        let mut adv = vec![0.0; self.len()];
        let mut ret = vec![0.0; self.len()];
        for e in 0..n {
            let idx: Vec<usize> = (0..self.horizon).map(|t| t * n + e).collect();
            let r: Vec<f64> = idx.iter().map(|&i| signal[i]).collect();
            let v: Vec<f64> = idx.iter().map(|&i| self.values[i][k]).collect();
            let nv: Vec<f64> = idx.iter().map(|&i| self.next_values[i][k]).collect();
            let ends: Vec<bool> = idx.iter().map(|&i| self.episode_end[i]).collect();
            let (a, rt) = gae_bootstrapped(&r, &v, &nv, &ends, gamma, lambda)?;
            for (j, &i) in idx.iter().enumerate() {
                adv[i] = a[j];
                ret[i] = rt[j];
            }
        }
        Ok((adv, ret))
    }

    /// Batch mean of per-episode discounted cost sums; partial episodes at the batch
    /// edges count as episodes of their own.
    pub fn discounted_cost_estimate(&self, j: usize, gamma: f64) -> f64 {
        let n = self.n_envs;
        let mut sums = Vec::new();
        for e in 0..n {
            let mut acc = 0.0;
            let mut disc = 1.0;
            for t in 0..self.horizon {
                let i = t * n + e;
                acc += disc * self.costs[i][j];
                disc *= gamma;
                if self.episode_end[i] {
                    sums.push(acc);
                    acc = 0.0;
                    disc = 1.0;
                }
            }
            if disc != 1.0 {
                sums.push(acc);
            }
        }
        if sums.is_empty() {
            0.0
        } else {
            sums.iter().sum::<f64>() / sums.len() as f64
        }
    }
}

/// Per-update diagnostics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_objective: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub j_c: [f64; N_COSTS],
    pub violations: [f64; N_COSTS],
}

/// One row of `metrics.csv`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationMetrics {
    pub step: u64,
    pub reward: f64,
    pub j_c: [f64; N_COSTS],
    pub success_rate: f64,
    pub level: u8,
    pub episodes: usize,
    pub update: UpdateStats,
}

pub const METRICS_HEADER: &str = "step,reward,j_c1,j_c2,j_c3,success_rate,level";

impl IterationMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            self.step, self.reward, self.j_c[0], self.j_c[1], self.j_c[2], self.success_rate, self.level
        )
    }
}

fn mix_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn clip_grads(grads: &mut ParamStore, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads.global_sq_norm().sqrt();
    if norm > max_norm {
        grads.scale_all(max_norm / norm);
    }
}

/// Training state: environments, agent, optimizers and the random streams.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub agent: Agent,
    envs: Vec<Env>,
    scenarios: Vec<Scenario>,
    current: Vec<StepResult>,
    pub curriculum: Curriculum,
    actor_opt: AdamState,
    critic_opt: AdamState,
    rng: ChaCha8Rng,
    seed: u64,
    episodes_started: u64,
    pub steps: u64,
}

impl Trainer {
    pub fn new(env_cfg: &EnvConfig, cbf: &CbfConfig, cfg: TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut env_cfg = env_cfg.clone();
        env_cfg.comfort_rewards = cfg.uses_comfort_rewards();
        let scenarios = cfg
            .scenarios
            .iter()
            .map(|s| Scenario::load(s))
            .collect::<Result<Vec<_>>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = env_cfg.layout();
        let agent = Agent::new(layout, cfg.net.clone(), &mut rng)?;
        let envs = (0..cfg.n_envs)
            .map(|_| Env::new(env_cfg.clone(), *cbf))
            .collect::<Result<Vec<_>>>()?;
        let mut t = Self {
            curriculum: Curriculum::new(env_cfg.curriculum),
            cfg,
            agent,
            envs,
            scenarios,
            current: Vec::new(),
            actor_opt: AdamState::default(),
            critic_opt: AdamState::default(),
            rng,
            seed,
            episodes_started: 0,
            steps: 0,
        };
        let mut current = Vec::with_capacity(t.envs.len());
        for e in 0..t.envs.len() {
            current.push(t.reset_env(e)?);
        }
        t.current = current;
        t.agent
            .actor_norm
            .update(t.current.iter().map(|r| r.actor_obs.0.as_slice()));
        t.agent
            .extra_norm
            .update(t.current.iter().map(|r| r.critic_obs.extras.as_slice()));
        Ok(t)
    }

    fn reset_env(&mut self, e: usize) -> Result<StepResult> {
        let which = self.rng.random_range(0..self.scenarios.len());
        let seed = mix_seed(self.seed, e as u64, self.episodes_started);
        self.episodes_started += 1;
        let level = self.curriculum.level();
        self.envs[e].reset(&self.scenarios[which], seed, level)
    }

    fn entropy_coef(&self) -> f64 {
        let frac = (self.steps as f64 / self.cfg.total_steps.max(1) as f64).min(1.0);
        self.cfg.entropy_coef * (1.0 - frac)
    }

    fn shaped_reward(&self, reward: f64, costs: &[f64; N_COSTS]) -> f64 {
        if self.cfg.mode != Mode::PpoRewardShaping {
            return reward;
        }
        let penalty: f64 = costs
            .iter()
            .zip(self.cfg.shaped_costs)
            .filter(|(_, on)| *on)
            .map(|(c, _)| c)
            .sum();
        reward - self.cfg.shaping_weight * penalty
    }

    /// Runs every environment for `horizon` steps under the current (frozen) agent.
    pub fn collect_rollouts(&mut self) -> Result<RolloutBatch> {
        let n = self.envs.len();
        let horizon = self.cfg.horizon;
        let mut batch = RolloutBatch {
            n_envs: n,
            horizon,
            ..RolloutBatch::default()
        };
        let mut raw_actor: Vec<Vec<f64>> = Vec::with_capacity(n * horizon);
        let mut raw_extras: Vec<Vec<f64>> = Vec::with_capacity(n * horizon);
        // Steps whose `next_values` entry is filled once the following step's values exist.
        let mut pending: Vec<Option<usize>> = vec![None; n];

        for _t in 0..horizon {
            let obs: Vec<Vec<f64>> = self.current.iter().map(|r| self.agent.normalize_actor(&r.actor_obs.0)).collect();
            let ext: Vec<Vec<f64>> = self
                .current
                .iter()
                .map(|r| self.agent.normalize_extras(&r.critic_obs.extras))
                .collect();
            let obs_refs: Vec<&[f64]> = obs.iter().map(|o| o.as_slice()).collect();
            let ext_refs: Vec<&[f64]> = ext.iter().map(|o| o.as_slice()).collect();
            let out = self.agent.act_normalized(&obs_refs)?;
            let values = self.agent.values_normalized(&obs_refs, &ext_refs)?;

            for e in 0..n {
                if let Some(i) = pending[e].take() {
                    batch.next_values[i] = values[e];
                }
            }

            let mut actions = Vec::with_capacity(n);
            let mut log_probs = Vec::with_capacity(n);
            for mean in &out.mean {
                let mut a = [0.0; ACTION_DIM];
                for d in 0..ACTION_DIM {
                    let z: f64 = self.rng.sample(StandardNormal);
                    a[d] = mean[d] + out.log_std[d].exp() * z;
                }
                log_probs.push(gaussian_logprob_value(mean, &out.log_std, &a));
                actions.push(a);
            }

            let results: Vec<Result<StepResult>> = self
                .envs
                .par_iter_mut()
                .zip(actions.par_iter())
                .map(|(env, a)| env.step(a))
                .collect();

            for (e, res) in results.into_iter().enumerate() {
                let res = res?;
                let i = batch.len();
                raw_actor.push(self.current[e].actor_obs.0.clone());
                raw_extras.push(self.current[e].critic_obs.extras.to_vec());
                batch.actor_obs.push(obs[e].clone());
                batch.extras.push(ext[e].clone());
                batch.actions.push(actions[e]);
                batch.log_probs.push(log_probs[e]);
                batch.rewards.push(self.shaped_reward(res.reward, &res.costs));
                batch.env_rewards.push(res.reward);
                batch.costs.push(res.costs);
                batch.values.push(values[e]);
                batch.next_values.push([0.0; N_VALUE_HEADS]);
                batch.terminated.push(res.terminated);
                batch.episode_end.push(res.done());
                if res.truncated {
                    let a = self.agent.normalize_actor(&res.actor_obs.0);
                    let x = self.agent.normalize_extras(&res.critic_obs.extras);
                    batch.next_values[i] = self.agent.values_normalized(&[&a], &[&x])?[0];
                } else if !res.terminated {
                    pending[e] = Some(i);
                }
                if let Some(ep) = res.episode {
                    batch.episodes.push(ep);
                    self.curriculum.record(ep.success);
                }
                self.current[e] = if res.done() { self.reset_env(e)? } else { res };
            }
        }

        // Bootstrap the last step of every stream still running.
        let obs: Vec<Vec<f64>> = self.current.iter().map(|r| self.agent.normalize_actor(&r.actor_obs.0)).collect();
        let ext: Vec<Vec<f64>> = self
            .current
            .iter()
            .map(|r| self.agent.normalize_extras(&r.critic_obs.extras))
            .collect();
        let obs_refs: Vec<&[f64]> = obs.iter().map(|o| o.as_slice()).collect();
        let ext_refs: Vec<&[f64]> = ext.iter().map(|o| o.as_slice()).collect();
        let values = self.agent.values_normalized(&obs_refs, &ext_refs)?;
        for e in 0..n {
            if let Some(i) = pending[e].take() {
                batch.next_values[i] = values[e];
            }
        }

        self.agent.actor_norm.update(raw_actor.iter().map(|r| r.as_slice()));
        self.agent.extra_norm.update(raw_extras.iter().map(|r| r.as_slice()));
        self.steps += (n * horizon) as u64;
        Ok(batch)
    }

    /// Epochs of minibatch updates for the actor (penalized objective) and the critics.
    pub fn update(&mut self, batch: &RolloutBatch) -> Result<UpdateStats> {
        let cfg = self.cfg.clone();
        let n = batch.len();
        let penalized = cfg.penalized_costs();

        let mut advs = Vec::with_capacity(N_VALUE_HEADS);
        let mut rets = Vec::with_capacity(N_VALUE_HEADS);
        for k in 0..N_VALUE_HEADS {
            let (a, r) = batch.advantages(k, cfg.gamma, cfg.lambda)?;
            advs.push(a);
            rets.push(r);
        }
        let (adv_r, _, _) = normalize_advantages(&advs[0])?;
        let mut adv_c = Vec::with_capacity(N_COSTS);
        let mut stats = UpdateStats::default();
        let mut offsets = [0.0; N_COSTS];
        for j in 0..N_COSTS {
            let (a, mu, sigma) = normalize_advantages(&advs[j + 1])?;
            let jc = batch.discounted_cost_estimate(j, cfg.gamma);
            stats.j_c[j] = jc;
            offsets[j] = violation_offset(jc, cfg.d[j], cfg.gamma, mu, sigma);
            adv_c.push(a);
        }

        // Value targets in the normalized space of the updated return statistics.
        let ret_rows: Vec<Vec<f64>> = (0..n).map(|i| (0..N_VALUE_HEADS).map(|k| rets[k][i]).collect()).collect();
        self.agent.value_norm.update(ret_rows.iter().map(|r| r.as_slice()));
        let targets: Vec<[f64; N_VALUE_HEADS]> = (0..n)
            .map(|i| {
                let mut t = [0.0; N_VALUE_HEADS];
                for (k, tk) in t.iter_mut().enumerate() {
                    *tk = self.agent.normalize_target(k, rets[k][i]);
                }
                t
            })
            .collect();

        let active: Vec<usize> = (0..N_COSTS).filter(|&j| penalized[j]).collect();
        let kappa: Vec<f64> = active.iter().map(|&j| cfg.kappa[j]).collect();
        let ent_coef = self.entropy_coef();
        let actor_adam = AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        };
        let critic_adam = actor_adam;
        let layout = self.agent.layout;
        let mb_size = n / cfg.minibatches;

        let mut indices: Vec<usize> = (0..n).collect();
        let mut count = 0.0;
        let mut obj_sum = 0.0;
        let mut vloss_sum = 0.0;
        let mut kl_sum = 0.0;
        let mut ent_last = 0.0;
        let mut viol_sum = [0.0; N_COSTS];
        for _epoch in 0..cfg.epochs {
            indices.shuffle(&mut self.rng);
            for m in 0..cfg.minibatches {
                let idx = &indices[m * mb_size..(m + 1) * mb_size];
                let rows: Vec<&[f64]> = idx.iter().map(|&i| batch.actor_obs[i].as_slice()).collect();
                let ext: Vec<&[f64]> = idx.iter().map(|&i| batch.extras[i].as_slice()).collect();
                let b = idx.len();
                let col = |f: &dyn Fn(usize) -> f64| Mat::from_vec(b, 1, idx.iter().map(|&i| f(i)).collect());

                // Actor.
                let input = NetInput::gather(&layout, &rows, None);
                let mut g = Graph::new();
                let head = nets::policy_forward(&mut g, &self.agent.policy, &layout, &self.agent.net, &input)?;
                let act = g.constant(Mat::from_vec(
                    b,
                    ACTION_DIM,
                    idx.iter().flat_map(|&i| batch.actions[i]).collect(),
                ));
                let lp = gaussian_logprob(&mut g, &head, act)?;
                let old = g.constant(col(&|i| batch.log_probs[i]));
                let ar = g.constant(col(&|i| adv_r[i]));
                let surr = losses::clip_surrogate(&mut g, lp, old, ar, cfg.clip, false)?;
                let mut cost_terms = Vec::with_capacity(active.len());
                for &j in &active {
                    let ac = g.constant(col(&|i| adv_c[j][i]));
                    cost_terms.push(losses::clip_surrogate(&mut g, lp, old, ac, cfg.clip, true)?);
                }
                let active_offsets: Vec<f64> = active.iter().map(|&j| offsets[j]).collect();
                let obj = losses::p3o_objective(&mut g, surr, &cost_terms, &active_offsets, &kappa);
                let ent = head.entropy(&mut g);
                let ent_term = g.scale(ent, ent_coef);
                let total = g.add(obj, ent_term)?;
                let loss = g.neg(total);
                let loss_value = g.value(loss).item();
                if !loss_value.is_finite() {
                    return Err(self.numerical_fault("policy loss", batch, &advs));
                }
                for (c, &j) in cost_terms.iter().zip(&active) {
                    viol_sum[j] += g.value(*c).item() + offsets[j];
                }
                obj_sum += g.value(obj).item();
                ent_last = g.value(ent).item();
                let lpv = g.value(lp);
                kl_sum += idx
                    .iter()
                    .enumerate()
                    .map(|(r, &i)| batch.log_probs[i] - lpv.data[r])
                    .sum::<f64>()
                    / b as f64;
                let mut grads = g.backward(loss, &self.agent.policy)?;
                clip_grads(&mut grads, cfg.max_grad_norm);
                adam_step(&mut self.agent.policy, &grads, &mut self.actor_opt, &actor_adam)?;

                let mb_targets: Vec<[f64; N_VALUE_HEADS]> = idx.iter().map(|&i| targets[i]).collect();
                let vl = self.critic_step(&rows, &ext, &mb_targets, &critic_adam)?;
                if !vl.is_finite() {
                    return Err(self.numerical_fault("value loss", batch, &advs));
                }
                vloss_sum += vl;
                count += 1.0;
            }
        }
        stats.policy_objective = obj_sum / count;
        stats.value_loss = vloss_sum / count;
        stats.entropy = ent_last;
        stats.approx_kl = kl_sum / count;
        for j in 0..N_COSTS {
            stats.violations[j] = viol_sum[j] / count;
        }
        Ok(stats)
    }

    /// One Adam step of the critics towards normalized targets; returns the loss before
    /// the step (half the summed per-head mean squared error).
    pub fn critic_step(
        &mut self,
        rows: &[&[f64]],
        ext: &[&[f64]],
        targets: &[[f64; N_VALUE_HEADS]],
        adam: &AdamConfig,
    ) -> Result<f64> {
        let layout = self.agent.layout;
        let b = rows.len();
        let input = NetInput::gather(&layout, rows, Some(ext));
        let mut g = Graph::new();
        let heads = nets::critic_forward(&mut g, &self.agent.critic, &layout, &self.agent.net, &input)?;
        let mut total = None;
        for (k, h) in heads.iter().enumerate() {
            let target = g.constant(Mat::from_vec(b, 1, targets.iter().map(|t| t[k]).collect()));
            let d = g.sub(*h, target)?;
            let sq = g.mul(d, d)?;
            let l = g.mean(sq);
            total = Some(match total {
                None => l,
                Some(acc) => g.add(acc, l)?,
            });
        }
        let loss = total.ok_or_else(|| Error::usage("critic has no heads"))?;
        let loss = g.scale(loss, 0.5);
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Ok(value);
        }
        let mut grads = g.backward(loss, &self.agent.critic)?;
        clip_grads(&mut grads, self.cfg.max_grad_norm);
        adam_step(&mut self.agent.critic, &grads, &mut self.critic_opt, adam)?;
        Ok(value)
    }

    fn numerical_fault(&self, what: &str, batch: &RolloutBatch, advs: &[Vec<f64>]) -> Error {
        let summary = |v: &[f64]| {
            let finite = v.iter().filter(|x| x.is_finite()).count();
            let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
            format!("finite {finite}/{} min {min:.4e} max {max:.4e}", v.len())
        };
        let mut msg = format!("non-finite {what} at step {}; rewards: {}", self.steps, summary(&batch.rewards));
        for (k, a) in advs.iter().enumerate() {
            msg.push_str(&format!("; adv[{k}]: {}", summary(a)));
        }
        msg.push_str(&format!("; log_probs: {}", summary(&batch.log_probs)));
        Error::numerical(msg)
    }

    /// One collect-and-update iteration.
    pub fn iterate(&mut self) -> Result<IterationMetrics> {
        let batch = self.collect_rollouts()?;
        let update = self.update(&batch)?;
        let successes = batch.episodes.iter().filter(|e| e.success).count();
        Ok(IterationMetrics {
            step: self.steps,
            reward: batch.env_rewards.iter().sum::<f64>() / batch.len() as f64,
            j_c: update.j_c,
            success_rate: if batch.episodes.is_empty() {
                0.0
            } else {
                successes as f64 / batch.episodes.len() as f64
            },
            level: self.curriculum.level(),
            episodes: batch.episodes.len(),
            update,
        })
    }

    pub fn done(&self) -> bool {
        self.steps >= self.cfg.total_steps
    }
}

/// Width check used by tests and tools.
pub fn critic_input_width(layout: &crate::env::ObsLayout) -> usize {
    layout.actor_width() + CRITIC_EXTRA_WIDTH
}
