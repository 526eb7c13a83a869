use serde::{Deserialize, Serialize};

use crate::env::N_COSTS;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Penalized PPO on the distance, limit and barrier costs, with comfort rewards.
    P3oCbf,
    /// Penalized PPO on the distance and limit costs only, without comfort rewards.
    P3o,
    /// Plain PPO with costs folded into the reward.
    PpoRewardShaping,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::PpoRewardShaping, Mode::P3o, Mode::P3oCbf];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::P3oCbf => "p3o_cbf",
            Mode::P3o => "p3o",
            Mode::PpoRewardShaping => "ppo_reward_shaping",
        }
    }

    pub fn parse(s: &str) -> Result<Mode> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config_at("train.mode", format!("unknown mode `{s}`")))
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Width of the per-step scan embedding.
    pub embed_dim: usize,
    pub gru_hidden: usize,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub init_log_std: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            gru_hidden: 128,
            actor_hidden: vec![256, 128],
            critic_hidden: vec![256, 128],
            init_log_std: -0.7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    /// Penalty weight per constraint `(C_safe, C_limit, C_D)`.
    pub kappa: [f64; N_COSTS],
    /// Constraint limits.
    pub d: [f64; N_COSTS],
    pub lr: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub n_envs: usize,
    pub horizon: usize,
    pub total_steps: u64,
    /// Initial entropy bonus, annealed linearly to zero over the budget.
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    /// Reward-shaping weight `w_c` and the cost channels it folds in.
    pub shaping_weight: f64,
    pub shaped_costs: [bool; N_COSTS],
    /// Overrides of the mode's constraint set and comfort-reward switch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub active_costs: Option<[bool; N_COSTS]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comfort_rewards: Option<bool>,
    /// Training scenario mix, sampled uniformly per episode.
    pub scenarios: Vec<String>,
    /// Save an intermediate checkpoint every this many env steps (0: final only).
    pub checkpoint_every: u64,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::P3oCbf,
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            kappa: [1.0; N_COSTS],
            d: [0.0; N_COSTS],
            lr: 3e-4,
            epochs: 5,
            minibatches: 4,
            n_envs: 16,
            horizon: 256,
            total_steps: 2_000_000,
            entropy_coef: 0.005,
            max_grad_norm: 0.5,
            shaping_weight: 10.0,
            shaped_costs: [true, true, false],
            active_costs: None,
            comfort_rewards: None,
            scenarios: vec![
                "cluttered_static".into(),
                "narrow_passage".into(),
                "suspended_obstacle".into(),
                "dynamic_agents".into(),
                "open_field".into(),
            ],
            checkpoint_every: 0,
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, m: &str| Err(Error::config_at(format!("train.{k}"), m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma", "must lie in (0, 1)");
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad("lambda", "must lie in (0, 1]");
        }
        if !(self.clip > 0.0) {
            return bad("clip", "must be positive");
        }
        if self.kappa.iter().any(|k| !(*k >= 0.0)) {
            return bad("kappa", "must be non-negative");
        }
        if !(self.lr > 0.0) {
            return bad("lr", "must be positive");
        }
        if self.epochs == 0 || self.minibatches == 0 || self.n_envs == 0 || self.horizon == 0 {
            return bad("epochs", "epochs, minibatches, n_envs and horizon must be positive");
        }
        if self.minibatches > self.n_envs * self.horizon {
            return bad("minibatches", "more minibatches than samples");
        }
        if self.scenarios.is_empty() {
            return bad("scenarios", "needs at least one scenario");
        }
        if self.net.embed_dim == 0 || self.net.gru_hidden == 0 {
            return bad("net", "widths must be positive");
        }
        Ok(())
    }

    /// Cost channels penalized by the P3O objective.
    pub fn penalized_costs(&self) -> [bool; N_COSTS] {
        if let Some(m) = self.active_costs {
            return m;
        }
        match self.mode {
            Mode::P3oCbf => [true, true, true],
            Mode::P3o => [true, true, false],
            Mode::PpoRewardShaping => [false; N_COSTS],
        }
    }

    pub fn uses_comfort_rewards(&self) -> bool {
        self.comfort_rewards.unwrap_or(self.mode != Mode::P3o)
    }

    pub fn batch_size(&self) -> usize {
        self.n_envs * self.horizon
    }
}
