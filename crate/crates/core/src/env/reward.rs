use serde::{Deserialize, Serialize};

use super::EnvConfig;
use crate::cbf::{cbf_cost, BarrierEval, CbfConfig, Control, LinearModel, State};
use crate::world::Vec2;

/// Per-term reward weights; every term can be overridden by name in the `env.weights`
/// config section.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub tracking_lin_vel: f64,
    pub tracking_ang_vel: f64,
    pub lin_vel_z: f64,
    pub action_rate: f64,
    pub action_smoothness: f64,
    pub action_magnitude: f64,
    pub proxemic: f64,
    pub approach_velocity: f64,
    pub approach_acceleration: f64,
    pub tangential_avoidance: f64,
    /// Squared deviation from the nominal standing height.
    pub base_height: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            tracking_lin_vel: 2.0,
            tracking_ang_vel: 0.5,
            lin_vel_z: -3e-4,
            action_rate: -5e-3,
            action_smoothness: -1e-5,
            action_magnitude: -1e-6,
            proxemic: 1.5,
            approach_velocity: -1.0,
            approach_acceleration: -1.0,
            tangential_avoidance: 1.0,
            base_height: -4.0,
        }
    }
}

/// Everything the reward needs from one transition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardInputs {
    pub v_body: Vec2,
    /// `(v_x, v_y, omega_z)` command in the body frame.
    pub command: [f64; 3],
    pub omega_z: f64,
    pub height: f64,
    pub height_rate: f64,
    pub action: [f64; 4],
    pub prev_action: [f64; 4],
    pub prev_prev_action: [f64; 4],
    pub velocity: Vec2,
    pub accel: Vec2,
    /// Unit vector from the nearest obstacle point to the robot, when one lies inside
    /// the comfort radius.
    pub obstacle_normal: Option<Vec2>,
    /// Distance to the nearest agent, when the scene has agents.
    pub d_human: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardTerms {
    pub terms: Vec<(&'static str, f64)>,
    pub total: f64,
}

impl RewardTerms {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

pub const TERM_NAMES: [&str; 11] = [
    "tracking_lin_vel",
    "tracking_ang_vel",
    "lin_vel_z",
    "action_rate",
    "action_smoothness",
    "action_magnitude",
    "base_height",
    "proxemic",
    "approach_velocity",
    "approach_acceleration",
    "tangential_avoidance",
];

fn sq4(a: &[f64; 4]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub fn compute_reward(cfg: &EnvConfig, inp: &RewardInputs) -> RewardTerms {
    let w = &cfg.weights;
    let dv = inp.v_body - Vec2::new(inp.command[0], inp.command[1]);
    let dw = inp.omega_z - inp.command[2];
    let mut rate = [0.0; 4];
    let mut jerk = [0.0; 4];
    for i in 0..4 {
        rate[i] = inp.prev_action[i] - inp.action[i];
        jerk[i] = inp.prev_prev_action[i] - 2.0 * inp.prev_action[i] + inp.action[i];
    }
    let dh = cfg.nominal_height - inp.height;

    let (proxemic, approach_v, approach_a, tangential) = if cfg.comfort_rewards {
        let proxemic = inp.d_human.map_or(0.0, |d| {
            w.proxemic * (-cfg.alpha_p * (d - cfg.social_distance).powi(2)).exp()
        });
        let (av, aa, tan) = match inp.obstacle_normal {
            Some(eta) => {
                let speed = inp.velocity.norm();
                let heading_in = if speed > 1e-9 {
                    (inp.velocity / speed).dot(&(-eta)).max(0.0)
                } else {
                    0.0
                };
                (
                    w.approach_velocity * (-inp.velocity.dot(&eta)).max(0.0),
                    w.approach_acceleration * (-inp.accel.dot(&eta)).max(0.0),
                    w.tangential_avoidance * (1.0 - heading_in),
                )
            }
            None => (0.0, 0.0, w.tangential_avoidance),
        };
        (proxemic, av, aa, tan)
    } else {
        (0.0, 0.0, 0.0, 0.0)
    };

    let values = [
        w.tracking_lin_vel * (-cfg.alpha_v * dv.norm_squared()).exp(),
        w.tracking_ang_vel * (-cfg.alpha_omega * dw * dw).exp(),
        w.lin_vel_z * inp.height_rate * inp.height_rate,
        w.action_rate * sq4(&rate),
        w.action_smoothness * sq4(&jerk),
        w.action_magnitude * sq4(&inp.action),
        w.base_height * dh * dh,
        proxemic,
        approach_v,
        approach_a,
        tangential,
    ];
    let terms: Vec<_> = TERM_NAMES.iter().copied().zip(values).collect();
    let total = terms.iter().map(|(_, v)| v).sum();
    RewardTerms { terms, total }
}

/// Inputs of the three cost channels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostInputs {
    /// Exact centre-to-surface distance to the nearest obstacle.
    pub d_obs: f64,
    /// Policy action before clamping, in normalized units.
    pub raw_action: [f64; 4],
    /// Pre-step state and the scan-derived barrier the policy acted on.
    pub state: State,
    pub barrier: BarrierEval,
    /// World-frame acceleration actually applied.
    pub control: Control,
}

/// `(C_safe, C_limit, C_D)`.
pub fn compute_costs(cfg: &EnvConfig, cbf: &CbfConfig, model: &LinearModel, inp: &CostInputs) -> [f64; 3] {
    let c_safe = if inp.d_obs < cfg.d_safe { 1.0 } else { 0.0 };
    let c_limit = inp.raw_action.iter().filter(|a| a.abs() > 1.0).count() as f64;
    let c_d = cbf_cost(model, cbf, &inp.barrier, &inp.state, &inp.control);
    [c_safe, c_limit, c_d]
}
