//! The constrained MDP around the simulator: observations, rewards, the three cost
//! channels, episode handling and the difficulty curriculum.

mod curriculum;
mod obs;
mod reward;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use curriculum::{curriculum_update, Curriculum, CurriculumConfig, MAX_LEVEL};
pub use obs::{
    actor_obs, critic_obs, proprio_record, ActorObs, CriticObs, ObsHistory, ObsLayout, ACTION_DIM,
    CRITIC_EXTRA_WIDTH, RECORD_WIDTH,
};
pub use reward::{compute_costs, compute_reward, CostInputs, RewardInputs, RewardTerms, RewardWeights, TERM_NAMES};

use crate::cbf::{nearest_obstacle, BarrierEval, CbfConfig, Control, LinearModel};
use crate::error::{Error, Result};
use crate::world::geometry::rotate;
use crate::world::{
    raycast, step_dynamics, BodyLimits, Goal, LidarConfig, LidarScan, RobotBody, Scenario, SuccessRule, Vec2,
    WorldState,
};

pub const N_COSTS: usize = 3;
pub const COST_NAMES: [&str; N_COSTS] = ["c_safe", "c_limit", "c_d"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CommandRanges {
    pub v_x: [f64; 2],
    pub v_y: [f64; 2],
    pub omega_z: [f64; 2],
    pub resample_steps: usize,
}

impl Default for CommandRanges {
    fn default() -> Self {
        Self {
            v_x: [0.0, 1.0],
            v_y: [-0.3, 0.3],
            omega_z: [-0.5, 0.5],
            resample_steps: 100,
        }
    }
}

/// Body-frame velocity commands for scenarios without a fixed goal.
#[derive(Clone, Debug, PartialEq)]
pub struct CommandSampler {
    pub ranges: CommandRanges,
    current: [f64; 3],
}

impl CommandSampler {
    pub fn new(ranges: CommandRanges) -> Self {
        Self {
            ranges,
            current: [0.0; 3],
        }
    }

    fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let r = &self.ranges;
        let pick = |rng: &mut R, [lo, hi]: [f64; 2]| if hi > lo { rng.random_range(lo..=hi) } else { lo };
        self.current = [pick(rng, r.v_x), pick(rng, r.v_y), pick(rng, r.omega_z)];
    }

    /// Command for step `k`, resampled every `resample_steps`.
    pub fn command<R: Rng + ?Sized>(&mut self, k: usize, rng: &mut R) -> [f64; 3] {
        if k % self.ranges.resample_steps.max(1) == 0 {
            self.draw(rng);
        }
        self.current
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub dt: f64,
    pub history: usize,
    pub limits: BodyLimits,
    pub lidar: LidarConfig,
    pub weights: RewardWeights,
    pub alpha_v: f64,
    pub alpha_omega: f64,
    pub alpha_p: f64,
    /// Ideal distance to a nearby agent for the proxemic term.
    pub social_distance: f64,
    /// Cost threshold on the obstacle distance.
    pub d_safe: f64,
    /// Metric thresholds: below `unsafe_distance` is unsafe, below `comfort_distance`
    /// uncomfortable.
    pub unsafe_distance: f64,
    pub comfort_distance: f64,
    /// Approach and tangential terms only look at obstacles nearer than this.
    pub comfort_radius: f64,
    pub nominal_height: f64,
    pub comfort_rewards: bool,
    pub commands: CommandRanges,
    pub curriculum: CurriculumConfig,
    /// Success threshold on mean velocity-tracking error for command-following scenarios.
    pub tracking_success_error: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            history: 10,
            limits: BodyLimits::default(),
            lidar: LidarConfig::default(),
            weights: RewardWeights::default(),
            alpha_v: 4.0,
            alpha_omega: 4.0,
            alpha_p: 2.0,
            social_distance: 1.2,
            d_safe: 0.8,
            unsafe_distance: 0.6,
            comfort_distance: 1.2,
            comfort_radius: 2.0,
            nominal_height: 0.75,
            comfort_rewards: true,
            commands: CommandRanges::default(),
            curriculum: CurriculumConfig::default(),
            tracking_success_error: 0.3,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::config_at("env.dt", "must be positive"));
        }
        if self.history == 0 {
            return Err(Error::config_at("env.history", "must be positive"));
        }
        if !(self.unsafe_distance <= self.comfort_distance) {
            return Err(Error::config_at("env.unsafe_distance", "must not exceed comfort_distance"));
        }
        if !(self.limits.h_min < self.limits.h_max) {
            return Err(Error::config_at("env.limits.h_min", "must be below h_max"));
        }
        self.lidar.validate()?;
        self.curriculum.validate()
    }

    pub fn layout(&self) -> ObsLayout {
        ObsLayout {
            history: self.history,
            n_rays: self.lidar.n_rays(),
        }
    }
}

/// Per-step diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepInfo {
    /// Exact centre-to-surface distance to the nearest obstacle or wall.
    pub d_obs: f64,
    /// Scan-derived barrier value after the step.
    pub h_d: f64,
    pub collision: bool,
    pub reached_goal: bool,
    pub fault: bool,
    pub limit_violations: usize,
    pub tracking_error: f64,
    pub d_human: Option<f64>,
}

/// Totals for a finished episode.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpisodeSummary {
    pub success: bool,
    pub collided: bool,
    pub length: usize,
    pub reward: f64,
    pub costs: [f64; N_COSTS],
    pub t_unsafe: f64,
    pub t_uncomfortable: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub actor_obs: ActorObs,
    pub critic_obs: CriticObs,
    pub reward: f64,
    pub reward_terms: RewardTerms,
    pub costs: [f64; N_COSTS],
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
    pub episode: Option<EpisodeSummary>,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// One environment instance. Owns its world, robot and random stream.
#[derive(Clone, Debug)]
pub struct Env {
    pub cfg: EnvConfig,
    pub cbf: CbfConfig,
    model: LinearModel,
    scenario: Option<Scenario>,
    world: WorldState,
    robot: RobotBody,
    scan: LidarScan,
    barrier: BarrierEval,
    history: Option<ObsHistory>,
    prev_action: [f64; ACTION_DIM],
    prev_prev_action: [f64; ACTION_DIM],
    command_body: [f64; 3],
    sampler: CommandSampler,
    yaw_offset: f64,
    rng: ChaCha8Rng,
    step_count: usize,
    done: bool,
    level: u8,
    masked_rings: Vec<usize>,
    last_limit_flags: [bool; ACTION_DIM],
    summary: EpisodeSummary,
    tracking_error_sum: f64,
}

impl Env {
    pub fn new(cfg: EnvConfig, cbf: CbfConfig) -> Result<Self> {
        cfg.validate()?;
        cbf.validate()?;
        let lidar = &cfg.lidar;
        let robot = RobotBody::at_rest([0.0, 0.0], 0.0, cfg.nominal_height);
        Ok(Self {
            model: LinearModel::double_integrator(cfg.dt),
            scenario: None,
            world: WorldState::new(crate::world::Rect::new([-1.0, -1.0], [1.0, 1.0]), vec![]),
            scan: LidarScan {
                ranges: vec![lidar.max_range; lidar.n_rays()],
                n_azimuth: lidar.n_azimuth,
                n_rings: lidar.n_rings(),
                max_range: lidar.max_range,
            },
            barrier: BarrierEval::sentinel(robot.position(), robot.heading(), cbf.d_min, lidar.max_range),
            robot,
            history: None,
            prev_action: [0.0; ACTION_DIM],
            prev_prev_action: [0.0; ACTION_DIM],
            command_body: [0.0; 3],
            sampler: CommandSampler::new(cfg.commands),
            yaw_offset: 0.0,
            rng: ChaCha8Rng::seed_from_u64(0),
            step_count: 0,
            done: true,
            level: 0,
            masked_rings: Vec::new(),
            last_limit_flags: [false; ACTION_DIM],
            summary: EpisodeSummary::default(),
            tracking_error_sum: 0.0,
            cbf,
            cfg,
        })
    }

    pub fn layout(&self) -> ObsLayout {
        self.cfg.layout()
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn robot(&self) -> &RobotBody {
        &self.robot
    }

    pub fn scenario(&self) -> Option<&Scenario> {
        self.scenario.as_ref()
    }

    pub fn barrier(&self) -> &BarrierEval {
        &self.barrier
    }

    pub fn scan(&self) -> &LidarScan {
        &self.scan
    }

    pub fn model(&self) -> &LinearModel {
        &self.model
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Rings blanked (no return) in every scan the policy and barrier see.
    pub fn set_masked_rings(&mut self, rings: &[usize]) {
        self.masked_rings = rings.to_vec();
    }

    fn sense(&mut self) {
        let mut scan = raycast(&self.world, &self.robot, &self.cfg.lidar, self.yaw_offset, &mut self.rng);
        for &r in &self.masked_rings {
            if r < scan.n_rings {
                scan.mask_ring(r);
            }
        }
        self.barrier = nearest_obstacle(&scan, &self.robot, &self.cfg.lidar, &self.cbf);
        self.scan = scan;
    }

    fn update_command(&mut self) {
        let scenario = self.scenario.as_ref().expect("reset before use");
        self.command_body = match scenario.command_at(self.step_count) {
            Some(c) => {
                let v = rotate(Vec2::new(c[0], c[1]), -self.robot.yaw);
                [v.x, v.y, c[2]]
            }
            None => self.sampler.command(self.step_count, &mut self.rng),
        };
    }

    fn progress(&self) -> f64 {
        let scenario = self.scenario.as_ref().expect("reset before use");
        match scenario.goal_region() {
            Some(region) => -region.interior_clearance(self.robot.position()).min(0.0),
            None => 0.0,
        }
    }

    fn observe(&self, collision: bool) -> (ActorObs, CriticObs) {
        let history = self.history.as_ref().expect("reset before use");
        let actor = actor_obs(history);
        let max_range = self.cfg.lidar.max_range;
        let privileged = self.world.privileged_obstacle_info(&self.robot, self.cfg.limits.radius, max_range);
        let h_exact = self.world.clearance(&self.robot).distance - self.cbf.d_min;
        let episode_length = self.scenario.as_ref().map_or(1, |s| s.episode_length);
        let critic = critic_obs(
            actor.clone(),
            &privileged,
            collision,
            h_exact,
            &self.last_limit_flags,
            self.progress(),
            self.step_count as f64 / episode_length as f64,
        );
        (actor, critic)
    }

    /// Starts an episode of `scenario` at curriculum `level`. Everything random in the
    /// episode derives from `seed`.
    pub fn reset(&mut self, scenario: &Scenario, seed: u64, level: u8) -> Result<StepResult> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let (world, robot) = scenario.instantiate(level, &mut self.rng);
        let max_off = self.cfg.lidar.yaw_offset_max_deg.to_radians();
        self.yaw_offset = if max_off > 0.0 {
            self.rng.random_range(-max_off..=max_off)
        } else {
            0.0
        };
        self.world = world;
        self.robot = robot;
        self.scenario = Some(scenario.clone());
        self.level = level;
        self.step_count = 0;
        self.done = false;
        self.prev_action = [0.0; ACTION_DIM];
        self.prev_prev_action = [0.0; ACTION_DIM];
        self.last_limit_flags = [false; ACTION_DIM];
        self.summary = EpisodeSummary::default();
        self.tracking_error_sum = 0.0;
        self.sampler = CommandSampler::new(self.cfg.commands);
        self.update_command();
        self.sense();
        let record = proprio_record(&self.robot, &self.prev_action, &self.command_body);
        self.history = Some(ObsHistory::filled(self.cfg.history, record, &self.scan.ranges));
        let collision = self.world.collision_check(&self.robot, self.cfg.limits.radius);
        let (actor_obs, critic_obs) = self.observe(collision);
        Ok(StepResult {
            actor_obs,
            critic_obs,
            reward: 0.0,
            reward_terms: RewardTerms {
                terms: Vec::new(),
                total: 0.0,
            },
            costs: [0.0; N_COSTS],
            terminated: false,
            truncated: false,
            info: StepInfo {
                d_obs: self.world.clearance(&self.robot).distance,
                h_d: self.barrier.h,
                collision,
                ..StepInfo::default()
            },
            episode: None,
        })
    }

    /// Advances one control period with a normalized action in `[-1, 1]^4`; components
    /// outside that box are clamped and counted as limit violations.
    pub fn step(&mut self, action: &[f64; ACTION_DIM]) -> Result<StepResult> {
        if self.done || self.history.is_none() {
            return Err(Error::usage("step called on a finished episode; call reset first"));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Ok(self.fault());
        }
        let limit_flags = action.map(|a| a.abs() > 1.0);
        let clamped = action.map(|a| a.clamp(-1.0, 1.0));
        let bounds = self.cfg.limits.action_bounds();
        let physical = [
            clamped[0] * bounds[0],
            clamped[1] * bounds[1],
            clamped[2] * bounds[2],
            clamped[3] * bounds[3],
            0.0,
        ];

        let state_before = LinearModel::state_of(&self.robot);
        let barrier_before = self.barrier;

        self.world.advance_agents(self.cfg.dt);
        self.robot = step_dynamics(&self.robot, &physical, self.cfg.dt, &self.cfg.limits)?;
        self.step_count += 1;
        self.last_limit_flags = limit_flags;

        let collision = self.world.collision_check(&self.robot, self.cfg.limits.radius);
        let clearance = self.world.clearance(&self.robot);
        let control = Control::new(self.robot.accel_cmd[0], self.robot.accel_cmd[1]);
        let costs = compute_costs(
            &self.cfg,
            &self.cbf,
            &self.model,
            &CostInputs {
                d_obs: clearance.distance,
                raw_action: *action,
                state: state_before,
                barrier: barrier_before,
                control,
            },
        );

        // Reward uses the post-step command frame and scan.
        self.update_command();
        self.sense();
        let near = self.barrier.active && self.barrier.h + self.barrier.d_min < self.cfg.comfort_radius;
        let d_human = self.world.nearest_agent_distance(&self.robot);
        let v_body = self.robot.body_velocity();
        let terms = compute_reward(
            &self.cfg,
            &RewardInputs {
                v_body,
                command: self.command_body,
                omega_z: self.robot.omega_z,
                height: self.robot.height,
                height_rate: self.robot.height_rate,
                action: clamped,
                prev_action: self.prev_action,
                prev_prev_action: self.prev_prev_action,
                velocity: self.robot.velocity(),
                accel: Vec2::new(control.x, control.y),
                obstacle_normal: near.then_some(self.barrier.eta),
                d_human,
            },
        );
        let tracking_error = (v_body - Vec2::new(self.command_body[0], self.command_body[1])).norm();
        self.prev_prev_action = self.prev_action;
        self.prev_action = clamped;

        let record = proprio_record(&self.robot, &self.prev_action, &self.command_body);
        self.history
            .as_mut()
            .expect("reset before use")
            .push(record, &self.scan.ranges);

        let scenario = self.scenario.as_ref().expect("reset before use");
        let reached_goal = scenario
            .goal_region()
            .is_some_and(|g| g.contains(self.robot.position()));
        let timeout = self.step_count >= scenario.episode_length;
        let terminated = collision;
        let truncated = !terminated && (reached_goal || timeout);

        self.tracking_error_sum += tracking_error;
        let s = &mut self.summary;
        s.length = self.step_count;
        s.reward += terms.total;
        for (acc, c) in s.costs.iter_mut().zip(costs) {
            *acc += c;
        }
        if clearance.distance < self.cfg.unsafe_distance {
            s.t_unsafe += self.cfg.dt;
        } else if clearance.distance < self.cfg.comfort_distance {
            s.t_uncomfortable += self.cfg.dt;
        }
        s.collided |= collision;
        let done = terminated || truncated;
        let episode = done.then(|| {
            let mean_err = self.tracking_error_sum / self.step_count as f64;
            let success = !collision
                && match scenario.success_rule {
                    SuccessRule::ReachGoal => reached_goal,
                    SuccessRule::TrackCommands => {
                        timeout && mean_err < self.cfg.tracking_success_error
                    }
                };
            EpisodeSummary {
                success,
                ..self.summary
            }
        });
        self.done = done;

        let (actor_obs, critic_obs) = self.observe(collision);
        Ok(StepResult {
            actor_obs,
            critic_obs,
            reward: terms.total,
            reward_terms: terms,
            costs,
            terminated,
            truncated,
            info: StepInfo {
                d_obs: clearance.distance,
                h_d: self.barrier.h,
                collision,
                reached_goal,
                fault: false,
                limit_violations: limit_flags.iter().filter(|f| **f).count(),
                tracking_error,
                d_human,
            },
            episode,
        })
    }

    fn fault(&mut self) -> StepResult {
        self.done = true;
        self.step_count += 1;
        let (actor_obs, critic_obs) = self.observe(false);
        let costs = [1.0, ACTION_DIM as f64, 0.0];
        let summary = EpisodeSummary {
            success: false,
            collided: false,
            length: self.step_count,
            ..self.summary
        };
        StepResult {
            actor_obs,
            critic_obs,
            reward: 0.0,
            reward_terms: RewardTerms {
                terms: Vec::new(),
                total: 0.0,
            },
            costs,
            terminated: true,
            truncated: false,
            info: StepInfo {
                d_obs: self.world.clearance(&self.robot).distance,
                h_d: self.barrier.h,
                fault: true,
                limit_violations: ACTION_DIM,
                ..StepInfo::default()
            },
            episode: Some(summary),
        }
    }

    /// Current goal as recorded in the scenario, for plots and replays.
    pub fn goal(&self) -> Option<&Goal> {
        self.scenario.as_ref().map(|s| &s.goal)
    }
}

#[cfg(test)]
mod tests;
