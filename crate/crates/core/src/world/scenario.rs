//! Scenario descriptions (JSON) and their seeded instantiation.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{v2, Rect, Shape, Vec2};
use super::{Motion, Obstacle, ObstacleKind, RobotBody, WorldState};
use crate::error::{Error, Result};

pub const BUILTIN_NAMES: [&str; 5] = [
    "suspended_obstacle",
    "narrow_passage",
    "cluttered_static",
    "dynamic_agents",
    "open_field",
];

const BUILTIN_JSON: [(&str, &str); 5] = [
    (
        "suspended_obstacle",
        include_str!("../../../../scenarios/suspended_obstacle.json"),
    ),
    (
        "narrow_passage",
        include_str!("../../../../scenarios/narrow_passage.json"),
    ),
    (
        "cluttered_static",
        include_str!("../../../../scenarios/cluttered_static.json"),
    ),
    (
        "dynamic_agents",
        include_str!("../../../../scenarios/dynamic_agents.json"),
    ),
    ("open_field", include_str!("../../../../scenarios/open_field.json")),
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartPose {
    pub position: [f64; 2],
    pub yaw: f64,
    pub height: f64,
    /// Uniform half-widths for `(x, y, yaw)` perturbations.
    #[serde(default)]
    pub jitter: [f64; 3],
}

/// One constant command held for `steps` control periods.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandSegment {
    pub steps: usize,
    /// `(v_x, v_y, omega_z)` in the world frame.
    pub command: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Goal {
    /// Reach `region` while following the world-frame `command`.
    Region { region: Rect, command: [f64; 3] },
    /// Follow a fixed command profile; the last segment holds until the episode ends.
    Profile { segments: Vec<CommandSegment> },
    /// Follow commands drawn by the environment's command sampler.
    Sampled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessRule {
    /// Reach the goal region without any collision.
    ReachGoal,
    /// Finish the episode without collision and with mean velocity-tracking error below
    /// the configured threshold.
    TrackCommands,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioObstacle {
    pub kind: ObstacleKind,
    pub shape: Shape,
    pub z_range: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion: Option<Motion>,
    /// Uniform half-widths of a per-episode translation.
    #[serde(default)]
    pub jitter: [f64; 2],
    /// Uniform `[0, x)` arc-length offset added to an agent's phase per episode.
    #[serde(default)]
    pub phase_jitter: f64,
    /// Present only at curriculum levels `>= min_level`.
    #[serde(default)]
    pub min_level: u8,
}

/// Randomly placed circular pillars with guaranteed pairwise gaps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PillarField {
    /// Pillar count per curriculum level.
    pub count: [usize; 3],
    pub region: Rect,
    pub radius: [f64; 2],
    /// Minimum surface-to-surface gap between pillars and to the start position.
    pub min_gap: f64,
    pub z_range: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub bounds: Rect,
    pub start: StartPose,
    pub goal: Goal,
    pub episode_length: usize,
    pub success_rule: SuccessRule,
    #[serde(default)]
    pub obstacles: Vec<ScenarioObstacle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_pillars: Option<PillarField>,
    /// Agent speed multiplier per curriculum level.
    #[serde(default = "default_speed_scale")]
    pub agent_speed_scale: [f64; 3],
}

fn default_speed_scale() -> [f64; 3] {
    [0.5, 0.75, 1.0]
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, half: f64) -> f64 {
    if half > 0.0 {
        rng.random_range(-half..=half)
    } else {
        0.0
    }
}

impl Scenario {
    pub fn builtin(name: &str) -> Result<Scenario> {
        let (_, text) = BUILTIN_JSON
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::MissingArtifact(format!("no built-in scenario `{name}`")))?;
        Self::from_json(text)
    }

    pub fn from_json(text: &str) -> Result<Scenario> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let s: Scenario = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::config_at(e.path().to_string(), e.inner().to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// Loads a scenario by file path, or by built-in name when no such file exists.
    pub fn load(name_or_path: &str) -> Result<Scenario> {
        let path = Path::new(name_or_path);
        if path.is_file() {
            Self::from_json(&std::fs::read_to_string(path)?)
        } else {
            Self::builtin(name_or_path)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, o) in self.obstacles.iter().enumerate() {
            if !(o.z_range[0] < o.z_range[1]) {
                return Err(Error::config_at(
                    format!("obstacles[{i}].z_range"),
                    "z_lo must be below z_hi",
                ));
            }
            if o.kind == ObstacleKind::Agent && o.motion.as_ref().map_or(true, |m| m.speed <= 0.0) {
                return Err(Error::config_at(
                    format!("obstacles[{i}].motion"),
                    "agents need a motion with positive speed",
                ));
            }
        }
        if self.episode_length == 0 {
            return Err(Error::config_at("episode_length", "must be positive"));
        }
        if !self.bounds.contains(v2(self.start.position)) {
            return Err(Error::config_at("start.position", "outside bounds"));
        }
        Ok(())
    }

    /// Command for control step `k` from a fixed goal or profile; `None` for sampled goals.
    pub fn command_at(&self, k: usize) -> Option<[f64; 3]> {
        match &self.goal {
            Goal::Region { command, .. } => Some(*command),
            Goal::Profile { segments } => {
                let mut acc = 0;
                for s in segments {
                    acc += s.steps;
                    if k < acc {
                        return Some(s.command);
                    }
                }
                segments.last().map(|s| s.command)
            }
            Goal::Sampled => None,
        }
    }

    pub fn goal_region(&self) -> Option<&Rect> {
        match &self.goal {
            Goal::Region { region, .. } => Some(region),
            _ => None,
        }
    }

    /// Builds the world and start pose for one episode. Every random draw comes from `rng`.
    pub fn instantiate<R: Rng + ?Sized>(&self, level: u8, rng: &mut R) -> (WorldState, RobotBody) {
        let level = level.min(2);
        let j = self.start.jitter;
        let start = RobotBody::at_rest(
            [
                self.start.position[0] + uniform(rng, j[0]),
                self.start.position[1] + uniform(rng, j[1]),
            ],
            self.start.yaw + uniform(rng, j[2]),
            self.start.height,
        );

        let speed_scale = self.agent_speed_scale[level as usize];
        let mut obstacles = Vec::new();
        for o in &self.obstacles {
            // Draw unconditionally so the sequence does not depend on the level.
            let offset = Vec2::new(uniform(rng, o.jitter[0]), uniform(rng, o.jitter[1]));
            let phase = if o.phase_jitter > 0.0 {
                rng.random_range(0.0..o.phase_jitter)
            } else {
                0.0
            };
            if o.min_level > level {
                continue;
            }
            let motion = o.motion.as_ref().map(|m| Motion {
                waypoints: m
                    .waypoints
                    .iter()
                    .map(|w| [w[0] + offset.x, w[1] + offset.y])
                    .collect(),
                speed: m.speed * speed_scale,
                phase: m.phase + phase,
            });
            obstacles.push(Obstacle {
                kind: o.kind,
                shape: o.shape.translated(offset),
                z_range: o.z_range,
                motion,
            });
        }

        if let Some(field) = &self.random_pillars {
            let count = field.count[level as usize];
            let mut placed: Vec<(Vec2, f64)> = Vec::with_capacity(count);
            let start_p = start.position();
            let mut attempts = 0;
            while placed.len() < count && attempts < 10_000 {
                attempts += 1;
                let r = rng.random_range(field.radius[0]..=field.radius[1]);
                let c = Vec2::new(
                    rng.random_range(field.region.min[0]..=field.region.max[0]),
                    rng.random_range(field.region.min[1]..=field.region.max[1]),
                );
                let clear_of_start = (c - start_p).norm() - r >= field.min_gap;
                let clear_of_others = placed
                    .iter()
                    .all(|(pc, pr)| (c - pc).norm() - r - pr >= field.min_gap);
                let clear_of_fixed = obstacles
                    .iter()
                    .all(|o| o.shape.signed_distance(c) - r >= field.min_gap);
                if clear_of_start && clear_of_others && clear_of_fixed {
                    placed.push((c, r));
                }
            }
            for (c, r) in placed {
                obstacles.push(Obstacle {
                    kind: ObstacleKind::Pillar,
                    shape: Shape::Circle {
                        center: [c.x, c.y],
                        radius: r,
                    },
                    z_range: field.z_range,
                    motion: None,
                });
            }
        }
        (WorldState::new(self.bounds, obstacles), start)
    }
}
