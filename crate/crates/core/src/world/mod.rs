//! Deterministic 2.5-D world: planar base dynamics with a commanded body height,
//! obstacles with vertical extents, multi-ring raycast LiDAR and moving agents.

mod dynamics;
pub mod geometry;
mod lidar;
pub mod scenario;

use serde::{Deserialize, Serialize};

pub use dynamics::{step_dynamics, BodyLimits, RobotBody};
pub use geometry::{Rect, Shape, Vec2};
pub use lidar::{raycast, LidarConfig, LidarScan};
pub use scenario::{Goal, Scenario, SuccessRule};

use geometry::v2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleKind {
    Pillar,
    Slab,
    Wall,
    Agent,
}

/// Closed waypoint loop traversed at constant speed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Motion {
    pub waypoints: Vec<[f64; 2]>,
    pub speed: f64,
    /// Arc length at `t = 0`.
    #[serde(default)]
    pub phase: f64,
}

impl Motion {
    /// Perimeter of the closed loop (the last waypoint connects back to the first).
    pub fn loop_length(&self) -> f64 {
        let n = self.waypoints.len();
        (0..n)
            .map(|i| (v2(self.waypoints[(i + 1) % n]) - v2(self.waypoints[i])).norm())
            .sum()
    }

    pub fn period(&self) -> f64 {
        self.loop_length() / self.speed
    }

    /// Position and velocity after travelling `arc` metres along the loop.
    pub fn sample(&self, arc: f64) -> (Vec2, Vec2) {
        let n = self.waypoints.len();
        let total = self.loop_length();
        if n < 2 || total <= 0.0 {
            return (v2(self.waypoints[0]), Vec2::zeros());
        }
        let mut s = arc.rem_euclid(total);
        for i in 0..n {
            let a = v2(self.waypoints[i]);
            let b = v2(self.waypoints[(i + 1) % n]);
            let len = (b - a).norm();
            if len <= 0.0 {
                continue;
            }
            if s <= len || i + 1 == n {
                let dir = (b - a) / len;
                return (a + dir * s.min(len), dir * self.speed);
            }
            s -= len;
        }
        unreachable!("arc length within loop")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub kind: ObstacleKind,
    pub shape: Shape,
    /// Vertical extent `[z_lo, z_hi]` in metres above ground.
    pub z_range: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion: Option<Motion>,
}

impl Obstacle {
    /// True when the obstacle's vertical extent intersects `[lo, hi]`.
    pub fn overlaps_band(&self, lo: f64, hi: f64) -> bool {
        self.z_range[0] < hi && self.z_range[1] > lo
    }

    pub fn contains_height(&self, z: f64) -> bool {
        z >= self.z_range[0] && z <= self.z_range[1]
    }
}

/// Live obstacle: its spec plus current footprint and velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct ObstacleState {
    pub spec: Obstacle,
    pub shape: Shape,
    pub velocity: Vec2,
}

/// Nearest obstacle (or boundary wall) to the robot centre.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Clearance {
    /// Centre-to-surface distance in metres.
    pub distance: f64,
    pub point: Vec2,
    pub velocity: Vec2,
    pub kind: ObstacleKind,
}

/// Mutable scenario state: bounds, obstacles and elapsed time.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub bounds: Rect,
    pub obstacles: Vec<ObstacleState>,
    pub time: f64,
}

impl WorldState {
    pub fn new(bounds: Rect, obstacles: Vec<Obstacle>) -> Self {
        let mut w = Self {
            bounds,
            obstacles: obstacles
                .into_iter()
                .map(|spec| ObstacleState {
                    shape: spec.shape,
                    velocity: Vec2::zeros(),
                    spec,
                })
                .collect(),
            time: 0.0,
        };
        w.place_agents();
        w
    }

    fn place_agents(&mut self) {
        let t = self.time;
        for o in &mut self.obstacles {
            if let Some(m) = &o.spec.motion {
                let (pos, vel) = m.sample(m.phase + m.speed * t);
                o.shape = o.spec.shape.with_center(pos);
                o.velocity = vel;
            }
        }
    }

    /// Moves every agent along its loop by `dt` seconds. Positions are computed from
    /// elapsed time, so repeated stepping never accumulates drift.
    pub fn advance_agents(&mut self, dt: f64) {
        self.time += dt;
        self.place_agents();
    }

    /// Obstacles whose vertical extent intersects the body band `[0, height]`.
    pub fn body_obstacles(&self, height: f64) -> impl Iterator<Item = &ObstacleState> {
        self.obstacles
            .iter()
            .filter(move |o| o.spec.overlaps_band(0.0, height))
    }

    /// Robot disc (radius `radius`) intersects an obstacle in its body band or leaves the bounds.
    pub fn collision_check(&self, robot: &RobotBody, radius: f64) -> bool {
        let p = robot.position();
        if self.bounds.interior_clearance(p) < radius {
            return true;
        }
        self.body_obstacles(robot.height)
            .any(|o| o.shape.signed_distance(p) < radius)
    }

    /// Exact nearest obstacle in the body band, boundary walls included.
    pub fn clearance(&self, robot: &RobotBody) -> Clearance {
        let p = robot.position();
        let mut best = Clearance {
            distance: self.bounds.interior_clearance(p),
            point: self.bounds.nearest_edge_point(p),
            velocity: Vec2::zeros(),
            kind: ObstacleKind::Wall,
        };
        for o in self.body_obstacles(robot.height) {
            let d = o.shape.signed_distance(p);
            if d < best.distance {
                best = Clearance {
                    distance: d,
                    point: o.shape.closest_point(p),
                    velocity: o.velocity,
                    kind: o.spec.kind,
                };
            }
        }
        best
    }

    /// Centre-to-surface distance to the nearest agent-kind obstacle, if any exist.
    pub fn nearest_agent_distance(&self, robot: &RobotBody) -> Option<f64> {
        let p = robot.position();
        self.obstacles
            .iter()
            .filter(|o| o.spec.kind == ObstacleKind::Agent)
            .map(|o| o.shape.signed_distance(p))
            .min_by(f64::total_cmp)
    }

    /// For each of 8 yaw-aligned 45-degree sectors (sector 0 straight ahead, counter-
    /// clockwise): surface-to-surface distance to the nearest obstacle whose nearest
    /// point falls in the sector, and the rate at which that gap is closing.
    /// Empty sectors report `(max_range, 0)`.
    pub fn privileged_obstacle_info(&self, robot: &RobotBody, radius: f64, max_range: f64) -> [[f64; 2]; 8] {
        let p = robot.position();
        let rv = robot.velocity();
        let mut out = [[max_range, 0.0]; 8];
        let mut consider = |point: Vec2, vel: Vec2| {
            let rel = point - p;
            let dist = rel.norm();
            let gap = (dist - radius).min(max_range);
            let angle = geometry::wrap_angle(rel.y.atan2(rel.x) - robot.yaw);
            let sector = ((angle + std::f64::consts::PI / 8.0).rem_euclid(std::f64::consts::TAU)
                / (std::f64::consts::PI / 4.0)) as usize
                % 8;
            if gap < out[sector][0] {
                let closing = if dist > 1e-12 { (rv - vel).dot(&(rel / dist)) } else { 0.0 };
                out[sector] = [gap, closing];
            }
        };
        for o in self.body_obstacles(robot.height) {
            consider(o.shape.closest_point(p), o.velocity);
        }
        for edge in [
            Vec2::new(self.bounds.min[0], p.y),
            Vec2::new(self.bounds.max[0], p.y),
            Vec2::new(p.x, self.bounds.min[1]),
            Vec2::new(p.x, self.bounds.max[1]),
        ] {
            consider(edge, Vec2::zeros());
        }
        out
    }
}
