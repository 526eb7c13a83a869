use serde::{Deserialize, Serialize};

use super::geometry::{rotate, wrap_angle, Vec2};
use crate::error::{Error, Result};

/// Physical limits of the planar base proxy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BodyLimits {
    pub radius: f64,
    pub v_max: f64,
    pub omega_max: f64,
    pub h_min: f64,
    pub h_max: f64,
    /// Bounds on `(a_x, a_y, alpha_z, height_rate)`.
    pub accel_max: f64,
    pub alpha_max: f64,
    pub height_rate_max: f64,
}

impl Default for BodyLimits {
    fn default() -> Self {
        Self {
            radius: 0.3,
            v_max: 1.5,
            omega_max: 2.0,
            h_min: 0.4,
            h_max: 0.8,
            accel_max: 2.0,
            alpha_max: 2.0,
            height_rate_max: 0.5,
        }
    }
}

impl BodyLimits {
    pub fn action_bounds(&self) -> [f64; 4] {
        [self.accel_max, self.accel_max, self.alpha_max, self.height_rate_max]
    }

    /// Number of action components outside their bounds (the reserved slot is ignored).
    pub fn count_violations(&self, action: &[f64; 5]) -> usize {
        self.action_bounds()
            .iter()
            .zip(action)
            .filter(|(b, a)| a.abs() > **b)
            .count()
    }
}

/// Planar base state plus commanded body height. Velocity and acceleration are world-frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotBody {
    pub p: [f64; 2],
    pub v: [f64; 2],
    pub yaw: f64,
    pub omega_z: f64,
    pub height: f64,
    /// World-frame planar acceleration applied on the last step.
    pub accel_cmd: [f64; 2],
    /// Height rate applied on the last step.
    pub height_rate: f64,
}

impl RobotBody {
    pub fn at_rest(p: [f64; 2], yaw: f64, height: f64) -> Self {
        Self {
            p,
            v: [0.0, 0.0],
            yaw,
            omega_z: 0.0,
            height,
            accel_cmd: [0.0, 0.0],
            height_rate: 0.0,
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.p[0], self.p[1])
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::new(self.v[0], self.v[1])
    }

    pub fn heading(&self) -> Vec2 {
        Vec2::new(self.yaw.cos(), self.yaw.sin())
    }

    pub fn body_velocity(&self) -> Vec2 {
        rotate(self.velocity(), -self.yaw)
    }

    pub fn body_accel(&self) -> Vec2 {
        rotate(Vec2::new(self.accel_cmd[0], self.accel_cmd[1]), -self.yaw)
    }
}

/// Semi-implicit Euler step. `action = (a_x, a_y, alpha_z, height_rate, reserved)` with
/// planar acceleration in the body frame; each component is clamped to its bound first.
/// Speed, yaw rate and height are clamped after their own integration.
pub fn step_dynamics(robot: &RobotBody, action: &[f64; 5], dt: f64, limits: &BodyLimits) -> Result<RobotBody> {
    if let Some(i) = action.iter().position(|a| !a.is_finite()) {
        return Err(Error::numerical(format!("non-finite action component {i}")));
    }
    let [amax, amax_y, alpha_max, hr_max] = limits.action_bounds();
    let a_body = Vec2::new(action[0].clamp(-amax, amax), action[1].clamp(-amax_y, amax_y));
    let alpha = action[2].clamp(-alpha_max, alpha_max);
    let height_rate = action[3].clamp(-hr_max, hr_max);

    let a_world = rotate(a_body, robot.yaw);
    let mut v = robot.velocity() + a_world * dt;
    let speed = v.norm();
    if speed > limits.v_max {
        v *= limits.v_max / speed;
    }
    let p = robot.position() + v * dt;

    let omega = (robot.omega_z + alpha * dt).clamp(-limits.omega_max, limits.omega_max);
    let yaw = wrap_angle(robot.yaw + omega * dt);
    let height = (robot.height + height_rate * dt).clamp(limits.h_min, limits.h_max);

    Ok(RobotBody {
        p: [p.x, p.y],
        v: [v.x, v.y],
        yaw,
        omega_z: omega,
        height,
        accel_cmd: [a_world.x, a_world.y],
        height_rate,
    })
}
