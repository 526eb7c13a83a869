//! Discrete-time control barrier on the LiDAR-derived obstacle distance: barrier value,
//! one-step constraint, hinge cost and a closed-form projection used as a test oracle.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::geometry::rotate;
use crate::world::{LidarConfig, LidarScan, RobotBody, Vec2};

/// `(p_x, p_y, v_x, v_y)`, world frame.
pub type State = Vector4<f64>;
/// World-frame planar acceleration.
pub type Control = Vector2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalEstimation {
    /// Normal from the single nearest return.
    Nearest,
    /// Normal of a least-squares line through the nearest return's azimuth neighbours.
    PlaneFitK,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CbfConfig {
    pub gamma_cbf: f64,
    pub d_min: f64,
    pub normal_estimation: NormalEstimation,
    /// Neighbourhood size for `plane_fit_k`.
    pub plane_fit_k: usize,
}

impl Default for CbfConfig {
    fn default() -> Self {
        Self {
            gamma_cbf: 0.6,
            d_min: 0.8,
            normal_estimation: NormalEstimation::Nearest,
            plane_fit_k: 5,
        }
    }
}

impl CbfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_cbf > 0.0 && self.gamma_cbf <= 1.0) {
            return Err(Error::config_at("cbf.gamma_cbf", "must lie in (0, 1]"));
        }
        if !(self.d_min >= 0.0) {
            return Err(Error::config_at("cbf.d_min", "must be non-negative"));
        }
        if self.normal_estimation == NormalEstimation::PlaneFitK && self.plane_fit_k < 2 {
            return Err(Error::config_at("cbf.plane_fit_k", "needs at least 2 points"));
        }
        Ok(())
    }
}

/// `s' = A s + B u` with `p(s) = P s`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub a: Matrix4<f64>,
    pub b: Matrix4x2<f64>,
    pub position_selector: Matrix2x4<f64>,
    pub dt: f64,
}

impl LinearModel {
    /// Planar double integrator matching the simulator's semi-implicit Euler step:
    /// `v' = v + u dt`, `p' = p + v' dt`.
    pub fn double_integrator(dt: f64) -> Self {
        assert!(dt > 0.0, "dt must be positive");
        #[rustfmt::skip]
        let a = Matrix4::new(
            1.0, 0.0, dt, 0.0,
            0.0, 1.0, 0.0, dt,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        );
        let dt2 = dt * dt;
        #[rustfmt::skip]
        let b = Matrix4x2::new(
            dt2, 0.0,
            0.0, dt2,
            dt, 0.0,
            0.0, dt,
        );
        #[rustfmt::skip]
        let position_selector = Matrix2x4::new(
            1.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
        );
        Self {
            a,
            b,
            position_selector,
            dt,
        }
    }

    pub fn state_of(robot: &RobotBody) -> State {
        Vector4::new(robot.p[0], robot.p[1], robot.v[0], robot.v[1])
    }

    pub fn predict(&self, state: &State, control: &Control) -> State {
        self.a * state + self.b * control
    }

    pub fn position(&self, state: &State) -> Vec2 {
        self.position_selector * state
    }
}

/// Local half-plane barrier `h = eta . (p - o) - d_min`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarrierEval {
    pub h: f64,
    pub o: Vec2,
    pub eta: Vec2,
    pub d_min: f64,
    /// False for the no-return sentinel.
    pub active: bool,
}

impl BarrierEval {
    /// Barrier from an obstacle point. A robot sitting on `o` takes its reversed
    /// heading as the normal and `h = -d_min`.
    pub fn from_point(p: Vec2, o: Vec2, heading: Vec2, d_min: f64) -> Self {
        let rel = p - o;
        let dist = rel.norm();
        if dist <= 1e-12 {
            return Self {
                h: -d_min,
                o,
                eta: -heading.normalize(),
                d_min,
                active: true,
            };
        }
        let eta = rel / dist;
        Self {
            h: eta.dot(&rel) - d_min,
            o,
            eta,
            d_min,
            active: true,
        }
    }

    /// Barrier with an explicit normal; `h` follows the definition exactly.
    pub fn with_normal(p: Vec2, o: Vec2, eta: Vec2, d_min: f64) -> Self {
        let eta = eta.normalize();
        Self {
            h: eta.dot(&(p - o)) - d_min,
            o,
            eta,
            d_min,
            active: true,
        }
    }

    /// No return in range: a virtual point straight ahead at `max_range + d_min`, so
    /// `h = max_range`.
    pub fn sentinel(p: Vec2, heading: Vec2, d_min: f64, max_range: f64) -> Self {
        let heading = heading.normalize();
        let o = p + heading * (max_range + d_min);
        let eta = -heading;
        Self {
            h: eta.dot(&(p - o)) - d_min,
            o,
            eta,
            d_min,
            active: false,
        }
    }

    /// Barrier value at planar position `p` with this hyperplane held fixed.
    pub fn eval_at(&self, p: Vec2) -> f64 {
        self.eta.dot(&(p - self.o)) - self.d_min
    }
}

/// Nearest return among rings whose band overlaps the body band `[0, height]`.
/// Ties go to the lowest azimuth index, then the lowest ring index.
pub fn nearest_obstacle(scan: &LidarScan, robot: &RobotBody, lidar: &LidarConfig, cfg: &CbfConfig) -> BarrierEval {
    let p = robot.position();
    let rings = lidar.body_rings(robot.height);
    let mut best: Option<(usize, usize, f64)> = None;
    for az in 0..scan.n_azimuth {
        for &ring in &rings {
            if !scan.is_return(ring, az) {
                continue;
            }
            let r = scan.range(ring, az);
            if best.is_none_or(|(_, _, b)| r < b) {
                best = Some((ring, az, r));
            }
        }
    }
    let Some((ring, az, r)) = best else {
        return BarrierEval::sentinel(p, robot.heading(), cfg.d_min, scan.max_range);
    };
    let endpoint = |az: usize, r: f64| p + rotate(Vec2::new(r, 0.0), robot.yaw + lidar.azimuth(az));
    let o = endpoint(az, r);
    let nearest = BarrierEval::from_point(p, o, robot.heading(), cfg.d_min);
    if cfg.normal_estimation == NormalEstimation::Nearest {
        return nearest;
    }

    let n = scan.n_azimuth as isize;
    let half = (cfg.plane_fit_k / 2) as isize;
    let pts: Vec<Vec2> = (-half..=half)
        .map(|d| (az as isize + d).rem_euclid(n) as usize)
        .filter(|&j| scan.is_return(ring, j))
        .map(|j| endpoint(j, scan.range(ring, j)))
        .take(cfg.plane_fit_k)
        .collect();
    match fit_normal(&pts) {
        Some(normal) => {
            let oriented = if normal.dot(&(p - o)) < 0.0 { -normal } else { normal };
            if oriented.dot(&nearest.eta) <= 1e-6 {
                nearest
            } else {
                BarrierEval::with_normal(p, o, oriented, cfg.d_min)
            }
        }
        None => nearest,
    }
}

/// Unit normal of the total-least-squares line through `pts`.
fn fit_normal(pts: &[Vec2]) -> Option<Vec2> {
    if pts.len() < 2 {
        return None;
    }
    let c = pts.iter().sum::<Vec2>() / pts.len() as f64;
    let mut cov = Matrix2::zeros();
    for q in pts {
        let d = q - c;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let (small, large) = if eig.eigenvalues[0] <= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    if eig.eigenvalues[large] <= 1e-12 {
        return None;
    }
    let n: Vec2 = eig.eigenvectors.column(small).into_owned();
    Some(n.normalize())
}

/// One-step barrier condition `h(A s + B u) - (1 - gamma) h(s)` with `(o, eta)` frozen.
/// Affine in `u`.
pub fn g_d(model: &LinearModel, cfg: &CbfConfig, barrier: &BarrierEval, state: &State, control: &Control) -> f64 {
    let h_now = barrier.eval_at(model.position(state));
    let h_next = barrier.eval_at(model.position(&model.predict(state, control)));
    h_next - (1.0 - cfg.gamma_cbf) * h_now
}

/// `max(0, -g_d)`.
pub fn cbf_cost(model: &LinearModel, cfg: &CbfConfig, barrier: &BarrierEval, state: &State, control: &Control) -> f64 {
    (-g_d(model, cfg, barrier, state, control)).max(0.0)
}

/// Discrete forward-invariance condition `h_next + (gamma - 1) h_curr >= 0`.
pub fn dcbf_check(h_next: f64, h_curr: f64, gamma_cbf: f64) -> bool {
    h_next + (gamma_cbf - 1.0) * h_curr >= 0.0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub control: Control,
    /// `g_d` does not depend on the control, so nothing could be corrected.
    pub unconstrainable: bool,
}

/// Minimal-norm correction of `desired` onto the half-space `g_d >= 0`.
pub fn safe_projection(
    model: &LinearModel,
    cfg: &CbfConfig,
    barrier: &BarrierEval,
    state: &State,
    desired: &Control,
) -> Projection {
    // g_d(u) = a . u + b
    let a: Control = (barrier.eta.transpose() * model.position_selector * model.b).transpose();
    let g = g_d(model, cfg, barrier, state, desired);
    if a.norm_squared() <= 1e-300 {
        return Projection {
            control: *desired,
            unconstrainable: true,
        };
    }
    if g >= 0.0 {
        return Projection {
            control: *desired,
            unconstrainable: false,
        };
    }
    Projection {
        control: desired + a * (-g / a.norm_squared()),
        unconstrainable: false,
    }
}
