use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::geometry::{rotate, Vec2};
use super::{RobotBody, WorldState};
use crate::error::{Error, Result};

/// Smallest range a return may report after noise.
pub const MIN_RANGE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LidarConfig {
    pub n_azimuth: usize,
    /// Ray heights above ground, lowest first.
    pub elevation_rings: Vec<f64>,
    pub max_range: f64,
    pub range_noise_std: f64,
    /// Per-episode mounting yaw error drawn uniformly from `[-x, x]` degrees.
    pub yaw_offset_max_deg: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            n_azimuth: 64,
            elevation_rings: vec![0.15, 0.45, 0.75],
            max_range: 10.0,
            range_noise_std: 0.01,
            yaw_offset_max_deg: 2.0,
        }
    }
}

impl LidarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_azimuth < 8 {
            return Err(Error::config_at("env.lidar.n_azimuth", "must be at least 8"));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::config_at("env.lidar.max_range", "must be positive"));
        }
        if self.elevation_rings.is_empty() || self.elevation_rings.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config_at(
                "env.lidar.elevation_rings",
                "must be non-empty and strictly increasing",
            ));
        }
        if self.range_noise_std < 0.0 {
            return Err(Error::config_at("env.lidar.range_noise_std", "must be non-negative"));
        }
        Ok(())
    }

    pub fn n_rings(&self) -> usize {
        self.elevation_rings.len()
    }

    pub fn n_rays(&self) -> usize {
        self.n_azimuth * self.n_rings()
    }

    /// Angle of azimuth bin `i` relative to the sensor heading.
    pub fn azimuth(&self, i: usize) -> f64 {
        std::f64::consts::TAU * i as f64 / self.n_azimuth as f64
    }

    /// Vertical band each ring stands for: halfway to its neighbours, the lowest ring
    /// reaching the ground and the top ring extending symmetrically upward.
    pub fn ring_bands(&self) -> Vec<(f64, f64)> {
        let z = &self.elevation_rings;
        let n = z.len();
        (0..n)
            .map(|i| {
                let half_below = if i > 0 { 0.5 * (z[i] - z[i - 1]) } else { f64::NAN };
                let half_above = if i + 1 < n { 0.5 * (z[i + 1] - z[i]) } else { f64::NAN };
                let lo = if i == 0 { 0.0 } else { z[i] - half_below };
                let hi = if i + 1 == n {
                    if n == 1 {
                        f64::INFINITY
                    } else {
                        z[i] + half_below
                    }
                } else {
                    z[i] + half_above
                };
                (lo, hi)
            })
            .collect()
    }

    /// Rings whose band reaches into the body band `[0, height]`.
    pub fn body_rings(&self, height: f64) -> Vec<usize> {
        self.ring_bands()
            .iter()
            .enumerate()
            .filter(|(_, (lo, _))| *lo < height)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Ranges laid out ring-major: `ranges[ring * n_azimuth + azimuth]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LidarScan {
    pub ranges: Vec<f64>,
    pub n_azimuth: usize,
    pub n_rings: usize,
    pub max_range: f64,
}

impl LidarScan {
    pub fn range(&self, ring: usize, azimuth: usize) -> f64 {
        self.ranges[ring * self.n_azimuth + azimuth]
    }

    /// A return is finite when something was hit inside `max_range`.
    pub fn is_return(&self, ring: usize, azimuth: usize) -> bool {
        self.range(ring, azimuth) < self.max_range
    }

    /// Replaces every range in `ring` with `max_range` (no return).
    pub fn mask_ring(&mut self, ring: usize) {
        let n = self.n_azimuth;
        self.ranges[ring * n..(ring + 1) * n].fill(self.max_range);
    }
}

/// Casts every ray of the ring layout from the robot centre. Each ray sees obstacles
/// whose vertical extent contains the ring height plus the boundary walls. Gaussian
/// noise is added to hits, then ranges are clamped into `(0, max_range]`.
pub fn raycast<R: Rng + ?Sized>(
    world: &WorldState,
    robot: &RobotBody,
    cfg: &LidarConfig,
    yaw_offset: f64,
    rng: &mut R,
) -> LidarScan {
    let origin = robot.position();
    let noise = (cfg.range_noise_std > 0.0)
        .then(|| Normal::new(0.0, cfg.range_noise_std).expect("validated noise std"));
    let mut ranges = Vec::with_capacity(cfg.n_rays());
    let dirs: Vec<Vec2> = (0..cfg.n_azimuth)
        .map(|i| rotate(Vec2::new(1.0, 0.0), robot.yaw + yaw_offset + cfg.azimuth(i)))
        .collect();
    for &z in &cfg.elevation_rings {
        let visible: Vec<_> = world
            .obstacles
            .iter()
            .filter(|o| o.spec.contains_height(z))
            .collect();
        for dir in &dirs {
            let mut t = world.bounds.exit_distance(origin, *dir);
            for o in &visible {
                if let Some(hit) = o.shape.ray_hit(origin, *dir) {
                    t = t.min(hit);
                }
            }
            let r = if t < cfg.max_range {
                let n = noise.as_ref().map_or(0.0, |d| d.sample(rng));
                (t + n).clamp(MIN_RANGE, cfg.max_range)
            } else {
                cfg.max_range
            };
            ranges.push(r);
        }
    }
    LidarScan {
        ranges,
        n_azimuth: cfg.n_azimuth,
        n_rings: cfg.n_rings(),
        max_range: cfg.max_range,
    }
}
