use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

pub type Vec2 = Vector2<f64>;

pub fn v2(p: [f64; 2]) -> Vec2 {
    Vec2::new(p[0], p[1])
}

/// Axis-aligned rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min[0] && p.x <= self.max[0] && p.y >= self.min[1] && p.y <= self.max[1]
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(0.5 * (self.min[0] + self.max[0]), 0.5 * (self.min[1] + self.max[1]))
    }

    pub fn half_extents(&self) -> Vec2 {
        Vec2::new(0.5 * (self.max[0] - self.min[0]), 0.5 * (self.max[1] - self.min[1]))
    }

    /// Distance from an interior point to the nearest edge (negative outside).
    pub fn interior_clearance(&self, p: Vec2) -> f64 {
        (p.x - self.min[0])
            .min(self.max[0] - p.x)
            .min(p.y - self.min[1])
            .min(self.max[1] - p.y)
    }

    /// Closest boundary point to an interior point.
    pub fn nearest_edge_point(&self, p: Vec2) -> Vec2 {
        let cands = [
            (p.x - self.min[0], Vec2::new(self.min[0], p.y)),
            (self.max[0] - p.x, Vec2::new(self.max[0], p.y)),
            (p.y - self.min[1], Vec2::new(p.x, self.min[1])),
            (self.max[1] - p.y, Vec2::new(p.x, self.max[1])),
        ];
        cands
            .iter()
            .fold(cands[0], |best, c| if c.0 < best.0 { *c } else { best })
            .1
    }

    /// Distance along `dir` from an interior `origin` to the boundary.
    pub fn exit_distance(&self, origin: Vec2, dir: Vec2) -> f64 {
        let mut t = f64::INFINITY;
        for axis in 0..2 {
            let d = dir[axis];
            if d > 1e-15 {
                t = t.min((self.max[axis] - origin[axis]) / d);
            } else if d < -1e-15 {
                t = t.min((self.min[axis] - origin[axis]) / d);
            }
        }
        t.max(0.0)
    }
}

/// Obstacle footprint in the plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Circle { center: [f64; 2], radius: f64 },
    Rect(Rect),
}

impl Shape {
    pub fn translated(&self, offset: Vec2) -> Shape {
        match *self {
            Shape::Circle { center, radius } => Shape::Circle {
                center: [center[0] + offset.x, center[1] + offset.y],
                radius,
            },
            Shape::Rect(r) => Shape::Rect(Rect {
                min: [r.min[0] + offset.x, r.min[1] + offset.y],
                max: [r.max[0] + offset.x, r.max[1] + offset.y],
            }),
        }
    }

    pub fn with_center(&self, c: Vec2) -> Shape {
        self.translated(c - self.center())
    }

    pub fn center(&self) -> Vec2 {
        match self {
            Shape::Circle { center, .. } => v2(*center),
            Shape::Rect(r) => r.center(),
        }
    }

    /// Signed distance from `p` to the boundary, negative inside.
    pub fn signed_distance(&self, p: Vec2) -> f64 {
        match self {
            Shape::Circle { center, radius } => (p - v2(*center)).norm() - radius,
            Shape::Rect(r) => {
                let q = (p - r.center()).abs() - r.half_extents();
                let outside = Vec2::new(q.x.max(0.0), q.y.max(0.0)).norm();
                let inside = q.x.max(q.y).min(0.0);
                outside + inside
            }
        }
    }

    /// Boundary point closest to `p`.
    pub fn closest_point(&self, p: Vec2) -> Vec2 {
        match self {
            Shape::Circle { center, radius } => {
                let c = v2(*center);
                let d = p - c;
                let n = d.norm();
                if n < 1e-12 {
                    c + Vec2::new(*radius, 0.0)
                } else {
                    c + d * (radius / n)
                }
            }
            Shape::Rect(r) => {
                if r.contains(p) {
                    r.nearest_edge_point(p)
                } else {
                    Vec2::new(p.x.clamp(r.min[0], r.max[0]), p.y.clamp(r.min[1], r.max[1]))
                }
            }
        }
    }

    /// First boundary crossing along a unit ray; `Some(0.0)` when the origin is inside.
    pub fn ray_hit(&self, origin: Vec2, dir: Vec2) -> Option<f64> {
        match self {
            Shape::Circle { center, radius } => {
                let f = origin - v2(*center);
                let b = f.dot(&dir);
                let c = f.dot(&f) - radius * radius;
                if c <= 0.0 {
                    return Some(0.0);
                }
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let t = -b - disc.sqrt();
                (t >= 0.0).then_some(t)
            }
            Shape::Rect(r) => {
                if r.contains(origin) {
                    return Some(0.0);
                }
                let mut tmin = f64::NEG_INFINITY;
                let mut tmax = f64::INFINITY;
                for axis in 0..2 {
                    let o = origin[axis];
                    let d = dir[axis];
                    if d.abs() < 1e-15 {
                        if o < r.min[axis] || o > r.max[axis] {
                            return None;
                        }
                    } else {
                        let t1 = (r.min[axis] - o) / d;
                        let t2 = (r.max[axis] - o) / d;
                        tmin = tmin.max(t1.min(t2));
                        tmax = tmax.min(t1.max(t2));
                    }
                }
                (tmax >= tmin && tmin >= 0.0).then_some(tmin)
            }
        }
    }
}

pub fn rotate(v: Vec2, angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    if a > -PI && a <= PI {
        return a;
    }
    let x = a.rem_euclid(TAU);
    if x > PI {
        x - TAU
    } else {
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_ray_and_distance() {
        let c = Shape::Circle {
            center: [2.0, 0.0],
            radius: 0.5,
        };
        let t = c.ray_hit(Vec2::zeros(), Vec2::new(1.0, 0.0)).unwrap();
        assert!((t - 1.5).abs() < 1e-12);
        assert!(c.ray_hit(Vec2::zeros(), Vec2::new(0.0, 1.0)).is_none());
        assert!(c.ray_hit(Vec2::zeros(), Vec2::new(-1.0, 0.0)).is_none());
        assert!((c.signed_distance(Vec2::zeros()) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn rect_sdf_inside_and_outside() {
        let r = Shape::Rect(Rect::new([0.0, 0.0], [2.0, 1.0]));
        assert!((r.signed_distance(Vec2::new(3.0, 0.5)) - 1.0).abs() < 1e-12);
        assert!((r.signed_distance(Vec2::new(3.0, 2.0)) - 2f64.sqrt()).abs() < 1e-12);
        assert!((r.signed_distance(Vec2::new(1.0, 0.25)) + 0.25).abs() < 1e-12);
        let p = r.closest_point(Vec2::new(1.0, 0.25));
        assert!((p - Vec2::new(1.0, 0.0)).norm() < 1e-12);
        let t = r.ray_hit(Vec2::new(-1.0, 0.5), Vec2::new(1.0, 0.0)).unwrap();
        assert!((t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-15);
    }
}
