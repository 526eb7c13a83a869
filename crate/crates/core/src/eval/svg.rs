use std::fmt::Write as _;
use std::path::Path;

use super::Trajectory;
use crate::error::Result;
use crate::world::{ObstacleKind, Rect, Shape, WorldState};

const PX_PER_M: f64 = 60.0;
const MARGIN: f64 = 20.0;

pub fn mode_color(label: &str) -> &'static str {
    match label {
        "ppo_reward_shaping" => "#d62728",
        "p3o" => "#1f77b4",
        "p3o_cbf" => "#2ca02c",
        _ => "#7f7f7f",
    }
}

struct Frame {
    bounds: Rect,
}

impl Frame {
    fn x(&self, x: f64) -> f64 {
        MARGIN + (x - self.bounds.min[0]) * PX_PER_M
    }

    fn y(&self, y: f64) -> f64 {
        MARGIN + (self.bounds.max[1] - y) * PX_PER_M
    }

    fn width(&self) -> f64 {
        2.0 * MARGIN + (self.bounds.max[0] - self.bounds.min[0]) * PX_PER_M
    }

    fn height(&self) -> f64 {
        2.0 * MARGIN + (self.bounds.max[1] - self.bounds.min[1]) * PX_PER_M
    }
}

fn shape_element(f: &Frame, shape: &Shape, grow: f64, style: &str) -> String {
    match shape {
        Shape::Circle { center, radius } => format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{:.2}\" {style}/>",
            f.x(center[0]),
            f.y(center[1]),
            (radius + grow) * PX_PER_M
        ),
        Shape::Rect(r) => format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" rx=\"{:.2}\" {style}/>",
            f.x(r.min[0] - grow),
            f.y(r.max[1] + grow),
            (r.max[0] - r.min[0] + 2.0 * grow) * PX_PER_M,
            (r.max[1] - r.min[1] + 2.0 * grow) * PX_PER_M,
            grow * PX_PER_M
        ),
    }
}

/// Top-down plot: comfort and unsafe bands, obstacles, goal region and one polyline per
/// labelled trajectory.
pub fn render_svg(
    world: &WorldState,
    goal: Option<&Rect>,
    trajectories: &[(&str, &Trajectory)],
    unsafe_d: f64,
    comfort_d: f64,
) -> String {
    let f = Frame { bounds: world.bounds };
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0}\" height=\"{:.0}\" viewBox=\"0 0 {:.2} {:.2}\">",
        f.width(),
        f.height(),
        f.width(),
        f.height()
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let b = world.bounds;
    let _ = writeln!(
        s,
        "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"black\" stroke-width=\"2\"/>",
        f.x(b.min[0]),
        f.y(b.max[1]),
        (b.max[0] - b.min[0]) * PX_PER_M,
        (b.max[1] - b.min[1]) * PX_PER_M
    );
    if let Some(g) = goal {
        let _ = writeln!(
            s,
            "{}",
            shape_element(&f, &Shape::Rect(*g), 0.0, "fill=\"#e5f5e0\" stroke=\"#31a354\" stroke-dasharray=\"4 3\"")
        );
    }
    let _ = writeln!(s, "<g id=\"bands\">");
    for o in &world.obstacles {
        let _ = writeln!(s, "{}", shape_element(&f, &o.shape, comfort_d, "fill=\"#fff3c4\" stroke=\"none\""));
    }
    for o in &world.obstacles {
        let _ = writeln!(s, "{}", shape_element(&f, &o.shape, unsafe_d, "fill=\"#fdd0c8\" stroke=\"none\""));
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, "<g id=\"obstacles\">");
    for o in &world.obstacles {
        let style = match o.spec.kind {
            ObstacleKind::Slab => "fill=\"#bdbdbd\" fill-opacity=\"0.5\" stroke=\"#636363\" stroke-dasharray=\"6 3\"",
            ObstacleKind::Agent => "fill=\"#9e9ac8\" stroke=\"#54278f\"",
            _ => "fill=\"#636363\" stroke=\"black\"",
        };
        let _ = writeln!(s, "{}", shape_element(&f, &o.shape, 0.0, style));
        if let Some(m) = &o.spec.motion {
            let pts: Vec<String> = m
                .waypoints
                .iter()
                .map(|p| format!("{:.2},{:.2}", f.x(p[0]), f.y(p[1])))
                .collect();
            let _ = writeln!(
                s,
                "<polygon points=\"{}\" fill=\"none\" stroke=\"#54278f\" stroke-dasharray=\"2 4\"/>",
                pts.join(" ")
            );
        }
    }
    let _ = writeln!(s, "</g>");
    for (i, (label, traj)) in trajectories.iter().enumerate() {
        let color = mode_color(label);
        let pts: Vec<String> = traj
            .steps
            .iter()
            .map(|p| format!("{:.2},{:.2}", f.x(p.x), f.y(p.y)))
            .collect();
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2.5\"><title>{label}</title></polyline>",
            pts.join(" ")
        );
        if let Some(last) = traj.steps.last() {
            let marker = if last.collision { "x" } else { "o" };
            let _ = writeln!(
                s,
                "<text x=\"{:.2}\" y=\"{:.2}\" fill=\"{color}\" font-size=\"14\" text-anchor=\"middle\">{marker}</text>",
                f.x(last.x),
                f.y(last.y) + 5.0
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" fill=\"{color}\" font-family=\"sans-serif\" font-size=\"13\">{label}</text>",
            MARGIN + 6.0,
            MARGIN + 16.0 + 16.0 * i as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn emit_trajectory_svg(
    path: &Path,
    world: &WorldState,
    goal: Option<&Rect>,
    trajectories: &[(&str, &Trajectory)],
    unsafe_d: f64,
    comfort_d: f64,
) -> Result<()> {
    std::fs::write(path, render_svg(world, goal, trajectories, unsafe_d, comfort_d))?;
    Ok(())
}
