use std::fmt::Write as _;
use std::path::Path;

use crate::env::WorldSpec;
use crate::error::{Result, SteapError};
use crate::runtime::RunRecord;
use crate::state::{MobileConfig, Trajectory};

pub const GROUND_TRUTH_COLOR: &str = "green";
pub const ESTIMATE_COLOR: &str = "red";
pub const PLAN_COLOR: &str = "blue";

/// Pixels per meter.
const SCALE: f64 = 20.0;

struct Canvas {
    width: f64,
    height: f64,
    origin: [f64; 2],
}

impl Canvas {
    fn new(world: &WorldSpec) -> Self {
        Self {
            width: world.extent[0] * SCALE,
            height: world.extent[1] * SCALE,
            origin: [-0.5 * world.extent[0], -0.5 * world.extent[1]],
        }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.origin[0]) * SCALE, self.height - (y - self.origin[1]) * SCALE)
    }

    fn point(&self, c: &MobileConfig) -> (f64, f64) {
        let b = c.base_or_identity();
        self.map(b.x, b.y)
    }
}

fn polyline(out: &mut String, canvas: &Canvas, traj: &Trajectory, color: &str, class: &str) {
    let pts: Vec<String> = traj
        .states
        .iter()
        .map(|s| {
            let (x, y) = canvas.point(&s.config);
            format!("{x:.3},{y:.3}")
        })
        .collect();
    let _ = writeln!(
        out,
        r#"  <polyline class="{class}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
        pts.join(" ")
    );
}

/// Standalone SVG with obstacles, ground truth, final estimate and the plan held after `step`.
///
/// `step` 0 draws the initial plan; it is clamped to the last recorded plan.
pub fn render_svg(record: &RunRecord, step: usize) -> String {
    let canvas = Canvas::new(&record.world);
    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#,
        w = canvas.width,
        h = canvas.height
    );
    let _ = writeln!(
        out,
        r#"  <rect class="background" x="0" y="0" width="{:.0}" height="{:.0}" fill="white" stroke="black"/>"#,
        canvas.width, canvas.height
    );
    for o in &record.world.obstacles {
        let (x, y) = canvas.map(o.center[0] - 0.5 * o.size[0], o.center[1] + 0.5 * o.size[1]);
        let _ = writeln!(
            out,
            r#"  <rect class="obstacle" x="{x:.3}" y="{y:.3}" width="{:.3}" height="{:.3}" fill="gray"/>"#,
            o.size[0] * SCALE,
            o.size[1] * SCALE
        );
    }
    if let Some(plan) = record.planned_per_step.get(step.min(record.planned_per_step.len().saturating_sub(1))) {
        polyline(&mut out, &canvas, plan, PLAN_COLOR, "plan");
    }
    if let Some(est) = &record.estimated {
        polyline(&mut out, &canvas, est, ESTIMATE_COLOR, "estimate");
    }
    polyline(&mut out, &canvas, &record.ground_truth, GROUND_TRUTH_COLOR, "ground-truth");
    let (gx, gy) = canvas.point(&record.goal);
    let _ = writeln!(
        out,
        r#"  <circle class="goal" cx="{gx:.3}" cy="{gy:.3}" r="6" fill="none" stroke="black" stroke-width="2"/>"#
    );
    out.push_str("</svg>\n");
    out
}

pub fn plot_run(record: &RunRecord, step: usize, path: &Path) -> Result<()> {
    std::fs::write(path, render_svg(record, step)).map_err(|e| SteapError::Io(format!("{}: {e}", path.display())))
}
