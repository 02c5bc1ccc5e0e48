//! Minimal SVG contour plots.

use std::fmt::Write;

use crate::diagnostics::{extract_level_set, level_grid};
use crate::finsler::WulffBall;
use crate::geom::Point;
use crate::mesh::{BoundaryTag, Mesh};
use crate::solver::Solution;

const SIZE: f64 = 640.0;
const MARGIN: f64 = 20.0;

/// Piecewise-linear blue to yellow ramp.
fn color(s: f64) -> String {
    let stops = [[68.0, 1.0, 84.0], [59.0, 82.0, 139.0], [33.0, 145.0, 140.0], [94.0, 201.0, 98.0], [253.0, 231.0, 37.0]];
    let x = s.clamp(0.0, 1.0) * (stops.len() - 1) as f64;
    let i = (x.floor() as usize).min(stops.len() - 2);
    let f = x - i as f64;
    let c: Vec<u8> = (0..3)
        .map(|k| (stops[i][k] * (1.0 - f) + stops[i + 1][k] * f).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

struct Frame {
    x0: f64,
    y1: f64,
    scale: f64,
}

impl Frame {
    fn new(mesh: &Mesh) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for v in &mesh.vertices {
            x0 = x0.min(v[0]);
            x1 = x1.max(v[0]);
            y0 = y0.min(v[1]);
            y1 = y1.max(v[1]);
        }
        let span = (x1 - x0).max(y1 - y0).max(f64::MIN_POSITIVE);
        Self {
            x0,
            y1,
            scale: (SIZE - 2.0 * MARGIN) / span,
        }
    }

    fn map(&self, p: Point) -> (f64, f64) {
        (MARGIN + (p[0] - self.x0) * self.scale, MARGIN + (self.y1 - p[1]) * self.scale)
    }

    fn path(&self, pts: &[Point], closed: bool) -> String {
        let mut d = String::new();
        for (k, p) in pts.iter().enumerate() {
            let (x, y) = self.map(*p);
            let _ = write!(d, "{}{x:.2},{y:.2} ", if k == 0 { "M" } else { "L" });
        }
        if closed {
            d.push('Z');
        }
        d
    }
}

/// Domain boundary, `n_levels` level curves of `u` and optional fitted Wulff
/// balls (dashed).
pub fn contour_plot(mesh: &Mesh, solution: &Solution, n_levels: usize, balls: &[WulffBall]) -> String {
    let frame = Frame::new(mesh);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for e in &mesh.boundary {
        let (a, b) = (frame.map(mesh.vertices[e.a]), frame.map(mesh.vertices[e.b]));
        let stroke = match e.tag {
            BoundaryTag::Gamma0 => "black",
            BoundaryTag::Gamma1 => "gray",
        };
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{stroke}" stroke-width="1.5"/>"#,
            a.0, a.1, b.0, b.1
        );
    }
    let m = solution.max();
    if m > 0.0 && n_levels >= 2 {
        for (i, t) in level_grid(m, n_levels).into_iter().enumerate() {
            let Ok(lines) = extract_level_set(mesh, solution, t) else {
                continue;
            };
            let c = color(i as f64 / (n_levels - 1) as f64);
            for l in lines {
                let _ = writeln!(
                    out,
                    r#"<path d="{}" fill="none" stroke="{c}" stroke-width="1"/>"#,
                    frame.path(&l.points, l.closed)
                );
            }
        }
    }
    for ball in balls {
        if let Ok(pts) = ball.boundary(256) {
            let _ = writeln!(
                out,
                r#"<path d="{}" fill="none" stroke="red" stroke-width="0.75" stroke-dasharray="4 3"/>"#,
                frame.path(&pts, true)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}
