//! Self-contained SVG figures: a log-scale heatmap of a two-dimensional
//! error grid with a quiver plot and trajectory on top.

use std::fmt::Write;

use lyapfit_core::metrics::GridErrors;
use lyapfit_core::VectorField;

const SIZE: f64 = 480.0;
const LEFT: f64 = 60.0;
const TOP: f64 = 40.0;
const BAR: f64 = 18.0;

// Viridis control points.
const STOPS: [(f64, [u8; 3]); 5] = [
    (0.0, [68, 1, 84]),
    (0.25, [59, 82, 139]),
    (0.5, [33, 145, 140]),
    (0.75, [94, 201, 98]),
    (1.0, [253, 231, 37]),
];

fn color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let i = STOPS.iter().position(|s| s.0 >= t).unwrap_or(STOPS.len() - 1).max(1);
    let (t0, c0) = STOPS[i - 1];
    let (t1, c1) = STOPS[i];
    let s = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
    let mix = |a: u8, b: u8| (a as f64 + s * (b as f64 - a as f64)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(c0[0], c1[0]), mix(c0[1], c1[1]), mix(c0[2], c1[2]))
}

pub struct PhasePlot<'a> {
    pub title: &'a str,
    pub errors: &'a GridErrors,
    /// Field drawn as arrows; `None` skips the quiver.
    pub field: Option<&'a dyn VectorField>,
    pub arrows_per_axis: usize,
    pub trajectory: &'a [Vec<f64>],
}

impl PhasePlot<'_> {
    /// Renders the figure. The grid must be two-dimensional and in the
    /// row-major order of `StateBox::grid`.
    pub fn render(&self) -> String {
        let res = self.errors.resolution;
        let pts = &self.errors.points;
        assert!(res >= 2 && pts.len() == res * res && pts[0].len() == 2, "heatmap needs a 2-D grid");
        let (x_lo, x_hi) = (pts[0][0], pts[pts.len() - 1][0]);
        let (y_lo, y_hi) = (pts[0][1], pts[pts.len() - 1][1]);
        let sx = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * SIZE;
        let sy = |y: f64| TOP + SIZE - (y - y_lo) / (y_hi - y_lo) * SIZE;
        let logs: Vec<f64> = self.errors.errors.iter().map(|e| e.max(1e-16).log10()).collect();
        let lmin = logs.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut lmax = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if lmax - lmin < 1e-9 {
            lmax = lmin + 1.0;
        }

        let width = LEFT + SIZE + 100.0;
        let height = TOP + SIZE + 50.0;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, LEFT + SIZE / 2.0, escape(self.title));

        // Cells centred on grid points.
        let (cw, ch) = (SIZE / (res - 1) as f64, SIZE / (res - 1) as f64);
        for (idx, p) in pts.iter().enumerate() {
            let t = (logs[idx] - lmin) / (lmax - lmin);
            let (cx, cy) = (sx(p[0]), sy(p[1]));
            let x0 = (cx - cw / 2.0).max(LEFT);
            let x1 = (cx + cw / 2.0).min(LEFT + SIZE);
            let y0 = (cy - ch / 2.0).max(TOP);
            let y1 = (cy + ch / 2.0).min(TOP + SIZE);
            let _ = writeln!(
                s,
                r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                x1 - x0 + 0.3,
                y1 - y0 + 0.3,
                color(t)
            );
        }

        if let Some(field) = self.field {
            let n = self.arrows_per_axis.max(2);
            let step = SIZE / n as f64;
            let mut arrows = Vec::new();
            let mut longest: f64 = 0.0;
            for a in 0..n {
                for b in 0..n {
                    let px = LEFT + (a as f64 + 0.5) * step;
                    let py = TOP + (b as f64 + 0.5) * step;
                    let x = x_lo + (px - LEFT) / SIZE * (x_hi - x_lo);
                    let y = y_hi - (py - TOP) / SIZE * (y_hi - y_lo);
                    let f = field.eval(&[x, y]);
                    // Screen direction; y grows downward.
                    let (dx, dy) = (f[0] / (x_hi - x_lo), -f[1] / (y_hi - y_lo));
                    let len = dx.hypot(dy);
                    longest = longest.max(len);
                    arrows.push((px, py, dx, dy, len));
                }
            }
            let _ = writeln!(s, r#"<g stroke="white" stroke-width="1" fill="white" opacity="0.85">"#);
            for (px, py, dx, dy, len) in arrows {
                if len == 0.0 || !len.is_finite() {
                    continue;
                }
                // Lengths compressed by a square root so slow regions stay visible.
                let l = 0.8 * step * (len / longest).sqrt();
                let (ux, uy) = (dx / len, dy / len);
                let (ex, ey) = (px + ux * l / 2.0, py + uy * l / 2.0);
                let (bx, by) = (px - ux * l / 2.0, py - uy * l / 2.0);
                let h = l.min(8.0) * 0.4;
                let _ = writeln!(
                    s,
                    r#"<line x1="{bx:.2}" y1="{by:.2}" x2="{ex:.2}" y2="{ey:.2}"/><polygon points="{ex:.2},{ey:.2} {:.2},{:.2} {:.2},{:.2}"/>"#,
                    ex - ux * h - uy * h * 0.6,
                    ey - uy * h + ux * h * 0.6,
                    ex - ux * h + uy * h * 0.6,
                    ey - uy * h - ux * h * 0.6
                );
            }
            let _ = writeln!(s, "</g>");
        }

        let inside: Vec<String> = self
            .trajectory
            .iter()
            .filter(|p| p[0] >= x_lo && p[0] <= x_hi && p[1] >= y_lo && p[1] <= y_hi)
            .map(|p| format!("{:.2},{:.2}", sx(p[0]), sy(p[1])))
            .collect();
        if inside.len() > 1 {
            let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#e8453c" stroke-width="2"/>"##, inside.join(" "));
        }

        let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#);
        for t in 0..=4 {
            let f = t as f64 / 4.0;
            let xv = x_lo + f * (x_hi - x_lo);
            let yv = y_lo + f * (y_hi - y_lo);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, sx(xv), TOP + SIZE + 18.0, tick(xv));
            let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, sy(yv) + 4.0, tick(yv));
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">x1</text>"#, LEFT + SIZE / 2.0, TOP + SIZE + 38.0);
        let _ = writeln!(s, r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">x2</text>"#, TOP + SIZE / 2.0, TOP + SIZE / 2.0);

        // Color bar in log10 units.
        let bx = LEFT + SIZE + 20.0;
        let steps = 64;
        for i in 0..steps {
            let t = i as f64 / (steps - 1) as f64;
            let y = TOP + SIZE - (i + 1) as f64 * SIZE / steps as f64;
            let _ = writeln!(s, r#"<rect x="{bx}" y="{y:.2}" width="{BAR}" height="{:.2}" fill="{}"/>"#, SIZE / steps as f64 + 0.3, color(t));
        }
        for t in 0..=4 {
            let f = t as f64 / 4.0;
            let v = lmin + f * (lmax - lmin);
            let _ = writeln!(s, r#"<text x="{}" y="{:.2}">1e{:.1}</text>"#, bx + BAR + 4.0, TOP + SIZE - f * SIZE + 4.0, v);
        }
        s.push_str("</svg>\n");
        s
    }
}

fn tick(v: f64) -> String {
    let r = (v * 100.0).round() / 100.0;
    format!("{}", if r == 0.0 { 0.0 } else { r })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
