//! Minimal SVG charts: violins and CDFs of per-trajectory errors, and
//! per-step value curves.

use std::fmt::Write as _;

use crate::metrics::QCurve;

const W: f64 = 640.0;
const H: f64 = 400.0;
const M: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    svg: String,
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(title: &str, x: (f64, f64), y: (f64, f64)) -> Self {
        let widen = |(lo, hi): (f64, f64)| if hi > lo { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
        let mut svg = String::new();
        let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
        let _ = writeln!(
            svg,
            r#"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - 2.0 * M,
            H - 2.0 * M
        );
        Self {
            svg,
            x: widen(x),
            y: widen(y),
        }
    }

    fn px(&self, x: f64) -> f64 {
        M + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * M)
    }

    fn py(&self, y: f64) -> f64 {
        H - M - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * M)
    }

    fn axis_labels(&mut self, xlabel: &str, ylabel: &str) {
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let yv = self.y.0 + f * (self.y.1 - self.y.0);
            let _ = writeln!(self.svg, r#"<text x="{}" y="{:.1}" text-anchor="end">{yv:.3}</text>"#, M - 4.0, self.py(yv) + 4.0);
        }
        let _ = writeln!(self.svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(xlabel));
        let _ = writeln!(
            self.svg,
            r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            escape(ylabel)
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], color: &str, dashed: bool) {
        let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", self.px(*x), self.py(*y))).collect();
        let dash = if dashed { r#" stroke-dasharray="5,3""# } else { "" };
        let _ = writeln!(self.svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#, coords.join(" "));
    }

    fn legend(&mut self, names: &[&str]) {
        for (i, n) in names.iter().enumerate() {
            let y = M + 14.0 + 16.0 * i as f64;
            let c = COLORS[i % COLORS.len()];
            let _ = writeln!(self.svg, r#"<rect x="{}" y="{}" width="10" height="10" fill="{c}"/>"#, W - M - 110.0, y - 9.0);
            let _ = writeln!(self.svg, r#"<text x="{}" y="{y}">{}</text>"#, W - M - 95.0, escape(n));
        }
    }

    fn finish(mut self) -> String {
        self.svg.push_str("</svg>\n");
        self.svg
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Gaussian kernel density with Silverman's bandwidth.
pub fn kde(values: &[f64], at: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let h = (1.06 * sd * n.powf(-0.2)).max(1e-6);
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    at.iter()
        .map(|x| norm * values.iter().map(|v| (-0.5 * ((x - v) / h).powi(2)).exp()).sum::<f64>())
        .collect()
}

/// One violin per named series, values on the vertical axis.
pub fn violin(title: &str, unit: &str, series: &[(String, Vec<f64>)]) -> String {
    let (lo, hi) = range(series.iter().flat_map(|(_, v)| v.iter().copied()));
    let k = series.len().max(1) as f64;
    let mut f = Frame::new(title, (0.0, k), (lo.min(0.0), hi));
    f.axis_labels("method", unit);
    for (i, (name, vals)) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let center = i as f64 + 0.5;
        let _ = writeln!(f.svg, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, f.px(center), H - M + 16.0, escape(name));
        if vals.is_empty() {
            continue;
        }
        let (vlo, vhi) = range(vals.iter().copied());
        let grid: Vec<f64> = (0..=60).map(|j| vlo + (vhi - vlo) * j as f64 / 60.0).collect();
        let dens = kde(vals, &grid);
        let peak = dens.iter().copied().fold(0.0, f64::max).max(1e-12);
        let mut pts: Vec<(f64, f64)> = grid.iter().zip(&dens).map(|(y, d)| (center + 0.4 * d / peak, *y)).collect();
        pts.extend(grid.iter().zip(&dens).rev().map(|(y, d)| (center - 0.4 * d / peak, *y)));
        let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", f.px(*x), f.py(*y))).collect();
        let _ = writeln!(f.svg, r#"<polygon points="{}" fill="{c}" fill-opacity="0.4" stroke="{c}"/>"#, coords.join(" "));
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let _ = writeln!(
            f.svg,
            r#"<line x1="{:.2}" x2="{:.2}" y1="{:.2}" y2="{:.2}" stroke="black"/>"#,
            f.px(center - 0.2),
            f.px(center + 0.2),
            f.py(mean),
            f.py(mean)
        );
    }
    f.finish()
}

/// Empirical CDF per named series.
pub fn cdf(title: &str, unit: &str, series: &[(String, Vec<f64>)]) -> String {
    let (lo, hi) = range(series.iter().flat_map(|(_, v)| v.iter().copied()));
    let mut f = Frame::new(title, (lo.min(0.0), hi), (0.0, 1.0));
    f.axis_labels(unit, "fraction");
    for (i, (_, vals)) in series.iter().enumerate() {
        let mut sorted = vals.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mut pts = vec![(f.x.0, 0.0)];
        for (j, v) in sorted.iter().enumerate() {
            pts.push((*v, j as f64 / n));
            pts.push((*v, (j + 1) as f64 / n));
        }
        pts.push((f.x.1, 1.0));
        f.polyline(&pts, COLORS[i % COLORS.len()], false);
    }
    let names: Vec<&str> = series.iter().map(|(n, _)| n.as_str()).collect();
    f.legend(&names);
    f.finish()
}

/// Policy (solid) and expert (dashed) values per step, one colour per episode.
/// Keyframe steps are marked with dots.
pub fn qcurve_lines(title: &str, curves: &[QCurve]) -> String {
    let shown = &curves[..curves.len().min(COLORS.len())];
    let steps = shown.iter().map(|c| c.points.len()).max().unwrap_or(1);
    let (lo, hi) = range(shown.iter().flat_map(|c| c.points.iter().flat_map(|p| [p.q_policy, p.q_expert])));
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let mut f = Frame::new(title, (0.0, (steps.max(2) - 1) as f64), (lo, hi));
    f.axis_labels("step", "min(Q1, Q2)");
    for (i, c) in shown.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pol: Vec<(f64, f64)> = c.points.iter().map(|p| (p.step as f64, p.q_policy)).collect();
        let exp: Vec<(f64, f64)> = c.points.iter().map(|p| (p.step as f64, p.q_expert)).collect();
        f.polyline(&pol, color, false);
        f.polyline(&exp, color, true);
        for p in c.points.iter().filter(|p| p.keyframe) {
            let _ = writeln!(f.svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, f.px(p.step as f64), f.py(p.q_expert));
        }
    }
    let names: Vec<&str> = shown.iter().map(|c| c.episode.as_str()).collect();
    f.legend(&names);
    f.finish()
}
