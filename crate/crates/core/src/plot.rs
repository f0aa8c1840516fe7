//! Minimal SVG line and scatter plots.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// One polyline with markers per series.
    Line,
    /// Markers only.
    Scatter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub kind: PlotKind,
    /// Forces equal x/y scaling, for unit-circle plots.
    pub equal_axes: bool,
}

const W: f64 = 640.0;
const H: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn span(vals: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        return None;
    }
    if hi - lo < 1e-12 {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        Some((lo - pad, hi + pad))
    } else {
        let pad = 0.05 * (hi - lo);
        Some((lo - pad, hi + pad))
    }
}

/// Renders the series to an SVG document.
pub fn render_svg(series: &[Series], spec: &PlotSpec) -> Result<String> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::InvalidArgument("nothing to plot".into()));
    }
    let ty = |y: f64| if spec.log_y { y.max(1e-300).log10() } else { y };
    let pts = || series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1) = span(pts().map(|p| p.0)).ok_or_else(|| Error::InvalidArgument("non-finite x".into()))?;
    let (mut y0, mut y1) = span(pts().map(|p| ty(p.1))).ok_or_else(|| Error::InvalidArgument("non-finite y".into()))?;
    if spec.log_y {
        y0 = y0.floor();
        y1 = y1.ceil();
    }
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    if spec.equal_axes {
        let lo = x0.min(y0);
        let hi = x1.max(y1);
        (x0, x1, y0, y1) = (lo, hi, lo, hi);
    }
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (ty(y) - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&spec.title)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"#,
        LEFT + pw / 2.0,
        H - 15.0,
        escape(&spec.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{}" text-anchor="middle" font-size="13" transform="rotate(-90 20 {})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&spec.y_label)
    );

    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * f64::from(i) / 4.0;
        let px = sx(fx);
        let _ = writeln!(
            s,
            r#"<text x="{px:.1}" y="{}" text-anchor="middle" font-size="11">{}</text>"#,
            TOP + ph + 16.0,
            tick(fx)
        );
    }
    if spec.log_y {
        let mut e = y0 as i64;
        while e as f64 <= y1 {
            let py = TOP + ph - (e as f64 - y0) / (y1 - y0) * ph;
            let _ = writeln!(
                s,
                r#"<line x1="{LEFT}" y1="{py:.1}" x2="{}" y2="{py:.1}" stroke="lightgray"/>"#,
                LEFT + pw
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{:.1}" text-anchor="end" font-size="11">1e{e}</text>"#,
                LEFT - 6.0,
                py + 4.0
            );
            e += 1;
        }
    } else {
        for i in 0..=4 {
            let fy = y0 + (y1 - y0) * f64::from(i) / 4.0;
            let py = TOP + ph - f64::from(i) / 4.0 * ph;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{:.1}" text-anchor="end" font-size="11">{}</text>"#,
                LEFT - 6.0,
                py + 4.0,
                tick(fy)
            );
        }
    }

    for (k, ser) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let coords: Vec<(f64, f64)> = ser.points.iter().map(|&(x, y)| (sx(x), sy(y))).collect();
        if spec.kind == PlotKind::Line && !coords.is_empty() {
            let list: Vec<String> = coords.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                list.join(" ")
            );
        }
        let r = if spec.kind == PlotKind::Line { 3.5 } else { 2.0 };
        for (x, y) in &coords {
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{color}"/>"#);
        }
        let ly = TOP + 14.0 + 20.0 * k as f64;
        let lx = W - RIGHT + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text class="legend" x="{}" y="{}" font-size="12">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

/// Writes the plot to `path`.
pub fn emit_plot(series: &[Series], spec: &PlotSpec, path: &Path) -> Result<()> {
    let svg = render_svg(series, spec)?;
    std::fs::write(path, svg)?;
    Ok(())
}
