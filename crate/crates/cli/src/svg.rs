//! Standalone SVG line charts with 95% error bars.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SvgError {
    #[error("nothing to plot: {0}")]
    Empty(&'static str),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// One line: `(x, y, ci95 half-width)` points.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Labels {
    pub title: String,
    pub x: String,
    pub y: String,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
        (lo - pad, hi + pad)
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 || (1e-3..1e4).contains(&v.abs()) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.1e}")
    }
}

pub fn render_svg(series: &[Series], labels: &Labels) -> Result<String, SvgError> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(SvgError::Empty("no series with points"));
    }
    let pts = || series.iter().flat_map(|s| s.points.iter());
    let (x_lo, x_hi) = padded(pts().map(|p| p.0).fold(f64::INFINITY, f64::min), pts().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max));
    let (y_lo, y_hi) = padded(pts().map(|p| p.1 - p.2).fold(f64::INFINITY, f64::min), pts().map(|p| p.1 + p.2).fold(f64::NEG_INFINITY, f64::max));
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let sx = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * pw;
    let sy = |y: f64| TOP + (1.0 - (y - y_lo) / (y_hi - y_lo)) * ph;

    let mut out = String::new();
    let w = &mut out;
    // Writing into a String cannot fail.
    let _ = writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(w, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(w, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(&labels.title));
    let _ = writeln!(w, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for k in 0..=4 {
        let fx = x_lo + (x_hi - x_lo) * k as f64 / 4.0;
        let fy = y_lo + (y_hi - y_lo) * k as f64 / 4.0;
        let _ = writeln!(w, r#"<line x1="{0:.2}" y1="{1}" x2="{0:.2}" y2="{2}" stroke="black"/>"#, sx(fx), TOP + ph, TOP + ph + 5.0);
        let _ = writeln!(w, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, sx(fx), TOP + ph + 18.0, fmt_tick(fx));
        let _ = writeln!(w, r#"<line x1="{0}" y1="{1:.2}" x2="{2}" y2="{1:.2}" stroke="black"/>"#, LEFT - 5.0, sy(fy), LEFT);
        let _ = writeln!(w, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 8.0, sy(fy) + 4.0, fmt_tick(fy));
    }
    let _ = writeln!(w, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 15.0, escape(&labels.x));
    let _ = writeln!(w, r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#, TOP + ph / 2.0, escape(&labels.y));

    for (i, s) in series.iter().enumerate() {
        let colour = COLOURS[i % COLOURS.len()];
        let coords: Vec<String> = s.points.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
        let _ = writeln!(w, r#"<g class="series" data-label="{}">"#, escape(&s.label));
        let _ = writeln!(w, r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#, coords.join(" "));
        for p in &s.points {
            let (x, lo, hi) = (sx(p.0), sy(p.1 - p.2), sy(p.1 + p.2));
            let _ = writeln!(w, r#"<path d="M{x:.2},{lo:.2}V{hi:.2}M{:.2},{lo:.2}h8M{:.2},{hi:.2}h8" stroke="{colour}" fill="none"/>"#, x - 4.0, x - 4.0);
            let _ = writeln!(w, r#"<circle cx="{x:.2}" cy="{:.2}" r="3" fill="{colour}"/>"#, sy(p.1));
        }
        let _ = writeln!(w, "</g>");
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = W - RIGHT + 15.0;
        let _ = writeln!(w, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(w, r#"<text class="legend" x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&s.label));
    }
    let _ = writeln!(w, "</svg>");
    Ok(out)
}

/// Renders the chart and writes it to `path`. Nothing is written on error.
pub fn emit_svg(series: &[Series], labels: &Labels, path: &Path) -> Result<(), SvgError> {
    let svg = render_svg(series, labels)?;
    std::fs::write(path, svg).map_err(|source| SvgError::Io { path: path.display().to_string(), source })
}
