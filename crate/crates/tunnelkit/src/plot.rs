//! Static SVG plots: layer-wise probe curves and SHAP-slope bar charts.

use std::fmt::Write;

use serde::{Deserialize, Serialize};
use tunnelkit_core::metrics::normalize_curve;
use tunnelkit_core::probe::ProbeCurve;
use tunnelkit_core::slope::SlopeReport;
use tunnelkit_core::stats::{confidence_interval, mean, sample_sd};

use crate::error::{Result, TkError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    /// Mean plus or minus one sample standard deviation.
    #[default]
    Std,
    /// Student-t 95% confidence interval of the mean.
    Ci95,
}

impl Band {
    pub fn as_str(self) -> &'static str {
        match self {
            Band::Std => "std",
            Band::Ci95 => "ci95",
        }
    }

    fn bounds(self, values: &[f64]) -> (f64, f64) {
        let m = mean(values);
        if values.len() < 2 {
            return (m, m);
        }
        match self {
            Band::Std => {
                let sd = sample_sd(values);
                (m - sd, m + sd)
            }
            Band::Ci95 => confidence_interval(values, 0.95).unwrap_or((m, m)),
        }
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text class="title" x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn points(xy: impl Iterator<Item = (f64, f64)>) -> String {
    xy.map(|(x, y)| format!("{x:.2},{y:.2}")).collect::<Vec<_>>().join(" ")
}

fn star(cx: f64, cy: f64, outer: f64) -> String {
    let inner = outer * 0.45;
    points((0..10).map(|k| {
        let r = if k % 2 == 0 { outer } else { inner };
        let a = std::f64::consts::PI * (k as f64) / 5.0 - std::f64::consts::FRAC_PI_2;
        (cx + r * a.cos(), cy + r * a.sin())
    }))
}

/// Normalized ID curve, mean of the normalized OOD curves with a dispersion
/// band, a star at `tunnel_start` and the tunnel region shaded up to the
/// penultimate layer.
pub fn curve_plot_svg(id: &ProbeCurve, ood: &[ProbeCurve], tunnel_start: Option<usize>, band: Band) -> Result<String> {
    if id.is_empty() || ood.is_empty() || ood.iter().any(ProbeCurve::is_empty) {
        return Err(TkError::Invalid("curve plot needs non-empty ID and OOD curves".into()));
    }
    let n = id.len();
    if let Some(c) = ood.iter().find(|c| c.len() != n) {
        return Err(TkError::Invalid(format!("curve {} has {} layers, ID curve {n}", c.dataset_id, c.len())));
    }
    if let Some(s) = tunnel_start.filter(|&s| s == 0 || s > n) {
        return Err(TkError::Invalid(format!("tunnel start {s} outside 1..={n}")));
    }
    let norm = |c: &ProbeCurve| normalize_curve(c).map_err(|e| TkError::data(format!("normalize {}", c.dataset_id), e));
    let id_n = norm(id)?;
    let ood_n = ood.iter().map(norm).collect::<Result<Vec<_>>>()?;
    let column = |l: usize| ood_n.iter().map(|c| c.accuracies[l]).collect::<Vec<f64>>();
    let ood_mean: Vec<f64> = (0..n).map(|l| mean(&column(l))).collect();
    let bounds: Vec<(f64, f64)> = (0..n).map(|l| band.bounds(&column(l))).collect();

    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let x = |l: usize| if n == 1 { LEFT + pw / 2.0 } else { LEFT + pw * (l - 1) as f64 / (n - 1) as f64 };
    let y = |v: f64| TOP + ph * (1.0 - v.clamp(0.0, 1.1) / 1.1);

    let mut out = String::new();
    header(&mut out, &format!("{}: {} vs OOD", id.backbone_id, id.dataset_id));
    if let Some(s) = tunnel_start {
        let _ = writeln!(
            out,
            r##"<rect class="tunnel-region" x="{:.2}" y="{TOP:.2}" width="{:.2}" height="{ph:.2}" fill="#d62728" fill-opacity="0.08"/>"##,
            x(s),
            x(n) - x(s)
        );
    }
    let _ = writeln!(out, r#"<line class="axis" x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#, TOP + ph, LEFT + pw, TOP + ph);
    let _ = writeln!(out, r#"<line class="axis" x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.2}" stroke="black"/>"#, TOP + ph);
    for l in 1..=n {
        let _ = writeln!(out, r#"<line class="xtick" x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="black"/>"#, x(l), TOP + ph, TOP + ph + 5.0);
        let _ = writeln!(out, r#"<text class="xtick-label" x="{:.2}" y="{:.2}" text-anchor="middle">{l}</text>"#, x(l), TOP + ph + 18.0);
    }
    for k in 0..=4 {
        let v = f64::from(k) * 0.25;
        let _ = writeln!(out, r#"<line class="ytick" x1="{:.2}" y1="{1:.2}" x2="{LEFT}" y2="{1:.2}" stroke="black"/>"#, LEFT - 5.0, y(v));
        let _ = writeln!(out, r#"<text class="ytick-label" x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"#, LEFT - 8.0, y(v) + 4.0);
    }
    let _ = writeln!(out, r#"<text class="xlabel" x="{:.2}" y="{:.2}" text-anchor="middle">layer</text>"#, LEFT + pw / 2.0, HEIGHT - 8.0);
    let _ = writeln!(
        out,
        r#"<text class="ylabel" transform="translate(16,{:.2}) rotate(-90)" text-anchor="middle">normalized accuracy</text>"#,
        TOP + ph / 2.0
    );
    let upper = (1..=n).map(|l| (x(l), y(bounds[l - 1].1)));
    let lower = (1..=n).rev().map(|l| (x(l), y(bounds[l - 1].0)));
    let _ = writeln!(
        out,
        r##"<polygon class="ood-band" data-band="{}" points="{}" fill="#ff7f0e" fill-opacity="0.25" stroke="none"/>"##,
        band.as_str(),
        points(upper.chain(lower))
    );
    let _ = writeln!(
        out,
        r##"<polyline class="id-curve" points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
        points((1..=n).map(|l| (x(l), y(id_n.accuracies[l - 1]))))
    );
    let _ = writeln!(
        out,
        r##"<polyline class="ood-mean" points="{}" fill="none" stroke="#ff7f0e" stroke-width="2"/>"##,
        points((1..=n).map(|l| (x(l), y(ood_mean[l - 1]))))
    );
    if let Some(s) = tunnel_start {
        let _ = writeln!(
            out,
            r##"<polygon class="tunnel-star" data-layer="{s}" points="{}" fill="#d62728" stroke="black" stroke-width="0.5"/>"##,
            star(x(s), y(ood_mean[s - 1]), 9.0)
        );
    }
    let lx = LEFT + pw - 150.0;
    let _ = writeln!(out, r##"<line x1="{lx:.2}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="#1f77b4" stroke-width="2"/>"##, TOP + 10.0, lx + 20.0);
    let _ = writeln!(out, r#"<text class="legend" x="{:.2}" y="{:.2}">ID ({})</text>"#, lx + 26.0, TOP + 14.0, escape(&id.dataset_id));
    let _ = writeln!(out, r##"<line x1="{lx:.2}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="#ff7f0e" stroke-width="2"/>"##, TOP + 28.0, lx + 20.0);
    let _ = writeln!(out, r#"<text class="legend" x="{:.2}" y="{:.2}">OOD mean (n={})</text>"#, lx + 26.0, TOP + 32.0, ood.len());
    out.push_str("</svg>\n");
    Ok(out)
}

/// Pixel length of a bar with `|slope| = 1`; since slopes are L1 normalized,
/// the bar lengths of a non-zero report add up to exactly this.
pub const SLOPE_FULL_SCALE: f64 = 260.0;

/// Horizontal signed bars, longest first; positive bars extend right.
pub fn shap_slope_svg(report: &SlopeReport) -> String {
    let ranked = report.ranked();
    let row_h = 26.0;
    let height = TOP + BOTTOM + row_h * ranked.len() as f64;
    let label_w = 150.0;
    let axis_x = label_w + SLOPE_FULL_SCALE + 20.0;
    let width = axis_x + SLOPE_FULL_SCALE + 20.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{width:.0}" height="{height:.0}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text class="title" x="{:.2}" y="22" text-anchor="middle" font-size="14">SHAP slope: {} (R2 {:.3})</text>"#,
        width / 2.0,
        report.target.as_str(),
        report.r_squared
    );
    for (i, v) in ranked.iter().enumerate() {
        let cy = TOP + row_h * i as f64;
        let len = v.slope.abs() * SLOPE_FULL_SCALE;
        let (class, fill, x0) = if v.slope > 0.0 {
            ("bar pos", "#2ca02c", axis_x)
        } else if v.slope < 0.0 {
            ("bar neg", "#d62728", axis_x - len)
        } else {
            ("bar zero", "none", axis_x)
        };
        let _ = writeln!(
            out,
            r#"<rect class="{class}" data-variable="{}" data-slope="{:.6}" x="{x0:.4}" y="{:.2}" width="{len:.4}" height="{:.2}" fill="{fill}"/>"#,
            escape(&v.variable),
            v.slope,
            cy + 4.0,
            row_h - 8.0
        );
        let _ = writeln!(
            out,
            r#"<text class="bar-label" x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            label_w - 6.0,
            cy + row_h / 2.0 + 4.0,
            escape(&v.variable)
        );
    }
    let _ = writeln!(
        out,
        r#"<line class="axis" x1="{axis_x:.2}" y1="{:.2}" x2="{axis_x:.2}" y2="{:.2}" stroke="black"/>"#,
        TOP,
        height - BOTTOM
    );
    let _ = writeln!(out, r#"<text class="xlabel" x="{axis_x:.2}" y="{:.2}" text-anchor="middle">normalized SHAP slope</text>"#, height - 18.0);
    out.push_str("</svg>\n");
    out
}
