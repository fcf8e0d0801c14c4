//! Result persistence: CSV tables, pretty JSON, and a small self-contained
//! SVG chart for convergence reports. Floats are written with the shortest
//! round-trip representation and lines end in LF, so identical inputs yield
//! identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::experiments::{ConvergenceReport, TruncationReport};
use crate::integrate::{Trajectory, TrajectoryStatus};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("a chart needs at least two levels, report has {0}")]
    TooFewLevels(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// CSV rows t, x_1..x_m with the run status in a trailing comment line.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::new();
    out.push('t');
    for c in 1..=traj.state_dim() {
        let _ = write!(out, ",x_{c}");
    }
    out.push('\n');
    for (i, x) in traj.states().enumerate() {
        let _ = write!(out, "{}", traj.time(i));
        for v in x {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    match traj.status() {
        TrajectoryStatus::Completed => out.push_str("# status=completed\n"),
        TrajectoryStatus::Escaped { time } => {
            let _ = writeln!(out, "# status=escaped time={time}");
        }
        TrajectoryStatus::NonFinite { time } => {
            let _ = writeln!(out, "# status=nonfinite time={time}");
        }
    }
    out
}

/// The convergence table with one row per polygonal level.
pub fn convergence_csv(report: &ConvergenceReport) -> String {
    let mut out = String::from("n,delta,M,escaped,p_hat,ci_low,ci_high\n");
    for e in &report.estimates {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            e.n, e.delta, e.samples, e.escaped_count, e.p_hat, e.ci_low, e.ci_high
        );
    }
    out
}

/// The truncation sweep table with one row per radius.
pub fn truncation_csv(report: &TruncationReport) -> String {
    let mut out = String::from("radius,trials,covered,equality_failures\n");
    for row in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            row.radius, row.trials, row.covered, row.equality_failures
        );
    }
    out
}

/// Pretty JSON with a trailing newline.
pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String, ReportError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn xml_escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(ch),
        }
    }
    out
}

const CHART_WIDTH: f64 = 640.0;
const CHART_HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 24.0;
const MARGIN_BOTTOM: f64 = 48.0;

/// Line chart of the estimated probabilities over the level sequence, with
/// 95% interval whiskers. Probabilities are drawn on a fixed [0, 1] axis;
/// each marker carries its exact value in a text label, so the numbers can
/// be recovered from the file without loss.
pub fn render_convergence_svg(report: &ConvergenceReport) -> Result<String, ReportError> {
    let points = &report.estimates;
    if points.len() < 2 {
        return Err(ReportError::TooFewLevels(points.len()));
    }
    let n_min = points.first().expect("checked length").n as f64;
    let n_max = points.last().expect("checked length").n as f64;
    let x_of = |n: f64| {
        MARGIN_LEFT + (n - n_min) / (n_max - n_min) * (CHART_WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    };
    let y_of = |p: f64| {
        let span = CHART_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        CHART_HEIGHT - MARGIN_BOTTOM - p * span
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CHART_WIDTH}\" height=\"{CHART_HEIGHT}\" viewBox=\"0 0 {CHART_WIDTH} {CHART_HEIGHT}\">"
    );
    svg.push_str(
        "<style>text{font-family:monospace;font-size:12px;fill:#222}\
         .axis{stroke:#222;stroke-width:1}.grid{stroke:#ccc;stroke-width:0.5}\
         .trend{stroke:#2563eb;stroke-width:1.5;fill:none}\
         .whisker{stroke:#2563eb;stroke-width:1}.value{font-size:11px}</style>\n",
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"14\">{} / {} (delta={})</text>",
        MARGIN_LEFT,
        xml_escape(&format!("{:?}", report.kind).to_lowercase()),
        xml_escape(&report.model),
        points[0].delta
    );

    for k in 0..=4 {
        let p = k as f64 * 0.25;
        let y = y_of(p);
        let _ = writeln!(
            svg,
            "<line class=\"grid\" x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\"/>",
            MARGIN_LEFT,
            CHART_WIDTH - MARGIN_RIGHT,
            y = y
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{p}</text>",
            MARGIN_LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        "<line class=\"axis\" x1=\"{l:.2}\" y1=\"{t:.2}\" x2=\"{l:.2}\" y2=\"{b:.2}\"/>",
        l = MARGIN_LEFT,
        t = MARGIN_TOP,
        b = CHART_HEIGHT - MARGIN_BOTTOM
    );
    let _ = writeln!(
        svg,
        "<line class=\"axis\" x1=\"{l:.2}\" y1=\"{b:.2}\" x2=\"{r:.2}\" y2=\"{b:.2}\"/>",
        l = MARGIN_LEFT,
        b = CHART_HEIGHT - MARGIN_BOTTOM,
        r = CHART_WIDTH - MARGIN_RIGHT
    );

    let mut polyline = String::new();
    for e in points {
        let _ = write!(polyline, "{:.2},{:.2} ", x_of(e.n as f64), y_of(e.p_hat));
    }
    let _ = writeln!(
        svg,
        "<polyline class=\"trend\" points=\"{}\"/>",
        polyline.trim_end()
    );

    for e in points {
        let x = x_of(e.n as f64);
        let _ = writeln!(
            svg,
            "<line class=\"whisker\" x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\"/>",
            y_of(e.ci_low),
            y_of(e.ci_high)
        );
        let _ = writeln!(
            svg,
            "<circle cx=\"{x:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#2563eb\"/>",
            y_of(e.p_hat)
        );
        let _ = writeln!(
            svg,
            "<text class=\"value\" x=\"{:.2}\" y=\"{:.2}\">{}</text>",
            x + 6.0,
            y_of(e.p_hat) - 6.0,
            e.p_hat
        );
        let _ = writeln!(
            svg,
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            CHART_HEIGHT - MARGIN_BOTTOM + 16.0,
            e.n
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">n</text>",
        (MARGIN_LEFT + CHART_WIDTH - MARGIN_RIGHT) / 2.0,
        CHART_HEIGHT - 12.0
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_plot(report: &ConvergenceReport, path: &Path) -> Result<(), ReportError> {
    let svg = render_convergence_svg(report)?;
    fs::write(path, svg)?;
    Ok(())
}
