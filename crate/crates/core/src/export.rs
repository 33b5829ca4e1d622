//! File outputs: per-step CSV, metrics JSON with provenance, sweep table
//! and SVG charts.
//!
//! `run.csv` columns, in order:
//!
//! | column | meaning |
//! |---|---|
//! | `t` | time (s) |
//! | `q0..q{n-1}`, `qd*`, `qdd*` | joint state |
//! | `d0..d5` | task slack |
//! | `pex pey pez` | end-effector position |
//! | `prx pry prz` | reference position |
//! | `e_p` | position error (m) |
//! | `e_sf` | slosh-free angle (rad), `NaN` in free fall |
//! | `qe_w qe_x qe_y qe_z` | end-effector orientation quaternion |
//! | `qr_w qr_x qr_y qr_z` | reference orientation quaternion |
//! | `degenerate_flag` | `1` when the reference orientation was held |
//!
//! Floats use Rust's shortest round-trip formatting, so reruns are
//! byte-identical.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::joint_control::RacWeights;
use crate::metrics::RunMetrics;
use crate::simulation::{quaternion, ExperimentConfig, Mode, RunLog};
use crate::sweep::SweepRow;
use crate::task_control::TaskGains;

pub fn run_csv_header(n: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    for prefix in ["q", "qd", "qdd"] {
        cols.extend((0..n).map(|i| format!("{prefix}{i}")));
    }
    cols.extend((0..6).map(|i| format!("d{i}")));
    for name in ["pex", "pey", "pez", "prx", "pry", "prz", "e_p", "e_sf"] {
        cols.push(name.into());
    }
    for frame in ["qe", "qr"] {
        cols.extend(["w", "x", "y", "z"].iter().map(|c| format!("{frame}_{c}")));
    }
    cols.push("degenerate_flag".into());
    cols
}

/// Shortest round-trip decimal, switching to exponent form for very small
/// or very large magnitudes.
fn push_number(out: &mut String, v: f64) {
    let a = v.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e9).contains(&a) {
        let _ = write!(out, "{v}");
    } else {
        let _ = write!(out, "{v:e}");
    }
}

pub fn write_run_csv(log: &RunLog, out: &mut impl Write) -> std::io::Result<()> {
    let n = log.records.first().map_or(0, |r| r.state.n());
    writeln!(out, "{}", run_csv_header(n).join(","))?;
    let mut line = String::new();
    for r in &log.records {
        line.clear();
        let mut push = |v: f64| {
            if !line.is_empty() {
                line.push(',');
            }
            push_number(&mut line, v);
        };
        push(r.t);
        for v in r
            .state
            .q
            .iter()
            .chain(&r.state.qd)
            .chain(&r.state.qdd)
            .chain(r.slack.iter())
        {
            push(*v);
        }
        for v in r.pose.p.iter().chain(r.reference.p.iter()) {
            push(*v);
        }
        push(r.e_p);
        push(r.e_sf);
        for v in quaternion(&r.pose.r)
            .into_iter()
            .chain(quaternion(&r.reference.r))
        {
            push(v);
        }
        line.push_str(if r.degenerate { ",1" } else { ",0" });
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Settings a run was produced with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub gains: TaskGains,
    pub weights: RacWeights,
    pub dt: f64,
    pub model: String,
    pub braking_bounds: bool,
}

impl Provenance {
    pub fn of(config: &ExperimentConfig) -> Self {
        Provenance {
            gains: config.gains,
            weights: config.weights.clone(),
            dt: config.dt,
            model: config.model.display().to_string(),
            braking_bounds: config.braking_bounds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    #[serde(rename = "E_p")]
    pub e_p: f64,
    #[serde(rename = "E_sf")]
    pub e_sf: f64,
    pub max_e_sf: f64,
    #[serde(rename = "Sl")]
    pub sl: f64,
    pub infeasible: bool,
    pub mode: Mode,
    #[serde(rename = "T")]
    pub t: f64,
    pub trajectory: String,
    pub provenance: Provenance,
}

impl MetricsDocument {
    pub fn new(metrics: &RunMetrics, config: &ExperimentConfig) -> Self {
        MetricsDocument {
            e_p: metrics.e_p,
            e_sf: metrics.e_sf,
            max_e_sf: metrics.max_e_sf,
            sl: metrics.sl,
            infeasible: metrics.infeasible,
            mode: config.mode,
            t: config.navigation_time(),
            trajectory: config.trajectory.shape.kind().into(),
            provenance: Provenance::of(config),
        }
    }

    pub fn to_json(&self) -> String {
        // plain data with string keys; serialization cannot fail
        serde_json::to_string_pretty(self).expect("metrics document serializes") + "\n"
    }
}

pub const SWEEP_CSV_HEADER: &str = "T,mode,E_p,E_sf,max_e_sf,Sl,infeasible,error";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for row in rows {
        let _ = match &row.outcome {
            Ok(m) => writeln!(
                out,
                "{},{},{},{},{},{},{},",
                row.t, row.mode, m.e_p, m.e_sf, m.max_e_sf, m.sl, m.infeasible
            ),
            Err(msg) => writeln!(
                out,
                "{},{},,,,,,\"{}\"",
                row.t,
                row.mode,
                msg.replace('"', "'")
            ),
        };
    }
    out
}

/// One of the four sweep benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMetric {
    EP,
    ESf,
    MaxESf,
    Sl,
}

impl SweepMetric {
    pub const ALL: [SweepMetric; 4] = [
        SweepMetric::EP,
        SweepMetric::ESf,
        SweepMetric::MaxESf,
        SweepMetric::Sl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepMetric::EP => "E_p",
            SweepMetric::ESf => "E_sf",
            SweepMetric::MaxESf => "max_e_sf",
            SweepMetric::Sl => "Sl",
        }
    }

    fn unit(self) -> &'static str {
        match self {
            SweepMetric::EP => "m s",
            SweepMetric::ESf => "rad s",
            SweepMetric::MaxESf => "rad",
            SweepMetric::Sl => "log10",
        }
    }

    fn value(self, m: &RunMetrics) -> f64 {
        match self {
            SweepMetric::EP => m.e_p,
            SweepMetric::ESf => m.e_sf,
            SweepMetric::MaxESf => m.max_e_sf,
            // slack spans many decades
            SweepMetric::Sl => m.sl.max(1e-12).log10(),
        }
    }
}

fn mode_color(mode: Mode) -> &'static str {
    match mode {
        Mode::SloshFree => "#1f5fbf",
        Mode::Baseline => "#c8321e",
    }
}

/// Line chart of one metric against `T`, one polyline per mode. Navigation
/// times whose slosh-free run needed slack (or any run, if no slosh-free
/// run exists) are shaded gray.
pub fn sweep_svg(rows: &[SweepRow], metric: SweepMetric) -> String {
    const W: f64 = 480.0;
    const H: f64 = 300.0;
    const L: f64 = 60.0;
    const R: f64 = 20.0;
    const TOP: f64 = 30.0;
    const B: f64 = 40.0;

    let ok: Vec<(f64, Mode, f64, bool)> = rows
        .iter()
        .filter_map(|r| {
            r.outcome
                .as_ref()
                .ok()
                .map(|m| (r.t, r.mode, metric.value(m), m.infeasible))
        })
        .collect();
    let mut times: Vec<f64> = rows.iter().map(|r| r.t).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();

    let (t_lo, t_hi) = match (times.first(), times.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        (Some(&a), _) => (a - 0.5, a + 0.5),
        _ => (0.0, 1.0),
    };
    let (mut y_lo, mut y_hi) = ok
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.2), hi.max(p.2))
        });
    if !y_lo.is_finite() {
        (y_lo, y_hi) = (0.0, 1.0);
    }
    if metric != SweepMetric::Sl {
        y_lo = y_lo.min(0.0);
    }
    if y_hi - y_lo < 1e-12 {
        y_hi = y_lo + 1.0;
    }
    let x = |t: f64| L + (t - t_lo) / (t_hi - t_lo) * (W - L - R);
    let y = |v: f64| H - B - (v - y_lo) / (y_hi - y_lo) * (H - TOP - B);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);

    let shade_mode = if ok.iter().any(|p| p.1 == Mode::SloshFree) {
        Some(Mode::SloshFree)
    } else {
        None
    };
    for (i, &t) in times.iter().enumerate() {
        let infeasible = ok
            .iter()
            .any(|p| p.0 == t && p.3 && shade_mode.is_none_or(|m| p.1 == m));
        if !infeasible {
            continue;
        }
        let left = if i == 0 {
            x(t)
        } else {
            0.5 * (x(times[i - 1]) + x(t))
        };
        let right = if i + 1 == times.len() {
            x(t)
        } else {
            0.5 * (x(t) + x(times[i + 1]))
        };
        let _ = writeln!(
            svg,
            r##"<rect x="{left:.2}" y="{TOP}" width="{:.2}" height="{:.2}" fill="#d0d0d0"/>"##,
            (right - left).max(2.0),
            H - TOP - B
        );
    }

    let _ = writeln!(
        svg,
        r#"<line x1="{L}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/><line x1="{L}" y1="{TOP}" x2="{L}" y2="{0}" stroke="black"/>"#,
        H - B,
        W - R
    );
    for &t in &times {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{t}</text>"#,
            x(t),
            H - B + 15.0
        );
    }
    for k in 0..=4 {
        let v = y_lo + (y_hi - y_lo) * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.3e}</text>"#,
            L - 4.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">T (s)</text><text x="{L}" y="18">{} ({})</text>"#,
        0.5 * (L + W - R),
        H - 8.0,
        metric.name(),
        metric.unit()
    );

    for (k, mode) in Mode::ALL.iter().enumerate() {
        let pts: Vec<String> = ok
            .iter()
            .filter(|p| p.1 == *mode)
            .map(|p| format!("{:.2},{:.2}", x(p.0), y(p.2)))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let color = mode_color(*mode);
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        for p in &pts {
            let (px, py) = p.split_once(',').unwrap_or(("0", "0"));
            let _ = writeln!(svg, r#"<circle cx="{px}" cy="{py}" r="3" fill="{color}"/>"#);
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="18" fill="{color}">{mode}</text>"#,
            W - R - 150.0 + 75.0 * k as f64
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn write_file(path: &Path, content: &[u8]) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::io(path, e))
}
