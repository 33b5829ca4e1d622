//! Pointwise tracking errors and the aggregate benchmarks of a run.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reference::EPS_ACC;
use crate::simulation::RunLog;

/// Slack magnitude (acceleration units) above which a step counts as infeasible.
pub const DELTA_TOL: f64 = 1e-3;
/// Samples before this time (s from the first sample) are excluded from `max_e_sf`.
pub const TRANSIENT_WINDOW: f64 = 0.2;
/// Default slosh-free tolerance used for pass/fail reporting: 1 degree.
pub const EPS_SF: f64 = std::f64::consts::PI / 180.0;

pub fn position_error(p_r: &Vector3<f64>, p_e: &Vector3<f64>) -> f64 {
    (p_r - p_e).norm()
}

/// Angle between the container axis `R_e e3` and the specific force `a_e + g`.
///
/// Returns `None` in free fall (`|a_e + g| <= EPS_ACC`), where it is undefined.
pub fn slosh_free_angle(
    a_e: &Vector3<f64>,
    r_e: &Matrix3<f64>,
    g_comp: &Vector3<f64>,
) -> Option<f64> {
    let a_g = a_e + g_comp;
    if !(a_g.norm() > EPS_ACC) {
        return None;
    }
    let axis = r_e.column(2).into_owned();
    let vertical = axis.dot(&a_g);
    let horizontal = (a_g - axis * vertical).norm();
    Some(horizontal.atan2(vertical))
}

/// Aggregate benchmarks of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Integral of the position error (m s).
    pub e_p: f64,
    /// Integral of the slosh-free angle (rad s).
    pub e_sf: f64,
    /// Peak slosh-free angle after the transient window (rad).
    pub max_e_sf: f64,
    /// Sum over the six axes of the integral of `|delta_i|`.
    pub sl: f64,
    /// Some step needed `|delta|_inf > DELTA_TOL`.
    pub infeasible: bool,
}

/// The per-sample series `aggregate` needs from a log.
pub struct Series<'a> {
    pub t: &'a [f64],
    pub e_p: &'a [f64],
    /// `NaN` marks samples where the angle is undefined.
    pub e_sf: &'a [f64],
    pub slack: &'a [[f64; 6]],
}

/// Trapezoidal integral; intervals touching a non-finite sample are skipped.
pub fn trapezoid(t: &[f64], y: &[f64]) -> f64 {
    t.windows(2)
        .zip(y.windows(2))
        .filter(|(_, w)| w[0].is_finite() && w[1].is_finite())
        .map(|(tt, w)| 0.5 * (tt[1] - tt[0]) * (w[0] + w[1]))
        .sum()
}

pub fn aggregate_series(series: &Series<'_>) -> Result<RunMetrics> {
    let n = series.t.len();
    if n < 2 || series.e_p.len() != n || series.e_sf.len() != n || series.slack.len() != n {
        return Err(Error::EmptyLog);
    }
    let t0 = series.t[0];
    let max_e_sf = series
        .t
        .iter()
        .zip(series.e_sf)
        .filter(|(&t, e)| t - t0 >= TRANSIENT_WINDOW - 1e-12 && e.is_finite())
        .map(|(_, &e)| e)
        .fold(0.0, f64::max);
    let sl = (0..6)
        .map(|axis| {
            let mag: Vec<f64> = series.slack.iter().map(|d| d[axis].abs()).collect();
            trapezoid(series.t, &mag)
        })
        .sum();
    let infeasible = series
        .slack
        .iter()
        .any(|d| d.iter().any(|x| x.abs() > DELTA_TOL));
    Ok(RunMetrics {
        e_p: trapezoid(series.t, series.e_p),
        e_sf: trapezoid(series.t, series.e_sf),
        max_e_sf,
        sl,
        infeasible,
    })
}

/// Benchmarks of a simulated run.
pub fn aggregate(log: &RunLog) -> Result<RunMetrics> {
    let t: Vec<f64> = log.records.iter().map(|r| r.t).collect();
    let e_p: Vec<f64> = log.records.iter().map(|r| r.e_p).collect();
    let e_sf: Vec<f64> = log.records.iter().map(|r| r.e_sf).collect();
    let slack: Vec<[f64; 6]> = log.records.iter().map(|r| r.slack.into()).collect();
    aggregate_series(&Series {
        t: &t,
        e_p: &e_p,
        e_sf: &e_sf,
        slack: &slack,
    })
}
