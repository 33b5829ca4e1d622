//! Numerical self-checks behind `validate`: finite differences against the
//! analytic kinematics, and KKT residuals of solved random QPs.

use nalgebra::{DMatrix, DVector, Matrix6xX, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::kinematics::{JointState, KinematicModel, ModelDescription};
use crate::parallel::{self, ExecPolicy};
use crate::qp::{kkt_residuals, QpProblem, QpSolver};
use crate::so3;

pub const FK_ORTHONORMALITY_TOL: f64 = 1e-9;
pub const JACOBIAN_REL_TOL: f64 = 1e-5;
pub const HESSIAN_REL_TOL: f64 = 1e-4;
pub const ACCEL_REL_TOL: f64 = 1e-4;
pub const KKT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub samples: usize,
    /// Worst error over all samples (`NaN` if any sample was non-finite).
    pub worst: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.worst.is_finite() && self.worst <= self.tolerance
    }

    fn from_errors(name: &'static str, tolerance: f64, errors: &[f64]) -> Self {
        let worst = errors.iter().fold(0.0_f64, |w, &e| {
            if e.is_nan() || w.is_nan() {
                f64::NAN
            } else {
                w.max(e)
            }
        });
        CheckResult {
            name,
            samples: errors.len(),
            worst,
            tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfCheckReport {
    pub model: String,
    /// Problems found by the model's structural validation, if any.
    pub model_error: Option<String>,
    pub checks: Vec<CheckResult>,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.model_error.is_none() && self.checks.iter().all(CheckResult::passed)
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<28} {:>7} {:>12} {:>10}  result\n",
            "check", "samples", "worst", "tolerance"
        );
        let status = |ok: bool| if ok { "PASS" } else { "FAIL" };
        out += &format!(
            "{:<28} {:>7} {:>12} {:>10}  {}\n",
            "model structure",
            1,
            "-",
            "-",
            status(self.model_error.is_none())
        );
        if let Some(e) = &self.model_error {
            out += &format!("  {e}\n");
        }
        for c in &self.checks {
            out += &format!(
                "{:<28} {:>7} {:>12.3e} {:>10.0e}  {}\n",
                c.name,
                c.samples,
                c.worst,
                c.tolerance,
                status(c.passed())
            );
        }
        out
    }
}

fn random_configuration(model: &KinematicModel, rng: &mut impl Rng) -> Vec<f64> {
    (0..model.n())
        .map(|i| {
            let (lo, hi) = (
                model.limits.q_min.get(i).copied(),
                model.limits.q_max.get(i).copied(),
            );
            match (lo, hi) {
                (Some(lo), Some(hi)) if lo.is_finite() && hi.is_finite() && lo < hi => {
                    rng.random_range(lo..hi)
                }
                _ => rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            }
        })
        .collect()
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

fn dyn6(j: &Matrix6xX<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(6, j.ncols(), j.as_slice())
}

/// Central-difference Jacobian of the forward kinematics; the angular part
/// is the world-frame rotation vector of `R(q+h) R(q-h)^T`.
fn fd_jacobian(model: &KinematicModel, q: &[f64], h: f64) -> Option<DMatrix<f64>> {
    let n = model.n();
    let mut jac = DMatrix::zeros(6, n);
    for i in 0..n {
        let mut qp = q.to_vec();
        let mut qm = q.to_vec();
        qp[i] += h;
        qm[i] -= h;
        let (a, b) = (
            model.forward_kinematics(&qp).ok()?,
            model.forward_kinematics(&qm).ok()?,
        );
        let dp = (a.p - b.p) / (2.0 * h);
        let dr = so3::log_map(&(a.r * b.r.transpose())) / (2.0 * h);
        for r in 0..3 {
            jac[(r, i)] = dp[r];
            jac[(r + 3, i)] = dr[r];
        }
    }
    Some(jac)
}

fn fk_orthonormality(model: &KinematicModel, q: &[f64]) -> f64 {
    match model.forward_kinematics(q) {
        Ok(pose) if pose.p.iter().all(|v| v.is_finite()) => {
            let err = so3::orthonormality_error(&pose.r);
            let det = (pose.r.determinant() - 1.0).abs();
            err.max(det)
        }
        _ => f64::NAN,
    }
}

fn jacobian_error(model: &KinematicModel, q: &[f64]) -> f64 {
    match (model.jacobian(q), fd_jacobian(model, q, 1e-6)) {
        (Ok(j), Some(fd)) => rel_err(&dyn6(&j), &fd),
        _ => f64::NAN,
    }
}

fn hessian_error(model: &KinematicModel, q: &[f64]) -> f64 {
    let Ok(hess) = model.hessian(q) else {
        return f64::NAN;
    };
    let h = 1e-6;
    let mut worst = 0.0_f64;
    for i in 0..model.n() {
        let mut qp = q.to_vec();
        let mut qm = q.to_vec();
        qp[i] += h;
        qm[i] -= h;
        let (Ok(a), Ok(b)) = (model.jacobian(&qp), model.jacobian(&qm)) else {
            return f64::NAN;
        };
        let fd = dyn6(&((a - b) / (2.0 * h)));
        let analytic = dyn6(hess.slice(i));
        // slices with a vanishing reference are compared absolutely
        let e = if fd.norm() < 1e-9 {
            (analytic - fd).norm()
        } else {
            rel_err(&analytic, &fd)
        };
        if e.is_nan() {
            return f64::NAN;
        }
        worst = worst.max(e);
    }
    worst
}

/// `d/dt (J(q(t)) qd(t))` at `t = 0` for `q(t) = q + qd t + qdd t^2 / 2`,
/// against `J qdd + qd (x) H qd`.
fn acceleration_error(model: &KinematicModel, q: &[f64], qd: &[f64], qdd: &[f64]) -> f64 {
    let twist_at = |t: f64| -> Option<Vector6<f64>> {
        let qt: Vec<f64> = (0..q.len())
            .map(|i| q[i] + qd[i] * t + 0.5 * qdd[i] * t * t)
            .collect();
        let qdt: Vec<f64> = (0..q.len()).map(|i| qd[i] + qdd[i] * t).collect();
        let state = JointState {
            q: DVector::from_vec(qt),
            qd: DVector::from_vec(qdt),
            qdd: DVector::zeros(q.len()),
        };
        model.ee_velocity(&state).ok().map(|tw| tw.to_vector())
    };
    let h = 1e-6;
    let (Some(a), Some(b)) = (twist_at(h), twist_at(-h)) else {
        return f64::NAN;
    };
    let fd = (a - b) / (2.0 * h);
    let state = JointState {
        q: DVector::from_column_slice(q),
        qd: DVector::from_column_slice(qd),
        qdd: DVector::from_column_slice(qdd),
    };
    match model.ee_acceleration(&state) {
        Ok(acc) => (acc.to_vector() - fd).norm() / fd.norm().max(1.0),
        Err(_) => f64::NAN,
    }
}

/// Random strictly convex QP with equality and inequality rows, feasible by
/// construction (all rows hold at a random interior point).
pub fn random_feasible_qp(rng: &mut impl Rng) -> QpProblem {
    let d = rng.random_range(1..=8);
    let me = rng.random_range(0..=d.min(3));
    let mi = rng.random_range(0..=10);
    let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let p = &m * m.transpose() + DMatrix::identity(d, d) * 0.5;
    let lin = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
    let x0 = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
    let a_eq = DMatrix::from_fn(me, d, |_, _| rng.random_range(-1.0..1.0));
    let b_eq = &a_eq * &x0;
    let a_in = DMatrix::from_fn(mi, d, |_, _| rng.random_range(-1.0..1.0));
    let slack = DVector::from_fn(mi, |_, _| rng.random_range(0.0..0.5));
    let b_in = &a_in * &x0 - slack;
    QpProblem::new(p)
        .with_linear(lin)
        .with_equalities(a_eq, b_eq)
        .with_inequalities(a_in, b_in)
}

fn kkt_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prob = random_feasible_qp(&mut rng);
    match QpSolver::new().solve(&prob) {
        Ok(sol) => kkt_residuals(&prob, &sol.x, &sol.multipliers).max(),
        Err(_) => f64::NAN,
    }
}

/// Runs every check on `model`, `samples` configurations / problems each.
pub fn run_checks(
    model: &KinematicModel,
    samples: usize,
    seed: u64,
    policy: ExecPolicy,
) -> SelfCheckReport {
    let model_error = model.validate().err().map(|e| e.to_string());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states: Vec<[Vec<f64>; 3]> = (0..samples)
        .map(|_| {
            let q = random_configuration(model, &mut rng);
            let qd = (0..model.n())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let qdd = (0..model.n())
                .map(|_| rng.random_range(-5.0..5.0))
                .collect();
            [q, qd, qdd]
        })
        .collect();
    let seeds: Vec<u64> = (0..samples as u64)
        .map(|k| seed.wrapping_mul(31).wrapping_add(k))
        .collect();

    let per_state = parallel::map(policy, &states, |[q, qd, qdd]| {
        [
            fk_orthonormality(model, q),
            jacobian_error(model, q),
            hessian_error(model, q),
            acceleration_error(model, q, qd, qdd),
        ]
    });
    let column = |k: usize| per_state.iter().map(|e| e[k]).collect::<Vec<f64>>();
    let kkt = parallel::map(policy, &seeds, |&s| kkt_error(s));

    SelfCheckReport {
        model: model.name.clone(),
        model_error,
        checks: vec![
            CheckResult::from_errors("FK orthonormality", FK_ORTHONORMALITY_TOL, &column(0)),
            CheckResult::from_errors("Jacobian vs FD", JACOBIAN_REL_TOL, &column(1)),
            CheckResult::from_errors("Hessian vs FD", HESSIAN_REL_TOL, &column(2)),
            CheckResult::from_errors("EE acceleration vs FD", ACCEL_REL_TOL, &column(3)),
            CheckResult::from_errors("QP KKT residual", KKT_TOL, &kkt),
        ],
    }
}

/// Parses a model file and checks it. Only unreadable or unparsable files
/// are errors; everything else is reported in the table.
pub fn validate_model_file(
    path: &std::path::Path,
    samples: usize,
    policy: ExecPolicy,
) -> Result<SelfCheckReport> {
    let content = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
    let model = KinematicModel::from_description_unchecked(ModelDescription::parse(&content)?);
    Ok(run_checks(&model, samples, 0x5eed, policy))
}
