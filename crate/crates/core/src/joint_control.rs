//! Resolved-acceleration control as a convex QP.
//!
//! Decision vector `x = (q, qd, qdd, delta)` with `3n + 6` entries. The
//! Jacobian and the velocity-product term are frozen at the current state,
//! the next state comes from one semi-implicit Euler step, and the task
//! acceleration is matched up to the slack `delta`, which keeps the problem
//! feasible whatever the task space demands.

use nalgebra::{DMatrix, DVector, Matrix6xX, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{JointState, KinematicModel, Limits};
use crate::metrics::DELTA_TOL;
use crate::qp::{write_dump, QpError, QpProblem, QpSolver};
use crate::task_control::TaskCommand;

/// Diagonal cost weights for `(q, qd, qdd, delta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RacWeights {
    pub w_q: Vec<f64>,
    pub w_qd: Vec<f64>,
    pub w_qdd: Vec<f64>,
    pub w_slack: [f64; 6],
}

impl RacWeights {
    /// `blkdiag(1e-8 I, I, 1e-8 I, 1e3 I6)`.
    pub fn standard(n: usize) -> Self {
        RacWeights {
            w_q: vec![1e-8; n],
            w_qd: vec![1.0; n],
            w_qdd: vec![1e-8; n],
            w_slack: [1e3; 6],
        }
    }

    pub fn n(&self) -> usize {
        self.w_q.len()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        for (what, w) in [
            ("w_q", &self.w_q),
            ("w_qd", &self.w_qd),
            ("w_qdd", &self.w_qdd),
        ] {
            if w.len() != n {
                return Err(Error::DimensionMismatch {
                    what: match what {
                        "w_q" => "weights w_q",
                        "w_qd" => "weights w_qd",
                        _ => "weights w_qdd",
                    },
                    expected: n,
                    got: w.len(),
                });
            }
        }
        let all = self
            .w_q
            .iter()
            .chain(&self.w_qd)
            .chain(&self.w_qdd)
            .chain(&self.w_slack);
        if all.clone().all(|&w| w > 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "RAC weights must be strictly positive".into(),
            ))
        }
    }

    /// The diagonal of the cost matrix, in decision-vector order.
    pub fn diagonal(&self) -> Vec<f64> {
        self.w_q
            .iter()
            .chain(&self.w_qd)
            .chain(&self.w_qdd)
            .chain(&self.w_slack)
            .copied()
            .collect()
    }
}

impl Default for RacWeights {
    fn default() -> Self {
        Self::standard(7)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointCommand {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub qdd: DVector<f64>,
    pub slack: Vector6<f64>,
    /// `|slack|_inf < DELTA_TOL`.
    pub feasible_without_slack: bool,
    pub iterations: usize,
}

impl JointCommand {
    pub fn state(&self) -> JointState {
        JointState {
            q: self.q.clone(),
            qd: self.qd.clone(),
            qdd: self.qdd.clone(),
        }
    }
}

/// Per-step settings of the RAC layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RacSettings {
    #[serde(default)]
    pub weights: RacWeights,
    pub dt: f64,
    /// Tighten the acceleration box so the next state can still brake
    /// inside the velocity and position limits (see [`acceleration_band`]).
    #[serde(default = "default_true")]
    pub braking_bounds: bool,
}

fn default_true() -> bool {
    true
}

impl RacSettings {
    pub fn new(weights: RacWeights, dt: f64) -> Self {
        RacSettings {
            weights,
            dt,
            braking_bounds: true,
        }
    }
}

/// Row counts of the RAC QP for `n` joints: `(variables, equalities, box rows, jerk rows)`.
pub fn rac_dimensions(n: usize) -> (usize, usize, usize, usize) {
    (3 * n + 6, 2 * n + 6, 6 * n, 2 * n)
}

/// Largest `a` with `v0 + dt a + max(a, 0)^2 / (2 jerk) <= v_max`.
///
/// After commanding `a > 0`, ramping the acceleration back to zero at the
/// jerk limit adds at most `a^2 / (2 jerk)` of velocity, in discrete time too.
fn velocity_braking_limit(v0: f64, v_max: f64, jerk: f64, dt: f64) -> f64 {
    let room = v_max - v0;
    if room < 0.0 {
        return room / dt;
    }
    jerk * (-dt + (dt * dt + 2.0 * room / jerk).sqrt())
}

/// Conservative distance travelled (toward the upper limit) before coming
/// to rest from velocity `v` and acceleration `a`, braking with deceleration
/// `decel` reached at jerk `jerk`, including a discretization margin.
fn stopping_distance(v: f64, a: f64, decel: f64, jerk: f64, dt: f64) -> f64 {
    let v_peak = v + a.max(0.0).powi(2) / (2.0 * jerk);
    if v_peak <= 0.0 {
        return 0.0;
    }
    let ramp = (a + decel).max(0.0) / jerk;
    v_peak * (ramp + 2.0 * dt) + v_peak * v_peak / (2.0 * decel)
}

/// Largest `a` in `[a_lo, a_hi]` keeping the stopping point below `q_max`
/// (or `a_lo` if none does). The constraint is monotone in `a`.
fn position_braking_limit(
    q0: f64,
    v0: f64,
    q_max: f64,
    decel: f64,
    jerk: f64,
    dt: f64,
    (a_lo, a_hi): (f64, f64),
) -> f64 {
    let excess = |a: f64| {
        let v = v0 + dt * a;
        q0 + dt * v + stopping_distance(v, a, decel, jerk, dt) - q_max
    };
    if excess(a_hi) <= 0.0 {
        return a_hi;
    }
    if excess(a_lo) > 0.0 {
        return a_lo;
    }
    let (mut lo, mut hi) = (a_lo, a_hi);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Box on the next joint accelerations.
///
/// Without braking bounds this is the acceleration limit. With them, each
/// side is further limited so that from the resulting state the joint can
/// still ramp its acceleration down at the jerk limit and stop inside the
/// velocity band and the position band. Since the joint limits are
/// decoupled, this keeps the constraint set nonempty step after step; the
/// single-step constraints alone can trap a joint that is decelerating
/// into its velocity limit.
pub fn acceleration_band(
    limits: &Limits,
    state0: &JointState,
    dt: f64,
    braking_bounds: bool,
) -> (Vec<f64>, Vec<f64>) {
    let n = state0.n();
    let mut lo = limits.qdd_min.clone();
    let mut hi = limits.qdd_max.clone();
    if !braking_bounds {
        return (lo, hi);
    }
    for i in 0..n {
        let (q0, v0, a_min, a_max) = (
            state0.q[i],
            state0.qd[i],
            limits.qdd_min[i],
            limits.qdd_max[i],
        );
        // upper side brakes with the most negative acceleration and jerk
        let (decel_up, jerk_up) = (-a_min, -limits.qddd_min[i]);
        let (decel_dn, jerk_dn) = (a_max, limits.qddd_max[i]);
        let hi_v = velocity_braking_limit(v0, limits.qd_max[i], jerk_up, dt);
        let lo_v = -velocity_braking_limit(-v0, -limits.qd_min[i], jerk_dn, dt);
        let hi_p = position_braking_limit(
            q0,
            v0,
            limits.q_max[i],
            decel_up,
            jerk_up,
            dt,
            (a_min, a_max),
        );
        let lo_p = -position_braking_limit(
            -q0,
            -v0,
            -limits.q_min[i],
            decel_dn,
            jerk_dn,
            dt,
            (-a_max, -a_min),
        );
        hi[i] = a_max.min(hi_v).min(hi_p);
        lo[i] = a_min.max(lo_v).max(lo_p);
    }
    (lo, hi)
}

/// Assembles the QP for one control step.
///
/// Inequality rows are ordered: for each of `q`, `qd`, `qdd` all lower bounds
/// then all upper bounds, then the jerk band (lower then upper), written in
/// acceleration units as `qdd0 + jerk_min dt <= qdd <= qdd0 + jerk_max dt`.
pub fn build_rac_qp(
    state0: &JointState,
    u_t: &TaskCommand,
    j0: &Matrix6xX<f64>,
    h0: &Vector6<f64>,
    limits: &Limits,
    settings: &RacSettings,
) -> Result<QpProblem> {
    let n = state0.n();
    let dt = settings.dt;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::NonPositiveDuration(dt));
    }
    let dim = |what, got| {
        if got == n {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                what,
                expected: n,
                got,
            })
        }
    };
    dim("joint velocities", state0.qd.len())?;
    dim("joint accelerations", state0.qdd.len())?;
    dim("jacobian columns", j0.ncols())?;
    dim("limits", limits.q_min.len())?;
    settings.weights.validate(n)?;

    let (nv, neq, nbox, njerk) = rac_dimensions(n);
    let (iq, iqd, iqdd, islack) = (0, n, 2 * n, 3 * n);

    let p = DMatrix::from_diagonal(&DVector::from_vec(settings.weights.diagonal()));

    let mut a_eq = DMatrix::zeros(neq, nv);
    let mut b_eq = DVector::zeros(neq);
    for i in 0..n {
        // q - dt qd = q0
        a_eq[(i, iq + i)] = 1.0;
        a_eq[(i, iqd + i)] = -dt;
        b_eq[i] = state0.q[i];
        // qd - dt qdd = qd0
        a_eq[(n + i, iqd + i)] = 1.0;
        a_eq[(n + i, iqdd + i)] = -dt;
        b_eq[n + i] = state0.qd[i];
    }
    // J0 qdd - delta = u_T - h0
    for r in 0..6 {
        let row = 2 * n + r;
        for c in 0..n {
            a_eq[(row, iqdd + c)] = j0[(r, c)];
        }
        a_eq[(row, islack + r)] = -1.0;
        b_eq[row] = u_t.u[r] - h0[r];
    }

    let (qdd_lo, qdd_hi) = acceleration_band(limits, state0, dt, settings.braking_bounds);
    let mut a_in = DMatrix::zeros(nbox + njerk, nv);
    let mut b_in = DVector::zeros(nbox + njerk);
    let bands = [
        (iq, &limits.q_min, &limits.q_max),
        (iqd, &limits.qd_min, &limits.qd_max),
        (iqdd, &qdd_lo, &qdd_hi),
    ];
    let mut row = 0;
    for (offset, lo, hi) in bands {
        for i in 0..n {
            a_in[(row, offset + i)] = 1.0;
            b_in[row] = lo[i];
            a_in[(row + n, offset + i)] = -1.0;
            b_in[row + n] = -hi[i];
            row += 1;
        }
        row += n;
    }
    for i in 0..n {
        a_in[(row + i, iqdd + i)] = 1.0;
        b_in[row + i] = state0.qdd[i] + limits.qddd_min[i] * dt;
        a_in[(row + n + i, iqdd + i)] = -1.0;
        b_in[row + n + i] = -(state0.qdd[i] + limits.qddd_max[i] * dt);
    }

    Ok(QpProblem::new(p)
        .with_equalities(a_eq, b_eq)
        .with_inequalities(a_in, b_in))
}

/// Tolerance on the incoming state's limit violation.
pub const STATE_LIMIT_TOL: f64 = 1e-6;

/// Builds and solves one RAC step at `state0`.
pub fn rac_step(
    model: &KinematicModel,
    state0: &JointState,
    u_t: &TaskCommand,
    settings: &RacSettings,
    solver: &mut QpSolver,
) -> Result<JointCommand> {
    let (j0, h0) =
        model.jacobian_and_velocity_product(state0.q.as_slice(), state0.qd.as_slice())?;
    solve_rac(state0, u_t, &j0, &h0, &model.limits, settings, solver)
}

/// [`rac_step`] with the Jacobian and velocity-product term supplied by the caller.
pub fn solve_rac(
    state0: &JointState,
    u_t: &TaskCommand,
    j0: &Matrix6xX<f64>,
    h0: &Vector6<f64>,
    limits: &Limits,
    settings: &RacSettings,
    solver: &mut QpSolver,
) -> Result<JointCommand> {
    let violation = limits.violation(state0);
    if violation > STATE_LIMIT_TOL {
        return Err(Error::InvalidConfig(format!(
            "initial state violates joint limits by {violation:.3e}"
        )));
    }
    let problem = build_rac_qp(state0, u_t, j0, h0, limits, settings)?;
    let sol = solver.solve(&problem).map_err(|source| Error::Solver {
        source,
        dump: Box::new(write_dump(&problem)),
    })?;
    let n = state0.n();
    let x = &sol.x;
    let slack = Vector6::from_iterator(x.rows(3 * n, 6).iter().copied());
    Ok(JointCommand {
        q: x.rows(0, n).into_owned(),
        qd: x.rows(n, n).into_owned(),
        qdd: x.rows(2 * n, n).into_owned(),
        feasible_without_slack: slack.amax() < DELTA_TOL,
        slack,
        iterations: sol.iterations,
    })
}

/// Whether the step is feasible with the slacks pinned to zero.
pub fn probe_without_slack(
    state0: &JointState,
    u_t: &TaskCommand,
    j0: &Matrix6xX<f64>,
    h0: &Vector6<f64>,
    limits: &Limits,
    settings: &RacSettings,
    solver: &mut QpSolver,
) -> Result<bool> {
    let mut problem = build_rac_qp(state0, u_t, j0, h0, limits, settings)?;
    let n = state0.n();
    let (_, neq, _, _) = rac_dimensions(n);
    let mut a_eq = problem.a_eq.clone().resize_vertically(neq + 6, 0.0);
    for r in 0..6 {
        a_eq[(neq + r, 3 * n + r)] = 1.0;
    }
    problem.a_eq = a_eq;
    problem.b_eq = problem.b_eq.clone().resize_vertically(neq + 6, 0.0);
    match solver.solve(&problem) {
        Ok(_) => Ok(true),
        Err(QpError::Infeasible) => Ok(false),
        Err(source) => Err(Error::Solver {
            source,
            dump: Box::new(write_dump(&problem)),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::load_model;
    use nalgebra::Vector6;

    fn panda() -> KinematicModel {
        load_model(include_str!("../../../models/panda.toml")).unwrap()
    }

    fn settings(dt: f64) -> RacSettings {
        RacSettings::new(RacWeights::standard(7), dt)
    }

    fn home() -> DVector<f64> {
        DVector::from_vec(vec![0.0, -0.785, 0.0, -2.356, 0.0, 1.571, 0.785])
    }

    #[test]
    fn problem_shape_for_seven_joints() {
        let m = panda();
        let s = JointState::at_rest(home());
        let j0 = m.jacobian(s.q.as_slice()).unwrap();
        let u = TaskCommand {
            u: Vector6::zeros(),
        };
        let prob = build_rac_qp(
            &s,
            &u,
            &j0,
            &Vector6::zeros(),
            &m.limits,
            &RacSettings::new(RacWeights::standard(7), 1e-3),
        )
        .unwrap();
        assert_eq!(prob.dim(), 27);
        assert_eq!(prob.n_eq(), 20);
        assert_eq!(prob.n_in(), 42 + 14);
        assert_eq!(prob.lin, DVector::zeros(27));
        let diag: Vec<f64> = prob.p.diagonal().iter().copied().collect();
        let mut expected = vec![1e-8; 7];
        expected.extend([1.0; 7]);
        expected.extend([1e-8; 7]);
        expected.extend([1e3; 6]);
        assert_eq!(diag, expected);
        assert_eq!(
            prob.p.clone() - DMatrix::from_diagonal(&prob.p.diagonal()),
            DMatrix::zeros(27, 27)
        );
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let m = panda();
        let s = JointState::at_rest(home());
        let j0 = m.jacobian(s.q.as_slice()).unwrap();
        let u = TaskCommand {
            u: Vector6::zeros(),
        };
        let zero_dt = RacSettings::new(RacWeights::standard(7), 0.0);
        assert!(build_rac_qp(&s, &u, &j0, &Vector6::zeros(), &m.limits, &zero_dt).is_err());
        let short = RacSettings::new(RacWeights::standard(6), 1e-3);
        assert!(build_rac_qp(&s, &u, &j0, &Vector6::zeros(), &m.limits, &short).is_err());
    }

    #[test]
    fn rest_is_a_fixpoint() {
        let m = panda();
        let s = JointState::at_rest(home());
        let u = TaskCommand {
            u: Vector6::zeros(),
        };
        let mut solver = QpSolver::new();
        let cmd = rac_step(&m, &s, &u, &settings(1e-3), &mut solver).unwrap();
        assert!(cmd.qdd.amax() < 1e-8, "{}", cmd.qdd);
        assert!(cmd.slack.amax() < 1e-8, "{}", cmd.slack);
        assert!(cmd.feasible_without_slack);
        assert!((cmd.q - &s.q).amax() < 1e-10);
    }

    #[test]
    fn excessive_demand_activates_slack() {
        let m = panda();
        let s = JointState::at_rest(home());
        let u = TaskCommand {
            u: Vector6::new(1e4, 0.0, 0.0, 0.0, 0.0, 0.0),
        };
        let mut solver = QpSolver::new();
        let dt = 1e-3;
        let cmd = rac_step(&m, &s, &u, &settings(dt), &mut solver).unwrap();
        assert!(cmd.slack.amax() > 1.0);
        assert!(!cmd.feasible_without_slack);
        let next = cmd.state();
        assert!(m.limits.violation(&next) < 1e-8);
        assert!(m.limits.jerk_violation(&s.qdd, &next.qdd, dt) < 1e-8);
    }

    #[test]
    fn state_outside_limits_is_refused() {
        let m = panda();
        let mut q = home();
        q[3] = 0.5;
        let s = JointState::at_rest(q);
        let u = TaskCommand {
            u: Vector6::zeros(),
        };
        let err = rac_step(&m, &s, &u, &settings(1e-3), &mut QpSolver::new());
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
    }
}
