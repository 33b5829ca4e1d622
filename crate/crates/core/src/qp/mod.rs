//! Dense strictly convex quadratic programming.
//!
//! ```text
//!     minimize    1/2 x' P x + lin' x
//!     subject to  A_eq x  = b_eq
//!                 A_in x >= b_in
//! ```
//!
//! solved with the Goldfarb-Idnani dual active-set method: start from the
//! unconstrained minimizer, then repeatedly add the most violated constraint,
//! dropping active ones whose multiplier would turn negative. The factor
//! `J = L^-T Q` of the cost and the triangular `R` of the active normals are
//! updated with Givens rotations, so one Cholesky factorization per problem
//! is all the heavy lifting.
//!
//! D. Goldfarb and A. Idnani (1983). A numerically stable dual method for
//! solving strictly convex quadratic programs. Mathematical Programming 27.

mod dump;

pub use dump::{parse_dump, write_dump};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Constraint activation tolerance, relative to `1 + |b_i|`.
pub const ACTIVATION_TOL: f64 = 1e-10;
/// Smallest admissible Cholesky pivot.
pub const PIVOT_TOL: f64 = 1e-12;
/// Allowed asymmetry of the cost matrix.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("constraints are infeasible")]
    Infeasible,
    #[error("cost matrix is not positive definite (pivot {pivot:.3e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("cost matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("equality constraints are linearly dependent")]
    DependentEqualities,
    #[error("iteration limit {0} reached")]
    IterationLimit(usize),
    #[error("problem data contains non-finite values")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

impl QpProblem {
    /// Problem with no constraints and no linear term.
    pub fn new(p: DMatrix<f64>) -> Self {
        let d = p.nrows();
        QpProblem {
            p,
            lin: DVector::zeros(d),
            a_eq: DMatrix::zeros(0, d),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, d),
            b_in: DVector::zeros(0),
        }
    }

    pub fn with_linear(mut self, lin: DVector<f64>) -> Self {
        self.lin = lin;
        self
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_in = a;
        self.b_in = b;
        self
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn n_eq(&self) -> usize {
        self.a_eq.nrows()
    }

    pub fn n_in(&self) -> usize {
        self.a_in.nrows()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.lin.dot(x)
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let d = self.dim();
        let mismatch = |what: &str| Err(QpError::DimensionMismatch(what.to_string()));
        if self.p.ncols() != d {
            return mismatch("P must be square");
        }
        if self.lin.len() != d {
            return mismatch("linear term length");
        }
        if self.a_eq.ncols() != d || self.b_eq.len() != self.a_eq.nrows() {
            return mismatch("equality block");
        }
        if self.a_in.ncols() != d || self.b_in.len() != self.a_in.nrows() {
            return mismatch("inequality block");
        }
        let finite = |m: &[f64]| m.iter().all(|v| v.is_finite());
        if !(finite(self.p.as_slice())
            && finite(self.lin.as_slice())
            && finite(self.a_eq.as_slice())
            && finite(self.b_eq.as_slice())
            && finite(self.a_in.as_slice())
            && finite(self.b_in.as_slice()))
        {
            return Err(QpError::NonFinite);
        }
        let asym = (&self.p - self.p.transpose()).abs().max();
        if asym >= SYMMETRY_TOL * (1.0 + self.p.abs().max()) {
            return Err(QpError::NotSymmetric(asym));
        }
        Ok(())
    }
}

/// Lagrange multipliers with `P x + lin = A_eq' eq + A_in' ineq`, `ineq >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub eq: DVector<f64>,
    pub ineq: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Indices of the binding inequality rows, in activation order.
    pub active_set: Vec<usize>,
    pub iterations: usize,
    pub objective: f64,
    pub multipliers: Multipliers,
}

/// Convenience wrapper allocating a fresh workspace.
pub fn solve(problem: &QpProblem) -> Result<QpSolution, QpError> {
    QpSolver::default().solve(problem)
}

/// Goldfarb-Idnani solver with reusable scratch space. One instance per
/// control loop; not shareable across concurrent solves.
#[derive(Debug, Default, Clone)]
pub struct QpSolver {
    n: usize,
    // column-major n x n
    chol: Vec<f64>,
    j: Vec<f64>,
    r: Vec<f64>,
    // constraint normals, one contiguous column each
    ce: Vec<f64>,
    ce0: Vec<f64>,
    ci: Vec<f64>,
    ci0: Vec<f64>,
    x: Vec<f64>,
    x_old: Vec<f64>,
    d: Vec<f64>,
    z: Vec<f64>,
    rv: Vec<f64>,
    u: Vec<f64>,
    u_old: Vec<f64>,
    s: Vec<f64>,
    // active constraints: equalities are encoded as -(i + 1)
    active: Vec<isize>,
    active_old: Vec<isize>,
    // -1 when the inequality is active, else its own index
    iai: Vec<isize>,
    excluded: Vec<bool>,
    iq: usize,
    r_norm: f64,
}

impl QpSolver {
    pub fn new() -> Self {
        Self::default()
    }

    fn resize(&mut self, n: usize, me: usize, mi: usize) {
        self.n = n;
        let fill = |v: &mut Vec<f64>, len: usize| {
            v.clear();
            v.resize(len, 0.0);
        };
        fill(&mut self.chol, n * n);
        fill(&mut self.j, n * n);
        fill(&mut self.r, n * n);
        fill(&mut self.ce, n * me);
        fill(&mut self.ce0, me);
        fill(&mut self.ci, n * mi);
        fill(&mut self.ci0, mi);
        fill(&mut self.x, n);
        fill(&mut self.x_old, n);
        fill(&mut self.d, n);
        fill(&mut self.z, n);
        fill(&mut self.rv, n + 1);
        fill(&mut self.u, n + 1);
        fill(&mut self.u_old, n + 1);
        fill(&mut self.s, mi);
        self.active.clear();
        self.active.resize(n + 1, 0);
        self.active_old.clear();
        self.active_old.resize(n + 1, 0);
        self.iai.clear();
        self.iai.extend((0..mi).map(|i| i as isize));
        self.excluded.clear();
        self.excluded.resize(mi, false);
        self.iq = 0;
        self.r_norm = 1.0;
    }

    pub fn solve(&mut self, problem: &QpProblem) -> Result<QpSolution, QpError> {
        problem.validate()?;
        let n = problem.dim();
        let me = problem.n_eq();
        let mi = problem.n_in();
        self.resize(n, me, mi);

        for c in 0..me {
            for k in 0..n {
                self.ce[c * n + k] = problem.a_eq[(c, k)];
            }
            self.ce0[c] = -problem.b_eq[c];
        }
        for c in 0..mi {
            for k in 0..n {
                self.ci[c * n + k] = problem.a_in[(c, k)];
            }
            self.ci0[c] = -problem.b_in[c];
        }

        self.factorize(problem)?;

        // unconstrained minimizer x = -P^-1 lin = -J J' lin
        for i in 0..n {
            self.d[i] = (0..n).map(|k| self.j[i * n + k] * problem.lin[k]).sum();
        }
        for k in 0..n {
            self.x[k] = -(0..n).map(|i| self.j[i * n + k] * self.d[i]).sum::<f64>();
        }

        let cap = 10 * (n + mi);
        let mut iterations = 0;

        // equality constraints, always active
        for c in 0..me {
            self.compute_d(Source::Eq(c));
            self.update_z();
            self.update_r();
            let np = &self.ce[c * n..(c + 1) * n];
            let zn = dot(&self.z, np);
            let t2 = if dot(&self.z, &self.z) > f64::EPSILON {
                (-dot(np, &self.x) - self.ce0[c]) / zn
            } else {
                0.0
            };
            let iq = self.iq;
            for k in 0..n {
                self.x[k] += t2 * self.z[k];
            }
            self.u[iq] = t2;
            for k in 0..iq {
                self.u[k] -= t2 * self.rv[k];
            }
            self.active[iq] = -(c as isize) - 1;
            if !self.add_constraint() {
                return Err(QpError::DependentEqualities);
            }
        }

        'outer: loop {
            iterations += 1;
            if iterations > cap {
                return Err(QpError::IterationLimit(cap));
            }
            for k in me..self.iq {
                let ip = self.active[k] as usize;
                self.iai[ip] = -1;
            }
            for c in 0..mi {
                self.excluded[c] = false;
                self.s[c] = self.constraint_value(c);
            }
            self.x_old.copy_from_slice(&self.x);
            self.u_old.copy_from_slice(&self.u);
            self.active_old.copy_from_slice(&self.active);

            'select: loop {
                // most violated inactive inequality, lowest index on ties
                let mut ip = None;
                let mut worst = 0.0;
                for c in 0..mi {
                    let tol = ACTIVATION_TOL * (1.0 + self.ci0[c].abs());
                    if self.iai[c] != -1
                        && !self.excluded[c]
                        && self.s[c] < -tol
                        && self.s[c] < worst
                    {
                        worst = self.s[c];
                        ip = Some(c);
                    }
                }
                let Some(ip) = ip else {
                    break 'outer;
                };
                let iq = self.iq;
                self.u[iq] = 0.0;
                self.active[iq] = ip as isize;

                loop {
                    iterations += 1;
                    if iterations > cap {
                        return Err(QpError::IterationLimit(cap));
                    }
                    self.compute_d(Source::In(ip));
                    self.update_z();
                    self.update_r();
                    let iq = self.iq;

                    // dual step length: first active multiplier to hit zero
                    let mut t1 = f64::INFINITY;
                    let mut drop = None;
                    for k in me..iq {
                        if self.rv[k] > 0.0 {
                            let ratio = self.u[k] / self.rv[k];
                            if ratio < t1 {
                                t1 = ratio;
                                drop = Some(self.active[k] as usize);
                            }
                        }
                    }
                    // primal step length: reach the violated constraint
                    let np = &self.ci[ip * n..(ip + 1) * n];
                    let zn = dot(&self.z, np);
                    let t2 = if dot(&self.z, &self.z) > f64::EPSILON && zn > 0.0 {
                        -self.s[ip] / zn
                    } else {
                        f64::INFINITY
                    };
                    let t = t1.min(t2);
                    if t == f64::INFINITY {
                        return Err(QpError::Infeasible);
                    }

                    if t2 == f64::INFINITY {
                        // pure dual step
                        for k in 0..iq {
                            self.u[k] -= t * self.rv[k];
                        }
                        self.u[iq] += t;
                        let l = drop.expect("finite t1 implies a blocking constraint");
                        self.iai[l] = l as isize;
                        self.delete_constraint(l);
                        continue;
                    }

                    for k in 0..n {
                        self.x[k] += t * self.z[k];
                    }
                    for k in 0..iq {
                        self.u[k] -= t * self.rv[k];
                    }
                    self.u[iq] += t;

                    if t2 <= t1 {
                        // full step: the constraint becomes active
                        if !self.add_constraint() {
                            // numerically dependent on the active set; skip it
                            self.excluded[ip] = true;
                            self.delete_constraint(ip);
                            for c in 0..mi {
                                self.iai[c] = c as isize;
                            }
                            for k in me..self.iq {
                                self.active[k] = self.active_old[k];
                                self.u[k] = self.u_old[k];
                                self.iai[self.active[k] as usize] = -1;
                            }
                            self.x.copy_from_slice(&self.x_old);
                            continue 'select;
                        }
                        self.iai[ip] = -1;
                        continue 'outer;
                    }

                    // partial step: drop the blocking constraint and retry
                    let l = drop.expect("partial step implies a blocking constraint");
                    self.iai[l] = l as isize;
                    self.delete_constraint(l);
                    self.s[ip] = self.constraint_value(ip);
                }
            }
        }

        let x = DVector::from_column_slice(&self.x);
        let mut eq = DVector::zeros(me);
        let mut ineq = DVector::zeros(mi);
        let mut active_set = Vec::new();
        for k in 0..self.iq {
            let a = self.active[k];
            if a < 0 {
                eq[(-a - 1) as usize] = self.u[k];
            } else {
                ineq[a as usize] = self.u[k];
                active_set.push(a as usize);
            }
        }
        Ok(QpSolution {
            objective: problem.objective(&x),
            x,
            active_set,
            iterations,
            multipliers: Multipliers { eq, ineq },
        })
    }

    fn constraint_value(&self, c: usize) -> f64 {
        let n = self.n;
        dot(&self.ci[c * n..(c + 1) * n], &self.x) + self.ci0[c]
    }

    /// Cholesky `P = L L'` and `J = L^-T`.
    #[allow(clippy::needless_range_loop)] // triangular index ranges read clearer as loops
    fn factorize(&mut self, problem: &QpProblem) -> Result<(), QpError> {
        let n = self.n;
        let l = &mut self.chol;
        for c in 0..n {
            for r in 0..n {
                l[c * n + r] = if r >= c { problem.p[(r, c)] } else { 0.0 };
            }
        }
        for c in 0..n {
            let mut diag = l[c * n + c];
            for k in 0..c {
                diag -= l[k * n + c] * l[k * n + c];
            }
            if !(diag > PIVOT_TOL) {
                return Err(QpError::NotPositiveDefinite {
                    row: c,
                    pivot: diag,
                });
            }
            let diag = diag.sqrt();
            l[c * n + c] = diag;
            for r in (c + 1)..n {
                let mut v = l[c * n + r];
                for k in 0..c {
                    v -= l[k * n + r] * l[k * n + c];
                }
                l[c * n + r] = v / diag;
            }
        }
        // L^-1 by forward substitution, one column at a time, stored
        // transposed into J so that J is upper triangular.
        self.j.iter_mut().for_each(|v| *v = 0.0);
        let mut col = vec![0.0; n];
        for e in 0..n {
            col.iter_mut().for_each(|v| *v = 0.0);
            col[e] = 1.0;
            for r in e..n {
                let mut v = col[r];
                for k in e..r {
                    v -= self.chol[k * n + r] * col[k];
                }
                col[r] = v / self.chol[r * n + r];
            }
            // (L^-1)(r, e) -> J(e, r)
            for r in e..n {
                self.j[r * n + e] = col[r];
            }
        }
        Ok(())
    }

    /// `d = J' n_p`.
    fn compute_d(&mut self, src: Source) {
        let n = self.n;
        let np = match src {
            Source::Eq(c) => &self.ce[c * n..(c + 1) * n],
            Source::In(c) => &self.ci[c * n..(c + 1) * n],
        };
        for i in 0..n {
            self.d[i] = dot(&self.j[i * n..(i + 1) * n], np);
        }
    }

    /// `z = J2 d2`: the primal step direction in the null space of the active set.
    fn update_z(&mut self) {
        let n = self.n;
        let iq = self.iq;
        for k in 0..n {
            self.z[k] = (iq..n).map(|c| self.j[c * n + k] * self.d[c]).sum();
        }
    }

    /// `r = R^-1 d1`: the change of the active multipliers.
    fn update_r(&mut self) {
        let n = self.n;
        let iq = self.iq;
        for i in (0..iq).rev() {
            let mut sum = 0.0;
            for c in (i + 1)..iq {
                sum += self.r[c * n + i] * self.rv[c];
            }
            self.rv[i] = (self.d[i] - sum) / self.r[i * n + i];
        }
    }

    fn add_constraint(&mut self) -> bool {
        let n = self.n;
        let iq = self.iq;
        // zero d[iq+1..] with Givens rotations applied to the columns of J
        for c in ((iq + 1)..n).rev() {
            let mut cc = self.d[c - 1];
            let mut ss = self.d[c];
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            self.d[c] = 0.0;
            ss /= h;
            cc /= h;
            if cc < 0.0 {
                cc = -cc;
                ss = -ss;
                self.d[c - 1] = -h;
            } else {
                self.d[c - 1] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in 0..n {
                let t1 = self.j[(c - 1) * n + k];
                let t2 = self.j[c * n + k];
                let new = t1 * cc + t2 * ss;
                self.j[(c - 1) * n + k] = new;
                self.j[c * n + k] = xny * (t1 + new) - t2;
            }
        }
        self.iq += 1;
        let iq = self.iq;
        for i in 0..iq {
            self.r[(iq - 1) * n + i] = self.d[i];
        }
        let pivot = self.d[iq - 1].abs();
        if pivot <= f64::EPSILON * self.r_norm {
            return false;
        }
        self.r_norm = self.r_norm.max(pivot);
        true
    }

    fn delete_constraint(&mut self, l: usize) {
        let n = self.n;
        let me = self.active.iter().take(self.iq).filter(|&&a| a < 0).count();
        let Some(qq) = (me..self.iq).find(|&k| self.active[k] == l as isize) else {
            return;
        };
        let iq = self.iq;
        for k in qq..(iq - 1) {
            self.active[k] = self.active[k + 1];
            self.u[k] = self.u[k + 1];
            for row in 0..n {
                self.r[k * n + row] = self.r[(k + 1) * n + row];
            }
        }
        self.active[iq - 1] = self.active[iq];
        self.u[iq - 1] = self.u[iq];
        self.active[iq] = 0;
        self.u[iq] = 0.0;
        for row in 0..iq {
            self.r[(iq - 1) * n + row] = 0.0;
        }
        self.iq -= 1;
        let iq = self.iq;
        if iq == 0 {
            return;
        }
        // restore R to upper triangular form
        for c in qq..iq {
            let mut cc = self.r[c * n + c];
            let mut ss = self.r[c * n + c + 1];
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            cc /= h;
            ss /= h;
            self.r[c * n + c + 1] = 0.0;
            if cc < 0.0 {
                self.r[c * n + c] = -h;
                cc = -cc;
                ss = -ss;
            } else {
                self.r[c * n + c] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in (c + 1)..iq {
                let t1 = self.r[k * n + c];
                let t2 = self.r[k * n + c + 1];
                let new = t1 * cc + t2 * ss;
                self.r[k * n + c] = new;
                self.r[k * n + c + 1] = xny * (t1 + new) - t2;
            }
            for k in 0..n {
                let t1 = self.j[c * n + k];
                let t2 = self.j[(c + 1) * n + k];
                let new = t1 * cc + t2 * ss;
                self.j[c * n + k] = new;
                self.j[(c + 1) * n + k] = xny * (new + t1) - t2;
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Source {
    Eq(usize),
    In(usize),
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Norms of the KKT conditions at `(x, multipliers)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    /// `|P x + lin - A_eq' eq - A_in' ineq|_inf`
    pub stationarity: f64,
    /// Largest equality residual or inequality violation.
    pub primal: f64,
    /// Largest negative inequality multiplier.
    pub dual: f64,
    /// `max |ineq_i (A_in x - b_in)_i|`
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

pub fn kkt_residuals(
    problem: &QpProblem,
    x: &DVector<f64>,
    multipliers: &Multipliers,
) -> KktResiduals {
    let grad = &problem.p * x + &problem.lin
        - problem.a_eq.transpose() * &multipliers.eq
        - problem.a_in.transpose() * &multipliers.ineq;
    let eq_res = (&problem.a_eq * x - &problem.b_eq).abs().max();
    let slack = &problem.a_in * x - &problem.b_in;
    let in_viol = slack.iter().map(|s| (-s).max(0.0)).fold(0.0, f64::max);
    KktResiduals {
        stationarity: grad.abs().max(),
        primal: eq_res.max(in_viol),
        dual: multipliers
            .ineq
            .iter()
            .map(|l| (-l).max(0.0))
            .fold(0.0, f64::max),
        complementarity: multipliers
            .ineq
            .iter()
            .zip(slack.iter())
            .map(|(l, s)| (l * s).abs())
            .fold(0.0, f64::max),
    }
}
