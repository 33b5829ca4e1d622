//! Test-only oracles, kept independent of the code paths they check.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use sloshfree::qp::QpProblem;

/// Solves `min 1/2 x'Px + lin'x  s.t.  A x = b` through the dense KKT system.
pub fn equality_qp(
    p: &DMatrix<f64>,
    lin: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Option<DVector<f64>> {
    let d = p.nrows();
    let m = a.nrows();
    let mut kkt = DMatrix::zeros(d + m, d + m);
    kkt.view_mut((0, 0), (d, d)).copy_from(p);
    kkt.view_mut((0, d), (d, m)).copy_from(&a.transpose());
    kkt.view_mut((d, 0), (m, d)).copy_from(a);
    let mut rhs = DVector::zeros(d + m);
    rhs.rows_mut(0, d).copy_from(&(-lin));
    rhs.rows_mut(d, m).copy_from(b);
    let sol = kkt.clone().lu().solve(&rhs)?;
    // reject numerically singular systems (dependent active rows)
    if (&kkt * &sol - &rhs).abs().max() > 1e-8 || !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some(sol.rows(0, d).into_owned())
}

/// Global optimum by enumerating every active subset of inequalities.
///
/// Each subset is solved as an equality-constrained QP; the cheapest
/// primal-feasible candidate is the minimizer (the true active set is among
/// the candidates and every feasible candidate upper-bounds the optimum).
/// `pairs` lists inequality rows that are mutually exclusive (lower/upper
/// bounds of one variable), which prunes the enumeration.
pub fn enumerate_active_sets(
    prob: &QpProblem,
    pairs: &[(usize, usize)],
) -> Option<(f64, DVector<f64>)> {
    let d = prob.dim();
    let mi = prob.n_in();
    let me = prob.n_eq();
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut paired = vec![None; mi];
    for &(a, b) in pairs {
        paired[a] = Some(b);
        paired[b] = Some(a);
    }
    let mut subset = Vec::new();
    enumerate(0, mi, &paired, &mut subset, &mut |rows: &[usize]| {
        if rows.len() + me > d {
            return;
        }
        let m = me + rows.len();
        let mut a = DMatrix::zeros(m, d);
        let mut b = DVector::zeros(m);
        a.view_mut((0, 0), (me, d)).copy_from(&prob.a_eq);
        b.rows_mut(0, me).copy_from(&prob.b_eq);
        for (k, &r) in rows.iter().enumerate() {
            a.row_mut(me + k).copy_from(&prob.a_in.row(r));
            b[me + k] = prob.b_in[r];
        }
        let Some(x) = equality_qp(&prob.p, &prob.lin, &a, &b) else {
            return;
        };
        let eq_ok = (&prob.a_eq * &x - &prob.b_eq)
            .iter()
            .all(|r| r.abs() < 1e-8);
        let in_ok = (&prob.a_in * &x - &prob.b_in).iter().all(|s| *s > -1e-8);
        if eq_ok && in_ok {
            let f = 0.5 * x.dot(&(&prob.p * &x)) + prob.lin.dot(&x);
            if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                best = Some((f, x));
            }
        }
    });
    best
}

fn enumerate(
    next: usize,
    mi: usize,
    paired: &[Option<usize>],
    subset: &mut Vec<usize>,
    visit: &mut dyn FnMut(&[usize]),
) {
    if next == mi {
        visit(subset);
        return;
    }
    enumerate(next + 1, mi, paired, subset, visit);
    if paired[next].is_some_and(|other| subset.contains(&other)) {
        return;
    }
    subset.push(next);
    enumerate(next + 1, mi, paired, subset, visit);
    subset.pop();
}

/// Random strictly convex QP with a known feasible point.
pub fn random_qp(rng: &mut impl Rng) -> QpProblem {
    let d = rng.random_range(1..=6);
    let me = rng.random_range(0..=d.min(4));
    let mi = rng.random_range(0..=8);
    let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let p = m.transpose() * &m + DMatrix::identity(d, d) * 0.1;
    let lin = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
    let x0 = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
    let a_eq = DMatrix::from_fn(me, d, |_, _| rng.random_range(-1.0..1.0));
    let b_eq = &a_eq * &x0;
    let a_in = DMatrix::from_fn(mi, d, |_, _| rng.random_range(-1.0..1.0));
    let gap = DVector::from_fn(mi, |_, _| {
        if rng.random_bool(0.3) {
            0.0
        } else {
            rng.random_range(0.0..1.0)
        }
    });
    let b_in = &a_in * &x0 - gap;
    QpProblem::new(p)
        .with_linear(lin)
        .with_equalities(a_eq, b_eq)
        .with_inequalities(a_in, b_in)
}

pub fn repo_path(rel: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
}

pub fn panda() -> sloshfree::kinematics::KinematicModel {
    sloshfree::kinematics::load_model_file(repo_path("models/panda.toml")).expect("panda model")
}

/// Uniform sample inside the position band, shrunk by `margin` on both sides.
pub fn random_configuration(
    model: &sloshfree::kinematics::KinematicModel,
    rng: &mut impl Rng,
    margin: f64,
) -> Vec<f64> {
    (0..model.n())
        .map(|i| rng.random_range(model.limits.q_min[i] + margin..model.limits.q_max[i] - margin))
        .collect()
}

/// Finite-difference Jacobian: position by central differences, rotation
/// through the matrix log of `R(q + h) R(q - h)^T`.
pub fn fd_jacobian(
    model: &sloshfree::kinematics::KinematicModel,
    q: &[f64],
    h: f64,
) -> nalgebra::Matrix6xX<f64> {
    let n = q.len();
    let mut jac = nalgebra::Matrix6xX::zeros(n);
    for j in 0..n {
        let mut qp = q.to_vec();
        let mut qm = q.to_vec();
        qp[j] += h;
        qm[j] -= h;
        let fp = model.forward_kinematics(&qp).unwrap();
        let fm = model.forward_kinematics(&qm).unwrap();
        let dp = (fp.p - fm.p) / (2.0 * h);
        let dw = sloshfree::so3::log_map(&(fp.r * fm.r.transpose())) / (2.0 * h);
        jac.fixed_view_mut::<3, 1>(0, j).copy_from(&dp);
        jac.fixed_view_mut::<3, 1>(3, j).copy_from(&dw);
    }
    jac
}
