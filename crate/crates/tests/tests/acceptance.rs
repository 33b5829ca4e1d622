//! Acceptance suite: one PASS/FAIL line per criterion, all criteria always run.
//!
//! Everything runs inside a single test so the wall-clock measurements are
//! not disturbed by other tests running concurrently.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::time::{Duration, Instant};

use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sloshfree::export::MetricsDocument;
use sloshfree::joint_control::RacWeights;
use sloshfree::kinematics::{JointState, KinematicModel};
use sloshfree::metrics::{aggregate, RunMetrics, TRANSIENT_WINDOW};
use sloshfree::qp::{kkt_residuals, solve};
use sloshfree::reference::{
    slosh_free_orientation, slosh_free_reference, Shape, Trajectory, TrajectorySpec, G_COMP,
};
use sloshfree::simulation::{
    run_experiment, run_with_model, setup_initial_configuration, step_count, Controller,
    ExperimentConfig, Mode, RunLog,
};
use sloshfree::so3;
use sloshfree::task_control::TaskGains;

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn within(elapsed: Duration, budget_s: f64) -> bool {
    elapsed.as_secs_f64() < budget_s
}

fn experiment(shape: Shape, t: f64, mode: Mode) -> ExperimentConfig {
    ExperimentConfig::new(
        common::repo_path("models/panda.toml"),
        TrajectorySpec::new(shape, t),
        mode,
    )
}

fn metrics_of(model: &KinematicModel, cfg: &ExperimentConfig) -> Result<RunMetrics, String> {
    run_with_model(model, cfg)
        .and_then(|log| aggregate(&log))
        .map_err(|e| e.to_string())
}

fn flatness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut samples, mut worst_angle, mut worst_ortho, mut errors) = (0, 0.0f64, 0.0f64, 0);
    while samples < 100_000 {
        let a = Vector3::from_fn(|_, _| rng.random_range(-30.0..30.0));
        let psi = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let a_g = a + G_COMP;
        if a_g.norm() <= 0.1 {
            continue;
        }
        samples += 1;
        match slosh_free_orientation(&a, psi, &G_COMP) {
            Ok(r) => {
                let z = r.column(2).into_owned();
                worst_angle = worst_angle.max(z.cross(&a_g).norm().atan2(z.dot(&a_g)));
                worst_ortho = worst_ortho
                    .max(so3::orthonormality_error(&r).max((r.determinant() - 1.0).abs()));
            }
            Err(_) => errors += 1,
        }
    }
    let elapsed = start.elapsed();
    outcome(
        errors == 0 && worst_angle < 1e-10 && worst_ortho < 1e-9 && within(elapsed, 2.0),
        format!(
            "flatness map on {samples} samples: worst axis angle {worst_angle:.2e} rad, \
             SO(3) error {worst_ortho:.2e}, singular {errors}, {:.3} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn kinematics_oracle(model: &KinematicModel) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let h = 1e-6;
    let (mut worst_j, mut worst_h) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let q = common::random_configuration(model, &mut rng, 0.0);
        let jac = model.jacobian(&q).unwrap();
        let fd = common::fd_jacobian(model, &q, h);
        worst_j = worst_j.max((&jac - &fd).norm() / fd.norm());
        let hess = model.hessian(&q).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..model.n() {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += h;
            qm[i] -= h;
            let fd = (model.jacobian(&qp).unwrap() - model.jacobian(&qm).unwrap()) / (2.0 * h);
            num += (hess.slice(i) - &fd).norm_squared();
            den += fd.norm_squared();
        }
        worst_h = worst_h.max((num / den).sqrt());
    }
    let elapsed = start.elapsed();
    outcome(
        worst_j < 1e-5 && worst_h < 1e-4 && within(elapsed, 10.0),
        format!(
            "200 Panda configurations: Jacobian rel. err {worst_j:.2e}, Hessian rel. err {worst_h:.2e}, {:.3} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn qp_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let (mut worst_f, mut worst_kkt, mut mismatched) = (0.0f64, 0.0f64, 0);
    for _ in 0..500 {
        let prob = common::random_qp(&mut rng);
        let oracle = common::enumerate_active_sets(&prob, &[]);
        match (solve(&prob), oracle) {
            (Ok(sol), Some((f_ref, _))) => {
                worst_f = worst_f.max((sol.objective - f_ref).abs());
                worst_kkt = worst_kkt.max(kkt_residuals(&prob, &sol.x, &sol.multipliers).max());
            }
            // both agree that no feasible point exists
            (Err(_), None) => {}
            _ => mismatched += 1,
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatched == 0 && worst_f < 1e-7 && worst_kkt < 1e-7 && within(elapsed, 30.0),
        format!(
            "500 random QPs: objective gap {worst_f:.2e}, KKT residual {worst_kkt:.2e}, \
             disagreements {mismatched}, {:.3} s",
            elapsed.as_secs_f64()
        ),
    )
}

/// Largest violation of the position/velocity/acceleration bands and of the jerk band.
fn bound_violation(model: &KinematicModel, log: &RunLog) -> f64 {
    let mut worst = log
        .records
        .iter()
        .map(|r| model.limits.violation(&r.state))
        .fold(0.0, f64::max);
    for pair in log.records.windows(2) {
        worst = worst.max(model.limits.jerk_violation(
            &pair[0].state.qdd,
            &pair[1].state.qdd,
            log.dt,
        ));
    }
    worst
}

fn closed_loop_slosh_free(model: &KinematicModel) -> Outcome {
    let start = Instant::now();
    let cfg = experiment(Shape::default_loop(), 6.0, Mode::SloshFree);
    let log = match run_with_model(model, &cfg) {
        Ok(log) => log,
        Err(e) => return outcome(false, format!("loop T = 6 s failed: {e}")),
    };
    let elapsed = start.elapsed();
    let m = aggregate(&log).unwrap();
    let violation = bound_violation(model, &log);
    outcome(
        m.max_e_sf < 1.0f64.to_radians() && m.sl < 1e-6 && violation <= 1e-8 && within(elapsed, 60.0),
        format!(
            "loop T = 6 s: max e_sf after {TRANSIENT_WINDOW} s = {:.4} deg (< 1), Sl = {:.3e} (< 1e-6), \
             bound violation {violation:.1e} (<= 1e-8), {:.3} s",
            m.max_e_sf.to_degrees(),
            m.sl,
            elapsed.as_secs_f64()
        ),
    )
}

fn ablation(model: &KinematicModel) -> Outcome {
    let cases = [
        (Shape::default_loop(), 5.0),
        (Shape::default_lissajous(), 6.0),
        (Shape::default_helix(), 8.0),
    ];
    let mut passed = true;
    let mut parts = Vec::new();
    for (shape, t) in cases {
        let kind = shape.kind();
        let sf = metrics_of(model, &experiment(shape.clone(), t, Mode::SloshFree));
        let bl = metrics_of(model, &experiment(shape, t, Mode::Baseline));
        match (sf, bl) {
            (Ok(sf), Ok(bl)) => {
                let ok = sf.e_sf <= 0.1 * bl.e_sf && sf.e_p <= 2.0 * bl.e_p;
                passed &= ok;
                parts.push(format!(
                    "{kind} T = {t}: E_sf {:.2e} vs {:.2e} ({:.1}%), E_p {:.3e} vs {:.3e}",
                    sf.e_sf,
                    bl.e_sf,
                    100.0 * sf.e_sf / bl.e_sf,
                    sf.e_p,
                    bl.e_p
                ));
            }
            (sf, bl) => {
                passed = false;
                parts.push(format!(
                    "{kind} T = {t}: run failed ({:?} / {:?})",
                    sf.err(),
                    bl.err()
                ));
            }
        }
    }
    outcome(passed, parts.join("; "))
}

fn slack_onset(model: &KinematicModel) -> Outcome {
    // slowest first, i.e. sweeping T downward
    let grid = [8.0, 6.0, 5.0, 4.5, 4.0, 3.5, 3.0];
    let mut sl = Vec::new();
    for &t in &grid {
        match metrics_of(
            model,
            &experiment(Shape::default_loop(), t, Mode::SloshFree),
        ) {
            Ok(m) => sl.push(m.sl),
            Err(e) => return outcome(false, format!("loop T = {t} failed: {e}")),
        }
    }
    let listing = grid
        .iter()
        .zip(&sl)
        .map(|(t, s)| format!("T={t}: {s:.2e}"))
        .collect::<Vec<_>>()
        .join(", ");
    // feasible prefix of slow runs, then strictly growing slack below the threshold
    let feasible = sl.iter().take_while(|s| **s < 1e-6).count();
    let growing = sl[feasible.saturating_sub(1)..]
        .windows(2)
        .all(|w| w[1] > w[0]);
    let passed = feasible > 0 && feasible < grid.len() && growing;
    let threshold = if feasible > 0 {
        format!("T* = {}", grid[feasible.min(grid.len() - 1)])
    } else {
        "no tested T has Sl < 1e-6".to_string()
    };
    outcome(passed, format!("loop Sl sweep [{listing}]; {threshold}"))
}

fn paper_parameters(model: &KinematicModel) -> Outcome {
    let gains = TaskGains::default();
    let weights = RacWeights::default();
    let mut expected_diag = vec![1e-8; 7];
    expected_diag.extend([1.0; 7]);
    expected_diag.extend([1e-8; 7]);
    expected_diag.extend([1e3; 6]);
    let defaults_ok =
        gains.k_t == [10.0; 6] && gains.k_nu == [100.0; 6] && weights.diagonal() == expected_diag;

    // a config that names nothing but the model and the trajectory
    let text = format!(
        "model = {:?}\n[trajectory]\nkind = \"loop\"\nnavigation_time = 1.0\n",
        common::repo_path("models/panda.toml").to_str().unwrap()
    );
    let cfg = ExperimentConfig::parse(&text).unwrap();
    let m = metrics_of(model, &cfg).unwrap();
    let json: serde_json::Value =
        serde_json::from_str(&MetricsDocument::new(&m, &cfg).to_json()).unwrap();
    let prov = &json["provenance"];
    let floats = |v: &serde_json::Value| -> Vec<f64> {
        v.as_array()
            .map(|a| a.iter().filter_map(|x| x.as_f64()).collect())
            .unwrap_or_default()
    };
    let mut diag = floats(&prov["weights"]["w_q"]);
    diag.extend(floats(&prov["weights"]["w_qd"]));
    diag.extend(floats(&prov["weights"]["w_qdd"]));
    diag.extend(floats(&prov["weights"]["w_slack"]));
    let json_ok = floats(&prov["gains"]["k_t"]) == [10.0; 6]
        && floats(&prov["gains"]["k_nu"]) == [100.0; 6]
        && diag == expected_diag
        && prov["dt"].as_f64() == Some(1e-3);
    outcome(
        defaults_ok && json_ok,
        format!(
            "defaults k_T = 10, k_nu = 100, weights (1e-8, 1, 1e-8, 1e3): defaults {}, metrics.json provenance {}",
            if defaults_ok { "match" } else { "differ" },
            if json_ok { "verbatim" } else { "differs" }
        ),
    )
}

fn real_time(model: &KinematicModel) -> Outcome {
    let cfg = experiment(Shape::default_loop(), 6.0, Mode::SloshFree);
    let traj = Trajectory::new(cfg.trajectory.clone()).unwrap();
    let q0 = setup_initial_configuration(model, &traj, cfg.mode).unwrap();
    let mut state = JointState::at_rest(DVector::from_vec(q0.as_slice().to_vec()));
    let mut controller = Controller::new(model, cfg.gains, cfg.rac_settings()).unwrap();
    let steps = step_count(traj.duration(), cfg.dt);
    let mut previous = None;
    let mut times = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = traj.t0() + k as f64 * cfg.dt;
        let reference =
            slosh_free_reference(&traj, t, traj.psi(), &G_COMP, previous.as_ref()).unwrap();
        previous = Some(reference.pose.r);
        let tic = Instant::now();
        let out = controller.step(&state, &reference.pose).unwrap();
        times.push(tic.elapsed().as_secs_f64());
        state = out.joint.state();
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    times.sort_by(f64::total_cmp);
    let p99 = times[(0.99 * (times.len() - 1) as f64).round() as usize];
    let max = *times.last().unwrap();
    outcome(
        mean < 1e-3,
        format!(
            "{steps} control steps: mean {:.1} us, p99 {:.1} us, max {:.1} us (budget 1000 us)",
            mean * 1e6,
            p99 * 1e6,
            max * 1e6
        ),
    )
}

fn real_world_configs() -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for name in ["configs/loop_real.toml", "configs/lissajous_real.toml"] {
        let result = ExperimentConfig::load(common::repo_path(name)).and_then(|cfg| {
            let log = run_experiment(&cfg)?;
            Ok((cfg, aggregate(&log)?))
        });
        match result {
            Ok((cfg, m)) => parts.push(format!(
                "{} T = {}: completed, infeasible = {}, Sl = {:.3e}",
                cfg.trajectory.shape.kind(),
                cfg.navigation_time(),
                m.infeasible,
                m.sl
            )),
            Err(e) => {
                passed = false;
                parts.push(format!("{name}: {e}"));
            }
        }
    }
    outcome(passed, parts.join("; "))
}

#[test]
fn acceptance_criteria() {
    let model = common::panda();
    let criteria: Vec<(&str, Check)> = vec![
        ("flatness slosh-free property", Box::new(flatness)),
        (
            "kinematics oracle equivalence",
            Box::new(|| kinematics_oracle(&model)),
        ),
        ("QP correctness", Box::new(qp_correctness)),
        (
            "closed-loop slosh-freeness",
            Box::new(|| closed_loop_slosh_free(&model)),
        ),
        (
            "ablation against the upright baseline",
            Box::new(|| ablation(&model)),
        ),
        ("slack onset", Box::new(|| slack_onset(&model))),
        (
            "default parameter fidelity",
            Box::new(|| paper_parameters(&model)),
        ),
        ("real-time control step", Box::new(|| real_time(&model))),
        (
            "real-world trajectory configs",
            Box::new(real_world_configs),
        ),
    ];
    let mut failed = Vec::new();
    for (k, (name, check)) in criteria.iter().enumerate() {
        let result = check();
        let tag = if result.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {} ({name}): {}", k + 1, result.detail);
        if !result.passed {
            failed.push(k + 1);
        }
    }
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
