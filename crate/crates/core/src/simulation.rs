//! Closed-loop kinematic simulation: reference, task-space PD, RAC QP, and
//! a plant that simply adopts the state returned by the QP.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, Matrix3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::joint_control::{solve_rac, JointCommand, RacSettings, RacWeights};
use crate::kinematics::{load_model_file, EePose, JointState, KinematicModel, SpatialAccel, Twist};
use crate::metrics::{position_error, slosh_free_angle};
use crate::qp::QpSolver;
use crate::reference::{slosh_free_reference, SloshFreePose, Trajectory, TrajectorySpec, G_COMP};
use crate::so3;
use crate::task_control::{cascaded_pd, pose_error, TaskCommand, TaskGains};

/// Default control period (s).
pub const DEFAULT_DT: f64 = 1e-3;
/// Fraction of degenerate reference samples above which a run is rejected.
pub const DEGENERACY_STORM_FRACTION: f64 = 0.1;

/// Which orientation reference the tracker follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Container axis follows the specific force.
    SloshFree,
    /// Container held upright; same positions.
    Baseline,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::SloshFree, Mode::Baseline];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::SloshFree => "slosh_free",
            Mode::Baseline => "baseline",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "slosh_free" | "slosh-free" => Ok(Mode::SloshFree),
            "baseline" => Ok(Mode::Baseline),
            other => Err(Error::InvalidConfig(format!(
                "unknown mode {other:?} (expected slosh_free or baseline)"
            ))),
        }
    }
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

fn default_braking_bounds() -> bool {
    true
}

fn default_mode() -> Mode {
    Mode::SloshFree
}

/// One experiment, as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Robot model file. Relative paths are resolved against the config
    /// file's directory by [`ExperimentConfig::load`].
    pub model: PathBuf,
    pub trajectory: TrajectorySpec,
    #[serde(default)]
    pub gains: TaskGains,
    #[serde(default)]
    pub weights: RacWeights,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// State-dependent tightening of the acceleration box; see
    /// [`crate::joint_control::acceleration_band`].
    #[serde(default = "default_braking_bounds")]
    pub braking_bounds: bool,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    /// Initial joint configuration; computed by inverse kinematics when absent.
    #[serde(default)]
    pub q_init: Option<Vec<f64>>,
}

impl ExperimentConfig {
    pub fn new(model: impl Into<PathBuf>, trajectory: TrajectorySpec, mode: Mode) -> Self {
        ExperimentConfig {
            model: model.into(),
            trajectory,
            gains: TaskGains::default(),
            weights: RacWeights::default(),
            dt: DEFAULT_DT,
            braking_bounds: true,
            mode,
            q_init: None,
        }
    }

    pub fn parse(content: &str) -> Result<Self> {
        toml::from_str(content).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&content)?;
        if config.model.is_relative() {
            if let Some(dir) = path.parent() {
                config.model = dir.join(&config.model);
            }
        }
        Ok(config)
    }

    pub fn rac_settings(&self) -> RacSettings {
        RacSettings {
            weights: self.weights.clone(),
            dt: self.dt,
            braking_bounds: self.braking_bounds,
        }
    }

    pub fn navigation_time(&self) -> f64 {
        self.trajectory.navigation_time
    }

    /// Checks everything that does not need the model.
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::NonPositiveDuration(self.dt));
        }
        let t = self.navigation_time();
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::NonPositiveDuration(t));
        }
        self.gains.validate()
    }
}

/// Upright-container reference sharing the positions of the slosh-free one.
pub fn baseline_reference(traj: &Trajectory, t: f64) -> Result<SloshFreePose> {
    let sample = traj.eval(t)?;
    Ok(SloshFreePose {
        p: sample.p,
        r: Matrix3::identity(),
    })
}

/// Pose reference of `mode` at `t`, and whether it was degenerate.
fn reference_for(
    mode: Mode,
    traj: &Trajectory,
    t: f64,
    previous: Option<&Matrix3<f64>>,
) -> Result<(SloshFreePose, bool)> {
    match mode {
        Mode::SloshFree => {
            let r = slosh_free_reference(traj, t, traj.psi(), &G_COMP, previous)?;
            Ok((r.pose, r.degenerate))
        }
        Mode::Baseline => Ok((baseline_reference(traj, t)?, false)),
    }
}

/// Inverse-kinematics acceptance tolerances.
pub const IK_POSITION_TOL: f64 = 1e-4;
pub const IK_ORIENTATION_TOL: f64 = 1e-3;
pub const IK_MAX_ITERATIONS: usize = 500;
const IK_DAMPING: f64 = 1e-2;
const IK_POLISH_TOL: f64 = 1e-10;

/// Result of the initial inverse-kinematics solve.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialConfiguration {
    pub q: DVector<f64>,
    pub iterations: usize,
    pub e_p: f64,
    pub e_r: f64,
}

/// Damped least-squares IK from the model's home pose to `target`.
///
/// If home already meets the tolerances it is returned unchanged. Otherwise
/// the iteration continues past the tolerances down to round-off, clamping
/// every iterate to the position limits.
pub fn solve_ik(model: &KinematicModel, target: &SloshFreePose) -> Result<InitialConfiguration> {
    let n = model.n();
    let mut q = DVector::from_column_slice(&model.home);
    let errors = |q: &DVector<f64>| -> Result<(Vector6<f64>, f64, f64)> {
        let pose = model.forward_kinematics(q.as_slice())?;
        let e = pose_error(target, &pose);
        Ok((e, e.fixed_rows::<3>(0).norm(), e.fixed_rows::<3>(3).norm()))
    };
    let (mut e, mut e_p, mut e_r) = errors(&q)?;
    let accept = |e_p: f64, e_r: f64| e_p < IK_POSITION_TOL && e_r < IK_ORIENTATION_TOL;
    if accept(e_p, e_r) {
        return Ok(InitialConfiguration {
            q,
            iterations: 0,
            e_p,
            e_r,
        });
    }
    let lambda2 = IK_DAMPING * IK_DAMPING;
    let mut iterations = 0;
    while iterations < IK_MAX_ITERATIONS && (e_p > IK_POLISH_TOL || e_r > IK_POLISH_TOL) {
        iterations += 1;
        let jac = model.jacobian(q.as_slice())?;
        let jjt = &jac * jac.transpose() + DMatrix::<f64>::identity(6, 6) * lambda2;
        let Some(y) = jjt
            .cholesky()
            .map(|c| c.solve(&DVector::from_column_slice(e.as_slice())))
        else {
            break;
        };
        q += jac.transpose() * y;
        for i in 0..n {
            q[i] = q[i].clamp(model.limits.q_min[i], model.limits.q_max[i]);
        }
        (e, e_p, e_r) = errors(&q)?;
    }
    if accept(e_p, e_r) {
        Ok(InitialConfiguration {
            q,
            iterations,
            e_p,
            e_r,
        })
    } else {
        Err(Error::IkNonConvergence {
            iterations,
            e_p,
            e_r,
        })
    }
}

/// Initial configuration matching the reference pose of `mode` at `t0`.
pub fn setup_initial_configuration(
    model: &KinematicModel,
    traj: &Trajectory,
    mode: Mode,
) -> Result<DVector<f64>> {
    let (target, _) = reference_for(mode, traj, traj.t0(), None)?;
    Ok(solve_ik(model, &target)?.q)
}

/// Everything one control step computes.
#[derive(Debug, Clone)]
pub struct ControlOutput {
    pub pose: EePose,
    pub twist: Twist,
    /// Acceleration realized by the current state (`J qdd + h`).
    pub accel: SpatialAccel,
    pub task: TaskCommand,
    pub joint: JointCommand,
}

/// Task-space PD plus RAC QP with a reusable solver workspace.
#[derive(Debug)]
pub struct Controller<'m> {
    model: &'m KinematicModel,
    gains: TaskGains,
    settings: RacSettings,
    solver: QpSolver,
}

impl<'m> Controller<'m> {
    pub fn new(model: &'m KinematicModel, gains: TaskGains, settings: RacSettings) -> Result<Self> {
        gains.validate()?;
        settings.weights.validate(model.n())?;
        if !(settings.dt > 0.0 && settings.dt.is_finite()) {
            return Err(Error::NonPositiveDuration(settings.dt));
        }
        Ok(Controller {
            model,
            gains,
            settings,
            solver: QpSolver::new(),
        })
    }

    pub fn step(&mut self, state: &JointState, reference: &SloshFreePose) -> Result<ControlOutput> {
        let (pose, jac, h) = self
            .model
            .differential(state.q.as_slice(), state.qd.as_slice())?;
        let nu = Vector6::from_iterator((&jac * &state.qd).iter().copied());
        let alpha = Vector6::from_iterator((&jac * &state.qdd).iter().copied()) + h;
        let twist = Twist::from_vector(&nu);
        let task = cascaded_pd(&pose_error(reference, &pose), &twist, &self.gains);
        let joint = solve_rac(
            state,
            &task,
            &jac,
            &h,
            &self.model.limits,
            &self.settings,
            &mut self.solver,
        )?;
        Ok(ControlOutput {
            pose,
            twist,
            accel: SpatialAccel::from_vector(&alpha),
            task,
            joint,
        })
    }
}

/// One logged sample. The command and slack are the ones computed at `t`
/// from `state`; the next record holds the state they produced.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t: f64,
    pub state: JointState,
    pub pose: EePose,
    pub twist: Twist,
    pub accel: SpatialAccel,
    pub reference: SloshFreePose,
    pub command: TaskCommand,
    pub slack: Vector6<f64>,
    pub e_p: f64,
    /// `NaN` where the angle is undefined (free fall).
    pub e_sf: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub mode: Mode,
    pub dt: f64,
    pub navigation_time: f64,
    pub trajectory_kind: &'static str,
    pub records: Vec<StepRecord>,
}

impl RunLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn degenerate_count(&self) -> usize {
        self.records.iter().filter(|r| r.degenerate).count()
    }
}

/// Number of control intervals for a run of `duration` at period `dt`.
pub fn step_count(duration: f64, dt: f64) -> usize {
    (duration / dt).round() as usize
}

/// Loads the model named in `config` and runs it.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunLog> {
    let model = load_model_file(&config.model)?;
    run_with_model(&model, config)
}

pub fn run_with_model(model: &KinematicModel, config: &ExperimentConfig) -> Result<RunLog> {
    config.validate()?;
    let traj = Trajectory::new(config.trajectory.clone())?;
    let q0 = match &config.q_init {
        Some(q) => {
            if q.len() != model.n() {
                return Err(Error::DimensionMismatch {
                    what: "q_init",
                    expected: model.n(),
                    got: q.len(),
                });
            }
            DVector::from_column_slice(q)
        }
        None => setup_initial_configuration(model, &traj, config.mode)?,
    };
    let mut state = JointState::at_rest(q0);
    let violation = model.limits.violation(&state);
    if violation > crate::joint_control::STATE_LIMIT_TOL {
        return Err(Error::InvalidConfig(format!(
            "initial configuration violates joint limits by {violation:.3e}"
        )));
    }

    let mut controller = Controller::new(model, config.gains, config.rac_settings())?;
    let steps = step_count(traj.duration(), config.dt);
    let t0 = traj.t0();
    let mut records = Vec::with_capacity(steps + 1);
    let mut previous_r: Option<Matrix3<f64>> = None;

    for k in 0..=steps {
        // the last sample lands exactly on tf, regardless of round-off in k dt
        let t = if k == steps {
            traj.tf()
        } else {
            t0 + k as f64 * config.dt
        };
        let (reference, degenerate) = reference_for(config.mode, &traj, t, previous_r.as_ref())?;
        previous_r = Some(reference.r);
        let out = controller
            .step(&state, &reference)
            .map_err(|e| Error::AtStep {
                t,
                source: Box::new(e),
            })?;
        let e_sf = slosh_free_angle(&out.accel.a, &out.pose.r, &G_COMP).unwrap_or(f64::NAN);
        let next = out.joint.state();
        records.push(StepRecord {
            t,
            state,
            e_p: position_error(&reference.p, &out.pose.p),
            e_sf,
            pose: out.pose,
            twist: out.twist,
            accel: out.accel,
            reference,
            command: out.task,
            slack: out.joint.slack,
            degenerate,
        });
        state = next;
    }

    let log = RunLog {
        mode: config.mode,
        dt: config.dt,
        navigation_time: traj.duration(),
        trajectory_kind: config.trajectory.shape.kind(),
        records,
    };
    let flagged = log.degenerate_count();
    if flagged as f64 > DEGENERACY_STORM_FRACTION * log.len() as f64 {
        return Err(Error::DegeneracyStorm {
            flagged,
            total: log.len(),
        });
    }
    Ok(log)
}

/// Orientation of a record as a `(w, x, y, z)` quaternion.
pub fn quaternion(r: &Matrix3<f64>) -> [f64; 4] {
    let q = so3::to_quaternion(r);
    [q[0], q[1], q[2], q[3]]
}
