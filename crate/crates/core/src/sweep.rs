//! Navigation-time sweeps: one closed-loop run per `(T, mode)` pair.

use crate::error::{Error, Result};
use crate::kinematics::{load_model_file, KinematicModel};
use crate::metrics::{aggregate, RunMetrics};
use crate::parallel::{self, ExecPolicy};
use crate::simulation::{run_with_model, ExperimentConfig, Mode};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Template run; its navigation time and mode are overridden per job.
    pub base: ExperimentConfig,
    pub times: Vec<f64>,
    pub modes: Vec<Mode>,
}

impl SweepSpec {
    pub fn new(base: ExperimentConfig, times: Vec<f64>, modes: Vec<Mode>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidConfig(
                "sweep needs at least one navigation time".into(),
            ));
        }
        if let Some(&t) = times.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(Error::NonPositiveDuration(t));
        }
        if modes.is_empty() {
            return Err(Error::InvalidConfig("sweep needs at least one mode".into()));
        }
        Ok(SweepSpec { base, times, modes })
    }

    /// Jobs ordered by `T`, then by mode.
    pub fn jobs(&self) -> Vec<(f64, Mode)> {
        let mut times = self.times.clone();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let mut modes = self.modes.clone();
        modes.sort();
        modes.dedup();
        times
            .iter()
            .flat_map(|&t| modes.iter().map(move |&m| (t, m)))
            .collect()
    }

    pub fn config_for(&self, t: f64, mode: Mode) -> ExperimentConfig {
        let mut cfg = self.base.clone();
        cfg.trajectory.navigation_time = t;
        cfg.mode = mode;
        cfg
    }
}

/// Outcome of one sweep job; failures are kept as messages so the rest of
/// the sweep still completes.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub t: f64,
    pub mode: Mode,
    pub outcome: std::result::Result<RunMetrics, String>,
}

pub fn run_sweep(spec: &SweepSpec, policy: ExecPolicy) -> Result<Vec<SweepRow>> {
    let model = load_model_file(&spec.base.model)?;
    Ok(run_sweep_with_model(&model, spec, policy))
}

pub fn run_sweep_with_model(
    model: &KinematicModel,
    spec: &SweepSpec,
    policy: ExecPolicy,
) -> Vec<SweepRow> {
    parallel::map(policy, &spec.jobs(), |&(t, mode)| {
        let outcome = run_with_model(model, &spec.config_for(t, mode))
            .and_then(|log| aggregate(&log))
            .map_err(|e| e.to_string());
        SweepRow { t, mode, outcome }
    })
}
