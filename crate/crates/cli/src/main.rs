use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sloshfree::export::{self, MetricsDocument, SweepMetric};
use sloshfree::metrics::aggregate;
use sloshfree::parallel::ExecPolicy;
use sloshfree::selfcheck;
use sloshfree::simulation::{run_experiment, ExperimentConfig, Mode};
use sloshfree::sweep::{run_sweep, SweepSpec};

const EXIT_USAGE: u8 = 1;
const EXIT_RUN: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

/// Slosh-free trajectory tracking for serial manipulators.
#[derive(Debug, Parser)]
#[command(name = "sloshfree", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one closed-loop experiment and write run.csv and metrics.json.
    Run(RunArgs),
    /// Run every (T, mode) pair and write sweep.csv plus one SVG per metric.
    Sweep(SweepArgs),
    /// Finite-difference and KKT self-checks of a model file.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the mode in the config.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Comma-separated navigation times in seconds; defaults to the config's.
    #[arg(long, value_delimiter = ',')]
    times: Vec<f64>,
    #[arg(long, value_enum, default_value = "both")]
    mode: ModeArg,
    /// Concurrent runs; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Model file (TOML).
    #[arg(long, alias = "model")]
    config: PathBuf,
    /// Random configurations (and random QPs) per check.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(name = "slosh_free", alias = "slosh-free")]
    SloshFree,
    Baseline,
    Both,
}

impl ModeArg {
    fn modes(self) -> Vec<Mode> {
        match self {
            ModeArg::SloshFree => vec![Mode::SloshFree],
            ModeArg::Baseline => vec![Mode::Baseline],
            ModeArg::Both => Mode::ALL.to_vec(),
        }
    }
}

fn policy(workers: usize) -> ExecPolicy {
    if workers == 0 {
        ExecPolicy::Auto
    } else {
        ExecPolicy::with_workers(workers)
    }
}

fn failure(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn create_dir(dir: &Path) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))
}

fn cmd_run(args: RunArgs) -> ExitCode {
    let mut config = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => return failure(EXIT_RUN, e),
    };
    if let Some(mode) = args.mode {
        match mode.modes().as_slice() {
            [single] => config.mode = *single,
            _ => return failure(EXIT_USAGE, "run takes a single mode"),
        }
    }
    let log = match run_experiment(&config) {
        Ok(log) => log,
        Err(e) => return failure(EXIT_RUN, e),
    };
    let metrics = match aggregate(&log) {
        Ok(m) => m,
        Err(e) => return failure(EXIT_RUN, e),
    };
    if let Err(e) = create_dir(&args.out) {
        return failure(EXIT_RUN, e);
    }
    let mut csv = Vec::new();
    if let Err(e) = export::write_run_csv(&log, &mut csv) {
        return failure(EXIT_RUN, e);
    }
    let doc = MetricsDocument::new(&metrics, &config);
    for (name, bytes) in [
        ("run.csv", csv),
        ("metrics.json", doc.to_json().into_bytes()),
    ] {
        if let Err(e) = export::write_file(&args.out.join(name), &bytes) {
            return failure(EXIT_RUN, e);
        }
    }
    println!(
        "{} T={} {}: E_p={:.4e} m s, E_sf={:.4e} rad s, max e_sf={:.4e} rad, Sl={:.4e}, infeasible={}",
        doc.trajectory, doc.t, doc.mode, doc.e_p, doc.e_sf, doc.max_e_sf, doc.sl, doc.infeasible
    );
    println!("wrote {}", args.out.display());
    ExitCode::SUCCESS
}

fn cmd_sweep(args: SweepArgs) -> ExitCode {
    let base = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => return failure(EXIT_RUN, e),
    };
    let times = if args.times.is_empty() {
        vec![base.navigation_time()]
    } else {
        args.times
    };
    let spec = match SweepSpec::new(base, times, args.mode.modes()) {
        Ok(s) => s,
        Err(e) => return failure(EXIT_USAGE, e),
    };
    let rows = match run_sweep(&spec, policy(args.workers)) {
        Ok(rows) => rows,
        Err(e) => return failure(EXIT_RUN, e),
    };
    if let Err(e) = create_dir(&args.out) {
        return failure(EXIT_RUN, e);
    }
    let mut files = vec![("sweep.csv".to_string(), export::sweep_csv(&rows))];
    for metric in SweepMetric::ALL {
        files.push((
            format!("{}.svg", metric.name()),
            export::sweep_svg(&rows, metric),
        ));
    }
    for (name, content) in files {
        if let Err(e) = export::write_file(&args.out.join(name), content.as_bytes()) {
            return failure(EXIT_RUN, e);
        }
    }
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    for row in &rows {
        match &row.outcome {
            Ok(m) => println!(
                "T={:<6} {:<10} E_p={:.3e} E_sf={:.3e} max_e_sf={:.3e} Sl={:.3e}{}",
                row.t,
                row.mode.as_str(),
                m.e_p,
                m.e_sf,
                m.max_e_sf,
                m.sl,
                if m.infeasible { " (infeasible)" } else { "" }
            ),
            Err(e) => println!("T={:<6} {:<10} FAILED: {e}", row.t, row.mode.as_str()),
        }
    }
    println!(
        "wrote {} ({} rows, {failed} failed)",
        args.out.display(),
        rows.len()
    );
    if failed == rows.len() {
        ExitCode::from(EXIT_RUN)
    } else {
        ExitCode::SUCCESS
    }
}

fn cmd_validate(args: ValidateArgs) -> ExitCode {
    match selfcheck::validate_model_file(&args.config, args.samples, policy(args.workers)) {
        Ok(report) => {
            print!("{}", report.table());
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_VALIDATION)
            }
        }
        Err(e) => failure(EXIT_VALIDATION, e),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Validate(args) => cmd_validate(args),
    }
}
