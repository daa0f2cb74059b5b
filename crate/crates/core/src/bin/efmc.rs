use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use expfam_completion::calibration;
use expfam_completion::harness::{self, AlphaStarMode, ExperimentConfig, LambdaMode, SweepMetadata};
use expfam_completion::regularizers::LowRankModel;
use expfam_completion::sampling;
use expfam_completion::solver::{self, Problem};
use expfam_completion::verify::{self, OmegaSpec};
use expfam_completion::{Error, Result};

#[derive(Parser)]
#[command(name = "efmc", version, about = "Exponential-family matrix completion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Selects one simulated instance; defaults are the first size, first sweep point and trial 0.
#[derive(clap::Args, Clone)]
struct InstanceArgs {
    #[arg(long)]
    n: Option<usize>,
    /// Index into the config's sweep list.
    #[arg(long, default_value_t = 0)]
    sweep_index: usize,
    #[arg(long, default_value_t = 0)]
    trial: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Draw Θ* and observations; writes theta_star.csv and omega.csv.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        instance: InstanceArgs,
    },
    /// Fit Θ̂ to an observation file and write it as dense CSV.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        omega: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Matrix shape; defaults to the first configured size, square.
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        cols: Option<usize>,
    },
    /// Emit the calibration report for one simulated instance.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        instance: InstanceArgs,
    },
    /// Run one of the theory checks and emit a JSON report.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: VerifyMode,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Slack on the cone bound 3.
        #[arg(long, default_value_t = 1e-3)]
        cone_tolerance: f64,
        #[command(flatten)]
        instance: InstanceArgs,
    },
    /// Run the full sweep; writes the results table, metadata and timings.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to `<out stem>.meta.json`.
        #[arg(long)]
        metadata: Option<PathBuf>,
        /// Defaults to `<out stem>.timings.csv`.
        #[arg(long)]
        timings: Option<PathBuf>,
    },
    /// Aggregate a results table into per-figure CSVs.
    Plotdata {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        metadata: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VerifyMode {
    Cone,
    Bregman,
    Rsc,
    Lemma4,
    Spectral,
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    out.with_file_name(format!("{stem}{suffix}"))
}

fn select(config: &ExperimentConfig, args: &InstanceArgs) -> Result<harness::Instance> {
    let n = args.n.unwrap_or(config.sizes[0]);
    let normalized = *config
        .sweep
        .get(args.sweep_index)
        .ok_or_else(|| Error::InvalidInput(format!("sweep index {} out of range", args.sweep_index)))?;
    harness::draw_instance(config, n, normalized, args.sweep_index, args.trial)
}

#[derive(Serialize)]
struct GenerateSummary {
    n: usize,
    rank: usize,
    omega_size: usize,
    alpha_star: f64,
    theta_star: PathBuf,
    omega: PathBuf,
}

fn generate(config: &ExperimentConfig, out_dir: &Path, args: &InstanceArgs) -> Result<()> {
    let inst = select(config, args)?;
    std::fs::create_dir_all(out_dir)?;
    let theta_path = out_dir.join("theta_star.csv");
    let omega_path = out_dir.join("omega.csv");
    harness::write_dense_csv(&inst.theta_star, &theta_path)?;
    sampling::write_omega_file(&inst.observations, &omega_path)?;
    emit(
        &GenerateSummary {
            n: inst.n,
            rank: inst.rank,
            omega_size: inst.observations.len(),
            alpha_star: harness::alpha_star_for(config, &inst.theta_star)?,
            theta_star: theta_path,
            omega: omega_path,
        },
        None,
    )
}

fn solve(config: &ExperimentConfig, omega: &Path, out: &Path, rows: Option<usize>, cols: Option<usize>) -> Result<()> {
    let m = rows.unwrap_or(config.sizes[0]);
    let n = cols.unwrap_or(m);
    let obs = sampling::read_omega_file(omega, m, n)?;
    let alpha_star = match (config.alpha_star_mode, config.alpha_star) {
        (AlphaStarMode::Fixed, Some(a)) => a,
        _ => return Err(Error::InvalidInput("solve needs alpha_star_mode = fixed and alpha_star".into())),
    };
    let lambda = match (config.lambda, config.lambda_mode) {
        (Some(l), _) => l,
        (None, LambdaMode::Corollary) => {
            let radius = alpha_star / ((m * n) as f64).sqrt();
            let b = calibration::estimate_b(&config.family, radius)?.b;
            calibration::lambda_corollary(n, m, obs.len(), b, config.c_beta)?
        }
        (None, LambdaMode::GridCv) => harness::grid_cv_lambda(config, &obs, alpha_star, config.seed)?,
        (None, LambdaMode::Oracle) => {
            return Err(Error::InvalidInput("the oracle λ needs Θ*; set lambda or another lambda_mode".into()))
        }
    };
    let problem = Problem::new(config.family, config.reg, obs, lambda, alpha_star, config.solver)?;
    let fit = solver::solve(&problem)?;
    harness::write_dense_csv(&fit.theta_hat, out)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        lambda: f64,
        alpha_star: f64,
        objective: f64,
        #[serde(flatten)]
        fit: &'a solver::SolveResult,
    }
    emit(
        &Summary {
            lambda,
            alpha_star,
            objective: fit.objective(),
            fit: &fit,
        },
        None,
    )
}

fn calibrate(config: &ExperimentConfig, out: Option<&Path>, args: &InstanceArgs) -> Result<()> {
    let inst = select(config, args)?;
    let trials = config.verification.trials.max(calibration::MIN_KAPPA_TRIALS);
    let report = calibration::calibrate(
        &inst.observations,
        &inst.theta_star,
        &config.family,
        &config.reg,
        config.c_beta,
        trials,
        inst.seed,
    )?;
    emit(&report, out)
}

#[derive(Serialize)]
struct LemmaSummary {
    trials: usize,
    passed: usize,
    records: Vec<LemmaRecord>,
}

#[derive(Serialize)]
struct LemmaRecord {
    trial: usize,
    lambda: f64,
    value: f64,
    bound: f64,
    pass: bool,
    converged: bool,
}

fn verify_cmd(config: &ExperimentConfig, mode: VerifyMode, out: Option<&Path>, cone_tol: f64, args: &InstanceArgs) -> Result<()> {
    let vconfig = &config.verification;
    vconfig.validate()?;
    match mode {
        VerifyMode::Cone | VerifyMode::Bregman => {
            let n = args.n.unwrap_or(config.sizes[0]);
            let normalized = config.sweep[args.sweep_index.min(config.sweep.len() - 1)];
            let mut records = Vec::with_capacity(vconfig.trials);
            for t in 0..vconfig.trials {
                let trial = harness::lemma_trial(config, n, normalized, args.trial + t, cone_tol, vconfig.tolerance)?;
                let (value, bound, pass) = match mode {
                    VerifyMode::Cone => (trial.cone.ratio, 3.0, trial.cone.pass),
                    _ => (trial.bregman.lhs, trial.bregman.rhs, trial.bregman.pass),
                };
                records.push(LemmaRecord {
                    trial: trial.trial,
                    lambda: trial.lambda,
                    value,
                    bound,
                    pass,
                    converged: trial.converged,
                });
            }
            let summary = LemmaSummary {
                trials: records.len(),
                passed: records.iter().filter(|r| r.pass).count(),
                records,
            };
            emit(&summary, out)
        }
        VerifyMode::Rsc | VerifyMode::Lemma4 => {
            let inst = select(config, args)?;
            let model = LowRankModel::from_matrix(&inst.theta_star, inst.rank)?;
            let omega = OmegaSpec::Uniform(inst.observations.len());
            if matches!(mode, VerifyMode::Rsc) {
                let alpha_star = harness::alpha_star_for(config, &inst.theta_star)?;
                let report = verify::estimate_rsc(
                    &model,
                    &config.family,
                    &config.reg,
                    &inst.theta_star,
                    alpha_star,
                    &omega,
                    vconfig,
                    inst.seed,
                )?;
                emit(&report, out)
            } else {
                let report = verify::lemma4_statistic(&model, &config.reg, vconfig, &omega, inst.seed)?;
                emit(&report, out)
            }
        }
        VerifyMode::Spectral => {
            let inst = select(config, args)?;
            let report = verify::spectral_concentration_smoke(
                &config.family,
                &inst.theta_star,
                inst.observations.len(),
                vconfig.trials,
                inst.seed,
            )?;
            emit(&report, out)
        }
    }
}

#[derive(Serialize)]
struct SweepSummary {
    cells: usize,
    failures: usize,
    not_converged: usize,
    results: PathBuf,
    metadata: PathBuf,
    timings: PathBuf,
}

/// Returns whether every cell completed.
fn sweep(config: &ExperimentConfig, out: &Path, metadata: Option<PathBuf>, timings: Option<PathBuf>) -> Result<bool> {
    let result = harness::run_sweep(config)?;
    let meta_path = metadata.unwrap_or_else(|| sibling(out, ".meta.json"));
    let timing_path = timings.unwrap_or_else(|| sibling(out, ".timings.csv"));
    harness::write_sweep_csv(&result.rows, out)?;
    std::fs::write(&meta_path, serde_json::to_string_pretty(&result.metadata)? + "\n")?;
    harness::write_timings_csv(&result.rows, &timing_path)?;
    let failures = result.failures();
    for row in result.rows.iter().filter(|r| !r.ok()) {
        eprintln!(
            "cell n={} size={} trial={} failed: {}",
            row.n,
            row.normalized_size,
            row.trial,
            row.error.as_deref().unwrap_or("")
        );
    }
    emit(
        &SweepSummary {
            cells: result.rows.len(),
            failures,
            not_converged: result.rows.iter().filter(|r| r.converged == Some(false)).count(),
            results: out.to_path_buf(),
            metadata: meta_path,
            timings: timing_path,
        },
        None,
    )?;
    Ok(failures == 0)
}

fn plotdata(results: &Path, out_dir: &Path, metadata: Option<&Path>) -> Result<()> {
    let rows = harness::read_sweep_csv(results)?;
    let meta: Option<SweepMetadata> = match metadata {
        Some(path) => Some(serde_json::from_str(&std::fs::read_to_string(path)?)?),
        None => {
            let default = sibling(results, ".meta.json");
            if default.exists() {
                Some(serde_json::from_str(&std::fs::read_to_string(default)?)?)
            } else {
                None
            }
        }
    };
    let written = harness::emit_plot_data(&rows, meta.as_ref(), out_dir)?;
    emit(&written, None)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Generate {
            config,
            out_dir,
            instance,
        } => generate(&ExperimentConfig::from_file(&config)?, &out_dir, &instance)?,
        Command::Solve {
            config,
            omega,
            out,
            rows,
            cols,
        } => solve(&ExperimentConfig::from_file(&config)?, &omega, &out, rows, cols)?,
        Command::Calibrate { config, out, instance } => {
            calibrate(&ExperimentConfig::from_file(&config)?, out.as_deref(), &instance)?
        }
        Command::Verify {
            config,
            mode,
            out,
            cone_tolerance,
            instance,
        } => verify_cmd(&ExperimentConfig::from_file(&config)?, mode, out.as_deref(), cone_tolerance, &instance)?,
        Command::Sweep {
            config,
            out,
            metadata,
            timings,
        } => return sweep(&ExperimentConfig::from_file(&config)?, &out, metadata, timings),
        Command::Plotdata {
            results,
            out_dir,
            metadata,
        } => plotdata(&results, &out_dir, metadata.as_deref())?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
