//! Simulation harness: ground truth, sample-size sweeps, error metrics and
//! plot-ready aggregates.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{self, quantile, sorted_finite};
use crate::error::{Error, Result};
use crate::expfam::Family;
use crate::linalg::{self, Mat};
use crate::regularizers::{LowRankModel, Regularizer};
use crate::sampling::{self, derive_seed, DuplicateMode, ObservationSet};
use crate::solver::{self, Problem, SolverOptions};
use crate::verify::{self, BregmanCheck, ConeCheck, VerificationConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    #[default]
    Oracle,
    Corollary,
    GridCv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaStarMode {
    /// `α* = α_sp(Θ*)‖Θ*‖_F = √(mn)‖Θ*‖_max`.
    #[default]
    Oracle,
    /// Use `ExperimentConfig::alpha_star`.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sizes: Vec<usize>,
    pub family: Family,
    pub reg: Regularizer,
    /// Normalized sample sizes `|Ω| / (r n ln n)`.
    pub sweep: Vec<f64>,
    pub trials: usize,
    pub lambda_mode: LambdaMode,
    pub alpha_star_mode: AlphaStarMode,
    pub alpha_star: Option<f64>,
    /// Explicit λ; overrides `lambda_mode` when set.
    pub lambda: Option<f64>,
    /// Target `‖Θ*‖_max`; the family default is used when absent.
    pub signal: Option<f64>,
    /// Overrides the `round(2 ln n)` rank rule.
    pub rank: Option<usize>,
    pub c_beta: f64,
    pub duplicate_mode: DuplicateMode,
    pub seed: u64,
    pub solver: SolverOptions,
    pub verification: VerificationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sizes: vec![50, 100, 150, 200],
            family: Family::gaussian(1.0),
            reg: Regularizer::Nuclear,
            sweep: (1..=12).map(|k| 0.25 * k as f64).collect(),
            trials: 10,
            lambda_mode: LambdaMode::Oracle,
            alpha_star_mode: AlphaStarMode::Oracle,
            alpha_star: None,
            lambda: None,
            signal: None,
            rank: None,
            c_beta: 1.0,
            duplicate_mode: DuplicateMode::Independent,
            seed: 0,
            solver: SolverOptions::default(),
            verification: VerificationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        self.reg.validate()?;
        if self.sizes.is_empty() || self.sizes.iter().any(|&n| n < 2) {
            return Err(Error::InvalidInput("sizes must be a non-empty list of n ≥ 2".into()));
        }
        if self.sweep.is_empty() || self.sweep.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput("sweep values must be positive".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidInput("trials must be at least 1".into()));
        }
        for &n in &self.sizes {
            let r = self.rank_for(n);
            if r == 0 || r > n {
                return Err(Error::InvalidInput(format!("rank {r} is invalid for n = {n}")));
            }
        }
        if self.alpha_star_mode == AlphaStarMode::Fixed && !self.alpha_star.is_some_and(|a| a > 0.0) {
            return Err(Error::InvalidInput("alpha_star_mode = fixed needs a positive alpha_star".into()));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0) {
                return Err(Error::InvalidInput(format!("lambda must be non-negative, got {l}")));
            }
        }
        if let Some(s) = self.signal {
            if !(s > 0.0) {
                return Err(Error::InvalidInput(format!("signal must be positive, got {s}")));
            }
        }
        if !(self.c_beta > 0.0) {
            return Err(Error::InvalidInput("c_beta must be positive".into()));
        }
        Ok(())
    }

    pub fn rank_for(&self, n: usize) -> usize {
        self.rank.unwrap_or_else(|| rank_rule(n))
    }

    pub fn signal(&self) -> f64 {
        self.signal.unwrap_or_else(|| default_signal(&self.family))
    }
}

/// `r = round(2 ln n)`, at least 1.
pub fn rank_rule(n: usize) -> usize {
    ((2.0 * (n as f64).ln()).round() as usize).max(1)
}

/// `round(s · r · n ln n)`, at least 1.
pub fn omega_size(n: usize, r: usize, normalized: f64) -> usize {
    let nf = n as f64;
    ((normalized * r as f64 * nf * nf.ln()).round() as usize).max(1)
}

/// Default `‖Θ*‖_max` per family.
pub fn default_signal(family: &Family) -> f64 {
    match family {
        // X ~ N(σ²θ, σ²): per-entry signal-to-noise is σ²θ².
        Family::Gaussian { sigma } => 30.0 / sigma,
        Family::Bernoulli => 6.0,
        Family::Binomial { .. } => 3.0,
        Family::Poisson => 1.5,
        Family::Exponential => 3.0,
    }
}

/// Rank-`r` `n × n` matrix `U S Vᵀ` rescaled to `‖Θ*‖_max = target`.
///
/// `U`, `V` are orthonormal with `S` uniform on `[1, 2]`; for the Exponential
/// family the factors are entrywise non-negative and the product is negated so
/// every entry lies in `(−∞, 0)`.
pub fn generate_ground_truth(n: usize, r: usize, family: &Family, target: f64, seed: u64) -> Result<Mat> {
    if r == 0 || r > n {
        return Err(Error::InvalidInput(format!("rank {r} must lie in 1..={n}")));
    }
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::InvalidInput(format!("target radius must be positive, got {target}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s: Vec<f64> = (0..r).map(|_| rng.gen_range(1.0..2.0)).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let (u, v, sign) = match family {
        Family::Exponential => (
            linalg::gaussian_matrix(n, r, &mut rng).abs(),
            linalg::gaussian_matrix(n, r, &mut rng).abs(),
            -1.0,
        ),
        _ => (
            linalg::random_orthonormal(n, r, &mut rng),
            linalg::random_orthonormal(n, r, &mut rng),
            1.0,
        ),
    };
    let mut us = u;
    for (k, sk) in s.iter().enumerate() {
        us.column_mut(k).scale_mut(*sk);
    }
    let theta = us * v.transpose();
    let theta = &theta * (sign * target / linalg::max_abs(&theta));
    let domain = family.domain();
    if theta.iter().any(|t| !domain.contains(*t)) {
        return Err(Error::Infeasible(format!(
            "ground truth leaves the {} domain",
            family.name()
        )));
    }
    Ok(theta)
}

/// Mean prediction `X̂ = g(Θ̂)`, used for every family.
pub fn mle_prediction(family: &Family, theta_hat: &Mat) -> Result<Mat> {
    let mut out = theta_hat.clone();
    for v in out.iter_mut() {
        *v = family.mean_map(*v)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsMetric {
    Rmse,
    Mae,
}

/// MAE for Bernoulli, RMSE otherwise.
pub fn obs_metric_for(family: &Family) -> ObsMetric {
    match family {
        Family::Bernoulli => ObsMetric::Mae,
        _ => ObsMetric::Rmse,
    }
}

pub fn obs_error(metric: ObsMetric, prediction: &Mat, held_out: &Mat) -> f64 {
    let diff = prediction - held_out;
    let k = diff.len() as f64;
    match metric {
        ObsMetric::Rmse => (diff.norm_squared() / k).sqrt(),
        ObsMetric::Mae => diff.abs().sum() / k,
    }
}

/// Everything drawn for one `(n, sweep point, trial)` cell.
#[derive(Debug, Clone)]
pub struct Instance {
    pub n: usize,
    pub rank: usize,
    pub theta_star: Mat,
    pub observations: ObservationSet,
    pub seed: u64,
}

/// Ground truth depends on `(seed, n, trial)` so sweep points share it; Ω and draws use the cell seed.
pub fn draw_instance(config: &ExperimentConfig, n: usize, normalized: f64, sweep_index: usize, trial: usize) -> Result<Instance> {
    let rank = config.rank_for(n);
    let truth_seed = derive_seed(config.seed, &[n as u64, trial as u64, 0]);
    let theta_star = generate_ground_truth(n, rank, &config.family, config.signal(), truth_seed)?;
    let seed = derive_seed(config.seed, &[n as u64, trial as u64, 1, sweep_index as u64]);
    let omega = sampling::sample_omega(n, n, omega_size(n, rank, normalized), derive_seed(seed, &[0]))?;
    let observations = sampling::observe(&omega, &theta_star, &config.family, derive_seed(seed, &[1]), config.duplicate_mode)?;
    Ok(Instance {
        n,
        rank,
        theta_star,
        observations,
        seed,
    })
}

pub fn alpha_star_for(config: &ExperimentConfig, theta_star: &Mat) -> Result<f64> {
    match config.alpha_star_mode {
        AlphaStarMode::Oracle => {
            let cells = (theta_star.nrows() * theta_star.ncols()) as f64;
            Ok(cells.sqrt() * linalg::max_abs(theta_star))
        }
        AlphaStarMode::Fixed => config
            .alpha_star
            .ok_or_else(|| Error::InvalidInput("alpha_star missing".into())),
    }
}

fn corollary_lambda(config: &ExperimentConfig, omega_len: usize, n: usize, m: usize, radius: f64) -> Result<f64> {
    let b = calibration::estimate_b(&config.family, radius)?.b;
    calibration::lambda_corollary(n, m, omega_len, b, config.c_beta)
}

const CV_GRID: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];
const CV_TRAIN_FRACTION: f64 = 0.8;

/// Mean held-out `G(θ) − xθ` over the instances of `held_out`.
fn held_out_nll(family: &Family, theta: &Mat, held_out: &ObservationSet) -> Result<f64> {
    let mut total = 0.0;
    for (i, j, x) in held_out.triplets()? {
        let t = theta[(i, j)];
        total += family.log_partition(t)? - x * t;
    }
    Ok(total / held_out.len() as f64)
}

/// Grid search over `λ_cor · 2^k`, `k ∈ −2..=2`, on an 80/20 split; the chosen λ
/// is rescaled by `√(|Ω_train|/|Ω|)` for the refit on all of Ω.
pub fn grid_cv_lambda(config: &ExperimentConfig, obs: &ObservationSet, alpha_star: f64, seed: u64) -> Result<f64> {
    let (m, n) = obs.shape();
    if obs.len() < 5 {
        return Err(Error::InvalidInput("grid_cv needs at least 5 observations".into()));
    }
    let mut order: Vec<usize> = (0..obs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((obs.len() as f64) * CV_TRAIN_FRACTION).round() as usize;
    let mut in_train = vec![false; obs.len()];
    for &k in &order[..n_train] {
        in_train[k] = true;
    }
    let train = obs.subset(|k| in_train[k])?;
    let valid = obs.subset(|k| !in_train[k])?;
    let radius = alpha_star / ((m * n) as f64).sqrt();
    let base = corollary_lambda(config, train.len(), n, m, radius)?;
    let mut best = (f64::INFINITY, base);
    for mult in CV_GRID {
        let lambda = base * mult;
        let problem = Problem::new(config.family, config.reg, train.clone(), lambda, alpha_star, config.solver)?;
        let fit = solver::solve(&problem)?;
        let score = held_out_nll(&config.family, &fit.theta_hat, &valid)?;
        if score < best.0 {
            best = (score, lambda);
        }
    }
    Ok(best.1 * (train.len() as f64 / obs.len() as f64).sqrt())
}

pub fn select_lambda(config: &ExperimentConfig, inst: &Instance, alpha_star: f64) -> Result<f64> {
    if let Some(l) = config.lambda {
        return Ok(l);
    }
    let obs = &inst.observations;
    match config.lambda_mode {
        LambdaMode::Oracle => calibration::lambda_from_oracle(obs, &inst.theta_star, &config.family, &config.reg),
        LambdaMode::Corollary => {
            let radius = alpha_star / inst.n as f64;
            corollary_lambda(config, obs.len(), inst.n, inst.n, radius)
        }
        LambdaMode::GridCv => grid_cv_lambda(config, obs, alpha_star, derive_seed(inst.seed, &[2])),
    }
}

/// One row of the sweep table. Metrics are `None` when the cell failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub rank: usize,
    pub normalized_size: f64,
    pub omega_size: usize,
    pub proportion: f64,
    pub trial: usize,
    pub lambda: Option<f64>,
    pub alpha_star: Option<f64>,
    pub param_rel_err: Option<f64>,
    pub obs_err: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub error: Option<String>,
    /// Wall-clock seconds; kept out of the deterministic table.
    #[serde(skip)]
    pub runtime_s: f64,
}

impl SweepRow {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMetadata {
    pub family: Family,
    pub reg: Regularizer,
    pub lambda_mode: LambdaMode,
    pub alpha_star_mode: AlphaStarMode,
    pub signal: f64,
    /// Predictions are `g(Θ̂)` for every family.
    pub prediction: String,
    pub obs_metric: ObsMetric,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub metadata: SweepMetadata,
}

impl SweepResult {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.ok()).count()
    }
}

fn metadata(config: &ExperimentConfig) -> SweepMetadata {
    SweepMetadata {
        family: config.family,
        reg: config.reg,
        lambda_mode: config.lambda_mode,
        alpha_star_mode: config.alpha_star_mode,
        signal: config.signal(),
        prediction: "mean".into(),
        obs_metric: obs_metric_for(&config.family),
        seed: config.seed,
    }
}

struct CellMetrics {
    lambda: f64,
    alpha_star: f64,
    param_rel_err: f64,
    obs_err: f64,
    iterations: usize,
    converged: bool,
}

fn run_cell_inner(config: &ExperimentConfig, inst: &Instance) -> Result<CellMetrics> {
    let alpha_star = alpha_star_for(config, &inst.theta_star)?;
    let lambda = select_lambda(config, inst, alpha_star)?;
    let problem = Problem::new(config.family, config.reg, inst.observations.clone(), lambda, alpha_star, config.solver)?;
    let fit = solver::solve(&problem)?;
    let truth = &inst.theta_star;
    let param_rel_err = (&fit.theta_hat - truth).norm_squared() / truth.norm_squared();
    let full = ObservationSet::full(inst.n, inst.n)?;
    let held = sampling::observe(&full, truth, &config.family, derive_seed(inst.seed, &[3]), DuplicateMode::Independent)?;
    let held = sampling::scatter_values(&held)?;
    let prediction = mle_prediction(&config.family, &fit.theta_hat)?;
    Ok(CellMetrics {
        lambda,
        alpha_star,
        param_rel_err,
        obs_err: obs_error(obs_metric_for(&config.family), &prediction, &held),
        iterations: fit.iterations,
        converged: fit.converged,
    })
}

/// Runs one `(n, sweep point, trial)` cell; failures are captured in the row.
pub fn run_cell(config: &ExperimentConfig, n: usize, sweep_index: usize, trial: usize) -> SweepRow {
    let normalized = config.sweep[sweep_index];
    let rank = config.rank_for(n);
    let size = omega_size(n, rank, normalized);
    let start = Instant::now();
    let outcome = draw_instance(config, n, normalized, sweep_index, trial).and_then(|inst| run_cell_inner(config, &inst));
    let runtime_s = start.elapsed().as_secs_f64();
    let mut row = SweepRow {
        n,
        rank,
        normalized_size: normalized,
        omega_size: size,
        proportion: size as f64 / (n * n) as f64,
        trial,
        lambda: None,
        alpha_star: None,
        param_rel_err: None,
        obs_err: None,
        iterations: None,
        converged: None,
        error: None,
        runtime_s,
    };
    match outcome {
        Ok(c) => {
            row.lambda = Some(c.lambda);
            row.alpha_star = Some(c.alpha_star);
            row.param_rel_err = Some(c.param_rel_err);
            row.obs_err = Some(c.obs_err);
            row.iterations = Some(c.iterations);
            row.converged = Some(c.converged);
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Full sweep over sizes × sweep points × trials, ordered by `(n, sweep index, trial)`.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    config.validate()?;
    let mut rows = Vec::new();
    for &n in &config.sizes {
        for k in 0..config.sweep.len() {
            for t in 0..config.trials {
                rows.push(run_cell(config, n, k, t));
            }
        }
    }
    Ok(SweepResult {
        rows,
        metadata: metadata(config),
    })
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|rec| rec.map_err(Error::from)).collect()
}

#[derive(Debug, Serialize)]
struct TimingRecord {
    n: usize,
    normalized_size: f64,
    trial: usize,
    runtime_s: f64,
}

pub fn write_timings_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(TimingRecord {
            n: r.n,
            normalized_size: r.normalized_size,
            trial: r.trial,
            runtime_s: r.runtime_s,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    ParamRelErr,
    ObsErr,
}

impl Metric {
    fn of(self, row: &SweepRow) -> Option<f64> {
        match self {
            Metric::ParamRelErr => row.param_rel_err,
            Metric::ObsErr => row.obs_err,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Normalized,
    Proportion,
}

impl Axis {
    fn header(self) -> &'static str {
        match self {
            Axis::Normalized => "normalized_size",
            Axis::Proportion => "proportion",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub n: usize,
    pub x: f64,
    pub metric: String,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Median and quartiles per `(n, axis value)` over successful rows, sorted.
pub fn aggregate(rows: &[SweepRow], metric: Metric, axis: Axis, metric_name: &str) -> Result<Vec<AggregateRow>> {
    let mut groups: BTreeMap<(usize, u64), (f64, Vec<f64>)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.ok()) {
        let Some(v) = metric.of(r) else { continue };
        let x = match axis {
            Axis::Normalized => r.normalized_size,
            Axis::Proportion => r.proportion,
        };
        groups.entry((r.n, x.to_bits())).or_insert((x, Vec::new())).1.push(v);
    }
    if groups.is_empty() {
        return Err(Error::InvalidInput("no successful rows to aggregate".into()));
    }
    let mut out: Vec<AggregateRow> = groups
        .into_iter()
        .map(|((n, _), (x, vals))| {
            let s = sorted_finite(&vals);
            AggregateRow {
                n,
                x,
                metric: metric_name.to_string(),
                median: quantile(&s, 0.5),
                q25: quantile(&s, 0.25),
                q75: quantile(&s, 0.75),
            }
        })
        .collect();
    out.sort_by(|a, b| a.n.cmp(&b.n).then(a.x.total_cmp(&b.x)));
    Ok(out)
}

pub fn write_aggregate_csv(rows: &[AggregateRow], axis: Axis, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["n", axis.header(), "metric", "median", "q25", "q75"])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            format!("{:?}", r.x),
            r.metric.clone(),
            format!("{:?}", r.median),
            format!("{:?}", r.q25),
            format!("{:?}", r.q75),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_aggregate_csv(path: &Path) -> Result<Vec<AggregateRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let parse = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|e| Error::InvalidInput(format!("bad number {s:?}: {e}")))
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 6 {
            return Err(Error::InvalidInput(format!("expected 6 columns, got {}", rec.len())));
        }
        out.push(AggregateRow {
            n: rec[0]
                .parse()
                .map_err(|e| Error::InvalidInput(format!("bad n {:?}: {e}", &rec[0])))?,
            x: parse(&rec[1])?,
            metric: rec[2].to_string(),
            median: parse(&rec[3])?,
            q25: parse(&rec[4])?,
            q75: parse(&rec[5])?,
        });
    }
    Ok(out)
}

pub const OBS_ERROR_FILE: &str = "observation_error.csv";
pub const PARAM_NORMALIZED_FILE: &str = "parameter_error_normalized.csv";
pub const PARAM_PROPORTION_FILE: &str = "parameter_error_proportion.csv";
pub const METADATA_FILE: &str = "metadata.json";

/// Writes the observation-error and parameter-error aggregates plus metadata into `dir`.
pub fn emit_plot_data(rows: &[SweepRow], metadata: Option<&SweepMetadata>, dir: &Path) -> Result<Vec<PathBuf>> {
    let obs_name = match metadata.map(|m| m.obs_metric) {
        Some(ObsMetric::Mae) => "obs_mae",
        Some(ObsMetric::Rmse) => "obs_rmse",
        None => "obs_err",
    };
    let figures = [
        (OBS_ERROR_FILE, Metric::ObsErr, Axis::Normalized, obs_name),
        (PARAM_NORMALIZED_FILE, Metric::ParamRelErr, Axis::Normalized, "param_rel_err"),
        (PARAM_PROPORTION_FILE, Metric::ParamRelErr, Axis::Proportion, "param_rel_err"),
    ];
    let tables = figures
        .iter()
        .map(|(_, metric, axis, name)| aggregate(rows, *metric, *axis, name))
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for ((file, _, axis, _), table) in figures.iter().zip(&tables) {
        let path = dir.join(file);
        write_aggregate_csv(table, *axis, &path)?;
        written.push(path);
    }
    if let Some(meta) = metadata {
        let path = dir.join(METADATA_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(meta)?)?;
        written.push(path);
    }
    Ok(written)
}

/// Outcome of one end-to-end solve checked against the cone and Bregman inequalities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaTrial {
    pub trial: usize,
    pub lambda: f64,
    pub cone: ConeCheck,
    pub bregman: BregmanCheck,
    pub converged: bool,
    /// `F(Θ̂) ≤ F(Θ*)`, the only property of Θ̂ both inequalities rely on.
    pub objective_below_truth: bool,
}

/// Solves with the oracle λ and α* and checks both inequalities.
pub fn lemma_trial(
    config: &ExperimentConfig,
    n: usize,
    normalized: f64,
    trial: usize,
    cone_tolerance: f64,
    bregman_tolerance: f64,
) -> Result<LemmaTrial> {
    let inst = draw_instance(config, n, normalized, 0, trial)?;
    let alpha_star = alpha_star_for(config, &inst.theta_star)?;
    let lambda = calibration::lambda_from_oracle(&inst.observations, &inst.theta_star, &config.family, &config.reg)?;
    let problem = Problem::new(config.family, config.reg, inst.observations.clone(), lambda, alpha_star, config.solver)?;
    let fit = solver::solve(&problem)?;
    let model = LowRankModel::from_matrix(&inst.theta_star, inst.rank)?;
    let delta = &fit.theta_hat - &inst.theta_star;
    Ok(LemmaTrial {
        trial,
        lambda,
        cone: verify::check_cone(&delta, &model, &config.reg, cone_tolerance)?,
        bregman: verify::check_bregman_bound(&problem, &fit.theta_hat, &inst.theta_star, &model, bregman_tolerance)?,
        converged: fit.converged,
        objective_below_truth: problem.objective(&fit.theta_hat)? <= problem.objective(&inst.theta_star)?,
    })
}

/// Dense CSV with 17 significant digits per entry.
pub fn write_dense_csv(m: &Mat, path: &Path) -> Result<()> {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let line: Vec<String> = (0..m.ncols()).map(|j| format!("{:.16e}", m[(i, j)])).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_dense_csv(path: &Path) -> Result<Mat> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidInput(format!("line {}: {e}", k + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::InvalidInput(format!("line {} has {} columns, expected {}", k + 1, row.len(), first.len())));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("empty matrix file".into()));
    }
    let (m, n) = (rows.len(), rows[0].len());
    Ok(Mat::from_fn(m, n, |i, j| rows[i][j]))
}
