//! Command-line entry point: simulation, estimation, bandwidth selection,
//! and the Monte Carlo experiments, with JSON/CSV artifacts and a manifest
//! per run.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use ejdke::adaptive::{self, CalibrationConfig, GridMode};
use ejdke::estimator::{self, EvalGrid};
use ejdke::kernel::build_kernel;
use ejdke::model::{self, ModelConfig, Tolerances};
use ejdke::rates::{self, BandwidthRule, ExperimentConfig, SmoothnessSpec};
use ejdke::reference::ReferenceDensity;
use ejdke::rngstream;
use ejdke::simulate::{self, read_trajectory, simulate_path, write_trajectory};

const EXIT_CONFIG: u8 = 3;
const EXIT_DIMENSION: u8 = 4;
const EXIT_RUNTIME: u8 = 1;

#[derive(Parser)]
#[command(name = "ejdke", version, about = "Invariant-density estimation for ergodic jump diffusions")]
struct Cli {
    /// JSON config file; command-line flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a trajectory and write it in the binary trajectory format.
    Simulate(SimulateArgs),
    /// Estimate the invariant density from a trajectory file.
    Estimate(EstimateArgs),
    /// Run the adaptive bandwidth selection on a trajectory file.
    SelectBandwidth(SelectArgs),
    /// Monte Carlo convergence-rate experiment.
    RateExperiment(RateArgs),
    /// Monte Carlo probe of the occupation-integral variance scaling.
    VarianceProbe(VarianceArgs),
    /// Calibrate the penalty constant by simulation.
    CalibrateK(CalibrateArgs),
    /// Validate the model assumptions at random probe points.
    ValidateModel(ValidateArgs),
}

/// File-config mirror of the shared flags; any field may be omitted.
#[derive(Debug, Default, Deserialize, Serialize)]
struct FileConfig {
    preset: Option<String>,
    model: Option<ModelConfig>,
    total_time: Option<f64>,
    dt: Option<f64>,
    burn_in: Option<f64>,
    seed: Option<u64>,
    kernel_order: Option<usize>,
    k: Option<f64>,
    k_max: Option<usize>,
    grid_mode: Option<GridMode>,
    eval_lo: Option<Vec<f64>>,
    eval_hi: Option<Vec<f64>>,
    eval_nodes: Option<Vec<usize>>,
    out_dir: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[arg(long)]
    preset: Option<String>,
    #[arg(long = "T")]
    total_time: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    burn_in: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Also write a CSV export of the trajectory.
    #[arg(long)]
    csv: bool,
}

#[derive(Args, Serialize)]
struct EstimateArgs {
    #[arg(long)]
    traj: PathBuf,
    /// Comma-separated bandwidth per axis.
    #[arg(long, value_delimiter = ',')]
    bandwidth: Vec<f64>,
    #[arg(long)]
    kernel_order: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    eval_lo: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    eval_hi: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    eval_nodes: Vec<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SelectArgs {
    #[arg(long)]
    traj: PathBuf,
    #[arg(long, value_enum)]
    grid: Option<CliGridMode>,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    kernel_order: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    eval_lo: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    eval_hi: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    eval_nodes: Vec<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum, Serialize)]
enum CliGridMode {
    PaperExact,
    Relaxed,
}

impl From<CliGridMode> for GridMode {
    fn from(m: CliGridMode) -> Self {
        match m {
            CliGridMode::PaperExact => GridMode::PaperExact,
            CliGridMode::Relaxed => GridMode::Relaxed,
        }
    }
}

#[derive(Args, Serialize)]
struct RateArgs {
    #[arg(long)]
    preset: Option<String>,
    /// Override of the preset jump scale (0 disables jumps).
    #[arg(long)]
    gamma0: Option<f64>,
    #[arg(long = "t-grid", value_delimiter = ',')]
    t_grid: Vec<f64>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    burn_in: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    kernel_order: Option<usize>,
    /// Comma-separated smoothness per axis; selects the rate-optimal rule.
    #[arg(long, value_delimiter = ',')]
    beta: Vec<f64>,
    /// Horizon-independent bandwidth per axis (bias-floor experiment).
    #[arg(long, value_delimiter = ',')]
    fixed_bandwidth: Vec<f64>,
    /// `coeff,exponent` for the power-law rule `h = coeff T^exponent`.
    #[arg(long, value_delimiter = ',')]
    power_law: Vec<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Oracle horizon for jump models (default 100x the largest T).
    #[arg(long)]
    oracle_time: Option<f64>,
    #[arg(long)]
    oracle_dt: Option<f64>,
    /// Histogram cell width of the oracle (default 0.05).
    #[arg(long)]
    oracle_cell: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    eval_lo: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    eval_hi: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    eval_nodes: Vec<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct VarianceArgs {
    #[arg(long)]
    preset: Option<String>,
    #[arg(long = "T")]
    total_time: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    burn_in: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    /// Comma-separated cube volumes.
    #[arg(long, value_delimiter = ',')]
    support_volumes: Vec<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct CalibrateArgs {
    #[arg(long)]
    preset: Option<String>,
    #[arg(long = "T")]
    total_time: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    burn_in: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    kernel_order: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    k_grid: Vec<f64>,
    #[arg(long)]
    oracle_time: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    eval_lo: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    eval_hi: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    eval_nodes: Vec<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ValidateArgs {
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    probes: Option<usize>,
    #[arg(long)]
    probe_radius: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Dimension(_) => EXIT_DIMENSION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn load_file_config(path: &Option<PathBuf>) -> Result<FileConfig, CliError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("cannot parse {}: {e}", p.display())))
        }
    }
}

fn build_model_from(
    preset: &Option<String>,
    file: &FileConfig,
) -> Result<ejdke::model::ModelSpec, CliError> {
    let cfg = if let Some(name) = preset {
        ModelConfig::preset(name)
    } else if let Some(m) = &file.model {
        m.clone()
    } else if let Some(name) = &file.preset {
        ModelConfig::preset(name)
    } else {
        return Err(CliError::Config("no model preset given".into()));
    };
    model::build_model(&cfg).map_err(|e| match e {
        model::ModelError::DimMismatch(m) => CliError::Dimension(m),
        other => CliError::Config(other.to_string()),
    })
}

fn eval_grid_from(
    lo: &[f64],
    hi: &[f64],
    nodes: &[usize],
    file: &FileConfig,
    d: usize,
) -> Result<EvalGrid, CliError> {
    let lo = if lo.is_empty() {
        file.eval_lo.clone().unwrap_or_else(|| vec![-1.0; d])
    } else {
        lo.to_vec()
    };
    let hi = if hi.is_empty() {
        file.eval_hi.clone().unwrap_or_else(|| vec![1.0; d])
    } else {
        hi.to_vec()
    };
    let nodes = if nodes.is_empty() {
        file.eval_nodes.clone().unwrap_or_else(|| vec![10; d])
    } else {
        nodes.to_vec()
    };
    if lo.len() != d || hi.len() != d || nodes.len() != d {
        return Err(CliError::Dimension(format!(
            "evaluation box has dimension {} but the model/trajectory has dimension {d}",
            lo.len()
        )));
    }
    Ok(EvalGrid::new(lo, hi, nodes))
}

fn out_dir(arg: &Option<PathBuf>, file: &FileConfig) -> Result<PathBuf, CliError> {
    let dir = arg
        .clone()
        .or_else(|| file.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("ejdke-out"));
    fs::create_dir_all(&dir).map_err(runtime)?;
    Ok(dir)
}

fn write_manifest(
    dir: &Path,
    subcommand: &str,
    config_echo: serde_json::Value,
    seed: u64,
    started: Instant,
) -> Result<(), CliError> {
    let manifest = json!({
        "subcommand": subcommand,
        "config": config_echo,
        "master_seed": seed,
        "crate_version": env!("CARGO_PKG_VERSION"),
        "wall_time_secs": started.elapsed().as_secs_f64(),
    });
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(runtime)?,
    )
    .map_err(runtime)
}

fn default_burn_in(model: &ejdke::model::ModelSpec) -> f64 {
    (5.0 / model.meta.c_tilde).max(50.0)
}

fn init_threads() {
    if let Ok(v) = std::env::var("EJDKE_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = load_file_config(&cli.config)?;
    let started = Instant::now();
    match cli.command {
        Command::Simulate(a) => {
            let model = build_model_from(&a.preset, &file)?;
            let t = a.total_time.or(file.total_time).unwrap_or(1000.0);
            let dt = a.dt.or(file.dt).unwrap_or(0.01);
            let burn = a.burn_in.or(file.burn_in).unwrap_or_else(|| default_burn_in(&model));
            let seed = a.seed.or(file.seed).unwrap_or(1);
            let dir = out_dir(&a.out_dir, &file)?;
            let traj = simulate_path(&model, t, dt, burn, seed).map_err(runtime)?;
            write_trajectory(&traj, &dir.join("trajectory.ejdt")).map_err(runtime)?;
            if a.csv {
                simulate::write_trajectory_csv(&traj, &dir.join("trajectory.csv"))
                    .map_err(runtime)?;
            }
            let echo = json!({"preset": model.label, "T": t, "dt": dt, "burn_in": burn, "seed": seed});
            write_manifest(&dir, "simulate", echo, seed, started)?;
            println!("wrote {}", dir.join("trajectory.ejdt").display());
        }
        Command::Estimate(a) => {
            let traj = read_trajectory(&a.traj).map_err(runtime)?;
            let order = a.kernel_order.or(file.kernel_order).unwrap_or(5);
            let kernel = build_kernel(order);
            let grid = eval_grid_from(&a.eval_lo, &a.eval_hi, &a.eval_nodes, &file, traj.dim)?;
            if a.bandwidth.len() != traj.dim {
                return Err(CliError::Dimension(format!(
                    "bandwidth has {} components but trajectory dimension is {}",
                    a.bandwidth.len(),
                    traj.dim
                )));
            }
            let dir = out_dir(&a.out_dir, &file)?;
            let est = estimator::estimate_density(&traj, &kernel, &a.bandwidth, &grid)
                .map_err(runtime)?;
            fs::write(
                dir.join("estimate.json"),
                serde_json::to_string_pretty(&est).map_err(runtime)?,
            )
            .map_err(runtime)?;
            est.write_csv(&dir.join("estimate.csv")).map_err(runtime)?;
            let echo = json!({"traj": a.traj, "bandwidth": a.bandwidth, "kernel_order": order});
            write_manifest(&dir, "estimate", echo, traj.seed, started)?;
            println!("wrote {}", dir.join("estimate.csv").display());
        }
        Command::SelectBandwidth(a) => {
            let traj = read_trajectory(&a.traj).map_err(runtime)?;
            let order = a.kernel_order.or(file.kernel_order).unwrap_or(5);
            let kernel = build_kernel(order);
            let mode = a
                .grid
                .map(GridMode::from)
                .or(file.grid_mode)
                .unwrap_or(GridMode::Relaxed);
            let k = a.k.or(file.k).unwrap_or(2.0);
            let k_max = a.k_max.or(file.k_max).unwrap_or(4);
            let grid = adaptive::candidate_bandwidths(traj.total_time(), traj.dim, mode, k_max)
                .map_err(runtime)?;
            let eval = eval_grid_from(&a.eval_lo, &a.eval_hi, &a.eval_nodes, &file, traj.dim)?;
            let dir = out_dir(&a.out_dir, &file)?;
            let sel = adaptive::select_bandwidth(&traj, &kernel, &grid, &eval, k).map_err(runtime)?;
            fs::write(
                dir.join("selection.json"),
                serde_json::to_string_pretty(&sel).map_err(runtime)?,
            )
            .map_err(runtime)?;
            sel.write_csv(&dir.join("selection.csv")).map_err(runtime)?;
            let echo = json!({"traj": a.traj, "mode": mode, "k": k, "k_max": k_max, "kernel_order": order});
            write_manifest(&dir, "select-bandwidth", echo, traj.seed, started)?;
            println!(
                "selected h = {:?} (A = {:.6e}, V = {:.6e})",
                sel.selected().h,
                sel.selected().bias_proxy,
                sel.selected().penalty
            );
        }
        Command::RateExperiment(a) => {
            let mut model_cfg = if let Some(name) = &a.preset {
                ModelConfig::preset(name)
            } else if let Some(m) = &file.model {
                m.clone()
            } else if let Some(name) = &file.preset {
                ModelConfig::preset(name)
            } else {
                return Err(CliError::Config("no model preset given".into()));
            };
            if let Some(g) = a.gamma0 {
                model_cfg.gamma0 = Some(g);
            }
            let model = model::build_model(&model_cfg).map_err(|e| CliError::Config(e.to_string()))?;
            if a.t_grid.len() < 3 {
                return Err(CliError::Config(
                    "rate-experiment needs a T grid with at least 3 points to fit a slope".into(),
                ));
            }
            let d = model.dim;
            let (rule, theory) = if !a.beta.is_empty() {
                let spec = SmoothnessSpec::new(a.beta.clone());
                let bb = spec.harmonic_mean();
                let exp = -2.0 * bb / (2.0 * bb + d as f64 - 2.0);
                (BandwidthRule::RateOptimal(spec), exp)
            } else if !a.fixed_bandwidth.is_empty() {
                (BandwidthRule::Fixed(a.fixed_bandwidth.clone()), 0.0)
            } else if a.power_law.len() == 2 {
                (
                    BandwidthRule::PowerLaw {
                        coeff: a.power_law[0],
                        exponent: a.power_law[1],
                    },
                    -1.0,
                )
            } else {
                return Err(CliError::Config(
                    "give one of --beta, --fixed-bandwidth, --power-law".into(),
                ));
            };
            let seed = a.seed.or(file.seed).unwrap_or(1);
            let dt = a.dt.or(file.dt).unwrap_or(0.02);
            let burn = a.burn_in.or(file.burn_in).unwrap_or_else(|| default_burn_in(&model));
            let max_t = a.t_grid.iter().copied().fold(0.0f64, f64::max);
            let eval = eval_grid_from(&a.eval_lo, &a.eval_hi, &a.eval_nodes, &file, d)?;
            let gamma_zero = model_cfg.gamma0 == Some(0.0);
            let reference = if model.label == "smooth-1d" && gamma_zero {
                let sigma = model_cfg.sigma.unwrap_or(1.0);
                let f = model::stationary_density_1d(|x| -x.tanh(), sigma, 30.0);
                ReferenceDensity::ClosedForm1d(std::sync::Arc::new(f))
            } else {
                let oracle_t = a.oracle_time.unwrap_or(100.0 * max_t);
                let pad = 0.5;
                let lo: Vec<f64> = eval.lo.iter().map(|v| v - pad).collect();
                let hi: Vec<f64> = eval.hi.iter().map(|v| v + pad).collect();
                let cell = a.oracle_cell.unwrap_or(0.05);
                let cells: Vec<usize> = lo
                    .iter()
                    .zip(&hi)
                    .map(|(l, h)| ((h - l) / cell).round() as usize)
                    .collect();
                rates::histogram_oracle(
                    &model,
                    oracle_t,
                    a.oracle_dt.unwrap_or(dt),
                    burn,
                    rngstream::derive_seed(seed, &[u64::MAX]),
                    lo,
                    hi,
                    cells,
                )
                .map_err(runtime)?
            };
            let cfg = ExperimentConfig {
                t_grid: a.t_grid.clone(),
                replications: a.replications.unwrap_or(50),
                dt,
                burn_in: burn,
                rule,
                theoretical_exponent: theory,
                tolerance: a.tolerance.unwrap_or(0.3),
                seed,
            };
            let kernel = build_kernel(a.kernel_order.or(file.kernel_order).unwrap_or(5));
            let dir = out_dir(&a.out_dir, &file)?;
            let report = rates::mse_experiment(&model, &kernel, &cfg, &eval, &reference)
                .map_err(runtime)?;
            fs::write(
                dir.join("rate_report.json"),
                serde_json::to_string_pretty(&report).map_err(runtime)?,
            )
            .map_err(runtime)?;
            report.write_csv(&dir.join("rate_points.csv")).map_err(runtime)?;
            report
                .write_loglog_csv(&dir.join("rate_loglog.csv"))
                .map_err(runtime)?;
            let echo = serde_json::to_value(&cfg).map_err(runtime)?;
            write_manifest(&dir, "rate-experiment", echo, seed, started)?;
            println!(
                "slope {:.4} (theory {:.4}, tol {:.2}) -> {}",
                report.slope,
                report.theoretical_exponent,
                report.tolerance,
                if report.pass { "PASS" } else { "FAIL" }
            );
        }
        Command::VarianceProbe(a) => {
            let model = build_model_from(&a.preset, &file)?;
            let seed = a.seed.or(file.seed).unwrap_or(1);
            let t = a.total_time.or(file.total_time).unwrap_or(500.0);
            let dt = a.dt.or(file.dt).unwrap_or(0.01);
            let burn = a.burn_in.or(file.burn_in).unwrap_or_else(|| default_burn_in(&model));
            let volumes = if a.support_volumes.is_empty() {
                vec![0.125, 0.0625, 0.03125, 0.015625, 0.0078125]
            } else {
                a.support_volumes.clone()
            };
            let reps = a.replications.unwrap_or(100);
            let center = vec![0.0; model.dim];
            let dir = out_dir(&a.out_dir, &file)?;
            let report = rates::variance_probe(
                &model,
                &center,
                &volumes,
                t,
                reps,
                dt,
                burn,
                seed,
                a.tolerance.unwrap_or(0.3),
            )
            .map_err(runtime)?;
            fs::write(
                dir.join("variance_probe.json"),
                serde_json::to_string_pretty(&report).map_err(runtime)?,
            )
            .map_err(runtime)?;
            let echo = json!({"preset": model.label, "T": t, "dt": dt, "replications": reps, "volumes": volumes});
            write_manifest(&dir, "variance-probe", echo, seed, started)?;
            println!(
                "slope {:.4} (target {:.4}) -> {}",
                report.slope,
                report.target_slope,
                if report.pass { "PASS" } else { "FAIL" }
            );
        }
        Command::CalibrateK(a) => {
            let model = build_model_from(&a.preset, &file)?;
            let seed = a.seed.or(file.seed).unwrap_or(1);
            let t = a.total_time.or(file.total_time).unwrap_or(500.0);
            let dt = a.dt.or(file.dt).unwrap_or(0.02);
            let burn = a.burn_in.or(file.burn_in).unwrap_or_else(|| default_burn_in(&model));
            let eval = eval_grid_from(&a.eval_lo, &a.eval_hi, &a.eval_nodes, &file, model.dim)?;
            let k_grid = if a.k_grid.is_empty() {
                vec![0.01, 0.05, 0.2, 0.5, 2.0]
            } else {
                a.k_grid.clone()
            };
            let oracle_t = a.oracle_time.unwrap_or(100.0 * t);
            let pad = 0.5;
            let lo: Vec<f64> = eval.lo.iter().map(|v| v - pad).collect();
            let hi: Vec<f64> = eval.hi.iter().map(|v| v + pad).collect();
            let cells: Vec<usize> = lo
                .iter()
                .zip(&hi)
                .map(|(l, h)| ((h - l) / 0.05).round() as usize)
                .collect();
            let reference = rates::histogram_oracle(
                &model,
                oracle_t,
                dt,
                burn,
                rngstream::derive_seed(seed, &[u64::MAX]),
                lo,
                hi,
                cells,
            )
            .map_err(runtime)?;
            let cfg = CalibrationConfig {
                total_time: t,
                dt,
                burn_in: burn,
                kernel_order: a.kernel_order.or(file.kernel_order).unwrap_or(5),
                mode: file.grid_mode.unwrap_or(GridMode::Relaxed),
                k_max: a.k_max.or(file.k_max).unwrap_or(3),
            };
            let dir = out_dir(&a.out_dir, &file)?;
            let report = adaptive::calibrate_k(
                &model,
                &cfg,
                &eval,
                &reference,
                a.replications.unwrap_or(20),
                &k_grid,
                seed,
            )
            .map_err(runtime)?;
            fs::write(
                dir.join("calibration.json"),
                serde_json::to_string_pretty(&report).map_err(runtime)?,
            )
            .map_err(runtime)?;
            let echo = serde_json::to_value(&cfg).map_err(runtime)?;
            write_manifest(&dir, "calibrate-k", echo, seed, started)?;
            println!("chosen k = {}", report.chosen_k);
        }
        Command::ValidateModel(a) => {
            let model = build_model_from(&a.preset, &file)?;
            let seed = a.seed.or(file.seed).unwrap_or(1);
            let n = a.probes.unwrap_or(1000);
            let radius = a.probe_radius.unwrap_or(10.0);
            let probes = random_probes(model.dim, n, radius, seed);
            let report = model::check_assumptions(&model, &probes, &Tolerances::default());
            let dir = out_dir(&a.out_dir, &file)?;
            fs::write(
                dir.join("assumptions.json"),
                serde_json::to_string_pretty(&report).map_err(runtime)?,
            )
            .map_err(runtime)?;
            let echo = json!({"preset": model.label, "probes": n, "radius": radius, "seed": seed});
            write_manifest(&dir, "validate-model", echo, seed, started)?;
            for c in &report.checks {
                println!(
                    "{:<24} {}",
                    c.name,
                    if c.passed { "pass" } else { "FAIL" }
                );
            }
            if !report.passed_all() {
                return Err(CliError::Runtime("assumption checks failed".into()));
            }
        }
    }
    Ok(())
}

/// Uniform probe points in the ball of the given radius.
fn random_probes(d: usize, n: usize, radius: f64, seed: u64) -> Vec<Vec<f64>> {
    use rand::Rng;
    let mut rng = rngstream::derive(seed, &[0xbeef]);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p: Vec<f64> = (0..d).map(|_| rng.gen_range(-radius..radius)).collect();
        if p.iter().map(|v| v * v).sum::<f64>() <= radius * radius {
            out.push(p);
        }
    }
    out
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = json!({"error": e.to_string(), "exit_code": e.exit_code()});
            eprintln!("{record}");
            ExitCode::from(e.exit_code())
        }
    }
}
