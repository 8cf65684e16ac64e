//! Rate-optimal bandwidths, theoretical convergence rates, and the Monte
//! Carlo experiments that probe the variance bounds and rate exponents at
//! desk scale.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{estimate_density, EstimError, EvalGrid};
use crate::kernel::Kernel;
use crate::model::ModelSpec;
use crate::reference::{HistogramBuilder, ReferenceDensity};
use crate::rngstream;
use crate::simulate::{simulate_fold, simulate_path, SimError};

#[derive(Debug, Error)]
pub enum RateError {
    #[error("rate-optimal bandwidths are only defined for d >= 3, got d = {0}")]
    DimTooSmall(usize),
    #[error("need at least 3 horizon values to fit a slope, got {0}")]
    ShortTGrid(usize),
    #[error("need at least {need} replications, got {got}")]
    TooFewReplications { need: usize, got: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Estim(#[from] EstimError),
}

/// Anisotropic smoothness vector with its harmonic mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmoothnessSpec {
    pub beta: Vec<f64>,
}

impl SmoothnessSpec {
    pub fn new(beta: Vec<f64>) -> Self {
        assert!(beta.iter().all(|&b| b > 0.0), "smoothness must be positive");
        Self { beta }
    }

    /// Harmonic mean `beta_bar` with `1/beta_bar = (1/d) sum 1/beta_l`.
    pub fn harmonic_mean(&self) -> f64 {
        let d = self.beta.len() as f64;
        d / self.beta.iter().map(|b| 1.0 / b).sum::<f64>()
    }
}

/// Rate-optimal bandwidth `h_l = T^(-beta_bar / (beta_l (2 beta_bar + d - 2)))`,
/// clamped to `(0, 1]`.
pub fn rate_optimal_bandwidth(
    spec: &SmoothnessSpec,
    d: usize,
    total_time: f64,
) -> Result<Vec<f64>, RateError> {
    if d < 3 {
        return Err(RateError::DimTooSmall(d));
    }
    assert_eq!(spec.beta.len(), d);
    let bb = spec.harmonic_mean();
    Ok(spec
        .beta
        .iter()
        .map(|&bl| {
            total_time
                .powf(-bb / (bl * (2.0 * bb + d as f64 - 2.0)))
                .min(1.0)
        })
        .collect())
}

/// Theoretical L2(A) risk envelope:
/// `(log T)^((2 - (1+alpha)/2) v 1) / T` for d = 1, `(log T)/T` for d = 2,
/// `T^(-2 beta_bar / (2 beta_bar + d - 2))` for d >= 3.
pub fn theoretical_rate(d: usize, alpha: f64, beta_bar: f64, total_time: f64) -> f64 {
    assert!(alpha > 0.0 && alpha < 2.0);
    let log_t = total_time.ln();
    match d {
        1 => log_t.powf((2.0 - (1.0 + alpha) / 2.0).max(1.0)) / total_time,
        2 => log_t / total_time,
        _ => total_time.powf(-2.0 * beta_bar / (2.0 * beta_bar + d as f64 - 2.0)),
    }
}

/// How bandwidths depend on the horizon inside an experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum BandwidthRule {
    /// The rate-optimal anisotropic choice for a given smoothness (d >= 3).
    RateOptimal(SmoothnessSpec),
    /// Horizon-independent bandwidths (exposes the squared-bias floor).
    Fixed(Vec<f64>),
    /// `h_l = coeff * T^exponent` on every axis, clamped to (0, 1].
    PowerLaw { coeff: f64, exponent: f64 },
}

impl BandwidthRule {
    pub fn bandwidths(&self, d: usize, total_time: f64) -> Result<Vec<f64>, RateError> {
        match self {
            BandwidthRule::RateOptimal(spec) => rate_optimal_bandwidth(spec, d, total_time),
            BandwidthRule::Fixed(h) => Ok(h.clone()),
            BandwidthRule::PowerLaw { coeff, exponent } => {
                let h = (coeff * total_time.powf(*exponent)).min(1.0);
                assert!(h > 0.0);
                Ok(vec![h; d])
            }
        }
    }
}

/// Ordinary least squares slope of `y` on `x` with its standard error.
pub fn fit_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let xb = x.iter().sum::<f64>() / n;
    let yb = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - xb) * (v - xb)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(u, v)| (u - xb) * (v - yb)).sum();
    let slope = sxy / sxx;
    let intercept = yb - slope * xb;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(u, v)| {
            let r = v - intercept - slope * u;
            r * r
        })
        .sum();
    let se = if x.len() > 2 {
        (ss_res / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    (slope, se)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

#[derive(Debug, Clone, Serialize)]
pub struct RatePoint {
    pub total_time: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub n: usize,
}

/// Result of a rate-verification experiment: per-horizon squared L2(A)
/// error summaries and the fitted log-log slope.
#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub points: Vec<RatePoint>,
    pub slope: f64,
    pub slope_stderr: f64,
    pub theoretical_exponent: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub config: ExperimentConfig,
}

impl RateReport {
    /// CSV `(T, median, q25, q75, n)` plus a log-log companion for plotting.
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "T,median,q25,q75,n")?;
        for p in &self.points {
            writeln!(w, "{},{},{},{},{}", p.total_time, p.median, p.q25, p.q75, p.n)?;
        }
        w.flush()
    }

    pub fn write_loglog_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "log_T,log_median")?;
        for p in &self.points {
            writeln!(w, "{},{}", p.total_time.ln(), p.median.ln())?;
        }
        w.flush()
    }
}

/// Everything an MSE experiment needs besides the model and reference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub t_grid: Vec<f64>,
    pub replications: usize,
    pub dt: f64,
    pub burn_in: f64,
    pub rule: BandwidthRule,
    pub theoretical_exponent: f64,
    pub tolerance: f64,
    pub seed: u64,
}

/// For each horizon and replication: simulate, estimate with the rule's
/// bandwidth, record the squared L2(A) error against the reference; then fit
/// the slope of log median error against log T.
pub fn mse_experiment(
    model: &ModelSpec,
    kernel: &Kernel,
    cfg: &ExperimentConfig,
    eval: &EvalGrid,
    reference: &ReferenceDensity,
) -> Result<RateReport, RateError> {
    if cfg.t_grid.len() < 3 {
        return Err(RateError::ShortTGrid(cfg.t_grid.len()));
    }
    let ref_vals = reference.values_on(eval);
    let d = model.dim;

    let mut points = Vec::with_capacity(cfg.t_grid.len());
    for (ti, &t) in cfg.t_grid.iter().enumerate() {
        let h = cfg.rule.bandwidths(d, t)?;
        let mut errs: Vec<f64> = (0..cfg.replications)
            .into_par_iter()
            .map(|rep| {
                let seed = rngstream::derive_seed(cfg.seed, &[ti as u64, rep as u64]);
                let traj = simulate_path(model, t, cfg.dt, cfg.burn_in, seed)?;
                let est = estimate_density(&traj, kernel, &h, eval)?;
                let dist = crate::estimator::l2_distance_on_a(&est.values, &ref_vals, eval);
                Ok::<f64, RateError>(dist * dist)
            })
            .collect::<Result<Vec<_>, _>>()?;
        errs.sort_by(f64::total_cmp);
        points.push(RatePoint {
            total_time: t,
            median: quantile(&errs, 0.5),
            q25: quantile(&errs, 0.25),
            q75: quantile(&errs, 0.75),
            n: errs.len(),
        });
    }

    let xs: Vec<f64> = points.iter().map(|p| p.total_time.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.median.ln()).collect();
    let (slope, se) = fit_slope(&xs, &ys);
    let pass = (slope - cfg.theoretical_exponent).abs() <= cfg.tolerance;
    Ok(RateReport {
        points,
        slope,
        slope_stderr: se,
        theoretical_exponent: cfg.theoretical_exponent,
        tolerance: cfg.tolerance,
        pass,
        config: cfg.clone(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceProbePoint {
    pub support_volume: f64,
    pub variance: f64,
}

/// Empirical scaling of `Var(int_0^T f(X_t) dt)` in the support volume, for
/// `f` the indicator of a cube around a high-density point.
#[derive(Debug, Clone, Serialize)]
pub struct VarianceProbeReport {
    pub points: Vec<VarianceProbePoint>,
    /// Fitted slope of `log(Var / T)` against `log s` (indicator `f`, so
    /// `|f|_inf = 1` and no normalization term enters).
    pub slope: f64,
    pub slope_stderr: f64,
    pub target_slope: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Monte Carlo probe of the variance bound: for each cube volume `s`,
/// estimate the variance of the occupation integral over replications and
/// regress `log(Var/T)` on `log s`. Target slope `1 + 2/d` for d >= 3 and
/// `2` for d in {1, 2} (log factors absorbed into the tolerance).
#[allow(clippy::too_many_arguments)]
pub fn variance_probe(
    model: &ModelSpec,
    center: &[f64],
    support_volumes: &[f64],
    total_time: f64,
    replications: usize,
    dt: f64,
    burn_in: f64,
    seed: u64,
    tolerance: f64,
) -> Result<VarianceProbeReport, RateError> {
    if replications < 20 {
        return Err(RateError::TooFewReplications {
            need: 20,
            got: replications,
        });
    }
    assert!(support_volumes.iter().all(|&s| s > 0.0 && s < 1.0));
    let d = model.dim;
    let half_sides: Vec<f64> = support_volumes
        .iter()
        .map(|s| 0.5 * s.powf(1.0 / d as f64))
        .collect();

    // one set of paths shared by every support size
    let integrals: Vec<Vec<f64>> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let path_seed = rngstream::derive_seed(seed, &[rep as u64]);
            let traj = simulate_path(model, total_time, dt, burn_in, path_seed)?;
            let mut occ = vec![0.0f64; support_volumes.len()];
            for row in traj.riemann_rows() {
                for (o, &half) in occ.iter_mut().zip(&half_sides) {
                    if row
                        .iter()
                        .zip(center)
                        .all(|(x, c)| (x - c).abs() <= half)
                    {
                        *o += dt;
                    }
                }
            }
            Ok::<Vec<f64>, RateError>(occ)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut points = Vec::with_capacity(support_volumes.len());
    for (si, &s) in support_volumes.iter().enumerate() {
        let vals: Vec<f64> = integrals.iter().map(|v| v[si]).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        points.push(VarianceProbePoint {
            support_volume: s,
            variance: var,
        });
    }

    let xs: Vec<f64> = points.iter().map(|p| p.support_volume.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| (p.variance / total_time).ln()).collect();
    let (slope, se) = fit_slope(&xs, &ys);
    let target = if d >= 3 { 1.0 + 2.0 / d as f64 } else { 2.0 };
    Ok(VarianceProbeReport {
        points,
        slope,
        slope_stderr: se,
        target_slope: target,
        tolerance,
        pass: (slope - target).abs() <= tolerance,
    })
}

/// Build a histogram-oracle reference density from one long trajectory.
#[allow(clippy::too_many_arguments)]
pub fn histogram_oracle(
    model: &ModelSpec,
    oracle_time: f64,
    dt: f64,
    burn_in: f64,
    seed: u64,
    lo: Vec<f64>,
    hi: Vec<f64>,
    counts: Vec<usize>,
) -> Result<ReferenceDensity, RateError> {
    // Stream the long oracle path straight into occupation counts; only the
    // first n_steps states enter the left-endpoint Riemann sum.
    let n_steps = (oracle_time / dt).round() as usize;
    let mut builder = HistogramBuilder::new(lo, hi, counts);
    let mut visited = 0usize;
    simulate_fold(model, oracle_time, dt, burn_in, seed, |x| {
        if visited < n_steps {
            builder.add(x, dt);
        }
        visited += 1;
    })?;
    Ok(ReferenceDensity::Histogram(Arc::new(
        builder.finish(n_steps as f64 * dt),
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::build_kernel;
    use crate::model::{build_model, stationary_density_1d, ModelConfig};
    use approx::assert_abs_diff_eq;

    #[test]
    fn isotropic_rate_optimal_bandwidths() {
        let spec = SmoothnessSpec::new(vec![2.0, 2.0, 2.0]);
        assert_abs_diff_eq!(spec.harmonic_mean(), 2.0, epsilon = 1e-15);
        for t in [500.0, 2000.0, 8000.0] {
            let h = rate_optimal_bandwidth(&spec, 3, t).unwrap();
            for &hl in &h {
                // beta_bar / (beta_l (2 beta_bar + d - 2)) = 2 / (2 * 5) = 1/5
                assert_abs_diff_eq!(hl, t.powf(-0.2), epsilon = 1e-14);
            }
            assert!(h.iter().all(|&v| v == h[0]));
        }
    }

    #[test]
    fn anisotropic_rate_optimal_exponents() {
        let spec = SmoothnessSpec::new(vec![1.0, 2.0, 2.0]);
        assert_abs_diff_eq!(spec.harmonic_mean(), 1.5, epsilon = 1e-15);
        let t = 1000.0;
        let h = rate_optimal_bandwidth(&spec, 3, t).unwrap();
        let a: Vec<f64> = h.iter().map(|&hl| -hl.ln() / t.ln()).collect();
        assert_abs_diff_eq!(a[0], 0.375, epsilon = 1e-12);
        assert_abs_diff_eq!(a[1], 0.1875, epsilon = 1e-12);
        assert_abs_diff_eq!(a[2], 0.1875, epsilon = 1e-12);
    }

    #[test]
    fn balance_identity_holds() {
        let spec = SmoothnessSpec::new(vec![0.7, 1.3, 2.9, 4.0]);
        let t = 5000.0;
        let h = rate_optimal_bandwidth(&spec, 4, t).unwrap();
        let products: Vec<f64> = spec
            .beta
            .iter()
            .zip(&h)
            .map(|(b, hl)| b * (-hl.ln() / t.ln()))
            .collect();
        for p in &products {
            assert_abs_diff_eq!(*p, products[0], epsilon = 1e-12);
        }
    }

    #[test]
    fn rate_optimal_requires_d_at_least_three() {
        let spec = SmoothnessSpec::new(vec![2.0]);
        assert!(matches!(
            rate_optimal_bandwidth(&spec, 1, 100.0),
            Err(RateError::DimTooSmall(1))
        ));
    }

    #[test]
    fn theoretical_rate_cases() {
        let t = 1000.0f64;
        let log_t = t.ln();
        assert_abs_diff_eq!(
            theoretical_rate(1, 0.5, 2.0, t),
            log_t.powf(1.25) / t,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(theoretical_rate(1, 1.5, 2.0, t), log_t / t, epsilon = 1e-15);
        assert_abs_diff_eq!(theoretical_rate(2, 0.7, 2.0, t), log_t / t, epsilon = 1e-15);
        // d = 3, beta_bar = 2: exponent -4/5 exactly
        assert_abs_diff_eq!(theoretical_rate(3, 0.5, 2.0, t), t.powf(-0.8), epsilon = 1e-15);
    }

    #[test]
    fn theoretical_rate_is_monotone_decreasing_in_t() {
        let grid = [100.0, 300.0, 1000.0, 3000.0, 1e4, 1e5];
        for (d, alpha, bb) in [(1usize, 0.5, 2.0), (1, 1.5, 2.0), (2, 0.5, 2.0), (3, 0.5, 2.0), (5, 0.9, 1.5)] {
            for w in grid.windows(2) {
                assert!(
                    theoretical_rate(d, alpha, bb, w[1]) < theoretical_rate(d, alpha, bb, w[0]),
                    "rate must decrease in T for d = {d}"
                );
            }
        }
    }

    #[test]
    fn slope_fit_recovers_exact_line() {
        let x: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 0.8 * v).collect();
        let (slope, se) = fit_slope(&x, &y);
        assert_abs_diff_eq!(slope, -0.8, epsilon = 1e-12);
        assert!(se.abs() < 1e-10);
    }

    #[test]
    fn short_t_grid_rejected() {
        let model = build_model(&ModelConfig::preset("smooth-1d")).unwrap();
        let kernel = build_kernel(3);
        let mu = stationary_density_1d(|x| -x.tanh(), 1.0, 30.0);
        let reference = ReferenceDensity::ClosedForm1d(Arc::new(mu));
        let cfg = ExperimentConfig {
            t_grid: vec![100.0, 200.0],
            replications: 5,
            dt: 0.01,
            burn_in: 10.0,
            rule: BandwidthRule::Fixed(vec![0.3]),
            theoretical_exponent: -1.0,
            tolerance: 0.3,
            seed: 1,
        };
        let eval = EvalGrid::cube(1, 1.0, 8);
        assert!(matches!(
            mse_experiment(&model, &kernel, &cfg, &eval, &reference),
            Err(RateError::ShortTGrid(2))
        ));
    }

    #[test]
    fn mse_experiment_is_deterministic() {
        let model = build_model(&ModelConfig::preset("smooth-1d")).unwrap();
        let kernel = build_kernel(3);
        let mu = stationary_density_1d(|x| -x.tanh(), 1.0, 30.0);
        let reference = ReferenceDensity::ClosedForm1d(Arc::new(mu));
        let cfg = ExperimentConfig {
            t_grid: vec![20.0, 40.0, 80.0],
            replications: 4,
            dt: 0.02,
            burn_in: 5.0,
            rule: BandwidthRule::Fixed(vec![0.3]),
            theoretical_exponent: -1.0,
            tolerance: 10.0,
            seed: 33,
        };
        let eval = EvalGrid::cube(1, 1.5, 12);
        let r1 = mse_experiment(&model, &kernel, &cfg, &eval, &reference).unwrap();
        let r2 = mse_experiment(&model, &kernel, &cfg, &eval, &reference).unwrap();
        assert_eq!(r1.slope.to_bits(), r2.slope.to_bits());
        for (p, q) in r1.points.iter().zip(&r2.points) {
            assert_eq!(p.median.to_bits(), q.median.to_bits());
        }
        assert_eq!(r1.points.len(), 3);
        assert!(r1.slope.is_finite());
    }

    #[test]
    fn variance_probe_requires_enough_replications() {
        let model = build_model(&ModelConfig::preset("radial-pushback-3")).unwrap();
        assert!(matches!(
            variance_probe(&model, &[0.0; 3], &[0.1, 0.05], 10.0, 5, 0.05, 1.0, 1, 0.3),
            Err(RateError::TooFewReplications { .. })
        ));
    }

    #[test]
    fn power_law_rule_clamps_to_one() {
        let rule = BandwidthRule::PowerLaw { coeff: 5.0, exponent: -0.1 };
        let h = rule.bandwidths(2, 100.0).unwrap();
        assert_eq!(h, vec![1.0, 1.0]);
    }
}
