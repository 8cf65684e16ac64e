//! Jump-diffusion model specifications, shipped presets, numeric validation of
//! the standing assumptions, and a quadrature-based probe of the generator and
//! its Lyapunov drift condition.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use thiserror::Error;

use crate::linalg;
use crate::quad;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("invalid Levy spec: {0}")]
    InvalidLevy(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("diffusion violates ellipticity at probe point (eigenvalue {eigenvalue} outside [{lo}, {hi}])")]
    Ellipticity { eigenvalue: f64, lo: f64, hi: f64 },
    #[error("jump quadrature did not converge within budget (residual estimate {residual:.3e})")]
    QuadratureNotConverged { residual: f64 },
    #[error("exponential moment quadrature diverges: value {value:.3e} exceeds cap {cap:.3e}")]
    ExpMomentTooLarge { value: f64, cap: f64 },
    #[error("jump quadrature only implemented for d <= 3, got d = {0}")]
    UnsupportedDim(usize),
}

/// Truncated Levy jump measure `F(z) = c / |z|^{d + alpha}` on the annulus
/// `trunc_low <= |z| <= trunc_high`, restricted to the half-space `z_1 > 0`
/// when `symmetric` is false.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevySpec {
    pub alpha: f64,
    pub intensity_const: f64,
    pub truncation_low: f64,
    pub truncation_high: f64,
    pub symmetric: bool,
}

/// Surface area of the unit sphere in `R^d`.
pub fn sphere_area(d: usize) -> f64 {
    2.0 * PI.powf(d as f64 / 2.0) / gamma(d as f64 / 2.0)
}

/// Mean of `|u_1|` for `u` uniform on the unit sphere in `R^d`.
fn mean_abs_first_coord(d: usize) -> f64 {
    if d == 1 {
        1.0
    } else {
        gamma(d as f64 / 2.0) / (PI.sqrt() * gamma((d as f64 + 1.0) / 2.0))
    }
}

impl LevySpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(ModelError::InvalidLevy(format!(
                "alpha must lie in (0, 2), got {}",
                self.alpha
            )));
        }
        if !self.intensity_const.is_finite() || self.intensity_const <= 0.0 {
            return Err(ModelError::InvalidLevy("intensity_const must be positive".into()));
        }
        if !(self.truncation_low > 0.0 && self.truncation_low < self.truncation_high) {
            return Err(ModelError::InvalidLevy(
                "need 0 < truncation_low < truncation_high".into(),
            ));
        }
        if !self.truncation_high.is_finite() {
            return Err(ModelError::InvalidLevy(
                "truncation_high must be finite (untruncated tails are not simulable)".into(),
            ));
        }
        if self.alpha == 1.0 && !self.symmetric {
            return Err(ModelError::InvalidLevy(
                "alpha = 1 requires a symmetric measure".into(),
            ));
        }
        Ok(())
    }

    fn angular_fraction(&self) -> f64 {
        if self.symmetric {
            1.0
        } else {
            0.5
        }
    }

    /// Radial intensity `r -> c S_{d-1} r^{-1-alpha}` integrated over the
    /// truncated support by quadrature: the total jump rate `lambda`.
    pub fn total_mass(&self, d: usize) -> f64 {
        let c = self.intensity_const * sphere_area(d) * self.angular_fraction();
        let a = self.alpha;
        c * quad::integrate_geometric(
            |r| r.powf(-1.0 - a),
            self.truncation_low,
            self.truncation_high,
            32,
            16,
        )
    }

    /// Closed form of `total_mass`, kept as an independent cross-check.
    pub fn total_mass_closed_form(&self, d: usize) -> f64 {
        let c = self.intensity_const * sphere_area(d) * self.angular_fraction();
        c * (self.truncation_low.powf(-self.alpha) - self.truncation_high.powf(-self.alpha))
            / self.alpha
    }

    /// Compensation drift `m_F = int z F(z) dz` over the truncated support.
    /// Identically zero for symmetric specs; supported on `z_1 > 0` otherwise.
    pub fn mean_jump(&self, d: usize) -> Vec<f64> {
        let mut m = vec![0.0; d];
        if self.symmetric {
            return m;
        }
        let a = self.alpha;
        let radial = quad::integrate_geometric(
            |r| r.powf(-a),
            self.truncation_low,
            self.truncation_high,
            32,
            16,
        );
        // int_{u_1 > 0} u_1 dsigma(u) = S_{d-1} E|u_1| / 2
        m[0] = self.intensity_const * sphere_area(d) * mean_abs_first_coord(d) / 2.0 * radial;
        m
    }

    /// Quadrature of `int |z|^2 e^{eps |z|} F(z) dz` over the truncated support.
    pub fn exp_moment(&self, d: usize, eps: f64) -> f64 {
        let c = self.intensity_const * sphere_area(d) * self.angular_fraction();
        let a = self.alpha;
        c * quad::integrate_geometric(
            |r| r * r * (eps * r).exp() * r.powf(-1.0 - a),
            self.truncation_low,
            self.truncation_high,
            64,
            16,
        )
    }
}

type VecField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
type MatField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Preset metadata used by the assumption checks: the constants the
/// assumptions are asserted against.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    /// Ellipticity constant `c >= 1` with eigenvalues of `a(x)` in `[1/c, c]`.
    pub ellipticity_c: f64,
    /// Bound on `|b(x)|`.
    pub drift_bound: f64,
    /// Pushback constant of the drift condition.
    pub c_tilde: f64,
    /// Radius beyond which the drift condition is asserted.
    pub rho_tilde: f64,
    /// Declared Lipschitz bound for b, a and gamma (checked by sampling).
    pub lipschitz_bound: f64,
}

/// A concrete jump-diffusion model: coefficient functions plus the Levy spec.
///
/// Coefficient closures write into caller-provided buffers (`d` values for the
/// drift, `d * d` row-major for the matrices) to keep the simulation loop
/// allocation-free.
#[derive(Clone)]
pub struct ModelSpec {
    pub dim: usize,
    pub label: String,
    pub drift: VecField,
    pub diffusion: MatField,
    pub jump_coeff: MatField,
    pub levy: LevySpec,
    pub meta: ModelMeta,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("dim", &self.dim)
            .field("label", &self.label)
            .field("levy", &self.levy)
            .field("meta", &self.meta)
            .finish()
    }
}

impl ModelSpec {
    pub fn drift_at(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.drift)(x, &mut out);
        out
    }

    pub fn diffusion_at(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        (self.diffusion)(x, &mut out);
        out
    }

    pub fn jump_coeff_at(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        (self.jump_coeff)(x, &mut out);
        out
    }
}

/// Parameters accepted by the preset families; serialized in configs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub preset: String,
    #[serde(default)]
    pub c_tilde: Option<f64>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub gamma0: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub intensity_const: Option<f64>,
    #[serde(default)]
    pub truncation_low: Option<f64>,
    #[serde(default)]
    pub truncation_high: Option<f64>,
    #[serde(default)]
    pub symmetric: Option<bool>,
}

impl ModelConfig {
    pub fn preset(name: &str) -> Self {
        Self {
            preset: name.to_string(),
            c_tilde: None,
            sigma: None,
            gamma0: None,
            alpha: None,
            intensity_const: None,
            truncation_low: None,
            truncation_high: None,
            symmetric: None,
        }
    }
}

fn default_levy(cfg: &ModelConfig) -> LevySpec {
    LevySpec {
        alpha: cfg.alpha.unwrap_or(0.5),
        intensity_const: cfg.intensity_const.unwrap_or(0.05),
        truncation_low: cfg.truncation_low.unwrap_or(1e-2),
        truncation_high: cfg.truncation_high.unwrap_or(2.0),
        symmetric: cfg.symmetric.unwrap_or(true),
    }
}

fn scaled_identity(d: usize, s: f64) -> MatField {
    Arc::new(move |_x: &[f64], out: &mut [f64]| {
        out.fill(0.0);
        for i in 0..d {
            out[i * d + i] = s;
        }
    })
}

/// Build a model from a preset family name plus parameters.
///
/// Families: `radial-pushback-<d>` (bounded inward drift, isotropic diffusion,
/// symmetric truncated alpha-stable-type jumps), `smooth-1d` (d = 1, smooth
/// bounded drift `-tanh`, closed-form stationary density when `gamma0 = 0`),
/// and the planted-violation families `drift-outward-<d>` and
/// `singular-gamma-<d>` used to exercise the assumption validators.
pub fn build_model(cfg: &ModelConfig) -> Result<ModelSpec, ModelError> {
    let levy = default_levy(cfg);
    levy.validate()?;
    let sigma = cfg.sigma.unwrap_or(1.0);
    if sigma <= 0.0 {
        return Err(ModelError::Ellipticity {
            eigenvalue: sigma,
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    let gamma0 = cfg.gamma0.unwrap_or(0.3);
    let c_tilde = cfg.c_tilde.unwrap_or(1.0);

    let (family, d) = match cfg.preset.rsplit_once('-') {
        Some((fam, dim_str)) if dim_str.chars().all(|c| c.is_ascii_digit()) => {
            let d: usize = dim_str
                .parse()
                .map_err(|_| ModelError::UnknownPreset(cfg.preset.clone()))?;
            (fam.to_string(), d)
        }
        _ => (cfg.preset.clone(), 1),
    };
    if d == 0 {
        return Err(ModelError::DimMismatch("preset dimension must be >= 1".into()));
    }

    let meta_iso = ModelMeta {
        ellipticity_c: sigma.max(1.0 / sigma),
        drift_bound: c_tilde,
        c_tilde,
        rho_tilde: 1.0,
        lipschitz_bound: 2.0 * c_tilde.max(1.0),
    };

    let spec = match family.as_str() {
        "radial-pushback" => ModelSpec {
            dim: d,
            label: cfg.preset.clone(),
            drift: Arc::new(move |x: &[f64], out: &mut [f64]| {
                let r = linalg::norm(x).max(1.0);
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = -c_tilde * xi / r;
                }
            }),
            diffusion: scaled_identity(d, sigma),
            jump_coeff: scaled_identity(d, gamma0),
            levy,
            meta: meta_iso,
        },
        "drift-outward" => ModelSpec {
            dim: d,
            label: cfg.preset.clone(),
            drift: Arc::new(move |x: &[f64], out: &mut [f64]| {
                let r = linalg::norm(x).max(1.0);
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = c_tilde * xi / r;
                }
            }),
            diffusion: scaled_identity(d, sigma),
            jump_coeff: scaled_identity(d, gamma0),
            levy,
            meta: meta_iso,
        },
        "singular-gamma" => ModelSpec {
            dim: d,
            label: cfg.preset.clone(),
            drift: Arc::new(move |x: &[f64], out: &mut [f64]| {
                let r = linalg::norm(x).max(1.0);
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = -c_tilde * xi / r;
                }
            }),
            diffusion: scaled_identity(d, sigma),
            // last row/column zeroed: determinant vanishes everywhere
            jump_coeff: Arc::new(move |_x: &[f64], out: &mut [f64]| {
                out.fill(0.0);
                for i in 0..d.saturating_sub(1) {
                    out[i * d + i] = gamma0;
                }
            }),
            levy,
            meta: meta_iso,
        },
        "smooth-1d" if d == 1 => {
            let gamma0 = cfg.gamma0.unwrap_or(0.5);
            ModelSpec {
                dim: 1,
                label: cfg.preset.clone(),
                drift: Arc::new(|x: &[f64], out: &mut [f64]| out[0] = -x[0].tanh()),
                diffusion: scaled_identity(1, sigma),
                jump_coeff: scaled_identity(1, gamma0),
                levy,
                meta: ModelMeta {
                    ellipticity_c: sigma.max(1.0 / sigma),
                    drift_bound: 1.0,
                    c_tilde: 1f64.tanh(),
                    rho_tilde: 1.0,
                    lipschitz_bound: 1.5,
                },
            }
        }
        _ => return Err(ModelError::UnknownPreset(cfg.preset.clone())),
    };

    // reject degenerate diffusion up front (A1 ellipticity at probe points)
    let probes = [vec![0.0; spec.dim], vec![1.5; spec.dim]];
    for p in &probes {
        let a = spec.diffusion_at(p);
        let c = spec.meta.ellipticity_c;
        for ev in linalg::sym_eigenvalues(&a, spec.dim) {
            if !(ev >= 1.0 / c - 1e-12 && ev <= c + 1e-12) {
                return Err(ModelError::Ellipticity {
                    eigenvalue: ev,
                    lo: 1.0 / c,
                    hi: c,
                });
            }
        }
    }
    Ok(spec)
}

/// Closed-form stationary density of the 1-d continuous (`gamma0 = 0`) model
/// with drift `b` and diffusion `sigma`: proportional to
/// `exp(2 int_0^x b / sigma^2)`. Normalized numerically on `[-lim, lim]`.
pub fn stationary_density_1d(
    b: impl Fn(f64) -> f64 + Copy,
    sigma: f64,
    lim: f64,
) -> impl Fn(f64) -> f64 + Copy {
    let log_unnorm = move |x: f64| {
        2.0 / (sigma * sigma) * quad::integrate(b, 0.0, x, 64)
    };
    let mass = quad::integrate(move |x| log_unnorm(x).exp(), -lim, lim, 400);
    move |x: f64| log_unnorm(x).exp() / mass
}

// ---------------------------------------------------------------------------
// assumption checks
// ---------------------------------------------------------------------------

/// Per-check tolerances for `check_assumptions`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tolerances {
    pub drift_bound: f64,
    pub ellipticity: f64,
    pub lipschitz: f64,
    pub pushback: f64,
    pub tail_bound: f64,
    /// Cap on the A3.5 exponential-moment quadrature value.
    pub exp_moment_cap: f64,
    pub gamma_det: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            drift_bound: 1e-8,
            ellipticity: 1e-8,
            lipschitz: 1e-8,
            pushback: 1e-8,
            tail_bound: 1e-8,
            exp_moment_cap: 1e8,
            gamma_det: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst violation magnitude observed (0 when the check passes cleanly).
    pub worst_violation: f64,
    pub worst_point: Option<Vec<f64>>,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub model_label: String,
    pub probe_count: usize,
    /// Truncation radii under which the Levy checks were run; the untruncated
    /// support assumption cannot hold exactly under simulation.
    pub truncation: (f64, f64),
    pub checks: Vec<CheckResult>,
}

impl AssumptionReport {
    pub fn passed_all(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Worst {
    violation: f64,
    point: Option<Vec<f64>>,
    finite: bool,
}

impl Worst {
    fn new() -> Self {
        Self {
            violation: 0.0,
            point: None,
            finite: true,
        }
    }

    fn observe(&mut self, violation: f64, point: &[f64]) {
        if !violation.is_finite() {
            self.finite = false;
            self.point = Some(point.to_vec());
            return;
        }
        let v = violation.max(0.0);
        if v > self.violation {
            self.violation = v;
            self.point = Some(point.to_vec());
        }
    }

    fn into_result(self, name: &str, tolerance: f64, detail: String) -> CheckResult {
        let passed = self.finite && self.violation <= tolerance;
        CheckResult {
            name: name.to_string(),
            passed,
            worst_violation: if self.finite { self.violation } else { f64::INFINITY },
            worst_point: self.point,
            tolerance,
            detail: if self.finite {
                detail
            } else {
                format!("non-finite value encountered; {detail}")
            },
        }
    }
}

/// Evaluate the A1-A3 checks at every probe point and report per-check
/// pass/fail with the worst violation. Failures are reported, never thrown.
pub fn check_assumptions(
    model: &ModelSpec,
    probe_points: &[Vec<f64>],
    tol: &Tolerances,
) -> AssumptionReport {
    assert!(!probe_points.is_empty(), "need at least one probe point");
    let d = model.dim;
    let mut checks = Vec::new();

    // A1: |b| bounded
    let mut w = Worst::new();
    for p in probe_points {
        let b = model.drift_at(p);
        w.observe(linalg::norm(&b) - model.meta.drift_bound, p);
    }
    checks.push(w.into_result(
        "a1_drift_bounded",
        tol.drift_bound,
        format!("|b(x)| <= {}", model.meta.drift_bound),
    ));

    // A1: ellipticity band and symmetry of a
    let mut w = Worst::new();
    let c = model.meta.ellipticity_c;
    for p in probe_points {
        let a = model.diffusion_at(p);
        let mut asym = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                asym = asym.max((a[i * d + j] - a[j * d + i]).abs());
            }
        }
        w.observe(asym, p);
        for ev in linalg::sym_eigenvalues(&a, d) {
            w.observe((1.0 / c - ev).max(ev - c), p);
        }
    }
    checks.push(w.into_result(
        "a1_ellipticity",
        tol.ellipticity,
        format!("eigenvalues of a(x) in [{}, {}], a symmetric", 1.0 / c, c),
    ));

    // A1: Lipschitz estimates by sampled finite differences between
    // consecutive probe points (estimated, not proven)
    let mut w = Worst::new();
    for pair in probe_points.windows(2) {
        let (p, q) = (&pair[0], &pair[1]);
        let dist = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if dist < 1e-12 {
            continue;
        }
        let db = model
            .drift_at(p)
            .iter()
            .zip(model.drift_at(q))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let da = model
            .diffusion_at(p)
            .iter()
            .zip(model.diffusion_at(q))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let dg = model
            .jump_coeff_at(p)
            .iter()
            .zip(model.jump_coeff_at(q))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let quotient = db.max(da).max(dg) / dist;
        w.observe(quotient - model.meta.lipschitz_bound, p);
    }
    checks.push(w.into_result(
        "a1_lipschitz_sampled",
        tol.lipschitz,
        format!(
            "sampled difference quotients of b, a, gamma <= {} (sampled, not proven)",
            model.meta.lipschitz_bound
        ),
    ));

    // A2: <x, b(x)> <= -C~ |x| for |x| >= rho~
    let mut w = Worst::new();
    let mut tested = 0usize;
    for p in probe_points {
        let r = linalg::norm(p);
        if r < model.meta.rho_tilde {
            continue;
        }
        tested += 1;
        let b = model.drift_at(p);
        w.observe(linalg::dot(p, &b) + model.meta.c_tilde * r, p);
    }
    checks.push(w.into_result(
        "a2_drift_pushback",
        tol.pushback,
        format!(
            "<x, b(x)> <= -{} |x| for |x| >= {} ({} probes in range)",
            model.meta.c_tilde, model.meta.rho_tilde, tested
        ),
    ));

    // A3.2: F(z) |z|^{d+alpha} <= c on a radial grid inside the support
    let mut w = Worst::new();
    let levy = &model.levy;
    for i in 0..64 {
        let r = levy.truncation_low
            + (levy.truncation_high - levy.truncation_low) * i as f64 / 63.0;
        let density = levy.intensity_const / r.powf(d as f64 + levy.alpha);
        let point = {
            let mut z = vec![0.0; d];
            z[0] = r;
            z
        };
        w.observe(density * r.powf(d as f64 + levy.alpha) - levy.intensity_const, &point);
    }
    checks.push(w.into_result(
        "a3_tail_bound",
        tol.tail_bound,
        format!("F(z) |z|^(d+alpha) <= {} on the truncated support", levy.intensity_const),
    ));

    // A3.4: symmetry required when alpha = 1
    checks.push(CheckResult {
        name: "a3_symmetry_alpha_one".into(),
        passed: levy.alpha != 1.0 || levy.symmetric,
        worst_violation: if levy.alpha == 1.0 && !levy.symmetric { 1.0 } else { 0.0 },
        worst_point: None,
        tolerance: 0.0,
        detail: "alpha = 1 requires a symmetric jump measure".into(),
    });

    // A3.5: exponential moment by quadrature
    let eps = 0.1;
    let value = levy.exp_moment(d, eps);
    checks.push(CheckResult {
        name: "a3_exp_moment".into(),
        passed: value.is_finite() && value <= tol.exp_moment_cap,
        worst_violation: (value - tol.exp_moment_cap).max(0.0),
        worst_point: None,
        tolerance: tol.exp_moment_cap,
        detail: format!("int |z|^2 e^({eps}|z|) F(z) dz = {value:.6e} by quadrature"),
    });

    // A3.3: gamma invertible at every probe
    let mut w = Worst::new();
    for p in probe_points {
        let g = model.jump_coeff_at(p);
        let det = linalg::det(&g, d).abs();
        w.observe(tol.gamma_det - det, p);
    }
    checks.push(CheckResult {
        tolerance: 0.0,
        ..w.into_result(
            "a3_gamma_invertible",
            0.0,
            format!("|det gamma(x)| >= {} at every probe", tol.gamma_det),
        )
    });

    AssumptionReport {
        model_label: model.label.clone(),
        probe_count: probe_points.len(),
        truncation: (levy.truncation_low, levy.truncation_high),
        checks,
    }
}

// ---------------------------------------------------------------------------
// generator
// ---------------------------------------------------------------------------

/// Boxed scalar field `R^d -> R`.
pub type FieldFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Boxed vector-valued field `R^d -> R^k` (gradients, flattened Hessians).
pub type VecFieldFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Scalar test function with optional analytic derivatives; missing
/// derivatives fall back to central finite differences.
pub struct ScalarField {
    pub value: FieldFn,
    pub grad: Option<VecFieldFn>,
    pub hess: Option<VecFieldFn>,
    /// Finite-difference step used when analytic derivatives are absent.
    pub fd_step: f64,
}

impl ScalarField {
    pub fn from_fn(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            value: Box::new(f),
            grad: None,
            hess: None,
            fd_step: 1e-5,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        if let Some(g) = &self.grad {
            return g(x);
        }
        let h = self.fd_step;
        let mut p = x.to_vec();
        (0..x.len())
            .map(|i| {
                p[i] = x[i] + h;
                let up = self.eval(&p);
                p[i] = x[i] - h;
                let down = self.eval(&p);
                p[i] = x[i];
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    pub fn hessian(&self, x: &[f64]) -> Vec<f64> {
        if let Some(hs) = &self.hess {
            return hs(x);
        }
        let d = x.len();
        let h = self.fd_step;
        let f0 = self.eval(x);
        let mut p = x.to_vec();
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            p[i] = x[i] + h;
            let up = self.eval(&p);
            p[i] = x[i] - h;
            let down = self.eval(&p);
            p[i] = x[i];
            out[i * d + i] = (up - 2.0 * f0 + down) / (h * h);
            for j in i + 1..d {
                p[i] = x[i] + h;
                p[j] = x[j] + h;
                let pp = self.eval(&p);
                p[j] = x[j] - h;
                let pm = self.eval(&p);
                p[i] = x[i] - h;
                let mm = self.eval(&p);
                p[j] = x[j] + h;
                let mp = self.eval(&p);
                p[i] = x[i];
                p[j] = x[j];
                let v = (pp - pm - mp + mm) / (4.0 * h * h);
                out[i * d + j] = v;
                out[j * d + i] = v;
            }
        }
        out
    }
}

/// Quadrature configuration for the jump part of the generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadConfig {
    pub radial_panels: usize,
    pub radial_order: usize,
    /// Angular nodes per sphere coordinate (ignored for d = 1).
    pub angular_nodes: usize,
    pub tol: f64,
    /// Number of resolution doublings allowed before giving up.
    pub max_refine: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            radial_panels: 16,
            radial_order: 12,
            angular_nodes: 24,
            tol: 1e-8,
            max_refine: 4,
        }
    }
}

/// Jump-part integrand integrated over the truncated Levy support at a given
/// resolution. `g` maps a jump vector `z` to its integrand value.
fn jump_integral(
    levy: &LevySpec,
    d: usize,
    g: &dyn Fn(&[f64]) -> f64,
    radial_panels: usize,
    radial_order: usize,
    angular_nodes: usize,
) -> Result<f64, ModelError> {
    let a = levy.alpha;
    let c = levy.intensity_const;
    let angular = |r: f64| -> f64 {
        match d {
            1 => {
                if levy.symmetric {
                    g(&[r]) + g(&[-r])
                } else {
                    g(&[r])
                }
            }
            2 => {
                // trapezoid in angle; spectrally accurate for smooth g
                let (lo, hi) = if levy.symmetric {
                    (0.0, 2.0 * PI)
                } else {
                    (-PI / 2.0, PI / 2.0)
                };
                let n = angular_nodes;
                let dtheta = (hi - lo) / n as f64;
                let mut acc = 0.0;
                for i in 0..n {
                    let th = lo + (i as f64 + 0.5) * dtheta;
                    acc += g(&[r * th.cos(), r * th.sin()]);
                }
                acc * dtheta
            }
            3 => {
                // Gauss in mu = u_1, midpoint trapezoid in phi
                let (mu_lo, mu_hi) = if levy.symmetric { (-1.0, 1.0) } else { (0.0, 1.0) };
                let (mu_nodes, mu_weights) = quad::gauss_legendre(angular_nodes);
                let n_phi = 2 * angular_nodes;
                let dphi = 2.0 * PI / n_phi as f64;
                let mid = 0.5 * (mu_lo + mu_hi);
                let half = 0.5 * (mu_hi - mu_lo);
                let mut acc = 0.0;
                for (t, w) in mu_nodes.iter().zip(&mu_weights) {
                    let mu = mid + half * t;
                    let s = (1.0 - mu * mu).max(0.0).sqrt();
                    let mut phi_acc = 0.0;
                    for i in 0..n_phi {
                        let phi = (i as f64 + 0.5) * dphi;
                        phi_acc += g(&[r * mu, r * s * phi.cos(), r * s * phi.sin()]);
                    }
                    acc += w * half * phi_acc * dphi;
                }
                acc
            }
            _ => f64::NAN,
        }
    };
    if d > 3 {
        return Err(ModelError::UnsupportedDim(d));
    }
    Ok(c * quad::integrate_geometric(
        |r| r.powf(-1.0 - a) * angular(r),
        levy.truncation_low,
        levy.truncation_high,
        radial_panels,
        radial_order,
    ))
}

/// Apply the generator `A = A_c + A_d` to `f` at `x`:
/// `A_c f = 1/2 sum (a a^T)_ij d2_ij f + sum b_i d_i f` and
/// `A_d f = int (f(x + gamma(x) z) - f(x) - gamma(x) z . grad f(x)) F(z) dz`.
pub fn generator_apply(
    model: &ModelSpec,
    f: &ScalarField,
    x: &[f64],
    quad_cfg: &QuadConfig,
) -> Result<f64, ModelError> {
    assert_eq!(x.len(), model.dim, "point dimension mismatch");
    let d = model.dim;
    let b = model.drift_at(x);
    let a = model.diffusion_at(x);
    let aat = linalg::mat_mul_transpose(&a, d);
    let grad = f.gradient(x);
    let hess = f.hessian(x);

    let mut continuous = 0.0;
    for i in 0..d {
        for j in 0..d {
            continuous += 0.5 * aat[i * d + j] * hess[i * d + j];
        }
        continuous += b[i] * grad[i];
    }

    let gamma = model.jump_coeff_at(x);
    let fx = f.eval(x);
    let integrand = |z: &[f64]| -> f64 {
        let mut gz = vec![0.0; d];
        linalg::mat_vec(&gamma, z, &mut gz);
        let shifted: Vec<f64> = x.iter().zip(&gz).map(|(xi, gi)| xi + gi).collect();
        f.eval(&shifted) - fx - linalg::dot(&gz, &grad)
    };

    // refine until two successive resolutions agree
    let mut panels = quad_cfg.radial_panels;
    let mut order = quad_cfg.radial_order;
    let mut ang = quad_cfg.angular_nodes;
    let mut prev = jump_integral(&model.levy, d, &integrand, panels, order, ang)?;
    let mut residual = f64::INFINITY;
    for _ in 0..quad_cfg.max_refine {
        panels *= 2;
        ang = (ang * 3) / 2;
        order = (order + 4).min(32);
        let next = jump_integral(&model.levy, d, &integrand, panels, order, ang)?;
        residual = (next - prev).abs();
        prev = next;
        if residual <= quad_cfg.tol * prev.abs().max(1.0) {
            return Ok(continuous + prev);
        }
    }
    Err(ModelError::QuadratureNotConverged { residual })
}

// ---------------------------------------------------------------------------
// Lyapunov probe
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovReport {
    pub eps: f64,
    /// (radius, worst ratio A f* / f* over the probed directions)
    pub entries: Vec<(f64, f64)>,
    /// Smallest probed radius beyond which every ratio stays below `-margin`.
    pub negative_beyond: Option<f64>,
    pub margin: f64,
}

/// Evaluate `A f*(x) / f*(x)` for `f*(x) = e^(eps |x|)` along rays through a
/// radial grid. The drift condition predicts a negative ratio for all large
/// radii; the report records where that regime starts.
pub fn lyapunov_probe(
    model: &ModelSpec,
    eps: f64,
    radii: &[f64],
    quad_cfg: &QuadConfig,
) -> Result<LyapunovReport, ModelError> {
    assert!(eps > 0.0);
    assert!(radii.iter().all(|&r| r > 0.0));
    // guard against eps beyond the exponential-moment regime of the jump tail
    let cap = 1e8;
    let moment = model.levy.exp_moment(model.dim, eps);
    if !moment.is_finite() || moment > cap {
        return Err(ModelError::ExpMomentTooLarge { value: moment, cap });
    }

    let d = model.dim;
    let fstar = ScalarField {
        value: Box::new(move |x: &[f64]| (eps * linalg::norm(x)).exp()),
        grad: Some(Box::new(move |x: &[f64]| {
            let r = linalg::norm(x);
            x.iter().map(|xi| eps * (eps * r).exp() * xi / r).collect()
        })),
        hess: Some(Box::new(move |x: &[f64]| {
            let d = x.len();
            let r = linalg::norm(x);
            let e = (eps * r).exp();
            let mut out = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    let mut v = eps * x[i] * x[j] / (r * r) * e * (eps - 1.0 / r);
                    if i == j {
                        v += eps * e / r;
                    }
                    out[i * d + j] = v;
                }
            }
            out
        })),
        fd_step: 1e-5,
    };

    // axis rays plus the main diagonal
    let mut directions: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let mut u = vec![0.0; d];
            u[i] = 1.0;
            u
        })
        .collect();
    directions.push(vec![1.0 / (d as f64).sqrt(); d]);

    let margin = 1e-3;
    let mut entries = Vec::with_capacity(radii.len());
    for &r in radii {
        let mut worst = f64::NEG_INFINITY;
        for u in &directions {
            let x: Vec<f64> = u.iter().map(|ui| ui * r).collect();
            let val = generator_apply(model, &fstar, &x, quad_cfg)?;
            worst = worst.max(val / fstar.eval(&x));
        }
        entries.push((r, worst));
    }

    let mut negative_beyond = None;
    for i in (0..entries.len()).rev() {
        if entries[i].1 <= -margin {
            negative_beyond = Some(entries[i].0);
        } else {
            break;
        }
    }
    Ok(LyapunovReport {
        eps,
        entries,
        negative_beyond,
        margin,
    })
}
