//! Compactly supported univariate kernels with vanishing moments, plus the
//! product and convolved multivariate forms consumed by the density estimator
//! and the bandwidth selection procedure.
//!
//! The univariate kernel of order `M` is the projection kernel built from the
//! first `M + 1` orthonormal Legendre polynomials on `[-1, 1]`:
//! `K(x) = sum_m phi_m(0) phi_m(x)`. This reproduces polynomials of degree at
//! most `M` at the origin, so `int K = 1` and `int x^l K = 0` for
//! `1 <= l <= M`, with all coefficients rational and convolutions exactly
//! computable by Gauss quadrature.

use serde::Serialize;

use crate::quad;

/// Univariate kernel: polynomial on `[-1, 1]`, zero outside.
#[derive(Debug, Clone, Serialize)]
pub struct Kernel {
    /// Vanishing-moment order `M`.
    pub order: usize,
    /// Monomial coefficients on `[-1, 1]`, `coeffs[j]` multiplying `x^j`.
    pub coeffs: Vec<f64>,
    /// Sup norm of the kernel.
    pub sup_norm: f64,
}

/// Monomial coefficients of the Legendre polynomial `P_n` via the
/// three-term recurrence.
fn legendre_coeffs(n: usize) -> Vec<f64> {
    if n == 0 {
        return vec![1.0];
    }
    if n == 1 {
        return vec![0.0, 1.0];
    }
    let mut pm2 = vec![1.0];
    let mut pm1 = vec![0.0, 1.0];
    for k in 2..=n {
        let kf = k as f64;
        let mut p = vec![0.0; k + 1];
        for (j, &c) in pm1.iter().enumerate() {
            p[j + 1] += (2.0 * kf - 1.0) / kf * c;
        }
        for (j, &c) in pm2.iter().enumerate() {
            p[j] -= (kf - 1.0) / kf * c;
        }
        pm2 = pm1;
        pm1 = p;
    }
    pm1
}

/// Build the minimal projection kernel with vanishing moments up to order `M`.
pub fn build_kernel(order: usize) -> Kernel {
    let mut coeffs = vec![0.0; order + 1];
    for m in 0..=order {
        let pm = legendre_coeffs(m);
        // P_m(0) is the constant coefficient; zero for odd m.
        let at_zero = pm[0];
        if at_zero == 0.0 {
            continue;
        }
        let scale = (2.0 * m as f64 + 1.0) / 2.0 * at_zero;
        for (j, &c) in pm.iter().enumerate() {
            coeffs[j] += scale * c;
        }
    }
    while coeffs.len() > 1 && coeffs.last() == Some(&0.0) {
        coeffs.pop();
    }
    let mut sup = 0.0f64;
    let scan = 20_000;
    for i in 0..=scan {
        let x = -1.0 + 2.0 * i as f64 / scan as f64;
        sup = sup.max(eval_poly(&coeffs, x).abs());
    }
    Kernel {
        order,
        coeffs,
        sup_norm: sup,
    }
}

fn eval_poly(coeffs: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for &c in coeffs.iter().rev() {
        acc = acc * x + c;
    }
    acc
}

impl Kernel {
    /// Kernel value; exactly zero outside `[-1, 1]`.
    pub fn eval(&self, x: f64) -> f64 {
        if x.abs() > 1.0 {
            0.0
        } else {
            eval_poly(&self.coeffs, x)
        }
    }

    /// Scaled kernel `K_h(x) = K(x / h) / h`.
    pub fn eval_scaled(&self, x: f64, h: f64) -> f64 {
        self.eval(x / h) / h
    }

    /// Polynomial degree of the kernel.
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// `int |K|`, by composite quadrature (panels isolate the sign changes
    /// well enough for the tolerances used here).
    pub fn l1_norm(&self) -> f64 {
        let panels = 2048;
        let mut acc = 0.0;
        for i in 0..panels {
            let a = -1.0 + 2.0 * i as f64 / panels as f64;
            let b = -1.0 + 2.0 * (i + 1) as f64 / panels as f64;
            acc += quad::integrate(|x| self.eval(x).abs(), a, b, 8);
        }
        acc
    }

    /// `int x^l K(x) dx`, exactly from the monomial coefficients.
    pub fn moment(&self, l: usize) -> f64 {
        let mut acc = 0.0;
        for (j, &c) in self.coeffs.iter().enumerate() {
            if (l + j).is_multiple_of(2) {
                acc += 2.0 * c / (l + j + 1) as f64;
            }
        }
        acc
    }
}

/// Separable multivariate kernel `K_h(y) = prod_m K(y_m / h_m) / h_m`.
#[derive(Debug, Clone)]
pub struct ProductKernel {
    pub base: Kernel,
    pub bandwidths: Vec<f64>,
}

impl ProductKernel {
    pub fn new(base: Kernel, bandwidths: Vec<f64>) -> Self {
        assert!(
            bandwidths.iter().all(|&h| h > 0.0 && h <= 1.0),
            "bandwidths must lie in (0, 1]"
        );
        Self { base, bandwidths }
    }

    pub fn dim(&self) -> usize {
        self.bandwidths.len()
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        assert_eq!(y.len(), self.bandwidths.len());
        let mut acc = 1.0;
        for (v, &h) in y.iter().zip(&self.bandwidths) {
            acc *= self.base.eval_scaled(*v, h);
            if acc == 0.0 {
                return 0.0;
            }
        }
        acc
    }

    /// `|K_h|_1 = (int |K|)^d`, independent of the bandwidths.
    pub fn l1_norm(&self) -> f64 {
        self.base.l1_norm().powi(self.dim() as i32)
    }
}

/// One factor `K_{h} * K_{eta}` of the convolved product kernel.
///
/// The pair is stored in canonical order (smaller bandwidth first), which
/// makes the commutativity `K_h * K_eta = K_eta * K_h` exact in floating
/// point, not just up to quadrature error.
#[derive(Debug, Clone)]
struct ConvFactor {
    h: f64,
    eta: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl ConvFactor {
    fn new(kernel: &Kernel, h: f64, eta: f64) -> Self {
        let (h, eta) = if h <= eta { (h, eta) } else { (eta, h) };
        // the integrand restricted to the support overlap is a polynomial of
        // degree 2 deg(K); deg(K) + 1 Gauss points integrate it exactly
        let (nodes, weights) = quad::gauss_legendre(kernel.degree() + 1);
        Self { h, eta, nodes, weights }
    }

    fn support(&self) -> f64 {
        self.h + self.eta
    }

    fn eval(&self, kernel: &Kernel, x: f64) -> f64 {
        // (K_h * K_eta)(x) = int K_h(u - x) K_eta(u) du over the overlap of
        // [x - h, x + h] and [-eta, eta]
        let lo = (x - self.h).max(-self.eta);
        let hi = (x + self.h).min(self.eta);
        if lo >= hi {
            return 0.0;
        }
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        let mut acc = 0.0;
        for (t, w) in self.nodes.iter().zip(&self.weights) {
            let u = mid + half * t;
            acc += w * kernel.eval_scaled(u - x, self.h) * kernel.eval_scaled(u, self.eta);
        }
        acc * half
    }
}

/// Separable convolution `(K_h * K_eta)(x) = prod_j (K_{h_j} * K_{eta_j})(x_j)`.
#[derive(Debug, Clone)]
pub struct ConvolvedProductKernel {
    base: Kernel,
    factors: Vec<ConvFactor>,
}

/// Build the evaluable convolution of two product kernels sharing `base`.
pub fn convolve_kernels(base: &Kernel, h: &[f64], eta: &[f64]) -> ConvolvedProductKernel {
    assert_eq!(h.len(), eta.len(), "bandwidth dimension mismatch");
    assert!(
        h.iter().chain(eta).all(|&v| v > 0.0 && v <= 1.0),
        "bandwidths must lie in (0, 1]"
    );
    let factors = h
        .iter()
        .zip(eta)
        .map(|(&hj, &ej)| ConvFactor::new(base, hj, ej))
        .collect();
    ConvolvedProductKernel {
        base: base.clone(),
        factors,
    }
}

impl ConvolvedProductKernel {
    pub fn dim(&self) -> usize {
        self.factors.len()
    }

    /// Support half-width of factor `j`, `h_j + eta_j`.
    pub fn support(&self, j: usize) -> f64 {
        self.factors[j].support()
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        assert_eq!(y.len(), self.factors.len());
        let mut acc = 1.0;
        for (v, f) in y.iter().zip(&self.factors) {
            acc *= f.eval(&self.base, *v);
            if acc == 0.0 {
                return 0.0;
            }
        }
        acc
    }

    /// Evaluate the univariate factor `j` at `x`.
    pub fn eval_factor(&self, j: usize, x: f64) -> f64 {
        self.factors[j].eval(&self.base, x)
    }
}
