//! Gauss-Legendre quadrature helpers shared by the kernel, model and Levy code.

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
///
/// Computed by Newton iteration on the Legendre polynomial starting from the
/// Chebyshev angle approximation; accurate to machine precision for the
/// moderate `n` used here.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // evaluate P_n(x) and P_n'(x) by the three-term recurrence
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Integrate `f` over `[a, b]` with an `n`-point Gauss-Legendre rule.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let (nodes, weights) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(&weights) {
        acc += w * f(mid + half * x);
    }
    acc * half
}

/// Composite Gauss-Legendre over geometrically spaced panels of `[a, b]`.
///
/// Geometric spacing resolves integrands that vary fastest near `a`,
/// which is the shape of the truncated Levy radial densities.
pub fn integrate_geometric(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize, order: usize) -> f64 {
    assert!(a > 0.0 && b > a);
    let ratio = (b / a).powf(1.0 / panels as f64);
    let mut acc = 0.0;
    let mut lo = a;
    for _ in 0..panels {
        let hi = lo * ratio;
        acc += integrate(&f, lo, hi, order);
        lo = hi;
    }
    acc
}

/// Integrate with panel doubling until two successive refinements agree to
/// `tol` (relative, floored by `tol` absolute). Returns the refined value and
/// the last residual estimate; `Err` carries the residual when the budget is
/// exhausted without convergence.
pub fn integrate_adaptive(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    tol: f64,
    max_refine: usize,
) -> Result<f64, f64> {
    let mut panels = 4;
    let mut prev = integrate_geometric(&f, a, b, panels, 16);
    for _ in 0..max_refine {
        panels *= 2;
        let next = integrate_geometric(&f, a, b, panels, 16);
        let resid = (next - prev).abs();
        if resid <= tol * next.abs().max(1.0) {
            return Ok(next);
        }
        prev = next;
    }
    let next = integrate_geometric(&f, a, b, panels * 2, 16);
    let resid = (next - prev).abs();
    if resid <= tol * next.abs().max(1.0) {
        Ok(next)
    } else {
        Err(resid)
    }
}
