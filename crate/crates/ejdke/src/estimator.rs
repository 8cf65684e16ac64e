//! Kernel density estimation over a trajectory: the plain anisotropic
//! estimator, the convolved pair estimators used by the bandwidth selection,
//! and L2 norms over the compact evaluation box.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::kernel::{convolve_kernels, Kernel};
use crate::simulate::Trajectory;

#[derive(Debug, Error)]
pub enum EstimError {
    #[error("bandwidth out of range: {0} (need (0, 1])")]
    Bandwidth(f64),
    #[error("dimension mismatch: trajectory dim {traj} vs grid dim {grid}")]
    DimMismatch { traj: usize, grid: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Axis-aligned evaluation box with a midpoint-rule node grid.
#[derive(Debug, Clone, Serialize)]
pub struct EvalGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
}

impl EvalGrid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert_eq!(lo.len(), counts.len());
        assert!(lo.iter().zip(&hi).all(|(a, b)| a < b), "need lo < hi per axis");
        assert!(counts.iter().all(|&c| c > 0));
        Self { lo, hi, counts }
    }

    /// Cube `[-half, half]^d` with `n` nodes per axis.
    pub fn cube(d: usize, half: f64, n: usize) -> Self {
        Self::new(vec![-half; d], vec![half; d], vec![n; d])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.counts[axis] as f64
    }

    /// Midpoint-rule weight shared by every node.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|j| self.spacing(j)).product()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn axis_node(&self, axis: usize, i: usize) -> f64 {
        self.lo[axis] + (i as f64 + 0.5) * self.spacing(axis)
    }

    pub fn axis_nodes(&self, axis: usize) -> Vec<f64> {
        (0..self.counts[axis]).map(|i| self.axis_node(axis, i)).collect()
    }

    /// Node coordinates for a flat row-major index (last axis fastest).
    pub fn node(&self, mut flat: usize) -> Vec<f64> {
        let d = self.dim();
        let mut idx = vec![0usize; d];
        for j in (0..d).rev() {
            idx[j] = flat % self.counts[j];
            flat /= self.counts[j];
        }
        (0..d).map(|j| self.axis_node(j, idx[j])).collect()
    }
}

/// Estimator provenance echoed into serialized outputs.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub model_label: String,
    pub total_time: f64,
    pub dt: f64,
    pub seed: u64,
}

impl Provenance {
    fn of(traj: &Trajectory) -> Self {
        Self {
            model_label: traj.model_label.clone(),
            total_time: traj.total_time(),
            dt: traj.dt,
            seed: traj.seed,
        }
    }
}

/// Density estimate values over an evaluation grid.
#[derive(Debug, Clone, Serialize)]
pub struct DensityEstimate {
    pub grid: EvalGrid,
    pub values: Vec<f64>,
    pub bandwidth: Vec<f64>,
    /// Second bandwidth of the convolved variant, when applicable.
    pub bandwidth_eta: Option<Vec<f64>>,
    pub provenance: Provenance,
}

impl DensityEstimate {
    /// Midpoint-rule integral of the estimate over the grid box.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// CSV of `(x1..xd, value)` rows in node order.
    pub fn write_csv(&self, path: &Path) -> Result<(), EstimError> {
        let mut w = BufWriter::new(File::create(path)?);
        for j in 1..=self.grid.dim() {
            write!(w, "x{j},")?;
        }
        writeln!(w, "value")?;
        for (flat, v) in self.values.iter().enumerate() {
            for c in self.grid.node(flat) {
                write!(w, "{c},")?;
            }
            writeln!(w, "{v}")?;
        }
        w.flush()?;
        Ok(())
    }
}

fn validate(traj: &Trajectory, grid: &EvalGrid, bandwidths: &[&[f64]]) -> Result<(), EstimError> {
    if traj.dim != grid.dim() {
        return Err(EstimError::DimMismatch {
            traj: traj.dim,
            grid: grid.dim(),
        });
    }
    for h in bandwidths {
        if h.len() != traj.dim {
            return Err(EstimError::DimMismatch {
                traj: traj.dim,
                grid: h.len(),
            });
        }
        for &v in *h {
            if !(v > 0.0 && v <= 1.0) {
                return Err(EstimError::Bandwidth(v));
            }
        }
    }
    Ok(())
}

/// Shared accumulation core: left Riemann sum over the trajectory grid of a
/// separable factor product, restricted per axis to the nodes inside the
/// factor's support. Output is identical to the naive double loop because
/// skipped nodes contribute exact zeros and per-node sums run in time order.
fn accumulate_separable(
    traj: &Trajectory,
    grid: &EvalGrid,
    supports: &[f64],
    factor: impl Fn(usize, f64, f64) -> f64,
) -> Vec<f64> {
    let d = grid.dim();
    let weight = traj.dt / traj.total_time();
    let mut values = vec![0.0; grid.n_nodes()];

    // per-axis scratch: node index ranges and factor values
    let mut ranges = vec![(0usize, 0usize); d];
    let mut factors: Vec<Vec<f64>> = (0..d).map(|j| vec![0.0; grid.counts[j]]).collect();
    // flat-index strides, last axis fastest
    let mut strides = vec![1usize; d];
    for j in (0..d.saturating_sub(1)).rev() {
        strides[j] = strides[j + 1] * grid.counts[j + 1];
    }

    for sample in traj.riemann_rows() {
        let mut empty = false;
        for j in 0..d {
            let delta = grid.spacing(j);
            let s = supports[j];
            let x = sample[j];
            // nodes with |node - x| <= s, widened by one node for safety
            let lo_f = (x - s - grid.lo[j]) / delta - 0.5;
            let hi_f = (x + s - grid.lo[j]) / delta - 0.5;
            let i_lo = (lo_f.ceil() as i64 - 1).max(0) as usize;
            let i_hi = ((hi_f.floor() as i64 + 2).max(0) as usize).min(grid.counts[j]);
            if i_lo >= i_hi {
                empty = true;
                break;
            }
            for (i, slot) in factors[j].iter_mut().enumerate().take(i_hi).skip(i_lo) {
                *slot = factor(j, grid.axis_node(j, i), x);
            }
            ranges[j] = (i_lo, i_hi);
        }
        if empty {
            continue;
        }
        // odometer over the in-support node box
        let mut idx: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        'outer: loop {
            let mut prod = weight;
            let mut flat = 0usize;
            for j in 0..d {
                prod *= factors[j][idx[j]];
                flat += idx[j] * strides[j];
            }
            values[flat] += prod;
            // increment, last axis fastest
            for j in (0..d).rev() {
                idx[j] += 1;
                if idx[j] < ranges[j].1 {
                    continue 'outer;
                }
                idx[j] = ranges[j].0;
            }
            break;
        }
    }
    values
}

/// Anisotropic kernel density estimate of the invariant density:
/// time integral by left Riemann sum on the simulation grid, evaluated at
/// every grid node. Fast path; equals `estimate_density_naive` within 1e-12.
pub fn estimate_density(
    traj: &Trajectory,
    kernel: &Kernel,
    h: &[f64],
    grid: &EvalGrid,
) -> Result<DensityEstimate, EstimError> {
    validate(traj, grid, &[h])?;
    let values = accumulate_separable(traj, grid, h, |j, node, x| {
        kernel.eval_scaled(node - x, h[j])
    });
    Ok(DensityEstimate {
        grid: grid.clone(),
        values,
        bandwidth: h.to_vec(),
        bandwidth_eta: None,
        provenance: Provenance::of(traj),
    })
}

/// Reference implementation: the naive O(n_steps x n_nodes) double loop.
pub fn estimate_density_naive(
    traj: &Trajectory,
    kernel: &Kernel,
    h: &[f64],
    grid: &EvalGrid,
) -> Result<DensityEstimate, EstimError> {
    validate(traj, grid, &[h])?;
    let weight = traj.dt / traj.total_time();
    let mut values = vec![0.0; grid.n_nodes()];
    for (flat, v) in values.iter_mut().enumerate() {
        let node = grid.node(flat);
        for sample in traj.riemann_rows() {
            let mut prod = weight;
            for j in 0..grid.dim() {
                prod *= kernel.eval_scaled(node[j] - sample[j], h[j]);
            }
            *v += prod;
        }
    }
    Ok(DensityEstimate {
        grid: grid.clone(),
        values,
        bandwidth: h.to_vec(),
        bandwidth_eta: None,
        provenance: Provenance::of(traj),
    })
}

/// Convolved pair estimator `mu_hat_{h,eta}` built on `K_h * K_eta`.
/// Symmetric in `(h, eta)` exactly, by the canonical factor ordering inside
/// the convolution.
pub fn estimate_density_convolved(
    traj: &Trajectory,
    kernel: &Kernel,
    h: &[f64],
    eta: &[f64],
    grid: &EvalGrid,
) -> Result<DensityEstimate, EstimError> {
    validate(traj, grid, &[h, eta])?;
    let conv = convolve_kernels(kernel, h, eta);
    let supports: Vec<f64> = (0..grid.dim()).map(|j| conv.support(j)).collect();
    let values = accumulate_separable(traj, grid, &supports, |j, node, x| {
        conv.eval_factor(j, x - node)
    });
    Ok(DensityEstimate {
        grid: grid.clone(),
        values,
        bandwidth: h.to_vec(),
        bandwidth_eta: Some(eta.to_vec()),
        provenance: Provenance::of(traj),
    })
}

/// Naive double-loop reference for the convolved estimator.
pub fn estimate_density_convolved_naive(
    traj: &Trajectory,
    kernel: &Kernel,
    h: &[f64],
    eta: &[f64],
    grid: &EvalGrid,
) -> Result<DensityEstimate, EstimError> {
    validate(traj, grid, &[h, eta])?;
    let conv = convolve_kernels(kernel, h, eta);
    let weight = traj.dt / traj.total_time();
    let mut values = vec![0.0; grid.n_nodes()];
    for (flat, v) in values.iter_mut().enumerate() {
        let node = grid.node(flat);
        for sample in traj.riemann_rows() {
            let diff: Vec<f64> = sample.iter().zip(&node).map(|(s, n)| s - n).collect();
            *v += weight * conv.eval(&diff);
        }
    }
    Ok(DensityEstimate {
        grid: grid.clone(),
        values,
        bandwidth: h.to_vec(),
        bandwidth_eta: Some(eta.to_vec()),
        provenance: Provenance::of(traj),
    })
}

/// `sqrt(sum w (f - g)^2)` over the grid: the discretized L2(A) distance.
pub fn l2_distance_on_a(f_vals: &[f64], g_vals: &[f64], grid: &EvalGrid) -> f64 {
    assert_eq!(f_vals.len(), g_vals.len(), "value array shape mismatch");
    assert_eq!(f_vals.len(), grid.n_nodes(), "grid shape mismatch");
    let w = grid.cell_volume();
    f_vals
        .iter()
        .zip(g_vals)
        .map(|(a, b)| w * (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{build_kernel, convolve_kernels};
    use crate::model::{build_model, ModelConfig};
    use crate::rngstream;
    use crate::simulate::simulate_path;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn constant_trajectory(d: usize, x0: f64, steps: usize) -> Trajectory {
        Trajectory {
            dim: d,
            dt: 0.01,
            states: vec![x0; (steps + 1) * d],
            model_label: "constant".into(),
            seed: 0,
            burn_in: 0.0,
        }
    }

    #[test]
    fn constant_trajectory_reproduces_scaled_kernel_value() {
        let kernel = build_kernel(3);
        let x0 = 0.35;
        let traj = constant_trajectory(1, x0, 100);
        // grid with a node exactly at x0
        let grid = EvalGrid::new(vec![x0 - 0.05], vec![x0 + 0.05], vec![1]);
        for h in [0.2, 0.5, 1.0] {
            let est = estimate_density(&traj, &kernel, &[h], &grid).unwrap();
            assert_abs_diff_eq!(est.values[0], kernel.eval(0.0) / h, epsilon = 1e-12);
        }
    }

    #[test]
    fn convolved_constant_trajectory_matches_factor_product() {
        let kernel = build_kernel(3);
        let traj = constant_trajectory(2, 0.1, 50);
        let grid = EvalGrid::new(vec![0.05, 0.05], vec![0.15, 0.15], vec![1, 1]);
        let (h, eta) = ([1.0, 1.0], [1.0, 1.0]);
        let est = estimate_density_convolved(&traj, &kernel, &h, &eta, &grid).unwrap();
        let conv = convolve_kernels(&kernel, &h, &eta);
        assert_abs_diff_eq!(est.values[0], conv.eval(&[0.0, 0.0]), epsilon = 1e-12);
    }

    #[test]
    fn fast_path_equals_naive_double_loop() {
        let model = build_model(&ModelConfig::preset("radial-pushback-2")).unwrap();
        let traj = simulate_path(&model, 5.0, 0.01, 1.0, 17).unwrap();
        let kernel = build_kernel(5);
        let grid = EvalGrid::cube(2, 1.2, 9);
        for h in [[0.3, 0.7], [1.0, 0.15]] {
            let fast = estimate_density(&traj, &kernel, &h, &grid).unwrap();
            let naive = estimate_density_naive(&traj, &kernel, &h, &grid).unwrap();
            let max_diff = fast
                .values
                .iter()
                .zip(&naive.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max_diff < 1e-12, "fast vs naive diff {max_diff}");
        }
    }

    #[test]
    fn convolved_fast_path_equals_naive_double_loop() {
        let model = build_model(&ModelConfig::preset("radial-pushback-2")).unwrap();
        let traj = simulate_path(&model, 5.0, 0.01, 1.0, 18).unwrap();
        let kernel = build_kernel(3);
        let grid = EvalGrid::cube(2, 1.0, 7);
        let (h, eta) = ([0.4, 0.8], [0.6, 0.25]);
        let fast = estimate_density_convolved(&traj, &kernel, &h, &eta, &grid).unwrap();
        let naive = estimate_density_convolved_naive(&traj, &kernel, &h, &eta, &grid).unwrap();
        for (a, b) in fast.values.iter().zip(&naive.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn convolved_estimator_is_exactly_symmetric() {
        let model = build_model(&ModelConfig::preset("radial-pushback-3")).unwrap();
        let traj = simulate_path(&model, 10.0, 0.02, 2.0, 19).unwrap();
        let kernel = build_kernel(5);
        let grid = EvalGrid::cube(3, 1.0, 5);
        let (h, eta) = ([0.5, 1.0, 0.25], [1.0, 0.3, 0.5]);
        let ab = estimate_density_convolved(&traj, &kernel, &h, &eta, &grid).unwrap();
        let ba = estimate_density_convolved(&traj, &kernel, &eta, &h, &grid).unwrap();
        assert_eq!(ab.values, ba.values);
    }

    #[test]
    fn small_eta_convolution_approaches_plain_estimate() {
        let model = build_model(&ModelConfig::preset("radial-pushback-1")).unwrap();
        let traj = simulate_path(&model, 20.0, 0.01, 2.0, 20).unwrap();
        let kernel = build_kernel(3);
        let grid = EvalGrid::cube(1, 1.0, 21);
        let h = [0.5];
        let plain = estimate_density(&traj, &kernel, &h, &grid).unwrap();
        let sup_dist = |eta: f64| -> f64 {
            let conv = estimate_density_convolved(&traj, &kernel, &h, &[eta], &grid).unwrap();
            conv.values
                .iter()
                .zip(&plain.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max)
        };
        let (d1, d2, d3) = (sup_dist(0.2), sup_dist(0.1), sup_dist(0.05));
        assert!(d2 < d1 && d3 < d2, "mollifier limit: {d1} -> {d2} -> {d3}");
    }

    #[test]
    fn estimate_mass_is_one_on_covering_grid() {
        let model = build_model(&ModelConfig::preset("smooth-1d")).unwrap();
        let traj = simulate_path(&model, 50.0, 0.01, 10.0, 21).unwrap();
        let kernel = build_kernel(3);
        let h = [0.4];
        let span = traj
            .riemann_rows()
            .map(|r| r[0].abs())
            .fold(0.0f64, f64::max)
            + h[0]
            + 0.5;
        let grid = EvalGrid::cube(1, span, 400);
        let est = estimate_density(&traj, &kernel, &h, &grid).unwrap();
        assert_abs_diff_eq!(est.mass(), 1.0, epsilon = 1e-3);
    }

    #[test]
    fn concatenated_trajectories_give_weighted_average() {
        let model = build_model(&ModelConfig::preset("radial-pushback-1")).unwrap();
        let a = simulate_path(&model, 4.0, 0.01, 1.0, 22).unwrap();
        let b = simulate_path(&model, 8.0, 0.01, 1.0, 23).unwrap();
        // concatenation: riemann rows of a, then all rows of b
        let mut states = a.states[..a.n_steps()].to_vec();
        states.extend_from_slice(&b.states);
        let cat = Trajectory {
            dim: 1,
            dt: 0.01,
            states,
            model_label: "concat".into(),
            seed: 0,
            burn_in: 0.0,
        };
        let kernel = build_kernel(3);
        let grid = EvalGrid::cube(1, 1.5, 11);
        let h = [0.3];
        let ea = estimate_density(&a, &kernel, &h, &grid).unwrap();
        let eb = estimate_density(&b, &kernel, &h, &grid).unwrap();
        let ec = estimate_density(&cat, &kernel, &h, &grid).unwrap();
        let (ta, tb) = (a.total_time(), b.total_time());
        for ((va, vb), vc) in ea.values.iter().zip(&eb.values).zip(&ec.values) {
            let expected = (ta * va + tb * vb) / (ta + tb);
            assert_abs_diff_eq!(*vc, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn l2_distance_basics_and_oracle() {
        let grid = EvalGrid::new(vec![-1.0, 0.0], vec![1.0, 3.0], vec![4, 6]);
        let n = grid.n_nodes();
        let zeros = vec![0.0; n];
        let ones = vec![1.0; n];
        assert_eq!(l2_distance_on_a(&ones, &ones, &grid), 0.0);
        // f - g = 1 on A of volume 6
        assert_abs_diff_eq!(l2_distance_on_a(&ones, &zeros, &grid), 6.0f64.sqrt(), epsilon = 1e-12);
        let mut rng = rngstream::derive(31, &[]);
        let f: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let direct = f
            .iter()
            .zip(&g)
            .map(|(a, b)| grid.cell_volume() * (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert_abs_diff_eq!(l2_distance_on_a(&f, &g, &grid), direct, epsilon = 1e-12);
    }

    #[test]
    fn dimension_and_bandwidth_validation() {
        let traj = constant_trajectory(2, 0.0, 10);
        let kernel = build_kernel(1);
        let grid1 = EvalGrid::cube(1, 1.0, 4);
        assert!(matches!(
            estimate_density(&traj, &kernel, &[0.5], &grid1),
            Err(EstimError::DimMismatch { .. })
        ));
        let grid2 = EvalGrid::cube(2, 1.0, 4);
        assert!(matches!(
            estimate_density(&traj, &kernel, &[0.5, 1.5], &grid2),
            Err(EstimError::Bandwidth(_))
        ));
    }

    #[test]
    fn grid_node_roundtrip_and_weights() {
        let grid = EvalGrid::new(vec![-1.0, 0.0, 2.0], vec![1.0, 1.0, 4.0], vec![3, 2, 5]);
        assert_eq!(grid.n_nodes(), 30);
        assert_abs_diff_eq!(grid.cell_volume() * grid.n_nodes() as f64, grid.volume(), epsilon = 1e-12);
        // node(flat) must agree with the per-axis decomposition, last axis fastest
        let mut flat = 0;
        for i in 0..3 {
            for j in 0..2 {
                for k in 0..5 {
                    let node = grid.node(flat);
                    assert_eq!(node[0], grid.axis_node(0, i));
                    assert_eq!(node[1], grid.axis_node(1, j));
                    assert_eq!(node[2], grid.axis_node(2, k));
                    flat += 1;
                }
            }
        }
    }
}
