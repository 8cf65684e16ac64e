//! Reference densities the Monte Carlo experiments measure error against:
//! a closed form where one exists (1-d continuous models) and a long-run
//! occupation-time histogram otherwise.

use std::sync::Arc;

use crate::estimator::EvalGrid;
use crate::simulate::Trajectory;

/// Occupation-time histogram density over an axis-aligned box.
///
/// Cell values are (time fraction in cell) / (cell volume), so they estimate
/// the invariant density restricted to the box; points outside evaluate to 0.
#[derive(Debug, Clone)]
pub struct HistogramDensity {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
    pub values: Vec<f64>,
    /// Horizon of the trajectory the histogram was built from.
    pub oracle_time: f64,
}

impl HistogramDensity {
    pub fn from_trajectory(traj: &Trajectory, lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>) -> Self {
        let mut builder = HistogramBuilder::new(lo, hi, counts);
        for row in traj.riemann_rows() {
            builder.add(row, traj.dt);
        }
        builder.finish(traj.total_time())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let d = self.lo.len();
        let mut flat = 0usize;
        let mut stride = 1usize;
        // build flat index last axis fastest
        let mut idx = vec![0usize; d];
        for j in 0..d {
            let w = (self.hi[j] - self.lo[j]) / self.counts[j] as f64;
            let rel = (x[j] - self.lo[j]) / w;
            if rel < 0.0 || rel >= self.counts[j] as f64 {
                return 0.0;
            }
            idx[j] = (rel as usize).min(self.counts[j] - 1);
        }
        for j in (0..d).rev() {
            flat += idx[j] * stride;
            stride *= self.counts[j];
        }
        self.values[flat]
    }
}

/// Streaming occupation-time accumulator behind [`HistogramDensity`]: cells
/// are filled one state at a time so arbitrarily long trajectories never need
/// to be materialized.
#[derive(Debug, Clone)]
pub struct HistogramBuilder {
    lo: Vec<f64>,
    hi: Vec<f64>,
    counts: Vec<usize>,
    strides: Vec<usize>,
    widths: Vec<f64>,
    occupancy: Vec<f64>,
}

impl HistogramBuilder {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>) -> Self {
        let d = lo.len();
        assert_eq!(hi.len(), d);
        assert_eq!(counts.len(), d);
        let n_cells: usize = counts.iter().product();
        let mut strides = vec![1usize; d];
        for j in (0..d.saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * counts[j + 1];
        }
        let widths: Vec<f64> = (0..d)
            .map(|j| (hi[j] - lo[j]) / counts[j] as f64)
            .collect();
        Self {
            lo,
            hi,
            counts,
            strides,
            widths,
            occupancy: vec![0.0; n_cells],
        }
    }

    /// Credit `dt` units of occupation time to the cell containing `x`;
    /// states outside the box are ignored.
    pub fn add(&mut self, x: &[f64], dt: f64) {
        let mut flat = 0usize;
        for (j, &xj) in x.iter().enumerate() {
            let rel = (xj - self.lo[j]) / self.widths[j];
            if rel < 0.0 || rel >= self.counts[j] as f64 {
                return;
            }
            flat += (rel as usize).min(self.counts[j] - 1) * self.strides[j];
        }
        self.occupancy[flat] += dt;
    }

    pub fn finish(self, total_time: f64) -> HistogramDensity {
        let cell_volume: f64 = self.widths.iter().product();
        let values = self
            .occupancy
            .iter()
            .map(|&t| t / (total_time * cell_volume))
            .collect();
        HistogramDensity {
            lo: self.lo,
            hi: self.hi,
            counts: self.counts,
            values,
            oracle_time: total_time,
        }
    }
}

/// A reference invariant density for error measurement.
#[derive(Clone)]
pub enum ReferenceDensity {
    /// Closed-form 1-d density.
    ClosedForm1d(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    /// Histogram oracle from one very long trajectory.
    Histogram(Arc<HistogramDensity>),
}

impl ReferenceDensity {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ReferenceDensity::ClosedForm1d(f) => f(x[0]),
            ReferenceDensity::Histogram(h) => h.eval(x),
        }
    }

    /// Reference values at every node of an evaluation grid.
    pub fn values_on(&self, grid: &EvalGrid) -> Vec<f64> {
        (0..grid.n_nodes()).map(|i| self.eval(&grid.node(i))).collect()
    }
}
