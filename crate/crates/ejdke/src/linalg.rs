//! Tiny dense linear algebra helpers for the d x d coefficient matrices.
//! Row-major `Vec<f64>` of length `d * d` throughout.

/// `y = m x` for a row-major d x d matrix.
pub fn mat_vec(m: &[f64], x: &[f64], y: &mut [f64]) {
    let d = x.len();
    debug_assert_eq!(m.len(), d * d);
    for i in 0..d {
        let mut acc = 0.0;
        for j in 0..d {
            acc += m[i * d + j] * x[j];
        }
        y[i] = acc;
    }
}

/// `m m^T` for a row-major d x d matrix.
pub fn mat_mul_transpose(m: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += m[i * d + k] * m[j * d + k];
            }
            out[i * d + j] = acc;
        }
    }
    out
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det(m: &[f64], d: usize) -> f64 {
    let mut a = m.to_vec();
    let mut sign = 1.0;
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&i, &j| a[i * d + col].abs().total_cmp(&a[j * d + col].abs()))
            .unwrap();
        if a[pivot * d + col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for j in 0..d {
                a.swap(col * d + j, pivot * d + j);
            }
            sign = -sign;
        }
        for row in col + 1..d {
            let f = a[row * d + col] / a[col * d + col];
            for j in col..d {
                a[row * d + j] -= f * a[col * d + j];
            }
        }
    }
    (0..d).fold(sign, |acc, i| acc * a[i * d + i])
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn sym_eigenvalues(m: &[f64], d: usize) -> Vec<f64> {
    let mut a = m.to_vec();
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..d {
            for j in i + 1..d {
                off += a[i * d + j] * a[i * d + j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..d).map(|i| a[i * d + i]).collect()
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn det_of_planted_matrices() {
        assert_abs_diff_eq!(det(&[2.0], 1), 2.0);
        assert_abs_diff_eq!(det(&[1.0, 2.0, 3.0, 4.0], 2), -2.0, epsilon = 1e-14);
        let singular = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(det(&singular, 3), 0.0);
    }

    #[test]
    fn jacobi_recovers_spectrum() {
        // symmetric with eigenvalues 1, 3
        let m = [2.0, 1.0, 1.0, 2.0];
        let mut ev = sym_eigenvalues(&m, 2);
        ev.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(ev[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(ev[1], 3.0, epsilon = 1e-10);
    }
}
