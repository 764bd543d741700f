//! Orthogonal weight initialization.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{cast, Scalar};

/// Scaled (semi-)orthogonal `(rows, cols)` matrix: the smaller dimension's
/// vectors are orthonormal before scaling by `gain`. Computed in f64 via
/// modified Gram-Schmidt on a Gaussian draw.
pub fn orthogonal<F: Scalar>(rows: usize, cols: usize, gain: f64, rng: &mut impl Rng) -> Array2<F> {
    let transpose = rows < cols;
    let (r, c) = if transpose { (cols, rows) } else { (rows, cols) };
    // r >= c: orthonormalize the c columns of an (r, c) Gaussian matrix.
    let mut q: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..r).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    for j in 0..c {
        for i in 0..j {
            let dot: f64 = q[j].iter().zip(&q[i]).map(|(a, b)| a * b).sum();
            for t in 0..r {
                q[j][t] -= dot * q[i][t];
            }
        }
        let norm: f64 = q[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        let inv = if norm > 1e-12 { 1.0 / norm } else { 0.0 };
        for t in 0..r {
            q[j][t] *= inv;
        }
    }
    let mut out = Array2::<F>::zeros((rows, cols));
    for j in 0..c {
        for i in 0..r {
            let v = gain * q[j][i];
            if transpose {
                out[[j, i]] = cast(v);
            } else {
                out[[i, j]] = cast(v);
            }
        }
    }
    out
}
