//! Ridge-regularized symmetric solves: Cholesky first, partial-pivot LU when the
//! factorization meets a non-positive pivot.

use crate::error::{Error, Result};
use crate::tensor::{dot, DenseMatrix};

/// Pivots at or below this magnitude are treated as zero.
pub const PIVOT_TOL: f64 = 1e-12;

/// Maximum asymmetry accepted by [`solve_ridge`].
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Solve `(G + ridge·I) c = b` for symmetric `G`.
pub fn solve_ridge(g: &DenseMatrix, b: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let k = g.rows();
    if g.cols() != k {
        return Err(Error::shape("solve_ridge", "square matrix", format!("{:?}", g.shape())));
    }
    if b.len() != k {
        return Err(Error::shape("solve_ridge", k, b.len()));
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::InvalidArgument(format!("ridge must be >= 0, got {ridge}")));
    }
    for i in 0..k {
        for j in 0..i {
            let (a, c) = (g[(i, j)], g[(j, i)]);
            if (a - c).abs() > SYMMETRY_TOL * (1.0 + a.abs().max(c.abs())) {
                return Err(Error::InvalidArgument(format!(
                    "matrix not symmetric at ({i}, {j}): {a} vs {c}"
                )));
            }
        }
    }
    let mut a = g.as_slice().to_vec();
    let mut x = b.to_vec();
    let mut solver = RidgeSolver::new(k);
    solver.solve_in_place(&mut a, &mut x, ridge)?;
    Ok(x)
}

/// Reusable scratch space for repeated `k × k` ridge solves.
#[derive(Debug, Clone)]
pub struct RidgeSolver {
    k: usize,
    diag: Vec<f64>,
    piv: Vec<usize>,
}

impl RidgeSolver {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            diag: vec![0.0; k],
            piv: vec![0; k],
        }
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    /// Solve `(A + ridge·I) x = b` where `a` holds the symmetric row-major `A`.
    /// `a` is clobbered; `b` is overwritten with the solution.
    pub fn solve_in_place(&mut self, a: &mut [f64], b: &mut [f64], ridge: f64) -> Result<()> {
        let k = self.k;
        if a.len() != k * k || b.len() != k {
            return Err(Error::shape("RidgeSolver", k, b.len()));
        }
        for i in 0..k {
            a[i * k + i] += ridge;
            self.diag[i] = a[i * k + i];
        }
        if cholesky_lower(a, k).is_ok() {
            cholesky_substitute(a, k, b);
            return Ok(());
        }
        // Restore the full matrix from the untouched strict upper triangle.
        for i in 0..k {
            a[i * k + i] = self.diag[i];
            for j in 0..i {
                a[i * k + j] = a[j * k + i];
            }
        }
        lu_in_place(a, k, &mut self.piv)?;
        lu_substitute(a, k, &self.piv, b);
        Ok(())
    }
}

/// Row-oriented Cholesky; writes `L` into the lower triangle including the diagonal.
/// Leaves the strict upper triangle untouched.
fn cholesky_lower(a: &mut [f64], k: usize) -> std::result::Result<(), usize> {
    for i in 0..k {
        for j in 0..=i {
            let (ri, rj) = (i * k, j * k);
            let s = a[ri + j] - dot(&a[ri..ri + j], &a[rj..rj + j]);
            if i == j {
                if !(s > PIVOT_TOL) {
                    return Err(i);
                }
                a[ri + i] = s.sqrt();
            } else {
                a[ri + j] = s / a[rj + j];
            }
        }
    }
    Ok(())
}

fn cholesky_substitute(l: &[f64], k: usize, b: &mut [f64]) {
    for i in 0..k {
        let r = i * k;
        let s = b[i] - dot(&l[r..r + i], &b[..i]);
        b[i] = s / l[r + i];
    }
    for i in (0..k).rev() {
        let mut s = b[i];
        for j in i + 1..k {
            s -= l[j * k + i] * b[j];
        }
        b[i] = s / l[i * k + i];
    }
}

fn lu_in_place(a: &mut [f64], k: usize, piv: &mut [usize]) -> Result<()> {
    for (i, p) in piv.iter_mut().enumerate() {
        *p = i;
    }
    for col in 0..k {
        let mut best = col;
        let mut best_val = a[col * k + col].abs();
        for r in col + 1..k {
            let v = a[r * k + col].abs();
            if v > best_val {
                best = r;
                best_val = v;
            }
        }
        if !(best_val > PIVOT_TOL) {
            return Err(Error::Singular {
                index: col,
                pivot: best_val,
            });
        }
        if best != col {
            for j in 0..k {
                a.swap(col * k + j, best * k + j);
            }
            piv.swap(col, best);
        }
        let p = a[col * k + col];
        for r in col + 1..k {
            let f = a[r * k + col] / p;
            a[r * k + col] = f;
            if f != 0.0 {
                for j in col + 1..k {
                    a[r * k + j] -= f * a[col * k + j];
                }
            }
        }
    }
    Ok(())
}

fn lu_substitute(lu: &[f64], k: usize, piv: &[usize], b: &mut [f64]) {
    let permuted: Vec<f64> = piv.iter().map(|&p| b[p]).collect();
    b.copy_from_slice(&permuted);
    for i in 0..k {
        let r = i * k;
        let s = b[i] - dot(&lu[r..r + i], &b[..i]);
        b[i] = s;
    }
    for i in (0..k).rev() {
        let r = i * k;
        let s = b[i] - dot(&lu[r + i + 1..r + k], &b[i + 1..k]);
        b[i] = s / lu[r + i];
    }
}
