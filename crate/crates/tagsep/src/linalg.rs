//! Small linear-algebra kit for the analytic solvers: dense Gaussian
//! elimination with partial pivoting for systems up to a few thousand
//! unknowns, and iterative solvers (Gauss-Seidel, uniformized power
//! iteration) for the larger sparse generator systems.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is singular to working precision (pivot {0:.3e})")]
    Singular(f64),
    #[error("iterative solve did not converge within {0} sweeps (residual {1:.3e})")]
    NoConvergence(usize, f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Solve `A x = b` in place by Gaussian elimination with partial pivoting.
/// `a` is row-major `n x n`.
pub fn dense_solve(a: &mut [f64], b: &mut [f64], n: usize) -> Result<Vec<f64>, LinalgError> {
    if a.len() != n * n || b.len() != n {
        return Err(LinalgError::Dimension(format!(
            "a: {} (want {}), b: {} (want {})",
            a.len(),
            n * n,
            b.len(),
            n
        )));
    }
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = a[col * n + col].abs();
        for row in col + 1..n {
            let v = a[row * n + col].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = row;
            }
        }
        if pivot_val < 1e-300 {
            return Err(LinalgError::Singular(pivot_val));
        }
        if pivot_row != col {
            for k in col..n {
                a.swap(col * n + k, pivot_row * n + k);
            }
            b.swap(col, pivot_row);
        }
        let inv = 1.0 / a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] * inv;
            if factor == 0.0 {
                continue;
            }
            a[row * n + col] = 0.0;
            for k in col + 1..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    Ok(x)
}

/// Compressed sparse rows: one `(col, value)` run per row.
#[derive(Debug, Clone)]
pub struct SparseRows {
    pub n: usize,
    row_start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseRows {
    /// Build from per-row entry lists; duplicate columns must already be merged.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_start = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_start.push(0);
        for row in rows {
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            row_start.push(cols.len());
        }
        SparseRows {
            n,
            row_start,
            cols,
            vals,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_start[i]..self.row_start[i + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }
}

/// Gauss-Seidel solve of `diag_i * x_i - sum_j off_ij * x_j = rhs_i`,
/// where `off` holds the off-diagonal couplings with positive sign.
///
/// Converges for the diagonally dominant M-matrix systems produced by
/// absorbing-generator problems with non-positive shift.
pub fn gauss_seidel(
    off: &SparseRows,
    diag: &[f64],
    rhs: &[f64],
    tol: f64,
    max_sweeps: usize,
) -> Result<Vec<f64>, LinalgError> {
    let n = off.n;
    if diag.len() != n || rhs.len() != n {
        return Err(LinalgError::Dimension("diag/rhs length".into()));
    }
    let mut x = vec![0.0; n];
    for sweep in 0..max_sweeps {
        let mut max_delta: f64 = 0.0;
        for i in 0..n {
            let mut acc = rhs[i];
            for (j, v) in off.row(i) {
                acc += v * x[j];
            }
            let new = acc / diag[i];
            max_delta = max_delta.max((new - x[i]).abs());
            x[i] = new;
        }
        if max_delta <= tol {
            // Confirm with a true residual check before accepting.
            let mut max_res: f64 = 0.0;
            for i in 0..n {
                let mut acc = rhs[i];
                for (j, v) in off.row(i) {
                    acc += v * x[j];
                }
                max_res = max_res.max((acc - diag[i] * x[i]).abs());
            }
            if max_res <= tol * 10.0 {
                return Ok(x);
            } else if sweep + 1 == max_sweeps {
                return Err(LinalgError::NoConvergence(max_sweeps, max_res));
            }
        }
    }
    Err(LinalgError::NoConvergence(max_sweeps, f64::NAN))
}

/// Stationary distribution of an irreducible CTMC generator given as
/// off-diagonal rate rows, via power iteration on the uniformized chain.
///
/// `rates.row(i)` lists outgoing rates `(j, q_ij)`; the total outflow per
/// row is recomputed internally.
pub fn stationary_power(
    rates: &SparseRows,
    tol: f64,
    max_iters: usize,
) -> Result<Vec<f64>, LinalgError> {
    let n = rates.n;
    let mut outflow = vec![0.0; n];
    for i in 0..n {
        outflow[i] = rates.row(i).map(|(_, v)| v).sum();
    }
    let lambda = outflow.iter().cloned().fold(0.0, f64::max) * 1.05 + 1e-12;
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..max_iters {
        // next = pi * P with P = I + Q/lambda.
        for i in 0..n {
            next[i] = pi[i] * (1.0 - outflow[i] / lambda);
        }
        for i in 0..n {
            let w = pi[i] / lambda;
            if w == 0.0 {
                continue;
            }
            for (j, v) in rates.row(i) {
                next[j] += w * v;
            }
        }
        let total: f64 = next.iter().sum();
        let mut max_delta: f64 = 0.0;
        for i in 0..n {
            next[i] /= total;
            max_delta = max_delta.max((next[i] - pi[i]).abs());
        }
        std::mem::swap(&mut pi, &mut next);
        if max_delta <= tol {
            return Ok(pi);
        }
    }
    Err(LinalgError::NoConvergence(max_iters, f64::NAN))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn dense_solve_3x3() {
        let mut a = vec![2.0, 1.0, -1.0, -3.0, -1.0, 2.0, -2.0, 1.0, 2.0];
        let mut b = vec![8.0, -11.0, -3.0];
        let x = dense_solve(&mut a, &mut b, 3).unwrap();
        assert_relative_eq!(x[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], 3.0, epsilon = 1e-12);
        assert_relative_eq!(x[2], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn dense_solve_detects_singular() {
        let mut a = vec![1.0, 2.0, 2.0, 4.0];
        let mut b = vec![1.0, 2.0];
        assert!(matches!(
            dense_solve(&mut a, &mut b, 2),
            Err(LinalgError::Singular(_))
        ));
    }

    #[test]
    fn gauss_seidel_matches_dense() {
        // Diagonally dominant random-ish system.
        let rows = vec![
            vec![(1, 1.0), (2, 0.5)],
            vec![(0, 0.7), (2, 1.2)],
            vec![(0, 0.3), (1, 0.4)],
        ];
        let diag = vec![4.0, 5.0, 3.0];
        let rhs = vec![1.0, 2.0, 0.5];
        let off = SparseRows::from_rows(rows);
        let x = gauss_seidel(&off, &diag, &rhs, 1e-14, 10_000).unwrap();

        let mut a = vec![4.0, -1.0, -0.5, -0.7, 5.0, -1.2, -0.3, -0.4, 3.0];
        let mut b = rhs.clone();
        let xd = dense_solve(&mut a, &mut b, 3).unwrap();
        for i in 0..3 {
            assert_relative_eq!(x[i], xd[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn stationary_power_two_state() {
        // Rates 0->1 at 2, 1->0 at 1: pi = (1/3, 2/3).
        let rates = SparseRows::from_rows(vec![vec![(1, 2.0)], vec![(0, 1.0)]]);
        let pi = stationary_power(&rates, 1e-13, 100_000).unwrap();
        assert_relative_eq!(pi[0], 1.0 / 3.0, epsilon = 1e-10);
        assert_relative_eq!(pi[1], 2.0 / 3.0, epsilon = 1e-10);
    }

    proptest! {
        #[test]
        fn dense_solve_residual_small(seed in 0u64..1000) {
            use crate::kernel::RngStream;
            let mut rng = RngStream::new(seed, 0);
            let n = 8;
            let mut a = vec![0.0; n * n];
            for (i, v) in a.iter_mut().enumerate() {
                *v = rng.uniform() - 0.5;
                if i % (n + 1) == 0 {
                    *v += 4.0; // keep well-conditioned
                }
            }
            let b: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            let x = dense_solve(&mut a.clone(), &mut b.clone(), n).unwrap();
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += a[i * n + j] * x[j];
                }
                prop_assert!((acc - b[i]).abs() < 1e-10);
            }
        }
    }
}
