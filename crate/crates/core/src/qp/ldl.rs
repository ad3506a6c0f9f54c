//! Sparse LDLᵀ factorization without pivoting, for the quasi-definite
//! Newton systems produced by the interior-point solver.
//!
//! The input is the lower triangle of a symmetric matrix in CSR form; row k of
//! the lower triangle is exactly column k of the upper triangle, which is what
//! the up-looking algorithm consumes. Variables are eliminated in natural
//! order, so callers control fill-in through how they order the system.

use super::sparse::SparseMatrix;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LdlError {
    /// |D(k,k)| fell below the pivot floor; the caller should regularize more.
    TinyPivot { k: usize },
    NotSquare,
}

impl std::fmt::Display for LdlError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LdlError::TinyPivot { k } => write!(f, "pivot {k} below floor"),
            LdlError::NotSquare => write!(f, "matrix is not square"),
        }
    }
}

impl std::error::Error for LdlError {}

/// L (unit lower triangular, stored by columns without the diagonal) and D.
#[derive(Debug)]
pub struct LdlFactor {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
    d: Vec<f64>,
}

impl LdlFactor {
    /// Factor the symmetric matrix whose lower triangle is `lower`.
    ///
    /// Pivots with |D(k,k)| < `pivot_floor` abort the factorization; the
    /// matrix is expected to be quasi-definite after regularization, so a
    /// tiny pivot signals that the regularization must be increased.
    pub fn factor(lower: &SparseMatrix, pivot_floor: f64) -> Result<Self, LdlError> {
        if lower.nrows() != lower.ncols() {
            return Err(LdlError::NotSquare);
        }
        let n = lower.nrows();

        // Elimination tree and column counts.
        let mut parent = vec![usize::MAX; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            let (cols, _) = lower.row(k);
            for &j in cols {
                if j >= k {
                    continue;
                }
                let mut i = j;
                while flag[i] != k {
                    if parent[i] == usize::MAX {
                        parent[i] = k;
                    }
                    lnz[i] += 1;
                    flag[i] = k;
                    i = parent[i];
                }
            }
        }
        let mut col_ptr = vec![0usize; n + 1];
        for i in 0..n {
            col_ptr[i + 1] = col_ptr[i] + lnz[i];
        }
        let nnz = col_ptr[n];
        let mut row_idx = vec![0usize; nnz];
        let mut values = vec![0.0f64; nnz];
        let mut d = vec![0.0f64; n];

        // Numeric up-looking pass.
        let mut y = vec![0.0f64; n];
        let mut pattern = vec![0usize; n];
        let mut used = vec![0usize; n];
        let mut flag = vec![usize::MAX; n];
        for k in 0..n {
            let mut top = n;
            flag[k] = k;
            y[k] = 0.0;
            let (cols, vals) = lower.row(k);
            for (&j, &ajk) in cols.iter().zip(vals) {
                if j > k {
                    continue;
                }
                y[j] += ajk;
                let mut len = 0usize;
                let mut i = j;
                while flag[i] != k {
                    pattern[len] = i;
                    len += 1;
                    flag[i] = k;
                    i = parent[i];
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    pattern[top] = pattern[len];
                }
            }
            d[k] = y[k];
            y[k] = 0.0;
            for t in top..n {
                let i = pattern[t];
                let yi = y[i];
                y[i] = 0.0;
                let (lo, hi) = (col_ptr[i], col_ptr[i] + used[i]);
                for p in lo..hi {
                    y[row_idx[p]] -= values[p] * yi;
                }
                let lki = yi / d[i];
                d[k] -= lki * yi;
                row_idx[hi] = k;
                values[hi] = lki;
                used[i] += 1;
            }
            if !(d[k].abs() >= pivot_floor) {
                return Err(LdlError::TinyPivot { k });
            }
        }

        Ok(Self {
            n,
            col_ptr,
            row_idx,
            values,
            d,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Diagonal of D.
    pub fn d(&self) -> &[f64] {
        &self.d
    }

    /// Solve (L D Lᵀ) x = b in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        for j in 0..self.n {
            let bj = b[j];
            if bj != 0.0 {
                for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                    b[self.row_idx[p]] -= self.values[p] * bj;
                }
            }
        }
        for j in 0..self.n {
            b[j] /= self.d[j];
        }
        for j in (0..self.n).rev() {
            let mut acc = b[j];
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                acc -= self.values[p] * b[self.row_idx[p]];
            }
            b[j] = acc;
        }
    }
}
