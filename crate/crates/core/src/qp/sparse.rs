//! Minimal compressed sparse row storage used by the assembly and the solver.
//!
//! Constraint matrices are built from triplets and then frozen into CSR.
//! Symmetric matrices (Hessians, KKT systems) store the lower triangle only
//! and use [`SparseMatrix::sym_mul_vec_add`] for products.

use nalgebra::DVector;

/// Triplet (COO) accumulator. Duplicate entries are summed on conversion.
#[derive(Debug, Clone)]
pub struct Triplets {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::with_capacity(cap),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    /// Push into the lower triangle regardless of the (row, col) order given.
    pub fn push_sym_lower(&mut self, i: usize, j: usize, value: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        self.push(r, c, value);
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn to_csr(&self) -> SparseMatrix {
        SparseMatrix::from_triplets(self)
    }
}

/// Immutable CSR matrix.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_triplets(t: &Triplets) -> Self {
        let mut counts = vec![0usize; t.nrows + 1];
        for &(r, _, _) in &t.entries {
            counts[r + 1] += 1;
        }
        for i in 0..t.nrows {
            counts[i + 1] += counts[i];
        }
        let mut col_idx = vec![0usize; t.entries.len()];
        let mut values = vec![0.0; t.entries.len()];
        let mut next = counts.clone();
        for &(r, c, v) in &t.entries {
            let p = next[r];
            col_idx[p] = c;
            values[p] = v;
            next[r] += 1;
        }
        // Sort each row by column and merge duplicates in place.
        let mut row_ptr = vec![0usize; t.nrows + 1];
        let mut write = 0usize;
        for r in 0..t.nrows {
            let (lo, hi) = (counts[r], counts[r + 1]);
            let mut row: Vec<(usize, f64)> = col_idx[lo..hi]
                .iter()
                .copied()
                .zip(values[lo..hi].iter().copied())
                .collect();
            row.sort_unstable_by_key(|&(c, _)| c);
            row_ptr[r] = write;
            let mut iter = row.into_iter().peekable();
            while let Some((c, mut v)) = iter.next() {
                while iter.peek().is_some_and(|&(c2, _)| c2 == c) {
                    v += iter.next().unwrap().1;
                }
                col_idx[write] = c;
                values[write] = v;
                write += 1;
            }
        }
        row_ptr[t.nrows] = write;
        col_idx.truncate(write);
        values.truncate(write);
        Self {
            nrows: t.nrows,
            ncols: t.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn zero(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    /// y = A x
    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.ncols);
        let mut y = DVector::zeros(self.nrows);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c];
            }
            y[r] = acc;
        }
        y
    }

    /// y += scale * Aᵀ x
    pub fn tr_mul_vec_add(&self, x: &DVector<f64>, scale: f64, y: &mut DVector<f64>) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for r in 0..self.nrows {
            let xr = scale * x[r];
            if xr == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                y[c] += v * xr;
            }
        }
    }

    pub fn tr_mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.ncols);
        self.tr_mul_vec_add(x, 1.0, &mut y);
        y
    }

    /// y += scale * S x where `self` holds the lower triangle of symmetric S.
    pub fn sym_mul_vec_add(&self, x: &DVector<f64>, scale: f64, y: &mut DVector<f64>) {
        debug_assert_eq!(self.nrows, self.ncols);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                debug_assert!(c <= r, "symmetric storage must be lower triangular");
                y[r] += scale * v * x[c];
                if c != r {
                    y[c] += scale * v * x[r];
                }
            }
        }
    }

    pub fn sym_mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.nrows);
        self.sym_mul_vec_add(x, 1.0, y.as_mut());
        y
    }

    /// Max absolute row sum, treating the matrix as stored (not symmetrized).
    pub fn inf_norm(&self) -> f64 {
        (0..self.nrows)
            .map(|r| self.row(r).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Infinity norm of the full symmetric matrix given its lower triangle.
    pub fn sym_inf_norm(&self) -> f64 {
        let mut sums = vec![0.0f64; self.nrows];
        for (r, c, v) in self.iter() {
            sums[r] += v.abs();
            if r != c {
                sums[c] += v.abs();
            }
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    /// Keep the rows listed in `keep`, in the given order.
    pub fn select_rows(&self, keep: &[usize]) -> SparseMatrix {
        let mut t = Triplets::new(keep.len(), self.ncols);
        for (new_r, &old_r) in keep.iter().enumerate() {
            let (cols, vals) = self.row(old_r);
            for (&c, &v) in cols.iter().zip(vals) {
                t.push(new_r, c, v);
            }
        }
        t.to_csr()
    }
}

trait SymMulTarget {
    fn as_mut(&mut self) -> &mut DVector<f64>;
}

impl SymMulTarget for DVector<f64> {
    fn as_mut(&mut self) -> &mut DVector<f64> {
        self
    }
}
