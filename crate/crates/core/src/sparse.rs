//! Compressed sparse row operators.

use std::io::Write;

use faer::sparse::{SparseColMat, Triplet};

use crate::error::{Result, StokesError};

/// Accumulates `(row, col, value)` entries; duplicates are summed on finalize.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        TripletBuilder {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        TripletBuilder {
            nrows,
            ncols,
            entries: Vec::with_capacity(cap),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, value));
    }

    pub fn extend_from(&mut self, other: &TripletBuilder) {
        self.entries.extend_from_slice(&other.entries);
    }

    /// Sorts entries by (row, col) with a stable sort, so duplicates are
    /// summed in insertion order and the result is deterministic.
    pub fn finalize(mut self) -> SparseOperator {
        self.entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..self.nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        SparseOperator {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseOperator {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[range.clone()].binary_search(&c) {
            Ok(pos) => self.values[range.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (r, yr) in y.iter_mut().enumerate() {
            *yr = self.row(r).map(|(c, v)| v * x[c]).sum();
        }
    }

    /// `y = A^T x`
    pub fn mul_transpose_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (r, &xr) in x.iter().enumerate() {
            for (c, v) in self.row(r) {
                y[c] += v * xr;
            }
        }
        y
    }

    /// `x^T A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.nrows)
            .map(|r| x[r] * self.row(r).map(|(c, v)| v * y[c]).sum::<f64>())
            .sum()
    }

    pub fn transpose(&self) -> SparseOperator {
        let mut b = TripletBuilder::with_capacity(self.ncols, self.nrows, self.nnz());
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                b.push(c, r, v);
            }
        }
        b.finalize()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|A_ij - A_ji|`.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                worst = worst.max((v - self.get(c, r)).abs());
            }
        }
        worst
    }

    /// Linear combination `a * self + b * other` (same shape).
    pub fn add_scaled(&self, a: f64, other: &SparseOperator, b: f64) -> SparseOperator {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut t = TripletBuilder::with_capacity(self.nrows, self.ncols, self.nnz() + other.nnz());
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                t.push(r, c, a * v);
            }
            for (c, v) in other.row(r) {
                t.push(r, c, b * v);
            }
        }
        t.finalize()
    }

    pub fn to_triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            out.extend(self.row(r).map(|(c, v)| (r, c, v)));
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                d[r][c] = v;
            }
        }
        d
    }

    /// Matrix Market coordinate export.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                writeln!(w, "{} {} {:.17e}", r + 1, c + 1, v)?;
            }
        }
        Ok(())
    }
}

/// Builds a faer column-major matrix from triplets.
pub(crate) fn to_faer(
    nrows: usize,
    ncols: usize,
    entries: &[(usize, usize, f64)],
) -> Result<SparseColMat<usize, f64>> {
    let trip: Vec<_> = entries
        .iter()
        .map(|&(r, c, v)| Triplet::new(r, c, v))
        .collect();
    SparseColMat::try_new_from_triplets(nrows, ncols, &trip)
        .map_err(|e| StokesError::solver(format!("sparse matrix creation failed: {e:?}"), 0, f64::NAN))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}
