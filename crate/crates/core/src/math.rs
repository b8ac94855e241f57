//! Small dense/sparse numeric helpers shared by the learners.

use serde::{Deserialize, Serialize};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_loss(p: f64, y: bool) -> f64 {
    let p = p.clamp(1e-15, 1.0 - 1e-15);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], cols: usize) -> crate::Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(crate::Error::dimension(format!("matrix row {i}"), cols, row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn push_row(&mut self, row: &[f64]) -> crate::Result<()> {
        if row.len() != self.cols {
            return Err(crate::Error::dimension("matrix push_row", self.cols, row.len()));
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Sparse vector stored as ascending (index, value) pairs. Zero entries are
/// never stored, so an empty row is the all-zero vector.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseRow {
    pub idx: Vec<u32>,
    pub val: Vec<f64>,
}

pub static ZERO_ROW: SparseRow = SparseRow {
    idx: Vec::new(),
    val: Vec::new(),
};

impl SparseRow {
    pub fn from_dense(dense: &[f64]) -> Self {
        let mut row = SparseRow::default();
        for (j, &v) in dense.iter().enumerate() {
            if v != 0.0 {
                row.idx.push(j as u32);
                row.val.push(v);
            }
        }
        row
    }

    pub fn push(&mut self, j: usize, v: f64) {
        debug_assert!(self.idx.last().is_none_or(|&last| (last as usize) < j));
        if v != 0.0 {
            self.idx.push(j as u32);
            self.val.push(v);
        }
    }

    pub fn nnz(&self) -> usize {
        self.idx.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.idx.iter().zip(&self.val).map(|(&j, &v)| (j as usize, v))
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for (j, v) in self.iter() {
            out[j] = v;
        }
        out
    }

    /// Largest stored index + 1 (0 for the empty row).
    pub fn min_dim(&self) -> usize {
        self.idx.last().map_or(0, |&j| j as usize + 1)
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
