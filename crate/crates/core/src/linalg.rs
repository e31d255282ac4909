//! Dense least squares by Householder QR with column pivoting.
//!
//! Columns are equilibrated to unit norm before factorisation so the rank
//! test works on a common scale even when raw day counts and 0/1 dummies sit
//! side by side in one design.

use serde::{Deserialize, Serialize};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub coefficients: Vec<f64>,
    /// Classical OLS standard errors, `sqrt(s² (XᵀX)⁻¹_jj)` with
    /// `s² = RSS / (m - n)`. Zero when `m == n`.
    pub std_errors: Vec<f64>,
    pub rss: f64,
}

/// Columns found to be (numerically) in the span of the others, in original
/// column numbering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankDeficient {
    pub columns: Vec<usize>,
}

/// Relative (unit-column) threshold below which a pivot is treated as zero.
pub const RANK_TOL: f64 = 1e-10;

pub fn lstsq(a: &Matrix, y: &[f64]) -> Result<LstsqSolution, RankDeficient> {
    let (m, n) = (a.rows(), a.cols());
    assert_eq!(y.len(), m, "right-hand side length");
    if m < n {
        return Err(RankDeficient {
            columns: (m..n).collect(),
        });
    }

    let scale: Vec<f64> = (0..n)
        .map(|j| {
            let s = (0..m).map(|i| a.get(i, j).powi(2)).sum::<f64>().sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    // column-major working copy
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a.get(i, j) / scale[j]).collect()).collect();
    let mut qty = y.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut r_diag = vec![0.0; n];

    for k in 0..n {
        let (best, best_norm) = (k..n)
            .map(|j| (j, w[j][k..].iter().map(|v| v * v).sum::<f64>()))
            .fold((k, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        if best_norm.sqrt() <= RANK_TOL {
            let mut columns: Vec<usize> = perm[k..].to_vec();
            columns.sort_unstable();
            return Err(RankDeficient { columns });
        }
        w.swap(k, best);
        perm.swap(k, best);

        let norm = best_norm.sqrt();
        let alpha = if w[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = w[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for col in w.iter_mut().skip(k + 1) {
                let f = 2.0 * dot(&v, &col[k..]) / vnorm2;
                col[k..].iter_mut().zip(&v).for_each(|(c, vi)| *c -= f * vi);
            }
            let f = 2.0 * dot(&v, &qty[k..]) / vnorm2;
            qty[k..].iter_mut().zip(&v).for_each(|(c, vi)| *c -= f * vi);
        }
        r_diag[k] = alpha;
        w[k][k] = alpha;
        w[k][k + 1..].iter_mut().for_each(|x| *x = 0.0);
    }

    // R[i][j] = w[j][i] for i <= j
    let r = |i: usize, j: usize| if i == j { r_diag[i] } else { w[j][i] };

    let mut z = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| r(i, j) * z[j]).sum();
        z[i] = (qty[i] - s) / r(i, i);
    }

    let rss: f64 = qty[n..].iter().map(|v| v * v).sum();
    let s2 = if m > n { rss / (m - n) as f64 } else { 0.0 };

    // Rinv, upper triangular; diag((RᵀR)⁻¹) = row norms of Rinv
    let mut rinv = vec![vec![0.0; n]; n];
    for j in 0..n {
        rinv[j][j] = 1.0 / r(j, j);
        for i in (0..j).rev() {
            let s: f64 = (i + 1..=j).map(|k| r(i, k) * rinv[k][j]).sum();
            rinv[i][j] = -s / r(i, i);
        }
    }

    let mut coefficients = vec![0.0; n];
    let mut std_errors = vec![0.0; n];
    for k in 0..n {
        let j = perm[k];
        coefficients[j] = z[k] / scale[j];
        let diag: f64 = rinv[k][k..].iter().map(|v| v * v).sum();
        std_errors[j] = (s2 * diag).sqrt() / scale[j];
    }

    Ok(LstsqSolution {
        coefficients,
        std_errors,
        rss,
    })
}
