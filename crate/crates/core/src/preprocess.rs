//! Column standardization and PCA projection applied before neighbor search.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{DataMatrix, Matrix};

/// Centers every column and divides by its population standard deviation.
/// Constant columns are centered and left at zero.
pub fn standardize(data: &DataMatrix) -> Result<DataMatrix> {
    let x = data.values();
    let (n, dim) = (x.rows(), x.cols());
    let mean = x.column_means();
    let mut std = vec![0.0; dim];
    for row in x.iter_rows() {
        for ((s, v), m) in std.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for (s, m) in std.iter_mut().zip(&mean) {
        *s = (*s / n as f64).sqrt();
        // spread below rounding noise of the mean counts as constant
        if *s <= 1e-14 * m.abs().max(f64::MIN_POSITIVE) {
            *s = 0.0;
        }
    }
    let mut out = Matrix::zeros(n, dim);
    for i in 0..n {
        let src = x.row(i);
        let dst = out.row_mut(i);
        for j in 0..dim {
            dst[j] = if std[j] > 0.0 { (src[j] - mean[j]) / std[j] } else { 0.0 };
        }
    }
    data.replace_values(out)
}

/// Fitted principal component projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `D × m`, orthonormal columns.
    pub components: Matrix,
    /// Population variance of the data along each component, descending.
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.cols()
    }

    /// `(values − mean) · components`.
    pub fn transform(&self, data: &DataMatrix) -> Result<DataMatrix> {
        let x = data.values();
        if x.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.cols(),
            });
        }
        let (dim, m) = (self.input_dim(), self.output_dim());
        let mut out = Matrix::zeros(x.rows(), m);
        let mut centered = vec![0.0; dim];
        for i in 0..x.rows() {
            for (c, (v, mu)) in centered.iter_mut().zip(x.row(i).iter().zip(&self.mean)) {
                *c = v - mu;
            }
            let dst = out.row_mut(i);
            for (a, c) in centered.iter().enumerate() {
                let comp = self.components.row(a);
                for b in 0..m {
                    dst[b] += c * comp[b];
                }
            }
        }
        data.replace_values(out)
    }

    /// `scores · componentsᵀ + mean`.
    pub fn inverse_transform(&self, scores: &Matrix) -> Result<Matrix> {
        if scores.cols() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: scores.cols(),
            });
        }
        let dim = self.input_dim();
        let mut out = Matrix::zeros(scores.rows(), dim);
        for i in 0..scores.rows() {
            let s = scores.row(i);
            let dst = out.row_mut(i);
            for a in 0..dim {
                let comp = self.components.row(a);
                dst[a] = self.mean[a] + s.iter().zip(comp).map(|(x, c)| x * c).sum::<f64>();
            }
        }
        Ok(out)
    }
}

/// Fits the top-`m` principal directions of the centered data.
///
/// Uses the `D × D` covariance eigendecomposition when `D ≤ n`, otherwise a
/// thin SVD of the centered `n × D` matrix. Each component's sign is chosen so
/// its largest-magnitude entry is positive.
pub fn pca_fit(data: &DataMatrix, m: usize) -> Result<PcaModel> {
    let x = data.values();
    let (n, dim) = (x.rows(), x.cols());
    if m == 0 || m > n.min(dim) {
        return Err(Error::param(
            "pca_dim",
            format!("must be in 1..={} for a {n}×{dim} matrix, got {m}", n.min(dim)),
        ));
    }
    let mean = x.column_means();
    let centered = DMatrix::from_fn(n, dim, |i, j| x.get(i, j) - mean[j]);

    // (variance, direction) pairs, unsorted
    let mut pairs: Vec<(f64, Vec<f64>)> = if dim <= n {
        let cov = centered.tr_mul(&centered) / n as f64;
        let eig = SymmetricEigen::new(cov);
        (0..dim)
            .map(|c| (eig.eigenvalues[c], eig.eigenvectors.column(c).iter().copied().collect()))
            .collect()
    } else {
        let svd = centered.svd(false, true);
        let v_t = svd.v_t.expect("requested V^T");
        (0..svd.singular_values.len())
            .map(|c| {
                let s = svd.singular_values[c];
                (s * s / n as f64, v_t.row(c).iter().copied().collect())
            })
            .collect()
    };
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs.truncate(m);

    let mut components = Matrix::zeros(dim, m);
    let mut explained_variance = Vec::with_capacity(m);
    for (c, (var, mut dir)) in pairs.into_iter().enumerate() {
        let pivot = dir
            .iter()
            .copied()
            .fold(0.0_f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            dir.iter_mut().for_each(|v| *v = -*v);
        }
        for (a, v) in dir.into_iter().enumerate() {
            components.set(a, c, v);
        }
        explained_variance.push(var.max(0.0));
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
    })
}
