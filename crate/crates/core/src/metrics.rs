//! Embedding quality: trustworthiness, continuity, silhouette, stress, and
//! the combined report with density correlation.

use serde::{Deserialize, Serialize};

use crate::density::{evaluate_density_correlation, CorrelationKind};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::neighbors::dist;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub trustworthiness: f64,
    pub continuity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub silhouette: Option<f64>,
    pub stress: f64,
    pub density_correlation: f64,
    /// Neighborhood size of the density estimates.
    pub k_eval: usize,
    /// Neighborhood size of trustworthiness and continuity.
    pub k_trust: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub k_eval: usize,
    pub k_trust: usize,
    pub correlation: CorrelationKind,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            k_eval: 300,
            k_trust: 10,
            correlation: CorrelationKind::Pearson,
        }
    }
}

fn same_rows(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.rows() != b.rows() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            got: b.rows(),
        });
    }
    Ok(())
}

/// Indices of other points sorted by distance from `i`, ties by index.
fn sorted_others(x: &Matrix, i: usize, buf: &mut Vec<(f64, usize)>) {
    buf.clear();
    let xi = x.row(i);
    buf.extend((0..x.rows()).filter(|&j| j != i).map(|j| (dist(xi, x.row(j)), j)));
    buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
}

/// `T(k) = 1 − 2/(n k (2n − 3k − 1)) Σ_i Σ_{j ∈ U_k(i)} (r(i, j) − k)`, where
/// `U_k(i)` are embedding neighbors of `i` outside its original
/// neighborhood and `r` ranks by original-space distance starting at 1.
pub fn trustworthiness(high: &Matrix, z: &Matrix, k: usize) -> Result<f64> {
    same_rows(high, z)?;
    let n = high.rows();
    if k == 0 || 2 * k >= n {
        return Err(Error::param(
            "k",
            format!("must satisfy 1 ≤ k < n/2 = {}, got {k}", n as f64 / 2.0),
        ));
    }
    let mut rank = vec![0usize; n];
    let mut buf = Vec::with_capacity(n);
    let mut penalty = 0usize;
    for i in 0..n {
        sorted_others(high, i, &mut buf);
        for (r, &(_, j)) in buf.iter().enumerate() {
            rank[j] = r + 1;
        }
        sorted_others(z, i, &mut buf);
        penalty += buf[..k]
            .iter()
            .map(|&(_, j)| rank[j])
            .filter(|&r| r > k)
            .map(|r| r - k)
            .sum::<usize>();
    }
    let (nf, kf) = (n as f64, k as f64);
    let norm = 2.0 / (nf * kf * (2.0 * nf - 3.0 * kf - 1.0));
    Ok(1.0 - norm * penalty as f64)
}

/// Trustworthiness with the two spaces swapped: penalizes original
/// neighbors missing from the embedding neighborhood.
pub fn continuity(high: &Matrix, z: &Matrix, k: usize) -> Result<f64> {
    trustworthiness(z, high, k)
}

/// Mean silhouette width. Singleton clusters contribute 0.
pub fn silhouette(z: &Matrix, labels: &[i64]) -> Result<f64> {
    let n = z.rows();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    let mut distinct: Vec<i64> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::InvalidInput(
            "silhouette needs at least 2 distinct labels".into(),
        ));
    }
    let cluster: Vec<usize> = labels
        .iter()
        .map(|l| distinct.binary_search(l).expect("label present"))
        .collect();
    let mut size = vec![0usize; distinct.len()];
    cluster.iter().for_each(|&c| size[c] += 1);

    let mut sums = vec![0.0; distinct.len()];
    let mut total = 0.0;
    for i in 0..n {
        let own = cluster[i];
        if size[own] == 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        let zi = z.row(i);
        for j in 0..n {
            if j != i {
                sums[cluster[j]] += dist(zi, z.row(j));
            }
        }
        let a = sums[own] / (size[own] - 1) as f64;
        let b = (0..distinct.len())
            .filter(|&c| c != own)
            .map(|c| sums[c] / size[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// `sqrt(Σ_{i<j} (dX_ij − dZ_ij)² / Σ_{i<j} dX_ij²)` on raw distances.
pub fn stress(high: &Matrix, z: &Matrix) -> Result<f64> {
    same_rows(high, z)?;
    let n = high.rows();
    if n < 2 {
        return Err(Error::InvalidInput("stress needs at least 2 points".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = dist(high.row(i), high.row(j));
            let dz = dist(z.row(i), z.row(j));
            num += (dx - dz) * (dx - dz);
            den += dx * dx;
        }
    }
    if den == 0.0 {
        return Err(Error::InvalidInput(
            "stress undefined: all original points coincide".into(),
        ));
    }
    Ok((num / den).sqrt())
}

/// Computes every metric. Silhouette is skipped without labels.
pub fn evaluate(high: &Matrix, z: &Matrix, labels: Option<&[i64]>, opts: &EvalOptions) -> Result<MetricReport> {
    same_rows(high, z)?;
    Ok(MetricReport {
        trustworthiness: trustworthiness(high, z, opts.k_trust)?,
        continuity: continuity(high, z, opts.k_trust)?,
        silhouette: labels.map(|l| silhouette(z, l)).transpose()?,
        stress: stress(high, z)?,
        density_correlation: evaluate_density_correlation(high, z, opts.k_eval, opts.correlation)?,
        k_eval: opts.k_eval,
        k_trust: opts.k_trust,
    })
}
