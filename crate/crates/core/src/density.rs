//! kNN density estimates, the log-density discrepancy loss with its exact
//! gradient, and the density-correlation metric.
//!
//! The estimator is `ρ_i = k / (S_i + ε·S̄)` where `S_i` is the sum of
//! distances from `i` to its `k` neighbors and `S̄` the mean of those sums.
//! Expressing the guard relative to `S̄` keeps `ρ̃ = ρ / mean(ρ)` exactly
//! invariant to global rescaling while still protecting coincident points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::neighbors::{dist, knn, NeighborGraph};

/// Relative guard added to every neighbor-distance sum.
pub const DENSITY_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    pub rho: Vec<f64>,
    /// `rho / mean(rho)`.
    pub rho_tilde: Vec<f64>,
    pub log_rho_tilde: Vec<f64>,
}

impl DensityEstimate {
    pub fn n(&self) -> usize {
        self.rho.len()
    }

    /// Builds the estimate from per-point neighbor-distance sums.
    pub fn from_distance_sums(sums: &[f64], k: usize) -> DensityEstimate {
        let guard = guard(sums);
        let rho: Vec<f64> = sums.iter().map(|s| k as f64 / (s + guard)).collect();
        let mean = rho.iter().sum::<f64>() / rho.len() as f64;
        let rho_tilde: Vec<f64> = rho.iter().map(|r| r / mean).collect();
        let log_rho_tilde = rho_tilde.iter().map(|r| r.ln()).collect();
        DensityEstimate {
            rho,
            rho_tilde,
            log_rho_tilde,
        }
    }
}

fn guard(sums: &[f64]) -> f64 {
    let mean = sums.iter().sum::<f64>() / sums.len() as f64;
    if mean > 0.0 {
        DENSITY_EPS * mean
    } else {
        DENSITY_EPS
    }
}

pub fn knn_density(graph: &NeighborGraph) -> DensityEstimate {
    let sums: Vec<f64> = (0..graph.n()).map(|i| graph.distance_sum(i)).collect();
    DensityEstimate::from_distance_sums(&sums, graph.k())
}

/// Neighbor-distance sums measured in `z` over the index sets of `graph`.
fn distance_sums(z: &Matrix, graph: &NeighborGraph) -> Vec<f64> {
    (0..graph.n())
        .map(|i| {
            let zi = z.row(i);
            graph.neighbors(i).iter().map(|&j| dist(zi, z.row(j))).sum()
        })
        .collect()
}

fn check_shapes(high: &DensityEstimate, z: &Matrix, graph: &NeighborGraph) -> Result<()> {
    for got in [z.rows(), graph.n()] {
        if got != high.n() {
            return Err(Error::DimensionMismatch {
                expected: high.n(),
                got,
            });
        }
    }
    Ok(())
}

/// `(1/n) Σ_i (log ρ̃_i^high − log ρ̃_i^low)²`, with the low-dimensional
/// estimate taken over the fixed index sets of `graph` measured in `z`.
pub fn density_loss(high: &DensityEstimate, z: &Matrix, graph: &NeighborGraph) -> Result<f64> {
    check_shapes(high, z, graph)?;
    let low = DensityEstimate::from_distance_sums(&distance_sums(z, graph), graph.k());
    Ok(discrepancy(high, &low))
}

fn discrepancy(high: &DensityEstimate, low: &DensityEstimate) -> f64 {
    let n = high.n() as f64;
    high.log_rho_tilde
        .iter()
        .zip(&low.log_rho_tilde)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n
}

/// Exact gradient of [`density_loss`] with respect to every coordinate.
pub fn density_loss_gradient(high: &DensityEstimate, z: &Matrix, graph: &NeighborGraph) -> Result<Matrix> {
    check_shapes(high, z, graph)?;
    let mut grad = Matrix::zeros(z.rows(), z.cols());
    DensityTerm::accumulate(high, z, graph, 1.0, grad.as_mut_slice());
    Ok(grad)
}

/// Density term as the optimizer sees it: a fixed high-dimensional target
/// and fixed neighbor index sets.
#[derive(Debug, Clone)]
pub struct DensityTerm {
    pub high: DensityEstimate,
    pub graph: NeighborGraph,
}

impl DensityTerm {
    pub fn new(graph: NeighborGraph) -> DensityTerm {
        DensityTerm {
            high: knn_density(&graph),
            graph,
        }
    }

    pub fn loss(&self, z: &Matrix) -> f64 {
        let low = DensityEstimate::from_distance_sums(&distance_sums(z, &self.graph), self.graph.k());
        discrepancy(&self.high, &low)
    }

    /// Adds `weight · ∇loss` into `grad` (row-major, same shape as `z`) and
    /// returns the unweighted loss.
    pub fn loss_and_gradient(&self, z: &Matrix, weight: f64, grad: &mut [f64]) -> f64 {
        Self::accumulate(&self.high, z, &self.graph, weight, grad)
    }

    fn accumulate(high: &DensityEstimate, z: &Matrix, graph: &NeighborGraph, weight: f64, grad: &mut [f64]) -> f64 {
        let n = graph.n();
        let d = z.cols();
        let sums = distance_sums(z, graph);
        let low = DensityEstimate::from_distance_sums(&sums, graph.k());
        let loss = discrepancy(high, &low);

        let has_relative_guard = sums.iter().sum::<f64>() > 0.0;
        let guard = guard(&sums);
        let residual: Vec<f64> = high
            .log_rho_tilde
            .iter()
            .zip(&low.log_rho_tilde)
            .map(|(a, b)| a - b)
            .collect();
        let total: f64 = residual.iter().sum();
        let nf = n as f64;

        // dL/dS_i through ρ_i, the normalizing mean, and the guard ε·S̄
        let c: Vec<f64> = (0..n)
            .map(|i| (residual[i] - total * low.rho_tilde[i] / nf) / (sums[i] + guard))
            .collect();
        let c_total: f64 = c.iter().sum();
        let shared = if has_relative_guard {
            DENSITY_EPS * c_total / nf
        } else {
            0.0
        };
        let scale = weight * 2.0 / nf;

        for i in 0..n {
            let coef = scale * (c[i] + shared);
            if coef == 0.0 {
                continue;
            }
            let zi = z.row(i);
            for &j in graph.neighbors(i) {
                let zj = z.row(j);
                let r = dist(zi, zj);
                if r == 0.0 {
                    continue;
                }
                let f = coef / r;
                for a in 0..d {
                    let u = f * (zi[a] - zj[a]);
                    grad[i * d + a] += u;
                    grad[j * d + a] -= u;
                }
            }
        }
        loss
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationKind {
    #[default]
    Pearson,
    Spearman,
}

impl std::str::FromStr for CorrelationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pearson" => Ok(CorrelationKind::Pearson),
            "spearman" => Ok(CorrelationKind::Spearman),
            other => Err(Error::param("correlation", format!("unknown kind `{other}`"))),
        }
    }
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::InvalidInput(
            "correlation undefined: one of the vectors has zero variance".into(),
        ));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Ranks starting at 1, tied values sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Correlation between the normalized log-density vectors of two spaces.
pub fn density_correlation(high: &DensityEstimate, low: &DensityEstimate) -> Result<f64> {
    density_correlation_with(high, low, CorrelationKind::Pearson)
}

pub fn density_correlation_with(high: &DensityEstimate, low: &DensityEstimate, kind: CorrelationKind) -> Result<f64> {
    match kind {
        CorrelationKind::Pearson => pearson(&high.log_rho_tilde, &low.log_rho_tilde),
        CorrelationKind::Spearman => pearson(&average_ranks(&high.log_rho_tilde), &average_ranks(&low.log_rho_tilde)),
    }
}

/// Evaluation-time DC: kNN recomputed independently in both spaces at `k`.
pub fn evaluate_density_correlation(high: &Matrix, z: &Matrix, k: usize, kind: CorrelationKind) -> Result<f64> {
    if high.rows() != z.rows() {
        return Err(Error::DimensionMismatch {
            expected: high.rows(),
            got: z.rows(),
        });
    }
    let dh = knn_density(&knn(high, k)?);
    let dl = knn_density(&knn(z, k)?);
    density_correlation_with(&dh, &dl, kind)
}
