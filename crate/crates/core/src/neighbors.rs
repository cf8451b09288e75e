//! Exact Euclidean distances and brute-force k-nearest-neighbor graphs.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Symmetric `n × n` Euclidean distance matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.d[i * self.n..(i + 1) * self.n]
    }
}

pub fn pairwise_distances(points: &Matrix) -> Result<DistanceMatrix> {
    let n = points.rows();
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 points, got {n}")));
    }
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = dist(points.row(i), points.row(j));
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    Ok(DistanceMatrix { n, d })
}

/// Per-point sorted neighbor lists. Row `i` holds the `k` nearest other
/// points, ascending by distance with ties broken by ascending index.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    n: usize,
    k: usize,
    idx: Vec<usize>,
    dist: Vec<f64>,
}

impl NeighborGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.idx[i * self.k..(i + 1) * self.k]
    }

    #[inline]
    pub fn distances(&self, i: usize) -> &[f64] {
        &self.dist[i * self.k..(i + 1) * self.k]
    }

    /// Sum of the distances from `i` to its neighbors.
    pub fn distance_sum(&self, i: usize) -> f64 {
        self.distances(i).iter().sum()
    }

    /// The first `k` neighbors of every row. Identical to building the graph
    /// with `k` directly, because rows are totally ordered.
    pub fn truncate(&self, k: usize) -> Result<NeighborGraph> {
        if k == 0 || k > self.k {
            return Err(Error::param(
                "k",
                format!("cannot truncate a k={} graph to k={k}", self.k),
            ));
        }
        let mut idx = Vec::with_capacity(self.n * k);
        let mut dist = Vec::with_capacity(self.n * k);
        for i in 0..self.n {
            idx.extend_from_slice(&self.neighbors(i)[..k]);
            dist.extend_from_slice(&self.distances(i)[..k]);
        }
        Ok(NeighborGraph {
            n: self.n,
            k,
            idx,
            dist,
        })
    }

    /// Same index sets, distances re-measured in another space (e.g. the
    /// embedding).
    pub fn remeasure(&self, points: &Matrix) -> Result<NeighborGraph> {
        if points.rows() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: points.rows(),
            });
        }
        let dist = (0..self.n)
            .flat_map(|i| {
                self.neighbors(i)
                    .iter()
                    .map(move |&j| dist(points.row(i), points.row(j)))
            })
            .collect();
        Ok(NeighborGraph {
            n: self.n,
            k: self.k,
            idx: self.idx.clone(),
            dist,
        })
    }
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k >= n {
        return Err(Error::param(
            "k",
            format!("must be in 1..={} for n = {n}, got {k}", n - 1),
        ));
    }
    Ok(())
}

#[inline]
fn by_dist_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

fn select_row(row: &mut Vec<(f64, usize)>, k: usize, idx: &mut Vec<usize>, dist: &mut Vec<f64>) {
    if k < row.len() {
        row.select_nth_unstable_by(k - 1, by_dist_then_index);
        row.truncate(k);
    }
    row.sort_unstable_by(by_dist_then_index);
    for &(d, j) in row.iter() {
        idx.push(j);
        dist.push(d);
    }
}

/// Exact kNN graph by brute force.
pub fn knn(points: &Matrix, k: usize) -> Result<NeighborGraph> {
    let n = points.rows();
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 points, got {n}")));
    }
    check_k(n, k)?;
    let mut idx = Vec::with_capacity(n * k);
    let mut out = Vec::with_capacity(n * k);
    let mut row = Vec::with_capacity(n);
    for i in 0..n {
        row.clear();
        let p = points.row(i);
        row.extend((0..n).filter(|&j| j != i).map(|j| (dist(p, points.row(j)), j)));
        select_row(&mut row, k, &mut idx, &mut out);
    }
    Ok(NeighborGraph { n, k, idx, dist: out })
}

/// kNN graph read off a precomputed distance matrix.
pub fn knn_from_distances(d: &DistanceMatrix, k: usize) -> Result<NeighborGraph> {
    let n = d.n();
    check_k(n, k)?;
    let mut idx = Vec::with_capacity(n * k);
    let mut out = Vec::with_capacity(n * k);
    let mut row = Vec::with_capacity(n);
    for i in 0..n {
        row.clear();
        row.extend(
            d.row(i)
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, &v)| (v, j)),
        );
        select_row(&mut row, k, &mut idx, &mut out);
    }
    Ok(NeighborGraph { n, k, idx, dist: out })
}
