//! Anomaly scorers applied in embedding space, and average-precision
//! evaluation. Higher scores mean more anomalous.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::neighbors::{dist, knn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detector {
    KnnDist,
    Lof,
    Iforest,
    Centroid,
}

impl Detector {
    pub const ALL: [Detector; 4] = [Detector::KnnDist, Detector::Lof, Detector::Iforest, Detector::Centroid];

    pub fn name(self) -> &'static str {
        match self {
            Detector::KnnDist => "knn_dist",
            Detector::Lof => "lof",
            Detector::Iforest => "iforest",
            Detector::Centroid => "centroid",
        }
    }
}

impl std::str::FromStr for Detector {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "knn" | "knn_dist" => Ok(Detector::KnnDist),
            "lof" => Ok(Detector::Lof),
            "iforest" | "if" => Ok(Detector::Iforest),
            "centroid" | "cent" => Ok(Detector::Centroid),
            other => Err(Error::param("detector", format!("unknown detector `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    /// Neighborhood size for `knn_dist` and `lof`.
    pub k: usize,
    pub trees: usize,
    pub subsample: usize,
    pub seed: u64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            k: 20,
            trees: 100,
            subsample: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScores {
    pub scores: Vec<f64>,
    pub detector: Detector,
    pub params: DetectorParams,
}

pub fn score(z: &Matrix, detector: Detector, params: &DetectorParams) -> Result<AnomalyScores> {
    let scores = match detector {
        Detector::KnnDist => knn_score(z, params.k)?,
        Detector::Lof => lof_score(z, params.k)?,
        Detector::Iforest => iforest_score(z, params.trees, params.subsample, params.seed)?,
        Detector::Centroid => centroid_score(z)?,
    };
    Ok(AnomalyScores {
        scores,
        detector,
        params: *params,
    })
}

/// Sum of distances to the `k` nearest other points.
pub fn knn_score(z: &Matrix, k: usize) -> Result<Vec<f64>> {
    let g = knn(z, k)?;
    Ok((0..z.rows()).map(|i| g.distance_sum(i)).collect())
}

const LOF_EPS: f64 = 1e-12;

/// Local outlier factor with reachability distances.
pub fn lof_score(z: &Matrix, k: usize) -> Result<Vec<f64>> {
    let n = z.rows();
    let g = knn(z, k)?;
    let kdist: Vec<f64> = (0..n).map(|i| g.distances(i)[k - 1]).collect();
    let lrd: Vec<f64> = (0..n)
        .map(|i| {
            let mean_reach = g
                .neighbors(i)
                .iter()
                .zip(g.distances(i))
                .map(|(&j, &d)| kdist[j].max(d))
                .sum::<f64>()
                / k as f64;
            1.0 / (mean_reach + LOF_EPS)
        })
        .collect();
    Ok((0..n)
        .map(|i| {
            let mean_lrd = g.neighbors(i).iter().map(|&j| lrd[j]).sum::<f64>() / k as f64;
            mean_lrd / lrd[i]
        })
        .collect())
}

/// Euclidean distance to the mean point.
pub fn centroid_score(z: &Matrix) -> Result<Vec<f64>> {
    if z.rows() == 0 {
        return Err(Error::InvalidInput("no points".into()));
    }
    let mean = z.column_means();
    Ok(z.iter_rows().map(|r| dist(r, &mean)).collect())
}

/// Harmonic number `H(m) = Σ_{i=1}^m 1/i`.
fn harmonic(m: usize) -> f64 {
    (1..=m).map(|i| 1.0 / i as f64).sum()
}

/// Average path length of an unsuccessful BST search over `m` points,
/// `c(m) = 2H(m−1) − 2(m−1)/m`, with `c(m) = 0` for `m ≤ 1`.
pub fn average_path_length(m: usize) -> f64 {
    if m <= 1 {
        return 0.0;
    }
    let mf = m as f64;
    2.0 * harmonic(m - 1) - 2.0 * (mf - 1.0) / mf
}

enum Node {
    Leaf {
        size: usize,
    },
    Split {
        feature: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

fn build_tree(z: &Matrix, rows: &mut [usize], depth: usize, max_depth: usize, rng: &mut ChaCha8Rng) -> Node {
    if rows.len() <= 1 || depth >= max_depth {
        return Node::Leaf { size: rows.len() };
    }
    let d = z.cols();
    let mut ranges: Vec<(usize, f64, f64)> = Vec::with_capacity(d);
    for f in 0..d {
        let (lo, hi) = rows
            .iter()
            .map(|&r| z.get(r, f))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if hi > lo {
            ranges.push((f, lo, hi));
        }
    }
    if ranges.is_empty() {
        return Node::Leaf { size: rows.len() };
    }
    let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
    let u: f64 = rng.random();
    let value = lo + u * (hi - lo);
    // partition in place: left holds values < split
    let mut mid = 0;
    for i in 0..rows.len() {
        if z.get(rows[i], feature) < value {
            rows.swap(i, mid);
            mid += 1;
        }
    }
    if mid == 0 || mid == rows.len() {
        // u landed on the range boundary; the minimum alone goes left
        mid = partition_min(z, rows, feature, lo);
    }
    let (left, right) = rows.split_at_mut(mid);
    Node::Split {
        feature,
        value,
        left: Box::new(build_tree(z, left, depth + 1, max_depth, rng)),
        right: Box::new(build_tree(z, right, depth + 1, max_depth, rng)),
    }
}

fn partition_min(z: &Matrix, rows: &mut [usize], feature: usize, lo: f64) -> usize {
    let mut mid = 0;
    for i in 0..rows.len() {
        if z.get(rows[i], feature) <= lo {
            rows.swap(i, mid);
            mid += 1;
        }
    }
    mid
}

fn path_length(node: &Node, x: &[f64], depth: usize) -> f64 {
    match node {
        Node::Leaf { size } => depth as f64 + average_path_length(*size),
        Node::Split {
            feature,
            value,
            left,
            right,
        } => {
            let next = if x[*feature] < *value { left } else { right };
            path_length(next, x, depth + 1)
        }
    }
}

/// Isolation forest scores `2^(−E[h(x)] / c(ψ))`.
///
/// Tree `t` draws from its own generator seeded with `seed + t`, so the
/// result does not depend on construction order.
pub fn iforest_score(z: &Matrix, trees: usize, subsample: usize, seed: u64) -> Result<Vec<f64>> {
    let n = z.rows();
    if n < 2 {
        return Err(Error::InvalidInput("isolation forest needs at least 2 points".into()));
    }
    if trees == 0 || subsample < 2 {
        return Err(Error::param("iforest", "need at least 1 tree and subsample ≥ 2"));
    }
    let psi = subsample.min(n);
    let max_depth = (psi as f64).log2().ceil() as usize;
    let mut total = vec![0.0; n];
    for t in 0..trees {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
        let mut rows = index::sample(&mut rng, n, psi).into_vec();
        let tree = build_tree(z, &mut rows, 0, max_depth, &mut rng);
        for (i, acc) in total.iter_mut().enumerate() {
            *acc += path_length(&tree, z.row(i), 0);
        }
    }
    let c = average_path_length(psi);
    Ok(total.into_iter().map(|h| (-(h / trees as f64) / c).exp2()).collect())
}

/// Average precision: positives in descending score order, precision taken
/// after each block of tied scores and weighted by the block's recall gain.
pub fn auprc(scores: &[f64], anomaly: &[bool]) -> Result<f64> {
    if scores.len() != anomaly.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: anomaly.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::InvalidInput(format!("score {i} is not finite")));
    }
    let positives = anomaly.iter().filter(|&&a| a).count();
    if positives == 0 || positives == anomaly.len() {
        return Err(Error::InvalidInput(
            "AUPRC needs at least one positive and one negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        let mut block_tp = 0;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            block_tp += anomaly[order[end]] as usize;
            end += 1;
        }
        tp += block_tp;
        seen += end - start;
        if block_tp > 0 {
            ap += (tp as f64 / seen as f64) * (block_tp as f64 / positives as f64);
        }
        start = end;
    }
    Ok(ap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::average_ranks;

    fn random(n: usize, dim: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(n, dim, v).unwrap()
    }

    fn d(x: &Matrix, i: usize, j: usize) -> f64 {
        (0..x.cols())
            .map(|a| (x.get(i, a) - x.get(j, a)).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn grid_with_outlier() -> Matrix {
        let mut rows: Vec<Vec<f64>> = (0..100).map(|i| vec![(i % 10) as f64, (i / 10) as f64]).collect();
        rows.push(vec![40.0, 40.0]);
        Matrix::from_rows(&rows).unwrap()
    }

    fn argmax(v: &[f64]) -> usize {
        (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap()
    }

    /// Neighbor lists from a full sort, ties by index.
    fn sorted_neighbors(z: &Matrix, i: usize) -> Vec<usize> {
        let mut o: Vec<usize> = (0..z.rows()).filter(|&j| j != i).collect();
        o.sort_by(|&a, &b| d(z, i, a).partial_cmp(&d(z, i, b)).unwrap().then(a.cmp(&b)));
        o
    }

    #[test]
    fn knn_score_cases() {
        let z = grid_with_outlier();
        assert_eq!(argmax(&knn_score(&z, 5).unwrap()), 100);
        let same = Matrix::from_rows(&[[1.0, 1.0]; 5]).unwrap();
        assert!(knn_score(&same, 3).unwrap().iter().all(|&s| s == 0.0));
        assert!(knn_score(&same, 5).is_err());

        let r = random(30, 3, 1);
        let s = knn_score(&r, 4).unwrap();
        for i in 0..30 {
            let want: f64 = sorted_neighbors(&r, i)[..4].iter().map(|&j| d(&r, i, j)).sum();
            assert!((s[i] - want).abs() < 1e-12);
        }
    }

    fn lof_oracle(z: &Matrix, k: usize) -> Vec<f64> {
        let n = z.rows();
        let nb: Vec<Vec<usize>> = (0..n).map(|i| sorted_neighbors(z, i)[..k].to_vec()).collect();
        let kdist: Vec<f64> = (0..n).map(|i| d(z, i, nb[i][k - 1])).collect();
        let reach = |i: usize, j: usize| kdist[j].max(d(z, i, j));
        let lrd: Vec<f64> = (0..n)
            .map(|i| 1.0 / (nb[i].iter().map(|&j| reach(i, j)).sum::<f64>() / k as f64 + 1e-12))
            .collect();
        (0..n)
            .map(|i| nb[i].iter().map(|&j| lrd[j] / lrd[i]).sum::<f64>() / k as f64)
            .collect()
    }

    #[test]
    fn lof_cases() {
        let z = grid_with_outlier();
        let s = lof_score(&z, 8).unwrap();
        assert_eq!(argmax(&s), 100);
        assert!(s[100] > 1.5);
        let grid = z.select_rows(&(0..100).collect::<Vec<_>>());
        let g = lof_score(&grid, 8).unwrap();
        for i in 0..100 {
            let (x, y) = (i % 10, i / 10);
            if (2..8).contains(&x) && (2..8).contains(&y) {
                assert!((g[i] - 1.0).abs() <= 0.15, "{i}: {}", g[i]);
            }
        }
        let r = random(12, 2, 3);
        for (a, b) in lof_score(&r, 3).unwrap().iter().zip(lof_oracle(&r, 3)) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn average_path_length_closed_form() {
        assert_eq!(average_path_length(1), 0.0);
        assert!((average_path_length(2) - 1.0).abs() < 1e-12);
        // harmonic sum evaluated independently in reverse order
        let h255: f64 = (1..=255).rev().map(|i| 1.0 / i as f64).sum();
        let want = 2.0 * h255 - 2.0 * 255.0 / 256.0;
        assert!((average_path_length(256) - want).abs() < 1e-6);
        assert!((average_path_length(256) - 10.2487).abs() < 1e-4);
    }

    #[test]
    fn iforest_isolates_extreme_point() {
        let mut wins = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut v: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
        v.push(25.0);
        let z = Matrix::from_vec(201, 1, v).unwrap();
        for seed in 0..10 {
            let s = iforest_score(&z, 100, 256, seed).unwrap();
            if argmax(&s) == 200 {
                wins += 1;
            }
        }
        assert!(wins > 5);
    }

    #[test]
    fn iforest_identical_points_tie() {
        let z = Matrix::from_rows(&[[3.0, 3.0]; 40]).unwrap();
        let s = iforest_score(&z, 20, 16, 1).unwrap();
        assert!(s.iter().all(|v| (v - s[0]).abs() < 1e-9));
    }

    #[test]
    fn iforest_deterministic_and_scale_invariant() {
        let z = random(150, 2, 6);
        let a = iforest_score(&z, 50, 64, 9).unwrap();
        assert_eq!(a, iforest_score(&z, 50, 64, 9).unwrap());
        let mut zs = z.clone();
        zs.scale(8.0);
        zs.translate(&[3.0, -1.0]);
        let b = iforest_score(&zs, 50, 64, 9).unwrap();
        assert_eq!(average_ranks(&a), average_ranks(&b));
    }

    #[test]
    fn centroid_cases() {
        let z = Matrix::from_rows(&[
            [1.0, 0.0],
            [-2.0, 0.0],
            [0.0, 3.0],
            [0.0, -2.0],
            [0.0, 0.0],
            [1.0, -1.0],
        ])
        .unwrap();
        let s = centroid_score(&z).unwrap();
        assert_eq!(s[4], 0.0);
        assert!((s[2] - 3.0).abs() < 1e-15);
        let r = random(25, 3, 7);
        let m: Vec<f64> = (0..3)
            .map(|a| (0..25).map(|i| r.get(i, a)).sum::<f64>() / 25.0)
            .collect();
        for (i, v) in centroid_score(&r).unwrap().iter().enumerate() {
            let want = (0..3).map(|a| (r.get(i, a) - m[a]).powi(2)).sum::<f64>().sqrt();
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn detectors_translation_and_scale_behaviour() {
        let z = random(60, 2, 8);
        let mut moved = z.clone();
        moved.translate(&[10.0, -4.0]);
        let mut scaled = z.clone();
        scaled.scale(3.0);
        let k0 = knn_score(&z, 5).unwrap();
        for (a, b) in k0.iter().zip(knn_score(&moved, 5).unwrap()) {
            assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in k0.iter().zip(knn_score(&scaled, 5).unwrap()) {
            assert!((3.0 * a - b).abs() < 1e-9);
        }
        let c0 = centroid_score(&z).unwrap();
        for (a, b) in c0.iter().zip(centroid_score(&scaled).unwrap()) {
            assert!((3.0 * a - b).abs() < 1e-9);
        }
        let l0 = lof_score(&z, 6).unwrap();
        let l1 = lof_score(&scaled, 6).unwrap();
        let l2 = lof_score(&moved, 6).unwrap();
        for ((a, b), c) in l0.iter().zip(&l1).zip(&l2) {
            assert!((a - b).abs() < 1e-9 && (a - c).abs() < 1e-9);
        }
    }

    /// Enumerates every distinct threshold and step-integrates precision
    /// over recall.
    fn auprc_oracle(scores: &[f64], flags: &[bool]) -> f64 {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        let pos = flags.iter().filter(|&&f| f).count() as f64;
        let mut prev_recall = 0.0;
        let mut area = 0.0;
        for t in thresholds {
            let tp = scores.iter().zip(flags).filter(|(s, f)| **s >= t && **f).count() as f64;
            let pp = scores.iter().filter(|s| **s >= t).count() as f64;
            let recall = tp / pos;
            area += (recall - prev_recall) * (tp / pp);
            prev_recall = recall;
        }
        area
    }

    #[test]
    fn auprc_cases() {
        let flags = [true, true, false, false, false];
        assert_eq!(auprc(&[5.0, 4.0, 3.0, 2.0, 1.0], &flags).unwrap(), 1.0);
        assert!((auprc(&[1.0; 5], &flags).unwrap() - 0.4).abs() < 1e-15);
        assert!(auprc(&[1.0, 2.0], &[true, true]).is_err());
        assert!(auprc(&[1.0, 2.0], &[false, false]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..200 {
            // coarse scores so tied blocks occur
            let s: Vec<f64> = (0..10).map(|_| rng.random_range(0..5) as f64).collect();
            let mut f: Vec<bool> = (0..10).map(|_| rng.random_bool(0.3)).collect();
            f[0] = true;
            f[1] = false;
            assert!((auprc(&s, &f).unwrap() - auprc_oracle(&s, &f)).abs() < 1e-9);
            let t: Vec<f64> = s.iter().map(|v| (v * 0.7).exp() - 3.0).collect();
            assert!((auprc(&s, &f).unwrap() - auprc(&t, &f).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn detector_parsing() {
        let names: Vec<Detector> = "knn,lof,iforest,centroid"
            .split(',')
            .map(|s| s.parse().unwrap())
            .collect();
        assert_eq!(names, Detector::ALL.to_vec());
        assert!("ocsvm".parse::<Detector>().is_err());
    }
}
