//! Perplexity-calibrated input affinities.
//!
//! Conditionals `p_{j|i} ∝ exp(−β_i d_ij²)` are supported on the neighbor
//! graph's rows, then symmetrized into joint probabilities
//! `p_ij = (p_{j|i} + p_{i|j}) / 2n`.

use crate::error::{Error, Result};
use crate::neighbors::NeighborGraph;

/// Precision parameters found by bisection, one per point.
#[derive(Debug, Clone, PartialEq)]
pub struct PerplexityCalibration {
    pub beta: Vec<f64>,
    pub achieved_perplexity: Vec<f64>,
    /// Rows where bisection hit the iteration cap or the target was out of
    /// reach; their `beta` is the best value found.
    pub capped: Vec<bool>,
}

impl PerplexityCalibration {
    pub fn n_capped(&self) -> usize {
        self.capped.iter().filter(|&&c| c).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionOptions {
    pub tol_bits: f64,
    pub max_iter: usize,
    pub bracket: (f64, f64),
}

impl Default for BisectionOptions {
    fn default() -> Self {
        BisectionOptions {
            tol_bits: 1e-4,
            max_iter: 200,
            bracket: (1e-12, 1e12),
        }
    }
}

/// Shannon entropy in bits of `p_j ∝ exp(−b·t_j)`, and that distribution
/// written into `p`. `t` must be non-negative with a zero minimum.
fn entropy_bits(t: &[f64], b: f64, p: &mut [f64]) -> f64 {
    let mut z = 0.0;
    let mut bt = 0.0;
    for (pj, &tj) in p.iter_mut().zip(t) {
        let e = (-b * tj).exp();
        *pj = e;
        z += e;
        bt += tj * e;
    }
    p.iter_mut().for_each(|v| *v /= z);
    (z.ln() + b * bt / z) / std::f64::consts::LN_2
}

struct RowSolution {
    beta: f64,
    perplexity: f64,
    capped: bool,
}

/// Solves one row. Squared distances are shifted by their minimum and
/// divided by their mean spread, so the search runs over a dimensionless
/// precision and global distance scaling leaves the iterates unchanged.
fn calibrate_row(sq: &[f64], target_bits: f64, opts: &BisectionOptions, p: &mut [f64]) -> RowSolution {
    let min = sq.iter().copied().fold(f64::INFINITY, f64::min);
    let mut t: Vec<f64> = sq.iter().map(|v| v - min).collect();
    let spread = t.iter().sum::<f64>() / t.len() as f64;
    if spread == 0.0 {
        // all neighbors equidistant: the conditional is uniform for every β
        let h = entropy_bits(&t, 0.0, p);
        let fallback = if min > 0.0 { 1.0 / min } else { 1.0 };
        return RowSolution {
            beta: fallback,
            perplexity: h.exp2(),
            capped: (h - target_bits).abs() > opts.tol_bits,
        };
    }
    t.iter_mut().for_each(|v| *v /= spread);

    let (mut lo, mut hi) = opts.bracket;
    // H(b) decreases in b; widen until the bracket straddles the target
    let mut expansions = 0;
    while entropy_bits(&t, lo, p) < target_bits && expansions < 50 && lo > 1e-300 {
        lo *= 1e-6;
        expansions += 1;
    }
    while entropy_bits(&t, hi, p) > target_bits && expansions < 50 && hi < 1e300 {
        hi *= 1e6;
        expansions += 1;
    }

    let mut b = 1.0_f64.clamp(lo, hi);
    let mut h = entropy_bits(&t, b, p);
    let mut converged = (h - target_bits).abs() <= opts.tol_bits;
    let mut iter = 0;
    while !converged && iter < opts.max_iter {
        if h > target_bits {
            lo = b;
        } else {
            hi = b;
        }
        b = (lo * hi).sqrt();
        h = entropy_bits(&t, b, p);
        converged = (h - target_bits).abs() <= opts.tol_bits;
        iter += 1;
    }
    RowSolution {
        beta: b / spread,
        perplexity: h.exp2(),
        capped: !converged,
    }
}

fn check_perplexity(graph: &NeighborGraph, perplexity: f64) -> Result<()> {
    if !(perplexity > 1.0 && perplexity.is_finite()) {
        return Err(Error::param("perplexity", format!("must be > 1, got {perplexity}")));
    }
    if perplexity > graph.k() as f64 {
        return Err(Error::param(
            "perplexity",
            format!("{perplexity} exceeds the neighborhood size k = {}", graph.k()),
        ));
    }
    Ok(())
}

pub fn calibrate_betas(graph: &NeighborGraph, perplexity: f64) -> Result<PerplexityCalibration> {
    calibrate_betas_with(graph, perplexity, &BisectionOptions::default())
}

/// Finds `β_i` such that `2^H(p_{·|i}) = perplexity` over each row's
/// neighbors. A perplexity equal to `k` is accepted: it is reachable exactly
/// when a row's neighbors are equidistant, and is flagged otherwise.
pub fn calibrate_betas_with(
    graph: &NeighborGraph,
    perplexity: f64,
    opts: &BisectionOptions,
) -> Result<PerplexityCalibration> {
    check_perplexity(graph, perplexity)?;
    let n = graph.n();
    let target = perplexity.log2();
    let mut beta = Vec::with_capacity(n);
    let mut achieved = Vec::with_capacity(n);
    let mut capped = Vec::with_capacity(n);
    let mut p = vec![0.0; graph.k()];
    let mut sq = vec![0.0; graph.k()];
    for i in 0..n {
        let d = graph.distances(i);
        if d.iter().all(|&v| v == 0.0) {
            return Err(Error::DuplicatePoints { row: i });
        }
        sq.iter_mut().zip(d).for_each(|(s, v)| *s = v * v);
        let sol = calibrate_row(&sq, target, opts, &mut p);
        beta.push(sol.beta);
        achieved.push(sol.perplexity);
        capped.push(sol.capped);
    }
    Ok(PerplexityCalibration {
        beta,
        achieved_perplexity: achieved,
        capped,
    })
}

/// Conditional distribution of row `i` under precision `beta`, aligned with
/// `graph.neighbors(i)`.
pub fn conditional_row(graph: &NeighborGraph, i: usize, beta: f64) -> Vec<f64> {
    let d = graph.distances(i);
    let min_sq = d.iter().map(|v| v * v).fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = d.iter().map(|v| (-beta * (v * v - min_sq)).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    p
}

/// Sparse symmetric joint probabilities over neighbor pairs.
///
/// Stored as a symmetric adjacency (both `(i, j)` and `(j, i)` present with
/// the same value) with columns sorted inside each row.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl AffinityMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Neighbors of `i` with their `p_ij`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col[r.clone()].iter().copied().zip(self.val[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col[r.clone()].binary_search(&j) {
            Ok(pos) => self.val[r.start + pos],
            Err(_) => 0.0,
        }
    }

    /// Unordered pairs `i < j`, each once.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).filter(move |&(j, _)| j > i).map(move |(j, p)| (i, j, p)))
    }

    pub fn n_pairs(&self) -> usize {
        self.col.len() / 2
    }

    /// `Σ_{i≠j} p_ij` over ordered pairs; 1 for un-exaggerated affinities.
    pub fn ordered_mass(&self) -> f64 {
        self.val.iter().sum()
    }

    /// Every `p_ij` multiplied by `factor`.
    pub fn exaggerate(&self, factor: f64) -> AffinityMatrix {
        AffinityMatrix {
            val: self.val.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

/// `p_ij = (p_{j|i} + p_{i|j}) / 2n`, zero where `j ∉ N(i)` and `i ∉ N(j)`.
pub fn joint_affinities(graph: &NeighborGraph, calibration: &PerplexityCalibration) -> Result<AffinityMatrix> {
    let n = graph.n();
    if calibration.beta.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: calibration.beta.len(),
        });
    }
    let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * n * graph.k());
    for i in 0..n {
        let p = conditional_row(graph, i, calibration.beta[i]);
        for (&j, pj) in graph.neighbors(i).iter().zip(p) {
            entries.push((i, j, pj));
            entries.push((j, i, pj));
        }
    }
    entries.sort_by_key(|e| (e.0, e.1));

    let norm = 2.0 * n as f64;
    let mut row_ptr = vec![0; n + 1];
    let mut col = Vec::with_capacity(entries.len());
    let mut val = Vec::with_capacity(entries.len());
    let mut it = entries.into_iter().peekable();
    while let Some((i, j, mut v)) = it.next() {
        while let Some(&(i2, j2, v2)) = it.peek() {
            if (i2, j2) != (i, j) {
                break;
            }
            v += v2;
            it.next();
        }
        col.push(j);
        val.push(v / norm);
        row_ptr[i + 1] += 1;
    }
    for i in 0..n {
        row_ptr[i + 1] += row_ptr[i];
    }
    Ok(AffinityMatrix { n, row_ptr, col, val })
}
