//! The DR-SNE optimizer.
//!
//! Objective per iteration `t`:
//!
//! * `t < warmup_iters`: sparse KL with exaggerated input affinities;
//! * otherwise: sparse KL + `lambda` × log-density discrepancy.
//!
//! Updates are Adam steps on the global-norm-clipped gradient, starting from
//! an isotropic Gaussian initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::affinity::{calibrate_betas, joint_affinities, AffinityMatrix};
use crate::density::DensityTerm;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::MetricReport;
use crate::neighbors::{knn, sq_dist, NeighborGraph};

/// Name of the generator used for initialization, recorded in provenance.
pub const RNG_NAME: &str = "ChaCha8Rng (rand_chacha 0.9), seed_from_u64";

/// Which pairs carry input affinity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AffinitySupport {
    /// Conditionals restricted to the `k_kl` nearest neighbors.
    #[default]
    Knn,
    /// Conditionals over all other points.
    Dense,
}

/// Which index sets define the low-dimensional densities during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum DensityNeighbors {
    /// High-dimensional `N_k(i)` measured with embedding distances.
    #[default]
    Fixed,
    /// kNN recomputed in the embedding every `every` iterations.
    Recompute { every: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lambda: f64,
    /// Neighborhood size of the affinity graph; `None` means `⌈3·perplexity⌉`.
    pub k_kl: Option<usize>,
    pub k_density: usize,
    pub perplexity: f64,
    pub iterations: usize,
    pub warmup_iters: usize,
    pub exaggeration_factor: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub init_std: f64,
    pub dim: usize,
    pub seed: u64,
    pub affinity_support: AffinitySupport,
    pub density_neighbors: DensityNeighbors,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lambda: 0.01,
            k_kl: None,
            k_density: 300,
            perplexity: 30.0,
            iterations: 1000,
            warmup_iters: 250,
            exaggeration_factor: 12.0,
            learning_rate: 0.5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 5.0,
            init_std: 1e-2,
            dim: 2,
            seed: 0,
            affinity_support: AffinitySupport::Knn,
            density_neighbors: DensityNeighbors::Fixed,
        }
    }
}

impl OptimizerConfig {
    pub fn resolved_k_kl(&self) -> usize {
        self.k_kl.unwrap_or_else(|| (3.0 * self.perplexity).ceil() as usize)
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("adam_eps", self.adam_eps),
            ("clip_norm", self.clip_norm),
            ("init_std", self.init_std),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be positive and finite, got {v}")));
            }
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::param(name, format!("must be in [0, 1), got {v}")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::param("lambda", format!("must be ≥ 0, got {}", self.lambda)));
        }
        if !(self.exaggeration_factor >= 1.0 && self.exaggeration_factor.is_finite()) {
            return Err(Error::param(
                "exaggeration_factor",
                format!("must be ≥ 1, got {}", self.exaggeration_factor),
            ));
        }
        if !(self.perplexity > 1.0 && self.perplexity.is_finite()) {
            return Err(Error::param(
                "perplexity",
                format!("must be > 1, got {}", self.perplexity),
            ));
        }
        if self.iterations == 0 {
            return Err(Error::param("iterations", "must be positive"));
        }
        if self.warmup_iters > self.iterations {
            return Err(Error::param(
                "warmup_iters",
                format!("{} exceeds iterations = {}", self.warmup_iters, self.iterations),
            ));
        }
        if !(1..=3).contains(&self.dim) {
            return Err(Error::param("dim", format!("must be 1, 2 or 3, got {}", self.dim)));
        }
        if self.k_density == 0 {
            return Err(Error::param("k_density", "must be positive"));
        }
        if let DensityNeighbors::Recompute { every: 0 } = self.density_neighbors {
            return Err(Error::param("density_neighbors", "recompute interval must be positive"));
        }
        if self.affinity_support == AffinitySupport::Knn && self.perplexity >= self.resolved_k_kl() as f64 {
            return Err(Error::param(
                "perplexity",
                format!(
                    "must be below k_kl = {} (the neighborhood cannot carry the target entropy)",
                    self.resolved_k_kl()
                ),
            ));
        }
        Ok(())
    }

    /// Data-dependent checks for `n` points.
    pub fn validate_for(&self, n: usize) -> Result<()> {
        self.validate()?;
        if n < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 points, got {n}")));
        }
        if self.k_density > n - 1 {
            return Err(Error::param(
                "k_density",
                format!("{} exceeds n − 1 = {}", self.k_density, n - 1),
            ));
        }
        let k_kl = self.kl_neighbors(n);
        if k_kl > n - 1 {
            return Err(Error::param("k_kl", format!("{k_kl} exceeds n − 1 = {}", n - 1)));
        }
        if self.perplexity >= k_kl as f64 {
            return Err(Error::param(
                "perplexity",
                format!("must be below the affinity neighborhood size {k_kl}"),
            ));
        }
        Ok(())
    }

    fn kl_neighbors(&self, n: usize) -> usize {
        match self.affinity_support {
            AffinitySupport::Knn => self.resolved_k_kl(),
            AffinitySupport::Dense => n - 1,
        }
    }
}

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    /// KL term as optimized (with exaggerated affinities during warm-up).
    pub kl_loss: f64,
    /// Unweighted density discrepancy; not evaluated during warm-up.
    pub dens_loss: Option<f64>,
    pub total: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub rng: String,
    pub config: OptimizerConfig,
    pub iterations: usize,
    /// Rows whose perplexity bisection did not converge.
    pub capped_rows: usize,
    pub trace: Vec<LossRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub z: Matrix,
    pub provenance: Provenance,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.z.cols()
    }
}

/// Dense Student-t similarities `q_ij = w_ij / Σ_{k≠l} w_kl`,
/// `w_ij = (1 + ‖z_i − z_j‖²)⁻¹`, zero diagonal.
pub fn student_t_similarities(z: &Matrix) -> Matrix {
    let n = z.rows();
    let mut q = Matrix::zeros(n, n);
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let w = 1.0 / (1.0 + sq_dist(z.row(i), z.row(j)));
            q.set(i, j, w);
            q.set(j, i, w);
            total += 2.0 * w;
        }
    }
    q.scale(1.0 / total);
    q
}

/// `(1/n) Σ_i Σ_{j : p_ij > 0} p_ij log(p_ij / q_ij)` over ordered pairs.
pub fn kl_loss(p: &AffinityMatrix, q: &Matrix) -> Result<f64> {
    let n = p.n();
    if q.rows() != n || q.cols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: q.rows(),
        });
    }
    let mut s = 0.0;
    for i in 0..n {
        for (j, pij) in p.row(i) {
            if pij > 0.0 {
                let qij = q.get(i, j).max(f64::MIN_POSITIVE);
                s += pij * (pij / qij).ln();
            }
        }
    }
    Ok(s / n as f64)
}

/// Exact gradient of [`kl_loss`] with `q` induced by `z`.
pub fn kl_gradient(p: &AffinityMatrix, z: &Matrix) -> Result<Matrix> {
    if z.rows() != p.n() {
        return Err(Error::DimensionMismatch {
            expected: p.n(),
            got: z.rows(),
        });
    }
    let mut grad = Matrix::zeros(z.rows(), z.cols());
    let mut scratch = KlScratch::new(z.rows(), z.cols());
    let plogp = p_log_p(p);
    kl_loss_and_gradient(p, plogp, z, grad.as_mut_slice(), &mut scratch);
    Ok(grad)
}

fn p_log_p(p: &AffinityMatrix) -> f64 {
    (0..p.n())
        .flat_map(|i| p.row(i))
        .filter(|&(_, v)| v > 0.0)
        .map(|(_, v)| v * v.ln())
        .sum()
}

struct KlScratch {
    rep: Vec<f64>,
}

impl KlScratch {
    fn new(n: usize, d: usize) -> Self {
        KlScratch { rep: vec![0.0; n * d] }
    }
}

/// One O(n²) pass over unordered pairs: returns `Σ_{i<j} w_ij` and writes
/// `rep_i = Σ_j w_ij² (z_i − z_j)`.
fn repulsion_pass(z: &Matrix, rep: &mut [f64]) -> f64 {
    let n = z.rows();
    let d = z.cols();
    rep.iter_mut().for_each(|v| *v = 0.0);
    let mut wsum = 0.0;
    if d == 2 {
        let c = z.as_slice();
        for i in 0..n {
            let (xi, yi) = (c[2 * i], c[2 * i + 1]);
            let (mut gx, mut gy) = (0.0, 0.0);
            let rest = &mut rep[2 * (i + 1)..];
            for (pj, rj) in c[2 * (i + 1)..].chunks_exact(2).zip(rest.chunks_exact_mut(2)) {
                let dx = xi - pj[0];
                let dy = yi - pj[1];
                let w = 1.0 / (1.0 + dx * dx + dy * dy);
                wsum += w;
                let w2 = w * w;
                gx += w2 * dx;
                gy += w2 * dy;
                rj[0] -= w2 * dx;
                rj[1] -= w2 * dy;
            }
            rep[2 * i] += gx;
            rep[2 * i + 1] += gy;
        }
    } else {
        let mut diff = vec![0.0; d];
        for i in 0..n {
            for j in (i + 1)..n {
                let (zi, zj) = (z.row(i), z.row(j));
                let mut d2 = 0.0;
                for a in 0..d {
                    diff[a] = zi[a] - zj[a];
                    d2 += diff[a] * diff[a];
                }
                let w = 1.0 / (1.0 + d2);
                wsum += w;
                let w2 = w * w;
                for a in 0..d {
                    rep[i * d + a] += w2 * diff[a];
                    rep[j * d + a] -= w2 * diff[a];
                }
            }
        }
    }
    wsum
}

/// Adds the KL gradient into `grad` and returns the loss.
///
/// With `Z = Σ_{k≠l} w_kl` and `P = Σ p_ij`:
/// `L = (1/n)[Σ p log p − Σ p log w + P log Z]` and
/// `∇_i L = (4/n)[Σ_j p_ij w_ij (z_i − z_j) − (P/Z) Σ_j w_ij² (z_i − z_j)]`.
fn kl_loss_and_gradient(p: &AffinityMatrix, plogp: f64, z: &Matrix, grad: &mut [f64], scratch: &mut KlScratch) -> f64 {
    let n = z.rows();
    let d = z.cols();
    let zsum = 2.0 * repulsion_pass(z, &mut scratch.rep);
    let nf = n as f64;

    let mut p_total = 0.0;
    let mut p_log_w = 0.0;
    for i in 0..n {
        let zi = z.row(i);
        for (j, pij) in p.row(i) {
            let zj = z.row(j);
            let one_plus = 1.0 + sq_dist(zi, zj);
            let w = 1.0 / one_plus;
            p_total += pij;
            p_log_w -= pij * one_plus.ln();
            let f = 4.0 / nf * pij * w;
            for a in 0..d {
                grad[i * d + a] += f * (zi[a] - zj[a]);
            }
        }
    }
    let rep_scale = 4.0 / nf * p_total / zsum;
    for (g, r) in grad.iter_mut().zip(&scratch.rep) {
        *g -= rep_scale * r;
    }
    (plogp - p_log_w + p_total * zsum.ln()) / nf
}

/// Stateful optimizer; [`run_drsne`] drives it to completion, interactive
/// callers can step it.
pub struct Optimizer {
    config: OptimizerConfig,
    p: AffinityMatrix,
    p_exaggerated: AffinityMatrix,
    plogp: f64,
    plogp_exaggerated: f64,
    density: DensityTerm,
    capped_rows: usize,
    z: Matrix,
    grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    adam_t: i32,
    scratch: KlScratch,
    iteration: usize,
    trace: Vec<LossRecord>,
}

impl Optimizer {
    /// Builds neighbor graphs, calibrates affinities and draws the initial
    /// coordinates.
    pub fn new(data: &Matrix, config: OptimizerConfig) -> Result<Optimizer> {
        let n = data.rows();
        config.validate_for(n)?;
        if let Some((row, col)) = data.find_non_finite() {
            return Err(Error::NonFinite { row, col });
        }
        let k_kl = config.kl_neighbors(n);
        let k_max = k_kl.max(config.k_density);
        let graph = knn(data, k_max)?;
        let kl_graph = if k_kl == k_max {
            graph.clone()
        } else {
            graph.truncate(k_kl)?
        };
        let density_graph = if config.k_density == k_max {
            graph
        } else {
            graph.truncate(config.k_density)?
        };
        Self::from_graphs(&kl_graph, density_graph, config)
    }

    /// Same as [`Optimizer::new`] with prebuilt graphs.
    pub fn from_graphs(
        kl_graph: &NeighborGraph,
        density_graph: NeighborGraph,
        config: OptimizerConfig,
    ) -> Result<Optimizer> {
        let n = kl_graph.n();
        config.validate_for(n)?;
        let cal = calibrate_betas(kl_graph, config.perplexity)?;
        let p = joint_affinities(kl_graph, &cal)?;
        let p_exaggerated = p.exaggerate(config.exaggeration_factor);
        let plogp = p_log_p(&p);
        let plogp_exaggerated = p_log_p(&p_exaggerated);

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, config.init_std).map_err(|e| Error::param("init_std", e.to_string()))?;
        let d = config.dim;
        let z = Matrix::from_vec(n, d, (0..n * d).map(|_| normal.sample(&mut rng)).collect())?;

        Ok(Optimizer {
            density: DensityTerm::new(density_graph),
            capped_rows: cal.n_capped(),
            p,
            p_exaggerated,
            plogp,
            plogp_exaggerated,
            grad: vec![0.0; n * d],
            m: vec![0.0; n * d],
            v: vec![0.0; n * d],
            adam_t: 0,
            scratch: KlScratch::new(n, d),
            iteration: 0,
            trace: Vec::with_capacity(config.iterations),
            z,
            config,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn coordinates(&self) -> &Matrix {
        &self.z
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.iterations
    }

    pub fn trace(&self) -> &[LossRecord] {
        &self.trace
    }

    pub fn affinities(&self) -> &AffinityMatrix {
        &self.p
    }

    pub fn density_term(&self) -> &DensityTerm {
        &self.density
    }

    /// Changes the density weight for subsequent iterations.
    pub fn set_lambda(&mut self, lambda: f64) -> Result<()> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::param("lambda", format!("must be ≥ 0, got {lambda}")));
        }
        self.config.lambda = lambda;
        Ok(())
    }

    /// Total post-warm-up objective at `z`, for diagnostics and tests.
    pub fn objective(&self, z: &Matrix) -> f64 {
        let q = student_t_similarities(z);
        kl_loss(&self.p, &q).expect("shapes checked at construction") + self.config.lambda * self.density.loss(z)
    }

    fn in_warmup(&self) -> bool {
        self.iteration < self.config.warmup_iters
    }

    /// One optimization step.
    pub fn step(&mut self) -> Result<LossRecord> {
        let t = self.iteration;
        let warmup = self.in_warmup();
        if t == self.config.warmup_iters && t > 0 {
            // the gradient scale changes at the phase switch; stale second
            // moments from the exaggerated phase would stall the step size
            self.m.iter_mut().for_each(|v| *v = 0.0);
            self.v.iter_mut().for_each(|v| *v = 0.0);
            self.adam_t = 0;
        }
        if let (DensityNeighbors::Recompute { every }, false) = (self.config.density_neighbors, warmup) {
            if (t - self.config.warmup_iters).is_multiple_of(every) {
                let k = self.density.graph.k();
                self.density.graph = knn(&self.z, k)?;
            }
        }

        self.grad.iter_mut().for_each(|g| *g = 0.0);
        let (p, plogp) = if warmup {
            (&self.p_exaggerated, self.plogp_exaggerated)
        } else {
            (&self.p, self.plogp)
        };
        let kl = kl_loss_and_gradient(p, plogp, &self.z, &mut self.grad, &mut self.scratch);

        let lambda = self.config.lambda;
        let dens = if warmup {
            None
        } else if lambda > 0.0 {
            Some(self.density.loss_and_gradient(&self.z, lambda, &mut self.grad))
        } else {
            Some(self.density.loss(&self.z))
        };
        let total = kl + lambda * dens.unwrap_or(0.0);

        let grad_norm = self.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !(total.is_finite() && grad_norm.is_finite()) {
            return Err(Error::Diverged {
                iteration: t,
                reason: format!("non-finite loss {total} or gradient norm {grad_norm}"),
                last_finite: Box::new(self.z.clone()),
            });
        }
        if grad_norm > self.config.clip_norm {
            let s = self.config.clip_norm / grad_norm;
            self.grad.iter_mut().for_each(|g| *g *= s);
        }

        let previous = self.z.clone();
        self.adam_update();
        if let Some((row, col)) = self.z.find_non_finite() {
            self.z = previous.clone();
            return Err(Error::Diverged {
                iteration: t,
                reason: format!("coordinate ({row}, {col}) became non-finite"),
                last_finite: Box::new(previous),
            });
        }

        let record = LossRecord {
            iteration: t,
            kl_loss: kl,
            dens_loss: dens,
            total,
            grad_norm,
        };
        self.trace.push(record);
        self.iteration += 1;
        Ok(record)
    }

    fn adam_update(&mut self) {
        let c = &self.config;
        self.adam_t += 1;
        let bc1 = 1.0 - c.adam_beta1.powi(self.adam_t);
        let bc2 = 1.0 - c.adam_beta2.powi(self.adam_t);
        let z = self.z.as_mut_slice();
        for i in 0..z.len() {
            let g = self.grad[i];
            self.m[i] = c.adam_beta1 * self.m[i] + (1.0 - c.adam_beta1) * g;
            self.v[i] = c.adam_beta2 * self.v[i] + (1.0 - c.adam_beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            z[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.adam_eps);
        }
    }

    /// Runs the remaining iterations.
    pub fn run(mut self) -> Result<Embedding> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> Embedding {
        Embedding {
            provenance: Provenance {
                seed: self.config.seed,
                rng: RNG_NAME.to_string(),
                iterations: self.iteration,
                capped_rows: self.capped_rows,
                trace: self.trace,
                metrics: None,
                config: self.config,
            },
            z: self.z,
        }
    }
}

/// Full optimization from preprocessed data.
pub fn run_drsne(data: &Matrix, config: &OptimizerConfig) -> Result<Embedding> {
    Optimizer::new(data, config.clone())?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affinity::PerplexityCalibration;
    use crate::density::density_loss_gradient;
    use rand::{Rng, SeedableRng};

    fn random(n: usize, dim: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(n, dim, v).unwrap()
    }

    fn affinities(x: &Matrix, k: usize, perplexity: f64) -> AffinityMatrix {
        let g = knn(x, k).unwrap();
        joint_affinities(&g, &calibrate_betas(&g, perplexity).unwrap()).unwrap()
    }

    /// Dense KL straight from the definitions.
    fn kl_oracle(p: &AffinityMatrix, z: &Matrix) -> f64 {
        let n = z.rows();
        let mut w = vec![vec![0.0; n]; n];
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let mut d2 = 0.0;
                    for a in 0..z.cols() {
                        d2 += (z.get(i, a) - z.get(j, a)).powi(2);
                    }
                    w[i][j] = 1.0 / (1.0 + d2);
                    total += w[i][j];
                }
            }
        }
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                let pij = p.get(i, j);
                if pij > 0.0 {
                    s += pij * (pij / (w[i][j] / total)).ln();
                }
            }
        }
        s / n as f64
    }

    fn numeric_grad(f: impl Fn(&Matrix) -> f64, z: &Matrix) -> Vec<f64> {
        let h = 1e-5;
        (0..z.as_slice().len())
            .map(|c| {
                let mut zp = z.clone();
                zp.as_mut_slice()[c] += h;
                let mut zm = z.clone();
                zm.as_mut_slice()[c] -= h;
                (f(&zp) - f(&zm)) / (2.0 * h)
            })
            .collect()
    }

    fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
        let scale = numeric.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        analytic
            .iter()
            .zip(numeric)
            .map(|(a, b)| (a - b).abs() / b.abs().max(1e-3 * scale).max(1e-15))
            .fold(0.0, f64::max)
    }

    #[test]
    fn two_point_similarities() {
        let z = Matrix::from_rows(&[[0.0, 0.0], [10.0, -3.0]]).unwrap();
        let q = student_t_similarities(&z);
        assert_eq!(q.get(0, 1), 0.5);
        assert_eq!(q.get(1, 0), 0.5);
        assert_eq!(q.get(0, 0), 0.0);
    }

    #[test]
    fn equilateral_triangle_similarities() {
        let h = 3f64.sqrt() / 2.0;
        let z = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.5, h]]).unwrap();
        let q = student_t_similarities(&z);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!((q.get(i, j) - 1.0 / 6.0).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn similarities_match_double_loop() {
        let z = random(15, 2, 3);
        let q = student_t_similarities(&z);
        let mut w = vec![0.0; 225];
        let mut total = 0.0;
        for i in 0..15 {
            for j in 0..15 {
                if i != j {
                    let d2 = (z.get(i, 0) - z.get(j, 0)).powi(2) + (z.get(i, 1) - z.get(j, 1)).powi(2);
                    w[i * 15 + j] = 1.0 / (1.0 + d2);
                    total += w[i * 15 + j];
                }
            }
        }
        let mut sum = 0.0;
        for c in 0..225 {
            assert!((q.as_slice()[c] - w[c] / total).abs() < 1e-15);
            sum += q.as_slice()[c];
        }
        assert!((sum - 1.0).abs() < 1e-12);
    }

    fn two_point_p() -> AffinityMatrix {
        let x = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let g = knn(&x, 1).unwrap();
        let cal = PerplexityCalibration {
            beta: vec![1.0; 2],
            achieved_perplexity: vec![1.0; 2],
            capped: vec![false; 2],
        };
        joint_affinities(&g, &cal).unwrap()
    }

    #[test]
    fn two_point_kl_is_flat() {
        let p = two_point_p();
        let z = Matrix::from_rows(&[[0.0, 0.0], [4.0, 1.0]]).unwrap();
        assert!(kl_loss(&p, &student_t_similarities(&z)).unwrap().abs() < 1e-15);
        assert!(kl_gradient(&p, &z).unwrap().norm() < 1e-15);
    }

    #[test]
    fn kl_positive_when_q_flatter_than_p() {
        let x = random(20, 3, 4);
        let p = affinities(&x, 6, 3.0);
        // coincident-ish points: q nearly uniform
        let z = random(20, 2, 5);
        let mut z_small = z.clone();
        z_small.scale(1e-6);
        assert!(kl_loss(&p, &student_t_similarities(&z_small)).unwrap() > 0.0);
    }

    #[test]
    fn kl_matches_dense_oracle() {
        let x = random(20, 4, 6);
        let p = affinities(&x, 7, 4.0);
        let z = random(20, 2, 7);
        let fast = kl_loss(&p, &student_t_similarities(&z)).unwrap();
        assert!((fast - kl_oracle(&p, &z)).abs() < 1e-12);
        // the fused path reports the same value
        let mut grad = vec![0.0; 40];
        let fused = kl_loss_and_gradient(&p, p_log_p(&p), &z, &mut grad, &mut KlScratch::new(20, 2));
        assert!((fast - fused).abs() < 1e-12);
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let x = random(15, 4, 30 + seed);
            let p = affinities(&x, 6, 3.0);
            let z = random(15, 2, 40 + seed);
            let g = kl_gradient(&p, &z).unwrap();
            let num = numeric_grad(|zz| kl_oracle(&p, zz), &z);
            assert!(max_rel_err(g.as_slice(), &num) <= 1e-4);
            for a in 0..2 {
                let s: f64 = (0..15).map(|i| g.get(i, a)).sum();
                assert!(s.abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn three_dimensional_gradient() {
        let x = random(12, 4, 50);
        let p = affinities(&x, 5, 2.5);
        let z = random(12, 3, 51);
        let g = kl_gradient(&p, &z).unwrap();
        let num = numeric_grad(|zz| kl_oracle(&p, zz), &z);
        assert!(max_rel_err(g.as_slice(), &num) <= 1e-4);
    }

    #[test]
    fn exaggerated_gradient_is_gradient_of_scaled_p() {
        let x = random(15, 3, 60);
        let p = affinities(&x, 6, 3.0).exaggerate(12.0);
        let z = random(15, 2, 61);
        let g = kl_gradient(&p, &z).unwrap();
        let num = numeric_grad(|zz| kl_oracle(&p, zz), &z);
        assert!(max_rel_err(g.as_slice(), &num) <= 1e-4);
    }

    #[test]
    fn total_gradient_matches_finite_differences() {
        let x = random(25, 5, 70);
        let cfg = OptimizerConfig {
            lambda: 0.3,
            perplexity: 3.0,
            k_kl: Some(8),
            k_density: 6,
            warmup_iters: 0,
            iterations: 1,
            ..Default::default()
        };
        let opt = Optimizer::new(&x, cfg).unwrap();
        let z = random(25, 2, 71);
        let mut g = kl_gradient(opt.affinities(), &z).unwrap();
        let dg = density_loss_gradient(&opt.density_term().high, &z, &opt.density_term().graph).unwrap();
        for (a, b) in g.as_mut_slice().iter_mut().zip(dg.as_slice()) {
            *a += 0.3 * b;
        }
        let num = numeric_grad(|zz| opt.objective(zz), &z);
        assert!(max_rel_err(g.as_slice(), &num) <= 1e-4);
    }

    fn small_config() -> OptimizerConfig {
        OptimizerConfig {
            lambda: 0.0,
            perplexity: 5.0,
            k_density: 10,
            iterations: 300,
            warmup_iters: 100,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let x = random(80, 5, 80);
        let cfg = OptimizerConfig {
            lambda: 0.05,
            ..small_config()
        };
        let a = run_drsne(&x, &cfg).unwrap();
        let b = run_drsne(&x, &cfg).unwrap();
        assert_eq!(a.z, b.z);
        assert_eq!(a.provenance.trace, b.provenance.trace);
        assert_eq!(a.provenance.trace.len(), 300);
    }

    #[test]
    fn lambda_zero_reduces_kl_after_warmup() {
        let x = random(100, 5, 81);
        let emb = run_drsne(&x, &small_config()).unwrap();
        let trace = &emb.provenance.trace;
        assert!(trace[..100].iter().all(|r| r.dens_loss.is_none()));
        assert!(trace[100..]
            .iter()
            .all(|r| r.dens_loss.is_some() && r.total == r.kl_loss));
        assert!(trace[299].kl_loss <= trace[100].kl_loss);
        assert!(emb.z.find_non_finite().is_none());
    }

    #[test]
    fn recompute_mode_runs() {
        let x = random(60, 4, 82);
        let cfg = OptimizerConfig {
            lambda: 0.1,
            density_neighbors: DensityNeighbors::Recompute { every: 25 },
            ..small_config()
        };
        let emb = run_drsne(&x, &cfg).unwrap();
        assert_eq!(emb.provenance.iterations, 300);
    }

    #[test]
    fn dense_support_runs() {
        let x = random(40, 4, 83);
        let cfg = OptimizerConfig {
            affinity_support: AffinitySupport::Dense,
            iterations: 50,
            warmup_iters: 10,
            ..small_config()
        };
        let opt = Optimizer::new(&x, cfg).unwrap();
        assert_eq!(opt.affinities().n_pairs(), 40 * 39 / 2);
        assert!((opt.affinities().ordered_mass() - 1.0).abs() < 1e-8);
        opt.run().unwrap();
    }

    #[test]
    fn clipping_bounds_the_step_gradient() {
        let x = random(30, 3, 84);
        let cfg = OptimizerConfig {
            clip_norm: 1e-9,
            iterations: 5,
            warmup_iters: 2,
            perplexity: 3.0,
            k_density: 5,
            ..Default::default()
        };
        let mut opt = Optimizer::new(&x, cfg).unwrap();
        for _ in 0..5 {
            let rec = opt.step().unwrap();
            assert!(rec.grad_norm > 1e-9);
            let clipped = opt.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            assert!(clipped <= 1e-9 + 1e-12);
        }
    }

    #[test]
    fn config_errors() {
        let x = random(20, 3, 85);
        let bad = [
            OptimizerConfig {
                perplexity: 30.0,
                k_kl: Some(10),
                ..small_config()
            },
            OptimizerConfig {
                k_density: 20,
                ..small_config()
            },
            OptimizerConfig {
                warmup_iters: 400,
                ..small_config()
            },
            OptimizerConfig {
                lambda: -1.0,
                ..small_config()
            },
            OptimizerConfig {
                learning_rate: 0.0,
                ..small_config()
            },
            OptimizerConfig {
                dim: 4,
                ..small_config()
            },
        ];
        for cfg in bad {
            let err = Optimizer::new(&x, cfg).err().expect("must fail");
            assert!(err.is_usage(), "{err}");
        }
    }

    #[test]
    fn divergence_is_reported_with_iteration() {
        let x = random(30, 3, 86);
        let cfg = OptimizerConfig {
            learning_rate: 1e300,
            iterations: 50,
            warmup_iters: 0,
            perplexity: 3.0,
            k_density: 5,
            ..Default::default()
        };
        match run_drsne(&x, &cfg) {
            Err(Error::Diverged {
                iteration, last_finite, ..
            }) => {
                assert!(iteration < 50);
                assert!(last_finite.find_non_finite().is_none());
            }
            other => panic!("expected divergence, got {:?}", other.map(|e| e.provenance.iterations)),
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = OptimizerConfig {
            density_neighbors: DensityNeighbors::Recompute { every: 7 },
            ..Default::default()
        };
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<OptimizerConfig>(&s).unwrap(), cfg);
    }
}
