use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{DataMatrix, Matrix};
use crate::preprocess::standardize;

/// Lower clip applied to the sampling weight `w(t)`.
pub const MIN_WEIGHT: f64 = 0.05;

/// How the 2-D spiral is placed in the ambient space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    /// Gaussian matrix with Gram-Schmidt orthonormalized columns.
    #[default]
    Orthonormal,
    /// Gaussian matrix with i.i.d. N(0, 1) entries, used as is.
    Raw,
    /// The plane spanned by the first two coordinate axes.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpiralConfig {
    pub n: usize,
    pub t_range: (f64, f64),
    pub density_period: f64,
    pub density_amplitude: f64,
    pub noise_std: f64,
    pub ambient_dim: usize,
    pub anomaly_percentile: f64,
    pub seed: u64,
    pub projection: Projection,
    /// Standardize ambient columns as the last step.
    pub standardize: bool,
}

impl Default for SpiralConfig {
    fn default() -> Self {
        SpiralConfig {
            n: 2000,
            t_range: (3.0, 15.0),
            density_period: 3.0,
            density_amplitude: 0.8,
            noise_std: 0.05,
            ambient_dim: 10,
            anomaly_percentile: 5.0,
            seed: 0,
            projection: Projection::Orthonormal,
            standardize: true,
        }
    }
}

impl SpiralConfig {
    pub fn validate(&self) -> Result<()> {
        let (t_min, t_max) = self.t_range;
        if self.n < 10 {
            return Err(Error::param("n", format!("need n ≥ 10, got {}", self.n)));
        }
        if !(t_min.is_finite() && t_max.is_finite() && t_min >= 0.0 && t_max > t_min) {
            return Err(Error::param(
                "t_range",
                format!("need 0 ≤ t_min < t_max, got [{t_min}, {t_max}]"),
            ));
        }
        if !(self.density_period.is_finite() && self.density_period > 0.0) {
            return Err(Error::param("density_period", "must be positive and finite"));
        }
        if !(self.density_amplitude.is_finite() && self.density_amplitude.abs() <= 1e3) {
            return Err(Error::param("density_amplitude", "must be finite with |a| ≤ 1000"));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::param("noise_std", "must be finite and ≥ 0"));
        }
        if self.ambient_dim < 2 {
            return Err(Error::param("ambient_dim", "must be ≥ 2"));
        }
        if !(self.anomaly_percentile >= 0.0 && self.anomaly_percentile < 100.0) {
            return Err(Error::param("anomaly_percentile", "must lie in [0, 100)"));
        }
        Ok(())
    }

    /// Clipped sampling weight `max(1 + a·sin(2πt/T), MIN_WEIGHT)`.
    pub fn weight(&self, t: f64) -> f64 {
        self.raw_weight(t).max(MIN_WEIGHT)
    }

    fn raw_weight(&self, t: f64) -> f64 {
        1.0 + self.density_amplitude * (std::f64::consts::TAU * t / self.density_period).sin()
    }
}

/// A generated spiral with its latent parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SpiralSample {
    pub data: DataMatrix,
    /// Curve parameter of each point.
    pub t: Vec<f64>,
    /// Clipped sampling weight `w(t)` of each point.
    pub weight: Vec<f64>,
    /// True if any proposal fell where `w` was clipped.
    pub clipped: bool,
}

/// Draws `n` curve parameters whose density per unit arc length of
/// `(t cos t, t sin t)` is proportional to `w(t)`.
fn sample_parameters(config: &SpiralConfig, rng: &mut ChaCha8Rng) -> (Vec<f64>, bool) {
    let (t_min, t_max) = config.t_range;
    let speed = |t: f64| (1.0 + t * t).sqrt();
    let envelope = speed(t_max) * (1.0 + config.density_amplitude.abs()).max(MIN_WEIGHT);
    let mut clipped = false;
    let mut t = Vec::with_capacity(config.n);
    while t.len() < config.n {
        let cand = rng.random_range(t_min..t_max);
        let raw = config.raw_weight(cand);
        if raw < MIN_WEIGHT {
            clipped = true;
        }
        let u: f64 = rng.random();
        if u * envelope <= speed(cand) * raw.max(MIN_WEIGHT) {
            t.push(cand);
        }
    }
    (t, clipped)
}

/// Seeded `dim × 2` projection matrix.
pub fn projection_matrix(dim: usize, kind: Projection, seed: u64) -> Matrix {
    let mut m = Matrix::zeros(dim, 2);
    match kind {
        Projection::Identity => {
            m.set(0, 0, 1.0);
            m.set(1, 1, 1.0);
        }
        Projection::Raw | Projection::Orthonormal => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            for v in m.as_mut_slice() {
                *v = normal.sample(&mut rng);
            }
            if kind == Projection::Orthonormal {
                orthonormalize(&mut m);
            }
        }
    }
    m
}

/// Modified Gram-Schmidt on the two columns. A Gaussian draw is full rank
/// with probability one.
fn orthonormalize(m: &mut Matrix) {
    let dim = m.rows();
    for _ in 0..2 {
        // second pass restores orthogonality lost to rounding
        let n0 = m.column(0).iter().map(|v| v * v).sum::<f64>().sqrt();
        for r in 0..dim {
            m.set(r, 0, m.get(r, 0) / n0);
        }
        let dot: f64 = (0..dim).map(|r| m.get(r, 0) * m.get(r, 1)).sum();
        for r in 0..dim {
            m.set(r, 1, m.get(r, 1) - dot * m.get(r, 0));
        }
        let n1 = m.column(1).iter().map(|v| v * v).sum::<f64>().sqrt();
        for r in 0..dim {
            m.set(r, 1, m.get(r, 1) / n1);
        }
    }
}

/// Indices of the `⌈n·p/100⌉` smallest weights, ties by index.
fn low_density_flags(weight: &[f64], percentile: f64) -> Vec<bool> {
    let n = weight.len();
    let count = ((n as f64 * percentile / 100.0).ceil() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| weight[a].total_cmp(&weight[b]).then(a.cmp(&b)));
    let mut flags = vec![false; n];
    for &i in &order[..count] {
        flags[i] = true;
    }
    flags
}

/// Density-modulated spiral in `ambient_dim` dimensions with low-density
/// anomaly flags, plus its latent parameters.
pub fn gen_density_spiral_sample(config: &SpiralConfig) -> Result<SpiralSample> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (t, clipped) = sample_parameters(config, &mut rng);
    let normal = Normal::new(0.0, config.noise_std).map_err(|e| Error::param("noise_std", e.to_string()))?;
    let proj = projection_matrix(config.ambient_dim, config.projection, config.seed);
    let mut x = Matrix::zeros(config.n, config.ambient_dim);
    for (i, &ti) in t.iter().enumerate() {
        let mut p = [ti * ti.cos(), ti * ti.sin()];
        if config.noise_std > 0.0 {
            p[0] += normal.sample(&mut rng);
            p[1] += normal.sample(&mut rng);
        }
        let row = x.row_mut(i);
        for (r, v) in row.iter_mut().enumerate() {
            *v = proj.get(r, 0) * p[0] + proj.get(r, 1) * p[1];
        }
    }
    let weight: Vec<f64> = t.iter().map(|&ti| config.weight(ti)).collect();
    let mut data = DataMatrix::new(x)?.with_anomaly(low_density_flags(&weight, config.anomaly_percentile))?;
    if config.standardize {
        data = standardize(&data)?;
    }
    Ok(SpiralSample {
        data,
        t,
        weight,
        clipped,
    })
}

pub fn gen_density_spiral(config: &SpiralConfig) -> Result<DataMatrix> {
    gen_density_spiral_sample(config).map(|s| s.data)
}

/// Sinusoidal modulation `w(t) = 1 + amplitude·sin(2πt/period)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Modulation {
    pub period: f64,
    pub amplitude: f64,
}

impl Default for Modulation {
    fn default() -> Self {
        let c = SpiralConfig::default();
        Modulation {
            period: c.density_period,
            amplitude: c.density_amplitude,
        }
    }
}

/// Noise-free 2-D spiral without projection, standardization or anomaly
/// flags.
pub fn gen_spiral_plain(n: usize, t_range: (f64, f64), modulation: Modulation, seed: u64) -> Result<DataMatrix> {
    let config = SpiralConfig {
        n,
        t_range,
        density_period: modulation.period,
        density_amplitude: modulation.amplitude,
        noise_std: 0.0,
        ambient_dim: 2,
        anomaly_percentile: 0.0,
        seed,
        projection: Projection::Identity,
        standardize: false,
    };
    let s = gen_density_spiral_sample(&config)?;
    DataMatrix::new(s.data.values().clone())
}

/// Isotropic Gaussian clusters with individual spreads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobsConfig {
    pub n: usize,
    pub dim: usize,
    /// One standard deviation per cluster.
    pub spreads: Vec<f64>,
    /// Centers are drawn uniformly from `[-center_box, center_box]^dim`.
    pub center_box: f64,
    pub seed: u64,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        BlobsConfig {
            n: 1500,
            dim: 10,
            spreads: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            center_box: 20.0,
            seed: 0,
        }
    }
}

/// Gaussian blobs labelled by cluster. Cluster sizes differ by at most one,
/// larger clusters first.
pub fn gen_blobs(config: &BlobsConfig) -> Result<DataMatrix> {
    let c = config.spreads.len();
    if c == 0 {
        return Err(Error::param("spreads", "need at least one cluster"));
    }
    if config.n < 2 || config.n < c {
        return Err(Error::param("n", "need n ≥ 2 and at least one point per cluster"));
    }
    if config.dim == 0 {
        return Err(Error::param("dim", "must be ≥ 1"));
    }
    if config.spreads.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::param("spreads", "must be positive and finite"));
    }
    if !(config.center_box.is_finite() && config.center_box >= 0.0) {
        return Err(Error::param("center_box", "must be finite and ≥ 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let centers: Vec<Vec<f64>> = (0..c)
        .map(|_| {
            (0..config.dim)
                .map(|_| {
                    if config.center_box > 0.0 {
                        rng.random_range(-config.center_box..=config.center_box)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let mut x = Matrix::zeros(config.n, config.dim);
    let mut labels = Vec::with_capacity(config.n);
    let mut row = 0;
    for (ci, (center, &spread)) in centers.iter().zip(&config.spreads).enumerate() {
        let size = config.n / c + usize::from(ci < config.n % c);
        let normal = Normal::new(0.0, spread).expect("validated spread");
        for _ in 0..size {
            for (v, m) in x.row_mut(row).iter_mut().zip(center) {
                *v = m + normal.sample(&mut rng);
            }
            labels.push(ci as i64);
            row += 1;
        }
    }
    DataMatrix::new(x)?.with_labels(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{knn_density, pearson};
    use crate::neighbors::knn;

    #[test]
    fn density_spiral_shape_and_determinism() {
        let c = SpiralConfig {
            n: 500,
            seed: 7,
            ..Default::default()
        };
        let a = gen_density_spiral(&c).unwrap();
        assert_eq!((a.n(), a.dim()), (500, 10));
        assert_eq!(a, gen_density_spiral(&c).unwrap());
        let flagged = a.anomaly().unwrap().iter().filter(|&&f| f).count();
        assert_eq!(flagged, 25);
        let other = gen_density_spiral(&SpiralConfig { seed: 8, ..c }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn anomaly_count_matches_percentile() {
        for (n, p) in [(100, 5.0), (333, 7.5), (1000, 0.1), (57, 50.0), (2000, 5.0), (10, 99.0)] {
            let c = SpiralConfig {
                n,
                anomaly_percentile: p,
                ambient_dim: 3,
                ..Default::default()
            };
            let got = gen_density_spiral(&c)
                .unwrap()
                .anomaly()
                .unwrap()
                .iter()
                .filter(|&&f| f)
                .count();
            let want = n as f64 * p / 100.0;
            assert!((got as f64 - want).abs() <= 1.0, "n={n} p={p}: {got}");
        }
    }

    #[test]
    fn anomalies_have_lowest_weights() {
        let s = gen_density_spiral_sample(&SpiralConfig {
            n: 400,
            ..Default::default()
        })
        .unwrap();
        let flags = s.data.anomaly().unwrap();
        let max_flagged = s
            .weight
            .iter()
            .zip(flags)
            .filter(|(_, f)| **f)
            .map(|(w, _)| *w)
            .fold(f64::MIN, f64::max);
        let min_clean = s
            .weight
            .iter()
            .zip(flags)
            .filter(|(_, f)| !**f)
            .map(|(w, _)| *w)
            .fold(f64::MAX, f64::min);
        assert!(max_flagged <= min_clean);
    }

    #[test]
    fn flat_density_flags() {
        let c = SpiralConfig {
            n: 200,
            density_amplitude: 0.0,
            anomaly_percentile: 10.0,
            ..Default::default()
        };
        let flags = gen_density_spiral(&c).unwrap().anomaly().unwrap().to_vec();
        assert_eq!(flags.iter().filter(|&&f| f).count(), 20);
        // equal weights: ties resolve to the lowest indices
        assert!(flags[..20].iter().all(|&f| f));
        let none = gen_density_spiral(&SpiralConfig {
            anomaly_percentile: 0.0,
            ..c
        })
        .unwrap();
        assert!(none.anomaly().unwrap().iter().all(|&f| !f));
    }

    #[test]
    fn noise_free_identity_lies_on_curve() {
        let c = SpiralConfig {
            n: 300,
            noise_std: 0.0,
            ambient_dim: 2,
            projection: Projection::Identity,
            standardize: false,
            ..Default::default()
        };
        let s = gen_density_spiral_sample(&c).unwrap();
        for (row, t) in s.data.values().iter_rows().zip(&s.t) {
            let r2 = row[0] * row[0] + row[1] * row[1];
            assert!((r2 - t * t).abs() < 1e-9);
            assert!(*t >= 3.0 && *t < 15.0);
        }
    }

    #[test]
    fn orthonormal_projection_is_isometric() {
        for dim in [2, 3, 10, 50] {
            let p = projection_matrix(dim, Projection::Orthonormal, 11);
            let dot = |a: usize, b: usize| (0..dim).map(|r| p.get(r, a) * p.get(r, b)).sum::<f64>();
            assert!((dot(0, 0) - 1.0).abs() < 1e-10);
            assert!((dot(1, 1) - 1.0).abs() < 1e-10);
            assert!(dot(0, 1).abs() < 1e-10);
        }
        let base = SpiralConfig {
            n: 60,
            noise_std: 0.1,
            ambient_dim: 2,
            projection: Projection::Identity,
            standardize: false,
            ..Default::default()
        };
        let flat = gen_density_spiral(&base).unwrap();
        let lifted = gen_density_spiral(&SpiralConfig {
            ambient_dim: 12,
            projection: Projection::Orthonormal,
            ..base
        })
        .unwrap();
        let d = |m: &Matrix, i: usize, j: usize| {
            m.row(i)
                .iter()
                .zip(m.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        for i in 0..60 {
            for j in 0..60 {
                assert!((d(flat.values(), i, j) - d(lifted.values(), i, j)).abs() < 1e-9);
            }
        }
        let raw = projection_matrix(6, Projection::Raw, 11);
        let n0: f64 = raw.column(0).iter().map(|v| v * v).sum();
        assert!((n0 - 1.0).abs() > 1e-6);
    }

    #[test]
    fn standardized_columns() {
        let d = gen_density_spiral(&SpiralConfig {
            n: 300,
            ambient_dim: 4,
            ..Default::default()
        })
        .unwrap();
        for j in 0..4 {
            let col = d.values().column(j);
            let m = col.iter().sum::<f64>() / 300.0;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 300.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn plain_spiral_shape_and_determinism() {
        let m = Modulation::default();
        let a = gen_spiral_plain(800, (3.0, 15.0), m, 3).unwrap();
        assert_eq!((a.n(), a.dim()), (800, 2));
        assert!(a.anomaly().is_none() && a.labels().is_none());
        assert_eq!(a, gen_spiral_plain(800, (3.0, 15.0), m, 3).unwrap());
    }

    #[test]
    fn plain_spiral_density_tracks_weight() {
        let m = Modulation::default();
        let config = SpiralConfig {
            n: 2000,
            t_range: (3.0, 15.0),
            density_period: m.period,
            density_amplitude: m.amplitude,
            noise_std: 0.0,
            ambient_dim: 2,
            anomaly_percentile: 0.0,
            seed: 1,
            projection: Projection::Identity,
            standardize: false,
        };
        let s = gen_density_spiral_sample(&config).unwrap();
        let g = knn(s.data.values(), 10).unwrap();
        let rho = knn_density(&g).rho;
        let lr: Vec<f64> = rho.iter().map(|v| v.ln()).collect();
        let lw: Vec<f64> = s.weight.iter().map(|v| v.ln()).collect();
        let r = pearson(&lr, &lw).unwrap();
        assert!(r >= 0.7, "pearson {r}");
    }

    #[test]
    fn clipping_is_reported_not_fatal() {
        let c = SpiralConfig {
            n: 100,
            density_amplitude: 1.5,
            ..Default::default()
        };
        let s = gen_density_spiral_sample(&c).unwrap();
        assert!(s.clipped);
        assert!(s.weight.iter().all(|&w| w >= MIN_WEIGHT));
        assert!(
            !gen_density_spiral_sample(&SpiralConfig {
                n: 100,
                ..Default::default()
            })
            .unwrap()
            .clipped
        );
    }

    #[test]
    fn config_validation() {
        let ok = SpiralConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            SpiralConfig { n: 9, ..ok.clone() },
            SpiralConfig {
                t_range: (5.0, 5.0),
                ..ok.clone()
            },
            SpiralConfig {
                t_range: (-1.0, 5.0),
                ..ok.clone()
            },
            SpiralConfig {
                noise_std: -0.1,
                ..ok.clone()
            },
            SpiralConfig {
                ambient_dim: 1,
                ..ok.clone()
            },
            SpiralConfig {
                anomaly_percentile: 100.0,
                ..ok.clone()
            },
            SpiralConfig {
                density_period: 0.0,
                ..ok.clone()
            },
        ] {
            assert!(matches!(gen_density_spiral(&bad), Err(Error::InvalidParameter { .. })));
        }
    }

    #[test]
    fn blobs_layout() {
        let c = BlobsConfig {
            n: 103,
            dim: 3,
            spreads: vec![0.1, 1.0, 3.0],
            center_box: 10.0,
            seed: 2,
        };
        let d = gen_blobs(&c).unwrap();
        let labels = d.labels().unwrap();
        let sizes: Vec<usize> = (0..3).map(|k| labels.iter().filter(|&&l| l == k).count()).collect();
        assert_eq!(sizes, vec![35, 34, 34]);
        assert_eq!(d, gen_blobs(&c).unwrap());
        assert!(gen_blobs(&BlobsConfig {
            spreads: vec![],
            ..c.clone()
        })
        .is_err());
        assert!(gen_blobs(&BlobsConfig {
            spreads: vec![0.0],
            ..c
        })
        .is_err());
    }
}
