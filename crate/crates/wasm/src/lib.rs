//! Browser bindings: generate a density-modulated spiral, step the embedding
//! while the density weight changes, and score anomalies in the result.

use drsne::anomaly::{auprc, score, Detector, DetectorParams};
use drsne::data::{gen_density_spiral, SpiralConfig};
use drsne::density::{density_correlation, knn_density};
use drsne::embed::{DensityNeighbors, Optimizer, OptimizerConfig};
use drsne::neighbors::knn;
use drsne::{DataMatrix, Error};
use wasm_bindgen::prelude::*;

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    data: DataMatrix,
    optimizer: Optimizer,
    high_log_density: Vec<f64>,
    k_density: usize,
    last_scores: Vec<f64>,
}

#[wasm_bindgen]
impl Demo {
    /// Spiral of `n` points with density amplitude `amplitude`, embedded
    /// with weight `lambda`.
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, amplitude: f64, lambda: f64, seed: u64) -> Result<Demo, JsError> {
        let data = gen_density_spiral(&SpiralConfig {
            n,
            density_amplitude: amplitude,
            seed,
            ..Default::default()
        })
        .map_err(js)?;
        let k_density = (n / 10).clamp(5, 100);
        let config = OptimizerConfig {
            lambda,
            k_density,
            perplexity: 30.0_f64.min((n / 4) as f64),
            iterations: 1000,
            seed,
            density_neighbors: DensityNeighbors::Recompute { every: 10 },
            ..Default::default()
        };
        let optimizer = Optimizer::new(data.values(), config).map_err(js)?;
        let high = knn_density(&knn(data.values(), k_density).map_err(js)?);
        Ok(Demo {
            high_log_density: high.log_rho_tilde,
            data,
            optimizer,
            k_density,
            last_scores: Vec::new(),
        })
    }

    /// Runs up to `count` iterations; returns true once the schedule is done.
    pub fn step(&mut self, count: usize) -> Result<bool, JsError> {
        for _ in 0..count {
            if self.optimizer.is_done() {
                break;
            }
            self.optimizer.step().map_err(js)?;
        }
        Ok(self.optimizer.is_done())
    }

    pub fn iteration(&self) -> usize {
        self.optimizer.iteration()
    }

    pub fn set_lambda(&mut self, lambda: f64) -> Result<(), JsError> {
        self.optimizer.set_lambda(lambda).map_err(js)
    }

    /// Row-major 2-D coordinates.
    pub fn coordinates(&self) -> Vec<f64> {
        self.optimizer.coordinates().as_slice().to_vec()
    }

    /// Normalized log density of each point in the source space.
    pub fn source_log_density(&self) -> Vec<f64> {
        self.high_log_density.clone()
    }

    pub fn anomaly_flags(&self) -> Vec<u8> {
        self.data
            .anomaly()
            .unwrap_or(&[])
            .iter()
            .map(|&f| u8::from(f))
            .collect()
    }

    /// Pearson correlation of log densities between source and embedding.
    pub fn density_correlation(&self) -> Result<f64, JsError> {
        let high = knn_density(&knn(self.data.values(), self.k_density).map_err(js)?);
        let low = knn_density(&knn(self.optimizer.coordinates(), self.k_density).map_err(js)?);
        density_correlation(&high, &low).map_err(js)
    }

    /// Scores the current embedding with `detector` (knn, lof, iforest or
    /// centroid) and returns the AUPRC against the low-density flags.
    /// The per-point scores are available from [`Demo::scores`].
    pub fn score_anomalies(&mut self, detector: &str, k: usize) -> Result<f64, JsError> {
        let det: Detector = detector.parse().map_err(js)?;
        let params = DetectorParams {
            k,
            ..Default::default()
        };
        let s = score(self.optimizer.coordinates(), det, &params).map_err(js)?;
        let flags = self.data.anomaly().ok_or_else(|| JsError::new("no anomaly flags"))?;
        let ap = auprc(&s.scores, flags).map_err(js)?;
        self.last_scores = s.scores;
        Ok(ap)
    }

    pub fn scores(&self) -> Vec<f64> {
        self.last_scores.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_steps_and_scores() {
        let mut d = Demo::new(200, 0.8, 0.05, 1).unwrap();
        assert!(!d.step(300).unwrap());
        assert_eq!(d.iteration(), 300);
        assert_eq!(d.coordinates().len(), 400);
        assert_eq!(d.anomaly_flags().iter().filter(|&&f| f == 1).count(), 10);
        assert!(d.density_correlation().unwrap().is_finite());
        let ap = d.score_anomalies("knn", 10).unwrap();
        assert!((0.0..=1.0).contains(&ap));
        assert_eq!(d.scores().len(), 200);
    }
}
