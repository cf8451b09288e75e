//! Parameter sweeps: repeated seeded embeddings over one configuration axis,
//! evaluated and summarized per axis value.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::format_f64;
use crate::embed::{run_drsne, OptimizerConfig};
use crate::error::{Error, Result};
use crate::matrix::DataMatrix;
use crate::metrics::{evaluate, EvalOptions, MetricReport};
use crate::preprocess::{pca_fit, standardize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Lambda,
    KDensity,
    PcaDim,
    Perplexity,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Lambda => "lambda",
            SweepAxis::KDensity => "k_density",
            SweepAxis::PcaDim => "pca_dim",
            SweepAxis::Perplexity => "perplexity",
        }
    }

    fn is_integral(self) -> bool {
        matches!(self, SweepAxis::KDensity | SweepAxis::PcaDim)
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().replace('-', "_").as_str() {
            "lambda" => Ok(SweepAxis::Lambda),
            "k_density" | "k" => Ok(SweepAxis::KDensity),
            "pca_dim" | "pca" => Ok(SweepAxis::PcaDim),
            "perplexity" => Ok(SweepAxis::Perplexity),
            other => Err(Error::param("axis", format!("unknown sweep axis `{other}`"))),
        }
    }
}

/// Preprocessing shared by every run of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Pipeline {
    pub standardize: bool,
    pub pca_dim: Option<usize>,
}

impl Default for Pipeline {
    fn default() -> Self {
        Pipeline {
            standardize: true,
            pca_dim: None,
        }
    }
}

impl Pipeline {
    /// Returns the evaluation reference (standardized, before PCA) and the
    /// optimizer input.
    pub fn apply(&self, data: &DataMatrix, pca_dim: Option<usize>) -> Result<(DataMatrix, DataMatrix)> {
        let reference = if self.standardize {
            standardize(data)?
        } else {
            data.clone()
        };
        let input = match pca_dim.or(self.pca_dim) {
            Some(m) => pca_fit(&reference, m)?.transform(&reference)?,
            None => reference.clone(),
        };
        Ok((reference, input))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// Run `r` uses seed `fixed.seed + r`.
    pub repeats: usize,
    pub fixed: OptimizerConfig,
    #[serde(default)]
    pub pipeline: Pipeline,
    /// Density neighborhood of the evaluation; `None` follows each run's
    /// `k_density`.
    #[serde(default)]
    pub k_eval: Option<usize>,
    #[serde(default = "default_k_trust")]
    pub k_trust: usize,
}

fn default_k_trust() -> usize {
    EvalOptions::default().k_trust
}

impl SweepSpec {
    pub fn new(axis: SweepAxis, values: Vec<f64>, repeats: usize, fixed: OptimizerConfig) -> Self {
        SweepSpec {
            axis,
            values,
            repeats,
            fixed,
            pipeline: Pipeline::default(),
            k_eval: None,
            k_trust: default_k_trust(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::param("values", "need at least one axis value"));
        }
        if self.repeats == 0 {
            return Err(Error::param("repeats", "must be ≥ 1"));
        }
        for &v in &self.values {
            if !v.is_finite() {
                return Err(Error::param("values", format!("non-finite axis value {v}")));
            }
            if self.axis.is_integral() && (v < 1.0 || v.fract() != 0.0) {
                return Err(Error::param(
                    "values",
                    format!("{} needs positive integers, got {v}", self.axis.name()),
                ));
            }
        }
        for &v in &self.values {
            self.config_for(v, 0).validate()?;
        }
        Ok(())
    }

    /// Configuration of one run.
    pub fn config_for(&self, value: f64, repeat: usize) -> OptimizerConfig {
        let mut c = self.fixed.clone();
        c.seed = self.fixed.seed.wrapping_add(repeat as u64);
        match self.axis {
            SweepAxis::Lambda => c.lambda = value,
            SweepAxis::KDensity => c.k_density = value as usize,
            SweepAxis::Perplexity => c.perplexity = value,
            SweepAxis::PcaDim => {}
        }
        c
    }

    fn eval_options(&self, config: &OptimizerConfig) -> EvalOptions {
        EvalOptions {
            k_eval: self.k_eval.unwrap_or(config.k_density),
            k_trust: self.k_trust,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunOutcome {
    Ok { metrics: MetricReport },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub axis_value: f64,
    pub seed: u64,
    pub wall_seconds: f64,
    pub outcome: RunOutcome,
}

impl SweepRecord {
    pub fn metrics(&self) -> Option<&MetricReport> {
        match &self.outcome {
            RunOutcome::Ok { metrics } => Some(metrics),
            RunOutcome::Failed { .. } => None,
        }
    }
}

/// Population mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<MeanStd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(MeanStd { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub axis_value: f64,
    pub runs_ok: usize,
    pub runs_failed: usize,
    pub tw: Option<MeanStd>,
    pub continuity: Option<MeanStd>,
    pub dc: Option<MeanStd>,
    pub silhouette: Option<MeanStd>,
    pub stress: Option<MeanStd>,
    pub wall_seconds: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    /// Sorted by `(axis_value, seed)`.
    pub records: Vec<SweepRecord>,
    /// One entry per distinct axis value, ascending.
    pub summary: Vec<SweepSummary>,
}

fn summarize(records: &[SweepRecord]) -> Vec<SweepSummary> {
    let mut out: Vec<SweepSummary> = Vec::new();
    let mut start = 0;
    while start < records.len() {
        let v = records[start].axis_value;
        let end = start + records[start..].iter().take_while(|r| r.axis_value == v).count();
        let group = &records[start..end];
        let ok: Vec<&MetricReport> = group.iter().filter_map(SweepRecord::metrics).collect();
        let col = |f: &dyn Fn(&MetricReport) -> Option<f64>| {
            let xs: Vec<f64> = ok.iter().filter_map(|m| f(m)).collect();
            MeanStd::of(&xs)
        };
        let times: Vec<f64> = group
            .iter()
            .filter(|r| r.metrics().is_some())
            .map(|r| r.wall_seconds)
            .collect();
        out.push(SweepSummary {
            axis_value: v,
            runs_ok: ok.len(),
            runs_failed: group.len() - ok.len(),
            tw: col(&|m| Some(m.trustworthiness)),
            continuity: col(&|m| Some(m.continuity)),
            dc: col(&|m| Some(m.density_correlation)),
            silhouette: col(&|m| m.silhouette),
            stress: col(&|m| Some(m.stress)),
            wall_seconds: MeanStd::of(&times),
        });
        start = end;
    }
    out
}

fn run_one(
    spec: &SweepSpec,
    data: &DataMatrix,
    shared: Option<&(DataMatrix, DataMatrix)>,
    value: f64,
    repeat: usize,
) -> SweepRecord {
    let config = spec.config_for(value, repeat);
    let start = Instant::now();
    let result = (|| -> Result<MetricReport> {
        let owned;
        let (reference, input) = match shared {
            Some(p) => p,
            None => {
                owned = spec.pipeline.apply(data, Some(value as usize))?;
                &owned
            }
        };
        let e = run_drsne(input.values(), &config)?;
        evaluate(
            reference.values(),
            &e.z,
            reference.labels(),
            &spec.eval_options(&config),
        )
    })();
    SweepRecord {
        axis_value: value,
        seed: config.seed,
        wall_seconds: start.elapsed().as_secs_f64(),
        outcome: match result {
            Ok(metrics) => RunOutcome::Ok { metrics },
            Err(e) => RunOutcome::Failed { error: e.to_string() },
        },
    }
}

/// Runs every `(value, repeat)` pair. `threads ≤ 1` runs sequentially in
/// canonical order; otherwise up to `threads` workers pull runs from a
/// shared queue. Records are sorted afterwards, so the report does not
/// depend on completion order. A failed run is recorded and the sweep
/// continues.
pub fn run_sweep(
    spec: &SweepSpec,
    data: &DataMatrix,
    threads: usize,
    progress: Option<&(dyn Fn(&SweepRecord) + Sync)>,
) -> Result<SweepReport> {
    spec.validate()?;
    let shared = if spec.axis == SweepAxis::PcaDim {
        None
    } else {
        Some(spec.pipeline.apply(data, None)?)
    };
    let mut values = spec.values.clone();
    values.sort_by(f64::total_cmp);
    let jobs: Vec<(f64, usize)> = values
        .iter()
        .flat_map(|&v| (0..spec.repeats).map(move |r| (v, r)))
        .collect();
    let done = |r: &SweepRecord| {
        if let Some(p) = progress {
            p(r)
        }
    };
    let mut records = if threads <= 1 {
        jobs.iter()
            .map(|&(v, r)| {
                let rec = run_one(spec, data, shared.as_ref(), v, r);
                done(&rec);
                rec
            })
            .collect::<Vec<_>>()
    } else {
        let next = AtomicUsize::new(0);
        let out = Mutex::new(Vec::with_capacity(jobs.len()));
        std::thread::scope(|s| {
            for _ in 0..threads.min(jobs.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(&(v, r)) = jobs.get(i) else { break };
                    let rec = run_one(spec, data, shared.as_ref(), v, r);
                    done(&rec);
                    out.lock().expect("worker panicked").push(rec);
                });
            }
        });
        out.into_inner().expect("worker panicked")
    };
    records.sort_by(|a, b| a.axis_value.total_cmp(&b.axis_value).then(a.seed.cmp(&b.seed)));
    Ok(SweepReport {
        axis: spec.axis,
        summary: summarize(&records),
        records,
    })
}

/// Worker count from `DRSNE_THREADS`; unset, empty, 0 or unparsable means
/// sequential.
pub fn threads_from_env() -> usize {
    std::env::var("DRSNE_THREADS")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(0)
}

fn opt(v: Option<f64>) -> String {
    v.map(format_f64).unwrap_or_default()
}

impl SweepReport {
    /// Long format, one row per run.
    pub fn detail_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::InvalidInput(format!("csv encoding: {e}"));
        w.write_record([
            "axis",
            "axis_value",
            "seed",
            "tw",
            "continuity",
            "dc",
            "silhouette",
            "stress",
            "wall_seconds",
            "status",
        ])
        .map_err(io)?;
        for r in &self.records {
            let m = r.metrics();
            let status = match &r.outcome {
                RunOutcome::Ok { .. } => "ok".to_string(),
                RunOutcome::Failed { error } => format!("failed: {error}"),
            };
            w.write_record([
                self.axis.name().to_string(),
                format_f64(r.axis_value),
                r.seed.to_string(),
                opt(m.map(|m| m.trustworthiness)),
                opt(m.map(|m| m.continuity)),
                opt(m.map(|m| m.density_correlation)),
                opt(m.and_then(|m| m.silhouette)),
                opt(m.map(|m| m.stress)),
                format!("{:.6}", r.wall_seconds),
                status,
            ])
            .map_err(io)?;
        }
        finish(w)
    }

    /// One row per axis value with mean and population std of each metric.
    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::InvalidInput(format!("csv encoding: {e}"));
        let mut header = vec![
            "axis".to_string(),
            "axis_value".into(),
            "runs_ok".into(),
            "runs_failed".into(),
        ];
        for m in ["tw", "continuity", "dc", "silhouette", "stress", "wall_seconds"] {
            header.push(format!("{m}_mean"));
            header.push(format!("{m}_std"));
        }
        w.write_record(&header).map_err(io)?;
        for s in &self.summary {
            let mut row = vec![
                self.axis.name().to_string(),
                format_f64(s.axis_value),
                s.runs_ok.to_string(),
                s.runs_failed.to_string(),
            ];
            for ms in [s.tw, s.continuity, s.dc, s.silhouette, s.stress, s.wall_seconds] {
                row.push(opt(ms.map(|m| m.mean)));
                row.push(opt(ms.map(|m| m.std)));
            }
            w.write_record(&row).map_err(io)?;
        }
        finish(w)
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidInput(format!("csv encoding: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidInput(e.to_string()))
}
