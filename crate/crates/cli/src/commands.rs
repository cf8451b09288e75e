use std::path::{Path, PathBuf};

use drsne::anomaly::{auprc, score, Detector, DetectorParams};
use drsne::data::{
    data_to_csv, format_f64, gen_blobs, gen_density_spiral_sample, gen_spiral_plain, load_csv, load_embedding,
    save_embedding_with, write_atomically, BlobsConfig, ColumnRef, CsvOptions, Modulation, Preprocessing, SpiralConfig,
};
use drsne::density::CorrelationKind;
use drsne::embed::{run_drsne, AffinitySupport, DensityNeighbors, OptimizerConfig};
use drsne::metrics::{evaluate, EvalOptions};
use drsne::sweep::{run_sweep, threads_from_env, Pipeline, RunOutcome, SweepAxis, SweepSpec};
use drsne::{DataMatrix, Error, Result};
use serde_json::json;

use crate::args::*;

fn json_bytes(value: &serde_json::Value) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn generate(args: GenerateArgs) -> Result<()> {
    let (data, output, meta) = match args.kind {
        GenerateKind::DensitySpiral(a) => {
            let config = SpiralConfig {
                n: a.n,
                t_range: (a.t_min, a.t_max),
                density_period: a.period,
                density_amplitude: a.amplitude,
                noise_std: a.noise,
                ambient_dim: a.ambient_dim,
                anomaly_percentile: a.anomaly_percentile,
                seed: a.seed,
                projection: a.projection.into(),
                standardize: !a.no_standardize,
            };
            let s = gen_density_spiral_sample(&config)?;
            if s.clipped {
                eprintln!(
                    "warning: density weight clipped at its minimum over part of the t range (amplitude {})",
                    a.amplitude
                );
            }
            let anomalies = s.data.anomaly().map_or(0, |f| f.iter().filter(|&&x| x).count());
            let meta = json!({
                "generator": "density-spiral",
                "config": config,
                "rows": s.data.n(),
                "anomalies": anomalies,
                "weight_clipped": s.clipped,
            });
            (s.data, a.output, meta)
        }
        GenerateKind::Spiral(a) => {
            let m = Modulation {
                period: a.period,
                amplitude: a.amplitude,
            };
            let data = gen_spiral_plain(a.n, (a.t_min, a.t_max), m, a.seed)?;
            let meta = json!({
                "generator": "spiral",
                "config": {"n": a.n, "t_range": [a.t_min, a.t_max], "modulation": m, "seed": a.seed},
                "rows": data.n(),
            });
            (data, a.output, meta)
        }
        GenerateKind::Blobs(a) => {
            let config = BlobsConfig {
                n: a.n,
                dim: a.dim,
                spreads: a.spreads,
                center_box: a.center_box,
                seed: a.seed,
            };
            let data = gen_blobs(&config)?;
            let meta = json!({"generator": "blobs", "config": config, "rows": data.n()});
            (data, a.output, meta)
        }
    };
    write_atomically(&[
        (output.clone(), data_to_csv(&data).into_bytes()),
        (output.with_extension("json"), json_bytes(&meta)?),
    ])
}

fn optimizer_config(a: &OptimizerArgs) -> Result<OptimizerConfig> {
    let mut c = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            serde_json::from_str(&text)?
        }
        None => OptimizerConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(if let Some(v) = a.$flag { c.$field = v; })*};
    }
    set!(lambda => lambda, k_density => k_density, perplexity => perplexity, iterations => iterations,
         warmup_iters => warmup_iters, exaggeration => exaggeration_factor, learning_rate => learning_rate,
         clip_norm => clip_norm, init_std => init_std, dim => dim, seed => seed);
    if a.k_kl.is_some() {
        c.k_kl = a.k_kl;
    }
    if a.dense_affinities {
        c.affinity_support = AffinitySupport::Dense;
    }
    if let Some(every) = a.recompute_density_every {
        c.density_neighbors = DensityNeighbors::Recompute { every };
    }
    c.validate()?;
    Ok(c)
}

fn pipeline(p: &PreprocessArgs) -> Pipeline {
    Pipeline {
        standardize: !p.no_standardize,
        pca_dim: p.pca_dim,
    }
}

pub fn embed(args: EmbedArgs) -> Result<()> {
    let config = optimizer_config(&args.optimizer)?;
    let data = load_csv(&args.input, &args.csv.csv_options())?;
    config.validate_for(data.n())?;
    let pipe = pipeline(&args.preprocess);
    let (reference, input) = pipe.apply(&data, None)?;
    let mut embedding = run_drsne(input.values(), &config)?;
    if args.evaluate {
        let opts = EvalOptions {
            k_eval: args.k_eval.unwrap_or(config.k_density),
            ..Default::default()
        };
        embedding.provenance.metrics = Some(evaluate(reference.values(), &embedding.z, reference.labels(), &opts)?);
    }
    let prep = Preprocessing {
        standardize: pipe.standardize,
        pca_dim: pipe.pca_dim,
    };
    save_embedding_with(&embedding, &args.output, Some(prep))
}

pub fn evaluate_cmd(args: EvaluateArgs) -> Result<()> {
    let data = load_csv(&args.data, &args.csv.csv_options())?;
    let z = load_embedding(&args.embedding)?;
    if z.rows() != data.n() {
        return Err(Error::DimensionMismatch {
            expected: data.n(),
            got: z.rows(),
        });
    }
    let reference = Pipeline {
        standardize: !args.no_standardize,
        pca_dim: None,
    }
    .apply(&data, None)?
    .0;
    let opts = EvalOptions {
        k_eval: args.k_eval,
        k_trust: args.k_trust,
        correlation: match args.correlation {
            CorrelationArg::Pearson => CorrelationKind::Pearson,
            CorrelationArg::Spearman => CorrelationKind::Spearman,
        },
    };
    let report = evaluate(reference.values(), &z, reference.labels(), &opts)?;
    let bytes = json_bytes(&serde_json::to_value(&report)?)?;
    match args.output {
        Some(path) => write_atomically(&[(path, bytes)]),
        None => {
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let fixed = optimizer_config(&args.optimizer)?;
    let axis: SweepAxis = args.axis.parse()?;
    let data = load_csv(&args.input, &args.csv.csv_options())?;
    let spec = SweepSpec {
        axis,
        values: args.values,
        repeats: args.repeats,
        fixed,
        pipeline: pipeline(&args.preprocess),
        k_eval: args.k_eval,
        k_trust: args.k_trust,
    };
    let quiet = args.quiet;
    let progress = move |r: &drsne::sweep::SweepRecord| {
        if quiet {
            return;
        }
        match (&r.outcome, r.metrics()) {
            (_, Some(m)) => eprintln!(
                "{}={} seed={} tw={:.4} dc={:.4} ({:.1}s)",
                axis.name(),
                format_f64(r.axis_value),
                r.seed,
                m.trustworthiness,
                m.density_correlation,
                r.wall_seconds
            ),
            (RunOutcome::Failed { error }, None) => {
                eprintln!(
                    "{}={} seed={} failed: {error}",
                    axis.name(),
                    format_f64(r.axis_value),
                    r.seed
                )
            }
            _ => {}
        }
    };
    let report = run_sweep(&spec, &data, threads_from_env(), Some(&progress))?;
    let summary = args
        .summary
        .unwrap_or_else(|| with_suffix(&args.output, ".summary.csv"));
    write_atomically(&[
        (args.output, report.detail_csv()?.into_bytes()),
        (summary, report.summary_csv()?.into_bytes()),
    ])
}

pub fn anomaly(args: AnomalyArgs) -> Result<()> {
    let detectors: Vec<Detector> = args.detectors.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    let column: ColumnRef = args.anomaly_column.parse().expect("infallible");
    let (z, flags) = match &args.flags {
        Some(path) => {
            let z = load_embedding(&args.embedding)?;
            let opts = CsvOptions {
                has_header: !args.no_header,
                anomaly_column: Some(column),
                ..Default::default()
            };
            (z, flags_of(load_csv(path, &opts)?)?)
        }
        None => {
            let opts = CsvOptions {
                has_header: true,
                anomaly_column: Some(column),
                ..Default::default()
            };
            let d = load_csv(&args.embedding, &opts)?;
            (d.values().clone(), flags_of(d)?)
        }
    };
    if flags.len() != z.rows() {
        return Err(Error::DimensionMismatch {
            expected: z.rows(),
            got: flags.len(),
        });
    }
    let params = DetectorParams {
        k: args.k,
        trees: args.trees,
        subsample: args.subsample,
        seed: args.seed,
    };
    let mut scores_csv = String::from("detector,index,score,is_anomaly\n");
    let mut results = Vec::new();
    for det in detectors {
        let s = score(&z, det, &params)?;
        let ap = auprc(&s.scores, &flags)?;
        for (i, (v, f)) in s.scores.iter().zip(&flags).enumerate() {
            scores_csv.push_str(&format!("{},{i},{},{}\n", det.name(), format_f64(*v), u8::from(*f)));
        }
        results.push(json!({"detector": det.name(), "params": detector_params(det, &params), "auprc": ap}));
    }
    let positives = flags.iter().filter(|&&f| f).count();
    let report = json!({
        "auprc_method": "average_precision",
        "n": z.rows(),
        "anomalies": positives,
        "anomaly_rate": positives as f64 / z.rows() as f64,
        "results": results,
    });
    let report_path = args.report.unwrap_or_else(|| args.output.with_extension("json"));
    write_atomically(&[
        (args.output, scores_csv.into_bytes()),
        (report_path, json_bytes(&report)?),
    ])
}

fn flags_of(d: DataMatrix) -> Result<Vec<bool>> {
    d.anomaly()
        .map(<[bool]>::to_vec)
        .ok_or_else(|| Error::InvalidInput("no anomaly column".into()))
}

fn detector_params(det: Detector, p: &DetectorParams) -> serde_json::Value {
    match det {
        Detector::KnnDist | Detector::Lof => json!({"k": p.k}),
        Detector::Iforest => json!({"trees": p.trees, "subsample": p.subsample, "seed": p.seed}),
        Detector::Centroid => json!({}),
    }
}
