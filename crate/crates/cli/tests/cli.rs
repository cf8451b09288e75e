use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn drsne(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drsne"))
        .args(args)
        .env_remove("DRSNE_THREADS")
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn small_spiral(dir: &TempDir) -> PathBuf {
    let data = dir.path().join("data.csv");
    ok(&drsne(&[
        "generate",
        "density-spiral",
        "--n",
        "150",
        "--seed",
        "3",
        "-o",
        p(&data),
    ]));
    data
}

const FAST: [&str; 10] = [
    "--iterations",
    "60",
    "--warmup-iters",
    "20",
    "--perplexity",
    "10",
    "--k-density",
    "15",
    "--seed",
    "1",
];

#[test]
fn generate_density_spiral_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        ok(&drsne(&["generate", "density-spiral", "--seed", "4", "-o", p(path)]));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 11);
    assert_eq!(header.last(), Some(&"anomaly"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2000);
    let flagged = rows.iter().filter(|r| r.ends_with(",1")).count();
    assert_eq!(flagged, 100);
    let meta = json(&a.with_extension("json"));
    assert_eq!(meta["anomalies"], 100);
    assert_eq!(meta["generator"], "density-spiral");
}

#[test]
fn generate_blobs_has_labels() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("blobs.csv");
    ok(&drsne(&["generate", "blobs", "--n", "50", "--dim", "3", "-o", p(&out)]));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next().unwrap(), "x0,x1,x2,label");
    assert_eq!(text.lines().count(), 51);
}

#[test]
fn embed_writes_embedding_and_sidecars() {
    let dir = TempDir::new().unwrap();
    let data = small_spiral(&dir);
    let out = dir.path().join("emb.csv");
    let mut args = vec![
        "embed",
        "-i",
        p(&data),
        "--header",
        "--anomaly-column",
        "anomaly",
        "-o",
        p(&out),
        "--evaluate",
    ];
    args.extend(FAST);
    ok(&drsne(&args));
    let emb = fs::read_to_string(&out).unwrap();
    assert_eq!(emb.lines().next().unwrap(), "dim0,dim1");
    assert_eq!(emb.lines().count(), 151);
    let prov = json(&dir.path().join("emb.json"));
    assert_eq!(prov["seed"], 1);
    assert_eq!(prov["iterations"], 60);
    assert_eq!(prov["metrics"]["k_eval"], 15);
    assert!(dir.path().join("emb.trace.csv").exists());
}

#[test]
fn embed_with_zero_lambda_succeeds() {
    let dir = TempDir::new().unwrap();
    let data = small_spiral(&dir);
    let out = dir.path().join("emb.csv");
    let mut args = vec![
        "embed",
        "-i",
        p(&data),
        "--header",
        "--anomaly-column",
        "anomaly",
        "-o",
        p(&out),
        "--lambda",
        "0",
    ];
    args.extend(FAST);
    ok(&drsne(&args));
    assert!(out.exists());
}

#[test]
fn embed_rejects_bad_configuration_without_partial_output() {
    let dir = TempDir::new().unwrap();
    let data = small_spiral(&dir);
    let out = dir.path().join("emb.csv");
    let mut args = vec![
        "embed",
        "-i",
        p(&data),
        "--header",
        "--anomaly-column",
        "anomaly",
        "-o",
        p(&out),
        "--lambda",
        "-1",
    ];
    args.extend(FAST);
    let res = drsne(&args);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("error:"));
    assert!(!out.exists());
    assert!(!dir.path().join("emb.json").exists());

    // k_density must be smaller than n
    let res = drsne(&["embed", "-i", p(&data), "--header", "-o", p(&out), "--k-density", "150"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn exit_codes_for_unreadable_and_malformed_input() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("emb.csv");
    let missing = dir.path().join("missing.csv");
    assert_eq!(
        drsne(&["embed", "-i", p(&missing), "-o", p(&out)]).status.code(),
        Some(3)
    );

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "1,2\n3,oops\n").unwrap();
    let res = drsne(&["embed", "-i", p(&bad), "-o", p(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("line 2"));

    assert_eq!(drsne(&["embed", "--bogus"]).status.code(), Some(2));
    assert_eq!(drsne(&["--help"]).status.code(), Some(0));
    assert!(!out.exists());
}

#[test]
fn evaluate_identity_embedding_is_perfect() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("plane.csv");
    let emb = dir.path().join("emb.csv");
    let mut d = String::from("a,b\n");
    let mut e = String::from("dim0,dim1\n");
    for i in 0..40 {
        let (x, y) = (
            (i as f64 * 0.37).sin() * (i as f64 + 1.0),
            (i as f64 * 1.3).cos() * 2.0 + i as f64 * 0.1,
        );
        d.push_str(&format!("{x},{y}\n"));
        e.push_str(&format!("{x},{y}\n"));
    }
    fs::write(&data, d).unwrap();
    fs::write(&emb, e).unwrap();
    let report = dir.path().join("report.json");
    ok(&drsne(&[
        "evaluate",
        "--data",
        p(&data),
        "--header",
        "--embedding",
        p(&emb),
        "--no-standardize",
        "--k-eval",
        "12",
        "--k-trust",
        "5",
        "-o",
        p(&report),
    ]));
    let r = json(&report);
    assert_eq!(r["trustworthiness"], 1.0);
    assert_eq!(r["continuity"], 1.0);
    assert!(r["stress"].as_f64().unwrap() <= 1e-9);
    assert!((r["density_correlation"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(r["k_eval"], 12);
    assert_eq!(r["k_trust"], 5);
    assert!(r.get("silhouette").is_none());
}

#[test]
fn evaluate_row_mismatch_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let data = small_spiral(&dir);
    let emb = dir.path().join("emb.csv");
    fs::write(&emb, "dim0,dim1\n0,0\n1,1\n").unwrap();
    let res = drsne(&["evaluate", "--data", p(&data), "--header", "--embedding", p(&emb)]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn sweep_writes_detail_and_summary() {
    let dir = TempDir::new().unwrap();
    let data = small_spiral(&dir);
    let out = dir.path().join("sweep.csv");
    let mut args = vec![
        "sweep",
        "-i",
        p(&data),
        "--header",
        "--anomaly-column",
        "anomaly",
        "--axis",
        "lambda",
        "--values",
        "0,0.001,0.01,0.1",
        "--repeats",
        "3",
        "-o",
        p(&out),
        "--quiet",
    ];
    args.extend(FAST);
    ok(&drsne(&args));
    let detail = fs::read_to_string(&out).unwrap();
    assert_eq!(detail.lines().count(), 13);
    assert!(detail
        .lines()
        .skip(1)
        .all(|l| l.starts_with("lambda,") && l.ends_with(",ok")));
    let summary = fs::read_to_string(dir.path().join("sweep.summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
}

#[test]
fn sweep_single_repeat_has_zero_std() {
    let dir = TempDir::new().unwrap();
    let data = small_spiral(&dir);
    let out = dir.path().join("sweep.csv");
    let summary = dir.path().join("s.csv");
    let mut args = vec![
        "sweep",
        "-i",
        p(&data),
        "--header",
        "--axis",
        "k_density",
        "--values",
        "10,20",
        "-o",
        p(&out),
        "--summary",
        p(&summary),
        "--quiet",
    ];
    args.extend(&FAST[..8]);
    ok(&drsne(&args));
    let text = fs::read_to_string(&summary).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let tw_std = header.iter().position(|h| *h == "tw_std").unwrap();
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[tw_std].parse::<f64>().unwrap(), 0.0);
    }
}

fn outlier_fixture(dir: &TempDir) -> PathBuf {
    let path = dir.path().join("z.csv");
    let mut s = String::from("dim0,dim1,anomaly\n");
    for i in 0..60 {
        let a = i as f64 * 0.7;
        s.push_str(&format!("{},{},0\n", a.cos() * (1.0 + (i % 5) as f64 * 0.1), a.sin()));
    }
    for (x, y) in [(40.0, 3.0), (-35.0, 20.0), (5.0, -45.0)] {
        s.push_str(&format!("{x},{y},1\n"));
    }
    fs::write(&path, s).unwrap();
    path
}

#[test]
fn anomaly_reports_every_detector() {
    let dir = TempDir::new().unwrap();
    let z = outlier_fixture(&dir);
    let out = dir.path().join("scores.csv");
    ok(&drsne(&[
        "anomaly",
        "--embedding",
        p(&z),
        "--k",
        "5",
        "--subsample",
        "32",
        "-o",
        p(&out),
    ]));
    let report = json(&dir.path().join("scores.json"));
    assert_eq!(report["auprc_method"], "average_precision");
    assert_eq!(report["n"], 63);
    assert_eq!(report["anomalies"], 3);
    let results = report["results"].as_array().unwrap();
    let names: Vec<&str> = results.iter().map(|r| r["detector"].as_str().unwrap()).collect();
    assert_eq!(names, ["knn_dist", "lof", "iforest", "centroid"]);
    for r in results {
        assert_eq!(r["auprc"], 1.0, "{}", r["detector"]);
    }
    let scores = fs::read_to_string(&out).unwrap();
    assert_eq!(scores.lines().next().unwrap(), "detector,index,score,is_anomaly");
    assert_eq!(scores.lines().count(), 1 + 4 * 63);
}

#[test]
fn anomaly_iforest_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let z = outlier_fixture(&dir);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        ok(&drsne(&[
            "anomaly",
            "--embedding",
            p(&z),
            "--detectors",
            "iforest",
            "--seed",
            "9",
            "-o",
            p(out),
        ]));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn anomaly_rejects_unknown_detector() {
    let dir = TempDir::new().unwrap();
    let z = outlier_fixture(&dir);
    let out = dir.path().join("s.csv");
    let res = drsne(&["anomaly", "--embedding", p(&z), "--detectors", "magic", "-o", p(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());
}
