use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pat_core::io;

fn cspat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cspat"))
        .args(args)
        .output()
        .expect("spawn cspat")
}

fn ok(args: &[&str]) {
    let out = cspat(args);
    assert!(
        out.status.success(),
        "cspat {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

// Desk geometry with a tiny network budget.
const SMALL: &str = r#"{
  "preset": "paper-desk",
  "network": { "training_samples": 3, "train": { "epochs": 1 } },
  "evaluation": {
    "phantoms": [ { "kind": "vessel", "seed": 5 } ],
    "metrics_csv": "out/metrics.csv",
    "output_dir": "out"
  }
}"#;

#[test]
fn phantom_pgm_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("v.patt");
    let pgm = dir.path().join("v.pgm");
    ok(&["phantom", "--kind", "vessel", "--seed", "3", "--out", p(&t)]);
    ok(&["export-pgm", "--in", p(&t), "--out", p(&pgm)]);
    let (w, h, px) = io::read_pgm(&std::fs::read(&pgm).unwrap()).unwrap();
    assert_eq!((w, h), (64, 64));
    assert_eq!(*px.iter().max().unwrap(), 255);
    assert_eq!(*px.iter().min().unwrap(), 0);
}

#[test]
fn fbp_of_zero_phantom_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    let f = dir.path().join("f.patt");
    let d = dir.path().join("d.patt");
    let g = dir.path().join("g.patt");
    let r = dir.path().join("r.patt");
    ok(&["phantom", "--kind", "disc", "--radius", "0", "--out", p(&f)]);
    ok(&["simulate", "--config", p(&cfg), "--phantom", p(&f), "--out", p(&d)]);
    ok(&["measure", "--config", p(&cfg), "--in", p(&d), "--out", p(&g)]);
    ok(&[
        "recon",
        "--method",
        "fbp",
        "--config",
        p(&cfg),
        "--in",
        p(&g),
        "--out",
        p(&r),
    ]);
    let img = io::load_matrix(&r).unwrap();
    assert_eq!(img.dim(), (64, 64));
    assert!(img.iter().all(|&v| v == 0.0));
}

#[test]
fn malformed_config_exits_2_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{"preset": "paper-desk", "solver": {"joint": {"alpah": 1}}}"#,
    );
    let out = cspat(&["bench", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("solver.joint.alpah"));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"preset": "paper-desk", "solver": {"joint": {"mu": 1000.0, "iters": 20}}}"#,
    );
    let f = dir.path().join("f.patt");
    let d = dir.path().join("d.patt");
    let g = dir.path().join("g.patt");
    ok(&["phantom", "--kind", "vessel", "--out", p(&f)]);
    ok(&["simulate", "--config", p(&cfg), "--phantom", p(&f), "--out", p(&d)]);
    ok(&["measure", "--config", p(&cfg), "--in", p(&d), "--out", p(&g)]);
    let out = cspat(&[
        "recon",
        "--method",
        "l1-joint",
        "--config",
        p(&cfg),
        "--in",
        p(&g),
        "--out",
        p(&dir.path().join("r.patt")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("1000"));
}

#[test]
fn train_recon_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    let data = dir.path().join("data");
    let w = dir.path().join("w.patw");
    ok(&[
        "train",
        "--config",
        p(&cfg),
        "--dataset",
        p(&data),
        "--generate",
        "2",
        "--out",
        p(&w),
    ]);
    let (params, manifest) = io::load_weights(&w).unwrap();
    assert_eq!(params.arch, pat_core::NetArch::default());
    assert_eq!(manifest.train.unwrap().epochs, 1);

    let f = dir.path().join("f.patt");
    let d = dir.path().join("d.patt");
    let g = dir.path().join("g.patt");
    ok(&["phantom", "--kind", "vessel", "--seed", "9", "--out", p(&f)]);
    ok(&["simulate", "--config", p(&cfg), "--phantom", p(&f), "--out", p(&d)]);
    ok(&["measure", "--config", p(&cfg), "--in", p(&d), "--out", p(&g)]);
    let mut recons = Vec::new();
    for method in ["fbp", "net-res", "net-null", "l1-twostage"] {
        let r = dir.path().join(format!("{method}.patt"));
        ok(&[
            "recon",
            "--method",
            method,
            "--config",
            p(&cfg),
            "--in",
            p(&g),
            "--out",
            p(&r),
            "--weights",
            p(&w),
        ]);
        recons.push(r);
    }
    let trace = dir.path().join("trace.csv");
    let r = dir.path().join("l1-joint.patt");
    ok(&[
        "recon",
        "--method",
        "l1-joint",
        "--config",
        p(&cfg),
        "--in",
        p(&g),
        "--out",
        p(&r),
        "--trace",
        p(&trace),
    ]);
    let text = std::fs::read_to_string(&trace).unwrap();
    assert!(text.starts_with("iteration,objective,data_residual_f,data_residual_h,coupling_residual\n"));
    assert_eq!(text.lines().count(), 1 + 71);
    recons.push(r);

    let csv = dir.path().join("eval.csv");
    let mut args = vec!["eval", "--truth", p(&f), "--csv", p(&csv), "--recon"];
    args.extend(recons.iter().map(|r| p(r)));
    ok(&args);
    let rows = io::read_metrics_csv(&csv).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.mse >= 0.0 && r.ssim <= 1.0));
}

#[test]
fn recon_network_without_weights_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    let g = dir.path().join("g.patt");
    io::save_matrix(&g, &ndarray::Array2::zeros((15, 129))).unwrap();
    let out = cspat(&[
        "recon",
        "--method",
        "net-res",
        "--config",
        p(&cfg),
        "--in",
        p(&g),
        "--out",
        p(&dir.path().join("r.patt")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_desk_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    ok(&["--threads", "1", "bench", "--config", p(&cfg), "--no-timing"]);
    let rows = io::read_metrics_csv(&dir.path().join("out/metrics.csv")).unwrap();
    let cells: Vec<(String, String)> = rows.iter().map(|r| (r.matrix.clone(), r.method.clone())).collect();
    let mut expected = Vec::new();
    for m in ["sparse", "bernoulli"] {
        for method in ["fbp", "l1-joint", "net-res", "net-null"] {
            expected.push((m.to_string(), method.to_string()));
        }
    }
    assert_eq!(cells, expected);
    assert!(rows.iter().all(|r| r.seconds == 0.0 && r.phantom == "vessel-5"));
    assert!(dir.path().join("out/weights-sparse.patw").exists());
    assert!(dir.path().join("out/vessel-5_bernoulli_net-null.patt").exists());
}
