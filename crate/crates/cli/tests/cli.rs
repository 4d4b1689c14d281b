//! End-to-end runs of the `blt` binary.

use std::path::Path;
use std::process::{Command, Output};

fn blt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blt"))
        .args(args)
        .env("BLT_NOISE_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).expect("utf-8 output")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn bounds_table_header_and_rows() {
    let o = blt(&["bounds", "--n-max", "8"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,opt_lt_toe,mathias_ub,matousek_lb,bintree,mechanism_maxerr,ratio");
    assert_eq!(lines.len(), 9);
    let last: Vec<&str> = lines[8].split(',').collect();
    assert_eq!(last[0], "8");
    assert_eq!(last[4].parse::<f64>().unwrap(), 4.0);
}

#[test]
fn bounds_log_grid_with_mechanism() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("id.json");
    assert!(blt(&["build", "--method", "identity", "--steps", "10", "--out", p(&f)]).status.success());
    let o = blt(&["bounds", "--n-max", "10000", "--log-grid", "5", "--blt", p(&f)]);
    assert!(o.status.success());
    let text = stdout(&o);
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), vec![1.0, 10.0, 100.0, 1000.0, 10000.0]);
    for r in rows {
        assert!((r[5] - r[0].sqrt()).abs() < 1e-9);
        assert!((r[6] - r[5] / r[1]).abs() < 1e-12);
    }
}

#[test]
fn eval_identity_is_root_n() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("id.json");
    assert!(blt(&["build", "--method", "identity", "--steps", "100", "--out", p(&f)]).status.success());
    let o = blt(&["eval", "--blt", p(&f), "--steps", "100"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["max_err"].as_f64().unwrap(), 10.0);
    assert_eq!(v["n"], 100);
}

#[test]
fn round_trip_for_each_method() {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<(String, Vec<String>)> = vec![
        ("ra".into(), vec!["build", "--method", "ra", "--degree", "4", "--steps", "300"].into_iter().map(String::from).collect()),
        ("d1".into(), vec!["build", "--method", "degree1", "--steps", "300"].into_iter().map(String::from).collect()),
        ("opt".into(), vec!["optimize", "--degree", "3", "--steps", "300"].into_iter().map(String::from).collect()),
    ];
    for (name, mut args) in cases {
        let f = dir.path().join(format!("{name}.json"));
        args.extend(["--out".to_string(), p(&f).to_string()]);
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        assert!(blt(&args).status.success(), "{name}");
        let o = blt(&["eval", "--blt", p(&f), "--steps", "300"]);
        assert!(o.status.success());
        let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
        assert!(v["ratio"].as_f64().unwrap() >= 1.0);
        let out = dir.path().join(format!("{name}.csv"));
        let o = blt(&[
            "noisegen", "--blt", p(&f), "--steps", "300", "--dim", "3", "--seed", "7", "--zeta", "1.5", "--mode", "prefix",
            "--out", p(&out),
        ]);
        assert!(o.status.success());
        let csv = std::fs::read_to_string(&out).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "step,dim0,dim1,dim2");
        assert_eq!(csv.lines().count(), 301);
        let o = blt(&["verify", "--blt", p(&f), "--steps", "300", "--dim", "3", "--seed", "7"]);
        assert_eq!(o.status.code(), Some(0), "{name}");
    }
}

#[test]
fn raw_noise_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("d1.json");
    assert!(blt(&["build", "--method", "degree1", "--steps", "50", "--out", p(&f)]).status.success());
    let out = dir.path().join("noise.bin");
    let o = blt(&[
        "noisegen", "--blt", p(&f), "--steps", "50", "--dim", "4", "--seed", "3", "--zeta", "2", "--format", "f64", "--out",
        p(&out),
    ]);
    assert!(o.status.success());
    assert_eq!(std::fs::metadata(&out).unwrap().len(), 50 * 4 * 8);
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("noise.bin.json")).unwrap()).unwrap();
    for key in ["n", "m", "zeta", "sigma", "seed", "rng", "factorization_path"] {
        assert!(side.get(key).is_some(), "{key}");
    }
    assert_eq!(side["n"], 50);
    assert_eq!(side["m"], 4);
    assert!(side["rng"].as_str().unwrap().contains("ChaCha20"));
}

#[test]
fn verify_optimized_degree_three() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("opt.json");
    assert!(blt(&["optimize", "--degree", "3", "--steps", "512", "--out", p(&f)]).status.success());
    let file: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&f).unwrap()).unwrap();
    assert_eq!(file["meta"]["method"], "opt");
    assert_eq!(file["meta"]["n_target"], 512);
    assert!(file["meta"]["iterations"].is_u64());
    assert!(file["meta"]["final_ratio"].as_f64().unwrap() < 1.01);
    let o = blt(&["verify", "--blt", p(&f), "--steps", "512", "--dim", "2", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["max_abs_dev"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn verify_reports_mismatch_with_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("ra.json");
    assert!(blt(&["build", "--method", "ra", "--degree", "5", "--steps", "200", "--out", p(&f)]).status.success());
    let o = blt(&["verify", "--blt", p(&f), "--steps", "200", "--dim", "2", "--seed", "1", "--tol=-1"]);
    assert_eq!(o.status.code(), Some(3));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["ok"], false);
}

#[test]
fn compare_header_and_rows() {
    let o = blt(&["compare", "--degrees", "3,4", "--methods", "ra,opt,degree1", "--n-grid", "64,256"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "method,degree,n,max_err,opt_lt_toe,ratio");
    assert_eq!(lines.len(), 1 + 4 + 4 + 2);
    for l in &lines[1..] {
        let ratio: f64 = l.rsplit(',').next().unwrap().parse().unwrap();
        assert!(ratio >= 1.0 - 1e-12, "{l}");
    }
}

#[test]
fn recursive_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("base.json");
    assert!(blt(&["build", "--method", "ra", "--degree", "3", "--steps", "4", "--out", p(&f)]).status.success());
    let o = blt(&["recursive", "--base", p(&f), "--levels", "3", "--steps-check", "64"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["n"], 64);
    assert_eq!(v["ok"], true);
    let (s, ds) = (v["sensitivity"].as_f64().unwrap(), v["dense_sensitivity"].as_f64().unwrap());
    assert!((s - ds).abs() <= 1e-10 * s);
    assert!(v["dense_row_norm"].as_f64().unwrap() <= v["row_norm_bound"].as_f64().unwrap() * (1.0 + 1e-12));
}

#[test]
fn exit_codes() {
    assert_eq!(blt(&["bounds", "--n-max", "4", "--unknown"]).status.code(), Some(1));
    assert_eq!(blt(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(blt(&["eval", "--blt", "/nonexistent/f.json", "--steps", "4"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("rep.json");
    std::fs::write(
        &f,
        r#"{"degree":2,"theta":[0.5,0.5],"theta_hat":[0.6,0.7],"n":10,"meta":{"method":"opt","version":1}}"#,
    )
    .unwrap();
    assert_eq!(blt(&["eval", "--blt", p(&f), "--steps", "10"]).status.code(), Some(2));
    assert_eq!(blt(&["verify", "--blt", p(&f), "--steps", "20000", "--dim", "1", "--seed", "0"]).status.code(), Some(1));
    assert_eq!(blt(&["--help"]).status.code(), Some(0));
}
