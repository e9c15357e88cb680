use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hermfunc"))
}

fn config(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn coeffs_default_range_passes() {
    let out = bin().arg("coeffs").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let doc = json(&out);
    assert_eq!(doc["n_min"], 3);
    assert_eq!(doc["n_max"], 12);
    assert_eq!(doc["results"]["4"]["weights"]["a1"], "-6i");
    assert_eq!(doc["results"]["3"]["weights"]["a3"], "1");
}

#[test]
fn coeffs_corruption_fails_with_named_rows() {
    let out = bin().args(["coeffs", "--n", "5", "--corrupt", "c2"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let doc = json(&out);
    let failures = doc["results"]["5"]["failures"].as_array().unwrap();
    assert!(failures.iter().any(|f| f.as_str().unwrap().starts_with("j_side")), "{failures:?}");
}

#[test]
fn verify_writes_report_to_output_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&dir, "v.toml", "n = 2\n[metric]\nkind = \"nonkaehler_perturbed\"\nseed = 2\n");
    let report = dir.path().join("report.json");
    let out = bin()
        .args(["verify", "--threads", "1", "--config"])
        .arg(&cfg)
        .arg("--output")
        .arg(&report)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(doc["passed"], true);
    let tags: Vec<&str> = doc["checks"].as_array().unwrap().iter().map(|c| c["tag"].as_str().unwrap()).collect();
    for t in ["linear_vs_bridge", "i_direct_vs_gradient", "three_cycle", "self_shift", "volume_defect"] {
        assert!(tags.contains(&t), "{t}");
    }
}

#[test]
fn coarse_grid_is_rejected_up_front() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&dir, "c.toml", "n = 3\nresolutions = [5,5,5,5,1,1]\n[metric]\nkind = \"flat\"\n");
    let out = bin().arg("verify").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("alias-free minimum is 9"), "{err}");
}

#[test]
fn unknown_keys_and_loose_tolerances_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let typo = config(&dir, "t.toml", "n = 2\n[metric]\nkind = \"flat\"\n[tolerances]\npaht = 1.0\n");
    assert_eq!(bin().arg("verify").arg("--config").arg(&typo).output().unwrap().status.code(), Some(2));
    let loose = config(&dir, "l.toml", "n = 2\n[metric]\nkind = \"flat\"\n[tolerances]\npath = 1e-3\n");
    assert_eq!(bin().arg("verify").arg("--config").arg(&loose).output().unwrap().status.code(), Some(2));
    let ok = bin().arg("verify").arg("--config").arg(&loose).arg("--i-know").output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
}

#[test]
fn eval_reports_functionals_and_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        &dir,
        "e.toml",
        "n = 2\nresolutions = [7,7,7,7]\n[metric]\nkind = \"nonkaehler_perturbed\"\n[potential]\nmodes = \"1,0,0,0 = 0.05; 0,1,-1,0 = 0.02i\"\n",
    );
    let out = bin().arg("eval").arg("--config").arg(&cfg).arg("--dump-forms").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let doc = json(&out);
    let f = &doc["functionals"];
    assert!(f["i_gradient"].as_f64().unwrap() > 0.0);
    assert_eq!(doc["forms"]["omega"]["degree"]["p"], 1);
}

#[test]
fn sweep_csv_is_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        &dir,
        "s.toml",
        "n = 2\n[metric]\nkind = \"nonkaehler_perturbed\"\n[sweep]\nresolutions = [7, 9]\norders = [5]\nseeds = [1, 2]\n",
    );
    let run = |threads: &str| {
        let out = bin().arg("sweep").arg("--config").arg(&cfg).args(["--threads", threads]).output().unwrap();
        assert_eq!(out.status.code(), Some(0));
        let text = String::from_utf8(out.stdout).unwrap();
        text.lines().map(|l| l.rsplit_once(',').map(|(a, _)| a.to_string()).unwrap()).collect::<Vec<_>>()
    };
    let a = run("1");
    assert_eq!(a[0], "n,res,quad,seed,residual_path,residual_I,residual_J");
    assert_eq!(a.len(), 5);
    assert_eq!(a, run("2"));
}
