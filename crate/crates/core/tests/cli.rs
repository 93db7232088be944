use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn quasipot(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_quasipot"));
    cmd.args(args).env_remove("QUASIPOT_OUTPUT_ROOT");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_config(dir: &Path, json: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, json).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn usage_errors_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(
        code(&quasipot(
            &["train", "--config", "/no/such/config.json", "--out", out],
            &[]
        )),
        64
    );
    assert_eq!(code(&quasipot(&["prefactor", "--case", "C", "--out", out], &[])), 64);
    assert_eq!(code(&quasipot(&["frobnicate"], &[])), 64);
    assert_eq!(code(&quasipot(&["mpp"], &[])), 64);
    assert_eq!(
        code(&quasipot(
            &["report", dir.path().join("missing").to_str().unwrap()],
            &[]
        )),
        64
    );
    assert_eq!(code(&quasipot(&["--help"], &[])), 0);
}

#[test]
fn analytic_surface_and_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = quasipot(&["surface"], &[("QUASIPOT_OUTPUT_ROOT", dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("surface.csv")).unwrap();
    assert_eq!(csv.lines().count(), 8182);
    assert!(dir.path().join("provenance/surface.json").exists());

    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&quasipot(&["mpp", "--case", "A", "--out", out], &[])), 0);
    let path = fs::read_to_string(dir.path().join("path_A.csv")).unwrap();
    assert_eq!(path.lines().next().unwrap(), "sigma,x1,x2,V,divl,|b|");
    let first: Vec<f64> = path
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert!(((first[1] + 1.0).powi(2) + first[2].powi(2)).sqrt() <= 0.01);

    let o = quasipot(&["prefactor", "--case", "b", "--out", out], &[]);
    assert_eq!(code(&o), 0);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["case"], "B");
    assert_eq!(report["lambda_star"], 1.0);
}

#[test]
fn truncated_path_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"path": {"max_length": 0.1}}"#);
    let out = dir.path().to_str().unwrap();
    let o = quasipot(&["mpp", "--case", "A", "--config", &cfg, "--out", out], &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("MaxLength"));
    assert!(dir.path().join("path_A.csv").exists());
}

#[test]
fn train_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"hidden": [5, 5], "train": {"samples": 16, "epochs": 6, "checkpoint_every": 3}}"#,
    );
    let first = dir.path().join("first");
    let o = quasipot(&["train", "--config", &cfg, "--out", first.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(first.join("checkpoints/epoch_0000003.qpn").exists());
    let ckpt = first.join("checkpoints/final.qpn");

    let second = dir.path().join("second");
    let o = quasipot(
        &[
            "train",
            "--config",
            &cfg,
            "--epochs",
            "9",
            "--resume",
            ckpt.to_str().unwrap(),
            "--out",
            second.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let history = fs::read_to_string(second.join("history.csv")).unwrap();
    let epochs: Vec<&str> = history.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(epochs, ["7", "8", "9"]);
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(second.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["metrics"]["e_v"].as_f64().unwrap().is_finite());
}

#[test]
fn simulation_report_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"mc": {"trajectories": 40, "seed": 5}, "case_b": {"epsilons": [0.2, 0.3]}}"#,
    );
    let mut bytes = Vec::new();
    for run in ["r1", "r2"] {
        let out = dir.path().join(run);
        let o = quasipot(
            &["mc", "--case", "B", "--config", &cfg, "--out", out.to_str().unwrap()],
            &[],
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let o = quasipot(&["report", out.to_str().unwrap()], &[]);
        assert_eq!(code(&o), 0);
        bytes.push((
            fs::read(out.join("report.json")).unwrap(),
            fs::read(out.join("report.csv")).unwrap(),
            fs::read(out.join("mc_B.csv")).unwrap(),
        ));
    }
    assert_eq!(bytes[0], bytes[1]);
    let csv = String::from_utf8(bytes[0].1.clone()).unwrap();
    assert!(csv.starts_with("case,epsilon,met_mc,stderr,n_effective,censored,met_formula,rel_err\n"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn shipped_configs_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let benchmark = quasipot::pipeline::RunConfig::load(&root.join("benchmark.json")).unwrap();
    assert_eq!(benchmark, quasipot::pipeline::RunConfig::default());
    let quick = quasipot::pipeline::RunConfig::load(&root.join("quick.json")).unwrap();
    assert_eq!(quick.train.epochs, 2000);
    quick.validate(&quasipot::SystemRegistry::builtin()).unwrap();
}
