use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn mbayes(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mbayes")).args(args).output().unwrap()
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(format!("{name}.json"))
        .to_string_lossy()
        .into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(path: PathBuf) -> Vec<u8> {
    std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Short ellipse run into `dir`.
fn short_sample(dir: &Path, extra: &[&str]) -> Output {
    let cfg = config("ellipse");
    let mut args = vec![
        "sample",
        "--config",
        &cfg,
        "--override",
        "sampler.iters=1000",
        "--out",
        dir.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    mbayes(&args)
}

#[test]
fn missing_config_is_a_validation_error_naming_the_path() {
    let out = mbayes(&["sample", "--config", "no/such/missing.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("no/such/missing.json"), "{}", stderr(&out));
}

#[test]
fn bad_arguments_and_unknown_keys_exit_with_one() {
    assert_eq!(mbayes(&["sample"]).status.code(), Some(1));
    assert_eq!(mbayes(&["frobnicate"]).status.code(), Some(1));
    let out = mbayes(&["forward", "--config", &config("ellipse"), "--override", "prior.kk=3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("kk"), "{}", stderr(&out));
}

#[test]
fn help_for_every_subcommand() {
    for sub in ["generate", "tune-eps", "forward", "sample", "hierarchical", "report"] {
        let out = mbayes(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"), "{sub}");
    }
}

#[test]
fn tune_eps_prints_table_and_suggestion() {
    let out = mbayes(&["tune-eps", "--config", &config("ellipse")]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let table = String::from_utf8(out.stdout.clone()).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("epsilon,T,slope"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 40);
    assert!(rows.windows(2).all(|w| w[0][0] < w[1][0] && w[0][1] <= w[1][1]));
    assert!(stderr(&out).contains("steepest slope at epsilon"));
}

#[test]
fn generate_and_forward_write_csv() {
    let out = mbayes(&["generate", "--config", &config("torus")]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 400);

    let out = mbayes(&["forward", "--config", &config("ellipse")]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("node,u_true,u\n"));
    assert_eq!(text.lines().count(), 401);
}

#[test]
fn sample_writes_outputs_and_repeats_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let out = short_sample(&a, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("metric,value\n"));
    assert_eq!(short_sample(&b, &[]).status.code(), Some(0));
    for file in ["summary.csv", "trace.csv"] {
        assert!(read(a.join(file)) == read(b.join(file)), "{file}");
    }
    let strip = |dir: &Path| {
        let mut v: Value = serde_json::from_slice(&read(dir.join("report.json"))).unwrap();
        v["config"]["output"] = Value::Null;
        v
    };
    assert_eq!(strip(&a), strip(&b));
    let report = strip(&a);
    assert_eq!(report["config"]["sampler"]["iters"], 1000);
    assert_eq!(report["chains"][0]["samples"], 75);
}

#[test]
fn report_rebuilds_identical_files_and_echo_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    assert_eq!(short_sample(&run, &["--chains", "2", "--seed", "7"]).status.code(), Some(0));
    let files = ["report.json", "summary.csv", "trace.csv", "trace_1.csv"];
    let snapshot = || -> Vec<Vec<u8>> { files.iter().map(|f| read(run.join(f))).collect() };
    let before = snapshot();

    let out = mbayes(&["report", "--out", run.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(snapshot() == before);

    // rerun from the echoed config alone, which names the same output directory
    let report: Value = serde_json::from_slice(&before[0]).unwrap();
    assert_eq!(report["seeds"]["root"], 7);
    let echo = tmp.path().join("echo.json");
    std::fs::write(&echo, serde_json::to_vec(&report["config"]).unwrap()).unwrap();
    for f in files {
        std::fs::remove_file(run.join(f)).unwrap();
    }
    let out = mbayes(&["sample", "--config", echo.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(snapshot() == before);
}

#[test]
fn hierarchical_requires_a_hyperprior() {
    let out = mbayes(&[
        "hierarchical",
        "--config",
        &config("ellipse"),
        "--override",
        "sampler.iters=200",
        "--out",
        tempfile::tempdir().unwrap().path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("hyperprior"), "{}", stderr(&out));
}
