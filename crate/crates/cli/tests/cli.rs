use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fbdrift_cli::record::{canonical_json, digest, read_records};

fn fbdrift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fbdrift"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn only_dir(root: &Path) -> std::path::PathBuf {
    let dirs: Vec<_> = fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.into_iter().next().unwrap()
}

const ZERO: &str = r#"
kind = "formbound"
[formbound]
drift = { kind = "Zero", dimension = 3, cutoff_radius = 1.0 }
"#;

const CASCADE: &str = r#"
kind = "pde-cascade"
[drifts.source]
kind = "Gaussian"
amplitude = [0.01, 0.0, 0.0]
width = 0.2
dimension = 3
cutoff_radius = 1.0
[pde-cascade]
drift = { kind = "Zero", dimension = 3, cutoff_radius = 1.0 }
sources = ["source", "source"]
alphas = [1, 2]
t0 = 0.0
t1 = 0.1
beta = 0.3
grid = { dimension = 3, half_width = 2.0, cells = 8, cfl_safety = 0.9, max_snapshots = 33 }
"#;

const CRITICALITY: &str = r#"
kind = "criticality"
seed = 5
[criticality]
deltas = [0.25, 4.0]
x0 = [0.01, 0.0, 0.0]
t_end = 0.001
dt = 1e-5
paths = 50
collapse_radius = 0.005
"#;

#[test]
fn zero_drift_form_bound_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "zero.toml", ZERO);
    let out = tmp.path().join("out");
    let o = fbdrift(&[
        "formbound",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = only_dir(&out);
    let recs = read_records(&dir.join("records.jsonl")).unwrap();
    let dh: Vec<_> = recs.iter().filter(|r| r.metric == "delta_hat").collect();
    assert_eq!(dh.len(), 1);
    assert_eq!(dh[0].value, Some(0.0));
    assert!(dir.join("config.json").exists() && dir.join("report.json").exists());
}

#[test]
fn infeasible_cascade_fails_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "cascade.toml", CASCADE);
    let out = tmp.path().join("out");
    let o = fbdrift(&[
        "pde-cascade",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "infeasible-constants");
    assert!(!out.exists() || fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn criticality_table_has_one_row_per_delta() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "crit.toml", CRITICALITY);
    let out = tmp.path().join("out");
    let o = fbdrift(&[
        "criticality",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(only_dir(&out).join("tables/criticality.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("delta,collapse_fraction,stderr"));
    assert_eq!(lines.count(), 2);
}

#[test]
fn same_seed_reproduces_records_and_digest_matches_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "crit.toml", CRITICALITY);
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|w| {
            let out = tmp.path().join(w);
            let o = fbdrift(&[
                "criticality",
                "--config",
                &cfg,
                "--out",
                out.to_str().unwrap(),
                "--workers",
                "1",
            ]);
            assert!(o.status.success());
            only_dir(&out)
        })
        .collect();
    let canon = |d: &Path| {
        read_records(&d.join("records.jsonl"))
            .unwrap()
            .into_iter()
            .map(|r| r.canonical())
            .collect::<Vec<_>>()
    };
    assert_eq!(canon(&runs[0]), canon(&runs[1]));
    let mut doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(runs[0].join("config.json")).unwrap()).unwrap();
    let obj = doc.as_object_mut().unwrap();
    obj.remove("workers");
    obj.remove("output");
    let d = digest(&doc);
    let name = runs[0].file_name().unwrap().to_string_lossy().into_owned();
    assert_eq!(name, format!("criticality-{}", &d[..12]));
    assert!(canon(&runs[0]).iter().all(|r| r.digest == d));
    assert!(!canonical_json(&doc).contains("workers"));
}

#[test]
fn different_seeds_change_the_experiment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "crit.toml", CRITICALITY);
    let out = tmp.path().join("out");
    for seed in ["1", "2"] {
        assert!(fbdrift(&[
            "criticality",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--seed",
            seed
        ])
        .status
        .success());
    }
    assert_eq!(fs::read_dir(&out).unwrap().count(), 2);
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fbdrift(&["verify", "--suite", "medium"]);
    assert_eq!(o.status.code(), Some(2));
    let recs = write(tmp.path(), "r.jsonl", "");
    let o = fbdrift(&["plotdata", "--records", &recs, "--view", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    let o = fbdrift(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn validation_errors_exit_with_three_and_list_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "bad.toml",
        "kind = \"simulate\"\nbogus = 1\n[simulate]\npaths = 0\n",
    );
    let o = fbdrift(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert!(err["fields"].as_array().unwrap().len() >= 2, "{err}");
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn plotdata_on_empty_records_prints_the_header() {
    let tmp = tempfile::tempdir().unwrap();
    let recs = write(tmp.path(), "r.jsonl", "");
    let o = fbdrift(&["plotdata", "--records", &recs, "--view", "criticality"]);
    assert!(o.status.success());
    assert_eq!(
        String::from_utf8_lossy(&o.stdout),
        "delta,collapse_fraction,stderr\n"
    );
}

#[test]
fn plotdata_reads_experiment_records() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "crit.toml", CRITICALITY);
    let out = tmp.path().join("out");
    assert!(fbdrift(&[
        "criticality",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap()
    ])
    .status
    .success());
    let recs = only_dir(&out).join("records.jsonl");
    let file = tmp.path().join("plot.csv");
    let o = fbdrift(&[
        "plotdata",
        "--records",
        recs.to_str().unwrap(),
        "--view",
        "criticality",
        "--out",
        file.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(file).unwrap().lines().count(), 3);
}
