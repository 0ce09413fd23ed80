use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mns(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mns"))
        .args(args)
        .current_dir(cwd)
        .env("SOURCE_DATE_EPOCH", "0")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) {
    let out = mns(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn simulate_writes_subjects_and_truth() {
    let tmp = tempfile::tempdir().unwrap();
    ok(
        &["simulate", "--p", "50", "--subjects", "10", "--n", "200", "--e-ran", "20", "--tau", "1", "--seed", "7", "--out-dir", "c"],
        tmp.path(),
    );
    let dir = tmp.path().join("c");
    let csvs = fs::read_dir(&dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv"))
        .count();
    assert_eq!(csvs, 10);
    assert!(dir.join("truth/population.tsv").exists());
    assert!(dir.join("truth/variable.tsv").exists());
    assert!(dir.join("truth/subject_10_full.tsv").exists());
    assert!(dir.join("run_manifest.json").exists());
}

#[test]
fn simulate_is_byte_identical_under_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let args = |out: &'static str| ["simulate", "--p", "15", "--subjects", "3", "--n", "40", "--e-ran", "5", "--seed", "3", "--out-dir", out];
    ok(&args("a"), tmp.path());
    ok(&args("b"), tmp.path());
    let strip = |v: Vec<(String, Vec<u8>)>| -> Vec<(String, Vec<u8>)> {
        v.into_iter().filter(|(p, _)| p != "run_manifest.json").collect()
    };
    let a = strip(files(&tmp.path().join("a")));
    let b = strip(files(&tmp.path().join("b")));
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["simulate", "--p", "12", "--subjects", "3", "--n", "60", "--e-ran", "4", "--out-dir", "c"], tmp.path());
    ok(&["fit", "--cohort", "c", "--lambda-grid", "4", "--threads", "1", "--out-dir", "f1"], tmp.path());
    ok(&["fit", "--cohort", "c", "--lambda-grid", "4", "--threads", "4", "--out-dir", "f4"], tmp.path());
    let strip = |v: Vec<(String, Vec<u8>)>| -> Vec<(String, Vec<u8>)> {
        v.into_iter().filter(|(p, _)| p != "run_manifest.json").collect()
    };
    assert_eq!(strip(files(&tmp.path().join("f1"))), strip(files(&tmp.path().join("f4"))));
}

#[test]
fn invalid_flags_exit_with_usage_code() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(mns(&["simulate", "--tau", "1.5"], tmp.path()).status.code(), Some(2));
    assert_eq!(mns(&["fit"], tmp.path()).status.code(), Some(2));
    assert_eq!(mns(&["--rule", "xor", "simulate"], tmp.path()).status.code(), Some(2));
    assert_eq!(mns(&["nonsense"], tmp.path()).status.code(), Some(2));
    assert_eq!(mns(&["--help"], tmp.path()).status.code(), Some(0));
}

#[test]
fn missing_cohort_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mns(&["fit", "--cohort", "nowhere", "--lambda", "0.1"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));
}

#[test]
fn fit_grid_emits_one_set_per_penalty() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["simulate", "--p", "10", "--subjects", "3", "--n", "50", "--e-ran", "3", "--out-dir", "c"], tmp.path());
    ok(&["fit", "--cohort", "c", "--alpha", "0.25", "--lambda-grid", "25", "--out-dir", "f"], tmp.path());
    let index: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("f/results.json")).unwrap()).unwrap();
    let sets = index["sets"].as_array().unwrap();
    assert_eq!(sets.len(), 25);
    for (k, s) in sets.iter().enumerate() {
        assert_eq!(s["alpha"].as_f64(), Some(0.25));
        assert!(tmp.path().join("f").join(s["dir"].as_str().unwrap()).join("result.json").exists(), "set {k}");
    }
}

#[test]
fn fit_then_evaluate_produces_roc_tables() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["simulate", "--p", "15", "--subjects", "4", "--n", "100", "--e-ran", "5", "--seed", "1", "--out-dir", "c"], tmp.path());
    ok(&["fit", "--cohort", "c", "--lambda-grid", "8", "--out-dir", "f"], tmp.path());
    ok(&["evaluate", "--results", "f", "--truth", "c", "--out-dir", "e"], tmp.path());
    for net in ["population", "variance", "subject_specific", "subject_full"] {
        let roc = fs::read_to_string(tmp.path().join(format!("e/roc_{net}.tsv"))).unwrap();
        let rows: Vec<&str> = roc.lines().collect();
        assert_eq!(rows[0], "lambda\tfpr\ttpr");
        // 8 grid points plus the two anchors.
        assert_eq!(rows.len(), 1 + 8 + 2, "{net}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("e/evaluation.json")).unwrap()).unwrap();
    let auc = report["networks"][0]["auc"].as_f64().unwrap();
    assert!(auc > 0.8, "population AUC {auc}");
}

#[test]
fn evaluate_with_wrong_p_truth_fails() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["simulate", "--p", "12", "--subjects", "2", "--n", "40", "--e-ran", "2", "--out-dir", "c12"], tmp.path());
    ok(&["simulate", "--p", "10", "--subjects", "2", "--n", "40", "--e-ran", "2", "--out-dir", "c10"], tmp.path());
    ok(&["fit", "--cohort", "c12", "--lambda", "0.2", "--out-dir", "f"], tmp.path());
    let out = mns(&["evaluate", "--results", "f", "--truth", "c10", "--out-dir", "e"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension"));
}

#[test]
fn baselines_and_cv_write_result_indexes() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["simulate", "--p", "10", "--subjects", "3", "--n", "60", "--e-ran", "3", "--out-dir", "c"], tmp.path());
    ok(&["glasso", "--cohort", "c", "--mode", "pooled", "--lambda-grid", "5", "--out-dir", "gp"], tmp.path());
    ok(&["glasso", "--cohort", "c", "--mode", "subject", "--lambda-grid", "5", "--out-dir", "gs"], tmp.path());
    ok(&["stability", "--cohort", "c", "--b", "20", "--threshold", "0.5", "--out-dir", "st"], tmp.path());
    ok(&["cv", "--cohort", "c", "--folds", "3", "--lambda-grid", "5", "--out-dir", "cv"], tmp.path());
    for d in ["gp", "gs", "st", "cv"] {
        ok(&["evaluate", "--results", d, "--truth", "c", "--out-dir", &format!("e_{d}")], tmp.path());
    }
    assert!(tmp.path().join("e_gp/roc_population.tsv").exists());
    assert!(tmp.path().join("e_gs/roc_subject_full.tsv").exists());
    assert!(tmp.path().join("e_st/roc_variance.tsv").exists());
    assert!(tmp.path().join("st/population.tsv").exists());
    assert!(tmp.path().join("cv/cv.tsv").exists());
    assert!(tmp.path().join("cv/set_00/variance.tsv").exists());
}

#[test]
fn simulate_components_writes_ten_components() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["simulate-components", "--p", "100", "--n", "50", "--out-dir", "c"], tmp.path());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("c/cohort.json")).unwrap()).unwrap();
    assert_eq!(manifest["subjects"].as_array().unwrap().len(), 3);
    let pop = fs::read_to_string(tmp.path().join("c/truth/population.tsv")).unwrap();
    // Eight shared trees of ten nodes each; the other two vary.
    assert_eq!(pop.lines().count(), 72);
    let var = fs::read_to_string(tmp.path().join("c/truth/variable.tsv")).unwrap();
    assert_eq!(var.lines().count(), 18);
}

#[test]
fn run_manifest_records_digests() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["simulate", "--p", "8", "--subjects", "2", "--n", "30", "--e-ran", "2", "--out-dir", "c"], tmp.path());
    ok(&["fit", "--cohort", "c", "--lambda", "0.1", "--out-dir", "f"], tmp.path());
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("f/run_manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "fit");
    assert_eq!(m["started_unix"], 0);
    assert_eq!(m["inputs"].as_array().unwrap().len(), 3);
    assert!(m["outputs"].as_array().unwrap().iter().any(|o| o["path"] == "set_00/population.tsv"));
    assert_eq!(m["config"]["rule"], "and");
}
