use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mpotomo::povm::{prob_of_outcome, ProductPovm};
use mpotomo::sampler::OutcomeRecord;
use mpotomo::statesim::pure_product;
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mpotomo"));
    c.env_remove("MPOTOMO_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn mpotomo")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "mpotomo {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Data lines of a CSV with `#` provenance lines removed.
fn data_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).map(str::to_owned).collect()
}

/// Drop the named column from every line.
fn without_column(lines: &[String], name: &str) -> Vec<String> {
    let idx = lines[0].split(',').position(|c| c == name).unwrap();
    lines
        .iter()
        .map(|l| l.split(',').enumerate().filter(|(i, _)| *i != idx).map(|(_, v)| v).collect::<Vec<_>>().join(","))
        .collect()
}

/// Record whose frequencies equal the exact outcome probabilities of `|00><00|`.
fn noiseless_record(dir: &Path) -> PathBuf {
    let povm = ProductPovm::local_sic(2);
    let state = pure_product("00").unwrap();
    let m = 36u64;
    let mut counts = BTreeMap::new();
    for o in povm.outcomes().unwrap() {
        let f = prob_of_outcome(&povm, &state, &o).unwrap() * m as f64;
        assert!((f - f.round()).abs() < 1e-9, "probability times M is not an integer");
        counts.insert(o, f.round() as u64);
    }
    let record = OutcomeRecord::new(m, 0, "qubit-sic^2", counts).unwrap();
    let path = dir.join("noiseless.json");
    fs::write(&path, serde_json::to_vec(&record).unwrap()).unwrap();
    path
}

#[test]
fn check_povm_on_local_sic_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["check-povm", "local-sic", "--out", s(dir.path())]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("POVM pass"));
    let report = json(&dir.path().join("povm_report.json"));
    assert_eq!(report["pass"], true);
    assert_eq!(report["is_sic"], true);
    assert!(report["max_sic_deviation"].as_f64().unwrap() <= 1e-12);
    assert_eq!(report["provenance"]["version"], mpotomo::VERSION);
    assert_eq!(report["provenance"]["spec_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn check_povm_reports_an_invalid_file() {
    let dir = tempfile::tempdir().unwrap();
    // Two projectors scaled by 0.9 do not sum to the identity.
    let bad = r#"{"d": 2, "elements": [[[[0.9,0],[0,0]],[[0,0],[0,0]]], [[[0,0],[0,0]],[[0,0],[0.9,0]]]]}"#;
    let path = dir.path().join("bad.json");
    fs::write(&path, bad).unwrap();
    ok(&["check-povm", s(&path), "--out", s(dir.path())]);
    let report = json(&dir.path().join("povm_report.json"));
    assert_eq!(report["pass"], false);
    assert_eq!(report["is_sic"], false);
}

#[test]
fn noiseless_fixed_point_estimate_recovers_the_truth() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["generate", "--kind", "product", "--bits", "00", "--out", s(d)]);
    let record = noiseless_record(d);
    let state = d.join("state.json");
    let est_dir = d.join("est");
    ok(&[
        "estimate",
        "--record",
        s(&record),
        "--truth",
        s(&state),
        "--init-state",
        s(&state),
        "--rbar",
        "1",
        "--out",
        s(&est_dir),
    ]);
    let est = json(&est_dir.join("estimate.json"));
    let err = est["final_error"].as_f64().unwrap();
    assert!(err <= 1e-8, "final error {}", err);
    let trace = data_lines(&est_dir.join("trace.csv"));
    assert_eq!(trace[0], "iter,loss,error,step,wall_ms");
    assert_eq!(trace.len(), est["iterations_run"].as_u64().unwrap() as usize + 2);
}

#[test]
fn experiment_example_emits_80_rows_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = d.join("spec.json");
    fs::write(
        &spec,
        r#"{"n": [2, 3, 4, 5], "m": [3000], "rbar": [1, 4], "init": ["random", "spectral"], "algorithm": "pgd", "seeds": 5}"#,
    )
    .unwrap();
    let out = d.join("exp");
    ok(&["experiment", s(&spec), "--out", s(&out), "--threads", "2"]);
    let rows = data_lines(&out.join("results.csv"));
    assert_eq!(rows.len(), 81);
    let header: Vec<&str> = rows[0].split(',').collect();
    for col in ["n", "m", "rbar", "init", "algorithm", "seed", "final_error", "final_loss", "iterations", "wall_ms", "init_error"] {
        assert!(header.contains(&col), "missing column {}", col);
    }
    let summary = data_lines(&out.join("summary.csv"));
    assert_eq!(summary.len(), 17);
    assert!(summary[0].contains("non_converged"));
    let results_text = fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(results_text.starts_with("# tool: mpotomo\n"));
    assert!(results_text.contains(&format!("# version: {}", mpotomo::VERSION)));
    assert!(results_text.contains("# spec_hash: "));
    for plot in ["error_vs_n.svg", "convergence.svg"] {
        let svg = fs::read_to_string(out.join("plots").join(plot)).unwrap();
        assert!(svg.starts_with("<svg"), "{} is not an SVG", plot);
    }
    assert_eq!(fs::read_dir(out.join("traces")).unwrap().count(), 80);

    // Re-running skips every cell and leaves the numbers untouched.
    let again = ok(&["experiment", s(&spec), "--out", s(&out)]);
    assert!(String::from_utf8_lossy(&again.stdout).contains("(0 computed)"));
    assert_eq!(data_lines(&out.join("results.csv")), rows);

    // A different spec must not be mixed into the same table.
    fs::write(&spec, r#"{"n": [2], "m": [100], "rbar": [1], "init": ["spectral"], "seeds": 1}"#).unwrap();
    let clash = run(&["experiment", s(&spec), "--out", s(&out)]);
    assert_eq!(clash.status.code(), Some(1));
}

#[test]
fn experiment_is_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = d.join("spec.json");
    fs::write(
        &spec,
        r#"{"n": [2, 3], "m": [200, 2000], "rbar": [1], "init": ["spectral", "random"],
            "algorithm": ["pgd", "psgd"], "seeds": 2, "gamma": "exhaustive",
            "overrides": {"max_iters": 20, "batch_size": 8}}"#,
    )
    .unwrap();
    let a = d.join("a");
    let b = d.join("b");
    ok(&["experiment", s(&spec), "--out", s(&a), "--threads", "1"]);
    let threaded = bin().args(["experiment", s(&spec), "--out", s(&b)]).env("MPOTOMO_THREADS", "3").output().unwrap();
    assert!(threaded.status.success());
    let ra = without_column(&data_lines(&a.join("results.csv")), "wall_ms");
    let rb = without_column(&data_lines(&b.join("results.csv")), "wall_ms");
    assert_eq!(ra.len(), 1 + 2 * 2 * 2 * 2 * 2);
    assert_eq!(ra, rb);
    assert!(a.join("plots").join("error_vs_m.svg").exists());
    // Same truth across M and init for a given (n, rbar, seed): same gamma.
    let gammas: Vec<&str> = ra[1..]
        .iter()
        .filter(|l| l.starts_with("n2_") && l.contains("_s0,"))
        .map(|l| l.rsplit(',').next().unwrap())
        .collect();
    assert!(gammas.len() > 1 && gammas.iter().all(|g| *g == gammas[0] && !g.is_empty()));
}

#[test]
fn measure_and_estimate_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["generate", "--n", "3", "--kappa", "2", "--seed", "5", "--out", s(d)]);
    let state = d.join("state.json");
    let (r1, r2) = (d.join("r1"), d.join("r2"));
    ok(&["measure", "--state", s(&state), "-m", "5000", "--seed", "9", "--out", s(&r1)]);
    ok(&["measure", "--state", s(&state), "-m", "5000", "--seed", "9", "--out", s(&r2)]);
    let rec1 = fs::read(r1.join("record.json")).unwrap();
    assert_eq!(rec1, fs::read(r2.join("record.json")).unwrap());
    let r3 = d.join("r3");
    ok(&["measure", "--state", s(&state), "-m", "5000", "--seed", "10", "--out", s(&r3)]);
    assert_ne!(rec1, fs::read(r3.join("record.json")).unwrap());

    let record = r1.join("record.json");
    let (e1, e2) = (d.join("e1"), d.join("e2"));
    for e in [&e1, &e2] {
        ok(&[
            "estimate",
            "--record",
            s(&record),
            "--truth",
            s(&state),
            "--algorithm",
            "psgd",
            "--rbar",
            "4",
            "--max-iters",
            "5",
            "--seed",
            "3",
            "--out",
            s(e),
        ]);
    }
    let t1 = without_column(&data_lines(&e1.join("trace.csv")), "wall_ms");
    assert_eq!(t1, without_column(&data_lines(&e2.join("trace.csv")), "wall_ms"));
    let est = json(&e1.join("estimate.json"));
    assert_eq!(est["algorithm"], "psgd");
    // N = 640 n is capped at K = 4^3 outcomes.
    assert_eq!(est["epoch_size"], 64);
    assert_eq!(est["provenance"]["seed"], 3);
    // Twelve significant digits in every numeric field.
    let loss = t1[1].split(',').nth(1).unwrap();
    assert_eq!(loss.split('e').next().unwrap().replace(['.', '-'], "").len(), 12, "{}", loss);
}

#[test]
fn gamma_and_design_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["generate", "--kind", "product", "--bits", "000", "--out", s(d)]);
    ok(&["gamma", "--state", s(&d.join("state.json")), "--method", "exhaustive", "--out", s(d)]);
    let g = json(&d.join("gamma_report.json"));
    assert!((g["report"]["gamma"].as_f64().unwrap() - 8.0).abs() < 1e-10);
    assert_eq!(g["report"]["exact"], true);

    ok(&["generate", "--kind", "maximally-mixed", "--n", "3", "--out", s(d)]);
    ok(&["gamma", "--state", s(&d.join("state.json")), "--method", "beam", "--out", s(d)]);
    let g = json(&d.join("gamma_report.json"));
    assert!((g["report"]["gamma"].as_f64().unwrap() - 1.0).abs() < 1e-10);

    ok(&["check-design", "local-sic", "-s", "2", "--out", s(d)]);
    let r = json(&d.join("design_report.json"));
    assert!(r["report"]["delta_upper"].as_f64().unwrap() <= 1e-10);
    ok(&["check-design", "local-sic", "-s", "3", "--out", s(d)]);
    let r = json(&d.join("design_report.json"));
    assert!(r["report"]["delta_lower"].as_f64().unwrap() >= 0.01);
}

#[test]
fn exit_codes_distinguish_input_and_numerical_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["measure", "--state", "missing.json", "-m", "10"]).status.code(), Some(1));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["generate", "--kind", "product"]).status.code(), Some(1));

    let spec = d.join("spec.json");
    fs::write(&spec, r#"{"n": [], "m": [10], "rbar": [1], "init": ["spectral"], "seeds": 1}"#).unwrap();
    assert_eq!(run(&["experiment", s(&spec), "--out", s(d)]).status.code(), Some(1));
    fs::write(&spec, r#"{"n": [2], "m": [10], "rbar": [1], "init": ["spectral"], "seeds": 1, "typo": 3}"#).unwrap();
    assert_eq!(run(&["experiment", s(&spec), "--out", s(d)]).status.code(), Some(1));

    // A step size that overflows is a numerical failure.
    ok(&["generate", "--kind", "product", "--bits", "00", "--out", s(d)]);
    let record = noiseless_record(d);
    let config = d.join("config.json");
    fs::write(&config, r#"{"ranks": [1], "mu0": 1e308, "max_iters": 5}"#).unwrap();
    let out = run(&["estimate", "--record", s(&record), "--config", s(&config), "--out", s(d)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
