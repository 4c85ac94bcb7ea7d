use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_driftspec"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn driftspec")
}

fn simulated(dir: &Path) -> PathBuf {
    let y = dir.join("y.csv");
    let o = run(&[
        "simulate",
        "--spec",
        fixture("sim_hom.json").to_str().unwrap(),
        "--out",
        y.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    y
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_then_fit_hom_writes_a_converged_result() {
    let dir = tempfile::tempdir().unwrap();
    let y = simulated(dir.path());
    let fit = dir.path().join("fit.json");
    let o = run(&["fit-hom", y.to_str().unwrap(), "--out", fit.to_str().unwrap(), "--gof"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let doc = json(&fit);
    assert_eq!(doc["model"], "hom");
    assert_eq!(doc["converged"], true);
    assert_eq!(doc["spectrum"]["I"].as_array().unwrap().len(), 16);
    assert!(doc["diagnostics"]["p_real"].as_f64().unwrap() > 0.0);
    let doc = driftspec::read_result(&fit).unwrap();
    assert!(doc.to_fitted().is_ok());
}

#[test]
fn simulate_is_reproducible_and_seed_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let a = fs::read(simulated(dir.path())).unwrap();
    let b = fs::read(simulated(dir.path())).unwrap();
    assert_eq!(a, b);

    let c = dir.path().join("c.csv");
    let spec = fixture("sim_hom.json");
    let o = run(&[
        "--seed",
        "99",
        "simulate",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        c.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_ne!(a, fs::read(c).unwrap());
}

#[test]
fn csv_bundle_round_trips_through_read_result() {
    let dir = tempfile::tempdir().unwrap();
    let y = simulated(dir.path());
    let out = dir.path().join("bundle");
    let o = run(&[
        "fit-het",
        y.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--format",
        "csv-bundle",
    ]);
    assert!(
        matches!(o.status.code(), Some(0) | Some(3)),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(out.join("manifest.json").is_file());
    let doc = driftspec::read_result(&out).unwrap();
    assert_eq!(doc.model, driftspec::io::ModelKind::Het);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = run(&["fit-hom", "--no-such-flag", "x.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert!(o.stdout.is_empty());
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    assert_eq!(run(&[]).status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("validate-theory"));
}

#[test]
fn malformed_data_exits_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "batch,freq_index,freq_hz,re,im\n0,0,0.0,1.0,oops\n").unwrap();
    let o = run(&["fit-hom", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));

    let missing = dir.path().join("missing.csv");
    assert_eq!(run(&["average", missing.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn incomplete_grid_exits_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("holes.csv");
    fs::write(
        &p,
        "batch,freq_index,freq_hz,re,im\n0,0,0.0,1.0,0.0\n0,1,1.0,2.0,0.0\n1,0,0.0,1.5,0.0\n",
    )
    .unwrap();
    let o = run(&["average", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let y = simulated(dir.path());
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "not_a_key = 3\n").unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "average", y.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn iteration_cap_reports_convergence_failure() {
    let dir = tempfile::tempdir().unwrap();
    let y = simulated(dir.path());
    let out = dir.path().join("fit.json");
    let o = run(&[
        "fit-hom",
        y.to_str().unwrap(),
        "--maxiter",
        "1",
        "--min-delta-loglik",
        "1e-300",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&out)["converged"], false);
}

#[test]
fn bootstrap_is_deterministic_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let y = simulated(dir.path());
    let fit = dir.path().join("fit.json");
    assert!(run(&["fit-hom", y.to_str().unwrap(), "--out", fit.to_str().unwrap()])
        .status
        .success());

    let band = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let o = run(&[
            "--seed",
            "7",
            "--threads",
            threads,
            "bootstrap",
            fit.to_str().unwrap(),
            "--from-fit",
            "--replicates",
            "100",
            "--out",
            out.to_str().unwrap(),
            "--format",
            "csv-bundle",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out.join("bands.csv")).unwrap()
    };
    let a = band("a", "1");
    let b = band("b", "4");
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn bootstrap_bands_contain_the_point_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let y = simulated(dir.path());
    let out = dir.path().join("boot.json");
    let o = run(&[
        "--seed",
        "3",
        "bootstrap",
        y.to_str().unwrap(),
        "--replicates",
        "60",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = json(&out);
    let i = doc["spectrum"]["I"].as_array().unwrap();
    let lo = doc["bands"]["I_lower"].as_array().unwrap();
    let hi = doc["bands"]["I_upper"].as_array().unwrap();
    let inside = (0..i.len())
        .filter(|&j| {
            let (v, l, h) = (i[j].as_f64().unwrap(), lo[j].as_f64().unwrap(), hi[j].as_f64().unwrap());
            l <= v && v <= h
        })
        .count();
    assert!(inside >= i.len() - 1, "{inside} of {}", i.len());
}

#[test]
fn asymptotic_bands_bracket_the_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let y = simulated(dir.path());
    let out = dir.path().join("asym.json");
    let o = run(&["asymptotics", y.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = json(&out);
    let i = doc["fit"]["spectrum"]["I"].as_array().unwrap();
    for (j, v) in i.iter().enumerate() {
        let v = v.as_f64().unwrap();
        assert!(doc["I_lower"][j].as_f64().unwrap() <= v);
        assert!(doc["I_upper"][j].as_f64().unwrap() >= v);
        assert!(doc["I_sd"][j].as_f64().unwrap() >= 0.0);
    }
    // Real dimension of the projective space of 15 Helmert coordinates.
    assert_eq!(doc["cov_beta"].as_array().unwrap().len(), 2 * 14);
}

#[test]
fn gof_snr_and_compare_produce_reports() {
    let dir = tempfile::tempdir().unwrap();
    let y = simulated(dir.path());
    let ys = y.to_str().unwrap();

    let o = run(&["gof", ys]);
    assert!(o.status.success());
    let g: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(g["p_real"].as_f64().unwrap() > 0.001);

    let o = run(&["snr", ys, "--regions", "0:3,13:16", "--model", "averaging"]);
    assert!(o.status.success());
    let s: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(s["flat_std"].as_f64().unwrap() >= 0.0);

    let o = run(&["compare", ys, "--regions", "0:3,13:16"]);
    assert!(o.status.success());
    let c: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(c["models"].as_array().unwrap().len(), 2);
}

#[test]
fn bad_regions_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let y = simulated(dir.path());
    assert_eq!(
        run(&["snr", y.to_str().unwrap(), "--regions", "5-3"]).status.code(),
        Some(1)
    );
    assert_eq!(run(&["snr", y.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(
        run(&["snr", y.to_str().unwrap(), "--regions", "0:4,2:6"]).status.code(),
        Some(1)
    );
}

#[test]
fn validate_theory_prints_one_line_per_criterion() {
    let o = run(&["validate-theory", "--quick", "--criterion", "2", "--criterion", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("[PASS]")).count(), 2);
    assert!(run(&["validate-theory", "--criterion", "15"]).status.code() == Some(1));
}

#[test]
fn config_supplies_model_and_regions() {
    let dir = tempfile::tempdir().unwrap();
    let y = simulated(dir.path());
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "model = \"averaging\"\nflat_regions = [[0, 3], [13, 16]]\n").unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "snr", y.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(s["model"], "averaging");

    let o = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "snr",
        y.to_str().unwrap(),
        "--model",
        "hom",
    ]);
    let s: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(s["model"], "hom");
}
