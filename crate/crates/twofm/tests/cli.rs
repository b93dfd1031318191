//! End-to-end tests of the `twofm` binary: exit codes, file outputs and
//! reproducibility.

use std::path::Path;
use std::process::{Command, Output};

use nalgebra::DMatrix;

fn twofm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twofm"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

#[test]
fn simulate_writes_matrix_and_manifest_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a_dir = dir.path().join("a");
    let b_dir = dir.path().join("b");
    for d in [&a_dir, &b_dir] {
        let out = twofm(
            d,
            &[
                "--seed", "7", "simulate", "--p", "30", "--q", "20", "--psiF", "8", "--psiE", "1",
                "--sigma2", "0.01", "--bundle",
            ],
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let xa = read(&a_dir.join("X.csv"));
    let xb = read(&b_dir.join("X.csv"));
    assert_eq!(xa, xb, "simulate must be reproducible from the seed");
    assert_eq!(xa.lines().count(), 30);
    assert_eq!(xa.lines().next().unwrap().split(',').count(), 20);

    let manifest: serde_json::Value = serde_json::from_str(&read(&a_dir.join("manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 7);
    assert!(a_dir.join("bundle.json").exists());
}

#[test]
fn simulate_rejects_equal_variances_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = twofm(
        dir.path(),
        &["simulate", "--p", "10", "--q", "10", "--psiF", "1", "--psiE", "1"],
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("variance"), "unhelpful error: {err}");
}

#[test]
fn fit_on_simulated_data_converges_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let sim = twofm(
        dir.path(),
        &["--seed", "3", "simulate", "--p", "60", "--q", "60", "--psiF", "8", "--psiE", "1", "--sigma2", "0.01"],
    );
    assert!(sim.status.success());

    let x_csv = dir.path().join("X.csv");
    let out = twofm(
        dir.path(),
        &[
            "fit", "--input", x_csv.to_str().unwrap(), "--r", "1", "--c", "1",
            "--scores-out", "scores", "--restarts", "2",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let fit: serde_json::Value = serde_json::from_str(&read(&dir.path().join("fit.json"))).unwrap();
    assert_eq!(fit["schema_version"], 1);
    assert_eq!(fit["converged"], true);
    assert_eq!(fit["restart_finals"].as_array().unwrap().len(), 3);
    let trace = fit["loglik_trace"].as_array().unwrap();
    assert!(trace.len() >= 2);
    // Best restart wins: final equals the max of the restart finals.
    let finals: Vec<f64> =
        fit["restart_finals"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let last = trace.last().unwrap().as_f64().unwrap();
    assert!((last - finals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).abs() < 1e-9);

    // theta round-trips through the parameter schema.
    assert!(fit["theta"]["L"].as_array().unwrap().len() == 60);
    assert!(dir.path().join("scores_F.csv").exists());
    assert!(dir.path().join("scores_E.csv").exists());
}

#[test]
fn fit_reports_csv_position_on_malformed_input() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "1,2,3\n4,x,6\n7,8,9\n").unwrap();
    let out = twofm(dir.path(), &["fit", "--input", bad.to_str().unwrap(), "--r", "1", "--c", "1"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 2") && err.contains("column 2"), "diagnostics missing: {err}");
}

#[test]
fn center_flag_handles_column_offsets() {
    let dir = tempfile::tempdir().unwrap();
    // Model data shifted by large per-column offsets; centering restores a
    // fittable matrix.
    let dims = twofm::model::Dims::new(40, 30, 1, 1).unwrap();
    let params = twofm::sampler::sample_params(dims, &[8.0], &[1.0], 0.01, 6).unwrap();
    let bundle = twofm::sampler::sample(&params, twofm::sampler::FactorDistribution::Gaussian, 7).unwrap();
    let shifted = DMatrix::from_fn(40, 30, |i, j| bundle.x.values()[(i, j)] + 5.0 * (j as f64 + 1.0));
    let input = dir.path().join("x.csv");
    twofm::io::write_csv_matrix(&input, &shifted).unwrap();

    let out = twofm(
        dir.path(),
        &["fit", "--input", input.to_str().unwrap(), "--r", "1", "--c", "1", "--center"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn loglik_matches_the_library_value() {
    let dir = tempfile::tempdir().unwrap();
    let dims = twofm::model::Dims::new(12, 10, 1, 1).unwrap();
    let params = twofm::sampler::sample_params(dims, &[5.0], &[2.0], 0.5, 4).unwrap();
    let bundle = twofm::sampler::sample(&params, twofm::sampler::FactorDistribution::Gaussian, 5).unwrap();

    let params_path = dir.path().join("params.json");
    twofm::io::write_params_json(&params_path, &params).unwrap();
    let x_path = dir.path().join("X.csv");
    twofm::io::write_csv_matrix(&x_path, bundle.x.values()).unwrap();

    let out = twofm(
        dir.path(),
        &["loglik", "--params", params_path.to_str().unwrap(), "--input", x_path.to_str().unwrap()],
    );
    assert!(out.status.success());
    let printed: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    let expected = twofm::spectral::log_likelihood(&params, &bundle.x).unwrap();
    assert_eq!(printed, expected, "CLI must print the exact library value");
}

#[test]
fn curve_emits_the_grid_with_the_pole_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = twofm(
        dir.path(),
        &["curve", "--sigma2", "1", "--psiF", "1", "--y", "1", "--grid", "0:2:0.5"],
    );
    assert!(out.status.success());
    let text = read(&dir.path().join("curve.csv"));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "delta,g,rejected");
    assert_eq!(lines.len(), 1 + 5); // 0, 0.5, 1, 1.5, 2
    assert!(lines[3].starts_with("1,") && lines[3].ends_with("true"), "pole not rejected: {}", lines[3]);
}

#[test]
fn study_command_emits_tables_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "grid": [{"p": 20, "q": 20}],
        "psi_f": [8.0],
        "psi_e": [1.0],
        "replicates": 4,
        "base_seed": 1,
        "collect_scaled_errors": true,
        "delta_grid": [0.5, 2.0],
    });
    let cfg_path = dir.path().join("study.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

    let out = twofm(dir.path(), &["study", "--config", cfg_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let acc = read(&dir.path().join("accuracy_table.csv"));
    assert!(acc.starts_with("q,p,psiF,psiE,sigma2,replicates,failures,mean_r2_L,mean_r2_Lambda"));
    assert_eq!(acc.lines().count(), 2);
    assert!(dir.path().join("variance_table.csv").exists());
    assert!(dir.path().join("delta_sweep.csv").exists());
    assert!(dir.path().join("qq_psiE_p20_q20.csv").exists());
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn asymp_command_reads_a_fit_and_writes_intervals() {
    let dir = tempfile::tempdir().unwrap();
    let sim = twofm(
        dir.path(),
        &["--seed", "9", "simulate", "--p", "40", "--q", "40", "--psiF", "8", "--psiE", "1", "--sigma2", "0.01"],
    );
    assert!(sim.status.success());
    let fit = twofm(
        dir.path(),
        &["fit", "--input", dir.path().join("X.csv").to_str().unwrap(), "--r", "1", "--c", "1"],
    );
    assert_eq!(fit.status.code(), Some(0));

    let out = twofm(
        dir.path(),
        &["asymp", "--fit", dir.path().join("fit.json").to_str().unwrap(), "--level", "0.95"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let var: serde_json::Value = serde_json::from_str(&read(&dir.path().join("variances.json"))).unwrap();
    assert!(var["sigma_l"].as_array().unwrap()[0].as_f64().unwrap() > 0.0);
    let ci = read(&dir.path().join("ci.csv"));
    assert!(ci.starts_with("matrix,row,column,estimate,lower,upper,unreliable"));
    // One row per entry of L and Lambda plus the header.
    assert_eq!(ci.lines().count(), 1 + 40 + 40);
}
