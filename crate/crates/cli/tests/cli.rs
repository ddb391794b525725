use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sspinv_cli::commands::Diagnostics;
use sspinv_cli::config::ExperimentConfig;
use sspinv_cli::data::prepare;
use sspinv_cli::evaluate::baselines;
use sspinv_cli::report::SweepReport;
use sspinv_core::alphasel::TrainingReport;
use sspinv_core::eof::{read_basis, reconstruct, sample_coefficients, write_basis};
use sspinv_core::profiles::{parse_profiles, rms_error};
use sspinv_core::synth::{make_geometry, simulate_measurements};

const SMALL: &str = "seed = 5\n[data]\ntrain_count = 40\ntest_count = 5\n[survey]\nn_beam = 60\n\
                     [training]\nn_truths = 40\nepochs = 80\n";

fn sspinv(dir: &Path, args: &[&str]) -> Output {
    let config = dir.join("config.toml");
    if !config.exists() {
        std::fs::write(&config, SMALL).unwrap();
    }
    let mut full = vec!["--config", config.to_str().unwrap(), "--out", dir.to_str().unwrap()];
    full.extend_from_slice(args);
    Command::new(env!("CARGO_BIN_EXE_sspinv")).args(&full).output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn bad_flags_and_unknown_axis_are_user_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(sspinv(dir.path(), &["--bogus", "report"]).status.code(), Some(1));
    let out = sspinv(dir.path(), &["sweep", "--axis", "depth", "--values", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("unknown sweep axis"));
    let out = Command::new(env!("CARGO_BIN_EXE_sspinv")).arg("baselines").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--seed"));
}

#[test]
fn eof_build_summary_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    ok(&sspinv(dir.path(), &["eof-build"]));
    let bytes = std::fs::read(dir.path().join("basis.json")).unwrap();
    let basis = read_basis(bytes.as_slice()).unwrap();
    let mut again = Vec::new();
    write_basis(&basis, &mut again).unwrap();
    assert_eq!(again, bytes);

    let summary = std::fs::read_to_string(dir.path().join("eof_summary.csv")).unwrap();
    let sigma: Vec<f64> = summary.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(sigma.len(), 5);
    assert!(sigma.windows(2).all(|w| w[0] >= w[1]));

    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("eof-build.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert!(manifest["files"]["basis.json"].is_string());
}

#[test]
fn flat_ocean_gives_degenerate_basis_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("config.toml"),
        "seed = 1\n[data.ocean]\nmode_amplitudes = []\nmixed_layer_jitter = 0.0\ntrend_per_year = 0.0\n",
    )
    .unwrap();
    let out = sspinv(dir.path(), &["eof-build"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("degenerate basis"), "{}", stderr(&out));
}

#[test]
fn train_alpha_without_basis_fails_clearly() {
    let dir = tempfile::tempdir().unwrap();
    let out = sspinv(dir.path(), &["train-alpha"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("cannot open basis file"), "{}", stderr(&out));
}

#[test]
fn train_alpha_beats_constant_predictor() {
    let dir = tempfile::tempdir().unwrap();
    ok(&sspinv(dir.path(), &["eof-build"]));
    ok(&sspinv(dir.path(), &["train-alpha"]));
    let report: TrainingReport =
        serde_json::from_slice(&std::fs::read(dir.path().join("training_report.json")).unwrap()).unwrap();
    assert!(report.n_train > 0 && report.n_validation > 0);
    assert!(report.validation_loss < report.label_variance, "{report:?}");
}

#[test]
fn corrupt_measurements_report_the_line() {
    let dir = tempfile::tempdir().unwrap();
    ok(&sspinv(dir.path(), &["eof-build"]));
    ok(&sspinv(dir.path(), &["simulate"]));
    let path = dir.path().join("measurements.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[3] = "0,not-an-angle,0.4";
    std::fs::write(&path, lines.join("\n")).unwrap();
    let out = sspinv(dir.path(), &["--discrepancy", "invert", "--measurements", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 4"), "{}", stderr(&out));
}

#[test]
fn noiseless_in_span_inversion_recovers_truth() {
    let dir = tempfile::tempdir().unwrap();
    ok(&sspinv(dir.path(), &["--n-eof", "2", "eof-build"]));
    let basis = read_basis(std::fs::read(dir.path().join("basis.json")).unwrap().as_slice()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let truth = reconstruct(&basis, &sample_coefficients(&basis, &mut rng)).unwrap();
    let m = simulate_measurements(&truth, &make_geometry(120.0, 500, 300.0).unwrap(), 0.0, 1, &mut rng).unwrap();
    let meas = dir.path().join("m.csv");
    m.write_csv(std::fs::File::create(&meas).unwrap()).unwrap();
    m.write_sidecar(std::fs::File::create(dir.path().join("m.json")).unwrap()).unwrap();

    ok(&sspinv(dir.path(), &["--fixed-alpha", "1e-8", "invert", "--measurements", meas.to_str().unwrap()]));
    let d: Diagnostics = serde_json::from_slice(&std::fs::read(dir.path().join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(d.selection, "fixed");
    assert_eq!(d.selected.alpha, 1e-8);
    assert_eq!(d.n_obs, 500);
    let inverted = parse_profiles(std::fs::File::open(dir.path().join("inverted.csv")).unwrap(), basis.grid()).unwrap();
    let err = rms_error(&inverted.set.profiles()[0], &truth).unwrap();
    assert!(err <= 1e-2, "error {err}");
    let sweep = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(sweep.starts_with("alpha,misfit,prior,iters,converged,x_1,x_2\n"));
}

#[test]
fn single_value_sweep_matches_report() {
    let dir = tempfile::tempdir().unwrap();
    ok(&sspinv(dir.path(), &["--discrepancy", "sweep", "--axis", "swath_deg", "--values", "120"]));
    ok(&sspinv(dir.path(), &["--discrepancy", "report"]));
    let read = |name: &str| -> SweepReport {
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        serde_json::from_str(&text).unwrap()
    };
    let sweep = read("sweep_swath_deg.json");
    let report = read("report.json");
    assert_eq!(sweep.values[0].profiles, report.values[0].profiles);
    assert_eq!(sweep.values[0].summary, report.values[0].summary);
    assert_eq!(sweep.baselines, report.baselines);

    let v = &sweep.values[0];
    let mean = v.profiles.iter().map(|p| p.rms_error).sum::<f64>() / v.profiles.len() as f64;
    assert!((mean - v.summary.mean).abs() <= 1e-12);
    for name in ["sweep_swath_deg_table.csv", "sweep_swath_deg_profiles.csv", "report_histogram.svg", "example.svg"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let table = std::fs::read_to_string(dir.path().join("sweep_swath_deg_table.csv")).unwrap();
    assert!(table.starts_with("Swath angle width (deg),120\n"));
}

#[test]
fn spatial_error_sweep_has_six_columns() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("config.toml"), "seed = 2\n[data]\ntrain_count = 30\ntest_count = 2\n[survey]\nn_beam = 40\n").unwrap();
    ok(&sspinv(dir.path(), &["--discrepancy", "sweep", "--axis", "spatial_error_cm", "--values", "10,4,2,1,0.5,0.25"]));
    let table = std::fs::read_to_string(dir.path().join("sweep_spatial_error_cm_table.csv")).unwrap();
    assert!(table.lines().all(|l| l.split(',').count() == 7));
    assert_eq!(table.lines().next(), Some("Spatial error (cm),10,4,2,1,0.5,0.25"));
}

#[test]
fn test_mean_baseline_is_lower_on_average() {
    let (mut train, mut test) = (0.0, 0.0);
    for seed in 0..20 {
        let c = ExperimentConfig::from_toml(&format!("seed = {seed}\n[data]\ntrain_count = 30\ntest_count = 20\n")).unwrap();
        let d = prepare(&c).unwrap();
        let b = baselines(&d.train, &d.test).unwrap();
        train += b.train_mean;
        test += b.test_mean;
    }
    assert!(test <= train, "test-mean {test} vs train-mean {train}");
}
