//! The subcommands. Each writes its files into the configured output
//! directory plus a `<command>.manifest.json` naming the configuration hash,
//! the seed and the SHA-256 of every file written.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sspinv_core::alphasel::{read_net, train_alpha_net, write_net, AlphaNet, TrainingReport};
use sspinv_core::eof::{build_basis, read_basis, write_basis, EofBasis};
use sspinv_core::forward::Geometry;
use sspinv_core::profiles::{rms_error, write_profiles, ProfileSet};
use sspinv_core::synth::{derive_seed, MeasurementSet};
use sspinv_core::{Error, Result};

use crate::config::{ExperimentConfig, Selection};
use crate::data::{prepare, Dataset};
use crate::evaluate::{self, baselines, evaluate_test_set, Baselines, Selected, Selector, Setup};
use crate::report::{write_baselines, Axis, SweepReport, ValueReport, INVERSE_CRIME_NOTE};
use crate::{streams, svg};

pub const BASIS_FILE: &str = "basis.json";
pub const NET_FILE: &str = "alpha_net.json";

/// Files written by one command, hashed as they go.
struct Outputs {
    dir: PathBuf,
    command: &'static str,
    files: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    /// Output directory blanked, as in the hash.
    config: ExperimentConfig,
    files: &'a BTreeMap<String, String>,
}

impl Outputs {
    fn new(config: &ExperimentConfig, command: &'static str) -> Result<Self> {
        fs::create_dir_all(&config.output_dir)?;
        Ok(Self { dir: config.output_dir.clone(), command, files: BTreeMap::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        self.files.insert(name.to_string(), hex::encode(Sha256::digest(bytes)));
        Ok(path)
    }

    fn write_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        self.write_with(name, |buf| {
            serde_json::to_writer_pretty(&mut *buf, value)?;
            buf.push(b'\n');
            Ok(())
        })
    }

    fn finish(self, config: &ExperimentConfig) -> Result<()> {
        let mut stripped = config.clone();
        stripped.output_dir = PathBuf::new();
        let manifest = Manifest {
            command: self.command,
            config_hash: config.hash()?,
            seed: config.seed,
            config: stripped,
            files: &self.files,
        };
        let mut buf = serde_json::to_vec_pretty(&manifest)?;
        buf.push(b'\n');
        fs::write(self.dir.join(format!("{}.manifest.json", self.command)), buf)?;
        Ok(())
    }
}

fn open(path: &Path, what: &str) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Config(format!("cannot open {what} {}: {e}", path.display())))
}

pub fn load_basis(path: &Path) -> Result<EofBasis> {
    read_basis(open(path, "basis file")?)
}

pub fn load_net(path: &Path) -> Result<AlphaNet> {
    read_net(open(path, "alpha net")?)
}

/// Net, discrepancy or fixed selector; an unset net path trains a net for
/// this basis and survey.
pub fn resolve_selector(
    config: &ExperimentConfig,
    basis: &EofBasis,
    geometry: &Geometry,
    sigma_t: f64,
    n_ping: usize,
) -> Result<Selector> {
    match &config.selection {
        Selection::Discrepancy => Ok(Selector::Discrepancy),
        &Selection::Fixed { alpha } => Ok(Selector::Fixed(alpha)),
        Selection::Net { path: Some(path) } => {
            let net = load_net(path)?;
            let expected = (2 * net.window + 1) * (basis.n_eof() + 1) + 1;
            if net.input_dim() != expected {
                return Err(Error::Config(format!(
                    "net {} expects {} inputs but a {}-EOF basis gives {expected}",
                    path.display(),
                    net.input_dim(),
                    basis.n_eof()
                )));
            }
            Ok(Selector::Net(net))
        }
        Selection::Net { path: None } => {
            Ok(Selector::Net(train_net(config, basis, geometry, sigma_t, n_ping)?.net))
        }
    }
}

fn train_net(
    config: &ExperimentConfig,
    basis: &EofBasis,
    geometry: &Geometry,
    sigma_t: f64,
    n_ping: usize,
) -> Result<sspinv_core::alphasel::TrainedAlphaNet> {
    let mut training = config.alpha_training();
    training.sigma_t = sigma_t;
    training.n_ping = n_ping;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, streams::NET_TRAINING));
    train_alpha_net(basis, geometry, &training, &mut rng)
}

/// Basis from the training set plus the survey and selector of `config`.
pub fn setup_for(config: &ExperimentConfig, data: &Dataset) -> Result<Setup> {
    let basis = build_basis(&data.train, config.basis.n_eof)?;
    let geometry = config.survey.geometry()?;
    geometry.check_grid(basis.grid())?;
    let sigma_t = config.survey.sigma_t()?;
    let selector = resolve_selector(config, &basis, &geometry, sigma_t, config.survey.n_ping)?;
    Ok(Setup { basis, geometry, sigma_t, n_ping: config.survey.n_ping, inversion: config.inversion.clone(), selector })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EofSummary {
    pub n_training: usize,
    pub n_test: usize,
    pub rejected_records: usize,
    pub sigma: Vec<f64>,
    pub explained_variance: Vec<f64>,
}

/// Builds and saves the basis, the summary and both profile sets.
pub fn eof_build(config: &ExperimentConfig) -> Result<EofSummary> {
    let data = prepare(config)?;
    let basis = build_basis(&data.train, config.basis.n_eof)?;
    let mut out = Outputs::new(config, "eof-build")?;
    out.write_with(BASIS_FILE, |b| write_basis(&basis, b))?;
    out.write_with("train_profiles.csv", |b| write_profiles(&data.train, b))?;
    out.write_with("test_profiles.csv", |b| write_profiles(&data.test, b))?;
    out.write_with("eof_summary.csv", |b| {
        use std::io::Write;
        writeln!(b, "k,sigma,explained_variance")?;
        for (k, (s, v)) in basis.sigma().iter().zip(basis.explained_variance()).enumerate() {
            writeln!(b, "{},{s},{v}", k + 1)?;
        }
        Ok(())
    })?;
    out.finish(config)?;
    Ok(EofSummary {
        n_training: data.train.len(),
        n_test: data.test.len(),
        rejected_records: data.rejected.len(),
        sigma: basis.sigma().to_vec(),
        explained_variance: basis.explained_variance().to_vec(),
    })
}

/// Simulates the survey over test profile `index`; writes
/// `measurements.csv`, its `measurements.json` sidecar and `truth.csv`.
pub fn simulate(config: &ExperimentConfig, index: usize) -> Result<MeasurementSet> {
    let data = prepare(config)?;
    let truth = data.test.profiles().get(index).ok_or_else(|| {
        Error::InvalidArgument(format!("profile {index} out of range, test set has {}", data.test.len()))
    })?;
    let geometry = config.survey.geometry()?;
    geometry.check_grid(truth.grid())?;
    let mut rng = ChaCha8Rng::seed_from_u64(evaluate::survey_seed(config.seed, index));
    let mut m = sspinv_core::synth::simulate_measurements(
        truth,
        &geometry,
        config.survey.sigma_t()?,
        config.survey.n_ping,
        &mut rng,
    )?;
    m.seed = Some(evaluate::survey_seed(config.seed, index));
    m.truth_id = Some(format!("test:{index}"));
    let mut out = Outputs::new(config, "simulate")?;
    out.write_with("measurements.csv", |b| m.write_csv(b))?;
    out.write_with("measurements.json", |b| m.write_sidecar(b))?;
    let set = ProfileSet::new(truth.grid(), vec![truth.clone()])?;
    out.write_with("truth.csv", |b| write_profiles(&set, b))?;
    out.finish(config)?;
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub selection: String,
    pub selected: Selected,
    pub n_obs: usize,
    pub n_eof: usize,
    /// Grid weights whose inversion failed outright or did not converge.
    pub failed_weights: Vec<f64>,
    pub unconverged_weights: Vec<f64>,
    pub config_hash: String,
    pub seed: u64,
    pub note: String,
}

pub struct InvertPaths {
    pub measurements: PathBuf,
    /// Defaults to the measurements path with a `.json` extension.
    pub sidecar: Option<PathBuf>,
    /// Defaults to `basis.json` in the output directory.
    pub basis: Option<PathBuf>,
}

/// Inverts one measurement file; writes `inverted.csv`, `sweep.csv` and
/// `diagnostics.json`.
pub fn invert(config: &ExperimentConfig, paths: &InvertPaths) -> Result<Diagnostics> {
    let basis = load_basis(&paths.basis.clone().unwrap_or_else(|| config.output_dir.join(BASIS_FILE)))?;
    let sidecar = paths.sidecar.clone().unwrap_or_else(|| paths.measurements.with_extension("json"));
    let m = MeasurementSet::read(open(&paths.measurements, "measurements")?, open(&sidecar, "sidecar")?)?;
    m.geometry.check_grid(basis.grid())?;
    let selector = resolve_selector(config, &basis, &m.geometry, m.sigma_t, m.n_ping)?;
    let setup = Setup {
        basis,
        geometry: m.geometry.clone(),
        sigma_t: m.sigma_t,
        n_ping: m.n_ping,
        inversion: config.inversion.clone(),
        selector,
    };
    let inv = evaluate::invert(&setup, &m)?;
    let weights = |keep: &dyn Fn(&sspinv_core::invert::SweepEntry) -> bool| -> Vec<f64> {
        inv.sweep.entries.iter().filter(|e| keep(e)).map(|e| e.alpha).collect()
    };
    let diagnostics = Diagnostics {
        selection: setup.selector.name().to_string(),
        selected: inv.selected.clone(),
        n_obs: inv.sweep.n_obs,
        n_eof: inv.sweep.n_eof,
        failed_weights: weights(&|e| e.failure.is_some()),
        unconverged_weights: weights(&|e| e.failure.is_none() && !e.converged),
        config_hash: config.hash()?,
        seed: config.seed,
        note: INVERSE_CRIME_NOTE.to_string(),
    };
    let mut out = Outputs::new(config, "invert")?;
    let set = ProfileSet::new(inv.profile.grid(), vec![inv.profile.clone()])?;
    out.write_with("inverted.csv", |b| write_profiles(&set, b))?;
    out.write_with("sweep.csv", |b| inv.sweep.write_csv(b))?;
    out.write_json("diagnostics.json", &diagnostics)?;
    out.finish(config)?;
    Ok(diagnostics)
}

fn evaluate_config(config: &ExperimentConfig, data: &Dataset, value: f64) -> Result<ValueReport> {
    let setup = setup_for(config, data)?;
    let results = evaluate_test_set(&setup, &data.test, config.seed);
    Ok(ValueReport::new(value, setup.selector.name(), results))
}

fn write_report(out: &mut Outputs, prefix: &str, report: &SweepReport) -> Result<()> {
    out.write_with(&format!("{prefix}_table.csv"), |b| report.write_table(b))?;
    out.write_with(&format!("{prefix}_profiles.csv"), |b| report.write_profiles(b))?;
    out.write_json(&format!("{prefix}.json"), report)?;
    for (i, v) in report.values.iter().enumerate() {
        let errors: Vec<f64> = v.profiles.iter().map(|p| p.rms_error).collect();
        let title = match report.axis {
            Some(axis) => format!("{} = {}", axis.label(), v.value),
            None => "RMS error of inverted profiles".to_string(),
        };
        let name = if report.values.len() == 1 { format!("{prefix}_histogram.svg") } else { format!("{prefix}_histogram_{i}.svg") };
        out.write(&name, svg::histogram(&errors, &title).as_bytes())?;
    }
    Ok(())
}

/// Evaluates the test set at every `values` entry of `axis`; writes
/// `sweep_<axis>_table.csv`, `_profiles.csv`, `.json` and one histogram per value.
pub fn sweep(config: &ExperimentConfig, axis: Axis, values: &[f64]) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one axis value".into()));
    }
    let configs = values.iter().map(|&v| axis.apply(config, v)).collect::<Result<Vec<_>>>()?;
    let data = prepare(config)?;
    let reports = configs
        .iter()
        .zip(values)
        .map(|(c, &v)| evaluate_config(c, &data, v))
        .collect::<Result<Vec<_>>>()?;
    let report = SweepReport {
        axis: Some(axis),
        values: reports,
        baselines: baselines(&data.train, &data.test)?,
        config_hash: config.hash()?,
        seed: config.seed,
        note: INVERSE_CRIME_NOTE.to_string(),
    };
    let mut out = Outputs::new(config, "sweep")?;
    write_report(&mut out, &format!("sweep_{axis}"), &report)?;
    out.finish(config)?;
    Ok(report)
}

/// Writes `baselines.csv`.
pub fn baselines_cmd(config: &ExperimentConfig) -> Result<Baselines> {
    let data = prepare(config)?;
    let b = baselines(&data.train, &data.test)?;
    let mut out = Outputs::new(config, "baselines")?;
    out.write_with("baselines.csv", |buf| write_baselines(&b, buf))?;
    out.finish(config)?;
    Ok(b)
}

/// Trains the selector for the saved basis; writes `alpha_net.json` and
/// `training_report.json`.
pub fn train_alpha(config: &ExperimentConfig, basis_path: Option<&Path>) -> Result<TrainingReport> {
    let path = basis_path.map_or_else(|| config.output_dir.join(BASIS_FILE), Path::to_path_buf);
    let basis = load_basis(&path)?;
    let geometry = config.survey.geometry()?;
    geometry.check_grid(basis.grid())?;
    let trained = train_net(config, &basis, &geometry, config.survey.sigma_t()?, config.survey.n_ping)?;
    let mut out = Outputs::new(config, "train-alpha")?;
    out.write_with(NET_FILE, |b| write_net(&trained.net, b))?;
    out.write_json("training_report.json", &trained.report)?;
    out.finish(config)?;
    Ok(trained.report)
}

/// Evaluates the configuration once over the test set: `report_table.csv`,
/// `report_profiles.csv`, `report.json`, `report_histogram.svg`,
/// `baselines.csv` and `example.svg`, the profile whose error is nearest the
/// mean.
pub fn report(config: &ExperimentConfig) -> Result<SweepReport> {
    let data = prepare(config)?;
    let setup = setup_for(config, &data)?;
    let results = evaluate_test_set(&setup, &data.test, config.seed);
    let value = ValueReport::new(config.survey.n_beam as f64 * config.survey.n_ping as f64, setup.selector.name(), results);
    let report = SweepReport {
        axis: None,
        values: vec![value],
        baselines: baselines(&data.train, &data.test)?,
        config_hash: config.hash()?,
        seed: config.seed,
        note: INVERSE_CRIME_NOTE.to_string(),
    };
    let mut out = Outputs::new(config, "report")?;
    write_report(&mut out, "report", &report)?;
    out.write_with("baselines.csv", |b| write_baselines(&report.baselines, b))?;

    let v = &report.values[0];
    let example = v
        .profiles
        .iter()
        .filter(|p| p.rms_error.is_finite())
        .min_by(|a, b| (a.rms_error - v.summary.mean).abs().total_cmp(&(b.rms_error - v.summary.mean).abs()));
    if let Some(p) = example {
        let truth = &data.test.profiles()[p.index];
        let m = evaluate::simulate(&setup, truth, evaluate::survey_seed(config.seed, p.index))?;
        let inv = evaluate::invert(&setup, &m)?;
        let depths: Vec<f64> = truth.grid().depths().collect();
        let title = format!("test profile {}, RMS error {:.2} m/s", p.index, rms_error(&inv.profile, truth)?);
        let svg = svg::profiles(&depths, &[("true", truth.speeds()), ("inverted", inv.profile.speeds())], &title);
        out.write("example.svg", svg.as_bytes())?;
    }
    out.finish(config)?;
    Ok(report)
}
