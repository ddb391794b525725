//! Simulate-invert-select for one profile, and the test-set loops around it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sspinv_core::alphasel::{baseline_select_alpha, extract_features, select_alpha, AlphaNet};
use sspinv_core::eof::{reconstruct, Coefficients, EofBasis};
use sspinv_core::forward::Geometry;
use sspinv_core::invert::{solve, sweep, InversionConfig, Problem, SweepResult};
use sspinv_core::profiles::{rms_error, ProfileSet, SoundSpeedProfile};
use sspinv_core::synth::{derive_seed, simulate_measurements, MeasurementSet};
use sspinv_core::{Error, Result};

use crate::streams;

#[derive(Clone, Debug)]
pub enum Selector {
    Net(AlphaNet),
    Discrepancy,
    Fixed(f64),
}

impl Selector {
    pub fn name(&self) -> &'static str {
        match self {
            Selector::Net(_) => "net",
            Selector::Discrepancy => "discrepancy",
            Selector::Fixed(_) => "fixed",
        }
    }
}

/// Chosen inversion of one survey.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selected {
    pub alpha: f64,
    /// Grid index, absent for a fixed weight off the grid.
    pub index: Option<usize>,
    pub x: Vec<f64>,
    pub misfit: f64,
    pub prior: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn nearest_converged(sweep: &SweepResult, i: usize) -> Result<usize> {
    sweep
        .converged()
        .map(|(j, _)| j)
        .min_by_key(|&j| (j.abs_diff(i), std::cmp::Reverse(j)))
        .ok_or(Error::NoConvergedEntries)
}

fn from_entry(sweep: &SweepResult, i: usize) -> Selected {
    let e = &sweep.entries[i];
    Selected {
        alpha: e.alpha,
        index: Some(i),
        x: e.x.0.clone(),
        misfit: e.misfit,
        prior: e.prior,
        iterations: e.iterations,
        converged: e.converged,
    }
}

/// Applies `selector` to a finished sweep. A net pick that did not converge
/// moves to the nearest converged weight.
pub fn select(
    selector: &Selector,
    sweep: &SweepResult,
    measurements: &MeasurementSet,
    basis: &EofBasis,
    inversion: &InversionConfig,
) -> Result<Selected> {
    match selector {
        Selector::Net(net) => {
            let features = extract_features(sweep, basis)?;
            let (_, i) = select_alpha(net, &features, &sweep.alphas())?;
            Ok(from_entry(sweep, nearest_converged(sweep, i)?))
        }
        Selector::Discrepancy => {
            let (_, i) = baseline_select_alpha(sweep, measurements.sigma_t)?;
            Ok(from_entry(sweep, i))
        }
        &Selector::Fixed(alpha) => {
            if let Some(i) = sweep.entries.iter().position(|e| e.alpha == alpha && e.converged) {
                return Ok(from_entry(sweep, i));
            }
            // warm start from the converged weight closest in log scale
            let start = sweep
                .converged()
                .min_by(|(_, a), (_, b)| {
                    let d = |e: f64| (e / alpha).ln().abs();
                    d(a.alpha).total_cmp(&d(b.alpha))
                })
                .map(|(_, e)| e.x.clone())
                .ok_or(Error::NoConvergedEntries)?;
            let problem = Problem::new(measurements, basis)?;
            let out = solve(&problem, &start, alpha, inversion)?;
            Ok(Selected {
                alpha,
                index: None,
                x: out.x.0,
                misfit: out.misfit,
                prior: out.prior,
                iterations: out.iterations,
                converged: out.converged,
            })
        }
    }
}

/// Everything needed to invert one survey, shared across test profiles.
#[derive(Clone, Debug)]
pub struct Setup {
    pub basis: EofBasis,
    pub geometry: Geometry,
    pub sigma_t: f64,
    pub n_ping: usize,
    pub inversion: InversionConfig,
    pub selector: Selector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileResult {
    pub index: usize,
    /// True-vs-inverted RMS error, m/s; NaN when the inversion failed.
    pub rms_error: f64,
    pub alpha: f64,
    pub misfit: f64,
    pub iterations: usize,
    pub converged: bool,
    pub error: Option<String>,
}

/// Seed of the simulated survey over test profile `index`.
pub fn survey_seed(master: u64, index: usize) -> u64 {
    derive_seed(derive_seed(master, streams::SURVEYS), index as u64)
}

pub fn simulate(setup: &Setup, truth: &SoundSpeedProfile, seed: u64) -> Result<MeasurementSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = simulate_measurements(truth, &setup.geometry, setup.sigma_t, setup.n_ping, &mut rng)?;
    m.seed = Some(seed);
    Ok(m)
}

pub struct Inverted {
    pub sweep: SweepResult,
    pub selected: Selected,
    pub profile: SoundSpeedProfile,
}

pub fn invert(setup: &Setup, measurements: &MeasurementSet) -> Result<Inverted> {
    let sweep = sweep(measurements, &setup.basis, &setup.inversion)?;
    let selected = select(&setup.selector, &sweep, measurements, &setup.basis, &setup.inversion)?;
    let profile = reconstruct(&setup.basis, &Coefficients(selected.x.clone()))?;
    Ok(Inverted { sweep, selected, profile })
}

pub fn evaluate_profile(setup: &Setup, truth: &SoundSpeedProfile, index: usize, seed: u64) -> ProfileResult {
    let run = || -> Result<(Selected, f64)> {
        let m = simulate(setup, truth, seed)?;
        let inv = invert(setup, &m)?;
        let err = rms_error(&inv.profile, truth)?;
        Ok((inv.selected, err))
    };
    match run() {
        Ok((s, err)) => ProfileResult {
            index,
            rms_error: err,
            alpha: s.alpha,
            misfit: s.misfit,
            iterations: s.iterations,
            converged: s.converged,
            error: None,
        },
        Err(e) => ProfileResult {
            index,
            rms_error: f64::NAN,
            alpha: f64::NAN,
            misfit: f64::NAN,
            iterations: 0,
            converged: false,
            error: Some(e.to_string()),
        },
    }
}

/// Evaluates every test profile in parallel; results are in profile order.
pub fn evaluate_test_set(setup: &Setup, test: &ProfileSet, master: u64) -> Vec<ProfileResult> {
    test.profiles()
        .par_iter()
        .enumerate()
        .map(|(i, p)| evaluate_profile(setup, p, i, survey_seed(master, i)))
        .collect()
}

/// Mean RMS error of the training-mean and test-mean profiles against the
/// test profiles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub train_mean: f64,
    pub test_mean: f64,
    pub n_test: usize,
}

pub fn baselines(train: &ProfileSet, test: &ProfileSet) -> Result<Baselines> {
    if test.is_empty() {
        return Err(Error::EmptySet { what: "test set" });
    }
    let against = |reference: &SoundSpeedProfile| -> Result<f64> {
        let sum = test.profiles().iter().map(|p| rms_error(reference, p)).sum::<Result<f64>>()?;
        Ok(sum / test.len() as f64)
    };
    Ok(Baselines {
        train_mean: against(&train.mean_profile()?)?,
        test_mean: against(&test.mean_profile()?)?,
        n_test: test.len(),
    })
}
