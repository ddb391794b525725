//! Regularized Gauss-Newton inversion of travel times for EOF coefficients.
//!
//! The cost minimized for a weight `alpha > 0` is
//!
//! ```text
//! cost(x) = |T - t(x)|^2 / N  +  alpha * sum_k x_k^2 / sigma_k^2
//! ```
//!
//! with `N` the number of observations. Gauss-Newton works on the augmented
//! residual `[(T - t(x)) / sqrt(N); sqrt(alpha) x / sigma]`, whose squared
//! norm is the cost. Travel times enter the residual in microseconds; see
//! [`TIME_UNIT`].

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::eof::{prior_term, Coefficients, EofBasis};
use crate::error::{Error, Result};
use crate::forward::{layers, Geometry};
use crate::synth::MeasurementSet;

/// Seconds per residual unit. Residuals and misfits are in microseconds so
/// that regularization weights of order one balance the misfit of
/// centimeter-class range errors.
pub const TIME_UNIT: f64 = 1e-6;

/// Multiple of the largest observed time used as the residual of a beam
/// that turns under the proposed profile.
const TURNED_PENALTY_FACTOR: f64 = 3.0;
const DIAGONAL_LIFT: f64 = 1e-12;
const MAX_STEP_HALVINGS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InversionConfig {
    /// Regularization weights, strictly increasing.
    pub alpha_grid: Vec<f64>,
    pub max_iterations: usize,
    /// Convergence threshold on the step, as RMS speed change in m/s.
    pub step_tolerance: f64,
    /// Finite-difference step is `max(fd_step_floor, fd_step_scale * sigma_k)`.
    pub fd_step_floor: f64,
    pub fd_step_scale: f64,
    /// Converged once the Gauss-Newton model predicts a cost decrease below
    /// this fraction of the current cost.
    pub cost_tolerance: f64,
    /// Smallest step fraction tried by the backtracking line search.
    pub min_damping: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            alpha_grid: log_spaced(1e-3, 1e4, 15),
            max_iterations: 30,
            step_tolerance: 1e-8,
            fd_step_floor: 1e-3,
            fd_step_scale: 1e-6,
            cost_tolerance: 1e-11,
            min_damping: 1.0 / 1024.0,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.alpha_grid.len() < 3 {
            return bad("alpha grid needs at least 3 values");
        }
        if self.alpha_grid.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return bad("alpha grid values must be positive");
        }
        if self.alpha_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("alpha grid must be strictly increasing");
        }
        if !(self.step_tolerance > 0.0
            && self.cost_tolerance > 0.0
            && self.fd_step_floor > 0.0
            && self.fd_step_scale >= 0.0)
        {
            return bad("tolerances and steps must be positive");
        }
        if !(self.min_damping > 0.0 && self.min_damping < 1.0) || self.max_iterations == 0 {
            return bad("need 0 < min_damping < 1 and max_iterations > 0");
        }
        Ok(())
    }

    pub fn fd_steps(&self, basis: &EofBasis) -> Vec<f64> {
        basis.sigma().iter().map(|s| self.fd_step_floor.max(self.fd_step_scale * s)).collect()
    }
}

/// `n` values evenly spaced in log10 between `lo` and `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect()
}

/// Measurements bound to a basis: the pieces every cost evaluation needs.
pub struct Problem<'a> {
    basis: &'a EofBasis,
    geometry: &'a Geometry,
    /// Distinct observed `|angle|`; mirrored beams share a travel time.
    angles: Vec<f64>,
    /// Per observation, index into `angles`.
    slots: Vec<usize>,
    /// Observed times in residual units.
    observed: Vec<f64>,
    penalty: f64,
    inv_sqrt_n: f64,
}

impl<'a> Problem<'a> {
    pub fn new(measurements: &'a MeasurementSet, basis: &'a EofBasis) -> Result<Self> {
        if measurements.is_empty() {
            return Err(Error::EmptySet { what: "measurement set" });
        }
        measurements.geometry.check_grid(basis.grid())?;
        let beam_angles = &measurements.geometry.beam_angles;
        if let Some(o) = measurements.observations.iter().find(|o| o.beam >= beam_angles.len()) {
            return Err(Error::InvalidArgument(format!("observation refers to missing beam {}", o.beam)));
        }
        let mut angles: Vec<f64> = measurements.observations.iter().map(|o| beam_angles[o.beam].abs()).collect();
        angles.sort_by(f64::total_cmp);
        angles.dedup();
        let slots = measurements
            .observations
            .iter()
            .map(|o| angles.binary_search_by(|a| a.total_cmp(&beam_angles[o.beam].abs())).expect("angle listed"))
            .collect();
        let observed: Vec<f64> = measurements.observations.iter().map(|o| o.time / TIME_UNIT).collect();
        let penalty = TURNED_PENALTY_FACTOR * observed.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            basis,
            geometry: &measurements.geometry,
            angles,
            slots,
            observed,
            penalty,
            inv_sqrt_n: 1.0 / (measurements.len() as f64).sqrt(),
        })
    }

    pub fn basis(&self) -> &EofBasis {
        self.basis
    }

    pub fn n_obs(&self) -> usize {
        self.observed.len()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.basis.n_eof() {
            return Err(Error::DimensionMismatch { expected: self.basis.n_eof(), got: x.len() });
        }
        Ok(())
    }

    /// Modelled two-way times (residual units) for each distinct observed
    /// `|angle|`; `None` where the ray turns.
    pub fn model_times(&self, x: &[f64]) -> Result<Vec<Option<f64>>> {
        let speeds = self.basis.reconstruct_speeds(x)?;
        let layers: Vec<(f64, f64)> =
            layers(self.basis.grid(), speeds.as_slice(), self.geometry.source_depth, self.geometry.bottom_depth)
                .collect();
        let Some(&(_, c1)) = layers.first() else {
            return Err(Error::AllBeamsTurned);
        };
        // same per-beam summation order as the single-beam tracer, but with
        // beams innermost so the loop vectorizes
        let p: Vec<f64> = self.angles.iter().map(|a| a.sin() / c1).collect();
        let mut t = vec![0.0; p.len()];
        for &(h, c) in &layers {
            for (ti, pi) in t.iter_mut().zip(&p) {
                let u = c * pi;
                // negative or zero cos^2 (turning ray) poisons the sum
                *ti += h / (c * (1.0 - u * u).sqrt());
            }
        }
        let times: Vec<Option<f64>> =
            t.into_iter().map(|ti| ti.is_finite().then_some(2.0 * ti / TIME_UNIT)).collect();
        if times.iter().all(Option::is_none) {
            return Err(Error::AllBeamsTurned);
        }
        Ok(times)
    }

    fn data_residuals_from(&self, times: &[Option<f64>]) -> DVector<f64> {
        DVector::from_iterator(
            self.observed.len(),
            self.observed.iter().zip(&self.slots).map(|(obs, &s)| match times[s] {
                Some(t) => (obs - t) * self.inv_sqrt_n,
                None => self.penalty * self.inv_sqrt_n,
            }),
        )
    }

    /// `|T - t(x)|^2 / N` in squared residual units.
    pub fn misfit(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.data_residuals_from(&self.model_times(x)?).norm_squared())
    }

    pub fn cost(&self, x: &[f64], alpha: f64) -> Result<f64> {
        Ok(self.misfit(x)? + alpha * prior_term(self.basis.sigma(), x)?)
    }

    /// Data rows followed by `sqrt(alpha) x_k / sigma_k`.
    pub fn residuals(&self, x: &[f64], alpha: f64) -> Result<DVector<f64>> {
        self.check(x)?;
        prior_term(self.basis.sigma(), x)?;
        let data = self.data_residuals_from(&self.model_times(x)?);
        let n = data.len();
        let sa = alpha.sqrt();
        let mut r = DVector::zeros(n + x.len());
        r.rows_mut(0, n).copy_from(&data);
        for (k, (xk, s)) in x.iter().zip(self.basis.sigma()).enumerate() {
            r[n + k] = sa * xk / s;
        }
        Ok(r)
    }

    /// Central-difference Jacobian of [`Problem::residuals`]; the
    /// regularization block is filled analytically.
    pub fn jacobian(&self, x: &[f64], alpha: f64, steps: &[f64]) -> Result<DMatrix<f64>> {
        self.check(x)?;
        let n_eof = x.len();
        if steps.len() != n_eof || steps.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::InvalidArgument("finite-difference steps must be positive, one per EOF".into()));
        }
        let base = self.model_times(x)?;
        let n = self.observed.len();
        let mut jac = DMatrix::zeros(n + n_eof, n_eof);
        let mut xp = x.to_vec();
        for k in 0..n_eof {
            let mut h = steps[k];
            let (plus, minus) = 'search: {
                for _ in 0..=MAX_STEP_HALVINGS {
                    xp[k] = x[k] + h;
                    let plus = self.model_times(&xp);
                    xp[k] = x[k] - h;
                    let minus = self.model_times(&xp);
                    xp[k] = x[k];
                    if let (Ok(p), Ok(m)) = (plus, minus) {
                        let newly_turned = base
                            .iter()
                            .zip(p.iter().zip(&m))
                            .any(|(b, (p, m))| b.is_some() && (p.is_none() || m.is_none()));
                        if !newly_turned {
                            break 'search (p, m);
                        }
                    }
                    h /= 2.0;
                }
                return Err(Error::JacobianStep { index: k });
            };
            // residual = (T - t) / sqrt(N): derivative is -dt/dx / sqrt(N)
            for (row, &s) in self.slots.iter().enumerate() {
                jac[(row, k)] = match (plus[s], minus[s]) {
                    (Some(p), Some(m)) => -(p - m) / (2.0 * h) * self.inv_sqrt_n,
                    _ => 0.0,
                };
            }
            jac[(n + k, k)] = alpha.sqrt() / self.basis.sigma()[k];
        }
        Ok(jac)
    }
}

/// Cost of `x` for the given weight; see the module docs.
pub fn cost(x: &Coefficients, measurements: &MeasurementSet, basis: &EofBasis, alpha: f64) -> Result<f64> {
    Problem::new(measurements, basis)?.cost(&x.0, alpha)
}

pub fn residual_vector(
    x: &Coefficients,
    measurements: &MeasurementSet,
    basis: &EofBasis,
    alpha: f64,
) -> Result<DVector<f64>> {
    Problem::new(measurements, basis)?.residuals(&x.0, alpha)
}

pub fn jacobian_fd(
    x: &Coefficients,
    measurements: &MeasurementSet,
    basis: &EofBasis,
    alpha: f64,
    steps: &[f64],
) -> Result<DMatrix<f64>> {
    Problem::new(measurements, basis)?.jacobian(&x.0, alpha, steps)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    StepTolerance,
    CostTolerance,
    MaxIterations,
    DampingFloor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussNewtonOutcome {
    pub x: Coefficients,
    pub cost: f64,
    pub misfit: f64,
    pub prior: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    /// A normal-equation solve needed the diagonal lift.
    pub lifted: bool,
}

/// Solves `(J^T J) delta = -J^T r` with Jacobi column scaling.
fn gauss_newton_step(jac: &DMatrix<f64>, r: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
    let a = jac.tr_mul(jac);
    let g = jac.tr_mul(r);
    let n = a.nrows();
    let scale: DVector<f64> =
        DVector::from_iterator(n, (0..n).map(|i| if a[(i, i)] > 0.0 { 1.0 / a[(i, i)].sqrt() } else { 1.0 }));
    let mut scaled = a.clone();
    for i in 0..n {
        for j in 0..n {
            scaled[(i, j)] *= scale[i] * scale[j];
        }
    }
    let rhs = -g.component_mul(&scale);
    if let Some(chol) = scaled.clone().cholesky() {
        let y = chol.solve(&rhs);
        if y.iter().all(|v| v.is_finite()) {
            return Ok((y.component_mul(&scale), false));
        }
    }
    let lifted = scaled + DMatrix::identity(n, n) * DIAGONAL_LIFT;
    let chol = lifted.cholesky().ok_or_else(|| Error::InvalidArgument("singular normal equations".into()))?;
    Ok((chol.solve(&rhs).component_mul(&scale), true))
}

/// Damped Gauss-Newton from `x0`; returns the lowest-cost iterate seen.
pub fn gauss_newton(
    x0: &Coefficients,
    measurements: &MeasurementSet,
    basis: &EofBasis,
    alpha: f64,
    config: &InversionConfig,
) -> Result<GaussNewtonOutcome> {
    let problem = Problem::new(measurements, basis)?;
    solve(&problem, x0, alpha, config)
}

pub fn solve(problem: &Problem<'_>, x0: &Coefficients, alpha: f64, config: &InversionConfig) -> Result<GaussNewtonOutcome> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be nonnegative, got {alpha}")));
    }
    let basis = problem.basis();
    let steps = config.fd_steps(basis);
    let rms_scale = 1.0 / (basis.grid().len() as f64).sqrt();

    let mut x = x0.0.clone();
    let mut r = problem.residuals(&x, alpha)?;
    let mut cost = r.norm_squared();
    if !cost.is_finite() {
        return Err(Error::NonFiniteCost);
    }

    let mut lifted = false;
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;
    while iterations < config.max_iterations {
        iterations += 1;
        let jac = problem.jacobian(&x, alpha, &steps)?;
        let (delta, lift) = gauss_newton_step(&jac, &r)?;
        lifted |= lift;
        // basis columns are orthonormal, so |U delta| = |delta|
        let step_rms = delta.norm() * rms_scale;
        let predicted = cost - (&r + &jac * &delta).norm_squared();
        if predicted <= config.cost_tolerance * cost {
            stop = StopReason::CostTolerance;
            break;
        }

        let mut lambda = 1.0;
        let accepted = loop {
            let trial: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, d)| a + lambda * d).collect();
            if let Ok(rt) = problem.residuals(&trial, alpha) {
                let ct = rt.norm_squared();
                if ct < cost {
                    break Some((trial, rt, ct));
                }
            }
            lambda *= 0.5;
            if lambda < config.min_damping {
                break None;
            }
        };
        match accepted {
            Some((trial, rt, ct)) => {
                x = trial;
                r = rt;
                cost = ct;
            }
            None => {
                stop = if step_rms < config.step_tolerance { StopReason::StepTolerance } else { StopReason::DampingFloor };
                break;
            }
        }
        if lambda * step_rms < config.step_tolerance {
            stop = StopReason::StepTolerance;
            break;
        }
    }

    let n_data = problem.n_obs();
    let misfit = r.rows(0, n_data).norm_squared();
    let prior = prior_term(basis.sigma(), &x)?;
    Ok(GaussNewtonOutcome {
        x: Coefficients(x),
        cost,
        misfit,
        prior,
        iterations,
        converged: matches!(stop, StopReason::StepTolerance | StopReason::CostTolerance),
        stop,
        lifted,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub alpha: f64,
    pub x: Coefficients,
    /// `|T - t(x)|^2 / N` in squared microseconds.
    pub misfit: f64,
    pub prior: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the inversion at this weight failed outright.
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// One entry per grid weight, increasing alpha.
    pub entries: Vec<SweepEntry>,
    pub n_obs: usize,
    pub n_eof: usize,
}

impl SweepResult {
    pub fn alphas(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.alpha).collect()
    }

    pub fn converged(&self) -> impl Iterator<Item = (usize, &SweepEntry)> {
        self.entries.iter().enumerate().filter(|(_, e)| e.converged)
    }

    /// `alpha,misfit,prior,iters,converged,x_1..x_N`
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "alpha,misfit,prior,iters,converged")?;
        for k in 1..=self.n_eof {
            write!(out, ",x_{k}")?;
        }
        writeln!(out)?;
        for e in &self.entries {
            write!(out, "{},{},{},{},{}", e.alpha, e.misfit, e.prior, e.iterations, e.converged)?;
            for x in &e.x.0 {
                write!(out, ",{x}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Inverts at every weight of the grid, from the largest down, each run
/// starting where the previous one ended.
pub fn sweep(measurements: &MeasurementSet, basis: &EofBasis, config: &InversionConfig) -> Result<SweepResult> {
    config.validate()?;
    let problem = Problem::new(measurements, basis)?;
    let n_eof = basis.n_eof();
    let mut start = Coefficients::zeros(n_eof);
    let mut entries: Vec<SweepEntry> = Vec::with_capacity(config.alpha_grid.len());
    for &alpha in config.alpha_grid.iter().rev() {
        let entry = match solve(&problem, &start, alpha, config) {
            Ok(out) => {
                start = out.x.clone();
                SweepEntry {
                    alpha,
                    x: out.x,
                    misfit: out.misfit,
                    prior: out.prior,
                    iterations: out.iterations,
                    converged: out.converged,
                    failure: None,
                }
            }
            Err(e) => SweepEntry {
                alpha,
                x: start.clone(),
                misfit: f64::NAN,
                prior: f64::NAN,
                iterations: 0,
                converged: false,
                failure: Some(e.to_string()),
            },
        };
        entries.push(entry);
    }
    entries.reverse();
    Ok(SweepResult { entries, n_obs: problem.n_obs(), n_eof })
}
