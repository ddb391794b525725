//! Empirical orthogonal function basis for sound speed profiles.
//!
//! A profile is written as `c(x) = mean + U x`, where the columns of `U` are
//! the leading left singular vectors of the centered training data and each
//! coefficient `x_k` is treated as an independent zero-mean Gaussian with
//! standard deviation `sigma_k` estimated from the training projections.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::{DepthGrid, ProfileMeta, ProfileSet, SoundSpeedProfile};

/// Singular values below this (absolute) mean there is no variance to model.
const DEGENERATE_SINGULAR_VALUE: f64 = 1e-12;
/// Entries smaller than this are ignored when fixing the EOF sign.
const SIGN_THRESHOLD: f64 = 1e-9;
pub const BASIS_FORMAT_VERSION: u32 = 1;
const ORTHONORMALITY_TOLERANCE: f64 = 1e-10;

/// EOF coefficient vector, one entry per retained mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Coefficients(pub Vec<f64>);

impl Coefficients {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }
}

impl From<DVector<f64>> for Coefficients {
    fn from(v: DVector<f64>) -> Self {
        Self(v.as_slice().to_vec())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EofBasis {
    grid: DepthGrid,
    mean: DVector<f64>,
    modes: DMatrix<f64>,
    sigma: Vec<f64>,
    explained_variance: Vec<f64>,
    n_training: usize,
}

impl EofBasis {
    pub fn grid(&self) -> DepthGrid {
        self.grid
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// `K x n_eof`, one EOF per column.
    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn n_eof(&self) -> usize {
        self.sigma.len()
    }

    pub fn n_training(&self) -> usize {
        self.n_training
    }

    /// Fraction of total training variance carried by each retained EOF.
    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    pub fn mean_profile(&self) -> SoundSpeedProfile {
        SoundSpeedProfile::unchecked(self.grid, self.mean.as_slice().to_vec(), ProfileMeta::synthetic())
            .expect("basis mean is finite")
    }

    /// Basis from explicit parts. Columns of `modes` must be orthonormal and
    /// `sigma` positive and non-increasing; explained variance is then
    /// relative to the retained modes only.
    pub fn from_parts(grid: DepthGrid, mean: Vec<f64>, modes: DMatrix<f64>, sigma: Vec<f64>, n_training: usize) -> Result<Self> {
        let k = grid.len();
        if mean.len() != k || modes.nrows() != k {
            return Err(Error::DimensionMismatch { expected: k, got: if mean.len() != k { mean.len() } else { modes.nrows() } });
        }
        if modes.ncols() != sigma.len() || sigma.is_empty() {
            return Err(Error::DimensionMismatch { expected: modes.ncols(), got: sigma.len() });
        }
        if sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) || sigma.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::DegenerateBasis("sigma must be positive and non-increasing".into()));
        }
        let gram = modes.tr_mul(&modes);
        if (gram - DMatrix::identity(sigma.len(), sigma.len())).amax() > ORTHONORMALITY_TOLERANCE {
            return Err(Error::DegenerateBasis("modes are not orthonormal".into()));
        }
        let total: f64 = sigma.iter().map(|s| s * s).sum();
        Ok(Self {
            grid,
            mean: DVector::from_vec(mean),
            explained_variance: sigma.iter().map(|s| s * s / total).collect(),
            modes,
            sigma,
            n_training,
        })
    }

    /// Keeps the first `n_eof` modes.
    pub fn truncated(&self, n_eof: usize) -> Result<Self> {
        if n_eof == 0 || n_eof > self.n_eof() {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate {} EOFs to {n_eof}",
                self.n_eof()
            )));
        }
        Ok(Self {
            grid: self.grid,
            mean: self.mean.clone(),
            modes: self.modes.columns(0, n_eof).into_owned(),
            sigma: self.sigma[..n_eof].to_vec(),
            explained_variance: self.explained_variance[..n_eof].to_vec(),
            n_training: self.n_training,
        })
    }

    fn check_len(&self, x: &Coefficients) -> Result<()> {
        if x.len() != self.n_eof() {
            return Err(Error::DimensionMismatch { expected: self.n_eof(), got: x.len() });
        }
        Ok(())
    }

    /// Speeds `mean + U x` without building a profile.
    pub fn reconstruct_speeds(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.n_eof() {
            return Err(Error::DimensionMismatch { expected: self.n_eof(), got: x.len() });
        }
        let mut speeds = self.mean.clone();
        for (k, &xk) in x.iter().enumerate() {
            speeds.axpy(xk, &self.modes.column(k), 1.0);
        }
        Ok(speeds)
    }
}

/// Builds the mean profile and the leading `n_eof` EOFs of `train`.
pub fn build_basis(train: &ProfileSet, n_eof: usize) -> Result<EofBasis> {
    let n = train.len();
    let grid = train.grid();
    let k = grid.len();
    if n_eof == 0 {
        return Err(Error::InvalidArgument("n_eof must be positive".into()));
    }
    if n < n_eof + 1 {
        return Err(Error::TooFewProfiles { needed: n_eof + 1, got: n });
    }
    if n_eof > k {
        return Err(Error::InvalidArgument(format!("n_eof {n_eof} exceeds depth count {k}")));
    }

    let mean = DVector::from_vec(train.mean_speeds()?);
    let mut centered = DMatrix::<f64>::zeros(k, n);
    for (j, p) in train.profiles().iter().enumerate() {
        let col = DVector::from_column_slice(p.speeds()) - &mean;
        centered.set_column(j, &col);
    }

    let svd = centered.clone().svd(true, false);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let leading = svd.singular_values[order[0]];
    if leading < DEGENERATE_SINGULAR_VALUE {
        return Err(Error::DegenerateBasis("training profiles have no variance".into()));
    }
    let total_energy: f64 = svd.singular_values.iter().map(|s| s * s).sum();

    let mut modes = DMatrix::<f64>::zeros(k, n_eof);
    let mut explained_variance = Vec::with_capacity(n_eof);
    for (col, &idx) in order.iter().take(n_eof).enumerate() {
        let s = svd.singular_values[idx];
        if s <= DEGENERATE_SINGULAR_VALUE * leading.max(1.0) {
            return Err(Error::DegenerateBasis(format!(
                "training data has rank {col}, fewer than the {n_eof} requested EOFs"
            )));
        }
        let mut v = u.column(idx).into_owned();
        if let Some(first) = v.iter().find(|e| e.abs() > SIGN_THRESHOLD) {
            if *first < 0.0 {
                v.neg_mut();
            }
        }
        modes.set_column(col, &v);
        explained_variance.push(s * s / total_energy);
    }

    // sample standard deviation of the training projections
    let projections = modes.transpose() * &centered;
    let sigma = projections
        .row_iter()
        .map(|row| {
            let m = row.mean();
            let ss: f64 = row.iter().map(|v| (v - m) * (v - m)).sum();
            (ss / (n as f64 - 1.0)).sqrt()
        })
        .collect();

    Ok(EofBasis { grid, mean, modes, sigma, explained_variance, n_training: n })
}

/// Coefficients `U^T (p - mean)`.
pub fn project(basis: &EofBasis, profile: &SoundSpeedProfile) -> Result<Coefficients> {
    if profile.grid() != basis.grid {
        return Err(Error::GridMismatch);
    }
    let anomaly = DVector::from_column_slice(profile.speeds()) - &basis.mean;
    Ok((basis.modes.transpose() * anomaly).into())
}

/// Profile `mean + U x`, flagged as synthetic.
pub fn reconstruct(basis: &EofBasis, x: &Coefficients) -> Result<SoundSpeedProfile> {
    basis.check_len(x)?;
    let speeds = basis.reconstruct_speeds(&x.0)?;
    SoundSpeedProfile::unchecked(basis.grid, speeds.as_slice().to_vec(), ProfileMeta::synthetic())
}

/// Prior penalty `sum_k x_k^2 / sigma_k^2`.
pub fn log_prior(basis: &EofBasis, x: &Coefficients) -> Result<f64> {
    basis.check_len(x)?;
    prior_term(&basis.sigma, &x.0)
}

pub(crate) fn prior_term(sigma: &[f64], x: &[f64]) -> Result<f64> {
    if let Some(k) = sigma.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::DegenerateBasis(format!("sigma_{k} is zero")));
    }
    Ok(x.iter().zip(sigma).map(|(x, s)| (x / s) * (x / s)).sum())
}

/// Draws each `x_k` from `N(0, sigma_k^2)`.
pub fn sample_coefficients<R: Rng + ?Sized>(basis: &EofBasis, rng: &mut R) -> Coefficients {
    Coefficients(
        basis
            .sigma
            .iter()
            .map(|s| s * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )
}

#[derive(Serialize, Deserialize)]
struct BasisFile {
    format_version: u32,
    grid: DepthGrid,
    n_training: usize,
    mean: Vec<f64>,
    sigma: Vec<f64>,
    explained_variance: Vec<f64>,
    /// One entry per EOF.
    modes: Vec<Vec<f64>>,
}

pub fn write_basis<W: Write>(basis: &EofBasis, out: W) -> Result<()> {
    let file = BasisFile {
        format_version: BASIS_FORMAT_VERSION,
        grid: basis.grid,
        n_training: basis.n_training,
        mean: basis.mean.as_slice().to_vec(),
        sigma: basis.sigma.clone(),
        explained_variance: basis.explained_variance.clone(),
        modes: basis.modes.column_iter().map(|c| c.as_slice().to_vec()).collect(),
    };
    serde_json::to_writer_pretty(out, &file)?;
    Ok(())
}

pub fn read_basis<R: Read>(source: R) -> Result<EofBasis> {
    let file: BasisFile = serde_json::from_reader(source)?;
    if file.format_version != BASIS_FORMAT_VERSION {
        return Err(Error::FormatVersion { found: file.format_version, expected: BASIS_FORMAT_VERSION });
    }
    let k = file.grid.len();
    let n_eof = file.sigma.len();
    let grid = DepthGrid::new(k, file.grid.spacing())?;
    if file.mean.len() != k {
        return Err(Error::DimensionMismatch { expected: k, got: file.mean.len() });
    }
    if file.modes.len() != n_eof || file.explained_variance.len() != n_eof || n_eof == 0 {
        return Err(Error::DimensionMismatch { expected: n_eof, got: file.modes.len() });
    }
    if let Some(bad) = file.modes.iter().find(|c| c.len() != k) {
        return Err(Error::DimensionMismatch { expected: k, got: bad.len() });
    }
    let modes = DMatrix::from_fn(k, n_eof, |r, c| file.modes[c][r]);
    Ok(EofBasis {
        grid,
        mean: DVector::from_vec(file.mean),
        modes,
        sigma: file.sigma,
        explained_variance: file.explained_variance,
        n_training: file.n_training,
    })
}
