//! Aggregated results of evaluating a test set, and their CSV forms.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sspinv_core::{Error, Result};

use crate::config::ExperimentConfig;
use crate::evaluate::{Baselines, ProfileResult};

/// Simulation and inversion share one forward model, so results carry no
/// modelling error.
pub const INVERSE_CRIME_NOTE: &str =
    "synthetic surveys are simulated with the same layered ray model used for inversion";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    BeamsPings,
    SwathDeg,
    NEof,
    SpatialErrorCm,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::BeamsPings, Axis::SwathDeg, Axis::NEof, Axis::SpatialErrorCm];

    pub fn label(self) -> &'static str {
        match self {
            Axis::BeamsPings => "Number of beams×pings",
            Axis::SwathDeg => "Swath angle width (deg)",
            Axis::NEof => "Number of EOFs",
            Axis::SpatialErrorCm => "Spatial error (cm)",
        }
    }

    /// Values of the published sensitivity table.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            Axis::BeamsPings => vec![100.0, 300.0, 500.0, 700.0, 900.0],
            Axis::SwathDeg => vec![100.0, 110.0, 120.0, 130.0, 140.0],
            Axis::NEof => vec![3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
            Axis::SpatialErrorCm => vec![10.0, 4.0, 2.0, 1.0, 0.5, 0.25],
        }
    }

    /// Copy of `config` with this axis set to `value`.
    pub fn apply(self, config: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let count = |what: &str| -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::Config(format!("{what} must be a positive integer, got {value}")))
            }
        };
        let mut c = config.clone();
        match self {
            Axis::BeamsPings => {
                let total = count("beams×pings")?;
                if total % c.survey.n_ping != 0 {
                    return Err(Error::Config(format!(
                        "beams×pings {total} is not a multiple of n_ping {}",
                        c.survey.n_ping
                    )));
                }
                c.survey.n_beam = total / c.survey.n_ping;
            }
            Axis::SwathDeg => c.survey.swath_deg = value,
            Axis::NEof => c.basis.n_eof = count("n_eof")?,
            Axis::SpatialErrorCm => c.survey.set_sigma_x(value / 100.0),
        }
        c.validate()?;
        Ok(c)
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beams_pings" => Ok(Axis::BeamsPings),
            "swath_deg" => Ok(Axis::SwathDeg),
            "n_eof" => Ok(Axis::NEof),
            "spatial_error_cm" => Ok(Axis::SpatialErrorCm),
            _ => Err(Error::Config(format!(
                "unknown sweep axis `{s}` (expected beams_pings, swath_deg, n_eof or spatial_error_cm)"
            ))),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::BeamsPings => "beams_pings",
            Axis::SwathDeg => "swath_deg",
            Axis::NEof => "n_eof",
            Axis::SpatialErrorCm => "spatial_error_cm",
        })
    }
}

/// Statistics over the profiles whose inversion succeeded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub failed: usize,
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation.
    pub std: f64,
}

impl Summary {
    pub fn of(results: &[ProfileResult]) -> Self {
        let mut ok: Vec<f64> = results.iter().map(|r| r.rms_error).filter(|e| e.is_finite()).collect();
        let n = ok.len();
        let failed = results.len() - n;
        if n == 0 {
            return Self { count: 0, failed, mean: f64::NAN, median: f64::NAN, std: f64::NAN };
        }
        let mean = ok.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (ok.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        ok.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 { ok[n / 2] } else { 0.5 * (ok[n / 2 - 1] + ok[n / 2]) };
        Self { count: n, failed, mean, median, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueReport {
    pub value: f64,
    pub selection: String,
    pub summary: Summary,
    pub profiles: Vec<ProfileResult>,
}

impl ValueReport {
    pub fn new(value: f64, selection: &str, profiles: Vec<ProfileResult>) -> Self {
        Self { value, selection: selection.to_string(), summary: Summary::of(&profiles), profiles }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    /// Absent for a single evaluation of the configuration.
    pub axis: Option<Axis>,
    pub values: Vec<ValueReport>,
    pub baselines: Baselines,
    pub config_hash: String,
    pub seed: u64,
    pub note: String,
}

impl SweepReport {
    /// Layout of the published sensitivity table: the axis row, then mean,
    /// median and standard deviation of the RMS error.
    pub fn write_table<W: Write>(&self, mut out: W) -> Result<()> {
        let label = self.axis.map_or("Configuration", Axis::label);
        let row = |out: &mut W, name: &str, f: &dyn Fn(&ValueReport) -> f64| -> Result<()> {
            write!(out, "{name}")?;
            for v in &self.values {
                write!(out, ",{}", f(v))?;
            }
            writeln!(out)?;
            Ok(())
        };
        row(&mut out, label, &|v| v.value)?;
        row(&mut out, "RMS error (m/s)", &|v| v.summary.mean)?;
        row(&mut out, "Median RMS error (m/s)", &|v| v.summary.median)?;
        row(&mut out, "Std RMS error (m/s)", &|v| v.summary.std)?;
        Ok(())
    }

    /// `value,profile,rms_error,alpha,misfit,iterations,converged,error`
    pub fn write_profiles<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "value,profile,rms_error,alpha,misfit,iterations,converged,error")?;
        for v in &self.values {
            for p in &v.profiles {
                let error = p.error.as_deref().unwrap_or("").replace([',', '\n'], " ");
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    v.value, p.index, p.rms_error, p.alpha, p.misfit, p.iterations, p.converged, error
                )?;
            }
        }
        Ok(())
    }
}

/// `baseline,mean_rms_error,n_test`
pub fn write_baselines<W: Write>(b: &Baselines, mut out: W) -> Result<()> {
    writeln!(out, "baseline,mean_rms_error,n_test")?;
    writeln!(out, "train_mean_profile,{},{}", b.train_mean, b.n_test)?;
    writeln!(out, "test_mean_profile,{},{}", b.test_mean, b.n_test)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(index: usize, rms_error: f64) -> ProfileResult {
        ProfileResult { index, rms_error, alpha: 1.0, misfit: 0.5, iterations: 3, converged: true, error: None }
    }

    #[test]
    fn summary_matches_entries() {
        let rs = vec![result(0, 1.0), result(1, 3.0), result(2, 2.0), result(3, f64::NAN)];
        let s = Summary::of(&rs);
        assert_eq!((s.count, s.failed), (3, 1));
        assert!((s.mean - 2.0).abs() < 1e-12);
        assert_eq!(s.median, 2.0);
        assert!((s.std - 1.0).abs() < 1e-12);
        let even = Summary::of(&rs[..2]);
        assert_eq!(even.median, 2.0);
    }

    #[test]
    fn axes_parse_and_apply() {
        for a in Axis::ALL {
            assert_eq!(a.to_string().parse::<Axis>().unwrap(), a);
        }
        assert!(matches!("depth".parse::<Axis>(), Err(Error::Config(_))));
        let c = ExperimentConfig::from_toml("seed = 1\n[survey]\nn_ping = 2\n").unwrap();
        assert_eq!(Axis::BeamsPings.apply(&c, 300.0).unwrap().survey.n_beam, 150);
        assert!(Axis::BeamsPings.apply(&c, 301.0).is_err());
        assert!(Axis::NEof.apply(&c, 2.5).is_err());
        let s = Axis::SpatialErrorCm.apply(&c, 10.0).unwrap();
        assert!((s.survey.sigma_t().unwrap() - 1.3333333333333333e-4).abs() < 1e-12);
    }

    #[test]
    fn table_has_one_column_per_value() {
        let b = Baselines { train_mean: 3.0, test_mean: 2.5, n_test: 2 };
        let values = Axis::SpatialErrorCm
            .default_values()
            .into_iter()
            .map(|v| ValueReport::new(v, "net", vec![result(0, v), result(1, v + 1.0)]))
            .collect();
        let r = SweepReport {
            axis: Some(Axis::SpatialErrorCm),
            values,
            baselines: b,
            config_hash: String::new(),
            seed: 0,
            note: String::new(),
        };
        let mut out = Vec::new();
        r.write_table(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "Spatial error (cm),10,4,2,1,0.5,0.25");
        assert!(lines.iter().all(|l| l.split(',').count() == 7));
        assert_eq!(lines[1].split(',').nth(1), Some("10.5"));
    }
}
