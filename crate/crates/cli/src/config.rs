//! Experiment configuration, read from a TOML file.
//!
//! ```toml
//! seed = 7
//! output_dir = "runs/central"
//!
//! [grid]
//! spacing = 2.0
//! max_depth = 300.0
//!
//! [data]
//! source = "synthetic"          # or "csv" with `path`, `bbox`, `months`
//! train_years = [1990, 2000]
//! test_years = [2001, 2010]
//!
//! [basis]
//! n_eof = 5
//!
//! [survey]
//! swath_deg = 120.0
//! n_beam = 500
//! n_ping = 1
//! bottom_depth = 300.0
//! sigma_x = 0.01                # or sigma_t (seconds), never both
//!
//! [selection]
//! mode = "net"                  # "net" (optional `path`), "discrepancy", "fixed" with `alpha`
//! ```
//!
//! `[inversion]`, `[training]` and `[data.ocean]` take the fields of the
//! corresponding library types and default to them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sspinv_core::alphasel::AlphaTrainingConfig;
use sspinv_core::forward::Geometry;
use sspinv_core::invert::InversionConfig;
use sspinv_core::profiles::{BoundingBox, DepthGrid};
use sspinv_core::synth::{make_geometry, sigma_t_from_spatial, SynthOceanSpec, DEFAULT_C_REF};
use sspinv_core::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub basis: BasisConfig,
    #[serde(default)]
    pub survey: SurveyConfig,
    #[serde(default)]
    pub inversion: InversionConfig,
    #[serde(default)]
    pub selection: Selection,
    #[serde(default)]
    pub training: TrainingConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub spacing: f64,
    pub max_depth: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { spacing: 2.0, max_depth: 300.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Inclusive year ranges; profiles are split by year.
    pub train_years: [i32; 2],
    pub test_years: [i32; 2],
    /// Synthetic profile counts.
    pub train_count: usize,
    pub test_count: usize,
    pub ocean: SynthOceanSpec,
    /// Profile CSV for `source = "csv"`.
    pub path: Option<PathBuf>,
    pub bbox: Option<BoundingBox>,
    pub months: Vec<u32>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            train_years: [1990, 2000],
            test_years: [2001, 2010],
            train_count: 151,
            test_count: 111,
            ocean: SynthOceanSpec::default(),
            path: None,
            bbox: None,
            months: vec![4],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisConfig {
    pub n_eof: usize,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self { n_eof: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurveyConfig {
    pub swath_deg: f64,
    pub n_beam: usize,
    pub n_ping: usize,
    pub bottom_depth: f64,
    /// Range error in meters; converted with `c_ref`.
    pub sigma_x: Option<f64>,
    /// Travel-time error in seconds.
    pub sigma_t: Option<f64>,
    pub c_ref: f64,
}

impl Default for SurveyConfig {
    fn default() -> Self {
        Self {
            swath_deg: 120.0,
            n_beam: 500,
            n_ping: 1,
            bottom_depth: 300.0,
            sigma_x: Some(0.01),
            sigma_t: None,
            c_ref: DEFAULT_C_REF,
        }
    }
}

impl SurveyConfig {
    pub fn sigma_t(&self) -> Result<f64> {
        match (self.sigma_x, self.sigma_t) {
            (Some(sx), None) => sigma_t_from_spatial(sx, self.c_ref),
            (None, Some(st)) if st >= 0.0 => Ok(st),
            (None, Some(st)) => Err(Error::Config(format!("sigma_t must be nonnegative, got {st}"))),
            _ => Err(Error::Config("survey needs exactly one of sigma_x and sigma_t".into())),
        }
    }

    pub fn geometry(&self) -> Result<Geometry> {
        make_geometry(self.swath_deg, self.n_beam, self.bottom_depth)
    }

    pub fn set_sigma_x(&mut self, sigma_x: f64) {
        self.sigma_x = Some(sigma_x);
        self.sigma_t = None;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Selection {
    /// Learned selector; trained for the configuration when `path` is unset.
    Net { path: Option<PathBuf> },
    /// Discrepancy principle.
    Discrepancy,
    Fixed { alpha: f64 },
}

impl Default for Selection {
    fn default() -> Self {
        Selection::Net { path: None }
    }
}

/// Net training settings; noise, pings and the weight grid come from the
/// survey and inversion sections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub n_truths: usize,
    pub validation_fraction: f64,
    pub hidden: Vec<usize>,
    pub window: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let d = AlphaTrainingConfig::default();
        Self {
            n_truths: d.n_truths,
            validation_fraction: d.validation_fraction,
            hidden: d.hidden,
            window: d.window,
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.survey.sigma_t()?;
        self.survey.geometry()?.check_grid(self.grid()?)?;
        if self.survey.n_ping == 0 {
            return Err(Error::Config("n_ping must be positive".into()));
        }
        if self.basis.n_eof == 0 {
            return Err(Error::Config("n_eof must be positive".into()));
        }
        self.inversion.validate()?;
        self.alpha_training().validate()?;
        if let Selection::Fixed { alpha } = self.selection {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::Config(format!("fixed alpha must be positive, got {alpha}")));
            }
        }
        let d = &self.data;
        if d.train_years[0] > d.train_years[1] || d.test_years[0] > d.test_years[1] {
            return Err(Error::Config("year ranges must be ordered".into()));
        }
        match d.source {
            DataSource::Synthetic if d.train_count < 2 || d.test_count == 0 => {
                Err(Error::Config("need at least 2 training and 1 test profile".into()))
            }
            DataSource::Csv if d.path.is_none() => Err(Error::Config("csv data source needs `path`".into())),
            _ => Ok(()),
        }
    }

    pub fn grid(&self) -> Result<DepthGrid> {
        DepthGrid::with_max_depth(self.grid.max_depth, self.grid.spacing)
    }

    pub fn alpha_training(&self) -> AlphaTrainingConfig {
        let t = &self.training;
        AlphaTrainingConfig {
            n_truths: t.n_truths,
            validation_fraction: t.validation_fraction,
            hidden: t.hidden.clone(),
            window: t.window,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            sigma_t: self.survey.sigma_t().unwrap_or(0.0),
            n_ping: self.survey.n_ping,
            inversion: self.inversion.clone(),
        }
    }

    /// SHA-256 of the configuration with the output directory blanked, so
    /// reruns into another directory share a hash.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        Ok(hex::encode(Sha256::digest(c.to_toml()?.as_bytes())))
    }
}
