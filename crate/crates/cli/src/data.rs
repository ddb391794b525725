//! Training and test profile sets for an experiment.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufReader;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sspinv_core::profiles::{filter_profiles, parse_profiles, BoundingBox, ProfileSet, RecordError};
use sspinv_core::synth::{derive_seed, generate_ocean};
use sspinv_core::{Error, Result};

use crate::config::{DataSource, ExperimentConfig};
use crate::streams;

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: ProfileSet,
    pub test: ProfileSet,
    /// Records of the input CSV that failed validation.
    pub rejected: Vec<RecordError>,
}

pub fn prepare(config: &ExperimentConfig) -> Result<Dataset> {
    let grid = config.grid()?;
    let d = &config.data;
    let dataset = match d.source {
        DataSource::Synthetic => {
            let ocean = |count: usize, years: [i32; 2], stream: u64| {
                let mut spec = d.ocean.clone();
                spec.count = count;
                spec.years = years;
                generate_ocean(&spec, grid, &mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, stream)))
            };
            Dataset {
                train: ocean(d.train_count, d.train_years, streams::TRAIN_OCEAN)?,
                test: ocean(d.test_count, d.test_years, streams::TEST_OCEAN)?,
                rejected: Vec::new(),
            }
        }
        DataSource::Csv => {
            let path = d.path.as_ref().ok_or_else(|| Error::Config("csv data source needs `path`".into()))?;
            let file = File::open(path)
                .map_err(|e| Error::Config(format!("cannot open profile file {}: {e}", path.display())))?;
            let parsed = parse_profiles(BufReader::new(file), grid)?;
            let bbox = match d.bbox {
                Some(b) => {
                    b.validate()?;
                    b
                }
                None => BoundingBox::new(-90.0, 90.0, -180.0, 180.0)?,
            };
            let months: BTreeSet<u32> = d.months.iter().copied().collect();
            Dataset {
                train: filter_profiles(&parsed.set, &bbox, &months, d.train_years[0]..=d.train_years[1]),
                test: filter_profiles(&parsed.set, &bbox, &months, d.test_years[0]..=d.test_years[1]),
                rejected: parsed.rejected,
            }
        }
    };
    if dataset.test.is_empty() {
        return Err(Error::EmptySet { what: "test set" });
    }
    Ok(dataset)
}
