//! Sound speed profiles on a shared uniform depth grid.
//!
//! Profiles arrive as irregular `(depth, speed)` samples and are regridded
//! onto a [`DepthGrid`] with linear interpolation. Above the shallowest and
//! below the deepest sample the nearest sample value is held constant.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GRID_TOLERANCE: f64 = 1e-9;

/// Uniform depth grid `depths[i] = i * spacing`, starting at the surface.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthGrid {
    count: usize,
    spacing: f64,
}

impl DepthGrid {
    pub fn new(count: usize, spacing: f64) -> Result<Self> {
        if count < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 depths, got {count}")));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {spacing}")));
        }
        Ok(Self { count, spacing })
    }

    /// Grid covering `[0, max_depth]`; `max_depth` must be a multiple of `spacing`.
    pub fn with_max_depth(max_depth: f64, spacing: f64) -> Result<Self> {
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {spacing}")));
        }
        let steps = (max_depth / spacing).round();
        if !steps.is_finite() || (steps * spacing - max_depth).abs() > GRID_TOLERANCE {
            return Err(Error::InvalidGrid(format!(
                "max depth {max_depth} m is not a multiple of {spacing} m"
            )));
        }
        Self::new(steps as usize + 1, spacing)
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn depth(&self, index: usize) -> f64 {
        index as f64 * self.spacing
    }

    pub fn depths(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.count).map(|i| self.depth(i))
    }

    pub fn max_depth(&self) -> f64 {
        self.depth(self.count - 1)
    }

    /// Index of the grid point at `depth`, if it lies on the grid.
    pub fn index_of(&self, depth: f64) -> Option<usize> {
        let steps = (depth / self.spacing).round();
        if steps < 0.0 || steps as usize >= self.count {
            return None;
        }
        ((steps * self.spacing - depth).abs() <= GRID_TOLERANCE).then_some(steps as usize)
    }
}

impl Default for DepthGrid {
    /// 2 m spacing over 0-300 m (151 points).
    fn default() -> Self {
        Self { count: 151, spacing: 2.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Date {
    pub year: i32,
    pub month: u32,
    pub day: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileMeta {
    pub latitude: f64,
    pub longitude: f64,
    pub date: Date,
    /// Set on profiles built from EOF coefficients rather than observations.
    #[serde(default)]
    pub synthetic: bool,
}

impl ProfileMeta {
    pub fn synthetic() -> Self {
        Self {
            latitude: 0.0,
            longitude: 0.0,
            date: Date { year: 0, month: 1, day: 1 },
            synthetic: true,
        }
    }

    fn key(&self) -> (u64, u64, i32, u32, u32) {
        (
            self.latitude.to_bits(),
            self.longitude.to_bits(),
            self.date.year,
            self.date.month,
            self.date.day,
        )
    }
}

/// Accepted sound speed range in m/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlausibilityBand {
    pub min: f64,
    pub max: f64,
}

impl Default for PlausibilityBand {
    fn default() -> Self {
        Self { min: 1300.0, max: 1700.0 }
    }
}

impl PlausibilityBand {
    pub fn check(&self, speeds: &[f64]) -> Result<()> {
        for (i, &c) in speeds.iter().enumerate() {
            if !c.is_finite() {
                return Err(Error::InvalidProfile(format!("non-finite speed at index {i}")));
            }
            if c < self.min || c > self.max {
                return Err(Error::InvalidProfile(format!(
                    "speed {c} m/s at index {i} outside [{}, {}]",
                    self.min, self.max
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoundSpeedProfile {
    grid: DepthGrid,
    speeds: Vec<f64>,
    pub meta: ProfileMeta,
}

impl SoundSpeedProfile {
    pub fn new(grid: DepthGrid, speeds: Vec<f64>, meta: ProfileMeta) -> Result<Self> {
        Self::with_band(grid, speeds, meta, PlausibilityBand::default())
    }

    pub fn with_band(
        grid: DepthGrid,
        speeds: Vec<f64>,
        meta: ProfileMeta,
        band: PlausibilityBand,
    ) -> Result<Self> {
        if speeds.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: speeds.len() });
        }
        band.check(&speeds)?;
        Ok(Self { grid, speeds, meta })
    }

    /// Finite speeds only; skips the plausibility band. Used for EOF
    /// reconstructions, which may wander outside it mid-optimization.
    pub fn unchecked(grid: DepthGrid, speeds: Vec<f64>, meta: ProfileMeta) -> Result<Self> {
        if speeds.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: speeds.len() });
        }
        if let Some(i) = speeds.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidProfile(format!("non-finite speed at index {i}")));
        }
        Ok(Self { grid, speeds, meta })
    }

    pub fn grid(&self) -> DepthGrid {
        self.grid
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    pub fn samples(&self) -> Vec<(f64, f64)> {
        self.grid.depths().zip(self.speeds.iter().copied()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileSet {
    grid: DepthGrid,
    profiles: Vec<SoundSpeedProfile>,
}

impl ProfileSet {
    pub fn new(grid: DepthGrid, profiles: Vec<SoundSpeedProfile>) -> Result<Self> {
        if profiles.iter().any(|p| p.grid != grid) {
            return Err(Error::GridMismatch);
        }
        Ok(Self { grid, profiles })
    }

    pub fn grid(&self) -> DepthGrid {
        self.grid
    }

    pub fn profiles(&self) -> &[SoundSpeedProfile] {
        &self.profiles
    }

    pub fn into_profiles(self) -> Vec<SoundSpeedProfile> {
        self.profiles
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    /// Pointwise arithmetic mean over all members.
    pub fn mean_speeds(&self) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::EmptySet { what: "profile set" });
        }
        let mut mean = vec![0.0; self.grid.len()];
        for p in &self.profiles {
            for (m, c) in mean.iter_mut().zip(&p.speeds) {
                *m += c;
            }
        }
        let n = self.profiles.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(mean)
    }

    /// Mean profile as a synthetic profile on the shared grid.
    pub fn mean_profile(&self) -> Result<SoundSpeedProfile> {
        SoundSpeedProfile::unchecked(self.grid, self.mean_speeds()?, ProfileMeta::synthetic())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BoundingBox {
    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Result<Self> {
        let b = Self { lat_min, lat_max, lon_min, lon_max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lat_min < self.lat_max && self.lon_min < self.lon_max) {
            return Err(Error::InvalidArgument(format!("empty bounding box {self:?}")));
        }
        Ok(())
    }

    /// Closed on every edge.
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.lat_min..=self.lat_max).contains(&lat) && (self.lon_min..=self.lon_max).contains(&lon)
    }
}

/// A record that was read but could not be turned into a valid profile.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordError {
    /// Line of the record's first row (1-based, header is line 1).
    pub line: u64,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct ParsedProfiles {
    pub set: ProfileSet,
    pub rejected: Vec<RecordError>,
}

pub const CSV_HEADER: [&str; 7] = ["lat", "lon", "year", "month", "day", "depth_m", "speed_mps"];

/// Reads the profile CSV format and regrids every record onto `grid`.
///
/// Rows of one profile are contiguous and share `(lat, lon, year, month, day)`.
/// Malformed rows abort the read; records that parse but fail validation are
/// collected in [`ParsedProfiles::rejected`].
pub fn parse_profiles<R: Read>(source: R, grid: DepthGrid) -> Result<ParsedProfiles> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(source);
    let mut records = reader.records();

    let header = match records.next() {
        None => return Err(Error::EmptyInput),
        Some(r) => r?,
    };
    if header.iter().map(str::trim).ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", CSV_HEADER.join(",")),
        });
    }

    struct Pending {
        meta: ProfileMeta,
        line: u64,
        samples: Vec<(f64, f64)>,
    }

    let mut profiles = Vec::new();
    let mut rejected = Vec::new();
    let mut finish = |pending: Pending| match regrid_profile(&pending.samples, grid, pending.meta) {
        Ok(p) => profiles.push(p),
        Err(e) => rejected.push(RecordError { line: pending.line, message: e.to_string() }),
    };

    let mut current: Option<Pending> = None;
    for row in records {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != CSV_HEADER.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, got {}", CSV_HEADER.len(), row.len()),
            });
        }
        let field = |i: usize| row[i].trim();
        let float = |i: usize| -> Result<f64> {
            field(i).parse::<f64>().map_err(|e| Error::Parse {
                line,
                message: format!("{}: {e}", CSV_HEADER[i]),
            })
        };
        let int = |i: usize| -> Result<i64> {
            field(i).parse::<i64>().map_err(|e| Error::Parse {
                line,
                message: format!("{}: {e}", CSV_HEADER[i]),
            })
        };
        let meta = ProfileMeta {
            latitude: float(0)?,
            longitude: float(1)?,
            date: Date { year: int(2)? as i32, month: int(3)? as u32, day: int(4)? as u32 },
            synthetic: false,
        };
        let sample = (float(5)?, float(6)?);

        match current.as_mut() {
            Some(p) if p.meta.key() == meta.key() => p.samples.push(sample),
            _ => {
                if let Some(done) = current.take() {
                    finish(done);
                }
                current = Some(Pending { meta, line, samples: vec![sample] });
            }
        }
    }
    match current {
        Some(done) => finish(done),
        None => return Err(Error::EmptyInput),
    }

    Ok(ParsedProfiles { set: ProfileSet::new(grid, profiles)?, rejected })
}

/// Writes `set` in the format [`parse_profiles`] reads, one row per grid depth.
pub fn write_profiles<W: Write>(set: &ProfileSet, mut out: W) -> Result<()> {
    writeln!(out, "{}", CSV_HEADER.join(","))?;
    for p in set.profiles() {
        let m = &p.meta;
        for (z, c) in p.samples() {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                m.latitude, m.longitude, m.date.year, m.date.month, m.date.day, z, c
            )?;
        }
    }
    Ok(())
}

/// Linear interpolation onto `grid`, holding end values constant outside the
/// sampled depth range.
pub fn regrid_profile(
    samples: &[(f64, f64)],
    grid: DepthGrid,
    meta: ProfileMeta,
) -> Result<SoundSpeedProfile> {
    if samples.len() < 2 {
        return Err(Error::InvalidProfile(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    for w in samples.windows(2) {
        if w[1].0 == w[0].0 {
            return Err(Error::InvalidProfile(format!("duplicate depth {} m", w[0].0)));
        }
        if !(w[1].0 > w[0].0) {
            return Err(Error::InvalidProfile(format!(
                "depths not increasing at {} m -> {} m",
                w[0].0, w[1].0
            )));
        }
    }
    if samples.iter().any(|(z, c)| !z.is_finite() || !c.is_finite()) {
        return Err(Error::InvalidProfile("non-finite sample".into()));
    }

    let (first, last) = (samples[0], samples[samples.len() - 1]);
    let speeds = grid
        .depths()
        .map(|z| {
            if z <= first.0 {
                return first.1;
            }
            if z >= last.0 {
                return last.1;
            }
            // first sample strictly deeper than z; exists and is > 0 here
            let hi = samples.partition_point(|s| s.0 <= z);
            let (z0, c0) = samples[hi - 1];
            let (z1, c1) = samples[hi];
            if z == z0 {
                c0
            } else {
                c0 + (c1 - c0) * (z - z0) / (z1 - z0)
            }
        })
        .collect();
    SoundSpeedProfile::new(grid, speeds, meta)
}

/// Keeps profiles inside `bbox`, taken in one of `months`, within `years`.
pub fn filter_profiles(
    set: &ProfileSet,
    bbox: &BoundingBox,
    months: &BTreeSet<u32>,
    years: RangeInclusive<i32>,
) -> ProfileSet {
    let profiles = set
        .profiles()
        .iter()
        .filter(|p| {
            let m = &p.meta;
            bbox.contains(m.latitude, m.longitude)
                && months.contains(&m.date.month)
                && years.contains(&m.date.year)
        })
        .cloned()
        .collect();
    ProfileSet { grid: set.grid, profiles }
}

/// Truncates every profile to `[0, max_depth]`.
pub fn crop_depth(set: &ProfileSet, max_depth: f64) -> Result<ProfileSet> {
    let grid = set.grid();
    let last = grid.index_of(max_depth).ok_or_else(|| {
        Error::InvalidGrid(format!("{max_depth} m is not a point of the depth grid"))
    })?;
    let cropped = DepthGrid::new(last + 1, grid.spacing())?;
    let profiles = set
        .profiles()
        .iter()
        .map(|p| SoundSpeedProfile {
            grid: cropped,
            speeds: p.speeds[..=last].to_vec(),
            meta: p.meta,
        })
        .collect();
    Ok(ProfileSet { grid: cropped, profiles })
}

/// Root-mean-square speed difference over the grid depths, in m/s.
pub fn rms_error(a: &SoundSpeedProfile, b: &SoundSpeedProfile) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch);
    }
    rms_diff(&a.speeds, &b.speeds)
}

pub(crate) fn rms_diff(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum / a.len() as f64).sqrt())
}
