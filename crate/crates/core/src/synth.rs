//! Synthetic oceans, sonar geometries and noisy travel-time surveys.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{travel_times, Geometry, RayOutcome};
use crate::profiles::{Date, DepthGrid, PlausibilityBand, ProfileMeta, ProfileSet, SoundSpeedProfile};

/// Seed for the `stream`-th independent random stream under `master`
/// (splitmix64 finalizer), so parallel work stays reproducible.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Default reference speed for converting range error to time error.
pub const DEFAULT_C_REF: f64 = 1500.0;

/// `n_beam` angles evenly spaced over `[-swath/2, +swath/2]`, endpoints included.
pub fn make_geometry(swath_width_deg: f64, n_beam: usize, bottom_depth: f64) -> Result<Geometry> {
    if !(swath_width_deg > 0.0 && swath_width_deg < 180.0) {
        return Err(Error::InvalidGeometry(format!("swath width {swath_width_deg} deg not in (0, 180)")));
    }
    if n_beam == 0 {
        return Err(Error::InvalidGeometry("need at least one beam".into()));
    }
    let half = swath_width_deg.to_radians() / 2.0;
    let angles = if n_beam == 1 {
        vec![0.0]
    } else {
        // integer offsets keep mirrored beams exact negatives of each other
        let last = (n_beam - 1) as f64;
        (0..n_beam).map(|i| half * (2.0 * i as f64 - last) / last).collect()
    };
    Geometry::new(bottom_depth, 0.0, angles)
}

/// Two-way time error equivalent to a range error: `2 sigma_x / c_ref`.
pub fn sigma_t_from_spatial(sigma_x: f64, c_ref: f64) -> Result<f64> {
    if !(c_ref > 0.0) {
        return Err(Error::InvalidArgument(format!("reference speed must be positive, got {c_ref}")));
    }
    if !(sigma_x >= 0.0) {
        return Err(Error::InvalidArgument(format!("spatial error must be nonnegative, got {sigma_x}")));
    }
    Ok(2.0 * sigma_x / c_ref)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub ping: usize,
    /// Index into the geometry's beam angles.
    pub beam: usize,
    pub angle: f64,
    /// Measured two-way travel time, seconds.
    pub time: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSet {
    pub geometry: Geometry,
    pub observations: Vec<Observation>,
    pub sigma_t: f64,
    pub n_ping: usize,
    pub truth_id: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct MeasurementSidecar {
    geometry: Geometry,
    sigma_t: f64,
    n_ping: usize,
    seed: Option<u64>,
    truth_id: Option<String>,
}

impl MeasurementSet {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Sorted indices of beams with at least one observation.
    pub fn observed_beams(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.observations.iter().map(|o| o.beam).collect();
        set.into_iter().collect()
    }

    pub fn max_time(&self) -> f64 {
        self.observations.iter().map(|o| o.time).fold(0.0, f64::max)
    }

    /// `ping,angle_rad,time_s`
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "ping,angle_rad,time_s")?;
        for o in &self.observations {
            writeln!(out, "{},{},{}", o.ping, o.angle, o.time)?;
        }
        Ok(())
    }

    /// Geometry, noise level, seed and truth reference as JSON.
    pub fn write_sidecar<W: Write>(&self, out: W) -> Result<()> {
        let sidecar = MeasurementSidecar {
            geometry: self.geometry.clone(),
            sigma_t: self.sigma_t,
            n_ping: self.n_ping,
            seed: self.seed,
            truth_id: self.truth_id.clone(),
        };
        serde_json::to_writer_pretty(out, &sidecar)?;
        Ok(())
    }

    /// Reads the CSV and sidecar pair; each row's angle must be one of the
    /// sidecar geometry's beam angles.
    pub fn read<R1: Read, R2: Read>(csv_source: R1, sidecar: R2) -> Result<Self> {
        let side: MeasurementSidecar = serde_json::from_reader(sidecar)?;
        side.geometry.validate()?;
        let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(csv_source);
        let mut rows = reader.records();
        let header = rows.next().ok_or(Error::EmptyInput)??;
        if header.iter().map(str::trim).ne(["ping", "angle_rad", "time_s"]) {
            return Err(Error::Parse { line: 1, message: "expected header `ping,angle_rad,time_s`".into() });
        }
        let mut observations = Vec::new();
        for row in rows {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line());
            let parse_err = |what: &str| Error::Parse { line, message: format!("invalid {what}") };
            if row.len() != 3 {
                return Err(Error::Parse { line, message: format!("expected 3 fields, got {}", row.len()) });
            }
            let ping: usize = row[0].trim().parse().map_err(|_| parse_err("ping"))?;
            let angle: f64 = row[1].trim().parse().map_err(|_| parse_err("angle_rad"))?;
            let time: f64 = row[2].trim().parse().map_err(|_| parse_err("time_s"))?;
            if !(time > 0.0 && time.is_finite()) {
                return Err(Error::Parse { line, message: format!("travel time {time} must be positive") });
            }
            let beam = side
                .geometry
                .beam_angles
                .iter()
                .position(|&a| (a - angle).abs() <= 1e-12)
                .ok_or_else(|| Error::Parse { line, message: format!("angle {angle} is not a geometry beam") })?;
            observations.push(Observation { ping, beam, angle: side.geometry.beam_angles[beam], time });
        }
        if observations.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(Self {
            geometry: side.geometry,
            observations,
            sigma_t: side.sigma_t,
            n_ping: side.n_ping,
            truth_id: side.truth_id,
            seed: side.seed,
        })
    }
}

/// Exact forward times plus independent `N(0, sigma_t^2)` noise for each of
/// `n_ping` repeats of every beam that reaches the bottom.
pub fn simulate_measurements<R: Rng + ?Sized>(
    truth: &SoundSpeedProfile,
    geometry: &Geometry,
    sigma_t: f64,
    n_ping: usize,
    rng: &mut R,
) -> Result<MeasurementSet> {
    if !(sigma_t >= 0.0 && sigma_t.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma_t must be nonnegative, got {sigma_t}")));
    }
    if n_ping == 0 {
        return Err(Error::InvalidArgument("need at least one ping".into()));
    }
    let exact = travel_times(truth, geometry)?;
    if exact.turned_count() == exact.beams.len() {
        return Err(Error::AllBeamsTurned);
    }
    let mut observations = Vec::with_capacity(n_ping * exact.beams.len());
    for ping in 0..n_ping {
        for (beam, b) in exact.beams.iter().enumerate() {
            if let RayOutcome::Bottom { two_way_time, .. } = b.outcome {
                let noise: f64 = rng.sample(StandardNormal);
                observations.push(Observation { ping, beam, angle: b.angle, time: two_way_time + sigma_t * noise });
            }
        }
    }
    Ok(MeasurementSet {
        geometry: geometry.clone(),
        observations,
        sigma_t,
        n_ping,
        truth_id: None,
        seed: None,
    })
}

/// Parameters of the synthetic profile family.
///
/// Every profile is a piecewise-linear base shape (mixed layer, thermocline,
/// deep gradient) whose mixed-layer depth is jittered, plus random cosine
/// modes `a_m xi_m cos(m pi z / D)` with `xi_m ~ N(0, 1)`, plus a
/// depth-uniform drift of `trend_per_year` per year after `reference_year`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthOceanSpec {
    pub surface_speed: f64,
    pub mixed_layer_depth: f64,
    pub mixed_layer_gradient: f64,
    pub thermocline_thickness: f64,
    pub thermocline_gradient: f64,
    pub deep_gradient: f64,
    /// Standard deviation of the mixed-layer depth, meters.
    pub mixed_layer_jitter: f64,
    /// Standard deviation of each cosine mode, m/s; entry `m` is mode `m`.
    pub mode_amplitudes: Vec<f64>,
    /// Depth-uniform interannual drift, (m/s)/year.
    pub trend_per_year: f64,
    pub reference_year: i32,
    pub count: usize,
    pub lat_range: [f64; 2],
    pub lon_range: [f64; 2],
    pub years: [i32; 2],
    pub months: Vec<u32>,
}

impl Default for SynthOceanSpec {
    fn default() -> Self {
        Self {
            surface_speed: 1478.0,
            mixed_layer_depth: 30.0,
            mixed_layer_gradient: 0.016,
            thermocline_thickness: 50.0,
            thermocline_gradient: -0.06,
            deep_gradient: 0.017,
            mixed_layer_jitter: 8.0,
            mode_amplitudes: vec![2.5, 1.5, 0.8, 0.5, 0.3, 0.2, 0.1, 0.05],
            trend_per_year: 0.2,
            reference_year: 1995,
            count: 151,
            lat_range: [59.849, 62.092],
            lon_range: [2.924, 4.990],
            years: [1990, 2000],
            months: vec![4],
        }
    }
}

impl SynthOceanSpec {
    pub fn base_speed(&self, z: f64, mixed_layer_depth: f64) -> f64 {
        let ml = z.min(mixed_layer_depth);
        let th = (z - mixed_layer_depth).clamp(0.0, self.thermocline_thickness);
        let deep = (z - mixed_layer_depth - self.thermocline_thickness).max(0.0);
        self.surface_speed + self.mixed_layer_gradient * ml + self.thermocline_gradient * th + self.deep_gradient * deep
    }

    /// Base shape with the nominal mixed-layer depth.
    pub fn base_profile(&self, grid: DepthGrid) -> Vec<f64> {
        grid.depths().map(|z| self.base_speed(z, self.mixed_layer_depth)).collect()
    }

    pub fn validate(&self, grid: DepthGrid) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.count < 2 {
            return bad(format!("ocean needs at least 2 profiles, got {}", self.count));
        }
        if self.lat_range[0] > self.lat_range[1] || self.lon_range[0] > self.lon_range[1] || self.years[0] > self.years[1] {
            return bad("metadata ranges must be ordered".into());
        }
        if self.months.is_empty() || self.months.iter().any(|m| !(1..=12).contains(m)) {
            return bad("months must be a nonempty subset of 1..=12".into());
        }
        if self.mode_amplitudes.iter().any(|a| !(*a >= 0.0)) || !(self.mixed_layer_jitter >= 0.0) {
            return bad("perturbation amplitudes must be nonnegative".into());
        }
        if !(self.mixed_layer_depth >= 0.0 && self.thermocline_thickness >= 0.0) {
            return bad("layer depths must be nonnegative".into());
        }
        // five-sigma envelope must stay in the plausibility band
        let band = PlausibilityBand::default();
        if !self.trend_per_year.is_finite() {
            return bad("trend must be finite".into());
        }
        let years = (self.years[0] - self.reference_year).abs().max((self.years[1] - self.reference_year).abs());
        let spread = 5.0 * self.mode_amplitudes.iter().sum::<f64>() + self.trend_per_year.abs() * f64::from(years);
        let base = self.base_profile(grid);
        let lo = base.iter().copied().fold(f64::INFINITY, f64::min) - spread;
        let hi = base.iter().copied().fold(f64::NEG_INFINITY, f64::max) + spread;
        if lo < band.min || hi > band.max {
            return bad(format!("profiles may leave [{}, {}] m/s (range {lo:.1}..{hi:.1})", band.min, band.max));
        }
        Ok(())
    }
}

/// Draws `spec.count` profiles on `grid`.
pub fn generate_ocean<R: Rng + ?Sized>(spec: &SynthOceanSpec, grid: DepthGrid, rng: &mut R) -> Result<ProfileSet> {
    spec.validate(grid)?;
    let depth_scale = grid.max_depth();
    let mut profiles = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let date = Date {
            year: rng.random_range(spec.years[0]..=spec.years[1]),
            month: spec.months[rng.random_range(0..spec.months.len())],
            day: rng.random_range(1..=28),
        };
        let drift = spec.trend_per_year * f64::from(date.year - spec.reference_year);
        let jitter: f64 = rng.sample(StandardNormal);
        let mld = (spec.mixed_layer_depth + spec.mixed_layer_jitter * jitter).max(0.0);
        let weights: Vec<f64> = spec
            .mode_amplitudes
            .iter()
            .map(|a| a * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let speeds = grid
            .depths()
            .map(|z| {
                let modes: f64 = weights
                    .iter()
                    .enumerate()
                    .map(|(m, w)| w * (std::f64::consts::PI * m as f64 * z / depth_scale).cos())
                    .sum();
                spec.base_speed(z, mld) + drift + modes
            })
            .collect();
        let meta = ProfileMeta {
            latitude: rng.random_range(spec.lat_range[0]..=spec.lat_range[1]),
            longitude: rng.random_range(spec.lon_range[0]..=spec.lon_range[1]),
            date,
            synthetic: true,
        };
        profiles.push(SoundSpeedProfile::new(grid, speeds, meta)?);
    }
    ProfileSet::new(grid, profiles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::rms_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn deg(angles: &[f64]) -> Vec<f64> {
        angles.iter().map(|a| a.to_degrees()).collect()
    }

    #[test]
    fn geometry_layouts() {
        let g = make_geometry(120.0, 3, 300.0).unwrap();
        let d = deg(&g.beam_angles);
        assert!((d[0] + 60.0).abs() < 1e-12 && d[1] == 0.0 && (d[2] - 60.0).abs() < 1e-12);
        assert_eq!(make_geometry(120.0, 1, 300.0).unwrap().beam_angles, vec![0.0]);
        let d = deg(&make_geometry(140.0, 5, 300.0).unwrap().beam_angles);
        for (a, e) in d.iter().zip([-70.0, -35.0, 0.0, 35.0, 70.0]) {
            assert!((a - e).abs() < 1e-12);
        }
        assert!(make_geometry(180.0, 5, 300.0).is_err());
        assert!(make_geometry(120.0, 0, 300.0).is_err());
    }

    #[test]
    fn spatial_to_time_error() {
        assert_eq!(sigma_t_from_spatial(0.0, 1500.0).unwrap(), 0.0);
        assert!((sigma_t_from_spatial(0.01, 1500.0).unwrap() - 1.3333333333333333e-5).abs() < 1e-18);
        assert!((sigma_t_from_spatial(0.10, 1500.0).unwrap() - 1.3333333333333333e-4).abs() < 1e-17);
        assert!(sigma_t_from_spatial(0.01, 0.0).is_err());
    }

    fn truth() -> SoundSpeedProfile {
        let grid = DepthGrid::default();
        let speeds = SynthOceanSpec::default().base_profile(grid);
        SoundSpeedProfile::new(grid, speeds, ProfileMeta::synthetic()).unwrap()
    }

    #[test]
    fn noiseless_simulation_is_the_forward_model() {
        let g = make_geometry(120.0, 51, 300.0).unwrap();
        let p = truth();
        let m = simulate_measurements(&p, &g, 0.0, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let exact = travel_times(&p, &g).unwrap();
        assert_eq!(m.len(), 102);
        for o in &m.observations {
            assert_eq!(Some(o.time), exact.beams[o.beam].outcome.time());
        }
    }

    #[test]
    fn simulation_is_reproducible() {
        let g = make_geometry(120.0, 21, 300.0).unwrap();
        let run = |seed| simulate_measurements(&truth(), &g, 1e-5, 3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
    }

    #[test]
    fn noise_statistics() {
        let g = make_geometry(10.0, 1, 300.0).unwrap();
        let p = truth();
        let exact = travel_times(&p, &g).unwrap().beams[0].outcome.time().unwrap();
        let sigma = 2e-5;
        let n = 100_000;
        let m = simulate_measurements(&p, &g, sigma, n, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let errs: Vec<f64> = m.observations.iter().map(|o| o.time - exact).collect();
        let mean = errs.iter().sum::<f64>() / n as f64;
        let std = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((std / sigma - 1.0).abs() < 0.02);
        assert!(mean.abs() < 3.0 * sigma / (n as f64).sqrt());
    }

    #[test]
    fn all_turned_is_an_error() {
        let grid = DepthGrid::new(3, 100.0).unwrap();
        let p = SoundSpeedProfile::new(grid, vec![1450.0, 1600.0, 1600.0], ProfileMeta::synthetic()).unwrap();
        let g = Geometry::new(200.0, 0.0, vec![75f64.to_radians()]).unwrap();
        assert!(matches!(
            simulate_measurements(&p, &g, 0.0, 1, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::AllBeamsTurned)
        ));
    }

    #[test]
    fn measurement_files_round_trip() {
        let g = make_geometry(120.0, 7, 300.0).unwrap();
        let mut m = simulate_measurements(&truth(), &g, 1e-5, 2, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        m.seed = Some(3);
        m.truth_id = Some("test-0".into());
        let (mut csv, mut side) = (Vec::new(), Vec::new());
        m.write_csv(&mut csv).unwrap();
        m.write_sidecar(&mut side).unwrap();
        assert_eq!(MeasurementSet::read(csv.as_slice(), side.as_slice()).unwrap(), m);

        let mut corrupt = String::from_utf8(csv).unwrap();
        corrupt.push_str("1,0.5,abc\n");
        match MeasurementSet::read(corrupt.as_bytes(), side.as_slice()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 16),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn flat_ocean_without_perturbations() {
        let spec = SynthOceanSpec { mode_amplitudes: vec![0.0; 4], mixed_layer_jitter: 0.0, trend_per_year: 0.0, count: 5, ..Default::default() };
        let grid = DepthGrid::default();
        let set = generate_ocean(&spec, grid, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let base = spec.base_profile(grid);
        for p in set.profiles() {
            assert_eq!(p.speeds(), base.as_slice());
        }
    }

    #[test]
    fn ocean_is_reproducible_and_plausible() {
        let spec = SynthOceanSpec::default();
        let grid = DepthGrid::default();
        let a = generate_ocean(&spec, grid, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
        let b = generate_ocean(&spec, grid, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 151);
        for p in a.profiles() {
            assert_eq!(p.meta.date.month, 4);
            assert!((1990..=2000).contains(&p.meta.date.year));
        }
    }

    #[test]
    fn default_ocean_variability_brackets_training_spread() {
        let grid = DepthGrid::default();
        let set = generate_ocean(&SynthOceanSpec::default(), grid, &mut ChaCha8Rng::seed_from_u64(2024)).unwrap();
        let mean = set.mean_profile().unwrap();
        let spread = set.profiles().iter().map(|p| rms_error(p, &mean).unwrap()).sum::<f64>() / set.len() as f64;
        assert!((1.0..=6.0).contains(&spread), "mean deviation {spread} m/s");
    }

    #[test]
    fn implausible_spec_is_rejected() {
        let spec = SynthOceanSpec { surface_speed: 1690.0, ..Default::default() };
        assert!(generate_ocean(&spec, DepthGrid::default(), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
