//! Bottom-return travel times through a horizontally stratified ocean.
//!
//! The profile is treated as piecewise-constant layers between consecutive
//! grid depths, each layer taking the speed at its upper grid point. Along a
//! ray the Snell-Descartes parameter `p = sin(theta_i) / c_i` is conserved, so
//! the one-way time is `sum dz_i / (c_i sqrt(1 - c_i^2 p^2))` and the
//! horizontal run is `sum dz_i c_i p / sqrt(1 - c_i^2 p^2)`. A ray that meets
//! a layer with `c_i p >= 1` turns before the bottom and has no return.
//!
//! Transmitter and receiver are colocated and the bottom is flat, so the
//! return path mirrors the outgoing one and the two-way time is twice the
//! one-way time.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::eof::{reconstruct, Coefficients, EofBasis};
use crate::error::{Error, Result};
use crate::profiles::{DepthGrid, SoundSpeedProfile};

const DEPTH_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// Flat seafloor depth in meters.
    pub bottom_depth: f64,
    /// Transducer depth in meters.
    #[serde(default)]
    pub source_depth: f64,
    /// Beam angles from the vertical, radians.
    pub beam_angles: Vec<f64>,
}

impl Geometry {
    pub fn new(bottom_depth: f64, source_depth: f64, beam_angles: Vec<f64>) -> Result<Self> {
        let g = Self { bottom_depth, source_depth, beam_angles };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.source_depth.is_finite() && self.bottom_depth.is_finite()) {
            return Err(Error::InvalidGeometry("depths must be finite".into()));
        }
        if !(0.0 <= self.source_depth && self.source_depth < self.bottom_depth) {
            return Err(Error::InvalidGeometry(format!(
                "need 0 <= source depth ({}) < bottom depth ({})",
                self.source_depth, self.bottom_depth
            )));
        }
        if let Some(a) = self.beam_angles.iter().find(|a| !(a.abs() < FRAC_PI_2)) {
            return Err(Error::InvalidGeometry(format!("beam angle {a} rad is not below horizontal")));
        }
        Ok(())
    }

    pub fn check_grid(&self, grid: DepthGrid) -> Result<()> {
        self.validate()?;
        if self.bottom_depth > grid.max_depth() + DEPTH_TOLERANCE {
            return Err(Error::InvalidGeometry(format!(
                "bottom depth {} m is below the profile grid ({} m)",
                self.bottom_depth,
                grid.max_depth()
            )));
        }
        Ok(())
    }
}

/// Result of tracing one beam.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RayOutcome {
    Bottom { two_way_time: f64, offset: f64 },
    Turned,
}

impl RayOutcome {
    pub fn time(&self) -> Option<f64> {
        match *self {
            RayOutcome::Bottom { two_way_time, .. } => Some(two_way_time),
            RayOutcome::Turned => None,
        }
    }

    pub fn offset(&self) -> Option<f64> {
        match *self {
            RayOutcome::Bottom { offset, .. } => Some(offset),
            RayOutcome::Turned => None,
        }
    }

    pub fn is_turned(&self) -> bool {
        matches!(self, RayOutcome::Turned)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamTravelTime {
    pub angle: f64,
    pub outcome: RayOutcome,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TravelTimeSet {
    pub beams: Vec<BeamTravelTime>,
}

impl TravelTimeSet {
    pub fn times(&self) -> impl Iterator<Item = Option<f64>> + '_ {
        self.beams.iter().map(|b| b.outcome.time())
    }

    pub fn turned_count(&self) -> usize {
        self.beams.iter().filter(|b| b.outcome.is_turned()).count()
    }

    /// `angle_rad,time_s,offset_m,status`; turned beams leave time and offset empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "angle_rad,time_s,offset_m,status")?;
        for b in &self.beams {
            match b.outcome {
                RayOutcome::Bottom { two_way_time, offset } => {
                    writeln!(out, "{},{},{},ok", b.angle, two_way_time, offset)?
                }
                RayOutcome::Turned => writeln!(out, "{},,,turned", b.angle)?,
            }
        }
        Ok(())
    }
}

/// `(thickness, speed)` of each layer crossed between `top` and `bottom`.
///
/// Layer `i` spans `[z_i, z_{i+1})` with speed `speeds[i]`; the first and
/// last layers are clipped to the interval.
pub fn layers<'a>(
    grid: DepthGrid,
    speeds: &'a [f64],
    top: f64,
    bottom: f64,
) -> impl Iterator<Item = (f64, f64)> + 'a {
    let dz = grid.spacing();
    let first = ((top / dz) + DEPTH_TOLERANCE).floor().max(0.0) as usize;
    let bottom = bottom.min(grid.max_depth());
    (first..grid.len() - 1)
        .map_while(move |i| {
            let z0 = (i as f64 * dz).max(top);
            if z0 >= bottom - DEPTH_TOLERANCE {
                return None;
            }
            let z1 = ((i + 1) as f64 * dz).min(bottom);
            Some((z1 - z0, speeds[i]))
        })
        .filter(|&(h, _)| h > 0.0)
}

/// Time and offset for a fixed ray parameter; `None` if the ray turns.
pub fn one_way_for_ray_parameter(
    layers: impl IntoIterator<Item = (f64, f64)>,
    p: f64,
) -> Option<(f64, f64)> {
    let mut time = 0.0;
    let mut offset = 0.0;
    for (h, c) in layers {
        let u = c * p;
        let cos2 = 1.0 - u * u;
        if !(cos2 > 0.0) {
            return None;
        }
        let cos = cos2.sqrt();
        time += h / (c * cos);
        offset += h * u / cos;
    }
    Some((time, offset))
}

pub(crate) fn trace_speeds(
    grid: DepthGrid,
    speeds: &[f64],
    theta: f64,
    geometry: &Geometry,
) -> RayOutcome {
    let mut it = layers(grid, speeds, geometry.source_depth, geometry.bottom_depth).peekable();
    let c1 = match it.peek() {
        Some(&(_, c)) => c,
        None => return RayOutcome::Turned,
    };
    let p = theta.sin() / c1;
    match one_way_for_ray_parameter(it, p) {
        Some((t, x)) => RayOutcome::Bottom { two_way_time: 2.0 * t, offset: x },
        None => RayOutcome::Turned,
    }
}

/// Traces one beam launched at `theta` from the vertical.
pub fn layered_travel_time(
    profile: &SoundSpeedProfile,
    theta: f64,
    geometry: &Geometry,
) -> Result<RayOutcome> {
    geometry.check_grid(profile.grid())?;
    if !(theta.abs() < FRAC_PI_2) {
        return Err(Error::InvalidGeometry(format!("beam angle {theta} rad is not below horizontal")));
    }
    Ok(trace_speeds(profile.grid(), profile.speeds(), theta, geometry))
}

/// Traces every beam of `geometry`, in order.
pub fn travel_times(profile: &SoundSpeedProfile, geometry: &Geometry) -> Result<TravelTimeSet> {
    geometry.check_grid(profile.grid())?;
    let beams = geometry
        .beam_angles
        .iter()
        .map(|&angle| BeamTravelTime {
            angle,
            outcome: trace_speeds(profile.grid(), profile.speeds(), angle, geometry),
        })
        .collect();
    Ok(TravelTimeSet { beams })
}

/// Travel times of the profile `mean + U x`.
pub fn travel_times_of_coefficients(
    basis: &EofBasis,
    x: &Coefficients,
    geometry: &Geometry,
) -> Result<TravelTimeSet> {
    travel_times(&reconstruct(basis, x)?, geometry)
}

/// One straight segment of a traced ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RaySegment {
    pub thickness: f64,
    pub speed: f64,
    /// Angle from the vertical inside the layer.
    pub angle: f64,
}

/// Per-layer ray geometry, or `None` if the ray turns.
pub fn trace_segments(
    profile: &SoundSpeedProfile,
    theta: f64,
    geometry: &Geometry,
) -> Result<Option<Vec<RaySegment>>> {
    geometry.check_grid(profile.grid())?;
    let all: Vec<(f64, f64)> =
        layers(profile.grid(), profile.speeds(), geometry.source_depth, geometry.bottom_depth).collect();
    let Some(&(_, c1)) = all.first() else {
        return Ok(None);
    };
    let p = theta.sin() / c1;
    let mut out = Vec::with_capacity(all.len());
    for (thickness, speed) in all {
        let s = speed * p;
        if s.abs() >= 1.0 {
            return Ok(None);
        }
        out.push(RaySegment { thickness, speed, angle: s.asin() });
    }
    Ok(Some(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::ProfileMeta;

    fn constant(grid: DepthGrid, c: f64) -> SoundSpeedProfile {
        SoundSpeedProfile::new(grid, vec![c; grid.len()], ProfileMeta::synthetic()).unwrap()
    }

    fn flat_bottom(angles: Vec<f64>) -> Geometry {
        Geometry::new(300.0, 0.0, angles).unwrap()
    }

    #[test]
    fn constant_profile_closed_forms() {
        let p = constant(DepthGrid::default(), 1500.0);
        let g = flat_bottom(vec![0.0]);
        let RayOutcome::Bottom { two_way_time, offset } = layered_travel_time(&p, 0.0, &g).unwrap() else {
            panic!("vertical ray turned")
        };
        assert!((two_way_time - 0.4).abs() < 1e-14);
        assert_eq!(offset, 0.0);

        let t60 = layered_travel_time(&p, 60f64.to_radians(), &g).unwrap().time().unwrap();
        assert!((t60 - 0.8).abs() < 1e-12);
    }

    #[test]
    fn wide_swath_matches_secant_law() {
        let p = constant(DepthGrid::default(), 1500.0);
        let angles: Vec<f64> = (0..500).map(|i| (-60.0 + 120.0 * i as f64 / 499.0f64).to_radians()).collect();
        let set = travel_times(&p, &flat_bottom(angles.clone())).unwrap();
        for (b, a) in set.beams.iter().zip(&angles) {
            let t = b.outcome.time().unwrap();
            assert!((t - 0.4 / a.cos()).abs() < 1e-12 * t);
            assert_eq!(b.angle, *a);
        }
    }

    #[test]
    fn mirror_angles_give_equal_times() {
        let grid = DepthGrid::default();
        let speeds: Vec<f64> = grid.depths().map(|z| 1490.0 - 0.03 * z + 2.0 * (z / 40.0).sin()).collect();
        let p = SoundSpeedProfile::new(grid, speeds, ProfileMeta::synthetic()).unwrap();
        let set = travel_times(&p, &flat_bottom(vec![-0.9, -0.3, 0.3, 0.9])).unwrap();
        assert_eq!(set.beams[0].outcome.time(), set.beams[3].outcome.time());
        assert_eq!(set.beams[1].outcome.time(), set.beams[2].outcome.time());
        assert_eq!(set.beams[0].outcome.offset().unwrap(), -set.beams[3].outcome.offset().unwrap());
    }

    #[test]
    fn vertical_beam_is_harmonic_sum() {
        let grid = DepthGrid::default();
        let speeds: Vec<f64> = grid.depths().map(|z| 1480.0 + 0.1 * z).collect();
        let p = SoundSpeedProfile::new(grid, speeds.clone(), ProfileMeta::synthetic()).unwrap();
        let expected: f64 = 2.0 * speeds[..150].iter().map(|c| 2.0 / c).sum::<f64>();
        let set = travel_times(&p, &flat_bottom(vec![0.0, 0.0])).unwrap();
        for t in set.times() {
            assert!((t.unwrap() - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn fractional_layers_at_source_and_bottom() {
        let grid = DepthGrid::new(4, 10.0).unwrap();
        let p = SoundSpeedProfile::new(grid, vec![1500.0, 1510.0, 1520.0, 1530.0], ProfileMeta::synthetic()).unwrap();
        let g = Geometry::new(25.0, 5.0, vec![0.0]).unwrap();
        let t = layered_travel_time(&p, 0.0, &g).unwrap().time().unwrap();
        let expected = 2.0 * (5.0 / 1500.0 + 10.0 / 1510.0 + 5.0 / 1520.0);
        assert!((t - expected).abs() < 1e-15);
    }

    #[test]
    fn turned_rays_are_reported() {
        // 1450 over 1600 m/s: sin(70 deg) * 1600 / 1450 > 1
        let grid = DepthGrid::new(3, 100.0).unwrap();
        let p = SoundSpeedProfile::new(grid, vec![1450.0, 1600.0, 1600.0], ProfileMeta::synthetic()).unwrap();
        let g = Geometry::new(200.0, 0.0, vec![0.0, 70f64.to_radians()]).unwrap();
        let set = travel_times(&p, &g).unwrap();
        assert!(!set.beams[0].outcome.is_turned());
        assert!(set.beams[1].outcome.is_turned());
        assert_eq!(set.turned_count(), 1);
        let mut csv = Vec::new();
        set.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.lines().nth(2).unwrap().ends_with(",,,turned"));
    }

    #[test]
    fn geometry_validation() {
        assert!(Geometry::new(300.0, 300.0, vec![0.0]).is_err());
        assert!(Geometry::new(300.0, -1.0, vec![0.0]).is_err());
        assert!(Geometry::new(300.0, 0.0, vec![FRAC_PI_2]).is_err());
        let p = constant(DepthGrid::default(), 1500.0);
        let deep = Geometry::new(400.0, 0.0, vec![0.0]).unwrap();
        assert!(travel_times(&p, &deep).is_err());
        let g = flat_bottom(vec![0.0]);
        assert!(layered_travel_time(&p, 2.0, &g).is_err());
    }

    #[test]
    fn snell_parameter_is_conserved() {
        let grid = DepthGrid::default();
        let speeds: Vec<f64> = grid.depths().map(|z| 1495.0 - 0.05 * z + 3.0 * (z / 25.0).cos()).collect();
        let p = SoundSpeedProfile::new(grid, speeds, ProfileMeta::synthetic()).unwrap();
        let theta = 55f64.to_radians();
        let segs = trace_segments(&p, theta, &flat_bottom(vec![theta])).unwrap().unwrap();
        let ray_p = theta.sin() / segs[0].speed;
        for s in &segs {
            assert!((s.angle.sin() / s.speed - ray_p).abs() < 1e-12);
        }
        let t: f64 = 2.0 * segs.iter().map(|s| s.thickness / (s.speed * s.angle.cos())).sum::<f64>();
        let direct = layered_travel_time(&p, theta, &flat_bottom(vec![theta])).unwrap().time().unwrap();
        assert!((t - direct).abs() < 1e-12);
    }

    #[test]
    fn time_increases_with_angle_for_constant_profile() {
        let p = constant(DepthGrid::default(), 1490.0);
        let angles: Vec<f64> = (0..80).map(|d| (d as f64).to_radians()).collect();
        let set = travel_times(&p, &flat_bottom(angles)).unwrap();
        let times: Vec<f64> = set.times().map(Option::unwrap).collect();
        assert!(times.windows(2).all(|w| w[1] > w[0]));
    }
}
