use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sspinv_core::eof::{build_basis, Coefficients, EofBasis};
use sspinv_core::forward::{travel_times, Geometry};
use sspinv_core::invert::{gauss_newton, sweep, InversionConfig};
use sspinv_core::profiles::{DepthGrid, ProfileSet};
use sspinv_core::synth::{generate_ocean, make_geometry, simulate_measurements, MeasurementSet, SynthOceanSpec};

struct Fixture {
    ocean: ProfileSet,
    basis: EofBasis,
    geometry: Geometry,
    measurements: MeasurementSet,
}

fn fixture() -> Fixture {
    let grid = DepthGrid::with_max_depth(300.0, 2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ocean = generate_ocean(&SynthOceanSpec::default(), grid, &mut rng).unwrap();
    let basis = build_basis(&ocean, 5).unwrap();
    let geometry = make_geometry(120.0, 500, 300.0).unwrap();
    let measurements =
        simulate_measurements(&ocean.profiles()[0], &geometry, 2.0 * 0.01 / 1500.0, 1, &mut rng).unwrap();
    Fixture { ocean, basis, geometry, measurements }
}

fn kernels(c: &mut Criterion) {
    let f = fixture();
    let config = InversionConfig::default();
    c.bench_function("forward/500 beams", |b| {
        b.iter(|| travel_times(black_box(&f.ocean.profiles()[1]), black_box(&f.geometry)).unwrap())
    });
    c.bench_function("gauss_newton/alpha 1", |b| {
        b.iter(|| gauss_newton(&Coefficients::zeros(5), black_box(&f.measurements), &f.basis, 1.0, &config).unwrap())
    });
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    group.bench_function("15 weights", |b| b.iter(|| sweep(black_box(&f.measurements), &f.basis, &config).unwrap()));
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
