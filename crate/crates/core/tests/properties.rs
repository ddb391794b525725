use std::collections::BTreeSet;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sspinv_core::alphasel::{select_alpha, window_input, AlphaNet, SweepFeatures};
use sspinv_core::eof::{build_basis, log_prior, project, Coefficients, EofBasis};
use sspinv_core::forward::{layered_travel_time, trace_segments, travel_times, Geometry};
use sspinv_core::invert::{gauss_newton, InversionConfig, Problem};
use sspinv_core::profiles::{
    filter_profiles, parse_profiles, write_profiles, BoundingBox, Date, DepthGrid, ProfileMeta, ProfileSet,
    SoundSpeedProfile,
};
use sspinv_core::synth::{generate_ocean, make_geometry, simulate_measurements, SynthOceanSpec};

fn speeds(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(1450.0..1550.0f64, n)
}

fn layered(grid: DepthGrid, speeds: Vec<f64>) -> SoundSpeedProfile {
    SoundSpeedProfile::new(grid, speeds, ProfileMeta::synthetic()).unwrap()
}

fn meta_strategy() -> impl Strategy<Value = ProfileMeta> {
    (55.0..65.0f64, 0.0..8.0f64, 1985..2015i32, 1..=12u32, 1..=28u32).prop_map(|(lat, lon, year, month, day)| {
        ProfileMeta { latitude: lat, longitude: lon, date: Date { year, month, day }, synthetic: false }
    })
}

fn profile_set(grid: DepthGrid) -> impl Strategy<Value = ProfileSet> {
    proptest::collection::vec((meta_strategy(), speeds(grid.len())), 1..8).prop_map(move |rows| {
        let profiles = rows
            .into_iter()
            .enumerate()
            .map(|(i, (mut meta, s))| {
                // distinct positions keep records from merging in the file
                meta.latitude += i as f64 * 1e-3;
                SoundSpeedProfile::new(grid, s, meta).unwrap()
            })
            .collect();
        ProfileSet::new(grid, profiles).unwrap()
    })
}

fn ocean(seed: u64, n_eof: usize) -> (ProfileSet, EofBasis) {
    let grid = DepthGrid::with_max_depth(300.0, 2.0).unwrap();
    let spec = SynthOceanSpec { count: 40, ..SynthOceanSpec::default() };
    let set = generate_ocean(&spec, grid, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let basis = build_basis(&set, n_eof).unwrap();
    (set, basis)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn filtering_is_idempotent(set in profile_set(DepthGrid::new(4, 10.0).unwrap()),
                               lat in 55.0..65.0f64, months in proptest::collection::btree_set(1..=12u32, 1..6)) {
        let bbox = BoundingBox::new(lat - 3.0, lat + 3.0, 0.0, 5.0).unwrap();
        let once = filter_profiles(&set, &bbox, &months, 1990..=2005);
        let twice = filter_profiles(&once, &bbox, &months, 1990..=2005);
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn profile_files_round_trip(set in profile_set(DepthGrid::new(5, 7.5).unwrap())) {
        let mut buf = Vec::new();
        write_profiles(&set, &mut buf).unwrap();
        let parsed = parse_profiles(buf.as_slice(), set.grid()).unwrap();
        prop_assert!(parsed.rejected.is_empty());
        prop_assert_eq!(parsed.set, set);
    }

    #[test]
    fn layer_order_does_not_change_times(s in speeds(31), swaps in proptest::collection::vec((1..30usize, 1..30usize), 1..20),
                                         theta in -1.0..1.0f64) {
        // the first layer fixes the ray parameter, so it stays put
        let grid = DepthGrid::new(31, 10.0).unwrap();
        let geometry = Geometry::new(300.0, 0.0, vec![theta]).unwrap();
        let mut permuted = s.clone();
        for (a, b) in swaps {
            permuted.swap(a, b);
        }
        let t0 = layered_travel_time(&layered(grid, s), theta, &geometry).unwrap().time();
        let t1 = layered_travel_time(&layered(grid, permuted), theta, &geometry).unwrap().time();
        match (t0, t1) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12),
            (a, b) => prop_assert_eq!(a.is_some(), b.is_some()),
        }
    }

    #[test]
    fn vertical_beam_is_twice_the_slowness_sum(s in speeds(16)) {
        let grid = DepthGrid::new(16, 20.0).unwrap();
        let geometry = Geometry::new(300.0, 0.0, vec![0.0]).unwrap();
        let t = layered_travel_time(&layered(grid, s.clone()), 0.0, &geometry).unwrap().time().unwrap();
        let expected = 2.0 * s[..15].iter().map(|c| 20.0 / c).sum::<f64>();
        prop_assert!((t - expected).abs() <= 1e-15 * expected.max(1.0) * 16.0);
    }

    #[test]
    fn constant_profile_time_grows_with_angle(c in 1450.0..1550.0f64, a in 0.0..1.2f64, b in 0.0..1.2f64) {
        prop_assume!((a - b).abs() > 1e-9);
        let grid = DepthGrid::new(11, 30.0).unwrap();
        let p = layered(grid, vec![c; 11]);
        let geometry = Geometry::new(300.0, 0.0, vec![a, -b]).unwrap();
        let t = travel_times(&p, &geometry).unwrap();
        let times: Vec<f64> = t.times().map(Option::unwrap).collect();
        prop_assert_eq!(times[0] < times[1], a < b);
    }

    #[test]
    fn snell_parameter_is_shared_by_every_layer(s in speeds(16), theta in -0.9..0.9f64) {
        let grid = DepthGrid::new(16, 20.0).unwrap();
        let geometry = Geometry::new(300.0, 0.0, vec![theta]).unwrap();
        if let Some(segments) = trace_segments(&layered(grid, s.clone()), theta, &geometry).unwrap() {
            let p = theta.sin() / s[0];
            for seg in segments {
                prop_assert!((seg.angle.sin() / seg.speed - p).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn analytic_time_matches_fine_integration(s in speeds(16), theta in -1.1..1.1f64) {
        let grid = DepthGrid::new(16, 20.0).unwrap();
        let geometry = Geometry::new(300.0, 0.0, vec![theta]).unwrap();
        let analytic = layered_travel_time(&layered(grid, s.clone()), theta, &geometry).unwrap().time();
        let p = theta.sin() / s[0];
        let mut fine = Some(0.0);
        for &c in &s[..15] {
            let sin = p * c;
            if sin.abs() >= 1.0 {
                fine = None;
                break;
            }
            let step = 20.0 / 1000.0 / (c * (1.0 - sin * sin).sqrt());
            fine = fine.map(|t| t + (0..1000).map(|_| step).sum::<f64>());
        }
        match (analytic, fine) {
            (Some(a), Some(f)) => prop_assert!(((a - 2.0 * f) / a).abs() <= 1e-9),
            (a, f) => prop_assert_eq!(a.is_some(), f.is_some()),
        }
    }

    #[test]
    fn projection_is_affine(seed in 0..1000u64, w in -1.0..2.0f64, i in 0..40usize, j in 0..40usize) {
        let (set, basis) = ocean(seed % 4, 5);
        let (p, q) = (&set.profiles()[i], &set.profiles()[j]);
        let mix: Vec<f64> = p.speeds().iter().zip(q.speeds()).map(|(a, b)| w * a + (1.0 - w) * b).collect();
        let mixed = SoundSpeedProfile::unchecked(p.grid(), mix, ProfileMeta::synthetic()).unwrap();
        let (xp, xq, xm) = (project(&basis, p).unwrap(), project(&basis, q).unwrap(), project(&basis, &mixed).unwrap());
        for k in 0..5 {
            prop_assert!((xm.0[k] - (w * xp.0[k] + (1.0 - w) * xq.0[k])).abs() <= 1e-8);
        }
    }

    #[test]
    fn log_prior_is_strictly_convex(x in proptest::collection::vec(-50.0..50.0f64, 5),
                                    y in proptest::collection::vec(-50.0..50.0f64, 5)) {
        prop_assume!(x.iter().zip(&y).any(|(a, b)| (a - b).abs() > 1e-3));
        let (_, basis) = ocean(0, 5);
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
        let f = |v: &[f64]| log_prior(&basis, &Coefficients(v.to_vec())).unwrap();
        prop_assert!(f(&mid) < 0.5 * (f(&x) + f(&y)));
    }

    #[test]
    fn window_interior_has_no_duplicates(n in 1..12usize, k in 0..4usize, i in 0..12usize) {
        prop_assume!(i < n && i >= k && i + k < n);
        let rows: Vec<Vec<f64>> = (0..n).map(|r| vec![r as f64]).collect();
        let f = SweepFeatures { rows, borrowed: vec![false; n], n_obs: 100 };
        let w = window_input(&f, i, k).unwrap();
        let blocks: BTreeSet<u64> = w[..w.len() - 1].iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(blocks.len(), 2 * k + 1);
    }

    #[test]
    fn selection_is_scale_invariant(weights in proptest::collection::vec(-1.0..1.0f64, 4),
                                    scale in 0.01..100.0f64, rows in proptest::collection::vec(-2.0..2.0f64, 6)) {
        let mut net = AlphaNet::zeros(&[3, 1], 0).unwrap();
        net.layers[0].weights = weights[..3].to_vec();
        net.layers[0].biases = vec![weights[3].abs() + 10.0];
        let f = SweepFeatures { rows: rows.chunks(2).map(<[f64]>::to_vec).collect(), borrowed: vec![false; 3], n_obs: 100 };
        let grid = [0.1, 1.0, 10.0];
        let before = select_alpha(&net, &f, &grid).unwrap();
        net.output_scale *= scale;
        prop_assert_eq!(select_alpha(&net, &f, &grid).unwrap(), before);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn basis_is_orthonormal_and_ordered(seed in 0..10_000u64) {
        let (_, basis) = ocean(seed, 8);
        let gram = basis.modes().tr_mul(basis.modes());
        prop_assert!((gram - DMatrix::identity(8, 8)).amax() <= 1e-10);
        prop_assert!(basis.sigma().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn cost_is_nonnegative_and_prior_free_at_zero(seed in 0..10_000u64, a1 in 1e-4..1e4f64, a2 in 1e-4..1e4f64) {
        let (set, basis) = ocean(seed % 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = simulate_measurements(&set.profiles()[0], &make_geometry(120.0, 31, 300.0).unwrap(), 1e-5, 1, &mut rng).unwrap();
        let problem = Problem::new(&m, &basis).unwrap();
        let zero = [0.0; 4];
        prop_assert_eq!(problem.cost(&zero, a1).unwrap(), problem.cost(&zero, a2).unwrap());
        let x: Vec<f64> = basis.sigma().iter().map(|s| s * ((seed % 7) as f64 - 3.0) / 3.0).collect();
        prop_assert!(problem.cost(&x, a1).unwrap() >= 0.0);
    }

    #[test]
    fn gauss_newton_never_raises_the_cost(seed in 0..10_000u64, alpha in 1e-3..1e3f64, start in -1.5..1.5f64) {
        let (set, basis) = ocean(seed % 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = simulate_measurements(&set.profiles()[1], &make_geometry(120.0, 31, 300.0).unwrap(), 1e-5, 1, &mut rng).unwrap();
        let x0 = Coefficients(basis.sigma().iter().map(|s| s * start).collect());
        let out = gauss_newton(&x0, &m, &basis, alpha, &InversionConfig::default()).unwrap();
        let before = Problem::new(&m, &basis).unwrap().cost(&x0.0, alpha).unwrap();
        prop_assert!(out.cost <= before);
    }

    #[test]
    fn swapped_layers_share_misfit_but_not_prior(a in -5.0..5.0f64, b in -5.0..5.0f64) {
        prop_assume!((a - b).abs() > 0.1);
        // surface layer fixed, the two layers below it carried one mode each
        let grid = DepthGrid::new(4, 100.0).unwrap();
        let mut modes = DMatrix::zeros(4, 2);
        modes[(1, 0)] = 1.0;
        modes[(2, 1)] = 1.0;
        let basis = EofBasis::from_parts(grid, vec![1490.0, 1500.0, 1500.0, 1500.0], modes, vec![3.0, 1.0], 10).unwrap();
        let truth = sspinv_core::eof::reconstruct(&basis, &Coefficients(vec![a, b])).unwrap();
        let geometry = make_geometry(100.0, 21, 300.0).unwrap();
        let m = simulate_measurements(&truth, &geometry, 0.0, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let problem = Problem::new(&m, &basis).unwrap();
        let (x, twin) = ([a, b], [b, a]);
        prop_assert!(problem.cost(&x, 0.0).unwrap().abs() <= 1e-12);
        prop_assert!(problem.cost(&twin, 0.0).unwrap().abs() <= 1e-12);
        prop_assert!((problem.cost(&x, 1.0).unwrap() - problem.cost(&twin, 1.0).unwrap()).abs() > 1e-6);
    }
}
