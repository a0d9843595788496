//! IC, Rank IC, z-scores and the IC weight gradient against naive references.

mod common;

use std::sync::Arc;

use alphaforge_core::dsl::parse;
use alphaforge_core::metrics::{ic, ic_weight_gradient, rank_ic, zscore_daily, MetricsError};
use alphaforge_core::pool::{AddOutcome, AlphaPool};
use common::{fd_gradient, matrix_of, ref_ic, target_of};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ic_and_rank_ic_match_reference(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (fs, y) = common::random_ic_instance(&mut rng, 1, 15, 30);
        let f = matrix_of(&fs[0]);
        let t = target_of(&y);
        let want = ref_ic(&fs[0], &y, false).unwrap();
        let got = ic(&f, &t).unwrap();
        prop_assert!((got.ic - want).abs() < 1e-10);
        let want_rank = ref_ic(&fs[0], &y, true).unwrap();
        prop_assert!((rank_ic(&f, &t).unwrap() - want_rank).abs() < 1e-10);
        prop_assert!((got.rank_ic - want_rank).abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>(), k in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (fs, y) = common::random_ic_instance(&mut rng, k, 12, 25);
        let w: Vec<f64> = (0..k).map(|_| common::normal(&mut rng)).collect();
        let mats: Vec<_> = fs.iter().map(matrix_of).collect();
        let refs: Vec<_> = mats.iter().collect();
        let got = ic_weight_gradient(&refs, &w, &target_of(&y)).unwrap();
        let fd = fd_gradient(&fs, &y, &w, 1e-6);
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // the absolute term covers finite-difference rounding noise (~1e-16 / h)
        for (a, b) in got.iter().zip(&fd) {
            prop_assert!((a - b).abs() <= 1e-5 * scale + 1e-9, "{:?} vs {:?}", got, fd);
        }
    }

    #[test]
    fn zscore_matches_reference(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = common::random_grid(&mut rng, 10, 20, 0.1);
        common::compare(&zscore_daily(&matrix_of(&g)), &common::ref_zscore(&g), 1e-12).unwrap();
    }

    #[test]
    fn ic_is_bounded_and_scale_free(seed in any::<u64>(), c in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (fs, y) = common::random_ic_instance(&mut rng, 1, 10, 15);
        let t = target_of(&y);
        let a = ic(&matrix_of(&fs[0]), &t).unwrap().ic;
        let scaled: common::Grid = fs[0].iter().map(|r| r.iter().map(|v| c * v + 3.0).collect()).collect();
        let b = ic(&matrix_of(&scaled), &t).unwrap().ic;
        prop_assert!(a.abs() <= 1.0);
        prop_assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn disjoint_validity_is_no_overlap() {
    let f = matrix_of(&vec![vec![1.0, f64::NAN], vec![2.0, f64::NAN]]);
    let y = target_of(&vec![vec![f64::NAN, 1.0], vec![f64::NAN, 2.0]]);
    assert_eq!(ic(&f, &y).unwrap_err(), MetricsError::NoOverlap);
}

/// k=2 pools reach the best IC found by a dense sweep over weight directions.
#[test]
fn two_factor_optimum_matches_angle_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..3 {
        let (fs, y) = common::random_ic_instance(&mut rng, 2, 20, 40);
        let zs: Vec<common::Grid> = fs.iter().map(common::ref_zscore).collect();
        let target = target_of(&y);
        let mut pool = AlphaPool::new(2).unwrap();
        for (k, z) in zs.iter().enumerate() {
            let name = parse(["close", "open"][k]).unwrap();
            let outcome = pool.add_prepared(name, Arc::new(matrix_of(z)), &target).unwrap();
            assert!(matches!(outcome, AddOutcome::Added { .. }));
        }
        let best = common::angle_sweep(&zs[0], &zs[1], &y, 2000);
        assert!((pool.train_ic() - best).abs() < 1e-3, "{} vs {best}", pool.train_ic());
    }
}
