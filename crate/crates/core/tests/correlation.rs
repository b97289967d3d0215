mod common;

use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn lag_scan_ignores_gain_and_offset(
        (series, shift) in smooth_series(),
        a in 0.01f64..100.0, b in -50.0f64..50.0, c in 0.01f64..100.0, d in -50.0f64..50.0,
    ) {
        prop_affine_invariance(series, shift, a, b, c, d)?;
    }

    #[test]
    fn cca_scan_ignores_invertible_mixing(seed in any::<u64>(), shift in 0usize..20) {
        prop_mixing_invariance(seed, shift)?;
    }

    #[test]
    fn swapping_inputs_mirrors_the_scan(
        x in proptest::collection::vec(-10.0f64..10.0, 8..120),
        y in proptest::collection::vec(-10.0f64..10.0, 8..120),
    ) {
        prop_antisymmetry(x, y)?;
    }

    #[test]
    fn fft_scan_matches_direct_sums(
        x in proptest::collection::vec(-10.0f64..10.0, 4..150),
        y in proptest::collection::vec(-10.0f64..10.0, 4..150),
        max_lag in 0usize..200,
    ) {
        prop_brute_force_ncc(x, y, max_lag)?;
    }
}

#[test]
fn delayed_copy_peaks_at_the_delay() {
    let x = gaussian(500, 4);
    for k in [0usize, 1, 17, 90] {
        let y: Vec<f64> = (0..400).map(|i| x[100 + i - k]).collect();
        let scan = dcca::correlation::ncc_all_lags(&x[100..500], &y, 120).unwrap();
        assert_eq!(scan.argmax().0, k as i64);
        assert!(scan.argmax().1 > 0.999);
    }
}
