use proptest::prelude::*;

use delirium_risk::stats::{chi2_sf, chi2_test_2x2, erfc, normal_cdf, percentile, wald_ci, z_quantile, TwoByTwo};

proptest! {
    #[test]
    fn wald_interval_brackets_the_estimate(n in 1u64..5000, frac in 0.0f64..=1.0, level in 0.5f64..0.999) {
        let k = (frac * n as f64).floor() as u64;
        let e = wald_ci(k, n, level).unwrap();
        prop_assert!(0.0 <= e.ci_lo && e.ci_lo <= e.p_hat && e.p_hat <= e.ci_hi && e.ci_hi <= 1.0);
    }

    #[test]
    fn chi_square_is_symmetric_in_rows_and_columns(a in 0u64..200, b in 0u64..200, c in 0u64..200, d in 0u64..200) {
        let t = TwoByTwo::new(a, b, c, d);
        match chi2_test_2x2(t, false) {
            Ok(r) => {
                for other in [t.swap_rows(), t.swap_columns()] {
                    let s = chi2_test_2x2(other, false).unwrap();
                    prop_assert!((s.statistic - r.statistic).abs() <= 1e-9 * r.statistic.max(1.0));
                }
                prop_assert!((0.0..=1.0).contains(&r.p_value));
            }
            Err(_) => prop_assert!(t.is_degenerate()),
        }
    }

    #[test]
    fn erfc_matches_libm(x in -6.0f64..6.0) {
        let want = libm::erfc(x);
        prop_assert!((erfc(x) - want).abs() <= 1e-13 * want.max(1e-300) + 1e-300, "{x}: {} vs {want}", erfc(x));
    }

    #[test]
    fn chi_square_tail_on_one_df_is_erfc(x in 0.0f64..60.0) {
        let want = libm::erfc((x / 2.0).sqrt());
        let got = chi2_sf(x, 1).unwrap();
        prop_assert!((got - want).abs() <= 1e-12 * want.max(1e-300) + 1e-300, "{x}: {got} vs {want}");
    }

    #[test]
    fn z_quantile_inverts_normal_cdf(p in 1e-10f64..(1.0 - 1e-10)) {
        let z = z_quantile(p).unwrap();
        prop_assert!((normal_cdf(z) - p).abs() <= 1e-12 * p.min(1.0 - p).max(1e-15) + 1e-15);
    }

    #[test]
    fn percentile_lies_between_extremes(v in prop::collection::vec(-100.0f64..100.0, 1..40), p in 0.0f64..=1.0) {
        let q = percentile(&v, p).unwrap();
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min <= q && q <= max);
    }
}

#[test]
fn chi_square_tail_on_two_df_is_exponential() {
    for x in [0.1, 1.0, 5.0, 20.0] {
        let got = chi2_sf(x, 2).unwrap();
        assert!((got - (-x / 2.0f64).exp()).abs() < 1e-13, "{x}");
    }
}

#[test]
fn known_z_values() {
    assert!((z_quantile(0.975).unwrap() - 1.959963984540054).abs() < 1e-12);
    assert!((z_quantile(0.5).unwrap()).abs() < 1e-15);
}
