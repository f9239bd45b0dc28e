//! Prevalence with Wald intervals and a Pearson chi-square test for one
//! condition across two groups, from counts alone.
//!
//! Usage: `comorbidity_contrast [K1 N1 K2 N2]`

use delirium_risk::stats::{chi2_test_2x2, wald_ci, TwoByTwo};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<u64> = std::env::args().skip(1).map(|s| s.parse()).collect::<Result<_, _>>()?;
    let [k1, n1, k2, n2] = match args.as_slice() {
        [a, b, c, d] => [*a, *b, *c, *d],
        [] => [56, 654, 5116, 44880],
        _ => return Err("expected four counts: K1 N1 K2 N2".into()),
    };
    for (label, k, n) in [("group 1", k1, n1), ("group 2", k2, n2)] {
        let e = wald_ci(k, n, 0.95)?;
        println!("{label}: {k}/{n} = {:.3} (95% CI {:.3}-{:.3})", e.p_hat, e.ci_lo, e.ci_hi);
    }
    let table = TwoByTwo::new(k1, n1 - k1, k2, n2 - k2);
    for yates in [false, true] {
        match chi2_test_2x2(table, yates) {
            Ok(t) => println!(
                "chi-square{}: {:.3} on {} df, p = {:.4}",
                if yates { " (Yates)" } else { "" },
                t.statistic,
                t.df,
                t.p_value
            ),
            Err(e) => println!("chi-square not computed: {e}"),
        }
    }
    Ok(())
}
