//! Exclusions, MCI and delirium labels, and the selection flow on a
//! generated dataset.
//!
//! Usage: `cohort_selection [N_PATIENTS]`

use delirium_risk::cohort::{build_cohort, cohort_flow, cohort_summary, CohortCriteria};
use delirium_risk::syngen::{generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n_patients = std::env::args().nth(1).map_or(Ok(2000), |s| s.parse())?;
    let dataset = generate(&SynthConfig {
        n_patients,
        ..SynthConfig::default()
    })?
    .dataset;

    let criteria = CohortCriteria::default();
    println!(
        "criteria: {} exclusion, {} MCI, {} delirium entries; minimum age {:?}",
        criteria.exclusion.entries().len(),
        criteria.mci.entries().len(),
        criteria.delirium.entries().len(),
        criteria.min_age
    );
    let assignments = build_cohort(&dataset, &criteria);
    let flow = cohort_flow(&assignments);
    println!("{}", serde_json::to_string_pretty(&flow)?);

    let mut reasons = std::collections::BTreeMap::new();
    for a in assignments.iter().filter(|a| a.excluded) {
        for r in &a.exclusion_reasons {
            *reasons.entry(r.as_str()).or_insert(0) += 1;
        }
    }
    println!("exclusion reasons:");
    for (reason, n) in reasons {
        println!("  {n:>5}  {reason}");
    }

    println!("{:<10} {:>6} {:>8} {:>7} {:>14}", "group", "n", "pct", "female", "age (IQR)");
    for row in cohort_summary(&assignments, &dataset).rows() {
        println!(
            "{:<10} {:>6} {:>7.2}% {:>6.1}% {:>4} ({}-{})",
            row.group,
            row.n,
            row.pct,
            row.female_pct,
            row.median_age.unwrap_or(f64::NAN),
            row.age_q1.unwrap_or(f64::NAN),
            row.age_q3.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
