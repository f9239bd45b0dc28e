//! Synthetic cohort → feature sequences → stratified 10-fold LSTM
//! cross-validation.
//!
//! Usage: `cross_validation [N_PATIENTS] [SYNTH_TOML]`

use std::time::Instant;

use delirium_risk::cohort::{build_cohort, CohortCriteria};
use delirium_risk::comorbidity::CharlsonMap;
use delirium_risk::eval::{auroc, kfold_cv, CvConfig};
use delirium_risk::features::{build_sequences, SequenceConfig};
use delirium_risk::syngen::{generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n_patients = std::env::args().nth(1).map_or(Ok(3000), |s| s.parse())?;
    let base: SynthConfig = match std::env::args().nth(2) {
        Some(path) => toml::from_str(&std::fs::read_to_string(path)?)?,
        None => SynthConfig::default(),
    };
    let start = Instant::now();
    let synth = generate(&SynthConfig { n_patients, ..base })?;
    let risk: Vec<f64> = synth.ground_truth.iter().map(|g| g.true_risk).collect();
    let labels: Vec<bool> = synth.ground_truth.iter().map(|g| g.label).collect();
    println!("ground-truth risk AUROC {:.3}", auroc(&risk, &labels)?);

    let cohort = build_cohort(&synth.dataset, &CohortCriteria::default());
    let (sequences, dropped) = build_sequences(
        &synth.dataset,
        &cohort,
        &CharlsonMap::default(),
        SequenceConfig::default(),
    )?;
    let positives = sequences.iter().filter(|s| s.label).count();
    println!(
        "{} sequences ({} with delirium), {} dropped",
        sequences.len(),
        positives,
        dropped.len()
    );

    let outcome = kfold_cv(&sequences, &CvConfig::default(), 0)?;
    let r = &outcome.report;
    println!(
        "AUROC {:.3} ({:.3}-{:.3})  AUPRC {:.3} ({:.3}-{:.3})  Brier {:.3}",
        r.auroc, r.auroc_ci.lo, r.auroc_ci.hi, r.auprc, r.auprc_ci.lo, r.auprc_ci.hi, r.brier
    );
    for f in &r.folds {
        println!(
            "  fold {:>2}: n_train {} n_val {} auroc {:.3} epoch {}",
            f.fold + 1,
            f.n_train,
            f.n_val,
            f.auroc.unwrap_or(f64::NAN),
            f.selected_epoch + 1
        );
    }
    println!("leakage audit passed: {}", r.leakage_audit_passed);
    println!("elapsed {:.1?}", start.elapsed());
    Ok(())
}
