//! Generate a synthetic EHR extract with planted delirium risk, write it as
//! CSV tables, and compare the realized prevalence with its expectation.
//!
//! Usage: `synthetic_cohort [OUT_DIR] [N_PATIENTS]`

use std::path::PathBuf;

use delirium_risk::ehr::{load_dataset_dir, write_dataset};
use delirium_risk::eval::auroc;
use delirium_risk::syngen::{expected_prevalence, generate, write_ground_truth, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "synthetic".into()));
    let n_patients = std::env::args().nth(2).map_or(Ok(3000), |s| s.parse())?;
    let config = SynthConfig {
        n_patients,
        ..SynthConfig::default()
    };
    let out = generate(&config)?;
    let preamble = vec![format!("synthetic extract, seed {}", config.seed)];
    for path in write_dataset(&out.dataset, &dir, &preamble)? {
        println!("wrote {}", path.display());
    }
    let truth_path = dir.join("ground_truth.csv");
    write_ground_truth(&out.ground_truth, std::fs::File::create(&truth_path)?, &preamble)?;
    println!("wrote {}", truth_path.display());

    let reloaded = load_dataset_dir(&dir)?;
    assert_eq!(reloaded.patients, out.dataset.patients);

    let labels: Vec<bool> = out.ground_truth.iter().map(|g| g.label).collect();
    let risk: Vec<f64> = out.ground_truth.iter().map(|g| g.true_risk).collect();
    let realized = labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64;
    println!(
        "{} patients, {} admissions; delirium prevalence {:.3}, expected {:.3}",
        out.dataset.patients.len(),
        out.dataset.n_admissions(),
        realized,
        expected_prevalence(&config, 20_000)?
    );
    println!("ranking by true risk: AUROC {:.3}", auroc(&risk, &labels)?);
    Ok(())
}
