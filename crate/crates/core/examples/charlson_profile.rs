//! Charlson flags and index for one hand-built patient. Flags record every
//! condition present; the index counts only the more severe member of each
//! hierarchy pair (diabetes, liver disease, cancer).

use chrono::NaiveDate;
use delirium_risk::comorbidity::{patient_profile, CharlsonMap, Condition};
use delirium_risk::ehr::{Admission, DiagnosisCode, Gender, IcdVersion, Patient};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let map = CharlsonMap::default();
    let codes = [
        ("I21.4", IcdVersion::Icd10),  // myocardial infarction
        ("E11.9", IcdVersion::Icd10),  // diabetes, uncomplicated
        ("E11.22", IcdVersion::Icd10), // diabetes with kidney complication
        ("N18.4", IcdVersion::Icd10),  // chronic kidney disease
        ("153.0", IcdVersion::Icd9),   // colon cancer
        ("197.7", IcdVersion::Icd9),   // liver metastasis
        ("I10", IcdVersion::Icd10),    // hypertension, not a Charlson condition
    ];
    for (raw, version) in codes {
        let dx = DiagnosisCode::new(raw, version, 1)?;
        let hits: Vec<&str> = Condition::ALL
            .iter()
            .filter(|c| map.conditions_for(&dx).get(**c))
            .map(|c| c.key())
            .collect();
        println!("{raw:>7} (ICD-{}) -> {}", version.number(), if hits.is_empty() { "-".into() } else { hits.join(", ") });
    }

    let date = |s: &str| s.parse::<NaiveDate>();
    let diagnoses = codes
        .iter()
        .enumerate()
        .map(|(i, (raw, v))| DiagnosisCode::new(raw, *v, i as u32 + 1))
        .collect::<Result<Vec<_>, _>>()?;
    let patient = Patient {
        subject_id: "1".into(),
        gender: Gender::M,
        anchor_age: 81,
        admissions: vec![Admission {
            hadm_id: "100".into(),
            admit_time: date("2020-01-10")?,
            discharge_time: date("2020-01-18")?,
            diagnoses,
        }],
    };
    let profile = patient_profile(&patient, &map);
    println!("\nflags ({} conditions):", profile.flags.count());
    for c in Condition::ALL.iter().filter(|c| profile.flags.get(**c)) {
        println!("  {}", c.key());
    }
    let without_hierarchy: u32 = Condition::ALL
        .iter()
        .filter(|c| profile.flags.get(**c))
        .map(|c| c.weight())
        .sum();
    println!("Charlson index {} ({without_hierarchy} if milder duplicates were also counted)", profile.cci);
    Ok(())
}
