mod common;

use std::fs;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use delirium_risk::ehr::{load_dataset_dir, write_dataset, ADMISSIONS_FILE, DIAGNOSES_FILE, PATIENTS_FILE};
use delirium_risk::error::Error;

#[test]
fn generated_tables_round_trip() {
    let out = common::synth(200, 1);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&out.dataset, dir.path(), &["fixture".into()]).unwrap();
    let back = load_dataset_dir(dir.path()).unwrap();
    assert_eq!(back.patients, out.dataset.patients);
}

#[test]
fn row_order_does_not_matter() {
    let out = common::synth(150, 2);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&out.dataset, dir.path(), &[]).unwrap();
    let shuffled = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for f in [PATIENTS_FILE, ADMISSIONS_FILE, DIAGNOSES_FILE] {
        let text = fs::read_to_string(dir.path().join(f)).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let header = lines.remove(0);
        lines.shuffle(&mut rng);
        fs::write(shuffled.path().join(f), format!("{header}\n{}\n", lines.join("\n"))).unwrap();
    }
    let a = load_dataset_dir(dir.path()).unwrap();
    let b = load_dataset_dir(shuffled.path()).unwrap();
    assert_eq!(a.patients, b.patients);
}

fn write_tables(dir: &std::path::Path, patients: &str, admissions: &str, diagnoses: &str) {
    fs::write(dir.join(PATIENTS_FILE), patients).unwrap();
    fs::write(dir.join(ADMISSIONS_FILE), admissions).unwrap();
    fs::write(dir.join(DIAGNOSES_FILE), diagnoses).unwrap();
}

const PATIENTS: &str = "subject_id,gender,anchor_age\n1,F,70\n";
const ADMISSIONS: &str = "subject_id,hadm_id,admittime,dischtime\n1,11,2019-01-01 08:00:00,2019-01-04 10:00:00\n";

#[test]
fn malformed_inputs_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        "subject_id,hadm_id,seq_num,icd_code,icd_version\n1,11,1,F05,11\n",
        "subject_id,hadm_id,seq_num,icd_code,icd_version\n1,11,1,F0$5,10\n",
        "subject_id,hadm_id,seq_num,icd_code\n1,11,1,F05\n",
        "subject_id,hadm_id,seq_num,icd_code,icd_version\n1,99,1,F05,10\n",
    ];
    for diagnoses in cases {
        write_tables(dir.path(), PATIENTS, ADMISSIONS, diagnoses);
        let err = load_dataset_dir(dir.path()).expect_err(diagnoses);
        assert!(
            err.is_input_error() || matches!(err, Error::DataInconsistency(_)),
            "{diagnoses}: {err}"
        );
    }
}

#[test]
fn discharge_before_admission_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_tables(
        dir.path(),
        PATIENTS,
        "subject_id,hadm_id,admittime,dischtime\n1,11,2019-01-04 08:00:00,2019-01-01 10:00:00\n",
        "subject_id,hadm_id,seq_num,icd_code,icd_version\n1,11,1,F05,10\n",
    );
    assert!(load_dataset_dir(dir.path()).is_err());
}

#[test]
fn codes_are_normalized_and_deduplicated() {
    let dir = tempfile::tempdir().unwrap();
    write_tables(
        dir.path(),
        PATIENTS,
        ADMISSIONS,
        "subject_id,hadm_id,seq_num,icd_code,icd_version\n1,11,2, f05 ,10\n1,11,1,F05,10\n1,11,3,293.0,9\n",
    );
    let ds = load_dataset_dir(dir.path()).unwrap();
    let dx = &ds.patients[0].admissions[0].diagnoses;
    let codes: Vec<(&str, u32)> = dx.iter().map(|d| (d.code.as_str(), d.seq_num)).collect();
    assert_eq!(codes, [("F05", 1), ("2930", 3)]);
}
