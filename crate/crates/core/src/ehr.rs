//! Longitudinal EHR data model and the three-table file format.
//!
//! Input is three comma-separated files shaped like the public
//! patients / admissions / diagnoses tables:
//!
//! ```text
//! patients.csv    subject_id,gender,anchor_age
//! admissions.csv  subject_id,hadm_id,admittime,dischtime
//! diagnoses.csv   subject_id,hadm_id,seq_num,icd_code,icd_version
//! ```
//!
//! Timestamps are `YYYY-MM-DD` with an optional ` HH:MM:SS` suffix and are
//! stored at day precision. Lines starting with `#` are ignored.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PATIENTS_FILE: &str = "patients.csv";
pub const ADMISSIONS_FILE: &str = "admissions.csv";
pub const DIAGNOSES_FILE: &str = "diagnoses.csv";

const PATIENTS_HEADER: [&str; 3] = ["subject_id", "gender", "anchor_age"];
const ADMISSIONS_HEADER: [&str; 4] = ["subject_id", "hadm_id", "admittime", "dischtime"];
const DIAGNOSES_HEADER: [&str; 5] = ["subject_id", "hadm_id", "seq_num", "icd_code", "icd_version"];

// ── Domain types ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IcdVersion {
    Icd9,
    Icd10,
}

impl IcdVersion {
    pub fn parse(raw: &str) -> Result<Self> {
        match raw.trim() {
            "9" => Ok(IcdVersion::Icd9),
            "10" => Ok(IcdVersion::Icd10),
            other => Err(Error::UnsupportedIcdVersion(other.to_string())),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            IcdVersion::Icd9 => 9,
            IcdVersion::Icd10 => 10,
        }
    }
}

impl fmt::Display for IcdVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ICD{}", self.number())
    }
}

/// Uppercase, trim and strip dots. `"331.83"` and `"33183"` compare equal
/// after normalization.
pub fn normalize_icd(raw: &str) -> Result<String> {
    let code: String = raw
        .trim()
        .chars()
        .filter(|c| *c != '.')
        .map(|c| c.to_ascii_uppercase())
        .collect();
    if code.is_empty() || !code.chars().all(|c| c.is_ascii_alphanumeric()) {
        return Err(Error::MalformedCode(raw.to_string()));
    }
    Ok(code)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiagnosisCode {
    pub code: String,
    pub version: IcdVersion,
    pub seq_num: u32,
}

impl DiagnosisCode {
    pub fn new(raw: &str, version: IcdVersion, seq_num: u32) -> Result<Self> {
        Ok(Self {
            code: normalize_icd(raw)?,
            version,
            seq_num,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Admission {
    pub hadm_id: String,
    pub admit_time: NaiveDate,
    pub discharge_time: NaiveDate,
    /// Unique by (code, version), ordered by `seq_num`.
    pub diagnoses: Vec<DiagnosisCode>,
}

impl Admission {
    /// Number of distinct ICD-coded diagnoses on this admission.
    pub fn unique_dx_count(&self) -> usize {
        self.diagnoses.len()
    }

    /// Sort by sequence number and drop repeated (code, version) pairs,
    /// keeping the earliest sequence number.
    pub fn dedup_diagnoses(&mut self) {
        self.diagnoses.sort_by(|a, b| {
            (a.seq_num, a.version, &a.code).cmp(&(b.seq_num, b.version, &b.code))
        });
        let mut seen = HashSet::new();
        self.diagnoses
            .retain(|dx| seen.insert((dx.code.clone(), dx.version)));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
}

impl Gender {
    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim() {
            "M" => Some(Gender::M),
            "F" => Some(Gender::F),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::M => "M",
            Gender::F => "F",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patient {
    pub subject_id: String,
    pub gender: Gender,
    pub anchor_age: u32,
    /// Sorted ascending by admit time.
    pub admissions: Vec<Admission>,
}

impl Patient {
    /// Age at `admission_index`: anchor age plus whole years elapsed since the
    /// first admission.
    pub fn age_at(&self, admission_index: usize) -> u32 {
        let Some(first) = self.admissions.first() else {
            return self.anchor_age;
        };
        let days = (self.admissions[admission_index].admit_time - first.admit_time).num_days();
        self.anchor_age + (days as f64 / 365.25).floor().max(0.0) as u32
    }

    pub fn sort_admissions(&mut self) {
        self.admissions.sort_by(|a, b| {
            a.admit_time
                .cmp(&b.admit_time)
                .then_with(|| natural_cmp(&a.hadm_id, &b.hadm_id))
        });
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub patients: Vec<Patient>,
    pub provenance: String,
}

impl Dataset {
    /// Validate invariants and bring the dataset into canonical order:
    /// patients by subject id, admissions by time, diagnoses deduplicated.
    pub fn canonicalize(mut self) -> Result<Self> {
        let mut ids = HashSet::new();
        for p in &mut self.patients {
            if !ids.insert(p.subject_id.clone()) {
                return Err(Error::DataInconsistency(format!(
                    "duplicate subject_id {}",
                    p.subject_id
                )));
            }
            for adm in &mut p.admissions {
                if adm.discharge_time < adm.admit_time {
                    return Err(Error::DataInconsistency(format!(
                        "admission {} discharged before admission",
                        adm.hadm_id
                    )));
                }
                adm.dedup_diagnoses();
            }
            p.sort_admissions();
        }
        self.patients
            .sort_by(|a, b| natural_cmp(&a.subject_id, &b.subject_id));
        Ok(self)
    }

    pub fn n_admissions(&self) -> usize {
        self.patients.iter().map(|p| p.admissions.len()).sum()
    }

    pub fn patient(&self, subject_id: &str) -> Option<&Patient> {
        self.patients.iter().find(|p| p.subject_id == subject_id)
    }
}

/// Purely numeric identifiers first, in numeric order; everything else after
/// them, lexicographically.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

pub fn parse_timestamp(raw: &str) -> Option<NaiveDate> {
    let raw = raw.trim();
    let date = raw.split_whitespace().next()?;
    let parsed = NaiveDate::parse_from_str(date, "%Y-%m-%d").ok()?;
    if let Some(time) = raw.split_whitespace().nth(1) {
        chrono::NaiveTime::parse_from_str(time, "%H:%M:%S").ok()?;
    }
    Some(parsed)
}

// ── Loading ─────────────────────────────────────────────────────────────────

struct Table {
    path: PathBuf,
    columns: HashMap<String, usize>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path, expected: &[&str]) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(file);
        let headers = reader
            .headers()
            .map_err(|e| Error::input(path, e.to_string()))?
            .clone();
        let mut columns = HashMap::new();
        for (i, h) in headers.iter().enumerate() {
            if !expected.contains(&h) {
                return Err(Error::input(path, format!("unknown column {h:?}")));
            }
            columns.insert(h.to_string(), i);
        }
        for col in expected {
            if !columns.contains_key(*col) {
                return Err(Error::input(path, format!("missing column {col:?}")));
            }
        }
        let rows = reader
            .records()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::input(path, e.to_string()))?;
        Ok(Self {
            path: path.to_path_buf(),
            columns,
            rows,
        })
    }

    fn get<'a>(&self, row: &'a csv::StringRecord, col: &str) -> &'a str {
        row.get(self.columns[col]).unwrap_or("")
    }

    fn err(&self, line: usize, message: impl fmt::Display) -> Error {
        // +2: one for the header, one for 1-based numbering
        Error::input(&self.path, format!("row {}: {message}", line + 2))
    }
}

/// Load and validate the three input tables.
pub fn load_dataset(
    patients_path: &Path,
    admissions_path: &Path,
    diagnoses_path: &Path,
) -> Result<Dataset> {
    let patients_tbl = Table::read(patients_path, &PATIENTS_HEADER)?;
    let admissions_tbl = Table::read(admissions_path, &ADMISSIONS_HEADER)?;
    let diagnoses_tbl = Table::read(diagnoses_path, &DIAGNOSES_HEADER)?;

    let mut patients: BTreeMap<String, Patient> = BTreeMap::new();
    for (i, row) in patients_tbl.rows.iter().enumerate() {
        let subject_id = patients_tbl.get(row, "subject_id").to_string();
        let gender_raw = patients_tbl.get(row, "gender");
        let gender = Gender::parse(gender_raw)
            .ok_or_else(|| patients_tbl.err(i, format!("gender must be M or F, got {gender_raw:?}")))?;
        let age_raw = patients_tbl.get(row, "anchor_age");
        let anchor_age = age_raw
            .parse::<u32>()
            .map_err(|_| patients_tbl.err(i, format!("invalid anchor_age {age_raw:?}")))?;
        if subject_id.is_empty() {
            return Err(patients_tbl.err(i, "empty subject_id"));
        }
        let previous = patients.insert(
            subject_id.clone(),
            Patient {
                subject_id: subject_id.clone(),
                gender,
                anchor_age,
                admissions: Vec::new(),
            },
        );
        if previous.is_some() {
            return Err(patients_tbl.err(i, format!("duplicate subject_id {subject_id}")));
        }
    }

    // hadm_id -> (subject_id, admission)
    let mut admissions: BTreeMap<String, (String, Admission)> = BTreeMap::new();
    for (i, row) in admissions_tbl.rows.iter().enumerate() {
        let subject_id = admissions_tbl.get(row, "subject_id");
        if !patients.contains_key(subject_id) {
            return Err(admissions_tbl.err(i, format!("unknown subject_id {subject_id}")));
        }
        let hadm_id = admissions_tbl.get(row, "hadm_id").to_string();
        let ts = |col: &str| {
            let raw = admissions_tbl.get(row, col);
            parse_timestamp(raw)
                .ok_or_else(|| admissions_tbl.err(i, format!("unparseable timestamp {raw:?} in {col}")))
        };
        let admit_time = ts("admittime")?;
        let discharge_time = ts("dischtime")?;
        if discharge_time < admit_time {
            return Err(admissions_tbl.err(i, "dischtime before admittime"));
        }
        let adm = Admission {
            hadm_id: hadm_id.clone(),
            admit_time,
            discharge_time,
            diagnoses: Vec::new(),
        };
        if admissions
            .insert(hadm_id.clone(), (subject_id.to_string(), adm))
            .is_some()
        {
            return Err(admissions_tbl.err(i, format!("duplicate hadm_id {hadm_id}")));
        }
    }

    for (i, row) in diagnoses_tbl.rows.iter().enumerate() {
        let subject_id = diagnoses_tbl.get(row, "subject_id");
        let hadm_id = diagnoses_tbl.get(row, "hadm_id");
        let Some((owner, adm)) = admissions.get_mut(hadm_id) else {
            return Err(diagnoses_tbl.err(i, format!("unknown hadm_id {hadm_id}")));
        };
        if owner != subject_id {
            return Err(diagnoses_tbl.err(
                i,
                format!("hadm_id {hadm_id} belongs to subject {owner}, not {subject_id}"),
            ));
        }
        let seq_raw = diagnoses_tbl.get(row, "seq_num");
        let seq_num = seq_raw
            .parse::<u32>()
            .ok()
            .filter(|s| *s >= 1)
            .ok_or_else(|| diagnoses_tbl.err(i, format!("invalid seq_num {seq_raw:?}")))?;
        let version = IcdVersion::parse(diagnoses_tbl.get(row, "icd_version"))
            .map_err(|e| diagnoses_tbl.err(i, e))?;
        let dx = DiagnosisCode::new(diagnoses_tbl.get(row, "icd_code"), version, seq_num)
            .map_err(|e| diagnoses_tbl.err(i, e))?;
        adm.diagnoses.push(dx);
    }

    for (_, (subject_id, adm)) in admissions {
        patients
            .get_mut(&subject_id)
            .expect("admission subjects checked above")
            .admissions
            .push(adm);
    }

    Dataset {
        patients: patients.into_values().collect(),
        provenance: format!(
            "files: {}, {}, {}",
            patients_path.display(),
            admissions_path.display(),
            diagnoses_path.display()
        ),
    }
    .canonicalize()
}

/// Load `patients.csv`, `admissions.csv` and `diagnoses.csv` from `dir`.
pub fn load_dataset_dir(dir: &Path) -> Result<Dataset> {
    load_dataset(
        &dir.join(PATIENTS_FILE),
        &dir.join(ADMISSIONS_FILE),
        &dir.join(DIAGNOSES_FILE),
    )
}

// ── Writing ─────────────────────────────────────────────────────────────────

/// Write the dataset as the three input tables into `dir`. `preamble` lines
/// are emitted as `#` comments ahead of each header.
pub fn write_dataset(dataset: &Dataset, dir: &Path, preamble: &[String]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let open = |name: &str, header: &[&str]| -> Result<(PathBuf, BufWriter<File>)> {
        let path = dir.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for line in preamble {
            writeln!(w, "# {line}").map_err(|e| Error::io(&path, e))?;
        }
        writeln!(w, "{}", header.join(",")).map_err(|e| Error::io(&path, e))?;
        Ok((path, w))
    };
    let (p_path, mut pw) = open(PATIENTS_FILE, &PATIENTS_HEADER)?;
    let (a_path, mut aw) = open(ADMISSIONS_FILE, &ADMISSIONS_HEADER)?;
    let (d_path, mut dw) = open(DIAGNOSES_FILE, &DIAGNOSES_HEADER)?;

    for p in &dataset.patients {
        writeln!(pw, "{},{},{}", p.subject_id, p.gender.as_str(), p.anchor_age)
            .map_err(|e| Error::io(&p_path, e))?;
        for adm in &p.admissions {
            writeln!(
                aw,
                "{},{},{} 00:00:00,{} 00:00:00",
                p.subject_id, adm.hadm_id, adm.admit_time, adm.discharge_time
            )
            .map_err(|e| Error::io(&a_path, e))?;
            for dx in &adm.diagnoses {
                writeln!(
                    dw,
                    "{},{},{},{},{}",
                    p.subject_id,
                    adm.hadm_id,
                    dx.seq_num,
                    dx.code,
                    dx.version.number()
                )
                .map_err(|e| Error::io(&d_path, e))?;
            }
        }
    }
    for (path, w) in [(&p_path, &mut pw), (&a_path, &mut aw), (&d_path, &mut dw)] {
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    Ok(vec![p_path, a_path, d_path])
}
