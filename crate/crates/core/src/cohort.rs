//! ICD-driven cohort selection: cognitive-impairment exclusions, MCI and
//! delirium labeling, and the demographic summary of the resulting groups.
//!
//! Code sets are prefix families over normalized codes, with optional exact
//! carve-outs. They are read from a plain-text rules file:
//!
//! ```text
//! # SETNAME,VERSION,PREFIX[,carveout]
//! exclusion,10,G31
//! exclusion,10,G3184,carveout
//! mci,10,G3184
//! ```

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use chrono::NaiveDate;
use serde::Serialize;

use crate::ehr::{normalize_icd, Dataset, DiagnosisCode, Gender, IcdVersion, Patient};
use crate::error::{Error, Result};
use crate::stats::percentile;

pub const DEFAULT_CRITERIA: &str = include_str!("../data/cohort_criteria.txt");
pub const DEFAULT_MIN_AGE: u32 = 65;

pub const REASON_AGE: &str = "age";
pub const REASON_NO_ADMISSIONS: &str = "no-admissions";

// ── Code sets ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CodeEntry {
    pub version: IcdVersion,
    pub prefix: String,
}

impl fmt::Display for CodeEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.version, self.prefix)
    }
}

#[derive(Debug, Clone, Default)]
pub struct CodeSet {
    pub name: String,
    entries: Vec<CodeEntry>,
    carve_outs: Vec<CodeEntry>,
    prefix_index: HashSet<(IcdVersion, String)>,
    carve_index: HashSet<(IcdVersion, String)>,
}

impl CodeSet {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn add_prefix(&mut self, version: IcdVersion, raw: &str) -> Result<()> {
        let prefix = normalize_icd(raw)?;
        if self.prefix_index.insert((version, prefix.clone())) {
            self.entries.push(CodeEntry { version, prefix });
        }
        Ok(())
    }

    pub fn add_carve_out(&mut self, version: IcdVersion, raw: &str) -> Result<()> {
        let code = normalize_icd(raw)?;
        if self.carve_index.insert((version, code.clone())) {
            self.carve_outs.push(CodeEntry {
                version,
                prefix: code,
            });
        }
        Ok(())
    }

    pub fn with_prefixes(mut self, version: IcdVersion, prefixes: &[&str]) -> Result<Self> {
        for p in prefixes {
            self.add_prefix(version, p)?;
        }
        Ok(self)
    }

    pub fn entries(&self) -> &[CodeEntry] {
        &self.entries
    }

    pub fn carve_outs(&self) -> &[CodeEntry] {
        &self.carve_outs
    }

    /// The shortest entry prefix matching `dx`, unless `dx` is carved out.
    pub fn matching_entry(&self, dx: &DiagnosisCode) -> Option<CodeEntry> {
        if self.carve_index.contains(&(dx.version, dx.code.clone())) {
            return None;
        }
        (1..=dx.code.len()).find_map(|len| {
            let prefix = &dx.code[..len];
            self.prefix_index
                .contains(&(dx.version, prefix.to_string()))
                .then(|| CodeEntry {
                    version: dx.version,
                    prefix: prefix.to_string(),
                })
        })
    }

    pub fn matches(&self, dx: &DiagnosisCode) -> bool {
        self.matching_entry(dx).is_some()
    }
}

/// Version matches, some entry prefixes the code, and the code is not an
/// exact carve-out.
pub fn code_matches(set: &CodeSet, dx: &DiagnosisCode) -> bool {
    set.matches(dx)
}

/// One parsed line of a rules file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuleLine {
    Prefix {
        set: String,
        version: IcdVersion,
        code: String,
    },
    CarveOut {
        set: String,
        version: IcdVersion,
        code: String,
    },
    /// `SETNAME,weight,W` header used by the Charlson map.
    Weight { set: String, weight: u32 },
}

pub fn parse_rules(text: &str, source: &Path) -> Result<Vec<RuleLine>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |msg: String| Error::input(source, format!("line {}: {msg}", i + 1));
        if fields.len() < 3 || fields.len() > 4 || fields[0].is_empty() {
            return Err(bad(format!("expected SETNAME,VERSION,PREFIX[,carveout], got {line:?}")));
        }
        let set = fields[0].to_string();
        if fields[1] == "weight" {
            let weight = fields[2]
                .parse()
                .map_err(|_| bad(format!("invalid weight {:?}", fields[2])))?;
            out.push(RuleLine::Weight { set, weight });
            continue;
        }
        let version = IcdVersion::parse(fields[1]).map_err(|e| bad(e.to_string()))?;
        let code = normalize_icd(fields[2]).map_err(|e| bad(e.to_string()))?;
        match fields.get(3) {
            None => out.push(RuleLine::Prefix { set, version, code }),
            Some(&"carveout") => out.push(RuleLine::CarveOut { set, version, code }),
            Some(other) => return Err(bad(format!("unknown flag {other:?}"))),
        }
    }
    Ok(out)
}

// ── Criteria ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct CohortCriteria {
    pub exclusion: CodeSet,
    pub mci: CodeSet,
    pub delirium: CodeSet,
    pub min_age: Option<u32>,
}

impl CohortCriteria {
    pub fn from_rules(text: &str, source: &Path, min_age: Option<u32>) -> Result<Self> {
        let mut exclusion = CodeSet::new("exclusion");
        let mut mci = CodeSet::new("mci");
        let mut delirium = CodeSet::new("delirium");
        for rule in parse_rules(text, source)? {
            let (set_name, version, code, carve) = match &rule {
                RuleLine::Prefix { set, version, code } => (set, *version, code, false),
                RuleLine::CarveOut { set, version, code } => (set, *version, code, true),
                RuleLine::Weight { set, .. } => {
                    return Err(Error::input(source, format!("weight line for {set} in cohort rules")))
                }
            };
            let target = match set_name.as_str() {
                "exclusion" => &mut exclusion,
                "mci" => &mut mci,
                "delirium" => &mut delirium,
                other => return Err(Error::input(source, format!("unknown code set {other:?}"))),
            };
            if carve {
                target.add_carve_out(version, code)?;
            } else {
                target.add_prefix(version, code)?;
            }
        }
        Ok(Self {
            exclusion,
            mci,
            delirium,
            min_age,
        })
    }

    pub fn from_file(path: &Path, min_age: Option<u32>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_rules(&text, path, min_age)
    }
}

impl Default for CohortCriteria {
    fn default() -> Self {
        Self::from_rules(
            DEFAULT_CRITERIA,
            Path::new("<built-in cohort criteria>"),
            Some(DEFAULT_MIN_AGE),
        )
        .expect("built-in cohort criteria parse")
    }
}

// ── Assignment ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CohortAssignment {
    pub subject_id: String,
    pub excluded: bool,
    pub exclusion_reasons: Vec<String>,
    pub is_mci: bool,
    pub has_delirium: bool,
    pub first_delirium_time: Option<NaiveDate>,
    pub index_admission_time: Option<NaiveDate>,
    pub last_discharge_time: Option<NaiveDate>,
}

pub fn assign_patient(patient: &Patient, criteria: &CohortCriteria) -> CohortAssignment {
    let mut reasons = BTreeSet::new();
    let mut is_mci = false;
    let mut first_delirium_time = None;
    for adm in &patient.admissions {
        for dx in &adm.diagnoses {
            if let Some(entry) = criteria.exclusion.matching_entry(dx) {
                reasons.insert(entry.to_string());
            }
            is_mci |= criteria.mci.matches(dx);
            if first_delirium_time.is_none() && criteria.delirium.matches(dx) {
                first_delirium_time = Some(adm.admit_time);
            }
        }
    }
    let index_admission_time = patient.admissions.first().map(|a| a.admit_time);
    let last_discharge_time = patient.admissions.iter().map(|a| a.discharge_time).max();
    if patient.admissions.is_empty() {
        reasons.insert(REASON_NO_ADMISSIONS.to_string());
    }
    if let Some(min_age) = criteria.min_age {
        if !patient.admissions.is_empty() && patient.age_at(0) < min_age {
            reasons.insert(REASON_AGE.to_string());
        }
    }
    CohortAssignment {
        subject_id: patient.subject_id.clone(),
        excluded: !reasons.is_empty(),
        exclusion_reasons: reasons.into_iter().collect(),
        is_mci,
        has_delirium: first_delirium_time.is_some(),
        first_delirium_time,
        index_admission_time,
        last_discharge_time,
    }
}

/// One assignment per patient, in dataset order.
pub fn build_cohort(dataset: &Dataset, criteria: &CohortCriteria) -> Vec<CohortAssignment> {
    dataset
        .patients
        .iter()
        .map(|p| assign_patient(p, criteria))
        .collect()
}

// ── Flow and demographics ───────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GroupFlow {
    pub n: usize,
    pub delirium: usize,
}

/// Selection flow: total → excluded → MCI / non-MCI, each split by delirium.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CohortFlow {
    pub total: usize,
    pub excluded: usize,
    pub non_mci: GroupFlow,
    pub mci: GroupFlow,
}

pub fn cohort_flow(assignments: &[CohortAssignment]) -> CohortFlow {
    let mut flow = CohortFlow {
        total: assignments.len(),
        excluded: 0,
        non_mci: GroupFlow { n: 0, delirium: 0 },
        mci: GroupFlow { n: 0, delirium: 0 },
    };
    for a in assignments {
        if a.excluded {
            flow.excluded += 1;
            continue;
        }
        let group = if a.is_mci {
            &mut flow.mci
        } else {
            &mut flow.non_mci
        };
        group.n += 1;
        group.delirium += usize::from(a.has_delirium);
    }
    flow
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemographicRow {
    pub group: String,
    pub n: usize,
    /// Percentage of the included population.
    pub pct: f64,
    pub median_age: Option<f64>,
    pub age_q1: Option<f64>,
    pub age_q3: Option<f64>,
    pub male: usize,
    pub male_pct: f64,
    pub female: usize,
    pub female_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CohortSummary {
    EmptyCohort,
    Table { rows: Vec<DemographicRow> },
}

impl CohortSummary {
    pub fn rows(&self) -> &[DemographicRow] {
        match self {
            CohortSummary::EmptyCohort => &[],
            CohortSummary::Table { rows } => rows,
        }
    }
}

fn demographic_row(group: &str, members: &[&Patient], included: usize) -> DemographicRow {
    let ages: Vec<f64> = members.iter().map(|p| f64::from(p.anchor_age)).collect();
    let male = members.iter().filter(|p| p.gender == Gender::M).count();
    let female = members.len() - male;
    let pct_of = |k: usize, n: usize| if n == 0 { 0.0 } else { 100.0 * k as f64 / n as f64 };
    DemographicRow {
        group: group.to_string(),
        n: members.len(),
        pct: pct_of(members.len(), included),
        median_age: percentile(&ages, 0.5),
        age_q1: percentile(&ages, 0.25),
        age_q3: percentile(&ages, 0.75),
        male,
        male_pct: pct_of(male, members.len()),
        female,
        female_pct: pct_of(female, members.len()),
    }
}

/// Total / No MCI / MCI rows over the included population. Age is the
/// patient's anchor age; quartiles use [`percentile`].
pub fn cohort_summary(assignments: &[CohortAssignment], dataset: &Dataset) -> CohortSummary {
    let mut total = Vec::new();
    let mut no_mci = Vec::new();
    let mut mci = Vec::new();
    for (a, p) in assignments.iter().zip(&dataset.patients) {
        debug_assert_eq!(a.subject_id, p.subject_id);
        if a.excluded {
            continue;
        }
        total.push(p);
        if a.is_mci {
            mci.push(p);
        } else {
            no_mci.push(p);
        }
    }
    if total.is_empty() {
        return CohortSummary::EmptyCohort;
    }
    let n = total.len();
    CohortSummary::Table {
        rows: vec![
            demographic_row("Total", &total, n),
            demographic_row("No MCI", &no_mci, n),
            demographic_row("MCI", &mci, n),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::Admission;

    fn dx(code: &str, version: IcdVersion) -> DiagnosisCode {
        DiagnosisCode::new(code, version, 1).unwrap()
    }

    fn patient(id: &str, age: u32, gender: Gender, admissions: Vec<Vec<&str>>) -> Patient {
        let start = NaiveDate::from_ymd_opt(2012, 1, 1).unwrap();
        Patient {
            subject_id: id.into(),
            gender,
            anchor_age: age,
            admissions: admissions
                .into_iter()
                .enumerate()
                .map(|(i, codes)| Admission {
                    hadm_id: format!("{id}-{i}"),
                    admit_time: start + chrono::Duration::days(100 * i as i64),
                    discharge_time: start + chrono::Duration::days(100 * i as i64 + 5),
                    diagnoses: codes
                        .into_iter()
                        .enumerate()
                        .map(|(j, c)| {
                            let v = if c.chars().next().unwrap().is_ascii_digit() {
                                IcdVersion::Icd9
                            } else {
                                IcdVersion::Icd10
                            };
                            DiagnosisCode::new(c, v, j as u32 + 1).unwrap()
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn default_criteria_sets() {
        let c = CohortCriteria::default();
        let mci: BTreeSet<_> = c.mci.entries().iter().map(|e| e.to_string()).collect();
        assert_eq!(mci, BTreeSet::from(["ICD10:G3184".into(), "ICD9:33183".into()]));
        let del: BTreeSet<_> = c.delirium.entries().iter().map(|e| e.to_string()).collect();
        assert_eq!(
            del,
            BTreeSet::from(["ICD10:F05".into(), "ICD9:2930".into(), "ICD9:29281".into()])
        );
        assert_eq!(c.min_age, Some(65));
    }

    #[test]
    fn prefix_family_matches() {
        let c = CohortCriteria::default();
        assert!(code_matches(&c.exclusion, &dx("2903", IcdVersion::Icd9)));
        assert!(code_matches(&c.exclusion, &dx("F01.50", IcdVersion::Icd10)));
        // version must agree
        assert!(!code_matches(&c.exclusion, &dx("2903", IcdVersion::Icd10)));
    }

    #[test]
    fn carve_out_beats_family() {
        let c = CohortCriteria::default();
        assert!(!code_matches(&c.exclusion, &dx("G3184", IcdVersion::Icd10)));
        assert!(code_matches(&c.exclusion, &dx("G3183", IcdVersion::Icd10)));
        assert!(code_matches(&c.exclusion, &dx("G31841", IcdVersion::Icd10)));
    }

    #[test]
    fn delirium_codes_not_excluded() {
        let c = CohortCriteria::default();
        assert!(!code_matches(&c.exclusion, &dx("29281", IcdVersion::Icd9)));
        assert!(code_matches(&c.exclusion, &dx("29282", IcdVersion::Icd9)));
        assert!(code_matches(&c.delirium, &dx("29281", IcdVersion::Icd9)));
        assert!(!code_matches(&c.delirium, &dx("29282", IcdVersion::Icd9)));
        assert!(!code_matches(&c.exclusion, &dx("F05", IcdVersion::Icd10)));
        assert!(!code_matches(&c.exclusion, &dx("2930", IcdVersion::Icd9)));
    }

    #[test]
    fn rules_parse_errors() {
        let src = Path::new("rules.txt");
        assert!(parse_rules("exclusion,11,F01", src).is_err());
        assert!(parse_rules("exclusion,10", src).is_err());
        assert!(parse_rules("exclusion,10,F01,maybe", src).is_err());
        assert!(CohortCriteria::from_rules("other,10,F01", src, None).is_err());
        let ok = parse_rules("# c\n\nmci,10,g31.84\n", src).unwrap();
        assert_eq!(
            ok,
            vec![RuleLine::Prefix {
                set: "mci".into(),
                version: IcdVersion::Icd10,
                code: "G3184".into()
            }]
        );
    }

    #[test]
    fn mci_with_delirium() {
        let c = CohortCriteria::default();
        let p = patient("1", 80, Gender::F, vec![vec!["G3184"], vec!["F05"]]);
        let a = assign_patient(&p, &c);
        assert!(!a.excluded);
        assert!(a.is_mci && a.has_delirium);
        assert_eq!(a.first_delirium_time, Some(p.admissions[1].admit_time));
        assert_eq!(a.index_admission_time, Some(p.admissions[0].admit_time));
    }

    #[test]
    fn alzheimer_excluded() {
        let c = CohortCriteria::default();
        let a = assign_patient(&patient("1", 80, Gender::M, vec![vec!["G30"]]), &c);
        assert!(a.excluded);
        assert_eq!(a.exclusion_reasons, vec!["ICD10:G30".to_string()]);
    }

    #[test]
    fn no_cognitive_codes() {
        let c = CohortCriteria::default();
        let a = assign_patient(&patient("1", 80, Gender::M, vec![vec!["I10"]]), &c);
        assert!(!a.excluded && !a.is_mci && !a.has_delirium);
        assert_eq!(a.first_delirium_time, None);
    }

    #[test]
    fn age_and_empty_history_exclusions() {
        let c = CohortCriteria::default();
        let young = assign_patient(&patient("1", 50, Gender::M, vec![vec!["I10"]]), &c);
        assert_eq!(young.exclusion_reasons, vec![REASON_AGE.to_string()]);
        let empty = assign_patient(&patient("2", 80, Gender::M, vec![]), &c);
        assert!(empty.excluded);
        assert_eq!(empty.exclusion_reasons, vec![REASON_NO_ADMISSIONS.to_string()]);
        let no_filter = CohortCriteria {
            min_age: None,
            ..CohortCriteria::default()
        };
        assert!(!assign_patient(&patient("1", 50, Gender::M, vec![vec!["I10"]]), &no_filter).excluded);
    }

    #[test]
    fn summary_counts_and_quartiles() {
        let c = CohortCriteria::default();
        let mut patients = Vec::new();
        for i in 0..10 {
            let codes = if i < 4 { vec!["G3184"] } else { vec!["I10"] };
            patients.push(patient(&i.to_string(), 70 + i, Gender::F, vec![codes]));
        }
        let ds = Dataset {
            patients,
            provenance: "test".into(),
        };
        let a = build_cohort(&ds, &c);
        let summary = cohort_summary(&a, &ds);
        let rows = summary.rows();
        assert_eq!(rows[2].group, "MCI");
        assert_eq!(rows[2].n, 4);
        assert!((rows[2].pct - 40.0).abs() < 1e-12);
        // MCI ages are 70, 71, 72, 73
        assert_eq!(rows[2].median_age, Some(71.5));
        assert_eq!(rows[0].male, 0);
        assert_eq!(rows[0].male_pct, 0.0);
        assert_eq!(rows[0].female_pct, 100.0);

        let flow = cohort_flow(&a);
        assert_eq!(flow.total, 10);
        assert_eq!(flow.mci.n + flow.non_mci.n + flow.excluded, flow.total);
    }

    #[test]
    fn summary_ages_hand_quartiles() {
        let c = CohortCriteria::default();
        let ds = Dataset {
            patients: [70, 72, 74, 76]
                .iter()
                .enumerate()
                .map(|(i, age)| patient(&i.to_string(), *age, Gender::M, vec![vec!["I10"]]))
                .collect(),
            provenance: "test".into(),
        };
        let summary = cohort_summary(&build_cohort(&ds, &c), &ds);
        let total = &summary.rows()[0];
        assert_eq!(total.median_age, Some(73.0));
        assert_eq!(total.age_q1, Some(71.0));
        assert_eq!(total.age_q3, Some(75.0));
    }

    #[test]
    fn empty_cohort_report() {
        let c = CohortCriteria::default();
        let ds = Dataset {
            patients: vec![patient("1", 80, Gender::M, vec![vec!["G30"]])],
            provenance: "test".into(),
        };
        assert_eq!(cohort_summary(&build_cohort(&ds, &c), &ds), CohortSummary::EmptyCohort);
    }
}
