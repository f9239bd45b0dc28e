//! Charlson comorbidity flags and index.
//!
//! The ICD-to-condition map is data, shipped as `data/charlson_map.txt`
//! (Quan ICD-9-CM / ICD-10 coding algorithms). Fifteen conditions are
//! tracked; dementia and AIDS/HIV are not.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::{parse_rules, CodeSet, RuleLine};
use crate::ehr::DiagnosisCode;
use crate::error::{Error, Result};

pub const DEFAULT_CHARLSON_MAP: &str = include_str!("../data/charlson_map.txt");

pub const N_CONDITIONS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    MyocardialInfarction,
    CongestiveHeartFailure,
    PeripheralVascularDisease,
    CerebrovascularDisease,
    ChronicPulmonaryDisease,
    RheumaticDisease,
    PepticUlcerDisease,
    MildLiverDisease,
    DiabetesWithoutCc,
    DiabetesWithCc,
    Paraplegia,
    RenalDisease,
    MalignantCancer,
    SevereLiverDisease,
    MetastaticSolidTumor,
}

impl Condition {
    pub const ALL: [Condition; N_CONDITIONS] = [
        Condition::MyocardialInfarction,
        Condition::CongestiveHeartFailure,
        Condition::PeripheralVascularDisease,
        Condition::CerebrovascularDisease,
        Condition::ChronicPulmonaryDisease,
        Condition::RheumaticDisease,
        Condition::PepticUlcerDisease,
        Condition::MildLiverDisease,
        Condition::DiabetesWithoutCc,
        Condition::DiabetesWithCc,
        Condition::Paraplegia,
        Condition::RenalDisease,
        Condition::MalignantCancer,
        Condition::SevereLiverDisease,
        Condition::MetastaticSolidTumor,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn key(self) -> &'static str {
        match self {
            Condition::MyocardialInfarction => "myocardial_infarction",
            Condition::CongestiveHeartFailure => "congestive_heart_failure",
            Condition::PeripheralVascularDisease => "peripheral_vascular_disease",
            Condition::CerebrovascularDisease => "cerebrovascular_disease",
            Condition::ChronicPulmonaryDisease => "chronic_pulmonary_disease",
            Condition::RheumaticDisease => "rheumatic_disease",
            Condition::PepticUlcerDisease => "peptic_ulcer_disease",
            Condition::MildLiverDisease => "mild_liver_disease",
            Condition::DiabetesWithoutCc => "diabetes_without_cc",
            Condition::DiabetesWithCc => "diabetes_with_cc",
            Condition::Paraplegia => "paraplegia",
            Condition::RenalDisease => "renal_disease",
            Condition::MalignantCancer => "malignant_cancer",
            Condition::SevereLiverDisease => "severe_liver_disease",
            Condition::MetastaticSolidTumor => "metastatic_solid_tumor",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.key() == key)
    }

    pub fn label(self) -> &'static str {
        match self {
            Condition::MyocardialInfarction => "Myocardial Infarction",
            Condition::CongestiveHeartFailure => "Congestive Heart Failure",
            Condition::PeripheralVascularDisease => "Peripheral Vascular Disease",
            Condition::CerebrovascularDisease => "Cerebrovascular Disease",
            Condition::ChronicPulmonaryDisease => "Chronic Pulmonary Disease",
            Condition::RheumaticDisease => "Rheumatic Disease",
            Condition::PepticUlcerDisease => "Peptic Ulcer Disease",
            Condition::MildLiverDisease => "Mild Liver Disease",
            Condition::DiabetesWithoutCc => "Diabetes Without Comorbidities",
            Condition::DiabetesWithCc => "Diabetes With Comorbidities",
            Condition::Paraplegia => "Paraplegia",
            Condition::RenalDisease => "Renal Disease",
            Condition::MalignantCancer => "Malignant Cancer",
            Condition::SevereLiverDisease => "Severe Liver Disease",
            Condition::MetastaticSolidTumor => "Metastatic Solid Tumor",
        }
    }

    /// Original Charlson weight.
    pub fn weight(self) -> u32 {
        match self {
            Condition::DiabetesWithCc
            | Condition::Paraplegia
            | Condition::RenalDisease
            | Condition::MalignantCancer => 2,
            Condition::SevereLiverDisease => 3,
            Condition::MetastaticSolidTumor => 6,
            _ => 1,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// (milder, more severe): when both are flagged only the severe weight counts.
pub const HIERARCHY: [(Condition, Condition); 3] = [
    (Condition::MildLiverDisease, Condition::SevereLiverDisease),
    (Condition::DiabetesWithoutCc, Condition::DiabetesWithCc),
    (Condition::MalignantCancer, Condition::MetastaticSolidTumor),
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ComorbidityFlags(pub [bool; N_CONDITIONS]);

impl ComorbidityFlags {
    pub fn get(&self, c: Condition) -> bool {
        self.0[c.index()]
    }

    pub fn set(&mut self, c: Condition, value: bool) {
        self.0[c.index()] = value;
    }

    pub fn union(&self, other: &Self) -> Self {
        let mut out = *self;
        for (o, x) in out.0.iter_mut().zip(other.0) {
            *o |= x;
        }
        out
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|f| **f).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComorbidityProfile {
    pub flags: ComorbidityFlags,
    pub cci: u32,
}

impl ComorbidityProfile {
    pub fn from_flags(flags: ComorbidityFlags) -> Self {
        Self {
            flags,
            cci: cci_score(&flags),
        }
    }
}

/// Weighted Charlson sum with hierarchy suppression. No age points.
pub fn cci_score(flags: &ComorbidityFlags) -> u32 {
    weighted_sum(flags, Condition::weight)
}

fn weighted_sum(flags: &ComorbidityFlags, weight: impl Fn(Condition) -> u32) -> u32 {
    let mut counted = flags.0;
    for (mild, severe) in HIERARCHY {
        if flags.get(severe) {
            counted[mild.index()] = false;
        }
    }
    Condition::ALL
        .into_iter()
        .filter(|c| counted[c.index()])
        .map(weight)
        .sum()
}

/// Age points of the age-adjusted index: one per decade from 50, capped at 4.
pub fn age_points(age: u32) -> u32 {
    match age {
        0..=49 => 0,
        50..=59 => 1,
        60..=69 => 2,
        70..=79 => 3,
        _ => 4,
    }
}

pub fn cci_score_age_adjusted(flags: &ComorbidityFlags, age: u32) -> u32 {
    cci_score(flags) + age_points(age)
}

#[derive(Debug, Clone)]
pub struct CharlsonMap {
    sets: Vec<CodeSet>,
    weights: [u32; N_CONDITIONS],
}

impl CharlsonMap {
    pub fn from_rules(text: &str, source: &Path) -> Result<Self> {
        let mut sets: Vec<CodeSet> = Condition::ALL
            .iter()
            .map(|c| CodeSet::new(c.key()))
            .collect();
        let mut weights: [Option<u32>; N_CONDITIONS] = [None; N_CONDITIONS];
        let lookup = |name: &str| {
            Condition::from_key(name)
                .ok_or_else(|| Error::input(source, format!("unknown condition {name:?}")))
        };
        for rule in parse_rules(text, source)? {
            match rule {
                RuleLine::Weight { set, weight } => {
                    let c = lookup(&set)?;
                    if ![1, 2, 3, 6].contains(&weight) {
                        return Err(Error::input(source, format!("weight {weight} for {set} not in {{1,2,3,6}}")));
                    }
                    weights[c.index()] = Some(weight);
                }
                RuleLine::Prefix { set, version, code } => {
                    sets[lookup(&set)?.index()].add_prefix(version, &code)?
                }
                RuleLine::CarveOut { set, version, code } => {
                    sets[lookup(&set)?.index()].add_carve_out(version, &code)?
                }
            }
        }
        let mut resolved = [0; N_CONDITIONS];
        for c in Condition::ALL {
            resolved[c.index()] = weights[c.index()]
                .ok_or_else(|| Error::input(source, format!("no weight line for {}", c.key())))?;
            if sets[c.index()].entries().is_empty() {
                return Err(Error::input(source, format!("no codes mapped for {}", c.key())));
            }
        }
        Ok(Self {
            sets,
            weights: resolved,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_rules(&text, path)
    }

    pub fn code_set(&self, c: Condition) -> &CodeSet {
        &self.sets[c.index()]
    }

    pub fn weight(&self, c: Condition) -> u32 {
        self.weights[c.index()]
    }

    /// Flags for a single code; one code can touch several conditions.
    pub fn conditions_for(&self, dx: &DiagnosisCode) -> ComorbidityFlags {
        let mut flags = ComorbidityFlags::default();
        for c in Condition::ALL {
            if self.sets[c.index()].matches(dx) {
                flags.set(c, true);
            }
        }
        flags
    }

    /// Weighted sum with this map's weights and the fixed hierarchy.
    pub fn score(&self, flags: &ComorbidityFlags) -> u32 {
        weighted_sum(flags, |c| self.weights[c.index()])
    }
}

impl Default for CharlsonMap {
    fn default() -> Self {
        Self::from_rules(DEFAULT_CHARLSON_MAP, Path::new("<built-in Charlson map>"))
            .expect("built-in Charlson map parses")
    }
}

pub fn comorbidity_flags<'a>(
    history: impl IntoIterator<Item = &'a DiagnosisCode>,
    map: &CharlsonMap,
) -> ComorbidityFlags {
    history
        .into_iter()
        .fold(ComorbidityFlags::default(), |acc, dx| acc.union(&map.conditions_for(dx)))
}

/// Cumulative profile over a patient's whole admission history.
pub fn patient_profile(patient: &crate::ehr::Patient, map: &CharlsonMap) -> ComorbidityProfile {
    let flags = comorbidity_flags(
        patient.admissions.iter().flat_map(|a| a.diagnoses.iter()),
        map,
    );
    ComorbidityProfile {
        flags,
        cci: map.score(&flags),
    }
}
