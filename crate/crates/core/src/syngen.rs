//! Seeded synthetic EHR generator with a planted delirium risk model.
//!
//! Each patient gets a latent frailty that speeds up comorbidity onset. At
//! every admission after the first, delirium occurs with probability
//! σ(baseline + effects), where the effects read the history up to the
//! previous admission: Charlson index, age, diabetes with complications and
//! MCI. The first success places a delirium code on that admission.

use std::io::Write;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::cohort::CohortCriteria;
use crate::comorbidity::{CharlsonMap, ComorbidityFlags, Condition, N_CONDITIONS};
use crate::ehr::{Admission, Dataset, DiagnosisCode, Gender, IcdVersion, Patient};
use crate::error::{Error, Result};

/// Weight-zero codes: frequent diagnoses outside every Charlson family.
const FILLER_ICD10: [&str; 12] = [
    "I10", "E785", "K219", "E039", "N390", "Z87891", "M1990", "R0602", "E871", "D649", "J189", "R55",
];
const FILLER_ICD9: [&str; 12] = [
    "4019", "2724", "53081", "2449", "5990", "V1582", "7159", "78605", "2761", "2859", "486", "7802",
];
const DELIRIUM_CODES: [(&str, IcdVersion); 3] = [
    ("F05", IcdVersion::Icd10),
    ("2930", IcdVersion::Icd9),
    ("29281", IcdVersion::Icd9),
];
const EXCLUSION_CODES: [(&str, IcdVersion); 3] = [
    ("F0390", IcdVersion::Icd10),
    ("G309", IcdVersion::Icd10),
    ("2900", IcdVersion::Icd9),
];

fn icd10_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2015, 10, 1).expect("valid date")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub max_admissions: usize,
    /// Mean admission count (before capping).
    pub mean_admissions: f64,
    pub mean_gap_days: f64,
    pub female_fraction: f64,
    pub age_mean: f64,
    pub age_sd: f64,
    pub age_min: f64,
    pub age_max: f64,
    pub mci_prevalence: f64,
    pub exclusion_prevalence: f64,
    /// Per-admission onset probability for each Charlson condition, in
    /// condition order, before the frailty multiplier.
    pub onset_probabilities: Vec<f64>,
    /// Log-scale effect of one SD of frailty on onset odds.
    pub frailty_effect: f64,
    pub filler_mean: f64,
    pub baseline_logit: f64,
    pub effect_cci: f64,
    /// Per `age_sd` years above `age_mean`.
    pub effect_age: f64,
    pub effect_diabetes_with_cc: f64,
    pub effect_mci_interaction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 3000,
            max_admissions: 10,
            mean_admissions: 5.0,
            mean_gap_days: 240.0,
            female_fraction: 0.54,
            age_mean: 79.0,
            age_sd: 7.0,
            age_min: 55.0,
            age_max: 100.0,
            mci_prevalence: 0.015,
            exclusion_prevalence: 0.03,
            onset_probabilities: vec![
                0.04, 0.06, 0.04, 0.05, 0.06, 0.015, 0.015, 0.02, 0.06, 0.04, 0.01, 0.06, 0.03, 0.008, 0.01,
            ],
            frailty_effect: 0.9,
            filler_mean: 4.0,
            baseline_logit: -9.0,
            effect_cci: 3.0,
            effect_age: 0.6,
            effect_diabetes_with_cc: 1.2,
            effect_mci_interaction: 1.0,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {p} is not a probability")))
            }
        };
        prob("female_fraction", self.female_fraction)?;
        prob("mci_prevalence", self.mci_prevalence)?;
        prob("exclusion_prevalence", self.exclusion_prevalence)?;
        if self.onset_probabilities.len() != N_CONDITIONS {
            return Err(Error::Config(format!(
                "onset_probabilities needs {N_CONDITIONS} values, got {}",
                self.onset_probabilities.len()
            )));
        }
        for (c, p) in Condition::ALL.iter().zip(&self.onset_probabilities) {
            prob(c.key(), *p)?;
        }
        if self.n_patients == 0 || self.max_admissions == 0 {
            return Err(Error::Config("n_patients and max_admissions must be at least 1".into()));
        }
        let positive = [
            ("mean_admissions", self.mean_admissions),
            ("mean_gap_days", self.mean_gap_days),
            ("age_sd", self.age_sd),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.age_min <= self.age_max) || self.age_min < 0.0 {
            return Err(Error::Config("age bounds out of order".into()));
        }
        if self.baseline_logit.is_nan() || self.baseline_logit == f64::INFINITY {
            return Err(Error::Config("baseline_logit must be finite or -inf".into()));
        }
        let effects = [
            self.effect_cci,
            self.effect_age,
            self.effect_diabetes_with_cc,
            self.effect_mci_interaction,
            self.frailty_effect,
            self.filler_mean,
        ];
        if effects.iter().any(|e| !e.is_finite()) || self.filler_mean < 0.0 {
            return Err(Error::Config("effect weights must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub subject_id: String,
    /// Probability of any delirium admission given the generated history.
    pub true_risk: f64,
    pub label: bool,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: Dataset,
    pub ground_truth: Vec<GroundTruth>,
}

fn logistic(z: f64) -> f64 {
    if z == f64::NEG_INFINITY {
        0.0
    } else {
        1.0 / (1.0 + (-z).exp())
    }
}

/// Codes usable for each condition: mapped prefixes of the given version
/// that no cohort rule would catch.
struct CodePools {
    by_condition: Vec<[Vec<String>; 2]>,
}

impl CodePools {
    fn new(map: &CharlsonMap, criteria: &CohortCriteria) -> Self {
        let by_condition = Condition::ALL
            .iter()
            .map(|&c| {
                let mut pools: [Vec<String>; 2] = [Vec::new(), Vec::new()];
                for e in map.code_set(c).entries() {
                    let dx = DiagnosisCode {
                        code: e.prefix.clone(),
                        version: e.version,
                        seq_num: 1,
                    };
                    let flagged = map.conditions_for(&dx);
                    let clean = !criteria.exclusion.matches(&dx)
                        && !criteria.mci.matches(&dx)
                        && !criteria.delirium.matches(&dx)
                        && flagged.count() == 1;
                    if clean {
                        pools[usize::from(e.version == IcdVersion::Icd10)].push(e.prefix.clone());
                    }
                }
                pools
            })
            .collect();
        Self { by_condition }
    }

    fn pick(&self, c: Condition, version: IcdVersion, rng: &mut impl Rng) -> &str {
        let pool = &self.by_condition[c.index()][usize::from(version == IcdVersion::Icd10)];
        &pool[rng.gen_range(0..pool.len())]
    }
}

struct Trajectory {
    patient: Patient,
    /// Delirium probability at each admission (0 for the first).
    hazards: Vec<f64>,
}

fn version_on(date: NaiveDate) -> IcdVersion {
    if date < icd10_start() {
        IcdVersion::Icd9
    } else {
        IcdVersion::Icd10
    }
}

struct Generator<'a> {
    config: &'a SynthConfig,
    map: CharlsonMap,
    pools: CodePools,
}

impl<'a> Generator<'a> {
    fn new(config: &'a SynthConfig) -> Result<Self> {
        config.validate()?;
        let map = CharlsonMap::default();
        let pools = CodePools::new(&map, &CohortCriteria::default());
        for c in Condition::ALL {
            if pools.by_condition[c.index()].iter().any(Vec::is_empty) {
                return Err(Error::Config(format!("no usable codes for {}", c.key())));
            }
        }
        Ok(Self { config, map, pools })
    }

    /// Everything except the delirium draw.
    fn trajectory(&self, index: usize, next_hadm: &mut u64, rng: &mut ChaCha8Rng) -> Trajectory {
        let cfg = self.config;
        let age = Normal::new(cfg.age_mean, cfg.age_sd)
            .expect("validated sd")
            .sample(rng)
            .clamp(cfg.age_min, cfg.age_max);
        let gender = if rng.gen::<f64>() < cfg.female_fraction { Gender::F } else { Gender::M };
        let frailty: f64 = rng.sample(rand_distr::StandardNormal);
        let extra = if cfg.mean_admissions > 1.0 {
            Poisson::new(cfg.mean_admissions - 1.0).expect("positive mean").sample(rng) as usize
        } else {
            0
        };
        let n_adm = (1 + extra).min(cfg.max_admissions);
        let mci_at = (rng.gen::<f64>() < cfg.mci_prevalence).then(|| rng.gen_range(0..n_adm.min(2)));
        let excl_at = (rng.gen::<f64>() < cfg.exclusion_prevalence).then(|| rng.gen_range(0..n_adm));

        let gap = Exp::new(1.0 / cfg.mean_gap_days).expect("positive rate");
        let start = NaiveDate::from_ymd_opt(2010, 1, 1).expect("valid date");
        let mut admit = start + Duration::days(rng.gen_range(0..9 * 365));
        let onset_scale = (cfg.frailty_effect * frailty).exp();
        let mut flags = ComorbidityFlags::default();
        let mut admissions = Vec::with_capacity(n_adm);
        let mut hazards = Vec::with_capacity(n_adm);
        let mut prev_state: Option<(ComorbidityFlags, bool)> = None;
        let mut has_mci = false;
        let mut patient = Patient {
            subject_id: (10_000_000 + index).to_string(),
            gender,
            anchor_age: age.round() as u32,
            admissions: Vec::new(),
        };
        for j in 0..n_adm {
            let version = version_on(admit);
            let mut codes: Vec<(String, IcdVersion)> = Vec::new();
            for c in Condition::ALL {
                let base = cfg.onset_probabilities[c.index()];
                let p = (base * onset_scale).min(0.9);
                if flags.get(c) {
                    // chronic conditions are usually re-coded
                    if rng.gen::<f64>() < 0.7 {
                        codes.push((self.pools.pick(c, version, rng).to_string(), version));
                    }
                } else if rng.gen::<f64>() < p {
                    flags.set(c, true);
                    codes.push((self.pools.pick(c, version, rng).to_string(), version));
                }
            }
            let filler = if version == IcdVersion::Icd10 { &FILLER_ICD10 } else { &FILLER_ICD9 };
            let n_filler = if cfg.filler_mean > 0.0 {
                Poisson::new(cfg.filler_mean).expect("positive mean").sample(rng) as usize
            } else {
                0
            };
            for _ in 0..n_filler {
                codes.push((filler[rng.gen_range(0..filler.len())].to_string(), version));
            }
            if mci_at == Some(j) {
                let code = if version == IcdVersion::Icd10 { "G3184" } else { "33183" };
                codes.push((code.to_string(), version));
            }
            if excl_at == Some(j) {
                let (code, v) = EXCLUSION_CODES[rng.gen_range(0..EXCLUSION_CODES.len())];
                codes.push((code.to_string(), v));
            }
            let los = rng.gen_range(1..=10);
            let discharge = admit + Duration::days(los);
            *next_hadm += 1;
            admissions.push(Admission {
                hadm_id: next_hadm.to_string(),
                admit_time: admit,
                discharge_time: discharge,
                diagnoses: codes
                    .into_iter()
                    .enumerate()
                    .map(|(k, (code, v))| DiagnosisCode {
                        code,
                        version: v,
                        seq_num: k as u32 + 1,
                    })
                    .collect(),
            });
            patient.admissions = admissions.clone();
            let hazard = match prev_state {
                None => 0.0,
                Some((prev_flags, prev_mci)) => {
                    let prev_age = f64::from(patient.age_at(j - 1));
                    let z = cfg.baseline_logit
                        + cfg.effect_cci * f64::from(self.map.score(&prev_flags))
                        + cfg.effect_age * (prev_age - cfg.age_mean) / cfg.age_sd
                        + cfg.effect_diabetes_with_cc * f64::from(u8::from(prev_flags.get(Condition::DiabetesWithCc)))
                        + cfg.effect_mci_interaction * f64::from(u8::from(prev_mci));
                    logistic(z)
                }
            };
            hazards.push(hazard);
            has_mci |= mci_at == Some(j);
            prev_state = Some((flags, has_mci));
            admit = discharge + Duration::days(1 + gap.sample(rng).round() as i64);
        }
        for adm in &mut admissions {
            adm.dedup_diagnoses();
        }
        patient.admissions = admissions;
        Trajectory { patient, hazards }
    }
}

fn risk_of(hazards: &[f64]) -> f64 {
    1.0 - hazards.iter().map(|h| 1.0 - h).product::<f64>()
}

/// Generate a dataset and the per-patient ground truth.
pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    let generator = Generator::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut next_hadm = 20_000_000u64;
    let mut patients = Vec::with_capacity(config.n_patients);
    let mut truth = Vec::with_capacity(config.n_patients);
    let mut n_delirium = 0usize;
    for i in 0..config.n_patients {
        let Trajectory { mut patient, hazards } = generator.trajectory(i, &mut next_hadm, &mut rng);
        let onset = hazards.iter().position(|&h| rng.gen::<f64>() < h);
        if let Some(j) = onset {
            let (code, version) = DELIRIUM_CODES[n_delirium % DELIRIUM_CODES.len()];
            n_delirium += 1;
            let adm = &mut patient.admissions[j];
            let seq = adm.diagnoses.len() as u32 + 1;
            adm.diagnoses.push(DiagnosisCode {
                code: code.to_string(),
                version,
                seq_num: seq,
            });
        }
        truth.push(GroundTruth {
            subject_id: patient.subject_id.clone(),
            true_risk: risk_of(&hazards),
            label: onset.is_some(),
        });
        patients.push(patient);
    }
    let dataset = Dataset {
        patients,
        provenance: format!("synthetic (seed {})", config.seed),
    }
    .canonicalize()?;
    Ok(SynthOutput {
        dataset,
        ground_truth: truth,
    })
}

/// Mean delirium risk over `n_draws` covariate histories drawn from an
/// independent stream: a Monte Carlo integral of the outcome model over the
/// generator's covariate distribution.
pub fn expected_prevalence(config: &SynthConfig, n_draws: usize) -> Result<f64> {
    let generator = Generator::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005E_ED1E_550F_0DD5);
    let mut next_hadm = 0u64;
    let mut total = 0.0;
    for i in 0..n_draws {
        total += risk_of(&generator.trajectory(i, &mut next_hadm, &mut rng).hazards);
    }
    Ok(total / n_draws.max(1) as f64)
}

pub const GROUND_TRUTH_HEADER: &str = "subject_id,true_risk,label";

pub fn write_ground_truth<W: Write>(rows: &[GroundTruth], mut w: W, preamble: &[String]) -> std::io::Result<()> {
    for line in preamble {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "{GROUND_TRUTH_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{:?},{}", r.subject_id, r.true_risk, u8::from(r.label))?;
    }
    Ok(())
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruth>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    if lines.next().map(str::trim) != Some(GROUND_TRUTH_HEADER) {
        return Err(Error::input(path, "missing ground-truth header"));
    }
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let parsed = (f.len() == 3)
            .then(|| Some((f[1].parse::<f64>().ok()?, f[2] == "1")))
            .flatten()
            .ok_or_else(|| Error::input(path, format!("bad ground-truth row {line:?}")))?;
        rows.push(GroundTruth {
            subject_id: f[0].to_string(),
            true_risk: parsed.0,
            label: parsed.1,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::build_cohort;

    fn small(n: usize) -> SynthConfig {
        SynthConfig {
            n_patients: n,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate(&small(50)).unwrap();
        let b = generate(&small(50)).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.ground_truth, b.ground_truth);
    }

    #[test]
    fn no_cases_at_minus_infinity() {
        let cfg = SynthConfig {
            baseline_logit: f64::NEG_INFINITY,
            effect_cci: 0.0,
            effect_age: 0.0,
            effect_diabetes_with_cc: 0.0,
            effect_mci_interaction: 0.0,
            ..small(200)
        };
        let out = generate(&cfg).unwrap();
        assert!(out.ground_truth.iter().all(|g| !g.label && g.true_risk == 0.0));
        let cohort = build_cohort(&out.dataset, &CohortCriteria::default());
        assert!(cohort.iter().all(|a| !a.has_delirium));
    }

    #[test]
    fn everyone_mci() {
        let cfg = SynthConfig {
            mci_prevalence: 1.0,
            ..small(100)
        };
        let out = generate(&cfg).unwrap();
        let cohort = build_cohort(&out.dataset, &CohortCriteria::default());
        assert!(cohort.iter().all(|a| a.is_mci));
    }

    #[test]
    fn labels_agree_with_cohort() {
        let out = generate(&small(300)).unwrap();
        let cohort = build_cohort(&out.dataset, &CohortCriteria::default());
        for (g, a) in out.ground_truth.iter().zip(&cohort) {
            assert_eq!(g.subject_id, a.subject_id);
            assert_eq!(g.label, a.has_delirium);
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate(&SynthConfig { mci_prevalence: 1.5, ..small(1) }).is_err());
        assert!(generate(&SynthConfig { n_patients: 0, ..small(1) }).is_err());
        assert!(generate(&SynthConfig { onset_probabilities: vec![0.1], ..small(1) }).is_err());
    }
}
