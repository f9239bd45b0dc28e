//! Run configuration: a TOML file with one section per stage. Every field
//! has a default; command-line flags override the file.
//!
//! ```toml
//! seed = 7
//!
//! [cohort]
//! min_age = 65
//!
//! [km]
//! band = "log_log"
//! study_end = "2020-12-31"
//!
//! [train]
//! epochs = 30
//! ```

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::CvConfig;
use crate::features::{ResampleConfig, DEFAULT_MAX_SEQ_LEN};
use crate::lstm::TrainConfig;
use crate::survival::BandTransform;
use crate::syngen::SynthConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    /// Directory holding the three input tables.
    pub dir: Option<PathBuf>,
    pub patients: Option<PathBuf>,
    pub admissions: Option<PathBuf>,
    pub diagnoses: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub criteria: Option<PathBuf>,
    pub charlson: Option<PathBuf>,
    /// Patients younger than this at their first admission are excluded;
    /// 0 disables the rule.
    pub min_age: u32,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            criteria: None,
            charlson: None,
            min_age: crate::cohort::DEFAULT_MIN_AGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KmConfig {
    /// Defaults to the latest discharge in the data.
    pub study_end: Option<NaiveDate>,
    pub band: BandTransform,
    pub level: f64,
    /// Restrict both curves to patients who develop delirium.
    pub delirium_only: bool,
    /// Months at which the report quotes survival.
    pub milestones: Vec<f64>,
}

impl Default for KmConfig {
    fn default() -> Self {
        Self {
            study_end: None,
            band: BandTransform::LogLog,
            level: 0.95,
            delirium_only: false,
            milestones: vec![6.0, 12.0, 24.0, 36.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub max_seq_len: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            max_seq_len: DEFAULT_MAX_SEQ_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub hidden_size: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            hidden_size: t.hidden_size,
            dropout_rate: t.dropout_rate,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            patience: t.early_stopping_patience.unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub folds: usize,
    pub bootstrap_resamples: usize,
    pub ci_level: f64,
    pub early_stopping_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let c = CvConfig::default();
        Self {
            folds: c.folds,
            bootstrap_resamples: c.bootstrap_resamples,
            ci_level: c.ci_level,
            early_stopping_fraction: c.early_stopping_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub input: InputConfig,
    pub cohort: CohortConfig,
    pub km: KmConfig,
    pub features: FeatureConfig,
    pub resample: ResampleConfig,
    pub train: TrainSection,
    pub eval: EvalConfig,
    /// The generator's own `seed` is replaced by the run seed.
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            input: InputConfig::default(),
            cohort: CohortConfig::default(),
            km: KmConfig::default(),
            features: FeatureConfig::default(),
            resample: ResampleConfig::default(),
            train: TrainSection::default(),
            eval: EvalConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    /// Parse a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::input(path, e.to_string().trim_end().to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.input.dir,
            &mut cfg.input.patients,
            &mut cfg.input.admissions,
            &mut cfg.input.diagnoses,
            &mut cfg.cohort.criteria,
            &mut cfg.cohort.charlson,
        ] {
            resolve(base, p);
        }
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            hidden_size: self.train.hidden_size,
            dropout_rate: self.train.dropout_rate,
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            early_stopping_patience: (self.train.patience > 0).then_some(self.train.patience),
            master_seed: self.seed,
        }
    }

    pub fn cv_config(&self) -> CvConfig {
        CvConfig {
            folds: self.eval.folds,
            max_seq_len: self.features.max_seq_len,
            resample: self.resample,
            train: self.train_config(),
            early_stopping_fraction: self.eval.early_stopping_fraction,
            bootstrap_resamples: self.eval.bootstrap_resamples,
            ci_level: self.eval.ci_level,
            master_seed: self.seed,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    /// SHA-256 over the settings that shape results. Input locations are
    /// left out so the same analysis on a copied dataset hashes the same.
    pub fn hash(&self) -> String {
        let mut shaped = self.clone();
        shaped.input = InputConfig::default();
        let json = serde_json::to_string(&shaped).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_parse_and_default() {
        let cfg: RunConfig = toml::from_str(
            r#"
            seed = 7
            [km]
            band = "linear"
            study_end = "2020-01-31"
            [train]
            epochs = 3
            [synth]
            n_patients = 10
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.km.band, BandTransform::Linear);
        assert_eq!(cfg.km.study_end, NaiveDate::from_ymd_opt(2020, 1, 31));
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.hidden_size, 32);
        assert_eq!(cfg.synth_config().seed, 7);
        assert_eq!(cfg.cv_config().train.early_stopping_patience, Some(5));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("[train]\nepoch = 3\n").is_err());
    }

    #[test]
    fn hash_tracks_settings_not_paths() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.input.dir = Some("/elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
