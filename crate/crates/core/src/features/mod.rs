//! Per-admission feature sequences and their flattened form.
//!
//! Each admission becomes a 19-value vector:
//!
//! | slot  | feature                                         | kind       |
//! |-------|-------------------------------------------------|------------|
//! | 0     | age at admission (years)                        | continuous |
//! | 1     | gender (1 = female, 0 = male)                   | nominal    |
//! | 2     | unique ICD codes on this admission              | continuous |
//! | 3..18 | 15 Charlson indicators, cumulative to this stay | nominal    |
//! | 18    | Charlson index of the cumulative indicators     | continuous |
//!
//! Sequences stop before the first delirium admission and keep the most
//! recent `max_seq_len` steps. Shorter sequences are pre-padded with zero
//! vectors.

pub mod resample;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::cohort::CohortAssignment;
use crate::comorbidity::{comorbidity_flags, CharlsonMap, ComorbidityFlags, Condition, N_CONDITIONS};
use crate::ehr::{natural_cmp, Dataset, Gender};
use crate::error::{Error, Result};

pub use resample::{downsample_majority, smotenc, ResampleConfig};

pub const N_FEATURES: usize = 19;
pub const AGE: usize = 0;
pub const GENDER: usize = 1;
pub const DX_COUNT: usize = 2;
pub const FIRST_FLAG: usize = 3;
pub const CCI: usize = 18;

pub const CONTINUOUS_SLOTS: [usize; 3] = [AGE, DX_COUNT, CCI];

pub const DEFAULT_MAX_SEQ_LEN: usize = 8;

pub fn is_nominal_slot(slot: usize) -> bool {
    slot == GENDER || (FIRST_FLAG..FIRST_FLAG + N_CONDITIONS).contains(&slot)
}

pub fn feature_names() -> Vec<&'static str> {
    let mut names = vec!["age", "gender", "dx_count"];
    names.extend(Condition::ALL.iter().map(|c| c.key()));
    names.push("cci");
    names
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; N_FEATURES]);

impl FeatureVector {
    pub fn new(age: f64, female: bool, dx_count: usize, flags: &ComorbidityFlags, cci: u32) -> Self {
        let mut v = [0.0; N_FEATURES];
        v[AGE] = age;
        v[GENDER] = if female { 1.0 } else { 0.0 };
        v[DX_COUNT] = dx_count as f64;
        for (i, f) in flags.0.iter().enumerate() {
            v[FIRST_FLAG + i] = if *f { 1.0 } else { 0.0 };
        }
        v[CCI] = f64::from(cci);
        Self(v)
    }

    pub fn flags(&self) -> ComorbidityFlags {
        let mut f = ComorbidityFlags::default();
        for i in 0..N_CONDITIONS {
            f.0[i] = self.0[FIRST_FLAG + i] != 0.0;
        }
        f
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    pub subject_id: String,
    /// Padded to the configured length; real steps occupy the tail.
    pub steps: Vec<FeatureVector>,
    pub label: bool,
    pub mask_len: usize,
}

impl FeatureSequence {
    pub fn max_seq_len(&self) -> usize {
        self.steps.len()
    }

    pub fn real_steps(&self) -> &[FeatureVector] {
        &self.steps[self.steps.len() - self.mask_len..]
    }

    pub fn is_pad(&self, step: usize) -> bool {
        step < self.steps.len() - self.mask_len
    }

    /// Same sequence padded (or trimmed from the front) to `len` steps.
    pub fn repadded(&self, len: usize) -> Self {
        let real = self.real_steps();
        let keep = &real[real.len().saturating_sub(len)..];
        let mut steps = vec![FeatureVector::default(); len - keep.len()];
        steps.extend_from_slice(keep);
        Self {
            subject_id: self.subject_id.clone(),
            steps,
            label: self.label,
            mask_len: keep.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DroppedSequence {
    pub subject_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceConfig {
    pub max_seq_len: usize,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self {
            max_seq_len: DEFAULT_MAX_SEQ_LEN,
        }
    }
}

/// One sequence per included patient with at least one admission before
/// delirium onset.
pub fn build_sequences(
    dataset: &Dataset,
    assignments: &[CohortAssignment],
    map: &CharlsonMap,
    config: SequenceConfig,
) -> Result<(Vec<FeatureSequence>, Vec<DroppedSequence>)> {
    if config.max_seq_len == 0 {
        return Err(Error::InvalidParameter("max_seq_len must be positive".into()));
    }
    if assignments.len() != dataset.patients.len() {
        return Err(Error::DataInconsistency(
            "cohort assignments do not match dataset patients".into(),
        ));
    }
    let mut sequences = Vec::new();
    let mut dropped = Vec::new();
    for (patient, a) in dataset.patients.iter().zip(assignments) {
        if a.subject_id != patient.subject_id {
            return Err(Error::DataInconsistency(format!(
                "assignment {} out of order with patient {}",
                a.subject_id, patient.subject_id
            )));
        }
        if a.excluded {
            continue;
        }
        let eligible = match a.first_delirium_time {
            Some(onset) => patient
                .admissions
                .iter()
                .take_while(|adm| adm.admit_time < onset)
                .count(),
            None => patient.admissions.len(),
        };
        if eligible == 0 {
            log::debug!("dropping subject {}: no admission before delirium onset", a.subject_id);
            dropped.push(DroppedSequence {
                subject_id: a.subject_id.clone(),
                reason: "no pre-onset history".into(),
            });
            continue;
        }
        let mut cumulative = ComorbidityFlags::default();
        let mut real = Vec::with_capacity(eligible);
        for (j, adm) in patient.admissions[..eligible].iter().enumerate() {
            cumulative = cumulative.union(&comorbidity_flags(&adm.diagnoses, map));
            real.push(FeatureVector::new(
                f64::from(patient.age_at(j)),
                patient.gender == Gender::F,
                adm.unique_dx_count(),
                &cumulative,
                map.score(&cumulative),
            ));
        }
        let seq = FeatureSequence {
            subject_id: a.subject_id.clone(),
            mask_len: real.len(),
            steps: real,
            label: a.has_delirium,
        };
        sequences.push(seq.repadded(config.max_seq_len));
    }
    Ok((sequences, dropped))
}

// ── Flattening ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleSource {
    Real(String),
    Synthetic { seed: String, neighbor: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatSample {
    pub vector: Vec<f64>,
    pub mask_len: usize,
    pub label: bool,
    pub source: SampleSource,
}

impl FlatSample {
    pub fn max_seq_len(&self) -> usize {
        self.vector.len() / N_FEATURES
    }

    pub fn first_real_step(&self) -> usize {
        self.max_seq_len() - self.mask_len
    }

    pub fn step(&self, t: usize) -> &[f64] {
        &self.vector[t * N_FEATURES..(t + 1) * N_FEATURES]
    }

    pub fn subject_id(&self) -> &str {
        match &self.source {
            SampleSource::Real(id) => id,
            SampleSource::Synthetic { seed, .. } => seed,
        }
    }
}

/// Indices of the gender and indicator slots at every step.
pub fn nominal_positions(max_seq_len: usize) -> Vec<usize> {
    (0..max_seq_len * N_FEATURES)
        .filter(|i| is_nominal_slot(i % N_FEATURES))
        .collect()
}

pub fn flatten(seq: &FeatureSequence, max_seq_len: usize) -> Result<FlatSample> {
    if seq.steps.len() != max_seq_len || seq.mask_len == 0 || seq.mask_len > max_seq_len {
        return Err(Error::InvalidParameter(format!(
            "sequence {} has {} steps ({} real), expected {max_seq_len}",
            seq.subject_id,
            seq.steps.len(),
            seq.mask_len
        )));
    }
    Ok(FlatSample {
        vector: seq.steps.iter().flat_map(|s| s.0).collect(),
        mask_len: seq.mask_len,
        label: seq.label,
        source: SampleSource::Real(seq.subject_id.clone()),
    })
}

pub fn unflatten(flat: &FlatSample) -> Result<FeatureSequence> {
    let len = flat.vector.len();
    if len == 0 || !len.is_multiple_of(N_FEATURES) || flat.mask_len == 0 || flat.mask_len > len / N_FEATURES {
        return Err(Error::InvalidParameter(format!(
            "flat vector of length {len} with {} real steps",
            flat.mask_len
        )));
    }
    let first_real = flat.first_real_step();
    let steps = flat
        .vector
        .chunks_exact(N_FEATURES)
        .enumerate()
        .map(|(t, chunk)| {
            if t < first_real {
                FeatureVector::default()
            } else {
                FeatureVector(chunk.try_into().expect("chunk length"))
            }
        })
        .collect();
    Ok(FeatureSequence {
        subject_id: flat.subject_id().to_string(),
        steps,
        label: flat.label,
        mask_len: flat.mask_len,
    })
}

// ── Sequence file ───────────────────────────────────────────────────────────

pub fn sequence_file_header() -> String {
    let mut cols = vec!["subject_id", "step_idx", "is_pad"];
    cols.extend(feature_names());
    cols.push("label");
    cols.join(",")
}

pub fn write_sequences<W: Write>(sequences: &[FeatureSequence], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{}", sequence_file_header())?;
    for seq in sequences {
        for (t, step) in seq.steps.iter().enumerate() {
            write!(w, "{},{},{}", seq.subject_id, t, u8::from(seq.is_pad(t)))?;
            for v in step.0 {
                write!(w, ",{v}")?;
            }
            writeln!(w, ",{}", u8::from(seq.label))?;
        }
    }
    Ok(())
}

/// Parse a sequence file written by [`write_sequences`]. `#` lines are
/// skipped.
pub fn read_sequences<R: BufRead>(r: R, source: &std::path::Path) -> Result<Vec<FeatureSequence>> {
    let bad = |line: usize, msg: String| Error::input(source, format!("line {line}: {msg}"));
    let mut lines = r
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.starts_with('#') && !l.trim().is_empty()));
    let header = sequence_file_header();
    match lines.next() {
        Some((i, Ok(h))) if h.trim() == header => {
            let _ = i;
        }
        Some((i, Ok(h))) => return Err(bad(i + 1, format!("unexpected header {h:?}"))),
        Some((_, Err(e))) => return Err(Error::io(source, e)),
        None => return Err(Error::input(source, "empty sequence file")),
    }
    let mut grouped: BTreeMap<String, Vec<(usize, bool, FeatureVector, bool)>> = BTreeMap::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(source, e))?;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != N_FEATURES + 4 {
            return Err(bad(i + 1, format!("expected {} fields, got {}", N_FEATURES + 4, fields.len())));
        }
        let step: usize = fields[1].parse().map_err(|_| bad(i + 1, "invalid step_idx".into()))?;
        let flag = |s: &str| match s {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(bad(i + 1, format!("expected 0/1, got {other:?}"))),
        };
        let is_pad = flag(fields[2])?;
        let label = flag(fields[N_FEATURES + 3])?;
        let mut v = [0.0; N_FEATURES];
        for (slot, raw) in fields[3..3 + N_FEATURES].iter().enumerate() {
            v[slot] = raw
                .parse()
                .ok()
                .filter(|x: &f64| x.is_finite())
                .ok_or_else(|| bad(i + 1, format!("invalid value {raw:?}")))?;
        }
        grouped
            .entry(fields[0].to_string())
            .or_default()
            .push((step, is_pad, FeatureVector(v), label));
    }
    let mut out = Vec::with_capacity(grouped.len());
    for (subject_id, mut rows) in grouped {
        rows.sort_by_key(|r| r.0);
        let len = rows.len();
        if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
            return Err(Error::input(source, format!("subject {subject_id}: step indices not 0..{len}")));
        }
        let mask_len = rows.iter().filter(|r| !r.1).count();
        if mask_len == 0 || rows[..len - mask_len].iter().any(|r| !r.1) {
            return Err(Error::input(source, format!("subject {subject_id}: padding must precede real steps")));
        }
        let label = rows[0].3;
        if rows.iter().any(|r| r.3 != label) {
            return Err(Error::input(source, format!("subject {subject_id}: inconsistent labels")));
        }
        out.push(FeatureSequence {
            subject_id,
            steps: rows.into_iter().map(|r| r.2).collect(),
            label,
            mask_len,
        });
    }
    out.sort_by(|a, b| natural_cmp(&a.subject_id, &b.subject_id));
    Ok(out)
}
