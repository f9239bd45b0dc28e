//! Minority oversampling (SMOTENC) and majority downsampling on flattened
//! sequences.
//!
//! Distances only look at steps that are real in both samples. Continuous
//! slots contribute squared differences; each nominal mismatch contributes
//! m², where m is the median standard deviation of the continuous slots
//! across the minority class.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{is_nominal_slot, FlatSample, SampleSource, CONTINUOUS_SLOTS, N_FEATURES};
use crate::error::{Error, Result};
use crate::stats::percentile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResampleConfig {
    pub enabled: bool,
    pub k: usize,
    /// Minority/majority ratio reached by oversampling.
    pub smote_ratio: f64,
    /// Majority/minority ratio reached by downsampling afterwards.
    pub majority_ratio: f64,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            k: 5,
            smote_ratio: 0.8,
            majority_ratio: 1.0,
        }
    }
}

impl ResampleConfig {
    /// Oversample, then downsample. Returns the input unchanged when disabled.
    pub fn apply(&self, samples: Vec<FlatSample>, seed: u64) -> Result<Vec<FlatSample>> {
        if !self.enabled {
            return Ok(samples);
        }
        let oversampled = smotenc(&samples, self.k, self.smote_ratio, seed)?;
        downsample_majority(&oversampled, self.majority_ratio, seed.wrapping_add(1))
    }
}

fn class_split(samples: &[FlatSample]) -> Result<(bool, Vec<usize>, Vec<usize>)> {
    let pos: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label).collect();
    let neg: Vec<usize> = (0..samples.len()).filter(|&i| !samples[i].label).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidParameter("resampling needs both classes present".into()));
    }
    let len = samples[0].vector.len();
    if samples.iter().any(|s| s.vector.len() != len) {
        return Err(Error::InvalidParameter("samples have differing lengths".into()));
    }
    // minority = smaller class; positives on a tie
    Ok(if pos.len() <= neg.len() {
        (true, pos, neg)
    } else {
        (false, neg, pos)
    })
}

/// Median, over the continuous features, of each feature's standard
/// deviation across the real steps of the minority class. Zero when nothing
/// varies.
pub fn nominal_penalty(samples: &[&FlatSample]) -> f64 {
    let mut sds = Vec::new();
    for &slot in &CONTINUOUS_SLOTS {
        let values: Vec<f64> = samples
            .iter()
            .flat_map(|s| (s.first_real_step()..s.max_seq_len()).map(move |t| s.step(t)[slot]))
            .collect();
        if values.len() < 2 {
            continue;
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
        sds.push(var.sqrt());
    }
    percentile(&sds, 0.5).unwrap_or(0.0)
}

/// SMOTENC distance (squared) between two flattened samples.
pub fn smotenc_distance(a: &FlatSample, b: &FlatSample, m: f64) -> f64 {
    let start = a.first_real_step().max(b.first_real_step());
    let m2 = m * m;
    let mut d = 0.0;
    for t in start..a.max_seq_len() {
        let (x, y) = (a.step(t), b.step(t));
        for slot in 0..N_FEATURES {
            if is_nominal_slot(slot) {
                if x[slot] != y[slot] {
                    d += m2;
                }
            } else {
                d += (x[slot] - y[slot]).powi(2);
            }
        }
    }
    d
}

/// Build one synthetic sample from `seed`. Continuous slots move a fraction
/// `lambda` towards `neighbor`; nominal slots take the majority value among
/// `neighbors` that are real at that step, ties going to the seed. The
/// synthetic sample keeps the seed's padding.
pub fn smotenc_interpolate(
    seed: &FlatSample,
    neighbor: &FlatSample,
    neighbors: &[&FlatSample],
    lambda: f64,
) -> FlatSample {
    let mut vector = vec![0.0; seed.vector.len()];
    for t in seed.first_real_step()..seed.max_seq_len() {
        let base = t * N_FEATURES;
        let neighbor_real = t >= neighbor.first_real_step();
        for slot in 0..N_FEATURES {
            let i = base + slot;
            let s = seed.vector[i];
            vector[i] = if is_nominal_slot(slot) {
                let votes: Vec<f64> = neighbors
                    .iter()
                    .filter(|n| t >= n.first_real_step())
                    .map(|n| n.vector[i])
                    .collect();
                majority_value(&votes, s)
            } else if neighbor_real {
                s + lambda * (neighbor.vector[i] - s)
            } else {
                s
            };
        }
    }
    FlatSample {
        vector,
        mask_len: seed.mask_len,
        label: seed.label,
        source: SampleSource::Synthetic {
            seed: seed.subject_id().to_string(),
            neighbor: neighbor.subject_id().to_string(),
        },
    }
}

fn majority_value(votes: &[f64], fallback: f64) -> f64 {
    let mut counts: Vec<(f64, usize)> = Vec::new();
    for &v in votes {
        match counts.iter_mut().find(|(x, _)| *x == v) {
            Some(c) => c.1 += 1,
            None => counts.push((v, 1)),
        }
    }
    let Some(best) = counts.iter().map(|c| c.1).max() else {
        return fallback;
    };
    let winners: Vec<f64> = counts.iter().filter(|c| c.1 == best).map(|c| c.0).collect();
    if winners.len() == 1 {
        winners[0]
    } else {
        fallback
    }
}

/// Append synthetic minority samples until minority/majority reaches
/// `target_ratio` (rounded to the nearest whole sample). Seeds are used
/// round-robin in a shuffled order.
pub fn smotenc(samples: &[FlatSample], k: usize, target_ratio: f64, seed: u64) -> Result<Vec<FlatSample>> {
    if k == 0 {
        return Err(Error::InvalidParameter("SMOTENC k must be at least 1".into()));
    }
    if !(target_ratio > 0.0 && target_ratio <= 1.0) {
        return Err(Error::InvalidParameter(format!("SMOTENC ratio {target_ratio} not in (0, 1]")));
    }
    let (_, minority, majority) = class_split(samples)?;
    let target = (target_ratio * majority.len() as f64).round() as usize;
    let mut out = samples.to_vec();
    if target <= minority.len() {
        return Ok(out);
    }
    if minority.len() < k + 1 {
        return Err(Error::InvalidParameter(format!(
            "SMOTENC needs at least {} minority samples, got {}",
            k + 1,
            minority.len()
        )));
    }
    let pool: Vec<&FlatSample> = minority.iter().map(|&i| &samples[i]).collect();
    let m = nominal_penalty(&pool);
    if m == 0.0 {
        log::warn!("continuous features are constant across the minority class; nominal mismatches cost nothing");
    }

    let neighbors: Vec<Vec<usize>> = (0..pool.len())
        .map(|i| {
            let mut d: Vec<(f64, usize)> = (0..pool.len())
                .filter(|&j| j != i)
                .map(|j| (smotenc_distance(pool[i], pool[j], m), j))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.truncate(k);
            d.into_iter().map(|(_, j)| j).collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
    for n in 0..target - minority.len() {
        let i = order[n % order.len()];
        let nn: Vec<&FlatSample> = neighbors[i].iter().map(|&j| pool[j]).collect();
        let partner = nn[rng.gen_range(0..nn.len())];
        let lambda: f64 = rng.gen();
        out.push(smotenc_interpolate(pool[i], partner, &nn, lambda));
    }
    Ok(out)
}

/// Randomly drop majority samples until majority/minority equals
/// `target_ratio` (rounded). Survivors keep their input order.
pub fn downsample_majority(samples: &[FlatSample], target_ratio: f64, seed: u64) -> Result<Vec<FlatSample>> {
    if !(target_ratio > 0.0 && target_ratio.is_finite()) {
        return Err(Error::InvalidParameter(format!("downsampling ratio {target_ratio} must be positive")));
    }
    let (_, minority, majority) = class_split(samples)?;
    let keep = (target_ratio * minority.len() as f64).round() as usize;
    if keep > majority.len() {
        return Err(Error::InvalidParameter(format!(
            "cannot keep {keep} majority samples out of {}",
            majority.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dropped = vec![true; samples.len()];
    for i in sample_indices(&mut rng, majority.len(), keep) {
        dropped[majority[i]] = false;
    }
    for &i in &minority {
        dropped[i] = false;
    }
    Ok(samples
        .iter()
        .zip(dropped)
        .filter(|(_, d)| !d)
        .map(|(s, _)| s.clone())
        .collect())
}
