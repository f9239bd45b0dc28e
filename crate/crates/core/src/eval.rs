//! Ranking and calibration metrics, bootstrap intervals, and stratified
//! k-fold cross-validation of the full resample → train → score pipeline.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{flatten, FeatureSequence, FlatSample, ResampleConfig, SampleSource};
use crate::lstm::{train_model, LstmModel, TrainConfig, TrainHistory};
use crate::stats::percentile;

fn check_scored(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("no scored samples".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::InvalidParameter(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidParameter("NaN score".into()));
    }
    Ok(())
}

/// Indices sorted by descending score.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half (Mann-Whitney U / (P·N), via midranks).
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_scored(scores, labels)?;
    let p = labels.iter().filter(|&&l| l).count();
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        let pos_in_group = idx[i..=j].iter().filter(|&&k| labels[k]).count();
        pos_rank_sum += mid * pos_in_group as f64;
        i = j + 1;
    }
    let (pf, nf) = (p as f64, n as f64);
    Ok((pos_rank_sum - pf * (pf + 1.0) / 2.0) / (pf * nf))
}

/// Average precision: Σ (Rₖ − Rₖ₋₁)·Pₖ over descending distinct thresholds,
/// tied scores entering together.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_scored(scores, labels)?;
    let total_pos = labels.iter().filter(|&&l| l).count();
    if total_pos == 0 {
        return Err(Error::UndefinedMetric("AUPRC needs at least one positive".into()));
    }
    let points = pr_points(scores, labels)?;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for pt in &points {
        ap += (pt.recall - prev_recall) * pt.precision;
        prev_recall = pt.recall;
    }
    Ok(ap)
}

pub fn brier(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_scored(scores, labels)?;
    if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(Error::InvalidParameter("Brier score needs probabilities in [0, 1]".into()));
    }
    let sum: f64 = scores
        .iter()
        .zip(labels)
        .map(|(s, &l)| (s - if l { 1.0 } else { 0.0 }).powi(2))
        .sum();
    Ok(sum / scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub threshold: f64,
}

/// Cumulative (tp, fp) after each distinct threshold, highest first.
fn threshold_counts(scores: &[f64], labels: &[bool]) -> Vec<(f64, usize, usize)> {
    let idx = descending(scores);
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < idx.len() {
        let thr = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == thr {
            if labels[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((thr, tp, fp));
    }
    out
}

/// ROC curve from (0, 0) at threshold +∞ through every distinct score.
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    check_scored(scores, labels)?;
    let p = labels.iter().filter(|&&l| l).count();
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric("ROC curve needs both classes".into()));
    }
    let mut pts = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    pts.extend(threshold_counts(scores, labels).into_iter().map(|(thr, tp, fp)| RocPoint {
        fpr: fp as f64 / n as f64,
        tpr: tp as f64 / p as f64,
        threshold: thr,
    }));
    Ok(pts)
}

pub fn pr_points(scores: &[f64], labels: &[bool]) -> Result<Vec<PrPoint>> {
    check_scored(scores, labels)?;
    let p = labels.iter().filter(|&&l| l).count();
    if p == 0 {
        return Err(Error::UndefinedMetric("PR curve needs at least one positive".into()));
    }
    Ok(threshold_counts(scores, labels)
        .into_iter()
        .map(|(thr, tp, fp)| PrPoint {
            recall: tp as f64 / p as f64,
            precision: tp as f64 / (tp + fp) as f64,
            threshold: thr,
        })
        .collect())
}

/// Trapezoidal area under [`roc_points`].
pub fn roc_area_trapezoid(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

// ── Bootstrap ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub resamples: usize,
    /// Draws abandoned after repeatedly producing a single class.
    pub skipped: usize,
}

const BOOTSTRAP_RETRIES: usize = 10;

/// Percentile interval of `metric` over `b` resamples with replacement.
/// Single-class resamples are redrawn a bounded number of times, then
/// skipped.
pub fn bootstrap_ci<F>(metric: F, scores: &[f64], labels: &[bool], b: usize, level: f64, seed: u64) -> Result<BootstrapCi>
where
    F: Fn(&[f64], &[bool]) -> Result<f64>,
{
    check_scored(scores, labels)?;
    if b == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter("bootstrap needs b ≥ 1 and level in (0, 1)".into()));
    }
    metric(scores, labels)?;
    let n = scores.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(b);
    let mut skipped = 0;
    let (mut s, mut l) = (vec![0.0; n], vec![false; n]);
    for _ in 0..b {
        let mut accepted = false;
        for _ in 0..BOOTSTRAP_RETRIES {
            for k in 0..n {
                let j = rng.gen_range(0..n);
                s[k] = scores[j];
                l[k] = labels[j];
            }
            let pos = l.iter().filter(|&&x| x).count();
            if pos > 0 && pos < n {
                accepted = true;
                break;
            }
        }
        if accepted {
            values.push(metric(&s, &l)?);
        } else {
            skipped += 1;
        }
    }
    if values.is_empty() {
        return Err(Error::UndefinedMetric("every bootstrap resample had a single class".into()));
    }
    let alpha = (1.0 - level) / 2.0;
    Ok(BootstrapCi {
        lo: percentile(&values, alpha).expect("non-empty"),
        hi: percentile(&values, 1.0 - alpha).expect("non-empty"),
        level,
        resamples: values.len(),
        skipped,
    })
}

// ── Cross-validation ────────────────────────────────────────────────────────

/// SplitMix64 step; gives independent seeds for folds and stages.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold index per sample. Each class is shuffled and dealt round-robin, the
/// second class continuing where the first stopped so fold sizes differ by
/// at most one.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidParameter("at least two folds required".into()));
    }
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.len() < k || neg.len() < k {
        return Err(Error::InvalidParameter(format!(
            "stratified {k}-fold split needs {k} samples per class, have {} positive and {} negative",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut fold = vec![0; labels.len()];
    for (n, &i) in pos.iter().chain(neg.iter()).enumerate() {
        fold[i] = n % k;
    }
    Ok(fold)
}

/// Stratified holdout: returns (kept, held) index lists of `indices`,
/// holding out `fraction` of each class (at least one per class when the
/// class has two or more members).
pub fn stratified_holdout(indices: &[usize], labels: &[bool], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut kept, mut held) = (Vec::new(), Vec::new());
    for class in [true, false] {
        let mut members: Vec<usize> = indices.iter().copied().filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        let mut n_held = (fraction * members.len() as f64).round() as usize;
        if members.len() >= 2 {
            n_held = n_held.clamp(1, members.len() - 1);
        } else {
            n_held = 0;
        }
        held.extend_from_slice(&members[..n_held]);
        kept.extend_from_slice(&members[n_held..]);
    }
    kept.sort_unstable();
    held.sort_unstable();
    (kept, held)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub max_seq_len: usize,
    pub resample: ResampleConfig,
    pub train: TrainConfig,
    /// Share of each training portion held out for early stopping.
    pub early_stopping_fraction: f64,
    pub bootstrap_resamples: usize,
    pub ci_level: f64,
    pub master_seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            max_seq_len: crate::features::DEFAULT_MAX_SEQ_LEN,
            resample: ResampleConfig::default(),
            train: TrainConfig::default(),
            early_stopping_fraction: 0.1,
            bootstrap_resamples: 1000,
            ci_level: 0.95,
            master_seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRow {
    pub fold: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_resampled: usize,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub brier: f64,
    pub selected_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAudit {
    pub fold: usize,
    /// Distinct real subjects that fed resampling.
    pub resampled_subjects: usize,
    /// Of those, how many sit in this fold's validation set.
    pub leaked_subjects: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub n_positive: usize,
    pub auroc: f64,
    pub auroc_ci: BootstrapCi,
    pub auprc: f64,
    pub auprc_ci: BootstrapCi,
    pub brier: f64,
    pub fold_auroc: FoldSummary,
    pub fold_auprc: FoldSummary,
    pub fold_brier: FoldSummary,
    pub folds: Vec<FoldRow>,
    pub leakage_audit_passed: bool,
    pub config: CvConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub subject_id: String,
    pub fold: usize,
    pub label: bool,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub report: MetricsReport,
    pub predictions: Vec<Prediction>,
    pub histories: Vec<TrainHistory>,
    pub audit: Vec<FoldAudit>,
}

/// Model fitted on one training portion plus the subjects that entered
/// resampling.
pub struct FittedPipeline {
    pub model: LstmModel,
    pub history: TrainHistory,
    pub n_resampled: usize,
    pub resampled_subjects: BTreeSet<String>,
}

/// Hold out an early-stopping split, resample the remainder, train.
pub fn fit_pipeline(samples: &[FlatSample], config: &CvConfig, seed: u64) -> Result<FittedPipeline> {
    let labels: Vec<bool> = samples.iter().map(|s| s.label).collect();
    let all: Vec<usize> = (0..samples.len()).collect();
    let (inner, stop) = stratified_holdout(&all, &labels, config.early_stopping_fraction, derive_seed(seed, 1));
    let inner_samples: Vec<FlatSample> = inner.iter().map(|&i| samples[i].clone()).collect();
    let stop_samples: Vec<FlatSample> = stop.iter().map(|&i| samples[i].clone()).collect();
    let mut resampled_subjects = BTreeSet::new();
    for s in &inner_samples {
        resampled_subjects.insert(s.subject_id().to_string());
    }
    let train_set = config.resample.apply(inner_samples, derive_seed(seed, 2))?;
    for s in &train_set {
        if let SampleSource::Synthetic { seed, neighbor } = &s.source {
            resampled_subjects.insert(seed.clone());
            resampled_subjects.insert(neighbor.clone());
        }
    }
    let train_config = TrainConfig {
        master_seed: derive_seed(seed, 3),
        ..config.train
    };
    let (model, history) = train_model(&train_set, &stop_samples, &train_config)?;
    Ok(FittedPipeline {
        model,
        history,
        n_resampled: train_set.len(),
        resampled_subjects,
    })
}

fn fold_summary(values: &[f64]) -> FoldSummary {
    if values.is_empty() {
        return FoldSummary { mean: f64::NAN, sd: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    FoldSummary { mean, sd }
}

/// Stratified k-fold CV. Folds run on a pool of `threads` workers (0 = rayon
/// default); results do not depend on the worker count.
pub fn kfold_cv(sequences: &[FeatureSequence], config: &CvConfig, threads: usize) -> Result<CvOutcome> {
    let samples: Vec<FlatSample> = sequences
        .iter()
        .map(|s| flatten(s, config.max_seq_len))
        .collect::<Result<_>>()?;
    let labels: Vec<bool> = samples.iter().map(|s| s.label).collect();
    let fold_of = stratified_folds(&labels, config.folds, derive_seed(config.master_seed, 0))?;

    let run_fold = |f: usize| -> Result<(Vec<(usize, f64)>, FoldRow, TrainHistory, FoldAudit)> {
        let train: Vec<FlatSample> = (0..samples.len())
            .filter(|&i| fold_of[i] != f)
            .map(|i| samples[i].clone())
            .collect();
        let val_idx: Vec<usize> = (0..samples.len()).filter(|&i| fold_of[i] == f).collect();
        let fitted = fit_pipeline(&train, config, derive_seed(config.master_seed, 100 + f as u64))?;
        let scores: Vec<f64> = val_idx
            .iter()
            .map(|&i| fitted.model.predict(&samples[i]))
            .collect::<Result<_>>()?;
        let val_labels: Vec<bool> = val_idx.iter().map(|&i| labels[i]).collect();
        let val_subjects: BTreeSet<&str> = val_idx.iter().map(|&i| samples[i].subject_id()).collect();
        let leaked = fitted
            .resampled_subjects
            .iter()
            .filter(|s| val_subjects.contains(s.as_str()))
            .cloned()
            .collect();
        let row = FoldRow {
            fold: f,
            n_train: train.len(),
            n_val: val_idx.len(),
            n_resampled: fitted.n_resampled,
            auroc: auroc(&scores, &val_labels).ok(),
            auprc: auprc(&scores, &val_labels).ok(),
            brier: brier(&scores, &val_labels)?,
            selected_epoch: fitted.history.selected_epoch,
        };
        let audit = FoldAudit {
            fold: f,
            resampled_subjects: fitted.resampled_subjects.len(),
            leaked_subjects: leaked,
        };
        log::info!(
            "fold {}/{}: auroc {:?}, epoch {}",
            f + 1,
            config.folds,
            row.auroc,
            row.selected_epoch + 1
        );
        Ok((val_idx.into_iter().zip(scores).collect(), row, fitted.history, audit))
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<_> = pool.install(|| {
        (0..config.folds)
            .into_par_iter()
            .map(run_fold)
            .collect::<Result<Vec<_>>>()
    })?;

    let mut oof = vec![f64::NAN; samples.len()];
    let mut rows = Vec::new();
    let mut histories = Vec::new();
    let mut audit = Vec::new();
    for (scored, row, history, a) in results {
        for (i, s) in scored {
            oof[i] = s;
        }
        rows.push(row);
        histories.push(history);
        audit.push(a);
    }
    let seed = config.master_seed;
    let b = config.bootstrap_resamples;
    let report = MetricsReport {
        n_samples: samples.len(),
        n_positive: labels.iter().filter(|&&l| l).count(),
        auroc: auroc(&oof, &labels)?,
        auroc_ci: bootstrap_ci(auroc, &oof, &labels, b, config.ci_level, derive_seed(seed, 10))?,
        auprc: auprc(&oof, &labels)?,
        auprc_ci: bootstrap_ci(auprc, &oof, &labels, b, config.ci_level, derive_seed(seed, 11))?,
        brier: brier(&oof, &labels)?,
        fold_auroc: fold_summary(&rows.iter().filter_map(|r| r.auroc).collect::<Vec<_>>()),
        fold_auprc: fold_summary(&rows.iter().filter_map(|r| r.auprc).collect::<Vec<_>>()),
        fold_brier: fold_summary(&rows.iter().map(|r| r.brier).collect::<Vec<_>>()),
        folds: rows,
        leakage_audit_passed: audit.iter().all(|a| a.leaked_subjects.is_empty()),
        config: config.clone(),
    };
    let predictions = samples
        .iter()
        .zip(&fold_of)
        .zip(&oof)
        .map(|((s, &fold), &score)| Prediction {
            subject_id: s.subject_id().to_string(),
            fold,
            label: s.label,
            score,
        })
        .collect();
    Ok(CvOutcome {
        report,
        predictions,
        histories,
        audit,
    })
}
