//! Kaplan-Meier estimation of time to delirium, Greenwood variance with
//! linear or log-log confidence bands, and the two-sample log-rank test.
//!
//! Durations are in months of 30.4375 days. At tied times events are
//! processed before censorings, so a subject censored at `t` is still at risk
//! for events at `t`.

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::cohort::CohortAssignment;
use crate::error::{Error, Result};
use crate::stats::{chi2_sf, z_quantile};

pub const DAYS_PER_MONTH: f64 = 30.4375;

pub const KM_TABLE_HEADER: &str = "time_months,n_at_risk,n_events,survival,var,ci_lo,ci_hi";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalObservation {
    pub duration: f64,
    /// `true` when delirium was observed, `false` when right-censored.
    pub event: bool,
}

impl SurvivalObservation {
    pub fn new(duration: f64, event: bool) -> Result<Self> {
        if !duration.is_finite() || duration < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "survival duration must be finite and non-negative, got {duration}"
            )));
        }
        Ok(Self { duration, event })
    }
}

pub fn months_between(from: NaiveDate, to: NaiveDate) -> f64 {
    (to - from).num_days() as f64 / DAYS_PER_MONTH
}

/// Time from the index admission to the first delirium admission, or to
/// censoring at the earlier of last discharge and `study_end`.
pub fn to_survival(assignment: &CohortAssignment, study_end: NaiveDate) -> Result<SurvivalObservation> {
    if assignment.excluded {
        return Err(Error::InvalidParameter(format!(
            "subject {} is excluded from the cohort",
            assignment.subject_id
        )));
    }
    let index = assignment.index_admission_time.ok_or_else(|| {
        Error::DataInconsistency(format!("subject {} has no index admission", assignment.subject_id))
    })?;
    match assignment.first_delirium_time {
        Some(onset) => {
            if onset < index {
                return Err(Error::DataInconsistency(format!(
                    "subject {}: delirium onset {onset} precedes index admission {index}",
                    assignment.subject_id
                )));
            }
            SurvivalObservation::new(months_between(index, onset), true)
        }
        None => {
            let last = assignment.last_discharge_time.unwrap_or(index);
            let end = last.min(study_end).max(index);
            SurvivalObservation::new(months_between(index, end), false)
        }
    }
}

// ── Kaplan-Meier ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandTransform {
    Linear,
    LogLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KmRow {
    pub time: f64,
    pub n_at_risk: usize,
    pub n_events: usize,
    pub survival: f64,
    /// Greenwood variance; `+inf` once a risk set is exhausted by events.
    pub greenwood_var: f64,
    /// Σ d/(n(n−d)) up to this time.
    pub greenwood_sum: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KmCurve {
    /// One row per distinct event time, ascending.
    pub rows: Vec<KmRow>,
    pub n: usize,
    pub n_events: usize,
    pub band: Option<(BandTransform, f64)>,
}

/// Running product of (n − d)/n kept as a reduced integer fraction while the
/// denominator is exactly representable, so small samples come out correctly
/// rounded.
#[derive(Debug, Clone, Copy)]
enum ProductLimit {
    Exact { num: u64, den: u64 },
    Float(f64),
}

const EXACT_LIMIT: u64 = 1 << 53;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl ProductLimit {
    fn value(self) -> f64 {
        match self {
            ProductLimit::Exact { num, den } => num as f64 / den as f64,
            ProductLimit::Float(s) => s,
        }
    }

    fn step(self, at_risk: u64, events: u64) -> Self {
        match self {
            ProductLimit::Exact { num, den } => {
                let (mut f_num, mut f_den) = (at_risk - events, at_risk);
                let g = gcd(f_num, f_den).max(1);
                (f_num, f_den) = (f_num / g, f_den / g);
                // cross-reduce before multiplying
                let g1 = gcd(num, f_den).max(1);
                let g2 = gcd(f_num, den).max(1);
                let n = (num / g1) as u128 * (f_num / g2) as u128;
                let d = (den / g2) as u128 * (f_den / g1) as u128;
                if n == 0 {
                    ProductLimit::Exact { num: 0, den: 1 }
                } else if d < EXACT_LIMIT as u128 {
                    ProductLimit::Exact {
                        num: n as u64,
                        den: d as u64,
                    }
                } else {
                    ProductLimit::Float(self.value() * (at_risk - events) as f64 / at_risk as f64)
                }
            }
            ProductLimit::Float(s) => {
                ProductLimit::Float(s * (at_risk - events) as f64 / at_risk as f64)
            }
        }
    }
}

/// Distinct times with (events, censored) counts, ascending.
fn tabulate(obs: &[SurvivalObservation]) -> Vec<(f64, usize, usize)> {
    let mut sorted: Vec<_> = obs.to_vec();
    sorted.sort_by(|a, b| a.duration.total_cmp(&b.duration));
    let mut out: Vec<(f64, usize, usize)> = Vec::new();
    for o in sorted {
        match out.last_mut() {
            Some(last) if last.0 == o.duration => {
                if o.event {
                    last.1 += 1
                } else {
                    last.2 += 1
                }
            }
            _ => out.push((o.duration, usize::from(o.event), usize::from(!o.event))),
        }
    }
    out
}

/// Product-limit estimate with Greenwood variance; confidence columns are
/// left empty until [`greenwood_band`].
pub fn km_fit(obs: &[SurvivalObservation]) -> Result<KmCurve> {
    if obs.is_empty() {
        return Err(Error::EmptyInput("Kaplan-Meier fit needs at least one observation".into()));
    }
    let mut at_risk = obs.len();
    let mut product = ProductLimit::Exact { num: 1, den: 1 };
    let mut greenwood_sum = 0.0;
    let mut rows = Vec::new();
    for (time, events, censored) in tabulate(obs) {
        if events > 0 {
            product = product.step(at_risk as u64, events as u64);
            let degenerate = events == at_risk;
            if degenerate {
                greenwood_sum = f64::INFINITY;
            } else {
                greenwood_sum += events as f64 / (at_risk as f64 * (at_risk - events) as f64);
            }
            let survival = product.value();
            let greenwood_var = if greenwood_sum.is_infinite() {
                f64::INFINITY
            } else {
                survival * survival * greenwood_sum
            };
            rows.push(KmRow {
                time,
                n_at_risk: at_risk,
                n_events: events,
                survival,
                greenwood_var,
                greenwood_sum,
                ci_lo: None,
                ci_hi: None,
                degenerate: greenwood_sum.is_infinite(),
            });
        }
        at_risk -= events + censored;
    }
    Ok(KmCurve {
        n: obs.len(),
        n_events: obs.iter().filter(|o| o.event).count(),
        rows,
        band: None,
    })
}

fn band(survival: f64, greenwood_sum: f64, z: f64, transform: BandTransform) -> (f64, f64) {
    if greenwood_sum.is_infinite() {
        return (0.0, survival);
    }
    if greenwood_sum == 0.0 || survival >= 1.0 {
        return (survival, survival);
    }
    if survival <= 0.0 {
        return (0.0, 0.0);
    }
    match transform {
        BandTransform::Linear => {
            let se = survival * greenwood_sum.sqrt();
            ((survival - z * se).max(0.0), (survival + z * se).min(1.0))
        }
        BandTransform::LogLog => {
            // SE of log(−log S) by the delta method
            let se = greenwood_sum.sqrt() / survival.ln().abs();
            (
                survival.powf((z * se).exp()),
                survival.powf((-z * se).exp()),
            )
        }
    }
}

/// Fill the confidence columns at the given level.
pub fn greenwood_band(curve: &KmCurve, level: f64, transform: BandTransform) -> Result<KmCurve> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("confidence level {level} not in (0, 1)")));
    }
    let z = z_quantile((1.0 + level) / 2.0)?;
    let mut out = curve.clone();
    for row in &mut out.rows {
        let (lo, hi) = band(row.survival, row.greenwood_sum, z, transform);
        row.ci_lo = Some(lo);
        row.ci_hi = Some(hi);
    }
    out.band = Some((transform, level));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KmPoint {
    pub time: f64,
    pub survival: f64,
    pub greenwood_var: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl KmCurve {
    /// Step-function value at `t`. Bands come from the fitted band settings
    /// (or a 95% log-log band if none were set).
    pub fn at(&self, t: f64) -> KmPoint {
        let (transform, level) = self.band.unwrap_or((BandTransform::LogLog, 0.95));
        let z = z_quantile((1.0 + level) / 2.0).expect("level validated");
        match self.rows.iter().rev().find(|r| r.time <= t) {
            None => KmPoint {
                time: t,
                survival: 1.0,
                greenwood_var: 0.0,
                ci_lo: 1.0,
                ci_hi: 1.0,
            },
            Some(r) => {
                let (lo, hi) = band(r.survival, r.greenwood_sum, z, transform);
                KmPoint {
                    time: t,
                    survival: r.survival,
                    greenwood_var: r.greenwood_var,
                    ci_lo: lo,
                    ci_hi: hi,
                }
            }
        }
    }

    /// Smallest event time with S(t) ≤ 0.5.
    pub fn median(&self) -> Option<f64> {
        self.rows.iter().find(|r| r.survival <= 0.5).map(|r| r.time)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{KM_TABLE_HEADER}")?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                w,
                "{:.6},{},{},{:.6},{:.6e},{},{}",
                r.time,
                r.n_at_risk,
                r.n_events,
                r.survival,
                r.greenwood_var,
                opt(r.ci_lo),
                opt(r.ci_hi)
            )?;
        }
        Ok(())
    }
}

// ── Log-rank ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRankResult {
    pub statistic: f64,
    pub p_value: f64,
    pub observed: [f64; 2],
    pub expected: [f64; 2],
    pub variance: f64,
}

/// Two-sample log-rank test with hypergeometric variance.
pub fn logrank_test(
    group_a: &[SurvivalObservation],
    group_b: &[SurvivalObservation],
) -> Result<LogRankResult> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(Error::EmptyInput("log-rank test needs two non-empty groups".into()));
    }
    let table_a = tabulate(group_a);
    let table_b = tabulate(group_b);
    let mut times: Vec<f64> = table_a.iter().chain(&table_b).map(|t| t.0).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();

    let (mut n_a, mut n_b) = (group_a.len() as f64, group_b.len() as f64);
    let (mut ia, mut ib) = (0, 0);
    let mut observed = [0.0; 2];
    let mut expected = [0.0; 2];
    let mut variance = 0.0;
    for t in times {
        let take = |table: &[(f64, usize, usize)], i: &mut usize| match table.get(*i) {
            Some(&(time, d, c)) if time == t => {
                *i += 1;
                (d as f64, c as f64)
            }
            _ => (0.0, 0.0),
        };
        let (d_a, c_a) = take(&table_a, &mut ia);
        let (d_b, c_b) = take(&table_b, &mut ib);
        let d = d_a + d_b;
        let n = n_a + n_b;
        if d > 0.0 {
            observed[0] += d_a;
            observed[1] += d_b;
            expected[0] += n_a * d / n;
            expected[1] += n_b * d / n;
            if n > 1.0 {
                variance += d * (n - d) * n_a * n_b / (n * n * (n - 1.0));
            }
        }
        n_a -= d_a + c_a;
        n_b -= d_b + c_b;
    }
    if observed[0] + observed[1] == 0.0 {
        return Err(Error::NotTestable("log-rank test with zero events".into()));
    }
    if variance <= 0.0 {
        return Err(Error::NotTestable("log-rank variance is zero".into()));
    }
    let diff = observed[0] - expected[0];
    let statistic = diff * diff / variance;
    Ok(LogRankResult {
        statistic,
        p_value: chi2_sf(statistic, 1)?,
        observed,
        expected,
        variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(pairs: &[(f64, bool)]) -> Vec<SurvivalObservation> {
        pairs
            .iter()
            .map(|&(d, e)| SurvivalObservation::new(d, e).unwrap())
            .collect()
    }

    fn assignment(index: NaiveDate, onset: Option<NaiveDate>, last: NaiveDate) -> CohortAssignment {
        CohortAssignment {
            subject_id: "1".into(),
            excluded: false,
            exclusion_reasons: vec![],
            is_mci: false,
            has_delirium: onset.is_some(),
            first_delirium_time: onset,
            index_admission_time: Some(index),
            last_discharge_time: Some(last),
        }
    }

    #[test]
    fn survival_durations() {
        let d0 = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
        let end = NaiveDate::from_ymd_opt(2030, 1, 1).unwrap();
        let o = to_survival(&assignment(d0, Some(d0), d0), end).unwrap();
        assert_eq!((o.duration, o.event), (0.0, true));

        let o = to_survival(&assignment(d0, None, d0 + chrono::Duration::days(10)), end).unwrap();
        assert!(!o.event);
        assert!((o.duration - 10.0 / 30.4375).abs() < 1e-12);
        assert!((o.duration - 0.3285).abs() < 1e-4);

        // a Julian year is exactly twelve months
        assert_eq!(365.25 / DAYS_PER_MONTH, 12.0);
        let four_years = d0 + chrono::Duration::days(4 * 365 + 1);
        let o = to_survival(&assignment(d0, Some(four_years), four_years), end).unwrap();
        assert_eq!(o.duration, 48.0);

        // censored at study end when discharge is later
        let early_end = d0 + chrono::Duration::days(30);
        let o = to_survival(&assignment(d0, None, d0 + chrono::Duration::days(300)), early_end).unwrap();
        assert!((o.duration - 30.0 / 30.4375).abs() < 1e-12);

        let before = d0 - chrono::Duration::days(1);
        assert!(matches!(
            to_survival(&assignment(d0, Some(before), d0), end),
            Err(Error::DataInconsistency(_))
        ));
    }

    #[test]
    fn three_point_example() {
        let c = km_fit(&obs(&[(1.0, true), (2.0, true), (3.0, false)])).unwrap();
        assert_eq!(c.rows.len(), 2);
        assert_eq!(c.rows[0].survival, 2.0 / 3.0);
        assert_eq!(c.rows[1].survival, 1.0 / 3.0);
        assert_eq!(c.at(3.0).survival, 1.0 / 3.0);
        assert_eq!(c.at(0.5).survival, 1.0);
        // Greenwood at t = 2: (1/3)² (1/6 + 1/2) = 2/27
        assert!((c.rows[1].greenwood_var - 2.0 / 27.0).abs() < 1e-15);
        assert!((c.rows[1].greenwood_var.sqrt() - 0.272).abs() < 5e-4);
    }

    #[test]
    fn all_censored_and_all_events() {
        let c = km_fit(&obs(&[(1.0, false), (2.0, false)])).unwrap();
        assert!(c.rows.is_empty());
        let p = c.at(10.0);
        assert_eq!((p.survival, p.greenwood_var, p.ci_lo, p.ci_hi), (1.0, 0.0, 1.0, 1.0));

        let c = km_fit(&obs(&[(2.0, true); 4])).unwrap();
        assert_eq!(c.rows.len(), 1);
        assert_eq!(c.rows[0].survival, 0.0);
        assert!(c.rows[0].degenerate);
        assert!(c.rows[0].greenwood_var.is_infinite());
        let banded = greenwood_band(&c, 0.95, BandTransform::LogLog).unwrap();
        assert_eq!((banded.rows[0].ci_lo, banded.rows[0].ci_hi), (Some(0.0), Some(0.0)));

        assert!(km_fit(&[]).is_err());
    }

    #[test]
    fn events_precede_censoring_at_ties() {
        let c = km_fit(&obs(&[(1.0, true), (1.0, false), (2.0, true)])).unwrap();
        assert_eq!(c.rows[0].n_at_risk, 3);
        assert_eq!(c.rows[1].n_at_risk, 1);
        assert_eq!(c.rows[0].survival, 2.0 / 3.0);
        assert_eq!(c.rows[1].survival, 0.0);
    }

    #[test]
    fn loglog_band_is_asymmetric_near_one() {
        // 1 event among 33 → S = 32/33 ≈ 0.9697
        let mut v = vec![(6.0, true)];
        v.extend(std::iter::repeat_n((30.0, false), 32));
        let c = greenwood_band(&km_fit(&obs(&v)).unwrap(), 0.95, BandTransform::LogLog).unwrap();
        let r = c.rows[0];
        assert!((r.survival - 0.9697).abs() < 1e-4);
        let (lo, hi) = (r.ci_lo.unwrap(), r.ci_hi.unwrap());
        assert!(hi - r.survival < r.survival - lo);
        assert!(lo > 0.0 && hi < 1.0);

        let lin = greenwood_band(&km_fit(&obs(&v)).unwrap(), 0.95, BandTransform::Linear).unwrap();
        let r = lin.rows[0];
        let (lo, hi) = (r.ci_lo.unwrap(), r.ci_hi.unwrap());
        // upper clipped at 1 here; lower is the unclipped S − z·SE
        assert_eq!(hi, 1.0);
        assert!((r.survival - lo - 1.959964 * r.greenwood_var.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn logrank_examples() {
        let g = obs(&[(1.0, true), (2.0, false), (3.0, true), (4.0, true)]);
        let r = logrank_test(&g, &g).unwrap();
        assert!(r.statistic.abs() < 1e-15);
        assert!((r.p_value - 1.0).abs() < 1e-12);

        let a = obs(&[(1.0, true); 20]);
        let b = obs(&[(10.0, false); 20]);
        let r = logrank_test(&a, &b).unwrap();
        assert!(r.p_value < 0.001);
        assert_eq!(r.observed, [20.0, 0.0]);

        let none = obs(&[(1.0, false)]);
        assert!(matches!(logrank_test(&none, &none), Err(Error::NotTestable(_))));
        assert!(logrank_test(&[], &g).is_err());
    }
}
