//! Proportions with Wald intervals, Pearson chi-square tests on 2×2 tables,
//! and the two-group comorbidity comparison built from them.

pub mod special;

use std::io::Write;

use serde::Serialize;

use crate::comorbidity::{ComorbidityFlags, Condition};
use crate::error::{Error, Result};

pub use special::{chi2_sf, erfc, normal_cdf, z_quantile};

/// Percentile by linear interpolation between order statistics at plotting
/// positions (k − 0.5)/n (Hazen). For {70, 72, 74, 76} the quartiles are 71
/// and 75. Returns `None` for empty input.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let h = (n as f64 * p + 0.5).clamp(1.0, n as f64);
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let lower = sorted[lo - 1];
    if lo == n {
        return Some(lower);
    }
    Some(lower + frac * (sorted[lo] - lower))
}

// ── Proportions ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProportionEstimate {
    pub k: u64,
    pub n: u64,
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub level: f64,
}

/// p̂ ± z·sqrt(p̂(1−p̂)/n), clipped to [0, 1].
pub fn wald_ci(k: u64, n: u64, level: f64) -> Result<ProportionEstimate> {
    if n == 0 {
        return Err(Error::InvalidParameter("proportion undefined for n = 0".into()));
    }
    if k > n {
        return Err(Error::InvalidParameter(format!("k = {k} exceeds n = {n}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("confidence level {level} not in (0, 1)")));
    }
    let z = z_quantile((1.0 + level) / 2.0)?;
    let p_hat = k as f64 / n as f64;
    let half = z * (p_hat * (1.0 - p_hat) / n as f64).sqrt();
    Ok(ProportionEstimate {
        k,
        n,
        p_hat,
        ci_lo: (p_hat - half).max(0.0),
        ci_hi: (p_hat + half).min(1.0),
        level,
    })
}

// ── Chi-square ──────────────────────────────────────────────────────────────

/// Rows are groups, columns are condition present / absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TwoByTwo {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl TwoByTwo {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        Self { a, b, c, d }
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    pub fn is_degenerate(&self) -> bool {
        let Self { a, b, c, d } = *self;
        a + b == 0 || c + d == 0 || a + c == 0 || b + d == 0
    }

    pub fn swap_rows(self) -> Self {
        Self::new(self.c, self.d, self.a, self.b)
    }

    pub fn swap_columns(self) -> Self {
        Self::new(self.b, self.a, self.d, self.c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
}

/// Pearson chi-square test of independence, df = 1. With `yates`, |ad − bc| is
/// reduced by N/2 (floored at zero) before squaring.
pub fn chi2_test_2x2(t: TwoByTwo, yates: bool) -> Result<ChiSquareResult> {
    if t.is_degenerate() {
        return Err(Error::DegenerateTable);
    }
    let [a, b, c, d] = [t.a, t.b, t.c, t.d].map(|x| x as f64);
    let n = a + b + c + d;
    let mut diff = (a * d - b * c).abs();
    if yates {
        diff = (diff - n / 2.0).max(0.0);
    }
    let statistic = n * diff * diff / ((a + b) * (c + d) * (a + c) * (b + d));
    Ok(ChiSquareResult {
        statistic,
        df: 1,
        p_value: chi2_sf(statistic, 1)?,
    })
}

// ── Two-group comorbidity comparison ────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComorbidityRow {
    pub condition: Condition,
    pub group1: ProportionEstimate,
    pub group2: ProportionEstimate,
    /// `None` when the 2×2 table has a zero marginal.
    pub test: Option<ChiSquareResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComorbidityTable {
    pub group1: String,
    pub group2: String,
    pub rows: Vec<ComorbidityRow>,
}

pub const COMORBIDITY_TABLE_HEADER: &str = "condition,group1_k,group1_n,group1_p,group1_lo,group1_hi,\
group2_k,group2_n,group2_p,group2_lo,group2_hi,chi2,p_value,degenerate";

/// One row per condition: prevalence with Wald CI in each group and the
/// uncorrected chi-square test of the contrast.
pub fn comorbidity_table(
    group1: (&str, &[ComorbidityFlags]),
    group2: (&str, &[ComorbidityFlags]),
    level: f64,
) -> Result<ComorbidityTable> {
    if group1.1.is_empty() || group2.1.is_empty() {
        return Err(Error::EmptyInput(format!(
            "comorbidity contrast {} vs {} needs both groups non-empty",
            group1.0, group2.0
        )));
    }
    let count = |flags: &[ComorbidityFlags], c: Condition| {
        flags.iter().filter(|f| f.get(c)).count() as u64
    };
    let (n1, n2) = (group1.1.len() as u64, group2.1.len() as u64);
    let rows = Condition::ALL
        .into_iter()
        .map(|c| {
            let (k1, k2) = (count(group1.1, c), count(group2.1, c));
            let table = TwoByTwo::new(k1, n1 - k1, k2, n2 - k2);
            Ok(ComorbidityRow {
                condition: c,
                group1: wald_ci(k1, n1, level)?,
                group2: wald_ci(k2, n2, level)?,
                test: chi2_test_2x2(table, false).ok(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComorbidityTable {
        group1: group1.0.to_string(),
        group2: group2.0.to_string(),
        rows,
    })
}

impl ComorbidityTable {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{COMORBIDITY_TABLE_HEADER}")?;
        for r in &self.rows {
            let (chi2, p) = match r.test {
                Some(t) => (format!("{:.6}", t.statistic), format!("{:.6e}", t.p_value)),
                None => (String::new(), String::new()),
            };
            writeln!(
                w,
                "{},{},{},{:.6},{:.6},{:.6},{},{},{:.6},{:.6},{:.6},{},{},{}",
                r.condition.key(),
                r.group1.k,
                r.group1.n,
                r.group1.p_hat,
                r.group1.ci_lo,
                r.group1.ci_hi,
                r.group2.k,
                r.group2.n,
                r.group2.p_hat,
                r.group2.ci_lo,
                r.group2.ci_hi,
                chi2,
                p,
                u8::from(r.test.is_none())
            )?;
        }
        Ok(())
    }
}
