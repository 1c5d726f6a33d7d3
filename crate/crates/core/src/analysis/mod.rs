//! Metrics and significance tests over aggregated trial results.

pub mod special;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::protocol::ConditionLabel;
use crate::runner::ConditionResult;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("no trials to score")]
    ZeroTrials,
    #[error("counts are inconsistent: {0}")]
    BadCounts(String),
    #[error("probability {0} lies outside [0, 1]")]
    OutOfRange(f64),
    #[error("sample of size {0} is too small (need at least 2)")]
    Undersized(usize),
    #[error("statistic undefined: {0}")]
    Undefined(String),
    #[error("contingency table has a zero marginal")]
    ZeroMarginal,
    #[error("ticker {0} has no group")]
    Ungrouped(String),
    #[error(
        "no probability data for condition {0}; enable request_logprobs or keep valid trials for the frequency fallback"
    )]
    NoProbabilityData(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceScore {
    pub signed: f64,
    pub pi: f64,
    pub n: u32,
}

/// `signed = (n_buy − n_sell) / n`, `pi = |signed|`.
pub fn preference_score(n_buy: u32, n_sell: u32, n: u32) -> Result<PreferenceScore, AnalysisError> {
    if n == 0 {
        return Err(AnalysisError::ZeroTrials);
    }
    if n_buy + n_sell != n {
        return Err(AnalysisError::BadCounts(format!("{n_buy} buy + {n_sell} sell != {n}")));
    }
    let signed = (n_buy as f64 - n_sell as f64) / n as f64;
    Ok(PreferenceScore { signed, pi: signed.abs(), n })
}

pub fn flip_rate(n_flip: u32, n: u32) -> Result<f64, AnalysisError> {
    if n == 0 {
        return Err(AnalysisError::ZeroTrials);
    }
    if n_flip > n {
        return Err(AnalysisError::BadCounts(format!("{n_flip} flips out of {n}")));
    }
    Ok(n_flip as f64 / n as f64)
}

/// (momentum, contrarian) win rates over trials that produced a winner.
pub fn win_rates(momentum_wins: u32, contrarian_wins: u32) -> Result<(f64, f64), AnalysisError> {
    let total = momentum_wins + contrarian_wins;
    if total == 0 {
        return Err(AnalysisError::ZeroTrials);
    }
    Ok((momentum_wins as f64 / total as f64, contrarian_wins as f64 / total as f64))
}

/// Binary entropy in bits with 0·log 0 = 0.
pub fn shannon_entropy(p_buy: f64) -> Result<f64, AnalysisError> {
    if !(0.0..=1.0).contains(&p_buy) {
        return Err(AnalysisError::OutOfRange(p_buy));
    }
    let term = |p: f64| if p > 0.0 { -p * p.log2() } else { 0.0 };
    Ok(term(p_buy) + term(1.0 - p_buy))
}

pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub df: f64,
    pub diff: f64,
}

impl TestResult {
    pub fn stars(&self) -> &'static str {
        significance_stars(self.p_value)
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch's unequal-variance t-test, two-sided. Two constant samples with equal
/// means give t = 0, p = 1; with different means the statistic is undefined.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TestResult, AnalysisError> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(AnalysisError::Undersized(s.len()));
        }
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let diff = (ma - mb).abs();
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        if ma == mb {
            return Ok(TestResult { statistic: 0.0, p_value: 1.0, df: na + nb - 2.0, diff });
        }
        return Err(AnalysisError::Undefined("both samples have zero variance and different means".into()));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2.powi(2) / (sa.powi(2) / (na - 1.0) + sb.powi(2) / (nb - 1.0));
    Ok(TestResult { statistic: t, p_value: special::student_t_two_sided(t, df), df, diff })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub result: TestResult,
    /// Some expected count is below 5, so the approximation is shaky.
    pub low_expected: bool,
}

/// Pearson chi-square test of independence on a 2×2 table, df = 1.
/// `diff` is the gap between the two rows' first-column proportions.
pub fn chi_square_2x2(table: [[u64; 2]; 2], yates: bool) -> Result<ChiSquare, AnalysisError> {
    let obs = table.map(|r| r.map(|c| c as f64));
    let rows = [obs[0][0] + obs[0][1], obs[1][0] + obs[1][1]];
    let cols = [obs[0][0] + obs[1][0], obs[0][1] + obs[1][1]];
    let total = rows[0] + rows[1];
    if rows.contains(&0.0) || cols.contains(&0.0) {
        return Err(AnalysisError::ZeroMarginal);
    }
    let mut stat = 0.0;
    let mut low_expected = false;
    for i in 0..2 {
        for j in 0..2 {
            let expected = rows[i] * cols[j] / total;
            low_expected |= expected < 5.0;
            let mut dev = (obs[i][j] - expected).abs();
            if yates {
                dev = (dev - 0.5).max(0.0);
            }
            stat += dev * dev / expected;
        }
    }
    let diff = (obs[0][0] / rows[0] - obs[1][0] / rows[1]).abs();
    Ok(ChiSquare {
        result: TestResult { statistic: stat, p_value: special::chi_square_sf(stat, 1.0), df: 1.0, diff },
        low_expected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMean {
    pub group: String,
    pub mean_pi: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTable {
    /// Non-empty groups in label order.
    pub groups: Vec<GroupMean>,
    pub high: String,
    pub low: String,
    /// Groups with no scored member.
    pub empty: Vec<String>,
}

impl GroupTable {
    pub fn get(&self, group: &str) -> Option<&GroupMean> {
        self.groups.iter().find(|g| g.group == group)
    }

    pub fn diff(&self) -> f64 {
        self.get(&self.high).unwrap().mean_pi - self.get(&self.low).unwrap().mean_pi
    }
}

/// Mean π per group plus the highest and lowest groups (first in label order
/// on ties).
pub fn group_preference_table(
    scores: &BTreeMap<String, f64>,
    grouping: &BTreeMap<String, String>,
) -> Result<GroupTable, AnalysisError> {
    let mut sums: BTreeMap<&str, (f64, usize)> = grouping.values().map(|g| (g.as_str(), (0.0, 0))).collect();
    for (ticker, pi) in scores {
        let group = grouping.get(ticker).ok_or_else(|| AnalysisError::Ungrouped(ticker.clone()))?;
        let entry = sums.get_mut(group.as_str()).expect("group present");
        entry.0 += pi;
        entry.1 += 1;
    }
    let mut groups = Vec::new();
    let mut empty = Vec::new();
    for (group, (sum, n)) in sums {
        if n == 0 {
            tracing::warn!(group, "group has no scored stocks; excluded");
            empty.push(group.to_string());
        } else {
            groups.push(GroupMean { group: group.to_string(), mean_pi: sum / n as f64, n });
        }
    }
    if groups.is_empty() {
        return Err(AnalysisError::ZeroTrials);
    }
    let mut high = &groups[0];
    let mut low = &groups[0];
    for g in &groups[1..] {
        if g.mean_pi > high.mean_pi {
            high = g;
        }
        if g.mean_pi < low.mean_pi {
            low = g;
        }
    }
    let (high, low) = (high.group.clone(), low.group.clone());
    Ok(GroupTable { groups, high, low, empty })
}

/// Per-stock π samples of two groups, for the high/low t-test.
pub fn group_samples(scores: &BTreeMap<String, f64>, grouping: &BTreeMap<String, String>, group: &str) -> Vec<f64> {
    scores.iter().filter(|(t, _)| grouping.get(*t).map(String::as_str) == Some(group)).map(|(_, pi)| *pi).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropySource {
    Logprob,
    Frequency,
    Mixed,
}

impl EntropySource {
    pub fn as_str(self) -> &'static str {
        match self {
            EntropySource::Logprob => "logprob",
            EntropySource::Frequency => "frequency",
            EntropySource::Mixed => "mixed",
        }
    }
}

/// Entropy of one aggregated condition: from the mean action-token
/// probability when present, else from the buy frequency.
pub fn result_entropy(r: &ConditionResult) -> Option<(f64, EntropySource)> {
    if let Some(p) = r.mean_p_buy {
        return shannon_entropy(p).ok().map(|h| (h, EntropySource::Logprob));
    }
    if r.n_valid == 0 {
        return None;
    }
    let p = r.n_buy as f64 / r.n_valid as f64;
    shannon_entropy(p).ok().map(|h| (h, EntropySource::Frequency))
}

/// Coarse condition key that ignores the preferred side, so stocks whose
/// groups point different ways pool together.
pub fn condition_class(label: &ConditionLabel) -> String {
    match label {
        ConditionLabel::Balanced { .. } => "balanced".into(),
        ConditionLabel::Volume { support_n, counter_n, .. } => format!("volume({support_n}|{counter_n})"),
        ConditionLabel::Intensity { delta_pct, .. } => {
            format!("intensity(+{})", crate::evidence::format_intensity(*delta_pct))
        }
        ConditionLabel::Style { .. } => "style".into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub model: String,
    pub condition: String,
    pub mean_bits: f64,
    pub n_stocks: usize,
    pub source: EntropySource,
}

/// Mean entropy over stocks per (model, condition class) among the results
/// accepted by `filter`. Unauditable results are skipped.
pub fn entropy_summary(
    results: &[ConditionResult],
    filter: impl Fn(&ConditionResult) -> bool,
) -> Result<Vec<EntropyRow>, AnalysisError> {
    let mut acc: BTreeMap<(String, String), (f64, usize, Option<EntropySource>)> = BTreeMap::new();
    let mut seen: Vec<(String, String)> = Vec::new();
    for r in results.iter().filter(|r| filter(r) && !r.unauditable) {
        let key = (r.model.clone(), condition_class(&r.condition));
        if !seen.contains(&key) {
            seen.push(key.clone());
        }
        let Some((h, source)) = result_entropy(r) else { continue };
        let entry = acc.entry(key).or_insert((0.0, 0, None));
        entry.0 += h;
        entry.1 += 1;
        entry.2 = Some(match entry.2 {
            None => source,
            Some(s) if s == source => s,
            Some(_) => EntropySource::Mixed,
        });
    }
    seen.into_iter()
        .map(|key| {
            let (sum, n, source) =
                acc.get(&key).copied().ok_or_else(|| AnalysisError::NoProbabilityData(key.1.clone()))?;
            Ok(EntropyRow {
                model: key.0,
                condition: key.1,
                mean_bits: sum / n as f64,
                n_stocks: n,
                source: source.expect("set with the first sample"),
            })
        })
        .collect()
}
