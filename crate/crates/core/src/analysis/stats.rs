//! Summary statistics, win counting and the one-sided sign test.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AnalysisError;

/// Mean and sample standard deviation of a group of scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// `None` for a single observation.
    pub std: Option<f64>,
}

impl Summary {
    /// `0.83 ± 0.007`, or `0.83 ± —` when the deviation is undefined.
    pub fn render(&self) -> String {
        match self.std {
            Some(s) => format!("{:.2} ± {:.3}", self.mean, s),
            None => format!("{:.2} ± —", self.mean),
        }
    }
}

/// Scores are sorted before summing so the result does not depend on input
/// order.
pub fn summarize(scores: &[f64]) -> Result<Summary, AnalysisError> {
    if scores.is_empty() {
        return Err(AnalysisError::EmptyGroup);
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(AnalysisError::Domain(format!("non-finite score {bad}")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let std = (n > 1).then(|| {
        let mut dev: Vec<f64> = sorted.iter().map(|x| (x - mean) * (x - mean)).collect();
        dev.sort_by(f64::total_cmp);
        (dev.iter().sum::<f64>() / (n - 1) as f64).sqrt()
    });
    Ok(Summary { n, mean, std })
}

/// One observed score, labeled for grouping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub dataset: String,
    pub metric: String,
    pub method: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub dataset: String,
    pub metric: String,
    pub method: String,
    pub summary: Summary,
}

/// Mean ± std per (dataset, metric, method), sorted by that key.
pub fn aggregate(rows: &[ScoreRow]) -> Result<Vec<AggregateRow>, AnalysisError> {
    if rows.is_empty() {
        return Err(AnalysisError::EmptyGroup);
    }
    let mut groups: BTreeMap<(&str, &str, &str), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((&r.dataset, &r.metric, &r.method))
            .or_default()
            .push(r.score);
    }
    groups
        .into_iter()
        .map(|((dataset, metric, method), scores)| {
            Ok(AggregateRow {
                dataset: dataset.to_string(),
                metric: metric.to_string(),
                method: method.to_string(),
                summary: summarize(&scores)?,
            })
        })
        .collect()
}

/// Per-image scores of two methods on the same target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonPair {
    pub image_id: String,
    pub dataset: String,
    pub metric: String,
    pub score_a: f64,
    pub score_b: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WinSummary {
    pub wins_a: u64,
    pub wins_b: u64,
    pub ties: u64,
}

impl WinSummary {
    pub fn total(&self) -> u64 {
        self.wins_a + self.wins_b + self.ties
    }

    /// Share of decided comparisons won by A, in percent.
    pub fn preference_a(&self) -> Option<f64> {
        let decided = self.wins_a + self.wins_b;
        (decided > 0).then(|| 100.0 * self.wins_a as f64 / decided as f64)
    }

    /// One-sided p-value for "A wins more often than B", ties excluded.
    pub fn p_value(&self) -> Option<f64> {
        binomial_one_sided(self.wins_a, self.wins_a + self.wins_b).ok()
    }

    pub fn add(&self, other: &WinSummary) -> WinSummary {
        WinSummary {
            wins_a: self.wins_a + other.wins_a,
            wins_b: self.wins_b + other.wins_b,
            ties: self.ties + other.ties,
        }
    }
}

/// Strictly greater counts as a win; exact equality is a tie.
pub fn win_counts<'a>(pairs: impl IntoIterator<Item = &'a ComparisonPair>) -> WinSummary {
    let mut w = WinSummary::default();
    for p in pairs {
        if p.score_a > p.score_b {
            w.wins_a += 1;
        } else if p.score_b > p.score_a {
            w.wins_b += 1;
        } else {
            w.ties += 1;
        }
    }
    w
}

const EXACT_LIMIT: u64 = 120;
const LOG_LIMIT: u64 = 1_000_000;

/// Neumaier-compensated running sum.
#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// P(X ≥ k) for X ~ Binomial(n, 1/2).
///
/// Up to n = 120 the tail is summed in 128-bit integers and divided once,
/// so the result is correctly rounded. Larger n use log-space pmf terms:
/// ln P(X = m) at the mode m is a compensated sum of log ratios, and every
/// other term walks outward from the mode. Terms do not depend on k and are
/// added smallest first, so the result is non-increasing in k. Tails below
/// the smallest positive double come out as 0.
pub fn binomial_one_sided(k: u64, n: u64) -> Result<f64, AnalysisError> {
    if n == 0 || k > n {
        return Err(AnalysisError::Domain(format!("need 0 <= k <= n and n >= 1, got k={k}, n={n}")));
    }
    if n > LOG_LIMIT {
        return Err(AnalysisError::Domain(format!("n={n} exceeds {LOG_LIMIT}")));
    }
    if k == 0 {
        return Ok(1.0);
    }
    if n <= EXACT_LIMIT {
        let mut c: u128 = 1;
        let mut tail: u128 = 0;
        for i in 1..=n {
            // C(n, i) = C(n, i-1) * (n - i + 1) / i, exact at every step.
            c = c * (n - i + 1) as u128 / i as u128;
            if i >= k {
                tail += c;
            }
        }
        return Ok(tail as f64 / 2f64.powi(n as i32));
    }
    Ok(log_space_tail(k, n))
}

fn ln_ratio(num: u64, den: u64) -> f64 {
    (num as f64 / den as f64).ln()
}

fn log_space_tail(k: u64, n: u64) -> f64 {
    let mode = n / 2;
    let mut ln_mode = CompensatedSum::default();
    for j in 1..=mode {
        ln_mode.add(ln_ratio(n - j + 1, j));
    }
    ln_mode.add(-(n as f64) * std::f64::consts::LN_2);
    let ln_mode = ln_mode.value();

    // ln P(X = i) for i in k..=n, indexed from k.
    let lo = k.min(mode);
    let mut terms = vec![0.0f64; (n - k + 1) as usize];
    let mut walk = CompensatedSum::default();
    walk.add(ln_mode);
    for i in mode..=n {
        if i >= k {
            terms[(i - k) as usize] = walk.value();
        }
        if i < n {
            walk.add(ln_ratio(n - i, i + 1));
        }
    }
    let mut walk = CompensatedSum::default();
    walk.add(ln_mode);
    for i in (lo..mode).rev() {
        walk.add(ln_ratio(i + 1, n - i));
        terms[(i - k) as usize] = walk.value();
    }
    let tail: f64 = terms.iter().rev().map(|t| t.exp()).sum();
    tail.min(1.0)
}
