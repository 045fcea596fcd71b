//! Per-scenario adequacy metrics and cross-scenario risk operators.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Unserved energy, MWh.
    #[default]
    Ue,
    /// Loss-of-load hours.
    Lolh,
    /// Loss-of-load days.
    Lold,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Ue => "ue",
            Metric::Lolh => "lolh",
            Metric::Lold => "lold",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ue" | "eue" => Ok(Metric::Ue),
            "lolh" => Ok(Metric::Lolh),
            "lold" => Ok(Metric::Lold),
            other => Err(Error::invalid("metric", format!("unknown metric '{other}' (expected ue, lolh, lold)"))),
        }
    }
}

pub fn metric_ue(shortfall: &[f64]) -> f64 {
    shortfall.iter().sum()
}

pub fn metric_lolh(shortfall: &[f64]) -> f64 {
    shortfall.iter().filter(|&&s| s > 0.0).count() as f64
}

/// Days (contiguous blocks of `hours_per_day`, starting at hour 0) with any shortfall.
pub fn metric_lold(shortfall: &[f64], hours_per_day: usize) -> Result<f64> {
    if hours_per_day == 0 || !shortfall.len().is_multiple_of(hours_per_day) {
        return Err(Error::IndivisibleHorizon {
            horizon: shortfall.len(),
            hours_per_day,
        });
    }
    Ok(lold_unchecked(shortfall, hours_per_day))
}

fn lold_unchecked(shortfall: &[f64], hours_per_day: usize) -> f64 {
    shortfall
        .chunks(hours_per_day)
        .filter(|day| day.iter().any(|&s| s > 0.0))
        .count() as f64
}

/// All three metrics of one scenario.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ScenarioMetrics {
    pub ue: f64,
    pub lolh: f64,
    pub lold: f64,
}

impl ScenarioMetrics {
    /// `hours_per_day` must divide the shortfall length (guaranteed for validated systems).
    pub fn from_shortfall(shortfall: &[f64], hours_per_day: usize) -> Self {
        Self {
            ue: metric_ue(shortfall),
            lolh: metric_lolh(shortfall),
            lold: lold_unchecked(shortfall, hours_per_day),
        }
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Ue => self.ue,
            Metric::Lolh => self.lolh,
            Metric::Lold => self.lold,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RiskOperator {
    Expectation,
    /// Upper-tail average over the worst `1 - beta` share of scenarios.
    Cvar { beta: f64 },
}

impl FromStr for RiskOperator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        if lower == "expectation" || lower == "mean" {
            return Ok(RiskOperator::Expectation);
        }
        if let Some(rest) = lower.strip_prefix("cvar") {
            let beta: f64 = rest
                .trim_start_matches([':', '=', '(', ' '])
                .trim_end_matches(')')
                .parse()
                .map_err(|_| Error::invalid("risk", format!("cannot parse CVaR level in '{s}'")))?;
            if !(beta > 0.0 && beta < 1.0) {
                return Err(Error::invalid("risk", "CVaR beta must lie in (0, 1)"));
            }
            return Ok(RiskOperator::Cvar { beta });
        }
        Err(Error::invalid("risk", format!("unknown risk operator '{s}' (expected expectation or cvar:<beta>)")))
    }
}

impl fmt::Display for RiskOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RiskOperator::Expectation => f.write_str("expectation"),
            RiskOperator::Cvar { beta } => write!(f, "cvar:{beta}"),
        }
    }
}

/// Scenario-aggregated estimate with CLT statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RiskEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// `std_error / mean`; `None` when the mean is zero (all-zero outcomes).
    pub rse: Option<f64>,
    pub ci95_halfwidth: f64,
    pub n: usize,
}

impl RiskEstimate {
    fn new(mean: f64, std_error: f64, n: usize) -> Self {
        Self {
            mean,
            std_error,
            rse: (mean > 0.0).then(|| std_error / mean),
            ci95_halfwidth: 1.96 * std_error,
            n,
        }
    }

    /// True when `|self.mean - target| <= k * std_error`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_error
    }
}

pub(crate) fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Sample mean with standard error `s / sqrt(n)`.
pub fn aggregate_expectation(values: &[f64]) -> Result<RiskEstimate> {
    if values.len() < 2 {
        return Err(Error::TooFewSamples {
            required: 2,
            got: values.len(),
        });
    }
    let (mean, sd) = mean_and_sd(values);
    Ok(RiskEstimate::new(mean, sd / (values.len() as f64).sqrt(), values.len()))
}

/// Probability-weighted mean over an exact enumeration; carries no sampling error.
pub fn aggregate_weighted(values: &[f64], weights: &[f64]) -> Result<RiskEstimate> {
    if values.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} values vs {} weights",
            values.len(),
            weights.len()
        )));
    }
    if values.is_empty() {
        return Err(Error::TooFewSamples { required: 1, got: 0 });
    }
    let mean = values.iter().zip(weights).map(|(v, w)| v * w).sum();
    Ok(RiskEstimate::new(mean, 0.0, values.len()))
}

/// Mean of the worst `ceil((1 - beta) * n)` values; standard error from the tail subsample.
pub fn aggregate_cvar(values: &[f64], beta: f64) -> Result<RiskEstimate> {
    let n = values.len();
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::invalid("beta", "must lie in [0, 1)"));
    }
    // the small slack keeps e.g. (1 - 0.7) * 10 = 3.0000000000000004 from rounding up to 4
    let k = (((1.0 - beta) * n as f64) - 1e-9).ceil().max(0.0) as usize;
    if k == 0 {
        return Err(Error::EmptyTail { beta, n });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let tail = &sorted[..k.min(n)];
    let (mean, sd) = mean_and_sd(tail);
    Ok(RiskEstimate::new(mean, sd / (tail.len() as f64).sqrt(), tail.len()))
}

fn weighted_cvar(values: &[f64], weights: &[f64], beta: f64) -> Result<RiskEstimate> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mass = 1.0 - beta;
    if mass <= 0.0 {
        return Err(Error::EmptyTail { beta, n: values.len() });
    }
    let (mut acc, mut taken) = (0.0, 0.0);
    for i in idx {
        let w = weights[i].min(mass - taken);
        if w <= 0.0 {
            break;
        }
        acc += w * values[i];
        taken += w;
    }
    Ok(RiskEstimate::new(acc / taken, 0.0, values.len()))
}

/// Applies a risk operator, using exact weights when the batch is an enumeration.
pub fn aggregate(values: &[f64], weights: Option<&[f64]>, op: RiskOperator) -> Result<RiskEstimate> {
    match (op, weights) {
        (RiskOperator::Expectation, None) => aggregate_expectation(values),
        (RiskOperator::Expectation, Some(w)) => aggregate_weighted(values, w),
        (RiskOperator::Cvar { beta }, None) => aggregate_cvar(values, beta),
        (RiskOperator::Cvar { beta }, Some(w)) => weighted_cvar(values, w, beta),
    }
}
