//! Inception Score over a classifier probe, the engagement score family and
//! category comparisons.

mod compare;
mod ies;
mod inception;
mod probe;

pub use compare::{compare_categories, read_page_csv, ComparisonRow, ComparisonTable, PageScore, RowKind};
pub use ies::{
    classify_popularity, compute_i_ies, compute_ies, compute_p_ies, Iies, IiesWindow, Observation, Pies, Popularity,
    PostEngagement,
};
pub use inception::{check_simplex, inception_score, InceptionScore, SIMPLEX_TOLERANCE};
pub use probe::{probe_inception_score, ClassifierProbe, ConvProbe, ProbeTraining};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("row {row} is not a probability distribution (sum {sum})")]
    NotADistribution { row: usize, sum: f64 },
    #[error("follower count is zero; engagement score undefined")]
    ZeroFollowers,
    #[error("no relevant posts")]
    NoRelevantPosts,
    #[error("no verdicts recorded")]
    NoVerdicts,
    #[error("{0}")]
    InvalidInput(String),
    #[error("probe: {0}")]
    Probe(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Fit,
    Unfit,
}

/// Fraction of verdicts that are fit.
pub fn curation_rate(verdicts: &[Verdict]) -> Result<f64, MetricsError> {
    if verdicts.is_empty() {
        return Err(MetricsError::NoVerdicts);
    }
    let fit = verdicts.iter().filter(|v| **v == Verdict::Fit).count();
    Ok(fit as f64 / verdicts.len() as f64)
}

/// Rounds the shortest decimal form of `v` half away from zero, so that
/// values such as 0.0125 round up as written rather than as stored.
pub fn round_display(v: f64, decimals: usize) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let text = v.abs().to_string();
    let (int, frac) = text.split_once('.').unwrap_or((&text, ""));
    let mut digits: Vec<u8> = int.bytes().chain(frac.bytes().chain(std::iter::repeat(b'0')).take(decimals)).collect();
    if frac.as_bytes().get(decimals).is_some_and(|d| *d >= b'5') {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, b'1');
                break;
            }
            i -= 1;
            if digits[i] == b'9' {
                digits[i] = b'0';
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - decimals;
    let mut out = String::from_utf8(digits[..split].to_vec()).expect("ascii digits");
    if decimals > 0 {
        out.push('.');
        out.push_str(std::str::from_utf8(&digits[split..]).expect("ascii digits"));
    }
    if v < 0.0 && out.bytes().any(|b| (b'1'..=b'9').contains(&b)) {
        out.insert(0, '-');
    }
    out
}
