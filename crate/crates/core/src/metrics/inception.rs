use serde::Serialize;

use super::MetricsError;

/// Allowed deviation of a probability row's sum from 1.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;
/// Relative distance from 1 or C under which a score is snapped to the bound.
const BOUND_SNAP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InceptionScore {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub classes: usize,
    pub splits: usize,
}

/// Checks a row-major N × C matrix of class distributions.
pub fn check_simplex(probs: &[f64], classes: usize) -> Result<(), MetricsError> {
    if classes == 0 || probs.is_empty() || probs.len() % classes != 0 {
        return Err(MetricsError::InvalidInput(format!(
            "{} values do not form rows of {classes} classes",
            probs.len()
        )));
    }
    for (row, p) in probs.chunks(classes).enumerate() {
        let sum: f64 = p.iter().sum();
        let valid = p.iter().all(|v| v.is_finite() && *v >= 0.0) && (sum - 1.0).abs() <= SIMPLEX_TOLERANCE;
        if !valid {
            return Err(MetricsError::NotADistribution { row, sum });
        }
    }
    Ok(())
}

fn split_score(rows: &[f64], classes: usize) -> f64 {
    let n = rows.len() / classes;
    let mut marginal = vec![0.0; classes];
    for p in rows.chunks(classes) {
        for (m, v) in marginal.iter_mut().zip(p) {
            *m += v;
        }
    }
    marginal.iter_mut().for_each(|m| *m /= n as f64);
    let kl_sum: f64 = rows
        .chunks(classes)
        .map(|p| {
            p.iter()
                .zip(&marginal)
                .filter(|(v, _)| **v > 0.0)
                .map(|(v, m)| v * (v.ln() - m.ln()))
                .sum::<f64>()
        })
        .sum();
    let c = classes as f64;
    let s = (kl_sum / n as f64).exp().clamp(1.0, c);
    if s - 1.0 <= BOUND_SNAP {
        1.0
    } else if c - s <= BOUND_SNAP * c {
        c
    } else {
        s
    }
}

/// exp(E_x KL(p(y|x) ‖ p(y))) per split, with the marginal taken within each
/// contiguous split; mean and population std over splits.
pub fn inception_score(probs: &[f64], classes: usize, splits: usize) -> Result<InceptionScore, MetricsError> {
    check_simplex(probs, classes)?;
    let n = probs.len() / classes;
    if splits == 0 || splits > n {
        return Err(MetricsError::InvalidInput(format!("cannot make {splits} splits of {n} rows")));
    }
    let scores: Vec<f64> = (0..splits)
        .map(|i| split_score(&probs[i * n / splits * classes..(i + 1) * n / splits * classes], classes))
        .collect();
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let std = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / splits as f64).sqrt();
    Ok(InceptionScore {
        mean,
        std,
        n,
        classes,
        splits,
    })
}
