//! KL-regularized tilting of a score distribution.
//!
//! Maximizing `Σ q_j s_j − λ KL(q || o)` over the simplex has the closed form
//! `q_j ∝ o_j exp(s_j / λ)`. Negatives are tilted toward high scores
//! (`s = p`), positives toward low scores (`s = −p`), so both put more weight
//! on the harder examples. Small `λ` approaches the worst case (max / min),
//! large `λ` recovers the prior.

use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;
use crate::scores::Prior;

/// Tilted weights over one class of scores.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltedDistribution {
    pub weights: Vec<f64>,
    /// `ln Z` where `Z = Σ o_j exp(s_j / λ)`, evaluated through the
    /// max-shifted sum.
    pub log_normalizer: f64,
    /// `Σ q_j p_j`.
    pub expectation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    TowardHigh,
    TowardLow,
}

/// Tilts negative scores toward their maximum: `q_j ∝ o_j exp(p_j / λ)`.
pub fn tilt_negative(scores: &[f64], lambda: f64, prior: &Prior) -> Result<TiltedDistribution> {
    tilt(scores, lambda, prior, Direction::TowardHigh)
}

/// Tilts positive scores toward their minimum: `q_j ∝ o_j exp(−p_j / λ)`.
pub fn tilt_positive(scores: &[f64], lambda: f64, prior: &Prior) -> Result<TiltedDistribution> {
    tilt(scores, lambda, prior, Direction::TowardLow)
}

fn tilt(scores: &[f64], lambda: f64, prior: &Prior, dir: Direction) -> Result<TiltedDistribution> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParam(format!(
            "tilt temperature must be positive, got {lambda}"
        )));
    }
    let support = prior.support(scores.len())?;
    let sign = match dir {
        Direction::TowardHigh => 1.0,
        Direction::TowardLow => -1.0,
    };

    let shift = support
        .iter()
        .map(|&j| sign * scores[j])
        .fold(f64::NEG_INFINITY, f64::max);

    let mut weights = vec![0.0; scores.len()];
    let mut total = CompensatedSum::default();
    let mut moment = CompensatedSum::default();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &j in &support {
        let e = ((sign * scores[j] - shift) / lambda).exp();
        weights[j] = e;
        total.add(e);
        moment.add(e * scores[j]);
        lo = lo.min(scores[j]);
        hi = hi.max(scores[j]);
    }
    let total = total.value();
    for &j in &support {
        weights[j] /= total;
    }
    let expectation = moment.value() / total;

    let prior_log = -(support.len() as f64).ln();
    Ok(TiltedDistribution {
        weights,
        log_normalizer: prior_log + shift / lambda + total.ln(),
        expectation: expectation.clamp(lo, hi),
    })
}
