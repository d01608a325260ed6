//! Per-image candidate scores, prior distributions and loss parameters.
//!
//! Scores are sigmoid outputs, so every value must lie strictly inside
//! `(0, 1)`. An image may have no positives but always has at least one
//! negative.

use std::fmt;

use crate::error::{Error, Result};
use crate::surrogate::SurrogateSpec;

/// Which side of the ranking a score belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Class {
    Positive,
    Negative,
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Class::Positive => f.write_str("positive"),
            Class::Negative => f.write_str("negative"),
        }
    }
}

/// Validated positive and negative scores of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageScores {
    positives: Vec<f64>,
    negatives: Vec<f64>,
}

impl ImageScores {
    pub fn new(positives: Vec<f64>, negatives: Vec<f64>) -> Result<Self> {
        validate(&positives, &negatives)?;
        Ok(Self {
            positives,
            negatives,
        })
    }

    pub fn positives(&self) -> &[f64] {
        &self.positives
    }

    pub fn negatives(&self) -> &[f64] {
        &self.negatives
    }

    pub fn scores(&self, class: Class) -> &[f64] {
        match class {
            Class::Positive => &self.positives,
            Class::Negative => &self.negatives,
        }
    }

    pub fn n_pos(&self) -> usize {
        self.positives.len()
    }

    pub fn n_neg(&self) -> usize {
        self.negatives.len()
    }

    /// Returns a copy with one score replaced, re-validating the result.
    pub fn with_score(&self, class: Class, index: usize, value: f64) -> Result<Self> {
        let mut out = self.clone();
        match class {
            Class::Positive => out.positives[index] = value,
            Class::Negative => out.negatives[index] = value,
        }
        validate(&out.positives, &out.negatives)?;
        Ok(out)
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.positives, self.negatives)
    }
}

fn check_class(values: &[f64], class: Class) -> Result<()> {
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite { class, index });
        }
        if value <= 0.0 || value >= 1.0 {
            return Err(Error::OutOfRange {
                class,
                index,
                value,
            });
        }
    }
    Ok(())
}

/// Checks the [`ImageScores`] invariants on raw score slices.
pub fn validate(positives: &[f64], negatives: &[f64]) -> Result<()> {
    if negatives.is_empty() {
        return Err(Error::EmptyNegatives);
    }
    check_class(positives, Class::Positive)?;
    check_class(negatives, Class::Negative)
}

/// Prior distribution over the candidates of one class.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Prior {
    /// Every candidate weighted `1/n`.
    #[default]
    Uniform,
    /// Only the selected candidates are weighted, each with `1/|selected|`.
    /// Indices are kept sorted and unique.
    Mask(Vec<usize>),
}

impl Prior {
    /// Builds a mask prior. Duplicate indices are merged; an empty selection
    /// is rejected.
    pub fn mask(indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut selected: Vec<usize> = indices.into_iter().collect();
        selected.sort_unstable();
        selected.dedup();
        if selected.is_empty() {
            return Err(Error::BadPriorMask("empty selection".into()));
        }
        Ok(Prior::Mask(selected))
    }

    /// Indices with non-zero prior weight for a vector of length `n`.
    pub fn support(&self, n: usize) -> Result<Vec<usize>> {
        match self {
            Prior::Uniform => Ok((0..n).collect()),
            Prior::Mask(selected) => {
                if selected.is_empty() {
                    return Err(Error::BadPriorMask("empty selection".into()));
                }
                if let Some(&bad) = selected.iter().find(|&&i| i >= n) {
                    return Err(Error::BadPriorMask(format!(
                        "index {bad} out of range for {n} scores"
                    )));
                }
                Ok(selected.clone())
            }
        }
    }

    /// Prior weights `o_j` for a vector of length `n`.
    pub fn weights(&self, n: usize) -> Result<Vec<f64>> {
        let support = self.support(n)?;
        let w = 1.0 / support.len() as f64;
        let mut out = vec![0.0; n];
        for i in support {
            out[i] = w;
        }
        Ok(out)
    }
}

/// Parameters of the distributional ranking loss.
#[derive(Debug, Clone, PartialEq)]
pub struct DrParams {
    pub lambda_pos: f64,
    pub lambda_neg: f64,
    pub gamma: f64,
    pub surrogate: SurrogateSpec,
    pub prior_pos: Prior,
    pub prior_neg: Prior,
}

impl Default for DrParams {
    fn default() -> Self {
        Self {
            lambda_pos: 1.0,
            lambda_neg: 0.1,
            gamma: 0.5,
            surrogate: SurrogateSpec::Logistic { l: 6.0 },
            prior_pos: Prior::Uniform,
            prior_neg: Prior::Uniform,
        }
    }
}

impl DrParams {
    pub fn with_lambdas(lambda_pos: f64, lambda_neg: f64) -> Result<Self> {
        let params = Self {
            lambda_pos,
            lambda_neg,
            ..Self::default()
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_pos > 0.0 && self.lambda_pos.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "lambda_pos must be positive, got {}",
                self.lambda_pos
            )));
        }
        if !(self.lambda_neg > 0.0 && self.lambda_neg.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "lambda_neg must be positive, got {}",
                self.lambda_neg
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidParam(format!(
                "gamma must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        self.surrogate.validate()
    }
}

/// Regularizer weights from logarithm bases: `(1/ln h_pos, 0.1/ln h_neg)`.
///
/// Changing the base of the KL divergence is equivalent to rescaling the
/// default weights `(1, 0.1)` this way.
pub fn tuned_lambdas(h_pos: f64, h_neg: f64) -> Result<(f64, f64)> {
    for h in [h_pos, h_neg] {
        if !(h > 1.0 && h.is_finite()) {
            return Err(Error::BadBase(h));
        }
    }
    Ok((1.0 / h_pos.ln(), 0.1 / h_neg.ln()))
}
