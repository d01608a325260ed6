//! Central finite-difference check of analytic score gradients.
//!
//! The evaluator is a black box: only its loss value is used for the
//! numerical side, only its returned gradients for the analytic side.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::drloss::{LossResult, LossSpec};
use crate::error::{Error, Result};
use crate::scores::{Class, ImageScores};
use crate::tilt::{tilt_negative, tilt_positive};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_THRESHOLD: f64 = 1e-5;
/// Floor of the relative-error denominator.
pub const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest relative error.
    pub worst_index: (Class, usize),
    pub passed: bool,
}

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares every analytic gradient entry of `loss_fn` at `scores` against
/// `(ℓ(p + h) − ℓ(p − h)) / 2h`.
pub fn check<F>(loss_fn: F, scores: &ImageScores, step: f64, threshold: f64) -> Result<GradCheckReport>
where
    F: Fn(&ImageScores) -> Result<LossResult>,
{
    if !(step > 0.0 && threshold > 0.0) {
        return Err(Error::InvalidParam(
            "step and threshold must be positive".into(),
        ));
    }
    let analytic = loss_fn(scores)?;
    let mut worst = (0.0, (Class::Negative, 0));

    for (class, grads) in [
        (Class::Positive, &analytic.grad_pos),
        (Class::Negative, &analytic.grad_neg),
    ] {
        let values = scores.scores(class);
        if grads.len() != values.len() {
            return Err(Error::InvalidParam(format!(
                "{class} gradient has length {}, expected {}",
                grads.len(),
                values.len()
            )));
        }
        for (index, (&p, &g)) in values.iter().zip(grads).enumerate() {
            let (up, down) = (p + step, p - step);
            if !(down > 0.0 && up < 1.0) {
                return Err(Error::StepOutOfRange { class, index, step });
            }
            let hi = loss_fn(&scores.with_score(class, index, up)?)?.loss;
            let lo = loss_fn(&scores.with_score(class, index, down)?)?.loss;
            let numeric = (hi - lo) / (up - down);
            let err = rel_error(g, numeric);
            if err > worst.0 || err.is_nan() {
                worst = (err, (class, index));
            }
        }
    }

    Ok(GradCheckReport {
        max_rel_error: worst.0,
        worst_index: worst.1,
        passed: worst.0 < threshold,
    })
}

/// Random instance with `1..=max_pos` positives and `1..=max_neg`
/// negatives, scores uniform on `[0.02, 0.98]`.
pub fn random_instance<R: Rng>(rng: &mut R, max_pos: usize, max_neg: usize) -> ImageScores {
    let n_pos = rng.random_range(1..=max_pos.max(1));
    let n_neg = rng.random_range(1..=max_neg.max(1));
    let mut draw = |n: usize| (0..n).map(|_| rng.random_range(0.02..=0.98)).collect::<Vec<_>>();
    let pos = draw(n_pos);
    let neg = draw(n_neg);
    ImageScores::new(pos, neg).expect("scores drawn inside (0, 1)")
}

/// True when no gradient entry sits within `margin` of a point where central
/// differences lose accuracy: a zero crossing of a tilted gradient
/// (`p = P̂₋ − λ₋` for negatives, `p = P̂₊ + λ₊` for positives) or a change of
/// the selected pair for the worst-case loss.
pub fn well_conditioned(loss: &LossSpec, scores: &ImageScores, margin: f64) -> Result<bool> {
    let clear = |values: &[f64], at: f64| values.iter().all(|&p| (p - at).abs() > margin);
    let gap_of_two = |values: &[f64], top: bool| {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        if top {
            v.reverse();
        }
        v.len() < 2 || (v[0] - v[1]).abs() > margin
    };
    Ok(match loss {
        LossSpec::Dr(p) | LossSpec::NegOnly(p) => {
            let neg = tilt_negative(scores.negatives(), p.lambda_neg, &p.prior_neg)?;
            let mut ok = clear(scores.negatives(), neg.expectation - p.lambda_neg);
            if matches!(loss, LossSpec::Dr(_)) && scores.n_pos() > 0 {
                let pos = tilt_positive(scores.positives(), p.lambda_pos, &p.prior_pos)?;
                ok &= clear(scores.positives(), pos.expectation + p.lambda_pos);
            }
            ok
        }
        LossSpec::WorstCase { .. } => {
            gap_of_two(scores.negatives(), true) && gap_of_two(scores.positives(), false)
        }
        LossSpec::AllPairs { .. } | LossSpec::CrossEntropy | LossSpec::Focal { .. } => true,
    })
}

/// Outcome of checking one loss over many random instances.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub instances: usize,
    /// Draws discarded by [`well_conditioned`].
    pub rejected: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Settings of [`run_suite`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteConfig {
    pub instances: usize,
    pub max_pos: usize,
    pub max_neg: usize,
    pub step: f64,
    pub threshold: f64,
    pub seed: u64,
    /// Scale the largest negative gradient entry by 1.01 to exercise the
    /// failure path.
    pub corrupt: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            instances: 200,
            max_pos: 20,
            max_neg: 500,
            step: DEFAULT_STEP,
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
            corrupt: false,
        }
    }
}

/// Checks `loss` on `config.instances` well-conditioned random instances.
pub fn run_suite(loss: &LossSpec, config: &SuiteConfig) -> Result<SuiteReport> {
    if config.instances == 0 {
        return Err(Error::InvalidParam("instance count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let margin = 10.0 * config.step;
    let evaluate = |s: &ImageScores| {
        let mut r = loss.evaluate(s)?;
        if config.corrupt {
            let k = (0..r.grad_neg.len())
                .max_by(|&a, &b| r.grad_neg[a].abs().total_cmp(&r.grad_neg[b].abs()))
                .expect("at least one negative");
            r.grad_neg[k] *= 1.01;
        }
        Ok(r)
    };
    let (mut done, mut rejected, mut worst) = (0, 0, 0.0f64);
    while done < config.instances {
        let scores = random_instance(&mut rng, config.max_pos, config.max_neg);
        if !well_conditioned(loss, &scores, margin)? {
            rejected += 1;
            if rejected > 100 * config.instances {
                return Err(Error::InvalidParam(
                    "too few well-conditioned instances".into(),
                ));
            }
            continue;
        }
        let report = check(evaluate, &scores, config.step, config.threshold)?;
        worst = if report.max_rel_error.is_nan() { f64::NAN } else { worst.max(report.max_rel_error) };
        done += 1;
    }
    Ok(SuiteReport {
        instances: done,
        rejected,
        max_rel_error: worst,
        passed: worst < config.threshold,
    })
}
