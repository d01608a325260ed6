//! Forward and backward passes of the distributional ranking loss and the
//! comparison losses it is evaluated against.
//!
//! All losses act on one image and return gradients with respect to the
//! probability scores. Chaining through the sigmoid happens in the trainer.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;
use crate::scores::{DrParams, ImageScores};
use crate::surrogate::SurrogateSpec;
use crate::tilt::{tilt_negative, tilt_positive};

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub loss: f64,
    pub grad_pos: Vec<f64>,
    pub grad_neg: Vec<f64>,
}

impl LossResult {
    fn zeros(n_pos: usize, n_neg: usize) -> Self {
        Self {
            loss: 0.0,
            grad_pos: vec![0.0; n_pos],
            grad_neg: vec![0.0; n_neg],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.loss.is_finite()
            && self.grad_pos.iter().all(|g| g.is_finite())
            && self.grad_neg.iter().all(|g| g.is_finite())
    }
}

/// Ranks the tilted expectation of the negatives below that of the
/// positives by a margin `γ`: `ℓ(P̂₋ − P̂₊ + γ)`.
///
/// An image without positives uses `P̂₊ = 1` and returns an empty
/// `grad_pos`.
pub fn dr_loss(scores: &ImageScores, params: &DrParams) -> Result<LossResult> {
    params.validate()?;
    let neg = tilt_negative(scores.negatives(), params.lambda_neg, &params.prior_neg)?;
    let pos = if scores.n_pos() > 0 {
        Some(tilt_positive(
            scores.positives(),
            params.lambda_pos,
            &params.prior_pos,
        )?)
    } else {
        None
    };
    let p_neg = neg.expectation;
    let p_pos = pos.as_ref().map_or(1.0, |t| t.expectation);

    let z = p_neg - p_pos + params.gamma;
    let (loss, slope) = params.surrogate.eval(z)?;

    let grad_neg = scores
        .negatives()
        .iter()
        .zip(&neg.weights)
        .map(|(&p, &q)| slope * q * (1.0 + (p - p_neg) / params.lambda_neg))
        .collect();
    let grad_pos = match &pos {
        Some(t) => scores
            .positives()
            .iter()
            .zip(&t.weights)
            .map(|(&p, &q)| slope * q * (-1.0 + (p - p_pos) / params.lambda_pos))
            .collect(),
        None => Vec::new(),
    };

    Ok(LossResult {
        loss,
        grad_pos,
        grad_neg,
    })
}

/// Mean surrogate over every positive/negative pair.
pub fn all_pairs_loss(scores: &ImageScores, gamma: f64, surrogate: SurrogateSpec) -> Result<LossResult> {
    surrogate.validate()?;
    if scores.n_pos() == 0 {
        return Err(Error::NoPositives);
    }
    let (pos, neg) = (scores.positives(), scores.negatives());
    let scale = 1.0 / (pos.len() * neg.len()) as f64;
    let mut out = LossResult::zeros(pos.len(), neg.len());
    let mut loss = CompensatedSum::default();
    for (i, &pp) in pos.iter().enumerate() {
        for (k, &pn) in neg.iter().enumerate() {
            let (l, d) = surrogate.eval_unchecked(pn - pp + gamma);
            loss.add(l);
            out.grad_neg[k] += d;
            out.grad_pos[i] -= d;
        }
    }
    out.loss = loss.value() * scale;
    out.grad_pos.iter_mut().for_each(|g| *g *= scale);
    out.grad_neg.iter_mut().for_each(|g| *g *= scale);
    Ok(out)
}

fn first_extreme(values: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if better(v, values[best]) {
            best = i;
        }
    }
    best
}

/// Surrogate on the single hardest pair, `ℓ(max p₋ − min p₊ + γ)`.
/// Ties go to the first index.
pub fn worst_case_loss(scores: &ImageScores, gamma: f64, surrogate: SurrogateSpec) -> Result<LossResult> {
    surrogate.validate()?;
    if scores.n_pos() == 0 {
        return Err(Error::NoPositives);
    }
    let (pos, neg) = (scores.positives(), scores.negatives());
    let i = first_extreme(pos, |a, b| a < b);
    let k = first_extreme(neg, |a, b| a > b);
    let (loss, d) = surrogate.eval_unchecked(neg[k] - pos[i] + gamma);
    let mut out = LossResult::zeros(pos.len(), neg.len());
    out.loss = loss;
    out.grad_pos[i] = -d;
    out.grad_neg[k] = d;
    Ok(out)
}

/// Tilts only the negatives and averages the surrogate over the raw
/// positives: `(1/n₊) Σ ℓ(P̂₋ − p_j + γ)`.
pub fn neg_only_loss(scores: &ImageScores, params: &DrParams) -> Result<LossResult> {
    params.validate()?;
    if scores.n_pos() == 0 {
        return Err(Error::NoPositives);
    }
    let neg = tilt_negative(scores.negatives(), params.lambda_neg, &params.prior_neg)?;
    let p_neg = neg.expectation;
    let scale = 1.0 / scores.n_pos() as f64;

    let mut loss = CompensatedSum::default();
    let mut slope_sum = 0.0;
    let mut grad_pos = Vec::with_capacity(scores.n_pos());
    for &p in scores.positives() {
        let (l, d) = params.surrogate.eval(p_neg - p + params.gamma)?;
        loss.add(l);
        slope_sum += d;
        grad_pos.push(-d * scale);
    }
    let grad_neg = scores
        .negatives()
        .iter()
        .zip(&neg.weights)
        .map(|(&p, &q)| slope_sum * scale * q * (1.0 + (p - p_neg) / params.lambda_neg))
        .collect();
    Ok(LossResult {
        loss: loss.value() * scale,
        grad_pos,
        grad_neg,
    })
}

/// Binary cross entropy summed over every candidate of the image.
pub fn cross_entropy_loss(scores: &ImageScores) -> Result<LossResult> {
    let mut loss = CompensatedSum::default();
    let grad_pos = scores
        .positives()
        .iter()
        .map(|&p| {
            loss.add(-p.ln());
            -1.0 / p
        })
        .collect();
    let grad_neg = scores
        .negatives()
        .iter()
        .map(|&p| {
            loss.add(-(-p).ln_1p());
            1.0 / (1.0 - p)
        })
        .collect();
    Ok(LossResult {
        loss: loss.value(),
        grad_pos,
        grad_neg,
    })
}

/// Focal loss summed over every candidate: `−α (1−p)^γ ln p` on positives and
/// `−(1−α) p^γ ln(1−p)` on negatives.
pub fn focal_loss(scores: &ImageScores, alpha: f64, gamma_f: f64) -> Result<LossResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParam(format!(
            "focal alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if !(gamma_f >= 0.0 && gamma_f.is_finite()) {
        return Err(Error::InvalidParam(format!(
            "focal gamma must be non-negative, got {gamma_f}"
        )));
    }
    // d/dp of -w(p) ln(p) for the modulating factor w
    let mut loss = CompensatedSum::default();
    let grad_pos = scores
        .positives()
        .iter()
        .map(|&p| {
            let r = 1.0 - p;
            let ln_p = p.ln();
            let w = r.powf(gamma_f);
            loss.add(-alpha * w * ln_p);
            let dw = if gamma_f == 0.0 { 0.0 } else { -gamma_f * r.powf(gamma_f - 1.0) };
            -alpha * (dw * ln_p + w / p)
        })
        .collect();
    let grad_neg = scores
        .negatives()
        .iter()
        .map(|&p| {
            let ln_r = (-p).ln_1p();
            let w = p.powf(gamma_f);
            loss.add(-(1.0 - alpha) * w * ln_r);
            let dw = if gamma_f == 0.0 { 0.0 } else { gamma_f * p.powf(gamma_f - 1.0) };
            -(1.0 - alpha) * (dw * ln_r - w / (1.0 - p))
        })
        .collect();
    Ok(LossResult {
        loss: loss.value(),
        grad_pos,
        grad_neg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginReport {
    pub min_pos: f64,
    pub max_neg: f64,
    pub satisfies: bool,
}

/// Reports whether every positive exceeds `γ` and every negative is at most
/// `1 − γ`. With `γ = 0.5` this is the usual 0.5 classification threshold.
pub fn margin_check(scores: &ImageScores, gamma: f64) -> Result<MarginReport> {
    if scores.n_pos() == 0 {
        return Err(Error::NoPositives);
    }
    let min_pos = scores.positives().iter().copied().fold(f64::INFINITY, f64::min);
    let max_neg = scores
        .negatives()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(MarginReport {
        min_pos,
        max_neg,
        satisfies: min_pos > gamma && max_neg <= 1.0 - gamma,
    })
}

/// Selects one of the per-image losses together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LossSpec {
    Dr(DrParams),
    NegOnly(DrParams),
    AllPairs { gamma: f64, surrogate: SurrogateSpec },
    WorstCase { gamma: f64, surrogate: SurrogateSpec },
    CrossEntropy,
    Focal { alpha: f64, gamma: f64 },
}

impl LossSpec {
    pub fn evaluate(&self, scores: &ImageScores) -> Result<LossResult> {
        match self {
            LossSpec::Dr(p) => dr_loss(scores, p),
            LossSpec::NegOnly(p) => neg_only_loss(scores, p),
            LossSpec::AllPairs { gamma, surrogate } => all_pairs_loss(scores, *gamma, *surrogate),
            LossSpec::WorstCase { gamma, surrogate } => worst_case_loss(scores, *gamma, *surrogate),
            LossSpec::CrossEntropy => cross_entropy_loss(scores),
            LossSpec::Focal { alpha, gamma } => focal_loss(scores, *alpha, *gamma),
        }
    }

    /// Whether the loss is undefined on images without positives.
    pub fn requires_positives(&self) -> bool {
        matches!(
            self,
            LossSpec::NegOnly(_) | LossSpec::AllPairs { .. } | LossSpec::WorstCase { .. }
        )
    }

    pub fn kind(&self) -> LossKind {
        match self {
            LossSpec::Dr(_) => LossKind::Dr,
            LossSpec::NegOnly(_) => LossKind::NegOnly,
            LossSpec::AllPairs { .. } => LossKind::AllPairs,
            LossSpec::WorstCase { .. } => LossKind::WorstCase,
            LossSpec::CrossEntropy => LossKind::CrossEntropy,
            LossSpec::Focal { .. } => LossKind::Focal,
        }
    }
}

/// Loss names without parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Dr,
    NegOnly,
    AllPairs,
    WorstCase,
    CrossEntropy,
    Focal,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Dr,
        LossKind::NegOnly,
        LossKind::AllPairs,
        LossKind::WorstCase,
        LossKind::Focal,
        LossKind::CrossEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Dr => "dr",
            LossKind::NegOnly => "neg_only",
            LossKind::AllPairs => "all_pairs",
            LossKind::WorstCase => "worst_case",
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::Focal => "focal",
        }
    }

    /// Builds the loss from shared ranking parameters and focal settings.
    pub fn with_params(self, params: &DrParams, focal_alpha: f64, focal_gamma: f64) -> LossSpec {
        match self {
            LossKind::Dr => LossSpec::Dr(params.clone()),
            LossKind::NegOnly => LossSpec::NegOnly(params.clone()),
            LossKind::AllPairs => LossSpec::AllPairs {
                gamma: params.gamma,
                surrogate: params.surrogate,
            },
            LossKind::WorstCase => LossSpec::WorstCase {
                gamma: params.gamma,
                surrogate: params.surrogate,
            },
            LossKind::CrossEntropy => LossSpec::CrossEntropy,
            LossKind::Focal => LossSpec::Focal {
                alpha: focal_alpha,
                gamma: focal_gamma,
            },
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParam(format!("unknown loss '{s}'")))
    }
}

/// Sums per-image losses, splitting the images over `threads` workers.
/// Partial sums are combined in chunk order.
pub fn batch_loss<F>(images: &[ImageScores], loss_fn: F, threads: usize) -> Result<f64>
where
    F: Fn(&ImageScores) -> Result<LossResult> + Sync,
{
    let threads = threads.max(1);
    if threads == 1 || images.len() < 2 {
        return images.iter().map(|im| loss_fn(im).map(|r| r.loss)).sum();
    }
    let chunk = images.len().div_ceil(threads);
    let partials: Vec<Result<f64>> = std::thread::scope(|s| {
        let handles: Vec<_> = images
            .chunks(chunk)
            .map(|part| {
                let f = &loss_fn;
                s.spawn(move || part.iter().map(|im| f(im).map(|r| r.loss)).sum::<Result<f64>>())
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("loss worker panicked"))
            .collect()
    });
    partials.into_iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::Prior;

    fn img(pos: &[f64], neg: &[f64]) -> ImageScores {
        ImageScores::new(pos.to_vec(), neg.to_vec()).unwrap()
    }

    fn logistic6() -> SurrogateSpec {
        SurrogateSpec::Logistic { l: 6.0 }
    }

    #[test]
    fn dr_singletons_collapse_to_scalar_surrogate() {
        let s = img(&[0.9], &[0.1]);
        let expected = (1.0 + (-1.8f64).exp()).ln() / 6.0;
        for (lp, ln) in [(1.0, 0.1), (0.01, 3.0), (1e-6, 1e6)] {
            let params = DrParams::with_lambdas(lp, ln).unwrap();
            let r = dr_loss(&s, &params).unwrap();
            assert!((r.loss - expected).abs() < 1e-15, "{} vs {}", r.loss, expected);
        }
    }

    #[test]
    fn dr_empty_positive_convention() {
        let s = img(&[], &[0.1]);
        let r = dr_loss(&s, &DrParams::default()).unwrap();
        assert!((r.loss - logistic6().loss(-0.4)).abs() < 1e-15);
        assert!(r.grad_pos.is_empty());
        assert_eq!(r.grad_neg.len(), 1);
        assert!(r.is_finite());
    }

    #[test]
    fn dr_with_mask_prior_ignores_masked_candidates() {
        let s = img(&[0.6, 0.8], &[0.3, 0.95, 0.2]);
        let params = DrParams {
            prior_neg: Prior::mask([0, 2]).unwrap(),
            ..DrParams::default()
        };
        let masked = dr_loss(&s, &params).unwrap();
        let sub = dr_loss(&img(&[0.6, 0.8], &[0.3, 0.2]), &DrParams::default()).unwrap();
        assert!((masked.loss - sub.loss).abs() < 1e-12);
        assert_eq!(masked.grad_neg[1], 0.0);
        assert!((masked.grad_neg[0] - sub.grad_neg[0]).abs() < 1e-12);
        assert!((masked.grad_neg[2] - sub.grad_neg[1]).abs() < 1e-12);
    }

    #[test]
    fn all_pairs_hand_enumerated() {
        let s = img(&[0.6, 0.8], &[0.3, 0.5]);
        let r = all_pairs_loss(&s, 0.5, SurrogateSpec::Hinge).unwrap();
        // pairs: 0.3-0.6+0.5=0.2, 0.5-0.6+0.5=0.4, 0.3-0.8+0.5=0, 0.5-0.8+0.5=0.2
        assert!((r.loss - 0.2).abs() < 1e-12);
        // the (0.3, 0.8) pair sits exactly on the kink and contributes slope 0
        assert!((r.grad_neg[0] - 0.25).abs() < 1e-12);
        assert!((r.grad_neg[1] - 0.5).abs() < 1e-12);
        assert!((r.grad_pos[0] + 0.5).abs() < 1e-12);
        assert!((r.grad_pos[1] + 0.25).abs() < 1e-12);
    }

    #[test]
    fn single_pair_losses_agree() {
        let s = img(&[0.9], &[0.1]);
        let dr = dr_loss(&s, &DrParams::default()).unwrap();
        let ap = all_pairs_loss(&s, 0.5, logistic6()).unwrap();
        let wc = worst_case_loss(&s, 0.5, logistic6()).unwrap();
        let no = neg_only_loss(&s, &DrParams::default()).unwrap();
        for r in [&ap, &wc, &no] {
            assert!((r.loss - dr.loss).abs() < 1e-15);
            assert!((r.grad_pos[0] - dr.grad_pos[0]).abs() < 1e-15);
            assert!((r.grad_neg[0] - dr.grad_neg[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn worst_case_reads_extremes() {
        let s = img(&[0.6, 0.9], &[0.1, 0.4]);
        let r = worst_case_loss(&s, 0.5, SurrogateSpec::Hinge).unwrap();
        assert!((r.loss - 0.3).abs() < 1e-12);
        assert_eq!(r.grad_pos, vec![-1.0, 0.0]);
        assert_eq!(r.grad_neg, vec![0.0, 1.0]);
    }

    #[test]
    fn worst_case_ties_go_to_first_index() {
        let s = img(&[0.6, 0.6], &[0.4, 0.2, 0.4]);
        let r = worst_case_loss(&s, 0.5, SurrogateSpec::Hinge).unwrap();
        assert_eq!(r.grad_pos, vec![-1.0, 0.0]);
        assert_eq!(r.grad_neg, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn neg_only_with_equal_positives_matches_dr() {
        let s = img(&[0.7; 4], &[0.1, 0.3, 0.45, 0.2, 0.05]);
        let params = DrParams::default();
        let no = neg_only_loss(&s, &params).unwrap();
        let flat = DrParams {
            lambda_pos: 1e9,
            ..params.clone()
        };
        let dr = dr_loss(&s, &flat).unwrap();
        assert!((no.loss - dr.loss).abs() < 1e-12);
        for (a, b) in no.grad_neg.iter().zip(&dr.grad_neg) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn positives_required() {
        let s = img(&[], &[0.1, 0.2]);
        assert!(matches!(all_pairs_loss(&s, 0.5, logistic6()), Err(Error::NoPositives)));
        assert!(matches!(worst_case_loss(&s, 0.5, logistic6()), Err(Error::NoPositives)));
        assert!(matches!(neg_only_loss(&s, &DrParams::default()), Err(Error::NoPositives)));
        assert!(matches!(margin_check(&s, 0.5), Err(Error::NoPositives)));
    }

    #[test]
    fn cross_entropy_values() {
        let r = cross_entropy_loss(&img(&[0.5], &[0.5])).unwrap();
        assert!((r.loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
        let r = cross_entropy_loss(&img(&[], &[0.1])).unwrap();
        assert!((r.loss + 0.9f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn focal_values() {
        let r = focal_loss(&img(&[0.5], &[0.01]), 0.25, 2.0).unwrap();
        let neg = -0.75 * 0.01f64.powi(2) * 0.99f64.ln();
        assert!((r.loss - (0.25 * 0.25 * std::f64::consts::LN_2 + neg)).abs() < 1e-15);

        let s = img(&[0.3, 0.8], &[0.2, 0.6, 0.1]);
        let f = focal_loss(&s, 0.25, 0.0).unwrap();
        let ce = cross_entropy_loss(&s).unwrap();
        let pos_ce: f64 = s.positives().iter().map(|p| -p.ln()).sum();
        let neg_ce = ce.loss - pos_ce;
        assert!((f.loss - (0.25 * pos_ce + 0.75 * neg_ce)).abs() < 1e-12);
        for (a, b) in f.grad_pos.iter().zip(&ce.grad_pos) {
            assert!((a - 0.25 * b).abs() < 1e-12);
        }
        for (a, b) in f.grad_neg.iter().zip(&ce.grad_neg) {
            assert!((a - 0.75 * b).abs() < 1e-12);
        }
        assert!(focal_loss(&s, 1.0, 2.0).is_err());
        assert!(focal_loss(&s, 0.25, -1.0).is_err());
    }

    #[test]
    fn margin_report() {
        let r = margin_check(&img(&[0.7], &[0.3]), 0.5).unwrap();
        assert!(r.satisfies);
        let r = margin_check(&img(&[0.55], &[0.6]), 0.5).unwrap();
        assert!(!r.satisfies);
        assert_eq!(r.min_pos, 0.55);
        assert_eq!(r.max_neg, 0.6);
        // boundary: a negative at exactly 1 - γ passes, a positive at γ fails
        assert!(margin_check(&img(&[0.51], &[0.5]), 0.5).unwrap().satisfies);
        assert!(!margin_check(&img(&[0.5], &[0.1]), 0.5).unwrap().satisfies);
    }

    #[test]
    fn loss_kind_round_trips_names() {
        for k in LossKind::ALL {
            assert_eq!(k.name().parse::<LossKind>().unwrap(), k);
        }
        assert!("nope".parse::<LossKind>().is_err());
    }

    #[test]
    fn parallel_batch_sum_matches_sequential() {
        let images: Vec<_> = (0..37)
            .map(|i| {
                let a = 0.01 + 0.02 * (i % 40) as f64;
                img(&[0.9 - a / 2.0, 0.6], &[a, 0.3, 0.5 - a / 3.0])
            })
            .collect();
        let params = DrParams::default();
        let f = |im: &ImageScores| dr_loss(im, &params);
        let seq = batch_loss(&images, f, 1).unwrap();
        for threads in [2, 3, 8] {
            let par = batch_loss(&images, f, threads).unwrap();
            assert!((par - seq).abs() <= 1e-9 * seq.abs());
        }
    }
}
