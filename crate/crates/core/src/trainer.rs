//! Mini-batch SGD over a linear-plus-sigmoid scorer.
//!
//! Each iteration draws `m` images with replacement, evaluates the per-image
//! loss on the clamped sigmoid scores, chains the score gradients through
//! the sigmoid and applies `θ ← θ − η (1/m) Σ ∇ℓ`.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::csvio::CsvWriter;
use crate::drloss::{margin_check, LossSpec};
use crate::error::{Error, Result};
use crate::scores::ImageScores;
use crate::surrogate::sigmoid;
use crate::synth::{FeatureMatrix, GroupedDataset, ImageGroup, SCORE_CEIL, SCORE_FLOOR};

/// Linear scorer `sigmoid(w·x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Model {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }
}

/// Small seeded random weights and a bias placing the initial score at
/// `initial_probability`.
pub fn init_model(dim: usize, initial_probability: f64, seed: u64) -> Result<Model> {
    if dim == 0 {
        return Err(Error::InvalidParam("model dimension must be positive".into()));
    }
    if !(initial_probability > 0.0 && initial_probability < 1.0) {
        return Err(Error::InvalidParam(format!(
            "initial probability must lie in (0, 1), got {initial_probability}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.01).expect("constant stddev");
    Ok(Model {
        weights: (0..dim).map(|_| normal.sample(&mut rng)).collect(),
        bias: (initial_probability / (1.0 - initial_probability)).ln(),
    })
}

/// Per-image scaling applied to a loss before averaging over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossScale {
    /// Use the per-image loss as is.
    #[default]
    Sum,
    /// Divide by the number of candidates in the image.
    PerCandidate,
    /// Divide by the number of positives (at least one).
    PerPositive,
}

impl LossScale {
    fn factor(self, n_pos: usize, n_neg: usize) -> f64 {
        match self {
            LossScale::Sum => 1.0,
            LossScale::PerCandidate => 1.0 / (n_pos + n_neg) as f64,
            LossScale::PerPositive => 1.0 / n_pos.max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub loss: LossSpec,
    pub scale: LossScale,
    /// Weight of the auxiliary objective.
    pub tau: f64,
    /// `(iteration, factor)`: from `iteration` on, the rate is multiplied by
    /// `factor`. Factors accumulate.
    pub lr_schedule: Vec<(usize, f64)>,
    pub initial_probability: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            iterations: 2000,
            learning_rate: 0.5,
            seed: 0,
            loss: LossSpec::Dr(Default::default()),
            scale: LossScale::Sum,
            tau: 4.0,
            lr_schedule: Vec::new(),
            initial_probability: 0.5,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > dataset_len {
            return Err(Error::InvalidParam(format!(
                "batch size {} must lie in [1, {dataset_len}]",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidParam(format!("tau must be non-negative, got {}", self.tau)));
        }
        if self.lr_schedule.iter().any(|&(_, f)| !(f > 0.0 && f.is_finite())) {
            return Err(Error::InvalidParam("decay factors must be positive".into()));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        self.lr_schedule
            .iter()
            .filter(|&&(at, _)| at <= iteration)
            .fold(self.learning_rate, |lr, &(_, f)| lr * f)
    }
}

/// Keeps the number of epochs fixed while shrinking the batch by `alpha`:
/// `m' = m/α`, `T' = αT`, `η' = η/α`.
pub fn scaled_config(base: &TrainerConfig, alpha: f64) -> Result<TrainerConfig> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::BadAlpha(alpha));
    }
    let as_count = |x: f64| {
        let r = x.round();
        ((x - r).abs() <= 1e-9 * x.abs().max(1.0) && r >= 1.0).then_some(r as usize)
    };
    let batch = as_count(base.batch_size as f64 / alpha).ok_or(Error::BadAlpha(alpha))?;
    let iterations = as_count(base.iterations as f64 * alpha).ok_or(Error::BadAlpha(alpha))?;
    Ok(TrainerConfig {
        batch_size: batch,
        iterations,
        learning_rate: base.learning_rate / alpha,
        ..base.clone()
    })
}

/// Additional objective on the model parameters, weighted by `tau`.
pub trait AuxiliaryLoss {
    /// Returns the value and the gradient with respect to `(weights, bias)`.
    fn eval(&self, model: &Model) -> (f64, Vec<f64>, f64);
}

/// Contributes nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoAuxiliary;

impl AuxiliaryLoss for NoAuxiliary {
    fn eval(&self, model: &Model) -> (f64, Vec<f64>, f64) {
        (0.0, vec![0.0; model.dim()], 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub loss: f64,
    pub grad_norm_sq: f64,
    pub lr: f64,
    /// Scores that hit the clamp in this iteration's batch.
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// Mean loss over the last `n` iterations.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let n = n.min(self.len()).max(1);
        let tail = &self.records[self.len().saturating_sub(n)..];
        tail.iter().map(|r| r.loss).sum::<f64>() / tail.len().max(1) as f64
    }

    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<W> {
        let mut w = CsvWriter::new(out, &["iter", "loss", "grad_norm_sq", "lr"])?;
        for (i, r) in self.records.iter().enumerate() {
            let fields = [
                i.to_string(),
                crate::csvio::format_g9(r.loss),
                crate::csvio::format_g9(r.grad_norm_sq),
                crate::csvio::format_g9(r.lr),
            ];
            w.record(&fields)?;
        }
        Ok(w.into_inner())
    }
}

/// Clamped scores of one block of candidates and a mask of clamped entries.
fn block_scores(model: &Model, block: &FeatureMatrix) -> (Vec<f64>, Vec<bool>) {
    block
        .iter_rows()
        .map(|x| {
            let p = model.score(x);
            let clamped = p.clamp(SCORE_FLOOR, SCORE_CEIL);
            (clamped, clamped != p)
        })
        .unzip()
}

/// Clamped `(positives, negatives)` scores of an image.
pub fn score_image(model: &Model, image: &ImageGroup) -> (Vec<f64>, Vec<f64>) {
    (
        block_scores(model, &image.positives).0,
        block_scores(model, &image.negatives).0,
    )
}

/// Loss of one image and its gradient with respect to `(weights, bias)`,
/// accumulated into `grad_w` / `grad_b` with the factor `weight`.
/// Returns the scaled loss and the number of clamped scores.
pub fn image_gradient(
    model: &Model,
    image: &ImageGroup,
    loss: &LossSpec,
    scale: LossScale,
    weight: f64,
    grad_w: &mut [f64],
    grad_b: &mut f64,
) -> Result<(f64, usize)> {
    let (pos, pos_clamped) = block_scores(model, &image.positives);
    let (neg, neg_clamped) = block_scores(model, &image.negatives);
    let clamped = pos_clamped.iter().chain(&neg_clamped).filter(|&&c| c).count();
    if pos.is_empty() && loss.requires_positives() {
        // undefined without positives: the image contributes nothing
        return Ok((0.0, clamped));
    }
    let factor = scale.factor(pos.len(), neg.len());
    let scores = ImageScores::new(pos, neg)?;
    let result = loss.evaluate(&scores)?;

    let blocks = [
        (&image.positives, scores.positives(), &result.grad_pos, &pos_clamped),
        (&image.negatives, scores.negatives(), &result.grad_neg, &neg_clamped),
    ];
    for (features, probs, grads, mask) in blocks {
        for (((x, &p), &g), &c) in features.iter_rows().zip(probs).zip(grads.iter()).zip(mask.iter()) {
            if c {
                continue;
            }
            let dl = weight * factor * g * p * (1.0 - p);
            for (gw, xi) in grad_w.iter_mut().zip(x) {
                *gw += dl * xi;
            }
            *grad_b += dl;
        }
    }
    Ok((factor * result.loss, clamped))
}

pub fn train(data: &GroupedDataset, config: &TrainerConfig) -> Result<(Model, TrainTrace)> {
    train_with(data, config, &NoAuxiliary)
}

pub fn train_with(
    data: &GroupedDataset,
    config: &TrainerConfig,
    aux: &dyn AuxiliaryLoss,
) -> Result<(Model, TrainTrace)> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    config.validate(data.len())?;
    let model = init_model(data.dim(), config.initial_probability, config.seed)?;
    train_from(model, data, config, aux)
}

/// Runs `config.iterations` SGD steps starting at `model`.
pub fn train_from(
    mut model: Model,
    data: &GroupedDataset,
    config: &TrainerConfig,
    aux: &dyn AuxiliaryLoss,
) -> Result<(Model, TrainTrace)> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    config.validate(data.len())?;
    if model.dim() != data.dim() {
        return Err(Error::InvalidParam(format!(
            "model dimension {} does not match data dimension {}",
            model.dim(),
            data.dim()
        )));
    }
    // the sampler stream is separate from the initialization stream
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_ba7c_4000_0001);
    let mut trace = TrainTrace::default();
    let inv_m = 1.0 / config.batch_size as f64;

    for iteration in 0..config.iterations {
        let lr = config.learning_rate_at(iteration);
        let mut grad_w = vec![0.0; model.dim()];
        let mut grad_b = 0.0;
        let mut loss = 0.0;
        let mut clamped = 0;
        for _ in 0..config.batch_size {
            let image = &data.images[rng.random_range(0..data.len())];
            let step = image_gradient(
                &model,
                image,
                &config.loss,
                config.scale,
                inv_m,
                &mut grad_w,
                &mut grad_b,
            );
            let (l, c) = match step {
                // a finite model can still overflow its logits
                Err(Error::NonFinite { .. }) => {
                    return Err(Error::DivergenceDetected {
                        iteration,
                        trace: Box::new(trace),
                    })
                }
                other => other?,
            };
            loss += l * inv_m;
            clamped += c;
        }
        if config.tau > 0.0 {
            let (value, gw, gb) = aux.eval(&model);
            loss += config.tau * value;
            for (g, a) in grad_w.iter_mut().zip(gw) {
                *g += config.tau * a;
            }
            grad_b += config.tau * gb;
        }

        let grad_norm_sq = grad_w.iter().map(|g| g * g).sum::<f64>() + grad_b * grad_b;
        if !loss.is_finite() || !grad_norm_sq.is_finite() {
            return Err(Error::DivergenceDetected {
                iteration,
                trace: Box::new(trace),
            });
        }
        trace.records.push(TraceRecord {
            loss,
            grad_norm_sq,
            lr,
            clamped,
        });

        for (w, g) in model.weights.iter_mut().zip(&grad_w) {
            *w -= lr * g;
        }
        model.bias -= lr * grad_b;
        if !model.is_finite() {
            return Err(Error::DivergenceDetected {
                iteration,
                trace: Box::new(trace),
            });
        }
    }
    Ok((model, trace))
}

/// Post-training summary over every image of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Fraction of images with positives that satisfy the margin check.
    pub margin_pass_rate: f64,
    pub mean_pos: f64,
    pub mean_neg: f64,
    pub pos_scores: Vec<f64>,
    pub neg_scores: Vec<f64>,
}

impl Evaluation {
    /// Fraction of positive / negative scores at or above `threshold`.
    pub fn kept_fractions(&self, threshold: f64) -> (f64, f64) {
        let frac = |v: &[f64]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().filter(|&&p| p >= threshold).count() as f64 / v.len() as f64
            }
        };
        (frac(&self.pos_scores), frac(&self.neg_scores))
    }
}

pub fn evaluate(model: &Model, data: &GroupedDataset, gamma: f64) -> Result<Evaluation> {
    let mut pos_scores = Vec::new();
    let mut neg_scores = Vec::new();
    let (mut passed, mut checked) = (0usize, 0usize);
    for image in &data.images {
        let (pos, neg) = score_image(model, image);
        if !pos.is_empty() {
            let scores = ImageScores::new(pos, neg)?;
            checked += 1;
            if margin_check(&scores, gamma)?.satisfies {
                passed += 1;
            }
            let (pos, neg) = scores.into_parts();
            pos_scores.extend(pos);
            neg_scores.extend(neg);
        } else {
            neg_scores.extend(neg);
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok(Evaluation {
        margin_pass_rate: if checked == 0 { f64::NAN } else { passed as f64 / checked as f64 },
        mean_pos: mean(&pos_scores),
        mean_neg: mean(&neg_scores),
        pos_scores,
        neg_scores,
    })
}
