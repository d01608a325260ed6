//! Synthetic data: Gaussian score samples and grouped feature datasets that
//! mimic per-image candidate populations with class and hardness imbalance.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::csvio::{format_g9, CsvWriter};
use crate::error::{Error, Result};

pub const SCORE_FLOOR: f64 = 1e-7;
pub const SCORE_CEIL: f64 = 1.0 - 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSample {
    pub values: Vec<f64>,
    pub mean: f64,
    pub stddev: f64,
}

/// Draws `count` Gaussian scores clamped to `[1e-7, 1 − 1e-7]`.
pub fn sample_scores(mean: f64, stddev: f64, count: usize, seed: u64) -> Result<ScoreSample> {
    if !(stddev > 0.0 && stddev.is_finite()) || !mean.is_finite() {
        return Err(Error::InvalidParam(format!(
            "score sampler needs finite mean and positive stddev, got ({mean}, {stddev})"
        )));
    }
    if count == 0 {
        return Err(Error::EmptyInput);
    }
    let normal = Normal::new(mean, stddev).expect("validated parameters");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..count)
        .map(|_| normal.sample(&mut rng).clamp(SCORE_FLOOR, SCORE_CEIL))
        .collect();
    Ok(ScoreSample {
        values,
        mean,
        stddev,
    })
}

/// Equal-width histogram on `[0, 1]`, normalized to unit area.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub densities: Vec<f64>,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.densities.len()
    }

    pub fn bin_width(&self) -> f64 {
        1.0 / self.bins() as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Center of the densest bin (first on ties).
    pub fn mode(&self) -> f64 {
        let mut best = 0;
        for (i, &d) in self.densities.iter().enumerate() {
            if d > self.densities[best] {
                best = i;
            }
        }
        self.centers()[best]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<W> {
        let mut w = CsvWriter::new(out, &["bin_center", "density"])?;
        for (c, d) in self.centers().into_iter().zip(&self.densities) {
            w.floats(&[c, *d])?;
        }
        Ok(w.into_inner())
    }
}

fn bin_of(value: f64, bins: usize) -> usize {
    ((value * bins as f64) as usize).min(bins - 1)
}

pub fn empirical_pdf(values: &[f64], bins: usize) -> Result<Histogram> {
    let ones = vec![1.0; values.len()];
    empirical_pdf_weighted(values, &ones, bins)
}

/// Histogram of `values` where each sample carries a non-negative weight.
pub fn empirical_pdf_weighted(values: &[f64], weights: &[f64], bins: usize) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if bins < 2 {
        return Err(Error::InvalidParam(format!("need at least 2 bins, got {bins}")));
    }
    if weights.len() != values.len() {
        return Err(Error::InvalidParam("weights and values differ in length".into()));
    }
    let mut mass = vec![0.0; bins];
    for (&v, &w) in values.iter().zip(weights) {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidParam(format!("value {v} outside [0, 1]")));
        }
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::InvalidParam(format!("invalid weight {w}")));
        }
        mass[bin_of(v, bins)] += w;
    }
    let total: f64 = mass.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidParam("weights sum to zero".into()));
    }
    let width = 1.0 / bins as f64;
    Ok(Histogram {
        edges: (0..=bins).map(|i| i as f64 * width).collect(),
        densities: mass.into_iter().map(|m| m / (total * width)).collect(),
    })
}

/// Row-major `rows × dim` feature block.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::BadSpec(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }
}

/// Candidates of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGroup {
    pub positives: FeatureMatrix,
    pub negatives: FeatureMatrix,
    /// Number of leading negative rows drawn from the hard cluster.
    pub n_hard: usize,
}

/// Parameters of the grouped dataset generator.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub dim: usize,
    pub n_images: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    /// Fraction of each image's negatives drawn from the hard cluster.
    pub hard_fraction: f64,
    /// Probability that an image has no positives at all.
    pub empty_fraction: f64,
    pub pos_center: Vec<f64>,
    pub easy_center: Vec<f64>,
    pub hard_center: Vec<f64>,
    pub pos_std: f64,
    pub easy_std: f64,
    pub hard_std: f64,
    pub seed: u64,
}

impl GeneratorSpec {
    /// Reference imbalanced dataset: 100 images with 2 positives and 2000
    /// negatives each, 1% of the negatives hard.
    ///
    /// Positives sit at `(1, 1)`, hard negatives at `(1, −1)` and easy ones
    /// at `(−1, 0)`, so the easy negatives are separated along the first
    /// axis while the hard negatives share it with the positives and differ
    /// only along the second. Extra dimensions carry pure noise.
    pub fn reference(seed: u64) -> Self {
        Self {
            dim: 4,
            n_images: 100,
            n_pos: 2,
            n_neg: 2000,
            hard_fraction: 0.01,
            empty_fraction: 0.0,
            pos_center: vec![1.0, 1.0, 0.0, 0.0],
            easy_center: vec![-1.0, 0.0, 0.0, 0.0],
            hard_center: vec![1.0, -1.0, 0.0, 0.0],
            pos_std: 0.15,
            easy_std: 0.25,
            hard_std: 0.15,
            seed,
        }
    }

    pub fn n_hard(&self) -> usize {
        (self.hard_fraction * self.n_neg as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::BadSpec(msg));
        if self.dim < 2 {
            return bad(format!("dim must be at least 2, got {}", self.dim));
        }
        if self.n_images == 0 {
            return bad("n_images must be positive".into());
        }
        if self.n_neg == 0 {
            return bad("every image needs at least one negative".into());
        }
        if !(0.0..=1.0).contains(&self.hard_fraction) {
            return bad(format!("hard_fraction {} outside [0, 1]", self.hard_fraction));
        }
        if !(0.0..=1.0).contains(&self.empty_fraction) {
            return bad(format!("empty_fraction {} outside [0, 1]", self.empty_fraction));
        }
        for (name, c) in [
            ("pos_center", &self.pos_center),
            ("easy_center", &self.easy_center),
            ("hard_center", &self.hard_center),
        ] {
            if c.len() != self.dim {
                return bad(format!("{name} has {} entries, expected {}", c.len(), self.dim));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return bad(format!("{name} is not finite"));
            }
        }
        for (name, s) in [
            ("pos_std", self.pos_std),
            ("easy_std", self.easy_std),
            ("hard_std", self.hard_std),
        ] {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("{name} must be positive, got {s}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    pub spec: GeneratorSpec,
    pub images: Vec<ImageGroup>,
}

impl GroupedDataset {
    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// One row per candidate: `image_id,label,x0,...`. Label 1 marks a
    /// positive.
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<W> {
        let mut header = vec!["image_id".to_string(), "label".to_string()];
        header.extend((0..self.dim()).map(|i| format!("x{i}")));
        let mut w = CsvWriter::new(out, &header)?;
        for (id, image) in self.images.iter().enumerate() {
            for (label, block) in [("1", &image.positives), ("0", &image.negatives)] {
                for row in block.iter_rows() {
                    let mut fields = vec![id.to_string(), label.to_string()];
                    fields.extend(row.iter().map(|&v| format_g9(v)));
                    w.record(&fields)?;
                }
            }
        }
        Ok(w.into_inner())
    }
}

fn draw_cluster(rng: &mut ChaCha8Rng, center: &[f64], std: f64, rows: usize, out: &mut Vec<f64>) {
    let noise = Normal::new(0.0, std).expect("validated stddev");
    for _ in 0..rows {
        out.extend(center.iter().map(|c| c + noise.sample(rng)));
    }
}

pub fn make_dataset(spec: &GeneratorSpec) -> Result<GroupedDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_hard = spec.n_hard();
    let images = (0..spec.n_images)
        .map(|_| {
            let empty = spec.empty_fraction > 0.0 && rng.random::<f64>() < spec.empty_fraction;
            let n_pos = if empty { 0 } else { spec.n_pos };
            let mut pos = Vec::with_capacity(n_pos * spec.dim);
            draw_cluster(&mut rng, &spec.pos_center, spec.pos_std, n_pos, &mut pos);
            let mut neg = Vec::with_capacity(spec.n_neg * spec.dim);
            draw_cluster(&mut rng, &spec.hard_center, spec.hard_std, n_hard, &mut neg);
            draw_cluster(&mut rng, &spec.easy_center, spec.easy_std, spec.n_neg - n_hard, &mut neg);
            Ok(ImageGroup {
                positives: FeatureMatrix::new(spec.dim, pos)?,
                negatives: FeatureMatrix::new(spec.dim, neg)?,
                n_hard,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GroupedDataset {
        spec: spec.clone(),
        images,
    })
}
