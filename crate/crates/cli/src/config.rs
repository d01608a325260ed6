//! Flat `key = value` experiment configuration.
//!
//! Every key has a default. A config file and `key=value` arguments
//! override the defaults in that order; unknown keys are errors.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use drank_core::synth::GeneratorSpec;
use drank_core::trainer::LossScale;
use drank_core::{DrParams, LossKind, SurrogateSpec};

/// `(key, default, description)`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "base seed for data, initialization and sampling"),
    ("out", "out", "output directory"),
    // tilt-demo
    ("demo_mean", "0.3", "mean of the sampled scores"),
    ("demo_stddevs", "0.05,0.2", "standard deviations of the sampled scores"),
    ("demo_lambdas", "1e9,1,0.1,0.02,0.01", "tilt temperatures"),
    ("demo_count", "1000000", "samples per stddev"),
    ("bins", "100", "histogram bins on [0, 1]"),
    // loss-curves
    ("curve_points", "201", "grid points on [-1, 1]"),
    ("curve_rhos", "0.1,0.5", "quadratic smoothing widths"),
    ("curve_ls", "4,6,10", "logistic sharpness values"),
    // gradcheck
    ("gc_instances", "200", "random instances per loss"),
    ("gc_max_pos", "20", "largest positive count"),
    ("gc_max_neg", "500", "largest negative count"),
    ("gc_step", "1e-5", "finite-difference step"),
    ("gc_threshold", "1e-5", "relative error threshold"),
    ("corrupt", "false", "perturb one analytic gradient entry"),
    // loss
    ("loss", "dr", "loss for train"),
    ("lambda_pos", "1", "positive tilt temperature"),
    ("lambda_neg", "0.1", "negative tilt temperature"),
    ("gamma", "0.5", "ranking margin"),
    ("surrogate", "logistic", "hinge, quadratic or logistic"),
    ("logistic_l", "6", "logistic sharpness"),
    ("quadratic_rho", "0.1", "quadratic smoothing width"),
    ("focal_alpha", "0.25", "focal class weight"),
    ("focal_gamma", "2", "focal focusing exponent"),
    // data
    ("dim", "4", "feature dimension"),
    ("images", "100", "images in the dataset"),
    ("n_pos", "2", "positives per image"),
    ("n_neg", "2000", "negatives per image"),
    ("hard_fraction", "0.01", "fraction of hard negatives"),
    ("empty_fraction", "0", "probability of an image without positives"),
    ("pos_center", "1,1,0,0", "positive cluster center"),
    ("easy_center", "-1,0,0,0", "easy negative cluster center"),
    ("hard_center", "1,-1,0,0", "hard negative cluster center"),
    ("pos_std", "0.15", "positive cluster stddev"),
    ("easy_std", "0.25", "easy negative cluster stddev"),
    ("hard_std", "0.15", "hard negative cluster stddev"),
    // trainer
    ("batch_size", "4", "images per step"),
    ("iterations", "2000", "SGD steps"),
    ("learning_rate", "0.5", "step size"),
    ("lr_schedule", "", "decay points as iteration:factor, comma separated"),
    ("tau", "4", "weight of the auxiliary term"),
    ("scale", "auto", "per-image loss scaling: auto, sum, per_candidate or per_positive"),
    ("initial_probability", "auto", "initial score, or auto"),
    ("dump_dataset", "false", "train also writes the generated dataset"),
    // compare
    ("losses", "dr,neg_only,all_pairs,worst_case,focal,cross_entropy", "losses for compare"),
    ("seeds", "5", "seeds per loss for compare"),
];

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            values: KEYS
                .iter()
                .map(|(k, v, _)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => bail!("unknown config key '{key}'"),
        }
    }

    /// Applies a `key=value` assignment.
    pub fn assign(&mut self, item: &str) -> Result<()> {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| anyhow!("expected key=value, got '{item}'"))?;
        self.set(k.trim(), v)
    }

    /// Applies a config file: one `key = value` per line, `#` comments.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.assign(line)
                .with_context(|| format!("{}:{}", path.display(), n + 1))?;
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("config key '{key}' is not declared"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| anyhow!("config key '{key}': cannot parse '{raw}': {e}"))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        let raw = self.raw(key);
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| anyhow!("config key '{key}': cannot parse '{s}': {e}"))
            })
            .collect()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn surrogate(&self) -> Result<SurrogateSpec> {
        let s = match self.raw("surrogate") {
            "hinge" => SurrogateSpec::hinge(),
            "quadratic" => SurrogateSpec::quadratic(self.get("quadratic_rho")?)?,
            "logistic" => SurrogateSpec::logistic(self.get("logistic_l")?)?,
            other => bail!("unknown surrogate '{other}'"),
        };
        Ok(s)
    }

    pub fn dr_params(&self) -> Result<DrParams> {
        let params = DrParams {
            lambda_pos: self.get("lambda_pos")?,
            lambda_neg: self.get("lambda_neg")?,
            gamma: self.get("gamma")?,
            surrogate: self.surrogate()?,
            ..DrParams::default()
        };
        params.validate()?;
        Ok(params)
    }

    pub fn loss_kind(&self) -> Result<LossKind> {
        Ok(self.raw("loss").parse()?)
    }

    pub fn loss_kinds(&self) -> Result<Vec<LossKind>> {
        let kinds: Vec<LossKind> = self.list("losses")?;
        if kinds.is_empty() {
            bail!("config key 'losses' is empty");
        }
        Ok(kinds)
    }

    /// Generator spec with the data seed `seed`.
    pub fn generator(&self, seed: u64) -> Result<GeneratorSpec> {
        let spec = GeneratorSpec {
            dim: self.get("dim")?,
            n_images: self.get("images")?,
            n_pos: self.get("n_pos")?,
            n_neg: self.get("n_neg")?,
            hard_fraction: self.get("hard_fraction")?,
            empty_fraction: self.get("empty_fraction")?,
            pos_center: self.list("pos_center")?,
            easy_center: self.list("easy_center")?,
            hard_center: self.list("hard_center")?,
            pos_std: self.get("pos_std")?,
            easy_std: self.get("easy_std")?,
            hard_std: self.get("hard_std")?,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn lr_schedule(&self) -> Result<Vec<(usize, f64)>> {
        self.raw("lr_schedule")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|item| {
                let (at, factor) = item
                    .split_once(':')
                    .ok_or_else(|| anyhow!("lr_schedule entry '{item}' is not iteration:factor"))?;
                Ok((at.trim().parse()?, factor.trim().parse()?))
            })
            .collect()
    }

    /// `None` selects the per-loss default.
    pub fn scale(&self) -> Result<Option<LossScale>> {
        Ok(match self.raw("scale") {
            "auto" => None,
            "sum" => Some(LossScale::Sum),
            "per_candidate" => Some(LossScale::PerCandidate),
            "per_positive" => Some(LossScale::PerPositive),
            other => bail!("unknown scale '{other}'"),
        })
    }

    pub fn initial_probability(&self) -> Result<Option<f64>> {
        match self.raw("initial_probability") {
            "auto" => Ok(None),
            _ => self.get("initial_probability").map(Some),
        }
    }

    /// JSON object with every resolved key, sorted.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Object(
            self.values
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
                .collect(),
        )
    }
}
