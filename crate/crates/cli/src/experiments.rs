//! Training runs and multi-loss comparisons shared by the commands and the
//! acceptance suite.

use anyhow::Result;
use drank_core::trainer::{evaluate, Evaluation, LossScale};
use drank_core::{make_dataset, train, GroupedDataset, LossKind, Model, TrainTrace, TrainerConfig};

use crate::config::Config;

/// Iterations averaged for the reported final loss.
pub const FINAL_WINDOW: usize = 100;

/// Per-loss defaults for `scale=auto` and `initial_probability=auto`.
///
/// The ranking losses are already normalized per image. Cross-entropy is
/// averaged over candidates; focal loss is normalized by the positive count
/// and starts from a 0.01 prior.
pub fn loss_defaults(kind: LossKind) -> (LossScale, f64) {
    match kind {
        LossKind::CrossEntropy => (LossScale::PerCandidate, 0.5),
        LossKind::Focal => (LossScale::PerPositive, 0.01),
        _ => (LossScale::Sum, 0.5),
    }
}

pub fn trainer_config(cfg: &Config, kind: LossKind, seed: u64) -> Result<TrainerConfig> {
    let (scale, init) = loss_defaults(kind);
    let params = cfg.dr_params()?;
    Ok(TrainerConfig {
        batch_size: cfg.get("batch_size")?,
        iterations: cfg.get("iterations")?,
        learning_rate: cfg.get("learning_rate")?,
        seed,
        loss: kind.with_params(&params, cfg.get("focal_alpha")?, cfg.get("focal_gamma")?),
        scale: cfg.scale()?.unwrap_or(scale),
        tau: cfg.get("tau")?,
        lr_schedule: cfg.lr_schedule()?,
        initial_probability: cfg.initial_probability()?.unwrap_or(init),
    })
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub model: Model,
    pub trace: TrainTrace,
    pub evaluation: Evaluation,
}

impl RunResult {
    pub fn final_loss(&self) -> f64 {
        self.trace.tail_mean(FINAL_WINDOW)
    }
}

/// Trains and evaluates with margin `gamma`.
pub fn run(data: &GroupedDataset, config: &TrainerConfig, gamma: f64) -> drank_core::Result<RunResult> {
    let (model, trace) = train(data, config)?;
    let evaluation = evaluate(&model, data, gamma)?;
    Ok(RunResult {
        model,
        trace,
        evaluation,
    })
}

/// Outcome of one `(loss, seed)` run in a comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    /// `(final loss, margin pass-rate, mean positive, mean negative)`, or the
    /// failure message.
    pub result: std::result::Result<[f64; 4], String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub kind: LossKind,
    pub runs: Vec<SeedOutcome>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl CompareRow {
    fn column(&self, i: usize) -> Vec<f64> {
        self.runs
            .iter()
            .filter_map(|r| r.result.as_ref().ok().map(|v| v[i]))
            .collect()
    }

    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.result.is_err()).count()
    }

    /// Mean and population stddev over successful seeds.
    pub fn final_loss(&self) -> (f64, f64) {
        mean_std(&self.column(0))
    }

    pub fn pass_rate(&self) -> (f64, f64) {
        mean_std(&self.column(1))
    }

    pub fn mean_pos(&self) -> f64 {
        mean_std(&self.column(2)).0
    }

    pub fn mean_neg(&self) -> f64 {
        mean_std(&self.column(3)).0
    }
}

/// Trains every loss in `kinds` on the datasets of seeds
/// `base_seed .. base_seed + seeds`. Losses run on separate threads; rows
/// come back in the order of `kinds`.
pub fn compare(cfg: &Config, kinds: &[LossKind], base_seed: u64, seeds: usize) -> Result<Vec<CompareRow>> {
    let gamma: f64 = cfg.get("gamma")?;
    let seed_list: Vec<u64> = (0..seeds as u64).map(|k| base_seed.wrapping_add(k)).collect();
    let datasets = seed_list
        .iter()
        .map(|&s| Ok(make_dataset(&cfg.generator(s)?)?))
        .collect::<Result<Vec<_>>>()?;
    let configs = kinds
        .iter()
        .map(|&k| seed_list.iter().map(|&s| trainer_config(cfg, k, s)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;

    let rows = std::thread::scope(|scope| {
        let handles: Vec<_> = kinds
            .iter()
            .zip(&configs)
            .map(|(&kind, per_seed)| {
                let datasets = &datasets;
                scope.spawn(move || CompareRow {
                    kind,
                    runs: per_seed
                        .iter()
                        .zip(datasets)
                        .map(|(config, data)| SeedOutcome {
                            seed: config.seed,
                            result: run(data, config, gamma)
                                .map(|r| {
                                    let e = &r.evaluation;
                                    [r.final_loss(), e.margin_pass_rate, e.mean_pos, e.mean_neg]
                                })
                                .map_err(|e| e.to_string()),
                        })
                        .collect(),
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    });
    Ok(rows)
}
