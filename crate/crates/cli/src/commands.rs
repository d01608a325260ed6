//! The `drank` subcommands. Each writes CSV files and a `manifest.json`
//! into the output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use drank_core::csvio::{format_g9, CsvWriter};
use drank_core::gradcheck::{run_suite, SuiteConfig};
use drank_core::synth::{empirical_pdf, empirical_pdf_weighted};
use drank_core::{make_dataset, sample_scores, tilt_negative, Error, LossKind, Prior, SurrogateSpec};

use crate::config::Config;
use crate::experiments::{compare, run, trainer_config};

pub const THRESHOLDS: [f64; 6] = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    CheckFailed,
    Diverged,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Success => 0,
            Status::CheckFailed => 1,
            Status::Diverged => 2,
        }
    }
}

/// Tracks the files written into one output directory.
struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn file(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.root.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.written.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    fn csv(&mut self, name: &str, header: &[&str]) -> Result<CsvWriter<BufWriter<File>>> {
        let out = self.file(name)?;
        Ok(CsvWriter::new(out, header)?)
    }

    fn finish(mut self, command: &str, cfg: &Config, status: Status) -> Result<()> {
        self.written.sort();
        let manifest = serde_json::json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "status": format!("{status:?}"),
            "config": cfg.to_json(),
            "outputs": self.written,
        });
        let mut out = self.file("manifest.json")?;
        serde_json::to_writer_pretty(&mut out, &manifest)?;
        writeln!(out)?;
        out.flush()?;
        Ok(())
    }
}

fn flush<W: Write>(w: CsvWriter<W>) -> Result<()> {
    w.into_inner().flush()?;
    Ok(())
}

fn out_dir(cfg: &Config) -> PathBuf {
    PathBuf::from(cfg.raw("out"))
}

/// Tilt-weighted score histograms for every `(stddev, λ)` pair.
pub fn tilt_demo(cfg: &Config) -> Result<Status> {
    let mut out = OutDir::create(&out_dir(cfg))?;
    let seed: u64 = cfg.get("seed")?;
    let mean: f64 = cfg.get("demo_mean")?;
    let count: usize = cfg.get("demo_count")?;
    let bins: usize = cfg.get("bins")?;
    let lambdas: Vec<f64> = cfg.list("demo_lambdas")?;
    let mut summary = out.csv("tilt_summary.csv", &["stddev", "lambda", "expectation", "shift", "mode"])?;
    println!("{:>8} {:>10} {:>12} {:>10} {:>8}", "stddev", "lambda", "expectation", "shift", "mode");
    for stddev in cfg.list::<f64>("demo_stddevs")? {
        let sample = sample_scores(mean, stddev, count, seed)?;
        let raw_mean = sample.values.iter().sum::<f64>() / count as f64;
        for &lambda in &lambdas {
            let t = tilt_negative(&sample.values, lambda, &Prior::Uniform)?;
            let hist = empirical_pdf_weighted(&sample.values, &t.weights, bins)?;
            let name = format!("pdf_{}_{}.csv", format_g9(stddev), format_g9(lambda));
            let mut f = out.file(&name)?;
            hist.write_csv(&mut f)?;
            f.flush()?;
            let shift = t.expectation - raw_mean;
            summary.floats(&[stddev, lambda, t.expectation, shift, hist.mode()])?;
            println!(
                "{:>8} {:>10} {:>12.6} {:>10.6} {:>8.3}",
                format_g9(stddev),
                format_g9(lambda),
                t.expectation,
                shift,
                hist.mode()
            );
        }
    }
    flush(summary)?;
    out.finish("tilt-demo", cfg, Status::Success)?;
    Ok(Status::Success)
}

/// Hinge and its smoothings on a grid over `[-1, 1]`.
pub fn loss_curves(cfg: &Config) -> Result<Status> {
    let mut out = OutDir::create(&out_dir(cfg))?;
    let points: usize = cfg.get("curve_points")?;
    anyhow::ensure!(points >= 2, "curve_points must be at least 2");
    let mut columns = vec![("hinge".to_string(), SurrogateSpec::hinge())];
    for rho in cfg.list::<f64>("curve_rhos")? {
        columns.push((format!("quadratic_rho{}", format_g9(rho)), SurrogateSpec::quadratic(rho)?));
    }
    for l in cfg.list::<f64>("curve_ls")? {
        columns.push((format!("logistic_L{}", format_g9(l)), SurrogateSpec::logistic(l)?));
    }
    let mut header = vec!["z"];
    header.extend(columns.iter().map(|(n, _)| n.as_str()));
    let mut w = out.csv("losses.csv", &header)?;
    for i in 0..points {
        let z = -1.0 + 2.0 * i as f64 / (points - 1) as f64;
        let mut row = vec![z];
        row.extend(columns.iter().map(|(_, s)| s.loss(z)));
        w.floats(&row)?;
    }
    flush(w)?;
    println!("wrote {} columns over {points} points", columns.len());
    out.finish("loss-curves", cfg, Status::Success)?;
    Ok(Status::Success)
}

/// Finite-difference check of every loss on random instances.
pub fn gradcheck(cfg: &Config) -> Result<Status> {
    let mut out = OutDir::create(&out_dir(cfg))?;
    let params = cfg.dr_params()?;
    let suite = SuiteConfig {
        instances: cfg.get("gc_instances")?,
        max_pos: cfg.get("gc_max_pos")?,
        max_neg: cfg.get("gc_max_neg")?,
        step: cfg.get("gc_step")?,
        threshold: cfg.get("gc_threshold")?,
        seed: cfg.get("seed")?,
        corrupt: cfg.get("corrupt")?,
    };
    let mut w = out.csv("gradcheck.csv", &["loss", "instances", "redrawn", "max_rel_error", "passed"])?;
    let mut all_passed = true;
    for kind in LossKind::ALL {
        let spec = kind.with_params(&params, cfg.get("focal_alpha")?, cfg.get("focal_gamma")?);
        let report = run_suite(&spec, &suite)?;
        all_passed &= report.passed;
        println!(
            "{:<14} max rel error {:.3e} over {} instances ({} redrawn) {}",
            kind.name(),
            report.max_rel_error,
            report.instances,
            report.rejected,
            if report.passed { "ok" } else { "FAILED" }
        );
        w.record(&[
            kind.name().to_string(),
            report.instances.to_string(),
            report.rejected.to_string(),
            format_g9(report.max_rel_error),
            report.passed.to_string(),
        ])?;
    }
    flush(w)?;
    let status = if all_passed { Status::Success } else { Status::CheckFailed };
    out.finish("gradcheck", cfg, status)?;
    Ok(status)
}

/// Trains one loss and writes the model, trace, score histograms and a
/// threshold sweep.
pub fn train(cfg: &Config) -> Result<Status> {
    let mut out = OutDir::create(&out_dir(cfg))?;
    let seed: u64 = cfg.get("seed")?;
    let kind = cfg.loss_kind()?;
    let gamma: f64 = cfg.get("gamma")?;
    let data = make_dataset(&cfg.generator(seed)?)?;
    if cfg.get::<bool>("dump_dataset")? {
        let mut f = out.file("dataset.csv")?;
        data.write_csv(&mut f)?;
        f.flush()?;
    }
    let config = trainer_config(cfg, kind, seed)?;
    let result = match run(&data, &config, gamma) {
        Ok(r) => r,
        Err(Error::DivergenceDetected { iteration, trace }) => {
            eprintln!("training diverged at iteration {iteration}");
            let mut f = out.file("trace.csv")?;
            trace.write_csv(&mut f)?;
            f.flush()?;
            out.finish("train", cfg, Status::Diverged)?;
            return Ok(Status::Diverged);
        }
        Err(e) => return Err(e.into()),
    };

    let mut w = out.csv("model.csv", &["parameter", "value"])?;
    for (i, v) in result.model.weights.iter().enumerate() {
        w.record(&[format!("w{i}"), format_g9(*v)])?;
    }
    w.record(&["bias".to_string(), format_g9(result.model.bias)])?;
    flush(w)?;

    let mut f = out.file("trace.csv")?;
    result.trace.write_csv(&mut f)?;
    f.flush()?;

    let bins: usize = cfg.get("bins")?;
    let e = &result.evaluation;
    for (name, scores) in [("pdf_pos.csv", &e.pos_scores), ("pdf_neg.csv", &e.neg_scores)] {
        if scores.is_empty() {
            continue;
        }
        let mut f = out.file(name)?;
        empirical_pdf(scores, bins)?.write_csv(&mut f)?;
        f.flush()?;
    }

    let mut w = out.csv("threshold_sweep.csv", &["threshold", "frac_pos_kept", "frac_neg_kept"])?;
    for t in THRESHOLDS {
        let (p, n) = e.kept_fractions(t);
        w.floats(&[t, p, n])?;
    }
    flush(w)?;

    let mut w = out.csv("metrics.csv", &["metric", "value"])?;
    let metrics = [
        ("final_loss", result.final_loss()),
        ("margin_pass_rate", e.margin_pass_rate),
        ("mean_pos", e.mean_pos),
        ("mean_neg", e.mean_neg),
    ];
    for (k, v) in metrics {
        w.record(&[k.to_string(), format_g9(v)])?;
        println!("{k:<18} {v:.6}");
    }
    flush(w)?;
    out.finish("train", cfg, Status::Success)?;
    Ok(Status::Success)
}

/// Trains every configured loss over several seeds and summarizes.
pub fn compare_cmd(cfg: &Config) -> Result<Status> {
    let mut out = OutDir::create(&out_dir(cfg))?;
    let kinds = cfg.loss_kinds()?;
    let rows = compare(cfg, &kinds, cfg.get("seed")?, cfg.get("seeds")?)?;

    let mut runs = out.csv(
        "runs.csv",
        &["loss", "seed", "status", "final_loss", "margin_pass_rate", "mean_pos", "mean_neg"],
    )?;
    for row in &rows {
        for r in &row.runs {
            let mut fields = vec![row.kind.name().to_string(), r.seed.to_string()];
            match &r.result {
                Ok(v) => {
                    fields.push("ok".into());
                    fields.extend(v.iter().map(|&x| format_g9(x)));
                }
                Err(msg) => {
                    eprintln!("{} seed {}: {msg}", row.kind, r.seed);
                    fields.push("failed".into());
                    fields.extend(std::iter::repeat_n("nan".to_string(), 4));
                }
            }
            runs.record(&fields)?;
        }
    }
    flush(runs)?;

    let mut w = out.csv(
        "summary.csv",
        &[
            "loss",
            "runs",
            "failed",
            "final_loss",
            "final_loss_std",
            "margin_pass_rate",
            "margin_pass_rate_std",
            "mean_pos",
            "mean_neg",
        ],
    )?;
    println!(
        "{:<14} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "loss", "final", "final_std", "pass", "mean_pos", "mean_neg"
    );
    for row in &rows {
        let (loss, loss_std) = row.final_loss();
        let (pass, pass_std) = row.pass_rate();
        w.record(&[
            row.kind.name().to_string(),
            row.runs.len().to_string(),
            row.failures().to_string(),
            format_g9(loss),
            format_g9(loss_std),
            format_g9(pass),
            format_g9(pass_std),
            format_g9(row.mean_pos()),
            format_g9(row.mean_neg()),
        ])?;
        println!(
            "{:<14} {:>10.5} {:>10.5} {:>10.3} {:>10.4} {:>10.4}",
            row.kind.name(),
            loss,
            loss_std,
            pass,
            row.mean_pos(),
            row.mean_neg()
        );
    }
    flush(w)?;
    out.finish("compare", cfg, Status::Success)?;
    Ok(Status::Success)
}
