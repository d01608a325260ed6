use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use drank_core::synth::empirical_pdf;
use drank_core::sample_scores;

fn drank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drank"))
        .args(args)
        .output()
        .expect("drank runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    assert!(!text.contains('\r'));
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let (header, rows) = read_csv(path);
    let i = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[i]).collect()
}

fn out_arg(dir: &Path) -> String {
    dir.to_string_lossy().into_owned()
}

#[test]
fn tilt_demo_files_and_limits() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("tilt");
    let out = drank(&["tilt-demo", "--out", &out_arg(&dir), "--seed", "3", "demo_count=200000"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let pdfs: Vec<_> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("pdf_"))
        .collect();
    assert_eq!(pdfs.len(), 10);
    assert!(dir.join("manifest.json").exists());

    for stddev in [0.05, 0.2] {
        let raw = sample_scores(0.3, stddev, 200_000, 3).unwrap();
        let raw = empirical_pdf(&raw.values, 100).unwrap();
        let hot = column(&dir.join(format!("pdf_{stddev}_1e+09.csv")), "density");
        let diff = hot
            .iter()
            .zip(&raw.densities)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 0.05, "stddev {stddev}: {diff}");
    }

    // smallest listed λ that moves the expectation by at least 0.1
    let summary = dir.join("tilt_summary.csv");
    let (sd, lam, shift) = (column(&summary, "stddev"), column(&summary, "lambda"), column(&summary, "shift"));
    let needed = |s: f64| {
        (0..sd.len())
            .filter(|&i| sd[i] == s && shift[i] >= 0.1)
            .map(|i| lam[i])
            .fold(f64::NEG_INFINITY, f64::max)
    };
    assert!(needed(0.05) < needed(0.2));
    assert_eq!(needed(0.05), 0.02);
    assert_eq!(needed(0.2), 0.1);
}

#[test]
fn loss_curves_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let out = drank(&["loss-curves", "--out", &out_arg(tmp.path())]);
    assert_eq!(code(&out), 0);
    let path = tmp.path().join("losses.csv");
    let (header, rows) = read_csv(&path);
    assert_eq!(
        header,
        ["z", "hinge", "quadratic_rho0.1", "quadratic_rho0.5", "logistic_L4", "logistic_L6", "logistic_L10"]
    );
    let z = column(&path, "z");
    let hinge = column(&path, "hinge");
    assert_eq!(rows.len(), 201);
    assert_eq!(z[0], -1.0);
    assert_eq!(z[200], 1.0);
    for (zi, h) in z.iter().zip(&hinge) {
        assert_eq!(*h, zi.max(0.0));
    }
    let at0 = z.iter().position(|&v| v == 0.0).unwrap();
    assert!((column(&path, "logistic_L6")[at0] - std::f64::consts::LN_2 / 6.0).abs() < 1e-9);
    let gap = |name: &str| {
        column(&path, name)
            .iter()
            .zip(&hinge)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    assert!(gap("logistic_L10") < gap("logistic_L4"));
}

#[test]
fn gradcheck_exit_codes_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let small = ["gc_instances=20", "gc_max_neg=100"];
    let run = |name: &str, extra: &[&str]| {
        let mut args = vec!["gradcheck", "--seed", "4", "--out"];
        let dir = out_arg(&tmp.path().join(name));
        args.push(&dir);
        args.extend(small);
        args.extend(extra);
        drank(&args)
    };
    let a = run("a", &[]);
    let b = run("b", &[]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stdout));
    assert_eq!(a.stdout, b.stdout);
    let bad = run("c", &["--corrupt"]);
    assert_eq!(code(&bad), 1);
    let text = String::from_utf8_lossy(&bad.stdout);
    assert_eq!(text.matches("FAILED").count(), 6, "{text}");
}

#[test]
fn train_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("t");
    let out = drank(&["train", "--out", &out_arg(&dir), "iterations=300", "dump_dataset=true", "images=20"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["model.csv", "trace.csv", "pdf_pos.csv", "pdf_neg.csv", "threshold_sweep.csv", "metrics.csv", "dataset.csv", "manifest.json"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let trace = fs::read_to_string(dir.join("trace.csv")).unwrap();
    assert!(trace.starts_with("iter,loss,grad_norm_sq,lr\n"));
    assert_eq!(trace.lines().count(), 301);
    assert_eq!(
        column(&dir.join("threshold_sweep.csv"), "threshold"),
        vec![0.05, 0.1, 0.2, 0.3, 0.4, 0.5]
    );
    let dataset = fs::read_to_string(dir.join("dataset.csv")).unwrap();
    assert!(dataset.starts_with("image_id,label,x0,x1,x2,x3\n"));
    assert_eq!(dataset.lines().count(), 1 + 20 * 2002);
}

#[test]
fn divergence_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = drank(&["train", "--out", &out_arg(tmp.path()), "learning_rate=1e308", "loss=cross_entropy", "scale=sum", "iterations=20", "images=10"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("trace.csv").exists());
    let manifest = fs::read_to_string(tmp.path().join("manifest.json")).unwrap();
    assert!(manifest.contains("Diverged"));
}

#[test]
fn config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&drank(&["train", "itterations=5", "--out", &out_arg(tmp.path())])), 1);
    assert_eq!(code(&drank(&["nonsense"])), 1);
    assert_eq!(code(&drank(&["train", "loss=hinge", "--out", &out_arg(tmp.path())])), 1);
    let file = tmp.path().join("bad.cfg");
    fs::write(&file, "seed = 1\nunknown_key = 2\n").unwrap();
    assert_eq!(code(&drank(&["train", "--config", &out_arg(&file)])), 1);
    assert_eq!(code(&drank(&["--help"])), 0);
}

fn manifest_config(dir: &Path) -> BTreeMap<String, String> {
    let text = fs::read_to_string(dir.join("manifest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["config"]
        .as_object()
        .unwrap()
        .iter()
        .map(|(k, v)| (k.clone(), v.as_str().unwrap().to_string()))
        .collect()
}

#[test]
fn flags_override_file_and_manifest_reproduces() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("run.cfg");
    fs::write(
        &file,
        "# small run\nseed = 1\niterations = 200\nimages = 12 # trailing comment\nloss = neg_only\n",
    )
    .unwrap();
    let first = tmp.path().join("first");
    let out = drank(&["train", "--config", &out_arg(&file), "--seed", "8", "iterations=150", "--out", &out_arg(&first)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = manifest_config(&first);
    assert_eq!(cfg["seed"], "8");
    assert_eq!(cfg["iterations"], "150");
    assert_eq!(cfg["images"], "12");
    assert_eq!(cfg["loss"], "neg_only");

    // rerun from the manifest alone
    let replay = tmp.path().join("replay.cfg");
    let second = tmp.path().join("second");
    let lines: String = cfg
        .iter()
        .filter(|(k, _)| k.as_str() != "out")
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect();
    fs::write(&replay, lines).unwrap();
    assert_eq!(code(&drank(&["train", "--config", &out_arg(&replay), "--out", &out_arg(&second)])), 0);
    for f in ["trace.csv", "model.csv", "threshold_sweep.csv", "pdf_pos.csv"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn compare_records_failures_without_aborting() {
    let tmp = tempfile::tempdir().unwrap();
    let out = drank(&[
        "compare",
        "--out",
        &out_arg(tmp.path()),
        "losses=dr,cross_entropy",
        "seeds=2",
        "iterations=5",
        "images=8",
        "learning_rate=1e308",
        "scale=sum",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let runs = fs::read_to_string(tmp.path().join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 5);
    assert!(runs.contains(",failed,"));
    let summary = fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    assert!(summary.starts_with("loss,runs,failed,final_loss,final_loss_std,margin_pass_rate"));
}

#[test]
fn every_loss_separates_the_easy_control() {
    let tmp = tempfile::tempdir().unwrap();
    let out = drank(&[
        "compare",
        "--out",
        &out_arg(tmp.path()),
        "hard_fraction=0",
        "iterations=20000",
        "seeds=1",
    ]);
    assert_eq!(code(&out), 0);
    let path = tmp.path().join("summary.csv");
    let text = fs::read_to_string(&path).unwrap();
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let pass: f64 = fields[5].parse().unwrap();
        assert!(pass >= 0.99, "{}: {pass}", fields[0]);
    }
}
