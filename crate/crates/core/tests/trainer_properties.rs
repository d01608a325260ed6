use drank_core::trainer::{evaluate, image_gradient, LossScale};
use drank_core::*;

fn small_spec(seed: u64) -> GeneratorSpec {
    GeneratorSpec {
        n_images: 10,
        n_neg: 60,
        hard_fraction: 0.1,
        ..GeneratorSpec::reference(seed)
    }
}

fn image_loss(model: &Model, data: &GroupedDataset, spec: &LossSpec, scale: LossScale) -> f64 {
    let mut gw = vec![0.0; model.dim()];
    let mut gb = 0.0;
    data.images
        .iter()
        .map(|im| image_gradient(model, im, spec, scale, 1.0, &mut gw, &mut gb).unwrap().0)
        .sum()
}

#[test]
fn parameter_gradient_matches_finite_differences() {
    let data = make_dataset(&small_spec(2)).unwrap();
    let model = Model {
        weights: vec![0.8, 0.5, -0.3, 0.2],
        bias: -0.4,
    };
    let h = 1e-5;
    for kind in LossKind::ALL {
        let spec = kind.with_params(&DrParams::default(), 0.25, 2.0);
        for scale in [LossScale::Sum, LossScale::PerCandidate] {
            let mut gw = vec![0.0; model.dim()];
            let mut gb = 0.0;
            for im in &data.images {
                image_gradient(&model, im, &spec, scale, 1.0, &mut gw, &mut gb).unwrap();
            }
            let mut analytic = gw.clone();
            analytic.push(gb);
            for (k, &a) in analytic.iter().enumerate() {
                let shifted = |delta: f64| {
                    let mut m = model.clone();
                    if k < m.dim() {
                        m.weights[k] += delta;
                    } else {
                        m.bias += delta;
                    }
                    image_loss(&m, &data, &spec, scale)
                };
                let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                assert!(rel < 1e-4, "{kind} {scale:?} coordinate {k}: {a} vs {numeric}");
            }
        }
    }
}

#[test]
fn identical_inputs_give_identical_traces() {
    let data = make_dataset(&GeneratorSpec::reference(4)).unwrap();
    let config = TrainerConfig {
        iterations: 300,
        seed: 4,
        ..TrainerConfig::default()
    };
    let (m1, t1) = train(&data, &config).unwrap();
    let (m2, t2) = train(&data, &config).unwrap();
    assert_eq!(m1, m2);
    let bits = |t: &TrainTrace| t.records.iter().map(|r| (r.loss.to_bits(), r.grad_norm_sq.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(&t1), bits(&t2));
    let other = TrainerConfig { seed: 5, ..config };
    assert_ne!(train(&data, &other).unwrap().1, t1);
}

#[test]
fn small_steps_descend_on_average() {
    let data = make_dataset(&GeneratorSpec::reference(0)).unwrap();
    for lr in [0.1, 0.05] {
        let config = TrainerConfig {
            iterations: 2000,
            learning_rate: lr,
            ..TrainerConfig::default()
        };
        let (_, trace) = train(&data, &config).unwrap();
        let losses = trace.losses();
        let tenth = losses.len() / 10;
        let head = losses[..tenth].iter().sum::<f64>() / tenth as f64;
        let tail = losses[losses.len() - tenth..].iter().sum::<f64>() / tenth as f64;
        assert!(tail < head, "lr {lr}: head {head} tail {tail}");
    }
}

#[test]
fn clamp_stays_inactive_on_reference_data() {
    let data = make_dataset(&GeneratorSpec::reference(1)).unwrap();
    let (_, trace) = train(&data, &TrainerConfig::default()).unwrap();
    let late: usize = trace.records.iter().skip(1).map(|r| r.clamped).sum();
    assert_eq!(late, 0);
}

#[test]
fn reference_training_separates_classes() {
    let data = make_dataset(&GeneratorSpec::reference(0)).unwrap();
    let (model, _) = train(&data, &TrainerConfig::default()).unwrap();
    let eval = evaluate(&model, &data, 0.5).unwrap();
    assert!(eval.margin_pass_rate >= 0.95, "{}", eval.margin_pass_rate);
    assert!(eval.mean_pos > 0.5 && eval.mean_neg < 0.1);
}

#[test]
fn empty_positive_images_are_tolerated() {
    let spec = GeneratorSpec {
        empty_fraction: 0.3,
        ..small_spec(6)
    };
    let data = make_dataset(&spec).unwrap();
    assert!(data.images.iter().any(|im| im.positives.rows() == 0));
    for kind in LossKind::ALL {
        let config = TrainerConfig {
            iterations: 100,
            loss: kind.with_params(&DrParams::default(), 0.25, 2.0),
            ..TrainerConfig::default()
        };
        let (model, trace) = train(&data, &config).unwrap();
        assert!(trace.losses().iter().all(|l| l.is_finite()), "{kind}");
        assert!(model.weights.iter().all(|w| w.is_finite()));
    }
}

#[test]
fn auxiliary_term_is_weighted_by_tau() {
    struct Quadratic;
    impl trainer::AuxiliaryLoss for Quadratic {
        fn eval(&self, model: &Model) -> (f64, Vec<f64>, f64) {
            let v = model.weights.iter().map(|w| w * w).sum::<f64>() + model.bias * model.bias;
            (v, model.weights.iter().map(|w| 2.0 * w).collect(), 2.0 * model.bias)
        }
    }
    let data = make_dataset(&small_spec(3)).unwrap();
    let base = TrainerConfig {
        iterations: 1,
        tau: 0.0,
        ..TrainerConfig::default()
    };
    let with_aux = TrainerConfig { tau: 4.0, ..base.clone() };
    let (_, t0) = trainer::train_with(&data, &base, &Quadratic).unwrap();
    let (_, t1) = trainer::train_with(&data, &with_aux, &Quadratic).unwrap();
    let init = init_model(data.dim(), 0.5, 0).unwrap();
    let aux = init.weights.iter().map(|w| w * w).sum::<f64>();
    assert!((t1.records[0].loss - t0.records[0].loss - 4.0 * aux).abs() < 1e-12);
    // the default hook contributes nothing
    let (_, t2) = train(&data, &with_aux).unwrap();
    assert_eq!(t2, t0);
}
