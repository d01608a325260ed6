//! Python module `drank`: tilting, losses with gradients, gradient checks
//! and the synthetic training loop.

use drank_core::{LossKind, LossSpec, SurrogateSpec};

fn surrogate_from(name: &str, l: f64, rho: f64) -> drank_core::Result<SurrogateSpec> {
    match name {
        "hinge" => Ok(SurrogateSpec::hinge()),
        "quadratic" => SurrogateSpec::quadratic(rho),
        "logistic" => SurrogateSpec::logistic(l),
        other => Err(drank_core::Error::InvalidParam(format!("unknown surrogate '{other}'"))),
    }
}

fn loss_spec(kind: &str, params: &drank_core::DrParams, focal_alpha: f64, focal_gamma: f64) -> drank_core::Result<LossSpec> {
    Ok(kind.parse::<LossKind>()?.with_params(params, focal_alpha, focal_gamma))
}

#[pyo3::pymodule]
mod drank {
    use pyo3::exceptions::PyValueError;
    use pyo3::prelude::*;

    use drank_core::trainer::{evaluate, LossScale};
    use drank_core::{gradcheck, ImageScores, LossKind, Prior};

    fn err(e: drank_core::Error) -> PyErr {
        PyValueError::new_err(e.to_string())
    }

    fn scores(positives: Vec<f64>, negatives: Vec<f64>) -> PyResult<ImageScores> {
        ImageScores::new(positives, negatives).map_err(err)
    }

    fn prior(mask: Option<Vec<usize>>) -> PyResult<Prior> {
        mask.map_or(Ok(Prior::Uniform), |m| Prior::mask(m).map_err(err))
    }

    /// Loss parameters shared by the distributional ranking losses.
    #[pyclass(name = "DrParams", skip_from_py_object)]
    #[derive(Clone)]
    pub struct PyDrParams {
        inner: drank_core::DrParams,
    }

    #[pymethods]
    impl PyDrParams {
        #[new]
        #[pyo3(signature = (lambda_pos=1.0, lambda_neg=0.1, gamma=0.5, surrogate="logistic", l=6.0, rho=0.1))]
        fn new(lambda_pos: f64, lambda_neg: f64, gamma: f64, surrogate: &str, l: f64, rho: f64) -> PyResult<Self> {
            let inner = drank_core::DrParams {
                lambda_pos,
                lambda_neg,
                gamma,
                surrogate: super::surrogate_from(surrogate, l, rho).map_err(err)?,
                ..Default::default()
            };
            inner.validate().map_err(err)?;
            Ok(Self { inner })
        }

        #[getter]
        fn lambda_pos(&self) -> f64 {
            self.inner.lambda_pos
        }

        #[getter]
        fn lambda_neg(&self) -> f64 {
            self.inner.lambda_neg
        }

        #[getter]
        fn gamma(&self) -> f64 {
            self.inner.gamma
        }

        fn __repr__(&self) -> String {
            format!(
                "DrParams(lambda_pos={}, lambda_neg={}, gamma={}, surrogate={:?})",
                self.inner.lambda_pos, self.inner.lambda_neg, self.inner.gamma, self.inner.surrogate
            )
        }
    }

    fn params_or_default(params: Option<PyRef<'_, PyDrParams>>) -> drank_core::DrParams {
        params.map(|p| p.inner.clone()).unwrap_or_default()
    }

    /// Returns `(weights, log_normalizer, expectation)`.
    #[pyfunction]
    #[pyo3(signature = (scores, lam, mask=None))]
    fn tilt_negative(scores: Vec<f64>, lam: f64, mask: Option<Vec<usize>>) -> PyResult<(Vec<f64>, f64, f64)> {
        let t = drank_core::tilt_negative(&scores, lam, &prior(mask)?).map_err(err)?;
        Ok((t.weights, t.log_normalizer, t.expectation))
    }

    /// Returns `(weights, log_normalizer, expectation)`.
    #[pyfunction]
    #[pyo3(signature = (scores, lam, mask=None))]
    fn tilt_positive(scores: Vec<f64>, lam: f64, mask: Option<Vec<usize>>) -> PyResult<(Vec<f64>, f64, f64)> {
        let t = drank_core::tilt_positive(&scores, lam, &prior(mask)?).map_err(err)?;
        Ok((t.weights, t.log_normalizer, t.expectation))
    }

    /// Surrogate value and derivative at `z`.
    #[pyfunction]
    #[pyo3(signature = (name, z, l=6.0, rho=0.1))]
    fn surrogate(name: &str, z: f64, l: f64, rho: f64) -> PyResult<(f64, f64)> {
        super::surrogate_from(name, l, rho).and_then(|s| s.eval(z)).map_err(err)
    }

    /// Evaluates a loss by name; returns `(loss, grad_pos, grad_neg)`.
    #[pyfunction]
    #[pyo3(signature = (kind, positives, negatives, params=None, focal_alpha=0.25, focal_gamma=2.0))]
    fn loss(
        kind: &str,
        positives: Vec<f64>,
        negatives: Vec<f64>,
        params: Option<PyRef<'_, PyDrParams>>,
        focal_alpha: f64,
        focal_gamma: f64,
    ) -> PyResult<(f64, Vec<f64>, Vec<f64>)> {
        let spec = super::loss_spec(kind, &params_or_default(params), focal_alpha, focal_gamma).map_err(err)?;
        let r = spec.evaluate(&scores(positives, negatives)?).map_err(err)?;
        Ok((r.loss, r.grad_pos, r.grad_neg))
    }

    /// Distributional ranking loss; returns `(loss, grad_pos, grad_neg)`.
    #[pyfunction]
    #[pyo3(signature = (positives, negatives, params=None))]
    fn dr_loss(
        positives: Vec<f64>,
        negatives: Vec<f64>,
        params: Option<PyRef<'_, PyDrParams>>,
    ) -> PyResult<(f64, Vec<f64>, Vec<f64>)> {
        let r = drank_core::dr_loss(&scores(positives, negatives)?, &params_or_default(params)).map_err(err)?;
        Ok((r.loss, r.grad_pos, r.grad_neg))
    }

    /// Returns `(min_pos, max_neg, satisfies)`.
    #[pyfunction]
    #[pyo3(signature = (positives, negatives, gamma=0.5))]
    fn margin_check(positives: Vec<f64>, negatives: Vec<f64>, gamma: f64) -> PyResult<(f64, f64, bool)> {
        let r = drank_core::margin_check(&scores(positives, negatives)?, gamma).map_err(err)?;
        Ok((r.min_pos, r.max_neg, r.satisfies))
    }

    /// Central-difference check of a loss; returns `(max_rel_error, passed)`.
    #[pyfunction]
    #[pyo3(signature = (kind, positives, negatives, params=None, step=gradcheck::DEFAULT_STEP, threshold=gradcheck::DEFAULT_THRESHOLD))]
    fn check_gradient(
        kind: &str,
        positives: Vec<f64>,
        negatives: Vec<f64>,
        params: Option<PyRef<'_, PyDrParams>>,
        step: f64,
        threshold: f64,
    ) -> PyResult<(f64, bool)> {
        let spec = super::loss_spec(kind, &params_or_default(params), 0.25, 2.0).map_err(err)?;
        let s = scores(positives, negatives)?;
        let r = gradcheck::check(|x: &ImageScores| spec.evaluate(x), &s, step, threshold).map_err(err)?;
        Ok((r.max_rel_error, r.passed))
    }

    #[pyfunction]
    fn tuned_lambdas(h_pos: f64, h_neg: f64) -> PyResult<(f64, f64)> {
        drank_core::tuned_lambdas(h_pos, h_neg).map_err(err)
    }

    #[pyfunction]
    #[pyo3(signature = (mean, stddev, count, seed=0))]
    fn sample_scores(mean: f64, stddev: f64, count: usize, seed: u64) -> PyResult<Vec<f64>> {
        Ok(drank_core::sample_scores(mean, stddev, count, seed).map_err(err)?.values)
    }

    /// Outcome of `train`.
    #[pyclass(name = "TrainResult", get_all)]
    pub struct PyTrainResult {
        weights: Vec<f64>,
        bias: f64,
        losses: Vec<f64>,
        margin_pass_rate: f64,
        mean_pos: f64,
        mean_neg: f64,
    }

    #[pymethods]
    impl PyTrainResult {
        /// Score of one feature vector.
        fn score(&self, x: Vec<f64>) -> f64 {
            drank_core::Model {
                weights: self.weights.clone(),
                bias: self.bias,
            }
            .score(&x)
        }

        fn __repr__(&self) -> String {
            format!(
                "TrainResult(margin_pass_rate={:.3}, mean_pos={:.4}, mean_neg={:.4})",
                self.margin_pass_rate, self.mean_pos, self.mean_neg
            )
        }
    }

    /// Trains a linear scorer on the reference synthetic dataset.
    #[pyfunction]
    #[pyo3(signature = (kind="dr", seed=0, iterations=2000, learning_rate=0.5, batch_size=4, images=100, n_neg=2000, hard_fraction=0.01, params=None))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        kind: &str,
        seed: u64,
        iterations: usize,
        learning_rate: f64,
        batch_size: usize,
        images: usize,
        n_neg: usize,
        hard_fraction: f64,
        params: Option<PyRef<'_, PyDrParams>>,
    ) -> PyResult<PyTrainResult> {
        let kind: LossKind = kind.parse().map_err(err)?;
        let params = params_or_default(params);
        let spec = drank_core::GeneratorSpec {
            n_images: images,
            n_neg,
            hard_fraction,
            ..drank_core::GeneratorSpec::reference(seed)
        };
        let (scale, init) = match kind {
            LossKind::CrossEntropy => (LossScale::PerCandidate, 0.5),
            LossKind::Focal => (LossScale::PerPositive, 0.01),
            _ => (LossScale::Sum, 0.5),
        };
        let config = drank_core::TrainerConfig {
            batch_size,
            iterations,
            learning_rate,
            seed,
            loss: kind.with_params(&params, 0.25, 2.0),
            scale,
            initial_probability: init,
            ..Default::default()
        };
        let gamma = params.gamma;
        let (model, trace, eval) = py
            .detach(|| {
                let data = drank_core::make_dataset(&spec)?;
                let (model, trace) = drank_core::train(&data, &config)?;
                let eval = evaluate(&model, &data, gamma)?;
                Ok((model, trace, eval))
            })
            .map_err(err)?;
        Ok(PyTrainResult {
            weights: model.weights,
            bias: model.bias,
            losses: trace.losses(),
            margin_pass_rate: eval.margin_pass_rate,
            mean_pos: eval.mean_pos,
            mean_neg: eval.mean_neg,
        })
    }

    #[pymodule_init]
    fn init(m: &Bound<'_, PyModule>) -> PyResult<()> {
        m.add("LOSSES", LossKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surrogate_names() {
        assert_eq!(surrogate_from("hinge", 6.0, 0.1).unwrap(), SurrogateSpec::Hinge);
        assert_eq!(surrogate_from("logistic", 4.0, 0.1).unwrap(), SurrogateSpec::Logistic { l: 4.0 });
        assert!(surrogate_from("cubic", 1.0, 1.0).is_err());
        assert!(surrogate_from("quadratic", 1.0, 0.0).is_err());
    }

    #[test]
    fn loss_names() {
        let p = drank_core::DrParams::default();
        assert_eq!(loss_spec("focal", &p, 0.25, 2.0).unwrap(), LossSpec::Focal { alpha: 0.25, gamma: 2.0 });
        assert!(loss_spec("dice", &p, 0.25, 2.0).is_err());
    }
}
