//! Central finite-difference validation of the analytic gradients.
//!
//! The checks here only ever call the forward/loss code paths, so they
//! are independent of the backward implementations they validate.
//! Random instances are redrawn whenever a draw lands within a small
//! guard band of a non-differentiable point (ReLU pre-activation at
//! zero, hinge at d = delta, coincident points under the Euclidean
//! metric), where finite differences do not estimate the subgradient.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::{AnswerMatrix, InitScheme};
use crate::head::{
    self, DistanceVector, GroundTruth, HeadParameters, Metric, ScoreVector,
};
use crate::layers::{LinearLayer, NonLinearLayer};
use crate::linalg::Matrix;
use crate::model::{self, Example, ModelParameters, TrainConfig};
use crate::rng;

/// Guard band around non-differentiable points; redraw when violated.
const KINK_GUARD: f64 = 1e-3;
const MAX_REDRAWS: usize = 500;

/// Relative error with a floor on the denominator so that components at
/// the finite-difference noise floor (~1e-9 for h = 1e-6 in f64) do not
/// dominate.
fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = (analytic.abs() + numeric.abs()).max(1e-4);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub components_checked: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub failures: Vec<String>,
}

impl GradCheckReport {
    fn new(name: &str, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            components_checked: 0,
            max_relative_error: 0.0,
            tolerance,
            failures: Vec::new(),
        }
    }

    fn record(&mut self, context: String, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.components_checked += 1;
        if err > self.max_relative_error {
            self.max_relative_error = err;
        }
        if err > self.tolerance && self.failures.len() < 16 {
            self.failures.push(format!(
                "{context}: analytic={analytic:.3e} numeric={numeric:.3e} rel={err:.3e}"
            ));
        }
    }

    pub fn ok(&self) -> bool {
        self.failures.is_empty() && self.max_relative_error <= self.tolerance
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: {} components, max relative error {:.3e} (tolerance {:.0e}) -> {}",
            self.name,
            self.components_checked,
            self.max_relative_error,
            self.tolerance,
            if self.ok() { "ok" } else { "FAILED" }
        )
    }
}

fn random_truth(rng: &mut ChaCha8Rng, len: usize) -> GroundTruth {
    let mut marks = vec![false; len];
    for m in marks.iter_mut() {
        *m = rng.random_range(0..3) == 0;
    }
    if !marks.iter().any(|&m| m) {
        marks[rng.random_range(0..len)] = true;
    }
    GroundTruth::new(marks).expect("at least one mark")
}

/// Gradient of the per-answer binary cross entropy w.r.t. the scores.
pub fn check_classification_loss(cases: usize, seed: u64, h: f64, tol: f64) -> GradCheckReport {
    let mut report = GradCheckReport::new("classification loss d/dy", tol);
    let mut rng = rng::stream(seed, "gradcheck-bce");
    for case in 0..cases {
        let len = rng.random_range(2..6);
        let mut y: Vec<f64> = (0..len).map(|_| rng.random_range(-4.0..4.0)).collect();
        let truth = random_truth(&mut rng, len);
        let (_, analytic) = head::classification_loss(&ScoreVector(y.clone()), &truth)
            .expect("matching lengths");
        for k in 0..len {
            let orig = y[k];
            y[k] = orig + h;
            let (plus, _) = head::classification_loss(&ScoreVector(y.clone()), &truth).unwrap();
            y[k] = orig - h;
            let (minus, _) = head::classification_loss(&ScoreVector(y.clone()), &truth).unwrap();
            y[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            report.record(format!("case {case} y[{k}]"), analytic[k], numeric);
        }
    }
    report
}

/// Subgradient of the hinge loss w.r.t. the distances, away from the
/// hinge point.
pub fn check_regression_loss(cases: usize, seed: u64, h: f64, tol: f64) -> GradCheckReport {
    let mut report = GradCheckReport::new("regression loss d/dd", tol);
    let mut rng = rng::stream(seed, "gradcheck-hinge");
    let delta = 1.0;
    for case in 0..cases {
        let len = rng.random_range(2..6);
        let mut d: Vec<f64> = Vec::new();
        for _ in 0..MAX_REDRAWS {
            d = (0..len).map(|_| rng.random_range(0.0..2.0)).collect();
            if d.iter().all(|&v| (v - delta).abs() > KINK_GUARD) {
                break;
            }
        }
        let truth = random_truth(&mut rng, len);
        let dist = DistanceVector {
            values: d.clone(),
            metric: Metric::Euclidean,
        };
        let (_, analytic) = head::regression_loss(&dist, &truth, delta).unwrap();
        for k in 0..len {
            let mut probe = d.clone();
            probe[k] += h;
            let plus = head::regression_loss(
                &DistanceVector {
                    values: probe.clone(),
                    metric: Metric::Euclidean,
                },
                &truth,
                delta,
            )
            .unwrap()
            .0;
            probe[k] = d[k] - h;
            let minus = head::regression_loss(
                &DistanceVector {
                    values: probe,
                    metric: Metric::Euclidean,
                },
                &truth,
                delta,
            )
            .unwrap()
            .0;
            let numeric = (plus - minus) / (2.0 * h);
            report.record(format!("case {case} d[{k}]"), analytic[k], numeric);
        }
    }
    report
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

struct HeadInstance {
    params: HeadParameters<f64>,
    x: Vec<f64>,
    truth: GroundTruth,
}

fn draw_head_instance(
    rng: &mut ChaCha8Rng,
    metric: Metric,
    delta: f64,
    weight_norm: bool,
    normalize_projection: bool,
) -> HeadInstance {
    let (d, hdim, a, p) = (4, 3, 3, 2);
    for _ in 0..MAX_REDRAWS {
        let params = HeadParameters {
            classifier_hidden: NonLinearLayer {
                weight: random_matrix(rng, hdim, d, 1.0),
                bias: (0..hdim).map(|_| rng.random_range(-0.5..0.5)).collect(),
                weight_norm,
            },
            classifier_out: LinearLayer {
                weight: random_matrix(rng, a, hdim, 1.0),
                bias: (0..a).map(|_| rng.random_range(-0.5..0.5)).collect(),
            },
            projection_hidden: NonLinearLayer {
                weight: random_matrix(rng, hdim, d, 1.0),
                bias: (0..hdim).map(|_| rng.random_range(-0.5..0.5)).collect(),
                weight_norm,
            },
            projection_out: LinearLayer {
                weight: random_matrix(rng, p, hdim, 1.0),
                bias: (0..p).map(|_| rng.random_range(-0.5..0.5)).collect(),
            },
            answer_matrix: AnswerMatrix::from_parts(
                random_matrix(rng, a, p, 1.0),
                InitScheme::Random,
                true,
                0,
            ),
            normalize_projection,
        };
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let truth = random_truth(rng, a);
        if head_instance_is_clean(&params, &x, metric, delta) {
            return HeadInstance { params, x, truth };
        }
    }
    panic!("could not draw a kink-free head instance");
}

fn head_instance_is_clean(
    params: &HeadParameters<f64>,
    x: &[f64],
    metric: Metric,
    delta: f64,
) -> bool {
    let fwd = match head::forward(x, params, metric) {
        Ok(fwd) => fwd,
        Err(_) => return false,
    };
    let pre_ok = fwd
        .classifier_cache
        .pre_activation
        .iter()
        .chain(&fwd.projection_cache.pre_activation)
        .all(|&z| z.abs() > KINK_GUARD);
    if !pre_ok {
        return false;
    }
    if params.normalize_projection && crate::linalg::l2_norm(&fwd.raw_projection) < KINK_GUARD {
        return false;
    }
    if params
        .classifier_hidden
        .weight
        .iter_rows()
        .chain(params.projection_hidden.weight.iter_rows())
        .any(|row| crate::linalg::l2_norm(row) < 1e-2)
    {
        return false;
    }
    fwd.distances.as_slice().iter().all(|&d| {
        let margin_ok = (d - delta).abs() > KINK_GUARD;
        let coincident_ok = metric != Metric::Euclidean || d > KINK_GUARD;
        margin_ok && coincident_ok
    })
}

fn head_tensor_names() -> [&'static str; 9] {
    ["W1", "b1", "W2", "b2", "V1", "c1", "V2", "c2", "M"]
}

fn with_head_tensor<R>(
    params: &mut HeadParameters<f64>,
    tensor: usize,
    f: impl FnOnce(&mut [f64]) -> R,
) -> R {
    let slice: &mut [f64] = match tensor {
        0 => params.classifier_hidden.weight.data_mut(),
        1 => &mut params.classifier_hidden.bias,
        2 => params.classifier_out.weight.data_mut(),
        3 => &mut params.classifier_out.bias,
        4 => params.projection_hidden.weight.data_mut(),
        5 => &mut params.projection_hidden.bias,
        6 => params.projection_out.weight.data_mut(),
        7 => &mut params.projection_out.bias,
        8 => params.answer_matrix.matrix_mut().data_mut(),
        _ => unreachable!(),
    };
    f(slice)
}

fn head_loss(
    x: &[f64],
    truth: &GroundTruth,
    params: &HeadParameters<f64>,
    lambda: f64,
    delta: f64,
    metric: Metric,
) -> f64 {
    let fwd = head::forward(x, params, metric).expect("valid shapes");
    head::loss(&fwd, truth, lambda, delta)
        .expect("valid loss")
        .combined
}

/// Full combined-loss gradient of the head (every parameter tensor plus
/// the fused input) against central finite differences.
pub fn check_head_gradients(
    cases: usize,
    metrics: &[Metric],
    lambdas: &[f64],
    seed: u64,
    h: f64,
    tol: f64,
) -> GradCheckReport {
    let mut report = GradCheckReport::new("head combined loss", tol);
    let mut rng = rng::stream(seed, "gradcheck-head");
    let delta = 1.0;
    for &metric in metrics {
        for &lambda in lambdas {
            for case in 0..cases {
                let weight_norm = case % 2 == 0;
                let normalize = case % 3 == 0;
                let HeadInstance {
                    mut params,
                    x,
                    truth,
                } = draw_head_instance(&mut rng, metric, delta, weight_norm, normalize);
                let analytic =
                    head::backward(&x, &truth, &params, lambda, delta, metric).unwrap();
                let analytic_tensors: Vec<Vec<f64>> = vec![
                    analytic.classifier_hidden.weight.data().to_vec(),
                    analytic.classifier_hidden.bias.clone(),
                    analytic.classifier_out.weight.data().to_vec(),
                    analytic.classifier_out.bias.clone(),
                    analytic.projection_hidden.weight.data().to_vec(),
                    analytic.projection_hidden.bias.clone(),
                    analytic.projection_out.weight.data().to_vec(),
                    analytic.projection_out.bias.clone(),
                    analytic.answer_matrix.data().to_vec(),
                ];
                for (tensor, grad) in analytic_tensors.iter().enumerate() {
                    for k in 0..grad.len() {
                        let orig = with_head_tensor(&mut params, tensor, |s| {
                            let v = s[k];
                            s[k] = v + h;
                            v
                        });
                        let plus = head_loss(&x, &truth, &params, lambda, delta, metric);
                        with_head_tensor(&mut params, tensor, |s| s[k] = orig - h);
                        let minus = head_loss(&x, &truth, &params, lambda, delta, metric);
                        with_head_tensor(&mut params, tensor, |s| s[k] = orig);
                        let numeric = (plus - minus) / (2.0 * h);
                        report.record(
                            format!(
                                "{} lambda={lambda} case {case} {}[{k}]",
                                metric.as_str(),
                                head_tensor_names()[tensor]
                            ),
                            grad[k],
                            numeric,
                        );
                    }
                }
                // Gradient w.r.t. the fused input.
                let mut x_probe = x.clone();
                for k in 0..x_probe.len() {
                    let orig = x_probe[k];
                    x_probe[k] = orig + h;
                    let plus = head_loss(&x_probe, &truth, &params, lambda, delta, metric);
                    x_probe[k] = orig - h;
                    let minus = head_loss(&x_probe, &truth, &params, lambda, delta, metric);
                    x_probe[k] = orig;
                    let numeric = (plus - minus) / (2.0 * h);
                    report.record(
                        format!("{} lambda={lambda} case {case} x[{k}]", metric.as_str()),
                        analytic.fused[k],
                        numeric,
                    );
                }
            }
        }
    }
    report
}

fn model_tensor_names() -> [&'static str; 14] {
    [
        "token_embeddings",
        "Q_W",
        "Q_b",
        "I_W",
        "I_b",
        "W1",
        "b1",
        "W2",
        "b2",
        "V1",
        "c1",
        "V2",
        "c2",
        "M",
    ]
}

fn model_loss(
    params: &ModelParameters<f64>,
    example: &Example<f64>,
    lambda: f64,
    delta: f64,
    metric: Metric,
) -> f64 {
    model::example_loss(params, example, lambda, delta, metric)
        .expect("valid example")
        .combined
}

fn draw_model_instance(
    rng: &mut ChaCha8Rng,
    metric: Metric,
    delta: f64,
    weight_norm: bool,
) -> (ModelParameters<f64>, Example<f64>) {
    let (tokens, embed, features, fused, hidden, answers, proj) = (6, 3, 4, 3, 3, 4, 2);
    let config = TrainConfig {
        embed_dim: embed,
        fused_dim: fused,
        hidden_dim: hidden,
        weight_norm,
        normalize_projection: false,
        seed: rng.random(),
        ..TrainConfig::default()
    };
    for _ in 0..MAX_REDRAWS {
        let matrix = AnswerMatrix::from_parts(
            random_matrix(rng, answers, proj, 1.0),
            InitScheme::Random,
            true,
            0,
        );
        let mut params = ModelParameters::init(tokens, features, matrix, &config);
        // Xavier init plus random biases gives richer activation patterns.
        for slice in params.tensors_mut(true) {
            for v in slice.iter_mut() {
                *v = rng.random_range(-0.8..0.8);
            }
        }
        let token_len = rng.random_range(1..4);
        let example = Example {
            question_id: "gradcheck".to_string(),
            tokens: (0..token_len).map(|_| rng.random_range(0..tokens)).collect(),
            features: (0..features).map(|_| rng.random_range(-1.0..1.0)).collect(),
            answers: {
                let count = rng.random_range(1..3);
                (0..count).map(|_| rng.random_range(0..answers)).collect()
            },
        };
        if model_instance_is_clean(&params, &example, metric, delta) {
            return (params, example);
        }
    }
    panic!("could not draw a kink-free model instance");
}

fn model_instance_is_clean(
    params: &ModelParameters<f64>,
    example: &Example<f64>,
    metric: Metric,
    delta: f64,
) -> bool {
    let fwd = match model::forward_example(params, example, metric) {
        Ok(fwd) => fwd,
        Err(_) => return false,
    };
    let encoder_ok = fwd
        .question_cache
        .pre_activation
        .iter()
        .chain(&fwd.image_cache.pre_activation)
        .all(|&z| z.abs() > KINK_GUARD);
    if !encoder_ok {
        return false;
    }
    head_instance_is_clean(&params.head, &fwd.fused, metric, delta)
}

fn with_model_tensor<R>(
    params: &mut ModelParameters<f64>,
    tensor: usize,
    f: impl FnOnce(&mut [f64]) -> R,
) -> R {
    let mut slices = params.tensors_mut(true);
    f(slices[tensor])
}

/// Whole-model gradient (token embeddings, both encoders, the head, and
/// the answer matrix) against central finite differences.
pub fn check_model_gradients(
    cases: usize,
    metrics: &[Metric],
    lambdas: &[f64],
    seed: u64,
    h: f64,
    tol: f64,
) -> GradCheckReport {
    let mut report = GradCheckReport::new("whole-model combined loss", tol);
    let mut rng = rng::stream(seed, "gradcheck-model");
    let delta = 1.0;
    for &metric in metrics {
        for &lambda in lambdas {
            for case in 0..cases {
                let weight_norm = case % 2 == 0;
                let (mut params, example) =
                    draw_model_instance(&mut rng, metric, delta, weight_norm);
                let fwd = model::forward_example(&params, &example, metric).unwrap();
                let analytic =
                    model::backward_example(&params, &example, &fwd, lambda, delta).unwrap();
                let analytic_tensors: Vec<Vec<f64>> = analytic
                    .tensors(true)
                    .into_iter()
                    .map(<[f64]>::to_vec)
                    .collect();
                for (tensor, grad) in analytic_tensors.iter().enumerate() {
                    for k in 0..grad.len() {
                        let orig = with_model_tensor(&mut params, tensor, |s| {
                            let v = s[k];
                            s[k] = v + h;
                            v
                        });
                        let plus = model_loss(&params, &example, lambda, delta, metric);
                        with_model_tensor(&mut params, tensor, |s| s[k] = orig - h);
                        let minus = model_loss(&params, &example, lambda, delta, metric);
                        with_model_tensor(&mut params, tensor, |s| s[k] = orig);
                        let numeric = (plus - minus) / (2.0 * h);
                        report.record(
                            format!(
                                "{} lambda={lambda} case {case} {}[{k}]",
                                metric.as_str(),
                                model_tensor_names()[tensor]
                            ),
                            grad[k],
                            numeric,
                        );
                    }
                }
            }
        }
    }
    report
}

/// The default lambda grid used by the gradient suite.
pub const LAMBDA_GRID: [f64; 4] = [0.0, 0.25, 0.5, 1.0];

/// Runs the full suite at the standard settings (h = 1e-6, head
/// tolerance 1e-5, whole-model tolerance 1e-4).
pub fn run_suite(cases_per_combination: usize, seed: u64) -> Vec<GradCheckReport> {
    let h = 1e-6;
    vec![
        check_classification_loss(cases_per_combination * 4, seed, h, 1e-5),
        check_regression_loss(cases_per_combination * 4, seed, h, 1e-5),
        check_head_gradients(
            cases_per_combination,
            &Metric::ALL,
            &LAMBDA_GRID,
            seed,
            h,
            1e-5,
        ),
        check_model_gradients(
            cases_per_combination,
            &Metric::ALL,
            &LAMBDA_GRID,
            seed,
            h,
            1e-4,
        ),
    ]
}
