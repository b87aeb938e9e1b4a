//! Desk-scale trainable joint-embedding model around the answer head.
//!
//! The question encoder is the mean of the token embeddings followed by
//! one weight-normalized nonlinear layer; the image encoder is one such
//! layer over the feature vector; the two are fused with an element-wise
//! product feeding the head. Training is deterministic given the config:
//! every random draw flows from named ChaCha streams derived from the
//! run seed.

use rand::Rng;

use thiserror::Error;

use crate::embedding::{AnswerMatrix, InitScheme};
use crate::head::{
    self, GroundTruth, HeadError, HeadForward, HeadGradients, HeadParameters, Metric,
};
use crate::layers::{LayerCache, LayerGrad, LinearLayer, NonLinearLayer};
use crate::linalg::{axpy, hadamard, Matrix};
use crate::metrics::PredictionRecord;
use crate::optim::{learning_rate, Optimizer, OptimizerKind};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("question {question_id} has no tokens")]
    EmptyQuestion { question_id: String },
    #[error("token id {token} out of range for vocabulary of {count}")]
    TokenOutOfRange { token: usize, count: usize },
    #[error("answer index {answer} out of range for {count} answers")]
    AnswerOutOfRange { answer: usize, count: usize },
    #[error("feature length {found} does not match expected {expected}")]
    FeatureDimMismatch { expected: usize, found: usize },
    #[error("fusion dimension mismatch: {left} vs {right}")]
    FusionDimMismatch { left: usize, right: usize },
    #[error("non-finite loss at iteration {iteration}: L={loss}, L_c={classification}, L_p={regression}")]
    NonFiniteLoss {
        iteration: usize,
        loss: f64,
        classification: f64,
        regression: f64,
    },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Head(#[from] HeadError),
}

/// One training/evaluation instance: token ids, image features and the
/// indices of the ground-truth answers.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<S> {
    pub question_id: String,
    pub tokens: Vec<usize>,
    pub features: Vec<S>,
    pub answers: Vec<usize>,
}

/// Training configuration. Scalar hyperparameters are plain f64 and cast
/// at the point of use.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub delta: f64,
    pub metric: Metric,
    pub iterations: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_iters: usize,
    pub lr_decay_steps: Vec<usize>,
    pub decay_factor: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub normalize_projection: bool,
    pub m_scheme: InitScheme,
    pub m_trainable: bool,
    pub embed_dim: usize,
    pub fused_dim: usize,
    pub hidden_dim: usize,
    pub weight_norm: bool,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            delta: 1.0,
            metric: Metric::Euclidean,
            iterations: 3000,
            batch_size: 32,
            base_lr: 0.05,
            warmup_iters: 200,
            lr_decay_steps: vec![2200, 2700],
            decay_factor: 0.1,
            optimizer: OptimizerKind::Adamax,
            seed: 1,
            normalize_projection: false,
            m_scheme: InitScheme::Glove,
            m_trainable: true,
            embed_dim: 32,
            fused_dim: 96,
            hidden_dim: 96,
            weight_norm: true,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(ModelError::InvalidConfig(format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        if self.delta <= 0.0 {
            return Err(ModelError::InvalidConfig(format!(
                "delta {} must be positive",
                self.delta
            )));
        }
        if self.batch_size == 0 {
            return Err(ModelError::InvalidConfig("batch_size must be positive".into()));
        }
        if self.embed_dim == 0 || self.fused_dim == 0 || self.hidden_dim == 0 {
            return Err(ModelError::InvalidConfig("dimensions must be positive".into()));
        }
        if self.log_every == 0 {
            return Err(ModelError::InvalidConfig("log_every must be positive".into()));
        }
        if self.decay_factor <= 0.0 {
            return Err(ModelError::InvalidConfig("decay_factor must be positive".into()));
        }
        if self.lr_decay_steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ModelError::InvalidConfig(
                "lr_decay_steps must be strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

/// All trainable tensors of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters<S> {
    pub token_embeddings: Matrix<S>,
    pub question_layer: NonLinearLayer<S>,
    pub image_layer: NonLinearLayer<S>,
    pub head: HeadParameters<S>,
}

impl<S: Scalar> ModelParameters<S> {
    /// Seeded initialization. Weights are uniform in
    /// +-sqrt(6 / (fan_in + fan_out)), biases zero; the answer matrix is
    /// taken as given so that initialization schemes differ only in M.
    pub fn init(
        token_count: usize,
        feature_dim: usize,
        answer_matrix: AnswerMatrix<S>,
        config: &TrainConfig,
    ) -> Self {
        let mut stream = rng::stream(config.seed, "init");
        let mut xavier = |rows: usize, cols: usize| -> Matrix<S> {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| {
                S::from_f64(stream.random_range(-bound..bound))
            })
        };
        let token_embeddings = xavier(token_count, config.embed_dim);
        let question_layer = NonLinearLayer {
            weight: xavier(config.fused_dim, config.embed_dim),
            bias: vec![S::zero(); config.fused_dim],
            weight_norm: config.weight_norm,
        };
        let image_layer = NonLinearLayer {
            weight: xavier(config.fused_dim, feature_dim),
            bias: vec![S::zero(); config.fused_dim],
            weight_norm: config.weight_norm,
        };
        let answers = answer_matrix.answer_count();
        let proj_dim = answer_matrix.dimension();
        let head = HeadParameters {
            classifier_hidden: NonLinearLayer {
                weight: xavier(config.hidden_dim, config.fused_dim),
                bias: vec![S::zero(); config.hidden_dim],
                weight_norm: config.weight_norm,
            },
            classifier_out: LinearLayer {
                weight: xavier(answers, config.hidden_dim),
                bias: vec![S::zero(); answers],
            },
            projection_hidden: NonLinearLayer {
                weight: xavier(config.hidden_dim, config.fused_dim),
                bias: vec![S::zero(); config.hidden_dim],
                weight_norm: config.weight_norm,
            },
            projection_out: LinearLayer {
                weight: xavier(proj_dim, config.hidden_dim),
                bias: vec![S::zero(); proj_dim],
            },
            answer_matrix,
            normalize_projection: config.normalize_projection,
        };
        Self {
            token_embeddings,
            question_layer,
            image_layer,
            head,
        }
    }

    pub fn token_count(&self) -> usize {
        self.token_embeddings.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.image_layer.input_dim()
    }

    /// Ordered list of trainable tensors; the optimizer and the gradient
    /// collection below rely on this order.
    pub fn tensors_mut(&mut self, include_matrix: bool) -> Vec<&mut [S]> {
        let mut tensors = vec![
            self.token_embeddings.data_mut(),
            self.question_layer.weight.data_mut(),
            self.question_layer.bias.as_mut_slice(),
            self.image_layer.weight.data_mut(),
            self.image_layer.bias.as_mut_slice(),
            self.head.classifier_hidden.weight.data_mut(),
            self.head.classifier_hidden.bias.as_mut_slice(),
            self.head.classifier_out.weight.data_mut(),
            self.head.classifier_out.bias.as_mut_slice(),
            self.head.projection_hidden.weight.data_mut(),
            self.head.projection_hidden.bias.as_mut_slice(),
            self.head.projection_out.weight.data_mut(),
            self.head.projection_out.bias.as_mut_slice(),
        ];
        if include_matrix {
            tensors.push(self.head.answer_matrix.matrix_mut().data_mut());
        }
        tensors
    }
}

/// Gradients of every model tensor for one instance or batch.
#[derive(Debug, Clone)]
pub struct ModelGradients<S> {
    pub token_embeddings: Matrix<S>,
    pub question_layer: LayerGrad<S>,
    pub image_layer: LayerGrad<S>,
    pub head: HeadGradients<S>,
}

impl<S: Scalar> ModelGradients<S> {
    pub fn zeros_like(params: &ModelParameters<S>) -> Self {
        Self {
            token_embeddings: Matrix::zeros(
                params.token_embeddings.rows(),
                params.token_embeddings.cols(),
            ),
            question_layer: LayerGrad::zeros_like_nonlinear(&params.question_layer),
            image_layer: LayerGrad::zeros_like_nonlinear(&params.image_layer),
            head: HeadGradients::zeros_like(&params.head),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        axpy(
            self.token_embeddings.data_mut(),
            S::one(),
            other.token_embeddings.data(),
        );
        self.question_layer.add_assign(&other.question_layer);
        self.image_layer.add_assign(&other.image_layer);
        self.head.add_assign(&other.head);
    }

    pub fn scale(&mut self, s: S) {
        crate::linalg::scale_in_place(self.token_embeddings.data_mut(), s);
        self.question_layer.scale(s);
        self.image_layer.scale(s);
        self.head.scale(s);
    }

    pub fn zero(&mut self) {
        self.token_embeddings.data_mut().fill(S::zero());
        self.question_layer.zero();
        self.image_layer.zero();
        self.head.zero();
    }

    /// Tensor views in the order expected by [`ModelParameters::tensors_mut`].
    pub fn tensors(&self, include_matrix: bool) -> Vec<&[S]> {
        let mut tensors = vec![
            self.token_embeddings.data(),
            self.question_layer.weight.data(),
            self.question_layer.bias.as_slice(),
            self.image_layer.weight.data(),
            self.image_layer.bias.as_slice(),
            self.head.classifier_hidden.weight.data(),
            self.head.classifier_hidden.bias.as_slice(),
            self.head.classifier_out.weight.data(),
            self.head.classifier_out.bias.as_slice(),
            self.head.projection_hidden.weight.data(),
            self.head.projection_hidden.bias.as_slice(),
            self.head.projection_out.weight.data(),
            self.head.projection_out.bias.as_slice(),
        ];
        if include_matrix {
            tensors.push(self.head.answer_matrix.data());
        }
        tensors
    }
}

/// Forward intermediates of the whole model.
#[derive(Debug, Clone)]
pub struct ModelForward<S> {
    pub mean_embedding: Vec<S>,
    pub question_cache: LayerCache<S>,
    pub image_cache: LayerCache<S>,
    pub fused: Vec<S>,
    pub head: HeadForward<S>,
}

/// Mean of the token embeddings passed through the question layer.
pub fn encode_question<S: Scalar>(
    tokens: &[usize],
    params: &ModelParameters<S>,
) -> Result<Vec<S>, ModelError> {
    let mean = mean_embedding(tokens, params, "")?;
    Ok(params.question_layer.forward(&mean).output)
}

fn mean_embedding<S: Scalar>(
    tokens: &[usize],
    params: &ModelParameters<S>,
    question_id: &str,
) -> Result<Vec<S>, ModelError> {
    if tokens.is_empty() {
        return Err(ModelError::EmptyQuestion {
            question_id: question_id.to_string(),
        });
    }
    let count = params.token_count();
    let mut mean = vec![S::zero(); params.token_embeddings.cols()];
    for &t in tokens {
        if t >= count {
            return Err(ModelError::TokenOutOfRange { token: t, count });
        }
        axpy(&mut mean, S::one(), params.token_embeddings.row(t));
    }
    let inv = S::one() / S::from_f64(tokens.len() as f64);
    for v in &mut mean {
        *v *= inv;
    }
    Ok(mean)
}

/// Element-wise product of the encoded question and image.
pub fn fuse<S: Scalar>(question: &[S], image: &[S]) -> Result<Vec<S>, ModelError> {
    if question.len() != image.len() {
        return Err(ModelError::FusionDimMismatch {
            left: question.len(),
            right: image.len(),
        });
    }
    Ok(hadamard(question, image))
}

pub fn forward_example<S: Scalar>(
    params: &ModelParameters<S>,
    example: &Example<S>,
    metric: Metric,
) -> Result<ModelForward<S>, ModelError> {
    if example.features.len() != params.feature_dim() {
        return Err(ModelError::FeatureDimMismatch {
            expected: params.feature_dim(),
            found: example.features.len(),
        });
    }
    let mean = mean_embedding(&example.tokens, params, &example.question_id)?;
    let question_cache = params.question_layer.forward(&mean);
    let image_cache = params.image_layer.forward(&example.features);
    let fused = fuse(&question_cache.output, &image_cache.output)?;
    let head = head::forward(&fused, &params.head, metric)?;
    Ok(ModelForward {
        mean_embedding: mean,
        question_cache,
        image_cache,
        fused,
        head,
    })
}

fn ground_truth<S: Scalar>(
    example: &Example<S>,
    answer_count: usize,
) -> Result<GroundTruth, ModelError> {
    for &a in &example.answers {
        if a >= answer_count {
            return Err(ModelError::AnswerOutOfRange {
                answer: a,
                count: answer_count,
            });
        }
    }
    Ok(GroundTruth::from_indices(answer_count, &example.answers)?)
}

/// Accumulating backward pass for one example: gradients of every model
/// tensor are added into `grads`.
pub fn accumulate_backward_example<S: Scalar>(
    params: &ModelParameters<S>,
    example: &Example<S>,
    fwd: &ModelForward<S>,
    lambda: S,
    delta: S,
    grads: &mut ModelGradients<S>,
) -> Result<(), ModelError> {
    let truth = ground_truth(example, params.head.classifier_answers())?;
    let mut grad_fused = vec![S::zero(); params.question_layer.output_dim()];
    head::accumulate_backward(
        &fwd.fused,
        &truth,
        &params.head,
        &fwd.head,
        lambda,
        delta,
        &mut grads.head,
        &mut grad_fused,
    )?;

    // Through the element-wise product.
    let grad_question_out = hadamard(&grad_fused, &fwd.image_cache.output);
    let grad_image_out = hadamard(&grad_fused, &fwd.question_cache.output);

    let mut grad_features = vec![S::zero(); params.feature_dim()];
    params.image_layer.backward_into(
        &example.features,
        &fwd.image_cache,
        &grad_image_out,
        &mut grad_features,
        &mut grads.image_layer,
    );

    let mut grad_mean = vec![S::zero(); params.token_embeddings.cols()];
    params.question_layer.backward_into(
        &fwd.mean_embedding,
        &fwd.question_cache,
        &grad_question_out,
        &mut grad_mean,
        &mut grads.question_layer,
    );

    // Mean over tokens: every occurrence receives grad_mean / n.
    let inv = S::one() / S::from_f64(example.tokens.len() as f64);
    for &t in &example.tokens {
        axpy(grads.token_embeddings.row_mut(t), inv, &grad_mean);
    }
    Ok(())
}

/// Analytic gradients of the combined loss for one example, including
/// the token embeddings and both encoder layers.
pub fn backward_example<S: Scalar>(
    params: &ModelParameters<S>,
    example: &Example<S>,
    fwd: &ModelForward<S>,
    lambda: S,
    delta: S,
) -> Result<ModelGradients<S>, ModelError> {
    let mut grads = ModelGradients::zeros_like(params);
    accumulate_backward_example(params, example, fwd, lambda, delta, &mut grads)?;
    Ok(grads)
}

/// Combined loss of one example.
pub fn example_loss<S: Scalar>(
    params: &ModelParameters<S>,
    example: &Example<S>,
    lambda: S,
    delta: S,
    metric: Metric,
) -> Result<head::LossBreakdown<S>, ModelError> {
    let fwd = forward_example(params, example, metric)?;
    let truth = ground_truth(example, params.head.classifier_answers())?;
    Ok(head::loss(&fwd.head, &truth, lambda, delta)?)
}

/// One logged training step.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRecord {
    pub iteration: usize,
    pub loss: f64,
    pub classification: f64,
    pub regression: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
}

/// Trains the model with mini-batch optimization of the combined loss.
/// The batch loss is the mean over instances. Identical (dataset,
/// config) pairs produce bit-identical parameters and history.
pub fn train<S: Scalar>(
    dataset: &[Example<S>],
    token_count: usize,
    answer_matrix: AnswerMatrix<S>,
    config: &TrainConfig,
) -> Result<(ModelParameters<S>, TrainHistory), ModelError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let feature_dim = dataset[0].features.len();
    let answer_count = answer_matrix.answer_count();
    for example in dataset {
        if example.features.len() != feature_dim {
            return Err(ModelError::FeatureDimMismatch {
                expected: feature_dim,
                found: example.features.len(),
            });
        }
        ground_truth(example, answer_count)?;
    }

    let mut matrix = answer_matrix;
    matrix.set_trainable(config.m_trainable);
    let mut params = ModelParameters::init(token_count, feature_dim, matrix, config);

    let include_matrix = config.m_trainable;
    let tensor_lens: Vec<usize> = params
        .tensors_mut(include_matrix)
        .iter()
        .map(|t| t.len())
        .collect();
    let mut optimizer = Optimizer::new(config.optimizer, &tensor_lens);
    let mut batch_rng = rng::stream(config.seed, "batch");
    let mut history = TrainHistory::default();

    let lambda = S::from_f64(config.lambda);
    let delta = S::from_f64(config.delta);
    let n = dataset.len();

    let mut batch_grads = ModelGradients::zeros_like(&params);
    for iteration in 0..config.iterations {
        let lr = learning_rate(
            config.base_lr,
            config.warmup_iters,
            &config.lr_decay_steps,
            config.decay_factor,
            iteration,
        );

        batch_grads.zero();
        let mut sum_classification = 0.0;
        let mut sum_regression = 0.0;
        let mut sum_combined = 0.0;
        let mut correct = 0usize;

        for _ in 0..config.batch_size {
            let idx = batch_rng.random_range(0..n);
            let example = &dataset[idx];
            let fwd = forward_example(&params, example, config.metric)?;
            let truth = ground_truth(example, answer_count)?;
            let loss = head::loss(&fwd.head, &truth, lambda, delta)?;
            sum_classification += loss.classification.as_f64();
            sum_regression += loss.regression.as_f64();
            sum_combined += loss.combined.as_f64();
            let predicted = head::predict(&fwd.head.scores, &fwd.head.distances, lambda)?;
            if example.answers.contains(&predicted) {
                correct += 1;
            }
            accumulate_backward_example(&params, example, &fwd, lambda, delta, &mut batch_grads)?;
        }

        let batch = config.batch_size as f64;
        let mean_loss = sum_combined / batch;
        if !mean_loss.is_finite() {
            return Err(ModelError::NonFiniteLoss {
                iteration,
                loss: mean_loss,
                classification: sum_classification / batch,
                regression: sum_regression / batch,
            });
        }
        batch_grads.scale(S::from_f64(1.0 / batch));

        let grad_tensors: Vec<&[S]> = batch_grads.tensors(include_matrix);
        let mut param_tensors = params.tensors_mut(include_matrix);
        optimizer.step(&mut param_tensors, &grad_tensors, S::from_f64(lr));

        if iteration % config.log_every == 0 || iteration + 1 == config.iterations {
            history.records.push(HistoryRecord {
                iteration,
                loss: mean_loss,
                classification: sum_classification / batch,
                regression: sum_regression / batch,
                accuracy: correct as f64 / batch,
            });
        }
    }

    Ok((params, history))
}

/// Evaluates every instance, preserving order. Fails if lambda > 0 while
/// the answer matrix no longer matches the classifier's answer set.
pub fn evaluate<S: Scalar>(
    params: &ModelParameters<S>,
    dataset: &[Example<S>],
    lambda: f64,
    metric: Metric,
) -> Result<Vec<PredictionRecord<S>>, ModelError> {
    params.head.validate_prediction_lambda(lambda)?;
    let lambda_s = S::from_f64(lambda);
    dataset
        .iter()
        .map(|example| {
            let fwd = forward_example(params, example, metric)?;
            let predicted = head::predict(&fwd.head.scores, &fwd.head.distances, lambda_s)?;
            Ok(PredictionRecord {
                question_id: example.question_id.clone(),
                predicted,
                scores: fwd.head.scores.0,
                distances: fwd.head.distances.values,
                lambda,
            })
        })
        .collect()
}

/// Classification-only evaluation path: runs just the classifier branch
/// and takes the highest score. Used to verify the lambda = 1 endpoint
/// end to end.
pub fn evaluate_classifier_only<S: Scalar>(
    params: &ModelParameters<S>,
    dataset: &[Example<S>],
) -> Result<Vec<(String, usize)>, ModelError> {
    dataset
        .iter()
        .map(|example| {
            let mean = mean_embedding(&example.tokens, params, &example.question_id)?;
            let q = params.question_layer.forward(&mean).output;
            let v = params.image_layer.forward(&example.features).output;
            let fused = fuse(&q, &v)?;
            let scores = head::forward_classifier(&fused, &params.head)?;
            let mut best = 0;
            for (i, &s) in scores.as_slice().iter().enumerate().skip(1) {
                if s > scores.as_slice()[best] {
                    best = i;
                }
            }
            Ok((example.question_id.clone(), best))
        })
        .collect()
}

/// Per-dataset accuracy of a list of prediction records.
pub fn prediction_accuracy<S: Scalar>(
    records: &[PredictionRecord<S>],
    dataset: &[Example<S>],
) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let correct = records
        .iter()
        .zip(dataset)
        .filter(|(r, e)| e.answers.contains(&r.predicted))
        .count();
    correct as f64 / records.len() as f64
}
