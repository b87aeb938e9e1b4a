//! The dual-objective answer head.
//!
//! Two branches sit on top of the fused question/image vector x: a
//! classifier producing one score per candidate answer, trained with
//! per-answer binary cross entropy, and a projection into the answer
//! space, trained with a margin hinge loss on distances to the rows of
//! the answer matrix. The overall loss is the convex combination
//! `L = lambda * L_c + (1 - lambda) * L_p`, and predictions mix
//! `softmax(y)` with `softmax(-d)` using the same weight.
//!
//! All gradients here are analytic; `gradcheck` validates them against
//! central finite differences.

use thiserror::Error;

use crate::embedding::AnswerMatrix;
use crate::layers::{LayerCache, LayerGrad, LinearLayer, NonLinearLayer};
use crate::linalg::{axpy, dot, l2_norm, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("shape mismatch: {context} expected {expected}, found {found}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("lambda {0} outside [0, 1]")]
    LambdaOutOfRange(f64),
    #[error("margin delta must be positive, got {0}")]
    NonPositiveMargin(f64),
    #[error("ground truth must mark at least one answer")]
    EmptyGroundTruth,
    #[error("ensemble must have at least one member")]
    EmptyEnsemble,
    #[error(
        "answer matrix has {matrix_rows} rows but the classifier scores {classifier_rows}; \
         predictions with lambda > 0 require matching answer sets"
    )]
    AnswerSetMismatch {
        matrix_rows: usize,
        classifier_rows: usize,
    },
    #[error("projection dimension mismatch: matrix rows have {matrix_dim}, projection {projection_dim}")]
    ProjectionDimMismatch {
        matrix_dim: usize,
        projection_dim: usize,
    },
}

fn check_len(context: &'static str, expected: usize, found: usize) -> Result<(), HeadError> {
    if expected == found {
        Ok(())
    } else {
        Err(HeadError::ShapeMismatch {
            context,
            expected,
            found,
        })
    }
}

/// Distance measure between the projection and answer-matrix rows.
/// Dot product and cosine similarity are negated so that smaller always
/// means closer and the hinge loss applies unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Euclidean,
    Dot,
    Cosine,
}

impl Metric {
    pub fn code(self) -> u8 {
        match self {
            Metric::Euclidean => 0,
            Metric::Dot => 1,
            Metric::Cosine => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Metric::Euclidean),
            1 => Some(Metric::Dot),
            2 => Some(Metric::Cosine),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Dot => "dot",
            Metric::Cosine => "cosine",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "euclidean" => Some(Metric::Euclidean),
            "dot" => Some(Metric::Dot),
            "cosine" => Some(Metric::Cosine),
            _ => None,
        }
    }

    pub const ALL: [Metric; 3] = [Metric::Euclidean, Metric::Dot, Metric::Cosine];
}

/// Classifier scores, one per candidate answer.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector<S>(pub Vec<S>);

impl<S: Scalar> ScoreVector<S> {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.0
    }
}

/// Point in the answer space produced by the projection branch.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionVector<S>(pub Vec<S>);

impl<S: Scalar> ProjectionVector<S> {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.0
    }
}

/// Distances from a projection to every answer-matrix row.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceVector<S> {
    pub values: Vec<S>,
    pub metric: Metric,
}

impl<S: Scalar> DistanceVector<S> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.values
    }
}

/// Multi-hot ground-truth answer marks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth(Vec<bool>);

impl GroundTruth {
    pub fn new(marks: Vec<bool>) -> Result<Self, HeadError> {
        if marks.iter().any(|&m| m) {
            Ok(Self(marks))
        } else {
            Err(HeadError::EmptyGroundTruth)
        }
    }

    pub fn from_indices(len: usize, indices: &[usize]) -> Result<Self, HeadError> {
        let mut marks = vec![false; len];
        for &i in indices {
            if i >= len {
                return Err(HeadError::ShapeMismatch {
                    context: "ground-truth index",
                    expected: len,
                    found: i,
                });
            }
            marks[i] = true;
        }
        Self::new(marks)
    }

    /// Convenience for tests written with 0/1 vectors.
    pub fn from_bits(bits: &[u8]) -> Result<Self, HeadError> {
        Self::new(bits.iter().map(|&b| b != 0).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_positive(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn marks(&self) -> &[bool] {
        &self.0
    }
}

/// Loss terms for one instance or batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<S> {
    pub classification: S,
    pub regression: S,
    pub combined: S,
    pub lambda: S,
    pub delta: S,
}

impl<S: Scalar> LossBreakdown<S> {
    pub fn new(classification: S, regression: S, lambda: S, delta: S) -> Self {
        Self {
            classification,
            regression,
            combined: lambda * classification + (S::one() - lambda) * regression,
            lambda,
            delta,
        }
    }
}

/// Parameters of both head branches plus the answer matrix.
///
/// Classifier: y = W2 relu(wn(W1) x + b1) + b2.
/// Projection: p = V2 relu(wn(V1) x + c1) + c2, optionally L2-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParameters<S> {
    pub classifier_hidden: NonLinearLayer<S>,
    pub classifier_out: LinearLayer<S>,
    pub projection_hidden: NonLinearLayer<S>,
    pub projection_out: LinearLayer<S>,
    pub answer_matrix: AnswerMatrix<S>,
    pub normalize_projection: bool,
}

impl<S: Scalar> HeadParameters<S> {
    pub fn fused_dim(&self) -> usize {
        self.classifier_hidden.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.classifier_hidden.output_dim()
    }

    /// Number of answers the classifier branch scores.
    pub fn classifier_answers(&self) -> usize {
        self.classifier_out.output_dim()
    }

    pub fn projection_dim(&self) -> usize {
        self.projection_out.output_dim()
    }

    /// Replaces the answer matrix, e.g. with rows for answers never seen
    /// during training. The projection dimension must match; the score
    /// branch keeps its original answer set, so predictions over the new
    /// matrix must use lambda = 0 unless the row count is unchanged
    /// (enforced by [`validate_prediction_lambda`]).
    pub fn swap_answer_matrix(
        mut self,
        new_matrix: AnswerMatrix<S>,
    ) -> Result<Self, HeadError> {
        if new_matrix.dimension() != self.projection_dim() {
            return Err(HeadError::ProjectionDimMismatch {
                matrix_dim: new_matrix.dimension(),
                projection_dim: self.projection_dim(),
            });
        }
        self.answer_matrix = new_matrix;
        Ok(self)
    }

    /// Rejects lambda > 0 when the answer matrix no longer matches the
    /// classifier's answer set (after a swap).
    pub fn validate_prediction_lambda(&self, lambda: f64) -> Result<(), HeadError> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(HeadError::LambdaOutOfRange(lambda));
        }
        if lambda > 0.0 && self.answer_matrix.answer_count() != self.classifier_answers() {
            return Err(HeadError::AnswerSetMismatch {
                matrix_rows: self.answer_matrix.answer_count(),
                classifier_rows: self.classifier_answers(),
            });
        }
        Ok(())
    }
}

/// Forward intermediates of the full head, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct HeadForward<S> {
    pub classifier_cache: LayerCache<S>,
    pub scores: ScoreVector<S>,
    pub projection_cache: LayerCache<S>,
    /// Projection before optional normalization.
    pub raw_projection: Vec<S>,
    pub projection: ProjectionVector<S>,
    pub distances: DistanceVector<S>,
}

/// y = W2 relu(wn(W1) x + b1) + b2
pub fn forward_classifier<S: Scalar>(
    x: &[S],
    params: &HeadParameters<S>,
) -> Result<ScoreVector<S>, HeadError> {
    check_len("classifier input", params.fused_dim(), x.len())?;
    let cache = params.classifier_hidden.forward(x);
    Ok(ScoreVector(params.classifier_out.forward(&cache.output)))
}

/// p = V2 relu(wn(V1) x + c1) + c2, L2-normalized when requested
/// (zero vectors are left unchanged).
pub fn forward_projection<S: Scalar>(
    x: &[S],
    params: &HeadParameters<S>,
    normalize: bool,
) -> Result<ProjectionVector<S>, HeadError> {
    check_len("projection input", params.fused_dim(), x.len())?;
    let cache = params.projection_hidden.forward(x);
    let raw = params.projection_out.forward(&cache.output);
    Ok(ProjectionVector(normalize_projection_vector(raw, normalize)))
}

fn normalize_projection_vector<S: Scalar>(raw: Vec<S>, normalize: bool) -> Vec<S> {
    if !normalize {
        return raw;
    }
    let norm = l2_norm(&raw);
    if norm > S::zero() {
        raw.into_iter().map(|v| v / norm).collect()
    } else {
        raw
    }
}

/// Numerically stable log(1 + exp(z)).
fn softplus<S: Scalar>(z: S) -> S {
    let zero = S::zero();
    if z > zero {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Numerically stable logistic function.
pub fn sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

/// Per-answer binary cross entropy over logistic scores. Returns the
/// loss and its gradient w.r.t. the scores, sigma(y_i) - a_i. Uses the
/// softplus form, so it does not overflow for |y| <= 700.
pub fn classification_loss<S: Scalar>(
    scores: &ScoreVector<S>,
    truth: &GroundTruth,
) -> Result<(S, Vec<S>), HeadError> {
    check_len("classification loss", scores.len(), truth.len())?;
    let mut loss = S::zero();
    let mut grad = Vec::with_capacity(scores.len());
    for (&y, &positive) in scores.as_slice().iter().zip(truth.marks()) {
        // -log sigma(y) = softplus(-y); -log(1 - sigma(y)) = softplus(y).
        let term = if positive { softplus(-y) } else { softplus(y) };
        loss += term;
        let indicator = if positive { S::one() } else { S::zero() };
        grad.push(sigmoid(y) - indicator);
    }
    Ok((loss, grad))
}

/// All distances between a projection and the answer-matrix rows.
pub fn distances<S: Scalar>(
    projection: &ProjectionVector<S>,
    matrix: &AnswerMatrix<S>,
    metric: Metric,
) -> Result<DistanceVector<S>, HeadError> {
    check_len("distance dimensions", matrix.dimension(), projection.len())?;
    let p = projection.as_slice();
    let values = match metric {
        Metric::Euclidean => matrix
            .matrix()
            .iter_rows()
            .map(|row| crate::linalg::euclidean_distance(p, row))
            .collect(),
        Metric::Dot => matrix.matrix().iter_rows().map(|row| -dot(p, row)).collect(),
        Metric::Cosine => {
            let p_norm = l2_norm(p);
            matrix
                .matrix()
                .iter_rows()
                .map(|row| {
                    let r_norm = l2_norm(row);
                    if p_norm > S::zero() && r_norm > S::zero() {
                        -dot(p, row) / (p_norm * r_norm)
                    } else {
                        S::zero()
                    }
                })
                .collect()
        }
    };
    Ok(DistanceVector { values, metric })
}

/// Margin hinge loss on distances: correct answers pay their distance,
/// incorrect ones pay max(0, delta - d). Returns the loss and its
/// subgradient w.r.t. the distances (0 at the hinge point d = delta).
pub fn regression_loss<S: Scalar>(
    dist: &DistanceVector<S>,
    truth: &GroundTruth,
    delta: S,
) -> Result<(S, Vec<S>), HeadError> {
    check_len("regression loss", dist.len(), truth.len())?;
    if delta <= S::zero() {
        return Err(HeadError::NonPositiveMargin(delta.as_f64()));
    }
    let mut loss = S::zero();
    let mut grad = Vec::with_capacity(dist.len());
    for (&d, &positive) in dist.as_slice().iter().zip(truth.marks()) {
        if positive {
            loss += d;
            grad.push(S::one());
        } else if d < delta {
            loss += delta - d;
            grad.push(-S::one());
        } else {
            grad.push(S::zero());
        }
    }
    Ok((loss, grad))
}

/// L = lambda * L_c + (1 - lambda) * L_p
pub fn combined_loss<S: Scalar>(
    classification: S,
    regression: S,
    lambda: S,
) -> Result<S, HeadError> {
    if lambda < S::zero() || lambda > S::one() {
        return Err(HeadError::LambdaOutOfRange(lambda.as_f64()));
    }
    Ok(lambda * classification + (S::one() - lambda) * regression)
}

/// Runs both branches and the distance computation.
pub fn forward<S: Scalar>(
    x: &[S],
    params: &HeadParameters<S>,
    metric: Metric,
) -> Result<HeadForward<S>, HeadError> {
    check_len("head input", params.fused_dim(), x.len())?;
    let classifier_cache = params.classifier_hidden.forward(x);
    let scores = ScoreVector(params.classifier_out.forward(&classifier_cache.output));
    let projection_cache = params.projection_hidden.forward(x);
    let raw_projection = params.projection_out.forward(&projection_cache.output);
    let projection = ProjectionVector(normalize_projection_vector(
        raw_projection.clone(),
        params.normalize_projection,
    ));
    let dist = distances(&projection, &params.answer_matrix, metric)?;
    Ok(HeadForward {
        classifier_cache,
        scores,
        projection_cache,
        raw_projection,
        projection,
        distances: dist,
    })
}

/// Loss terms of the combined objective for one instance.
pub fn loss<S: Scalar>(
    forward: &HeadForward<S>,
    truth: &GroundTruth,
    lambda: S,
    delta: S,
) -> Result<LossBreakdown<S>, HeadError> {
    if lambda < S::zero() || lambda > S::one() {
        return Err(HeadError::LambdaOutOfRange(lambda.as_f64()));
    }
    let (l_c, _) = classification_loss(&forward.scores, truth)?;
    let (l_p, _) = regression_loss(&forward.distances, truth, delta)?;
    Ok(LossBreakdown::new(l_c, l_p, lambda, delta))
}

/// Gradients of the combined loss w.r.t. every head tensor and the input.
#[derive(Debug, Clone)]
pub struct HeadGradients<S> {
    pub classifier_hidden: LayerGrad<S>,
    pub classifier_out: LayerGrad<S>,
    pub projection_hidden: LayerGrad<S>,
    pub projection_out: LayerGrad<S>,
    pub answer_matrix: Matrix<S>,
    pub fused: Vec<S>,
}

impl<S: Scalar> HeadGradients<S> {
    pub fn zeros_like(params: &HeadParameters<S>) -> Self {
        Self {
            classifier_hidden: LayerGrad::zeros_like_nonlinear(&params.classifier_hidden),
            classifier_out: LayerGrad::zeros_like_linear(&params.classifier_out),
            projection_hidden: LayerGrad::zeros_like_nonlinear(&params.projection_hidden),
            projection_out: LayerGrad::zeros_like_linear(&params.projection_out),
            answer_matrix: Matrix::zeros(
                params.answer_matrix.answer_count(),
                params.answer_matrix.dimension(),
            ),
            fused: vec![S::zero(); params.fused_dim()],
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        self.classifier_hidden.add_assign(&other.classifier_hidden);
        self.classifier_out.add_assign(&other.classifier_out);
        self.projection_hidden.add_assign(&other.projection_hidden);
        self.projection_out.add_assign(&other.projection_out);
        axpy(
            self.answer_matrix.data_mut(),
            S::one(),
            other.answer_matrix.data(),
        );
        axpy(&mut self.fused, S::one(), &other.fused);
    }

    pub fn scale(&mut self, s: S) {
        self.classifier_hidden.scale(s);
        self.classifier_out.scale(s);
        self.projection_hidden.scale(s);
        self.projection_out.scale(s);
        crate::linalg::scale_in_place(self.answer_matrix.data_mut(), s);
        crate::linalg::scale_in_place(&mut self.fused, s);
    }

    pub fn zero(&mut self) {
        self.classifier_hidden.zero();
        self.classifier_out.zero();
        self.projection_hidden.zero();
        self.projection_out.zero();
        self.answer_matrix.data_mut().fill(S::zero());
        self.fused.fill(S::zero());
    }
}

/// Gradient of each distance w.r.t. the projection, accumulated with
/// weight `g`, plus the matching answer-row gradient. The Euclidean
/// gradient at a coincident point (d = 0) is defined as zero, and the
/// cosine gradient is zero whenever either norm is zero.
#[allow(clippy::too_many_arguments)]
fn backprop_distances<S: Scalar>(
    projection: &[S],
    matrix: &AnswerMatrix<S>,
    metric: Metric,
    dist: &[S],
    grad_dist: &[S],
    grad_projection: &mut [S],
    grad_matrix: &mut Matrix<S>,
    matrix_trainable: bool,
) {
    let p_norm = l2_norm(projection);
    for (i, &g) in grad_dist.iter().enumerate() {
        if g == S::zero() {
            continue;
        }
        let row = matrix.row(i);
        match metric {
            Metric::Euclidean => {
                let d = dist[i];
                if d > S::zero() {
                    let inv = g / d;
                    for k in 0..row.len() {
                        let diff = projection[k] - row[k];
                        grad_projection[k] += inv * diff;
                        if matrix_trainable {
                            grad_matrix.row_mut(i)[k] -= inv * diff;
                        }
                    }
                }
            }
            Metric::Dot => {
                axpy(grad_projection, -g, row);
                if matrix_trainable {
                    axpy(grad_matrix.row_mut(i), -g, projection);
                }
            }
            Metric::Cosine => {
                let r_norm = l2_norm(row);
                if p_norm > S::zero() && r_norm > S::zero() {
                    let cos = dot(projection, row) / (p_norm * r_norm);
                    let inv = S::one() / (p_norm * r_norm);
                    for k in 0..row.len() {
                        grad_projection[k] +=
                            g * (cos * projection[k] / (p_norm * p_norm) - row[k] * inv);
                        if matrix_trainable {
                            grad_matrix.row_mut(i)[k] +=
                                g * (cos * row[k] / (r_norm * r_norm) - projection[k] * inv);
                        }
                    }
                }
            }
        }
    }
}

/// Analytic gradients of the combined loss w.r.t. every parameter tensor
/// and the fused input. The answer matrix receives gradient only when it
/// is trainable.
pub fn backward<S: Scalar>(
    x: &[S],
    truth: &GroundTruth,
    params: &HeadParameters<S>,
    lambda: S,
    delta: S,
    metric: Metric,
) -> Result<HeadGradients<S>, HeadError> {
    let fwd = forward(x, params, metric)?;
    backward_from_forward(x, truth, params, &fwd, lambda, delta)
}

/// Backward pass reusing an existing forward evaluation.
pub fn backward_from_forward<S: Scalar>(
    x: &[S],
    truth: &GroundTruth,
    params: &HeadParameters<S>,
    fwd: &HeadForward<S>,
    lambda: S,
    delta: S,
) -> Result<HeadGradients<S>, HeadError> {
    let mut grads = HeadGradients::zeros_like(params);
    let mut grad_fused = vec![S::zero(); params.fused_dim()];
    accumulate_backward(x, truth, params, fwd, lambda, delta, &mut grads, &mut grad_fused)?;
    grads.fused = grad_fused;
    Ok(grads)
}

/// Accumulating backward pass: parameter gradients are added into
/// `grads` and the input gradient into `grad_fused` (which the caller
/// zeroes per instance). Avoids per-instance gradient allocations in
/// the training loop.
#[allow(clippy::too_many_arguments)]
pub fn accumulate_backward<S: Scalar>(
    x: &[S],
    truth: &GroundTruth,
    params: &HeadParameters<S>,
    fwd: &HeadForward<S>,
    lambda: S,
    delta: S,
    grads: &mut HeadGradients<S>,
    grad_fused: &mut [S],
) -> Result<(), HeadError> {
    if lambda < S::zero() || lambda > S::one() {
        return Err(HeadError::LambdaOutOfRange(lambda.as_f64()));
    }
    check_len("backward truth", fwd.scores.len(), truth.len())?;
    let one = S::one();

    // Classification branch: dL/dy = lambda * (sigma(y) - a).
    if lambda > S::zero() {
        let (_, mut grad_scores) = classification_loss(&fwd.scores, truth)?;
        for g in &mut grad_scores {
            *g *= lambda;
        }
        let mut grad_hidden = vec![S::zero(); params.hidden_dim()];
        params.classifier_out.backward_into(
            &fwd.classifier_cache.output,
            &grad_scores,
            &mut grad_hidden,
            &mut grads.classifier_out,
        );
        params.classifier_hidden.backward_into(
            x,
            &fwd.classifier_cache,
            &grad_hidden,
            grad_fused,
            &mut grads.classifier_hidden,
        );
    }

    // Regression branch: dL/dd = (1 - lambda) * hinge subgradient.
    let reg_weight = one - lambda;
    if reg_weight > S::zero() {
        let (_, mut grad_dist) = regression_loss(&fwd.distances, truth, delta)?;
        for g in &mut grad_dist {
            *g *= reg_weight;
        }
        let mut grad_projection = vec![S::zero(); params.projection_dim()];
        backprop_distances(
            fwd.projection.as_slice(),
            &params.answer_matrix,
            fwd.distances.metric,
            fwd.distances.as_slice(),
            &grad_dist,
            &mut grad_projection,
            &mut grads.answer_matrix,
            params.answer_matrix.trainable(),
        );

        // Through the optional L2 normalization; identity at zero.
        let grad_raw = if params.normalize_projection {
            let norm = l2_norm(&fwd.raw_projection);
            if norm > S::zero() {
                let p_hat = fwd.projection.as_slice();
                let radial = dot(&grad_projection, p_hat);
                grad_projection
                    .iter()
                    .zip(p_hat)
                    .map(|(&g, &ph)| (g - radial * ph) / norm)
                    .collect()
            } else {
                grad_projection
            }
        } else {
            grad_projection
        };

        let mut grad_hidden = vec![S::zero(); params.hidden_dim()];
        params.projection_out.backward_into(
            &fwd.projection_cache.output,
            &grad_raw,
            &mut grad_hidden,
            &mut grads.projection_out,
        );
        params.projection_hidden.backward_into(
            x,
            &fwd.projection_cache,
            &grad_hidden,
            grad_fused,
            &mut grads.projection_hidden,
        );
    }

    Ok(())
}

/// Softmax with max-subtraction stabilization.
pub fn softmax<S: Scalar>(values: &[S]) -> Vec<S> {
    let max = values
        .iter()
        .fold(S::neg_infinity(), |m, &v| if v > m { v } else { m });
    let exps: Vec<S> = values.iter().map(|&v| (v - max).exp()).collect();
    let sum = exps.iter().fold(S::zero(), |acc, &e| acc + e);
    exps.into_iter().map(|e| e / sum).collect()
}

fn argmax<S: Scalar>(values: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Mixed prediction: argmax of
/// `lambda * softmax(y) + (1 - lambda) * softmax(-d)`,
/// ties broken by the lowest index.
pub fn predict<S: Scalar>(
    scores: &ScoreVector<S>,
    dist: &DistanceVector<S>,
    lambda: S,
) -> Result<usize, HeadError> {
    if lambda < S::zero() || lambda > S::one() {
        return Err(HeadError::LambdaOutOfRange(lambda.as_f64()));
    }
    // At the endpoints only one branch participates, so the other may
    // have a different answer count (after an answer-matrix swap).
    if lambda > S::zero() && lambda < S::one() {
        check_len("predict", scores.len(), dist.len())?;
    }
    Ok(argmax(&combine_probabilities(
        scores.as_slice(),
        dist.as_slice(),
        lambda,
    )))
}

fn combine_probabilities<S: Scalar>(scores: &[S], dist: &[S], lambda: S) -> Vec<S> {
    if lambda == S::one() {
        return softmax(scores);
    }
    let negated: Vec<S> = dist.iter().map(|&d| -d).collect();
    let from_dist = softmax(&negated);
    if lambda == S::zero() {
        return from_dist;
    }
    let from_scores = softmax(scores);
    from_scores
        .into_iter()
        .zip(from_dist)
        .map(|(s, d)| lambda * s + (S::one() - lambda) * d)
        .collect()
}

/// Ensemble prediction: softmax(y) and softmax(-d) are averaged across
/// members before the mixed argmax.
pub fn ensemble_predict<S: Scalar>(
    members: &[(ScoreVector<S>, DistanceVector<S>)],
    lambda: S,
) -> Result<usize, HeadError> {
    if lambda < S::zero() || lambda > S::one() {
        return Err(HeadError::LambdaOutOfRange(lambda.as_f64()));
    }
    let first = members.first().ok_or(HeadError::EmptyEnsemble)?;
    let score_len = first.0.len();
    let dist_len = first.1.len();
    if lambda > S::zero() && lambda < S::one() {
        check_len("ensemble member", score_len, dist_len)?;
    }
    let count = S::from_f64(members.len() as f64);
    let mut mean_scores = vec![S::zero(); score_len];
    let mut mean_dist = vec![S::zero(); dist_len];
    for (scores, dist) in members {
        check_len("ensemble scores", score_len, scores.len())?;
        check_len("ensemble distances", dist_len, dist.len())?;
        axpy(&mut mean_scores, S::one(), &softmax(scores.as_slice()));
        let negated: Vec<S> = dist.as_slice().iter().map(|&d| -d).collect();
        axpy(&mut mean_dist, S::one(), &softmax(&negated));
    }
    for v in mean_scores.iter_mut().chain(mean_dist.iter_mut()) {
        *v /= count;
    }
    let combined: Vec<S> = if lambda == S::one() {
        mean_scores
    } else if lambda == S::zero() {
        mean_dist
    } else {
        mean_scores
            .into_iter()
            .zip(mean_dist)
            .map(|(s, d)| lambda * s + (S::one() - lambda) * d)
            .collect()
    };
    Ok(argmax(&combined))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::InitScheme;

    fn answer_matrix(rows: Vec<Vec<f64>>) -> AnswerMatrix<f64> {
        AnswerMatrix::from_parts(Matrix::from_rows(rows), InitScheme::Glove, true, 0)
    }

    fn zero_head(d: usize, h: usize, a: usize, p: usize) -> HeadParameters<f64> {
        HeadParameters {
            classifier_hidden: NonLinearLayer {
                weight: Matrix::zeros(h, d),
                bias: vec![0.0; h],
                weight_norm: false,
            },
            classifier_out: LinearLayer {
                weight: Matrix::zeros(a, h),
                bias: vec![0.0; a],
            },
            projection_hidden: NonLinearLayer {
                weight: Matrix::zeros(h, d),
                bias: vec![0.0; h],
                weight_norm: false,
            },
            projection_out: LinearLayer {
                weight: Matrix::zeros(p, h),
                bias: vec![0.0; p],
            },
            answer_matrix: answer_matrix(vec![vec![0.0; p]; a]),
            normalize_projection: false,
        }
    }

    #[test]
    fn zero_classifier_returns_output_bias() {
        let mut params = zero_head(3, 2, 2, 2);
        params.classifier_out.bias = vec![0.5, -1.5];
        let y = forward_classifier(&[1.0, 2.0, 3.0], &params).unwrap();
        assert_eq!(y.as_slice(), &[0.5, -1.5]);
        let y2 = forward_classifier(&[-7.0, 0.0, 4.0], &params).unwrap();
        assert_eq!(y2.as_slice(), &[0.5, -1.5]);
    }

    #[test]
    fn identity_classifier_passes_positive_input_through() {
        let mut params = zero_head(2, 2, 2, 2);
        params.classifier_hidden.weight = Matrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        params.classifier_hidden.weight_norm = true;
        params.classifier_out.weight = Matrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let y = forward_classifier(&[0.25, 1.75], &params).unwrap();
        assert_eq!(y.as_slice(), &[0.25, 1.75]);
    }

    #[test]
    fn classifier_matches_scalar_reference() {
        // Straight-line scalar re-evaluation with plain loops.
        let w1 = [[0.3, -0.2, 0.5], [0.1, 0.4, -0.6]];
        let b1 = [0.05, -0.1];
        let w2 = [[1.0, -1.0], [0.5, 0.25]];
        let b2 = [0.0, 0.2];
        let x = [0.7, -1.3, 0.4];

        let mut params = zero_head(3, 2, 2, 2);
        params.classifier_hidden.weight =
            Matrix::from_rows(w1.iter().map(|r| r.to_vec()).collect());
        params.classifier_hidden.bias = b1.to_vec();
        params.classifier_hidden.weight_norm = true;
        params.classifier_out.weight = Matrix::from_rows(w2.iter().map(|r| r.to_vec()).collect());
        params.classifier_out.bias = b2.to_vec();

        let mut hidden = [0.0f64; 2];
        for j in 0..2 {
            let norm = (w1[j][0] * w1[j][0] + w1[j][1] * w1[j][1] + w1[j][2] * w1[j][2]).sqrt();
            let mut z = b1[j];
            for k in 0..3 {
                z += w1[j][k] / norm * x[k];
            }
            hidden[j] = z.max(0.0);
        }
        let mut expected = [0.0f64; 2];
        for i in 0..2 {
            expected[i] = b2[i];
            for j in 0..2 {
                expected[i] += w2[i][j] * hidden[j];
            }
        }

        let y = forward_classifier(&x, &params).unwrap();
        for i in 0..2 {
            assert!((y.as_slice()[i] - expected[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn projection_normalizes_three_four_five() {
        let mut params = zero_head(2, 2, 2, 2);
        params.projection_out.bias = vec![3.0, 4.0];
        let p = forward_projection(&[0.0, 0.0], &params, true).unwrap();
        assert!((p.as_slice()[0] - 0.6).abs() < 1e-15);
        assert!((p.as_slice()[1] - 0.8).abs() < 1e-15);
        let norm = l2_norm(p.as_slice());
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn projection_zero_vector_is_left_unchanged() {
        let params = zero_head(2, 2, 2, 2);
        let p = forward_projection(&[1.0, 1.0], &params, true).unwrap();
        assert_eq!(p.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn classification_loss_zero_logits() {
        let y = ScoreVector(vec![0.0, 0.0]);
        let truth = GroundTruth::from_bits(&[1, 0]).unwrap();
        let (loss, grad) = classification_loss(&y, &truth).unwrap();
        assert!((loss - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((grad[0] + 0.5).abs() < 1e-15);
        assert!((grad[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn classification_loss_multi_hot() {
        let y = ScoreVector(vec![0.0, 0.0]);
        let truth = GroundTruth::from_bits(&[1, 1]).unwrap();
        let (loss, grad) = classification_loss(&y, &truth).unwrap();
        assert!((loss - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((grad[0] + 0.5).abs() < 1e-15);
        assert!((grad[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn classification_loss_confident_scores() {
        let y = ScoreVector(vec![10.0, -10.0]);
        let truth = GroundTruth::from_bits(&[1, 0]).unwrap();
        let (loss, _) = classification_loss(&y, &truth).unwrap();
        // Independent naive evaluation of the definition.
        let sigma = |z: f64| 1.0 / (1.0 + (-z).exp());
        let expected = -(sigma(10.0).ln()) - (1.0 - sigma(-10.0)).ln();
        assert!((loss - expected).abs() < 1e-15);
        assert!((loss - 9.0800e-5).abs() < 1e-8);
    }

    #[test]
    fn classification_loss_is_stable_at_extreme_scores() {
        let y = ScoreVector(vec![700.0f64, -700.0]);
        let truth = GroundTruth::from_bits(&[0, 1]).unwrap();
        let (loss, grad) = classification_loss(&y, &truth).unwrap();
        assert!(loss.is_finite());
        assert!((loss - 1400.0).abs() < 1e-9);
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn distances_identity_and_pythagorean() {
        let m = answer_matrix(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let p = ProjectionVector(vec![1.0, 2.0]);
        let d = distances(&p, &m, Metric::Euclidean).unwrap();
        assert_eq!(d.as_slice()[0], 0.0);

        let origin = ProjectionVector(vec![0.0, 0.0]);
        let d = distances(&origin, &m, Metric::Euclidean).unwrap();
        assert_eq!(d.as_slice()[1], 5.0);
    }

    #[test]
    fn dot_distance_is_negated_inner_product() {
        let m = answer_matrix(vec![vec![3.0, 4.0]]);
        let p = ProjectionVector(vec![1.0, 2.0]);
        let d = distances(&p, &m, Metric::Dot).unwrap();
        assert_eq!(d.as_slice(), &[-11.0]);
    }

    #[test]
    fn cosine_distance_guards_zero_norms() {
        let m = answer_matrix(vec![vec![0.0, 0.0], vec![1.0, 0.0]]);
        let p = ProjectionVector(vec![1.0, 0.0]);
        let d = distances(&p, &m, Metric::Cosine).unwrap();
        assert_eq!(d.as_slice()[0], 0.0);
        assert!((d.as_slice()[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn regression_loss_perfect_separation() {
        let d = DistanceVector {
            values: vec![0.0, 2.0],
            metric: Metric::Euclidean,
        };
        let truth = GroundTruth::from_bits(&[1, 0]).unwrap();
        let (loss, grad) = regression_loss(&d, &truth, 1.0).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad, vec![1.0, 0.0]);
    }

    #[test]
    fn regression_loss_partial_violation() {
        let d = DistanceVector {
            values: vec![0.2f64, 1.5],
            metric: Metric::Euclidean,
        };
        let truth = GroundTruth::from_bits(&[1, 0]).unwrap();
        let (loss, grad) = regression_loss(&d, &truth, 1.0).unwrap();
        assert!((loss - 0.2).abs() < 1e-12);
        assert_eq!(grad, vec![1.0, 0.0]);
    }

    #[test]
    fn regression_loss_both_terms_active() {
        let d = DistanceVector {
            values: vec![0.5f64, 0.3],
            metric: Metric::Euclidean,
        };
        let truth = GroundTruth::from_bits(&[1, 0]).unwrap();
        let (loss, grad) = regression_loss(&d, &truth, 1.0).unwrap();
        assert!((loss - 1.2).abs() < 1e-12);
        assert_eq!(grad, vec![1.0, -1.0]);
    }

    #[test]
    fn regression_loss_subgradient_zero_at_margin() {
        let d = DistanceVector {
            values: vec![0.0, 1.0],
            metric: Metric::Euclidean,
        };
        let truth = GroundTruth::from_bits(&[1, 0]).unwrap();
        let (loss, grad) = regression_loss(&d, &truth, 1.0).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad[1], 0.0);
    }

    #[test]
    fn regression_loss_rejects_bad_margin() {
        let d = DistanceVector {
            values: vec![0.0],
            metric: Metric::Euclidean,
        };
        let truth = GroundTruth::from_bits(&[1]).unwrap();
        assert!(matches!(
            regression_loss(&d, &truth, 0.0),
            Err(HeadError::NonPositiveMargin(_))
        ));
    }

    #[test]
    fn combined_loss_endpoints_and_midpoint() {
        assert_eq!(combined_loss(2.0, 1.0, 1.0).unwrap(), 2.0);
        assert_eq!(combined_loss(2.0, 1.0, 0.0).unwrap(), 1.0);
        assert_eq!(combined_loss(2.0, 1.0, 0.5).unwrap(), 1.5);
        assert!(combined_loss(2.0, 1.0, 1.5).is_err());
        assert!(combined_loss(2.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn predict_classification_endpoint() {
        let y = ScoreVector(vec![2.0, 1.0, 0.0]);
        let d = DistanceVector {
            values: vec![9.0, 9.0, 0.1],
            metric: Metric::Euclidean,
        };
        assert_eq!(predict(&y, &d, 1.0).unwrap(), 0);
    }

    #[test]
    fn predict_nearest_neighbor_endpoint() {
        let y = ScoreVector(vec![5.0, 0.0, 0.0]);
        let d = DistanceVector {
            values: vec![0.5, 0.1, 3.0],
            metric: Metric::Euclidean,
        };
        assert_eq!(predict(&y, &d, 0.0).unwrap(), 1);
    }

    #[test]
    fn predict_mixed_case_matches_hand_values() {
        let y = ScoreVector(vec![1.0f64, 1.0]);
        let d = DistanceVector {
            values: vec![0.3, 0.1],
            metric: Metric::Euclidean,
        };
        let probs = combine_probabilities(y.as_slice(), d.as_slice(), 0.5);
        assert!((probs[0] - 0.4751).abs() < 1e-4);
        assert!((probs[1] - 0.5249).abs() < 1e-4);
        assert_eq!(predict(&y, &d, 0.5).unwrap(), 1);
    }

    #[test]
    fn predict_breaks_ties_by_lowest_index() {
        let y = ScoreVector(vec![1.0, 1.0]);
        let d = DistanceVector {
            values: vec![0.2, 0.2],
            metric: Metric::Euclidean,
        };
        assert_eq!(predict(&y, &d, 0.5).unwrap(), 0);
    }

    #[test]
    fn backward_lambda_one_leaves_projection_and_matrix_untouched() {
        let mut params = zero_head(3, 2, 2, 2);
        params.classifier_hidden.weight =
            Matrix::from_rows(vec![vec![0.4, 0.1, -0.3], vec![0.2, -0.5, 0.6]]);
        params.projection_hidden.weight =
            Matrix::from_rows(vec![vec![0.7, 0.2, 0.1], vec![-0.1, 0.3, 0.9]]);
        params.projection_out.weight = Matrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let truth = GroundTruth::from_bits(&[1, 0]).unwrap();
        let grads = backward(&[0.5, -0.2, 0.8], &truth, &params, 1.0, 1.0, Metric::Euclidean)
            .unwrap();
        assert!(grads.projection_hidden.weight.data().iter().all(|&g| g == 0.0));
        assert!(grads.projection_out.weight.data().iter().all(|&g| g == 0.0));
        assert!(grads.answer_matrix.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_lambda_zero_leaves_classifier_untouched() {
        let mut params = zero_head(3, 2, 2, 2);
        params.classifier_hidden.weight =
            Matrix::from_rows(vec![vec![0.4, 0.1, -0.3], vec![0.2, -0.5, 0.6]]);
        params.projection_hidden.weight =
            Matrix::from_rows(vec![vec![0.7, 0.2, 0.1], vec![-0.1, 0.3, 0.9]]);
        params.projection_out.weight = Matrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        params.answer_matrix = answer_matrix(vec![vec![1.0, 0.5], vec![-0.5, 2.0]]);
        let truth = GroundTruth::from_bits(&[1, 0]).unwrap();
        let grads = backward(&[0.5, -0.2, 0.8], &truth, &params, 0.0, 1.0, Metric::Euclidean)
            .unwrap();
        assert!(grads.classifier_hidden.weight.data().iter().all(|&g| g == 0.0));
        assert!(grads.classifier_out.weight.data().iter().all(|&g| g == 0.0));
        assert!(grads.classifier_out.bias.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn frozen_answer_matrix_receives_no_gradient() {
        let mut params = zero_head(2, 2, 2, 2);
        params.projection_out.bias = vec![0.5, 0.5];
        params.answer_matrix = answer_matrix(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        params.answer_matrix.set_trainable(false);
        let truth = GroundTruth::from_bits(&[1, 0]).unwrap();
        let grads =
            backward(&[1.0, 1.0], &truth, &params, 0.0, 1.0, Metric::Euclidean).unwrap();
        assert!(grads.answer_matrix.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn swap_answer_matrix_checks_dimensions_and_lambda() {
        let params = zero_head(2, 2, 3, 2);
        let bad = answer_matrix(vec![vec![0.0; 4]; 3]);
        assert!(params.clone().swap_answer_matrix(bad).is_err());

        let swapped = params
            .swap_answer_matrix(answer_matrix(vec![vec![0.0, 1.0]; 5]))
            .unwrap();
        assert!(swapped.validate_prediction_lambda(0.0).is_ok());
        assert!(matches!(
            swapped.validate_prediction_lambda(0.5),
            Err(HeadError::AnswerSetMismatch { .. })
        ));
    }

    #[test]
    fn swap_to_identical_matrix_preserves_predictions_at_lambda_zero() {
        let mut params = zero_head(2, 2, 2, 2);
        params.projection_out.bias = vec![0.9, 0.1];
        params.answer_matrix = answer_matrix(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let before = forward(&[0.0, 0.0], &params, Metric::Euclidean).unwrap();
        let a_before = predict(&before.scores, &before.distances, 0.0).unwrap();
        let same = params.answer_matrix.clone();
        let params = params.swap_answer_matrix(same).unwrap();
        let after = forward(&[0.0, 0.0], &params, Metric::Euclidean).unwrap();
        let a_after = predict(&after.scores, &after.distances, 0.0).unwrap();
        assert_eq!(a_before, a_after);
        assert_eq!(a_before, 0);
    }

    #[test]
    fn swap_row_equal_to_projection_wins_at_lambda_zero() {
        let mut params = zero_head(2, 2, 2, 2);
        params.projection_out.bias = vec![0.25, -0.75];
        let swapped = params
            .swap_answer_matrix(answer_matrix(vec![
                vec![5.0, 5.0],
                vec![0.25, -0.75],
                vec![-3.0, 2.0],
            ]))
            .unwrap();
        let fwd = forward(&[0.0, 0.0], &swapped, Metric::Euclidean).unwrap();
        assert_eq!(predict(&fwd.scores, &fwd.distances, 0.0).unwrap(), 1);
    }

    #[test]
    fn swap_to_novel_rows_matches_brute_force_nearest_row() {
        use crate::rng;
        use rand::Rng;

        let mut stream = rng::stream(41, "swap-oracle");
        let mut params = zero_head(3, 2, 2, 4);
        params.projection_hidden.weight = Matrix::from_fn(2, 3, |_, _| stream.random_range(-1.0..1.0));
        params.projection_out.weight = Matrix::from_fn(4, 2, |_, _| stream.random_range(-1.0..1.0));
        params.projection_out.bias = (0..4).map(|_| stream.random_range(-0.5..0.5)).collect();
        let novel = AnswerMatrix::from_parts(
            Matrix::from_fn(7, 4, |_, _| stream.random_range(-1.0..1.0)),
            InitScheme::Glove,
            true,
            0,
        );
        let params = params.swap_answer_matrix(novel.clone()).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| stream.random_range(-1.0..1.0)).collect();
            let fwd = forward(&x, &params, Metric::Euclidean).unwrap();
            let predicted = predict(&fwd.scores, &fwd.distances, 0.0).unwrap();
            // Exhaustive nearest-row search over the novel matrix.
            let p = forward_projection(&x, &params, false).unwrap();
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for i in 0..novel.answer_count() {
                let d: f64 = p
                    .as_slice()
                    .iter()
                    .zip(novel.row(i))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            assert_eq!(predicted, best);
        }
    }

    #[test]
    fn projection_matches_scalar_reference() {
        let v1 = [[0.6, -0.2], [0.3, 0.8]];
        let c1 = [0.1, -0.4];
        let v2 = [[0.5, -1.0], [0.25, 0.75], [2.0, 0.0]];
        let c2 = [0.0, 0.3, -0.6];
        let x = [0.9, -0.35];

        let mut params = zero_head(2, 2, 2, 3);
        params.projection_hidden.weight =
            Matrix::from_rows(v1.iter().map(|r| r.to_vec()).collect());
        params.projection_hidden.bias = c1.to_vec();
        params.projection_hidden.weight_norm = true;
        params.projection_out.weight = Matrix::from_rows(v2.iter().map(|r| r.to_vec()).collect());
        params.projection_out.bias = c2.to_vec();

        let mut hidden = [0.0f64; 2];
        for j in 0..2 {
            let norm = (v1[j][0] * v1[j][0] + v1[j][1] * v1[j][1]).sqrt();
            let z = v1[j][0] / norm * x[0] + v1[j][1] / norm * x[1] + c1[j];
            hidden[j] = z.max(0.0);
        }
        let mut expected = [0.0f64; 3];
        for i in 0..3 {
            expected[i] = c2[i] + v2[i][0] * hidden[0] + v2[i][1] * hidden[1];
        }

        let p = forward_projection(&x, &params, false).unwrap();
        for i in 0..3 {
            assert!((p.as_slice()[i] - expected[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn ensemble_singleton_equals_predict() {
        let y = ScoreVector(vec![0.3, 0.9, -0.2]);
        let d = DistanceVector {
            values: vec![1.0, 0.4, 0.6],
            metric: Metric::Euclidean,
        };
        let single = predict(&y, &d, 0.5).unwrap();
        let ens = ensemble_predict(&[(y, d)], 0.5).unwrap();
        assert_eq!(single, ens);
    }

    #[test]
    fn ensemble_of_identical_members_is_duplication_invariant() {
        let y = ScoreVector(vec![0.3, 0.9, -0.2]);
        let d = DistanceVector {
            values: vec![1.0, 0.4, 0.6],
            metric: Metric::Euclidean,
        };
        let single = predict(&y, &d, 0.25).unwrap();
        let members: Vec<_> = (0..4).map(|_| (y.clone(), d.clone())).collect();
        assert_eq!(ensemble_predict(&members, 0.25).unwrap(), single);
    }

    #[test]
    fn ensemble_two_members_matches_hand_average() {
        let m1 = (
            ScoreVector(vec![2.0, 0.0]),
            DistanceVector {
                values: vec![0.1, 0.9],
                metric: Metric::Euclidean,
            },
        );
        let m2 = (
            ScoreVector(vec![0.0, 3.0]),
            DistanceVector {
                values: vec![0.8, 0.2],
                metric: Metric::Euclidean,
            },
        );
        // Scalar hand evaluation of the averaged-softmax combination.
        let sm = |a: f64, b: f64| {
            let (ea, eb) = ((a).exp(), (b).exp());
            (ea / (ea + eb), eb / (ea + eb))
        };
        let (s1a, s1b) = sm(2.0, 0.0);
        let (s2a, s2b) = sm(0.0, 3.0);
        let (d1a, d1b) = sm(-0.1, -0.9);
        let (d2a, d2b) = sm(-0.8, -0.2);
        let pa = 0.5 * (s1a + s2a) / 2.0 + 0.5 * (d1a + d2a) / 2.0;
        let pb = 0.5 * (s1b + s2b) / 2.0 + 0.5 * (d1b + d2b) / 2.0;
        let expected = if pa >= pb { 0 } else { 1 };
        assert_eq!(ensemble_predict(&[m1, m2], 0.5).unwrap(), expected);
    }

    #[test]
    fn ensemble_rejects_empty_and_ragged_members() {
        assert!(matches!(
            ensemble_predict::<f64>(&[], 0.5),
            Err(HeadError::EmptyEnsemble)
        ));
        let m1 = (
            ScoreVector(vec![1.0, 2.0]),
            DistanceVector {
                values: vec![0.5, 0.5],
                metric: Metric::Euclidean,
            },
        );
        let m2 = (
            ScoreVector(vec![1.0]),
            DistanceVector {
                values: vec![0.5],
                metric: Metric::Euclidean,
            },
        );
        assert!(ensemble_predict(&[m1, m2], 0.5).is_err());
    }

    #[test]
    fn loss_breakdown_convex_identity_holds() {
        let lb = LossBreakdown::new(2.0, 0.5, 0.25, 1.0);
        assert_eq!(lb.combined, 0.25 * 2.0 + 0.75 * 0.5);
    }
}
