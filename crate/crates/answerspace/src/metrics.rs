//! Evaluation metrics over prediction records.
//!
//! Accuracy and per-type accuracy, per-answer recall, entailment
//! consistency, validity (does the prediction fit the question's scope),
//! plausibility (was it ever observed with the question's template), and
//! the chi-square distance between predicted and ground-truth answer
//! distributions within question groups.
//!
//! All counting is integral and keys are iterated in sorted order, so
//! every metric is invariant under permutation of the input records.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no ground truth for question {0}")]
    MissingGroundTruth(String),
    #[error("entailment link from {from} references missing question {to}")]
    DanglingLink { from: String, to: String },
    #[error("question type {0:?} missing from the scope map")]
    MissingScope(String),
    #[error("template {0:?} missing from the co-occurrence table")]
    MissingTemplate(String),
    #[error("unknown answer {0:?}")]
    UnknownAnswer(String),
    #[error("no question groups")]
    EmptyGroups,
}

/// One evaluated question: the predicted answer index plus the score and
/// distance vectors that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord<S> {
    pub question_id: String,
    pub predicted: usize,
    pub scores: Vec<S>,
    pub distances: Vec<S>,
    pub lambda: f64,
}

/// Ground-truth side of one question.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    pub question_id: String,
    pub qtype: String,
    pub answers: BTreeSet<usize>,
    pub entailed_by: Option<String>,
    /// Grouping key for the distribution and plausibility metrics
    /// (by default the question's template).
    pub group: String,
}

/// Ground truth indexed by question id.
#[derive(Debug, Clone, Default)]
pub struct TruthSet {
    by_id: BTreeMap<String, TruthRecord>,
}

impl TruthSet {
    pub fn new(records: impl IntoIterator<Item = TruthRecord>) -> Self {
        Self {
            by_id: records
                .into_iter()
                .map(|r| (r.question_id.clone(), r))
                .collect(),
        }
    }

    pub fn get(&self, question_id: &str) -> Option<&TruthRecord> {
        self.by_id.get(question_id)
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &TruthRecord> {
        self.by_id.values()
    }
}

fn truth_for<'t, S>(
    gts: &'t TruthSet,
    pred: &PredictionRecord<S>,
) -> Result<&'t TruthRecord, MetricsError> {
    gts.get(&pred.question_id)
        .ok_or_else(|| MetricsError::MissingGroundTruth(pred.question_id.clone()))
}

fn is_correct<S>(pred: &PredictionRecord<S>, truth: &TruthRecord) -> bool {
    truth.answers.contains(&pred.predicted)
}

/// Fraction of predictions contained in their ground-truth answer set.
pub fn accuracy<S>(preds: &[PredictionRecord<S>], gts: &TruthSet) -> Result<f64, MetricsError> {
    if preds.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for pred in preds {
        if is_correct(pred, truth_for(gts, pred)?) {
            correct += 1;
        }
    }
    Ok(correct as f64 / preds.len() as f64)
}

/// Accuracy grouped by question type; types without questions are absent.
pub fn per_type_accuracy<S>(
    preds: &[PredictionRecord<S>],
    gts: &TruthSet,
) -> Result<BTreeMap<String, f64>, MetricsError> {
    let mut totals: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for pred in preds {
        let truth = truth_for(gts, pred)?;
        let entry = totals.entry(truth.qtype.clone()).or_default();
        entry.1 += 1;
        if is_correct(pred, truth) {
            entry.0 += 1;
        }
    }
    Ok(totals
        .into_iter()
        .map(|(qtype, (correct, total))| (qtype, correct as f64 / total as f64))
        .collect())
}

/// Among questions whose ground truth contains `answer`, the fraction
/// answered correctly (by any ground-truth member). `None` when no such
/// question exists.
pub fn answer_recall<S>(
    preds: &[PredictionRecord<S>],
    gts: &TruthSet,
    answer: usize,
) -> Result<Option<f64>, MetricsError> {
    let mut total = 0usize;
    let mut correct = 0usize;
    for pred in preds {
        let truth = truth_for(gts, pred)?;
        if truth.answers.contains(&answer) {
            total += 1;
            if is_correct(pred, truth) {
                correct += 1;
            }
        }
    }
    Ok((total > 0).then(|| correct as f64 / total as f64))
}

/// Recall for a named answer; errors on answers outside the vocabulary.
pub fn answer_recall_by_name<S>(
    preds: &[PredictionRecord<S>],
    gts: &TruthSet,
    vocab: &crate::embedding::AnswerVocabulary,
    answer: &str,
) -> Result<Option<f64>, MetricsError> {
    let index = vocab
        .index_of(answer)
        .ok_or_else(|| MetricsError::UnknownAnswer(answer.to_string()))?;
    answer_recall(preds, gts, index)
}

/// Recall of every vocabulary answer that appears as ground truth.
pub fn answer_recall_map<S>(
    preds: &[PredictionRecord<S>],
    gts: &TruthSet,
    vocab: &crate::embedding::AnswerVocabulary,
) -> Result<BTreeMap<String, f64>, MetricsError> {
    let mut map = BTreeMap::new();
    for (index, answer) in vocab.answers().iter().enumerate() {
        if let Some(rate) = answer_recall(preds, gts, index)? {
            map.insert(answer.clone(), rate);
        }
    }
    Ok(map)
}

/// Over entailed questions whose source question was answered correctly,
/// the fraction answered correctly themselves. 1.0 when no pair
/// qualifies.
pub fn consistency<S>(
    preds: &[PredictionRecord<S>],
    gts: &TruthSet,
) -> Result<f64, MetricsError> {
    let outcome: BTreeMap<&str, bool> = preds
        .iter()
        .map(|pred| {
            let truth = truth_for(gts, pred)?;
            Ok((pred.question_id.as_str(), is_correct(pred, truth)))
        })
        .collect::<Result<_, MetricsError>>()?;
    let mut eligible = 0usize;
    let mut agreeing = 0usize;
    for pred in preds {
        let truth = truth_for(gts, pred)?;
        let Some(source_id) = &truth.entailed_by else {
            continue;
        };
        let source_correct =
            outcome
                .get(source_id.as_str())
                .ok_or_else(|| MetricsError::DanglingLink {
                    from: pred.question_id.clone(),
                    to: source_id.clone(),
                })?;
        if *source_correct {
            eligible += 1;
            if is_correct(pred, truth) {
                agreeing += 1;
            }
        }
    }
    if eligible == 0 {
        Ok(1.0)
    } else {
        Ok(agreeing as f64 / eligible as f64)
    }
}

/// Fraction of predictions inside the admissible answer set of their
/// question's type.
pub fn validity<S>(
    preds: &[PredictionRecord<S>],
    gts: &TruthSet,
    scope: &BTreeMap<String, BTreeSet<usize>>,
) -> Result<f64, MetricsError> {
    if preds.is_empty() {
        return Ok(0.0);
    }
    let mut valid = 0usize;
    for pred in preds {
        let truth = truth_for(gts, pred)?;
        let admissible = scope
            .get(&truth.qtype)
            .ok_or_else(|| MetricsError::MissingScope(truth.qtype.clone()))?;
        if admissible.contains(&pred.predicted) {
            valid += 1;
        }
    }
    Ok(valid as f64 / preds.len() as f64)
}

/// Fraction of predictions ever observed as ground truth with their
/// question's template anywhere in the full dataset.
pub fn plausibility<S>(
    preds: &[PredictionRecord<S>],
    gts: &TruthSet,
    cooccurrence: &BTreeMap<String, BTreeSet<usize>>,
) -> Result<f64, MetricsError> {
    if preds.is_empty() {
        return Ok(0.0);
    }
    let mut plausible = 0usize;
    for pred in preds {
        let truth = truth_for(gts, pred)?;
        let observed = cooccurrence
            .get(&truth.group)
            .ok_or_else(|| MetricsError::MissingTemplate(truth.group.clone()))?;
        if observed.contains(&pred.predicted) {
            plausible += 1;
        }
    }
    Ok(plausible as f64 / preds.len() as f64)
}

/// Chi-square distance between predicted and ground-truth answer
/// distributions within question groups. Per group, with p and q the
/// normalized frequency vectors over the union of answers, the score is
/// `0.5 * sum (p - q)^2 / (p + q)` (0/0 taken as 0); the overall value
/// is the question-count-weighted mean over groups. Ground-truth
/// frequencies count every ground-truth member of every question.
pub fn distribution<S>(
    preds: &[PredictionRecord<S>],
    gts: &TruthSet,
) -> Result<f64, MetricsError> {
    let mut predicted: BTreeMap<&str, BTreeMap<usize, u64>> = BTreeMap::new();
    let mut truthful: BTreeMap<&str, BTreeMap<usize, u64>> = BTreeMap::new();
    let mut group_sizes: BTreeMap<&str, u64> = BTreeMap::new();
    for pred in preds {
        let truth = truth_for(gts, pred)?;
        let group = truth.group.as_str();
        *group_sizes.entry(group).or_default() += 1;
        *predicted
            .entry(group)
            .or_default()
            .entry(pred.predicted)
            .or_default() += 1;
        let gt_counts = truthful.entry(group).or_default();
        for &a in &truth.answers {
            *gt_counts.entry(a).or_default() += 1;
        }
    }
    if group_sizes.is_empty() {
        return Err(MetricsError::EmptyGroups);
    }
    let total_questions: u64 = group_sizes.values().sum();
    let mut weighted = 0.0;
    for (group, &size) in &group_sizes {
        let p_counts = predicted.get(group).expect("group seen in predictions");
        let q_counts = truthful.get(group).expect("group seen in ground truth");
        let p_total: u64 = p_counts.values().sum();
        let q_total: u64 = q_counts.values().sum();
        let answers: BTreeSet<usize> = p_counts.keys().chain(q_counts.keys()).copied().collect();
        let mut score = 0.0;
        for a in answers {
            let p = p_counts.get(&a).copied().unwrap_or(0) as f64 / p_total as f64;
            let q = q_counts.get(&a).copied().unwrap_or(0) as f64 / q_total as f64;
            if p + q > 0.0 {
                score += (p - q) * (p - q) / (p + q);
            }
        }
        weighted += 0.5 * score * size as f64;
    }
    Ok(weighted / total_questions as f64)
}

/// Question totals carried alongside the rates.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricCounts {
    pub questions: usize,
    pub correct: usize,
}

/// Full metric suite for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub label: String,
    pub accuracy: f64,
    pub per_type: BTreeMap<String, f64>,
    pub answer_recall: BTreeMap<String, f64>,
    pub validity: f64,
    pub plausibility: f64,
    pub distribution: f64,
    pub consistency: f64,
    pub counts: MetricCounts,
}

/// Computes the whole suite in one pass over the records.
pub fn metric_report<S>(
    label: &str,
    preds: &[PredictionRecord<S>],
    gts: &TruthSet,
    vocab: &crate::embedding::AnswerVocabulary,
    scope: &BTreeMap<String, BTreeSet<usize>>,
    cooccurrence: &BTreeMap<String, BTreeSet<usize>>,
) -> Result<MetricReport, MetricsError> {
    let mut correct = 0usize;
    for pred in preds {
        if is_correct(pred, truth_for(gts, pred)?) {
            correct += 1;
        }
    }
    Ok(MetricReport {
        label: label.to_string(),
        accuracy: accuracy(preds, gts)?,
        per_type: per_type_accuracy(preds, gts)?,
        answer_recall: answer_recall_map(preds, gts, vocab)?,
        validity: validity(preds, gts, scope)?,
        plausibility: plausibility(preds, gts, cooccurrence)?,
        distribution: distribution(preds, gts)?,
        consistency: consistency(preds, gts)?,
        counts: MetricCounts {
            questions: preds.len(),
            correct,
        },
    })
}
