//! File formats: the answer-matrix binary, the named-tensor checkpoint
//! container, the tab-separated dataset, prediction files, metric
//! reports (key=value text plus JSON), and the training history CSV.
//!
//! All binary payloads are little-endian 64-bit floats; all text formats
//! print floats through Rust's shortest-roundtrip formatting, so writing
//! and re-reading recovers the exact values.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::embedding::{AnswerMatrix, AnswerVocabulary, InitScheme};
use crate::head::{HeadParameters, Metric};
use crate::layers::{LinearLayer, NonLinearLayer};
use crate::linalg::Matrix;
use crate::metrics::{MetricReport, PredictionRecord};
use crate::model::{ModelParameters, TrainHistory};
use crate::synth::{QaInstance, QuestionType, Vocabularies};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Embedding(#[from] crate::embedding::EmbeddingError),
}

fn format_err(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

// ---------------------------------------------------------------------------
// Answer matrix: magic "ANSMAT1", A, P, scheme code, seed, then A*P
// little-endian f64, row-major.
// ---------------------------------------------------------------------------

const ANSWER_MATRIX_MAGIC: &[u8; 7] = b"ANSMAT1";

pub fn save_answer_matrix(path: &Path, matrix: &AnswerMatrix<f64>) -> Result<(), IoError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    out.write_all(ANSWER_MATRIX_MAGIC)?;
    out.write_all(&(matrix.answer_count() as u64).to_le_bytes())?;
    out.write_all(&(matrix.dimension() as u64).to_le_bytes())?;
    out.write_all(&[matrix.scheme().code()])?;
    out.write_all(&matrix.seed().to_le_bytes())?;
    for &v in matrix.matrix().data() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_answer_matrix(path: &Path) -> Result<AnswerMatrix<f64>, IoError> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 7];
    reader.read_exact(&mut magic)?;
    if &magic != ANSWER_MATRIX_MAGIC {
        return Err(format_err(path, "bad magic, not an answer-matrix file"));
    }
    let answers = read_u64(&mut reader)? as usize;
    let dim = read_u64(&mut reader)? as usize;
    let mut code = [0u8; 1];
    reader.read_exact(&mut code)?;
    let scheme = InitScheme::from_code(code[0])
        .ok_or_else(|| format_err(path, format!("unknown scheme code {}", code[0])))?;
    let seed = read_u64(&mut reader)?;
    let data = read_f64_vec(&mut reader, answers * dim)?;
    Ok(AnswerMatrix::from_parts(
        Matrix::from_vec(answers, dim, data),
        scheme,
        true,
        seed,
    ))
}

fn read_u64<R: Read>(reader: &mut R) -> Result<u64, IoError> {
    let mut buf = [0u8; 8];
    reader.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_u32<R: Read>(reader: &mut R) -> Result<u32, IoError> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64_vec<R: Read>(reader: &mut R, len: usize) -> Result<Vec<f64>, IoError> {
    let mut bytes = vec![0u8; len * 8];
    reader.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

// ---------------------------------------------------------------------------
// Checkpoint container: versioned named tensors plus key=value metadata.
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"ANSCKPT1";
const CHECKPOINT_VERSION: u32 = 1;

/// Scalar metadata stored alongside the tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub lambda: f64,
    pub delta: f64,
    pub metric: Metric,
    pub normalize_projection: bool,
    pub weight_norm: bool,
    pub seed: u64,
    pub m_scheme: InitScheme,
    pub m_seed: u64,
    pub m_trainable: bool,
    /// Free-form key=value lines (the training config, labels, ...).
    pub extra: BTreeMap<String, String>,
}

impl CheckpointMeta {
    fn to_kv(&self) -> String {
        let mut lines = vec![
            format!("lambda={}", self.lambda),
            format!("delta={}", self.delta),
            format!("metric={}", self.metric.as_str()),
            format!("normalize_projection={}", self.normalize_projection),
            format!("weight_norm={}", self.weight_norm),
            format!("seed={}", self.seed),
            format!("m_scheme={}", self.m_scheme.as_str()),
            format!("m_seed={}", self.m_seed),
            format!("m_trainable={}", self.m_trainable),
        ];
        for (k, v) in &self.extra {
            lines.push(format!("{k}={v}"));
        }
        lines.join("\n")
    }

    fn from_kv(path: &Path, text: &str) -> Result<Self, IoError> {
        let mut map = BTreeMap::new();
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                map.insert(k.to_string(), v.to_string());
            }
        }
        let take = |map: &mut BTreeMap<String, String>, key: &str| -> Result<String, IoError> {
            map.remove(key)
                .ok_or_else(|| format_err(path, format!("missing metadata key {key:?}")))
        };
        let parse_f64 = |path: &Path, key: &str, v: String| -> Result<f64, IoError> {
            v.parse()
                .map_err(|_| format_err(path, format!("bad value for {key:?}: {v:?}")))
        };
        let lambda = parse_f64(path, "lambda", take(&mut map, "lambda")?)?;
        let delta = parse_f64(path, "delta", take(&mut map, "delta")?)?;
        let metric_name = take(&mut map, "metric")?;
        let metric = Metric::parse(&metric_name)
            .ok_or_else(|| format_err(path, format!("unknown metric {metric_name:?}")))?;
        let normalize_projection = take(&mut map, "normalize_projection")? == "true";
        let weight_norm = take(&mut map, "weight_norm")? == "true";
        let seed = take(&mut map, "seed")?
            .parse()
            .map_err(|_| format_err(path, "bad seed"))?;
        let scheme_name = take(&mut map, "m_scheme")?;
        let m_scheme = InitScheme::parse(&scheme_name)
            .ok_or_else(|| format_err(path, format!("unknown scheme {scheme_name:?}")))?;
        let m_seed = take(&mut map, "m_seed")?
            .parse()
            .map_err(|_| format_err(path, "bad m_seed"))?;
        let m_trainable = take(&mut map, "m_trainable")? == "true";
        Ok(Self {
            lambda,
            delta,
            metric,
            normalize_projection,
            weight_norm,
            seed,
            m_scheme,
            m_seed,
            m_trainable,
            extra: map,
        })
    }
}

struct TensorEntry<'a> {
    name: &'static str,
    dims: Vec<u64>,
    data: &'a [f64],
}

fn write_container(
    path: &Path,
    meta: &CheckpointMeta,
    tensors: &[TensorEntry<'_>],
) -> Result<(), IoError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let kv = meta.to_kv();
    out.write_all(&(kv.len() as u64).to_le_bytes())?;
    out.write_all(kv.as_bytes())?;
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for tensor in tensors {
        out.write_all(&(tensor.name.len() as u32).to_le_bytes())?;
        out.write_all(tensor.name.as_bytes())?;
        out.write_all(&(tensor.dims.len() as u32).to_le_bytes())?;
        for &d in &tensor.dims {
            out.write_all(&d.to_le_bytes())?;
        }
        let expected: u64 = tensor.dims.iter().product();
        assert_eq!(expected as usize, tensor.data.len(), "tensor shape mismatch");
        for &v in tensor.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

struct LoadedTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

fn read_container(
    path: &Path,
) -> Result<(CheckpointMeta, BTreeMap<String, LoadedTensor>), IoError> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(format_err(path, "bad magic, not a checkpoint file"));
    }
    let version = read_u32(&mut reader)?;
    if version != CHECKPOINT_VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let kv_len = read_u64(&mut reader)? as usize;
    let mut kv_bytes = vec![0u8; kv_len];
    reader.read_exact(&mut kv_bytes)?;
    let kv = String::from_utf8(kv_bytes)
        .map_err(|_| format_err(path, "metadata is not UTF-8"))?;
    let meta = CheckpointMeta::from_kv(path, &kv)?;
    let count = read_u32(&mut reader)? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = read_u32(&mut reader)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        reader.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| format_err(path, "tensor name is not UTF-8"))?;
        let rank = read_u32(&mut reader)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u64(&mut reader)? as usize);
        }
        let len: usize = dims.iter().product();
        let data = read_f64_vec(&mut reader, len)?;
        tensors.insert(name, LoadedTensor { dims, data });
    }
    Ok((meta, tensors))
}

fn head_tensor_entries<'a>(head: &'a HeadParameters<f64>) -> Vec<TensorEntry<'a>> {
    let mat = |name: &'static str, m: &'a Matrix<f64>| TensorEntry {
        name,
        dims: vec![m.rows() as u64, m.cols() as u64],
        data: m.data(),
    };
    let vec_ = |name: &'static str, v: &'a [f64]| TensorEntry {
        name,
        dims: vec![v.len() as u64],
        data: v,
    };
    vec![
        mat("W1", &head.classifier_hidden.weight),
        vec_("b1", &head.classifier_hidden.bias),
        mat("W2", &head.classifier_out.weight),
        vec_("b2", &head.classifier_out.bias),
        mat("V1", &head.projection_hidden.weight),
        vec_("c1", &head.projection_hidden.bias),
        mat("V2", &head.projection_out.weight),
        vec_("c2", &head.projection_out.bias),
        mat("M", head.answer_matrix.matrix()),
    ]
}

/// The answer-matrix and normalization metadata always reflect the
/// parameters being saved, whatever the caller put in `meta`.
fn effective_meta(meta: &CheckpointMeta, head: &HeadParameters<f64>) -> CheckpointMeta {
    CheckpointMeta {
        normalize_projection: head.normalize_projection,
        weight_norm: head.classifier_hidden.weight_norm,
        m_scheme: head.answer_matrix.scheme(),
        m_seed: head.answer_matrix.seed(),
        m_trainable: head.answer_matrix.trainable(),
        ..meta.clone()
    }
}

/// Persists the head branch tensors plus metadata.
pub fn save_head_parameters(
    path: &Path,
    head: &HeadParameters<f64>,
    meta: &CheckpointMeta,
) -> Result<(), IoError> {
    write_container(path, &effective_meta(meta, head), &head_tensor_entries(head))
}

/// Persists the whole model: the head tensors plus the token embeddings
/// and both encoder layers.
pub fn save_checkpoint(
    path: &Path,
    params: &ModelParameters<f64>,
    meta: &CheckpointMeta,
) -> Result<(), IoError> {
    let mut tensors = vec![
        TensorEntry {
            name: "token_embeddings",
            dims: vec![
                params.token_embeddings.rows() as u64,
                params.token_embeddings.cols() as u64,
            ],
            data: params.token_embeddings.data(),
        },
        TensorEntry {
            name: "Q_W",
            dims: vec![
                params.question_layer.weight.rows() as u64,
                params.question_layer.weight.cols() as u64,
            ],
            data: params.question_layer.weight.data(),
        },
        TensorEntry {
            name: "Q_b",
            dims: vec![params.question_layer.bias.len() as u64],
            data: &params.question_layer.bias,
        },
        TensorEntry {
            name: "I_W",
            dims: vec![
                params.image_layer.weight.rows() as u64,
                params.image_layer.weight.cols() as u64,
            ],
            data: params.image_layer.weight.data(),
        },
        TensorEntry {
            name: "I_b",
            dims: vec![params.image_layer.bias.len() as u64],
            data: &params.image_layer.bias,
        },
    ];
    tensors.extend(head_tensor_entries(&params.head));
    write_container(path, &effective_meta(meta, &params.head), &tensors)
}

fn take_matrix(
    path: &Path,
    tensors: &mut BTreeMap<String, LoadedTensor>,
    name: &str,
) -> Result<Matrix<f64>, IoError> {
    let t = tensors
        .remove(name)
        .ok_or_else(|| format_err(path, format!("missing tensor {name:?}")))?;
    if t.dims.len() != 2 {
        return Err(format_err(path, format!("tensor {name:?} is not a matrix")));
    }
    Ok(Matrix::from_vec(t.dims[0], t.dims[1], t.data))
}

fn take_vector(
    path: &Path,
    tensors: &mut BTreeMap<String, LoadedTensor>,
    name: &str,
) -> Result<Vec<f64>, IoError> {
    let t = tensors
        .remove(name)
        .ok_or_else(|| format_err(path, format!("missing tensor {name:?}")))?;
    if t.dims.len() != 1 {
        return Err(format_err(path, format!("tensor {name:?} is not a vector")));
    }
    Ok(t.data)
}

fn head_from_tensors(
    path: &Path,
    tensors: &mut BTreeMap<String, LoadedTensor>,
    meta: &CheckpointMeta,
) -> Result<HeadParameters<f64>, IoError> {
    Ok(HeadParameters {
        classifier_hidden: NonLinearLayer {
            weight: take_matrix(path, tensors, "W1")?,
            bias: take_vector(path, tensors, "b1")?,
            weight_norm: meta.weight_norm,
        },
        classifier_out: LinearLayer {
            weight: take_matrix(path, tensors, "W2")?,
            bias: take_vector(path, tensors, "b2")?,
        },
        projection_hidden: NonLinearLayer {
            weight: take_matrix(path, tensors, "V1")?,
            bias: take_vector(path, tensors, "c1")?,
            weight_norm: meta.weight_norm,
        },
        projection_out: LinearLayer {
            weight: take_matrix(path, tensors, "V2")?,
            bias: take_vector(path, tensors, "c2")?,
        },
        answer_matrix: AnswerMatrix::from_parts(
            take_matrix(path, tensors, "M")?,
            meta.m_scheme,
            meta.m_trainable,
            meta.m_seed,
        ),
        normalize_projection: meta.normalize_projection,
    })
}

pub fn load_head_parameters(
    path: &Path,
) -> Result<(HeadParameters<f64>, CheckpointMeta), IoError> {
    let (meta, mut tensors) = read_container(path)?;
    let head = head_from_tensors(path, &mut tensors, &meta)?;
    Ok((head, meta))
}

pub fn load_checkpoint(
    path: &Path,
) -> Result<(ModelParameters<f64>, CheckpointMeta), IoError> {
    let (meta, mut tensors) = read_container(path)?;
    let token_embeddings = take_matrix(path, &mut tensors, "token_embeddings")?;
    let question_layer = NonLinearLayer {
        weight: take_matrix(path, &mut tensors, "Q_W")?,
        bias: take_vector(path, &mut tensors, "Q_b")?,
        weight_norm: meta.weight_norm,
    };
    let image_layer = NonLinearLayer {
        weight: take_matrix(path, &mut tensors, "I_W")?,
        bias: take_vector(path, &mut tensors, "I_b")?,
        weight_norm: meta.weight_norm,
    };
    let head = head_from_tensors(path, &mut tensors, &meta)?;
    Ok((
        ModelParameters {
            token_embeddings,
            question_layer,
            image_layer,
            head,
        },
        meta,
    ))
}

// ---------------------------------------------------------------------------
// Dataset: one record per line, tab-separated.
// ---------------------------------------------------------------------------

/// Writes instances as tab-separated lines: question id, question type,
/// entailing question id (or "-"), space-joined tokens, comma-joined
/// answer strings, comma-joined feature decimals.
pub fn write_dataset(
    path: &Path,
    instances: &[QaInstance],
    vocab: &Vocabularies,
) -> Result<(), IoError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for instance in instances {
        let tokens: Vec<&str> = instance
            .tokens
            .iter()
            .map(|&t| vocab.token_word(t))
            .collect();
        let answers: Vec<&str> = instance
            .answers
            .iter()
            .map(|&a| vocab.answers.answer(a))
            .collect();
        let features: Vec<String> = instance
            .image_features
            .iter()
            .map(|f| format!("{f}"))
            .collect();
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            instance.question_id,
            instance.qtype.as_str(),
            instance.entailed_by.as_deref().unwrap_or("-"),
            tokens.join(" "),
            answers.join(","),
            features.join(",")
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a dataset file back, resolving tokens and answers through the
/// given vocabularies.
pub fn read_dataset(path: &Path, vocab: &Vocabularies) -> Result<Vec<QaInstance>, IoError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut instances = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(format_err(
                path,
                format!("line {}: expected 6 fields, found {}", idx + 1, fields.len()),
            ));
        }
        let qtype = QuestionType::parse(fields[1]).ok_or_else(|| {
            format_err(path, format!("line {}: unknown question type {:?}", idx + 1, fields[1]))
        })?;
        let entailed_by = match fields[2] {
            "-" => None,
            other => Some(other.to_string()),
        };
        let tokens = fields[3]
            .split(' ')
            .map(|w| {
                vocab.token_id(w).ok_or_else(|| {
                    format_err(path, format!("line {}: unknown token {w:?}", idx + 1))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let answers = fields[4]
            .split(',')
            .map(|a| {
                vocab.answers.index_of(a).ok_or_else(|| {
                    format_err(path, format!("line {}: unknown answer {a:?}", idx + 1))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let image_features = fields[5]
            .split(',')
            .map(|f| {
                f.parse::<f64>().map_err(|_| {
                    format_err(path, format!("line {}: bad feature {f:?}", idx + 1))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        instances.push(QaInstance {
            question_id: fields[0].to_string(),
            tokens,
            image_features,
            answers,
            qtype,
            entailed_by,
        });
    }
    Ok(instances)
}

/// One entry per line; order defines indices.
pub fn write_lines(path: &Path, lines: &[String]) -> Result<(), IoError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for line in lines {
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_lines(path: &Path) -> Result<Vec<String>, IoError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let trimmed = line.trim_end_matches('\r');
        if !trimmed.is_empty() {
            lines.push(trimmed.to_string());
        }
    }
    Ok(lines)
}

// ---------------------------------------------------------------------------
// Predictions: question id, answer string, lambda, scores, distances.
// ---------------------------------------------------------------------------

pub fn write_predictions(
    path: &Path,
    records: &[PredictionRecord<f64>],
    vocab: &AnswerVocabulary,
) -> Result<(), IoError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for record in records {
        let scores: Vec<String> = record.scores.iter().map(|v| format!("{v}")).collect();
        let distances: Vec<String> = record.distances.iter().map(|v| format!("{v}")).collect();
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            record.question_id,
            vocab.answer(record.predicted),
            record.lambda,
            scores.join(","),
            distances.join(",")
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_predictions(
    path: &Path,
    vocab: &AnswerVocabulary,
) -> Result<Vec<PredictionRecord<f64>>, IoError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(format_err(
                path,
                format!("line {}: expected at least 3 fields", idx + 1),
            ));
        }
        let predicted = vocab.index_of(fields[1]).ok_or_else(|| {
            format_err(path, format!("line {}: unknown answer {:?}", idx + 1, fields[1]))
        })?;
        let lambda = fields[2]
            .parse()
            .map_err(|_| format_err(path, format!("line {}: bad lambda", idx + 1)))?;
        let parse_vec = |field: Option<&&str>| -> Result<Vec<f64>, IoError> {
            match field {
                None | Some(&"") => Ok(Vec::new()),
                Some(text) => text
                    .split(',')
                    .map(|v| {
                        v.parse::<f64>().map_err(|_| {
                            format_err(path, format!("line {}: bad value {v:?}", idx + 1))
                        })
                    })
                    .collect(),
            }
        };
        records.push(PredictionRecord {
            question_id: fields[0].to_string(),
            predicted,
            scores: parse_vec(fields.get(3))?,
            distances: parse_vec(fields.get(4))?,
            lambda,
        });
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Metric reports: flat key=value text plus JSON.
// ---------------------------------------------------------------------------

pub fn report_to_kv(report: &MetricReport) -> String {
    let mut lines = vec![
        format!("label={}", report.label),
        format!("accuracy={}", report.accuracy),
        format!("validity={}", report.validity),
        format!("plausibility={}", report.plausibility),
        format!("distribution={}", report.distribution),
        format!("consistency={}", report.consistency),
        format!("count.questions={}", report.counts.questions),
        format!("count.correct={}", report.counts.correct),
    ];
    for (qtype, rate) in &report.per_type {
        lines.push(format!("per_type.{qtype}={rate}"));
    }
    for (answer, rate) in &report.answer_recall {
        lines.push(format!("recall.{answer}={rate}"));
    }
    lines.join("\n") + "\n"
}

/// Writes `<stem>.txt` (key=value) and `<stem>.json`.
pub fn write_report(stem: &Path, report: &MetricReport) -> Result<(), IoError> {
    fs::write(stem.with_extension("txt"), report_to_kv(report))?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(stem.with_extension("json"), json + "\n")?;
    Ok(())
}

pub fn read_kv_report(path: &Path) -> Result<BTreeMap<String, String>, IoError> {
    let text = fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| format_err(path, format!("bad report line {trimmed:?}")))?;
        map.insert(key.to_string(), value.to_string());
    }
    Ok(map)
}

// ---------------------------------------------------------------------------
// Training history CSV.
// ---------------------------------------------------------------------------

pub fn write_history(path: &Path, history: &TrainHistory) -> Result<(), IoError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "iteration,loss,loss_c,loss_p,accuracy")?;
    for r in &history.records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.iteration, r.loss, r.classification, r.regression, r.accuracy
        )?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TrainConfig;
    use crate::synth::{generate_benchmark, SceneConfig};

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            lambda: 0.5,
            delta: 1.0,
            metric: Metric::Euclidean,
            normalize_projection: false,
            weight_norm: true,
            seed: 7,
            m_scheme: InitScheme::Glove,
            m_seed: 3,
            m_trainable: true,
            extra: BTreeMap::from([("label".to_string(), "test".to_string())]),
        }
    }

    #[test]
    fn answer_matrix_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ansmat");
        let matrix = AnswerMatrix::<f64>::random(7, 5, 99).unwrap();
        save_answer_matrix(&path, &matrix).unwrap();
        let loaded = load_answer_matrix(&path).unwrap();
        assert_eq!(loaded.matrix(), matrix.matrix());
        assert_eq!(loaded.scheme(), matrix.scheme());
        assert_eq!(loaded.seed(), matrix.seed());
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let config = TrainConfig {
            embed_dim: 3,
            fused_dim: 4,
            hidden_dim: 5,
            ..TrainConfig::default()
        };
        let matrix = AnswerMatrix::<f64>::random(6, 2, 1).unwrap();
        let params = ModelParameters::init(9, 7, matrix, &config);
        save_checkpoint(&path, &params, &meta()).unwrap();
        let (loaded, loaded_meta) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, params);
        // Matrix provenance comes from the saved parameters, the rest
        // from the caller's metadata.
        assert_eq!(loaded_meta.m_scheme, InitScheme::Random);
        assert_eq!(loaded_meta.m_seed, 1);
        assert_eq!(loaded_meta.lambda, 0.5);
        assert_eq!(loaded_meta.extra["label"], "test");
    }

    #[test]
    fn head_parameters_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("head.ckpt");
        let config = TrainConfig {
            embed_dim: 3,
            fused_dim: 4,
            hidden_dim: 5,
            ..TrainConfig::default()
        };
        let matrix = AnswerMatrix::<f64>::random(6, 2, 1).unwrap();
        let params = ModelParameters::init(9, 7, matrix, &config);
        save_head_parameters(&path, &params.head, &meta()).unwrap();
        let (head, _) = load_head_parameters(&path).unwrap();
        assert_eq!(head, params.head);
    }

    #[test]
    fn rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        fs::write(&path, b"NOTMAGIC????????").unwrap();
        assert!(load_checkpoint(&path).is_err());
        assert!(load_answer_matrix(&path).is_err());
    }

    #[test]
    fn dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.tsv");
        let bench = generate_benchmark(&SceneConfig::default(), 60, 5).unwrap();
        write_dataset(&path, &bench.instances, &bench.vocab).unwrap();
        let loaded = read_dataset(&path, &bench.vocab).unwrap();
        assert_eq!(loaded, bench.instances);
    }

    #[test]
    fn dataset_reader_rejects_unknown_words() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        let bench = generate_benchmark(&SceneConfig::default(), 5, 5).unwrap();
        fs::write(&path, "q0\tquery\t-\twhat color is the zzz\tred\t0.5\n").unwrap();
        assert!(matches!(
            read_dataset(&path, &bench.vocab),
            Err(IoError::Format { .. })
        ));
        fs::write(&path, "q0\tquery\t-\twhat color is the circle\tzzz\t0.5\n").unwrap();
        assert!(matches!(
            read_dataset(&path, &bench.vocab),
            Err(IoError::Format { .. })
        ));
    }

    #[test]
    fn dataset_write_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.tsv");
        let b = dir.path().join("b.tsv");
        let bench = generate_benchmark(&SceneConfig::default(), 40, 9).unwrap();
        write_dataset(&a, &bench.instances, &bench.vocab).unwrap();
        write_dataset(&b, &bench.instances, &bench.vocab).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn predictions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("preds.tsv");
        let vocab = AnswerVocabulary::new(vec!["red".into(), "blue".into()]).unwrap();
        let records = vec![
            PredictionRecord {
                question_id: "q1".into(),
                predicted: 0,
                scores: vec![0.25, -1.5],
                distances: vec![0.1, 2.0],
                lambda: 0.5,
            },
            PredictionRecord {
                question_id: "q2".into(),
                predicted: 1,
                scores: vec![],
                distances: vec![],
                lambda: 0.0,
            },
        ];
        write_predictions(&path, &records, &vocab).unwrap();
        let loaded = read_predictions(&path, &vocab).unwrap();
        assert_eq!(loaded, records);
    }

    #[test]
    fn report_kv_contains_all_rates() {
        let report = MetricReport {
            label: "run".into(),
            accuracy: 0.75,
            per_type: BTreeMap::from([("query".to_string(), 0.5)]),
            answer_recall: BTreeMap::from([("red".to_string(), 1.0)]),
            validity: 1.0,
            plausibility: 0.9,
            distribution: 0.01,
            consistency: 0.8,
            counts: crate::metrics::MetricCounts {
                questions: 4,
                correct: 3,
            },
        };
        let kv = report_to_kv(&report);
        assert!(kv.contains("accuracy=0.75"));
        assert!(kv.contains("per_type.query=0.5"));
        assert!(kv.contains("recall.red=1"));
        assert!(kv.contains("count.questions=4"));

        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("report");
        write_report(&stem, &report).unwrap();
        let map = read_kv_report(&stem.with_extension("txt")).unwrap();
        assert_eq!(map["accuracy"], "0.75");
        let json = fs::read_to_string(stem.with_extension("json")).unwrap();
        assert!(json.contains("\"accuracy\": 0.75"));
    }
}
