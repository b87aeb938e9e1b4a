//! Word-vector tables and the answer representation matrix.
//!
//! Parses text word-vector files (one word plus its components per line),
//! builds the per-answer matrix under the three initialization schemes
//! (pretrained vectors, random draws, row-shuffled pretrained vectors),
//! and answers nearest-neighbor queries over the rows.

use std::collections::BTreeMap;
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg::{euclidean_distance, Matrix};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("empty embedding source")]
    EmptySource,
    #[error("line {line}: expected {expected} components, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: non-numeric component {token:?}")]
    NonNumericComponent { line: usize, token: String },
    #[error("line {line}: non-finite component {token:?}")]
    NonFiniteComponent { line: usize, token: String },
    #[error("line {line}: duplicate word {word:?}")]
    DuplicateWord { line: usize, word: String },
    #[error("line {line}: missing components")]
    MissingComponents { line: usize },
    #[error("answer vocabulary is empty")]
    EmptyVocabulary,
    #[error("duplicate answer {0:?}")]
    DuplicateAnswer(String),
    #[error("embedding dimension is zero")]
    ZeroDimension,
    #[error("answer matrix has no rows")]
    EmptyMatrix,
    #[error("row index {index} out of range for {rows} rows")]
    RowOutOfRange { index: usize, rows: usize },
    #[error("neighbor count {k} out of range, must be in 1..{rows}")]
    NeighborCountOutOfRange { k: usize, rows: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Pretrained word vectors, keyed by word.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<S> {
    dimension: usize,
    entries: BTreeMap<String, Vec<S>>,
}

impl<S: Scalar> EmbeddingTable<S> {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            entries: BTreeMap::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[S]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn insert(&mut self, word: String, vector: Vec<S>) -> Result<(), EmbeddingError> {
        assert_eq!(vector.len(), self.dimension, "vector length mismatch");
        if self.entries.contains_key(&word) {
            return Err(EmbeddingError::DuplicateWord { line: 0, word });
        }
        self.entries.insert(word, vector);
        Ok(())
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Writes the table back in the text format accepted by
    /// [`parse_embedding_file`]. Words come out sorted, one per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (word, vector) in &self.entries {
            out.push_str(word);
            for v in vector {
                out.push(' ');
                out.push_str(&format_component(v.as_f64()));
            }
            out.push('\n');
        }
        out
    }
}

/// Formats a component so that parsing it back recovers the exact value.
fn format_component(v: f64) -> String {
    format!("{v}")
}

/// Parses a word-vector file: one record per line, the word followed by
/// whitespace-separated decimal components. The dimension is taken from
/// the first data line. Accepts LF or CRLF endings; empty lines are
/// skipped.
pub fn parse_embedding_file<S: Scalar, R: BufRead>(
    source: R,
) -> Result<EmbeddingTable<S>, EmbeddingError> {
    let mut table: Option<EmbeddingTable<S>> = None;
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() {
            continue;
        }
        let mut parts = trimmed.split_ascii_whitespace();
        let word = parts.next().expect("non-empty line has a first token");
        let mut vector = Vec::new();
        for token in parts {
            let value: f64 = token.parse().map_err(|_| {
                EmbeddingError::NonNumericComponent {
                    line: line_no,
                    token: token.to_string(),
                }
            })?;
            if !value.is_finite() {
                return Err(EmbeddingError::NonFiniteComponent {
                    line: line_no,
                    token: token.to_string(),
                });
            }
            vector.push(S::from_f64(value));
        }
        if vector.is_empty() {
            return Err(EmbeddingError::MissingComponents { line: line_no });
        }
        let table = table.get_or_insert_with(|| EmbeddingTable::new(vector.len()));
        if vector.len() != table.dimension {
            return Err(EmbeddingError::DimensionMismatch {
                line: line_no,
                expected: table.dimension,
                found: vector.len(),
            });
        }
        if table.entries.contains_key(word) {
            return Err(EmbeddingError::DuplicateWord {
                line: line_no,
                word: word.to_string(),
            });
        }
        table.entries.insert(word.to_string(), vector);
    }
    table.ok_or(EmbeddingError::EmptySource)
}

/// Ordered list of candidate answers; position defines the answer index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerVocabulary {
    answers: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl AnswerVocabulary {
    pub fn new(answers: Vec<String>) -> Result<Self, EmbeddingError> {
        if answers.is_empty() {
            return Err(EmbeddingError::EmptyVocabulary);
        }
        let mut index = BTreeMap::new();
        for (i, a) in answers.iter().enumerate() {
            if a.is_empty() {
                return Err(EmbeddingError::EmptyVocabulary);
            }
            if index.insert(a.clone(), i).is_some() {
                return Err(EmbeddingError::DuplicateAnswer(a.clone()));
            }
        }
        Ok(Self { answers, index })
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn answer(&self, i: usize) -> &str {
        &self.answers[i]
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }

    pub fn index_of(&self, answer: &str) -> Option<usize> {
        self.index.get(answer).copied()
    }
}

/// How the answer matrix was initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Bag-of-words average of pretrained word vectors.
    Glove,
    /// Normally distributed random values.
    Random,
    /// Pretrained rows, randomly permuted.
    ShuffledGlove,
}

impl InitScheme {
    pub fn code(self) -> u8 {
        match self {
            InitScheme::Glove => 0,
            InitScheme::Random => 1,
            InitScheme::ShuffledGlove => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(InitScheme::Glove),
            1 => Some(InitScheme::Random),
            2 => Some(InitScheme::ShuffledGlove),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InitScheme::Glove => "glove",
            InitScheme::Random => "random",
            InitScheme::ShuffledGlove => "shuffled-glove",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "glove" => Some(InitScheme::Glove),
            "random" => Some(InitScheme::Random),
            "shuffled-glove" | "shuffled_glove" => Some(InitScheme::ShuffledGlove),
            _ => None,
        }
    }
}

/// The matrix of per-answer semantic vectors, one row per candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerMatrix<S> {
    rows: Matrix<S>,
    scheme: InitScheme,
    trainable: bool,
    seed: u64,
}

impl<S: Scalar> AnswerMatrix<S> {
    pub fn from_parts(rows: Matrix<S>, scheme: InitScheme, trainable: bool, seed: u64) -> Self {
        Self {
            rows,
            scheme,
            trainable,
            seed,
        }
    }

    /// Row i is the mean of the word vectors of the whitespace-split,
    /// lowercased words of answer i. Words missing from the table
    /// contribute zero vectors (with weight 1), so an all-unknown answer
    /// yields the zero row.
    pub fn from_embeddings(
        vocab: &AnswerVocabulary,
        table: &EmbeddingTable<S>,
    ) -> Result<Self, EmbeddingError> {
        if vocab.is_empty() {
            return Err(EmbeddingError::EmptyVocabulary);
        }
        if table.dimension == 0 {
            return Err(EmbeddingError::ZeroDimension);
        }
        let dim = table.dimension;
        let rows = vocab
            .answers()
            .iter()
            .map(|answer| {
                let mut row = vec![S::zero(); dim];
                let mut count = 0usize;
                for word in answer.split_ascii_whitespace() {
                    count += 1;
                    if let Some(vector) = table.get(&word.to_lowercase()) {
                        for (r, &v) in row.iter_mut().zip(vector) {
                            *r += v;
                        }
                    }
                }
                if count > 1 {
                    let inv = S::one() / S::from_f64(count as f64);
                    for r in &mut row {
                        *r *= inv;
                    }
                }
                row
            })
            .collect();
        Ok(Self {
            rows: Matrix::from_rows(rows),
            scheme: InitScheme::Glove,
            trainable: true,
            seed: 0,
        })
    }

    /// Rows drawn i.i.d. normal with zero mean and standard deviation
    /// 1/sqrt(dim), so expected row norms are one, matching typical
    /// pretrained embedding scales.
    pub fn random(
        vocab_len: usize,
        dim: usize,
        seed: u64,
    ) -> Result<Self, EmbeddingError> {
        if vocab_len == 0 {
            return Err(EmbeddingError::EmptyVocabulary);
        }
        if dim == 0 {
            return Err(EmbeddingError::ZeroDimension);
        }
        let mut rng = rng::stream(seed, "answer-matrix-random");
        let sigma = 1.0 / (dim as f64).sqrt();
        let rows = Matrix::from_fn(vocab_len, dim, |_, _| {
            let z: f64 = rng.sample(StandardNormal);
            S::from_f64(z * sigma)
        });
        Ok(Self {
            rows,
            scheme: InitScheme::Random,
            trainable: true,
            seed,
        })
    }

    pub fn matrix(&self) -> &Matrix<S> {
        &self.rows
    }

    pub fn matrix_mut(&mut self) -> &mut Matrix<S> {
        &mut self.rows
    }

    pub fn answer_count(&self) -> usize {
        self.rows.rows()
    }

    pub fn dimension(&self) -> usize {
        self.rows.cols()
    }

    pub fn row(&self, i: usize) -> &[S] {
        self.rows.row(i)
    }

    pub fn scheme(&self) -> InitScheme {
        self.scheme
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }

    /// Normalizes every row to unit L2 norm, leaving zero rows unchanged.
    /// Off by default everywhere; provided as an explicit transform.
    pub fn normalize_rows(&mut self) {
        for i in 0..self.rows.rows() {
            let row = self.rows.row_mut(i);
            let norm = crate::linalg::l2_norm(row);
            if norm > S::zero() {
                for v in row {
                    *v /= norm;
                }
            }
        }
    }
}

/// Builds the answer matrix under one of the three initialization
/// schemes. `table` supplies the vectors (and the dimension) for the
/// pretrained schemes; `random_dim` supplies the dimension for the
/// random scheme.
pub fn build_answer_matrix<S: Scalar>(
    vocab: &AnswerVocabulary,
    table: &EmbeddingTable<S>,
    scheme: InitScheme,
    seed: u64,
    random_dim: Option<usize>,
) -> Result<AnswerMatrix<S>, EmbeddingError> {
    match scheme {
        InitScheme::Glove => AnswerMatrix::from_embeddings(vocab, table),
        InitScheme::Random => {
            let dim = random_dim.unwrap_or_else(|| table.dimension());
            AnswerMatrix::random(vocab.len(), dim, seed)
        }
        InitScheme::ShuffledGlove => {
            let base = AnswerMatrix::from_embeddings(vocab, table)?;
            shuffle_rows(&base, seed)
        }
    }
}

/// Returns a copy of the matrix with rows permuted by a seed-determined
/// uniform random permutation. The multiset of rows is preserved exactly.
pub fn shuffle_rows<S: Scalar>(
    m: &AnswerMatrix<S>,
    seed: u64,
) -> Result<AnswerMatrix<S>, EmbeddingError> {
    if m.answer_count() == 0 {
        return Err(EmbeddingError::EmptyMatrix);
    }
    let mut order: Vec<usize> = (0..m.answer_count()).collect();
    let mut rng: ChaCha8Rng = rng::stream(seed, "answer-matrix-shuffle");
    order.shuffle(&mut rng);
    let rows = order.iter().map(|&i| m.row(i).to_vec()).collect();
    Ok(AnswerMatrix {
        rows: Matrix::from_rows(rows),
        scheme: InitScheme::ShuffledGlove,
        trainable: m.trainable,
        seed,
    })
}

/// The k rows closest (Euclidean) to row `row_index`, excluding itself,
/// ascending by distance with ties broken by lower index.
pub fn nearest_neighbors<S: Scalar>(
    m: &AnswerMatrix<S>,
    row_index: usize,
    k: usize,
) -> Result<Vec<(usize, S)>, EmbeddingError> {
    let rows = m.answer_count();
    if rows == 0 {
        return Err(EmbeddingError::EmptyMatrix);
    }
    if row_index >= rows {
        return Err(EmbeddingError::RowOutOfRange {
            index: row_index,
            rows,
        });
    }
    if k == 0 || k >= rows {
        return Err(EmbeddingError::NeighborCountOutOfRange { k, rows });
    }
    let query = m.row(row_index);
    let mut candidates: Vec<(usize, S)> = (0..rows)
        .filter(|&i| i != row_index)
        .map(|i| (i, euclidean_distance(query, m.row(i))))
        .collect();
    candidates.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .expect("finite distances")
            .then(a.0.cmp(&b.0))
    });
    candidates.truncate(k);
    Ok(candidates)
}
