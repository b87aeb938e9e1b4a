//! Deterministic synthetic compositional VQA benchmark.
//!
//! Scenes are small grids of colored/sized shapes; questions come from a
//! fixed template suite spanning four types (query, verify, choose,
//! logical) with entailed verify questions attached to attribute
//! queries. A companion generator emits a structured word-vector file in
//! the embedding-store text format: words of the same category share a
//! basis direction while per-word identity codes keep them apart, so the
//! answer space has exploitable relational structure by construction
//! (compound answers average their constituent words).

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::embedding::{AnswerVocabulary, EmbeddingTable};
use crate::metrics::TruthRecord;
use crate::model::Example;
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("attribute inventories must be non-empty")]
    EmptyInventory,
    #[error("grid of {cells} cells cannot hold {objects} objects")]
    GridTooSmall { cells: usize, objects: usize },
    #[error("train fraction {0} outside (0, 1)")]
    BadTrainFraction(f64),
    #[error("cannot split an empty instance list")]
    EmptyInstances,
    #[error(
        "out-of-vocabulary split infeasible: {eligible} answers have counts within [{min}, {max}]"
    )]
    OovInfeasible { eligible: usize, min: usize, max: usize },
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("unknown answer {0:?}")]
    UnknownAnswer(String),
    #[error(transparent)]
    Vocabulary(#[from] crate::embedding::EmbeddingError),
}

/// Attribute inventories and rendering parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub colors: Vec<String>,
    pub shapes: Vec<String>,
    pub sizes: Vec<String>,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub max_objects: usize,
    pub sigma_noise: f64,
    /// Cap on questions kept per scene; a benchmark of a given size then
    /// spans more distinct scenes, which is what generalization needs.
    pub max_questions_per_scene: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            colors: ["red", "blue", "green", "yellow", "black", "white"]
                .map(String::from)
                .to_vec(),
            shapes: ["circle", "square", "triangle", "star"]
                .map(String::from)
                .to_vec(),
            sizes: ["small", "large"].map(String::from).to_vec(),
            grid_rows: 3,
            grid_cols: 3,
            // Single-object scenes keep the task within reach of the
            // attention-free desk model; raise for harder benchmarks.
            max_objects: 1,
            sigma_noise: 0.05,
            max_questions_per_scene: 10,
        }
    }
}

impl SceneConfig {
    pub fn cell_count(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    /// Per-cell block: presence bit, shape one-hot, color one-hot, size
    /// one-hot; cells are laid out row-major.
    pub fn cell_block_len(&self) -> usize {
        1 + self.shapes.len() + self.colors.len() + self.sizes.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.cell_count() * self.cell_block_len()
    }

    pub fn row_name(&self, row: usize) -> String {
        match (self.grid_rows, row) {
            (1, _) => "middle".to_string(),
            (2, 0) => "top".to_string(),
            (2, 1) => "bottom".to_string(),
            (3, 0) => "top".to_string(),
            (3, 1) => "middle".to_string(),
            (3, 2) => "bottom".to_string(),
            _ => format!("row{row}"),
        }
    }

    pub fn col_name(&self, col: usize) -> String {
        match (self.grid_cols, col) {
            (1, _) => "center".to_string(),
            (2, 0) => "left".to_string(),
            (2, 1) => "right".to_string(),
            (3, 0) => "left".to_string(),
            (3, 1) => "center".to_string(),
            (3, 2) => "right".to_string(),
            _ => format!("col{col}"),
        }
    }

    fn row_names(&self) -> Vec<String> {
        (0..self.grid_rows).map(|r| self.row_name(r)).collect()
    }

    fn col_names(&self) -> Vec<String> {
        (0..self.grid_cols).map(|c| self.col_name(c)).collect()
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.colors.is_empty()
            || self.shapes.is_empty()
            || self.sizes.is_empty()
            || self.grid_rows == 0
            || self.grid_cols == 0
            || self.max_objects == 0
        {
            return Err(SynthError::EmptyInventory);
        }
        if self.max_objects > self.cell_count() {
            return Err(SynthError::GridTooSmall {
                cells: self.cell_count(),
                objects: self.max_objects,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneObject {
    pub shape: usize,
    pub color: usize,
    pub size: usize,
    pub cell: (usize, usize),
}

/// One synthetic image: up to `max_objects` objects on distinct cells.
/// `seed` drives the rendering noise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub seed: u64,
}

/// Uniformly sampled object count, attributes, and distinct cells.
pub fn generate_scene(config: &SceneConfig, rng: &mut ChaCha8Rng) -> Scene {
    config.validate().expect("valid scene config");
    let count = rng.random_range(1..=config.max_objects);
    let mut cells: Vec<(usize, usize)> = (0..config.grid_rows)
        .flat_map(|r| (0..config.grid_cols).map(move |c| (r, c)))
        .collect();
    cells.shuffle(rng);
    let objects = cells
        .into_iter()
        .take(count)
        .map(|cell| SceneObject {
            shape: rng.random_range(0..config.shapes.len()),
            color: rng.random_range(0..config.colors.len()),
            size: rng.random_range(0..config.sizes.len()),
            cell,
        })
        .collect();
    Scene {
        objects,
        seed: rng.random(),
    }
}

/// Deterministic feature encoding: concatenated per-cell one-hot blocks
/// of (presence, shape, color, size) plus additive Gaussian noise of
/// `sigma_noise`, seeded by the scene seed.
pub fn render_features(scene: &Scene, config: &SceneConfig) -> Vec<f64> {
    let block = config.cell_block_len();
    let mut features = vec![0.0; config.feature_dim()];
    for object in &scene.objects {
        let cell_index = object.cell.0 * config.grid_cols + object.cell.1;
        let base = cell_index * block;
        features[base] = 1.0;
        features[base + 1 + object.shape] = 1.0;
        features[base + 1 + config.shapes.len() + object.color] = 1.0;
        features[base + 1 + config.shapes.len() + config.colors.len() + object.size] = 1.0;
    }
    if config.sigma_noise > 0.0 {
        let mut noise = rng::stream(scene.seed, "render-noise");
        for f in &mut features {
            let z: f64 = noise.sample(StandardNormal);
            *f += config.sigma_noise * z;
        }
    }
    features
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum QuestionType {
    Query,
    Verify,
    Choose,
    Logical,
}

impl QuestionType {
    pub fn as_str(self) -> &'static str {
        match self {
            QuestionType::Query => "query",
            QuestionType::Verify => "verify",
            QuestionType::Choose => "choose",
            QuestionType::Logical => "logical",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "query" => Some(QuestionType::Query),
            "verify" => Some(QuestionType::Verify),
            "choose" => Some(QuestionType::Choose),
            "logical" => Some(QuestionType::Logical),
            _ => None,
        }
    }
}

/// One question/image/answer record.
#[derive(Debug, Clone, PartialEq)]
pub struct QaInstance {
    pub question_id: String,
    pub tokens: Vec<usize>,
    pub image_features: Vec<f64>,
    pub answers: Vec<usize>,
    pub qtype: QuestionType,
    pub entailed_by: Option<String>,
}

/// Token and answer vocabularies; indices are fixed by the config alone,
/// independent of any generated data.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabularies {
    pub tokens: Vec<String>,
    token_index: BTreeMap<String, usize>,
    pub answers: AnswerVocabulary,
}

const FUNCTION_WORDS: [&str; 14] = [
    "what", "is", "the", "there", "a", "in", "or", "and", "object", "cell", "color", "shape",
    "size", "where",
];

impl Vocabularies {
    /// Rebuilds vocabularies from token and answer lists read back from
    /// vocabulary files.
    pub fn from_parts(tokens: Vec<String>, answers: AnswerVocabulary) -> Self {
        let token_index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            tokens,
            token_index,
            answers,
        }
    }

    pub fn from_config(config: &SceneConfig) -> Result<Self, SynthError> {
        config.validate()?;
        let mut tokens: Vec<String> = FUNCTION_WORDS.map(String::from).to_vec();
        tokens.extend(config.colors.iter().cloned());
        tokens.extend(config.shapes.iter().cloned());
        tokens.extend(config.sizes.iter().cloned());
        tokens.extend(config.row_names());
        tokens.extend(config.col_names());
        let token_index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();

        let mut answers: Vec<String> = Vec::new();
        answers.extend(config.colors.iter().cloned());
        answers.extend(config.shapes.iter().cloned());
        answers.extend(config.sizes.iter().cloned());
        answers.push("yes".to_string());
        answers.push("no".to_string());
        for row in config.row_names() {
            for col in config.col_names() {
                answers.push(format!("{row} {col}"));
            }
        }
        for color in &config.colors {
            for shape in &config.shapes {
                answers.push(format!("{color} {shape}"));
            }
        }
        Ok(Self {
            tokens,
            token_index,
            answers: AnswerVocabulary::new(answers)?,
        })
    }

    pub fn token_id(&self, word: &str) -> Option<usize> {
        self.token_index.get(word).copied()
    }

    pub fn token_word(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn yes_index(&self) -> usize {
        self.answers.index_of("yes").expect("yes in vocabulary")
    }

    pub fn no_index(&self) -> usize {
        self.answers.index_of("no").expect("no in vocabulary")
    }
}

/// Everything one generation run produces.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub config: SceneConfig,
    pub vocab: Vocabularies,
    pub instances: Vec<QaInstance>,
}

struct QuestionBuilder<'a> {
    vocab: &'a Vocabularies,
    features: Vec<f64>,
    prefix: String,
    counter: usize,
    out: Vec<QaInstance>,
}

impl<'a> QuestionBuilder<'a> {
    fn next_id(&mut self) -> String {
        let id = format!("{}q{:02}", self.prefix, self.counter);
        self.counter += 1;
        id
    }

    fn tokens(&self, words: &[&str]) -> Vec<usize> {
        words
            .iter()
            .map(|w| {
                self.vocab
                    .token_id(w)
                    .unwrap_or_else(|| panic!("template word {w:?} missing from vocabulary"))
            })
            .collect()
    }

    fn push(
        &mut self,
        words: &[&str],
        answer: usize,
        qtype: QuestionType,
        entailed_by: Option<String>,
    ) -> String {
        let id = self.next_id();
        self.out.push(QaInstance {
            question_id: id.clone(),
            tokens: self.tokens(words),
            image_features: self.features.clone(),
            answers: vec![answer],
            qtype,
            entailed_by,
        });
        id
    }

    fn yes_no(&self, holds: bool) -> usize {
        if holds {
            self.vocab.yes_index()
        } else {
            self.vocab.no_index()
        }
    }
}

fn distinct_other(rng: &mut ChaCha8Rng, len: usize, avoid: usize) -> usize {
    loop {
        let pick = rng.random_range(0..len);
        if pick != avoid {
            return pick;
        }
    }
}

/// Instantiates every applicable template on the scene. Attribute
/// queries additionally emit one entailed verify question each; choose
/// questions name the true attribute and one seeded distractor.
pub fn generate_questions(
    scene: &Scene,
    config: &SceneConfig,
    vocab: &Vocabularies,
    rng: &mut ChaCha8Rng,
    id_prefix: &str,
) -> Vec<QaInstance> {
    let mut builder = QuestionBuilder {
        vocab,
        features: render_features(scene, config),
        prefix: id_prefix.to_string(),
        counter: 0,
        out: Vec::new(),
    };
    let colors = &config.colors;
    let shapes = &config.shapes;
    let sizes = &config.sizes;

    let shape_answer = |s: usize| colors.len() + s;
    let size_answer = |s: usize| colors.len() + shapes.len() + s;
    let position_answer = |row: usize, col: usize| {
        let base = colors.len() + shapes.len() + sizes.len() + 2;
        base + row * config.grid_cols + col
    };
    let compound_answer = |color: usize, shape: usize| {
        let base = colors.len() + shapes.len() + sizes.len() + 2
            + config.grid_rows * config.grid_cols;
        base + color * shapes.len() + shape
    };

    // Objects whose shape (color) is unique in the scene support
    // unambiguous "the <shape>" ("the <color> object") references.
    let unique_by = |key: fn(&SceneObject) -> usize| -> Vec<&SceneObject> {
        scene
            .objects
            .iter()
            .filter(|o| scene.objects.iter().filter(|p| key(p) == key(o)).count() == 1)
            .collect()
    };

    for object in unique_by(|o| o.shape) {
        let shape = shapes[object.shape].as_str();
        let row = config.row_name(object.cell.0);
        let col = config.col_name(object.cell.1);

        // "what color is the <shape>" plus the entailed verify naming
        // the true color.
        let source = builder.push(
            &["what", "color", "is", "the", shape],
            object.color,
            QuestionType::Query,
            None,
        );
        builder.push(
            &["is", "the", shape, colors[object.color].as_str()],
            builder.yes_no(true),
            QuestionType::Verify,
            Some(source.clone()),
        );

        // "is the <shape> <c1> or <c2>" with one true color.
        let distractor = distinct_other(rng, colors.len(), object.color);
        let (first, second) = if rng.random_range(0..2) == 0 {
            (object.color, distractor)
        } else {
            (distractor, object.color)
        };
        builder.push(
            &[
                "is",
                "the",
                shape,
                colors[first].as_str(),
                "or",
                colors[second].as_str(),
            ],
            object.color,
            QuestionType::Choose,
            None,
        );

        // "what size is the <shape>" with the entailed verify.
        let source = builder.push(
            &["what", "size", "is", "the", shape],
            size_answer(object.size),
            QuestionType::Query,
            None,
        );
        builder.push(
            &["is", "the", shape, sizes[object.size].as_str()],
            builder.yes_no(true),
            QuestionType::Verify,
            Some(source.clone()),
        );

        // "where is the <shape>" with entailed cell-membership verify.
        let source = builder.push(
            &["where", "is", "the", shape],
            position_answer(object.cell.0, object.cell.1),
            QuestionType::Query,
            None,
        );
        builder.push(
            &["is", "the", shape, "in", "the", &row, &col, "cell"],
            builder.yes_no(true),
            QuestionType::Verify,
            Some(source.clone()),
        );
    }

    for object in unique_by(|o| o.color) {
        let color = colors[object.color].as_str();

        let source = builder.push(
            &["what", "shape", "is", "the", color, "object"],
            shape_answer(object.shape),
            QuestionType::Query,
            None,
        );
        builder.push(
            &["is", "the", color, "object", "a", shapes[object.shape].as_str()],
            builder.yes_no(true),
            QuestionType::Verify,
            Some(source.clone()),
        );

        let distractor = distinct_other(rng, shapes.len(), object.shape);
        let (first, second) = if rng.random_range(0..2) == 0 {
            (object.shape, distractor)
        } else {
            (distractor, object.shape)
        };
        builder.push(
            &[
                "is",
                "the",
                color,
                "object",
                "a",
                shapes[first].as_str(),
                "or",
                "a",
                shapes[second].as_str(),
            ],
            shape_answer(object.shape),
            QuestionType::Choose,
            None,
        );
    }

    // "what is in the <row> <col> cell" per occupied cell, with an
    // entailed verify of the compound.
    for object in &scene.objects {
        let row = config.row_name(object.cell.0);
        let col = config.col_name(object.cell.1);
        let color = colors[object.color].as_str();
        let shape = shapes[object.shape].as_str();
        let source = builder.push(
            &["what", "is", "in", "the", &row, &col, "cell"],
            compound_answer(object.color, object.shape),
            QuestionType::Query,
            None,
        );
        builder.push(
            &["is", "there", "a", color, shape, "in", "the", &row, &col, "cell"],
            builder.yes_no(true),
            QuestionType::Verify,
            Some(source.clone()),
        );
    }

    // Presence verifies: one true pair, one absent pair.
    let present: BTreeSet<(usize, usize)> =
        scene.objects.iter().map(|o| (o.color, o.shape)).collect();
    let pick = scene.objects[rng.random_range(0..scene.objects.len())];
    builder.push(
        &[
            "is",
            "there",
            "a",
            colors[pick.color].as_str(),
            shapes[pick.shape].as_str(),
        ],
        builder.yes_no(true),
        QuestionType::Verify,
        None,
    );
    if present.len() < colors.len() * shapes.len() {
        let absent = loop {
            let candidate = (
                rng.random_range(0..colors.len()),
                rng.random_range(0..shapes.len()),
            );
            if !present.contains(&candidate) {
                break candidate;
            }
        };
        builder.push(
            &[
                "is",
                "there",
                "a",
                colors[absent.0].as_str(),
                shapes[absent.1].as_str(),
            ],
            builder.yes_no(false),
            QuestionType::Verify,
            None,
        );
    }

    // Logical connectives over color and shape presence.
    let colors_present: BTreeSet<usize> = scene.objects.iter().map(|o| o.color).collect();
    let shapes_present: BTreeSet<usize> = scene.objects.iter().map(|o| o.shape).collect();
    let c1 = rng.random_range(0..colors.len());
    let s1 = rng.random_range(0..shapes.len());
    let both = colors_present.contains(&c1) && shapes_present.contains(&s1);
    builder.push(
        &[
            "is",
            "there",
            "a",
            colors[c1].as_str(),
            "object",
            "and",
            "a",
            shapes[s1].as_str(),
        ],
        builder.yes_no(both),
        QuestionType::Logical,
        None,
    );
    let c2 = rng.random_range(0..colors.len());
    let s2 = rng.random_range(0..shapes.len());
    let either = colors_present.contains(&c2) || shapes_present.contains(&s2);
    builder.push(
        &[
            "is",
            "there",
            "a",
            colors[c2].as_str(),
            "object",
            "or",
            "a",
            shapes[s2].as_str(),
        ],
        builder.yes_no(either),
        QuestionType::Logical,
        None,
    );

    builder.out
}

/// Groups a scene's questions into units of one source question plus
/// the entailed questions that immediately follow it.
fn question_units(questions: Vec<QaInstance>) -> Vec<Vec<QaInstance>> {
    let mut units: Vec<Vec<QaInstance>> = Vec::new();
    for question in questions {
        if question.entailed_by.is_some() && !units.is_empty() {
            units.last_mut().expect("non-empty").push(question);
        } else {
            units.push(vec![question]);
        }
    }
    units
}

/// Generates scenes until at least `question_target` questions exist,
/// then truncates to exactly that many. Each scene contributes at most
/// `max_questions_per_scene` questions, drawn over its applicable
/// templates. Sources always precede their entailed questions, so
/// truncation never leaves a dangling link.
pub fn generate_benchmark(
    config: &SceneConfig,
    question_target: usize,
    seed: u64,
) -> Result<Benchmark, SynthError> {
    config.validate()?;
    let vocab = Vocabularies::from_config(config)?;
    let mut rng = rng::stream(seed, "benchmark");
    let mut instances = Vec::with_capacity(question_target + 32);
    let mut scene_index = 0usize;
    while instances.len() < question_target {
        let scene = generate_scene(config, &mut rng);
        let prefix = format!("s{scene_index:04}_");
        let questions = generate_questions(&scene, config, &vocab, &mut rng, &prefix);
        let mut units = question_units(questions);
        units.shuffle(&mut rng);
        let mut kept = 0usize;
        for unit in units {
            if kept >= config.max_questions_per_scene {
                break;
            }
            kept += unit.len();
            instances.extend(unit);
        }
        scene_index += 1;
    }
    instances.truncate(question_target);
    Ok(Benchmark {
        config: config.clone(),
        vocab,
        instances,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    Standard,
    Oov,
}

impl SplitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitMode::Standard => "standard",
            SplitMode::Oov => "oov",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "standard" => Some(SplitMode::Standard),
            "oov" => Some(SplitMode::Oov),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub train_fraction: f64,
    pub seed: u64,
    /// Occurrence bounds for answers participating in an OOV split;
    /// answers outside the bounds (and their questions) are dropped,
    /// which removes near-constant answers such as yes/no.
    pub oov_min_count: usize,
    pub oov_max_count: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            mode: SplitMode::Standard,
            train_fraction: 0.8,
            seed: 0,
            oov_min_count: 5,
            oov_max_count: 200,
        }
    }
}

/// Clears entailment links whose source ended up on the other side.
fn retain_links(instances: &mut [QaInstance]) {
    let ids: BTreeSet<String> = instances.iter().map(|i| i.question_id.clone()).collect();
    for instance in instances {
        if let Some(source) = &instance.entailed_by {
            if !ids.contains(source) {
                instance.entailed_by = None;
            }
        }
    }
}

/// Partitions instances into train and test sets.
///
/// Standard mode randomly assigns source questions (with their entailed
/// questions attached) to sides. OOV mode partitions the eligible
/// answers into two disjoint sets and assigns each question to the side
/// owning its answers, guaranteeing that the ground-truth answer sets of
/// the two sides never intersect.
pub fn split(
    instances: &[QaInstance],
    spec: &SplitSpec,
) -> Result<(Vec<QaInstance>, Vec<QaInstance>), SynthError> {
    if instances.is_empty() {
        return Err(SynthError::EmptyInstances);
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(SynthError::BadTrainFraction(spec.train_fraction));
    }
    match spec.mode {
        SplitMode::Standard => split_standard(instances, spec),
        SplitMode::Oov => split_oov(instances, spec),
    }
}

fn split_standard(
    instances: &[QaInstance],
    spec: &SplitSpec,
) -> Result<(Vec<QaInstance>, Vec<QaInstance>), SynthError> {
    // Units: a source question and every question it entails.
    let mut unit_of: BTreeMap<&str, usize> = BTreeMap::new();
    let mut units: Vec<Vec<usize>> = Vec::new();
    for (idx, instance) in instances.iter().enumerate() {
        if instance.entailed_by.is_none() {
            unit_of.insert(&instance.question_id, units.len());
            units.push(vec![idx]);
        }
    }
    for (idx, instance) in instances.iter().enumerate() {
        if let Some(source) = &instance.entailed_by {
            match unit_of.get(source.as_str()) {
                Some(&unit) => units[unit].push(idx),
                None => units.push(vec![idx]),
            }
        }
    }

    let mut order: Vec<usize> = (0..units.len()).collect();
    let mut stream = rng::stream(spec.seed, "split-standard");
    order.shuffle(&mut stream);

    let target = (spec.train_fraction * instances.len() as f64).round() as usize;
    let mut train_indices = Vec::new();
    let mut test_indices = Vec::new();
    let mut train_count = 0usize;
    for unit in order {
        let members = &units[unit];
        if train_count < target {
            train_count += members.len();
            train_indices.extend(members.iter().copied());
        } else {
            test_indices.extend(members.iter().copied());
        }
    }
    train_indices.sort_unstable();
    test_indices.sort_unstable();
    let mut train: Vec<QaInstance> = train_indices.iter().map(|&i| instances[i].clone()).collect();
    let mut test: Vec<QaInstance> = test_indices.iter().map(|&i| instances[i].clone()).collect();
    retain_links(&mut train);
    retain_links(&mut test);
    Ok((train, test))
}

fn split_oov(
    instances: &[QaInstance],
    spec: &SplitSpec,
) -> Result<(Vec<QaInstance>, Vec<QaInstance>), SynthError> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for instance in instances {
        for &a in &instance.answers {
            *counts.entry(a).or_default() += 1;
        }
    }
    let eligible: BTreeSet<usize> = counts
        .iter()
        .filter(|(_, &c)| c >= spec.oov_min_count && c <= spec.oov_max_count)
        .map(|(&a, _)| a)
        .collect();
    if eligible.len() < 2 {
        return Err(SynthError::OovInfeasible {
            eligible: eligible.len(),
            min: spec.oov_min_count,
            max: spec.oov_max_count,
        });
    }

    let keep: Vec<&QaInstance> = instances
        .iter()
        .filter(|i| i.answers.iter().all(|a| eligible.contains(a)))
        .collect();
    let kept_questions = keep.len();

    let mut answers: Vec<usize> = eligible.iter().copied().collect();
    let mut stream = rng::stream(spec.seed, "split-oov");
    answers.shuffle(&mut stream);
    let target = (spec.train_fraction * kept_questions as f64).round() as usize;
    let mut train_answers = BTreeSet::new();
    let mut assigned = 0usize;
    for answer in answers {
        if assigned < target {
            assigned += counts[&answer];
            train_answers.insert(answer);
        }
    }
    if train_answers.len() == eligible.len() {
        // Leave at least one answer on the test side.
        let last = *train_answers.iter().next_back().expect("non-empty");
        train_answers.remove(&last);
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for instance in keep {
        let on_train = instance.answers.iter().all(|a| train_answers.contains(a));
        let on_test = instance.answers.iter().all(|a| !train_answers.contains(a));
        if on_train {
            train.push(instance.clone());
        } else if on_test {
            test.push(instance.clone());
        }
        // Instances straddling both sides are dropped.
    }
    if train.is_empty() || test.is_empty() {
        return Err(SynthError::OovInfeasible {
            eligible: eligible.len(),
            min: spec.oov_min_count,
            max: spec.oov_max_count,
        });
    }
    retain_links(&mut train);
    retain_links(&mut test);
    Ok((train, test))
}

/// Word categories of the structured synthetic embedding space.
fn word_categories(config: &SceneConfig) -> Vec<(String, usize)> {
    let mut words = Vec::new();
    for w in &config.colors {
        words.push((w.clone(), 0));
    }
    for w in &config.shapes {
        words.push((w.clone(), 1));
    }
    for w in &config.sizes {
        words.push((w.clone(), 2));
    }
    for w in config.row_names().iter().chain(config.col_names().iter()) {
        words.push((w.clone(), 3));
    }
    words.push(("yes".to_string(), 4));
    words.push(("no".to_string(), 4));
    for w in FUNCTION_WORDS {
        words.push((w.to_string(), 5));
    }
    words
}

const CATEGORY_COUNT: usize = 6;

/// Emits the structured word-vector table: each word carries a unit
/// flag on its category dimension plus a seeded random identity code, so
/// words of a category cluster while staying mutually distinguishable.
/// "yes" and "no" sit at opposite ends of the polarity axis.
pub fn synthetic_embeddings<S: Scalar>(
    config: &SceneConfig,
    identity_dim: usize,
    seed: u64,
) -> EmbeddingTable<S> {
    let dim = CATEGORY_COUNT + identity_dim;
    let mut table = EmbeddingTable::new(dim);
    let mut stream = rng::stream(seed, "synthetic-embeddings");
    for (word, category) in word_categories(config) {
        let mut vector = vec![0.0f64; dim];
        let (flag, code_scale) = match category {
            4 => {
                // Polarity axis: yes = +1, no = -1.
                vector[4] = if word == "yes" { 1.0 } else { -1.0 };
                (0.0, 0.25)
            }
            5 => (0.5, 0.25),
            _ => (1.0, 0.75),
        };
        if category != 4 {
            vector[category] = flag;
        }
        let mut code: Vec<f64> = (0..identity_dim)
            .map(|_| stream.sample::<f64, _>(StandardNormal))
            .collect();
        let norm = code.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 0.0 {
            for c in &mut code {
                *c *= code_scale / norm;
            }
        }
        vector[CATEGORY_COUNT..].copy_from_slice(&code);
        table
            .insert(word, vector.into_iter().map(S::from_f64).collect())
            .expect("words are unique");
    }
    table
}

/// Canonical template key of a question: attribute words are masked so
/// questions produced by the same template collapse to the same key.
pub fn template_key(token_words: &[&str], config: &SceneConfig) -> String {
    let rows = config.row_names();
    let cols = config.col_names();
    let attribute: BTreeSet<&str> = config
        .colors
        .iter()
        .chain(config.shapes.iter())
        .chain(config.sizes.iter())
        .chain(rows.iter())
        .chain(cols.iter())
        .map(String::as_str)
        .collect();
    token_words
        .iter()
        .map(|w| if attribute.contains(w) { "_" } else { *w })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Admissible answers per question type: verify/logical questions take
/// yes/no, choose questions take color or shape answers, query questions
/// take anything except yes/no.
pub fn scope_map(
    config: &SceneConfig,
    vocab: &Vocabularies,
) -> BTreeMap<String, BTreeSet<usize>> {
    let yes = vocab.yes_index();
    let no = vocab.no_index();
    let yes_no: BTreeSet<usize> = [yes, no].into();
    let non_binary: BTreeSet<usize> = (0..vocab.answers.len())
        .filter(|&i| i != yes && i != no)
        .collect();
    let choose: BTreeSet<usize> = (0..config.colors.len() + config.shapes.len()).collect();
    let mut scope = BTreeMap::new();
    scope.insert(QuestionType::Query.as_str().to_string(), non_binary);
    scope.insert(QuestionType::Verify.as_str().to_string(), yes_no.clone());
    scope.insert(QuestionType::Logical.as_str().to_string(), yes_no);
    scope.insert(QuestionType::Choose.as_str().to_string(), choose);
    scope
}

/// Ground-truth answers ever observed with each template across the
/// given instances (the plausibility reference).
pub fn cooccurrence_table(
    instances: &[QaInstance],
    config: &SceneConfig,
    vocab: &Vocabularies,
) -> BTreeMap<String, BTreeSet<usize>> {
    let mut table: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for instance in instances {
        let words: Vec<&str> = instance
            .tokens
            .iter()
            .map(|&t| vocab.token_word(t))
            .collect();
        let key = template_key(&words, config);
        table.entry(key).or_default().extend(instance.answers.iter().copied());
    }
    table
}

impl QaInstance {
    /// Training/evaluation view of the instance.
    pub fn to_example<S: Scalar>(&self) -> Example<S> {
        Example {
            question_id: self.question_id.clone(),
            tokens: self.tokens.clone(),
            features: self.image_features.iter().map(|&f| S::from_f64(f)).collect(),
            answers: self.answers.clone(),
        }
    }

    /// Metric-side view of the instance.
    pub fn to_truth(&self, config: &SceneConfig, vocab: &Vocabularies) -> TruthRecord {
        let words: Vec<&str> = self.tokens.iter().map(|&t| vocab.token_word(t)).collect();
        TruthRecord {
            question_id: self.question_id.clone(),
            qtype: self.qtype.as_str().to_string(),
            answers: self.answers.iter().copied().collect(),
            entailed_by: self.entailed_by.clone(),
            group: template_key(&words, config),
        }
    }
}
