//! Experiment configuration: flat key=value files with section prefixes
//! (`data.`, `train.`, `model.`, `paths.`, `ensemble.`, `sweep.`).
//! Every key is mirrored by a CLI flag; flags win over the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use answerspace::embedding::InitScheme;
use answerspace::head::Metric;
use answerspace::model::TrainConfig;
use answerspace::optim::OptimizerKind;
use answerspace::synth::{SceneConfig, SplitMode, SplitSpec};

/// Environment variable naming the default output root.
pub const OUT_DIR_ENV: &str = "ANSWERSPACE_OUT";

/// Benchmark generation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DataParams {
    pub questions: usize,
    pub split: SplitMode,
    pub train_fraction: f64,
    pub seed: u64,
    pub oov_min_count: usize,
    pub oov_max_count: usize,
    pub sigma_noise: f64,
    pub max_objects: usize,
    pub questions_per_scene: usize,
    pub identity_dim: usize,
    pub embedding_seed: u64,
}

impl Default for DataParams {
    fn default() -> Self {
        let scene = SceneConfig::default();
        Self {
            questions: 2500,
            split: SplitMode::Standard,
            train_fraction: 0.8,
            seed: 7,
            oov_min_count: 5,
            oov_max_count: 200,
            sigma_noise: scene.sigma_noise,
            max_objects: scene.max_objects,
            questions_per_scene: scene.max_questions_per_scene,
            identity_dim: 10,
            embedding_seed: 11,
        }
    }
}

impl DataParams {
    pub fn scene_config(&self) -> SceneConfig {
        SceneConfig {
            sigma_noise: self.sigma_noise,
            max_objects: self.max_objects,
            max_questions_per_scene: self.questions_per_scene,
            ..SceneConfig::default()
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            mode: self.split,
            train_fraction: self.train_fraction,
            seed: self.seed,
            oov_min_count: self.oov_min_count,
            oov_max_count: self.oov_max_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub out_dir: PathBuf,
    pub quiet: bool,
    pub data: DataParams,
    pub train: TrainConfig,
    /// Seeds to train (one checkpoint per seed); defaults to [train.seed].
    pub seeds: Vec<u64>,
    /// Lambda grid for the sweep command.
    pub lambdas: Vec<f64>,
    /// Lambda override at evaluation time; defaults to the checkpoint's.
    pub eval_lambda: Option<f64>,
    /// Checkpoints to evaluate or OOV-evaluate.
    pub checkpoints: Vec<PathBuf>,
    /// Instances per (metric, lambda) combination for check-grads.
    pub grad_cases: usize,
    pub embeddings: Option<PathBuf>,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub answers_vocab: Option<PathBuf>,
    pub test_answers_vocab: Option<PathBuf>,
    pub tokens_vocab: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let out_dir = std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("out"));
        Self {
            out_dir,
            quiet: false,
            data: DataParams::default(),
            train: TrainConfig::default(),
            seeds: Vec::new(),
            lambdas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            eval_lambda: None,
            checkpoints: Vec::new(),
            grad_cases: 100,
            embeddings: None,
            train_data: None,
            test_data: None,
            answers_vocab: None,
            test_answers_vocab: None,
            tokens_vocab: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut config = Self::default();
        config.apply_file(path)?;
        Ok(config)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        for (number, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').with_context(|| {
                format!("{}:{}: expected key=value", path.display(), number + 1)
            })?;
            self.apply_kv(key.trim(), value.trim())
                .with_context(|| format!("{}:{}", path.display(), number + 1))?;
        }
        Ok(())
    }

    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "out_dir" | "paths.out_dir" => self.out_dir = PathBuf::from(value),
            "quiet" => self.quiet = parse_bool(key, value)?,

            "data.questions" => self.data.questions = parse(key, value)?,
            "data.split" => {
                self.data.split = SplitMode::parse(value)
                    .with_context(|| format!("unknown split mode {value:?}"))?
            }
            "data.train_fraction" => self.data.train_fraction = parse(key, value)?,
            "data.seed" => self.data.seed = parse(key, value)?,
            "data.oov_min_count" => self.data.oov_min_count = parse(key, value)?,
            "data.oov_max_count" => self.data.oov_max_count = parse(key, value)?,
            "data.sigma_noise" => self.data.sigma_noise = parse(key, value)?,
            "data.max_objects" => self.data.max_objects = parse(key, value)?,
            "data.questions_per_scene" => self.data.questions_per_scene = parse(key, value)?,
            "data.identity_dim" => self.data.identity_dim = parse(key, value)?,
            "data.embedding_seed" => self.data.embedding_seed = parse(key, value)?,

            "train.lambda" => self.train.lambda = parse(key, value)?,
            "train.delta" => self.train.delta = parse(key, value)?,
            "train.metric" => {
                self.train.metric = Metric::parse(value)
                    .with_context(|| format!("unknown metric {value:?}"))?
            }
            "train.iterations" => self.train.iterations = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.base_lr" => self.train.base_lr = parse(key, value)?,
            "train.warmup_iters" => self.train.warmup_iters = parse(key, value)?,
            "train.lr_decay_steps" => self.train.lr_decay_steps = parse_list(key, value)?,
            "train.decay_factor" => self.train.decay_factor = parse(key, value)?,
            "train.optimizer" => {
                self.train.optimizer = OptimizerKind::parse(value)
                    .with_context(|| format!("unknown optimizer {value:?}"))?
            }
            "train.seed" => self.train.seed = parse(key, value)?,
            "train.normalize_projection" => {
                self.train.normalize_projection = parse_bool(key, value)?
            }
            "train.m_scheme" => {
                self.train.m_scheme = InitScheme::parse(value)
                    .with_context(|| format!("unknown scheme {value:?}"))?
            }
            "train.m_trainable" => self.train.m_trainable = parse_bool(key, value)?,

            "model.embed_dim" => self.train.embed_dim = parse(key, value)?,
            "model.fused_dim" => self.train.fused_dim = parse(key, value)?,
            "model.hidden_dim" => self.train.hidden_dim = parse(key, value)?,
            "model.weight_norm" => self.train.weight_norm = parse_bool(key, value)?,
            "model.log_every" => self.train.log_every = parse(key, value)?,

            "ensemble.seeds" => self.seeds = parse_list(key, value)?,
            "sweep.lambdas" => self.lambdas = parse_list(key, value)?,
            "eval.lambda" => self.eval_lambda = Some(parse(key, value)?),
            "eval.checkpoints" => {
                self.checkpoints = value.split(',').map(PathBuf::from).collect()
            }
            "grad.cases" => self.grad_cases = parse(key, value)?,

            "paths.embeddings" => self.embeddings = Some(PathBuf::from(value)),
            "paths.train_data" => self.train_data = Some(PathBuf::from(value)),
            "paths.test_data" => self.test_data = Some(PathBuf::from(value)),
            "paths.answers_vocab" => self.answers_vocab = Some(PathBuf::from(value)),
            "paths.test_answers_vocab" => {
                self.test_answers_vocab = Some(PathBuf::from(value))
            }
            "paths.tokens_vocab" => self.tokens_vocab = Some(PathBuf::from(value)),

            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    /// Seeds to train: the ensemble list, or the single training seed.
    /// Seeds within an ensemble must be distinct.
    pub fn training_seeds(&self) -> Result<Vec<u64>> {
        if self.seeds.is_empty() {
            return Ok(vec![self.train.seed]);
        }
        let mut seen = std::collections::BTreeSet::new();
        for &seed in &self.seeds {
            if !seen.insert(seed) {
                bail!("ensemble seeds must be distinct, {seed} repeats");
            }
        }
        Ok(self.seeds.clone())
    }

    pub fn embeddings_path(&self) -> PathBuf {
        self.embeddings
            .clone()
            .unwrap_or_else(|| self.out_dir.join("embeddings.txt"))
    }

    pub fn train_data_path(&self) -> PathBuf {
        self.train_data
            .clone()
            .unwrap_or_else(|| self.out_dir.join("train.tsv"))
    }

    pub fn test_data_path(&self) -> PathBuf {
        self.test_data
            .clone()
            .unwrap_or_else(|| self.out_dir.join("test.tsv"))
    }

    pub fn tokens_vocab_path(&self) -> PathBuf {
        self.tokens_vocab
            .clone()
            .unwrap_or_else(|| self.out_dir.join("tokens.vocab"))
    }

    /// Full answer vocabulary (shared by standard train and eval).
    pub fn answers_vocab_path(&self) -> PathBuf {
        self.answers_vocab
            .clone()
            .unwrap_or_else(|| self.out_dir.join("answers.vocab"))
    }

    /// Train-side answers of an OOV split.
    pub fn train_answers_vocab_path(&self) -> PathBuf {
        match self.data.split {
            SplitMode::Standard => self.answers_vocab_path(),
            SplitMode::Oov => self
                .answers_vocab
                .clone()
                .unwrap_or_else(|| self.out_dir.join("answers_train.vocab")),
        }
    }

    /// Test-side answers of an OOV split (the novel answers).
    pub fn test_answers_vocab_path(&self) -> PathBuf {
        self.test_answers_vocab
            .clone()
            .unwrap_or_else(|| self.out_dir.join("answers_test.vocab"))
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.out_dir.join("checkpoints")
    }

    pub fn predictions_dir(&self) -> PathBuf {
        self.out_dir.join("predictions")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.out_dir.join("reports")
    }

    pub fn history_dir(&self) -> PathBuf {
        self.out_dir.join("history")
    }

    /// Run label: the classification-only endpoint is the baseline.
    pub fn run_label(&self, lambda: f64) -> String {
        if lambda == 1.0 {
            "baseline".to_string()
        } else {
            format!(
                "lambda{:03}_{}",
                (lambda * 100.0).round() as u32,
                self.train.m_scheme.as_str().replace('-', "_")
            )
        }
    }

    /// The training config serialized as key=value lines for checkpoint
    /// metadata and experiment records.
    pub fn train_kv(&self, seed: u64) -> BTreeMap<String, String> {
        let decay: Vec<String> = self
            .train
            .lr_decay_steps
            .iter()
            .map(ToString::to_string)
            .collect();
        BTreeMap::from([
            ("train.lambda".into(), self.train.lambda.to_string()),
            ("train.delta".into(), self.train.delta.to_string()),
            ("train.metric".into(), self.train.metric.as_str().into()),
            ("train.iterations".into(), self.train.iterations.to_string()),
            ("train.batch_size".into(), self.train.batch_size.to_string()),
            ("train.base_lr".into(), self.train.base_lr.to_string()),
            ("train.warmup_iters".into(), self.train.warmup_iters.to_string()),
            ("train.lr_decay_steps".into(), decay.join(",")),
            ("train.decay_factor".into(), self.train.decay_factor.to_string()),
            ("train.optimizer".into(), self.train.optimizer.as_str().into()),
            ("train.seed".into(), seed.to_string()),
            (
                "train.normalize_projection".into(),
                self.train.normalize_projection.to_string(),
            ),
            ("train.m_scheme".into(), self.train.m_scheme.as_str().into()),
            ("train.m_trainable".into(), self.train.m_trainable.to_string()),
            ("model.embed_dim".into(), self.train.embed_dim.to_string()),
            ("model.fused_dim".into(), self.train.fused_dim.to_string()),
            ("model.hidden_dim".into(), self.train.hidden_dim.to_string()),
            ("model.weight_norm".into(), self.train.weight_norm.to_string()),
        ])
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| anyhow::anyhow!("bad value {value:?} for {key}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "on" => Ok(true),
        "false" | "0" | "off" => Ok(false),
        _ => bail!("bad boolean {value:?} for {key}"),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|v| parse(key, v.trim()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip_overrides_defaults() {
        let mut config = ExperimentConfig::default();
        config.apply_kv("train.lambda", "0.25").unwrap();
        config.apply_kv("train.metric", "cosine").unwrap();
        config.apply_kv("data.split", "oov").unwrap();
        config.apply_kv("ensemble.seeds", "1,2,3").unwrap();
        config.apply_kv("train.lr_decay_steps", "100,200").unwrap();
        assert_eq!(config.train.lambda, 0.25);
        assert_eq!(config.train.metric, Metric::Cosine);
        assert_eq!(config.data.split, SplitMode::Oov);
        assert_eq!(config.seeds, vec![1, 2, 3]);
        assert_eq!(config.train.lr_decay_steps, vec![100, 200]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut config = ExperimentConfig::default();
        assert!(config.apply_kv("train.typo", "1").is_err());
    }

    #[test]
    fn labels_distinguish_baseline_from_joint_runs() {
        let mut config = ExperimentConfig::default();
        config.train.lambda = 1.0;
        assert_eq!(config.run_label(1.0), "baseline");
        assert_eq!(config.run_label(0.5), "lambda050_glove");
        config.train.m_scheme = InitScheme::ShuffledGlove;
        assert_eq!(config.run_label(0.25), "lambda025_shuffled_glove");
    }
}
