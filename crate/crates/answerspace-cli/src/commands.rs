//! The seven experiment commands: gen-data, train, eval, sweep-lambda,
//! oov-eval, report, check-grads. All outputs are deterministic given
//! the config and seeds; rerunning a command overwrites byte-identical
//! files.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use answerspace::embedding::{
    build_answer_matrix, parse_embedding_file, AnswerVocabulary, EmbeddingTable,
};
use answerspace::gradcheck::{self, GradCheckReport};
use answerspace::head::{DistanceVector, Metric, ScoreVector};
use answerspace::io::{self, CheckpointMeta};
use answerspace::metrics::{self, MetricReport, PredictionRecord, TruthSet};
use answerspace::model::{self, Example, TrainConfig};
use answerspace::rng;
use answerspace::synth::{
    self, cooccurrence_table, generate_benchmark, scope_map, split, QaInstance, SplitMode,
    Vocabularies,
};
use answerspace::{head, Real};

use crate::config::ExperimentConfig;

macro_rules! say {
    ($cfg:expr, $($arg:tt)*) => {
        if !$cfg.quiet {
            println!($($arg)*);
        }
    };
}

// ---------------------------------------------------------------------------
// Shared loading helpers
// ---------------------------------------------------------------------------

fn load_vocabularies(tokens_path: &Path, answers_path: &Path) -> Result<Vocabularies> {
    let tokens = io::read_lines(tokens_path)
        .with_context(|| format!("reading token vocabulary {}", tokens_path.display()))?;
    let answers = io::read_lines(answers_path)
        .with_context(|| format!("reading answer vocabulary {}", answers_path.display()))?;
    Ok(Vocabularies::from_parts(
        tokens,
        AnswerVocabulary::new(answers)?,
    ))
}

fn load_table(path: &Path) -> Result<EmbeddingTable<Real>> {
    let file = fs::File::open(path)
        .with_context(|| format!("opening embedding file {}", path.display()))?;
    Ok(parse_embedding_file(BufReader::new(file))?)
}

fn load_instances(path: &Path, vocab: &Vocabularies) -> Result<Vec<QaInstance>> {
    io::read_dataset(path, vocab)
        .with_context(|| format!("reading dataset {}", path.display()))
}

fn to_examples(instances: &[QaInstance]) -> Vec<Example<Real>> {
    instances.iter().map(QaInstance::to_example).collect()
}

fn truth_set(instances: &[QaInstance], cfg: &ExperimentConfig, vocab: &Vocabularies) -> TruthSet {
    let scene = cfg.data.scene_config();
    TruthSet::new(instances.iter().map(|i| i.to_truth(&scene, vocab)))
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct GenDataSummary {
    pub train_questions: usize,
    pub test_questions: usize,
    pub train_answers: usize,
    pub test_answers: usize,
}

/// Generates the benchmark, splits it, and writes the dataset, the
/// vocabulary files, and the structured embedding file.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<GenDataSummary> {
    fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let scene_cfg = cfg.data.scene_config();
    let bench = generate_benchmark(&scene_cfg, cfg.data.questions, cfg.data.seed)?;
    let (train, test) = split(&bench.instances, &cfg.data.split_spec())?;

    io::write_lines(&cfg.tokens_vocab_path(), &bench.vocab.tokens)?;
    io::write_lines(
        &cfg.answers_vocab_path(),
        bench.vocab.answers.answers(),
    )?;
    let table = synth::synthetic_embeddings::<Real>(
        &scene_cfg,
        cfg.data.identity_dim,
        cfg.data.embedding_seed,
    );
    fs::write(cfg.embeddings_path(), table.to_text())?;

    io::write_dataset(&cfg.train_data_path(), &train, &bench.vocab)?;
    io::write_dataset(&cfg.test_data_path(), &test, &bench.vocab)?;

    let side_answers = |side: &[QaInstance]| -> Vec<String> {
        let used: std::collections::BTreeSet<usize> =
            side.iter().flat_map(|i| i.answers.iter().copied()).collect();
        bench
            .vocab
            .answers
            .answers()
            .iter()
            .enumerate()
            .filter(|(i, _)| used.contains(i))
            .map(|(_, a)| a.clone())
            .collect()
    };
    let (train_answer_count, test_answer_count);
    match cfg.data.split {
        SplitMode::Standard => {
            train_answer_count = bench.vocab.answers.len();
            test_answer_count = bench.vocab.answers.len();
        }
        SplitMode::Oov => {
            let train_side = side_answers(&train);
            let test_side = side_answers(&test);
            train_answer_count = train_side.len();
            test_answer_count = test_side.len();
            io::write_lines(&cfg.train_answers_vocab_path(), &train_side)?;
            io::write_lines(&cfg.test_answers_vocab_path(), &test_side)?;
        }
    }

    let summary = GenDataSummary {
        train_questions: train.len(),
        test_questions: test.len(),
        train_answers: train_answer_count,
        test_answers: test_answer_count,
    };
    say!(
        cfg,
        "gen-data: {} train / {} test questions ({} split) -> {}",
        summary.train_questions,
        summary.test_questions,
        cfg.data.split.as_str(),
        cfg.out_dir.display()
    );
    Ok(summary)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub final_loss: f64,
    pub final_accuracy: f64,
}

/// Trains one checkpoint per listed seed on the train split.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<TrainOutcome>> {
    let vocab = load_vocabularies(
        &cfg.tokens_vocab_path(),
        &cfg.train_answers_vocab_path(),
    )?;
    let table = load_table(&cfg.embeddings_path())?;
    let instances = load_instances(&cfg.train_data_path(), &vocab)?;
    let examples = to_examples(&instances);
    fs::create_dir_all(cfg.checkpoints_dir())?;
    fs::create_dir_all(cfg.history_dir())?;

    let label = cfg.run_label(cfg.train.lambda);
    let mut outcomes = Vec::new();
    for seed in cfg.training_seeds()? {
        let train_cfg = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let matrix_seed = rng::subseed(seed, "answer-matrix");
        let matrix = build_answer_matrix(
            &vocab.answers,
            &table,
            train_cfg.m_scheme,
            matrix_seed,
            None,
        )?;
        let (params, history) =
            model::train(&examples, vocab.tokens.len(), matrix, &train_cfg)?;

        let mut extra = cfg.train_kv(seed);
        extra.insert("label".to_string(), label.clone());
        let meta = CheckpointMeta {
            lambda: train_cfg.lambda,
            delta: train_cfg.delta,
            metric: train_cfg.metric,
            normalize_projection: train_cfg.normalize_projection,
            weight_norm: train_cfg.weight_norm,
            seed,
            m_scheme: train_cfg.m_scheme,
            m_seed: matrix_seed,
            m_trainable: train_cfg.m_trainable,
            extra,
        };
        let checkpoint = cfg
            .checkpoints_dir()
            .join(format!("{label}_seed{seed}.ckpt"));
        io::save_checkpoint(&checkpoint, &params, &meta)?;
        let history_path = cfg.history_dir().join(format!("{label}_seed{seed}.csv"));
        io::write_history(&history_path, &history)?;

        let last = history.records.last();
        let outcome = TrainOutcome {
            seed,
            checkpoint,
            history: history_path,
            final_loss: last.map_or(f64::NAN, |r| r.loss),
            final_accuracy: last.map_or(0.0, |r| r.accuracy),
        };
        say!(
            cfg,
            "train[{label} seed {seed}]: final batch loss {:.4}, batch accuracy {:.3} -> {}",
            outcome.final_loss,
            outcome.final_accuracy,
            outcome.checkpoint.display()
        );
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn checkpoint_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".to_string())
}

/// Evaluates each checkpoint on the test split, writing predictions and
/// metric reports; with several checkpoints an ensemble report is added.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<Vec<MetricReport>> {
    if cfg.checkpoints.is_empty() {
        bail!("eval needs at least one checkpoint (eval.checkpoints)");
    }
    let vocab = load_vocabularies(&cfg.tokens_vocab_path(), &cfg.answers_vocab_path())?;
    let test_instances = load_instances(&cfg.test_data_path(), &vocab)?;
    let examples = to_examples(&test_instances);
    let truths = truth_set(&test_instances, cfg, &vocab);

    // Plausibility references the whole generated dataset.
    let scene_cfg = cfg.data.scene_config();
    let mut all_instances = load_instances(&cfg.train_data_path(), &vocab)?;
    all_instances.extend(test_instances.iter().cloned());
    let cooccur = cooccurrence_table(&all_instances, &scene_cfg, &vocab);
    let scope = scope_map(&scene_cfg, &vocab);

    fs::create_dir_all(cfg.predictions_dir())?;
    fs::create_dir_all(cfg.reports_dir())?;

    let mut reports = Vec::new();
    let mut member_records: Vec<Vec<PredictionRecord<Real>>> = Vec::new();
    let mut member_metrics: Vec<Metric> = Vec::new();
    let mut first_lambda = None;
    for path in &cfg.checkpoints {
        let (params, meta) = io::load_checkpoint(path)?;
        if params.head.classifier_answers() != vocab.answers.len() {
            bail!(
                "{}: checkpoint scores {} answers but the vocabulary has {}",
                path.display(),
                params.head.classifier_answers(),
                vocab.answers.len()
            );
        }
        let lambda = cfg.eval_lambda.unwrap_or(meta.lambda);
        first_lambda.get_or_insert(lambda);
        let records = model::evaluate(&params, &examples, lambda, meta.metric)?;
        let stem = checkpoint_stem(path);
        io::write_predictions(
            &cfg.predictions_dir().join(format!("{stem}.tsv")),
            &records,
            &vocab.answers,
        )?;
        let label = meta
            .extra
            .get("label")
            .cloned()
            .unwrap_or_else(|| stem.clone());
        let report = metrics::metric_report(
            &format!("{label}_seed{}", meta.seed),
            &records,
            &truths,
            &vocab.answers,
            &scope,
            &cooccur,
        )?;
        io::write_report(&cfg.reports_dir().join(&stem), &report)?;
        say!(
            cfg,
            "eval[{stem}]: accuracy {:.4}, consistency {:.4}",
            report.accuracy,
            report.consistency
        );
        reports.push(report);
        member_records.push(records);
        member_metrics.push(meta.metric);
    }

    if member_records.len() > 1 {
        let lambda = first_lambda.expect("at least one member");
        let mut ensemble_records = Vec::with_capacity(examples.len());
        for i in 0..examples.len() {
            let members: Vec<(ScoreVector<Real>, DistanceVector<Real>)> = member_records
                .iter()
                .zip(&member_metrics)
                .map(|(records, &metric)| {
                    let r = &records[i];
                    (
                        ScoreVector(r.scores.clone()),
                        DistanceVector {
                            values: r.distances.clone(),
                            metric,
                        },
                    )
                })
                .collect();
            let predicted = head::ensemble_predict(&members, lambda)?;
            ensemble_records.push(PredictionRecord {
                question_id: examples[i].question_id.clone(),
                predicted,
                scores: Vec::new(),
                distances: Vec::new(),
                lambda,
            });
        }
        io::write_predictions(
            &cfg.predictions_dir().join("ensemble.tsv"),
            &ensemble_records,
            &vocab.answers,
        )?;
        let report = metrics::metric_report(
            &format!("ensemble_{}x", member_records.len()),
            &ensemble_records,
            &truths,
            &vocab.answers,
            &scope,
            &cooccur,
        )?;
        io::write_report(&cfg.reports_dir().join("ensemble"), &report)?;
        say!(
            cfg,
            "eval[ensemble x{}]: accuracy {:.4}",
            member_records.len(),
            report.accuracy
        );
        reports.push(report);
    }
    Ok(reports)
}

// ---------------------------------------------------------------------------
// sweep-lambda
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub mean_accuracy: f64,
    pub sd: f64,
    pub seeds: usize,
}

/// Trains and evaluates one model per (lambda, seed) pair and emits
/// mean +- sd accuracy rows suitable for plotting.
pub fn cmd_sweep_lambda(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let vocab = load_vocabularies(
        &cfg.tokens_vocab_path(),
        &cfg.train_answers_vocab_path(),
    )?;
    let table = load_table(&cfg.embeddings_path())?;
    let train_instances = load_instances(&cfg.train_data_path(), &vocab)?;
    let train_examples = to_examples(&train_instances);
    let test_instances = load_instances(&cfg.test_data_path(), &vocab)?;
    let test_examples = to_examples(&test_instances);

    let seeds = cfg.training_seeds()?;
    let mut rows = Vec::new();
    for &lambda in &cfg.lambdas {
        if !(0.0..=1.0).contains(&lambda) {
            bail!("sweep lambda {lambda} outside [0, 1]");
        }
        let mut accuracies = Vec::new();
        for &seed in &seeds {
            let train_cfg = TrainConfig {
                lambda,
                seed,
                ..cfg.train.clone()
            };
            let matrix_seed = rng::subseed(seed, "answer-matrix");
            let matrix = build_answer_matrix(
                &vocab.answers,
                &table,
                train_cfg.m_scheme,
                matrix_seed,
                None,
            )?;
            let (params, _) =
                model::train(&train_examples, vocab.tokens.len(), matrix, &train_cfg)?;
            let records = model::evaluate(&params, &test_examples, lambda, train_cfg.metric)?;
            accuracies.push(model::prediction_accuracy(&records, &test_examples));
        }
        let n = accuracies.len() as f64;
        let mean = accuracies.iter().sum::<f64>() / n;
        let sd = if accuracies.len() > 1 {
            (accuracies.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        say!(cfg, "sweep: lambda {lambda:.2} -> {mean:.4} +- {sd:.4}");
        rows.push(SweepRow {
            lambda,
            mean_accuracy: mean,
            sd,
            seeds: accuracies.len(),
        });
    }

    fs::create_dir_all(&cfg.out_dir)?;
    let mut text = String::from("lambda\tmean_accuracy\tsd\tseeds\n");
    for row in &rows {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            row.lambda, row.mean_accuracy, row.sd, row.seeds
        ));
    }
    fs::write(cfg.out_dir.join("sweep.tsv"), text)?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// oov-eval
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct OovReport {
    pub label: String,
    pub accuracy: f64,
    pub chance: f64,
    pub novel_answers: usize,
    pub questions: usize,
    pub answer_recall: BTreeMap<String, f64>,
}

/// Swaps the answer matrix to the never-seen answers of the OOV test
/// split and evaluates at lambda = 0.
pub fn cmd_oov_eval(cfg: &ExperimentConfig) -> Result<Vec<OovReport>> {
    if cfg.checkpoints.is_empty() {
        bail!("oov-eval needs at least one checkpoint (eval.checkpoints)");
    }
    if let Some(lambda) = cfg.eval_lambda {
        if lambda != 0.0 {
            bail!("out-of-vocabulary prediction requires lambda = 0, got {lambda}");
        }
    }
    let vocab = load_vocabularies(
        &cfg.tokens_vocab_path(),
        &cfg.test_answers_vocab_path(),
    )?;
    let table = load_table(&cfg.embeddings_path())?;
    let test_instances = load_instances(&cfg.test_data_path(), &vocab)?;
    let examples = to_examples(&test_instances);
    let truths = truth_set(&test_instances, cfg, &vocab);
    let novel = vocab.answers.len();
    let chance = 1.0 / novel as f64;

    fs::create_dir_all(cfg.predictions_dir())?;
    fs::create_dir_all(cfg.reports_dir())?;

    let mut reports = Vec::new();
    for path in &cfg.checkpoints {
        let (params, meta) = io::load_checkpoint(path)?;
        let novel_matrix =
            answerspace::embedding::AnswerMatrix::from_embeddings(&vocab.answers, &table)?;
        let head = params.head.swap_answer_matrix(novel_matrix)?;
        let params = model::ModelParameters { head, ..params };
        let records = model::evaluate(&params, &examples, 0.0, meta.metric)?;
        let accuracy = model::prediction_accuracy(&records, &examples);
        let recall = metrics::answer_recall_map(&records, &truths, &vocab.answers)?;

        let stem = format!("oov_{}", checkpoint_stem(path));
        io::write_predictions(
            &cfg.predictions_dir().join(format!("{stem}.tsv")),
            &records,
            &vocab.answers,
        )?;
        let report = OovReport {
            label: stem.clone(),
            accuracy,
            chance,
            novel_answers: novel,
            questions: examples.len(),
            answer_recall: recall,
        };
        let mut kv = vec![
            format!("label={}", report.label),
            format!("accuracy={}", report.accuracy),
            format!("chance={}", report.chance),
            format!("novel_answers={}", report.novel_answers),
            format!("count.questions={}", report.questions),
        ];
        for (answer, rate) in &report.answer_recall {
            kv.push(format!("recall.{answer}={rate}"));
        }
        fs::write(
            cfg.reports_dir().join(format!("{stem}.txt")),
            kv.join("\n") + "\n",
        )?;
        fs::write(
            cfg.reports_dir().join(format!("{stem}.json")),
            serde_json::to_string_pretty(&report).expect("serializable") + "\n",
        )?;
        say!(
            cfg,
            "oov-eval[{stem}]: accuracy {:.4} over {} novel answers (chance {:.4})",
            report.accuracy,
            report.novel_answers,
            report.chance
        );
        reports.push(report);
    }
    if reports.len() > 1 {
        let mean = reports.iter().map(|r| r.accuracy).sum::<f64>() / reports.len() as f64;
        say!(cfg, "oov-eval: mean accuracy {mean:.4} over {} checkpoints", reports.len());
    }
    Ok(reports)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

const REPORT_COLUMNS: [&str; 6] = [
    "accuracy",
    "validity",
    "plausibility",
    "distribution",
    "consistency",
    "count.questions",
];

/// Consolidates key=value report files into one aligned comparison
/// table; with several rows a recomputed mean row is appended.
pub fn cmd_report(cfg: &ExperimentConfig, files: &[PathBuf]) -> Result<String> {
    if files.is_empty() {
        bail!("report needs at least one report file");
    }
    let mut rows: Vec<(String, Vec<Option<f64>>)> = Vec::new();
    for path in files {
        let map = io::read_kv_report(path)?;
        let label = map
            .get("label")
            .cloned()
            .unwrap_or_else(|| checkpoint_stem(path));
        let values = REPORT_COLUMNS
            .iter()
            .map(|col| map.get(*col).and_then(|v| v.parse::<f64>().ok()))
            .collect();
        rows.push((label, values));
    }
    if rows.len() > 1 {
        let means = (0..REPORT_COLUMNS.len())
            .map(|c| {
                let present: Vec<f64> = rows.iter().filter_map(|(_, v)| v[c]).collect();
                if present.is_empty() {
                    None
                } else {
                    Some(present.iter().sum::<f64>() / present.len() as f64)
                }
            })
            .collect();
        rows.push(("mean".to_string(), means));
    }

    let mut widths: Vec<usize> = REPORT_COLUMNS.iter().map(|c| c.len()).collect();
    let label_width = rows
        .iter()
        .map(|(l, _)| l.len())
        .chain(["run".len()])
        .max()
        .unwrap_or(3);
    let formatted: Vec<Vec<String>> = rows
        .iter()
        .map(|(_, values)| {
            values
                .iter()
                .enumerate()
                .map(|(c, v)| {
                    let text = v.map_or("-".to_string(), |v| {
                        if REPORT_COLUMNS[c].starts_with("count") && v.fract() == 0.0 {
                            format!("{v:.0}")
                        } else {
                            format!("{v:.4}")
                        }
                    });
                    widths[c] = widths[c].max(text.len());
                    text
                })
                .collect()
        })
        .collect();

    let mut table = format!("{:<label_width$}", "run");
    for (c, col) in REPORT_COLUMNS.iter().enumerate() {
        table.push_str(&format!("  {:>width$}", col, width = widths[c]));
    }
    table.push('\n');
    for ((label, _), cells) in rows.iter().zip(&formatted) {
        table.push_str(&format!("{label:<label_width$}"));
        for (c, cell) in cells.iter().enumerate() {
            table.push_str(&format!("  {:>width$}", cell, width = widths[c]));
        }
        table.push('\n');
    }

    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("comparison.txt"), &table)?;
    say!(cfg, "{table}");
    Ok(table)
}

// ---------------------------------------------------------------------------
// check-grads
// ---------------------------------------------------------------------------

/// Runs the finite-difference gradient suite; errors (nonzero exit) on
/// any tolerance violation.
pub fn cmd_check_grads(cfg: &ExperimentConfig) -> Result<Vec<GradCheckReport>> {
    let reports = gradcheck::run_suite(cfg.grad_cases, cfg.train.seed);
    for report in &reports {
        say!(cfg, "{}", report.summary());
        for failure in &report.failures {
            say!(cfg, "  {failure}");
        }
    }
    if reports.iter().any(|r| !r.ok()) {
        bail!("gradient check failed");
    }
    Ok(reports)
}
