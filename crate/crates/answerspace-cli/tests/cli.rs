//! Integration tests driving the command functions and the binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use answerspace::io;
use answerspace::model;
use answerspace::synth::Vocabularies;
use answerspace_cli::commands::{
    cmd_check_grads, cmd_eval, cmd_gen_data, cmd_oov_eval, cmd_report, cmd_sweep_lambda,
    cmd_train,
};
use answerspace_cli::config::ExperimentConfig;

fn small_config(out_dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.out_dir = out_dir.to_path_buf();
    cfg.quiet = true;
    cfg.data.questions = 300;
    cfg.train.iterations = 150;
    cfg.train.warmup_iters = 20;
    cfg.train.lr_decay_steps = vec![120];
    cfg.train.embed_dim = 12;
    cfg.train.fused_dim = 32;
    cfg.train.hidden_dim = 32;
    cfg.train.log_every = 25;
    cfg.grad_cases = 2;
    cfg
}

fn dir_snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(current) = stack.pop() {
        for entry in fs::read_dir(&current).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push((path.clone(), fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn gen_data_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let first = cmd_gen_data(&cfg).unwrap();
    let snapshot_a = dir_snapshot(dir.path());
    let second = cmd_gen_data(&cfg).unwrap();
    let snapshot_b = dir_snapshot(dir.path());
    assert_eq!(first.train_questions, second.train_questions);
    assert_eq!(snapshot_a, snapshot_b);
    assert_eq!(
        first.train_questions + first.test_questions,
        cfg.data.questions
    );
}

#[test]
fn gen_data_question_count_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.data.questions = 437;
    cmd_gen_data(&cfg).unwrap();
    let train = fs::read_to_string(cfg.train_data_path()).unwrap();
    let test = fs::read_to_string(cfg.test_data_path()).unwrap();
    assert_eq!(train.lines().count() + test.lines().count(), 437);
}

#[test]
fn oov_gen_data_writes_disjoint_answer_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.data.questions = 1200;
    cfg.apply_kv("data.split", "oov").unwrap();
    cfg.data.train_fraction = 0.7;
    cmd_gen_data(&cfg).unwrap();
    let train: Vec<String> = io::read_lines(&cfg.train_answers_vocab_path()).unwrap();
    let test: Vec<String> = io::read_lines(&cfg.test_answers_vocab_path()).unwrap();
    assert!(!train.is_empty() && !test.is_empty());
    for answer in &test {
        assert!(!train.contains(answer), "{answer} on both sides");
    }
}

#[test]
fn train_emits_one_checkpoint_per_seed_and_labels_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cmd_gen_data(&cfg).unwrap();
    cfg.train.lambda = 1.0;
    cfg.seeds = vec![3, 4, 5];
    let outcomes = cmd_train(&cfg).unwrap();
    assert_eq!(outcomes.len(), 3);
    for (outcome, seed) in outcomes.iter().zip([3u64, 4, 5]) {
        assert_eq!(outcome.seed, seed);
        assert!(outcome.checkpoint.exists());
        assert!(outcome.history.exists());
        let name = outcome.checkpoint.file_name().unwrap().to_string_lossy();
        assert!(name.starts_with("baseline_seed"), "{name}");
        let (_, meta) = io::load_checkpoint(&outcome.checkpoint).unwrap();
        assert_eq!(meta.extra["label"], "baseline");
        assert_eq!(meta.seed, seed);
    }
}

#[test]
fn eval_writes_reports_and_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cmd_gen_data(&cfg).unwrap();
    cfg.seeds = vec![1, 2];
    let outcomes = cmd_train(&cfg).unwrap();
    cfg.checkpoints = outcomes.iter().map(|o| o.checkpoint.clone()).collect();
    let reports = cmd_eval(&cfg).unwrap();
    // Two per-model reports plus the ensemble.
    assert_eq!(reports.len(), 3);
    assert!(reports.last().unwrap().label.starts_with("ensemble"));
    assert!(cfg.reports_dir().join("ensemble.txt").exists());
    assert!(cfg.reports_dir().join("ensemble.json").exists());
    for report in &reports {
        assert!((0.0..=1.0).contains(&report.accuracy));
        assert!((0.0..=1.0).contains(&report.validity));
        assert!((0.0..=1.0).contains(&report.consistency));
    }
}

#[test]
fn ensemble_of_identical_checkpoints_matches_single_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cmd_gen_data(&cfg).unwrap();
    cfg.seeds = vec![9];
    let outcome = &cmd_train(&cfg).unwrap()[0];
    let copy = cfg.checkpoints_dir().join("copy.ckpt");
    fs::copy(&outcome.checkpoint, &copy).unwrap();
    cfg.checkpoints = vec![outcome.checkpoint.clone(), copy];
    let reports = cmd_eval(&cfg).unwrap();
    assert_eq!(reports.len(), 3);
    assert_eq!(reports[0].accuracy, reports[2].accuracy);
    assert_eq!(reports[0].per_type, reports[2].per_type);
}

#[test]
fn eval_at_lambda_one_matches_classifier_only_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cmd_gen_data(&cfg).unwrap();
    cfg.train.lambda = 1.0;
    let outcome = &cmd_train(&cfg).unwrap()[0];
    cfg.checkpoints = vec![outcome.checkpoint.clone()];
    cmd_eval(&cfg).unwrap();

    let vocab = Vocabularies::from_parts(
        io::read_lines(&cfg.tokens_vocab_path()).unwrap(),
        answerspace::embedding::AnswerVocabulary::new(
            io::read_lines(&cfg.answers_vocab_path()).unwrap(),
        )
        .unwrap(),
    );
    let instances = io::read_dataset(&cfg.test_data_path(), &vocab).unwrap();
    let examples: Vec<model::Example<f64>> =
        instances.iter().map(|i| i.to_example()).collect();
    let (params, _) = io::load_checkpoint(&outcome.checkpoint).unwrap();
    let classifier_only = model::evaluate_classifier_only(&params, &examples).unwrap();

    let stem = outcome.checkpoint.file_stem().unwrap().to_string_lossy();
    let records = io::read_predictions(
        &cfg.predictions_dir().join(format!("{stem}.tsv")),
        &vocab.answers,
    )
    .unwrap();
    assert_eq!(records.len(), classifier_only.len());
    for (record, (qid, expected)) in records.iter().zip(&classifier_only) {
        assert_eq!(&record.question_id, qid);
        assert_eq!(record.predicted, *expected);
    }
}

#[test]
fn eval_rejects_vocab_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.data.questions = 1200;
    cfg.apply_kv("data.split", "oov").unwrap();
    cfg.data.train_fraction = 0.7;
    cmd_gen_data(&cfg).unwrap();
    let outcome = &cmd_train(&cfg).unwrap()[0];
    // Standard eval resolves the full vocabulary, which no longer
    // matches the checkpoint trained on the OOV train side.
    cfg.checkpoints = vec![outcome.checkpoint.clone()];
    let err = cmd_eval(&cfg).unwrap_err();
    assert!(err.to_string().contains("vocabulary"), "{err}");
}

#[test]
fn sweep_emits_requested_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cmd_gen_data(&cfg).unwrap();
    cfg.train.iterations = 60;
    cfg.lambdas = vec![0.0, 1.0];
    cfg.seeds = vec![1, 2];
    let rows = cmd_sweep_lambda(&cfg).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].lambda, 0.0);
    assert_eq!(rows[1].lambda, 1.0);
    for row in &rows {
        assert!(row.mean_accuracy.is_finite());
        assert!(row.sd.is_finite());
        assert_eq!(row.seeds, 2);
    }
    let sweep = fs::read_to_string(cfg.out_dir.join("sweep.tsv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);
}

#[test]
fn sweep_of_lambda_one_reproduces_baseline_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cmd_gen_data(&cfg).unwrap();
    cfg.lambdas = vec![1.0];
    cfg.seeds = vec![7];
    let rows = cmd_sweep_lambda(&cfg).unwrap();

    cfg.train.lambda = 1.0;
    cfg.train.seed = 7;
    cfg.seeds = vec![7];
    let outcome = &cmd_train(&cfg).unwrap()[0];
    cfg.checkpoints = vec![outcome.checkpoint.clone()];
    let reports = cmd_eval(&cfg).unwrap();
    assert_eq!(rows[0].mean_accuracy, reports[0].accuracy);
}

#[test]
fn oov_eval_on_training_vocab_equals_standard_lambda_zero_eval() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cmd_gen_data(&cfg).unwrap();
    cfg.train.lambda = 0.0;
    // With a frozen matrix the identity swap is exact: the rebuilt rows
    // equal the rows the model was trained against.
    cfg.train.m_trainable = false;
    let outcome = &cmd_train(&cfg).unwrap()[0];

    // Pointing the "novel" vocabulary at the training vocabulary makes
    // the swap an identity: accuracy equals a standard lambda = 0 eval.
    cfg.checkpoints = vec![outcome.checkpoint.clone()];
    cfg.test_answers_vocab = Some(cfg.answers_vocab_path());
    let oov_reports = cmd_oov_eval(&cfg).unwrap();

    cfg.eval_lambda = Some(0.0);
    let reports = cmd_eval(&cfg).unwrap();
    assert_eq!(oov_reports[0].accuracy, reports[0].accuracy);
    assert!((oov_reports[0].chance - 1.0 / 47.0).abs() < 1e-12);
}

#[test]
fn oov_predictions_match_brute_force_nearest_row_scoring() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.data.questions = 1200;
    cfg.apply_kv("data.split", "oov").unwrap();
    cfg.data.train_fraction = 0.7;
    cmd_gen_data(&cfg).unwrap();
    cfg.train.m_trainable = false;
    let outcome = &cmd_train(&cfg).unwrap()[0];
    cfg.checkpoints = vec![outcome.checkpoint.clone()];
    let report = &cmd_oov_eval(&cfg).unwrap()[0];

    // Recompute every projection from the checkpoint and score it by
    // exhaustive nearest-row search over the novel matrix.
    let vocab = Vocabularies::from_parts(
        io::read_lines(&cfg.tokens_vocab_path()).unwrap(),
        answerspace::embedding::AnswerVocabulary::new(
            io::read_lines(&cfg.test_answers_vocab_path()).unwrap(),
        )
        .unwrap(),
    );
    let table = answerspace::embedding::parse_embedding_file::<f64, _>(
        std::io::BufReader::new(fs::File::open(cfg.embeddings_path()).unwrap()),
    )
    .unwrap();
    let novel =
        answerspace::embedding::AnswerMatrix::from_embeddings(&vocab.answers, &table).unwrap();
    let (params, meta) = io::load_checkpoint(&outcome.checkpoint).unwrap();
    let params = answerspace::model::ModelParameters {
        head: params.head.swap_answer_matrix(novel.clone()).unwrap(),
        ..params
    };
    let instances = io::read_dataset(&cfg.test_data_path(), &vocab).unwrap();
    let mut correct = 0usize;
    for instance in &instances {
        let example: model::Example<f64> = instance.to_example();
        let fwd = model::forward_example(&params, &example, meta.metric).unwrap();
        let p = fwd.head.projection.as_slice();
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for i in 0..novel.answer_count() {
            let d: f64 = p
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
        if instance.answers.contains(&best) {
            correct += 1;
        }
    }
    let brute_force_accuracy = correct as f64 / instances.len() as f64;
    assert_eq!(report.accuracy, brute_force_accuracy);
}

#[test]
fn oov_eval_rejects_nonzero_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.eval_lambda = Some(0.5);
    cfg.checkpoints = vec![PathBuf::from("whatever.ckpt")];
    let err = cmd_oov_eval(&cfg).unwrap_err();
    assert!(err.to_string().contains("lambda"), "{err}");
}

#[test]
fn report_passes_single_file_through_and_averages_many() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    fs::create_dir_all(dir.path()).unwrap();
    let mk = |name: &str, label: &str, acc: f64, cons: f64| -> PathBuf {
        let path = dir.path().join(name);
        fs::write(
            &path,
            format!(
                "label={label}\naccuracy={acc}\nvalidity=1\nplausibility=0.9\ndistribution=0.05\nconsistency={cons}\ncount.questions=100\n"
            ),
        )
        .unwrap();
        path
    };
    let a = mk("a.txt", "runA", 0.5, 0.8);
    let table = cmd_report(&cfg, &[a.clone()]).unwrap();
    assert!(table.contains("runA"));
    assert!(!table.contains("mean"));

    let b = mk("b.txt", "runB", 0.7, 0.6);
    let c = mk("c.txt", "runC", 0.9, 0.4);
    let table = cmd_report(&cfg, &[a, b, c]).unwrap();
    assert!(table.contains("runA") && table.contains("runB") && table.contains("runC"));
    // Column means recomputed from the raw rows.
    let mean_line = table.lines().find(|l| l.starts_with("mean")).unwrap();
    assert!(mean_line.contains("0.7000"), "{mean_line}");
    assert!(mean_line.contains("0.6000"), "{mean_line}");
    assert!(cfg.out_dir.join("comparison.txt").exists());
}

#[test]
fn check_grads_runs_clean_at_small_scale() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let reports = cmd_check_grads(&cfg).unwrap();
    assert_eq!(reports.len(), 4);
    for report in &reports {
        assert!(report.ok(), "{}", report.summary());
    }
}

#[test]
fn duplicate_ensemble_seeds_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cmd_gen_data(&cfg).unwrap();
    cfg.seeds = vec![1, 2, 1];
    let err = cmd_train(&cfg).unwrap_err();
    assert!(err.to_string().contains("distinct"), "{err}");
}

#[test]
fn config_file_keys_apply_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.conf");
    fs::write(
        &path,
        "train.lambda=0.25\ndata.questions=123\n# comment\ntrain.metric=cosine\n",
    )
    .unwrap();
    let mut cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg.train.lambda, 0.25);
    assert_eq!(cfg.data.questions, 123);
    // A later flag-style override wins.
    cfg.apply_kv("train.lambda", "0.75").unwrap();
    assert_eq!(cfg.train.lambda, 0.75);
}

#[test]
fn binary_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_answerspace");
    let status = Command::new(bin)
        .args([
            "--quiet",
            "--out-dir",
            dir.path().to_str().unwrap(),
            "gen-data",
            "--questions",
            "200",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("train.tsv").exists());

    // Nonzero exit on bad input.
    let status = Command::new(bin)
        .args([
            "--quiet",
            "--out-dir",
            dir.path().to_str().unwrap(),
            "eval",
            "--checkpoints",
            "missing.ckpt",
        ])
        .status()
        .unwrap();
    assert!(!status.success());
}
