use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use dcr::chunker::{build_pos_trie, chunk_stats as compute_chunk_stats, CandidateMode};
use dcr::corpus::{build_tag_inventories, load_dataset, load_embeddings_filtered, write_dataset, Example, FeatureSpace};
use dcr::evaluator::{evaluate as score, PredictedAnswer};
use dcr::model::{
    check_model_gradients, load_checkpoint, save_checkpoint, AttentionWeights, Checkpoint, GradCheckSetup, Scoring,
    GRADCHECK_TOLERANCE,
};
use dcr::numerics::BackwardFault;
use dcr::synthetic::{generate, SyntheticSpec};
use dcr::trainer::{build_model, predict_all, predict_spans, train as run_training, TrainConfig};
use dcr::DcrError;
use serde::Serialize;

use crate::{ChunkStatsArgs, EvaluateArgs, GradcheckArgs, PredictArgs, SynthArgs, TrainArgs};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_VERIFY: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl From<DcrError> for CliError {
    fn from(e: DcrError) -> Self {
        let code = match e {
            DcrError::Config(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), CliError>;

fn require_paths(paths: &[&Path]) -> CmdResult {
    match paths.iter().find(|p| !p.exists()) {
        Some(p) => Err(CliError::data(format!("input not found: {}", p.display()))),
        None => Ok(()),
    }
}

fn write_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::data(format!("{}: {e}", path.display()))
}

fn load_examples(path: &Path) -> Result<Vec<Example>, CliError> {
    let loaded = load_dataset(path)?;
    for r in &loaded.rejected {
        eprintln!("warning: {}:{}: skipped {}: {}", path.display(), r.line, r.id, r.reason);
    }
    Ok(loaded.examples)
}

fn vocabulary<'a>(sets: impl IntoIterator<Item = &'a [Example]>) -> HashSet<String> {
    sets.into_iter()
        .flatten()
        .flat_map(|e| e.passage.iter().chain(&e.question))
        .map(|t| t.surface.clone())
        .collect()
}

/// Rebuilds the feature space a checkpoint was trained with.
fn checkpoint_features(ck: &Checkpoint, embeddings: Option<&Path>, examples: &[Example]) -> Result<FeatureSpace, CliError> {
    let path = embeddings
        .map(Path::to_path_buf)
        .or_else(|| ck.embeddings_path.clone())
        .ok_or_else(|| CliError::usage("the checkpoint records no embedding file; pass --embeddings"))?;
    require_paths(&[&path])?;
    let vocab = vocabulary([examples]);
    let table = load_embeddings_filtered(&path, ck.embedding_dim, Some(&vocab))?;
    let space = FeatureSpace::new(table, ck.inventories.clone());
    if space.width() != ck.model.config.input_width {
        return Err(CliError::data(format!(
            "feature width {} does not match the checkpoint's input width {}",
            space.width(),
            ck.model.config.input_width
        )));
    }
    Ok(space)
}

pub fn train(a: TrainArgs) -> CmdResult {
    let mut config = match &a.config {
        Some(p) => {
            if !p.exists() {
                return Err(CliError::usage(format!("config not found: {}", p.display())));
            }
            TrainConfig::load(p)?
        }
        None => TrainConfig::default(),
    };
    config.apply_env()?;
    for o in &a.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
        config.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    config.validate()?;
    require_paths(&[&a.train, &a.dev, &a.embeddings])?;

    let train_set = load_examples(&a.train)?;
    let dev_set = load_examples(&a.dev)?;
    let vocab = vocabulary([train_set.as_slice(), dev_set.as_slice()]);
    let table = load_embeddings_filtered(&a.embeddings, a.embedding_dim, Some(&vocab))?;
    let space = FeatureSpace::new(table, build_tag_inventories(&train_set));
    let model = build_model(&config, &space, &train_set);

    fs::create_dir_all(&a.out).map_err(write_err(&a.out))?;
    let config_path = a.out.join("train_config.txt");
    fs::write(&config_path, config.to_text()).map_err(write_err(&config_path))?;
    let log_path = a.out.join("train_log.tsv");
    let mut log = BufWriter::new(File::create(&log_path).map_err(write_err(&log_path))?);
    let embeddings_path = fs::canonicalize(&a.embeddings).unwrap_or_else(|_| a.embeddings.clone());

    let outcome = run_training(model, &train_set, &dev_set, &space, &config, |entry, improved| {
        let line = entry.line(config.log_wall_time);
        println!("{line}");
        writeln!(log, "{line}")
            .and_then(|_| log.flush())
            .map_err(|e| DcrError::Io {
                path: log_path.clone(),
                source: e,
            })?;
        if let Some(m) = improved {
            save_checkpoint(
                &a.out,
                &Checkpoint {
                    model: m.clone(),
                    inventories: space.inventories.clone(),
                    embedding_dim: a.embedding_dim,
                    embeddings_path: Some(embeddings_path.clone()),
                },
            )?;
        }
        Ok(())
    })?;
    eprintln!("{}", outcome.filter);
    eprintln!(
        "best dev EM {:.4} at epoch {}; checkpoint in {}",
        outcome.best_em,
        outcome.best_epoch,
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    id: &'a str,
    answer: &'a str,
    start: usize,
    end: usize,
    probability: f64,
}

pub fn predict(a: PredictArgs) -> CmdResult {
    require_paths(&[&a.checkpoint, &a.data])?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let examples = load_examples(&a.data)?;
    let space = checkpoint_features(&ck, a.embeddings.as_deref(), &examples)?;
    let spans = predict_spans(&ck.model, &space, &examples)?;

    let mut out = BufWriter::new(File::create(&a.out).map_err(write_err(&a.out))?);
    for (ex, p) in examples.iter().zip(&spans) {
        let line = match p {
            Some(p) => PredictionLine {
                id: &p.id,
                answer: &p.span.text,
                start: p.span.start,
                end: p.span.end,
                probability: p.probability,
            },
            None => {
                eprintln!("warning: {}: no candidate chunks, writing an empty answer", ex.id);
                PredictionLine {
                    id: &ex.id,
                    answer: "",
                    start: 0,
                    end: 0,
                    probability: 0.0,
                }
            }
        };
        let json = serde_json::to_string(&line).expect("prediction serializes");
        writeln!(out, "{json}").map_err(write_err(&a.out))?;
    }
    out.flush().map_err(write_err(&a.out))
}

fn read_predictions(path: &Path) -> Result<Vec<PredictedAnswer>, CliError> {
    let file = File::open(path).map_err(write_err(path))?;
    let mut preds = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(write_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let p = serde_json::from_str(&line)
            .map_err(|e| CliError::data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        preds.push(p);
    }
    Ok(preds)
}

pub fn evaluate(a: EvaluateArgs) -> CmdResult {
    require_paths(&[&a.data])?;
    let examples = load_examples(&a.data)?;
    let predictions = match (&a.predictions, &a.checkpoint) {
        (Some(p), _) => {
            require_paths(&[p])?;
            read_predictions(p)?
        }
        (None, Some(dir)) => {
            require_paths(&[dir])?;
            let ck = load_checkpoint(dir)?;
            let space = checkpoint_features(&ck, a.embeddings.as_deref(), &examples)?;
            predict_all(&ck.model, &space, &examples)?
        }
        (None, None) => return Err(CliError::usage("pass --predictions or --checkpoint")),
    };
    let report = score(&predictions, &examples)?;
    print!("{}", report.to_tsv());
    if let Some(path) = &a.report {
        let json = serde_json::to_string_pretty(&report.document()).expect("report serializes");
        fs::write(path, json + "\n").map_err(write_err(path))?;
    }
    Ok(())
}

pub fn chunk_stats(a: ChunkStatsArgs) -> CmdResult {
    require_paths(&[&a.data])?;
    if let Some(p) = &a.trie_from {
        require_paths(&[p])?;
    }
    let examples = load_examples(&a.data)?;
    let mode = match a.mode.as_str() {
        "window" => CandidateMode::Window { max_len: a.window },
        "trie" => {
            let source = match &a.trie_from {
                Some(p) => load_examples(p)?,
                None => examples.clone(),
            };
            CandidateMode::Trie(build_pos_trie(&source, a.depth_cap))
        }
        other => return Err(CliError::usage(format!("unknown candidate mode {other:?} (expected window or trie)"))),
    };
    print!("{}", compute_chunk_stats(&examples, &mode).to_tsv());
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> CmdResult {
    let scoring = Scoring::parse(&a.scoring).ok_or_else(|| CliError::usage(format!("unknown scoring {:?}", a.scoring)))?;
    let attention = AttentionWeights::parse(&a.attention)
        .ok_or_else(|| CliError::usage(format!("unknown attention {:?}", a.attention)))?;
    let setup = GradCheckSetup {
        hidden: a.hidden,
        passage_len: a.passage_len,
        window: a.window,
        seed: a.seed,
        scoring,
        attention,
        ..GradCheckSetup::default()
    };
    let fault = a.corrupt_backward.then_some(BackwardFault::TanhDerivative);
    let report = check_model_gradients(&setup, fault)?;
    println!(
        "# d={} passage={} candidates={} tolerance={GRADCHECK_TOLERANCE:e}",
        setup.hidden, report.passage_len, report.candidates
    );
    for t in &report.tensors {
        let verdict = if t.max_relative_error < GRADCHECK_TOLERANCE { "ok" } else { "FAIL" };
        println!("{}\t{}\t{:.3e}\t{verdict}", t.name, t.len, t.max_relative_error);
    }
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    println!("{verdict}\tmax relative error {:.3e}", report.max_relative_error());
    if report.passed() {
        Ok(())
    } else {
        Err(CliError {
            code: EXIT_VERIFY,
            message: "gradient check failed".into(),
        })
    }
}

pub fn synth(a: SynthArgs) -> CmdResult {
    let data = generate(&SyntheticSpec::new(a.examples, a.seed));
    fs::create_dir_all(&a.out_dir).map_err(write_err(&a.out_dir))?;
    let data_path: PathBuf = a.out_dir.join("data.jsonl");
    let emb_path = a.out_dir.join("embeddings.txt");
    write_dataset(&data_path, &data.examples)?;
    data.embeddings.write(&emb_path)?;
    println!(
        "{} examples in {}; {}-dimensional embeddings in {}",
        data.examples.len(),
        data_path.display(),
        data.embeddings.dim(),
        emb_path.display()
    );
    Ok(())
}
