//! Mini-batch training: curriculum batches, per-example tapes evaluated in
//! parallel, mean NLL, global-norm clipping, ADAM, early stopping on dev EM.

mod batching;
mod config;
mod optim;

pub use batching::{filter_trainable, make_batches, pad_rows, truncate_passage, Batch, TrainingExample};
pub use config::{CandidateKind, TrainConfig, SEED_ENV_VAR};
pub use optim::{
    adam_step, clip_gradients, global_norm, init_parameters, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON,
};

use std::fmt;
use std::time::Instant;

use rayon::prelude::*;

use crate::chunker::{build_pos_trie, CandidateMode};
use crate::corpus::{Example, FeatureSpace};
use crate::error::{DcrError, Result};
use crate::evaluator::{evaluate, EvalReport, PredictedAnswer};
use crate::model::{nll_loss, DcrModel, InputDropout, ModelConfig, Prediction};
use crate::numerics::{SeededRng, Tape};

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_DROPOUT: u64 = 3;

/// Examples evaluated concurrently before their gradients are summed.
/// Fixed so the summation order never depends on the thread count.
const GRADIENT_CHUNK: usize = 8;

/// Builds the model described by `config` with freshly initialized weights.
/// Trie mode reads answer patterns from `train`.
pub fn build_model(config: &TrainConfig, features: &FeatureSpace, train: &[Example]) -> DcrModel {
    let candidates = match config.candidate_mode {
        CandidateKind::Window => CandidateMode::Window { max_len: config.window },
        CandidateKind::Trie => CandidateMode::Trie(build_pos_trie(train, config.trie_depth_cap)),
    };
    let mut model = DcrModel::new(ModelConfig {
        input_width: features.width(),
        hidden: config.hidden,
        scoring: config.scoring,
        attention: config.attention,
        candidates,
    });
    init_parameters(
        &mut model.params,
        config.init_range,
        &mut SeededRng::derive(config.seed, &[STREAM_INIT]),
    );
    model
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FilterStats {
    pub total: usize,
    pub truncated: usize,
    pub kept: usize,
}

impl fmt::Display for FilterStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} of {} examples have a gold answer among their candidates ({} passages truncated)",
            self.kept, self.total, self.truncated
        )
    }
}

/// Truncates passages and keeps the examples whose gold span is a candidate.
pub fn prepare_training_set(
    model: &DcrModel,
    train: &[Example],
    max_passage_len: usize,
) -> Result<(Vec<TrainingExample>, FilterStats)> {
    let mut stats = FilterStats {
        total: train.len(),
        ..FilterStats::default()
    };
    let mut kept = Vec::new();
    for ex in train {
        if ex.passage.len() > max_passage_len {
            stats.truncated += 1;
        }
        let ex = truncate_passage(ex, max_passage_len);
        let candidates = model.candidates_for(&ex);
        if ex.question.is_empty() {
            continue;
        }
        if let Some(gold) = filter_trainable(&ex, &candidates) {
            kept.push(TrainingExample {
                example: ex,
                candidates,
                gold,
            });
        }
    }
    stats.kept = kept.len();
    if kept.is_empty() {
        return Err(DcrError::NoTrainableExamples(stats.to_string()));
    }
    Ok((kept, stats))
}

/// NLL of the target span and its gradient for every parameter tensor.
pub fn example_gradient(
    model: &DcrModel,
    features: &FeatureSpace,
    item: &TrainingExample,
    passage_len: usize,
    question_len: usize,
    dropout: Option<InputDropout<'_>>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let ex = &item.example;
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape);
    let passage = pad_rows(features.passage_matrix(&ex.passage, &ex.question), passage_len);
    let question = pad_rows(features.question_matrix(&ex.question), question_len);
    let fwd = model.forward(&mut tape, &p, &passage, &question, &item.candidates, dropout)?;
    let loss = nll_loss(&mut tape, fwd.probabilities, item.gold)?;
    let value = tape.value(loss).values()[0];
    let grads = tape.backward(loss)?;
    Ok((value, p.gradients(&grads, &model.params)))
}

/// Mean loss and mean gradient over one batch.
pub fn batch_gradients(
    model: &DcrModel,
    features: &FeatureSpace,
    examples: &[TrainingExample],
    batch: &Batch,
    config: &TrainConfig,
    epoch: usize,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut total: Vec<Vec<f64>> = model.params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
    let mut loss = 0.0;
    for chunk in batch.members.chunks(GRADIENT_CHUNK) {
        let results: Vec<Result<(f64, Vec<Vec<f64>>)>> = chunk
            .par_iter()
            .map(|&i| {
                let mut rng = SeededRng::derive(config.seed, &[STREAM_DROPOUT, epoch as u64, i as u64]);
                let dropout = (config.dropout_rate > 0.0).then_some(InputDropout {
                    rate: config.dropout_rate,
                    rng: &mut rng,
                });
                example_gradient(model, features, &examples[i], batch.passage_len, batch.question_len, dropout)
            })
            .collect();
        for r in results {
            let (l, grads) = r?;
            loss += l;
            for (acc, g) in total.iter_mut().zip(grads) {
                acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
    }
    let n = batch.members.len() as f64;
    total.iter_mut().flatten().for_each(|g| *g /= n);
    Ok((loss / n, total))
}

/// One optimizer update; returns the batch's mean loss before the update.
pub fn train_step(
    model: &mut DcrModel,
    state: &mut AdamState,
    features: &FeatureSpace,
    examples: &[TrainingExample],
    batch: &Batch,
    config: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    let (loss, mut grads) = batch_gradients(model, features, examples, batch, config, epoch)?;
    clip_gradients(&mut grads, config.clip_norm);
    adam_step(model.params.tensors_mut(), &grads, state, config.learning_rate)?;
    Ok(loss)
}

/// Predicts every example over its full passage, in parallel. `None` marks
/// an example with no candidate (or an empty passage or question).
pub fn predict_spans(model: &DcrModel, features: &FeatureSpace, examples: &[Example]) -> Result<Vec<Option<Prediction>>> {
    examples
        .par_iter()
        .map(|ex| match model.predict(features, ex) {
            Ok(p) => Ok(Some(p)),
            Err(DcrError::Example { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

/// Answer texts for every example; unanswerable ones get an empty answer.
pub fn predict_all(model: &DcrModel, features: &FeatureSpace, examples: &[Example]) -> Result<Vec<PredictedAnswer>> {
    let spans = predict_spans(model, features, examples)?;
    Ok(examples
        .iter()
        .zip(spans)
        .map(|(ex, p)| match p {
            Some(p) => PredictedAnswer::from(&p),
            None => PredictedAnswer {
                id: ex.id.clone(),
                answer: String::new(),
            },
        })
        .collect())
}

pub fn evaluate_model(model: &DcrModel, features: &FeatureSpace, examples: &[Example]) -> Result<EvalReport> {
    evaluate(&predict_all(model, features, examples)?, examples)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_em: f64,
    pub dev_f1: f64,
    /// Seconds since training started.
    pub wall_secs: f64,
}

impl EpochLog {
    /// Tab-separated: epoch, mean train loss, dev EM, dev F1, wall time.
    pub fn line(&self, with_wall_time: bool) -> String {
        let wall = if with_wall_time {
            format!("{:.2}", self.wall_secs)
        } else {
            "-".to_owned()
        };
        format!(
            "{}\t{:.6}\t{:.4}\t{:.4}\t{wall}",
            self.epoch, self.train_loss, self.dev_em, self.dev_f1
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the highest dev EM.
    pub best: DcrModel,
    pub best_epoch: usize,
    pub best_em: f64,
    pub epochs: Vec<EpochLog>,
    pub filter: FilterStats,
}

/// Trains until `max_epochs` or until dev EM has not strictly improved for
/// `patience` epochs. `on_epoch` sees each log entry, plus the model
/// whenever that epoch set a new best.
pub fn train(
    mut model: DcrModel,
    train_set: &[Example],
    dev_set: &[Example],
    features: &FeatureSpace,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, Option<&DcrModel>) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dev_set.is_empty() {
        return Err(DcrError::InvalidArgument("the held-out set is empty".into()));
    }
    let (examples, filter) = prepare_training_set(&model, train_set, config.max_passage_len)?;
    let mut state = AdamState::new(model.params.tensors());
    let started = Instant::now();
    let mut best: Option<(DcrModel, usize, f64)> = None;
    let mut stagnant = 0;
    let mut epochs = Vec::new();

    for epoch in 1..=config.max_epochs {
        let mut rng = SeededRng::derive(config.seed, &[STREAM_SHUFFLE, epoch as u64]);
        let batches = make_batches(&examples, config.batch_size, config.curriculum_group, &mut rng);
        let mut loss_sum = 0.0;
        for batch in &batches {
            let loss = train_step(&mut model, &mut state, features, &examples, batch, config, epoch)?;
            loss_sum += loss * batch.members.len() as f64;
        }
        let report = evaluate_model(&model, features, dev_set)?;
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / examples.len() as f64,
            dev_em: report.em,
            dev_f1: report.f1,
            wall_secs: started.elapsed().as_secs_f64(),
        };
        let improved = best.as_ref().is_none_or(|(_, _, em)| report.em > *em);
        if improved {
            best = Some((model.clone(), epoch, report.em));
            stagnant = 0;
        } else {
            stagnant += 1;
        }
        on_epoch(&log, improved.then_some(&model))?;
        epochs.push(log);
        if stagnant >= config.patience {
            break;
        }
    }
    let (best, best_epoch, best_em) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_em,
        epochs,
        filter,
    })
}
