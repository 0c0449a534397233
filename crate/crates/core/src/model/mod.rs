//! The dynamic chunk reader.
//!
//! Passage and question go through one shared bi-GRU. Each passage state
//! `h_j` attends to every question state `h_k` with the raw inner product
//! `α_jk = h_j · h_k`; the pooled `β_j = Σ_k α_jk h_k` is appended to `h_j`
//! and a second bi-GRU runs over `[h_j ; β_j]`. A candidate chunk `(m, n)` is
//! represented by the forward state at `m` and the backward state at `n`,
//! scored against `[→h_K ; ←h_1]` of the question, and ranked with a softmax
//! over all candidates.

mod checkpoint;
mod gradcheck;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use gradcheck::{check_model_gradients, GradCheckSetup, ModelGradCheck, TensorCheck, GRADCHECK_TOLERANCE};

use crate::chunker::{CandidateChunk, CandidateMode};
use crate::corpus::{AnswerSpan, Example, FeatureSpace};
use crate::encoder::{BiGruEncoder, EncodedSequence};
use crate::error::{DcrError, Result};
use crate::numerics::{SeededRng, Tape, Tensor, Var};
use crate::params::{BoundParams, ParamSet};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Scoring {
    /// Unnormalized inner product.
    #[default]
    Dot,
    /// Inner product of unit-normalized vectors.
    Cosine,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AttentionWeights {
    /// `α_jk` used as is.
    #[default]
    Raw,
    /// `α_j·` passed through a softmax over question positions.
    Softmax,
}

impl Scoring {
    pub fn name(self) -> &'static str {
        match self {
            Scoring::Dot => "dot",
            Scoring::Cosine => "cosine",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dot" => Some(Scoring::Dot),
            "cosine" => Some(Scoring::Cosine),
            _ => None,
        }
    }
}

impl AttentionWeights {
    pub fn name(self) -> &'static str {
        match self {
            AttentionWeights::Raw => "raw",
            AttentionWeights::Softmax => "softmax",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "raw" => Some(AttentionWeights::Raw),
            "softmax" => Some(AttentionWeights::Softmax),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub input_width: usize,
    pub hidden: usize,
    pub scoring: Scoring,
    pub attention: AttentionWeights,
    pub candidates: CandidateMode,
}

impl ModelConfig {
    pub fn new(input_width: usize, hidden: usize) -> Self {
        ModelConfig {
            input_width,
            hidden,
            scoring: Scoring::default(),
            attention: AttentionWeights::default(),
            candidates: CandidateMode::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DcrModel {
    pub config: ModelConfig,
    pub params: ParamSet,
    /// Shared by passage and question.
    pub shared: BiGruEncoder,
    /// Runs over the question-attended passage, input width `4d`.
    pub attention: BiGruEncoder,
}

/// One encoder input: a feature matrix and, when padded, its mask.
#[derive(Clone, Debug)]
pub struct SequenceInput {
    pub features: Tensor,
    pub mask: Option<Vec<bool>>,
}

impl SequenceInput {
    pub fn unpadded(features: Tensor) -> Self {
        SequenceInput { features, mask: None }
    }

    /// Real (unmasked) positions; padding only ever trails.
    pub fn real_len(&self) -> usize {
        match &self.mask {
            Some(m) => m.iter().filter(|&&b| b).count(),
            None => self.features.shape()[0],
        }
    }
}

/// Everything recorded for one example's forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub passage: EncodedSequence,
    pub question: EncodedSequence,
    /// `T × 4d`
    pub attended: Var,
    pub gamma: EncodedSequence,
    /// `1 × 2d`
    pub question_repr: Var,
    /// `1 × C`
    pub scores: Var,
    /// `1 × C`
    pub probabilities: Var,
}

/// Candidates and their probabilities, index-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkScoreSet {
    pub candidates: Vec<CandidateChunk>,
    pub probabilities: Vec<f64>,
}

impl ChunkScoreSet {
    /// Index of the most probable candidate; ties go to the earliest
    /// candidate, i.e. smallest start, then smallest end.
    pub fn best(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &p) in self.probabilities.iter().enumerate() {
            let better = match best {
                None => true,
                Some(b) => {
                    let (pb, cb, ci) = (self.probabilities[b], self.candidates[b], self.candidates[i]);
                    p > pb || (p == pb && ci.span() < cb.span())
                }
            };
            if better {
                best = Some(i);
            }
        }
        best
    }

    pub fn index_of(&self, start: usize, end: usize) -> Option<usize> {
        self.candidates.iter().position(|c| c.span() == (start, end))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub span: AnswerSpan,
    pub probability: f64,
}

/// Word-by-word attention: `v_j = [h^p_j ; Σ_k α_jk h^q_k]` with
/// `α_jk = h^p_j · h^q_k`. Inputs are `T × 2d` and `K × 2d`; output `T × 4d`.
pub fn attend(tape: &mut Tape, passage: Var, question: Var, weights: AttentionWeights) -> Result<Var> {
    let (sp, sq) = (tape.shape(passage).to_vec(), tape.shape(question).to_vec());
    if sp.len() != 2 || sq.len() != 2 || sp[1] != sq[1] {
        return Err(DcrError::shape("attend", &sp, &sq));
    }
    if sp[0] == 0 || sq[0] == 0 {
        return Err(DcrError::InvalidArgument("attention needs non-empty passage and question".into()));
    }
    let qt = tape.transpose(question)?;
    let mut alpha = tape.matmul(passage, qt)?;
    if weights == AttentionWeights::Softmax {
        alpha = tape.softmax(alpha)?;
    }
    let beta = tape.matmul(alpha, question)?;
    tape.concat(passage, beta)
}

/// `[→γ_m ; ←γ_n]` for 1-based inclusive `(start, end)`, as a `1 × 2d` row.
pub fn chunk_repr(tape: &mut Tape, gamma: &EncodedSequence, start: usize, end: usize) -> Result<Var> {
    let len = tape.shape(gamma.forward)[0];
    if start == 0 || start > end || end > len {
        return Err(DcrError::InvalidArgument(format!(
            "chunk ({start}, {end}) outside a passage of {len} tokens"
        )));
    }
    let f = tape.row(gamma.forward, start - 1)?;
    let b = tape.row(gamma.backward, end - 1)?;
    tape.concat(f, b)
}

/// All candidate representations stacked into a `C × 2d` matrix.
pub fn chunk_reprs(tape: &mut Tape, gamma: &EncodedSequence, candidates: &[CandidateChunk]) -> Result<Var> {
    let len = tape.shape(gamma.forward)[0];
    if let Some(c) = candidates.iter().find(|c| c.start == 0 || c.start > c.end || c.end > len) {
        return Err(DcrError::InvalidArgument(format!(
            "chunk ({}, {}) outside a passage of {len} tokens",
            c.start, c.end
        )));
    }
    let starts: Vec<usize> = candidates.iter().map(|c| c.start - 1).collect();
    let ends: Vec<usize> = candidates.iter().map(|c| c.end - 1).collect();
    let f = tape.gather_rows(gamma.forward, &starts)?;
    let b = tape.gather_rows(gamma.backward, &ends)?;
    tape.concat(f, b)
}

/// `[→h_K ; ←h_1]` of a question of `len` real tokens.
pub fn question_repr(tape: &mut Tape, question: &EncodedSequence, len: usize) -> Result<Var> {
    if len == 0 {
        return Err(DcrError::InvalidArgument("empty question".into()));
    }
    let last = tape.row(question.forward, len - 1)?;
    let first = tape.row(question.backward, 0)?;
    tape.concat(last, first)
}

/// Scores (`1 × C`) and softmax probabilities (`1 × C`) of `C × 2d` chunk
/// representations against a `1 × 2d` question representation.
pub fn score_chunks(tape: &mut Tape, chunks: Var, question: Var, scoring: Scoring) -> Result<(Var, Var)> {
    if tape.shape(chunks)[0] == 0 {
        return Err(DcrError::InvalidArgument("no candidate chunks to score".into()));
    }
    let (chunks, question) = match scoring {
        Scoring::Dot => (chunks, question),
        Scoring::Cosine => (tape.normalize_rows(chunks), tape.normalize_rows(question)),
    };
    let ct = tape.transpose(chunks)?;
    let scores = tape.matmul(question, ct)?;
    let probs = tape.softmax(scores)?;
    Ok((scores, probs))
}

/// `-log P(gold)`; `gold` is the gold candidate's index.
pub fn nll_loss(tape: &mut Tape, probabilities: Var, gold: usize) -> Result<Var> {
    let p = tape.pick(probabilities, gold)?;
    Ok(tape.neg_log(p))
}

/// Dropout applied to the shared encoder's inputs during training.
pub struct InputDropout<'a> {
    pub rate: f64,
    pub rng: &'a mut SeededRng,
}

impl DcrModel {
    /// A model with all-zero weights; see [`ParamSet::init_uniform`].
    pub fn new(config: ModelConfig) -> Self {
        let mut params = ParamSet::new();
        let d = config.hidden;
        let shared = BiGruEncoder::new(&mut params, "shared", config.input_width, d);
        let attention = BiGruEncoder::new(&mut params, "attention", 4 * d, d);
        DcrModel {
            config,
            params,
            shared,
            attention,
        }
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn candidates_for(&self, example: &Example) -> Vec<CandidateChunk> {
        self.config.candidates.generate(&example.passage)
    }

    /// Records the full forward pass for one example on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        passage: &SequenceInput,
        question: &SequenceInput,
        candidates: &[CandidateChunk],
        dropout: Option<InputDropout<'_>>,
    ) -> Result<ForwardPass> {
        let mut xp = tape.constant(passage.features.clone());
        let mut xq = tape.constant(question.features.clone());
        if let Some(InputDropout { rate, rng }) = dropout {
            xp = tape.dropout(xp, rate, rng, true)?;
            xq = tape.dropout(xq, rate, rng, true)?;
        }
        let penc = self.shared.encode(tape, p, xp, passage.mask.as_deref())?;
        let qenc = self.shared.encode(tape, p, xq, question.mask.as_deref())?;

        let (t_len, k_len) = (passage.real_len(), question.real_len());
        let hp = real_rows(tape, penc.states, t_len)?;
        let hq = real_rows(tape, qenc.states, k_len)?;
        let attended = attend(tape, hp, hq, self.config.attention)?;
        let gamma = self.attention.encode(tape, p, attended, None)?;

        let question_repr = question_repr(tape, &qenc, k_len)?;
        let chunks = chunk_reprs(tape, &gamma, candidates)?;
        let (scores, probabilities) = score_chunks(tape, chunks, question_repr, self.config.scoring)?;
        Ok(ForwardPass {
            passage: penc,
            question: qenc,
            attended,
            gamma,
            question_repr,
            scores,
            probabilities,
        })
    }

    /// Inference-mode scores for every candidate of `example`, over the full passage.
    pub fn score(&self, features: &FeatureSpace, example: &Example) -> Result<ChunkScoreSet> {
        let candidates = self.candidates_for(example);
        self.score_candidates(features, example, candidates)
    }

    pub fn score_candidates(
        &self,
        features: &FeatureSpace,
        example: &Example,
        candidates: Vec<CandidateChunk>,
    ) -> Result<ChunkScoreSet> {
        if candidates.is_empty() {
            return Err(DcrError::Example {
                id: example.id.clone(),
                message: "no candidate chunks".into(),
            });
        }
        if example.passage.is_empty() || example.question.is_empty() {
            return Err(DcrError::Example {
                id: example.id.clone(),
                message: "empty passage or question".into(),
            });
        }
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let passage = SequenceInput::unpadded(features.passage_matrix(&example.passage, &example.question));
        let question = SequenceInput::unpadded(features.question_matrix(&example.question));
        let fwd = self.forward(&mut tape, &p, &passage, &question, &candidates, None)?;
        Ok(ChunkScoreSet {
            probabilities: tape.value(fwd.probabilities).values().to_vec(),
            candidates,
        })
    }

    pub fn predict(&self, features: &FeatureSpace, example: &Example) -> Result<Prediction> {
        let set = self.score(features, example)?;
        let best = set.best().expect("score set is non-empty");
        let c = set.candidates[best];
        Ok(Prediction {
            id: example.id.clone(),
            span: AnswerSpan {
                start: c.start,
                end: c.end,
                text: example.span_text(c.start, c.end),
            },
            probability: set.probabilities[best],
        })
    }
}

fn real_rows(tape: &mut Tape, states: Var, len: usize) -> Result<Var> {
    if tape.shape(states)[0] == len {
        return Ok(states);
    }
    let rows: Vec<usize> = (0..len).collect();
    tape.gather_rows(states, &rows)
}
