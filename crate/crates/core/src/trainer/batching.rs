use crate::chunker::CandidateChunk;
use crate::corpus::Example;
use crate::model::SequenceInput;
use crate::numerics::{SeededRng, Tensor};

/// A training example whose gold answer is among its candidates.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub example: Example,
    pub candidates: Vec<CandidateChunk>,
    /// Index of the target span in `candidates`.
    pub gold: usize,
}

/// Index of the first gold answer (in dataset order) that is a candidate.
pub fn filter_trainable(example: &Example, candidates: &[CandidateChunk]) -> Option<usize> {
    example.answers.iter().find_map(|a| {
        candidates
            .binary_search_by(|c| c.span().cmp(&(a.start, a.end)))
            .ok()
    })
}

/// Keeps the first `max_len` tokens of the passage.
pub fn truncate_passage(example: &Example, max_len: usize) -> Example {
    let mut ex = example.clone();
    ex.passage.truncate(max_len);
    ex
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    /// Indices into the training example list.
    pub members: Vec<usize>,
    pub passage_len: usize,
    pub question_len: usize,
}

/// Shuffles, sorts by passage length within groups of `group_batches`
/// batches, then cuts into batches of `batch_size`.
pub fn make_batches(
    examples: &[TrainingExample],
    batch_size: usize,
    group_batches: usize,
    rng: &mut SeededRng,
) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    rng.shuffle(&mut order);
    let group = batch_size * group_batches;
    let mut batches = Vec::with_capacity(examples.len().div_ceil(batch_size));
    for chunk in order.chunks_mut(group.max(1)) {
        chunk.sort_by_key(|&i| examples[i].example.passage.len());
        for members in chunk.chunks(batch_size) {
            batches.push(Batch {
                members: members.to_vec(),
                passage_len: members.iter().map(|&i| examples[i].example.passage.len()).max().unwrap_or(0),
                question_len: members.iter().map(|&i| examples[i].example.question.len()).max().unwrap_or(0),
            });
        }
    }
    batches
}

/// Zero-pads `features` to `len` rows and marks the padding in the mask.
pub fn pad_rows(features: Tensor, len: usize) -> SequenceInput {
    let (rows, cols) = (features.rows(), features.cols());
    if rows >= len {
        return SequenceInput::unpadded(features);
    }
    let mut values = features.into_values();
    values.resize(len * cols, 0.0);
    let mut mask = vec![true; rows];
    mask.resize(len, false);
    SequenceInput {
        features: Tensor::matrix(len, cols, values).expect("padded size"),
        mask: Some(mask),
    }
}
