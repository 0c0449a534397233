//! Finite-difference check of the full model loss at toy scale.

use crate::chunker::CandidateMode;
use crate::corpus::{build_tag_inventories, FeatureSpace};
use crate::error::{DcrError, Result};
use crate::model::{nll_loss, AttentionWeights, DcrModel, ModelConfig, Scoring, SequenceInput};
use crate::numerics::{relative_error, BackwardFault, SeededRng, Tape};
use crate::synthetic::{generate, SyntheticSpec};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckSetup {
    pub hidden: usize,
    pub passage_len: usize,
    pub window: usize,
    /// Larger than the training default so no gradient is vanishingly small.
    pub init_range: f64,
    pub step: f64,
    pub seed: u64,
    pub scoring: Scoring,
    pub attention: AttentionWeights,
}

impl Default for GradCheckSetup {
    fn default() -> Self {
        GradCheckSetup {
            hidden: 8,
            passage_len: 6,
            window: 3,
            init_range: 0.5,
            step: 1e-5,
            seed: 11,
            scoring: Scoring::Dot,
            attention: AttentionWeights::Raw,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub len: usize,
    pub max_relative_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGradCheck {
    pub candidates: usize,
    pub passage_len: usize,
    pub tensors: Vec<TensorCheck>,
}

impl ModelGradCheck {
    pub fn max_relative_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_relative_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_relative_error() < GRADCHECK_TOLERANCE
    }
}

/// Compares backpropagated gradients of one example's loss against central
/// differences, tensor by tensor. `fault` corrupts a backward rule on the
/// analytic side only.
pub fn check_model_gradients(setup: &GradCheckSetup, fault: Option<BackwardFault>) -> Result<ModelGradCheck> {
    if setup.window == 0 || setup.passage_len == 0 {
        return Err(DcrError::InvalidArgument("gradcheck needs a non-empty passage and window".into()));
    }
    let data = generate(&SyntheticSpec {
        n_examples: 1,
        passage_len: (setup.passage_len, setup.passage_len),
        answer_len: (1, setup.window.min(setup.passage_len - 1).max(1)),
        ..SyntheticSpec::new(1, setup.seed)
    });
    let example = &data.examples[0];
    let space = FeatureSpace::new(data.embeddings.clone(), build_tag_inventories(&data.examples));
    let mut model = DcrModel::new(ModelConfig {
        scoring: setup.scoring,
        attention: setup.attention,
        candidates: CandidateMode::Window { max_len: setup.window },
        ..ModelConfig::new(space.width(), setup.hidden)
    });
    model.params.init_uniform(setup.init_range, &mut SeededRng::derive(setup.seed, &[0]));

    let candidates = model.candidates_for(example);
    let gold = candidates
        .iter()
        .position(|c| c.span() == (example.answers[0].start, example.answers[0].end))
        .expect("synthetic answers fit the window");
    let passage = SequenceInput::unpadded(space.passage_matrix(&example.passage, &example.question));
    let question = SequenceInput::unpadded(space.question_matrix(&example.question));

    let loss_with = |model: &DcrModel, tape: &mut Tape| -> Result<_> {
        let p = model.params.bind(tape);
        let fwd = model.forward(tape, &p, &passage, &question, &candidates, None)?;
        Ok((p, nll_loss(tape, fwd.probabilities, gold)?))
    };

    let mut tape = fault.map_or_else(Tape::new, Tape::with_fault);
    let (p, loss) = loss_with(&model, &mut tape)?;
    let analytic = p.gradients(&tape.backward(loss)?, &model.params);

    let mut tensors = Vec::with_capacity(model.params.len());
    for id in model.params.ids().collect::<Vec<_>>() {
        let mut worst = 0.0f64;
        for j in 0..model.params.get(id).len() {
            let orig = model.params.get(id).values()[j];
            let mut eval = |x: f64| -> Result<f64> {
                model.params.get_mut(id).values_mut()[j] = x;
                let mut tape = Tape::new();
                let (_, l) = loss_with(&model, &mut tape)?;
                Ok(tape.value(l).values()[0])
            };
            let plus = eval(orig + setup.step)?;
            let minus = eval(orig - setup.step)?;
            eval(orig)?;
            let numeric = (plus - minus) / (2.0 * setup.step);
            worst = worst.max(relative_error(analytic[id.index()][j], numeric));
        }
        tensors.push(TensorCheck {
            name: model.params.name(id).to_owned(),
            len: model.params.get(id).len(),
            max_relative_error: worst,
        });
    }
    Ok(ModelGradCheck {
        candidates: candidates.len(),
        passage_len: example.passage.len(),
        tensors,
    })
}
