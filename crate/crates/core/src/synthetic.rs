//! Seeded toy reading-comprehension data.
//!
//! Each passage hides one gold answer: a run of capitalized proper-noun
//! tokens directly after a marker word that also appears in the question.
//! A distractor run after a different marker is added when there is room,
//! so the model has to use the question to pick the right one.

use crate::corpus::{join_surfaces, AnnotatedToken, AnswerSpan, EmbeddingTable, Example};
use crate::numerics::SeededRng;

const HEAD_WORDS: [&str; 5] = ["what", "which", "who", "how", "when"];
const FILLER_TAGS: [&str; 3] = ["NN", "VB", "DT"];
const ANSWER_NE: [&str; 4] = ["PER", "LOC", "ORG", "MISC"];
const MARKER_POS: &str = "SYM";
const MARKERS: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub n_examples: usize,
    pub vocab_size: usize,
    /// Inclusive passage length range.
    pub passage_len: (usize, usize),
    /// Inclusive answer length range.
    pub answer_len: (usize, usize),
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_examples: 32,
            vocab_size: 40,
            passage_len: (8, 14),
            answer_len: (1, 4),
            embedding_dim: 8,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn new(n_examples: usize, seed: u64) -> Self {
        SyntheticSpec {
            n_examples,
            seed,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub examples: Vec<Example>,
    pub embeddings: EmbeddingTable,
}

fn filler(i: usize) -> String {
    format!("w{i}")
}

fn answer_word(i: usize) -> String {
    format!("A{i}")
}

fn marker(i: usize) -> String {
    format!("mk{i}")
}

fn token(surface: &str, pos: &str, ne: &str) -> AnnotatedToken {
    AnnotatedToken::new(surface, &surface.to_lowercase(), pos, ne, 0)
}

fn assign_offsets(tokens: &mut [AnnotatedToken]) {
    let mut offset = 0;
    for t in tokens {
        t.char_offset = offset;
        offset += t.surface.chars().count() + 1;
    }
}

pub fn generate(spec: &SyntheticSpec) -> SyntheticData {
    assert!(spec.answer_len.0 >= 1 && spec.answer_len.0 <= spec.answer_len.1);
    assert!(spec.passage_len.0 > spec.answer_len.1 && spec.passage_len.0 <= spec.passage_len.1);
    let vocab = spec.vocab_size.max(2);
    let mut rng = SeededRng::new(spec.seed);

    let mut embeddings = EmbeddingTable::new(spec.embedding_dim);
    let mut words: Vec<String> = (0..vocab).map(filler).collect();
    words.extend((0..vocab).map(answer_word));
    words.extend((0..MARKERS).map(marker));
    words.extend(HEAD_WORDS.iter().map(|w| w.to_string()));
    words.push("?".into());
    for w in &words {
        let v = (0..spec.embedding_dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
        embeddings.insert(w, v).expect("dimension matches");
    }

    let mut examples = Vec::with_capacity(spec.n_examples);
    for i in 0..spec.n_examples {
        let len = rng.index(spec.passage_len.0, spec.passage_len.1 + 1);
        let ans_len = rng.index(spec.answer_len.0, spec.answer_len.1 + 1);
        let gold_marker = rng.index(0, MARKERS);
        let decoy_marker = (gold_marker + rng.index(1, MARKERS)) % MARKERS;

        let mut passage: Vec<AnnotatedToken> = (0..len)
            .map(|_| {
                let tag = FILLER_TAGS[rng.index(0, FILLER_TAGS.len())];
                token(&filler(rng.index(0, vocab)), tag, "O")
            })
            .collect();

        // gold: marker at `m0`, answer at m0+1 ..= m0+ans_len, a filler (or the end) after
        let m0 = rng.index(0, len - ans_len);
        let place_run = |passage: &mut Vec<AnnotatedToken>, at: usize, run: usize, mk: usize, rng: &mut SeededRng| {
            passage[at] = token(&marker(mk), MARKER_POS, "O");
            for t in &mut passage[at + 1..=at + run] {
                let ne = ANSWER_NE[rng.index(0, ANSWER_NE.len())];
                *t = token(&answer_word(rng.index(0, vocab)), "NNP", ne);
            }
        };
        place_run(&mut passage, m0, ans_len, gold_marker, &mut rng);

        // decoy in whichever gap can hold marker + run + separating filler
        let decoy_len = rng.index(spec.answer_len.0, spec.answer_len.1 + 1);
        let need = decoy_len + 2;
        let before = m0;
        let after = len - (m0 + ans_len + 1);
        if after >= need {
            let at = m0 + ans_len + 2 + rng.index(0, after - need + 1);
            place_run(&mut passage, at, decoy_len, decoy_marker, &mut rng);
        } else if before >= need {
            let at = rng.index(0, before - need + 1);
            place_run(&mut passage, at, decoy_len, decoy_marker, &mut rng);
        }
        assign_offsets(&mut passage);

        let head = HEAD_WORDS[rng.index(0, HEAD_WORDS.len())];
        let mut question = vec![token(head, "DT", "O")];
        if rng.uniform01() < 0.5 {
            question.push(token(&filler(rng.index(0, vocab)), "NN", "O"));
        }
        question.push(token(&marker(gold_marker), MARKER_POS, "O"));
        question.push(token("?", MARKER_POS, "O"));
        assign_offsets(&mut question);

        let (start, end) = (m0 + 2, m0 + 1 + ans_len);
        let text = join_surfaces(&passage[start - 1..end]);
        examples.push(Example {
            id: format!("syn-{}-{i}", spec.seed),
            passage,
            question,
            answers: vec![AnswerSpan { start, end, text }],
        });
    }
    SyntheticData { examples, embeddings }
}
