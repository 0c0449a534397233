use std::collections::{BTreeSet, HashSet};

use crate::corpus::{AnnotatedToken, EmbeddingTable, Example};
use crate::numerics::Tensor;

/// Sorted, duplicate-free tag list; a tag's position is its one-hot index.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TagInventory {
    tags: Vec<String>,
}

impl TagInventory {
    pub fn new<I, S>(tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = tags.into_iter().map(Into::into).collect();
        TagInventory {
            tags: set.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn index(&self, tag: &str) -> Option<usize> {
        self.tags.binary_search_by(|t| t.as_str().cmp(tag)).ok()
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TagInventories {
    pub pos: TagInventory,
    pub ne: TagInventory,
}

/// Collects POS and NE tags from the passages and questions of `examples`.
pub fn build_tag_inventories(examples: &[Example]) -> TagInventories {
    let tokens = || {
        examples
            .iter()
            .flat_map(|e| e.passage.iter().chain(e.question.iter()))
    };
    TagInventories {
        pos: TagInventory::new(tokens().map(|t| t.pos.clone())),
        ne: TagInventory::new(tokens().map(|t| t.ne.clone())),
    }
}

/// Per-token input vector:
/// `[embedding | POS one-hot | NE one-hot | surface match | lemma match | capitalized]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// What a token is compared against for the two match bits.
pub struct QuestionIndex {
    surfaces: HashSet<String>,
    lemmas: HashSet<String>,
}

impl QuestionIndex {
    pub fn new(question: &[AnnotatedToken]) -> Self {
        QuestionIndex {
            surfaces: question.iter().map(|t| t.surface.clone()).collect(),
            lemmas: question.iter().map(|t| t.lemma.to_lowercase()).collect(),
        }
    }

    fn surface_match(&self, token: &AnnotatedToken) -> bool {
        self.surfaces.contains(&token.surface)
    }

    fn lemma_match(&self, token: &AnnotatedToken) -> bool {
        self.lemmas.contains(&token.lemma.to_lowercase())
    }
}

pub fn feature_width(dim: usize, inventories: &TagInventories) -> usize {
    dim + inventories.pos.len() + inventories.ne.len() + 3
}

pub fn featurize(
    token: &AnnotatedToken,
    question: &[AnnotatedToken],
    table: &EmbeddingTable,
    inventories: &TagInventories,
) -> FeatureVector {
    let mut out = Vec::with_capacity(feature_width(table.dim(), inventories));
    push_features(&mut out, token, &QuestionIndex::new(question), table, inventories, None);
    FeatureVector(out)
}

fn push_features(
    out: &mut Vec<f64>,
    token: &AnnotatedToken,
    question: &QuestionIndex,
    table: &EmbeddingTable,
    inventories: &TagInventories,
    force_match: Option<bool>,
) {
    match table.get(&token.surface) {
        Some(v) => out.extend_from_slice(v),
        None => out.extend(std::iter::repeat_n(0.0, table.dim())),
    }
    for (inv, tag) in [(&inventories.pos, &token.pos), (&inventories.ne, &token.ne)] {
        let start = out.len();
        out.extend(std::iter::repeat_n(0.0, inv.len()));
        if let Some(i) = inv.index(tag) {
            out[start + i] = 1.0;
        }
    }
    let (surface, lemma) = match force_match {
        Some(b) => (b, b),
        None => (question.surface_match(token), question.lemma_match(token)),
    };
    let capitalized = token.surface.chars().next().is_some_and(char::is_uppercase);
    out.extend([surface, lemma, capitalized].map(|b| if b { 1.0 } else { 0.0 }));
}

/// Frozen embeddings plus tag inventories; turns token sequences into
/// encoder input matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSpace {
    pub embeddings: EmbeddingTable,
    pub inventories: TagInventories,
}

impl FeatureSpace {
    pub fn new(embeddings: EmbeddingTable, inventories: TagInventories) -> Self {
        FeatureSpace {
            embeddings,
            inventories,
        }
    }

    pub fn width(&self) -> usize {
        feature_width(self.embeddings.dim(), &self.inventories)
    }

    /// `T × width` passage matrix; match bits are computed against `question`.
    pub fn passage_matrix(&self, passage: &[AnnotatedToken], question: &[AnnotatedToken]) -> Tensor {
        let index = QuestionIndex::new(question);
        self.matrix(passage, &index, None)
    }

    /// `K × width` question matrix. A question token trivially matches the
    /// question, so both match bits are set.
    pub fn question_matrix(&self, question: &[AnnotatedToken]) -> Tensor {
        let index = QuestionIndex::new(&[]);
        self.matrix(question, &index, Some(true))
    }

    fn matrix(&self, tokens: &[AnnotatedToken], index: &QuestionIndex, force: Option<bool>) -> Tensor {
        let width = self.width();
        let mut values = Vec::with_capacity(tokens.len() * width);
        for t in tokens {
            push_features(&mut values, t, index, &self.embeddings, &self.inventories, force);
        }
        Tensor::matrix(tokens.len(), width, values).expect("rows have the feature width")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::dataset::tests::brexit_example;

    fn tok(surface: &str, lemma: &str, pos: &str) -> AnnotatedToken {
        AnnotatedToken::new(surface, lemma, pos, "O", 0)
    }

    #[test]
    fn inventory_sorted_unique() {
        let inv = TagInventory::new(["NNP", "CD", "NN", "CD"]);
        assert_eq!(inv.tags(), &["CD", "NN", "NNP"]);
        assert_eq!(inv.index("NN"), Some(1));
        assert_eq!(inv.index("VB"), None);
    }

    #[test]
    fn build_from_examples() {
        let inv = build_tag_inventories(&[brexit_example()]);
        assert_eq!(inv.pos.tags(), &["-LRB-", "-RRB-", "DT", "IN", "NN", "NNP", "TO", "VB", "VBZ"]);
        assert_eq!(inv.ne.tags(), &["LOCATION", "O", "ORGANIZATION"]);
    }

    #[test]
    fn width_with_full_size_inventories() {
        let inv = TagInventories {
            pos: TagInventory::new((0..46).map(|i| format!("P{i:02}"))),
            ne: TagInventory::new((0..14).map(|i| format!("N{i:02}"))),
        };
        let table = EmbeddingTable::new(300);
        let f = featurize(&tok("x", "x", "P00"), &[], &table, &inv);
        assert_eq!(f.len(), 363);
    }

    #[test]
    fn brexit_token_features() {
        let inv = TagInventories {
            pos: TagInventory::new(["NN", "NNP"]),
            ne: TagInventory::new(["O"]),
        };
        let mut table = EmbeddingTable::new(2);
        table.insert("Brexit", vec![0.5, -0.5]).unwrap();
        let question = [tok("What", "what", "WP"), tok("Brexit", "brexit", "NNP")];
        let f = featurize(&tok("Brexit", "Brexit", "NNP"), &question, &table, &inv);
        assert_eq!(f.values(), &[0.5, -0.5, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn lowercase_oov_without_overlap() {
        let inv = TagInventories {
            pos: TagInventory::new(["NN"]),
            ne: TagInventory::new(["O"]),
        };
        let table = EmbeddingTable::new(3);
        let f = featurize(&tok("zyzzyva", "zyzzyva", "NN"), &[tok("who", "who", "WP")], &table, &inv);
        assert_eq!(f.values(), &[0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn unseen_tag_gives_zero_block_and_lemma_match_ignores_case() {
        let inv = TagInventories {
            pos: TagInventory::new(["NN"]),
            ne: TagInventory::new(["O"]),
        };
        let table = EmbeddingTable::new(1);
        let f = featurize(&tok("Runs", "Run", "VBZ"), &[tok("running", "run", "VBG")], &table, &inv);
        // surface differs, lemma matches case-insensitively, capitalized
        assert_eq!(f.values(), &[0.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn matrices_have_constant_width() {
        let ex = brexit_example();
        let inv = build_tag_inventories(std::slice::from_ref(&ex));
        let space = FeatureSpace::new(EmbeddingTable::new(4), inv);
        let p = space.passage_matrix(&ex.passage, &ex.question);
        let q = space.question_matrix(&ex.question);
        assert_eq!(p.shape(), &[ex.passage.len(), space.width()]);
        assert_eq!(q.shape(), &[ex.question.len(), space.width()]);
        let w = space.width();
        for r in 0..ex.question.len() {
            assert_eq!(&q.row_slice(r)[w - 3..w - 1], &[1.0, 1.0]);
        }
    }

    #[test]
    fn surface_match_ignores_question_order() {
        let ex = brexit_example();
        let inv = build_tag_inventories(std::slice::from_ref(&ex));
        let space = FeatureSpace::new(EmbeddingTable::new(2), inv);
        let mut reversed = ex.question.clone();
        reversed.reverse();
        assert_eq!(
            space.passage_matrix(&ex.passage, &ex.question),
            space.passage_matrix(&ex.passage, &reversed)
        );
    }
}
