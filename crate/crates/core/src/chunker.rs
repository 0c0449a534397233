//! Candidate answer chunks: POS-pattern trie matching or exhaustive
//! enumeration of every span up to a maximum length.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::corpus::{AnnotatedToken, Example};
use crate::error::{DcrError, Result};

pub const DEFAULT_DEPTH_CAP: usize = 10;
pub const DEFAULT_WINDOW: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CandidateSource {
    Trie,
    Window,
}

/// Inclusive 1-based passage span.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CandidateChunk {
    pub start: usize,
    pub end: usize,
    pub source: CandidateSource,
}

impl CandidateChunk {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn span(&self) -> (usize, usize) {
        (self.start, self.end)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct TrieNode {
    children: BTreeMap<String, usize>,
    /// Number of inserted patterns ending here; terminal iff non-zero.
    count: usize,
}

/// Prefix tree over POS-tag sequences of training answers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PosPatternTrie {
    nodes: Vec<TrieNode>,
    depth_cap: usize,
    skipped: usize,
}

impl PosPatternTrie {
    pub fn new(depth_cap: usize) -> Self {
        PosPatternTrie {
            nodes: vec![TrieNode::default()],
            depth_cap,
            skipped: 0,
        }
    }

    pub fn depth_cap(&self) -> usize {
        self.depth_cap
    }

    /// Patterns rejected for exceeding the depth cap.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn is_empty(&self) -> bool {
        self.nodes[0].children.is_empty()
    }

    /// Inserts one pattern; returns false (and counts a skip) when it is
    /// empty or longer than the cap.
    pub fn insert<S: AsRef<str>>(&mut self, pattern: &[S]) -> bool {
        self.insert_n(pattern, 1)
    }

    fn insert_n<S: AsRef<str>>(&mut self, pattern: &[S], count: usize) -> bool {
        if pattern.is_empty() || pattern.len() > self.depth_cap {
            self.skipped += 1;
            return false;
        }
        let mut node = 0;
        for tag in pattern {
            let next = self.nodes.len();
            node = match self.nodes[node].children.get(tag.as_ref()) {
                Some(&child) => child,
                None => {
                    self.nodes[node].children.insert(tag.as_ref().to_owned(), next);
                    self.nodes.push(TrieNode::default());
                    next
                }
            };
        }
        self.nodes[node].count += count;
        true
    }

    /// How many times `pattern` was inserted.
    pub fn count<S: AsRef<str>>(&self, pattern: &[S]) -> usize {
        let mut node = 0;
        for tag in pattern {
            match self.nodes[node].children.get(tag.as_ref()) {
                Some(&c) => node = c,
                None => return 0,
            }
        }
        if pattern.is_empty() {
            0
        } else {
            self.nodes[node].count
        }
    }

    /// All stored patterns with their counts, in lexicographic tag order.
    pub fn patterns(&self) -> Vec<(Vec<String>, usize)> {
        let mut out = Vec::new();
        let mut path = Vec::new();
        self.collect(0, &mut path, &mut out);
        out
    }

    fn collect(&self, node: usize, path: &mut Vec<String>, out: &mut Vec<(Vec<String>, usize)>) {
        if self.nodes[node].count > 0 {
            out.push((path.clone(), self.nodes[node].count));
        }
        for (tag, &child) in &self.nodes[node].children {
            path.push(tag.clone());
            self.collect(child, path, out);
            path.pop();
        }
    }

    pub fn from_patterns(depth_cap: usize, patterns: &[(Vec<String>, usize)]) -> Result<Self> {
        let mut trie = PosPatternTrie::new(depth_cap);
        for (p, count) in patterns {
            if *count == 0 || !trie.insert_n(p, *count) {
                return Err(DcrError::InvalidArgument(format!(
                    "pattern {p:?} (count {count}) does not fit a trie with depth cap {depth_cap}"
                )));
            }
        }
        Ok(trie)
    }

    /// Spans whose POS sequence is a stored pattern, ordered by (start, end).
    pub fn candidates_for_tags<S: AsRef<str>>(&self, tags: &[S]) -> Vec<CandidateChunk> {
        let mut out = Vec::new();
        for start in 0..tags.len() {
            let mut node = 0;
            for (end, tag) in tags.iter().enumerate().skip(start) {
                match self.nodes[node].children.get(tag.as_ref()) {
                    Some(&c) => node = c,
                    None => break,
                }
                if self.nodes[node].count > 0 {
                    out.push(CandidateChunk {
                        start: start + 1,
                        end: end + 1,
                        source: CandidateSource::Trie,
                    });
                }
            }
        }
        out
    }
}

/// Builds a trie from the POS sequences of every gold answer.
pub fn build_pos_trie(examples: &[Example], depth_cap: usize) -> PosPatternTrie {
    let mut trie = PosPatternTrie::new(depth_cap);
    for ex in examples {
        for a in &ex.answers {
            let tags: Vec<&str> = ex.passage[a.start - 1..a.end].iter().map(|t| t.pos.as_str()).collect();
            trie.insert(&tags);
        }
    }
    trie
}

pub fn trie_candidates(passage: &[AnnotatedToken], trie: &PosPatternTrie) -> Vec<CandidateChunk> {
    let tags: Vec<&str> = passage.iter().map(|t| t.pos.as_str()).collect();
    trie.candidates_for_tags(&tags)
}

/// Every span of at most `max_len` tokens, ordered by (start, end).
pub fn enumerate_candidates(passage_len: usize, max_len: usize) -> Vec<CandidateChunk> {
    let mut out = Vec::with_capacity(passage_len * max_len);
    for start in 1..=passage_len {
        for end in start..=(start + max_len - 1).min(passage_len) {
            out.push(CandidateChunk {
                start,
                end,
                source: CandidateSource::Window,
            });
        }
    }
    out
}

/// How candidate chunks are proposed for a passage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CandidateMode {
    Window { max_len: usize },
    Trie(PosPatternTrie),
}

impl Default for CandidateMode {
    fn default() -> Self {
        CandidateMode::Window {
            max_len: DEFAULT_WINDOW,
        }
    }
}

impl CandidateMode {
    pub fn generate(&self, passage: &[AnnotatedToken]) -> Vec<CandidateChunk> {
        match self {
            CandidateMode::Window { max_len } => enumerate_candidates(passage.len(), *max_len),
            CandidateMode::Trie(trie) => trie_candidates(passage, trie),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CandidateMode::Window { .. } => "window",
            CandidateMode::Trie(_) => "trie",
        }
    }
}

/// Whether some gold span of `example` is exactly one of `candidates`.
pub fn contains_gold(example: &Example, candidates: &[CandidateChunk]) -> bool {
    example
        .answers
        .iter()
        .any(|a| candidates.binary_search_by(|c| c.span().cmp(&(a.start, a.end))).is_ok())
}

/// Fraction of examples whose candidate list contains a gold span.
pub fn candidate_recall(examples: &[Example], candidates: &[Vec<CandidateChunk>]) -> f64 {
    assert_eq!(examples.len(), candidates.len(), "candidate lists must align with examples");
    if examples.is_empty() {
        return 0.0;
    }
    let hits = examples
        .iter()
        .zip(candidates)
        .filter(|(e, c)| contains_gold(e, c))
        .count();
    hits as f64 / examples.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChunkStats {
    pub mode: String,
    pub examples: usize,
    pub recall: f64,
    pub mean_candidates: f64,
    /// candidate length -> number of candidates
    pub length_histogram: BTreeMap<usize, usize>,
}

pub fn chunk_stats(examples: &[Example], mode: &CandidateMode) -> ChunkStats {
    let lists: Vec<Vec<CandidateChunk>> = examples.iter().map(|e| mode.generate(&e.passage)).collect();
    let mut length_histogram = BTreeMap::new();
    for c in lists.iter().flatten() {
        *length_histogram.entry(c.len()).or_insert(0) += 1;
    }
    let total: usize = lists.iter().map(Vec::len).sum();
    ChunkStats {
        mode: mode.name().to_owned(),
        examples: examples.len(),
        recall: candidate_recall(examples, &lists),
        mean_candidates: if examples.is_empty() {
            0.0
        } else {
            total as f64 / examples.len() as f64
        },
        length_histogram,
    }
}

impl ChunkStats {
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "mode\t{}", self.mode).unwrap();
        writeln!(s, "examples\t{}", self.examples).unwrap();
        writeln!(s, "recall\t{:.6}", self.recall).unwrap();
        writeln!(s, "mean_candidates\t{:.3}", self.mean_candidates).unwrap();
        writeln!(s, "length\tcount").unwrap();
        for (len, count) in &self.length_histogram {
            writeln!(s, "{len}\t{count}").unwrap();
        }
        s
    }
}
