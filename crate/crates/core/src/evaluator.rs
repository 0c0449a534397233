//! Exact match and token F1 with a max over references, plus breakdown tables
//! by answer length and by question head word.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::error::{DcrError, Result};
use crate::model::Prediction;

pub const DEFAULT_MAX_ANSWER_LEN: usize = 10;
pub const DEFAULT_MIN_BIGRAM_COUNT: usize = 20;

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercase, drop ASCII punctuation, drop articles, split on whitespace.
pub fn normalize_answer(text: &str) -> Vec<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    cleaned
        .split_whitespace()
        .filter(|t| !ARTICLES.contains(t))
        .map(str::to_owned)
        .collect()
}

fn require_references(references: &[&str]) -> Result<()> {
    if references.is_empty() {
        return Err(DcrError::InvalidArgument("no reference answers".into()));
    }
    Ok(())
}

fn token_f1(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    let mut bag: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *bag.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in pred {
        if let Some(n) = bag.get_mut(t.as_str()) {
            if *n > 0 {
                *n -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / pred.len() as f64;
    let r = overlap as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

pub fn exact_match(prediction: &str, references: &[&str]) -> Result<f64> {
    require_references(references)?;
    let pred = normalize_answer(prediction);
    Ok(if references.iter().any(|r| normalize_answer(r) == pred) { 1.0 } else { 0.0 })
}

pub fn f1_score(prediction: &str, references: &[&str]) -> Result<f64> {
    require_references(references)?;
    let pred = normalize_answer(prediction);
    Ok(references
        .iter()
        .map(|r| token_f1(&pred, &normalize_answer(r)))
        .fold(0.0, f64::max))
}

/// The answer text a system produced for one example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedAnswer {
    pub id: String,
    pub answer: String,
}

impl From<&Prediction> for PredictedAnswer {
    fn from(p: &Prediction) -> Self {
        PredictedAnswer {
            id: p.id.clone(),
            answer: p.span.text.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExampleScore {
    pub id: String,
    pub prediction: String,
    pub best_reference: String,
    pub em: f64,
    pub f1: f64,
    /// Token length of the shortest gold answer.
    pub answer_len: usize,
    pub question_head: String,
    /// First two question tokens, lowercased.
    pub question_bigram: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub em: f64,
    pub f1: f64,
    pub records: Vec<ExampleScore>,
}

fn score_example(example: &Example, prediction: &str) -> Result<ExampleScore> {
    let refs: Vec<&str> = example.answers.iter().map(|a| a.text.as_str()).collect();
    let wrap = |e: DcrError| DcrError::Example {
        id: example.id.clone(),
        message: e.to_string(),
    };
    let em = exact_match(prediction, &refs).map_err(wrap)?;
    let f1 = f1_score(prediction, &refs).map_err(wrap)?;
    let pred = normalize_answer(prediction);
    let mut best = (f64::NEG_INFINITY, "");
    for r in &refs {
        let s = token_f1(&pred, &normalize_answer(r));
        if s > best.0 {
            best = (s, r);
        }
    }
    let lower: Vec<String> = example.question.iter().take(2).map(|t| t.surface.to_lowercase()).collect();
    Ok(ExampleScore {
        id: example.id.clone(),
        prediction: prediction.to_owned(),
        best_reference: best.1.to_owned(),
        em,
        f1,
        answer_len: example.answers.iter().map(|a| a.len()).min().unwrap_or(0),
        question_head: lower.first().cloned().unwrap_or_default(),
        question_bigram: lower.join(" "),
    })
}

/// Scores `predictions` against `dataset`; ids must match one-to-one.
pub fn evaluate(predictions: &[PredictedAnswer], dataset: &[Example]) -> Result<EvalReport> {
    let mut by_id: HashMap<&str, &str> = HashMap::with_capacity(predictions.len());
    for p in predictions {
        if by_id.insert(&p.id, &p.answer).is_some() {
            return Err(DcrError::InvalidArgument(format!("duplicate prediction for id {}", p.id)));
        }
    }
    let mut records = Vec::with_capacity(dataset.len());
    for ex in dataset {
        let pred = by_id
            .remove(ex.id.as_str())
            .ok_or_else(|| DcrError::InvalidArgument(format!("no prediction for id {}", ex.id)))?;
        records.push(score_example(ex, pred)?);
    }
    if let Some(extra) = predictions.iter().find(|p| by_id.contains_key(p.id.as_str())) {
        return Err(DcrError::InvalidArgument(format!("prediction for unknown id {}", extra.id)));
    }
    Ok(EvalReport::from_records(records))
}

impl EvalReport {
    pub fn from_records(records: Vec<ExampleScore>) -> Self {
        let n = records.len().max(1) as f64;
        EvalReport {
            em: records.iter().map(|r| r.em).sum::<f64>() / n,
            f1: records.iter().map(|r| r.f1).sum::<f64>() / n,
            records,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BreakdownRow {
    pub bucket: String,
    pub count: usize,
    pub fraction: f64,
    pub em: f64,
    pub f1: f64,
}

fn rows<K: Ord>(records: &[ExampleScore], key: impl Fn(&ExampleScore) -> K, label: impl Fn(&K) -> String) -> Vec<BreakdownRow> {
    let mut groups: BTreeMap<K, (usize, f64, f64)> = BTreeMap::new();
    for r in records {
        let g = groups.entry(key(r)).or_default();
        g.0 += 1;
        g.1 += r.em;
        g.2 += r.f1;
    }
    let total = records.len() as f64;
    groups
        .iter()
        .map(|(k, &(count, em, f1))| BreakdownRow {
            bucket: label(k),
            count,
            fraction: count as f64 / total,
            em: em / count as f64,
            f1: f1 / count as f64,
        })
        .collect()
}

/// One row per populated answer length; lengths above `max_len` share a `>max_len` row.
pub fn breakdown_by_answer_length(report: &EvalReport, max_len: usize) -> Vec<BreakdownRow> {
    rows(
        &report.records,
        |r| r.answer_len.min(max_len + 1),
        |&len| if len > max_len { format!(">{max_len}") } else { len.to_string() },
    )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeadWordBreakdown {
    pub head_words: Vec<BreakdownRow>,
    /// "what" questions split by their opening bigram; small buckets dropped.
    pub what_bigrams: Vec<BreakdownRow>,
}

pub fn breakdown_by_head_word(report: &EvalReport, min_bigram_count: usize) -> HeadWordBreakdown {
    let head_words = rows(&report.records, |r| r.question_head.clone(), String::clone);
    let what: Vec<ExampleScore> = report
        .records
        .iter()
        .filter(|r| r.question_head == "what")
        .cloned()
        .collect();
    let mut what_bigrams = rows(&what, |r| r.question_bigram.clone(), String::clone);
    what_bigrams.retain(|r| r.count >= min_bigram_count);
    HeadWordBreakdown { head_words, what_bigrams }
}

/// Aggregates plus both breakdowns; the JSON document the CLI writes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportDocument<'a> {
    pub examples: usize,
    pub em: f64,
    pub f1: f64,
    pub by_answer_length: Vec<BreakdownRow>,
    pub by_head_word: HeadWordBreakdown,
    pub records: &'a [ExampleScore],
}

impl EvalReport {
    pub fn document(&self) -> ReportDocument<'_> {
        ReportDocument {
            examples: self.records.len(),
            em: self.em,
            f1: self.f1,
            by_answer_length: breakdown_by_answer_length(self, DEFAULT_MAX_ANSWER_LEN),
            by_head_word: breakdown_by_head_word(self, DEFAULT_MIN_BIGRAM_COUNT),
            records: &self.records,
        }
    }

    pub fn to_tsv(&self) -> String {
        let doc = self.document();
        let mut s = String::new();
        writeln!(s, "examples\t{}", doc.examples).unwrap();
        writeln!(s, "em\t{:.4}", doc.em).unwrap();
        writeln!(s, "f1\t{:.4}", doc.f1).unwrap();
        let mut table = |title: &str, rows: &[BreakdownRow]| {
            writeln!(s, "\n{title}\tcount\tfraction\tem\tf1").unwrap();
            for r in rows {
                writeln!(s, "{}\t{}\t{:.4}\t{:.4}\t{:.4}", r.bucket, r.count, r.fraction, r.em, r.f1).unwrap();
            }
        };
        table("answer_length", &doc.by_answer_length);
        table("head_word", &doc.by_head_word.head_words);
        table("what_bigram", &doc.by_head_word.what_bigrams);
        s
    }
}
