use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DcrError, Result};

/// One pre-annotated token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedToken {
    pub surface: String,
    pub lemma: String,
    pub pos: String,
    pub ne: String,
    /// 0-based character offset into the original text.
    #[serde(rename = "offset")]
    pub char_offset: usize,
}

impl AnnotatedToken {
    pub fn new(surface: &str, lemma: &str, pos: &str, ne: &str, char_offset: usize) -> Self {
        AnnotatedToken {
            surface: surface.to_owned(),
            lemma: lemma.to_owned(),
            pos: pos.to_owned(),
            ne: ne.to_owned(),
            char_offset,
        }
    }
}

/// Inclusive token span, 1-based: `1 <= start <= end <= passage length`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSpan {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

impl AnswerSpan {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub passage: Vec<AnnotatedToken>,
    pub question: Vec<AnnotatedToken>,
    #[serde(default)]
    pub answers: Vec<AnswerSpan>,
}

impl Example {
    /// Passage surfaces `start..=end` (1-based) joined with single spaces.
    pub fn span_text(&self, start: usize, end: usize) -> String {
        join_surfaces(&self.passage[start - 1..end])
    }

    /// Checks the structural invariants; `Err` carries the reason.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if let Some(i) = self.passage.iter().position(|t| t.surface.is_empty()) {
            return Err(format!("passage token {} has an empty surface", i + 1));
        }
        if let Some(i) = self.question.iter().position(|t| t.surface.is_empty()) {
            return Err(format!("question token {} has an empty surface", i + 1));
        }
        let len = self.passage.len();
        for (k, a) in self.answers.iter().enumerate() {
            if a.start == 0 || a.start > a.end || a.end > len {
                return Err(format!(
                    "answer {}: span ({}, {}) outside 1 <= start <= end <= {len}",
                    k + 1,
                    a.start,
                    a.end
                ));
            }
            let slice = self.span_text(a.start, a.end);
            if squeeze(&slice) != squeeze(&a.text) {
                return Err(format!(
                    "answer {}: text {:?} does not match passage tokens {:?}",
                    k + 1,
                    a.text,
                    slice
                ));
            }
        }
        Ok(())
    }
}

pub fn join_surfaces(tokens: &[AnnotatedToken]) -> String {
    tokens
        .iter()
        .map(|t| t.surface.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Collapses runs of whitespace to one space and trims the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

// Tokenizers split "51.9%" into "51.9 %", so span texts are compared with
// whitespace removed entirely.
fn squeeze(text: &str) -> String {
    text.split_whitespace().collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejection {
    pub line: usize,
    pub id: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct LoadedDataset {
    pub examples: Vec<Example>,
    pub rejected: Vec<Rejection>,
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LoadedDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| DcrError::io(path, e))?;
    read_dataset(BufReader::new(file), path)
}

pub fn read_dataset(reader: impl BufRead, path: &Path) -> Result<LoadedDataset> {
    let mut out = LoadedDataset::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DcrError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let example: Example = serde_json::from_str(&line).map_err(|e| DcrError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        match example.validate() {
            Ok(()) => out.examples.push(example),
            Err(reason) => out.rejected.push(Rejection {
                line: line_no,
                id: example.id,
                reason,
            }),
        }
    }
    Ok(out)
}

pub fn write_dataset(path: impl AsRef<Path>, examples: &[Example]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| DcrError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        let line = serde_json::to_string(ex).expect("examples serialize");
        writeln!(w, "{line}").map_err(|e| DcrError::io(path, e))?;
    }
    w.flush().map_err(|e| DcrError::io(path, e))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Tokens of the Brexit passage opening, with CoreNLP-style tags.
    pub(crate) fn brexit_example() -> Example {
        let words = [
            ("The", "the", "DT", "O"),
            ("United", "United", "NNP", "LOCATION"),
            ("Kingdom", "Kingdom", "NNP", "LOCATION"),
            ("(", "(", "-LRB-", "O"),
            ("UK", "UK", "NNP", "LOCATION"),
            (")", ")", "-RRB-", "O"),
            ("intends", "intend", "VBZ", "O"),
            ("to", "to", "TO", "O"),
            ("withdraw", "withdraw", "VB", "O"),
            ("from", "from", "IN", "O"),
            ("the", "the", "DT", "O"),
            ("European", "European", "NNP", "ORGANIZATION"),
            ("Union", "Union", "NNP", "ORGANIZATION"),
        ];
        let mut offset = 0;
        let passage = words
            .iter()
            .map(|(s, l, p, n)| {
                let t = AnnotatedToken::new(s, l, p, n, offset);
                offset += s.len() + 1;
                t
            })
            .collect();
        let question = ["Which", "country", "withdrew", "from", "EU", "in", "2016", "?"]
            .iter()
            .map(|w| AnnotatedToken::new(w, &w.to_lowercase(), "NN", "O", 0))
            .collect();
        Example {
            id: "brexit-q1".into(),
            passage,
            question,
            answers: vec![AnswerSpan {
                start: 2,
                end: 3,
                text: "United Kingdom".into(),
            }],
        }
    }

    fn read(text: &str) -> Result<LoadedDataset> {
        read_dataset(text.as_bytes(), Path::new("mem.jsonl"))
    }

    #[test]
    fn loads_brexit_record() {
        let line = serde_json::to_string(&brexit_example()).unwrap();
        assert!(line.contains("\"offset\"") && line.contains("\"start\""));
        let ds = read(&line).unwrap();
        assert_eq!(ds.examples.len(), 1);
        let ex = &ds.examples[0];
        assert_eq!(ex.answers[0].text, "United Kingdom");
        assert_eq!(ex.span_text(2, 3), "United Kingdom");
    }

    #[test]
    fn empty_input_gives_empty_list() {
        let ds = read("").unwrap();
        assert!(ds.examples.is_empty() && ds.rejected.is_empty());
    }

    #[test]
    fn inverted_span_is_rejected() {
        let mut ex = brexit_example();
        ex.answers[0] = AnswerSpan {
            start: 3,
            end: 2,
            text: "Kingdom United".into(),
        };
        let good = serde_json::to_string(&brexit_example()).unwrap();
        let bad = serde_json::to_string(&ex).unwrap();
        let ds = read(&format!("{good}\n{bad}\n")).unwrap();
        assert_eq!(ds.examples.len(), 1);
        assert_eq!(ds.rejected.len(), 1);
        assert_eq!(ds.rejected[0].line, 2);
        assert!(ds.rejected[0].reason.contains("outside"));
    }

    #[test]
    fn out_of_range_and_text_mismatch_rejected() {
        let mut ex = brexit_example();
        ex.answers[0].end = 99;
        assert!(ex.validate().is_err());
        let mut ex = brexit_example();
        ex.answers[0].text = "European Union".into();
        assert!(ex.validate().unwrap_err().contains("does not match"));
        let mut ex = brexit_example();
        ex.answers[0].start = 0;
        assert!(ex.validate().is_err());
    }

    #[test]
    fn tokenization_whitespace_is_tolerated() {
        let mut ex = brexit_example();
        ex.answers[0] = AnswerSpan {
            start: 4,
            end: 6,
            text: "(UK)".into(),
        };
        assert!(ex.validate().is_ok());
    }

    #[test]
    fn malformed_line_cites_line_number() {
        let good = serde_json::to_string(&brexit_example()).unwrap();
        let err = read(&format!("{good}\n\n{{not json\n")).unwrap_err();
        match err {
            DcrError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_dataset(&path, &[brexit_example(), brexit_example()]).unwrap();
        let ds = load_dataset(&path).unwrap();
        assert_eq!(ds.examples, vec![brexit_example(), brexit_example()]);
    }
}
