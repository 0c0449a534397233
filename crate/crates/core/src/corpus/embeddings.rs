use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{DcrError, Result};

/// Frozen word vectors in GloVe text format.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            entries: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    /// Inserts unless the word is already present; returns whether it was added.
    pub fn insert(&mut self, word: &str, vector: Vec<f64>) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(DcrError::InvalidArgument(format!(
                "embedding for {word:?} has {} values, table dim is {}",
                vector.len(),
                self.dim
            )));
        }
        if self.entries.contains_key(word) {
            return Ok(false);
        }
        self.entries.insert(word.to_owned(), vector);
        Ok(true)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| DcrError::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut words: Vec<&String> = self.entries.keys().collect();
        words.sort();
        for word in words {
            let vals: Vec<String> = self.entries[word].iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{word} {}", vals.join(" ")).map_err(|e| DcrError::io(path, e))?;
        }
        w.flush().map_err(|e| DcrError::io(path, e))
    }
}

pub fn load_embeddings(path: impl AsRef<Path>, dim: usize) -> Result<EmbeddingTable> {
    load_embeddings_filtered(path, dim, None)
}

/// Like [`load_embeddings`], keeping only words in `vocab` when given.
pub fn load_embeddings_filtered(
    path: impl AsRef<Path>,
    dim: usize,
    vocab: Option<&HashSet<String>>,
) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| DcrError::io(path, e))?;
    let mut table = EmbeddingTable::new(dim);
    let parse_err = |line: usize, message: String| DcrError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DcrError::io(path, e))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() != dim + 1 {
            return Err(parse_err(
                i + 1,
                format!("expected a word and {dim} values, found {} fields", fields.len()),
            ));
        }
        let word = fields[0];
        if vocab.is_some_and(|v| !v.contains(word)) || table.entries.contains_key(word) {
            continue;
        }
        let vector = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| parse_err(i + 1, format!("{f:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        table.entries.insert(word.to_owned(), vector);
    }
    Ok(table)
}
