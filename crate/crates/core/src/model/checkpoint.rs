//! Checkpoint directory layout:
//!
//! * `manifest.txt`: `key = value` lines (dimensions, candidate mode, tag
//!   inventories, parameter names and shapes, precision, format version)
//! * `params.bin`: every parameter as little-endian `f64`, concatenated in
//!   manifest order

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::chunker::{CandidateMode, PosPatternTrie};
use crate::corpus::{TagInventories, TagInventory};
use crate::error::{DcrError, Result};
use crate::model::{AttentionWeights, DcrModel, ModelConfig, Scoring};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.txt";
const BLOB: &str = "params.bin";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: DcrModel,
    pub inventories: TagInventories,
    pub embedding_dim: usize,
    /// Where the frozen embeddings were loaded from, if anywhere.
    pub embeddings_path: Option<PathBuf>,
}

fn join_tags(inv: &TagInventory) -> Result<String> {
    if let Some(t) = inv.tags().iter().find(|t| t.is_empty() || t.contains(char::is_whitespace)) {
        return Err(DcrError::Checkpoint(format!("tag {t:?} cannot be stored in a manifest")));
    }
    Ok(inv.tags().join(" "))
}

fn manifest_text(ck: &Checkpoint) -> Result<String> {
    let cfg = &ck.model.config;
    let mut s = String::new();
    let mut kv = |k: &str, v: &dyn std::fmt::Display| writeln!(s, "{k} = {v}").expect("write to string");
    kv("format_version", &CHECKPOINT_FORMAT_VERSION);
    kv("precision", &"f64");
    kv("byte_order", &"little_endian");
    kv("input_width", &cfg.input_width);
    kv("hidden", &cfg.hidden);
    kv("embedding_dim", &ck.embedding_dim);
    if let Some(p) = &ck.embeddings_path {
        kv("embeddings", &p.display());
    }
    kv("scoring", &cfg.scoring.name());
    kv("attention", &cfg.attention.name());
    kv("candidate_mode", &cfg.candidates.name());
    match &cfg.candidates {
        CandidateMode::Window { max_len } => kv("window", max_len),
        CandidateMode::Trie(trie) => {
            kv("trie_depth_cap", &trie.depth_cap());
            for (i, (pattern, count)) in trie.patterns().iter().enumerate() {
                kv(&format!("trie.{i}"), &format!("{count} {}", pattern.join(" ")));
            }
        }
    }
    kv("pos_tags", &join_tags(&ck.inventories.pos)?);
    kv("ne_tags", &join_tags(&ck.inventories.ne)?);
    kv("param_count", &ck.model.params.len());
    for (i, (name, t)) in ck.model.params.iter().enumerate() {
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        kv(&format!("param.{i}"), &format!("{name} {}", dims.join(" ")));
    }
    Ok(s)
}

pub fn save_checkpoint(dir: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| DcrError::io(dir, e))?;
    let manifest = manifest_text(ck)?;
    let mut blob = Vec::with_capacity(ck.model.params.total_len() * 8);
    for t in ck.model.params.tensors() {
        for v in t.values() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mpath = dir.join(MANIFEST);
    fs::write(&mpath, manifest).map_err(|e| DcrError::io(mpath, e))?;
    let bpath = dir.join(BLOB);
    fs::write(&bpath, blob).map_err(|e| DcrError::io(bpath, e))
}

struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| DcrError::Checkpoint(format!("manifest line {}: expected `key = value`", i + 1)))?;
            entries.push((k.trim().to_owned(), v.trim().to_owned()));
        }
        Ok(Manifest { entries })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| DcrError::Checkpoint(format!("manifest is missing `{key}`")))
    }

    fn number(&self, key: &str) -> Result<usize> {
        let v = self.require(key)?;
        v.parse()
            .map_err(|_| DcrError::Checkpoint(format!("`{key}` should be an integer, got {v:?}")))
    }
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| DcrError::io(&mpath, e))?;
    let m = Manifest::parse(&text)?;

    let version = m.number("format_version")?;
    if version != CHECKPOINT_FORMAT_VERSION as usize {
        return Err(DcrError::Checkpoint(format!(
            "unsupported format version {version} (this build reads {CHECKPOINT_FORMAT_VERSION})"
        )));
    }
    if m.require("precision")? != "f64" {
        return Err(DcrError::Checkpoint("only f64 checkpoints are supported".into()));
    }

    let scoring = Scoring::parse(m.require("scoring")?)
        .ok_or_else(|| DcrError::Checkpoint("unknown scoring".into()))?;
    let attention = AttentionWeights::parse(m.require("attention")?)
        .ok_or_else(|| DcrError::Checkpoint("unknown attention weighting".into()))?;
    let candidates = match m.require("candidate_mode")? {
        "window" => CandidateMode::Window {
            max_len: m.number("window")?,
        },
        "trie" => {
            let cap = m.number("trie_depth_cap")?;
            let mut patterns = Vec::new();
            for i in 0.. {
                let Some(v) = m.get(&format!("trie.{i}")) else { break };
                let mut parts = v.split_whitespace();
                let count = parts
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| DcrError::Checkpoint(format!("bad trie pattern {v:?}")))?;
                patterns.push((parts.map(String::from).collect(), count));
            }
            CandidateMode::Trie(PosPatternTrie::from_patterns(cap, &patterns)?)
        }
        other => return Err(DcrError::Checkpoint(format!("unknown candidate mode {other:?}"))),
    };

    let config = ModelConfig {
        input_width: m.number("input_width")?,
        hidden: m.number("hidden")?,
        scoring,
        attention,
        candidates,
    };
    let mut model = DcrModel::new(config);

    let count = m.number("param_count")?;
    if count != model.params.len() {
        return Err(DcrError::Checkpoint(format!(
            "manifest lists {count} parameters, the architecture has {}",
            model.params.len()
        )));
    }
    for (i, (name, t)) in model.params.iter().enumerate() {
        let entry = m.require(&format!("param.{i}"))?;
        let mut parts = entry.split_whitespace();
        let stored_name = parts.next().unwrap_or_default();
        let dims: Vec<usize> = parts.filter_map(|d| d.parse().ok()).collect();
        if stored_name != name || dims != t.shape() {
            return Err(DcrError::Checkpoint(format!(
                "parameter {i}: manifest has {stored_name} {dims:?}, expected {name} {:?}",
                t.shape()
            )));
        }
    }

    let bpath = dir.join(BLOB);
    let blob = fs::read(&bpath).map_err(|e| DcrError::io(&bpath, e))?;
    if blob.len() != model.params.total_len() * 8 {
        return Err(DcrError::Checkpoint(format!(
            "{} holds {} bytes, expected {}",
            bpath.display(),
            blob.len(),
            model.params.total_len() * 8
        )));
    }
    let flat: Vec<f64> = blob
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect();
    model.params.assign_flat(&flat)?;

    let tags = |key: &str| -> Result<TagInventory> {
        Ok(TagInventory::new(m.require(key)?.split_whitespace()))
    };
    Ok(Checkpoint {
        model,
        inventories: TagInventories {
            pos: tags("pos_tags")?,
            ne: tags("ne_tags")?,
        },
        embedding_dim: m.number("embedding_dim")?,
        embeddings_path: m.get("embeddings").map(PathBuf::from),
    })
}
