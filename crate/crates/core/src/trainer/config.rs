use std::fmt::Write as _;
use std::path::Path;

use crate::chunker::{DEFAULT_DEPTH_CAP, DEFAULT_WINDOW};
use crate::error::{DcrError, Result};
use crate::model::{AttentionWeights, Scoring};

/// Overrides the configured seed when set.
pub const SEED_ENV_VAR: &str = "DCR_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CandidateKind {
    Window,
    Trie,
}

impl CandidateKind {
    pub fn name(self) -> &'static str {
        match self {
            CandidateKind::Window => "window",
            CandidateKind::Trie => "trie",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "window" => Some(CandidateKind::Window),
            "trie" => Some(CandidateKind::Trie),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub dropout_rate: f64,
    pub hidden: usize,
    /// Training passages are truncated to this many tokens; evaluation never is.
    pub max_passage_len: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Batches per length-sorted group.
    pub curriculum_group: usize,
    pub init_range: f64,
    pub seed: u64,
    pub candidate_mode: CandidateKind,
    pub window: usize,
    pub trie_depth_cap: usize,
    pub scoring: Scoring,
    pub attention: AttentionWeights,
    /// When false the log's wall-time column is `-`, so logs of identical runs match byte for byte.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 180,
            clip_norm: 10.0,
            dropout_rate: 0.2,
            hidden: 300,
            max_passage_len: 300,
            max_epochs: 30,
            patience: 10,
            curriculum_group: 10,
            init_range: 0.01,
            seed: 1,
            candidate_mode: CandidateKind::Window,
            window: DEFAULT_WINDOW,
            trie_depth_cap: DEFAULT_DEPTH_CAP,
            scoring: Scoring::Dot,
            attention: AttentionWeights::Raw,
            log_wall_time: true,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| DcrError::Config(format!("invalid value {value:?} for `{key}`")))
}

impl TrainConfig {
    /// Sets one field by its name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "clip_norm" => self.clip_norm = parse_value(key, value)?,
            "dropout_rate" => self.dropout_rate = parse_value(key, value)?,
            "hidden" => self.hidden = parse_value(key, value)?,
            "max_passage_len" => self.max_passage_len = parse_value(key, value)?,
            "max_epochs" => self.max_epochs = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "curriculum_group" => self.curriculum_group = parse_value(key, value)?,
            "init_range" => self.init_range = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "candidate_mode" => {
                self.candidate_mode = CandidateKind::parse(value)
                    .ok_or_else(|| DcrError::Config(format!("unknown candidate_mode {value:?}")))?
            }
            "window" => self.window = parse_value(key, value)?,
            "trie_depth_cap" => self.trie_depth_cap = parse_value(key, value)?,
            "scoring" => {
                self.scoring =
                    Scoring::parse(value).ok_or_else(|| DcrError::Config(format!("unknown scoring {value:?}")))?
            }
            "attention" => {
                self.attention = AttentionWeights::parse(value)
                    .ok_or_else(|| DcrError::Config(format!("unknown attention {value:?}")))?
            }
            "log_wall_time" => self.log_wall_time = parse_value(key, value)?,
            _ => return Err(DcrError::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = TrainConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| DcrError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            config.set(k.trim(), v.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DcrError::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies the seed environment variable, if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV_VAR) {
            self.seed = parse_value(SEED_ENV_VAR, v.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate > 0.0),
            ("batch_size", self.batch_size > 0),
            ("clip_norm", self.clip_norm > 0.0),
            ("hidden", self.hidden > 0),
            ("max_passage_len", self.max_passage_len > 0),
            ("max_epochs", self.max_epochs > 0),
            ("patience", self.patience > 0),
            ("curriculum_group", self.curriculum_group > 0),
            ("init_range", self.init_range > 0.0),
            ("window", self.window > 0),
            ("trie_depth_cap", self.trie_depth_cap > 0),
        ];
        if let Some((key, _)) = positive.iter().find(|(_, ok)| !ok) {
            return Err(DcrError::Config(format!("`{key}` must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(DcrError::Config("`dropout_rate` must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// The config as `key = value` text that [`TrainConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| writeln!(s, "{k} = {v}").unwrap();
        kv("learning_rate", &self.learning_rate);
        kv("batch_size", &self.batch_size);
        kv("clip_norm", &self.clip_norm);
        kv("dropout_rate", &self.dropout_rate);
        kv("hidden", &self.hidden);
        kv("max_passage_len", &self.max_passage_len);
        kv("max_epochs", &self.max_epochs);
        kv("patience", &self.patience);
        kv("curriculum_group", &self.curriculum_group);
        kv("init_range", &self.init_range);
        kv("seed", &self.seed);
        kv("candidate_mode", &self.candidate_mode.name());
        kv("window", &self.window);
        kv("trie_depth_cap", &self.trie_depth_cap);
        kv("scoring", &self.scoring.name());
        kv("attention", &self.attention.name());
        kv("log_wall_time", &self.log_wall_time);
        s
    }
}
