//! Training configuration, loadable from JSON or `key = value` text.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::curriculum::TaskView;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::objectives::LossWeights;
use crate::syncorpus::{CorpusConfig, UtteranceRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Number of independent trials.
    pub trials: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub curriculum: bool,
    pub cono: bool,
    /// Scale utterance embeddings to unit length before the ordinal
    /// regulariser; without it the diversity term is unbounded below.
    pub unit_embeddings: bool,
    /// Fraction of utterances held out for epoch selection and reporting.
    pub holdout: f64,
    pub split_seed: u64,
    /// View used for held-out evaluation.
    pub eval_view: TaskView,
    pub model: ModelConfig,
    /// Used when no corpus file is given.
    pub corpus: CorpusConfig,
    pub corpus_path: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint_every_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 25,
            epochs: 100,
            trials: 5,
            seed: 0,
            weights: LossWeights::default(),
            curriculum: true,
            cono: true,
            unit_embeddings: true,
            holdout: 0.2,
            split_seed: 0,
            eval_view: TaskView::Hard,
            model: ModelConfig::default(),
            corpus: CorpusConfig::default(),
            corpus_path: None,
            out_dir: None,
            checkpoint_every_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.trials == 0 {
            return Err(Error::Config("batch_size, epochs and trials must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::Config(format!("holdout {} outside [0, 1)", self.holdout)));
        }
        self.weights.validate()?;
        self.model.validate()?;
        self.corpus.validate()
    }

    /// Loss weights with the regulariser switched off when `cono` is false.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights.clone();
        if !self.cono {
            w.cono = 0.0;
        }
        w
    }

    /// Reads a config file; JSON if it parses as a JSON object, otherwise
    /// `key = value` lines with dotted keys for nested fields.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let value = match serde_json::from_str::<Value>(text) {
            Ok(v @ Value::Object(_)) => v,
            _ => parse_key_values(text)?,
        };
        let config: Self =
            serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Applies `key=value` overrides on top of this config.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(self)?;
        let extra = parse_key_values(&overrides.join("\n"))?;
        merge(&mut value, extra);
        let config: Self =
            serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

fn merge(base: &mut Value, extra: Value) {
    match (base, extra) {
        (Value::Object(b), Value::Object(e)) => {
            for (k, v) in e {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, e) => *b = e,
    }
}

/// Parses `a.b = value` lines into a nested JSON object. Values are read
/// as JSON when possible and as plain strings otherwise.
pub fn parse_key_values(text: &str) -> Result<Value> {
    let mut root = Map::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, raw) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let raw = raw.trim();
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let parts: Vec<&str> = key.trim().split('.').collect();
        let mut node = &mut root;
        for part in &parts[..parts.len() - 1] {
            let entry = node
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
            node = entry
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("line {}: {part} is not a section", n + 1)))?;
        }
        node.insert(parts[parts.len() - 1].to_string(), value);
    }
    Ok(Value::Object(root))
}

impl ModelConfig {
    /// Adjusts inventory, lexicon and SSL sizes to cover a corpus.
    pub fn fit_corpus(&mut self, records: &[UtteranceRecord]) -> Result<()> {
        let first = records
            .first()
            .ok_or_else(|| Error::Corpus("corpus is empty".into()))?;
        let symbols = first.posteriors.first().map_or(0, Vec::len);
        if symbols < 3 {
            return Err(Error::Corpus("posterior grid too narrow".into()));
        }
        self.inventory = symbols - 1;
        self.ssl_dim = first.ssl.first().map_or(0, Vec::len);
        let max_word = records
            .iter()
            .flat_map(|r| r.ref_words.iter().chain(&r.hyp_words))
            .max()
            .copied()
            .unwrap_or(0);
        self.lexicon = self.lexicon.max(max_word + 1);
        self.validate()
    }
}
