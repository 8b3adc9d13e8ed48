use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::lstm::{lstm_forward, LstmConfig, LstmState};
use super::params::{Bound, ParamSet};
use super::tensor::Tensor;
use super::transformer::{transformer_forward, TransformerConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Lstm,
    Transformer,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Lstm => "lstm",
            ModelKind::Transformer => "transformer",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(ModelKind::Lstm),
            "transformer" => Ok(ModelKind::Transformer),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelConfig {
    Lstm(LstmConfig),
    Transformer(TransformerConfig),
}

fn take<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let raw = map
        .get(key)
        .ok_or_else(|| Error::Config(format!("missing model setting {key}")))?;
    raw.parse()
        .map_err(|_| Error::Config(format!("bad value {raw:?} for {key}")))
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Lstm(_) => ModelKind::Lstm,
            ModelConfig::Transformer(_) => ModelKind::Transformer,
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            ModelConfig::Lstm(c) => c.vocab_size,
            ModelConfig::Transformer(c) => c.vocab_size,
        }
    }

    pub fn context_len(&self) -> usize {
        match self {
            ModelConfig::Lstm(c) => c.context_len,
            ModelConfig::Transformer(c) => c.context_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Lstm(c) => c.validate(),
            ModelConfig::Transformer(c) => c.validate(),
        }
    }

    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            ModelConfig::Lstm(c) => c.manifest(),
            ModelConfig::Transformer(c) => c.manifest(),
        }
    }

    pub fn init(&self, seed: u64) -> Result<ParamSet> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            ModelConfig::Lstm(c) => c.init(&mut rng),
            ModelConfig::Transformer(c) => c.init(&mut rng),
        }
    }

    /// Config fields as ordered `key=value` pairs.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        match self {
            ModelConfig::Lstm(c) => vec![
                ("vocab_size", c.vocab_size.to_string()),
                ("embed_dim", c.embed_dim.to_string()),
                ("hidden_dim", c.hidden_dim.to_string()),
                ("num_layers", c.num_layers.to_string()),
                ("context_len", c.context_len.to_string()),
            ],
            ModelConfig::Transformer(c) => vec![
                ("vocab_size", c.vocab_size.to_string()),
                ("d_model", c.d_model.to_string()),
                ("n_heads", c.n_heads.to_string()),
                ("n_layers", c.n_layers.to_string()),
                ("ff_dim", c.ff_dim.to_string()),
                ("context_len", c.context_len.to_string()),
                ("dropout_rate", c.dropout_rate.to_string()),
                ("tie_weights", c.tie_weights.to_string()),
            ],
        }
    }

    pub fn from_pairs(kind: ModelKind, map: &BTreeMap<String, String>) -> Result<Self> {
        let config = match kind {
            ModelKind::Lstm => ModelConfig::Lstm(LstmConfig {
                vocab_size: take(map, "vocab_size")?,
                embed_dim: take(map, "embed_dim")?,
                hidden_dim: take(map, "hidden_dim")?,
                num_layers: take(map, "num_layers")?,
                context_len: take(map, "context_len")?,
            }),
            ModelKind::Transformer => ModelConfig::Transformer(TransformerConfig {
                vocab_size: take(map, "vocab_size")?,
                d_model: take(map, "d_model")?,
                n_heads: take(map, "n_heads")?,
                n_layers: take(map, "n_layers")?,
                ff_dim: take(map, "ff_dim")?,
                context_len: take(map, "context_len")?,
                dropout_rate: take(map, "dropout_rate")?,
                tie_weights: take(map, "tie_weights")?,
            }),
        };
        config.validate()?;
        Ok(config)
    }

    /// Logits `[B·T, V]` for a batch of equal-length sequences.
    pub fn forward(&self, g: &mut Graph, params: &Bound, batch: &[Vec<usize>]) -> Result<Var> {
        match self {
            ModelConfig::Lstm(c) => Ok(lstm_forward(g, c, params, batch, None)?.logits),
            ModelConfig::Transformer(c) => transformer_forward(g, c, params, batch),
        }
    }
}

/// A configuration together with parameters that satisfy its manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamSet,
}

impl Model {
    pub fn new(config: ModelConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        params.check_manifest(&config.manifest())?;
        Ok(Model { config, params })
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = config.init(seed)?;
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind()
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Evaluation-mode logits `[T, V]` for one sequence.
    pub fn logits(&self, ids: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let out = self.config.forward(&mut g, &bound, &[ids.to_vec()])?;
        Ok(g.value(out).clone())
    }

    pub fn decoder(&self) -> Decoder<'_> {
        Decoder {
            model: self,
            lstm: None,
            history: Vec::new(),
        }
    }
}

/// Incremental next-token scorer. The LSTM carries its recurrent state
/// forward; the transformer re-reads a sliding window of the most recent
/// `context_len` tokens.
#[derive(Debug)]
pub struct Decoder<'m> {
    model: &'m Model,
    lstm: Option<LstmState>,
    history: Vec<usize>,
}

impl Decoder<'_> {
    /// Consumes `ids` and returns next-token logits after the last one.
    pub fn feed(&mut self, ids: &[usize]) -> Result<Vec<f64>> {
        let t = self.feed_all(ids)?;
        let last = t.rows_cols().0 - 1;
        Ok(t.row(last).to_vec())
    }

    /// Consumes `ids` and returns the logits row following each of them
    /// (for the transformer, only those still inside the window).
    pub fn feed_all(&mut self, ids: &[usize]) -> Result<Tensor> {
        if ids.is_empty() {
            return Err(Error::Shape("decoder fed no tokens".into()));
        }
        let model = self.model;
        let v = model.config.vocab_size();
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::Range { index: bad, size: v });
        }
        let mut g = Graph::new();
        let bound = model.params.bind(&mut g, false);
        match &model.config {
            ModelConfig::Lstm(c) => {
                let out = lstm_forward(&mut g, c, &bound, &[ids.to_vec()], self.lstm.as_ref())?;
                let (h, cs) = out
                    .state
                    .iter()
                    .map(|&(h, c)| (g.value(h).clone(), g.value(c).clone()))
                    .unzip();
                self.lstm = Some(LstmState { h, c: cs });
                Ok(g.value(out.logits).clone())
            }
            ModelConfig::Transformer(c) => {
                self.history.extend_from_slice(ids);
                let start = self.history.len().saturating_sub(c.context_len);
                let window = self.history[start..].to_vec();
                let logits = transformer_forward(&mut g, c, &bound, &[window.clone()])?;
                let keep = ids.len().min(window.len());
                let (rows, cols) = g.value(logits).rows_cols();
                let data = g.value(logits).data()[(rows - keep) * cols..].to_vec();
                Tensor::new(&[keep, cols], data)
            }
        }
    }
}
