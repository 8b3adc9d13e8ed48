use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{LstmConfig, ModelConfig, TransformerConfig};
use crate::tokenizer::Mode;

/// Architecture plus tokenization, as named on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    CharLstm,
    WordLstm,
    Transformer,
}

impl Arch {
    pub fn default_mode(self) -> Mode {
        match self {
            Arch::WordLstm => Mode::Word,
            Arch::CharLstm | Arch::Transformer => Mode::Char,
        }
    }

    pub fn default_context_len(self, mode: Mode) -> usize {
        match mode {
            Mode::Char => 256,
            Mode::Word => 128,
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::CharLstm => "char-lstm",
            Arch::WordLstm => "word-lstm",
            Arch::Transformer => "transformer",
        })
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "char-lstm" => Ok(Arch::CharLstm),
            "word-lstm" => Ok(Arch::WordLstm),
            "transformer" => Ok(Arch::Transformer),
            other => Err(Error::Config(format!(
                "unknown model {other:?} (expected char-lstm, word-lstm or transformer)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub context_len: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Total optimizer steps, counting any steps already in a resumed checkpoint.
    pub max_steps: u64,
    /// Save every this many steps; 0 saves only at completion.
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub seed: u64,
    pub grad_clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            context_len: 256,
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_steps: 1000,
            checkpoint_every: 0,
            log_every: 10,
            seed: 0,
            grad_clip_norm: Some(1.0),
        }
    }
}

fn parse<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value {raw:?} for {key}")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.context_len == 0 {
            return fail("context_len must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate {} must be finite and nonnegative", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} {b} outside [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return fail(format!("eps {} must be positive", self.eps));
        }
        if self.log_every == 0 {
            return fail("log_every must be at least 1".into());
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return fail(format!("grad_clip_norm {c} must be positive"));
            }
        }
        Ok(())
    }

    /// Applies recognised keys from `map`, removing them.
    pub fn apply(&mut self, map: &mut BTreeMap<String, String>) -> Result<()> {
        let keys: Vec<String> = map.keys().cloned().collect();
        for key in keys {
            let raw = &map[&key];
            match key.as_str() {
                "batch_size" => self.batch_size = parse(&key, raw)?,
                "context_len" => self.context_len = parse(&key, raw)?,
                "learning_rate" => self.learning_rate = parse(&key, raw)?,
                "beta1" => self.beta1 = parse(&key, raw)?,
                "beta2" => self.beta2 = parse(&key, raw)?,
                "eps" => self.eps = parse(&key, raw)?,
                "max_steps" => self.max_steps = parse(&key, raw)?,
                "checkpoint_every" => self.checkpoint_every = parse(&key, raw)?,
                "log_every" => self.log_every = parse(&key, raw)?,
                "seed" => self.seed = parse(&key, raw)?,
                "grad_clip_norm" => {
                    self.grad_clip_norm = match raw.trim() {
                        "none" | "off" => None,
                        v => Some(parse(&key, v)?),
                    }
                }
                _ => continue,
            }
            map.remove(&key);
        }
        Ok(())
    }

    pub fn to_kv_text(&self) -> String {
        let clip = self.grad_clip_norm.map_or("none".to_owned(), |c| c.to_string());
        format!(
            "batch_size={}\ncontext_len={}\nlearning_rate={}\nbeta1={}\nbeta2={}\neps={}\nmax_steps={}\n\
             checkpoint_every={}\nlog_every={}\nseed={}\ngrad_clip_norm={clip}\n",
            self.batch_size,
            self.context_len,
            self.learning_rate,
            self.beta1,
            self.beta2,
            self.eps,
            self.max_steps,
            self.checkpoint_every,
            self.log_every,
            self.seed,
        )
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
        if map.insert(k.trim().to_owned(), v.trim().to_owned()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {}", n + 1, k.trim())));
        }
    }
    Ok(map)
}

/// Everything a training run needs besides the corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub arch: Arch,
    pub mode: Mode,
    pub min_freq: usize,
    pub train: TrainConfig,
    /// Architecture keys (`hidden_dim`, `d_model`, …); missing ones take defaults.
    pub model: BTreeMap<String, String>,
}

const LSTM_KEYS: [&str; 3] = ["embed_dim", "hidden_dim", "num_layers"];
const TRANSFORMER_KEYS: [&str; 6] = ["d_model", "n_heads", "n_layers", "ff_dim", "dropout_rate", "tie_weights"];

impl RunConfig {
    pub fn new(arch: Arch) -> Self {
        let mode = arch.default_mode();
        RunConfig {
            arch,
            mode,
            min_freq: 1,
            train: TrainConfig {
                context_len: arch.default_context_len(mode),
                ..TrainConfig::default()
            },
            model: BTreeMap::new(),
        }
    }

    /// Layers `key=value` text over the defaults for `arch`.
    pub fn from_kv(arch: Arch, text: &str) -> Result<Self> {
        let mut map = parse_kv(text)?;
        let mut run = RunConfig::new(arch);
        if let Some(m) = map.remove("vocab_mode") {
            run.mode = m.parse()?;
            if !map.contains_key("context_len") {
                run.train.context_len = arch.default_context_len(run.mode);
            }
        }
        if let Some(m) = map.remove("min_freq") {
            run.min_freq = parse("min_freq", &m)?;
        }
        run.train.apply(&mut map)?;
        let allowed: &[&str] = match arch {
            Arch::CharLstm | Arch::WordLstm => &LSTM_KEYS,
            Arch::Transformer => &TRANSFORMER_KEYS,
        };
        for (k, v) in map {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown setting {k} for {arch}")));
            }
            run.model.insert(k, v);
        }
        run.train.validate()?;
        Ok(run)
    }

    pub fn load(arch: Arch, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv(arch, &text)
    }

    /// Model configuration for a vocabulary of `vocab_size` tokens.
    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let get = |k: &str, default: &str| -> Result<String> {
            Ok(self.model.get(k).cloned().unwrap_or_else(|| default.to_owned()))
        };
        let num = |k: &str, default: usize| -> Result<usize> { parse(k, &get(k, &default.to_string())?) };
        let context_len = self.train.context_len;
        let config = match self.arch {
            Arch::CharLstm | Arch::WordLstm => ModelConfig::Lstm(LstmConfig {
                vocab_size,
                embed_dim: num("embed_dim", 32)?,
                hidden_dim: num("hidden_dim", 128)?,
                num_layers: num("num_layers", 2)?,
                context_len,
            }),
            Arch::Transformer => ModelConfig::Transformer(TransformerConfig {
                vocab_size,
                d_model: num("d_model", 64)?,
                n_heads: num("n_heads", 4)?,
                n_layers: num("n_layers", 2)?,
                ff_dim: num("ff_dim", 256)?,
                context_len,
                dropout_rate: parse("dropout_rate", &get("dropout_rate", "0.1")?)?,
                tie_weights: parse("tie_weights", &get("tie_weights", "false")?)?,
            }),
        };
        config.validate()?;
        Ok(config)
    }
}
