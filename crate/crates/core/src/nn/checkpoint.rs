//! Checkpoint container.
//!
//! A text header of `key=value` lines and tensor manifest entries, closed by
//! an `end` line, then the vocabulary text, then every tensor as raw
//! little-endian f64 blocks. Offsets are relative to the start of the tensor
//! section.
//!
//! ```text
//! recipegen-checkpoint v1
//! kind=lstm
//! model.hidden_dim=64
//! meta.steps=500
//! vocab.bytes=1234
//! vocab.sha256=…
//! tensor	embed	40x16	0
//! end
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::model::{Model, ModelConfig, ModelKind};
use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::tokenizer::Vocabulary;

const MAGIC: &str = "recipegen-checkpoint v1";

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainingMeta {
    pub steps: u64,
    pub final_loss: Option<f64>,
    pub seed: u64,
}

/// Adam moments, one buffer per parameter in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn zeros(params: &ParamSet) -> Self {
        let z: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        OptimizerState {
            t: 0,
            m: z.clone(),
            v: z,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab: Vocabulary,
    pub meta: TrainingMeta,
    pub optimizer: Option<OptimizerState>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn fmt_shape(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(model: Model, vocab: Vocabulary) -> Result<Self> {
        let ckpt = Checkpoint {
            model,
            vocab,
            meta: TrainingMeta::default(),
            optimizer: None,
        };
        ckpt.check_compatible()?;
        Ok(ckpt)
    }

    /// The model's output layer must cover exactly the vocabulary.
    pub fn check_compatible(&self) -> Result<()> {
        let (m, v) = (self.model.config().vocab_size(), self.vocab.size());
        if m != v {
            return Err(Error::Compatibility(format!(
                "model expects {m} tokens but vocabulary has {v}"
            )));
        }
        Ok(())
    }

    fn blocks(&self) -> Vec<(String, &[usize], &[f64])> {
        let params = self.model.params();
        let mut out: Vec<(String, &[usize], &[f64])> = params
            .iter()
            .map(|(n, t)| (n.to_owned(), t.shape(), t.data()))
            .collect();
        if let Some(opt) = &self.optimizer {
            for (tag, bufs) in [("m", &opt.m), ("v", &opt.v)] {
                for ((name, t), buf) in params.iter().zip(bufs.iter()) {
                    out.push((format!("adam.{tag}.{name}"), t.shape(), buf.as_slice()));
                }
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let vocab = self.vocab.to_text();
        let mut header = format!("{MAGIC}\nkind={}\n", self.model.kind());
        for (k, v) in self.model.config().to_pairs() {
            header.push_str(&format!("model.{k}={v}\n"));
        }
        header.push_str(&format!("meta.steps={}\nmeta.seed={}\n", self.meta.steps, self.meta.seed));
        if let Some(loss) = self.meta.final_loss {
            header.push_str(&format!("meta.final_loss={loss}\n"));
        }
        if let Some(opt) = &self.optimizer {
            header.push_str(&format!("optimizer.t={}\n", opt.t));
        }
        header.push_str(&format!("vocab.bytes={}\nvocab.sha256={}\n", vocab.len(), sha256_hex(vocab.as_bytes())));
        let blocks = self.blocks();
        let mut offset = 0;
        for (name, shape, data) in &blocks {
            header.push_str(&format!("tensor\t{name}\t{}\t{offset}\n", fmt_shape(shape)));
            offset += data.len() * 8;
        }
        header.push_str("end\n");

        let mut out = Vec::with_capacity(header.len() + vocab.len() + offset);
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(vocab.as_bytes());
        for (_, _, data) in blocks {
            for x in data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let end = bytes
            .windows(5)
            .position(|w| w == b"\nend\n")
            .ok_or_else(|| bad("missing header terminator"))?;
        let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8"))?;
        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("not a recipegen checkpoint"));
        }
        let mut keys = BTreeMap::new();
        let mut manifest: Vec<(String, Vec<usize>, usize)> = Vec::new();
        for line in lines {
            if let Some(rest) = line.strip_prefix("tensor\t") {
                let f: Vec<&str> = rest.split('\t').collect();
                let [name, shape, offset] = f[..] else {
                    return Err(bad(format!("bad tensor line {line:?}")));
                };
                let shape = shape
                    .split('x')
                    .filter(|s| !s.is_empty())
                    .map(str::parse)
                    .collect::<std::result::Result<Vec<usize>, _>>()
                    .map_err(|_| bad(format!("bad shape in {line:?}")))?;
                let offset = offset.parse().map_err(|_| bad(format!("bad offset in {line:?}")))?;
                manifest.push((name.to_owned(), shape, offset));
            } else {
                let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("bad header line {line:?}")))?;
                keys.insert(k.to_owned(), v.to_owned());
            }
        }
        let get = |k: &str| keys.get(k).ok_or_else(|| bad(format!("header lacks {k}")));
        let num = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| bad(format!("bad {k}"))) };

        let kind: ModelKind = get("kind")?.parse()?;
        let model_keys: BTreeMap<String, String> = keys
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("model.").map(|k| (k.to_owned(), v.clone())))
            .collect();
        let config = ModelConfig::from_pairs(kind, &model_keys)?;

        let body = &bytes[end + 5..];
        let vocab_len = num("vocab.bytes")? as usize;
        if body.len() < vocab_len {
            return Err(bad("truncated vocabulary section"));
        }
        let vocab_bytes = &body[..vocab_len];
        if sha256_hex(vocab_bytes) != *get("vocab.sha256")? {
            return Err(bad("vocabulary hash mismatch"));
        }
        let vocab = Vocabulary::read_from(vocab_bytes)?;

        let data = &body[vocab_len..];
        let mut expected = 0;
        let mut tensors = BTreeMap::new();
        for (name, shape, offset) in manifest {
            let n: usize = shape.iter().product();
            if offset != expected || offset + n * 8 > data.len() {
                return Err(bad(format!("tensor {name} has offset {offset}, expected {expected}")));
            }
            let values = data[offset..offset + n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            expected += n * 8;
            tensors.insert(name, Tensor::new(&shape, values)?);
        }
        if expected != data.len() {
            return Err(bad(format!("{} trailing bytes", data.len() - expected)));
        }

        let manifest = config.manifest();
        let mut params = Vec::with_capacity(manifest.len());
        for (name, _) in &manifest {
            let t = tensors.remove(name).ok_or_else(|| bad(format!("missing parameter {name}")))?;
            params.push((name.clone(), t));
        }
        let model = Model::new(config, ParamSet::new(params)?)?;

        let optimizer = match keys.get("optimizer.t") {
            None => None,
            Some(t) => {
                let t = t.parse().map_err(|_| bad("bad optimizer.t"))?;
                let mut moments = |tag: &str| -> Result<Vec<Vec<f64>>> {
                    manifest
                        .iter()
                        .map(|(name, _)| {
                            tensors
                                .remove(&format!("adam.{tag}.{name}"))
                                .map(Tensor::into_data)
                                .ok_or_else(|| bad(format!("missing adam.{tag}.{name}")))
                        })
                        .collect()
                };
                let m = moments("m")?;
                let v = moments("v")?;
                Some(OptimizerState { t, m, v })
            }
        };
        if let Some(extra) = tensors.keys().next() {
            return Err(bad(format!("unexpected tensor {extra}")));
        }

        let final_loss = match keys.get("meta.final_loss") {
            None => None,
            Some(s) => Some(s.parse().map_err(|_| bad("bad meta.final_loss"))?),
        };
        let ckpt = Checkpoint {
            model,
            vocab,
            meta: TrainingMeta {
                steps: num("meta.steps")?,
                final_loss,
                seed: num("meta.seed")?,
            },
            optimizer,
        };
        ckpt.check_compatible()?;
        Ok(ckpt)
    }

    /// Writes via a temporary sibling and rename, so a crash never leaves a
    /// half-written checkpoint at `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn digest(&self) -> String {
        sha256_hex(&self.to_bytes())
    }
}
