//! GPT-style decoder: token + learned positional embeddings, pre-norm
//! attention and GELU feed-forward blocks, final layer norm, projection.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{Bound, ParamSet};
use super::tensor::Tensor;
use super::INIT_STD;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformerConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ff_dim: usize,
    pub context_len: usize,
    pub dropout_rate: f64,
    /// Reuse the token embedding as the output projection.
    pub tie_weights: bool,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("ff_dim", self.ff_dim),
            ("context_len", self.context_len),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("transformer {name} must be at least 1")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        let (v, d, f) = (self.vocab_size, self.d_model, self.ff_dim);
        let mut m = vec![
            ("tok_embed".to_owned(), vec![v, d]),
            ("pos_embed".to_owned(), vec![self.context_len, d]),
        ];
        for l in 0..self.n_layers {
            let p = |s: &str| format!("block.{l}.{s}");
            m.extend([
                (p("ln1.gain"), vec![d]),
                (p("ln1.bias"), vec![d]),
                (p("attn.qkv.weight"), vec![d, 3 * d]),
                (p("attn.qkv.bias"), vec![3 * d]),
                (p("attn.proj.weight"), vec![d, d]),
                (p("attn.proj.bias"), vec![d]),
                (p("ln2.gain"), vec![d]),
                (p("ln2.bias"), vec![d]),
                (p("ff.in.weight"), vec![d, f]),
                (p("ff.in.bias"), vec![f]),
                (p("ff.out.weight"), vec![f, d]),
                (p("ff.out.bias"), vec![d]),
            ]);
        }
        m.push(("ln_f.gain".to_owned(), vec![d]));
        m.push(("ln_f.bias".to_owned(), vec![d]));
        if !self.tie_weights {
            m.push(("head.weight".to_owned(), vec![d, v]));
        }
        m.push(("head.bias".to_owned(), vec![v]));
        m
    }

    /// Normal(0, 0.02) weights and embeddings, unit norm gains, zero biases.
    pub fn init<R: Rng>(&self, rng: &mut R) -> Result<ParamSet> {
        self.validate()?;
        let entries = self
            .manifest()
            .into_iter()
            .map(|(name, shape)| {
                let t = if name.ends_with(".gain") {
                    Tensor::full(&shape, 1.0)
                } else if name.ends_with("bias") {
                    Tensor::zeros(&shape)
                } else {
                    Tensor::randn(&shape, INIT_STD, rng)
                };
                (name, t)
            })
            .collect();
        ParamSet::new(entries)
    }
}

fn layer_norm(g: &mut Graph, p: &Bound, x: Var, prefix: &str) -> Result<Var> {
    let gain = p.get(&format!("{prefix}.gain"));
    let bias = p.get(&format!("{prefix}.bias"));
    g.layer_norm(x, gain, bias, LAYER_NORM_EPS)
}

fn linear(g: &mut Graph, p: &Bound, x: Var, prefix: &str) -> Result<Var> {
    let y = g.matmul(x, p.get(&format!("{prefix}.weight")))?;
    g.add_bias(y, p.get(&format!("{prefix}.bias")))
}

/// Self-attention sublayer on `[B·T, d]` rows: fused QKV projection, causal
/// multi-head attention, output projection.
pub fn attention_block(g: &mut Graph, p: &Bound, x: Var, prefix: &str, heads: usize, seq: usize) -> Result<Var> {
    let d = g.value(x).rows_cols().1;
    let qkv = linear(g, p, x, &format!("{prefix}.qkv"))?;
    let q = g.slice_cols(qkv, 0, d)?;
    let k = g.slice_cols(qkv, d, d)?;
    let v = g.slice_cols(qkv, 2 * d, d)?;
    let a = g.causal_attention(q, k, v, heads, seq)?;
    linear(g, p, a, &format!("{prefix}.proj"))
}

/// Logits `[B·T, V]` for equal-length sequences, rows ordered `b·T + t`.
pub fn transformer_forward(g: &mut Graph, config: &TransformerConfig, p: &Bound, batch: &[Vec<usize>]) -> Result<Var> {
    let t_len = batch.first().map_or(0, Vec::len);
    if batch.is_empty() || t_len == 0 || batch.iter().any(|s| s.len() != t_len) {
        return Err(Error::Shape("transformer batch must hold equal, nonempty sequences".into()));
    }
    if t_len > config.context_len {
        return Err(Error::ContextOverflow {
            len: t_len,
            context_len: config.context_len,
        });
    }
    let flat: Vec<usize> = batch.concat();
    let positions: Vec<usize> = (0..batch.len()).flat_map(|_| 0..t_len).collect();
    let tok = g.embedding(p.get("tok_embed"), &flat)?;
    let pos = g.embedding(p.get("pos_embed"), &positions)?;
    let sum = g.add(tok, pos)?;
    let mut x = g.dropout(sum, config.dropout_rate);

    for l in 0..config.n_layers {
        let h = layer_norm(g, p, x, &format!("block.{l}.ln1"))?;
        let a = attention_block(g, p, h, &format!("block.{l}.attn"), config.n_heads, t_len)?;
        let a = g.dropout(a, config.dropout_rate);
        x = g.add(x, a)?;

        let h = layer_norm(g, p, x, &format!("block.{l}.ln2"))?;
        let h = linear(g, p, h, &format!("block.{l}.ff.in"))?;
        let h = g.gelu(h);
        let h = linear(g, p, h, &format!("block.{l}.ff.out"))?;
        let h = g.dropout(h, config.dropout_rate);
        x = g.add(x, h)?;
    }

    let x = layer_norm(g, p, x, "ln_f")?;
    let proj = if config.tie_weights {
        let wt = g.transpose(p.get("tok_embed"))?;
        g.matmul(x, wt)?
    } else {
        g.matmul(x, p.get("head.weight"))?
    };
    g.add_bias(proj, p.get("head.bias"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(tie: bool) -> TransformerConfig {
        TransformerConfig {
            vocab_size: 9,
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            ff_dim: 16,
            context_len: 6,
            dropout_rate: 0.1,
            tie_weights: tie,
        }
    }

    fn logits(cfg: &TransformerConfig, p: &ParamSet, ids: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let out = transformer_forward(&mut g, cfg, &b, &[ids.to_vec()])?;
        Ok(g.value(out).clone())
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = tiny(false);
        c.n_heads = 3;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = tiny(false);
        c.dropout_rate = 1.0;
        assert!(c.validate().is_err());
        let mut c = tiny(false);
        c.context_len = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn tied_manifest_drops_head_weight() {
        let untied = tiny(false).manifest();
        let tied = tiny(true).manifest();
        assert_eq!(untied.len(), tied.len() + 1);
        assert!(!tied.iter().any(|(n, _)| n == "head.weight"));
    }

    #[test]
    fn shape_overflow_and_causality() {
        for tie in [false, true] {
            let cfg = tiny(tie);
            let p = cfg.init(&mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            let a = logits(&cfg, &p, &[1, 2, 3, 4]).unwrap();
            assert_eq!(a.shape(), &[4, 9]);
            let b = logits(&cfg, &p, &[1, 2, 7, 0]).unwrap();
            assert_eq!(a.data()[..2 * 9], b.data()[..2 * 9]);
            assert_ne!(a.data()[2 * 9..], b.data()[2 * 9..]);
            assert!(matches!(
                logits(&cfg, &p, &[0; 7]),
                Err(Error::ContextOverflow { len: 7, context_len: 6 })
            ));
        }
    }

    #[test]
    fn eval_forward_is_bitwise_deterministic() {
        let cfg = tiny(false);
        let p = cfg.init(&mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(logits(&cfg, &p, &[3, 1, 4, 1, 5]).unwrap(), logits(&cfg, &p, &[3, 1, 4, 1, 5]).unwrap());
    }

    #[test]
    fn single_token_attention_is_value_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = 4;
        let p = ParamSet::new(vec![
            ("a.qkv.weight".into(), Tensor::randn(&[d, 3 * d], 0.5, &mut rng)),
            ("a.qkv.bias".into(), Tensor::randn(&[3 * d], 0.5, &mut rng)),
            ("a.proj.weight".into(), Tensor::eye(d)),
            ("a.proj.bias".into(), Tensor::zeros(&[d])),
        ])
        .unwrap();
        let x = Tensor::randn(&[1, d], 1.0, &mut rng);
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = attention_block(&mut g, &b, xv, "a", 2, 1).unwrap();
        let w = p.get("a.qkv.weight").unwrap().data();
        let bias = p.get("a.qkv.bias").unwrap().data();
        for j in 0..d {
            let expect: f64 = (0..d).map(|i| x.data()[i] * w[i * 3 * d + 2 * d + j]).sum::<f64>() + bias[2 * d + j];
            assert!((g.value(out).data()[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_only_in_training() {
        let cfg = tiny(false);
        let p = cfg.init(&mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let eval = logits(&cfg, &p, &[1, 2, 3]).unwrap();
        let mut g = Graph::training(1);
        let b = p.bind(&mut g, false);
        let out = transformer_forward(&mut g, &cfg, &b, &[vec![1, 2, 3]]).unwrap();
        assert_ne!(g.value(out), &eval);
    }
}
