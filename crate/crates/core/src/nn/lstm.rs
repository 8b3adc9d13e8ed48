//! Stacked LSTM language model: embedding → LSTM layers → dense projection.
//!
//! Each layer keeps one fused weight `[input + hidden, 4·hidden]` applied to
//! the concatenation `[x; h]`, with gate columns ordered input, forget,
//! output, candidate:
//!
//! ```text
//! i = σ(W_i·[x;h] + b_i)   f = σ(W_f·[x;h] + b_f)   o = σ(W_o·[x;h] + b_o)
//! g = tanh(W_g·[x;h] + b_g)
//! c' = f ⊙ c + i ⊙ g       h' = o ⊙ tanh(c')
//! ```

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{Bound, ParamSet};
use super::tensor::Tensor;
use super::INIT_STD;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub context_len: usize,
}

impl LstmConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
            ("context_len", self.context_len),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(Error::Config(format!("lstm {name} must be at least 1"))),
            None => Ok(()),
        }
    }

    fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.embed_dim
        } else {
            self.hidden_dim
        }
    }

    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        let (v, h) = (self.vocab_size, self.hidden_dim);
        let mut m = vec![("embed".to_owned(), vec![v, self.embed_dim])];
        for l in 0..self.num_layers {
            m.push((format!("lstm.{l}.weight"), vec![self.layer_input(l) + h, 4 * h]));
            m.push((format!("lstm.{l}.bias"), vec![4 * h]));
        }
        m.push(("head.weight".to_owned(), vec![h, v]));
        m.push(("head.bias".to_owned(), vec![v]));
        m
    }

    /// Normal(0, 0.02) weights, zero biases except the forget gate at 1.0.
    pub fn init<R: Rng>(&self, rng: &mut R) -> Result<ParamSet> {
        self.validate()?;
        let h = self.hidden_dim;
        let entries = self
            .manifest()
            .into_iter()
            .map(|(name, shape)| {
                let t = if name.ends_with(".bias") && name.starts_with("lstm.") {
                    let mut b = Tensor::zeros(&shape);
                    b.data_mut()[h..2 * h].fill(1.0);
                    b
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

/// Recurrent state, one `(h, c)` pair of `[batch, hidden]` per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<Tensor>,
    pub c: Vec<Tensor>,
}

impl LstmState {
    pub fn zeros(config: &LstmConfig, batch: usize) -> Self {
        let z = Tensor::zeros(&[batch, config.hidden_dim]);
        LstmState {
            h: vec![z.clone(); config.num_layers],
            c: vec![z; config.num_layers],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().chain(&self.c).all(Tensor::is_finite)
    }
}

/// One LSTM step for a `[batch, in]` input and `[batch, hidden]` state.
pub fn lstm_cell(g: &mut Graph, x: Var, h: Var, c: Var, weight: Var, bias: Var) -> Result<(Var, Var)> {
    let hidden = g.value(h).rows_cols().1;
    if g.value(weight).shape() != [g.value(x).rows_cols().1 + hidden, 4 * hidden] {
        return Err(Error::Shape(format!(
            "lstm weight {:?} does not fit input {:?} and hidden {hidden}",
            g.value(weight).shape(),
            g.value(x).shape()
        )));
    }
    let xh = g.concat_cols(&[x, h])?;
    let pre = g.matmul(xh, weight)?;
    let gates = g.add_bias(pre, bias)?;
    let i = g.slice_cols(gates, 0, hidden)?;
    let i = g.sigmoid(i);
    let f = g.slice_cols(gates, hidden, hidden)?;
    let f = g.sigmoid(f);
    let o = g.slice_cols(gates, 2 * hidden, hidden)?;
    let o = g.sigmoid(o);
    let cand = g.slice_cols(gates, 3 * hidden, hidden)?;
    let cand = g.tanh(cand);
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_next = g.add(keep, write)?;
    let squashed = g.tanh(c_next);
    let h_next = g.mul(o, squashed)?;
    Ok((h_next, c_next))
}

/// Output of a batched forward pass.
#[derive(Debug)]
pub struct LstmOutput {
    /// `[B·T, V]`, rows ordered `b·T + t`.
    pub logits: Var,
    pub state: Vec<(Var, Var)>,
}

/// Runs `batch` equal-length sequences from `initial` (zeros when `None`).
pub fn lstm_forward(
    g: &mut Graph,
    config: &LstmConfig,
    params: &Bound,
    batch: &[Vec<usize>],
    initial: Option<&LstmState>,
) -> Result<LstmOutput> {
    let b = batch.len();
    let t_len = batch.first().map_or(0, Vec::len);
    if b == 0 || t_len == 0 || batch.iter().any(|s| s.len() != t_len) {
        return Err(Error::Shape("lstm batch must hold equal, nonempty sequences".into()));
    }
    let zeros = LstmState::zeros(config, b);
    let initial = initial.unwrap_or(&zeros);
    if initial.h.len() != config.num_layers || initial.h[0].shape() != [b, config.hidden_dim] {
        return Err(Error::Shape("initial lstm state does not match batch/config".into()));
    }

    let time_major: Vec<usize> = (0..t_len).flat_map(|t| batch.iter().map(move |s| s[t])).collect();
    let embedded = g.embedding(params.get("embed"), &time_major)?;
    let mut state: Vec<(Var, Var)> = initial
        .h
        .iter()
        .zip(&initial.c)
        .map(|(h, c)| (g.constant(h.clone()), g.constant(c.clone())))
        .collect();
    let weights: Vec<(Var, Var)> = (0..config.num_layers)
        .map(|l| (params.get(&format!("lstm.{l}.weight")), params.get(&format!("lstm.{l}.bias"))))
        .collect();

    let mut tops = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut x = g.slice_rows(embedded, t * b, b)?;
        for (l, (w, bias)) in weights.iter().enumerate() {
            let (h, c) = lstm_cell(g, x, state[l].0, state[l].1, *w, *bias)?;
            state[l] = (h, c);
            x = h;
        }
        tops.push(x);
    }
    let stacked = g.concat_rows(&tops)?;
    // reorder time-major rows to b·T + t
    let order: Vec<usize> = (0..b).flat_map(|s| (0..t_len).map(move |t| t * b + s)).collect();
    let hidden = g.embedding(stacked, &order)?;
    let proj = g.matmul(hidden, params.get("head.weight"))?;
    let logits = g.add_bias(proj, params.get("head.bias"))?;
    Ok(LstmOutput { logits, state })
}
