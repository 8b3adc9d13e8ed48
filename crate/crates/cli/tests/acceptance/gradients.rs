//! Central differences (h = 1e-5) against the tape: < 1e-5 per op, < 1e-4
//! per full model, under two minutes.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recipegen::nn::gradcheck::check;
use recipegen::nn::graph::{Graph, Var};
use recipegen::nn::lstm::{lstm_cell, lstm_forward, LstmConfig};
use recipegen::nn::transformer::{attention_block, transformer_forward, TransformerConfig};
use recipegen::nn::{Bound, ParamSet, Tensor};

use crate::{ensure, fail, Outcome};

const H: f64 = 1e-5;
const OP_TOL: f64 = 1e-5;
const MODEL_TOL: f64 = 1e-4;

type Shapes = &'static [(&'static str, &'static [usize])];
type OpFn = fn(&mut Graph, &Bound) -> recipegen::Result<Var>;

fn params(seed: u64, shapes: &[(&str, &[usize])], std: f64) -> ParamSet {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    ParamSet::new(shapes.iter().map(|(n, s)| (n.to_string(), Tensor::randn(s, std, &mut r))).collect()).unwrap()
}

fn ops() -> Vec<(&'static str, Shapes, OpFn)> {
    const AB: Shapes = &[("a", &[2, 5]), ("b", &[2, 5])];
    const CAT: Shapes = &[("a", &[3, 4]), ("b", &[3, 2])];
    vec![
        ("matmul", &[("a", &[3, 4]), ("b", &[4, 2])], |g, b| g.matmul(b.get("a"), b.get("b"))),
        ("add", AB, |g, b| g.add(b.get("a"), b.get("b"))),
        ("mul", AB, |g, b| g.mul(b.get("a"), b.get("b"))),
        ("scale", AB, |g, b| Ok(g.scale(b.get("a"), -1.7))),
        ("sigmoid", AB, |g, b| Ok(g.sigmoid(b.get("a")))),
        ("tanh", AB, |g, b| Ok(g.tanh(b.get("a")))),
        ("gelu", AB, |g, b| Ok(g.gelu(b.get("a")))),
        ("transpose", AB, |g, b| g.transpose(b.get("a"))),
        ("add_bias", &[("x", &[3, 4]), ("b", &[4])], |g, b| g.add_bias(b.get("x"), b.get("b"))),
        ("softmax", &[("x", &[3, 5])], |g, b| g.softmax(b.get("x"))),
        ("layer_norm", &[("x", &[3, 6]), ("gain", &[6]), ("bias", &[6])], |g, b| {
            g.layer_norm(b.get("x"), b.get("gain"), b.get("bias"), 1e-5)
        }),
        ("embedding", &[("t", &[5, 3])], |g, b| g.embedding(b.get("t"), &[4, 0, 4, 2])),
        ("slice_cols", CAT, |g, b| g.slice_cols(b.get("a"), 1, 2)),
        ("concat_cols", CAT, |g, b| g.concat_cols(&[b.get("a"), b.get("b")])),
        ("slice_rows", CAT, |g, b| g.slice_rows(b.get("a"), 1, 2)),
        ("concat_rows", &[("a", &[2, 3]), ("b", &[1, 3])], |g, b| g.concat_rows(&[b.get("a"), b.get("b")])),
        (
            "lstm_cell",
            &[("x", &[1, 2]), ("h", &[1, 3]), ("c", &[1, 3]), ("w", &[5, 12]), ("b", &[12])],
            |g, b| {
                let (h, c) = lstm_cell(g, b.get("x"), b.get("h"), b.get("c"), b.get("w"), b.get("b"))?;
                g.concat_cols(&[h, c])
            },
        ),
        (
            "attention_block",
            &[
                ("x", &[3, 4]),
                ("a.qkv.weight", &[4, 12]),
                ("a.qkv.bias", &[12]),
                ("a.proj.weight", &[4, 4]),
                ("a.proj.bias", &[4]),
            ],
            |g, b| attention_block(g, b, b.get("x"), "a", 1, 3),
        ),
        ("causal_attention", &[("q", &[6, 4]), ("k", &[6, 4]), ("v", &[6, 4])], |g, b| {
            g.causal_attention(b.get("q"), b.get("k"), b.get("v"), 2, 3)
        }),
    ]
}

/// Dropout is linear in its input under a replayed mask: the gradient must
/// equal the mask scale exactly.
fn dropout_mask_replay() -> Result<(), String> {
    let p = params(1, &[("x", &[4, 5])], 1.0);
    let mut g = Graph::training(11);
    let b = p.bind(&mut g, true);
    let y = g.dropout(b.get("x"), 0.3);
    let loss = g.weighted_sum(y, &[1.0; 20]).map_err(fail("dropout"))?;
    g.backward(loss).map_err(fail("dropout"))?;
    let grad = g.grad(b.get("x")).ok_or("dropout: no gradient")?;
    for (dx, (yv, xv)) in grad.iter().zip(g.value(y).data().iter().zip(p.tensors()[0].data())) {
        ensure!((dx - yv / xv).abs() < 1e-12, "dropout gradient {dx} vs mask {}", yv / xv);
    }
    Ok(())
}

pub fn run() -> Outcome {
    let t = Instant::now();
    let mut worst_op: (f64, &str) = (0.0, "");
    let ops = ops();
    for (name, shapes, f) in &ops {
        for seed in 0..3 {
            let p = params(seed, shapes, 1.0);
            let report = check(&p, H, |g, b| {
                let y = f(g, b)?;
                // the same fixed random weights on every evaluation
                let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
                let w: Vec<f64> = (0..g.value(y).len()).map(|_| r.gen_range(-1.0..1.0)).collect();
                g.weighted_sum(y, &w)
            })
            .map_err(fail(name))?;
            ensure!(report.max_rel_err < OP_TOL, "{name}: rel err {:.2e} at {:?}", report.max_rel_err, report.worst);
            if report.max_rel_err >= worst_op.0 {
                worst_op = (report.max_rel_err, name);
            }
        }
    }
    let p = params(0, &[("logits", &[4, 6])], 1.0);
    let ce = check(&p, H, |g, b| g.cross_entropy(b.get("logits"), &[0, 5, 2, 2])).map_err(fail("cross_entropy"))?;
    ensure!(ce.max_rel_err < OP_TOL, "cross_entropy: rel err {:.2e}", ce.max_rel_err);
    dropout_mask_replay()?;

    let lstm = LstmConfig {
        vocab_size: 6,
        embed_dim: 4,
        hidden_dim: 16,
        num_layers: 1,
        context_len: 4,
    };
    let shapes: Vec<(String, Vec<usize>)> = lstm.manifest();
    let p = widen(&shapes, 1);
    let r = check(&p, H, |g, b| {
        let out = lstm_forward(g, &lstm, b, &[vec![1, 3, 0, 5]], None)?;
        g.cross_entropy(out.logits, &[3, 0, 5, 2])
    })
    .map_err(fail("lstm"))?;
    ensure!(r.max_rel_err < MODEL_TOL, "lstm model: rel err {:.2e} at {:?}", r.max_rel_err, r.worst);
    let lstm_err = r.max_rel_err;

    let mut gpt_err: f64 = 0.0;
    for tie_weights in [false, true] {
        let cfg = TransformerConfig {
            vocab_size: 7,
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            ff_dim: 16,
            context_len: 4,
            dropout_rate: 0.0,
            tie_weights,
        };
        let p = widen(&cfg.manifest(), 2);
        let r = check(&p, H, |g, b| {
            let logits = transformer_forward(g, &cfg, b, &[vec![1, 6, 2, 2], vec![0, 3, 4, 5]])?;
            g.cross_entropy(logits, &[6, 2, 2, 4, 3, 4, 5, 1])
        })
        .map_err(fail("transformer"))?;
        ensure!(r.max_rel_err < MODEL_TOL, "transformer: rel err {:.2e} at {:?}", r.max_rel_err, r.worst);
        gpt_err = gpt_err.max(r.max_rel_err);
    }
    let secs = t.elapsed().as_secs_f64();
    ensure!(secs < 120.0, "took {secs:.1}s (limit 120s)");
    Ok(format!(
        "{} ops + cross_entropy + dropout; worst op {:.1e} ({}), lstm {:.1e}, transformer {:.1e}",
        ops.len(),
        worst_op.0,
        worst_op.1,
        lstm_err,
        gpt_err
    ))
}

fn widen(manifest: &[(String, Vec<usize>)], seed: u64) -> ParamSet {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    ParamSet::new(
        manifest
            .iter()
            .map(|(n, s)| (n.clone(), Tensor::randn(s, 0.4, &mut r)))
            .collect(),
    )
    .unwrap()
}
