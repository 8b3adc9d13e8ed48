//! Teacher-forced next-token training with Adam, plus perplexity.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{parse_kv, Arch, RunConfig, TrainConfig};

use crate::corpus::TaggedDocument;
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Graph, Model, ModelConfig, OptimizerState, ParamSet};
use crate::tokenizer::Vocabulary;

/// Encodes documents back to back into one id stream.
pub fn encode_stream(docs: &[TaggedDocument], vocab: &Vocabulary) -> Vec<usize> {
    docs.iter().flat_map(|d| vocab.encode(&d.text)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub inputs: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
}

/// Endless seeded sampler of shift-by-one windows over a token stream.
#[derive(Debug, Clone)]
pub struct BatchStream {
    stream: Vec<usize>,
    context_len: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BatchStream {
    pub fn new(stream: Vec<usize>, context_len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if stream.len() <= context_len {
            return Err(Error::InsufficientData(format!(
                "token stream of {} ids is not longer than context {context_len}",
                stream.len()
            )));
        }
        Ok(BatchStream {
            stream,
            context_len,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn stream(&self) -> &[usize] {
        &self.stream
    }
}

impl Iterator for BatchStream {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let t = self.context_len;
        let last_start = self.stream.len() - t - 1;
        let mut batch = Batch {
            inputs: Vec::with_capacity(self.batch_size),
            targets: Vec::with_capacity(self.batch_size),
        };
        for _ in 0..self.batch_size {
            let s = self.rng.gen_range(0..=last_start);
            batch.inputs.push(self.stream[s..s + t].to_vec());
            batch.targets.push(self.stream[s + 1..s + t + 1].to_vec());
        }
        Some(batch)
    }
}

pub fn make_stream(
    docs: &[TaggedDocument],
    vocab: &Vocabulary,
    context_len: usize,
    batch_size: usize,
    seed: u64,
) -> Result<BatchStream> {
    BatchStream::new(encode_stream(docs, vocab), context_len, batch_size, seed)
}

/// One bias-corrected Adam update. Gradients are first clipped to
/// `grad_clip_norm` (global L2 norm) when set. Returns the pre-clip norm.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &mut [Vec<f64>],
    state: &mut OptimizerState,
    config: &TrainConfig,
) -> Result<f64> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Shape("gradient/moment count does not match parameters".into()));
    }
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::Divergence {
            step: state.t + 1,
            reason: "non-finite gradient".into(),
        });
    }
    if let Some(max) = config.grad_clip_norm {
        if norm > max {
            let f = max / norm;
            grads.iter_mut().flatten().for_each(|g| *g *= f);
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (k, p) in params.tensors_mut().iter_mut().enumerate() {
        let (m, v, g) = (&mut state.m[k], &mut state.v[k], &grads[k]);
        if m.len() != p.len() || g.len() != p.len() {
            return Err(Error::Shape(format!("parameter {k} length mismatch in adam_step")));
        }
        for (i, x) in p.data_mut().iter_mut().enumerate() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            *x -= config.learning_rate * mhat / (vhat.sqrt() + config.eps);
        }
    }
    Ok(norm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub step: u64,
    /// Mean loss over the steps since the previous entry.
    pub loss: f64,
    pub tokens_per_sec: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub log: Vec<LogEntry>,
    /// Loss of every step run in this invocation.
    pub losses: Vec<f64>,
    pub checkpoint: Option<PathBuf>,
    pub total_steps: u64,
    pub elapsed_secs: f64,
}

/// A fresh checkpoint for `run` over `vocab`, parameters drawn from `run.train.seed`.
pub fn init_checkpoint(run: &RunConfig, vocab: Vocabulary) -> Result<Checkpoint> {
    let config = run.model_config(vocab.size())?;
    let mut ckpt = Checkpoint::new(Model::init(config, run.train.seed)?, vocab)?;
    ckpt.meta.seed = run.train.seed;
    Ok(ckpt)
}

/// Where and how to persist progress.
#[derive(Default)]
pub struct Sink<'a> {
    pub out: Option<&'a Path>,
    /// Receives one `step<TAB>loss` line per step.
    pub loss_log: Option<&'a mut dyn Write>,
}

fn step_seed(seed: u64, step: u64) -> u64 {
    seed ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Trains `ckpt` in place until it has taken `config.max_steps` steps.
///
/// Resuming a checkpoint with optimizer state continues the same batch and
/// dropout sequence, so an interrupted run matches an uninterrupted one.
/// On divergence the error is returned and the file at `sink.out` keeps the
/// last periodic save.
pub fn train(
    ckpt: &mut Checkpoint,
    docs: &[TaggedDocument],
    config: &TrainConfig,
    mut sink: Sink<'_>,
) -> Result<TrainReport> {
    config.validate()?;
    ckpt.check_compatible()?;
    if let ModelConfig::Transformer(c) = ckpt.model.config() {
        if config.context_len > c.context_len {
            return Err(Error::ContextOverflow {
                len: config.context_len,
                context_len: c.context_len,
            });
        }
    }
    let started = Instant::now();
    let mut stream = make_stream(docs, &ckpt.vocab, config.context_len, config.batch_size, config.seed)?;
    let mut opt = ckpt
        .optimizer
        .take()
        .unwrap_or_else(|| OptimizerState::zeros(ckpt.model.params()));
    let done = ckpt.meta.steps;
    if opt.t != done {
        return Err(Error::Checkpoint(format!(
            "optimizer has taken {} steps but checkpoint records {done}",
            opt.t
        )));
    }
    for _ in 0..done {
        stream.next();
    }

    let mut report = TrainReport {
        log: Vec::new(),
        losses: Vec::new(),
        checkpoint: None,
        total_steps: done,
        elapsed_secs: 0.0,
    };
    let tokens_per_step = (config.batch_size * config.context_len) as f64;
    let mut window = (0.0, 0u64, Instant::now());

    for step in done + 1..=config.max_steps {
        let batch = stream.next().expect("batch stream is endless");
        let mut g = Graph::training(step_seed(config.seed, step));
        let bound = ckpt.model.params().bind(&mut g, true);
        let logits = ckpt.model.config().forward(&mut g, &bound, &batch.inputs)?;
        let targets: Vec<usize> = batch.targets.concat();
        let loss_var = g.cross_entropy(logits, &targets)?;
        let loss = g.value(loss_var).data()[0];
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step,
                reason: format!("loss is {loss}"),
            });
        }
        g.backward(loss_var)?;
        let mut grads = bound.grads(&g);
        drop(g);
        adam_step(ckpt.model.params_mut(), &mut grads, &mut opt, config).map_err(|e| match e {
            Error::Divergence { reason, .. } => Error::Divergence { step, reason },
            other => other,
        })?;

        report.losses.push(loss);
        report.total_steps = step;
        ckpt.meta.steps = step;
        ckpt.meta.final_loss = Some(loss);
        if let Some(w) = sink.loss_log.as_mut() {
            writeln!(w, "{step}\t{loss}").map_err(|e| Error::io(Path::new("<loss log>"), e))?;
        }
        window.0 += loss;
        window.1 += 1;
        if step % config.log_every == 0 || step == config.max_steps {
            let secs = window.2.elapsed().as_secs_f64().max(1e-9);
            report.log.push(LogEntry {
                step,
                loss: window.0 / window.1 as f64,
                tokens_per_sec: tokens_per_step * window.1 as f64 / secs,
            });
            window = (0.0, 0, Instant::now());
        }
        if let Some(out) = sink.out {
            if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 && step != config.max_steps {
                ckpt.optimizer = Some(opt.clone());
                ckpt.save(out)?;
                ckpt.optimizer = None;
            }
        }
    }

    ckpt.optimizer = Some(opt);
    if let Some(out) = sink.out {
        ckpt.save(out)?;
        report.checkpoint = Some(out.to_path_buf());
    }
    report.elapsed_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

/// `-ln p(stream[i+1] | stream[..=i])` for every position, in eval mode.
///
/// The LSTM reads the whole stream with its state carried across chunks.
/// The transformer scores overlapping windows of `context_len` advanced by
/// half a window, so every token after the first window is predicted from at
/// least `context_len / 2` tokens of context.
pub fn token_losses(model: &Model, stream: &[usize]) -> Result<Vec<f64>> {
    if stream.len() < 2 {
        return Err(Error::InsufficientData("need at least two tokens to score".into()));
    }
    let n = stream.len() - 1;
    let mut out = Vec::with_capacity(n);
    let nll_rows = |logits: &crate::nn::Tensor, rows: std::ops::Range<usize>, targets: &[usize], out: &mut Vec<f64>| {
        for (r, &t) in rows.zip(targets) {
            let row = logits.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            out.push(lse - row[t]);
        }
    };
    match model.config() {
        ModelConfig::Lstm(c) => {
            let mut dec = model.decoder();
            for start in (0..n).step_by(c.context_len) {
                let end = (start + c.context_len).min(n);
                let logits = dec.feed_all(&stream[start..end])?;
                nll_rows(&logits, 0..end - start, &stream[start + 1..end + 1], &mut out);
            }
        }
        ModelConfig::Transformer(c) => {
            let t = c.context_len;
            let stride = (t / 2).max(1);
            let mut scored = 0;
            while scored < n {
                let end = if scored == 0 { t.min(n) } else { (scored + stride).min(n) };
                let start = end.saturating_sub(t);
                let logits = model.logits(&stream[start..end])?;
                nll_rows(&logits, scored - start..end - start, &stream[scored + 1..end + 1], &mut out);
                scored = end;
            }
        }
    }
    debug_assert_eq!(out.len(), n);
    Ok(out)
}

/// `exp` of the mean next-token cross-entropy over the concatenated documents.
pub fn perplexity(model: &Model, vocab: &Vocabulary, docs: &[TaggedDocument]) -> Result<f64> {
    if docs.is_empty() {
        return Err(Error::InsufficientData("no documents to score".into()));
    }
    let losses = token_losses(model, &encode_stream(docs, vocab))?;
    Ok((losses.iter().sum::<f64>() / losses.len() as f64).exp())
}
