//! BLEU and the generation scoring harness.
//!
//! `BLEU = BP · exp(Σₙ wₙ ln pₙ)` with uniform `wₙ = 1/N`, clipped n-gram
//! precisions `pₙ`, and brevity penalty `BP = 1` if `c > r`, else
//! `exp(1 − r/c)`. Corpus scores pool clipped counts and lengths across all
//! pairs before applying the formula once.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::Serialize;

use crate::corpus::{serialize, strip_tags, RecipeRecord};
use crate::error::{Error, Result};
use crate::generator::{build_prompt, generate, prompt_text, record_ingredients, GeneratedRecipe, SamplingParams};
use crate::nn::Checkpoint;

pub const DEFAULT_MAX_N: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothing {
    None,
    /// Orders with no clipped matches use `(0 + 1) / (total + 1)`.
    #[default]
    AddOne,
}

impl fmt::Display for Smoothing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Smoothing::None => "none",
            Smoothing::AddOne => "add-one",
        })
    }
}

impl FromStr for Smoothing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Smoothing::None),
            "add-one" => Ok(Smoothing::AddOne),
            other => Err(Error::Config(format!("unknown smoothing {other:?} (none or add-one)"))),
        }
    }
}

/// Which part of a recipe the harness scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    /// Title and instructions: what the model wrote after the ingredient
    /// prompt, against the same part of the reference.
    #[default]
    Completion,
    /// The whole document, prompt ingredients included on both sides.
    Document,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Completion => "completion",
            Scope::Document => "document",
        })
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "completion" => Ok(Scope::Completion),
            "document" => Ok(Scope::Document),
            other => Err(Error::Config(format!("unknown scope {other:?} (completion or document)"))),
        }
    }
}

pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

pub fn ngram_counts<'a, S: AsRef<str>>(tokens: &'a [S], n: usize) -> HashMap<Vec<&'a str>, usize> {
    assert!(n >= 1, "n-gram order must be at least 1");
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// `(clipped matches, candidate n-gram total)` for order `n`.
pub fn modified_precision<S: AsRef<str>, R: AsRef<str>>(candidate: &[S], references: &[Vec<R>], n: usize) -> (u64, u64) {
    let cand = ngram_counts(candidate, n);
    let mut max_ref: HashMap<Vec<&str>, usize> = HashMap::new();
    for r in references {
        for (gram, c) in ngram_counts(r, n) {
            let e = max_ref.entry(gram).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let total: usize = cand.values().sum();
    let clipped: usize = cand
        .iter()
        .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
        .sum();
    (clipped as u64, total as u64)
}

/// Reference length closest to `c`, preferring the shorter on ties.
pub fn effective_ref_len(c: usize, ref_lens: &[usize]) -> usize {
    ref_lens
        .iter()
        .copied()
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

/// Sufficient statistics for BLEU: per-order clipped matches and totals,
/// candidate length `c` and effective reference length `r`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BleuCounts {
    pub matches: Vec<u64>,
    pub totals: Vec<u64>,
    pub c: u64,
    pub r: u64,
}

impl BleuCounts {
    pub fn zero(max_n: usize) -> Self {
        BleuCounts {
            matches: vec![0; max_n],
            totals: vec![0; max_n],
            c: 0,
            r: 0,
        }
    }

    pub fn add(&mut self, other: &BleuCounts) {
        for n in 0..self.matches.len() {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.c += other.c;
        self.r += other.r;
    }
}

#[derive(Debug, Clone)]
pub struct EvalPair {
    pub candidate: String,
    pub references: Vec<String>,
}

impl EvalPair {
    pub fn new(candidate: impl Into<String>, references: Vec<String>) -> Result<Self> {
        if references.is_empty() {
            return Err(Error::Validation("an eval pair needs at least one reference".into()));
        }
        Ok(EvalPair {
            candidate: candidate.into(),
            references,
        })
    }

    pub fn counts(&self, max_n: usize) -> BleuCounts {
        let cand = tokenize(&self.candidate);
        let refs: Vec<Vec<&str>> = self.references.iter().map(|r| tokenize(r)).collect();
        let mut counts = BleuCounts::zero(max_n);
        for n in 1..=max_n {
            let (m, t) = modified_precision(&cand, &refs, n);
            counts.matches[n - 1] = m;
            counts.totals[n - 1] = t;
        }
        counts.c = cand.len() as u64;
        let lens: Vec<usize> = refs.iter().map(Vec::len).collect();
        counts.r = effective_ref_len(cand.len(), &lens) as u64;
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuScore {
    pub bleu: f64,
    /// `pₙ` after smoothing, for `n = 1..=max_n`.
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub counts: BleuCounts,
    pub smoothing: Smoothing,
}

/// Applies the BLEU formula to (possibly pooled) counts.
pub fn score_counts(counts: &BleuCounts, smoothing: Smoothing) -> BleuScore {
    let precisions: Vec<f64> = counts
        .matches
        .iter()
        .zip(&counts.totals)
        .map(|(&m, &t)| match (m, smoothing) {
            (0, Smoothing::AddOne) => 1.0 / (t + 1) as f64,
            (_, _) if t == 0 => 0.0,
            (m, _) => m as f64 / t as f64,
        })
        .collect();
    let brevity_penalty = if counts.c == 0 {
        0.0
    } else if counts.c > counts.r {
        1.0
    } else {
        (1.0 - counts.r as f64 / counts.c as f64).exp()
    };
    let bleu = if counts.c == 0 || precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        let w = 1.0 / precisions.len() as f64;
        brevity_penalty * precisions.iter().map(|p| w * p.ln()).sum::<f64>().exp()
    };
    BleuScore {
        bleu,
        precisions,
        brevity_penalty,
        counts: counts.clone(),
        smoothing,
    }
}

pub fn bleu(pair: &EvalPair, max_n: usize, smoothing: Smoothing) -> BleuScore {
    score_counts(&pair.counts(max_n), smoothing)
}

/// Micro-averaged corpus BLEU.
pub fn corpus_bleu(pairs: &[EvalPair], max_n: usize, smoothing: Smoothing) -> Result<BleuScore> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("corpus BLEU needs at least one pair".into()));
    }
    let mut pooled = BleuCounts::zero(max_n);
    for p in pairs {
        pooled.add(&p.counts(max_n));
    }
    Ok(score_counts(&pooled, smoothing))
}

/// One model's row of an evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelRow {
    pub model: String,
    pub samples: usize,
    pub score: BleuScore,
    /// Records whose generation failed and were scored as empty candidates.
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuReport {
    pub max_n: usize,
    pub tokenization: &'static str,
    pub scope: Scope,
    pub rows: Vec<ModelRow>,
}

impl BleuReport {
    /// Two-column table followed by a JSON block with every statistic.
    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.model.len()).max().unwrap_or(0).max(5);
        let mut out = String::new();
        writeln!(out, "{:<width$} | BLEU", "Model").unwrap();
        writeln!(out, "{:-<width$}-|-------", "").unwrap();
        for row in &self.rows {
            writeln!(out, "{:<width$} | {:.3}", row.model, row.score.bleu).unwrap();
        }
        out.push_str("\n--- stats ---\n");
        out.push_str(&serde_json::to_string_pretty(self).expect("report serializes"));
        out.push('\n');
        out
    }
}

/// Reference words for `record`: the tag-stripped document, or in
/// [`Scope::Completion`] only the part after the ingredient prompt.
pub fn reference_text(record: &RecipeRecord, scope: Scope) -> Result<String> {
    let doc = serialize(record)?;
    match scope {
        Scope::Document => Ok(strip_tags(&doc.text)),
        Scope::Completion => {
            let prompt = prompt_text(&record_ingredients(record))?;
            let rest = doc
                .text
                .strip_prefix(&prompt)
                .ok_or_else(|| Error::Format(format!("{}: prompt is not a prefix of its document", record.id)))?;
            Ok(strip_tags(rest))
        }
    }
}

fn candidate_text(ckpt: &Checkpoint, g: &GeneratedRecipe, record: &RecipeRecord, scope: Scope) -> Result<String> {
    match scope {
        Scope::Document => Ok(strip_tags(&g.raw_text)),
        Scope::Completion => {
            let prompt = ckpt.vocab.decode(&build_prompt(&record_ingredients(record), &ckpt.vocab)?)?;
            let rest = g
                .raw_text
                .strip_prefix(&prompt)
                .ok_or_else(|| Error::Format("generated text does not start with its prompt".into()))?;
            Ok(strip_tags(rest))
        }
    }
}

/// Generates from every held-out record's ingredients with every model and
/// scores the tag-stripped output against the record's own text.
pub fn eval_harness(
    models: &[(String, &Checkpoint)],
    heldout: &[RecipeRecord],
    params: &SamplingParams,
    smoothing: Smoothing,
    scope: Scope,
) -> Result<BleuReport> {
    if heldout.is_empty() {
        return Err(Error::InsufficientData("no held-out records to evaluate".into()));
    }
    let references = heldout
        .iter()
        .map(|r| reference_text(r, scope))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(models.len());
    for (id, ckpt) in models {
        let mut pairs = Vec::with_capacity(heldout.len());
        let mut failures = Vec::new();
        for (record, reference) in heldout.iter().zip(&references) {
            let candidate = generate(ckpt, id, &record_ingredients(record), params)
                .and_then(|g| candidate_text(ckpt, &g, record, scope));
            let candidate = candidate.unwrap_or_else(|e| {
                failures.push(format!("{}: {e}", record.id));
                String::new()
            });
            pairs.push(EvalPair::new(candidate, vec![reference.clone()])?);
        }
        rows.push(ModelRow {
            model: id.clone(),
            samples: pairs.len(),
            score: corpus_bleu(&pairs, DEFAULT_MAX_N, smoothing)?,
            failures,
        });
    }
    Ok(BleuReport {
        max_n: DEFAULT_MAX_N,
        tokenization: "whitespace",
        scope,
        rows,
    })
}
