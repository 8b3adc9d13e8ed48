//! Ingredient-conditioned sampling.
//!
//! A prompt is the canonical document grammar cut off right after the title
//! tag, so the model's first job is to write a title:
//!
//! ```text
//! <RECIPE_START> <INGR_START> salt <NEXT_INGR> flour <INGR_END> <TITLE_START>
//! ```

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{parse, RecipeRecord, RecoveredSections};
use crate::error::{Error, Result};
use crate::nn::Checkpoint;
use crate::tokenizer::{
    normalize_numbers, Vocabulary, INGR_END, INGR_START, NEXT_INGR, RECIPE_END, RECIPE_START, TITLE_START,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    /// 0 means greedy argmax.
    pub temperature: f64,
    /// 0 disables top-k filtering.
    pub top_k: usize,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 0.8,
            top_k: 40,
            max_new_tokens: 1024,
            seed: 0,
        }
    }
}

impl SamplingParams {
    pub fn greedy(max_new_tokens: usize) -> Self {
        SamplingParams {
            temperature: 0.0,
            top_k: 0,
            max_new_tokens,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Validation(format!(
                "temperature {} must be finite and nonnegative",
                self.temperature
            )));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::Validation("max_new_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

/// Prompt text for an ingredient list; see the module docs.
pub fn prompt_text<S: AsRef<str>>(ingredients: &[S]) -> Result<String> {
    if ingredients.is_empty() {
        return Err(Error::Validation("at least one ingredient is required".into()));
    }
    let mut out = format!("{RECIPE_START} {INGR_START}");
    for (n, ing) in ingredients.iter().enumerate() {
        let words: Vec<&str> = ing.as_ref().split_whitespace().collect();
        if words.is_empty() {
            return Err(Error::Validation(format!("ingredient {n} is empty")));
        }
        if n > 0 {
            out.push(' ');
            out.push_str(NEXT_INGR);
        }
        out.push(' ');
        out.push_str(&normalize_numbers(&words.join(" ")));
    }
    out.push_str(&format!(" {INGR_END} {TITLE_START}"));
    Ok(out)
}

pub fn build_prompt<S: AsRef<str>>(ingredients: &[S], vocab: &Vocabulary) -> Result<Vec<usize>> {
    Ok(vocab.encode(&prompt_text(ingredients)?))
}

/// Ingredient strings that reproduce a record's ingredient section.
pub fn record_ingredients(record: &RecipeRecord) -> Vec<String> {
    record.ingredients.iter().map(|l| l.display_text()).collect()
}

fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in logits.iter().enumerate() {
        if x > logits[best] {
            best = i;
        }
    }
    best
}

/// Draws the next token id. Temperature 0 or `top_k == 1` is argmax with
/// the lowest id winning ties; otherwise logits are divided by the
/// temperature, cut to the `top_k` largest (lower id first on ties) and
/// sampled from their softmax.
pub fn sample_next<R: Rng>(logits: &[f64], params: &SamplingParams, rng: &mut R) -> Result<usize> {
    if logits.is_empty() {
        return Err(Error::Shape("no logits to sample from".into()));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NanPropagation("sample_next"));
    }
    if params.temperature == 0.0 || params.top_k == 1 {
        return Ok(argmax(logits));
    }
    let mut cand: Vec<usize> = (0..logits.len()).collect();
    if params.top_k > 0 && params.top_k < logits.len() {
        cand.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
        cand.truncate(params.top_k);
        cand.sort_unstable();
    }
    let scaled: Vec<f64> = cand.iter().map(|&i| logits[i] / params.temperature).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (&id, w) in cand.iter().zip(&weights) {
        if u < *w {
            return Ok(id);
        }
        u -= w;
    }
    // rounding left u just past the last bucket
    Ok(*cand.last().expect("nonempty candidates"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinishReason {
    EndTag,
    LengthLimit,
}

impl fmt::Display for FinishReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FinishReason::EndTag => "end-tag",
            FinishReason::LengthLimit => "length-limit",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedRecipe {
    /// Prompt plus completion, decoded.
    pub raw_text: String,
    /// Whatever the parser recovered; partial when `malformed`.
    pub recipe: RecipeRecord,
    pub malformed: bool,
    pub sections: RecoveredSections,
    pub finish_reason: FinishReason,
    pub tokens_generated: usize,
    pub params: SamplingParams,
    pub model: String,
}

impl fmt::Display for GeneratedRecipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", if self.recipe.title.is_empty() { "(untitled)" } else { &self.recipe.title })?;
        writeln!(f, "\nIngredients:")?;
        for line in &self.recipe.ingredients {
            writeln!(f, "  - {}", line.display_text())?;
        }
        writeln!(f, "\nInstructions:")?;
        for (n, step) in self.recipe.instructions.iter().enumerate() {
            writeln!(f, "  {}. {step}", n + 1)?;
        }
        write!(
            f,
            "\n[{} tokens, {}{}]",
            self.tokens_generated,
            self.finish_reason,
            if self.malformed { ", malformed" } else { "" }
        )
    }
}

/// Extends the prompt for `ingredients` until the recipe-end tag or
/// `max_new_tokens`, then parses the result.
pub fn generate<S: AsRef<str>>(
    ckpt: &Checkpoint,
    model_id: &str,
    ingredients: &[S],
    params: &SamplingParams,
) -> Result<GeneratedRecipe> {
    params.validate()?;
    ckpt.check_compatible()?;
    let vocab = &ckpt.vocab;
    let prompt = build_prompt(ingredients, vocab)?;
    let end_id = vocab.special_id(RECIPE_END);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut dec = ckpt.model.decoder();
    let mut logits = dec.feed(&prompt)?;
    let mut out = prompt;
    let mut finish = FinishReason::LengthLimit;
    let mut generated = 0;
    while generated < params.max_new_tokens {
        let id = sample_next(&logits, params, &mut rng)?;
        out.push(id);
        generated += 1;
        if id == end_id {
            finish = FinishReason::EndTag;
            break;
        }
        if generated < params.max_new_tokens {
            logits = dec.feed(&[id])?;
        }
    }
    let raw_text = vocab.decode(&out)?;
    let parsed = parse(&raw_text)?;
    Ok(GeneratedRecipe {
        raw_text,
        recipe: parsed.record,
        malformed: parsed.malformed,
        sections: parsed.sections,
        finish_reason: finish,
        tokens_generated: generated,
        params: *params,
        model: model_id.to_owned(),
    })
}
