//! Cleaning, length statistics, length windowing and short-document merging.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::record::RecipeRecord;
use super::tagged::{serialize, TaggedDocument};
use crate::error::{Error, Result};

pub const DEFAULT_HARD_CAP: usize = 2000;
pub const DEFAULT_BIN_WIDTH: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectReason {
    /// Violates a record invariant.
    Incomplete(String),
    /// Same normalized title and ingredient names as an earlier record.
    Redundant { duplicate_of: String },
    /// Reuses the id of an earlier record.
    DuplicateId,
}

impl RejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::Incomplete(_) => "incomplete",
            RejectReason::Redundant { .. } => "redundant",
            RejectReason::DuplicateId => "duplicate-id",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::Incomplete(why) => write!(f, "incomplete ({why})"),
            RejectReason::Redundant { duplicate_of } => write!(f, "redundant (of {duplicate_of})"),
            RejectReason::DuplicateId => f.write_str("duplicate-id"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanReport {
    pub kept: Vec<RecipeRecord>,
    pub rejected: Vec<(String, RejectReason)>,
}

pub(crate) fn normalize_key(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn redundancy_key(r: &RecipeRecord) -> (String, Vec<String>) {
    let mut names: Vec<String> = r.ingredients.iter().map(|l| normalize_key(&l.name)).collect();
    names.sort_unstable();
    (normalize_key(&r.title), names)
}

/// Drops incomplete records and later copies of redundant ones.
pub fn clean(records: &[RecipeRecord]) -> CleanReport {
    let mut seen: HashMap<(String, Vec<String>), &str> = HashMap::new();
    let mut ids: HashSet<&str> = HashSet::new();
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for r in records {
        if let Err(why) = r.validate() {
            rejected.push((r.id.clone(), RejectReason::Incomplete(why)));
            continue;
        }
        if let Some(first) = seen.get(&redundancy_key(r)) {
            rejected.push((
                r.id.clone(),
                RejectReason::Redundant {
                    duplicate_of: first.to_string(),
                },
            ));
            continue;
        }
        if !ids.insert(r.id.as_str()) {
            rejected.push((r.id.clone(), RejectReason::DuplicateId));
            continue;
        }
        seen.insert(redundancy_key(r), r.id.as_str());
        kept.push(r.clone());
    }
    CleanReport { kept, rejected }
}

pub fn serialize_all(records: &[RecipeRecord]) -> Result<Vec<TaggedDocument>> {
    records.iter().map(serialize).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub start: usize,
    pub bin_width: usize,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub n: usize,
    pub mean_len: f64,
    /// Population standard deviation.
    pub std_len: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub histogram: Histogram,
}

impl CorpusStats {
    pub fn from_lengths(lengths: &[usize], bin_width: usize) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::EmptyCorpus("no documents for length statistics".into()));
        }
        let bin_width = bin_width.max(1);
        // Welford's update keeps the variance accurate for long corpora
        let (mut mean, mut m2) = (0.0f64, 0.0f64);
        for (k, &len) in lengths.iter().enumerate() {
            let x = len as f64;
            let delta = x - mean;
            mean += delta / (k + 1) as f64;
            m2 += delta * (x - mean);
        }
        let n = lengths.len();
        let min_len = *lengths.iter().min().expect("nonempty");
        let max_len = *lengths.iter().max().expect("nonempty");
        let mut counts = vec![0; (max_len - min_len) / bin_width + 1];
        for &len in lengths {
            counts[(len - min_len) / bin_width] += 1;
        }
        Ok(CorpusStats {
            n,
            mean_len: mean,
            std_len: (m2 / n as f64).max(0.0).sqrt(),
            min_len,
            max_len,
            histogram: Histogram {
                start: min_len,
                bin_width,
                counts,
            },
        })
    }

    /// Longest document kept: `min(hard_cap, μ + 2σ)`.
    pub fn upper_bound(&self, hard_cap: usize) -> f64 {
        (hard_cap as f64).min(self.mean_len + 2.0 * self.std_len)
    }

    /// Documents shorter than `max(1, μ − 2σ)` fall below the window.
    pub fn lower_bound(&self) -> f64 {
        (self.mean_len - 2.0 * self.std_len).max(1.0)
    }

    /// Documents shorter than `max(1, μ − 3σ)` are merge candidates.
    pub fn merge_threshold(&self) -> f64 {
        (self.mean_len - 3.0 * self.std_len).max(1.0)
    }

    /// Merged documents grow until they reach `μ − σ`.
    pub fn merge_target(&self) -> f64 {
        self.mean_len - self.std_len
    }
}

pub fn length_stats(docs: &[TaggedDocument]) -> Result<CorpusStats> {
    let lengths: Vec<usize> = docs.iter().map(|d| d.char_len).collect();
    CorpusStats::from_lengths(&lengths, DEFAULT_BIN_WIDTH)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSelection {
    pub kept: Vec<TaggedDocument>,
    pub dropped: Vec<TaggedDocument>,
    /// Kept documents below `μ − 2σ`; retained for merging.
    pub short: usize,
}

/// Drops documents longer than `min(hard_cap, μ + 2σ)`. Short documents are
/// kept so that [`merge_short`] can combine them.
pub fn select_window(docs: &[TaggedDocument], stats: &CorpusStats, hard_cap: usize) -> WindowSelection {
    let upper = stats.upper_bound(hard_cap);
    let lower = stats.lower_bound();
    let mut sel = WindowSelection {
        kept: Vec::new(),
        dropped: Vec::new(),
        short: 0,
    };
    for d in docs {
        if d.char_len as f64 > upper {
            sel.dropped.push(d.clone());
        } else {
            if (d.char_len as f64) < lower {
                sel.short += 1;
            }
            sel.kept.push(d.clone());
        }
    }
    sel
}

/// Greedily concatenates documents shorter than `max(1, μ − 3σ)`, in corpus
/// order, until each merged document first reaches `μ − σ`. Other documents
/// pass through. A merged document is emitted at the position of the short
/// document that completed it; a leftover run is emitted last.
pub fn merge_short(docs: &[TaggedDocument], stats: &CorpusStats) -> Vec<TaggedDocument> {
    let threshold = stats.merge_threshold();
    let target = stats.merge_target();
    let mut out = Vec::with_capacity(docs.len());
    let mut acc: Option<TaggedDocument> = None;
    for d in docs {
        if (d.char_len as f64) >= threshold {
            out.push(d.clone());
            continue;
        }
        let merged = match acc.take() {
            Some(mut a) => {
                a.concat(d);
                a
            }
            None => d.clone(),
        };
        if merged.char_len as f64 >= target {
            out.push(merged);
        } else {
            acc = Some(merged);
        }
    }
    out.extend(acc);
    out
}

/// True for roughly one record in ten, decided by a hash of the id so the
/// split is stable across runs and machines.
pub fn is_heldout(id: &str) -> bool {
    let digest = Sha256::digest(id.as_bytes());
    u16::from_be_bytes([digest[0], digest[1]]) % 10 == 0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrepOptions {
    pub hard_cap: usize,
    pub merge: bool,
    pub split_heldout: bool,
}

impl Default for PrepOptions {
    fn default() -> Self {
        PrepOptions {
            hard_cap: DEFAULT_HARD_CAP,
            merge: true,
            split_heldout: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrepSummary {
    pub input: usize,
    pub rejected_incomplete: usize,
    pub rejected_redundant: usize,
    pub heldout: usize,
    pub dropped_over_length: usize,
    pub short: usize,
    pub merged_groups: usize,
    pub output_docs: usize,
    pub mean_len: f64,
    pub std_len: f64,
}

impl fmt::Display for PrepSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "input records      {}", self.input)?;
        writeln!(f, "rejected incomplete {}", self.rejected_incomplete)?;
        writeln!(f, "rejected redundant {}", self.rejected_redundant)?;
        writeln!(f, "held out           {}", self.heldout)?;
        writeln!(f, "dropped (length)   {}", self.dropped_over_length)?;
        writeln!(f, "short (< mu-2sigma) {}", self.short)?;
        writeln!(f, "merged groups      {}", self.merged_groups)?;
        writeln!(f, "output documents   {}", self.output_docs)?;
        writeln!(f, "mean length (mu)   {:.3}", self.mean_len)?;
        write!(f, "std length (sigma) {:.3}", self.std_len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub docs: Vec<TaggedDocument>,
    pub heldout: Vec<RecipeRecord>,
    pub clean: CleanReport,
    pub stats: CorpusStats,
    pub summary: PrepSummary,
}

/// clean → (split) → serialize → window → merge.
pub fn prepare(records: &[RecipeRecord], opts: PrepOptions) -> Result<Prepared> {
    let cleaned = clean(records);
    let (train, heldout): (Vec<RecipeRecord>, Vec<RecipeRecord>) = if opts.split_heldout {
        cleaned.kept.iter().cloned().partition(|r| !is_heldout(&r.id))
    } else {
        (cleaned.kept.clone(), Vec::new())
    };
    let docs = serialize_all(&train)?;
    let stats = length_stats(&docs)?;
    let window = select_window(&docs, &stats, opts.hard_cap);
    let (out, merged_groups) = if opts.merge && !window.kept.is_empty() {
        let kept_stats = length_stats(&window.kept)?;
        let merged = merge_short(&window.kept, &kept_stats);
        let groups = merged.iter().filter(|d| d.recipes > 1).count();
        (merged, groups)
    } else {
        (window.kept.clone(), 0)
    };
    let heldout: Vec<RecipeRecord> = heldout
        .into_iter()
        .filter(|r| serialize(r).map_or(false, |d| d.char_len <= opts.hard_cap))
        .collect();
    let count = |tag: &str| cleaned.rejected.iter().filter(|(_, r)| r.as_str() == tag).count();
    let summary = PrepSummary {
        input: records.len(),
        rejected_incomplete: count("incomplete"),
        rejected_redundant: count("redundant") + count("duplicate-id"),
        heldout: heldout.len(),
        dropped_over_length: window.dropped.len(),
        short: window.short,
        merged_groups,
        output_docs: out.len(),
        mean_len: stats.mean_len,
        std_len: stats.std_len,
    };
    Ok(Prepared {
        docs: out,
        heldout,
        clean: cleaned,
        stats,
        summary,
    })
}

/// Lowercased, deduplicated, sorted ingredient names.
pub fn ingredient_index(records: &[RecipeRecord]) -> Vec<String> {
    let mut names: Vec<String> = records
        .iter()
        .flat_map(|r| r.ingredients.iter().map(|l| normalize_key(&l.name)))
        .filter(|n| !n.is_empty())
        .collect();
    names.sort_unstable();
    names.dedup();
    names
}
