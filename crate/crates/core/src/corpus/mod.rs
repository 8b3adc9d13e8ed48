//! Recipe records, the tagged training format, and corpus preparation.

pub mod ingest;
pub mod prep;
pub mod record;
pub mod synthetic;
pub mod tagged;

pub use ingest::{export, ingest, IngestReport, InputFormat, RowReject};
pub use prep::{
    clean, ingredient_index, is_heldout, length_stats, merge_short, prepare, select_window,
    CleanReport, CorpusStats, PrepOptions, PrepSummary, Prepared, RejectReason, WindowSelection,
};
pub use record::{IngredientLine, Quantity, RecipeRecord};
pub use tagged::{parse, parse_all, serialize, strip_tags, ParsedRecipe, RecoveredSections, TaggedDocument};

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Writes prepared documents one per line.
pub fn write_documents(docs: &[TaggedDocument], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in docs {
        writeln!(w, "{}", d.text).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_documents(path: &Path) -> Result<Vec<TaggedDocument>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            docs.push(TaggedDocument::new(line));
        }
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus(format!("{} holds no documents", path.display())));
    }
    Ok(docs)
}

/// Writes an ingredient index one name per line.
pub fn write_ingredient_index(names: &[String], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for n in names {
        writeln!(w, "{n}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads an ingredient index, lowercasing, deduplicating and sorting it
/// whatever order the file is in.
pub fn read_ingredient_index(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut names: Vec<String> = text
        .lines()
        .map(prep::normalize_key)
        .filter(|n| !n.is_empty())
        .collect();
    names.sort_unstable();
    names.dedup();
    Ok(names)
}
