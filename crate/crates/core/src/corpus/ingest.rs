//! Reading and writing raw recipe exports.
//!
//! Two formats are supported:
//!
//! * `record-lines`: one JSON object per line with `id`, `title`,
//!   `ingredients` (`[{quantity: "n/d" | null, unit, name}]`) and
//!   `instructions` (`[string]`).
//! * `delimited-table`: CSV with header `id,title,ingredients,instructions`.
//!   Ingredient cells hold one `quantity|unit|name` entry per line and
//!   instruction cells one step per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::record::{is_unit, IngredientLine, Quantity, RecipeRecord};
use crate::error::{Error, Result};
use crate::tokenizer::FRACTIONS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    RecordLines,
    DelimitedTable,
}

impl InputFormat {
    /// Guesses from the file extension: `.csv`/`.tsv` are tables, anything
    /// else is record-lines.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") | Some("tsv") => InputFormat::DelimitedTable,
            _ => InputFormat::RecordLines,
        }
    }
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "record-lines" | "jsonl" => Ok(InputFormat::RecordLines),
            "delimited-table" | "csv" => Ok(InputFormat::DelimitedTable),
            other => Err(Error::Format(format!("unknown corpus format {other:?}"))),
        }
    }
}

/// A row that could not be turned into a record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowReject {
    /// 1-based line (record-lines) or data-row (table) number.
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub records: Vec<RecipeRecord>,
    pub rejects: Vec<RowReject>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawIngredient {
    quantity: Option<String>,
    #[serde(default)]
    unit: String,
    name: String,
}

#[derive(Debug, Deserialize, Serialize)]
struct RawRecord {
    id: String,
    title: String,
    ingredients: Vec<RawIngredient>,
    instructions: Vec<String>,
}

/// Spells unicode vulgar fractions as ASCII, separating them from a
/// preceding digit so `1½` becomes `1 1/2`.
fn ascii_fractions(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match FRACTIONS.iter().find(|f| f.3 == c) {
            Some(f) => {
                if out.ends_with(|p: char| p.is_ascii_digit()) {
                    out.push(' ');
                }
                out.push_str(&format!("{}/{}", f.0, f.1));
            }
            None => out.push(c),
        }
    }
    out
}

fn tidy(s: &str) -> String {
    ascii_fractions(s.trim())
}

fn make_line(quantity: Option<&str>, unit: &str, name: &str) -> Result<IngredientLine> {
    let quantity = match quantity.map(tidy) {
        Some(q) if !q.is_empty() => Some(q.parse::<Quantity>()?),
        _ => None,
    };
    let mut unit = tidy(unit);
    let mut name = tidy(name);
    if !unit.is_empty() && !is_unit(&unit) {
        // unknown units read naturally as part of the name ("2 large eggs")
        name = format!("{unit} {name}").trim().to_owned();
        unit.clear();
    }
    Ok(IngredientLine::new(quantity, unit, name))
}

impl RawRecord {
    fn into_record(self) -> Result<RecipeRecord> {
        let ingredients = self
            .ingredients
            .iter()
            .map(|i| make_line(i.quantity.as_deref(), &i.unit, &i.name))
            .collect::<Result<Vec<_>>>()?;
        Ok(RecipeRecord {
            id: self.id.trim().to_owned(),
            title: tidy(&self.title),
            ingredients,
            instructions: self.instructions.iter().map(|s| tidy(s)).collect(),
        })
    }

    fn from_record(r: &RecipeRecord) -> Self {
        RawRecord {
            id: r.id.clone(),
            title: r.title.clone(),
            ingredients: r
                .ingredients
                .iter()
                .map(|l| RawIngredient {
                    quantity: l.quantity.map(|q| q.to_string()),
                    unit: l.unit.clone(),
                    name: l.name.clone(),
                })
                .collect(),
            instructions: r.instructions.clone(),
        }
    }
}

fn finish(report: IngestReport, path: &Path) -> Result<IngestReport> {
    if report.records.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "no parseable records in {} ({} rejected rows)",
            path.display(),
            report.rejects.len()
        )));
    }
    Ok(report)
}

pub fn ingest(path: &Path, format: InputFormat) -> Result<IngestReport> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let report = match format {
        InputFormat::RecordLines => read_record_lines(BufReader::new(file), path)?,
        InputFormat::DelimitedTable => read_table(file)?,
    };
    finish(report, path)
}

fn read_record_lines(reader: impl BufRead, path: &Path) -> Result<IngestReport> {
    let mut report = IngestReport {
        records: Vec::new(),
        rejects: Vec::new(),
    };
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<RawRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(|raw| raw.into_record().map_err(|e| e.to_string()));
        match parsed {
            Ok(r) => report.records.push(r),
            Err(reason) => report.rejects.push(RowReject { row: n + 1, reason }),
        }
    }
    Ok(report)
}

fn table_row(row: &csv::StringRecord) -> Result<RecipeRecord> {
    let cell = |i: usize, name: &str| {
        row.get(i)
            .ok_or_else(|| Error::Format(format!("missing column {name}")))
    };
    let ingredients = cell(2, "ingredients")?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|entry| {
            let fields: Vec<&str> = entry.split('|').collect();
            match fields.as_slice() {
                [q, u, n] => make_line(Some(q), u, n),
                _ => Err(Error::Format(format!("bad ingredient entry {entry:?}"))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let instructions = cell(3, "instructions")?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(tidy)
        .collect();
    Ok(RecipeRecord {
        id: cell(0, "id")?.trim().to_owned(),
        title: tidy(cell(1, "title")?),
        ingredients,
        instructions,
    })
}

fn read_table(file: File) -> Result<IngestReport> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Format(e.to_string()))?
        .clone();
    let expected = ["id", "title", "ingredients", "instructions"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Format(format!(
            "table header must be {}",
            expected.join(",")
        )));
    }
    let mut report = IngestReport {
        records: Vec::new(),
        rejects: Vec::new(),
    };
    for (n, row) in rdr.records().enumerate() {
        let parsed = row
            .map_err(|e| Error::Format(e.to_string()))
            .and_then(|row| {
                if row.len() != expected.len() {
                    return Err(Error::Format(format!("expected 4 columns, got {}", row.len())));
                }
                table_row(&row)
            });
        match parsed {
            Ok(r) => report.records.push(r),
            Err(e) => report.rejects.push(RowReject {
                row: n + 1,
                reason: e.to_string(),
            }),
        }
    }
    Ok(report)
}

pub fn export(records: &[RecipeRecord], path: &Path, format: InputFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let io = |e: std::io::Error| Error::io(path, e);
    match format {
        InputFormat::RecordLines => {
            let mut w = BufWriter::new(file);
            for r in records {
                let line = serde_json::to_string(&RawRecord::from_record(r))
                    .map_err(|e| Error::Format(e.to_string()))?;
                writeln!(w, "{line}").map_err(io)?;
            }
            w.flush().map_err(io)?;
        }
        InputFormat::DelimitedTable => {
            let mut w = csv::Writer::from_writer(file);
            let csv_err = |e: csv::Error| Error::Format(e.to_string());
            w.write_record(["id", "title", "ingredients", "instructions"])
                .map_err(csv_err)?;
            for r in records {
                let ingredients: Vec<String> = r
                    .ingredients
                    .iter()
                    .map(|l| {
                        format!(
                            "{}|{}|{}",
                            l.quantity.map(|q| q.to_string()).unwrap_or_default(),
                            l.unit,
                            l.name
                        )
                    })
                    .collect();
                w.write_record([
                    r.id.as_str(),
                    r.title.as_str(),
                    &ingredients.join("\n"),
                    &r.instructions.join("\n"),
                ])
                .map_err(csv_err)?;
            }
            w.flush().map_err(io)?;
        }
    }
    Ok(())
}
