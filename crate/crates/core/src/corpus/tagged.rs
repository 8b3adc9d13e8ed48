//! The tagged single-string recipe grammar:
//!
//! ```text
//! <RECIPE_START> <INGR_START> {line} <NEXT_INGR> {line} <INGR_END> <TITLE_START> {title} <TITLE_END>
//!     <INSTR_START> {step} <NEXT_INSTR> {step} <INSTR_END> <RECIPE_END>
//! ```
//!
//! Ingredients come first so that an ingredient-list prompt is a prefix of a
//! complete document. Payloads are separated from tags by single spaces and
//! have inventory fractions replaced by fraction tokens.

use serde::{Deserialize, Serialize};

use super::record::{parse_ingredient_words, IngredientLine, RecipeRecord};
use crate::error::{Error, Result};
use crate::tokenizer::{
    denormalize_numbers, normalize_numbers, CONTROL_TOKENS, INGR_END, INGR_START, INSTR_END,
    INSTR_START, NEXT_INGR, NEXT_INSTR, RECIPE_END, RECIPE_START, TITLE_END, TITLE_START,
};

/// One or more tagged recipes concatenated into a single training string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedDocument {
    pub text: String,
    pub char_len: usize,
    /// Number of recipes embedded in `text` (greater than one after merging).
    pub recipes: usize,
}

impl TaggedDocument {
    pub fn new(text: String) -> Self {
        let recipes = text.matches(RECIPE_START).count();
        TaggedDocument {
            char_len: text.chars().count(),
            text,
            recipes,
        }
    }

    /// Appends another document directly after this one's end tag.
    pub fn concat(&mut self, other: &TaggedDocument) {
        self.text.push_str(&other.text);
        self.char_len += other.char_len;
        self.recipes += other.recipes;
    }

    pub fn is_well_formed(&self) -> bool {
        self.text.starts_with(RECIPE_START)
            && self.text.ends_with(RECIPE_END)
            && self.char_len == self.text.chars().count()
    }
}

pub(crate) fn render_ingredient(line: &IngredientLine) -> String {
    let mut parts = Vec::with_capacity(3);
    if let Some(q) = line.quantity {
        parts.push(q.render());
    }
    if !line.unit.is_empty() {
        parts.push(normalize_numbers(&line.unit));
    }
    parts.push(normalize_numbers(&line.name));
    parts.join(" ")
}

pub(crate) fn denormalize_line(mut line: IngredientLine) -> IngredientLine {
    line.unit = denormalize_numbers(&line.unit);
    line.name = denormalize_numbers(&line.name);
    line
}

/// Renders a valid record in the canonical grammar.
pub fn serialize(record: &RecipeRecord) -> Result<TaggedDocument> {
    record
        .validate()
        .map_err(|e| Error::Validation(format!("record {:?}: {e}", record.id)))?;
    let mut out = String::new();
    let mut push = |s: &str| {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(s);
    };
    push(RECIPE_START);
    push(INGR_START);
    for (n, line) in record.ingredients.iter().enumerate() {
        if n > 0 {
            push(NEXT_INGR);
        }
        push(&render_ingredient(line));
    }
    push(INGR_END);
    push(TITLE_START);
    push(&normalize_numbers(&record.title));
    push(TITLE_END);
    push(INSTR_START);
    for (n, step) in record.instructions.iter().enumerate() {
        if n > 0 {
            push(NEXT_INSTR);
        }
        push(&normalize_numbers(step));
    }
    push(INSTR_END);
    push(RECIPE_END);
    Ok(TaggedDocument::new(out))
}

/// Which sections of a document were recovered completely.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveredSections {
    pub ingredients: bool,
    pub title: bool,
    pub instructions: bool,
}

/// Result of parsing tagged text. `record` holds whatever was recovered; its
/// id is empty because the grammar does not carry ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedRecipe {
    pub record: RecipeRecord,
    pub malformed: bool,
    pub sections: RecoveredSections,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Piece<'a> {
    Tag(&'static str),
    Text(&'a str),
}

fn control_pieces(text: &str) -> Vec<Piece<'_>> {
    let mut pieces = Vec::new();
    let mut run_start = 0;
    let mut pos = 0;
    while pos < text.len() {
        let rest = &text[pos..];
        match CONTROL_TOKENS.iter().find(|t| rest.starts_with(**t)) {
            Some(tag) => {
                let run = text[run_start..pos].trim();
                if !run.is_empty() {
                    pieces.push(Piece::Text(run));
                }
                pieces.push(Piece::Tag(tag));
                pos += tag.len();
                run_start = pos;
            }
            None => pos += rest.chars().next().map_or(1, char::len_utf8),
        }
    }
    let run = text[run_start..].trim();
    if !run.is_empty() {
        pieces.push(Piece::Text(run));
    }
    pieces
}

/// Parses the first recipe in `text`, tolerating truncation and stray tags.
pub fn parse(text: &str) -> Result<ParsedRecipe> {
    let start = text
        .find(RECIPE_START)
        .ok_or_else(|| Error::Unparseable(format!("no {RECIPE_START} tag")))?;
    let pieces = control_pieces(&text[start..]);
    let mut it = pieces.into_iter().skip(1).peekable();

    let mut record = RecipeRecord {
        id: String::new(),
        title: String::new(),
        ingredients: Vec::new(),
        instructions: Vec::new(),
    };
    let mut sections = RecoveredSections::default();
    let mut clean = true;

    // Reads `payload (sep payload)* end`, returning payloads and whether the
    // section closed properly with every payload present.
    let mut section = |open: &str, sep: Option<&str>, close: &str, out: &mut Vec<String>| -> bool {
        if it.next() != Some(Piece::Tag(tag_static(open))) {
            return false;
        }
        let mut expect_payload = true;
        let mut ok = true;
        loop {
            match it.peek().copied() {
                Some(Piece::Text(t)) => {
                    if !expect_payload {
                        ok = false;
                    }
                    out.push(t.to_owned());
                    expect_payload = false;
                    it.next();
                }
                Some(Piece::Tag(t)) if Some(t) == sep => {
                    if expect_payload {
                        ok = false;
                    }
                    expect_payload = true;
                    it.next();
                }
                Some(Piece::Tag(t)) if t == close => {
                    it.next();
                    return ok && !expect_payload;
                }
                _ => return false,
            }
        }
    };

    let mut lines = Vec::new();
    sections.ingredients = section(INGR_START, Some(NEXT_INGR), INGR_END, &mut lines);
    for raw in &lines {
        match parse_ingredient_words(raw) {
            Some(line) => record.ingredients.push(denormalize_line(line)),
            None => clean = false,
        }
    }
    if sections.ingredients {
        let mut titles = Vec::new();
        sections.title = section(TITLE_START, None, TITLE_END, &mut titles);
        record.title = denormalize_numbers(&titles.join(" "));
        if sections.title {
            let mut steps = Vec::new();
            sections.instructions = section(INSTR_START, Some(NEXT_INSTR), INSTR_END, &mut steps);
            record.instructions = steps.iter().map(|s| denormalize_numbers(s)).collect();
        }
    }
    let closed = sections.instructions && it.next() == Some(Piece::Tag(RECIPE_END));
    let malformed = !(clean && closed);
    Ok(ParsedRecipe {
        record,
        malformed,
        sections,
    })
}

fn tag_static(tag: &str) -> &'static str {
    CONTROL_TOKENS
        .iter()
        .find(|t| **t == tag)
        .copied()
        .expect("control tag")
}

/// Parses every recipe embedded in a (possibly merged) document.
pub fn parse_all(text: &str) -> Result<Vec<ParsedRecipe>> {
    let starts: Vec<usize> = text.match_indices(RECIPE_START).map(|(i, _)| i).collect();
    if starts.is_empty() {
        return Err(Error::Unparseable(format!("no {RECIPE_START} tag")));
    }
    starts
        .iter()
        .enumerate()
        .map(|(n, &s)| {
            let end = starts.get(n + 1).copied().unwrap_or(text.len());
            parse(&text[s..end])
        })
        .collect()
}

/// Removes control tags and turns fraction tokens back into ASCII fractions,
/// leaving whitespace-separated words.
pub fn strip_tags(text: &str) -> String {
    let pieces = control_pieces(text);
    let words: Vec<&str> = pieces
        .iter()
        .filter_map(|p| match p {
            Piece::Text(t) => Some(*t),
            Piece::Tag(_) => None,
        })
        .collect();
    denormalize_numbers(&words.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::record::Quantity;
    use proptest::prelude::*;

    fn minimal() -> RecipeRecord {
        RecipeRecord {
            id: "m1".into(),
            title: "Salted Rice".into(),
            ingredients: vec![IngredientLine::new(
                Some(Quantity::new(1, 2).unwrap()),
                "cup",
                "rice",
            )],
            instructions: vec!["Boil with salt.".into()],
        }
    }

    const GOLDEN: &str = "<RECIPE_START> <INGR_START> <F_1_2> cup rice <INGR_END> <TITLE_START> Salted Rice <TITLE_END> <INSTR_START> Boil with salt. <INSTR_END> <RECIPE_END>";

    #[test]
    fn minimal_record_matches_golden() {
        let doc = serialize(&minimal()).unwrap();
        assert_eq!(doc.text, GOLDEN);
        assert_eq!(doc.char_len, GOLDEN.chars().count());
        assert_eq!(doc.recipes, 1);
        assert!(doc.is_well_formed());
    }

    #[test]
    fn serialize_is_deterministic() {
        let r = minimal();
        assert_eq!(serialize(&r).unwrap().text, serialize(&r).unwrap().text);
    }

    #[test]
    fn serialize_rejects_invalid() {
        let mut r = minimal();
        r.instructions.clear();
        assert!(matches!(serialize(&r), Err(Error::Validation(_))));
    }

    #[test]
    fn separators_appear_between_items() {
        let mut r = minimal();
        r.ingredients.push(IngredientLine::new(None, "", "salt"));
        r.instructions.push("Serve 1/2 hot.".into());
        let doc = serialize(&r).unwrap();
        assert!(doc.text.contains("rice <NEXT_INGR> salt <INGR_END>"));
        assert!(doc.text.contains("salt. <NEXT_INSTR> Serve <F_1_2> hot. <INSTR_END>"));
        let parsed = parse(&doc.text).unwrap();
        assert!(!parsed.malformed);
        assert_eq!(parsed.record.instructions[1], "Serve 1/2 hot.");
    }

    #[test]
    fn parse_round_trip() {
        let parsed = parse(GOLDEN).unwrap();
        assert!(!parsed.malformed);
        let mut expected = minimal();
        expected.id.clear();
        assert_eq!(parsed.record, expected);
        assert_eq!(
            parsed.sections,
            RecoveredSections { ingredients: true, title: true, instructions: true }
        );
    }

    #[test]
    fn truncated_instructions_are_partial() {
        let text = GOLDEN.replace(" <INSTR_END> <RECIPE_END>", "");
        let parsed = parse(&text).unwrap();
        assert!(parsed.malformed);
        assert_eq!(parsed.record.title, "Salted Rice");
        assert_eq!(parsed.record.ingredients, minimal().ingredients);
        assert!(parsed.sections.ingredients && parsed.sections.title);
        assert!(!parsed.sections.instructions);
    }

    #[test]
    fn prompt_only_is_malformed_but_parses() {
        let parsed = parse("<RECIPE_START> <INGR_START> salt <INGR_END> <TITLE_START>").unwrap();
        assert!(parsed.malformed);
        assert_eq!(parsed.record.ingredients.len(), 1);
        assert!(parsed.sections.ingredients);
        assert!(!parsed.sections.title);
    }

    #[test]
    fn missing_start_tag_is_unparseable() {
        assert!(matches!(parse(""), Err(Error::Unparseable(_))));
        assert!(matches!(parse("just text"), Err(Error::Unparseable(_))));
    }

    #[test]
    fn empty_payload_is_malformed() {
        let text = GOLDEN.replace("Boil with salt. ", "");
        assert!(parse(&text).unwrap().malformed);
        let text = GOLDEN.replace("<INSTR_START> Boil", "<INSTR_START> <NEXT_INSTR> Boil");
        assert!(parse(&text).unwrap().malformed);
    }

    #[test]
    fn parse_all_splits_merged_documents() {
        let mut doc = serialize(&minimal()).unwrap();
        doc.concat(&serialize(&minimal()).unwrap());
        assert!(doc.text.contains("<RECIPE_END><RECIPE_START>"));
        assert_eq!(doc.recipes, 2);
        let all = parse_all(&doc.text).unwrap();
        assert_eq!(all.len(), 2);
        assert!(all.iter().all(|p| !p.malformed));
    }

    #[test]
    fn strip_tags_leaves_words() {
        assert_eq!(strip_tags(GOLDEN), "1/2 cup rice Salted Rice Boil with salt.");
    }

    fn word() -> impl Strategy<Value = String> {
        "[a-z]{1,8}"
    }

    fn text() -> impl Strategy<Value = String> {
        prop::collection::vec(
            prop_oneof![word(), Just("1/2".to_owned()), Just("3/4".to_owned()), Just("2/7".to_owned()), Just("350".to_owned())],
            1..6,
        )
        .prop_map(|w| w.join(" "))
    }

    fn line() -> impl Strategy<Value = IngredientLine> {
        (
            prop::option::of((0u64..20, 1u64..9)),
            prop_oneof![Just(String::new()), Just("cup".to_owned()), Just("tbsp".to_owned())],
            prop::collection::vec(word(), 1..4),
        )
            .prop_filter_map("name must not start with a unit", |(q, unit, name)| {
                if super::super::record::is_unit(&name[0]) {
                    return None;
                }
                Some(IngredientLine::new(
                    q.map(|(n, d)| Quantity::new(n, d).unwrap()),
                    unit,
                    name.join(" "),
                ))
            })
    }

    proptest! {
        #[test]
        fn round_trip_any_valid_record(
            title in text(),
            ingredients in prop::collection::vec(line(), 1..5),
            instructions in prop::collection::vec(text(), 1..5),
        ) {
            let r = RecipeRecord { id: String::new(), title, ingredients, instructions };
            prop_assume!(r.is_valid());
            let doc = serialize(&r).unwrap();
            prop_assert!(doc.is_well_formed());
            let parsed = parse(&doc.text).unwrap();
            prop_assert!(!parsed.malformed);
            prop_assert_eq!(parsed.record, r);
        }
    }
}
