use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{fraction_of_token, fraction_token};

/// Culinary units recognised when splitting an ingredient line into
/// quantity, unit and name. Anything else belongs to the name.
pub const UNITS: &[&str] = &[
    "bunch", "can", "cans", "clove", "cloves", "cup", "cups", "dash", "g", "gallon", "gallons",
    "gram", "grams", "handful", "kg", "l", "lb", "lbs", "liter", "liters", "ml", "ounce",
    "ounces", "oz", "package", "packages", "piece", "pieces", "pinch", "pint", "pints", "pound",
    "pounds", "quart", "quarts", "slice", "slices", "sprig", "sprigs", "stick", "sticks",
    "tablespoon", "tablespoons", "tbsp", "teaspoon", "teaspoons", "tsp",
];

pub fn is_unit(word: &str) -> bool {
    UNITS.binary_search(&word).is_ok()
}

/// Exact nonnegative ingredient amount, always kept in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Quantity(Ratio<u64>);

impl Quantity {
    pub fn new(numer: u64, denom: u64) -> Result<Self> {
        if denom == 0 {
            return Err(Error::Validation("quantity denominator must be positive".into()));
        }
        Ok(Quantity(Ratio::new(numer, denom)))
    }

    pub fn integer(n: u64) -> Self {
        Quantity(Ratio::from_integer(n))
    }

    pub fn numer(&self) -> u64 {
        *self.0.numer()
    }

    pub fn denom(&self) -> u64 {
        *self.0.denom()
    }

    /// Renders the amount for the tagged grammar: an integer, an inventory
    /// fraction token, `whole <token>` for mixed numbers, or a raw `n/d`.
    pub fn render(&self) -> String {
        let (n, d) = (self.numer(), self.denom());
        if d == 1 {
            return n.to_string();
        }
        let (whole, rem) = (n / d, n % d);
        match fraction_token(rem, d) {
            Some(tok) if whole == 0 => tok.to_owned(),
            Some(tok) => format!("{whole} {tok}"),
            None => format!("{n}/{d}"),
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numer(), self.denom())
    }
}

fn parse_uint(s: &str) -> Option<u64> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || (s.len() > 1 && s.starts_with('0'))
    {
        return None;
    }
    s.parse().ok()
}

fn parse_ratio(s: &str) -> Option<Quantity> {
    let (n, d) = s.split_once('/')?;
    let (n, d) = (parse_uint(n)?, parse_uint(d)?);
    Quantity::new(n, d).ok()
}

impl FromStr for Quantity {
    type Err = Error;

    /// Accepts `n`, `n/d` and `w n/d`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("bad quantity {s:?}"));
        let parts: Vec<&str> = s.split_whitespace().collect();
        match parts.as_slice() {
            [one] => parse_uint(one)
                .map(Quantity::integer)
                .or_else(|| parse_ratio(one))
                .ok_or_else(bad),
            [whole, frac] => {
                let w = parse_uint(whole).ok_or_else(bad)?;
                let f = parse_ratio(frac).ok_or_else(bad)?;
                Ok(Quantity(f.0 + Ratio::from_integer(w)))
            }
            _ => Err(bad()),
        }
    }
}

impl Serialize for Quantity {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Quantity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IngredientLine {
    pub quantity: Option<Quantity>,
    #[serde(default)]
    pub unit: String,
    pub name: String,
}

impl IngredientLine {
    pub fn new(quantity: Option<Quantity>, unit: impl Into<String>, name: impl Into<String>) -> Self {
        IngredientLine {
            quantity,
            unit: unit.into(),
            name: name.into(),
        }
    }

    /// Plain-text rendering with ASCII fractions, e.g. `1 1/2 cup flour`.
    pub fn display_text(&self) -> String {
        let mut parts = Vec::with_capacity(3);
        if let Some(q) = self.quantity {
            let (n, d) = (q.numer(), q.denom());
            if d == 1 {
                parts.push(n.to_string());
            } else if n > d {
                parts.push(format!("{} {}/{}", n / d, n % d, d));
            } else {
                parts.push(format!("{n}/{d}"));
            }
        }
        if !self.unit.is_empty() {
            parts.push(self.unit.clone());
        }
        parts.push(self.name.clone());
        parts.join(" ")
    }
}

/// Splits a rendered ingredient line (fraction tokens already in place) back
/// into its fields. Returns `None` when no name remains.
pub(crate) fn parse_ingredient_words(line: &str) -> Option<IngredientLine> {
    let words: Vec<&str> = line.split(' ').collect();
    let mut i = 0;
    let mut quantity = None;
    if let Some(n) = words.first().and_then(|w| parse_uint(w)) {
        i = 1;
        quantity = Some(Quantity::integer(n));
        if let Some((fn_, fd)) = words.get(1).and_then(|w| fraction_of_token(w)) {
            quantity = Quantity::new(n * fd + fn_, fd).ok();
            i = 2;
        }
    } else if let Some((fn_, fd)) = words.first().and_then(|w| fraction_of_token(w)) {
        quantity = Quantity::new(fn_, fd).ok();
        i = 1;
    } else if let Some(q) = words.first().and_then(|w| parse_ratio(w)) {
        quantity = Some(q);
        i = 1;
    }
    let mut unit = "";
    if i + 1 < words.len() && is_unit(words[i]) {
        unit = words[i];
        i += 1;
    }
    let name = words[i..].join(" ");
    if name.trim().is_empty() {
        return None;
    }
    Some(IngredientLine::new(quantity, unit, name))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecipeRecord {
    pub id: String,
    pub title: String,
    pub ingredients: Vec<IngredientLine>,
    pub instructions: Vec<String>,
}

fn check_text(what: &str, s: &str) -> std::result::Result<(), String> {
    if s.trim().is_empty() {
        return Err(format!("{what} is empty"));
    }
    if s.trim() != s {
        return Err(format!("{what} has surrounding whitespace"));
    }
    if let Some(c) = s
        .chars()
        .find(|c| matches!(c, '<' | '>') || c.is_control() || crate::tokenizer::FRACTIONS.iter().any(|f| f.3 == *c))
    {
        return Err(format!("{what} contains reserved character {c:?}"));
    }
    Ok(())
}

impl RecipeRecord {
    /// Checks every record invariant, including that each field survives the
    /// tagged grammar unchanged. The error names the first violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        check_text("title", &self.title)?;
        if self.ingredients.is_empty() {
            return Err("no ingredients".into());
        }
        for (n, line) in self.ingredients.iter().enumerate() {
            check_text(&format!("ingredient {n} name"), &line.name)?;
            if !line.unit.is_empty() {
                check_text(&format!("ingredient {n} unit"), &line.unit)?;
                if !is_unit(&line.unit) {
                    return Err(format!("ingredient {n} has unknown unit {:?}", line.unit));
                }
            }
            let rendered = crate::corpus::tagged::render_ingredient(line);
            let back = parse_ingredient_words(&rendered)
                .map(|l| crate::corpus::tagged::denormalize_line(l));
            if back.as_ref() != Some(line) {
                return Err(format!("ingredient {n} is ambiguous when rendered: {rendered:?}"));
            }
        }
        if self.instructions.is_empty() {
            return Err("no instructions".into());
        }
        for (n, step) in self.instructions.iter().enumerate() {
            check_text(&format!("instruction {n}"), step)?;
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    /// Title, ingredient lines and steps as one plain-text block.
    pub fn flat_text(&self) -> String {
        let mut parts = vec![self.title.clone()];
        parts.extend(self.ingredients.iter().map(IngredientLine::display_text));
        parts.extend(self.instructions.iter().cloned());
        parts.join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn units_are_sorted_for_binary_search() {
        let mut sorted = UNITS.to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, UNITS);
    }

    #[test]
    fn quantity_parsing_and_reduction() {
        assert_eq!("2/4".parse::<Quantity>().unwrap(), Quantity::new(1, 2).unwrap());
        assert_eq!("3".parse::<Quantity>().unwrap(), Quantity::integer(3));
        assert_eq!("1 1/2".parse::<Quantity>().unwrap(), Quantity::new(3, 2).unwrap());
        assert!("1/0".parse::<Quantity>().is_err());
        assert!("x".parse::<Quantity>().is_err());
        assert!(Quantity::new(1, 0).is_err());
    }

    #[test]
    fn quantity_render() {
        assert_eq!(Quantity::integer(2).render(), "2");
        assert_eq!(Quantity::new(1, 2).unwrap().render(), "<F_1_2>");
        assert_eq!(Quantity::new(7, 4).unwrap().render(), "1 <F_3_4>");
        assert_eq!(Quantity::new(2, 7).unwrap().render(), "2/7");
        assert_eq!(Quantity::new(9, 7).unwrap().render(), "9/7");
    }

    #[test]
    fn ingredient_word_parsing() {
        let l = parse_ingredient_words("1 <F_1_2> cup brown sugar").unwrap();
        assert_eq!(l, IngredientLine::new(Some(Quantity::new(3, 2).unwrap()), "cup", "brown sugar"));
        let l = parse_ingredient_words("2 large eggs").unwrap();
        assert_eq!(l, IngredientLine::new(Some(Quantity::integer(2)), "", "large eggs"));
        let l = parse_ingredient_words("salt").unwrap();
        assert_eq!(l, IngredientLine::new(None, "", "salt"));
        // a lone unit word is a name, not a unit
        let l = parse_ingredient_words("2 cups").unwrap();
        assert_eq!(l.name, "cups");
        assert!(parse_ingredient_words("3").is_none());
    }

    fn rec() -> RecipeRecord {
        RecipeRecord {
            id: "r1".into(),
            title: "Plain Rice".into(),
            ingredients: vec![IngredientLine::new(Some(Quantity::integer(1)), "cup", "rice")],
            instructions: vec!["Boil the rice.".into()],
        }
    }

    #[test]
    fn validation_rules() {
        assert!(rec().is_valid());
        let mut r = rec();
        r.title = " ".into();
        assert!(r.validate().unwrap_err().contains("title"));
        let mut r = rec();
        r.instructions.clear();
        assert!(!r.is_valid());
        let mut r = rec();
        r.ingredients.clear();
        assert!(!r.is_valid());
        let mut r = rec();
        r.instructions.push("use <b>".into());
        assert!(!r.is_valid());
        let mut r = rec();
        r.ingredients[0].unit = "bucket".into();
        assert!(!r.is_valid());
        // no unit, but the name begins with a unit word: would re-parse differently
        let mut r = rec();
        r.ingredients[0] = IngredientLine::new(Some(Quantity::integer(2)), "", "cup cakes");
        assert!(!r.is_valid());
        // a name that looks like a quantity
        let mut r = rec();
        r.ingredients[0] = IngredientLine::new(None, "", "7 up");
        assert!(!r.is_valid());
    }

    #[test]
    fn display_text_uses_ascii_fractions() {
        let l = IngredientLine::new(Some(Quantity::new(3, 2).unwrap()), "cup", "flour");
        assert_eq!(l.display_text(), "1 1/2 cup flour");
    }
}
