//! Character- and word-level vocabularies with atomic control and fraction tokens.
//!
//! Control tags and fraction tokens always tokenize to a single id; everything
//! else is split per character (char mode) or per whitespace-delimited word
//! (word mode). Ids are assigned specials-first, then by descending frequency
//! with lexicographic tie-breaking, so rebuilding over the same corpus yields
//! the same vocabulary.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use crate::corpus::TaggedDocument;
use crate::error::{Error, Result};

pub const RECIPE_START: &str = "<RECIPE_START>";
pub const RECIPE_END: &str = "<RECIPE_END>";
pub const INGR_START: &str = "<INGR_START>";
pub const NEXT_INGR: &str = "<NEXT_INGR>";
pub const INGR_END: &str = "<INGR_END>";
pub const TITLE_START: &str = "<TITLE_START>";
pub const TITLE_END: &str = "<TITLE_END>";
pub const INSTR_START: &str = "<INSTR_START>";
pub const NEXT_INSTR: &str = "<NEXT_INSTR>";
pub const INSTR_END: &str = "<INSTR_END>";

pub const PAD: &str = "<PAD>";
pub const UNK: &str = "<UNK>";
pub const EOS: &str = "<EOS>";

/// The ten structural tags of the tagged recipe grammar, in document order.
pub const CONTROL_TOKENS: [&str; 10] = [
    RECIPE_START,
    INGR_START,
    NEXT_INGR,
    INGR_END,
    TITLE_START,
    TITLE_END,
    INSTR_START,
    NEXT_INSTR,
    INSTR_END,
    RECIPE_END,
];

/// Fraction inventory: (numerator, denominator, token, unicode vulgar form).
pub const FRACTIONS: [(u64, u64, &str, char); 9] = [
    (1, 2, "<F_1_2>", '½'),
    (1, 3, "<F_1_3>", '⅓'),
    (2, 3, "<F_2_3>", '⅔'),
    (1, 4, "<F_1_4>", '¼'),
    (3, 4, "<F_3_4>", '¾'),
    (1, 8, "<F_1_8>", '⅛'),
    (3, 8, "<F_3_8>", '⅜'),
    (5, 8, "<F_5_8>", '⅝'),
    (7, 8, "<F_7_8>", '⅞'),
];

/// Reserved tokens, which always occupy ids `0..SpecialTokenSet::len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecialTokenSet {
    tokens: Vec<&'static str>,
}

impl Default for SpecialTokenSet {
    fn default() -> Self {
        let mut tokens = vec![PAD, UNK, EOS];
        tokens.extend(CONTROL_TOKENS);
        tokens.extend(FRACTIONS.iter().map(|f| f.2));
        SpecialTokenSet { tokens }
    }
}

impl SpecialTokenSet {
    pub fn tokens(&self) -> &[&'static str] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn control(&self) -> &[&'static str] {
        &self.tokens[3..13]
    }

    pub fn fractions(&self) -> &[&'static str] {
        &self.tokens[13..]
    }

    /// Longest special token that prefixes `text`, if any.
    pub fn match_prefix(&self, text: &str) -> Option<&'static str> {
        if !text.starts_with('<') {
            return None;
        }
        self.tokens
            .iter()
            .filter(|t| text.starts_with(**t))
            .max_by_key(|t| t.len())
            .copied()
    }
}

/// Token for the fraction `num/den`, if it is in the inventory.
pub fn fraction_token(num: u64, den: u64) -> Option<&'static str> {
    FRACTIONS
        .iter()
        .find(|f| f.0 == num && f.1 == den)
        .map(|f| f.2)
}

/// Inverse of [`fraction_token`].
pub fn fraction_of_token(token: &str) -> Option<(u64, u64)> {
    FRACTIONS
        .iter()
        .find(|f| f.2 == token)
        .map(|f| (f.0, f.1))
}

fn is_vulgar_fraction(c: char) -> bool {
    matches!(c, '\u{00BC}'..='\u{00BE}' | '\u{2150}'..='\u{215F}' | '\u{2189}')
}

/// Characters that prevent an adjacent ASCII `a/b` from counting as standalone.
fn blocks_fraction(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '/' | '.' | '<' | '>') || is_vulgar_fraction(c)
}

/// Replaces standalone ASCII fractions and unicode vulgar fractions from the
/// inventory with fraction tokens. Other numerals are left alone.
pub fn normalize_numbers(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if let Some(f) = FRACTIONS.iter().find(|f| f.3 == c) {
            out.push_str(f.2);
            i += 1;
            continue;
        }
        if c.is_ascii_digit() && (i == 0 || !blocks_fraction(chars[i - 1])) {
            if let Some((num, den, end)) = scan_ascii_fraction(&chars, i) {
                let standalone = end == chars.len() || !blocks_fraction(chars[end]);
                if standalone {
                    if let Some(tok) = fraction_token(num, den) {
                        out.push_str(tok);
                        i = end;
                        continue;
                    }
                }
                // not replaceable: copy the whole run so its tail is not rescanned
                out.extend(&chars[i..end]);
                i = end;
                continue;
            }
        }
        out.push(c);
        i += 1;
    }
    out
}

/// Parses `digits '/' digits` at `start`, returning the values as written and
/// the end index. Leading zeros make the literal non-canonical, so they are
/// reported with an impossible denominator instead of matching the inventory.
fn scan_ascii_fraction(chars: &[char], start: usize) -> Option<(u64, u64, usize)> {
    let mut j = start;
    while j < chars.len() && chars[j].is_ascii_digit() {
        j += 1;
    }
    if j >= chars.len() || chars[j] != '/' {
        return None;
    }
    let slash = j;
    j += 1;
    let den_start = j;
    while j < chars.len() && chars[j].is_ascii_digit() {
        j += 1;
    }
    if j == den_start {
        return None;
    }
    let num_s: String = chars[start..slash].iter().collect();
    let den_s: String = chars[den_start..j].iter().collect();
    let canonical = !(num_s.len() > 1 && num_s.starts_with('0'))
        && !(den_s.len() > 1 && den_s.starts_with('0'));
    let num = num_s.parse().ok()?;
    let den = if canonical { den_s.parse().ok()? } else { 0 };
    Some((num, den, j))
}

/// Replaces fraction tokens with their ASCII `a/b` spelling.
pub fn denormalize_numbers(text: &str) -> String {
    let mut out = text.to_owned();
    for (num, den, tok, _) in FRACTIONS {
        if out.contains(tok) {
            out = out.replace(tok, &format!("{num}/{den}"));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Char,
    Word,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Char => "char",
            Mode::Word => "word",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "char" => Ok(Mode::Char),
            "word" => Ok(Mode::Word),
            other => Err(Error::Format(format!("unknown vocabulary mode {other:?}"))),
        }
    }
}

/// One piece of segmented text: either an atomic special token or plain text.
enum Piece<'a> {
    Special(&'static str),
    Text(&'a str),
}

/// Splits text into specials and the plain runs between them.
fn segment<'a>(specials: &SpecialTokenSet, text: &'a str) -> Vec<Piece<'a>> {
    let mut pieces = Vec::new();
    let mut run_start = 0;
    let mut pos = 0;
    while pos < text.len() {
        if let Some(tok) = specials.match_prefix(&text[pos..]) {
            if run_start < pos {
                pieces.push(Piece::Text(&text[run_start..pos]));
            }
            pieces.push(Piece::Special(tok));
            pos += tok.len();
            run_start = pos;
        } else {
            pos += text[pos..].chars().next().map_or(1, char::len_utf8);
        }
    }
    if run_start < text.len() {
        pieces.push(Piece::Text(&text[run_start..]));
    }
    pieces
}

/// Token/id bijection for one tokenization mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    mode: Mode,
    min_freq: usize,
    specials: SpecialTokenSet,
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_tokens(mode: Mode, min_freq: usize, id_to_token: Vec<String>) -> Result<Self> {
        let specials = SpecialTokenSet::default();
        if id_to_token.len() < specials.len()
            || id_to_token[..specials.len()]
                .iter()
                .zip(specials.tokens())
                .any(|(a, b)| a != b)
        {
            return Err(Error::Format(
                "vocabulary does not begin with the reserved special tokens".into(),
            ));
        }
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (id, tok) in id_to_token.iter().enumerate() {
            if token_to_id.insert(tok.clone(), id).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Vocabulary {
            mode,
            min_freq,
            specials,
            id_to_token,
            token_to_id,
        })
    }

    /// Builds a vocabulary over tagged documents.
    pub fn build(docs: &[TaggedDocument], mode: Mode, min_freq: usize) -> Result<Self> {
        Self::build_from_texts(docs.iter().map(|d| d.text.as_str()), mode, min_freq)
    }

    pub fn build_from_texts<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        mode: Mode,
        min_freq: usize,
    ) -> Result<Self> {
        let specials = SpecialTokenSet::default();
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut any = false;
        for text in texts {
            any = true;
            for piece in segment(&specials, text) {
                let Piece::Text(run) = piece else { continue };
                match mode {
                    Mode::Char => {
                        for c in run.chars() {
                            *counts.entry(c.to_string()).or_default() += 1;
                        }
                    }
                    Mode::Word => {
                        for w in run.split_whitespace() {
                            *counts.entry(w.to_owned()).or_default() += 1;
                        }
                    }
                }
            }
        }
        if !any {
            return Err(Error::EmptyCorpus("no documents to build a vocabulary from".into()));
        }
        let threshold = match mode {
            Mode::Char => 1,
            Mode::Word => min_freq.max(1),
        };
        let mut observed: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(tok, n)| *n >= threshold && !specials.tokens().contains(&tok.as_str()))
            .collect();
        observed.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut tokens: Vec<String> = specials.tokens().iter().map(|s| s.to_string()).collect();
        tokens.extend(observed.into_iter().map(|(t, _)| t));
        Self::from_tokens(mode, min_freq, tokens)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn specials(&self) -> &SpecialTokenSet {
        &self.specials
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// Id of a reserved token; always present.
    pub fn special_id(&self, token: &str) -> usize {
        self.id(token)
            .unwrap_or_else(|| panic!("{token} is not a reserved token"))
    }

    pub fn unk_id(&self) -> usize {
        self.special_id(UNK)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        let unk = self.unk_id();
        let mut ids = Vec::new();
        for piece in segment(&self.specials, text) {
            match piece {
                Piece::Special(tok) => ids.push(self.special_id(tok)),
                Piece::Text(run) => match self.mode {
                    Mode::Char => {
                        let mut buf = [0u8; 4];
                        ids.extend(
                            run.chars()
                                .map(|c| self.id(c.encode_utf8(&mut buf)).unwrap_or(unk)),
                        );
                    }
                    Mode::Word => {
                        ids.extend(run.split_whitespace().map(|w| self.id(w).unwrap_or(unk)))
                    }
                },
            }
        }
        ids
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut out = String::new();
        for (n, &id) in ids.iter().enumerate() {
            let tok = self.token(id).ok_or(Error::Range {
                index: id,
                size: self.size(),
            })?;
            if self.mode == Mode::Word && n > 0 {
                out.push(' ');
            }
            out.push_str(tok);
        }
        Ok(out)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(
            w,
            "recipegen-vocab\tv1\tmode={}\tsize={}\tmin_freq={}",
            self.mode,
            self.size(),
            self.min_freq
        )?;
        for (id, tok) in self.id_to_token.iter().enumerate() {
            writeln!(w, "{id}\t{}", escape(tok))?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("vocabulary text is UTF-8")
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .transpose()
            .map_err(|e| Error::Format(e.to_string()))?
            .ok_or_else(|| Error::Format("empty vocabulary file".into()))?;
        let fields: Vec<&str> = header.split('\t').collect();
        if fields.len() != 5 || fields[0] != "recipegen-vocab" || fields[1] != "v1" {
            return Err(Error::Format(format!("bad vocabulary header {header:?}")));
        }
        let field = |i: usize, key: &str| -> Result<&str> {
            fields[i]
                .strip_prefix(key)
                .and_then(|s| s.strip_prefix('='))
                .ok_or_else(|| Error::Format(format!("vocabulary header missing {key}")))
        };
        let mode: Mode = field(2, "mode")?.parse()?;
        let size: usize = field(3, "size")?
            .parse()
            .map_err(|_| Error::Format("bad vocabulary size".into()))?;
        let min_freq: usize = field(4, "min_freq")?
            .parse()
            .map_err(|_| Error::Format("bad min_freq".into()))?;

        let mut tokens = Vec::with_capacity(size);
        for line in lines.take(size) {
            let line = line.map_err(|e| Error::Format(e.to_string()))?;
            let (id, tok) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("bad vocabulary line {line:?}")))?;
            if id.parse::<usize>().ok() != Some(tokens.len()) {
                return Err(Error::Format(format!("non-sequential vocabulary id {id:?}")));
            }
            tokens.push(unescape(tok)?);
        }
        if tokens.len() != size {
            return Err(Error::Format(format!(
                "vocabulary declares {size} entries but has {}",
                tokens.len()
            )));
        }
        Self::from_tokens(mode, min_freq, tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn escape(tok: &str) -> String {
    let mut out = String::with_capacity(tok.len());
    for c in tok.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            other => return Err(Error::Format(format!("bad escape \\{other:?}"))),
        }
    }
    Ok(out)
}
