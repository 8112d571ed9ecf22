//! Text frontend: normalization, lexicon lookup with stress-marked vowels,
//! punctuation tokens between words, and symbol-id encoding.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const TERM: &str = "<eos>";
/// Word boundary with no punctuation.
pub const BLANK: &str = "_";
pub const PUNCTUATION: [&str; 5] = [",", ".", "?", "!", ";"];

pub const VOWELS: [&str; 15] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH", "IY", "OW", "OY", "UH", "UW",
];
pub const CONSONANTS: [&str; 24] = [
    "B", "CH", "D", "DH", "F", "G", "HH", "JH", "K", "L", "M", "N", "NG", "P", "R", "S", "SH", "T", "TH", "V", "W",
    "Y", "Z", "ZH",
];

/// Characters dropped before tokenization (quotes and brackets).
const IGNORED: &[char] = &['"', '\u{201c}', '\u{201d}', '(', ')', '[', ']', '{', '}'];

const LETTER_PREFIX: char = '#';

/// Ordered, dense symbol table; the position of a symbol is its id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolInventory {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl SymbolInventory {
    /// ARPAbet phones with three stress variants per vowel, punctuation,
    /// blank, padding, terminal marker and letter fallback symbols.
    pub fn arpabet() -> Self {
        let mut symbols: Vec<String> = vec![PAD.into(), TERM.into(), BLANK.into()];
        symbols.extend(PUNCTUATION.iter().map(|s| s.to_string()));
        symbols.extend(CONSONANTS.iter().map(|s| s.to_string()));
        for v in VOWELS {
            for stress in 0..3 {
                symbols.push(format!("{v}{stress}"));
            }
        }
        for c in ('a'..='z').chain('0'..='9') {
            symbols.push(format!("{LETTER_PREFIX}{c}"));
        }
        Self::from_symbols(symbols).expect("built-in inventory is valid")
    }

    pub fn from_symbols(symbols: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Inventory(format!("empty symbol at line {}", i + 1)));
            }
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::Inventory(format!("duplicate symbol {s:?}")));
            }
        }
        for required in [PAD, TERM, BLANK] {
            if !index.contains_key(required) {
                return Err(Error::Inventory(format!("missing required symbol {required:?}")));
            }
        }
        // every stressed vowel must come with all three levels
        for s in &symbols {
            if let Some(phone) = Phone::parse(s) {
                if phone.stress.is_some() {
                    for level in 0..3 {
                        let variant = format!("{}{level}", phone.base);
                        if !index.contains_key(&variant) {
                            return Err(Error::Inventory(format!(
                                "vowel {} lacks stress variant {variant}",
                                phone.base
                            )));
                        }
                    }
                }
            }
        }
        Ok(Self { symbols, index })
    }

    /// One symbol per line; line number (from 0) is the id.
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_symbols(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = self.symbols.join("\n");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Hex SHA-256 of the canonical text form; stored in checkpoints.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn pad_id(&self) -> usize {
        self.index[PAD]
    }

    pub fn term_id(&self) -> usize {
        self.index[TERM]
    }
}

/// A phone with an optional stress level (vowels only).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Phone {
    pub base: String,
    pub stress: Option<u8>,
}

impl Phone {
    /// Parses `AH0`-style tokens. Returns `None` for non-phone strings.
    pub fn parse(token: &str) -> Option<Phone> {
        let mut chars: Vec<char> = token.chars().collect();
        if chars.is_empty() {
            return None;
        }
        let stress = match chars.last() {
            Some(d @ '0'..='2') => {
                let s = *d as u8 - b'0';
                chars.pop();
                Some(s)
            }
            _ => None,
        };
        let base: String = chars.into_iter().collect();
        if base.is_empty() || !base.chars().all(|c| c.is_ascii_uppercase()) {
            return None;
        }
        Some(Phone { base, stress })
    }
}

impl fmt::Display for Phone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.stress {
            Some(s) => write!(f, "{}{}", self.base, s),
            None => f.write_str(&self.base),
        }
    }
}

/// Word → pronunciations; the first pronunciation listed is canonical.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    entries: HashMap<String, Vec<Vec<Phone>>>,
}

impl Lexicon {
    /// Parses `WORD  PH1 PH2 ...` lines. `WORD(2)` marks an alternate;
    /// lines starting with `;;;` or `#` are comments.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: HashMap<String, Vec<Vec<Phone>>> = HashMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with(";;;") || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let head = parts.next().unwrap_or_default();
            let word = match head.find('(') {
                Some(p) if head.ends_with(')') => &head[..p],
                _ => head,
            }
            .to_lowercase();
            let mut pron = Vec::new();
            for tok in parts {
                let phone = Phone::parse(tok).ok_or_else(|| Error::Lexicon {
                    line: n + 1,
                    message: format!("bad phone {tok:?}"),
                })?;
                pron.push(phone);
            }
            if pron.is_empty() {
                return Err(Error::Lexicon {
                    line: n + 1,
                    message: format!("no pronunciation for {word:?}"),
                });
            }
            entries.entry(word).or_default().push(pron);
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn canonical(&self, word: &str) -> Option<&[Phone]> {
        self.entries.get(word).and_then(|p| p.first()).map(Vec::as_slice)
    }

    pub fn pronunciations(&self, word: &str) -> Option<&[Vec<Phone>]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every phone used by any entry must exist in the inventory.
    pub fn validate(&self, inventory: &SymbolInventory) -> Result<()> {
        let mut words: Vec<_> = self.entries.keys().collect();
        words.sort();
        for w in words {
            for pron in &self.entries[w] {
                for p in pron {
                    let s = p.to_string();
                    if inventory.id(&s).is_none() {
                        return Err(Error::UnknownSymbol(format!("{s} (in lexicon entry {w:?})")));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedWord {
    pub word: String,
    /// Raw trailing punctuation run, or [`BLANK`].
    pub punctuation: String,
}

impl NormalizedWord {
    pub fn new(word: &str, punctuation: &str) -> Self {
        Self {
            word: word.into(),
            punctuation: punctuation.into(),
        }
    }
}

/// Lowercases and splits into words, attaching to each word the punctuation
/// that follows it. Letters, digits and apostrophes form words; hyphens and
/// whitespace separate them; quotes and brackets are dropped; any other
/// character is punctuation. Punctuation before the first word is discarded.
pub fn normalize_text(utterance_id: &str, text: &str) -> Result<Vec<NormalizedWord>> {
    let mut out: Vec<NormalizedWord> = Vec::new();
    let mut word = String::new();
    let mut pending_punct = String::new();

    let flush_word = |word: &mut String, out: &mut Vec<NormalizedWord>| {
        if !word.is_empty() {
            out.push(NormalizedWord {
                word: std::mem::take(word),
                punctuation: String::new(),
            });
        }
    };

    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() || ch == '\'' {
            if !pending_punct.is_empty() {
                if let Some(last) = out.last_mut() {
                    last.punctuation = std::mem::take(&mut pending_punct);
                }
                pending_punct.clear();
            }
            word.push(ch);
        } else if ch.is_whitespace() || ch == '-' || IGNORED.contains(&ch) {
            flush_word(&mut word, &mut out);
        } else {
            flush_word(&mut word, &mut out);
            if !out.is_empty() && out.last().is_some_and(|w| w.punctuation.is_empty()) {
                pending_punct.push(ch);
            }
        }
    }
    flush_word(&mut word, &mut out);
    if let Some(last) = out.last_mut() {
        if !pending_punct.is_empty() {
            last.punctuation = pending_punct;
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyText {
            utterance_id: utterance_id.into(),
        });
    }
    for w in &mut out {
        if w.punctuation.is_empty() {
            w.punctuation = BLANK.into();
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct G2pOutput {
    pub phones: Vec<Vec<String>>,
    /// Words spelled out letter by letter.
    pub fallback_words: Vec<String>,
}

/// Canonical lexicon pronunciation per word; out-of-vocabulary words are
/// spelled out with per-letter `#x` pseudo-phonemes.
pub fn graphemes_to_phonemes(words: &[NormalizedWord], lexicon: &Lexicon) -> G2pOutput {
    let mut phones = Vec::with_capacity(words.len());
    let mut fallback_words = Vec::new();
    for w in words {
        match lexicon.canonical(&w.word) {
            Some(pron) => phones.push(pron.iter().map(Phone::to_string).collect()),
            None => {
                fallback_words.push(w.word.clone());
                phones.push(letter_fallback(&w.word));
            }
        }
    }
    if !fallback_words.is_empty() {
        log::info!("letter fallback used for {:?}", fallback_words);
    }
    G2pOutput { phones, fallback_words }
}

fn letter_fallback(word: &str) -> Vec<String> {
    word.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| format!("{LETTER_PREFIX}{}", c.to_ascii_lowercase()))
        .collect()
}

/// Symbol strings for one utterance before id encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolSequence {
    pub utterance_id: String,
    pub symbols: Vec<String>,
    pub source_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeSequence {
    pub utterance_id: String,
    pub symbol_ids: Vec<usize>,
    pub source_text: String,
}

impl PhonemeSequence {
    pub fn len(&self) -> usize {
        self.symbol_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbol_ids.is_empty()
    }
}

/// Maps a raw punctuation run to its token: the first character, provided
/// every character in the run is known.
fn punctuation_token(utterance_id: &str, run: &str) -> Result<String> {
    if run == BLANK {
        return Ok(BLANK.into());
    }
    let unknown: Vec<char> = run
        .chars()
        .filter(|c| !PUNCTUATION.iter().any(|p| p.starts_with(*c)))
        .collect();
    if !unknown.is_empty() || run.is_empty() {
        return Err(Error::UnknownPunctuation {
            utterance_id: utterance_id.into(),
            chars: unknown,
        });
    }
    Ok(run.chars().next().map(String::from).unwrap_or_default())
}

/// Interleaves word phones with one punctuation token per word and appends
/// the terminal marker.
pub fn attach_punctuation(
    utterance_id: &str,
    source_text: &str,
    phones: &[Vec<String>],
    punctuation: &[String],
) -> Result<SymbolSequence> {
    if phones.len() != punctuation.len() {
        return Err(Error::Shape(format!(
            "{} words but {} punctuation tokens",
            phones.len(),
            punctuation.len()
        )));
    }
    let mut symbols = Vec::new();
    for (word, punct) in phones.iter().zip(punctuation) {
        symbols.extend(word.iter().cloned());
        symbols.push(punctuation_token(utterance_id, punct)?);
    }
    symbols.push(TERM.into());
    Ok(SymbolSequence {
        utterance_id: utterance_id.into(),
        symbols,
        source_text: source_text.into(),
    })
}

pub fn encode(sequence: &SymbolSequence, inventory: &SymbolInventory) -> Result<PhonemeSequence> {
    let symbol_ids = sequence
        .symbols
        .iter()
        .map(|s| inventory.id(s).ok_or_else(|| Error::UnknownSymbol(s.clone())))
        .collect::<Result<Vec<_>>>()?;
    Ok(PhonemeSequence {
        utterance_id: sequence.utterance_id.clone(),
        symbol_ids,
        source_text: sequence.source_text.clone(),
    })
}

pub fn decode(sequence: &PhonemeSequence, inventory: &SymbolInventory) -> Result<SymbolSequence> {
    let symbols = sequence
        .symbol_ids
        .iter()
        .map(|&id| {
            inventory.symbol(id).map(String::from).ok_or(Error::SymbolIdOutOfRange {
                id,
                size: inventory.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SymbolSequence {
        utterance_id: sequence.utterance_id.clone(),
        symbols,
        source_text: sequence.source_text.clone(),
    })
}

/// Inventory plus lexicon; runs the whole text → ids pipeline.
#[derive(Debug, Clone)]
pub struct TextFrontend {
    pub inventory: SymbolInventory,
    pub lexicon: Lexicon,
}

impl TextFrontend {
    pub fn new(inventory: SymbolInventory, lexicon: Lexicon) -> Result<Self> {
        lexicon.validate(&inventory)?;
        Ok(Self { inventory, lexicon })
    }

    pub fn symbols(&self, utterance_id: &str, text: &str) -> Result<SymbolSequence> {
        let words = normalize_text(utterance_id, text)?;
        let g2p = graphemes_to_phonemes(&words, &self.lexicon);
        let punct: Vec<String> = words.into_iter().map(|w| w.punctuation).collect();
        attach_punctuation(utterance_id, text, &g2p.phones, &punct)
    }

    pub fn process(&self, utterance_id: &str, text: &str) -> Result<PhonemeSequence> {
        encode(&self.symbols(utterance_id, text)?, &self.inventory)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(pairs: &[(&str, &str)]) -> Vec<NormalizedWord> {
        pairs.iter().map(|(w, p)| NormalizedWord::new(w, p)).collect()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(
            normalize_text("u", "Hello, world.").unwrap(),
            words(&[("hello", ","), ("world", ".")])
        );
        assert_eq!(normalize_text("u", "ok").unwrap(), words(&[("ok", BLANK)]));
        assert_eq!(
            normalize_text("u", "A  b").unwrap(),
            words(&[("a", BLANK), ("b", BLANK)])
        );
    }

    #[test]
    fn normalize_empty_names_utterance() {
        let err = normalize_text("utt42", "  ... ").unwrap_err();
        assert!(err.to_string().contains("utt42"));
    }

    #[test]
    fn inventory_stress_variants_distinct() {
        let inv = SymbolInventory::arpabet();
        let a0 = inv.id("AH0").unwrap();
        let a1 = inv.id("AH1").unwrap();
        let a2 = inv.id("AH2").unwrap();
        assert!(a0 != a1 && a1 != a2 && a0 != a2);
        for v in VOWELS {
            for s in 0..3 {
                assert!(inv.id(&format!("{v}{s}")).is_some());
            }
        }
    }

    #[test]
    fn inventory_rejects_missing_stress_level() {
        let mut syms: Vec<String> = [PAD, TERM, BLANK, "AH0", "AH1"].iter().map(|s| s.to_string()).collect();
        assert!(SymbolInventory::from_symbols(syms.clone()).is_err());
        syms.push("AH2".into());
        assert!(SymbolInventory::from_symbols(syms).is_ok());
    }

    #[test]
    fn inventory_text_round_trip() {
        let inv = SymbolInventory::arpabet();
        assert_eq!(SymbolInventory::parse(&inv.to_text()).unwrap(), inv);
    }

    #[test]
    fn g2p_lookup_and_fallback() {
        let lex = Lexicon::parse("HELLO  HH AH0 L OW1\n").unwrap();
        let out = graphemes_to_phonemes(&words(&[("hello", BLANK), ("qz", BLANK)]), &lex);
        assert_eq!(out.phones[0], vec!["HH", "AH0", "L", "OW1"]);
        assert_eq!(out.phones[1], vec!["#q", "#z"]);
        assert_eq!(out.fallback_words, vec!["qz".to_string()]);
    }

    #[test]
    fn canonical_is_first_listed() {
        let lex = Lexicon::parse("READ  R EH1 D\nREAD(2)  R IY1 D\n").unwrap();
        assert_eq!(lex.canonical("read").unwrap()[1].to_string(), "EH1");
        assert_eq!(lex.pronunciations("read").unwrap().len(), 2);
    }

    #[test]
    fn attach_examples() {
        let s = attach_punctuation(
            "u",
            "",
            &[vec!["HH".into(), "AH0".into()], vec!["W".into(), "ER1".into()]],
            &[",".into(), ".".into()],
        )
        .unwrap();
        assert_eq!(s.symbols, vec!["HH", "AH0", ",", "W", "ER1", ".", TERM]);
        let single = attach_punctuation("u", "", &[vec!["OW1".into()]], &[BLANK.into()]).unwrap();
        assert_eq!(single.symbols, vec!["OW1", BLANK, TERM]);
    }

    #[test]
    fn unknown_punctuation_lists_character() {
        let err = attach_punctuation("u", "", &[vec!["OW1".into()]], &[":".into()]).unwrap_err();
        match err {
            Error::UnknownPunctuation { chars, .. } => assert_eq!(chars, vec![':']),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn encode_rejects_unknown_symbol() {
        let inv = SymbolInventory::arpabet();
        let seq = SymbolSequence {
            utterance_id: "u".into(),
            symbols: vec!["XX9".into()],
            source_text: String::new(),
        };
        assert!(matches!(encode(&seq, &inv), Err(Error::UnknownSymbol(s)) if s == "XX9"));
    }

    #[test]
    fn decode_rejects_out_of_range() {
        let inv = SymbolInventory::arpabet();
        let seq = PhonemeSequence {
            utterance_id: "u".into(),
            symbol_ids: vec![inv.len()],
            source_text: String::new(),
        };
        assert!(decode(&seq, &inv).is_err());
    }
}
