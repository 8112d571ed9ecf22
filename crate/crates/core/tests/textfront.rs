use std::path::PathBuf;

use polyvox_core::textfront::{
    decode, encode, graphemes_to_phonemes, normalize_text, Lexicon, SymbolInventory, TextFrontend, BLANK, TERM,
};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn frontend() -> TextFrontend {
    TextFrontend::new(
        SymbolInventory::arpabet(),
        Lexicon::load(&fixture("lexicon.dict")).unwrap(),
    )
    .unwrap()
}

fn normalization_cases() -> Vec<(String, String)> {
    std::fs::read_to_string(fixture("normalization.tsv"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let (input, expected) = l.split_once('\t').unwrap();
            (input.to_string(), expected.to_string())
        })
        .collect()
}

#[test]
fn normalization_matches_hand_traced_fixture() {
    let cases = normalization_cases();
    assert_eq!(cases.len(), 20);
    for (i, (input, expected)) in cases.iter().enumerate() {
        let got: Vec<String> = normalize_text(&format!("n{i}"), input)
            .unwrap()
            .into_iter()
            .map(|w| format!("{}/{}", w.word, w.punctuation))
            .collect();
        assert_eq!(got.join(" "), *expected, "input {input:?}");
    }
}

/// Hand transcription of the 20-word text with the fixture lexicon.
const TWENTY_WORDS: &str =
    "The quick brown fox jumps over the lazy dog, and zyx sleeps. Then the old cat sat on a mat!";
const PHONES_PER_WORD: [(&str, usize); 20] = [
    ("the", 2),
    ("quick", 4),
    ("brown", 4),
    ("fox", 4),
    ("jumps", 5),
    ("over", 3),
    ("the", 2),
    ("lazy", 4),
    ("dog", 3),
    ("and", 3),
    ("zyx", 3),
    ("sleeps", 5),
    ("then", 3),
    ("the", 2),
    ("old", 3),
    ("cat", 3),
    ("sat", 3),
    ("on", 2),
    ("a", 1),
    ("mat", 3),
];

#[test]
fn twenty_word_phone_counts_match_oracle() {
    let fe = frontend();
    let words = normalize_text("w", TWENTY_WORDS).unwrap();
    let g2p = graphemes_to_phonemes(&words, &fe.lexicon);
    let got: Vec<(&str, usize)> = words
        .iter()
        .map(|w| w.word.as_str())
        .zip(g2p.phones.iter().map(Vec::len))
        .collect();
    assert_eq!(got, PHONES_PER_WORD.to_vec());
    assert_eq!(g2p.fallback_words, vec!["zyx".to_string()]);
    assert_eq!(g2p.phones[10], vec!["#z", "#y", "#x"]);
    // Canonical pronunciations are the first listed.
    assert_eq!(g2p.phones[0], vec!["DH", "AH0"]);
    assert_eq!(g2p.phones[18], vec!["AH0"]);

    let seq = fe.symbols("w", TWENTY_WORDS).unwrap();
    // 62 phones, one punctuation token per word, terminal marker.
    assert_eq!(seq.symbols.len(), 62 + 20 + 1);
    assert_eq!(seq.symbols.iter().filter(|s| *s == BLANK).count(), 17);
    assert_eq!(seq.symbols.last().map(String::as_str), Some(TERM));
}

#[test]
fn fixture_sentences_end_in_term_and_round_trip() {
    let fe = frontend();
    for (i, (input, _)) in normalization_cases().iter().enumerate() {
        let id = format!("n{i}");
        let symbols = fe.symbols(&id, input).unwrap();
        let ids = encode(&symbols, &fe.inventory).unwrap();
        assert_eq!(ids.symbol_ids.last(), Some(&fe.inventory.term_id()));
        assert!(ids.symbol_ids.iter().all(|&s| s < fe.inventory.len()));
        assert_eq!(decode(&ids, &fe.inventory).unwrap(), symbols);
    }
}

#[test]
fn stress_levels_are_distinct_symbols() {
    let inv = SymbolInventory::arpabet();
    let ids: Vec<usize> = ["AH0", "AH1", "AH2"].iter().map(|s| inv.id(s).unwrap()).collect();
    assert!(ids[0] != ids[1] && ids[1] != ids[2] && ids[0] != ids[2]);
}
