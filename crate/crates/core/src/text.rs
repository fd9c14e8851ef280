//! Shared text normalization and tokenization.
//!
//! One policy repo-wide: entity/attribute matching uses [`normalize`], and
//! every tokenized metric or index (BM25, BLEU-1) uses [`tokenize`], so CJK
//! and Latin text are treated identically everywhere.

use unicode_normalization::UnicodeNormalization;

/// CJK punctuation not folded to ASCII by NFKC.
const CJK_PUNCT: &[char] = &[
    '。', '，', '、', '！', '？', '；', '：', '“', '”', '‘', '’', '（', '）', '《', '》', '【',
    '】', '「', '」', '『', '』', '·', '…', '—', '～', '〈', '〉', '〔', '〕',
];

fn normalize_pass(text: &str) -> String {
    text.nfkc()
        .flat_map(char::to_lowercase)
        .filter(|c| !c.is_whitespace() && !c.is_ascii_punctuation() && !CJK_PUNCT.contains(c))
        .collect()
}

/// Canonical matching form of a piece of text: Unicode NFKC, lowercased,
/// with all whitespace and punctuation removed. The pass is iterated to a
/// fixed point: dropping characters (e.g. the space in a decomposed
/// compatibility macron) can expose fresh NFKC compositions.
pub fn normalize(text: &str) -> String {
    let mut current = normalize_pass(text);
    loop {
        let next = normalize_pass(&current);
        if next == current {
            return current;
        }
        current = next;
    }
}

/// True for codepoints in the CJK unified ideograph blocks plus kana.
pub fn is_cjk(c: char) -> bool {
    matches!(c,
        '\u{4E00}'..='\u{9FFF}'     // CJK Unified Ideographs
        | '\u{3400}'..='\u{4DBF}'   // Extension A
        | '\u{20000}'..='\u{2A6DF}' // Extension B
        | '\u{F900}'..='\u{FAFF}'   // Compatibility Ideographs
        | '\u{3040}'..='\u{309F}'   // Hiragana
        | '\u{30A0}'..='\u{30FF}'   // Katakana
    )
}

/// Tokenization policy: each CJK codepoint is its own token; maximal runs of
/// ASCII alphanumerics become lowercased word tokens; everything else
/// separates.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_ascii_alphanumeric() {
            word.push(c.to_ascii_lowercase());
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            if is_cjk(c) {
                tokens.push(c.to_string());
            }
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Character bigrams of the normalized form, used by the fuzzy attribute
/// resolver and the hashed embedder.
pub fn char_bigrams(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    chars.windows(2).map(|w| w.iter().collect()).collect()
}

/// Dice coefficient over character bigram sets: 2|A∩B| / (|A|+|B|).
/// Returns 0 when either side has no bigrams.
pub fn bigram_dice(a: &str, b: &str) -> f64 {
    use std::collections::HashSet;
    let sa: HashSet<String> = char_bigrams(a).into_iter().collect();
    let sb: HashSet<String> = char_bigrams(b).into_iter().collect();
    if sa.is_empty() || sb.is_empty() {
        return 0.0;
    }
    let inter = sa.intersection(&sb).count();
    2.0 * inter as f64 / (sa.len() + sb.len()) as f64
}
