//! Tokenizers used for segment budgeting and for the sparse analyzer.
//!
//! The segmenter only needs to know how many tokens a string holds and
//! where the token boundaries are, so anything that can report byte spans
//! can plug in (a wordpiece tokenizer wrapper, for instance).

use std::ops::Range;

/// Splits text into tokens, reporting each token as a byte range of the input.
pub trait Tokenizer: Send + Sync {
    fn spans(&self, text: &str) -> Vec<Range<usize>>;

    fn count(&self, text: &str) -> usize {
        self.spans(text).len()
    }
}

/// Lowercased whitespace-and-punctuation splitter.
///
/// Alphanumeric runs form one token each; every other non-whitespace
/// character (including the `|` and `*` separators) is its own token.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimpleTokenizer;

impl SimpleTokenizer {
    pub fn tokens(&self, text: &str) -> Vec<String> {
        self.spans(text).into_iter().map(|r| text[r].to_lowercase()).collect()
    }
}

impl Tokenizer for SimpleTokenizer {
    fn spans(&self, text: &str) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut word_start: Option<usize> = None;
        for (i, c) in text.char_indices() {
            if c.is_alphanumeric() {
                if word_start.is_none() {
                    word_start = Some(i);
                }
                continue;
            }
            if let Some(s) = word_start.take() {
                out.push(s..i);
            }
            if !c.is_whitespace() {
                out.push(i..i + c.len_utf8());
            }
        }
        if let Some(s) = word_start {
            out.push(s..text.len());
        }
        out
    }
}

/// Sparse-retrieval analyzer: lowercase, split on non-alphanumerics, no
/// stemming and no stopword list.
pub fn analyze(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// 64-bit FNV-1a. Used wherever a hash must be stable across runs and
/// platforms (feature hashing, per-question RNG streams).
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn punctuation_is_its_own_token() {
        let t = SimpleTokenizer;
        assert_eq!(
            t.tokens("Editor | A. Smith *"),
            vec!["editor", "|", "a", ".", "smith", "*"]
        );
        assert_eq!(t.count(""), 0);
        assert_eq!(t.count("   "), 0);
    }

    #[test]
    fn spans_are_valid_utf8_boundaries() {
        let t = SimpleTokenizer;
        let s = "Zürich–Genève 12km";
        for r in t.spans(s) {
            assert!(!s[r].is_empty());
        }
        assert_eq!(t.tokens(s), vec!["zürich", "–", "genève", "12km"]);
    }

    #[test]
    fn analyzer_drops_punctuation() {
        assert_eq!(analyze("Who edited Ikar?"), vec!["who", "edited", "ikar"]);
        assert!(analyze("?? !").is_empty());
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
    }
}
