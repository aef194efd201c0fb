//! WordPiece vocabulary, greedy subword tokenization, sequence encoding, and
//! sentence segmentation.

mod encode;
mod sentences;
mod vocab;
mod wordpiece;

pub use encode::{encode, TokenizedSequence};
pub use sentences::{segment_sentences, Language};
pub use vocab::*;
pub use wordpiece::{detokenize, tokenize, tokenize_ids};

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF | 0x3400..=0x4DBF | 0x20000..=0x2A6DF | 0xF900..=0xFAFF | 0x2F800..=0x2FA1F)
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace() && !c.is_control())
}

/// Lowercases and splits on whitespace; punctuation and CJK characters become
/// words of their own.
pub fn pretokenize(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_whitespace() || c.is_control() {
            if !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
        } else if is_punct(c) || is_cjk(c) {
            if !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
            words.push(c.to_string());
        } else {
            cur.push(c);
        }
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pretokenize_rules() {
        assert_eq!(pretokenize("Hello, World!"), vec!["hello", ",", "world", "!"]);
        assert_eq!(pretokenize("  a\tb\n"), vec!["a", "b"]);
        assert_eq!(pretokenize("你好。"), vec!["你", "好", "。"]);
        assert!(pretokenize("").is_empty());
    }
}
