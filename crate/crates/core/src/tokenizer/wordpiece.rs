use super::vocab::{Vocabulary, CONTINUATION, UNK};
use super::pretokenize;

/// Words longer than this many characters map straight to `[UNK]`.
const MAX_WORD_CHARS: usize = 100;

fn wordpiece(word: &str, vocab: &Vocabulary, out: &mut Vec<String>) {
    let chars: Vec<char> = word.chars().collect();
    if chars.len() > MAX_WORD_CHARS {
        out.push(UNK.to_string());
        return;
    }
    let mut pieces = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut end = chars.len();
        let mut found = None;
        while end > start {
            let body: String = chars[start..end].iter().collect();
            let cand = if start == 0 { body } else { format!("{CONTINUATION}{body}") };
            if vocab.contains(&cand) {
                found = Some(cand);
                break;
            }
            end -= 1;
        }
        match found {
            Some(p) => {
                pieces.push(p);
                start = end;
            }
            None => {
                out.push(UNK.to_string());
                return;
            }
        }
    }
    out.extend(pieces);
}

/// Greedy longest-match-first WordPiece tokenization. A word with any
/// position that no vocabulary piece covers becomes a single `[UNK]`.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<String> {
    let mut out = Vec::new();
    for w in pretokenize(text) {
        wordpiece(&w, vocab, &mut out);
    }
    out
}

pub fn tokenize_ids(text: &str, vocab: &Vocabulary) -> Vec<u32> {
    tokenize(text, vocab)
        .iter()
        .map(|t| vocab.id_or_unk(t))
        .collect()
}

/// Joins pieces back into space-separated words, gluing `##` continuations.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut s = String::new();
    for t in tokens {
        let t = t.as_ref();
        match t.strip_prefix(CONTINUATION) {
            Some(rest) if !s.is_empty() => s.push_str(rest),
            _ => {
                if !s.is_empty() {
                    s.push(' ');
                }
                s.push_str(t);
            }
        }
    }
    s
}
