use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    English,
    Chinese,
}

const EN_TERMINATORS: [char; 3] = ['.', '!', '?'];
const ZH_TERMINATORS: [char; 3] = ['。', '？', '！'];

/// Splits a document into sentences.
///
/// English: a run of `.`, `!` or `?` ends a sentence when it is followed by
/// whitespace and then an uppercase letter, or by the end of the text.
/// Chinese: every run of `。`, `？` or `！` ends a sentence.
/// Sentences are trimmed and empty ones dropped.
pub fn segment_sentences(document: &str, language: Language) -> Vec<String> {
    let chars: Vec<char> = document.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    let terms: &[char] = match language {
        Language::English => &EN_TERMINATORS,
        Language::Chinese => &ZH_TERMINATORS,
    };
    while i < chars.len() {
        if !terms.contains(&chars[i]) {
            i += 1;
            continue;
        }
        let mut end = i + 1;
        while end < chars.len() && terms.contains(&chars[end]) {
            end += 1;
        }
        let split = match language {
            Language::Chinese => true,
            Language::English => {
                let mut j = end;
                while j < chars.len() && chars[j].is_whitespace() {
                    j += 1;
                }
                j == chars.len() || (j > end && chars[j].is_uppercase())
            }
        };
        if split {
            push_trimmed(&mut out, &chars[start..end]);
            start = end;
        }
        i = end;
    }
    push_trimmed(&mut out, &chars[start..]);
    out
}

fn push_trimmed(out: &mut Vec<String>, chars: &[char]) {
    let s: String = chars.iter().collect();
    let t = s.trim();
    if !t.is_empty() {
        out.push(t.to_string());
    }
}
