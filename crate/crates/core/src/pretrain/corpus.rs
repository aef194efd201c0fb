use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{segment_sentences, tokenize_ids, Language, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Sentiment,
    Question,
    Topic,
}

/// Domain of the seven English benchmark datasets, by lowercase id.
pub fn known_domain(dataset: &str) -> Option<Domain> {
    match dataset.to_ascii_lowercase().as_str() {
        "imdb" | "yelp_p" | "yelp_f" => Some(Domain::Sentiment),
        "trec" | "yahoo" => Some(Domain::Question),
        "ag" | "dbpedia" => Some(Domain::Topic),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeKind {
    WithinTask,
    InDomain,
    CrossDomain,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretrainScope {
    pub kind: ScopeKind,
    pub datasets: Vec<String>,
}

impl PretrainScope {
    pub fn within_task(dataset: &str) -> Self {
        Self {
            kind: ScopeKind::WithinTask,
            datasets: vec![dataset.to_string()],
        }
    }

    /// Checks the dataset count and domain agreement; `domains` overrides or
    /// extends [`known_domain`].
    pub fn validate(&self, domains: &HashMap<String, Domain>) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::Empty("pre-training scope".into()));
        }
        match self.kind {
            ScopeKind::WithinTask if self.datasets.len() != 1 => Err(Error::InvalidConfig(format!(
                "within-task scope takes one dataset, got {}",
                self.datasets.len()
            ))),
            ScopeKind::InDomain => {
                let mut seen = HashSet::new();
                for d in &self.datasets {
                    let dom = domains
                        .get(d)
                        .copied()
                        .or_else(|| known_domain(d))
                        .ok_or_else(|| Error::InvalidConfig(format!("no domain label for dataset `{d}`")))?;
                    seen.insert(dom);
                }
                if seen.len() > 1 {
                    return Err(Error::InvalidConfig(format!(
                        "in-domain scope mixes domains: {:?}",
                        self.datasets
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Raw documents of one dataset.
#[derive(Clone, Debug, Default)]
pub struct SourceDocuments {
    pub name: String,
    pub train: Vec<String>,
    /// Held-out documents that must never leak into pre-training data.
    pub test: Vec<String>,
}

/// Sentence-segmented documents.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub documents: Vec<Vec<String>>,
}

/// Case-folded, whitespace-collapsed text used for duplicate detection.
pub fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Training documents of every dataset in the scope, in scope order. For each
/// `dedup_pairs` entry whose datasets are both present, documents repeated
/// across the pair are kept once and documents matching either side's test
/// set are dropped.
pub fn assemble_corpus(
    scope: &PretrainScope,
    sources: &[SourceDocuments],
    dedup_pairs: &[(String, String)],
    language: Language,
) -> Result<Corpus> {
    if scope.datasets.is_empty() {
        return Err(Error::Empty("pre-training scope".into()));
    }
    let by_name: HashMap<&str, &SourceDocuments> = sources.iter().map(|s| (s.name.as_str(), s)).collect();
    let mut paired: HashMap<&str, Vec<&str>> = HashMap::new();
    for (a, b) in dedup_pairs {
        if scope.datasets.contains(a) && scope.datasets.contains(b) {
            paired.entry(a).or_default().push(b);
            paired.entry(b).or_default().push(a);
        }
    }
    let test_keys = |name: &str| -> HashSet<String> {
        by_name.get(name).map_or_else(HashSet::new, |s| s.test.iter().map(|t| normalize(t)).collect())
    };

    let mut seen_in: HashMap<String, HashSet<&str>> = HashMap::new();
    let mut documents = Vec::new();
    for name in &scope.datasets {
        let src = by_name
            .get(name.as_str())
            .ok_or_else(|| Error::Dataset(format!("no documents for dataset `{name}`")))?;
        let partners = paired.get(name.as_str()).cloned().unwrap_or_default();
        let mut forbidden = HashSet::new();
        if !partners.is_empty() {
            forbidden = test_keys(name);
            for p in &partners {
                forbidden.extend(test_keys(p));
            }
        }
        for doc in &src.train {
            let key = normalize(doc);
            if forbidden.contains(&key) {
                continue;
            }
            let owners = seen_in.entry(key).or_default();
            if partners.iter().any(|p| owners.contains(p)) {
                continue;
            }
            owners.insert(name.as_str());
            let sentences = segment_sentences(doc, language);
            if !sentences.is_empty() {
                documents.push(sentences);
            }
        }
    }
    if documents.is_empty() {
        return Err(Error::Empty("pre-training corpus".into()));
    }
    Ok(Corpus { documents })
}

impl Corpus {
    pub fn sentence_count(&self) -> usize {
        self.documents.iter().map(Vec::len).sum()
    }

    /// One sentence per line, a blank line after each document.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for doc in &self.documents {
            for sent in doc {
                s.push_str(sent.trim());
                s.push('\n');
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Self {
        let mut documents = Vec::new();
        let mut cur = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                if !cur.is_empty() {
                    documents.push(std::mem::take(&mut cur));
                }
            } else {
                cur.push(line.to_string());
            }
        }
        if !cur.is_empty() {
            documents.push(cur);
        }
        Self { documents }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::parse(&fs::read_to_string(path)?))
    }

    pub fn tokenize(&self, vocab: &Vocabulary) -> TokenizedCorpus {
        TokenizedCorpus {
            documents: self
                .documents
                .iter()
                .map(|d| {
                    d.iter()
                        .map(|s| tokenize_ids(s, vocab))
                        .filter(|ids| !ids.is_empty())
                        .collect::<Vec<_>>()
                })
                .filter(|d| !d.is_empty())
                .collect(),
        }
    }
}

/// Documents → sentences → token ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenizedCorpus {
    pub documents: Vec<Vec<Vec<u32>>>,
}

impl TokenizedCorpus {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Splits off the last `n` documents, e.g. for held-out evaluation.
    pub fn split_off(&mut self, n: usize) -> TokenizedCorpus {
        let at = self.documents.len().saturating_sub(n);
        TokenizedCorpus {
            documents: self.documents.split_off(at),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn src(name: &str, train: &[&str], test: &[&str]) -> SourceDocuments {
        SourceDocuments {
            name: name.into(),
            train: train.iter().map(|s| s.to_string()).collect(),
            test: test.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn scope_validation() {
        let none = HashMap::new();
        assert!(PretrainScope::within_task("imdb").validate(&none).is_ok());
        let two = PretrainScope {
            kind: ScopeKind::WithinTask,
            datasets: vec!["imdb".into(), "ag".into()],
        };
        assert!(two.validate(&none).is_err());
        let mixed = PretrainScope {
            kind: ScopeKind::InDomain,
            datasets: vec!["imdb".into(), "ag".into()],
        };
        assert!(mixed.validate(&none).is_err());
        let sentiment = PretrainScope {
            kind: ScopeKind::InDomain,
            datasets: vec!["imdb".into(), "yelp_p".into(), "yelp_f".into()],
        };
        assert!(sentiment.validate(&none).is_ok());
        let cross = PretrainScope {
            kind: ScopeKind::CrossDomain,
            datasets: vec!["imdb".into(), "ag".into(), "trec".into()],
        };
        assert!(cross.validate(&none).is_ok());
        let custom = PretrainScope {
            kind: ScopeKind::InDomain,
            datasets: vec!["mine".into(), "ag".into()],
        };
        assert!(custom.validate(&none).is_err());
        let labels = HashMap::from([("mine".to_string(), Domain::Topic)]);
        assert!(custom.validate(&labels).is_ok());
    }

    #[test]
    fn within_task_takes_only_that_dataset() {
        let sources = [src("imdb", &["Good film. Loved it."], &[]), src("ag", &["Stocks fell."], &[])];
        let c = assemble_corpus(&PretrainScope::within_task("imdb"), &sources, &[], Language::English).unwrap();
        assert_eq!(c.documents, vec![vec!["Good film.".to_string(), "Loved it.".to_string()]]);
    }

    #[test]
    fn overlap_pair_dedups_and_excludes_test_documents() {
        let sources = [
            src("yelp_p", &["Great  food.", "Slow service.", "Held out."], &["held OUT."]),
            src("yelp_f", &["great food.", "Nice staff."], &[]),
        ];
        let scope = PretrainScope {
            kind: ScopeKind::InDomain,
            datasets: vec!["yelp_p".into(), "yelp_f".into()],
        };
        let pairs = [("yelp_p".to_string(), "yelp_f".to_string())];
        let c = assemble_corpus(&scope, &sources, &pairs, Language::English).unwrap();
        let flat: Vec<&str> = c.documents.iter().map(|d| d[0].as_str()).collect();
        assert_eq!(flat, vec!["Great  food.", "Slow service.", "Nice staff."]);

        let without = assemble_corpus(&scope, &sources, &[], Language::English).unwrap();
        assert_eq!(without.documents.len(), 5);
    }

    #[test]
    fn document_count_is_sum_minus_duplicates() {
        let names = ["imdb", "yelp_p", "yelp_f", "trec", "yahoo", "ag", "dbpedia"];
        let mut sources = Vec::new();
        let mut total = 0;
        for (i, n) in names.iter().enumerate() {
            let train: Vec<String> = (0..5 + i).map(|j| format!("Doc {j} of {n}.")).collect();
            total += train.len();
            sources.push(SourceDocuments {
                name: n.to_string(),
                train,
                test: vec![],
            });
        }
        // Two documents shared between the Yelp sets.
        sources[2].train.push("Doc 0 of yelp_p.".into());
        sources[2].train.push("DOC 1 OF YELP_P.".into());
        total += 2;
        let scope = PretrainScope {
            kind: ScopeKind::CrossDomain,
            datasets: names.iter().map(|s| s.to_string()).collect(),
        };
        let pairs = [("yelp_p".to_string(), "yelp_f".to_string())];
        let c = assemble_corpus(&scope, &sources, &pairs, Language::English).unwrap();
        assert_eq!(c.documents.len(), total - 2);
    }

    #[test]
    fn empty_scope_is_error() {
        let scope = PretrainScope {
            kind: ScopeKind::CrossDomain,
            datasets: vec![],
        };
        assert!(assemble_corpus(&scope, &[], &[], Language::English).is_err());
    }

    #[test]
    fn corpus_file_round_trip_and_stability() {
        let sources = [src("imdb", &["One. Two! Three?", "Solo"], &[])];
        let scope = PretrainScope::within_task("imdb");
        let a = assemble_corpus(&scope, &sources, &[], Language::English).unwrap();
        let b = assemble_corpus(&scope, &sources, &[], Language::English).unwrap();
        assert_eq!(a.to_file_string(), b.to_file_string());
        assert_eq!(a.to_file_string(), "One.\nTwo!\nThree?\n\nSolo\n\n");
        assert_eq!(Corpus::parse(&a.to_file_string()), a);
    }
}
