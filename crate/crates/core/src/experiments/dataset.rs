use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Rng;
use crate::pretrain::Domain;
use crate::tokenizer::{tokenize_ids, Vocabulary};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CsvFormat {
    /// `label,text`
    #[default]
    CsvLabelText,
    /// `label,title,body`
    CsvLabelTitleBody,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Validation,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub label: usize,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    pub examples: Vec<Example>,
    pub num_classes: usize,
    pub split: Split,
    pub domain: Option<Domain>,
}

impl Dataset {
    pub fn new(name: &str, examples: Vec<Example>, num_classes: usize, split: Split) -> Result<Self> {
        if let Some(e) = examples.iter().find(|e| e.label >= num_classes) {
            return Err(Error::Dataset(format!("label {} outside 0..{num_classes}", e.label)));
        }
        Ok(Self {
            name: name.to_string(),
            examples,
            num_classes,
            split,
            domain: crate::pretrain::known_domain(name),
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for e in &self.examples {
            c[e.label] += 1;
        }
        c
    }

    fn with_examples(&self, examples: Vec<Example>, split: Split) -> Self {
        Self {
            name: self.name.clone(),
            examples,
            num_classes: self.num_classes,
            split,
            domain: self.domain,
        }
    }

    /// Word-piece ids of every text (no specials), paired with labels.
    pub fn encode(&self, vocab: &Vocabulary) -> Vec<EncodedExample> {
        self.examples
            .iter()
            .map(|e| EncodedExample {
                ids: tokenize_ids(&e.text, vocab),
                label: e.label,
            })
            .collect()
    }

    /// Indices of each class, in dataset order.
    fn by_class(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut m: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, e) in self.examples.iter().enumerate() {
            m.entry(e.label).or_default().push(i);
        }
        m
    }

    fn pick(&self, mut idx: Vec<usize>, split: Split) -> Self {
        idx.sort_unstable();
        self.with_examples(idx.into_iter().map(|i| self.examples[i].clone()).collect(), split)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub ids: Vec<u32>,
    pub label: usize,
}

/// Reads a headerless CSV with 1-based labels. With `num_classes` absent the
/// class count is the largest label seen.
pub fn load_dataset(
    path: impl AsRef<Path>,
    format: CsvFormat,
    num_classes: Option<usize>,
    split: Split,
) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let fields = match format {
        CsvFormat::CsvLabelText => 2,
        CsvFormat::CsvLabelTitleBody => 3,
    };
    let malformed = |line: u64, msg: String| Error::Malformed {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut examples = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != fields {
            return Err(malformed(line, format!("expected {fields} fields, found {}", rec.len())));
        }
        let raw = rec[0].trim();
        let label: usize = raw
            .parse()
            .map_err(|_| malformed(line, format!("label `{raw}` is not a positive integer")))?;
        if label == 0 {
            return Err(malformed(line, "labels are 1-based".into()));
        }
        if let Some(c) = num_classes {
            if label > c {
                return Err(malformed(line, format!("label {label} unseen among {c} classes")));
            }
        }
        let text = match format {
            CsvFormat::CsvLabelText => rec[1].trim().to_string(),
            CsvFormat::CsvLabelTitleBody => {
                let (t, b) = (rec[1].trim(), rec[2].trim());
                match (t.is_empty(), b.is_empty()) {
                    (true, _) => b.to_string(),
                    (_, true) => t.to_string(),
                    _ => format!("{t} {b}"),
                }
            }
        };
        if text.is_empty() {
            return Err(malformed(line, "empty text".into()));
        }
        examples.push(Example { label: label - 1, text });
    }
    let classes = num_classes.unwrap_or_else(|| examples.iter().map(|e| e.label + 1).max().unwrap_or(0));
    let name = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    Dataset::new(&name, examples, classes, split)
}

/// Writes examples in `label,text` layout with 1-based labels.
pub fn write_dataset(path: impl AsRef<Path>, examples: &[Example]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for e in examples {
        w.write_record([(e.label + 1).to_string().as_str(), e.text.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

/// Seeded, stratified split; each class contributes `round(fraction · n_c)`
/// validation examples, at least one, and keeps at least one for training.
pub fn split_validation(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("validation fraction {fraction} outside (0, 1)")));
    }
    let mut rng = Rng::new(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (class, mut idx) in data.by_class() {
        if idx.len() < 2 {
            return Err(Error::Dataset(format!(
                "class {class} has {} example(s); at least 2 needed to split",
                idx.len()
            )));
        }
        rng.shuffle(&mut idx);
        let k = ((fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        val.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    Ok((data.pick(train, Split::Train), data.pick(val, Split::Validation)))
}

/// Stratified sample of `round(proportion · N)` examples. Per-class quotas use
/// largest remainders; a class whose quota rounds to zero still gets one.
/// Samples for growing proportions are nested for a fixed seed.
pub fn subsample(data: &Dataset, proportion: f64, seed: u64) -> Result<Dataset> {
    if !(proportion > 0.0 && proportion <= 1.0) {
        return Err(Error::InvalidConfig(format!("proportion {proportion} outside (0, 1]")));
    }
    if proportion == 1.0 {
        return Ok(data.clone());
    }
    let classes = data.by_class();
    let target = (proportion * data.len() as f64).round() as usize;
    let exact: Vec<(usize, f64)> = classes
        .iter()
        .map(|(&c, idx)| (c, proportion * idx.len() as f64))
        .collect();
    let mut quota: BTreeMap<usize, usize> = exact.iter().map(|&(c, x)| (c, x.floor() as usize)).collect();
    let mut short = target.saturating_sub(quota.values().sum());
    let mut order: Vec<&(usize, f64)> = exact.iter().collect();
    order.sort_by(|a, b| (b.1 - b.1.floor()).total_cmp(&(a.1 - a.1.floor())).then(a.0.cmp(&b.0)));
    for (c, _) in order {
        if short == 0 {
            break;
        }
        *quota.get_mut(c).expect("class") += 1;
        short -= 1;
    }
    let mut rng = Rng::new(seed);
    let mut picked = Vec::with_capacity(target);
    for (c, mut idx) in classes {
        let mut q = quota[&c];
        if q == 0 {
            log::warn!("class {c} rounds to zero examples at proportion {proportion}; keeping one");
            q = 1;
        }
        rng.shuffle(&mut idx);
        picked.extend_from_slice(&idx[..q.min(idx.len())]);
    }
    Ok(data.pick(picked, data.split))
}
