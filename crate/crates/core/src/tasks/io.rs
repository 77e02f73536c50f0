use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{split_counts, Label, Sample, Suite, TaskKind, TaskSpec, PAD};
use crate::error::{Error, Result};

/// Column names of a classification CSV.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub text_column: String,
    pub label_column: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            text_column: "text".into(),
            label_column: "label".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RawLabel {
    Class(String),
    Tags(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawSample {
    pub tokens: Vec<String>,
    pub label: RawLabel,
}

/// A parsed corpus before tokens and labels are mapped to ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawTask {
    pub name: String,
    pub kind: TaskKind,
    pub samples: Vec<RawSample>,
}

/// Word list with id 0 reserved for padding and unknown words.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().skip(1).map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary { words, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}

impl Vocabulary {
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let unique: BTreeSet<&str> = words.into_iter().collect();
        let mut list = vec!["<unk>".to_string()];
        list.extend(unique.into_iter().map(str::to_string));
        Vocabulary::from(list)
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(PAD)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 1
    }
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn task_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "task".into())
}

/// Reads a headed CSV; the text column is split on whitespace.
pub fn read_csv_classification(path: &Path, schema: &CsvSchema) -> Result<RawTask> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(path, 1, format!("missing column `{name}`")))
    };
    let (text_col, label_col) = (column(&schema.text_column)?, column(&schema.label_column)?);
    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let (Some(text), Some(label)) = (record.get(text_col), record.get(label_col)) else {
            return Err(parse_err(path, line, "row is missing a column"));
        };
        let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            return Err(parse_err(path, line, "empty text"));
        }
        let label = label.trim();
        if label.is_empty() {
            return Err(parse_err(path, line, "empty label"));
        }
        samples.push(RawSample {
            tokens,
            label: RawLabel::Class(label.to_string()),
        });
    }
    if samples.is_empty() {
        return Err(Error::Contract(format!("{} holds no samples", path.display())));
    }
    Ok(RawTask {
        name: task_name(path),
        kind: TaskKind::Classification,
        samples,
    })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => parse_err(path, line, format!("{other:?}")),
    }
}

/// Reads `token<TAB>tag` lines; blank lines end sentences.
pub fn read_conll(path: &Path) -> Result<RawTask> {
    let text = fs::read_to_string(path)?;
    let mut samples = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut flush = |tokens: &mut Vec<String>, tags: &mut Vec<String>| {
        if !tokens.is_empty() {
            samples.push(RawSample {
                tokens: std::mem::take(tokens),
                label: RawLabel::Tags(std::mem::take(tags)),
            });
        }
    };
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut tokens, &mut tags);
            continue;
        }
        let mut cols = line.split('\t');
        match (cols.next(), cols.next(), cols.next()) {
            (Some(tok), Some(tag), None) if !tok.is_empty() && !tag.is_empty() => {
                tokens.push(tok.to_string());
                tags.push(tag.to_string());
            }
            _ => return Err(parse_err(path, i as u64 + 1, "expected `token<TAB>tag`")),
        }
    }
    flush(&mut tokens, &mut tags);
    if samples.is_empty() {
        return Err(Error::Contract(format!("{} holds no sentences", path.display())));
    }
    Ok(RawTask {
        name: task_name(path),
        kind: TaskKind::Tagging,
        samples,
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Train/dev/test sample indices: items are ordered by a hash of their index
/// and `seed`, then cut 70/10/20.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (splitmix64(i as u64 ^ splitmix64(seed)), i));
    let (n_train, n_dev) = split_counts(n);
    let test = order.split_off(n_train + n_dev);
    let dev = order.split_off(n_train);
    (order, dev, test)
}

/// Splits every task, builds one vocabulary from the training splits and maps
/// everything to ids. Label sets are sorted per task.
pub fn encode_suite(raw: &[RawTask], seed: u64) -> Result<(Suite, Vocabulary)> {
    if raw.is_empty() {
        return Err(Error::Contract("no tasks to encode".into()));
    }
    let splits: Vec<_> = raw.iter().map(|t| split_indices(t.samples.len(), seed)).collect();
    let vocab = Vocabulary::from_words(raw.iter().zip(&splits).flat_map(|(t, (train, _, _))| {
        train
            .iter()
            .flat_map(move |&i| t.samples[i].tokens.iter().map(String::as_str))
    }));
    let mut tasks = Vec::new();
    for (id, (task, (train, dev, test))) in raw.iter().zip(&splits).enumerate() {
        let labels: Vec<String> = task
            .samples
            .iter()
            .flat_map(|s| match &s.label {
                RawLabel::Class(c) => vec![c.as_str()],
                RawLabel::Tags(t) => t.iter().map(String::as_str).collect(),
            })
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(str::to_string)
            .collect();
        let label_id = |l: &str| labels.binary_search_by(|x| x.as_str().cmp(l)).expect("collected above");
        let encode = |idx: &[usize]| -> Vec<Sample> {
            idx.iter()
                .map(|&i| {
                    let s = &task.samples[i];
                    Sample {
                        tokens: s.tokens.iter().map(|w| vocab.id(w)).collect(),
                        label: match &s.label {
                            RawLabel::Class(c) => Label::Class(label_id(c)),
                            RawLabel::Tags(t) => Label::Tags(t.iter().map(|y| label_id(y)).collect()),
                        },
                    }
                })
                .collect()
        };
        tasks.push(TaskSpec {
            id,
            name: task.name.clone(),
            kind: task.kind,
            labels: labels.clone(),
            train: encode(train),
            dev: encode(dev),
            test: encode(test),
            cluster: None,
            level: None,
        });
    }
    let suite = Suite {
        vocab_size: vocab.len(),
        tasks,
    };
    suite.validate()?;
    Ok((suite, vocab))
}

pub fn load_csv_classification(path: &Path, schema: &CsvSchema, seed: u64) -> Result<(TaskSpec, Vocabulary)> {
    let raw = read_csv_classification(path, schema)?;
    let (mut suite, vocab) = encode_suite(&[raw], seed)?;
    Ok((suite.tasks.remove(0), vocab))
}

pub fn load_conll(path: &Path, seed: u64) -> Result<(TaskSpec, Vocabulary)> {
    let raw = read_conll(path)?;
    let (mut suite, vocab) = encode_suite(&[raw], seed)?;
    Ok((suite.tasks.remove(0), vocab))
}
