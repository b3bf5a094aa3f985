//! CoNLL-style corpus reading/writing, BILOU label utilities, and the
//! synthetic corpus generator used by the training experiments.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dict::GazetteerDictionary;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: expected at least {expected} columns, found {found}")]
    RaggedColumns {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: unknown label `{label}`")]
    UnknownLabel { line: usize, label: String },
    #[error("io error")]
    Io(#[from] std::io::Error),
}

/// One tokenized sentence, optionally labeled and/or match-annotated.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub gold_labels: Option<Vec<String>>,
    pub match_column: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Entity type names observed in the gold labels, sorted.
    pub fn entity_types(&self) -> Vec<String> {
        let mut types = BTreeSet::new();
        for sentence in &self.sentences {
            for label in sentence.gold_labels.iter().flatten() {
                if let Some((_, ty)) = split_label(label) {
                    types.insert(ty.to_owned());
                }
            }
        }
        types.into_iter().collect()
    }
}

/// A gold or predicted entity span, type carried by name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabeledSpan {
    pub start: usize,
    pub len: usize,
    pub entity_type: String,
}

/// Split `B-LOC` into `("B", "LOC")`; `None` for `O`.
pub fn split_label(label: &str) -> Option<(&str, &str)> {
    if label == "O" {
        return None;
    }
    label.split_once('-')
}

fn is_valid_label(label: &str) -> bool {
    label == "O"
        || matches!(split_label(label), Some((p, ty))
            if matches!(p, "B" | "I" | "L" | "U") && !ty.is_empty())
}

fn is_valid_bio_label(label: &str) -> bool {
    label == "O"
        || matches!(split_label(label), Some((p, ty)) if matches!(p, "B" | "I") && !ty.is_empty())
}

/// Convert a BIO-tagged sequence to BILOU.
///
/// An `I` that does not continue a same-type run is treated as a run start,
/// which is how the public corpora in the wild behave.
pub fn bio_to_bilou(labels: &[String]) -> Vec<String> {
    let mut out = vec!["O".to_string(); labels.len()];
    let mut i = 0;
    while i < labels.len() {
        let Some((prefix, ty)) = split_label(&labels[i]) else {
            i += 1;
            continue;
        };
        debug_assert!(matches!(prefix, "B" | "I"));
        let mut end = i + 1;
        while end < labels.len() {
            match split_label(&labels[end]) {
                Some(("I", t)) if t == ty => end += 1,
                _ => break,
            }
        }
        if end - i == 1 {
            out[i] = format!("U-{ty}");
        } else {
            out[i] = format!("B-{ty}");
            for o in out.iter_mut().take(end - 1).skip(i + 1) {
                *o = format!("I-{ty}");
            }
            out[end - 1] = format!("L-{ty}");
        }
        i = end;
    }
    out
}

/// Strict BILOU span decoding: only well-formed `B I* L` runs and `U` units
/// become spans; malformed runs are dropped. Never panics.
pub fn spans_from_labels<S: AsRef<str>>(labels: &[S]) -> Vec<LabeledSpan> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        match split_label(labels[i].as_ref()) {
            Some(("U", ty)) => {
                spans.push(LabeledSpan {
                    start: i,
                    len: 1,
                    entity_type: ty.to_owned(),
                });
                i += 1;
            }
            Some(("B", ty)) => {
                let mut j = i + 1;
                while j < labels.len() && labels[j].as_ref() == format!("I-{ty}") {
                    j += 1;
                }
                if j < labels.len() && labels[j].as_ref() == format!("L-{ty}") {
                    spans.push(LabeledSpan {
                        start: i,
                        len: j - i + 1,
                        entity_type: ty.to_owned(),
                    });
                    i = j + 1;
                } else {
                    i += 1;
                }
            }
            _ => i += 1,
        }
    }
    spans
}

/// Which whitespace-separated columns hold the token and the label.
#[derive(Debug, Clone, Copy)]
pub struct ColumnSpec {
    pub token: usize,
    pub label: Option<usize>,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        ColumnSpec {
            token: 0,
            label: Some(1),
        }
    }
}

/// Column count of the first non-blank line; used to decide whether an
/// input file carries labels at all.
pub fn sniff_columns(text: &str) -> usize {
    text.lines()
        .find(|l| !l.trim().is_empty())
        .map_or(0, |l| l.split_whitespace().count())
}

/// Read a CoNLL column file: one token per line, blank line between
/// sentences. BIO-labeled input is converted to BILOU.
pub fn read_conll<R: BufRead>(source: R, spec: ColumnSpec) -> Result<Corpus, CorpusError> {
    let mut sentences = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    let mut label_lines: Vec<usize> = Vec::new();

    let mut flush = |tokens: &mut Vec<String>,
                     labels: &mut Vec<String>,
                     label_lines: &mut Vec<usize>|
     -> Result<(), CorpusError> {
        if tokens.is_empty() {
            return Ok(());
        }
        let gold = if labels.is_empty() {
            None
        } else {
            let bilou = if labels.iter().all(|l| is_valid_bio_label(l)) {
                bio_to_bilou(labels)
            } else {
                labels.clone()
            };
            for (label, &line) in bilou.iter().zip(label_lines.iter()) {
                if !is_valid_label(label) {
                    return Err(CorpusError::UnknownLabel {
                        line,
                        label: label.clone(),
                    });
                }
            }
            Some(bilou)
        };
        sentences.push(Sentence {
            tokens: std::mem::take(tokens),
            gold_labels: gold,
            match_column: None,
        });
        labels.clear();
        label_lines.clear();
        Ok(())
    };

    let needed = spec.token.max(spec.label.unwrap_or(0)) + 1;
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            flush(&mut tokens, &mut labels, &mut label_lines)?;
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() < needed {
            return Err(CorpusError::RaggedColumns {
                line: line_no,
                expected: needed,
                found: cols.len(),
            });
        }
        tokens.push(cols[spec.token].to_owned());
        if let Some(l) = spec.label {
            labels.push(cols[l].to_owned());
            label_lines.push(line_no);
        }
    }
    flush(&mut tokens, &mut labels, &mut label_lines)?;
    Ok(Corpus { sentences })
}

/// Write a corpus in CoNLL columns; returns bytes written.
pub fn write_conll<W: Write>(
    corpus: &Corpus,
    mut sink: W,
    include_matches: bool,
) -> Result<usize, CorpusError> {
    let mut bytes = 0usize;
    for (i, sentence) in corpus.sentences.iter().enumerate() {
        if i > 0 {
            sink.write_all(b"\n")?;
            bytes += 1;
        }
        for (t, token) in sentence.tokens.iter().enumerate() {
            let mut line = token.clone();
            if let Some(labels) = &sentence.gold_labels {
                line.push(' ');
                line.push_str(&labels[t]);
            }
            if include_matches {
                if let Some(matches) = &sentence.match_column {
                    line.push(' ');
                    line.push_str(&matches[t]);
                }
            }
            line.push('\n');
            sink.write_all(line.as_bytes())?;
            bytes += line.len();
        }
    }
    Ok(bytes)
}

/// Synthetic corpus shape. `entity_rate` is the probability that a sentence
/// slot carries an entity; `ood_entity_rate` turns an entity into an
/// out-of-dictionary variant (a known multi-token alias with its head token
/// dropped); `adjacent_rate` places a second entity immediately after one.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_sentences: usize,
    pub entity_rate: f64,
    pub ood_entity_rate: f64,
    pub adjacent_rate: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(n_sentences: usize, entity_rate: f64, seed: u64) -> Self {
        SynthConfig {
            n_sentences,
            entity_rate,
            ood_entity_rate: 0.0,
            adjacent_rate: 0.0,
            seed,
        }
    }
}

const BASE_FILLERS: &[&str] = &[
    "the", "a", "of", "in", "on", "at", "near", "with", "saw", "met", "left", "found", "old",
    "new", "big", "small", "quiet", "again", "went", "to",
];

/// Generate a labeled corpus whose entities are dictionary aliases.
///
/// A third of the distinct alias tokens are folded into the filler
/// vocabulary, so token identity alone does not separate entities from
/// background text; recovering the spans requires the dictionary.
pub fn generate_synthetic(dict: &GazetteerDictionary, config: &SynthConfig) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let aliases = dict.aliases();
    assert!(!aliases.is_empty(), "synthetic generation needs a non-empty dictionary");

    let alias_tokens: Vec<String> = {
        let mut set = BTreeSet::new();
        for (alias, _) in &aliases {
            for token in alias.split_whitespace() {
                set.insert(token.to_owned());
            }
        }
        set.into_iter().collect()
    };
    // Shared ambiguous tokens: at least a third of the entity vocabulary
    // doubles as filler.
    let n_shared = (alias_tokens.len() + 2) / 3;
    let mut shared: Vec<String> = alias_tokens.clone();
    shared.shuffle(&mut rng);
    shared.truncate(n_shared);
    let mut fillers: Vec<String> = BASE_FILLERS.iter().map(|s| s.to_string()).collect();
    fillers.extend(shared);

    // Aliases eligible for the out-of-dictionary transform: >= 3 tokens,
    // with the tail (head token dropped) absent from the dictionary.
    let ood_pool: Vec<(Vec<String>, String)> = aliases
        .iter()
        .filter_map(|(alias, types)| {
            let tokens: Vec<String> = alias.split_whitespace().map(str::to_owned).collect();
            if tokens.len() < 3 {
                return None;
            }
            let tail = tokens[1..].to_vec();
            let (len, _) = dict.longest_match_from(&tail, 0);
            if len == tail.len() {
                return None;
            }
            let top_type = dict.vocab().name(types[0]).to_owned();
            Some((tail, top_type))
        })
        .collect();

    let mut sentences = Vec::with_capacity(config.n_sentences);
    for _ in 0..config.n_sentences {
        let mut tokens: Vec<String> = Vec::new();
        let mut labels: Vec<String> = Vec::new();

        let push_filler = |tokens: &mut Vec<String>, labels: &mut Vec<String>, rng: &mut ChaCha8Rng| {
            let run = rng.gen_range(1..=3);
            for _ in 0..run {
                tokens.push(fillers.choose(rng).unwrap().clone());
                labels.push("O".to_string());
            }
        };

        let push_entity = |tokens: &mut Vec<String>, labels: &mut Vec<String>, rng: &mut ChaCha8Rng| {
            let (entity_tokens, entity_type) = if !ood_pool.is_empty()
                && rng.gen_bool(config.ood_entity_rate)
            {
                ood_pool.choose(rng).unwrap().clone()
            } else {
                let (alias, types) = aliases.choose(rng).unwrap();
                let toks: Vec<String> = alias.split_whitespace().map(str::to_owned).collect();
                (toks, dict.vocab().name(types[0]).to_owned())
            };
            let n = entity_tokens.len();
            for (i, tok) in entity_tokens.into_iter().enumerate() {
                tokens.push(tok);
                labels.push(if n == 1 {
                    format!("U-{entity_type}")
                } else if i == 0 {
                    format!("B-{entity_type}")
                } else if i == n - 1 {
                    format!("L-{entity_type}")
                } else {
                    format!("I-{entity_type}")
                });
            }
        };

        let slots = rng.gen_range(2..=4);
        push_filler(&mut tokens, &mut labels, &mut rng);
        for _ in 0..slots {
            if rng.gen_bool(config.entity_rate) {
                push_entity(&mut tokens, &mut labels, &mut rng);
                while rng.gen_bool(config.adjacent_rate) {
                    push_entity(&mut tokens, &mut labels, &mut rng);
                }
            }
            push_filler(&mut tokens, &mut labels, &mut rng);
        }

        sentences.push(Sentence {
            tokens,
            gold_labels: Some(labels),
            match_column: None,
        });
    }
    Corpus { sentences }
}
