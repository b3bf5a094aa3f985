//! Gazetteer matching: leftmost-longest multi-token segments tagged B/I/L
//! (U for one-token aliases), with a per-token single-index fallback tagged
//! S for tokens no segment covers.

use serde::{Deserialize, Serialize};

use crate::corpus::{spans_from_labels, Corpus};
use crate::dict::{GazetteerDictionary, TypeId, TypeVocab};

/// Match-span tag. Stable encoding 0..4 in the order B, I, L, U, S.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpanTag {
    Begin = 0,
    Inside = 1,
    Last = 2,
    Unit = 3,
    Single = 4,
}

pub const N_SPAN_TAGS: usize = 5;

impl SpanTag {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        match self {
            SpanTag::Begin => 'B',
            SpanTag::Inside => 'I',
            SpanTag::Last => 'L',
            SpanTag::Unit => 'U',
            SpanTag::Single => 'S',
        }
    }
}

/// The set of (type, span tag) gazetteer matches on one token.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenMatchSet {
    matches: Vec<(TypeId, SpanTag)>,
}

impl TokenMatchSet {
    /// Deduplicates and caps at `max_matches`, preserving order.
    pub fn new(pairs: Vec<(TypeId, SpanTag)>, max_matches: usize) -> Self {
        let mut matches = Vec::with_capacity(pairs.len().min(max_matches));
        for pair in pairs {
            if matches.len() == max_matches {
                break;
            }
            if !matches.contains(&pair) {
                matches.push(pair);
            }
        }
        TokenMatchSet { matches }
    }

    pub fn pairs(&self) -> &[(TypeId, SpanTag)] {
        &self.matches
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MatchConfig {
    /// Per-token cap on kept matches.
    pub max_matches: usize,
    /// Single-token fallback on uncovered tokens.
    pub single_matches: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            max_matches: 6,
            single_matches: true,
        }
    }
}

/// A non-overlapping dictionary segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
    pub types: Vec<TypeId>,
}

/// Greedy leftmost-longest segment scan over normalized tokens.
///
/// From each position the longest accepting trie path wins (length 1 counts
/// as a Unit segment); the scan resumes past the segment, so segments never
/// overlap.
pub fn match_multi(tokens: &[String], dict: &GazetteerDictionary) -> Vec<Segment> {
    let mut segments = Vec::new();
    let mut pos = 0;
    while pos < tokens.len() {
        let (len, types) = dict.longest_match_from(tokens, pos);
        if len > 0 {
            segments.push(Segment {
                start: pos,
                len,
                types: types.to_vec(),
            });
            pos += len;
        } else {
            pos += 1;
        }
    }
    segments
}

/// Per-token match sets for a sentence: segment tokens get B/I/L (or U)
/// entries for each segment type; tokens left uncovered fall back to
/// S-tagged single-index entries.
pub fn match_sentence(
    tokens: &[String],
    dict: &GazetteerDictionary,
    config: &MatchConfig,
) -> Vec<TokenMatchSet> {
    let normalized = dict.normalize_tokens(tokens);
    let mut out = vec![TokenMatchSet::default(); tokens.len()];
    for segment in match_multi(&normalized, dict) {
        for offset in 0..segment.len {
            let tag = if segment.len == 1 {
                SpanTag::Unit
            } else if offset == 0 {
                SpanTag::Begin
            } else if offset == segment.len - 1 {
                SpanTag::Last
            } else {
                SpanTag::Inside
            };
            let pairs = segment.types.iter().map(|&t| (t, tag)).collect();
            out[segment.start + offset] = TokenMatchSet::new(pairs, config.max_matches);
        }
    }
    if config.single_matches {
        for (i, set) in out.iter_mut().enumerate() {
            if set.is_empty() {
                // single_token_types iterates a BTreeSet, so the fallback
                // order (and therefore the cap) is deterministic by type id
                let pairs = dict
                    .single_token_types(&normalized[i])
                    .map(|t| (t, SpanTag::Single))
                    .collect();
                *set = TokenMatchSet::new(pairs, config.max_matches);
            }
        }
    }
    out
}

/// `"City-B,State-B"`-style rendering of one token's matches; `"O"` when
/// the set is empty.
pub fn format_matches(set: &TokenMatchSet, vocab: &TypeVocab) -> String {
    if set.is_empty() {
        return "O".to_owned();
    }
    set.pairs()
        .iter()
        .map(|&(ty, tag)| format!("{}-{}", vocab.name(ty), tag.letter()))
        .collect::<Vec<_>>()
        .join(",")
}

/// Corpus-level match quality against gold spans, both in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageStats {
    /// Share of gold entity spans whose every token has a non-empty match set.
    pub entity_coverage_pct: f64,
    /// Share of tokens outside any gold span that carry matches anyway.
    pub false_match_pct: f64,
    pub gold_spans: usize,
    pub covered_spans: usize,
    pub non_entity_tokens: usize,
    pub false_match_tokens: usize,
}

/// Compute coverage over a gold-labeled corpus.
pub fn coverage_stats(
    corpus: &Corpus,
    dict: &GazetteerDictionary,
    config: &MatchConfig,
) -> CoverageStats {
    let mut gold_spans = 0usize;
    let mut covered = 0usize;
    let mut non_entity_tokens = 0usize;
    let mut false_matches = 0usize;

    for sentence in &corpus.sentences {
        let sets = match_sentence(&sentence.tokens, dict, config);
        let labels = sentence.gold_labels.clone().unwrap_or_default();
        let spans = spans_from_labels(&labels);
        let mut in_entity = vec![false; sentence.tokens.len()];
        for span in &spans {
            gold_spans += 1;
            if sets[span.start..span.start + span.len]
                .iter()
                .all(|s| !s.is_empty())
            {
                covered += 1;
            }
            for flag in in_entity.iter_mut().skip(span.start).take(span.len) {
                *flag = true;
            }
        }
        for (i, set) in sets.iter().enumerate() {
            if !in_entity[i] {
                non_entity_tokens += 1;
                if !set.is_empty() {
                    false_matches += 1;
                }
            }
        }
    }

    let pct = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            100.0 * num as f64 / den as f64
        }
    };
    CoverageStats {
        entity_coverage_pct: pct(covered, gold_spans),
        false_match_pct: pct(false_matches, non_entity_tokens),
        gold_spans,
        covered_spans: covered,
        non_entity_tokens,
        false_match_tokens: false_matches,
    }
}
