//! The gazetteer dictionary: a token-sequence trie for longest-segment
//! lookup plus a single-token vocabulary index per type.
//!
//! The single-token index is a projection of the trie: a token maps to a
//! type exactly when some alias of that type contains the token.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// Dense index into [`TypeVocab`].
pub type TypeId = usize;

pub const DICT_HEADER: &str = "#gazkit-dict v1";

#[derive(Debug, Error)]
pub enum DictError {
    #[error("empty alias at entry {entry}")]
    EmptyAlias { entry: usize },
    #[error("dictionary header mismatch: expected `{expected}`, found `{found}`")]
    Version { expected: String, found: String },
    #[error("malformed dictionary line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("io error")]
    Io(#[from] std::io::Error),
}

/// Token normalization applied identically to dictionary aliases and
/// sentence tokens: NFC always, lowercase fold unless disabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Normalizer {
    pub case_fold: bool,
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer { case_fold: true }
    }
}

impl Normalizer {
    pub fn case_sensitive() -> Self {
        Normalizer { case_fold: false }
    }

    pub fn token(&self, token: &str) -> String {
        let composed: String = token.nfc().collect();
        if self.case_fold {
            composed.to_lowercase()
        } else {
            composed
        }
    }

    /// Normalize a whitespace-separated phrase into single-space form.
    pub fn phrase(&self, phrase: &str) -> String {
        phrase
            .split_whitespace()
            .map(|t| self.token(t))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn tokens(&self, tokens: &[String]) -> Vec<String> {
        tokens.iter().map(|t| self.token(t)).collect()
    }
}

/// Bijective coarse-type name <-> dense id table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TypeVocab {
    names: Vec<String>,
    index: HashMap<String, TypeId>,
}

impl TypeVocab {
    /// Build from a set of names; ids are assigned in lexicographic order.
    pub fn from_names(names: BTreeSet<String>) -> Self {
        let names: Vec<String> = names.into_iter().collect();
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        TypeVocab { names, index }
    }

    pub fn id(&self, name: &str) -> Option<TypeId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: TypeId) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, Default)]
struct TrieNode {
    children: BTreeMap<String, usize>,
    /// Types of the alias ending here, in dictionary rank order; empty
    /// means non-accepting.
    types: Vec<TypeId>,
}

/// Immutable gazetteer dictionary: alias trie + single-token index.
#[derive(Debug, Clone)]
pub struct GazetteerDictionary {
    nodes: Vec<TrieNode>,
    single_index: HashMap<String, BTreeSet<TypeId>>,
    vocab: TypeVocab,
    normalizer: Normalizer,
    n_aliases: usize,
}

impl GazetteerDictionary {
    /// Build from `(alias, ranked type names)` entries.
    ///
    /// Aliases are tokenized on whitespace and normalized; duplicate entries
    /// are merged (type lists unioned preserving first-seen rank order), so
    /// the build is idempotent. Empty aliases are rejected.
    pub fn build(
        entries: &[(String, Vec<String>)],
        normalizer: Normalizer,
    ) -> Result<Self, DictError> {
        let type_names: BTreeSet<String> = entries
            .iter()
            .flat_map(|(_, types)| types.iter().cloned())
            .collect();
        let vocab = TypeVocab::from_names(type_names);

        let mut dict = GazetteerDictionary {
            nodes: vec![TrieNode::default()],
            single_index: HashMap::new(),
            vocab,
            normalizer,
            n_aliases: 0,
        };

        for (entry_no, (alias, types)) in entries.iter().enumerate() {
            let tokens: Vec<String> = alias
                .split_whitespace()
                .map(|t| dict.normalizer.token(t))
                .collect();
            if tokens.is_empty() {
                return Err(DictError::EmptyAlias { entry: entry_no + 1 });
            }
            let type_ids: Vec<TypeId> = types
                .iter()
                .map(|t| dict.vocab.id(t).expect("type came from these entries"))
                .collect();

            let mut node = 0usize;
            for token in &tokens {
                node = match dict.nodes[node].children.get(token) {
                    Some(&next) => next,
                    None => {
                        let next = dict.nodes.len();
                        dict.nodes.push(TrieNode::default());
                        dict.nodes[node].children.insert(token.clone(), next);
                        next
                    }
                };
            }
            if dict.nodes[node].types.is_empty() {
                dict.n_aliases += 1;
            }
            for id in type_ids {
                if !dict.nodes[node].types.contains(&id) {
                    dict.nodes[node].types.push(id);
                }
                for token in &tokens {
                    dict.single_index.entry(token.clone()).or_default().insert(id);
                }
            }
        }
        Ok(dict)
    }

    /// Longest accepting trie path starting at `tokens[start]`.
    ///
    /// Returns `(0, [])` when no prefix accepts. Tokens must already be
    /// normalized (see [`GazetteerDictionary::normalize_tokens`]).
    pub fn longest_match_from(&self, tokens: &[String], start: usize) -> (usize, &[TypeId]) {
        let mut node = 0usize;
        let mut best: (usize, &[TypeId]) = (0, &[]);
        for (offset, token) in tokens[start..].iter().enumerate() {
            match self.nodes[node].children.get(token) {
                Some(&next) => {
                    node = next;
                    if !self.nodes[node].types.is_empty() {
                        best = (offset + 1, &self.nodes[node].types);
                    }
                }
                None => break,
            }
        }
        best
    }

    /// Types whose aliases contain this (normalized) token; empty on miss.
    pub fn single_token_types(&self, token: &str) -> impl Iterator<Item = TypeId> + '_ {
        self.single_index
            .get(token)
            .into_iter()
            .flatten()
            .copied()
    }

    pub fn normalize_tokens(&self, tokens: &[String]) -> Vec<String> {
        self.normalizer.tokens(tokens)
    }

    pub fn normalizer(&self) -> Normalizer {
        self.normalizer
    }

    pub fn vocab(&self) -> &TypeVocab {
        &self.vocab
    }

    pub fn alias_count(&self) -> usize {
        self.n_aliases
    }

    pub fn is_empty(&self) -> bool {
        self.n_aliases == 0
    }

    /// Enumerate `(alias, type ids)` pairs in lexicographic alias order.
    pub fn aliases(&self) -> Vec<(String, Vec<TypeId>)> {
        let mut out = Vec::with_capacity(self.n_aliases);
        let mut path: Vec<&str> = Vec::new();
        self.walk(0, &mut path, &mut out);
        out
    }

    fn walk<'a>(
        &'a self,
        node: usize,
        path: &mut Vec<&'a str>,
        out: &mut Vec<(String, Vec<TypeId>)>,
    ) {
        if !self.nodes[node].types.is_empty() {
            out.push((path.join(" "), self.nodes[node].types.clone()));
        }
        for (token, &child) in &self.nodes[node].children {
            path.push(token);
            self.walk(child, path, out);
            path.pop();
        }
    }

    /// Rebuild with a different normalizer (used by the case-fold switch).
    pub fn with_normalizer(&self, normalizer: Normalizer) -> Self {
        let entries: Vec<(String, Vec<String>)> = self
            .aliases()
            .into_iter()
            .map(|(alias, ids)| {
                let names = ids.iter().map(|&id| self.vocab.name(id).to_owned()).collect();
                (alias, names)
            })
            .collect();
        GazetteerDictionary::build(&entries, normalizer)
            .expect("entries enumerated from a valid dictionary")
    }

    /// Write the v1 TSV format: header line, then `alias<TAB>t1,t2,...`
    /// with aliases sorted and types in rank order.
    pub fn save<W: Write>(&self, mut sink: W) -> Result<(), DictError> {
        writeln!(sink, "{DICT_HEADER}")?;
        for (alias, type_ids) in self.aliases() {
            let names: Vec<&str> = type_ids.iter().map(|&id| self.vocab.name(id)).collect();
            writeln!(sink, "{alias}\t{}", names.join(","))?;
        }
        Ok(())
    }

    /// Read the v1 TSV format back into a dictionary.
    pub fn load<R: BufRead>(source: R, normalizer: Normalizer) -> Result<Self, DictError> {
        let entries = load_entries_tsv(source, true)?;
        GazetteerDictionary::build(&entries, normalizer)
    }
}

/// Parse TSV dictionary entries. With `require_header` the first line must
/// be the exact v1 header; otherwise a header is accepted when present.
pub fn load_entries_tsv<R: BufRead>(
    source: R,
    require_header: bool,
) -> Result<Vec<(String, Vec<String>)>, DictError> {
    let mut entries = Vec::new();
    let mut first = true;
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        if first {
            first = false;
            if line.trim_end() == DICT_HEADER {
                continue;
            }
            if require_header {
                return Err(DictError::Version {
                    expected: DICT_HEADER.to_owned(),
                    found: line.chars().take(40).collect(),
                });
            }
        }
        if line.trim().is_empty() {
            continue;
        }
        let (alias, types) = line.split_once('\t').ok_or_else(|| DictError::Malformed {
            line: idx + 1,
            reason: "expected `alias<TAB>types`".into(),
        })?;
        if alias.trim().is_empty() {
            return Err(DictError::EmptyAlias { entry: idx + 1 });
        }
        let types: Vec<String> = types
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::to_owned)
            .collect();
        if types.is_empty() {
            return Err(DictError::Malformed {
                line: idx + 1,
                reason: "alias has no types".into(),
            });
        }
        entries.push((alias.to_owned(), types));
    }
    Ok(entries)
}
