//! Knowledge-base ingestion: stream entity records from a dump, pair aliases
//! with types, coarsen fine-grained types through the subclass hierarchy, and
//! rank the surviving types per alias by entity popularity.
//!
//! Records arrive one JSON object per line, either in the compact fixture
//! format (`id`/`label`/`aliases`/`instance_of`/`subclass_of`/`sitelinks`)
//! or in the official Wikidata dump layout reduced to those same fields.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::io::BufRead;

use serde::Deserialize;
use thiserror::Error;

use crate::dict::Normalizer;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("failed to read dump stream at line {line}")]
    Read {
        #[source]
        source: std::io::Error,
        line: usize,
    },
    #[error("invalid extraction config: {0}")]
    Config(String),
    #[error("failed to parse extraction config")]
    ConfigParse(#[from] toml::de::Error),
}

/// One knowledge-base entity reduced to the fields the gazetteer needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEntityRecord {
    pub entity_id: String,
    pub canonical_label: String,
    pub aliases: Vec<String>,
    pub instance_of: Vec<String>,
    pub subclass_of: Vec<String>,
    pub sitelink_count: u64,
}

/// Input layouts understood by [`parse_record_stream`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpFormat {
    /// One compact JSON object per line with the record fields verbatim.
    Simple,
    /// Official dump lines: per-language labels/aliases, `P31`/`P279`
    /// claims, and a sitelinks map. Array brackets and trailing commas
    /// are tolerated.
    WikidataDump,
}

#[derive(Debug, Deserialize)]
struct SimpleRecord {
    id: String,
    #[serde(default)]
    label: String,
    #[serde(default)]
    aliases: Vec<String>,
    #[serde(default)]
    instance_of: Vec<String>,
    #[serde(default)]
    subclass_of: Vec<String>,
    #[serde(default)]
    sitelinks: u64,
}

#[derive(Debug, Deserialize)]
struct DumpRecord {
    id: String,
    #[serde(default)]
    labels: BTreeMap<String, DumpLabel>,
    #[serde(default)]
    aliases: BTreeMap<String, Vec<DumpLabel>>,
    #[serde(default)]
    claims: BTreeMap<String, Vec<DumpClaim>>,
    #[serde(default)]
    sitelinks: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Deserialize)]
struct DumpLabel {
    value: String,
}

#[derive(Debug, Deserialize)]
struct DumpClaim {
    mainsnak: DumpSnak,
}

#[derive(Debug, Deserialize)]
struct DumpSnak {
    datavalue: Option<DumpDataValue>,
}

#[derive(Debug, Deserialize)]
struct DumpDataValue {
    value: serde_json::Value,
}

const INSTANCE_OF: &str = "P31";
const SUBCLASS_OF: &str = "P279";

impl DumpRecord {
    fn claim_targets(&self, property: &str) -> Vec<String> {
        self.claims
            .get(property)
            .into_iter()
            .flatten()
            .filter_map(|c| c.mainsnak.datavalue.as_ref())
            .filter_map(|dv| dv.value.get("id"))
            .filter_map(|id| id.as_str())
            .map(str::to_owned)
            .collect()
    }

    fn into_record(self) -> RawEntityRecord {
        let label = self
            .labels
            .get("en")
            .or_else(|| self.labels.values().next())
            .map(|l| l.value.clone())
            .unwrap_or_default();
        let aliases = self
            .aliases
            .get("en")
            .into_iter()
            .flatten()
            .map(|a| a.value.clone())
            .collect();
        let instance_of = self.claim_targets(INSTANCE_OF);
        let subclass_of = self.claim_targets(SUBCLASS_OF);
        RawEntityRecord {
            entity_id: self.id,
            canonical_label: label,
            aliases,
            instance_of,
            subclass_of,
            sitelink_count: self.sitelinks.len() as u64,
        }
    }
}

/// Lazy iterator over dump records. Malformed lines are skipped and counted;
/// I/O failures surface as a fatal `Err` item.
pub struct RecordStream<R: BufRead> {
    reader: R,
    format: DumpFormat,
    line_no: usize,
    skipped: usize,
    failed: bool,
}

impl<R: BufRead> RecordStream<R> {
    /// Number of malformed lines skipped so far.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    fn parse_line(&mut self, line: &str) -> Option<RawEntityRecord> {
        let trimmed = line.trim();
        // Official dumps wrap the stream in a JSON array, one entity per line.
        let trimmed = trimmed.trim_end_matches(',');
        if trimmed.is_empty() || trimmed == "[" || trimmed == "]" {
            return None;
        }
        let record = match self.format {
            DumpFormat::Simple => serde_json::from_str::<SimpleRecord>(trimmed)
                .ok()
                .map(|r| RawEntityRecord {
                    entity_id: r.id,
                    canonical_label: r.label,
                    aliases: r.aliases,
                    instance_of: r.instance_of,
                    subclass_of: r.subclass_of,
                    sitelink_count: r.sitelinks,
                }),
            DumpFormat::WikidataDump => serde_json::from_str::<DumpRecord>(trimmed)
                .ok()
                .map(DumpRecord::into_record),
        };
        match record {
            Some(r) if !r.entity_id.is_empty() => Some(r),
            _ => {
                self.skipped += 1;
                None
            }
        }
    }
}

impl<R: BufRead> Iterator for RecordStream<R> {
    type Item = Result<RawEntityRecord, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let mut line = String::new();
        loop {
            line.clear();
            match self.reader.read_line(&mut line) {
                Ok(0) => return None,
                Ok(_) => {
                    self.line_no += 1;
                    if let Some(record) = self.parse_line(&line) {
                        return Some(Ok(record));
                    }
                }
                Err(source) => {
                    self.failed = true;
                    return Some(Err(IngestError::Read {
                        source,
                        line: self.line_no + 1,
                    }));
                }
            }
        }
    }
}

/// Stream records from a line-oriented dump.
pub fn parse_record_stream<R: BufRead>(reader: R, format: DumpFormat) -> RecordStream<R> {
    RecordStream {
        reader,
        format,
        line_no: 0,
        skipped: 0,
        failed: false,
    }
}

/// Directed type graph: fine type id -> parent type ids, from subclass edges.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TypeHierarchy {
    edges: HashMap<String, BTreeSet<String>>,
}

impl TypeHierarchy {
    pub fn from_edges<I, S>(edges: I) -> Self
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        let mut h = TypeHierarchy::default();
        for (child, parent) in edges {
            h.edges.entry(child.into()).or_default().insert(parent.into());
        }
        h
    }

    /// Parents of `ty`; empty when the type is unknown.
    pub fn parents(&self, ty: &str) -> impl Iterator<Item = &str> + '_ {
        self.edges
            .get(ty)
            .into_iter()
            .flatten()
            .map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.values().map(BTreeSet::len).sum()
    }
}

/// Collect subclass edges from every record into one hierarchy.
pub fn build_type_hierarchy<'a, I>(records: I) -> TypeHierarchy
where
    I: IntoIterator<Item = &'a RawEntityRecord>,
{
    let mut h = TypeHierarchy::default();
    for record in records {
        if record.subclass_of.is_empty() {
            continue;
        }
        let parents = h.edges.entry(record.entity_id.clone()).or_default();
        parents.extend(record.subclass_of.iter().cloned());
    }
    h
}

/// Knobs for alias/type extraction and coarsening.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    /// Longest alias kept, in whitespace tokens.
    pub max_alias_tokens: usize,
    /// Most popular types kept per alias.
    pub top_k_types: usize,
    /// Coarse type name -> fine-type roots that map onto it.
    pub target_types: BTreeMap<String, BTreeSet<String>>,
    /// Fine types dropped outright (noise classes).
    pub excluded_types: BTreeSet<String>,
    /// Upward traversal depth cap for coarsening.
    pub max_traversal_depth: usize,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            max_alias_tokens: 6,
            top_k_types: 6,
            target_types: BTreeMap::new(),
            excluded_types: BTreeSet::new(),
            max_traversal_depth: 10,
        }
    }
}

impl ExtractionConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, IngestError> {
        let cfg: ExtractionConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.top_k_types < 1 {
            return Err(IngestError::Config("top_k_types must be >= 1".into()));
        }
        if self.max_alias_tokens < 1 {
            return Err(IngestError::Config("max_alias_tokens must be >= 1".into()));
        }
        if self.max_traversal_depth < 1 {
            return Err(IngestError::Config(
                "max_traversal_depth must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Coarse label for an accepting fine type, if any.
    fn accepting_label(&self, fine: &str) -> Option<&str> {
        // target_types is a BTreeMap, so iteration order is lexicographic by
        // coarse label; the first hit is the tie-break winner.
        self.target_types
            .iter()
            .find(|(_, roots)| roots.contains(fine))
            .map(|(label, _)| label.as_str())
    }
}

/// Pair every kept alias of a record with every instance-of type.
///
/// The canonical label counts as an alias. Aliases longer than
/// `max_alias_tokens` whitespace tokens are dropped, as are empty ones.
pub fn extract_alias_type_pairs(
    record: &RawEntityRecord,
    config: &ExtractionConfig,
) -> Vec<(String, String, u64)> {
    if record.instance_of.is_empty() {
        return Vec::new();
    }
    let mut seen = HashSet::new();
    let mut kept_aliases = Vec::new();
    for alias in std::iter::once(&record.canonical_label).chain(record.aliases.iter()) {
        let n_tokens = alias.split_whitespace().count();
        if n_tokens == 0 || n_tokens > config.max_alias_tokens {
            continue;
        }
        if seen.insert(alias.as_str()) {
            kept_aliases.push(alias.clone());
        }
    }
    let mut pairs = Vec::with_capacity(kept_aliases.len() * record.instance_of.len());
    for alias in &kept_aliases {
        for fine in &record.instance_of {
            pairs.push((alias.clone(), fine.clone(), record.sitelink_count));
        }
    }
    pairs
}

/// Walk upward from a fine type until an accepting root is reached.
///
/// Breadth-first with a visited set (the graph may contain cycles) and a
/// depth cap. Ties at the same depth resolve to the lexicographically
/// smallest coarse label. `None` when nothing accepting is reachable.
pub fn coarsen_type<'c>(
    fine_type: &str,
    hierarchy: &TypeHierarchy,
    config: &'c ExtractionConfig,
) -> Option<&'c str> {
    let mut visited: HashSet<&str> = HashSet::new();
    let mut frontier: VecDeque<&str> = VecDeque::new();
    frontier.push_back(fine_type);
    visited.insert(fine_type);

    for _depth in 0..=config.max_traversal_depth {
        if frontier.is_empty() {
            return None;
        }
        let mut best: Option<&str> = None;
        for ty in &frontier {
            if let Some(label) = config.accepting_label(ty) {
                best = Some(match best {
                    Some(b) if b <= label => b,
                    _ => label,
                });
            }
        }
        if best.is_some() {
            return best;
        }
        let mut next = VecDeque::new();
        for ty in frontier.drain(..) {
            for parent in hierarchy.parents(ty) {
                if visited.insert(parent) {
                    next.push_back(parent);
                }
            }
        }
        frontier = next;
    }
    None
}

/// Group coarsened pairs by alias, score each (alias, type) by the maximum
/// sitelink count over contributing entities, and keep the `top_k_types`
/// best types per alias.
///
/// Type ties break lexicographically; output aliases are sorted.
pub fn rank_and_filter(
    pairs: Vec<(String, String, u64)>,
    config: &ExtractionConfig,
) -> Vec<(String, Vec<String>)> {
    let mut scores: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for (alias, coarse, sitelinks) in pairs {
        let per_type = scores.entry(alias).or_default();
        let score = per_type.entry(coarse).or_insert(0);
        *score = (*score).max(sitelinks);
    }
    scores
        .into_iter()
        .map(|(alias, per_type)| {
            let mut ranked: Vec<(String, u64)> = per_type.into_iter().collect();
            // Descending score; the BTreeMap already yields names ascending,
            // and the stable sort preserves that order inside a score tie.
            ranked.sort_by(|a, b| b.1.cmp(&a.1));
            ranked.truncate(config.top_k_types);
            (alias, ranked.into_iter().map(|(name, _)| name).collect())
        })
        .collect()
}

/// Full extraction pipeline over an in-memory record set: hierarchy, alias
/// pairing, exclusion, coarsening, normalization, ranking.
pub fn extract_dictionary(
    records: &[RawEntityRecord],
    config: &ExtractionConfig,
    normalizer: &Normalizer,
) -> Vec<(String, Vec<String>)> {
    let hierarchy = build_type_hierarchy(records);
    let mut coarse_pairs = Vec::new();
    let mut coarse_cache: HashMap<String, Option<String>> = HashMap::new();
    for record in records {
        for (alias, fine, sitelinks) in extract_alias_type_pairs(record, config) {
            if config.excluded_types.contains(&fine) {
                continue;
            }
            let coarse = coarse_cache
                .entry(fine.clone())
                .or_insert_with(|| coarsen_type(&fine, &hierarchy, config).map(str::to_owned));
            if let Some(coarse) = coarse {
                let normalized = normalizer.phrase(&alias);
                if !normalized.is_empty() {
                    coarse_pairs.push((normalized, coarse.clone(), sitelinks));
                }
            }
        }
    }
    rank_and_filter(coarse_pairs, config)
}
