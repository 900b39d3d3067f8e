//! Triple ingestion, vocabularies, and the multi-source graph container.
//!
//! A heterogeneous information network here is a set of triples (head,
//! relation, tail) partitioned into named subgraph sources. Entity and
//! relation ids are global: the vocabulary is built over the union of all
//! sources so that shared entities get a single id.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};

/// One directed edge. Ids index into the owning [`Vocab`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: u64,
    pub relation: u32,
    pub tail: u64,
}

/// A triple still in string form, before vocabulary resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

/// Source handle: dense index in [0, K) plus the manifest name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceId {
    pub index: usize,
    pub name: String,
}

/// Global entity/relation vocabulary with the type maps τ and φ.
///
/// When no type file is supplied every entity and relation gets the single
/// type 0 named "default".
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    pub entity_names: Vec<String>,
    pub relation_names: Vec<String>,
    pub entity_type_names: Vec<String>,
    pub relation_type_names: Vec<String>,
    /// τ: entity id -> entity type id.
    pub entity_type_of: Vec<u32>,
    /// φ: relation id -> relation type id.
    pub relation_type_of: Vec<u32>,
    entity_index: HashMap<String, u64>,
    relation_index: HashMap<String, u32>,
}

impl Vocab {
    fn new() -> Self {
        Vocab {
            entity_names: Vec::new(),
            relation_names: Vec::new(),
            entity_type_names: vec!["default".to_string()],
            relation_type_names: vec!["default".to_string()],
            entity_type_of: Vec::new(),
            relation_type_of: Vec::new(),
            entity_index: HashMap::new(),
            relation_index: HashMap::new(),
        }
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn entity_id(&self, name: &str) -> Option<u64> {
        self.entity_index.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<u32> {
        self.relation_index.get(name).copied()
    }

    fn intern_entity(&mut self, name: &str) -> u64 {
        if let Some(&id) = self.entity_index.get(name) {
            return id;
        }
        let id = self.entity_names.len() as u64;
        self.entity_names.push(name.to_string());
        self.entity_type_of.push(0);
        self.entity_index.insert(name.to_string(), id);
        id
    }

    fn intern_relation(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.relation_index.get(name) {
            return id;
        }
        let id = self.relation_names.len() as u32;
        self.relation_names.push(name.to_string());
        self.relation_type_of.push(0);
        self.relation_index.insert(name.to_string(), id);
        id
    }

    fn rebuild_indexes(&mut self) {
        self.entity_index = self
            .entity_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u64))
            .collect();
        self.relation_index = self
            .relation_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u32))
            .collect();
    }

    /// Apply a `name<TAB>type` mapping to the entity type map τ.
    pub fn apply_entity_types(&mut self, pairs: &[(String, String)]) -> usize {
        let mut applied = 0;
        for (name, ty) in pairs {
            if let Some(&id) = self.entity_index.get(name.as_str()) {
                let tid = match self.entity_type_names.iter().position(|t| t == ty) {
                    Some(i) => i as u32,
                    None => {
                        self.entity_type_names.push(ty.clone());
                        (self.entity_type_names.len() - 1) as u32
                    }
                };
                self.entity_type_of[id as usize] = tid;
                applied += 1;
            }
        }
        applied
    }
}

/// The multi-source graph: immutable after [`build_hin`].
#[derive(Debug, Clone, PartialEq)]
pub struct Hin {
    pub vocab: Vocab,
    pub source_names: Vec<String>,
    /// Per-source deduplicated triple lists, the subgraphs G_i.
    pub sources: Vec<Vec<Triple>>,
    /// For each source, the sorted set V_i of entity ids occurring in it.
    pub per_source_entities: Vec<Vec<u64>>,
}

impl Hin {
    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn source_id(&self, name: &str) -> Option<SourceId> {
        self.source_names
            .iter()
            .position(|n| n == name)
            .map(|index| SourceId {
                index,
                name: name.to_string(),
            })
    }

    pub fn total_edges(&self) -> usize {
        self.sources.iter().map(|s| s.len()).sum()
    }
}

/// Parse a tab-separated triple stream. Lines are `head<TAB>relation<TAB>tail`;
/// empty lines are skipped. Duplicates are preserved here; deduplication
/// happens in [`build_hin`].
pub fn parse_triple_file(reader: impl BufRead, path_label: &str) -> Result<Vec<RawTriple>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path_label, e))?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.is_empty() {
            continue;
        }
        let mut fields = trimmed.split('\t');
        let (head, relation, tail) = match (fields.next(), fields.next(), fields.next()) {
            (Some(h), Some(r), Some(t)) if fields.next().is_none() => (h, r, t),
            _ => {
                return Err(Error::Parse {
                    path: path_label.to_string(),
                    line: lineno + 1,
                    message: format!("expected 3 tab-separated fields, got: {trimmed:?}"),
                })
            }
        };
        out.push(RawTriple {
            head: head.to_string(),
            relation: relation.to_string(),
            tail: tail.to_string(),
        });
    }
    Ok(out)
}

/// Build the graph from a manifest of `source name -> raw triples`.
///
/// Id assignment is first-appearance order with sources iterated in sorted
/// name order, so the vocabulary is deterministic across runs. Duplicate
/// triples within a source are dropped; duplicates across sources are kept
/// (each source owns its copy).
pub fn build_hin(manifest: &BTreeMap<String, Vec<RawTriple>>) -> Result<Hin> {
    if manifest.is_empty() {
        return Err(Error::Config("source manifest is empty".to_string()));
    }
    let mut vocab = Vocab::new();
    let mut source_names = Vec::new();
    let mut sources = Vec::new();
    let mut per_source_entities = Vec::new();

    for (name, raw) in manifest {
        let mut seen = HashSet::new();
        let mut triples = Vec::new();
        let mut entities = HashSet::new();
        for rt in raw {
            let head = vocab.intern_entity(&rt.head);
            let relation = vocab.intern_relation(&rt.relation);
            let tail = vocab.intern_entity(&rt.tail);
            let t = Triple {
                head,
                relation,
                tail,
            };
            if seen.insert(t) {
                triples.push(t);
                entities.insert(head);
                entities.insert(tail);
            }
        }
        let mut entities: Vec<u64> = entities.into_iter().collect();
        entities.sort_unstable();
        source_names.push(name.clone());
        sources.push(triples);
        per_source_entities.push(entities);
    }

    Ok(Hin {
        vocab,
        source_names,
        sources,
        per_source_entities,
    })
}

/// Route every triple to the group containing its relation. The groups must
/// partition the relation vocabulary; offenders are listed in the error.
pub fn split_by_relation(
    triples: &[RawTriple],
    groups: &BTreeMap<String, Vec<String>>,
) -> Result<BTreeMap<String, Vec<RawTriple>>> {
    let mut relation_group: HashMap<&str, &str> = HashMap::new();
    let mut duplicated = Vec::new();
    for (group, relations) in groups {
        for r in relations {
            if relation_group.insert(r.as_str(), group.as_str()).is_some() {
                duplicated.push(r.clone());
            }
        }
    }
    if !duplicated.is_empty() {
        duplicated.sort();
        duplicated.dedup();
        return Err(Error::Partition(format!(
            "relations listed in more than one group: {}",
            duplicated.join(", ")
        )));
    }
    let mut uncovered: Vec<String> = triples
        .iter()
        .filter(|t| !relation_group.contains_key(t.relation.as_str()))
        .map(|t| t.relation.clone())
        .collect();
    if !uncovered.is_empty() {
        uncovered.sort();
        uncovered.dedup();
        return Err(Error::Partition(format!(
            "relations not covered by any group: {}",
            uncovered.join(", ")
        )));
    }
    let mut manifest: BTreeMap<String, Vec<RawTriple>> =
        groups.keys().map(|g| (g.clone(), Vec::new())).collect();
    for t in triples {
        let group = relation_group[t.relation.as_str()];
        manifest.get_mut(group).unwrap().push(t.clone());
    }
    Ok(manifest)
}

/// Counts for one row of the stats table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatsRow {
    pub name: String,
    pub entities: usize,
    pub relations: usize,
    pub edges: usize,
    pub entity_types: usize,
}

/// Per-source and total entity/relation/edge counts. The first row is the
/// merged graph ("Total"), followed by one row per source.
pub fn stats(hin: &Hin) -> Vec<StatsRow> {
    let mut rows = Vec::with_capacity(hin.num_sources() + 1);
    rows.push(StatsRow {
        name: "Total".to_string(),
        entities: hin.vocab.num_entities(),
        relations: hin.vocab.num_relations(),
        edges: hin.total_edges(),
        entity_types: hin.vocab.entity_type_names.len(),
    });
    for (i, name) in hin.source_names.iter().enumerate() {
        let relations: HashSet<u32> = hin.sources[i].iter().map(|t| t.relation).collect();
        rows.push(StatsRow {
            name: name.clone(),
            entities: hin.per_source_entities[i].len(),
            relations: relations.len(),
            edges: hin.sources[i].len(),
            entity_types: hin.vocab.entity_type_names.len(),
        });
    }
    rows
}

const HIN_MAGIC: &[u8; 4] = b"HIN1";

fn write_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    write_u64(w, s.len() as u64)?;
    w.write_all(s.as_bytes())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Load(format!("truncated input: {e}")))?;
    Ok(u64::from_le_bytes(buf))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Load(format!("truncated input: {e}")))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let len = read_u64(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Load(format!("truncated string: {e}")))?;
    String::from_utf8(buf).map_err(|e| Error::Load(format!("invalid utf-8: {e}")))
}

/// Serialize to the versioned binary format (magic "HIN1", little-endian).
pub fn save_hin(hin: &Hin, w: &mut impl Write) -> Result<()> {
    let io = |e| Error::Load(format!("write failed: {e}"));
    w.write_all(HIN_MAGIC).map_err(io)?;
    write_u64(w, hin.vocab.num_entities() as u64).map_err(io)?;
    write_u64(w, hin.vocab.num_relations() as u64).map_err(io)?;
    write_u64(w, hin.num_sources() as u64).map_err(io)?;
    write_u64(w, hin.vocab.entity_type_names.len() as u64).map_err(io)?;
    write_u64(w, hin.vocab.relation_type_names.len() as u64).map_err(io)?;
    for name in &hin.vocab.entity_names {
        write_str(w, name).map_err(io)?;
    }
    for name in &hin.vocab.relation_names {
        write_str(w, name).map_err(io)?;
    }
    for name in &hin.vocab.entity_type_names {
        write_str(w, name).map_err(io)?;
    }
    for name in &hin.vocab.relation_type_names {
        write_str(w, name).map_err(io)?;
    }
    for &t in &hin.vocab.entity_type_of {
        write_u32(w, t).map_err(io)?;
    }
    for &t in &hin.vocab.relation_type_of {
        write_u32(w, t).map_err(io)?;
    }
    for (i, name) in hin.source_names.iter().enumerate() {
        write_str(w, name).map_err(io)?;
        write_u64(w, hin.sources[i].len() as u64).map_err(io)?;
        for t in &hin.sources[i] {
            write_u64(w, t.head).map_err(io)?;
            write_u32(w, t.relation).map_err(io)?;
            write_u64(w, t.tail).map_err(io)?;
        }
    }
    Ok(())
}

/// Parse the binary format written by [`save_hin`].
pub fn load_hin(r: &mut impl Read) -> Result<Hin> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::Load(format!("truncated header: {e}")))?;
    if &magic != HIN_MAGIC {
        return Err(Error::Load(format!(
            "bad magic {magic:?}, expected {HIN_MAGIC:?}"
        )));
    }
    let n_entities = read_u64(r)? as usize;
    let n_relations = read_u64(r)? as usize;
    let n_sources = read_u64(r)? as usize;
    let n_etypes = read_u64(r)? as usize;
    let n_rtypes = read_u64(r)? as usize;

    let mut vocab = Vocab::new();
    vocab.entity_names = (0..n_entities).map(|_| read_str(r)).collect::<Result<_>>()?;
    vocab.relation_names = (0..n_relations)
        .map(|_| read_str(r))
        .collect::<Result<_>>()?;
    vocab.entity_type_names = (0..n_etypes).map(|_| read_str(r)).collect::<Result<_>>()?;
    vocab.relation_type_names = (0..n_rtypes).map(|_| read_str(r)).collect::<Result<_>>()?;
    vocab.entity_type_of = (0..n_entities).map(|_| read_u32(r)).collect::<Result<_>>()?;
    vocab.relation_type_of = (0..n_relations)
        .map(|_| read_u32(r))
        .collect::<Result<_>>()?;
    vocab.rebuild_indexes();

    let mut source_names = Vec::with_capacity(n_sources);
    let mut sources = Vec::with_capacity(n_sources);
    let mut per_source_entities = Vec::with_capacity(n_sources);
    for _ in 0..n_sources {
        let name = read_str(r)?;
        let count = read_u64(r)? as usize;
        let mut triples = Vec::with_capacity(count);
        let mut entities = HashSet::new();
        for _ in 0..count {
            let head = read_u64(r)?;
            let relation = read_u32(r)?;
            let tail = read_u64(r)?;
            if head >= n_entities as u64
                || tail >= n_entities as u64
                || relation >= n_relations as u32
            {
                return Err(Error::Load("triple id out of vocabulary range".to_string()));
            }
            triples.push(Triple {
                head,
                relation,
                tail,
            });
            entities.insert(head);
            entities.insert(tail);
        }
        let mut entities: Vec<u64> = entities.into_iter().collect();
        entities.sort_unstable();
        source_names.push(name);
        sources.push(triples);
        per_source_entities.push(entities);
    }
    Ok(Hin {
        vocab,
        source_names,
        sources,
        per_source_entities,
    })
}
