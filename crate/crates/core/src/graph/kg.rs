use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Injective mapping between string identifiers and dense ids, assigned in
/// first-appearance order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SymbolTable {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl SymbolTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Id of `name`, inserting it if unseen.
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
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

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self { head, relation, tail }
    }
}

/// Suffix appended to a relation name to name its inverse.
pub const INVERSE_SUFFIX: &str = "^-1";

/// Entities, relations, triples and optional descriptions.
#[derive(Clone, Debug, Default)]
pub struct KnowledgeGraph {
    entities: SymbolTable,
    relations: SymbolTable,
    triples: Vec<Triple>,
    seen: HashSet<Triple>,
    entity_text: Vec<Option<String>>,
    relation_text: Vec<Option<String>>,
    /// Number of relations before inverse augmentation, once augmented.
    base_relations: Option<usize>,
    duplicates_dropped: usize,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a graph from string triples, in order.
    pub fn from_triples<'a>(triples: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>) -> Self {
        let mut kg = Self::new();
        for (h, r, t) in triples {
            kg.add_named(h, r, t);
        }
        kg
    }

    pub fn add_entity(&mut self, name: &str) -> usize {
        let id = self.entities.intern(name);
        if id == self.entity_text.len() {
            self.entity_text.push(None);
        }
        id
    }

    pub fn add_relation(&mut self, name: &str) -> usize {
        let id = self.relations.intern(name);
        if id == self.relation_text.len() {
            self.relation_text.push(None);
        }
        id
    }

    /// Adds a triple by name; returns `false` for a duplicate.
    pub fn add_named(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        let h = self.add_entity(head);
        let r = self.add_relation(relation);
        let t = self.add_entity(tail);
        self.push_triple(Triple::new(h, r, t))
    }

    /// Adds a triple by id; returns `false` for a duplicate.
    pub fn add_triple(&mut self, triple: Triple) -> Result<bool> {
        self.check_ids(triple)?;
        Ok(self.push_triple(triple))
    }

    fn push_triple(&mut self, triple: Triple) -> bool {
        if self.seen.insert(triple) {
            self.triples.push(triple);
            true
        } else {
            self.duplicates_dropped += 1;
            false
        }
    }

    fn check_ids(&self, t: Triple) -> Result<()> {
        for (what, index, size) in [
            ("entity table", t.head, self.num_entities()),
            ("relation table", t.relation, self.num_relations()),
            ("entity table", t.tail, self.num_entities()),
        ] {
            if index >= size {
                return Err(Error::OutOfRange { what, index, size });
            }
        }
        Ok(())
    }

    pub fn entities(&self) -> &SymbolTable {
        &self.entities
    }

    pub fn relations(&self) -> &SymbolTable {
        &self.relations
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.seen.contains(t)
    }

    pub fn duplicates_dropped(&self) -> usize {
        self.duplicates_dropped
    }

    pub fn entity_text(&self, id: usize) -> Option<&str> {
        self.entity_text.get(id).and_then(|t| t.as_deref())
    }

    pub fn relation_text(&self, id: usize) -> Option<&str> {
        self.relation_text.get(id).and_then(|t| t.as_deref())
    }

    pub fn set_entity_text(&mut self, id: usize, text: &str) {
        self.entity_text[id] = Some(text.to_string());
    }

    pub fn set_relation_text(&mut self, id: usize, text: &str) {
        self.relation_text[id] = Some(text.to_string());
    }

    pub fn is_augmented(&self) -> bool {
        self.base_relations.is_some()
    }

    /// Relation count before inverse augmentation.
    pub fn base_relations(&self) -> usize {
        self.base_relations.unwrap_or(self.num_relations())
    }

    /// Inverse of relation `r` in an augmented graph.
    pub fn inverse_relation(&self, r: usize) -> Option<usize> {
        let n = self.base_relations?;
        if r < n {
            Some(r + n)
        } else if r < 2 * n {
            Some(r - n)
        } else {
            None
        }
    }

    /// For an augmented graph, the index of the forward triple each triple
    /// derives from (identity for forward triples).
    pub fn forward_triple_index(&self) -> Vec<usize> {
        match self.base_relations {
            None => (0..self.triples.len()).collect(),
            Some(_) => {
                let half = self.triples.len() / 2;
                (0..self.triples.len()).map(|i| i % half.max(1)).collect()
            }
        }
    }

    /// Adds `(t, r⁻¹, h)` for every `(h, r, t)`; inverse relation `r` gets id
    /// `r + |R|`, inverse triple `i` lands at `i + |T|`.
    pub fn augment_inverses(&self) -> Result<KnowledgeGraph> {
        if self.is_augmented() {
            return Err(Error::Invalid("graph is already inverse-augmented".into()));
        }
        let mut out = self.clone();
        let n = self.num_relations();
        for r in 0..n {
            let name = format!("{}{INVERSE_SUFFIX}", self.relations.names[r]);
            if out.relations.contains(&name) {
                return Err(Error::Invalid(format!(
                    "relation name `{name}` collides with a generated inverse"
                )));
            }
            let id = out.add_relation(&name);
            debug_assert_eq!(id, r + n);
            if let Some(text) = self.relation_text(r) {
                out.relation_text[id] = Some(format!("inverse of {text}"));
            }
        }
        for t in &self.triples {
            let inv = Triple::new(t.tail, t.relation + n, t.head);
            let fresh = out.push_triple(inv);
            debug_assert!(fresh);
        }
        out.base_relations = Some(n);
        Ok(out)
    }

    /// Copy without the given forward triples (and their inverses when the
    /// graph is augmented). Symbol tables and descriptions are kept.
    pub fn without_triples(&self, remove: &HashSet<Triple>) -> KnowledgeGraph {
        let mut drop: HashSet<Triple> = remove.clone();
        if let Some(n) = self.base_relations {
            for t in remove {
                if t.relation < n {
                    drop.insert(Triple::new(t.tail, t.relation + n, t.head));
                }
            }
        }
        let mut out = self.clone();
        out.triples.clear();
        out.seen.clear();
        out.duplicates_dropped = 0;
        if self.base_relations.is_some() {
            // Keep the forward/inverse layout: forward triples first.
            let half = self.triples.len() / 2;
            let kept: Vec<Triple> = self.triples[..half]
                .iter()
                .filter(|t| !drop.contains(t))
                .copied()
                .collect();
            let n = self.base_relations.unwrap_or(0);
            for t in &kept {
                out.push_triple(*t);
            }
            for t in &kept {
                out.push_triple(Triple::new(t.tail, t.relation + n, t.head));
            }
        } else {
            for t in self.triples.iter().filter(|t| !drop.contains(t)) {
                out.push_triple(*t);
            }
        }
        out
    }
}

fn read_lines(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses `head<TAB>relation<TAB>tail` lines. Blank lines are skipped.
pub fn parse_triples(path: &Path) -> Result<Vec<(String, String, String)>> {
    let text = read_lines(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 || cols.iter().any(|c| c.is_empty()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected 3 tab-separated columns, found {}", cols.len()),
            });
        }
        out.push((cols[0].to_string(), cols[1].to_string(), cols[2].to_string()));
    }
    Ok(out)
}

/// Parses `id<TAB>text` lines; a duplicate id is an error.
pub fn parse_descriptions(path: &Path) -> Result<Vec<(String, String)>> {
    let text = read_lines(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let Some((id, desc)) = line.split_once('\t') else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "expected `id<TAB>text`".into(),
            });
        };
        if !seen.insert(id.to_string()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("duplicate description id `{id}`"),
            });
        }
        out.push((id.to_string(), desc.to_string()));
    }
    Ok(out)
}

/// Attaches descriptions to ids present in the graph; ids the graph does
/// not know are skipped.
pub fn attach_descriptions(
    kg: &mut KnowledgeGraph,
    entity_desc: Option<&Path>,
    relation_desc: Option<&Path>,
) -> Result<()> {
    if let Some(p) = entity_desc {
        let mut skipped = 0;
        for (id, text) in parse_descriptions(p)? {
            match kg.entities.id(&id) {
                Some(e) => kg.set_entity_text(e, &text),
                None => skipped += 1,
            }
        }
        if skipped > 0 {
            log::debug!("{}: {skipped} descriptions for unknown entities skipped", p.display());
        }
    }
    if let Some(p) = relation_desc {
        for (id, text) in parse_descriptions(p)? {
            if let Some(r) = kg.relations.id(&id) {
                kg.set_relation_text(r, &text);
            }
        }
    }
    Ok(())
}

/// Loads a TSV triple file plus optional description files.
pub fn load_kg(
    triples_path: &Path,
    entity_desc: Option<&Path>,
    relation_desc: Option<&Path>,
) -> Result<KnowledgeGraph> {
    let mut kg = KnowledgeGraph::new();
    for (h, r, t) in parse_triples(triples_path)? {
        kg.add_named(&h, &r, &t);
    }
    if kg.duplicates_dropped() > 0 {
        log::warn!(
            "{}: dropped {} duplicate triples",
            triples_path.display(),
            kg.duplicates_dropped()
        );
    }
    attach_descriptions(&mut kg, entity_desc, relation_desc)?;
    Ok(kg)
}
