//! Relation-graph lifting.
//!
//! Nodes of the lifted graph are the relations of a knowledge graph. Two
//! relations are linked by a meta-relation whenever they share an entity in
//! the corresponding roles. With boolean incidence matrices `H` (entity ×
//! relation, "entity is a head of") and `T` ("entity is a tail of"), the four
//! adjacency matrices are `Hᵀ·H` (h2h), `Hᵀ·T` (h2t), `Tᵀ·H` (t2h) and `Tᵀ·T`
//! (t2t). The products are evaluated entity by entity over compressed
//! incidence rows.

use std::collections::BTreeSet;
use std::fmt;

use super::kg::KnowledgeGraph;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetaRelation {
    H2H,
    H2T,
    T2H,
    T2T,
}

impl MetaRelation {
    pub const ALL: [MetaRelation; 4] = [Self::H2H, Self::H2T, Self::T2H, Self::T2T];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::H2H => "h2h",
            Self::H2T => "h2t",
            Self::T2H => "t2h",
            Self::T2T => "t2t",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

impl fmt::Display for MetaRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelEdge {
    pub from: usize,
    pub meta: MetaRelation,
    pub to: usize,
}

/// Graph over relations with meta-relation edges, sorted and deduplicated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationGraph {
    pub num_relations: usize,
    pub edges: Vec<RelEdge>,
}

impl RelationGraph {
    pub fn degree(&self, r: usize) -> usize {
        self.edges.iter().filter(|e| e.from == r || e.to == r).count()
    }

    /// TSV rendering `relA<TAB>meta<TAB>relB` using relation names of `kg`.
    pub fn to_tsv(&self, kg: &KnowledgeGraph) -> String {
        let mut out = String::new();
        for e in &self.edges {
            let a = kg.relations().name(e.from).unwrap_or("?");
            let b = kg.relations().name(e.to).unwrap_or("?");
            out.push_str(&format!("{a}\t{}\t{b}\n", e.meta));
        }
        out
    }
}

pub fn lift_relation_graph(kg: &KnowledgeGraph, include_self_loops: bool) -> Result<RelationGraph> {
    let n_rel = kg.num_relations();
    if n_rel == 0 {
        return Err(Error::Invalid("cannot lift a graph with no relations".into()));
    }
    // Compressed rows of H and T: for each entity, the relations it heads/tails.
    let n_ent = kg.num_entities();
    let mut head_of: Vec<Vec<usize>> = vec![Vec::new(); n_ent];
    let mut tail_of: Vec<Vec<usize>> = vec![Vec::new(); n_ent];
    for t in kg.triples() {
        head_of[t.head].push(t.relation);
        tail_of[t.tail].push(t.relation);
    }
    for row in head_of.iter_mut().chain(tail_of.iter_mut()) {
        row.sort_unstable();
        row.dedup();
    }

    let mut edges = BTreeSet::new();
    for e in 0..n_ent {
        let (h, t) = (&head_of[e], &tail_of[e]);
        for (meta, left, right) in [
            (MetaRelation::H2H, h, h),
            (MetaRelation::H2T, h, t),
            (MetaRelation::T2H, t, h),
            (MetaRelation::T2T, t, t),
        ] {
            for &a in left {
                for &b in right {
                    if include_self_loops || a != b {
                        edges.insert(RelEdge { from: a, meta, to: b });
                    }
                }
            }
        }
    }
    Ok(RelationGraph {
        num_relations: n_rel,
        edges: edges.into_iter().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use MetaRelation::*;

    fn e(from: usize, meta: MetaRelation, to: usize) -> RelEdge {
        RelEdge { from, meta, to }
    }

    fn set(edges: &[RelEdge]) -> BTreeSet<RelEdge> {
        edges.iter().copied().collect()
    }

    #[test]
    fn chain_with_self_loops() {
        let kg = KnowledgeGraph::from_triples([("a", "r1", "b"), ("b", "r2", "c")]);
        let g = lift_relation_graph(&kg, true).unwrap();
        let expected = set(&[
            e(0, H2H, 0),
            e(0, T2T, 0),
            e(1, H2H, 1),
            e(1, T2T, 1),
            e(0, T2H, 1),
            e(1, H2T, 0),
        ]);
        assert_eq!(set(&g.edges), expected);
    }

    #[test]
    fn shared_head_without_self_loops() {
        let kg = KnowledgeGraph::from_triples([("a", "r1", "b"), ("a", "r2", "c")]);
        let g = lift_relation_graph(&kg, false).unwrap();
        assert_eq!(set(&g.edges), set(&[e(0, H2H, 1), e(1, H2H, 0)]));
    }

    #[test]
    fn single_relation_has_no_cross_edges() {
        let kg = KnowledgeGraph::from_triples([("a", "r", "b"), ("b", "r", "c"), ("c", "r", "a")]);
        assert!(lift_relation_graph(&kg, false).unwrap().edges.is_empty());
    }

    #[test]
    fn no_relations_is_an_error() {
        assert!(lift_relation_graph(&KnowledgeGraph::new(), true).is_err());
    }

    #[test]
    fn tsv_rendering() {
        let kg = KnowledgeGraph::from_triples([("a", "r1", "b"), ("a", "r2", "c")]);
        let g = lift_relation_graph(&kg, false).unwrap();
        assert_eq!(g.to_tsv(&kg), "r1\th2h\tr2\nr2\th2h\tr1\n");
    }
}
