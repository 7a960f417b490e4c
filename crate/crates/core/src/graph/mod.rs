//! Knowledge-graph data model, ingestion, inverse augmentation and
//! relation-graph lifting.

mod kg;
mod lift;
mod split;

pub use kg::{
    attach_descriptions, load_kg, parse_descriptions, parse_triples, KnowledgeGraph, SymbolTable,
    Triple, INVERSE_SUFFIX,
};
pub use lift::{lift_relation_graph, MetaRelation, RelEdge, RelationGraph};
pub use split::{load_split, InductiveSplit, SplitMode};
