//! Per-graph inputs to the model: structure (augmented triples and the
//! lifted relation graph) and text features.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::graph::{lift_relation_graph, KnowledgeGraph, RelationGraph, Triple};
use crate::numerics::Matrix;
use crate::text::TextProvider;

/// Graph structure as the encoders consume it.
#[derive(Clone, Debug)]
pub struct GraphStructure {
    pub num_entities: usize,
    pub num_relations: usize,
    /// Triples after optional inverse augmentation.
    pub triples: Vec<Triple>,
    /// Forward triple each triple derives from (identity without inverses).
    pub forward_index: Vec<usize>,
    pub num_forward: usize,
    pub rel_graph: RelationGraph,
}

impl GraphStructure {
    /// Augments `kg` with inverses when `inverses` is set, then lifts.
    pub fn build(kg: &KnowledgeGraph, inverses: bool, self_loops: bool) -> Result<Self> {
        let aug;
        let g = if inverses && !kg.is_augmented() {
            aug = kg.augment_inverses()?;
            &aug
        } else {
            kg
        };
        Self::from_graph(g, self_loops)
    }

    /// Uses `kg` as given (already augmented or deliberately not).
    pub fn from_graph(kg: &KnowledgeGraph, self_loops: bool) -> Result<Self> {
        if kg.num_relations() == 0 {
            return Err(Error::Invalid("graph has no relations".into()));
        }
        let rel_graph = lift_relation_graph(kg, self_loops)?;
        let num_forward = if kg.is_augmented() {
            kg.num_triples() / 2
        } else {
            kg.num_triples()
        };
        Ok(Self {
            num_entities: kg.num_entities(),
            num_relations: kg.num_relations(),
            triples: kg.triples().to_vec(),
            forward_index: kg.forward_triple_index(),
            num_forward,
            rel_graph,
        })
    }
}

/// Stacked token features of many descriptions with their owner ids.
#[derive(Clone, Debug)]
pub struct TokenBatch {
    pub tokens: Matrix,
    pub owner: Rc<[usize]>,
}

impl TokenBatch {
    fn build(rows: Vec<Matrix>, dim: usize) -> Result<Self> {
        let total: usize = rows.iter().map(Matrix::rows).sum();
        let mut tokens = Matrix::zeros(total, dim);
        let mut owner = Vec::with_capacity(total);
        let mut r = 0;
        for (id, m) in rows.iter().enumerate() {
            if m.cols() != dim {
                return Err(Error::Shape {
                    op: "token features",
                    left: m.shape(),
                    right: (m.rows(), dim),
                });
            }
            for i in 0..m.rows() {
                tokens.row_mut(r).copy_from_slice(m.row(i));
                owner.push(id);
                r += 1;
            }
        }
        Ok(Self {
            tokens,
            owner: owner.into(),
        })
    }
}

/// Text features of one graph: sentence-level features (GCMP seed and edge
/// scoring) and token-level features (DTAF pooling).
#[derive(Clone, Debug)]
pub struct GraphText {
    pub dim: usize,
    pub entity_feat: Matrix,
    pub relation_feat: Matrix,
    pub entity_tokens: TokenBatch,
    pub relation_tokens: TokenBatch,
}

impl GraphText {
    /// Features for every entity and relation of `kg`, looked up by name
    /// with the description as text. `kg` must use the same ids as the
    /// structure the features are paired with (augment first).
    pub fn build(kg: &KnowledgeGraph, entities: &dyn TextProvider, relations: &dyn TextProvider) -> Result<Self> {
        let dim = entities.dim();
        if relations.dim() != dim {
            return Err(Error::Invalid(format!(
                "entity text dimension {dim} differs from relation text dimension {}",
                relations.dim()
            )));
        }
        let ent_names = kg.entities().names();
        let rel_names = kg.relations().names();
        let mut entity_feat = Matrix::zeros(ent_names.len(), dim);
        let mut ent_tokens = Vec::with_capacity(ent_names.len());
        for (i, name) in ent_names.iter().enumerate() {
            let text = kg.entity_text(i);
            entity_feat.row_mut(i).copy_from_slice(&entities.feature(name, text));
            ent_tokens.push(entities.tokens(name, text));
        }
        let mut relation_feat = Matrix::zeros(rel_names.len(), dim);
        let mut rel_tokens = Vec::with_capacity(rel_names.len());
        for (i, name) in rel_names.iter().enumerate() {
            let text = kg.relation_text(i);
            relation_feat.row_mut(i).copy_from_slice(&relations.feature(name, text));
            rel_tokens.push(relations.tokens(name, text));
        }
        Ok(Self {
            dim,
            entity_feat,
            relation_feat,
            entity_tokens: TokenBatch::build(ent_tokens, dim)?,
            relation_tokens: TokenBatch::build(rel_tokens, dim)?,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entity_feat.rows()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_feat.rows()
    }
}

/// A prepared graph: structure plus matching text.
#[derive(Clone, Debug)]
pub struct GraphInput {
    pub structure: GraphStructure,
    pub text: Rc<GraphText>,
}

impl GraphInput {
    pub fn new(structure: GraphStructure, text: Rc<GraphText>) -> Result<Self> {
        if text.num_entities() != structure.num_entities || text.num_relations() != structure.num_relations {
            return Err(Error::Invalid(format!(
                "text features cover {}/{} entities/relations, graph has {}/{}",
                text.num_entities(),
                text.num_relations(),
                structure.num_entities,
                structure.num_relations
            )));
        }
        Ok(Self { structure, text })
    }

    /// Augments (if requested), lifts and featurises `kg`.
    pub fn prepare(
        kg: &KnowledgeGraph,
        entities: &dyn TextProvider,
        relations: &dyn TextProvider,
        inverses: bool,
        self_loops: bool,
    ) -> Result<Self> {
        let aug;
        let g = if inverses && !kg.is_augmented() {
            aug = kg.augment_inverses()?;
            &aug
        } else {
            kg
        };
        let structure = GraphStructure::from_graph(g, self_loops)?;
        let text = Rc::new(GraphText::build(g, entities, relations)?);
        Self::new(structure, text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::HashProvider;

    #[test]
    fn prepare_augments_and_featurises() {
        let mut kg = KnowledgeGraph::from_triples([("a", "r", "b"), ("b", "s", "c")]);
        kg.set_entity_text(0, "first letter");
        let p = HashProvider::new(8);
        let g = GraphInput::prepare(&kg, &p, &p, true, true).unwrap();
        assert_eq!(g.structure.num_relations, 4);
        assert_eq!(g.structure.triples.len(), 4);
        assert_eq!(g.structure.forward_index, vec![0, 1, 0, 1]);
        assert_eq!(g.text.entity_tokens.tokens.rows(), 2 + 1 + 1);
        assert_eq!(&*g.text.entity_tokens.owner, &[0, 0, 1, 2]);
        assert_eq!(g.text.entity_feat.row(1), &[0.0; 8]);
    }

    #[test]
    fn without_inverses_structure_is_plain() {
        let kg = KnowledgeGraph::from_triples([("a", "r", "b")]);
        let p = HashProvider::new(4);
        let g = GraphInput::prepare(&kg, &p, &p, false, true).unwrap();
        assert_eq!(g.structure.num_relations, 1);
        assert_eq!(g.structure.num_forward, 1);
    }
}
