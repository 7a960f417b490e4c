//! Train/validation/test split directories.
//!
//! Layout:
//!
//! ```text
//! train.txt        training triples (also the training graph unless train_graph.txt exists)
//! valid.txt        validation queries, answered on the training graph
//! test.txt         test queries
//! train_graph.txt  optional training inference graph
//! test_graph.txt   optional test inference graph (inductive settings)
//! entity_desc.txt  optional `id<TAB>text`
//! relation_desc.txt optional `id<TAB>text`
//! ```

use std::path::{Path, PathBuf};

use super::kg::{attach_descriptions, load_kg, parse_triples, KnowledgeGraph, Triple};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitMode {
    /// Test queries are answered on the training graph.
    Transductive,
    /// Test graph with unseen entities and the training relation vocabulary.
    InductiveEntity,
    /// Test graph with unseen entities and unseen relations.
    InductiveEntityRelation,
}

#[derive(Clone, Debug)]
pub struct InductiveSplit {
    pub train_graph: KnowledgeGraph,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test_graph: KnowledgeGraph,
    pub test: Vec<Triple>,
    pub unseen_entities: bool,
    pub unseen_relations: bool,
    pub mode: SplitMode,
}

fn required(dir: &Path, name: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    if p.is_file() {
        Ok(p)
    } else {
        Err(Error::MissingFile(p))
    }
}

fn optional(dir: &Path, name: &str) -> Option<PathBuf> {
    let p = dir.join(name);
    p.is_file().then_some(p)
}

/// Maps query triples into `kg`'s id space, registering unseen symbols as
/// isolated entities/relations.
fn register(kg: &mut KnowledgeGraph, path: &Path) -> Result<Vec<Triple>> {
    Ok(parse_triples(path)?
        .into_iter()
        .map(|(h, r, t)| {
            let h = kg.add_entity(&h);
            let r = kg.add_relation(&r);
            let t = kg.add_entity(&t);
            Triple::new(h, r, t)
        })
        .collect())
}

pub fn load_split(dir: &Path) -> Result<InductiveSplit> {
    let train_path = required(dir, "train.txt")?;
    let valid_path = required(dir, "valid.txt")?;
    let test_path = required(dir, "test.txt")?;
    let ent_desc = optional(dir, "entity_desc.txt");
    let rel_desc = optional(dir, "relation_desc.txt");

    let (mut train_graph, train) = match optional(dir, "train_graph.txt") {
        Some(g) => {
            let mut kg = load_kg(&g, None, None)?;
            let train = register(&mut kg, &train_path)?;
            (kg, train)
        }
        None => {
            let kg = load_kg(&train_path, None, None)?;
            let train = kg.triples().to_vec();
            (kg, train)
        }
    };
    let valid = register(&mut train_graph, &valid_path)?;

    let test_graph_path = optional(dir, "test_graph.txt");
    let inductive = test_graph_path.is_some();
    let (mut test_graph, test) = match test_graph_path {
        Some(g) => {
            let mut kg = load_kg(&g, None, None)?;
            let test = register(&mut kg, &test_path)?;
            (kg, test)
        }
        None => {
            let test = register(&mut train_graph, &test_path)?;
            (train_graph.clone(), test)
        }
    };
    attach_descriptions(&mut train_graph, ent_desc.as_deref(), rel_desc.as_deref())?;
    attach_descriptions(&mut test_graph, ent_desc.as_deref(), rel_desc.as_deref())?;

    let unseen_entities = test_graph
        .entities()
        .names()
        .iter()
        .any(|n| !train_graph.entities().contains(n));
    let unseen_relations = test_graph
        .relations()
        .names()
        .iter()
        .any(|n| !train_graph.relations().contains(n));
    let mode = match (inductive, unseen_relations) {
        (false, _) => SplitMode::Transductive,
        (true, false) => SplitMode::InductiveEntity,
        (true, true) => SplitMode::InductiveEntityRelation,
    };
    Ok(InductiveSplit {
        train_graph,
        train,
        valid,
        test_graph,
        test,
        unseen_entities,
        unseen_relations,
        mode,
    })
}
