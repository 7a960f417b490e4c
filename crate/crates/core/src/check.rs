//! End-to-end gradient probe on a fixed five-entity graph.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::KnowledgeGraph;
use crate::model::{GraphInput, Model, ModelConfig, Query, Target};
use crate::numerics::ParamId;
use crate::numerics::gradcheck::{check_gradients_sampled, GradCheckReport};
use crate::text::{hash_embed, HashProvider};

const JITTER: f64 = 0.1;

/// Five entities, three relations, partial descriptions.
pub fn probe_graph() -> KnowledgeGraph {
    let mut kg = KnowledgeGraph::from_triples([
        ("ada", "mentors", "ben"),
        ("ben", "cites", "cleo"),
        ("cleo", "mentors", "dev"),
        ("dev", "funds", "eve"),
        ("ada", "funds", "cleo"),
        ("eve", "cites", "ada"),
    ]);
    kg.set_entity_text(0, "ada a senior researcher");
    kg.set_entity_text(2, "cleo who studies graphs");
    kg.set_relation_text(0, "mentors a student");
    kg.set_relation_text(2, "pays for the work of");
    kg
}

/// Compares, at a randomly jittered parameter point, the tape gradient of a question-conditioned BCE loss, which
/// exercises every parameter group, against central differences. At most
/// `max_entries` entries per parameter are compared.
pub fn gradient_probe(config: &ModelConfig, seed: u64, eps: f64, max_entries: usize) -> Result<GradCheckReport> {
    config.validate()?;
    let mut model = Model::new(config.clone(), seed)?;
    // Zero biases and unit scales put ReLU inputs exactly on their kink;
    // move every entry off the initial point.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    for i in 0..model.store.len() {
        for x in model.store.get_mut(ParamId(i)).data_mut() {
            *x += rng.gen_range(-JITTER..JITTER);
        }
    }
    let provider = HashProvider::new(config.text_dim);
    let graph = GraphInput::prepare(&probe_graph(), &provider, &provider, config.inverses, config.self_loops)?;
    let question: Rc<[f64]> = hash_embed("q", "who mentors the person that ada funds", config.text_dim).into();
    let last_relation = graph.structure.num_relations - 1;
    let queries = vec![
        Query {
            question: Some(question.clone()),
            ..Query::new(0, 0, 0)
        },
        Query {
            question: Some(question),
            ..Query::new(0, 3, last_relation)
        },
    ];
    let targets = vec![
        Target {
            query: 0,
            positive: 1,
            negatives: vec![3, 4],
        },
        Target {
            query: 1,
            positive: 4,
            negatives: vec![0],
        },
    ];
    check_gradients_sampled(&model.store, eps, |_| true, max_entries, seed, |store, tape, bound| {
        let m = Model {
            store: store.clone(),
            ..model.clone()
        };
        let fwd = m.forward(tape, bound, &[&graph], None, &queries)?;
        m.bce_loss(tape, &fwd, &targets)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_model_passes() {
        let config = ModelConfig {
            dim: 6,
            text_dim: 4,
            qcmp_relation_layers: 1,
            qcmp_entity_layers: 2,
            gcmp_relation_layers: 1,
            gcmp_entity_layers: 1,
            ..ModelConfig::default()
        };
        let report = gradient_probe(&config, 3, 3e-5, 8).unwrap();
        assert!(report.passed(1e-4), "{report:#?}");
        assert!(report.params.iter().all(|p| p.entries <= 8));
        assert!(report.params.iter().any(|p| p.name.starts_with("edge") && p.grad_norm > 0.0));
    }
}
