//! Seeded generators for small benchmark graphs and question sets.

use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{KnowledgeGraph, Triple};
use crate::kgqa::{QaInstance, QaOption};

/// `num_triples` distinct random triples without self-edges over exactly
/// `num_entities` entities `e0…` and `num_relations` relations `r0…`.
pub fn random_kg(num_entities: usize, num_relations: usize, num_triples: usize, seed: u64) -> KnowledgeGraph {
    assert!(num_entities >= 2 && num_relations >= 1);
    assert!(num_triples <= num_entities * (num_entities - 1) * num_relations);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kg = KnowledgeGraph::new();
    for i in 0..num_entities {
        kg.add_entity(&format!("e{i}"));
    }
    for r in 0..num_relations {
        kg.add_relation(&format!("r{r}"));
    }
    while kg.num_triples() < num_triples {
        let h = rng.gen_range(0..num_entities);
        let t = rng.gen_range(0..num_entities);
        if h != t {
            let r = rng.gen_range(0..num_relations);
            kg.add_triple(Triple::new(h, r, t)).expect("ids in range");
        }
    }
    kg
}

/// A rule-governed graph: a generated family of relations where
/// `derived(x, z)` holds whenever `step(x, y)` and `step(y, z)`, and
/// `reverse(y, x)` mirrors `step(x, y)`. A share `held_out` of the derived
/// and reverse triples is withheld as queries.
#[derive(Clone, Debug)]
pub struct RuleGraph {
    pub graph: KnowledgeGraph,
    pub held_out: Vec<Triple>,
}

/// Relation roles of [`rule_graph`], in id order.
pub const RULE_ROLES: [&str; 4] = ["step", "link", "derived", "reverse"];

/// `entity_prefix` and `relation_names` make two draws symbol-disjoint while
/// keeping the same relational schema.
pub fn rule_graph(
    num_entities: usize,
    entity_prefix: &str,
    relation_names: [&str; 4],
    held_out: f64,
    seed: u64,
) -> RuleGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kg = KnowledgeGraph::new();
    for i in 0..num_entities {
        kg.add_entity(&format!("{entity_prefix}{i}"));
    }
    for name in relation_names {
        kg.add_relation(name);
    }
    let (step, link, derived, reverse) = (0, 1, 2, 3);
    let mut order: Vec<usize> = (0..num_entities).collect();
    order.shuffle(&mut rng);
    // `step` is a random functional map without fixed points.
    let next: Vec<usize> = (0..num_entities)
        .map(|i| order[(order.iter().position(|&x| x == i).expect("permutation") + 1) % num_entities])
        .collect();
    let mut facts = Vec::new();
    let mut queries = Vec::new();
    for x in 0..num_entities {
        let y = next[x];
        facts.push(Triple::new(x, step, y));
        // Noise relation with no rule attached.
        let z = rng.gen_range(0..num_entities);
        if z != x {
            facts.push(Triple::new(x, link, z));
        }
        for t in [Triple::new(x, derived, next[y]), Triple::new(y, reverse, x)] {
            if rng.gen::<f64>() < held_out {
                queries.push(t);
            } else {
                facts.push(t);
            }
        }
    }
    for t in facts {
        kg.add_triple(t).expect("ids in range");
    }
    let held_out = queries.into_iter().filter(|t| !kg.contains(t)).collect();
    RuleGraph { graph: kg, held_out }
}

/// Relations of the question curriculum graph with their descriptions.
pub const QA_RELATIONS: [(&str, &str); 6] = [
    ("color", "color"),
    ("capital", "capital"),
    ("author", "author"),
    ("owner", "owner"),
    ("parent", "parent"),
    ("founder", "founder"),
];

/// Adjectives used by text-matching questions.
pub const QA_KEYWORDS: [&str; 8] = ["red", "frozen", "ancient", "silent", "golden", "bitter", "hollow", "swift"];

/// Questions over a shared random graph, half answered by structure and
/// half by text.
#[derive(Clone, Debug)]
pub struct QaCurriculum {
    pub graph: Rc<KnowledgeGraph>,
    pub train: Vec<QaInstance>,
    pub test: Vec<QaInstance>,
}

/// Every entity has one out-edge per relation and no description. A
/// structural question names a relation and a topic, and its options are the
/// topic's neighbours through distinct relations, all with the same text.
/// A text question lists rotations of the first `num_options` keywords as
/// options, unlinked to the graph and with identical bags of words, and asks
/// which one starts with a given keyword; it has no topic entities.
pub fn qa_curriculum(num_entities: usize, num_train: usize, num_test: usize, num_options: usize, seed: u64) -> QaCurriculum {
    assert!(num_options >= 2 && num_options <= QA_RELATIONS.len() && num_options <= QA_KEYWORDS.len());
    assert!(num_entities > num_options);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kg = KnowledgeGraph::new();
    for i in 0..num_entities {
        kg.add_entity(&format!("n{i}"));
    }
    for (name, text) in QA_RELATIONS {
        let r = kg.add_relation(name);
        kg.set_relation_text(r, text);
    }
    let mut tail = vec![vec![0; QA_RELATIONS.len()]; num_entities];
    for (x, row) in tail.iter_mut().enumerate() {
        // Distinct tails per entity so options are distinct.
        let mut others: Vec<usize> = (0..num_entities).filter(|&e| e != x).collect();
        others.shuffle(&mut rng);
        for (r, t) in row.iter_mut().enumerate() {
            *t = others[r % others.len()];
            kg.add_triple(Triple::new(x, r, *t)).expect("ids in range");
        }
    }
    let graph = Rc::new(kg);
    let labels: Vec<String> = (0..num_options).map(|i| ((b'A' + i as u8) as char).to_string()).collect();

    let mut structural_pairs: Vec<(usize, usize)> = (0..num_entities)
        .flat_map(|x| (0..QA_RELATIONS.len()).map(move |r| (x, r)))
        .collect();
    structural_pairs.shuffle(&mut rng);
    let total = num_train + num_test;
    let mut questions = Vec::with_capacity(total);
    for i in 0..total {
        let id = format!("q{i}");
        let gold = rng.gen_range(0..num_options);
        let inst = if i % 2 == 0 {
            let (topic, rel) = structural_pairs[i / 2];
            let mut rels: Vec<usize> = (0..QA_RELATIONS.len()).filter(|&r| r != rel).collect();
            rels.shuffle(&mut rng);
            rels.truncate(num_options - 1);
            rels.insert(gold, rel);
            QaInstance {
                question: format!("which thing is the {} of the topic", QA_RELATIONS[rel].0),
                options: rels
                    .iter()
                    .zip(&labels)
                    .map(|(&r, label)| QaOption {
                        label: label.clone(),
                        text: "candidate entity".to_string(),
                        entities: vec![format!("n{}", tail[topic][r])],
                    })
                    .collect(),
                topics: vec![format!("n{topic}")],
                graph: graph.clone(),
                answer: Some(gold),
                id,
            }
        } else {
            let mut words: Vec<&str> = QA_KEYWORDS[..num_options].to_vec();
            words.shuffle(&mut rng);
            QaInstance {
                question: format!("{} is the first word of which thing", words[gold]),
                options: (0..num_options)
                    .zip(&labels)
                    .map(|(k, label)| QaOption {
                        label: label.clone(),
                        text: (0..num_options).map(|j| words[(k + j) % num_options]).collect::<Vec<_>>().join(" "),
                        entities: Vec::new(),
                    })
                    .collect(),
                topics: Vec::new(),
                graph: graph.clone(),
                answer: Some(gold),
                id,
            }
        };
        questions.push(inst);
    }
    let test = questions.split_off(num_train);
    QaCurriculum {
        graph,
        train: questions,
        test,
    }
}
