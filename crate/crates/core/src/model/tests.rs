use super::*;
use crate::graph::KnowledgeGraph;
use crate::numerics::gradcheck::check_gradients;
use crate::text::HashProvider;

fn small_config() -> ModelConfig {
    ModelConfig {
        dim: 6,
        text_dim: 4,
        qcmp_relation_layers: 2,
        qcmp_entity_layers: 2,
        gcmp_relation_layers: 1,
        gcmp_entity_layers: 2,
        ..ModelConfig::default()
    }
}

fn toy_graph() -> KnowledgeGraph {
    let mut kg = KnowledgeGraph::from_triples([
        ("a", "likes", "b"),
        ("b", "knows", "c"),
        ("c", "likes", "d"),
        ("d", "owns", "e"),
        ("a", "owns", "c"),
    ]);
    kg.set_entity_text(0, "alpha person");
    kg.set_entity_text(2, "charlie the person");
    kg.set_relation_text(0, "likes a lot");
    kg
}

fn prepare(kg: &KnowledgeGraph, config: &ModelConfig) -> GraphInput {
    let p = HashProvider::new(config.text_dim);
    GraphInput::prepare(kg, &p, &p, config.inverses, config.self_loops).unwrap()
}

#[test]
fn relation_init_examples() {
    let m = qcmp_relation_init(2, 5, 4).unwrap();
    assert_eq!(m.row(2), &[1.0; 4]);
    for r in [0, 1, 3, 4] {
        assert_eq!(m.row(r), &[0.0; 4]);
    }
    assert_eq!(qcmp_relation_init(0, 1, 3).unwrap().row(0), &[1.0; 3]);
    let col = qcmp_relation_init(1, 3, 1).unwrap();
    assert_eq!(col.data(), &[0.0, 1.0, 0.0]);
    assert!(qcmp_relation_init(3, 3, 2).is_err());
}

#[test]
fn entity_init_copies_query_relation_row() {
    let config = ModelConfig {
        qcmp_entity_layers: 0,
        ..small_config()
    };
    let model = Model::new(config.clone(), 1).unwrap();
    let g = prepare(&toy_graph(), &config);
    let (r_q, h_q) = model.qcmp_encode(&g, 0, 1, None).unwrap();
    assert_eq!(h_q.row(0), r_q.row(1));
    for e in 1..h_q.rows() {
        assert!(h_q.row(e).iter().all(|&x| x == 0.0));
    }
}

#[test]
fn different_query_relations_differ() {
    let config = small_config();
    let model = Model::new(config.clone(), 2).unwrap();
    let g = prepare(&toy_graph(), &config);
    let (a, _) = model.qcmp_encode(&g, 0, 0, None).unwrap();
    let (b, _) = model.qcmp_encode(&g, 0, 1, None).unwrap();
    assert_ne!(a, b);
}

#[test]
fn entity_relabeling_permutes_query_channel() {
    let config = small_config();
    let model = Model::new(config.clone(), 3).unwrap();
    let kg = toy_graph();
    // Same triples in the same order with entity ids assigned differently.
    let names = ["a", "b", "c", "d", "e"];
    let perm = [3usize, 0, 4, 1, 2];
    let mut relabeled = KnowledgeGraph::new();
    let mut by_new: Vec<&str> = vec![""; 5];
    for (old, &new) in perm.iter().enumerate() {
        by_new[new] = names[old];
    }
    for n in by_new {
        relabeled.add_entity(n);
    }
    for r in kg.relations().names() {
        relabeled.add_relation(r);
    }
    for t in kg.triples() {
        relabeled
            .add_triple(crate::graph::Triple::new(perm[t.head], t.relation, perm[t.tail]))
            .unwrap();
    }
    let g1 = prepare(&kg, &config);
    let g2 = prepare(&relabeled, &config);
    let (r1, h1) = model.qcmp_encode(&g1, 0, 2, None).unwrap();
    let (r2, h2) = model.qcmp_encode(&g2, perm[0], 2, None).unwrap();
    assert_eq!(r1, r2);
    for (old, &new) in perm.iter().enumerate() {
        assert_eq!(h1.row(old), h2.row(new));
    }
}

#[test]
fn cache_matches_fresh_forward() {
    let config = small_config();
    let model = Model::new(config.clone(), 4).unwrap();
    let g = prepare(&toy_graph(), &config);
    let c1 = model.graph_cache(&g).unwrap();
    let c2 = model.graph_cache(&g).unwrap();
    assert_eq!(c1, c2);
    let queries = vec![Query::new(0, 0, 0), Query::new(0, 3, 4)];
    let fresh = model.score(&[&g], None, &queries).unwrap();
    let cached = model.score(&[&g], Some(&[&c1]), &queries).unwrap();
    assert_eq!(fresh, cached);
    assert_eq!(fresh[0].len(), 5);
}

#[test]
fn batched_scores_equal_single_scores() {
    let config = small_config();
    let model = Model::new(config.clone(), 5).unwrap();
    let g = prepare(&toy_graph(), &config);
    let h = prepare(&KnowledgeGraph::from_triples([("x", "r", "y"), ("y", "s", "x")]), &config);
    let queries = vec![Query::new(0, 1, 2), Query::new(1, 0, 0), Query::new(0, 4, 5)];
    let batched = model.score(&[&g, &h], None, &queries).unwrap();
    assert_eq!(batched[0], model.score(&[&g], None, &[Query::new(0, 1, 2)]).unwrap()[0]);
    assert_eq!(batched[1], model.score(&[&h], None, &[Query::new(0, 0, 0)]).unwrap()[0]);
    assert_eq!(batched[2], model.score(&[&g], None, &[Query::new(0, 4, 5)]).unwrap()[0]);
}

#[test]
fn zero_text_stays_finite() {
    let config = small_config();
    let model = Model::new(config.clone(), 6).unwrap();
    let kg = KnowledgeGraph::from_triples([("a", "r", "b"), ("b", "r", "c")]);
    let g = prepare(&kg, &config);
    assert!(g.text.entity_feat.data().iter().all(|&x| x == 0.0));
    let (r, h) = model.gcmp_encode(&g).unwrap();
    assert!(r.is_finite() && h.is_finite());
    let s = model.score(&[&g], None, &[Query::new(0, 0, 0)]).unwrap();
    assert!(s[0].iter().all(|x| x.is_finite()));
}

#[test]
fn edge_scores_from_questions() {
    let config = small_config();
    let model = Model::new(config.clone(), 7).unwrap();
    let g = prepare(&toy_graph(), &config);
    let x_q: Rc<[f64]> = crate::text::hash_embed("q", "who likes", 4).into();
    let q = Query {
        question: Some(x_q),
        ..Query::new(0, 0, 0)
    };
    let scored = model.score(&[&g], None, &[q.clone()]).unwrap();
    let plain = model.score(&[&g], None, &[Query::new(0, 0, 0)]).unwrap();
    assert_ne!(scored, plain);

    let off = Model {
        config: ModelConfig {
            edge_scoring: false,
            ..config
        },
        ..model
    };
    assert_eq!(off.score(&[&g], None, &[q]).unwrap(), plain);
}

#[test]
fn mixed_question_batches_are_rejected() {
    let config = small_config();
    let model = Model::new(config.clone(), 8).unwrap();
    let g = prepare(&toy_graph(), &config);
    let q = Query {
        question: Some(vec![0.0; 4].into()),
        ..Query::new(0, 0, 0)
    };
    assert!(model.score(&[&g], None, &[q, Query::new(0, 1, 1)]).is_err());
}

#[test]
fn bce_arithmetic() {
    assert!((bce_value(0.9, &[0.2]) - 0.3285).abs() < 1e-4);
    assert!((bce_value(0.5, &[0.5]) - 2.0 * 2f64.ln()).abs() < 1e-12);
    assert!(bce_value(1.0, &[0.0]).abs() < 1e-12);
    assert_eq!(bce_value(0.5, &[]), 2f64.ln());
}

#[test]
fn tape_loss_matches_closed_form() {
    let config = small_config();
    let model = Model::new(config.clone(), 9).unwrap();
    let g = prepare(&toy_graph(), &config);
    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape).unwrap();
    let fwd = model
        .forward(&mut tape, &bound, &[&g], None, &[Query::new(0, 0, 0), Query::new(0, 1, 1)])
        .unwrap();
    let targets = vec![
        Target {
            query: 0,
            positive: 1,
            negatives: vec![3, 4],
        },
        Target {
            query: 1,
            positive: 2,
            negatives: vec![0],
        },
    ];
    let loss = model.bce_loss(&mut tape, &fwd, &targets).unwrap();
    let logits = fwd.split(&tape);
    let sig = crate::numerics::sigmoid;
    let l0 = bce_value(sig(logits[0][1]), &[sig(logits[0][3]), sig(logits[0][4])]);
    let l1 = bce_value(sig(logits[1][2]), &[sig(logits[1][0])]);
    assert!((tape.value(loss).item() - (l0 + l1) / 2.0).abs() < 1e-12);
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let config = small_config();
    let model = Model::new(config.clone(), 10).unwrap();
    let g = prepare(&toy_graph(), &config);
    let x_q: Rc<[f64]> = crate::text::hash_embed("q", "who likes alpha", 4).into();
    let queries = vec![
        Query {
            question: Some(x_q.clone()),
            ..Query::new(0, 0, 0)
        },
        Query {
            question: Some(x_q),
            ..Query::new(0, 2, 5)
        },
    ];
    let targets = vec![
        Target {
            query: 0,
            positive: 1,
            negatives: vec![3],
        },
        Target {
            query: 1,
            positive: 1,
            negatives: vec![0, 4],
        },
    ];
    let report = check_gradients(&model.store, 1e-5, |_| true, |store, tape, bound| {
        let m = Model {
            store: store.clone(),
            ..model.clone()
        };
        let fwd = m.forward(tape, bound, &[&g], None, &queries)?;
        m.bce_loss(tape, &fwd, &targets)
    })
    .unwrap();
    assert!(report.passed(1e-4), "{report:?}");
}

#[test]
fn checkpoint_round_trip_preserves_scores() {
    let config = small_config();
    let mut model = Model::new(config.clone(), 11).unwrap();
    model.store.set_frozen("qcmp", true).unwrap();
    let g = prepare(&toy_graph(), &config);
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path(), 11, 2).unwrap();
    let (back, manifest) = Model::load(dir.path()).unwrap();
    assert_eq!(manifest.stage, 2);
    assert_eq!(back.config, config);
    assert!(back.store.group("qcmp").unwrap().frozen);
    let q = [Query::new(0, 0, 0)];
    assert_eq!(model.score(&[&g], None, &q).unwrap(), back.score(&[&g], None, &q).unwrap());
}
