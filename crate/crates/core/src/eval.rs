//! Filtered ranking evaluation: MRR and Hits@10.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{InductiveSplit, KnowledgeGraph, Triple};
use crate::model::{GraphInput, Model, Query};
use crate::text::TextProvider;

/// Rank of `gold` among candidates not in `filtered`:
/// `1 + #greater + ⌊#ties / 2⌋`. The gold entity itself is never filtered.
pub fn rank_query(scores: &[f64], gold: usize, filtered: &dyn Fn(usize) -> bool) -> Result<usize> {
    let g = *scores.get(gold).ok_or(Error::OutOfRange {
        what: "candidate scores",
        index: gold,
        size: scores.len(),
    })?;
    let (mut greater, mut ties) = (0, 0);
    for (i, &s) in scores.iter().enumerate() {
        if i == gold || filtered(i) {
            continue;
        }
        if s > g {
            greater += 1;
        } else if s == g {
            ties += 1;
        }
    }
    Ok(1 + greater + ties / 2)
}

pub fn mrr(ranks: &[usize]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64
}

pub fn hits_at(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

/// `H_n / n`: expected MRR of a uniformly random ranking of `n` candidates.
pub fn random_mrr(n: usize) -> f64 {
    (1..=n).map(|k| 1.0 / k as f64).sum::<f64>() / n as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub mrr: f64,
    pub hits10: f64,
    pub n_queries: usize,
}

impl Metrics {
    pub fn from_ranks(ranks: &[usize]) -> Self {
        Self {
            mrr: mrr(ranks),
            hits10: hits_at(ranks, 10),
            n_queries: ranks.len(),
        }
    }
}

/// Known true answers per `(head, relation)`.
#[derive(Clone, Debug, Default)]
pub struct TrueIndex {
    map: HashMap<(usize, usize), BTreeSet<usize>>,
}

impl TrueIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, t: Triple) {
        self.map.entry((t.head, t.relation)).or_default().insert(t.tail);
    }

    /// Adds `t` and, when `inverse_offset` is given, `(tail, relation + offset, head)`.
    pub fn insert_both(&mut self, t: Triple, inverse_offset: Option<usize>) {
        self.insert(t);
        if let Some(n) = inverse_offset {
            self.insert(Triple::new(t.tail, t.relation + n, t.head));
        }
    }

    pub fn contains(&self, head: usize, relation: usize, tail: usize) -> bool {
        self.map.get(&(head, relation)).is_some_and(|s| s.contains(&tail))
    }

    pub fn tails(&self, head: usize, relation: usize) -> Option<&BTreeSet<usize>> {
        self.map.get(&(head, relation))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `(h, r, ?)`.
    Tail,
    /// `(?, r, t)`, asked as `(t, r⁻¹, ?)`.
    Head,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Tail => "tail",
            Direction::Head => "head",
        }
    }
}

/// One ranking query derived from an evaluation triple.
#[derive(Clone, Copy, Debug)]
pub struct EvalQuery {
    pub triple: Triple,
    pub direction: Direction,
    pub head: usize,
    pub relation: usize,
    pub gold: usize,
}

/// Both directions of each triple (the head direction only when the graph
/// has inverse relations, whose ids are `r + base`).
pub fn eval_queries(triples: &[Triple], inverse_offset: Option<usize>) -> Vec<EvalQuery> {
    let mut out = Vec::with_capacity(triples.len() * 2);
    for &t in triples {
        out.push(EvalQuery {
            triple: t,
            direction: Direction::Tail,
            head: t.head,
            relation: t.relation,
            gold: t.tail,
        });
        if let Some(n) = inverse_offset {
            out.push(EvalQuery {
                triple: t,
                direction: Direction::Head,
                head: t.tail,
                relation: t.relation + n,
                gold: t.head,
            });
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct QueryRank {
    pub query: EvalQuery,
    pub rank: usize,
    pub candidates: usize,
}

/// Logit vectors for all queries over one graph, in batches, reusing the
/// graph's query-independent features.
pub fn score_queries(model: &Model, graph: &GraphInput, queries: &[(usize, usize)], batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let cache = model.graph_cache(graph)?;
    let mut out = Vec::with_capacity(queries.len());
    for chunk in queries.chunks(batch_size.max(1)) {
        let qs: Vec<Query> = chunk.iter().map(|&(h, r)| Query::new(0, h, r)).collect();
        out.extend(model.score(&[graph], Some(&[&cache]), &qs)?);
    }
    Ok(out)
}

/// Filtered ranks for `queries` answered on `graph`.
pub fn rank_all(model: &Model, graph: &GraphInput, queries: &[EvalQuery], known: &TrueIndex, batch_size: usize) -> Result<Vec<QueryRank>> {
    let pairs: Vec<(usize, usize)> = queries.iter().map(|q| (q.head, q.relation)).collect();
    let scores = score_queries(model, graph, &pairs, batch_size)?;
    queries
        .iter()
        .zip(scores)
        .map(|(q, s)| {
            let filtered = |e: usize| known.contains(q.head, q.relation, e);
            let rank = rank_query(&s, q.gold, &filtered)?;
            let candidates = (0..s.len()).filter(|&e| e == q.gold || !filtered(e)).count();
            Ok(QueryRank {
                query: *q,
                rank,
                candidates,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub mrr: f64,
    pub hits10: f64,
    pub n_queries: usize,
    pub direction_breakdown: BTreeMap<String, Metrics>,
    #[serde(skip)]
    pub ranks: Vec<QueryRank>,
}

impl EvalReport {
    pub fn from_ranks(ranks: Vec<QueryRank>) -> Self {
        let all: Vec<usize> = ranks.iter().map(|r| r.rank).collect();
        let overall = Metrics::from_ranks(&all);
        let mut direction_breakdown = BTreeMap::new();
        for dir in [Direction::Tail, Direction::Head] {
            let d: Vec<usize> = ranks.iter().filter(|r| r.query.direction == dir).map(|r| r.rank).collect();
            if !d.is_empty() {
                direction_breakdown.insert(dir.as_str().to_string(), Metrics::from_ranks(&d));
            }
        }
        Self {
            mrr: overall.mrr,
            hits10: overall.hits10,
            n_queries: overall.n_queries,
            direction_breakdown,
            ranks,
        }
    }

    /// `head,relation,tail,direction,rank,candidates` with names from `kg`.
    pub fn per_query_csv(&self, kg: &KnowledgeGraph) -> String {
        let mut out = String::from("head,relation,tail,direction,rank,candidates\n");
        for r in &self.ranks {
            let t = r.query.triple;
            let e = |i: usize| kg.entities().name(i).unwrap_or("?").to_string();
            let rel = kg.relations().name(t.relation).unwrap_or("?");
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                csv_field(&e(t.head)),
                csv_field(rel),
                csv_field(&e(t.tail)),
                r.query.direction.as_str(),
                r.rank,
                r.candidates
            );
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Maps triples of `from` into `to` by names; triples with a symbol unknown
/// to `to` are dropped.
pub fn map_triples(triples: &[Triple], from: &KnowledgeGraph, to: &KnowledgeGraph) -> Vec<Triple> {
    triples
        .iter()
        .filter_map(|t| {
            let h = to.entities().id(from.entities().name(t.head)?)?;
            let r = to.relations().id(from.relations().name(t.relation)?)?;
            let tl = to.entities().id(from.entities().name(t.tail)?)?;
            Some(Triple::new(h, r, tl))
        })
        .collect()
}

/// Evaluates the test triples of `split` on its test graph, filtering
/// against every known true triple expressible in the test graph.
pub fn evaluate_split(
    model: &Model,
    split: &InductiveSplit,
    entities: &dyn TextProvider,
    relations: &dyn TextProvider,
    batch_size: usize,
) -> Result<EvalReport> {
    let cfg = &model.config;
    let graph = GraphInput::prepare(&split.test_graph, entities, relations, cfg.inverses, cfg.self_loops)?;
    let base = split.test_graph.num_relations();
    let offset = cfg.inverses.then_some(base);
    let mut known = TrueIndex::new();
    let mut all: Vec<Triple> = split.test_graph.triples().to_vec();
    all.extend_from_slice(&split.test);
    all.extend(map_triples(&split.train, &split.train_graph, &split.test_graph));
    all.extend(map_triples(&split.valid, &split.train_graph, &split.test_graph));
    for t in all {
        known.insert_both(t, offset);
    }
    let queries = eval_queries(&split.test, offset);
    Ok(EvalReport::from_ranks(rank_all(model, &graph, &queries, &known, batch_size)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn none(_: usize) -> bool {
        false
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_query(&[0.1, 0.9, 0.5], 1, &none).unwrap(), 1);
        assert_eq!(rank_query(&[0.9, 0.9, 0.1], 1, &none).unwrap(), 1);
        assert_eq!(rank_query(&[0.9, 0.9, 0.9], 2, &none).unwrap(), 2);
        // Filtering a higher-scored non-gold improves the rank by one.
        assert_eq!(rank_query(&[0.8, 0.3, 0.5], 1, &none).unwrap(), 3);
        assert_eq!(rank_query(&[0.8, 0.3, 0.5], 1, &|e| e == 0).unwrap(), 2);
        assert!(rank_query(&[0.1], 3, &none).is_err());
    }

    #[test]
    fn metric_examples() {
        assert!((mrr(&[1, 2, 4]) - 7.0 / 12.0).abs() < 1e-12);
        assert_eq!(hits_at(&[11], 10), 0.0);
        assert_eq!(hits_at(&[10], 10), 1.0);
        assert_eq!(mrr(&[1, 1]), 1.0);
    }

    #[test]
    fn random_baseline_matches_simulation() {
        let n = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ranks: Vec<usize> = (0..200_000)
            .map(|_| {
                let scores: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
                rank_query(&scores, 0, &none).unwrap()
            })
            .collect();
        assert!((mrr(&ranks) - random_mrr(n)).abs() < 3e-3);
    }

    #[test]
    fn queries_cover_both_directions() {
        let q = eval_queries(&[Triple::new(0, 1, 2)], Some(3));
        assert_eq!(q.len(), 2);
        assert_eq!((q[1].head, q[1].relation, q[1].gold), (2, 4, 0));
        assert_eq!(eval_queries(&[Triple::new(0, 1, 2)], None).len(), 1);
    }

    #[test]
    fn report_json_shape() {
        let q = eval_queries(&[Triple::new(0, 0, 1)], Some(1));
        let ranks = vec![
            QueryRank {
                query: q[0],
                rank: 1,
                candidates: 3,
            },
            QueryRank {
                query: q[1],
                rank: 2,
                candidates: 3,
            },
        ];
        let r = EvalReport::from_ranks(ranks);
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(
            json,
            r#"{"mrr":0.75,"hits10":1.0,"n_queries":2,"direction_breakdown":{"head":{"mrr":0.5,"hits10":1.0,"n_queries":1},"tail":{"mrr":1.0,"hits10":1.0,"n_queries":1}}}"#
        );
    }

    proptest::proptest! {
        #[test]
        fn metrics_are_bounded(ranks in proptest::collection::vec(1usize..50, 1..30)) {
            let m = mrr(&ranks);
            proptest::prop_assert!((0.0..=1.0).contains(&m));
            proptest::prop_assert_eq!(m == 1.0, ranks.iter().all(|&r| r == 1));
            let h = hits_at(&ranks, 10);
            proptest::prop_assert!((0.0..=1.0).contains(&h));
        }

        #[test]
        fn rank_is_within_candidates(scores in proptest::collection::vec(-5i32..5, 1..20), gold_pick in 0usize..100, mask in 0u32..u32::MAX) {
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let gold = gold_pick % scores.len();
            let filtered = |e: usize| e != gold && (mask >> (e % 32)) & 1 == 1;
            let rank = rank_query(&scores, gold, &filtered).unwrap();
            let candidates = (0..scores.len()).filter(|&e| !filtered(e)).count();
            proptest::prop_assert!(rank >= 1 && rank <= candidates);
        }
    }
}
