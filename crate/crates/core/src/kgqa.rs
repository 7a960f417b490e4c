//! Multiple-choice question answering over a retrieved subgraph.
//!
//! Each instance becomes a graph with a question node linked to the topic
//! entities, one answer node per option linked to the option's entities,
//! and solved few-shot examples embedded as disjoint components whose gold
//! answers populate the answer relation. The answer is the option whose node
//! scores highest for the query `(question, REL_the_answer_is, ?)`.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{load_kg, KnowledgeGraph, Triple};
use crate::model::{GraphInput, Model, Query, Target, GROUPS};
use crate::numerics::{Adam, AdamConfig, Tape};
use crate::text::{top_k_similar, TextProvider};

pub const REL_ASKS_ABOUT: &str = "REL_asks_about";
pub const REL_OPTION_OF: &str = "REL_option_of";
pub const REL_THE_ANSWER_IS: &str = "REL_the_answer_is";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaOption {
    pub label: String,
    pub text: String,
    #[serde(default)]
    pub entities: Vec<String>,
}

/// One line of a question file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaRecord {
    pub id: String,
    pub question: String,
    pub options: Vec<QaOption>,
    #[serde(default)]
    pub topics: Vec<String>,
    /// Triple file of the retrieved subgraph, relative to the question file.
    pub graph: PathBuf,
    #[serde(default)]
    pub entity_desc: Option<PathBuf>,
    #[serde(default)]
    pub relation_desc: Option<PathBuf>,
    /// Gold option label; absent for unlabeled instances.
    #[serde(default)]
    pub answer: Option<String>,
}

#[derive(Clone, Debug)]
pub struct QaInstance {
    pub id: String,
    pub question: String,
    pub options: Vec<QaOption>,
    pub topics: Vec<String>,
    pub graph: Rc<KnowledgeGraph>,
    /// Index into `options`.
    pub answer: Option<usize>,
}

impl QaInstance {
    pub fn from_record(record: QaRecord, graph: Rc<KnowledgeGraph>) -> Result<Self> {
        if record.options.len() < 2 {
            return Err(Error::Invalid(format!("question `{}` has fewer than two options", record.id)));
        }
        let mut labels = BTreeSet::new();
        for o in &record.options {
            if !labels.insert(o.label.as_str()) {
                return Err(Error::Invalid(format!("question `{}` repeats option label `{}`", record.id, o.label)));
            }
        }
        let answer = match &record.answer {
            Some(a) => Some(record.options.iter().position(|o| &o.label == a).ok_or_else(|| {
                Error::Invalid(format!("question `{}`: answer `{a}` is not an option label", record.id))
            })?),
            None => None,
        };
        Ok(Self {
            id: record.id,
            question: record.question,
            options: record.options,
            topics: record.topics,
            graph,
            answer,
        })
    }

    pub fn option_labels(&self) -> Vec<&str> {
        self.options.iter().map(|o| o.label.as_str()).collect()
    }
}

/// Reads a JSON-lines question file; subgraphs shared between lines are
/// loaded once.
pub fn load_qa(path: &Path) -> Result<Vec<QaInstance>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut graphs: HashMap<(PathBuf, Option<PathBuf>, Option<PathBuf>), Rc<KnowledgeGraph>> = HashMap::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: QaRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        let key = (
            base.join(&record.graph),
            record.entity_desc.as_ref().map(|p| base.join(p)),
            record.relation_desc.as_ref().map(|p| base.join(p)),
        );
        let graph = match graphs.get(&key) {
            Some(g) => g.clone(),
            None => {
                let g = Rc::new(load_kg(&key.0, key.1.as_deref(), key.2.as_deref())?);
                graphs.insert(key, g.clone());
                g
            }
        };
        out.push(QaInstance::from_record(record, graph)?);
    }
    Ok(out)
}

/// An instance rewritten as a graph.
#[derive(Clone, Debug)]
pub struct QaGraph {
    pub kg: KnowledgeGraph,
    pub question: usize,
    /// Answer node per option, in option order.
    pub answers: Vec<usize>,
    pub asks_about: usize,
    pub option_of: usize,
    pub the_answer_is: usize,
}

struct Builder {
    kg: KnowledgeGraph,
    pending: Vec<(usize, &'static str, usize)>,
}

impl Builder {
    fn node(&mut self, name: &str, text: Option<&str>) -> usize {
        let id = self.kg.add_entity(name);
        if let Some(t) = text {
            self.kg.set_entity_text(id, t);
        }
        id
    }

    /// Copies the part of `inst`'s subgraph around its topics and option
    /// entities under `prefix` and adds its question and answer nodes.
    fn component(&mut self, inst: &QaInstance, prefix: &str, whole_graph: bool) -> (usize, Vec<usize>) {
        let g = &inst.graph;
        let linked: BTreeSet<usize> = inst
            .topics
            .iter()
            .chain(inst.options.iter().flat_map(|o| &o.entities))
            .filter_map(|n| g.entities().id(n))
            .collect();
        let keep = |e: usize| whole_graph || linked.contains(&e);
        let mut local = HashMap::new();
        let mut entity = |b: &mut Builder, e: usize| -> usize {
            *local.entry(e).or_insert_with(|| {
                let name = g.entities().name(e).expect("id from graph");
                b.node(&format!("{prefix}{name}"), g.entity_text(e))
            })
        };
        if whole_graph {
            for e in 0..g.num_entities() {
                entity(self, e);
            }
        }
        for t in g.triples() {
            if keep(t.head) && keep(t.tail) {
                let h = entity(self, t.head);
                let tl = entity(self, t.tail);
                let rname = g.relations().name(t.relation).expect("id from graph");
                let r = self.kg.add_relation(rname);
                if let Some(text) = g.relation_text(t.relation) {
                    self.kg.set_relation_text(r, text);
                }
                self.kg.add_triple(Triple::new(h, r, tl)).expect("ids in range");
            }
        }
        let q = self.node(&format!("{prefix}Q:{}", inst.id), Some(&inst.question));
        if inst.topics.is_empty() {
            log::warn!("question `{}` has no topic entities", inst.id);
        }
        for name in &inst.topics {
            match g.entities().id(name) {
                Some(e) => {
                    let e = entity(self, e);
                    self.pending.push((q, REL_ASKS_ABOUT, e));
                }
                None => log::warn!("question `{}`: topic `{name}` not in its subgraph", inst.id),
            }
        }
        let mut answers = Vec::with_capacity(inst.options.len());
        for o in &inst.options {
            let a = self.node(&format!("{prefix}A:{}:{}", inst.id, o.label), Some(&o.text));
            if o.entities.is_empty() {
                log::debug!("question `{}`: option `{}` has no linked entities", inst.id, o.label);
            }
            for name in &o.entities {
                match g.entities().id(name) {
                    Some(e) => {
                        let e = entity(self, e);
                        self.pending.push((a, REL_OPTION_OF, e));
                    }
                    None => log::warn!("question `{}`: option entity `{name}` not in its subgraph", inst.id),
                }
            }
            answers.push(a);
        }
        (q, answers)
    }
}

/// Builds the graph for `instance` with solved `few_shot` examples embedded
/// as disjoint components. The instance's own gold edge is never added.
pub fn build_qa_graph(instance: &QaInstance, few_shot: &[&QaInstance]) -> Result<QaGraph> {
    let mut b = Builder {
        kg: KnowledgeGraph::new(),
        pending: Vec::new(),
    };
    let (question, answers) = b.component(instance, "", true);
    let mut gold_edges = Vec::new();
    for (k, ex) in few_shot.iter().enumerate() {
        let gold = ex
            .answer
            .ok_or_else(|| Error::Invalid(format!("few-shot example `{}` has no answer", ex.id)))?;
        let (q, a) = b.component(ex, &format!("S{k}:"), false);
        gold_edges.push((q, a[gold]));
    }
    let asks_about = b.kg.add_relation(REL_ASKS_ABOUT);
    let option_of = b.kg.add_relation(REL_OPTION_OF);
    let the_answer_is = b.kg.add_relation(REL_THE_ANSWER_IS);
    b.kg.set_relation_text(asks_about, "question asks about");
    b.kg.set_relation_text(option_of, "answer option mentions");
    b.kg.set_relation_text(the_answer_is, "the answer is");
    for (h, rel, t) in std::mem::take(&mut b.pending) {
        let r = if rel == REL_ASKS_ABOUT { asks_about } else { option_of };
        b.kg.add_triple(Triple::new(h, r, t))?;
    }
    for (q, a) in gold_edges {
        b.kg.add_triple(Triple::new(q, the_answer_is, a))?;
    }
    Ok(QaGraph {
        kg: b.kg,
        question,
        answers,
        asks_about,
        option_of,
        the_answer_is,
    })
}

/// An instance ready for the model: graph, features and question vector.
#[derive(Clone, Debug)]
pub struct PreparedQa {
    pub graph: QaGraph,
    pub input: GraphInput,
    pub question_feature: Rc<[f64]>,
    pub answer: Option<usize>,
}

impl PreparedQa {
    fn query(&self, graph: usize) -> Query {
        Query {
            graph,
            head: self.graph.question,
            relation: self.graph.the_answer_is,
            question: Some(self.question_feature.clone()),
        }
    }
}

/// Up to `k` most similar labelled instances from `pool`, excluding
/// `instance` itself; `k` is clamped to the pool size with a warning.
pub fn retrieve_few_shot<'a>(
    instance: &QaInstance,
    pool: &'a [QaInstance],
    k: usize,
    text: &dyn TextProvider,
) -> Result<Vec<&'a QaInstance>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let candidates: Vec<(String, Vec<f64>)> = pool
        .iter()
        .filter(|p| p.id != instance.id && p.answer.is_some())
        .map(|p| (p.id.clone(), text.feature(&p.id, Some(&p.question))))
        .collect();
    let k = if k > candidates.len() {
        log::warn!("requested {k} few-shot examples, pool has {}; clamping", candidates.len());
        candidates.len()
    } else {
        k
    };
    if k == 0 {
        return Ok(Vec::new());
    }
    let query = text.feature(&instance.id, Some(&instance.question));
    let ids = top_k_similar(&query, &candidates, k)?;
    Ok(ids
        .iter()
        .map(|id| pool.iter().find(|p| &p.id == id).expect("id from pool"))
        .collect())
}

pub fn prepare(
    model: &Model,
    instance: &QaInstance,
    pool: &[QaInstance],
    shots: usize,
    text: &dyn TextProvider,
) -> Result<PreparedQa> {
    let examples = retrieve_few_shot(instance, pool, shots, text)?;
    let graph = build_qa_graph(instance, &examples)?;
    let cfg = &model.config;
    let input = GraphInput::prepare(&graph.kg, text, text, cfg.inverses, cfg.self_loops)?;
    let question_feature: Rc<[f64]> = text.feature(&instance.id, Some(&instance.question)).into();
    Ok(PreparedQa {
        graph,
        input,
        question_feature,
        answer: instance.answer,
    })
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Probability distribution over the options.
pub fn answer_distribution(model: &Model, qa: &PreparedQa) -> Result<Vec<f64>> {
    let logits = model.score(&[&qa.input], None, &[qa.query(0)])?;
    let option_logits: Vec<f64> = qa.graph.answers.iter().map(|&a| logits[0][a]).collect();
    Ok(softmax(&option_logits))
}

/// First index of the largest probability.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(predictions: &[usize], golds: &[usize]) -> Result<f64> {
    if predictions.len() != golds.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} gold answers",
            predictions.len(),
            golds.len()
        )));
    }
    if golds.is_empty() {
        return Ok(0.0);
    }
    let hits = predictions.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / golds.len() as f64)
}

/// Accuracy of `model` over labelled prepared instances.
pub fn evaluate(model: &Model, items: &[PreparedQa]) -> Result<f64> {
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    for qa in items {
        let gold = qa.answer.ok_or_else(|| Error::Invalid("evaluation needs gold answers".into()))?;
        preds.push(argmax(&answer_distribution(model, qa)?));
        golds.push(gold);
    }
    accuracy(&preds, &golds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub shots: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub frozen: Vec<String>,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            shots: 3,
            epochs: 30,
            batch_size: 8,
            seed: 0,
            adam: AdamConfig::default(),
            frozen: Vec::new(),
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if let Some(g) = self.frozen.iter().find(|g| !GROUPS.contains(&g.as_str())) {
            return Err(Error::Config(format!("unknown parameter group `{g}`")));
        }
        Ok(())
    }
}

/// Fine-tunes `model` on labelled instances with the binary cross-entropy
/// of the gold answer node against the other answer nodes. Returns the mean
/// loss per epoch.
pub fn fine_tune(model: &mut Model, items: &[PreparedQa], config: &AdaptConfig) -> Result<Vec<f64>> {
    config.validate()?;
    if items.iter().any(|q| q.answer.is_none()) {
        return Err(Error::Invalid("fine-tuning needs gold answers".into()));
    }
    if items.is_empty() {
        return Err(Error::Invalid("no training questions".into()));
    }
    model.store.freeze_only(&config.frozen)?;
    let mut adam = Adam::new(config.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(config.batch_size) {
            let graphs: Vec<&GraphInput> = chunk.iter().map(|&i| &items[i].input).collect();
            let queries: Vec<Query> = chunk.iter().enumerate().map(|(b, &i)| items[i].query(b)).collect();
            let targets: Vec<Target> = chunk
                .iter()
                .enumerate()
                .map(|(b, &i)| {
                    let qa = &items[i];
                    let gold = qa.answer.expect("checked above");
                    Target {
                        query: b,
                        positive: qa.graph.answers[gold],
                        negatives: qa
                            .graph
                            .answers
                            .iter()
                            .enumerate()
                            .filter(|&(k, _)| k != gold)
                            .map(|(_, &a)| a)
                            .collect(),
                    }
                })
                .collect();
            let mut tape = Tape::new();
            let bound = model.store.bind(&mut tape)?;
            let fwd = model.forward(&mut tape, &bound, &graphs, None, &queries)?;
            let loss = model.bce_loss(&mut tape, &fwd, &targets)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFinite("question-answering loss"));
            }
            let grads = tape.backward(loss)?;
            let grads = model.store.gradients(&grads);
            adam.step(&mut model.store, &grads);
            total += value;
            steps += 1;
        }
        trace.push(total / steps as f64);
    }
    Ok(trace)
}
