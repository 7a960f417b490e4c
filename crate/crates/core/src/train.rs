//! Link-prediction pretraining with staged freezing over a graph mixture.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{eval_queries, mrr, rank_all, TrueIndex};
use crate::graph::{load_split, InductiveSplit, KnowledgeGraph, Triple};
use crate::model::{GraphInput, GraphStructure, GraphText, Model, ModelConfig, Query, Target, GROUPS};
use crate::numerics::{Adam, AdamConfig, Matrix, Tape};
use crate::text::{load_embeddings, HashProvider, TextProvider};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub name: String,
    pub epochs: usize,
    #[serde(default)]
    pub frozen: Vec<String>,
    /// Overrides the optimiser learning rate for this stage.
    #[serde(default)]
    pub lr: Option<f64>,
}

/// One split directory of the pretraining mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSource {
    pub split: PathBuf,
    #[serde(default = "one")]
    pub weight: f64,
    /// Embedding files; without them the hash provider is used.
    #[serde(default)]
    pub entity_embeddings: Option<PathBuf>,
    #[serde(default)]
    pub relation_embeddings: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}

/// QCMP-only warmup, then everything but QCMP, then all groups.
pub fn default_stages() -> Vec<StageConfig> {
    let frozen = |g: &[&str]| g.iter().map(|s| s.to_string()).collect();
    vec![
        StageConfig {
            name: "warmup".into(),
            epochs: 2,
            frozen: frozen(&["gcmp", "dtaf", "edge_scorer"]),
            lr: None,
        },
        StageConfig {
            name: "global".into(),
            epochs: 2,
            frozen: frozen(&["qcmp", "edge_scorer"]),
            lr: None,
        },
        StageConfig {
            name: "joint".into(),
            epochs: 2,
            frozen: Vec::new(),
            lr: None,
        },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub graphs: Vec<GraphSource>,
    pub stages: Vec<StageConfig>,
    /// Negatives per positive.
    pub negatives: usize,
    /// Positive triples per step; each yields one query per direction.
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Hide a step's positive triples from the graph it is encoded on.
    pub remove_positive_edges: bool,
    pub validate: bool,
    pub eval_batch_size: usize,
    pub output: Option<PathBuf>,
    /// Plain-text QCMP weights loaded before training.
    pub qcmp_weights: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            graphs: Vec::new(),
            stages: default_stages(),
            negatives: 32,
            batch_size: 64,
            seed: 0,
            adam: AdamConfig::default(),
            remove_positive_edges: true,
            validate: true,
            eval_batch_size: 16,
            output: None,
            qcmp_weights: None,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: TrainConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads a config file; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for g in &mut c.graphs {
            resolve(&mut g.split);
            g.entity_embeddings.as_mut().map(resolve);
            g.relation_embeddings.as_mut().map(resolve);
        }
        c.output.as_mut().map(resolve);
        c.qcmp_weights.as_mut().map(resolve);
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.negatives == 0 {
            return Err(Error::Config("negatives must be at least 1".into()));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.stages.is_empty() {
            return Err(Error::Config("stage list is empty".into()));
        }
        for s in &self.stages {
            if let Some(g) = s.frozen.iter().find(|g| !GROUPS.contains(&g.as_str())) {
                return Err(Error::Config(format!("stage `{}` freezes unknown group `{g}`", s.name)));
            }
            if s.lr.is_some_and(|lr| !(lr > 0.0 && lr.is_finite())) {
                return Err(Error::Config(format!("stage `{}` has an invalid learning rate", s.name)));
            }
        }
        for g in &self.graphs {
            if !(g.weight > 0.0 && g.weight.is_finite()) {
                return Err(Error::Config(format!("graph {} has a non-positive weight", g.split.display())));
            }
        }
        Ok(())
    }
}

/// A graph of the training mixture with its positives and filter index.
#[derive(Clone, Debug)]
pub struct TrainGraph {
    pub name: String,
    /// Inverse-augmented when the model uses inverses.
    pub kg: KnowledgeGraph,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub weight: f64,
    pub known: TrueIndex,
    input: GraphInput,
    text: Rc<GraphText>,
    self_loops: bool,
}

impl TrainGraph {
    pub fn new(
        name: &str,
        graph: &KnowledgeGraph,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        weight: f64,
        entities: &dyn TextProvider,
        relations: &dyn TextProvider,
        config: &ModelConfig,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Invalid(format!("graph `{name}` has no training triples")));
        }
        if graph.num_entities() < 2 {
            return Err(Error::Invalid(format!("graph `{name}` needs at least two entities")));
        }
        let kg = if config.inverses && !graph.is_augmented() {
            graph.augment_inverses()?
        } else {
            graph.clone()
        };
        let offset = config.inverses.then_some(kg.base_relations());
        let mut known = TrueIndex::new();
        for &t in graph.triples().iter().chain(&train).chain(&valid) {
            known.insert_both(t, offset);
        }
        let text = Rc::new(GraphText::build(&kg, entities, relations)?);
        let input = GraphInput::new(GraphStructure::from_graph(&kg, config.self_loops)?, text.clone())?;
        Ok(Self {
            name: name.to_string(),
            kg,
            train,
            valid,
            weight,
            known,
            input,
            text,
            self_loops: config.self_loops,
        })
    }

    pub fn from_split(
        name: &str,
        split: &InductiveSplit,
        weight: f64,
        entities: &dyn TextProvider,
        relations: &dyn TextProvider,
        config: &ModelConfig,
    ) -> Result<Self> {
        Self::new(
            name,
            &split.train_graph,
            split.train.clone(),
            split.valid.clone(),
            weight,
            entities,
            relations,
            config,
        )
    }

    /// The full graph, as used for validation.
    pub fn input(&self) -> &GraphInput {
        &self.input
    }

    pub fn inverse_offset(&self) -> Option<usize> {
        self.kg.is_augmented().then(|| self.kg.base_relations())
    }

    fn masked(&self, remove: &HashSet<Triple>) -> Result<GraphInput> {
        let kg = self.kg.without_triples(remove);
        GraphInput::new(GraphStructure::from_graph(&kg, self.self_loops)?, self.text.clone())
    }
}

/// `n` uniformly drawn tails for `(head, relation, tail)`, never `tail` and,
/// when possible, never a known true tail.
pub fn sample_negatives<R: Rng>(
    known: &TrueIndex,
    num_entities: usize,
    positive: Triple,
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if num_entities < 2 {
        return Err(Error::Invalid("negative sampling needs at least two entities".into()));
    }
    let true_tails = known.tails(positive.head, positive.relation);
    let allowed = |e: usize| e != positive.tail && !true_tails.is_some_and(|s| s.contains(&e));
    let mut pool: Vec<usize> = (0..num_entities).filter(|&e| allowed(e)).collect();
    if pool.is_empty() {
        log::warn!(
            "every entity is a true tail of ({}, {}); sampling unfiltered negatives",
            positive.head,
            positive.relation
        );
        pool = (0..num_entities).filter(|&e| e != positive.tail).collect();
    }
    Ok((0..n).map(|_| pool[rng.gen_range(0..pool.len())]).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub stage: String,
    pub loss: f64,
    pub val_mrr: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainStats {
    pub epochs: Vec<EpochStats>,
    /// Wall-clock seconds per stage; not part of the CSV, which stays
    /// byte-stable.
    pub stage_seconds: Vec<f64>,
}

impl TrainStats {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,stage,loss,val_mrr\n");
        for e in &self.epochs {
            let val = e.val_mrr.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", e.epoch, e.stage, e.loss, val);
        }
        out
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }
}

struct Cursor {
    order: Vec<usize>,
    pos: usize,
}

pub struct Trainer {
    pub model: Model,
    pub graphs: Vec<TrainGraph>,
    pub config: TrainConfig,
    pub stats: TrainStats,
    adam: Adam,
    rng: ChaCha8Rng,
    cursors: Vec<Cursor>,
    epoch: usize,
    best: Option<f64>,
    /// Number of steps that drew each graph.
    pub draws: Vec<usize>,
}

impl Trainer {
    pub fn new(model: Model, graphs: Vec<TrainGraph>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if graphs.is_empty() {
            return Err(Error::Config("no training graphs".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let cursors = graphs
            .iter()
            .map(|g| {
                let mut order: Vec<usize> = (0..g.train.len()).collect();
                order.shuffle(&mut rng);
                Cursor { order, pos: 0 }
            })
            .collect();
        let n = graphs.len();
        Ok(Self {
            adam: Adam::new(config.adam),
            model,
            graphs,
            config,
            stats: TrainStats::default(),
            rng,
            cursors,
            epoch: 0,
            best: None,
            draws: vec![0; n],
        })
    }

    /// Optimiser steps per epoch: one pass over all positives on average.
    pub fn steps_per_epoch(&self) -> usize {
        let total: usize = self.graphs.iter().map(|g| g.train.len()).sum();
        total.div_ceil(self.config.batch_size)
    }

    fn pick_graph(&mut self) -> usize {
        let total: f64 = self.graphs.iter().map(|g| g.weight).sum();
        let mut x = self.rng.gen::<f64>() * total;
        for (i, g) in self.graphs.iter().enumerate() {
            if x < g.weight {
                return i;
            }
            x -= g.weight;
        }
        self.graphs.len() - 1
    }

    fn next_positives(&mut self, gi: usize) -> Vec<Triple> {
        let take = self.config.batch_size.min(self.graphs[gi].train.len());
        let mut out = Vec::with_capacity(take);
        let c = &mut self.cursors[gi];
        for _ in 0..take {
            if c.pos == c.order.len() {
                c.order.shuffle(&mut self.rng);
                c.pos = 0;
            }
            out.push(self.graphs[gi].train[c.order[c.pos]]);
            c.pos += 1;
        }
        out
    }

    /// One optimiser step; returns the batch loss.
    pub fn step(&mut self) -> Result<f64> {
        let gi = self.pick_graph();
        self.draws[gi] += 1;
        let positives = self.next_positives(gi);
        let g = &self.graphs[gi];
        let masked;
        let input = if self.config.remove_positive_edges {
            masked = g.masked(&positives.iter().copied().collect())?;
            &masked
        } else {
            &g.input
        };
        let n_ent = g.kg.num_entities();
        let mut queries = Vec::new();
        let mut targets = Vec::new();
        for &p in &positives {
            let mut dirs = vec![p];
            if let Some(off) = g.inverse_offset() {
                dirs.push(Triple::new(p.tail, p.relation + off, p.head));
            }
            for d in dirs {
                let negatives = sample_negatives(&g.known, n_ent, d, self.config.negatives, &mut self.rng)?;
                targets.push(Target {
                    query: queries.len(),
                    positive: d.tail,
                    negatives,
                });
                queries.push(Query::new(0, d.head, d.relation));
            }
        }
        let mut tape = Tape::new();
        let bound = self.model.store.bind(&mut tape)?;
        let result = self
            .model
            .forward(&mut tape, &bound, &[input], None, &queries)
            .and_then(|fwd| self.model.bce_loss(&mut tape, &fwd, &targets));
        let loss = match result {
            Ok(v) if tape.value(v).item().is_finite() => v,
            Ok(_) | Err(Error::NonFinite(_)) => {
                self.dump_batch(gi, &positives);
                return Err(Error::NonFinite("training loss"));
            }
            Err(e) => return Err(e),
        };
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        let grads = self.model.store.gradients(&grads);
        if grads.iter().any(|g| !g.is_finite()) {
            self.dump_batch(gi, &positives);
            return Err(Error::NonFinite("training gradients"));
        }
        self.adam.step(&mut self.model.store, &grads);
        Ok(value)
    }

    fn dump_batch(&self, gi: usize, positives: &[Triple]) {
        let g = &self.graphs[gi];
        let name = |t: &Triple| {
            [
                g.kg.entities().name(t.head).unwrap_or("?").to_string(),
                g.kg.relations().name(t.relation).unwrap_or("?").to_string(),
                g.kg.entities().name(t.tail).unwrap_or("?").to_string(),
            ]
        };
        let dump = serde_json::json!({
            "graph": g.name,
            "epoch": self.epoch,
            "positives": positives.iter().map(name).collect::<Vec<_>>(),
        });
        log::error!("non-finite loss on batch: {dump}");
        if let Some(dir) = &self.config.output {
            let path = dir.join("nan_batch.json");
            if let Err(e) = fs::create_dir_all(dir).and_then(|_| fs::write(&path, dump.to_string())) {
                log::error!("could not write {}: {e}", path.display());
            }
        }
    }

    /// Runs one epoch and returns its mean step loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let steps = self.steps_per_epoch();
        let mut total = 0.0;
        for _ in 0..steps {
            total += self.step()?;
        }
        self.epoch += 1;
        Ok(total / steps as f64)
    }

    /// Mean validation MRR over graphs with validation triples.
    pub fn validation_mrr(&self) -> Result<Option<f64>> {
        let mut per_graph = Vec::new();
        for g in &self.graphs {
            if g.valid.is_empty() {
                continue;
            }
            let queries = eval_queries(&g.valid, g.inverse_offset());
            let ranks = rank_all(&self.model, &g.input, &queries, &g.known, self.config.eval_batch_size)?;
            per_graph.push(mrr(&ranks.iter().map(|r| r.rank).collect::<Vec<_>>()));
        }
        if per_graph.is_empty() {
            return Ok(None);
        }
        Ok(Some(per_graph.iter().sum::<f64>() / per_graph.len() as f64))
    }

    /// Applies a stage's freeze mask and learning rate.
    pub fn enter_stage(&mut self, stage: usize) -> Result<()> {
        let s = &self.config.stages[stage];
        self.model.store.freeze_only(&s.frozen)?;
        self.adam.config.lr = s.lr.unwrap_or(self.config.adam.lr);
        Ok(())
    }

    /// Runs every stage, checkpointing into `config.output` when set.
    pub fn run(&mut self) -> Result<TrainStats> {
        let out = self.config.output.clone();
        if let Some(dir) = &out {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        for k in 0..self.config.stages.len() {
            self.enter_stage(k)?;
            let started = std::time::Instant::now();
            let stage = self.config.stages[k].clone();
            for _ in 0..stage.epochs {
                let loss = self.run_epoch()?;
                let val_mrr = if self.config.validate {
                    self.validation_mrr()?
                } else {
                    None
                };
                log::info!("epoch {} [{}] loss {loss:.6} val_mrr {val_mrr:?}", self.epoch, stage.name);
                self.stats.epochs.push(EpochStats {
                    epoch: self.epoch,
                    stage: stage.name.clone(),
                    loss,
                    val_mrr,
                });
                if let Some(dir) = &out {
                    write_file(&dir.join("stats.csv"), &self.stats.to_csv())?;
                    if let Some(v) = val_mrr {
                        if self.best.map_or(true, |b| v > b) {
                            self.best = Some(v);
                            self.model.save(&dir.join("best"), self.config.seed, k)?;
                        }
                    }
                }
            }
            self.stats.stage_seconds.push(started.elapsed().as_secs_f64());
            if let Some(dir) = &out {
                self.model.save(&dir.join(format!("stage-{k}")), self.config.seed, k)?;
            }
        }
        if let Some(dir) = &out {
            write_file(&dir.join("stats.csv"), &self.stats.to_csv())?;
            self.model
                .save(&dir.join("final"), self.config.seed, self.config.stages.len() - 1)?;
        }
        Ok(self.stats.clone())
    }
}

/// Text provider for one side of a graph source: an embedding file when
/// given, otherwise the hash provider at the model's text dimension.
pub fn source_provider(path: Option<&Path>, text_dim: usize) -> Result<Box<dyn TextProvider>> {
    match path {
        Some(p) => {
            let table = load_embeddings(p)?;
            if table.dim() != text_dim {
                return Err(Error::Config(format!(
                    "{} has dimension {}, model text_dim is {text_dim}",
                    p.display(),
                    table.dim()
                )));
            }
            Ok(Box::new(table))
        }
        None => Ok(Box::new(HashProvider::new(text_dim))),
    }
}

/// Loads every split of the mixture.
pub fn load_graphs(config: &TrainConfig) -> Result<Vec<TrainGraph>> {
    if config.graphs.is_empty() {
        return Err(Error::Config("no training graphs".into()));
    }
    config
        .graphs
        .iter()
        .map(|src| {
            let split = load_split(&src.split)?;
            let dim = config.model.text_dim;
            let ent = source_provider(src.entity_embeddings.as_deref(), dim)?;
            let rel = source_provider(src.relation_embeddings.as_deref(), dim)?;
            let name = src
                .split
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| src.split.display().to_string());
            TrainGraph::from_split(&name, &split, src.weight, ent.as_ref(), rel.as_ref(), &config.model)
        })
        .collect()
}

/// Builds the model (importing QCMP weights if configured) and runs every stage.
pub fn pretrain(config: TrainConfig) -> Result<(Model, TrainStats)> {
    config.validate()?;
    let graphs = load_graphs(&config)?;
    let mut model = Model::new(config.model.clone(), config.seed)?;
    if let Some(path) = &config.qcmp_weights {
        import_qcmp_weights(&mut model, path)?;
    }
    let mut trainer = Trainer::new(model, graphs, config)?;
    let stats = trainer.run()?;
    Ok((trainer.model, stats))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Filtered MRR of a graph's training triples (both directions) on the full graph.
pub fn training_mrr(model: &Model, graph: &TrainGraph, batch_size: usize) -> Result<f64> {
    let queries = eval_queries(&graph.train, graph.inverse_offset());
    let ranks = rank_all(model, &graph.input, &queries, &graph.known, batch_size)?;
    Ok(mrr(&ranks.iter().map(|r| r.rank).collect::<Vec<_>>()))
}

/// Loads plain-text weights into the QCMP group. Each non-empty line is
/// `name rows cols v1 … v_{rows·cols}`; every QCMP parameter must appear
/// exactly once.
pub fn import_qcmp_weights(model: &mut Model, path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let group = model
        .store
        .groups()
        .iter()
        .position(|g| g.name == "qcmp")
        .ok_or_else(|| Error::Invalid("model has no qcmp group".into()))?;
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut parts = line.split_whitespace();
        let name = parts.next().unwrap_or_default();
        let dims: Vec<usize> = parts
            .by_ref()
            .take(2)
            .map(|p| p.parse().map_err(|_| perr(i + 1, format!("bad dimension `{p}`"))))
            .collect::<Result<_>>()?;
        if dims.len() != 2 {
            return Err(perr(i + 1, "expected `name rows cols values…`".into()));
        }
        let values: Vec<f64> = parts
            .map(|p| p.parse().map_err(|_| perr(i + 1, format!("non-numeric value `{p}`"))))
            .collect::<Result<_>>()?;
        let id = model
            .store
            .find(name)
            .filter(|id| model.store.param(*id).group == group)
            .ok_or_else(|| perr(i + 1, format!("`{name}` is not a qcmp parameter")))?;
        let m = Matrix::from_vec(dims[0], dims[1], values).map_err(|_| perr(i + 1, "value count does not match shape".into()))?;
        if m.shape() != model.store.get(id).shape() {
            return Err(perr(i + 1, format!("`{name}` has shape {:?}, expected {:?}", m.shape(), model.store.get(id).shape())));
        }
        if !m.is_finite() {
            return Err(perr(i + 1, "non-finite value".into()));
        }
        if !seen.insert(id) {
            return Err(perr(i + 1, format!("duplicate parameter `{name}`")));
        }
        *model.store.get_mut(id) = m;
    }
    let expected = model.store.params().iter().filter(|p| p.group == group).count();
    if seen.len() != expected {
        return Err(Error::Invalid(format!(
            "{}: {} of {expected} qcmp parameters given",
            path.display(),
            seen.len()
        )));
    }
    Ok(())
}

/// Writes the QCMP group in the format read by [`import_qcmp_weights`].
pub fn export_qcmp_weights(model: &Model) -> String {
    let group = model.store.groups().iter().position(|g| g.name == "qcmp");
    let mut out = String::new();
    for p in model.store.params().iter().filter(|p| Some(p.group) == group) {
        let (r, c) = p.value.shape();
        let _ = write!(out, "{} {r} {c}", p.name);
        for v in p.value.data() {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::HashProvider;

    fn small_model() -> ModelConfig {
        ModelConfig {
            dim: 8,
            text_dim: 4,
            qcmp_relation_layers: 2,
            qcmp_entity_layers: 2,
            gcmp_relation_layers: 1,
            gcmp_entity_layers: 1,
            ..ModelConfig::default()
        }
    }

    fn toy() -> KnowledgeGraph {
        let mut kg = KnowledgeGraph::new();
        for i in 0..6 {
            kg.add_named(&format!("e{i}"), "next", &format!("e{}", (i + 1) % 6));
            kg.add_named(&format!("e{i}"), "back", &format!("e{}", (i + 5) % 6));
        }
        kg
    }

    fn trainer(config: TrainConfig) -> Trainer {
        let kg = toy();
        let p = HashProvider::new(config.model.text_dim);
        let g = TrainGraph::new("toy", &kg, kg.triples().to_vec(), vec![], 1.0, &p, &p, &config.model).unwrap();
        let model = Model::new(config.model.clone(), config.seed).unwrap();
        Trainer::new(model, vec![g], config).unwrap()
    }

    fn base_config() -> TrainConfig {
        TrainConfig {
            model: small_model(),
            negatives: 4,
            batch_size: 6,
            validate: false,
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn negatives_on_two_entities_are_forced() {
        let known = TrueIndex::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let negs = sample_negatives(&known, 2, Triple::new(0, 0, 1), 5, &mut rng).unwrap();
        assert_eq!(negs, vec![0; 5]);
    }

    #[test]
    fn negatives_avoid_true_tails() {
        let mut known = TrueIndex::new();
        for t in [1, 3, 4] {
            known.insert(Triple::new(0, 0, t));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let negs = sample_negatives(&known, 10, Triple::new(0, 0, 1), 4, &mut rng).unwrap();
        assert_eq!(negs.len(), 4);
        let truth: HashSet<usize> = [1, 3, 4].into();
        assert!(negs.iter().all(|e| !truth.contains(e) && *e < 10));
        let mut again = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(negs, sample_negatives(&known, 10, Triple::new(0, 0, 1), 4, &mut again).unwrap());
    }

    #[test]
    fn negatives_fall_back_when_everything_is_true() {
        let mut known = TrueIndex::new();
        for t in 0..3 {
            known.insert(Triple::new(0, 0, t));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let negs = sample_negatives(&known, 3, Triple::new(0, 0, 2), 6, &mut rng).unwrap();
        assert!(negs.iter().all(|&e| e != 2));
        assert!(sample_negatives(&known, 1, Triple::new(0, 0, 0), 1, &mut rng).is_err());
    }

    #[test]
    fn config_is_strict() {
        assert!(TrainConfig::from_json(r#"{"negatives": 4}"#).is_ok());
        assert!(matches!(TrainConfig::from_json(r#"{"negative": 4}"#), Err(Error::Config(_))));
        assert!(TrainConfig::from_json(r#"{"negatives": 0}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"stages": []}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"stages": [{"name": "a", "epochs": 1, "frozen": ["nope"]}]}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"model": {"dim": 8, "extra": 1}}"#).is_err());
    }

    #[test]
    fn fully_frozen_stage_keeps_parameters() {
        let mut config = base_config();
        config.stages = vec![StageConfig {
            name: "frozen".into(),
            epochs: 2,
            frozen: GROUPS.iter().map(|s| s.to_string()).collect(),
            lr: None,
        }];
        let mut t = trainer(config);
        let before = t.model.store.clone();
        t.run().unwrap();
        for (a, b) in before.params().iter().zip(t.model.store.params()) {
            assert_eq!(a.value, b.value, "{}", a.name);
        }
    }

    #[test]
    fn frozen_groups_stay_bit_identical() {
        let mut config = base_config();
        config.stages = vec![StageConfig {
            name: "qcmp-only".into(),
            epochs: 2,
            frozen: vec!["gcmp".into(), "decoder".into()],
            lr: None,
        }];
        let mut t = trainer(config);
        let before = t.model.store.clone();
        t.run().unwrap();
        let gcmp = before.groups().iter().position(|g| g.name == "gcmp").unwrap();
        let qcmp = before.groups().iter().position(|g| g.name == "qcmp").unwrap();
        let mut moved = false;
        for (a, b) in before.params().iter().zip(t.model.store.params()) {
            if a.group == gcmp {
                assert_eq!(a.value, b.value);
            }
            if a.group == qcmp && a.value != b.value {
                moved = true;
            }
        }
        assert!(moved);
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        let mut config = base_config();
        config.stages = vec![StageConfig {
            name: "all".into(),
            epochs: 3,
            frozen: vec![],
            lr: None,
        }];
        let a = trainer(config.clone()).run().unwrap();
        let b = trainer(config).run().unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(a.losses().iter().all(|l| l.is_finite() && *l >= 0.0));
    }

    #[test]
    fn mixture_draws_every_graph() {
        let mut config = base_config();
        config.batch_size = 2;
        let p = HashProvider::new(4);
        let kg = toy();
        let other = KnowledgeGraph::from_triples([("x", "r", "y"), ("y", "r", "z")]);
        let graphs = vec![
            TrainGraph::new("a", &kg, kg.triples().to_vec(), vec![], 3.0, &p, &p, &config.model).unwrap(),
            TrainGraph::new("b", &other, other.triples().to_vec(), vec![], 1.0, &p, &p, &config.model).unwrap(),
        ];
        let mut t = Trainer::new(Model::new(config.model.clone(), 0).unwrap(), graphs, config).unwrap();
        t.enter_stage(2).unwrap();
        for _ in 0..40 {
            t.step().unwrap();
        }
        assert!(t.draws.iter().all(|&d| d > 0), "{:?}", t.draws);
        assert!(t.draws[0] > t.draws[1]);
    }

    #[test]
    fn checkpoints_and_stats_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let kg = toy();
        let mut config = base_config();
        config.validate = true;
        config.output = Some(dir.path().to_path_buf());
        config.stages.iter_mut().for_each(|s| s.epochs = 1);
        let p = HashProvider::new(4);
        let triples = kg.triples().to_vec();
        let g = TrainGraph::new("toy", &kg, triples[..10].to_vec(), triples[10..].to_vec(), 1.0, &p, &p, &config.model).unwrap();
        let mut t = Trainer::new(Model::new(config.model.clone(), 0).unwrap(), vec![g], config).unwrap();
        t.run().unwrap();
        let csv = fs::read_to_string(dir.path().join("stats.csv")).unwrap();
        assert!(csv.starts_with("epoch,stage,loss,val_mrr\n"));
        assert_eq!(csv.lines().count(), 4);
        for d in ["stage-0", "stage-1", "stage-2", "best", "final"] {
            assert!(dir.path().join(d).is_dir(), "{d}");
        }
    }

    #[test]
    fn qcmp_weights_round_trip() {
        let config = small_model();
        let a = Model::new(config.clone(), 1).unwrap();
        let mut b = Model::new(config, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.txt");
        fs::write(&path, export_qcmp_weights(&a)).unwrap();
        import_qcmp_weights(&mut b, &path).unwrap();
        let q = b.store.groups().iter().position(|g| g.name == "qcmp").unwrap();
        for (x, y) in a.store.params().iter().zip(b.store.params()) {
            if x.group == q {
                assert_eq!(x.value, y.value);
            }
        }
        fs::write(&path, "qcmp.nothing 1 1 0\n").unwrap();
        assert!(import_qcmp_weights(&mut b, &path).is_err());
    }
}
