//! The reasoning model: two CMP channels over the relation and entity graphs,
//! channel fusion, text-adaptive gating, edge scoring and the decoder.
//!
//! A batch is a disjoint union of query-conditioned graph copies. The
//! query-independent channel and text pooling run once per distinct graph
//! and are gathered into the copies.

pub mod cmp;
pub mod input;
pub mod layers;

use std::path::Path;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use cmp::{CmpStack, EdgeIndex};
pub use input::{GraphInput, GraphStructure, GraphText, TokenBatch};
pub use layers::{fuse_channels, score_edge, Decoder, DecoderMode, Dtaf, EdgeScorer, Mlp};

use crate::error::{Error, Result};
use crate::graph::MetaRelation;
use crate::numerics::checkpoint::{self, Manifest};
use crate::numerics::params::init_uniform;
use crate::numerics::{Bound, Matrix, ParamId, ParamStore, Tape, Var};
use crate::text::Fallback;

/// Parameter group names, in creation order.
pub const GROUPS: [&str; 6] = ["qcmp", "gcmp", "fusion", "dtaf", "edge_scorer", "decoder"];

/// Probability clamp inside the logarithms of the loss.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub dim: usize,
    pub text_dim: usize,
    pub qcmp_relation_layers: usize,
    pub qcmp_entity_layers: usize,
    pub gcmp_relation_layers: usize,
    pub gcmp_entity_layers: usize,
    /// Number of DTAF query slots.
    pub query_tokens: usize,
    pub decoder: DecoderMode,
    /// ReLU after each CMP layer norm.
    pub cmp_relu: bool,
    pub inverses: bool,
    pub self_loops: bool,
    /// Query-conditioned edge scores in question-answering mode.
    pub edge_scoring: bool,
    /// Text-adaptive gating; when off the fused CMP features are used as is.
    pub dtaf: bool,
    pub text_fallback: Fallback,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            text_dim: 32,
            qcmp_relation_layers: 6,
            qcmp_entity_layers: 6,
            gcmp_relation_layers: 3,
            gcmp_entity_layers: 3,
            query_tokens: 1,
            decoder: DecoderMode::Attention,
            cmp_relu: false,
            inverses: true,
            self_loops: true,
            edge_scoring: true,
            dtaf: true,
            text_fallback: Fallback::Zeros,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.text_dim == 0 {
            return Err(Error::Config("dim and text_dim must be positive".into()));
        }
        if self.query_tokens == 0 {
            return Err(Error::Config("query_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

/// Query-relation one-hot initialisation of the relation graph: the query
/// relation's row is all ones, every other row zero.
pub fn qcmp_relation_init(query_relation: usize, num_relations: usize, dim: usize) -> Result<Matrix> {
    if query_relation >= num_relations {
        return Err(Error::OutOfRange {
            what: "relation table",
            index: query_relation,
            size: num_relations,
        });
    }
    let mut m = Matrix::zeros(num_relations, dim);
    m.row_mut(query_relation).fill(1.0);
    Ok(m)
}

/// Entity initialisation of the query-conditioned channel: the query
/// entity's row is the query relation's row of `relations`, every other row
/// zero.
pub fn qcmp_entity_init(relations: &Matrix, query_entity: usize, query_relation: usize, num_entities: usize) -> Result<Matrix> {
    if query_entity >= num_entities {
        return Err(Error::OutOfRange {
            what: "entity table",
            index: query_entity,
            size: num_entities,
        });
    }
    if query_relation >= relations.rows() {
        return Err(Error::OutOfRange {
            what: "relation table",
            index: query_relation,
            size: relations.rows(),
        });
    }
    let mut m = Matrix::zeros(num_entities, relations.cols());
    m.row_mut(query_entity).copy_from_slice(relations.row(query_relation));
    Ok(m)
}

#[derive(Clone, Debug)]
pub struct Qcmp {
    pub meta: ParamId,
    pub relation: CmpStack,
    pub entity: CmpStack,
}

#[derive(Clone, Debug)]
pub struct Gcmp {
    pub meta: ParamId,
    pub text_proj: ParamId,
    pub relation: CmpStack,
    pub entity: CmpStack,
}

/// A query `(head, relation, ?)` against graph `graph` of the batch.
/// `question` is the text feature used for edge scoring.
#[derive(Clone, Debug)]
pub struct Query {
    pub graph: usize,
    pub head: usize,
    pub relation: usize,
    pub question: Option<Rc<[f64]>>,
}

impl Query {
    pub fn new(graph: usize, head: usize, relation: usize) -> Self {
        Self {
            graph,
            head,
            relation,
            question: None,
        }
    }
}

/// Logits of every entity of every query copy (`Σ|E|×1`) and the row
/// range of each copy.
pub struct Forward {
    pub logits: Var,
    pub offsets: Vec<usize>,
    pub sizes: Vec<usize>,
}

impl Forward {
    /// Per-query logit vectors.
    pub fn split(&self, tape: &Tape) -> Vec<Vec<f64>> {
        let data = tape.value(self.logits).data();
        self.offsets
            .iter()
            .zip(&self.sizes)
            .map(|(&o, &n)| data[o..o + n].to_vec())
            .collect()
    }
}

/// Query-independent outputs for one graph: the global channel and pooled
/// text features (when gating is on).
#[derive(Clone, Debug, PartialEq)]
pub struct GraphCache {
    pub relations: Matrix,
    pub entities: Matrix,
    pub text_relations: Option<Matrix>,
    pub text_entities: Option<Matrix>,
}

/// Training target for one query: the positive entity and sampled negatives
/// (local ids of the query's copy).
#[derive(Clone, Debug)]
pub struct Target {
    pub query: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

struct Global {
    relations: Var,
    entities: Var,
    text_relations: Option<Var>,
    text_entities: Option<Var>,
    rel_offset: Vec<usize>,
    ent_offset: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub qcmp: Qcmp,
    pub gcmp: Gcmp,
    pub fusion_relation: Mlp,
    pub fusion_entity: Mlp,
    pub dtaf: Dtaf,
    pub edge_scorer: EdgeScorer,
    pub decoder: Decoder,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let groups: Vec<usize> = GROUPS.iter().map(|g| store.add_group(g)).collect();
        let (d, dt) = (config.dim, config.text_dim);
        let relu = config.cmp_relu;

        let qcmp = Qcmp {
            meta: store.add(groups[0], "qcmp.meta", init_uniform(4, d, d, &mut rng)),
            relation: CmpStack::new(&mut store, groups[0], "qcmp.relation", config.qcmp_relation_layers, d, relu, &mut rng),
            entity: CmpStack::new(&mut store, groups[0], "qcmp.entity", config.qcmp_entity_layers, d, relu, &mut rng),
        };
        let gcmp = Gcmp {
            meta: store.add(groups[1], "gcmp.meta", init_uniform(4, d, d, &mut rng)),
            text_proj: store.add(groups[1], "gcmp.text_proj", init_uniform(dt, d, dt, &mut rng)),
            relation: CmpStack::new(&mut store, groups[1], "gcmp.relation", config.gcmp_relation_layers, d, relu, &mut rng),
            entity: CmpStack::new(&mut store, groups[1], "gcmp.entity", config.gcmp_entity_layers, d, relu, &mut rng),
        };
        let fusion_relation = Mlp::new(&mut store, groups[2], "fusion.relation", 2 * d, d, d, &mut rng);
        let fusion_entity = Mlp::new(&mut store, groups[2], "fusion.entity", 2 * d, d, d, &mut rng);
        let dtaf = Dtaf::new(&mut store, groups[3], config.query_tokens, dt, d, &mut rng);
        let edge_scorer = EdgeScorer::new(&mut store, groups[4], dt, &mut rng);
        let decoder = Decoder::new(&mut store, groups[5], config.decoder, d, &mut rng);
        Ok(Self {
            config,
            store,
            qcmp,
            gcmp,
            fusion_relation,
            fusion_entity,
            dtaf,
            edge_scorer,
            decoder,
        })
    }

    fn global(&self, tape: &mut Tape, bound: &Bound, graphs: &[&GraphInput]) -> Result<Global> {
        let d = self.config.dim;
        let mut rel_offset = Vec::with_capacity(graphs.len());
        let mut ent_offset = Vec::with_capacity(graphs.len());
        let (mut nr, mut ne) = (0, 0);
        let mut rel_edges = Vec::new();
        let mut ent_edges = Vec::new();
        for g in graphs {
            let s = &g.structure;
            rel_offset.push(nr);
            ent_offset.push(ne);
            rel_edges.extend(s.rel_graph.edges.iter().map(|e| (nr + e.from, e.meta.index(), nr + e.to)));
            ent_edges.extend(s.triples.iter().map(|t| (ne + t.head, nr + t.relation, ne + t.tail)));
            nr += s.num_relations;
            ne += s.num_entities;
        }
        let rel_index = EdgeIndex::new(nr, MetaRelation::ALL.len(), &rel_edges)?;
        let ent_index = EdgeIndex::new(ne, nr, &ent_edges)?;

        let ones = tape.constant(Matrix::filled(nr, d, 1.0))?;
        let relations = self
            .gcmp
            .relation
            .forward(tape, bound, ones, bound.get(self.gcmp.meta), &rel_index, None)?;
        let feats: Vec<&Matrix> = graphs.iter().map(|g| &g.text.entity_feat).collect();
        let text = tape.constant(Matrix::vstack(&feats)?)?;
        let seed = tape.matmul(text, bound.get(self.gcmp.text_proj))?;
        let entities = self.gcmp.entity.forward(tape, bound, seed, relations, &ent_index, None)?;

        let (text_relations, text_entities) = if self.config.dtaf {
            let (rt, ro) = stack_tokens(graphs.iter().map(|g| &g.text.relation_tokens), &rel_offset)?;
            let rt = tape.constant(rt)?;
            let xr = self.dtaf.pool(tape, bound, rt, ro, nr)?;
            let (et, eo) = stack_tokens(graphs.iter().map(|g| &g.text.entity_tokens), &ent_offset)?;
            let et = tape.constant(et)?;
            let xe = self.dtaf.pool(tape, bound, et, eo, ne)?;
            (Some(xr), Some(xe))
        } else {
            (None, None)
        };
        Ok(Global {
            relations,
            entities,
            text_relations,
            text_entities,
            rel_offset,
            ent_offset,
        })
    }

    fn global_from_cache(&self, tape: &mut Tape, graphs: &[&GraphInput], caches: &[&GraphCache]) -> Result<Global> {
        if caches.len() != graphs.len() {
            return Err(Error::Invalid("one cache entry per graph required".into()));
        }
        let mut rel_offset = Vec::new();
        let mut ent_offset = Vec::new();
        let (mut nr, mut ne) = (0, 0);
        for g in graphs {
            rel_offset.push(nr);
            ent_offset.push(ne);
            nr += g.structure.num_relations;
            ne += g.structure.num_entities;
        }
        let stack = |tape: &mut Tape, parts: Vec<&Matrix>| -> Result<Var> { tape.constant(Matrix::vstack(&parts)?) };
        let relations = stack(tape, caches.iter().map(|c| &c.relations).collect())?;
        let entities = stack(tape, caches.iter().map(|c| &c.entities).collect())?;
        let (text_relations, text_entities) = if self.config.dtaf {
            let missing = || Error::Invalid("cache lacks pooled text features".into());
            let tr: Vec<&Matrix> = caches.iter().map(|c| c.text_relations.as_ref().ok_or_else(missing)).collect::<Result<_>>()?;
            let te: Vec<&Matrix> = caches.iter().map(|c| c.text_entities.as_ref().ok_or_else(missing)).collect::<Result<_>>()?;
            (Some(stack(tape, tr)?), Some(stack(tape, te)?))
        } else {
            (None, None)
        };
        if tape.value(relations).rows() != nr || tape.value(entities).rows() != ne {
            return Err(Error::Invalid("cache does not match its graph".into()));
        }
        Ok(Global {
            relations,
            entities,
            text_relations,
            text_entities,
            rel_offset,
            ent_offset,
        })
    }

    /// `(R_q, H_q)` of the query-conditioned channel for one query, with
    /// optional per-edge scores (`|T|×1`).
    pub fn qcmp_encode(&self, graph: &GraphInput, head: usize, relation: usize, scores: Option<&Matrix>) -> Result<(Matrix, Matrix)> {
        let s = &graph.structure;
        let init = qcmp_relation_init(relation, s.num_relations, self.config.dim)?;
        let rel_edges: Vec<_> = s.rel_graph.edges.iter().map(|e| (e.from, e.meta.index(), e.to)).collect();
        let rel_index = EdgeIndex::new(s.num_relations, MetaRelation::ALL.len(), &rel_edges)?;
        let r_q = self.qcmp.relation.eval(&self.store, &init, self.store.get(self.qcmp.meta), &rel_index, None)?;
        let ent_init = qcmp_entity_init(&r_q, head, relation, s.num_entities)?;
        let ent_edges: Vec<_> = s.triples.iter().map(|t| (t.head, t.relation, t.tail)).collect();
        let ent_index = EdgeIndex::new(s.num_entities, s.num_relations, &ent_edges)?;
        let h_q = self.qcmp.entity.eval(&self.store, &ent_init, &r_q, &ent_index, scores)?;
        Ok((r_q, h_q))
    }

    /// `(R_g, H_g)` of the global channel for one graph.
    pub fn gcmp_encode(&self, graph: &GraphInput) -> Result<(Matrix, Matrix)> {
        let c = self.graph_cache(graph)?;
        Ok((c.relations, c.entities))
    }

    /// Query-independent features of one graph, for reuse across batches.
    pub fn graph_cache(&self, graph: &GraphInput) -> Result<GraphCache> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape)?;
        let g = self.global(&mut tape, &bound, &[graph])?;
        Ok(GraphCache {
            relations: tape.value(g.relations).clone(),
            entities: tape.value(g.entities).clone(),
            text_relations: g.text_relations.map(|v| tape.value(v).clone()),
            text_entities: g.text_entities.map(|v| tape.value(v).clone()),
        })
    }

    /// Batched forward pass. With `caches`, the query-independent channel is
    /// read from them as constants.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        graphs: &[&GraphInput],
        caches: Option<&[&GraphCache]>,
        queries: &[Query],
    ) -> Result<Forward> {
        if queries.is_empty() {
            return Err(Error::Invalid("empty query batch".into()));
        }
        for q in queries {
            let g = graphs.get(q.graph).ok_or(Error::OutOfRange {
                what: "batch graphs",
                index: q.graph,
                size: graphs.len(),
            })?;
            if q.head >= g.structure.num_entities {
                return Err(Error::OutOfRange {
                    what: "entity table",
                    index: q.head,
                    size: g.structure.num_entities,
                });
            }
            if q.relation >= g.structure.num_relations {
                return Err(Error::OutOfRange {
                    what: "relation table",
                    index: q.relation,
                    size: g.structure.num_relations,
                });
            }
        }
        let with_question = queries.iter().filter(|q| q.question.is_some()).count();
        if with_question != 0 && with_question != queries.len() {
            return Err(Error::Invalid("edge-scored and unscored queries cannot share a batch".into()));
        }
        let scored = self.config.edge_scoring && with_question == queries.len();

        let global = match caches {
            Some(c) => self.global_from_cache(tape, graphs, c)?,
            None => self.global(tape, bound, graphs)?,
        };

        // Query-conditioned copies.
        let d = self.config.dim;
        let mut rel_edges = Vec::new();
        let mut ent_edges = Vec::new();
        let mut rel_map = Vec::new();
        let mut ent_map = Vec::new();
        let mut owner = Vec::new();
        let mut offsets = Vec::with_capacity(queries.len());
        let mut sizes = Vec::with_capacity(queries.len());
        let mut query_rel_rows = Vec::with_capacity(queries.len());
        let mut query_ent_rows = Vec::with_capacity(queries.len());
        let (mut nr, mut ne) = (0, 0);
        for (b, q) in queries.iter().enumerate() {
            let s = &graphs[q.graph].structure;
            rel_edges.extend(s.rel_graph.edges.iter().map(|e| (nr + e.from, e.meta.index(), nr + e.to)));
            ent_edges.extend(s.triples.iter().map(|t| (ne + t.head, nr + t.relation, ne + t.tail)));
            rel_map.extend((0..s.num_relations).map(|r| global.rel_offset[q.graph] + r));
            ent_map.extend((0..s.num_entities).map(|e| global.ent_offset[q.graph] + e));
            owner.extend(std::iter::repeat(b).take(s.num_entities));
            offsets.push(ne);
            sizes.push(s.num_entities);
            query_rel_rows.push(nr + q.relation);
            query_ent_rows.push(ne + q.head);
            nr += s.num_relations;
            ne += s.num_entities;
        }
        let rel_index = EdgeIndex::new(nr, MetaRelation::ALL.len(), &rel_edges)?;
        let ent_index = EdgeIndex::new(ne, nr, &ent_edges)?;

        let mut rel_init = Matrix::zeros(nr, d);
        for &r in &query_rel_rows {
            rel_init.row_mut(r).fill(1.0);
        }
        let rel_init = tape.constant(rel_init)?;
        let r_q = self
            .qcmp
            .relation
            .forward(tape, bound, rel_init, bound.get(self.qcmp.meta), &rel_index, None)?;
        let query_rel_rows: Rc<[usize]> = query_rel_rows.into();
        let query_ent_rows: Rc<[usize]> = query_ent_rows.into();
        let head_init = tape.gather_rows(r_q, query_rel_rows.clone())?;
        let ent_init = tape.scatter_sum(head_init, query_ent_rows.clone(), ne)?;
        let scores = if scored {
            Some(self.edge_scores(tape, bound, graphs, queries)?)
        } else {
            None
        };
        let h_q = self.qcmp.entity.forward(tape, bound, ent_init, r_q, &ent_index, scores)?;

        let rel_map: Rc<[usize]> = rel_map.into();
        let ent_map: Rc<[usize]> = ent_map.into();
        let r_g = tape.gather_rows(global.relations, rel_map.clone())?;
        let h_g = tape.gather_rows(global.entities, ent_map.clone())?;
        let r_cmp = fuse_channels(tape, bound, &self.fusion_relation, r_q, r_g)?;
        let h_cmp = fuse_channels(tape, bound, &self.fusion_entity, h_q, h_g)?;
        let (r_f, h_f) = match (global.text_relations, global.text_entities) {
            (Some(xr), Some(xe)) => {
                let x_r = tape.gather_rows(xr, rel_map)?;
                let x_e = tape.gather_rows(xe, ent_map)?;
                self.dtaf.fuse(tape, bound, x_r, x_e, r_cmp, h_cmp)?
            }
            _ => (r_cmp, h_cmp),
        };

        let q_ent = tape.gather_rows(h_f, query_ent_rows)?;
        let q_rel = tape.gather_rows(r_f, query_rel_rows)?;
        let q = tape.add(q_ent, q_rel)?;
        let logits = self.decoder.forward(tape, bound, q, h_f, owner.into())?;
        Ok(Forward { logits, offsets, sizes })
    }

    /// Relevance of every edge of every copy (`Σ|T|×1`); inverse edges reuse
    /// the score of their forward edge.
    fn edge_scores(&self, tape: &mut Tape, bound: &Bound, graphs: &[&GraphInput], queries: &[Query]) -> Result<Var> {
        let dt = self.config.text_dim;
        let total_fwd: usize = queries.iter().map(|q| graphs[q.graph].structure.num_forward).sum();
        let mut context = Matrix::zeros(total_fwd, 3 * dt);
        let mut question = Matrix::zeros(total_fwd, dt);
        let mut index = Vec::new();
        let mut row = 0;
        for q in queries {
            let g = graphs[q.graph];
            let x_q = q.question.as_ref().expect("checked by caller");
            if x_q.len() != dt || g.text.dim != dt {
                return Err(Error::Shape {
                    op: "edge scoring",
                    left: (1, x_q.len()),
                    right: (1, dt),
                });
            }
            let s = &g.structure;
            for t in &s.triples[..s.num_forward] {
                let out = context.row_mut(row);
                out[..dt].copy_from_slice(g.text.entity_feat.row(t.head));
                out[dt..2 * dt].copy_from_slice(g.text.relation_feat.row(t.relation));
                out[2 * dt..].copy_from_slice(g.text.entity_feat.row(t.tail));
                question.row_mut(row).copy_from_slice(x_q);
                row += 1;
            }
            let base = row - s.num_forward;
            index.extend(s.forward_index.iter().map(|&f| base + f));
        }
        let c = tape.constant(context)?;
        let xq = tape.constant(question)?;
        let fwd = self.edge_scorer.forward(tape, bound, c, xq)?;
        tape.gather_rows(fwd, index.into())
    }

    /// Binary cross-entropy over positives and sampled negatives, averaged
    /// over queries; each query's negatives are averaged among themselves.
    pub fn bce_loss(&self, tape: &mut Tape, fwd: &Forward, targets: &[Target]) -> Result<Var> {
        if targets.is_empty() {
            return Err(Error::Invalid("empty target list".into()));
        }
        let b = targets.len() as f64;
        let mut rows = Vec::new();
        let mut sign = Vec::new();
        let mut weight = Vec::new();
        for t in targets {
            let (offset, size) = match (fwd.offsets.get(t.query), fwd.sizes.get(t.query)) {
                (Some(&o), Some(&s)) => (o, s),
                _ => {
                    return Err(Error::OutOfRange {
                        what: "batch queries",
                        index: t.query,
                        size: fwd.offsets.len(),
                    })
                }
            };
            for &e in std::iter::once(&t.positive).chain(&t.negatives) {
                if e >= size {
                    return Err(Error::OutOfRange {
                        what: "candidate entities",
                        index: e,
                        size,
                    });
                }
            }
            rows.push(offset + t.positive);
            sign.push(1.0);
            weight.push(1.0 / b);
            let n = t.negatives.len() as f64;
            for &e in &t.negatives {
                rows.push(offset + e);
                sign.push(-1.0);
                weight.push(1.0 / (b * n));
            }
        }
        let z = tape.gather_rows(fwd.logits, rows.into())?;
        let sign = tape.constant(Matrix::column_vector(&sign))?;
        let z = tape.mul(z, sign)?;
        let p = tape.sigmoid(z)?;
        let logp = tape.log_clamped(p, PROB_EPS)?;
        let w = tape.constant(Matrix::column_vector(&weight))?;
        let weighted = tape.mul(logp, w)?;
        let total = tape.sum(weighted)?;
        tape.scale(total, -1.0)
    }

    /// Logit vectors for `queries` on a fresh tape.
    pub fn score(&self, graphs: &[&GraphInput], caches: Option<&[&GraphCache]>, queries: &[Query]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape)?;
        let fwd = self.forward(&mut tape, &bound, graphs, caches, queries)?;
        Ok(fwd.split(&tape))
    }

    pub fn save(&self, dir: &Path, seed: u64, stage: usize) -> Result<Manifest> {
        checkpoint::save(dir, &self.store, seed, stage, serde_json::to_value(&self.config)?)
    }

    /// Rebuilds the architecture from the stored configuration and copies
    /// every parameter by name.
    pub fn load(dir: &Path) -> Result<(Self, Manifest)> {
        let (store, manifest) = checkpoint::load(dir)?;
        let config: ModelConfig = serde_json::from_value(manifest.model.clone())
            .map_err(|e| Error::Invalid(format!("checkpoint model config: {e}")))?;
        let mut model = Model::new(config, manifest.seed)?;
        if store.len() != model.store.len() {
            return Err(Error::Invalid(format!(
                "checkpoint has {} parameters, architecture expects {}",
                store.len(),
                model.store.len()
            )));
        }
        for p in store.params() {
            let id = model
                .store
                .find(&p.name)
                .ok_or_else(|| Error::Invalid(format!("unexpected parameter `{}` in checkpoint", p.name)))?;
            let target = model.store.get_mut(id);
            if target.shape() != p.value.shape() {
                return Err(Error::Invalid(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    p.name,
                    p.value.shape(),
                    target.shape()
                )));
            }
            *target = p.value.clone();
        }
        for g in store.groups() {
            model.store.set_frozen(&g.name, g.frozen)?;
        }
        Ok((model, manifest))
    }
}

fn stack_tokens<'a>(batches: impl Iterator<Item = &'a TokenBatch>, offsets: &[usize]) -> Result<(Matrix, Rc<[usize]>)> {
    let batches: Vec<&TokenBatch> = batches.collect();
    let tokens = Matrix::vstack(&batches.iter().map(|b| &b.tokens).collect::<Vec<_>>())?;
    let owner: Vec<usize> = batches
        .iter()
        .zip(offsets)
        .flat_map(|(b, &o)| b.owner.iter().map(move |&i| o + i))
        .collect();
    Ok((tokens, owner.into()))
}

/// `−ln p_pos − (1/n) Σ ln(1 − p_neg)` with probabilities clamped at
/// [`PROB_EPS`]; an empty negative list contributes nothing.
pub fn bce_value(p_pos: f64, p_negs: &[f64]) -> f64 {
    let pos = -p_pos.max(PROB_EPS).ln();
    if p_negs.is_empty() {
        return pos;
    }
    let neg: f64 = p_negs.iter().map(|p| (1.0 - p).max(PROB_EPS).ln()).sum();
    pos - neg / p_negs.len() as f64
}

#[cfg(test)]
mod tests;
