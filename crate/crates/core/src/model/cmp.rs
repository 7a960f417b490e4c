//! Conditional message passing over an arbitrary edge list.
//!
//! One layer, for every node `v`:
//!
//! ```text
//! agg_v = Σ_{(u, r, v)} s_e · (h_u ⊙ x_r)
//! h_v'  = LayerNorm([h_v || agg_v] · W + b)        (optionally followed by ReLU)
//! ```
//!
//! Edge features `x_r` are inputs to every call, not layer parameters, so the
//! same stack serves query-conditioned and global relation features.

use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::params::init_uniform;
use crate::numerics::{Bound, Matrix, ParamId, ParamStore, Tape, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Edges `(src, feature, dst)` with validated indices.
#[derive(Clone, Debug)]
pub struct EdgeIndex {
    pub src: Rc<[usize]>,
    pub feat: Rc<[usize]>,
    pub dst: Rc<[usize]>,
    pub num_nodes: usize,
    pub num_feats: usize,
}

impl EdgeIndex {
    pub fn new(num_nodes: usize, num_feats: usize, edges: &[(usize, usize, usize)]) -> Result<Self> {
        for &(u, r, v) in edges {
            for (what, index, size) in [
                ("cmp nodes", u, num_nodes),
                ("cmp edge features", r, num_feats),
                ("cmp nodes", v, num_nodes),
            ] {
                if index >= size {
                    return Err(Error::OutOfRange { what, index, size });
                }
            }
        }
        Ok(Self {
            src: edges.iter().map(|e| e.0).collect(),
            feat: edges.iter().map(|e| e.1).collect(),
            dst: edges.iter().map(|e| e.2).collect(),
            num_nodes,
            num_feats,
        })
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CmpLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
}

/// A stack of CMP layers with distinct parameters per layer.
#[derive(Clone, Debug)]
pub struct CmpStack {
    pub layers: Vec<CmpLayer>,
    pub dim: usize,
    pub relu: bool,
    pub layer_norm: bool,
}

impl CmpStack {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        group: usize,
        prefix: &str,
        num_layers: usize,
        dim: usize,
        relu: bool,
        rng: &mut R,
    ) -> Self {
        let layers = (0..num_layers)
            .map(|l| CmpLayer {
                weight: store.add(
                    group,
                    &format!("{prefix}.{l}.weight"),
                    init_uniform(2 * dim, dim, 2 * dim, rng),
                ),
                bias: store.add(group, &format!("{prefix}.{l}.bias"), Matrix::zeros(1, dim)),
                gamma: store.add(group, &format!("{prefix}.{l}.ln_scale"), Matrix::filled(1, dim, 1.0)),
                beta: store.add(group, &format!("{prefix}.{l}.ln_shift"), Matrix::zeros(1, dim)),
            })
            .collect();
        Self {
            layers,
            dim,
            relu,
            layer_norm: true,
        }
    }

    /// Test-mode stack: the update selects the aggregate (`W = [0; I]`,
    /// `b = 0`) and normalisation is off, so outputs are plain message sums.
    pub fn selector(store: &mut ParamStore, group: usize, prefix: &str, num_layers: usize, dim: usize) -> Self {
        let mut w = Matrix::zeros(2 * dim, dim);
        for i in 0..dim {
            w.set(dim + i, i, 1.0);
        }
        let layers = (0..num_layers)
            .map(|l| CmpLayer {
                weight: store.add(group, &format!("{prefix}.{l}.weight"), w.clone()),
                bias: store.add(group, &format!("{prefix}.{l}.bias"), Matrix::zeros(1, dim)),
                gamma: store.add(group, &format!("{prefix}.{l}.ln_scale"), Matrix::filled(1, dim, 1.0)),
                beta: store.add(group, &format!("{prefix}.{l}.ln_shift"), Matrix::zeros(1, dim)),
            })
            .collect();
        Self {
            layers,
            dim,
            relu: false,
            layer_norm: false,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Runs every layer. `init` is `num_nodes×dim`, `feats` is
    /// `num_feats×dim`, `scores` (if given) is `|edges|×1`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        init: Var,
        feats: Var,
        edges: &EdgeIndex,
        scores: Option<Var>,
    ) -> Result<Var> {
        let (n, d) = tape.value(init).shape();
        if n != edges.num_nodes || d != self.dim {
            return Err(Error::Shape {
                op: "cmp init",
                left: (n, d),
                right: (edges.num_nodes, self.dim),
            });
        }
        let fshape = tape.value(feats).shape();
        if fshape != (edges.num_feats, self.dim) {
            return Err(Error::Shape {
                op: "cmp edge features",
                left: fshape,
                right: (edges.num_feats, self.dim),
            });
        }
        if let Some(s) = scores {
            let sshape = tape.value(s).shape();
            if sshape != (edges.len(), 1) {
                return Err(Error::Shape {
                    op: "cmp edge scores",
                    left: sshape,
                    right: (edges.len(), 1),
                });
            }
        }
        // Relation features per edge are the same in every layer.
        let edge_feats = tape.gather_rows(feats, edges.feat.clone())?;
        let mut h = init;
        for layer in &self.layers {
            let src = tape.gather_rows(h, edges.src.clone())?;
            let mut msg = tape.mul(src, edge_feats)?;
            if let Some(s) = scores {
                msg = tape.mul_col(msg, s)?;
            }
            let agg = tape.scatter_sum(msg, edges.dst.clone(), edges.num_nodes)?;
            let cat = tape.concat_cols(h, agg)?;
            let lin = tape.matmul(cat, bound.get(layer.weight))?;
            let mut out = tape.add_row(lin, bound.get(layer.bias))?;
            if self.layer_norm {
                out = tape.layer_norm(out, bound.get(layer.gamma), bound.get(layer.beta), LAYER_NORM_EPS)?;
            }
            if self.relu {
                out = tape.relu(out)?;
            }
            h = out;
        }
        Ok(h)
    }

    /// Forward pass without gradient bookkeeping for the caller.
    pub fn eval(
        &self,
        store: &ParamStore,
        init: &Matrix,
        feats: &Matrix,
        edges: &EdgeIndex,
        scores: Option<&Matrix>,
    ) -> Result<Matrix> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape)?;
        let i = tape.constant(init.clone())?;
        let f = tape.constant(feats.clone())?;
        let s = scores.map(|s| tape.constant(s.clone())).transpose()?;
        let out = self.forward(&mut tape, &bound, i, f, edges, s)?;
        Ok(tape.value(out).clone())
    }
}
