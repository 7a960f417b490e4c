//! Small parameterised blocks: MLP, DTAF pooling and gating, decoder, edge
//! scorer.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::params::init_uniform;
use crate::numerics::{Bound, Matrix, ParamId, ParamStore, Tape, Var};

/// `Linear → ReLU → Linear`, applied row-wise.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Mlp {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        group: usize,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w1: store.add(group, &format!("{prefix}.w1"), init_uniform(input, hidden, input, rng)),
            b1: store.add(group, &format!("{prefix}.b1"), Matrix::zeros(1, hidden)),
            w2: store.add(group, &format!("{prefix}.w2"), init_uniform(hidden, output, hidden, rng)),
            b2: store.add(group, &format!("{prefix}.b2"), Matrix::zeros(1, output)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let h = tape.matmul(x, bound.get(self.w1))?;
        let h = tape.add_row(h, bound.get(self.b1))?;
        let h = tape.relu(h)?;
        let o = tape.matmul(h, bound.get(self.w2))?;
        tape.add_row(o, bound.get(self.b2))
    }
}

/// Row-wise MLP over `[left || right]`; used to fuse the two CMP channels.
pub fn fuse_channels(tape: &mut Tape, bound: &Bound, mlp: &Mlp, left: Var, right: Var) -> Result<Var> {
    let (l, r) = (tape.value(left).shape(), tape.value(right).shape());
    if l != r {
        return Err(Error::Shape {
            op: "fuse_channels",
            left: l,
            right: r,
        });
    }
    let cat = tape.concat_cols(left, right)?;
    mlp.forward(tape, bound, cat)
}

/// Cross-attention pooling of token features and the two fusion gates.
#[derive(Clone, Debug)]
pub struct Dtaf {
    pub query_tokens: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub gate_relation: ParamId,
    pub gate_entity: ParamId,
    pub dim: usize,
}

impl Dtaf {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        group: usize,
        slots: usize,
        text_dim: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            query_tokens: store.add(group, "dtaf.query_tokens", init_uniform(slots, dim, dim, rng)),
            key: store.add(group, "dtaf.key", init_uniform(text_dim, dim, text_dim, rng)),
            value: store.add(group, "dtaf.value", init_uniform(text_dim, dim, text_dim, rng)),
            gate_relation: store.add(group, "dtaf.gate_relation", Matrix::scalar(0.0)),
            gate_entity: store.add(group, "dtaf.gate_entity", Matrix::scalar(0.0)),
            dim,
        }
    }

    /// Pools the tokens of every owner into one `dim` row: softmax attention
    /// from each query slot over the owner's tokens, then the mean over slots.
    /// Returns `num_owners×dim`.
    pub fn pool(&self, tape: &mut Tape, bound: &Bound, tokens: Var, owner: Rc<[usize]>, num_owners: usize) -> Result<Var> {
        if tape.value(tokens).rows() == 0 {
            return Err(Error::Invalid("dtaf pooling over an empty token matrix".into()));
        }
        let keys = tape.matmul(tokens, bound.get(self.key))?;
        let values = tape.matmul(tokens, bound.get(self.value))?;
        let q_t = tape.transpose(bound.get(self.query_tokens))?;
        let logits = tape.matmul(keys, q_t)?;
        let logits = tape.scale(logits, 1.0 / (self.dim as f64).sqrt())?;
        let attn = tape.segment_softmax(logits, owner.clone())?;
        let slots = tape.value(attn).cols();
        let mut acc: Option<Var> = None;
        for j in 0..slots {
            let a = tape.column(attn, j)?;
            let weighted = tape.mul_col(values, a)?;
            let pooled = tape.scatter_sum(weighted, owner.clone(), num_owners)?;
            acc = Some(match acc {
                None => pooled,
                Some(prev) => tape.add(prev, pooled)?,
            });
        }
        let sum = acc.expect("at least one query slot");
        if slots == 1 {
            Ok(sum)
        } else {
            tape.scale(sum, 1.0 / slots as f64)
        }
    }

    /// `gate·text + (1 − gate)·structure` with `gate = sigmoid(pre)`.
    pub fn blend(tape: &mut Tape, pre: Var, text: Var, structure: Var) -> Result<Var> {
        let (t, s) = (tape.value(text).shape(), tape.value(structure).shape());
        if t != s {
            return Err(Error::Shape {
                op: "dtaf_fuse",
                left: t,
                right: s,
            });
        }
        let g = tape.sigmoid(pre)?;
        let neg = tape.scale(g, -1.0)?;
        let one_minus = tape.add_const(neg, 1.0)?;
        let a = tape.mul_scalar(text, g)?;
        let b = tape.mul_scalar(structure, one_minus)?;
        tape.add(a, b)
    }

    /// `(R_f, H_f)` from pooled text and fused CMP features.
    pub fn fuse(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x_r: Var,
        x_e: Var,
        r_cmp: Var,
        h_cmp: Var,
    ) -> Result<(Var, Var)> {
        let r = Self::blend(tape, bound.get(self.gate_relation), x_r, r_cmp)?;
        let h = Self::blend(tape, bound.get(self.gate_entity), x_e, h_cmp)?;
        Ok((r, h))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderMode {
    /// `(W_q·q)·(W_k·h_i)/√d`.
    #[default]
    Attention,
    /// Query-free `MLP(h_i)`.
    Mlp,
}

#[derive(Clone, Debug)]
pub enum Decoder {
    Attention { query: ParamId, key: ParamId, dim: usize },
    Mlp(Mlp),
}

impl Decoder {
    pub fn new<R: Rng>(store: &mut ParamStore, group: usize, mode: DecoderMode, dim: usize, rng: &mut R) -> Self {
        match mode {
            DecoderMode::Attention => Decoder::Attention {
                query: store.add(group, "decoder.query", init_uniform(dim, dim, dim, rng)),
                key: store.add(group, "decoder.key", init_uniform(dim, dim, dim, rng)),
                dim,
            },
            DecoderMode::Mlp => Decoder::Mlp(Mlp::new(store, group, "decoder.mlp", dim, dim, 1, rng)),
        }
    }

    /// Logits (`n×1`) for candidate rows `keys` (`n×d`). `queries` holds one
    /// row per query and `owner[i]` names the query of candidate row `i`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, queries: Var, keys: Var, owner: Rc<[usize]>) -> Result<Var> {
        match self {
            Decoder::Attention { query, key, dim } => {
                let q = tape.matmul(queries, bound.get(*query))?;
                let k = tape.matmul(keys, bound.get(*key))?;
                let q = tape.gather_rows(q, owner)?;
                let prod = tape.mul(q, k)?;
                let dot = tape.sum_cols(prod)?;
                tape.scale(dot, 1.0 / (*dim as f64).sqrt())
            }
            Decoder::Mlp(mlp) => mlp.forward(tape, bound, keys),
        }
    }
}

/// Bilinear two-logit edge relevance.
#[derive(Clone, Debug)]
pub struct EdgeScorer {
    pub relevant: ParamId,
    pub irrelevant: ParamId,
    pub text_dim: usize,
}

impl EdgeScorer {
    pub fn new<R: Rng>(store: &mut ParamStore, group: usize, text_dim: usize, rng: &mut R) -> Self {
        Self {
            relevant: store.add(
                group,
                "edge_scorer.relevant",
                init_uniform(3 * text_dim, text_dim, 3 * text_dim, rng),
            ),
            irrelevant: store.add(
                group,
                "edge_scorer.irrelevant",
                init_uniform(3 * text_dim, text_dim, 3 * text_dim, rng),
            ),
            text_dim,
        }
    }

    /// Relevance per row: `context` rows are `[x_h || x_r || x_t]`, `query`
    /// rows are `x_q`. Softmax over the two logits equals the sigmoid of
    /// their difference.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, context: Var, query: Var) -> Result<Var> {
        let (c, q) = (tape.value(context).shape(), tape.value(query).shape());
        if c.1 != 3 * self.text_dim || q.1 != self.text_dim || c.0 != q.0 {
            return Err(Error::Shape {
                op: "score_edge",
                left: c,
                right: q,
            });
        }
        let rel = tape.matmul(context, bound.get(self.relevant))?;
        let rel = tape.mul(rel, query)?;
        let z_rel = tape.sum_cols(rel)?;
        let irr = tape.matmul(context, bound.get(self.irrelevant))?;
        let irr = tape.mul(irr, query)?;
        let z_irr = tape.sum_cols(irr)?;
        let diff = tape.sub(z_rel, z_irr)?;
        tape.sigmoid(diff)
    }
}

/// Relevance of a single edge, outside any tape.
pub fn score_edge(
    store: &ParamStore,
    scorer: &EdgeScorer,
    x_h: &[f64],
    x_r: &[f64],
    x_t: &[f64],
    x_q: &[f64],
) -> Result<f64> {
    let mut ctx = Vec::with_capacity(3 * x_h.len());
    ctx.extend_from_slice(x_h);
    ctx.extend_from_slice(x_r);
    ctx.extend_from_slice(x_t);
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape)?;
    let c = tape.constant(Matrix::row_vector(&ctx))?;
    let q = tape.constant(Matrix::row_vector(x_q))?;
    let s = scorer.forward(&mut tape, &bound, c, q)?;
    Ok(tape.value(s).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    #[test]
    fn fusion_shapes_and_degenerate_weights() {
        let mut s = ParamStore::new();
        let g = s.add_group("fusion");
        let mlp = Mlp::new(&mut s, g, "f", 4, 2, 2, &mut rng());
        for id in [mlp.w1, mlp.w2, mlp.b1] {
            let m = s.get_mut(id);
            *m = Matrix::zeros(m.rows(), m.cols());
        }
        *s.get_mut(mlp.b2) = Matrix::row_vector(&[0.25, -1.5]);
        let mut tape = Tape::new();
        let b = s.bind(&mut tape).unwrap();
        let l = tape.constant(init_uniform(3, 2, 1, &mut rng())).unwrap();
        let r = tape.constant(init_uniform(3, 2, 1, &mut rng())).unwrap();
        let out = fuse_channels(&mut tape, &b, &mlp, l, r).unwrap();
        assert_eq!(tape.value(out).shape(), (3, 2));
        for i in 0..3 {
            assert_eq!(tape.value(out).row(i), &[0.25, -1.5]);
        }
        let bad = tape.constant(Matrix::zeros(2, 2)).unwrap();
        assert!(fuse_channels(&mut tape, &b, &mlp, l, bad).is_err());
    }

    fn pool(dtaf: &Dtaf, s: &ParamStore, tokens: Matrix, owner: Vec<usize>, n: usize) -> Matrix {
        let mut tape = Tape::new();
        let b = s.bind(&mut tape).unwrap();
        let t = tape.constant(tokens).unwrap();
        let out = dtaf.pool(&mut tape, &b, t, owner.into(), n).unwrap();
        tape.value(out).clone()
    }

    #[test]
    fn pooling_single_token_is_projected_value() {
        let mut s = ParamStore::new();
        let g = s.add_group("dtaf");
        let d = Dtaf::new(&mut s, g, 1, 3, 2, &mut rng());
        let tok = Matrix::row_vector(&[0.5, -1.0, 2.0]);
        let expected = tok.matmul(s.get(d.value)).unwrap();
        let out = pool(&d, &s, tok.clone(), vec![0], 1);
        assert!(out.max_abs_diff(&expected) < 1e-15);
        // Two identical tokens pool to the same vector.
        let twice = Matrix::vstack(&[&tok, &tok]).unwrap();
        let out2 = pool(&d, &s, twice, vec![0, 0], 1);
        assert!(out2.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn pooling_slots_with_equal_queries_agree() {
        let mut s = ParamStore::new();
        let g = s.add_group("dtaf");
        let d = Dtaf::new(&mut s, g, 2, 3, 2, &mut rng());
        let row = s.get(d.query_tokens).row(0).to_vec();
        *s.get_mut(d.query_tokens) = Matrix::from_rows(&[row.clone(), row]).unwrap();
        let tokens = init_uniform(4, 3, 1, &mut rng());
        let two = pool(&d, &s, tokens.clone(), vec![0, 0, 0, 0], 1);

        let mut s1 = ParamStore::new();
        let g1 = s1.add_group("dtaf");
        let d1 = Dtaf::new(&mut s1, g1, 1, 3, 2, &mut rng());
        *s1.get_mut(d1.query_tokens) = Matrix::row_vector(s.get(d.query_tokens).row(0));
        *s1.get_mut(d1.key) = s.get(d.key).clone();
        *s1.get_mut(d1.value) = s.get(d.value).clone();
        let one = pool(&d1, &s1, tokens, vec![0, 0, 0, 0], 1);
        assert!(two.max_abs_diff(&one) < 1e-12);
    }

    #[test]
    fn pooling_is_invariant_to_sequence_duplication() {
        let mut s = ParamStore::new();
        let g = s.add_group("dtaf");
        let d = Dtaf::new(&mut s, g, 1, 3, 4, &mut rng());
        let tokens = init_uniform(3, 3, 1, &mut rng());
        let once = pool(&d, &s, tokens.clone(), vec![0, 0, 0], 1);
        let doubled = Matrix::vstack(&[&tokens, &tokens]).unwrap();
        let twice = pool(&d, &s, doubled, vec![0; 6], 1);
        assert!(once.max_abs_diff(&twice) < 1e-9);
    }

    fn blend(pre: f64, text: &Matrix, structure: &Matrix) -> Matrix {
        let mut tape = Tape::new();
        let p = tape.constant(Matrix::scalar(pre)).unwrap();
        let t = tape.constant(text.clone()).unwrap();
        let s = tape.constant(structure.clone()).unwrap();
        let out = Dtaf::blend(&mut tape, p, t, s).unwrap();
        tape.value(out).clone()
    }

    #[test]
    fn gate_boundaries() {
        let mut r = rng();
        let text = init_uniform(3, 4, 1, &mut r);
        let structure = init_uniform(3, 4, 1, &mut r);
        assert!(blend(-30.0, &text, &structure).max_abs_diff(&structure) < 1e-9);
        assert!(blend(30.0, &text, &structure).max_abs_diff(&text) < 1e-9);
        assert!(blend(0.0, &structure, &structure).max_abs_diff(&structure) < 1e-15);
    }

    fn decode(dec: &Decoder, s: &ParamStore, q: &Matrix, keys: &Matrix) -> Vec<f64> {
        let mut tape = Tape::new();
        let b = s.bind(&mut tape).unwrap();
        let qv = tape.constant(q.clone()).unwrap();
        let kv = tape.constant(keys.clone()).unwrap();
        let owner: Rc<[usize]> = vec![0; keys.rows()].into();
        let out = dec.forward(&mut tape, &b, qv, kv, owner).unwrap();
        tape.value(out).data().to_vec()
    }

    #[test]
    fn attention_decoder_closed_form() {
        let mut s = ParamStore::new();
        let g = s.add_group("decoder");
        let dec = Decoder::new(&mut s, g, DecoderMode::Attention, 3, &mut rng());
        if let Decoder::Attention { query, key, .. } = &dec {
            *s.get_mut(*query) = Matrix::identity(3);
            *s.get_mut(*key) = Matrix::identity(3);
        }
        let q = Matrix::row_vector(&[1.0, 2.0, 2.0]);
        let keys = Matrix::from_rows(&[vec![1.0, 2.0, 2.0], vec![1.0, 2.0, 2.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let logits = decode(&dec, &s, &q, &keys);
        assert!((logits[0] - 9.0 / 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(logits[0], logits[1]);
    }

    #[test]
    fn mlp_decoder_is_order_free() {
        let mut s = ParamStore::new();
        let g = s.add_group("decoder");
        let dec = Decoder::new(&mut s, g, DecoderMode::Mlp, 3, &mut rng());
        let q = Matrix::row_vector(&[0.0, 0.0, 0.0]);
        let keys = init_uniform(4, 3, 1, &mut rng());
        let a = decode(&dec, &s, &q, &keys);
        let rev = keys.select_rows(&[3, 2, 1, 0]).unwrap();
        let b = decode(&dec, &s, &q, &rev);
        assert_eq!(a, b.into_iter().rev().collect::<Vec<_>>());
    }

    #[test]
    fn edge_score_symmetries() {
        let mut s = ParamStore::new();
        let g = s.add_group("edge_scorer");
        let sc = EdgeScorer::new(&mut s, g, 2, &mut rng());
        let (h, r, t, q) = ([0.3, -0.2], [1.0, 0.5], [0.0, 2.0], [0.7, 0.1]);
        // Zero query.
        assert_eq!(score_edge(&s, &sc, &h, &r, &t, &[0.0, 0.0]).unwrap(), 0.5);
        // Equal logit weights.
        *s.get_mut(sc.irrelevant) = s.get(sc.relevant).clone();
        assert_eq!(score_edge(&s, &sc, &h, &r, &t, &q).unwrap(), 0.5);
        // Zero weights.
        *s.get_mut(sc.relevant) = Matrix::zeros(6, 2);
        *s.get_mut(sc.irrelevant) = Matrix::zeros(6, 2);
        assert_eq!(score_edge(&s, &sc, &h, &r, &t, &q).unwrap(), 0.5);
    }
}
