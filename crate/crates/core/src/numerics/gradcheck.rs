//! Central finite-difference gradient checking (five-point stencil).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::matrix::Matrix;
use super::params::{Bound, ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    /// ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, floor)
    pub rel_error: f64,
    pub max_abs_error: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error() <= tol
    }
}

const NORM_FLOOR: f64 = 1e-8;

/// Compares tape gradients of `loss` against central differences with step
/// `eps` for every entry of every parameter whose name passes `filter`.
pub fn check_gradients<F>(
    store: &ParamStore,
    eps: f64,
    filter: impl Fn(&str) -> bool,
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape, &Bound) -> Result<Var>,
{
    check_gradients_sampled(store, eps, filter, usize::MAX, 0, loss)
}

/// Like [`check_gradients`], but compares at most `max_entries` entries per
/// parameter, chosen with `seed`. Errors are measured over the chosen entries.
pub fn check_gradients_sampled<F>(
    store: &ParamStore,
    eps: f64,
    filter: impl Fn(&str) -> bool,
    max_entries: usize,
    seed: u64,
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape, &Bound) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape)?;
    let l = loss(store, &mut tape, &bound)?;
    let grads = tape.backward(l)?;

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let b = s.bind(&mut t)?;
        let v = loss(s, &mut t, &b)?;
        Ok(t.value(v).item())
    };

    let mut work = store.clone();
    let mut params = Vec::new();
    for (i, p) in store.params().iter().enumerate() {
        if !filter(&p.name) {
            continue;
        }
        let id = ParamId(i);
        let full = grads
            .get(bound.get(id))
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(p.value.rows(), p.value.cols()));
        let n = p.value.len();
        let mut picked: Vec<usize> = if max_entries >= n {
            (0..n).collect()
        } else {
            sample(&mut rng, n, max_entries).into_vec()
        };
        picked.sort_unstable();
        let analytic = Matrix::from_vec(1, picked.len(), picked.iter().map(|&j| full.data()[j]).collect())?;
        let mut numeric = Matrix::zeros(1, picked.len());
        for (k, &j) in picked.iter().enumerate() {
            let orig = p.value.data()[j];
            let mut at = |x: f64| -> Result<f64> {
                work.get_mut(id).data_mut()[j] = x;
                eval(&work)
            };
            // Fourth-order central stencil.
            let d1 = at(orig + eps)? - at(orig - eps)?;
            let d2 = at(orig + 2.0 * eps)? - at(orig - 2.0 * eps)?;
            work.get_mut(id).data_mut()[j] = orig;
            numeric.data_mut()[k] = (8.0 * d1 - d2) / (12.0 * eps);
        }
        let diff = analytic.zip_map(&numeric, "gradcheck", |a, b| a - b)?;
        let denom = analytic
            .frobenius_norm()
            .max(numeric.frobenius_norm())
            .max(NORM_FLOOR);
        params.push(ParamCheck {
            name: p.name.clone(),
            entries: picked.len(),
            rel_error: diff.frobenius_norm() / denom,
            max_abs_error: diff.data().iter().fold(0.0, |m, v| f64::max(m, v.abs())),
            grad_norm: analytic.frobenius_norm(),
        });
    }
    Ok(GradCheckReport { params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::params::init_uniform;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::rc::Rc;

    /// Exercises every tape op in one composite loss.
    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut s = ParamStore::new();
        let g = s.add_group("g");
        let w = s.add(g, "w", init_uniform(3, 4, 1, &mut rng));
        let x = s.add(g, "x", init_uniform(5, 3, 1, &mut rng));
        let gamma = s.add(g, "gamma", init_uniform(1, 4, 1, &mut rng));
        let beta = s.add(g, "beta", init_uniform(1, 4, 1, &mut rng));
        let sc = s.add(g, "s", init_uniform(1, 1, 1, &mut rng));
        let col = s.add(g, "col", init_uniform(5, 1, 1, &mut rng));

        let report = check_gradients(&s, 1e-5, |_| true, |_, t, b| {
            let h = t.matmul(b.get(x), b.get(w))?;
            let h = t.add_row(h, b.get(beta))?;
            let ln = t.layer_norm(h, b.get(gamma), b.get(beta), 1e-5)?;
            let sm = t.softmax_rows(ln)?;
            let seg: Rc<[usize]> = Rc::from(vec![0, 0, 1, 2, 1]);
            let ss = t.segment_softmax(h, seg.clone())?;
            let m = t.mul(sm, ss)?;
            let m = t.mul_col(m, b.get(col))?;
            let agg = t.scatter_sum(m, seg, 3)?;
            let back = t.gather_rows(agg, Rc::from(vec![2, 0, 1, 1]))?;
            let sig = t.sigmoid(back)?;
            let cat = t.concat_cols(sig, back)?;
            let tr = t.transpose(cat)?;
            let back2 = t.transpose(tr)?;
            let c0 = t.column(back2, 1)?;
            let lg = t.log_clamped(c0, 1e-12)?;
            let ms = t.mul_scalar(lg, b.get(sc))?;
            let sq = t.mul(ms, ms)?;
            let sc2 = t.scale(sq, 0.5)?;
            let shifted = t.add_const(sc2, 1.0)?;
            let rs = t.sum_cols(cat)?;
            let d = t.sub(rs, rs)?;
            let total = t.mean(shifted)?;
            let extra = t.sum(d)?;
            let total = t.add(total, extra)?;
            let r = t.relu(total)?;
            Ok(r)
        })
        .unwrap();
        assert!(report.passed(1e-4), "{report:#?}");
        assert!(report.params.iter().all(|p| p.max_abs_error < 1e-9));
    }
}
