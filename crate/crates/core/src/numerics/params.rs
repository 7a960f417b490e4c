//! Named parameter groups, freeze masks and the Adam optimiser.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub group: usize,
    pub value: Matrix,
}

#[derive(Clone, Debug)]
pub struct ParamGroup {
    pub name: String,
    pub frozen: bool,
    pub params: Vec<ParamId>,
}

/// Every trainable matrix of a model, grouped for stage-wise freezing.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    groups: Vec<ParamGroup>,
}

/// Parameter values bound as leaves on one tape, indexed by [`ParamId`].
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    #[inline]
    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_group(&mut self, name: &str) -> usize {
        if let Some(i) = self.groups.iter().position(|g| g.name == name) {
            return i;
        }
        self.groups.push(ParamGroup {
            name: name.to_string(),
            frozen: false,
            params: Vec::new(),
        });
        self.groups.len() - 1
    }

    pub fn add(&mut self, group: usize, name: &str, value: Matrix) -> ParamId {
        let id = ParamId(self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            group,
            value,
        });
        self.groups[group].params.push(id);
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn group(&self, name: &str) -> Option<&ParamGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.groups[self.params[id.0].group].frozen
    }

    pub fn set_frozen(&mut self, group: &str, frozen: bool) -> Result<()> {
        let g = self
            .groups
            .iter_mut()
            .find(|g| g.name == group)
            .ok_or_else(|| Error::Config(format!("unknown parameter group `{group}`")))?;
        g.frozen = frozen;
        Ok(())
    }

    /// Freezes exactly the named groups and unfreezes the rest.
    pub fn freeze_only(&mut self, frozen: &[String]) -> Result<()> {
        for name in frozen {
            if self.group(name).is_none() {
                return Err(Error::Config(format!("unknown parameter group `{name}`")));
            }
        }
        for g in &mut self.groups {
            g.frozen = frozen.iter().any(|f| f == &g.name);
        }
        Ok(())
    }

    /// Places every parameter on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Result<Bound> {
        let vars = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| tape.param(ParamId(i), p.value.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound { vars })
    }

    /// Per-parameter gradients; frozen groups and parameters the loss does
    /// not reach get exact zeros.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Matrix> {
        let mut out: Vec<Matrix> = self
            .params
            .iter()
            .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
            .collect();
        for (id, g) in grads.params() {
            if let Some(g) = g {
                if !self.is_frozen(id) {
                    out[id.0].add_assign(g);
                }
            }
        }
        out
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Uniform(−1/√fan_in, 1/√fan_in) initialisation.
pub fn init_uniform<R: Rng>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Matrix {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("shape computed from rows*cols")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Frozen groups are skipped entirely, so their
/// values and moment estimates stay untouched.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Matrix]) {
        if self.m.is_empty() {
            self.m = store
                .params
                .iter()
                .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            if store.is_frozen(ParamId(i)) {
                continue;
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = store.params[i].value.data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
