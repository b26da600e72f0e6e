use std::collections::BTreeMap;

use super::{NumericsError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Named, ordered collection of model parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.id(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param {
            name,
            tensor,
            trainable: true,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn by_name(&self, name: &str) -> Result<&Param, NumericsError> {
        self.id(name)
            .map(|id| self.get(id))
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Add `grads` into each parameter's gradient slot.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, slot) in grads.iter() {
            let param = &mut self.params[id.0];
            if !param.trainable {
                continue;
            }
            let cols = param.tensor.shape().last().copied().unwrap_or(1);
            let target = param.tensor.grad_mut();
            match slot {
                GradSlot::Dense(g) => {
                    for (t, v) in target.iter_mut().zip(g) {
                        *t += v;
                    }
                }
                GradSlot::Rows(rows) => {
                    for (&r, g) in rows {
                        for (t, v) in target[r * cols..(r + 1) * cols].iter_mut().zip(g) {
                            *t += v;
                        }
                    }
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }
}

/// Gradient for one parameter: dense, or a sparse set of rows (embedding lookups).
#[derive(Clone, Debug, PartialEq)]
pub enum GradSlot {
    Dense(Vec<f64>),
    Rows(BTreeMap<usize, Vec<f64>>),
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    slots: Vec<Option<GradSlot>>,
}

impl Gradients {
    pub fn new(num_params: usize) -> Self {
        Self {
            slots: vec![None; num_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&GradSlot> {
        self.slots.get(id.0).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &GradSlot)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|s| (ParamId(i), s)))
    }

    pub fn add_dense(&mut self, id: ParamId, g: &[f64]) {
        match &mut self.slots[id.0] {
            slot @ None => *slot = Some(GradSlot::Dense(g.to_vec())),
            Some(GradSlot::Dense(d)) => d.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            Some(GradSlot::Rows(_)) => panic!("parameter {} mixes dense and row gradients", id.0),
        }
    }

    pub fn add_row(&mut self, id: ParamId, row: usize, g: &[f64]) {
        let slot = self.slots[id.0].get_or_insert_with(|| GradSlot::Rows(BTreeMap::new()));
        match slot {
            GradSlot::Rows(rows) => match rows.get_mut(&row) {
                Some(r) => r.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => {
                    rows.insert(row, g.to_vec());
                }
            },
            GradSlot::Dense(_) => panic!("parameter {} mixes dense and row gradients", id.0),
        }
    }

    /// Elementwise sum; `other` is folded in after `self`.
    pub fn merge(&mut self, other: &Gradients) {
        if self.slots.len() < other.slots.len() {
            self.slots.resize(other.slots.len(), None);
        }
        for (id, slot) in other.iter() {
            match slot {
                GradSlot::Dense(g) => self.add_dense(id, g),
                GradSlot::Rows(rows) => {
                    for (&r, g) in rows {
                        self.add_row(id, r, g);
                    }
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for slot in self.slots.iter_mut().flatten() {
            match slot {
                GradSlot::Dense(g) => g.iter_mut().for_each(|v| *v *= s),
                GradSlot::Rows(rows) => rows.values_mut().flatten().for_each(|v| *v *= s),
            }
        }
    }

    /// Materialize the gradient of one parameter as a dense vector of `len` values.
    pub fn dense(&self, id: ParamId, len: usize, cols: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        match self.get(id) {
            None => {}
            Some(GradSlot::Dense(g)) => out.copy_from_slice(g),
            Some(GradSlot::Rows(rows)) => {
                for (&r, g) in rows {
                    out[r * cols..(r + 1) * cols].copy_from_slice(g);
                }
            }
        }
        out
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.slots.iter().flatten().flat_map(|slot| -> Box<dyn Iterator<Item = f64> + '_> {
            match slot {
                GradSlot::Dense(g) => Box::new(g.iter().copied()),
                GradSlot::Rows(rows) => Box::new(rows.values().flatten().copied()),
            }
        })
    }

    pub fn global_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }
}
