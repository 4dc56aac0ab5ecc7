//! Named parameter registry with an explicit trainable/frozen partition.
//!
//! Every learnable tensor of the pipeline lives in one [`ParamStore`]. Model
//! components hold [`ParamId`] handles; gradients are accumulated into a
//! [`Grads`] buffer that only allocates storage for trainable entries, so a
//! frozen tensor can never receive an update.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Shape and role of one parameter tensor, known before allocation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], trainable: bool) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            trainable,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub trainable: bool,
}

impl Param {
    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Disjoint, total split of parameter names.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParamPartition {
    pub trainable: BTreeSet<String>,
    pub frozen: BTreeSet<String>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        data: Vec<f64>,
        trainable: bool,
    ) -> Result<ParamId> {
        let name = name.into();
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::ShapeMismatch {
                context: "parameter registration",
                expected: format!("{numel} values for {name} {shape:?}"),
                actual: data.len().to_string(),
            });
        }
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name {name}"
            )));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Param {
            name,
            shape: shape.to_vec(),
            data,
            trainable,
        });
        Ok(ParamId(id))
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].data
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].data
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|id| self.param(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param)> {
        self.params
            .iter_mut()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn partition(&self) -> ParamPartition {
        let mut out = ParamPartition::default();
        for p in &self.params {
            if p.trainable {
                out.trainable.insert(p.name.clone());
            } else {
                out.frozen.insert(p.name.clone());
            }
        }
        out
    }

    /// `(trainable, total)` scalar counts.
    pub fn counts(&self) -> (usize, usize) {
        self.params.iter().fold((0, 0), |(t, all), p| {
            let n = p.numel();
            (t + if p.trainable { n } else { 0 }, all + n)
        })
    }

    /// Bit patterns of every frozen tensor, in registration order.
    pub fn frozen_fingerprint(&self) -> Vec<(String, Vec<u64>)> {
        self.params
            .iter()
            .filter(|p| !p.trainable)
            .map(|p| (p.name.clone(), p.data.iter().map(|v| v.to_bits()).collect()))
            .collect()
    }
}

/// `(trainable, total)` counts straight from a layout, without allocating.
pub fn layout_counts(specs: &[ParamSpec]) -> (usize, usize) {
    specs.iter().fold((0, 0), |(t, all), s| {
        let n = s.numel();
        (t + if s.trainable { n } else { 0 }, all + n)
    })
}

/// Gradient buffers aligned with a [`ParamStore`]; frozen slots stay empty.
#[derive(Clone, Debug)]
pub struct Grads {
    slots: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            slots: store
                .params
                .iter()
                .map(|p| {
                    if p.trainable {
                        vec![0.0; p.numel()]
                    } else {
                        Vec::new()
                    }
                })
                .collect(),
        }
    }

    /// Mutable gradient slot, `None` for frozen parameters.
    #[inline]
    pub fn slot(&mut self, id: ParamId) -> Option<&mut [f64]> {
        let s = &mut self.slots[id.0];
        if s.is_empty() {
            None
        } else {
            Some(s.as_mut_slice())
        }
    }

    /// Two distinct slots at once (weight and bias of one layer).
    pub fn pair(&mut self, a: ParamId, b: ParamId) -> (Option<&mut [f64]>, Option<&mut [f64]>) {
        let [x, y] = self
            .slots
            .get_disjoint_mut([a.0, b.0])
            .expect("distinct parameter ids");
        fn wrap(s: &mut Vec<f64>) -> Option<&mut [f64]> {
            if s.is_empty() {
                None
            } else {
                Some(s.as_mut_slice())
            }
        }
        (wrap(x), wrap(y))
    }

    /// Gradient of one parameter; empty for frozen parameters.
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.slots[id.0]
    }

    pub fn has_gradient(&self, id: ParamId) -> bool {
        !self.slots[id.0].is_empty()
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in &mut self.slots {
            for v in s.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().flatten().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_slots_are_empty() {
        let mut store = ParamStore::new();
        let a = store.register("a", &[2], vec![1.0, 2.0], true).unwrap();
        let b = store.register("b", &[3], vec![0.0; 3], false).unwrap();
        let mut g = Grads::zeros_like(&store);
        assert!(g.slot(a).is_some());
        assert!(g.slot(b).is_none());
        assert_eq!(store.counts(), (2, 5));
        let part = store.partition();
        assert!(part.trainable.contains("a") && part.frozen.contains("b"));
    }

    #[test]
    fn duplicate_and_misshaped_registration_rejected() {
        let mut store = ParamStore::new();
        store.register("a", &[2], vec![0.0; 2], true).unwrap();
        assert!(store.register("a", &[2], vec![0.0; 2], true).is_err());
        assert!(store.register("c", &[2, 2], vec![0.0; 3], true).is_err());
    }
}
