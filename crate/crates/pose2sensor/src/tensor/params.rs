//! Named parameter registry shared by the models, the optimizer, and the
//! checkpoint writer.
//!
//! Parameters live here between steps. For each training step they are moved
//! into a fresh graph as trainable leaves via [`ParamSet::bind`], and moved
//! back (paired with their gradients) by [`StepBinding::finish`] — no per-step
//! copies of weight tensors. Non-trainable buffers (batch-norm running
//! statistics) never enter the graph; layers read and update them in place.

use std::collections::HashMap;

use super::graph::{Grads, Graph, Value};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Stable index of a parameter within its [`ParamSet`]. Also the optimizer
/// slot index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    name: String,
    tensor: Tensor<T>,
    trainable: bool,
}

impl<T: Scalar> Param<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }
}

/// Ordered, uniquely named collection of parameters and buffers.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<T> {
    entries: Vec<Param<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, tensor: Tensor<T>, trainable: bool) -> Result<ParamId> {
        if tensor.numel() == 0 {
            return Err(Error::Config(format!("parameter {name} must not be empty")));
        }
        if self.by_name.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.to_string(), id.0);
        self.entries.push(Param {
            name: name.to_string(),
            tensor,
            trainable,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.entries[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    /// Mutable access to two distinct entries at once (batch-norm running
    /// mean and variance are updated together during the forward pass).
    pub fn pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut Tensor<T>, &mut Tensor<T>) {
        assert_ne!(a.0, b.0, "pair_mut requires two distinct parameters");
        let (lo, hi, swap) = if a.0 < b.0 {
            (a.0, b.0, false)
        } else {
            (b.0, a.0, true)
        };
        let (left, right) = self.entries.split_at_mut(hi);
        let (x, y) = (&mut left[lo].tensor, &mut right[0].tensor);
        if swap {
            (y, x)
        } else {
            (x, y)
        }
    }

    /// Copy of every tensor (parameters and buffers), for early-stopping
    /// snapshots.
    pub fn snapshot(&self) -> Vec<Tensor<T>> {
        self.entries.iter().map(|p| p.tensor.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor<T>]) {
        assert_eq!(snapshot.len(), self.entries.len(), "snapshot size mismatch");
        for (entry, saved) in self.entries.iter_mut().zip(snapshot) {
            entry.tensor = saved.clone();
        }
    }

    /// Move every trainable tensor into `graph` as a leaf. `with_grad`
    /// decides whether those leaves are gradient targets (training) or plain
    /// inputs (evaluation). Exactly one binding may be outstanding.
    pub fn bind(&mut self, graph: &mut Graph<T>, with_grad: bool) -> StepBinding {
        let mut slots = vec![None; self.entries.len()];
        for (i, entry) in self.entries.iter_mut().enumerate() {
            if entry.trainable {
                debug_assert!(entry.tensor.numel() > 0, "parameter {} already bound", entry.name);
                let t = std::mem::replace(&mut entry.tensor, Tensor::zeros(vec![0]));
                slots[i] = Some(graph.leaf(t, with_grad));
            }
        }
        StepBinding { slots }
    }
}

/// Gradients per parameter slot; `None` means the loss never reached the
/// parameter, which the optimizer treats as "no update".
pub type GradVec<T> = Vec<Option<Tensor<T>>>;

/// Live connection between a [`ParamSet`] and one graph.
pub struct StepBinding {
    slots: Vec<Option<Value>>,
}

impl StepBinding {
    /// Graph handle of a bound (trainable) parameter.
    pub fn value(&self, id: ParamId) -> Value {
        self.slots[id.index()].expect("parameter is trainable and bound")
    }

    /// Return all tensors to the registry and collect per-slot gradients.
    /// Pass `None` for forward-only passes.
    pub fn finish<T: Scalar>(
        self,
        graph: &mut Graph<T>,
        mut grads: Option<Grads<T>>,
        params: &mut ParamSet<T>,
    ) -> GradVec<T> {
        let mut out: GradVec<T> = (0..self.slots.len()).map(|_| None).collect();
        for (i, slot) in self.slots.iter().enumerate() {
            if let Some(v) = slot {
                params.entries[i].tensor = graph.take_leaf(*v);
                if let Some(g) = grads.as_mut() {
                    out[i] = g.take(*v);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut set = ParamSet::<f32>::new();
        set.register("w", Tensor::zeros(vec![2]), true).unwrap();
        assert!(set.register("w", Tensor::zeros(vec![2]), true).is_err());
    }

    #[test]
    fn bind_step_finish_roundtrip_preserves_and_grades() {
        let mut set = ParamSet::<f64>::new();
        let w = set
            .register("w", Tensor::from_f64_slice(vec![1], &[3.0]).unwrap(), true)
            .unwrap();
        let buf = set
            .register("stats", Tensor::from_f64_slice(vec![1], &[9.0]).unwrap(), false)
            .unwrap();

        let mut graph = Graph::new();
        let binding = set.bind(&mut graph, true);
        let wv = binding.value(w);
        let zero = graph.leaf(Tensor::zeros(vec![1]), false);
        let loss = graph.mse(wv, zero).unwrap();
        let grads = graph.backward(loss).unwrap();
        let gv = binding.finish(&mut graph, Some(grads), &mut set);

        // Tensor returned, gradient = 2·w = 6, buffer untouched.
        assert_eq!(set.get(w).tensor().data(), [3.0]);
        assert_eq!(gv[w.index()].as_ref().unwrap().data(), [6.0]);
        assert!(gv[buf.index()].is_none());
        assert_eq!(set.get(buf).tensor().data(), [9.0]);
    }

    #[test]
    fn pair_mut_borrows_two_entries_in_either_order() {
        let mut set = ParamSet::<f32>::new();
        let a = set.register("a", Tensor::full(vec![1], 1.0), false).unwrap();
        let b = set.register("b", Tensor::full(vec![1], 2.0), false).unwrap();
        {
            let (ta, tb) = set.pair_mut(a, b);
            assert_eq!((ta.data()[0], tb.data()[0]), (1.0, 2.0));
        }
        let (tb, ta) = set.pair_mut(b, a);
        assert_eq!((tb.data()[0], ta.data()[0]), (2.0, 1.0));
    }

    #[test]
    fn snapshot_restore_roundtrip() {
        let mut set = ParamSet::<f32>::new();
        let w = set.register("w", Tensor::full(vec![2], 1.5), true).unwrap();
        let snap = set.snapshot();
        set.tensor_mut(w).fill(-4.0);
        set.restore(&snap);
        assert_eq!(set.get(w).tensor().data(), [1.5, 1.5]);
    }
}
