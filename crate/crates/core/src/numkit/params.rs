use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap, HashSet};

use rand::Rng;

use super::graph::{Gradients, Graph, Var};
use super::tensor::Tensor;
use super::NumError;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.tensors.len());
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value);
        id
    }

    /// Uniform(-1/√fan_in, 1/√fan_in) initialised tensor.
    pub fn add_uniform(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let numel = shape.iter().product();
        let data = (0..numel).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, Tensor::new(shape, data).expect("param shape"))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Ids whose names start with `prefix`.
    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.ids().filter(move |id| self.names[id.0].starts_with(prefix))
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn numel_with_prefix(&self, prefix: &str) -> usize {
        self.ids_with_prefix(prefix).map(|id| self.tensors[id.0].numel()).sum()
    }

    /// Replace values from `(name, tensor)` pairs; every name must exist with
    /// a matching shape.
    pub fn load_named(&mut self, entries: Vec<(String, Tensor)>) -> Result<(), NumError> {
        for (name, t) in entries {
            let id = self
                .id(&name)
                .ok_or_else(|| NumError::Format(format!("unknown parameter {name}")))?;
            if self.tensors[id.0].shape() != t.shape() {
                return Err(NumError::Format(format!(
                    "parameter {name}: shape {:?} in file, {:?} expected",
                    t.shape(),
                    self.tensors[id.0].shape()
                )));
            }
            self.tensors[id.0] = t;
        }
        Ok(())
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }
}

/// Gradients keyed by parameter.
#[derive(Debug, Default)]
pub struct ParamGrads {
    grads: BTreeMap<ParamId, Tensor>,
}

impl ParamGrads {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn insert(&mut self, id: ParamId, g: Tensor) {
        self.grads.insert(id, g);
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().map(|(&id, t)| (id, t))
    }

    /// Add `other` elementwise; parameters missing here are copied.
    pub fn accumulate(&mut self, other: &ParamGrads) -> Result<(), NumError> {
        for (id, g) in other.iter() {
            match self.grads.get_mut(&id) {
                Some(acc) => {
                    if acc.shape() != g.shape() {
                        return Err(NumError::Dimension {
                            op: "accumulate",
                            detail: format!("{:?} vs {:?}", acc.shape(), g.shape()),
                        });
                    }
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => {
                    self.grads.insert(id, g.clone());
                }
            }
        }
        Ok(())
    }

    /// Global L2 norm.
    pub fn norm(&self) -> f64 {
        self.grads.values().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }
}

/// Binds a [`ParamStore`] to a [`Graph`] for one forward pass.
///
/// Parameters outside the trainable set enter the graph as constants, which
/// is how stage freezing is expressed.
pub struct Ctx<'a> {
    pub graph: &'a Graph,
    store: &'a ParamStore,
    trainable: HashSet<ParamId>,
    bound: RefCell<HashMap<ParamId, Var>>,
}

impl<'a> Ctx<'a> {
    pub fn new(graph: &'a Graph, store: &'a ParamStore, trainable: impl IntoIterator<Item = ParamId>) -> Self {
        Self { graph, store, trainable: trainable.into_iter().collect(), bound: RefCell::new(HashMap::new()) }
    }

    /// Inference context: nothing is trainable.
    pub fn frozen(graph: &'a Graph, store: &'a ParamStore) -> Self {
        Self::new(graph, store, std::iter::empty())
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable.contains(&id)
    }

    pub fn p(&self, id: ParamId) -> Var {
        if let Some(v) = self.bound.borrow().get(&id) {
            return *v;
        }
        let v = self.graph.leaf(self.store.get(id).clone(), self.trainable.contains(&id));
        self.bound.borrow_mut().insert(id, v);
        v
    }

    /// Bind every trainable parameter so that unreached ones still receive a
    /// (zero) gradient.
    pub fn bind_trainable(&self) {
        let mut ids: Vec<ParamId> = self.trainable.iter().copied().collect();
        ids.sort();
        for id in ids {
            self.p(id);
        }
    }

    pub fn param_grads(&self, grads: &mut Gradients) -> ParamGrads {
        let mut out = ParamGrads::default();
        for (&id, &v) in self.bound.borrow().iter() {
            if self.trainable.contains(&id) {
                if let Some(g) = grads.take(v) {
                    out.insert(id, g);
                }
            }
        }
        out
    }

    /// Backward from `loss` and collect gradients of trainable parameters.
    pub fn backward(&self, loss: Var) -> Result<ParamGrads, NumError> {
        let mut grads = self.graph.backward(loss)?;
        Ok(self.param_grads(&mut grads))
    }
}
