use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::scalar::Scalar;
use crate::tape::{Grads, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

struct Entry<T> {
    name: String,
    group: String,
    value: Rc<Tensor<T>>,
}

/// Named parameters in registration order. Each parameter belongs to one
/// group (a module path such as `motion.encoder`).
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| Entry { name: e.name.clone(), group: e.group.clone(), value: Rc::new((*e.value).clone()) })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, group: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter name {name}");
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push(Entry { name, group: group.into(), value: Rc::new(value) });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn group(&self, id: ParamId) -> &str {
        &self.entries[id.0].group
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub(crate) fn get_rc(&self, id: ParamId) -> Rc<Tensor<T>> {
        self.entries[id.0].value.clone()
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Rc::make_mut(&mut self.entries[id.0].value)
    }

    /// Replaces a value, keeping the registered shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) {
        assert_eq!(self.get(id).shape(), value.shape(), "set {}: shape change", self.name(id));
        self.entries[id.0].value = Rc::new(value);
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// Parameters whose group equals `prefix` or starts with `prefix.`.
    pub fn in_group<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.ids().filter(move |&id| {
            let g = self.group(id);
            g == prefix || (g.starts_with(prefix) && g.as_bytes().get(prefix.len()) == Some(&b'.'))
        })
    }
}

/// Binds a [`ParamStore`] to a [`Tape`] for one forward pass.
///
/// Each parameter becomes at most one leaf; only parameters accepted by the
/// trainable predicate receive gradients.
pub struct Session<'t, T: Scalar> {
    tape: &'t Tape<T>,
    store: &'t ParamStore<T>,
    trainable: Vec<bool>,
    leaves: RefCell<Vec<Option<usize>>>,
}

impl<'t, T: Scalar> Session<'t, T> {
    pub fn new(tape: &'t Tape<T>, store: &'t ParamStore<T>, trainable: impl Fn(ParamId) -> bool) -> Self {
        Self {
            tape,
            store,
            trainable: store.ids().map(trainable).collect(),
            leaves: RefCell::new(vec![None; store.len()]),
        }
    }

    /// Forward-only session: no parameter requires a gradient.
    pub fn frozen(tape: &'t Tape<T>, store: &'t ParamStore<T>) -> Self {
        Self::new(tape, store, |_| false)
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn store(&self) -> &'t ParamStore<T> {
        self.store
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    pub fn param(&self, id: ParamId) -> Var<'t, T> {
        let mut leaves = self.leaves.borrow_mut();
        if let Some(node) = leaves[id.0] {
            return Var::from_id(self.tape, node);
        }
        let v = self.tape.leaf_rc(self.store.get_rc(id), self.trainable[id.0]);
        leaves[id.0] = Some(v.id());
        v
    }

    pub fn input(&self, value: Tensor<T>) -> Var<'t, T> {
        self.tape.constant(value)
    }

    /// Gradients of trainable parameters that took part in the graph.
    pub fn param_grads(&self, grads: &Grads<T>) -> Vec<(ParamId, Tensor<T>)> {
        let leaves = self.leaves.borrow();
        leaves
            .iter()
            .enumerate()
            .filter(|(i, _)| self.trainable[*i])
            .filter_map(|(i, node)| node.and_then(|n| grads.get_id(n)).map(|g| (ParamId(i), g)))
            .collect()
    }
}
