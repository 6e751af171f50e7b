//! Named trainable parameters and per-forward-pass parameter binding.

use crate::autodiff::{Gradients, Graph, Var};
use crate::error::{contract, ensure, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered, uniquely named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        ensure!(
            !self.names.contains(&name),
            "duplicate parameter name {name:?}"
        );
        self.names.push(name);
        self.tensors.push(value);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        ensure!(
            value.shape() == self.tensors[id.0].shape(),
            "parameter {:?}: expected shape {:?}, got {:?}",
            self.names[id.0],
            self.tensors[id.0].shape(),
            value.shape()
        );
        self.tensors[id.0] = value;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Replaces every parameter from `(name, tensor)` pairs; names and shapes must match exactly.
    pub fn load<'a, I>(&mut self, entries: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, Tensor<T>)>,
    {
        let mut seen = vec![false; self.tensors.len()];
        for (name, t) in entries {
            let i = self
                .names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| contract!("checkpoint has unknown parameter {name:?}"))?;
            ensure!(
                self.tensors[i].shape() == t.shape(),
                "parameter {name:?}: expected shape {:?}, checkpoint has {:?}",
                self.tensors[i].shape(),
                t.shape()
            );
            self.tensors[i] = t;
            seen[i] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(contract!("checkpoint is missing parameter {:?}", self.names[i]));
        }
        Ok(())
    }
}

/// One forward pass: a fresh graph plus lazily bound parameter leaves.
///
/// Each parameter becomes a single leaf no matter how often it is used, so
/// gradients from repeated use (e.g. encoding two resolutions) accumulate.
pub struct Session<'a, T> {
    pub graph: Graph<T>,
    store: &'a ParamStore<T>,
    bound: Vec<Option<Var>>,
    trainable: bool,
}

impl<'a, T: Scalar> Session<'a, T> {
    /// Records gradients for parameters.
    pub fn train(store: &'a ParamStore<T>) -> Self {
        Self::with_mode(store, true)
    }

    /// Parameters are bound as constants; nothing is differentiated.
    pub fn inference(store: &'a ParamStore<T>) -> Self {
        Self::with_mode(store, false)
    }

    fn with_mode(store: &'a ParamStore<T>, trainable: bool) -> Self {
        Self {
            graph: Graph::new(),
            store,
            bound: vec![None; store.len()],
            trainable,
        }
    }

    /// Continues recording on an existing graph with parameter `i` already
    /// bound to `param_vars[i]`.
    pub fn over(store: &'a ParamStore<T>, graph: Graph<T>, param_vars: &[Var]) -> Result<Self> {
        ensure!(
            param_vars.len() == store.len(),
            "{} bound variables for {} parameters",
            param_vars.len(),
            store.len()
        );
        Ok(Self {
            graph,
            store,
            bound: param_vars.iter().copied().map(Some).collect(),
            trainable: true,
        })
    }

    pub fn into_graph(self) -> Graph<T> {
        self.graph
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.graph.leaf(self.store.get(id).clone(), self.trainable);
        self.bound[id.0] = Some(v);
        v
    }

    /// Gradient for each parameter in store order; `None` for parameters the
    /// loss does not depend on.
    pub fn param_grads(&self, grads: &mut Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.bound
            .iter()
            .map(|b| b.and_then(|v| grads.take(v)))
            .collect()
    }

    /// Runs backward from `loss` and returns per-parameter gradients.
    pub fn backward(&self, loss: Var) -> Result<Vec<Option<Tensor<T>>>> {
        let mut grads = self.graph.backward(loss)?;
        Ok(self.param_grads(&mut grads))
    }
}
