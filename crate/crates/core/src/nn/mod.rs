//! Parameter storage, the forward-pass context, and the real-valued layers.

mod layers;

pub use layers::{BatchNorm, Conv2d, Linear};

use std::collections::HashMap;

use crate::autodiff::{Graph, ParamId, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// What a parameter is used for; drives weight-decay eligibility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    ConvWeight,
    QuatWeight,
    LinearWeight,
    LinearBias,
    BnGamma,
    BnBeta,
    RelEmbedding,
}

impl ParamKind {
    pub fn decays(self, include_bn: bool) -> bool {
        match self {
            ParamKind::ConvWeight | ParamKind::QuatWeight | ParamKind::LinearWeight => true,
            ParamKind::BnGamma | ParamKind::BnBeta => include_bn,
            ParamKind::LinearBias | ParamKind::RelEmbedding => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
    pub requires_grad: bool,
    /// Last gradient written by [`ParamStore::set_grads`].
    pub grad: Option<Tensor<T>>,
}

/// Non-trainable state such as batch-norm running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Buffer<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Registry of every trainable tensor (each appears exactly once) and every
/// running-statistics buffer of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    buffers: Vec<Buffer<T>>,
    names: HashMap<String, usize>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            buffers: Vec::new(),
            names: HashMap::new(),
        }
    }

    fn claim(&mut self, name: &str, index: usize) -> Result<()> {
        if self.names.insert(name.to_string(), index).is_some() {
            return Err(Error::config(format!("duplicate tensor name {name:?}")));
        }
        Ok(())
    }

    pub fn add_param(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        self.claim(&name, self.params.len())?;
        self.params.push(Param {
            name,
            kind,
            value,
            requires_grad: true,
            grad: None,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<BufferId> {
        let name = name.into();
        // Buffers share the name space with parameters; offset keeps indices apart.
        self.claim(&name, usize::MAX - self.buffers.len())?;
        self.buffers.push(Buffer { name, value });
        Ok(BufferId(self.buffers.len() - 1))
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn buffer(&self, id: BufferId) -> &Buffer<T> {
        &self.buffers[id.0]
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Buffer<T> {
        &mut self.buffers[id.0]
    }

    pub fn buffers(&self) -> &[Buffer<T>] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Buffer<T>] {
        &mut self.buffers
    }

    pub fn param_by_name(&self, name: &str) -> Option<ParamId> {
        match self.names.get(name) {
            Some(&i) if i < self.params.len() => Some(ParamId(i)),
            _ => None,
        }
    }

    /// Total trainable scalar count; each shared quaternion component counts once.
    pub fn count_params(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn set_grads(&mut self, grads: Vec<(ParamId, Tensor<T>)>) {
        for p in &mut self.params {
            p.grad = None;
        }
        for (id, g) in grads {
            self.params[id.0].grad = Some(g);
        }
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    kind: p.kind,
                    value: p.value.cast(),
                    requires_grad: p.requires_grad,
                    grad: p.grad.as_ref().map(Tensor::cast),
                })
                .collect(),
            buffers: self
                .buffers
                .iter()
                .map(|b| Buffer {
                    name: b.name.clone(),
                    value: b.value.cast(),
                })
                .collect(),
            names: self.names.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running statistics updated.
    Train,
    /// Running statistics.
    Eval,
}

/// One forward pass: a fresh tape bound to a parameter store.
pub struct Ctx<'s, T: Element> {
    pub graph: Graph<T>,
    store: &'s mut ParamStore<T>,
    mode: Mode,
    bound: HashMap<ParamId, Var>,
}

impl<'s, T: Element> Ctx<'s, T> {
    pub fn new(store: &'s mut ParamStore<T>, mode: Mode) -> Self {
        Ctx {
            graph: Graph::new(),
            store,
            mode,
            bound: HashMap::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        self.store
    }

    /// The tape leaf for a parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let p = self.store.param(id);
        let v = if p.requires_grad {
            self.graph.param(id, p.value.clone())
        } else {
            self.graph.constant(p.value.clone())
        };
        self.bound.insert(id, v);
        v
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.graph.constant(value)
    }

    /// Backward from `loss`; returns per-parameter gradients.
    pub fn backward(&mut self, loss: Var) -> Result<Vec<(ParamId, Tensor<T>)>> {
        Ok(self.graph.backward(loss)?.into_params())
    }
}
