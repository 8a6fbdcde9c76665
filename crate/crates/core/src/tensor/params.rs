use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::value::Tensor;
use crate::error::{Error, Result};

/// A trainable tensor together with its most recent gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    #[serde(skip)]
    pub grad: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of parameters. Insertion order is the
/// iteration order everywhere (optimizers, checkpoints, gradient norms).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

/// Tape handles for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad: None,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Register every parameter on `tape`; `trainable = false` binds them as
    /// constants so they receive no gradient.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundParams> {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundParams { vars })
    }

    /// Copy gradients out of a backward pass. Parameters the loss does not
    /// depend on receive an explicit zero gradient.
    pub fn absorb_grads(&mut self, bound: &BoundParams, grads: &Gradients) {
        for (p, &var) in self.params.iter_mut().zip(&bound.vars) {
            p.grad = Some(match grads.get(var) {
                Some(g) => g.to_vec(),
                None => vec![0.0; p.value.numel()],
            });
        }
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub(crate) fn require_grads(&self) -> Result<()> {
        match self.params.iter().find(|p| p.grad.is_none()) {
            Some(p) => Err(Error::MissingGrad(p.name.clone())),
            None => Ok(()),
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Order-sensitive checksum over all parameter values.
    pub fn bit_checksum(&self) -> u64 {
        self.params
            .iter()
            .fold(0u64, |h, p| h.rotate_left(7) ^ p.value.bit_checksum())
    }
}
