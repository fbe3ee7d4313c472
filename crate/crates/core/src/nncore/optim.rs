use crate::{Error, Result};

pub const DEFAULT_LR: f64 = 0.01;
pub const DEFAULT_MOMENTUM: f64 = 0.98;

/// A learnable tensor with its gradient and momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub momentum_buffer: Vec<f64>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        let name = name.into();
        if numel != value.len() {
            return Err(Error::Shape(format!(
                "parameter {name}: shape {shape:?} holds {numel} values, got {}",
                value.len()
            )));
        }
        Ok(Parameter {
            name,
            shape,
            grad: vec![0.0; numel],
            momentum_buffer: vec![0.0; numel],
            value,
        })
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered collection of named parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: Vec<Parameter>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        value: Vec<f64>,
    ) -> Result<ParamId> {
        let p = Parameter::new(name, shape, value)?;
        if self.params.iter().any(|q| q.name == p.name) {
            return Err(Error::Argument(format!(
                "duplicate parameter name {}",
                p.name
            )));
        }
        self.params.push(p);
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    /// Adds `g` into the gradient of `id`.
    pub fn accumulate(&mut self, id: ParamId, g: &[f64]) {
        for (a, b) in self.params[id.0].grad.iter_mut().zip(g) {
            *a += b;
        }
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

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(Parameter::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// All parameter values concatenated in store order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.value.iter().copied())
            .collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter().copied())
            .collect()
    }

    pub fn set_flat_values(&mut self, values: &[f64]) {
        let mut off = 0;
        for p in &mut self.params {
            let n = p.numel();
            p.value.copy_from_slice(&values[off..off + n]);
            off += n;
        }
    }
}

/// Heavy-ball SGD: `v <- momentum * v + grad`, `value <- value - lr * v`.
///
/// Gradients are zeroed afterwards. Nothing is updated when any gradient is
/// non-finite.
pub fn momentum_step(params: &mut ParameterStore, lr: f64, momentum: f64) -> Result<()> {
    if let Some(p) = params
        .iter()
        .find(|p| p.grad.iter().any(|g| !g.is_finite()))
    {
        return Err(Error::Training(format!(
            "non-finite gradient in parameter {}",
            p.name
        )));
    }
    for p in params.iter_mut() {
        for ((v, m), g) in p
            .value
            .iter_mut()
            .zip(p.momentum_buffer.iter_mut())
            .zip(p.grad.iter_mut())
        {
            *m = momentum * *m + *g;
            *v -= lr * *m;
            *g = 0.0;
        }
    }
    Ok(())
}
