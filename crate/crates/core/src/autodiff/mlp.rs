use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Activation, Graph, Var};
use super::params::{GroupId, ParamGroup};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

/// Architecture of a dense feed-forward stack.
///
/// Layer `i` owns tensors `w{i}` with shape `[width_i, fan_in_i]` and `b{i}`
/// with shape `[width_i]`, stored in that order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
}

impl MlpSpec {
    pub fn new(input_dim: usize, layers: &[(usize, Activation)]) -> Self {
        MlpSpec {
            input_dim,
            layers: layers
                .iter()
                .map(|&(width, activation)| LayerSpec { width, activation })
                .collect(),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.width)
    }

    pub fn param_count(&self) -> usize {
        let mut fan_in = self.input_dim;
        let mut n = 0;
        for l in &self.layers {
            n += l.width * fan_in + l.width;
            fan_in = l.width;
        }
        n
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("mlp input_dim must be at least 1"));
        }
        if self.layers.is_empty() {
            return Err(Error::invalid("mlp needs at least one layer"));
        }
        if self.layers.iter().any(|l| l.width == 0) {
            return Err(Error::invalid("mlp layer widths must be at least 1"));
        }
        Ok(())
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init<R: Rng + ?Sized>(&self, id: impl Into<GroupId>, rng: &mut R) -> Result<ParamGroup> {
        self.validate()?;
        let mut tensors = Vec::with_capacity(2 * self.layers.len());
        let mut fan_in = self.input_dim;
        for (i, l) in self.layers.iter().enumerate() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = (0..l.width * fan_in).map(|_| rng.random_range(-bound..bound)).collect();
            tensors.push((format!("w{i}"), Tensor::new(vec![l.width, fan_in], w)?));
            tensors.push((format!("b{i}"), Tensor::zeros(&[l.width])));
            fan_in = l.width;
        }
        ParamGroup::new(id, tensors)
    }

    /// Checks that a parameter group has exactly the tensors this spec expects.
    pub fn check_params(&self, params: &ParamGroup) -> Result<()> {
        let ts = params.tensors();
        if ts.len() != 2 * self.layers.len() {
            return Err(Error::shape(format!(
                "group {} has {} tensors, architecture needs {}",
                params.id(),
                ts.len(),
                2 * self.layers.len()
            )));
        }
        let mut fan_in = self.input_dim;
        for (i, l) in self.layers.iter().enumerate() {
            let (w, b) = (&ts[2 * i].tensor, &ts[2 * i + 1].tensor);
            if w.shape() != [l.width, fan_in] || b.shape() != [l.width] {
                return Err(Error::shape(format!(
                    "group {} layer {i}: weight {:?} / bias {:?}, expected [{}, {fan_in}] / [{}]",
                    params.id(),
                    w.shape(),
                    b.shape(),
                    l.width,
                    l.width
                )));
            }
            fan_in = l.width;
        }
        Ok(())
    }

    /// Records the stack on `graph` given the group's registered leaves.
    pub fn record(&self, graph: &mut Graph, params: &[Var], input: Var) -> Result<Var> {
        if params.len() != 2 * self.layers.len() {
            return Err(Error::shape(format!(
                "{} parameter leaves for {} layers",
                params.len(),
                self.layers.len()
            )));
        }
        let (_, cols) = graph.value(input).dims2()?;
        if cols != self.input_dim {
            return Err(Error::shape(format!(
                "input has {cols} features, first layer expects {}",
                self.input_dim
            )));
        }
        let mut x = input;
        for (i, l) in self.layers.iter().enumerate() {
            let z = graph.matmul_t(x, params[2 * i])?;
            let z = graph.add_row(z, params[2 * i + 1])?;
            x = graph.activation(l.activation, z)?;
        }
        Ok(x)
    }
}

/// Evaluates an MLP on an `[n, input_dim]` batch without keeping the tape.
pub fn forward_mlp(params: &ParamGroup, input: &Tensor, spec: &MlpSpec) -> Result<Tensor> {
    spec.validate()?;
    spec.check_params(params)?;
    let mut g = Graph::new();
    let leaves = g.register(params)?;
    let x = g.constant(input.clone())?;
    let y = spec.record(&mut g, &leaves, x)?;
    Ok(g.value(y).clone())
}
