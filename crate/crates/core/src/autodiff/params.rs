use std::fmt;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Stable name of a parameter group, e.g. `shared` or `enc0`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupId(String);

impl GroupId {
    pub fn new(id: impl Into<String>) -> Self {
        GroupId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for GroupId {
    fn from(s: &str) -> Self {
        GroupId::new(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// A set of named parameter tensors updated together.
///
/// The flattening layout is the insertion order of the tensors, each tensor
/// contributing its row-major data. The layout never changes after
/// construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    id: GroupId,
    tensors: Vec<NamedTensor>,
}

impl ParamGroup {
    pub fn new(id: impl Into<GroupId>, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (name, _) in &tensors {
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate tensor name {name:?}")));
            }
        }
        Ok(ParamGroup {
            id: id.into(),
            tensors: tensors
                .into_iter()
                .map(|(name, tensor)| NamedTensor { name, tensor })
                .collect(),
        })
    }

    pub fn id(&self) -> &GroupId {
        &self.id
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.tensor)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.tensor.len()).sum()
    }

    /// Parameter values concatenated in layout order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for t in &self.tensors {
            out.extend_from_slice(t.tensor.data());
        }
        out
    }

    /// Overwrites every parameter from a flat vector in layout order.
    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::shape(format!(
                "group {} has {} parameters, got {}",
                self.id,
                self.param_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter update of group {}", self.id)));
        }
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.tensor.len();
            t.tensor.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Concatenates per-tensor gradients (one per tensor, same shapes) into a
    /// flat vector aligned with this group's layout.
    pub fn flatten_grads(&self, grads: &[Tensor]) -> Result<GradientVector> {
        if grads.len() != self.tensors.len() {
            return Err(Error::shape(format!(
                "group {} has {} tensors, got {} gradients",
                self.id,
                self.tensors.len(),
                grads.len()
            )));
        }
        let mut values = Vec::with_capacity(self.param_count());
        for (t, g) in self.tensors.iter().zip(grads) {
            if t.tensor.shape() != g.shape() {
                return Err(Error::shape(format!(
                    "gradient for {}.{} has shape {:?}, expected {:?}",
                    self.id,
                    t.name,
                    g.shape(),
                    t.tensor.shape()
                )));
            }
            values.extend_from_slice(g.data());
        }
        GradientVector::new(self.id.clone(), values)
    }

    /// Splits a flat gradient back into per-tensor gradients.
    pub fn unflatten(&self, grad: &GradientVector) -> Result<Vec<Tensor>> {
        if grad.group_id() != &self.id {
            return Err(Error::invalid(format!(
                "gradient belongs to group {}, not {}",
                grad.group_id(),
                self.id
            )));
        }
        if grad.len() != self.param_count() {
            return Err(Error::shape(format!(
                "group {} has {} parameters, gradient has {}",
                self.id,
                self.param_count(),
                grad.len()
            )));
        }
        let mut offset = 0;
        Ok(self
            .tensors
            .iter()
            .map(|t| {
                let n = t.tensor.len();
                let part = grad.values()[offset..offset + n].to_vec();
                offset += n;
                Tensor::from_parts(t.tensor.shape().to_vec(), part)
            })
            .collect())
    }

    pub fn zero_grad(&self) -> GradientVector {
        GradientVector {
            group_id: self.id.clone(),
            values: vec![0.0; self.param_count()],
        }
    }
}

/// A flat gradient over one parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientVector {
    group_id: GroupId,
    values: Vec<f64>,
}

impl GradientVector {
    pub fn new(group_id: GroupId, values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient for group {group_id}")));
        }
        Ok(GradientVector { group_id, values })
    }

    pub fn zeros(group_id: GroupId, len: usize) -> Self {
        GradientVector {
            group_id,
            values: vec![0.0; len],
        }
    }

    pub fn group_id(&self) -> &GroupId {
        &self.group_id
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dot(&self, other: &GradientVector) -> f64 {
        dot(&self.values, &other.values)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &GradientVector) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scaled(&self, alpha: f64) -> GradientVector {
        GradientVector {
            group_id: self.group_id.clone(),
            values: self.values.iter().map(|v| alpha * v).collect(),
        }
    }

    /// Errors unless both vectors share a group and a length.
    pub fn check_compatible(&self, other: &GradientVector) -> Result<()> {
        if self.group_id != other.group_id {
            return Err(Error::invalid(format!(
                "gradients from different groups: {} vs {}",
                self.group_id, other.group_id
            )));
        }
        if self.values.len() != other.values.len() {
            return Err(Error::shape(format!(
                "gradient lengths differ: {} vs {}",
                self.values.len(),
                other.values.len()
            )));
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
