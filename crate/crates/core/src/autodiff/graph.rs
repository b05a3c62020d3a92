//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its variables. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and returns
//! one flat [`GradientVector`] per registered [`ParamGroup`]. Groups whose
//! parameters never reached the loss get exact zero vectors.

use std::collections::BTreeMap;

use super::params::{GradientVector, GroupId, ParamGroup};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

#[derive(Debug)]
enum Op {
    Leaf,
    /// `x · wᵀ` with `x: [n, in]`, `w: [out, in]`.
    MatMulT(Var, Var),
    /// Adds a `[cols]` vector to every row of a `[rows, cols]` matrix.
    AddRow(Var, Var),
    Act(Activation, Var),
    Add(Var, Var),
    Scale(Var, f64),
    /// Element-wise average of same-shape tensors.
    Mean(Vec<Var>),
    /// Element-wise sum of same-shape tensors.
    Sum(Vec<Var>),
    SumAll(Var),
    Mse(Var, Tensor),
    /// Mean negative log-likelihood; keeps the softmax for backward.
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Debug)]
struct Binding {
    group: GroupId,
    offset: usize,
    var: Var,
}

/// A recording of a forward computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bindings: Vec<Binding>,
    groups: BTreeMap<GroupId, usize>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, what: &str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(what.to_string()));
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::Graph(format!("variable {} is not on this graph", v.0)))
        }
    }

    /// Records a constant input.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(Op::Leaf, t, "constant")
    }

    /// Registers every tensor of a parameter group as a differentiable leaf.
    /// Returns the leaves in layout order.
    pub fn register(&mut self, group: &ParamGroup) -> Result<Vec<Var>> {
        if self.groups.contains_key(group.id()) {
            return Err(Error::Graph(format!("group {} registered twice", group.id())));
        }
        let mut vars = Vec::with_capacity(group.tensors().len());
        let mut offset = 0;
        for t in group.tensors() {
            let var = self.push(Op::Leaf, t.tensor.clone(), "parameter")?;
            self.bindings.push(Binding {
                group: group.id().clone(),
                offset,
                var,
            });
            offset += t.tensor.len();
            vars.push(var);
        }
        self.groups.insert(group.id().clone(), group.param_count());
        Ok(vars)
    }

    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let (n, k) = self.value(x).dims2()?;
        let (o, k2) = self.value(w).dims2()?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul: input has {k} columns but weight expects {k2}"
            )));
        }
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![0.0; n * o];
        for i in 0..n {
            let xr = &xv[i * k..(i + 1) * k];
            for j in 0..o {
                let wr = &wv[j * k..(j + 1) * k];
                out[i * o + j] = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
            }
        }
        self.push(Op::MatMulT(x, w), Tensor::from_parts(vec![n, o], out), "matmul")
    }

    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        self.check(x)?;
        self.check(b)?;
        let (n, c) = self.value(x).dims2()?;
        if self.value(b).len() != c {
            return Err(Error::shape(format!(
                "bias has {} entries, matrix has {c} columns",
                self.value(b).len()
            )));
        }
        let bv = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for i in 0..n {
            for j in 0..c {
                out[i * c + j] += bv[j];
            }
        }
        self.push(Op::AddRow(x, b), Tensor::from_parts(vec![n, c], out), "bias add")
    }

    pub fn activation(&mut self, act: Activation, x: Var) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        let data = match act {
            Activation::Identity => xv.data().to_vec(),
            Activation::Relu => xv.data().iter().map(|&v| v.max(0.0)).collect(),
            Activation::Tanh => xv.data().iter().map(|v| v.tanh()).collect(),
        };
        let value = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push(Op::Act(act, x), value, "activation")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(Activation::Relu, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(Activation::Tanh, x)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(format!("add: {:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::from_parts(av.shape().to_vec(), data);
        self.push(Op::Add(a, b), value, "add")
    }

    pub fn scale(&mut self, x: Var, alpha: f64) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        let value = Tensor::from_parts(xv.shape().to_vec(), xv.data().iter().map(|v| alpha * v).collect());
        self.push(Op::Scale(x, alpha), value, "scale")
    }

    fn elementwise_total(&self, xs: &[Var], what: &str) -> Result<Vec<f64>> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::invalid(format!("{what} of zero tensors")))?;
        for &x in xs {
            self.check(x)?;
        }
        let shape = self.value(first).shape();
        let mut acc = vec![0.0; self.value(first).len()];
        for &x in xs {
            let v = self.value(x);
            if v.shape() != shape {
                return Err(Error::shape(format!("{what}: {:?} vs {:?}", v.shape(), shape)));
            }
            for (a, b) in acc.iter_mut().zip(v.data()) {
                *a += b;
            }
        }
        Ok(acc)
    }

    /// Element-wise mean; the inputs are summed in the order given.
    pub fn mean(&mut self, xs: &[Var]) -> Result<Var> {
        let mut acc = self.elementwise_total(xs, "mean")?;
        let inv = 1.0 / xs.len() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        let shape = self.value(xs[0]).shape().to_vec();
        self.push(Op::Mean(xs.to_vec()), Tensor::from_parts(shape, acc), "mean")
    }

    pub fn sum(&mut self, xs: &[Var]) -> Result<Var> {
        let acc = self.elementwise_total(xs, "sum")?;
        let shape = self.value(xs[0]).shape().to_vec();
        self.push(Op::Sum(xs.to_vec()), Tensor::from_parts(shape, acc), "sum")
    }

    /// Sum of all entries, as a scalar.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = self.value(x).data().iter().sum();
        self.push(Op::SumAll(x), Tensor::from_parts(vec![], vec![s]), "sum_all")
    }

    /// Mean squared error over all entries.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        self.check(pred)?;
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::shape(format!(
                "mse: prediction {:?} vs target {:?}",
                p.shape(),
                target.shape()
            )));
        }
        if p.is_empty() {
            return Err(Error::shape("mse of an empty tensor"));
        }
        let n = p.len() as f64;
        let loss = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        self.push(
            Op::Mse(pred, target.clone()),
            Tensor::from_parts(vec![], vec![loss]),
            "mse",
        )
    }

    /// Mean cross-entropy of `[n, classes]` logits against integer labels,
    /// through a max-shifted log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.check(logits)?;
        let (n, c) = self.value(logits).dims2()?;
        if labels.len() != n {
            return Err(Error::shape(format!(
                "cross_entropy: {n} rows of logits but {} labels",
                labels.len()
            )));
        }
        if n == 0 {
            return Err(Error::shape("cross_entropy of an empty batch"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::invalid(format!("label {bad} out of range for {c} classes")));
        }
        let z = self.value(logits).data();
        let mut probs = vec![0.0; n * c];
        let mut total = 0.0;
        for i in 0..n {
            let row = &z[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum_exp.ln();
            total += lse - row[labels[i]];
            for j in 0..c {
                probs[i * c + j] = (row[j] - lse).exp();
            }
        }
        let loss = total / n as f64;
        self.push(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            Tensor::from_parts(vec![], vec![loss]),
            "cross_entropy",
        )
    }

    /// Gradients of a scalar node with respect to every registered group.
    pub fn backward(&self, loss: Var) -> Result<BTreeMap<GroupId, GradientVector>> {
        if self.nodes.is_empty() {
            return Err(Error::Graph("backward called before any forward computation".into()));
        }
        self.check(loss)?;
        if !self.value(loss).is_scalar() {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }

        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    adj[idx] = Some(g);
                }
                Op::MatMulT(x, w) => {
                    let xv = self.value(*x).data();
                    let wv = self.value(*w).data();
                    let (n, k) = self.value(*x).dims2()?;
                    let o = self.value(*w).dims2()?.0;
                    let mut gx = vec![0.0; n * k];
                    let mut gw = vec![0.0; o * k];
                    for i in 0..n {
                        for j in 0..o {
                            let gij = g[i * o + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for t in 0..k {
                                gx[i * k + t] += gij * wv[j * k + t];
                                gw[j * k + t] += gij * xv[i * k + t];
                            }
                        }
                    }
                    accumulate(&mut adj, *x, &gx);
                    accumulate(&mut adj, *w, &gw);
                }
                Op::AddRow(x, b) => {
                    let c = self.value(*b).len();
                    let mut gb = vec![0.0; c];
                    for (i, v) in g.iter().enumerate() {
                        gb[i % c] += v;
                    }
                    accumulate(&mut adj, *x, &g);
                    accumulate(&mut adj, *b, &gb);
                }
                Op::Act(act, x) => {
                    let gx: Vec<f64> = match act {
                        Activation::Identity => g,
                        Activation::Relu => {
                            let xv = self.value(*x).data();
                            g.iter()
                                .zip(xv)
                                .map(|(gi, &xi)| if xi > 0.0 { *gi } else { 0.0 })
                                .collect()
                        }
                        Activation::Tanh => {
                            let yv = node.value.data();
                            g.iter().zip(yv).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect()
                        }
                    };
                    accumulate(&mut adj, *x, &gx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, &g);
                    accumulate(&mut adj, *b, &g);
                }
                Op::Scale(x, alpha) => {
                    let gx: Vec<f64> = g.iter().map(|v| alpha * v).collect();
                    accumulate(&mut adj, *x, &gx);
                }
                Op::Mean(xs) => {
                    let inv = 1.0 / xs.len() as f64;
                    let gx: Vec<f64> = g.iter().map(|v| v * inv).collect();
                    for x in xs {
                        accumulate(&mut adj, *x, &gx);
                    }
                }
                Op::Sum(xs) => {
                    for x in xs {
                        accumulate(&mut adj, *x, &g);
                    }
                }
                Op::SumAll(x) => {
                    let gx = vec![g[0]; self.value(*x).len()];
                    accumulate(&mut adj, *x, &gx);
                }
                Op::Mse(pred, target) => {
                    let p = self.value(*pred).data();
                    let scale = 2.0 * g[0] / p.len() as f64;
                    let gx: Vec<f64> = p.iter().zip(target.data()).map(|(a, b)| scale * (a - b)).collect();
                    accumulate(&mut adj, *pred, &gx);
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let (n, c) = self.value(*logits).dims2()?;
                    let scale = g[0] / n as f64;
                    let mut gx: Vec<f64> = probs.iter().map(|p| scale * p).collect();
                    for (i, &l) in labels.iter().enumerate() {
                        gx[i * c + l] -= scale;
                    }
                    accumulate(&mut adj, *logits, &gx);
                }
            }
        }

        let mut out: BTreeMap<GroupId, Vec<f64>> =
            self.groups.iter().map(|(id, &n)| (id.clone(), vec![0.0; n])).collect();
        for b in &self.bindings {
            if let Some(Some(g)) = adj.get(b.var.0) {
                let dst = out.get_mut(&b.group).expect("binding of a registered group");
                dst[b.offset..b.offset + g.len()].copy_from_slice(g);
            }
        }
        out.into_iter()
            .map(|(id, v)| GradientVector::new(id, v).map(|g| (g.group_id().clone(), g)))
            .collect()
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], x: Var, g: &[f64]) {
    match &mut adj[x.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g.to_vec()),
    }
}
