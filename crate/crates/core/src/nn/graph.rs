//! Per-batch reverse-mode differentiation over 2-D tensors.
//!
//! A [`Graph`] records every operation of one forward pass. [`Graph::backward`]
//! replays the record in reverse and returns one gradient per parameter of the
//! bound [`ParamStore`]. The graph is dropped after the optimizer step.

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tensor::{self, TensorBuf};
use crate::error::{Result, SbrError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param,
    MatMul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    MulCol(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Square(NodeId),
    Sum(NodeId),
    SumCols(NodeId),
    ConcatCols(NodeId, NodeId),
    StopGradient,
}

struct Node {
    value: TensorBuf,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: BTreeMap<String, NodeId>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: BTreeMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: TensorBuf, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &TensorBuf {
        &self.nodes[id.0].value
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let v = self.value(id);
        if v.len() != 1 {
            return Err(SbrError::Contract(format!(
                "expected a scalar node, found shape {:?}",
                v.shape()
            )));
        }
        Ok(v.values()[0])
    }

    /// A constant leaf. Gradients never flow into it.
    pub fn input(&mut self, value: TensorBuf) -> NodeId {
        let shaped = TensorBuf::from_parts(vec![value.rows(), value.cols()], value.into_values());
        self.push(shaped, Op::Input)
    }

    pub fn constant(&mut self, v: f64) -> NodeId {
        self.push(TensorBuf::scalar(v), Op::Input)
    }

    /// Leaf bound to the named parameter. Repeated calls return the same node.
    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.param_nodes.get(name) {
            return Ok(id);
        }
        let t = self.params.require(name)?;
        let value = TensorBuf::from_parts(vec![t.rows(), t.cols()], t.values().to_vec());
        let id = self.push(value, Op::Param);
        self.param_nodes.insert(name.to_string(), id);
        Ok(id)
    }

    fn dims(&self, id: NodeId) -> (usize, usize) {
        let v = self.value(id);
        (v.rows(), v.cols())
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da.0 != db.0 {
            return Err(SbrError::dim(format!("{what} rows"), da.0, db.0));
        }
        if da.1 != db.1 {
            return Err(SbrError::dim(format!("{what} cols"), da.1, db.1));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (_, k) = self.dims(a);
        let (kb, _) = self.dims(b);
        if k != kb {
            return Err(SbrError::dim("matmul inner dimension", kb, k));
        }
        let v = tensor::matmul(self.value(a), self.value(b));
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// Adds a `1 x m` row to every row of an `n x m` node.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (_, m) = self.dims(a);
        let (r, mr) = self.dims(row);
        if r != 1 || mr != m {
            return Err(SbrError::dim("row broadcast width", m, mr));
        }
        let v = tensor::add_row(self.value(a), self.value(row));
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    /// Multiplies every row of an `n x m` node elementwise by a `1 x m` row.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (n, m) = self.dims(a);
        let (r, mr) = self.dims(row);
        if r != 1 || mr != m {
            return Err(SbrError::dim("row broadcast width", m, mr));
        }
        let rv = self.value(row).values().to_vec();
        let av = self.value(a);
        let values = (0..n)
            .flat_map(|i| av.row(i).iter().zip(&rv).map(|(x, y)| x * y).collect::<Vec<_>>())
            .collect();
        Ok(self.push(TensorBuf::from_parts(vec![n, m], values), Op::MulRow(a, row)))
    }

    /// Multiplies every column of an `n x m` node elementwise by an `n x 1` column.
    pub fn mul_col(&mut self, a: NodeId, col: NodeId) -> Result<NodeId> {
        let (n, m) = self.dims(a);
        let (nc, c) = self.dims(col);
        if c != 1 || nc != n {
            return Err(SbrError::dim("column broadcast height", n, nc));
        }
        let cv = self.value(col).values().to_vec();
        let av = self.value(a);
        let values = (0..n)
            .flat_map(|i| av.row(i).iter().map(|x| x * cv[i]).collect::<Vec<_>>())
            .collect();
        Ok(self.push(TensorBuf::from_parts(vec![n, m], values), Op::MulCol(a, col)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let v = tensor::zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        let v = tensor::zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let v = tensor::zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = tensor::map(self.value(a), |x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = tensor::map(self.value(a), f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = tensor::map(self.value(a), |x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = tensor::map(self.value(a), f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = tensor::map(self.value(a), |x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Sum of all entries, as a `1 x 1` node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).values().iter().sum();
        self.push(TensorBuf::scalar(s), Op::Sum(a))
    }

    /// Per-row sums, as an `n x 1` node.
    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let n = av.rows();
        let values = (0..n).map(|i| av.row(i).iter().sum()).collect();
        self.push(TensorBuf::from_parts(vec![n, 1], values), Op::SumCols(a))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (na, _) = self.dims(a);
        let (nb, _) = self.dims(b);
        if na != nb {
            return Err(SbrError::dim("concat rows", na, nb));
        }
        let v = tensor::concat_cols(self.value(a), self.value(b));
        Ok(self.push(v, Op::ConcatCols(a, b)))
    }

    /// Identity on the forward pass; blocks all gradient flow into `a`.
    pub fn stop_gradient(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).clone();
        self.push(v, Op::StopGradient)
    }

    /// Gradients of the scalar `loss` with respect to every parameter of the
    /// bound store. Parameters that do not influence `loss` get zeros.
    pub fn backward(&self, loss: NodeId) -> Result<ParamStore> {
        if self.value(loss).len() != 1 {
            return Err(SbrError::Contract(format!(
                "backward requires a scalar loss, found shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<TensorBuf>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(TensorBuf::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input | Op::StopGradient => {}
                Op::Param => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let da = tensor::matmul_nt(&g, self.value(*b));
                    let db = tensor::matmul_tn(self.value(*a), &g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddRow(a, row) => {
                    let m = g.cols();
                    let mut dr = vec![0.0; m];
                    for i in 0..g.rows() {
                        for (d, x) in dr.iter_mut().zip(g.row(i)) {
                            *d += x;
                        }
                    }
                    accumulate(&mut grads, *row, TensorBuf::from_parts(vec![1, m], dr));
                    accumulate(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let (n, m) = (g.rows(), g.cols());
                    let av = self.value(*a);
                    let rv = self.value(*row).values();
                    let mut dr = vec![0.0; m];
                    let mut da = Vec::with_capacity(n * m);
                    for i in 0..n {
                        for j in 0..m {
                            dr[j] += g.row(i)[j] * av.row(i)[j];
                            da.push(g.row(i)[j] * rv[j]);
                        }
                    }
                    accumulate(&mut grads, *row, TensorBuf::from_parts(vec![1, m], dr));
                    accumulate(&mut grads, *a, TensorBuf::from_parts(vec![n, m], da));
                }
                Op::MulCol(a, col) => {
                    let (n, m) = (g.rows(), g.cols());
                    let av = self.value(*a);
                    let cv = self.value(*col).values();
                    let mut dc = vec![0.0; n];
                    let mut da = Vec::with_capacity(n * m);
                    for i in 0..n {
                        for j in 0..m {
                            dc[i] += g.row(i)[j] * av.row(i)[j];
                            da.push(g.row(i)[j] * cv[i]);
                        }
                    }
                    accumulate(&mut grads, *col, TensorBuf::from_parts(vec![n, 1], dc));
                    accumulate(&mut grads, *a, TensorBuf::from_parts(vec![n, m], da));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, tensor::map(&g, |x| -x));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = tensor::zip_map(&g, self.value(*b), |x, y| x * y);
                    let db = tensor::zip_map(&g, self.value(*a), |x, y| x * y);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    accumulate(&mut grads, *a, tensor::map(&g, |x| x * c));
                }
                Op::Tanh(a) => {
                    let d = tensor::zip_map(&g, &node.value, |x, y| x * (1.0 - y * y));
                    accumulate(&mut grads, *a, d);
                }
                Op::Relu(a) => {
                    let d = tensor::zip_map(&g, self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 });
                    accumulate(&mut grads, *a, d);
                }
                Op::Exp(a) => {
                    let d = tensor::zip_map(&g, &node.value, |x, y| x * y);
                    accumulate(&mut grads, *a, d);
                }
                Op::Square(a) => {
                    let d = tensor::zip_map(&g, self.value(*a), |x, y| 2.0 * x * y);
                    accumulate(&mut grads, *a, d);
                }
                Op::Sum(a) => {
                    let gv = g.values()[0];
                    let (n, m) = self.dims(*a);
                    accumulate(&mut grads, *a, TensorBuf::from_parts(vec![n, m], vec![gv; n * m]));
                }
                Op::SumCols(a) => {
                    let (n, m) = self.dims(*a);
                    let values = (0..n).flat_map(|i| std::iter::repeat_n(g.values()[i], m)).collect();
                    accumulate(&mut grads, *a, TensorBuf::from_parts(vec![n, m], values));
                }
                Op::ConcatCols(a, b) => {
                    let (n, ca) = self.dims(*a);
                    let (_, cb) = self.dims(*b);
                    let mut da = Vec::with_capacity(n * ca);
                    let mut db = Vec::with_capacity(n * cb);
                    for i in 0..n {
                        da.extend_from_slice(&g.row(i)[..ca]);
                        db.extend_from_slice(&g.row(i)[ca..]);
                    }
                    accumulate(&mut grads, *a, TensorBuf::from_parts(vec![n, ca], da));
                    accumulate(&mut grads, *b, TensorBuf::from_parts(vec![n, cb], db));
                }
            }
        }

        let mut out = ParamStore::new();
        for (name, value) in self.params.iter() {
            let grad = match self.param_nodes.get(name) {
                Some(id) if id.0 <= loss.0 => grads[id.0].take(),
                _ => None,
            };
            let grad = match grad {
                Some(g) => TensorBuf::from_parts(value.shape().to_vec(), g.into_values()),
                None => TensorBuf::zeros(value.shape().to_vec()),
            };
            out.insert(name.clone(), grad);
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<TensorBuf>], id: NodeId, g: TensorBuf) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (e, x) in existing.values_mut().iter_mut().zip(g.values()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
