//! Tape-based reverse-mode autodiff.
//!
//! A [`Graph`] is an append-only sequence of operation records; node inputs
//! always precede the node, so a single reverse sweep visits each node exactly
//! once. Values are computed eagerly on append, first-order gradients only.
//!
//! Debug builds assert every forward output is finite; release builds skip
//! the scan.

use crate::error::{Error, Result};
use crate::kernels::{self, PoolMode};
use crate::real::{normal_cdf, normal_pdf, Real};
use crate::tensor::{debug_check_finite, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

struct TripletSaved<E> {
    max_j: Vec<usize>,
    max_dist: Vec<E>,
    min_j: Vec<usize>,
    min_dist: Vec<E>,
}

enum OpRecord<E: Real> {
    Leaf,
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        c: f64,
    },
    Exp {
        x: NodeId,
    },
    Gelu {
        x: NodeId,
        cdf: Vec<E>,
    },
    Sigmoid {
        x: NodeId,
    },
    Matmul {
        a: NodeId,
        b: NodeId,
    },
    Transpose {
        x: NodeId,
    },
    Reshape {
        x: NodeId,
    },
    AddBiasRows {
        x: NodeId,
        b: NodeId,
    },
    SubCol {
        x: NodeId,
        c: NodeId,
    },
    DivCol {
        x: NodeId,
        c: NodeId,
    },
    RowSumSq {
        x: NodeId,
    },
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        axis: usize,
        stats: Vec<(E, E)>,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    },
    Conv1d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        pad: usize,
    },
    Pool {
        x: NodeId,
        dims: Vec<usize>,
        mode: PoolMode,
        argmax: Vec<usize>,
        count: usize,
    },
    ConcatRows {
        parts: Vec<NodeId>,
    },
    SumAll {
        x: NodeId,
    },
    Triplet {
        normals: NodeId,
        abnormals: NodeId,
        margin: f64,
        saved: TripletSaved<E>,
    },
    Bce {
        scores: NodeId,
        labels: Vec<f64>,
    },
}

struct Node<E: Real> {
    value: Tensor<E>,
    requires_grad: bool,
    op: OpRecord<E>,
}

/// Gradients keyed by node id; populated for `requires_grad` leaves.
pub struct Gradients<E: Real> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Real> Gradients<E> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<E>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

pub struct Graph<E: Real> {
    nodes: Vec<Node<E>>,
}

impl<E: Real> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Real> Graph<E> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Append a leaf; gradient participation follows the tensor's flag.
    pub fn leaf(&mut self, t: Tensor<E>) -> NodeId {
        let rg = t.requires_grad();
        self.push(t, rg, OpRecord::Leaf)
    }

    /// Leaf that participates in gradients.
    pub fn param(&mut self, t: Tensor<E>) -> NodeId {
        self.push(t, true, OpRecord::Leaf)
    }

    /// Leaf excluded from gradients.
    pub fn constant(&mut self, t: Tensor<E>) -> NodeId {
        self.push(t, false, OpRecord::Leaf)
    }

    fn push(&mut self, value: Tensor<E>, requires_grad: bool, op: OpRecord<E>) -> NodeId {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push_op(
        &mut self,
        value: Tensor<E>,
        inputs: &[NodeId],
        op: OpRecord<E>,
        name: &str,
    ) -> NodeId {
        // Forward ops must not manufacture NaN/Inf from finite inputs; inputs
        // that are already non-finite propagate without tripping the guard.
        if cfg!(debug_assertions)
            && !value.all_finite()
            && inputs.iter().all(|id| self.value(*id).all_finite())
        {
            debug_check_finite(&value, name);
        }
        let rg = inputs.iter().any(|id| self.nodes[id.0].requires_grad);
        self.push(value, rg, op)
    }

    // -- elementwise ---------------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape(format!(
                "add shape mismatch: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let mut out = va.clone();
        out.add_assign(vb)?;
        Ok(self.push_op(out, &[a, b], OpRecord::Add { a, b }, "add"))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape(format!(
                "mul shape mismatch: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push_op(out, &[a, b], OpRecord::Mul { a, b }, "mul"))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let k = E::from_f64(c);
        let out = self.value(x).map(|v| v * k);
        self.push_op(out, &[x], OpRecord::Scale { x, c }, "scale")
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.exp());
        self.push_op(out, &[x], OpRecord::Exp { x }, "exp")
    }

    /// Exact GELU: x * Phi(x) with the erf-based normal CDF.
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let vx = self.value(x);
        let cdf: Vec<E> = vx.data().iter().map(|&v| normal_cdf(v)).collect();
        let data: Vec<E> = vx
            .data()
            .iter()
            .zip(cdf.iter())
            .map(|(&v, &c)| v * c)
            .collect();
        let out = Tensor::new(vx.shape().to_vec(), data).expect("gelu shape");
        self.push_op(out, &[x], OpRecord::Gelu { x, cdf }, "gelu")
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| {
            if v >= E::ZERO {
                E::ONE / (E::ONE + (-v).exp())
            } else {
                let e = v.exp();
                e / (E::ONE + e)
            }
        });
        self.push_op(out, &[x], OpRecord::Sigmoid { x }, "sigmoid")
    }

    // -- linear algebra ------------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push_op(out, &[a, b], OpRecord::Matmul { a, b }, "matmul"))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        if v.rank() != 2 {
            return Err(Error::Shape(format!(
                "transpose expects rank 2, got {:?}",
                v.shape()
            )));
        }
        let (r, c) = (v.shape()[0], v.shape()[1]);
        let src = v.data();
        let out = Tensor::from_fn(&[c, r], |i| {
            let (nc, nr) = (i / r, i % r);
            src[nr * c + nc]
        });
        Ok(self.push_op(out, &[x], OpRecord::Transpose { x }, "transpose"))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(x);
        let n: usize = shape.iter().product();
        if n != v.elems() {
            return Err(Error::Shape(format!(
                "reshape {:?} -> {:?} changes element count",
                v.shape(),
                shape
            )));
        }
        let out = Tensor::new(shape.to_vec(), v.data().to_vec())?;
        Ok(self.push_op(out, &[x], OpRecord::Reshape { x }, "reshape"))
    }

    /// y[r, c] = x[r, c] + b[c]
    pub fn add_bias_rows(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (vx, vb) = (self.value(x), self.value(b));
        if vx.rank() != 2 || vb.shape() != [vx.shape()[1]] {
            return Err(Error::Shape(format!(
                "add_bias_rows: x {:?}, bias {:?}",
                vx.shape(),
                vb.shape()
            )));
        }
        let cols = vx.shape()[1];
        let bd = vb.data();
        let mut out = vx.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += bd[i % cols];
        }
        Ok(self.push_op(
            out,
            &[x, b],
            OpRecord::AddBiasRows { x, b },
            "add_bias_rows",
        ))
    }

    /// y[r, c] = x[r, c] - col[r]; `col` has shape (R, 1).
    pub fn sub_col(&mut self, x: NodeId, c: NodeId) -> Result<NodeId> {
        let (vx, vc) = (self.value(x), self.value(c));
        check_col(vx, vc, "sub_col")?;
        let cols = vx.shape()[1];
        let cd = vc.data();
        let mut out = vx.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v - cd[i / cols];
        }
        Ok(self.push_op(out, &[x, c], OpRecord::SubCol { x, c }, "sub_col"))
    }

    /// y[r, c] = x[r, c] / col[r]; `col` has shape (R, 1).
    pub fn div_col(&mut self, x: NodeId, c: NodeId) -> Result<NodeId> {
        let (vx, vc) = (self.value(x), self.value(c));
        check_col(vx, vc, "div_col")?;
        let cols = vx.shape()[1];
        let cd = vc.data();
        let mut out = vx.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v / cd[i / cols];
        }
        Ok(self.push_op(out, &[x, c], OpRecord::DivCol { x, c }, "div_col"))
    }

    /// Row-wise squared L2 norm: (R, C) -> (R, 1).
    pub fn row_sumsq(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.rank() != 2 {
            return Err(Error::Shape(format!(
                "row_sumsq expects rank 2, got {:?}",
                vx.shape()
            )));
        }
        let (r, c) = (vx.shape()[0], vx.shape()[1]);
        let xd = vx.data();
        let out = Tensor::from_fn(&[r, 1], |i| {
            let mut acc = E::ZERO;
            for &v in &xd[i * c..(i + 1) * c] {
                acc += v * v;
            }
            acc
        });
        Ok(self.push_op(out, &[x], OpRecord::RowSumSq { x }, "row_sumsq"))
    }

    // -- structured layers ---------------------------------------------------

    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        axis: usize,
        eps: f64,
    ) -> Result<NodeId> {
        let out = kernels::layer_norm_forward(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            axis,
            eps,
        )?;
        Ok(self.push_op(
            out.y,
            &[x, gamma, beta],
            OpRecord::LayerNorm {
                x,
                gamma,
                beta,
                axis,
                stats: out.stats,
            },
            "layer_norm",
        ))
    }

    pub fn conv2d_spatial(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let out =
            kernels::conv2d_forward(self.value(x), self.value(w), self.value(b), stride, pad)?;
        Ok(self.push_op(
            out,
            &[x, w, b],
            OpRecord::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            "conv2d_spatial",
        ))
    }

    pub fn conv1d_temporal(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        pad: usize,
    ) -> Result<NodeId> {
        let out = kernels::conv1d_forward(self.value(x), self.value(w), self.value(b), pad)?;
        Ok(self.push_op(
            out,
            &[x, w, b],
            OpRecord::Conv1d { x, w, b, pad },
            "conv1d_temporal",
        ))
    }

    pub fn pool(&mut self, x: NodeId, dims: &[usize], mode: PoolMode) -> Result<NodeId> {
        let out = kernels::pool_forward(self.value(x), dims, mode)?;
        Ok(self.push_op(
            out.y,
            &[x],
            OpRecord::Pool {
                x,
                dims: dims.to_vec(),
                mode,
                argmax: out.argmax,
                count: out.count,
            },
            "pool",
        ))
    }

    /// Stack rank-1 tensors of equal length into a (n, d) matrix.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_rows of zero parts".into()));
        }
        let d = self.value(parts[0]).elems();
        let mut data = Vec::with_capacity(parts.len() * d);
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 1 || v.elems() != d {
                return Err(Error::Shape(format!(
                    "concat_rows parts must all be rank-1 length {d}, got {:?}",
                    v.shape()
                )));
            }
            data.extend_from_slice(v.data());
        }
        let out = Tensor::new(vec![parts.len(), d], data)?;
        Ok(self.push_op(
            out,
            parts,
            OpRecord::ConcatRows {
                parts: parts.to_vec(),
            },
            "concat_rows",
        ))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let mut acc = E::ZERO;
        for &v in self.value(x).data() {
            acc += v;
        }
        self.push_op(Tensor::scalar(acc), &[x], OpRecord::SumAll { x }, "sum_all")
    }

    // -- losses ---------------------------------------------------------------

    /// Triplet objective over batch embeddings: mean over normals of the
    /// farthest same-class distance, plus the margin hinge on the nearest
    /// cross-class distance. Ties resolve to the first index in sample order.
    pub fn triplet_loss(
        &mut self,
        normals: NodeId,
        abnormals: NodeId,
        margin: f64,
    ) -> Result<NodeId> {
        let (vn, va) = (self.value(normals), self.value(abnormals));
        if vn.rank() != 2 || va.rank() != 2 {
            return Err(Error::Shape(format!(
                "triplet_loss expects (N, d) matrices, got {:?} and {:?}",
                vn.shape(),
                va.shape()
            )));
        }
        let (n, d) = (vn.shape()[0], vn.shape()[1]);
        let na = va.shape()[0];
        if va.shape()[1] != d {
            return Err(Error::Shape(format!(
                "triplet_loss embedding width mismatch: {d} vs {}",
                va.shape()[1]
            )));
        }
        if n < 2 {
            return Err(Error::Contract(format!(
                "triplet_loss needs at least 2 normal embeddings, got {n}"
            )));
        }
        if na == 0 {
            return Err(Error::Contract(
                "triplet_loss needs abnormal embeddings".into(),
            ));
        }
        let nd = vn.data();
        let ad = va.data();
        let dist = |p: &[E], q: &[E]| {
            let mut acc = E::ZERO;
            for (a, b) in p.iter().zip(q) {
                let dv = *a - *b;
                acc += dv * dv;
            }
            acc.sqrt()
        };
        let m = E::from_f64(margin);
        let inv_n = E::from_f64(1.0 / n as f64);
        let mut saved = TripletSaved {
            max_j: vec![0; n],
            max_dist: vec![E::ZERO; n],
            min_j: vec![0; n],
            min_dist: vec![E::ZERO; n],
        };
        let mut term1 = E::ZERO;
        let mut term2 = E::ZERO;
        for i in 0..n {
            let ei = &nd[i * d..(i + 1) * d];
            let mut best = E::ZERO;
            let mut best_j = usize::MAX;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let dv = dist(ei, &nd[j * d..(j + 1) * d]);
                if best_j == usize::MAX || dv > best {
                    best = dv;
                    best_j = j;
                }
            }
            saved.max_j[i] = best_j;
            saved.max_dist[i] = best;
            term1 += best;

            let mut near = E::ZERO;
            let mut near_j = usize::MAX;
            for j in 0..na {
                let dv = dist(ei, &ad[j * d..(j + 1) * d]);
                if near_j == usize::MAX || dv < near {
                    near = dv;
                    near_j = j;
                }
            }
            saved.min_j[i] = near_j;
            saved.min_dist[i] = near;
            let hinge = m - near;
            if hinge > E::ZERO {
                term2 += hinge;
            }
        }
        let value = (term1 + term2) * inv_n;
        Ok(self.push_op(
            Tensor::scalar(value),
            &[normals, abnormals],
            OpRecord::Triplet {
                normals,
                abnormals,
                margin,
                saved,
            },
            "triplet_loss",
        ))
    }

    /// Binary cross-entropy over a rank-1 score vector; scores are clamped to
    /// [1e-7, 1 - 1e-7] before the logs and the clamp saturates gradients.
    pub fn bce_loss(&mut self, scores: NodeId, labels: &[f64]) -> Result<NodeId> {
        let vs = self.value(scores);
        if vs.rank() != 1 {
            return Err(Error::Shape(format!(
                "bce_loss expects a rank-1 score vector, got {:?}",
                vs.shape()
            )));
        }
        if vs.elems() != labels.len() {
            return Err(Error::Shape(format!(
                "bce_loss: {} scores vs {} labels",
                vs.elems(),
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l != 0.0 && l != 1.0) {
            return Err(Error::Contract("bce_loss labels must be 0 or 1".into()));
        }
        let lo = E::from_f64(BCE_CLAMP);
        let hi = E::ONE - lo;
        let inv = E::from_f64(1.0 / labels.len() as f64);
        let mut acc = E::ZERO;
        for (&s, &y) in vs.data().iter().zip(labels) {
            let p = s.maximum(lo).minimum(hi);
            let y = E::from_f64(y);
            acc += y * p.ln() + (E::ONE - y) * (E::ONE - p).ln();
        }
        let value = -(acc * inv);
        Ok(self.push_op(
            Tensor::scalar(value),
            &[scores],
            OpRecord::Bce {
                scores,
                labels: labels.to_vec(),
            },
            "bce_loss",
        ))
    }

    // -- backward -------------------------------------------------------------

    /// Reverse sweep from a scalar loss node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<E>> {
        let v = self.value(loss);
        if !v.is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                v.shape()
            )));
        }
        let seed = Tensor::full(v.shape(), E::ONE);
        self.backward_seeded(loss, seed)
    }

    /// Reverse sweep seeded with an explicit output gradient (chain-rule
    /// splice point for staged training).
    pub fn backward_seeded(&self, node: NodeId, seed: Tensor<E>) -> Result<Gradients<E>> {
        if seed.shape() != self.value(node).shape() {
            return Err(Error::Shape(format!(
                "backward seed shape {:?} does not match node shape {:?}",
                seed.shape(),
                self.value(node).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[node.0].requires_grad {
            grads[node.0] = Some(seed);
        }
        for i in (0..=node.0).rev() {
            if matches!(self.nodes[i].op, OpRecord::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.dispatch_backward(i, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Tensor<E>>],
        id: NodeId,
        delta: Tensor<E>,
    ) -> Result<()> {
        if !self.nodes[id.0].requires_grad {
            return Ok(());
        }
        match &mut grads[id.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => {
                *slot = Some(delta);
                Ok(())
            }
        }
    }

    fn dispatch_backward(
        &self,
        i: usize,
        g: &Tensor<E>,
        grads: &mut [Option<Tensor<E>>],
    ) -> Result<()> {
        match &self.nodes[i].op {
            OpRecord::Leaf => Ok(()),
            OpRecord::Add { a, b } => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())
            }
            OpRecord::Mul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(vb.data())
                        .map(|(&x, &y)| x * y)
                        .collect(),
                )?;
                let gb = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(va.data())
                        .map(|(&x, &y)| x * y)
                        .collect(),
                )?;
                self.accumulate(grads, *a, ga)?;
                self.accumulate(grads, *b, gb)
            }
            OpRecord::Scale { x, c } => {
                let k = E::from_f64(*c);
                self.accumulate(grads, *x, g.map(|v| v * k))
            }
            OpRecord::Exp { x } => {
                let y = &self.nodes[i].value;
                let gx = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(y.data())
                        .map(|(&gv, &yv)| gv * yv)
                        .collect(),
                )?;
                self.accumulate(grads, *x, gx)
            }
            OpRecord::Gelu { x, cdf } => {
                let vx = self.value(*x);
                let gx = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(vx.data())
                        .zip(cdf.iter())
                        .map(|((&gv, &xv), &c)| gv * (c + xv * normal_pdf(xv)))
                        .collect(),
                )?;
                self.accumulate(grads, *x, gx)
            }
            OpRecord::Sigmoid { x } => {
                let y = &self.nodes[i].value;
                let gx = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(y.data())
                        .map(|(&gv, &yv)| gv * yv * (E::ONE - yv))
                        .collect(),
                )?;
                self.accumulate(grads, *x, gx)
            }
            OpRecord::Matmul { a, b } => {
                let ga = kernels::matmul_grad_lhs(g, self.value(*b));
                let gb = kernels::matmul_grad_rhs(self.value(*a), g);
                self.accumulate(grads, *a, ga)?;
                self.accumulate(grads, *b, gb)
            }
            OpRecord::Transpose { x } => {
                let (r, c) = (g.shape()[0], g.shape()[1]);
                let gd = g.data();
                let gx = Tensor::from_fn(&[c, r], |i| {
                    let (nc, nr) = (i / r, i % r);
                    gd[nr * c + nc]
                });
                self.accumulate(grads, *x, gx)
            }
            OpRecord::Reshape { x } => {
                let gx = Tensor::new(self.value(*x).shape().to_vec(), g.data().to_vec())?;
                self.accumulate(grads, *x, gx)
            }
            OpRecord::AddBiasRows { x, b } => {
                let cols = g.shape()[1];
                let mut gb = Tensor::zeros(&[cols]);
                for (idx, &gv) in g.data().iter().enumerate() {
                    gb.data_mut()[idx % cols] += gv;
                }
                self.accumulate(grads, *x, g.clone())?;
                self.accumulate(grads, *b, gb)
            }
            OpRecord::SubCol { x, c } => {
                let cols = g.shape()[1];
                let rows = g.shape()[0];
                let mut gc = Tensor::zeros(&[rows, 1]);
                for (idx, &gv) in g.data().iter().enumerate() {
                    gc.data_mut()[idx / cols] += -gv;
                }
                self.accumulate(grads, *x, g.clone())?;
                self.accumulate(grads, *c, gc)
            }
            OpRecord::DivCol { x, c } => {
                let vc = self.value(*c);
                let y = &self.nodes[i].value;
                let cols = g.shape()[1];
                let rows = g.shape()[0];
                let mut gx = g.clone();
                for (idx, v) in gx.data_mut().iter_mut().enumerate() {
                    *v = *v / vc.data()[idx / cols];
                }
                let mut gc = Tensor::zeros(&[rows, 1]);
                for (idx, &gv) in g.data().iter().enumerate() {
                    let r = idx / cols;
                    gc.data_mut()[r] += -(gv * y.data()[idx] / vc.data()[r]);
                }
                self.accumulate(grads, *x, gx)?;
                self.accumulate(grads, *c, gc)
            }
            OpRecord::RowSumSq { x } => {
                let vx = self.value(*x);
                let (r, c) = (vx.shape()[0], vx.shape()[1]);
                let two = E::from_f64(2.0);
                let xd = vx.data();
                let gx = Tensor::from_fn(&[r, c], |idx| two * xd[idx] * g.data()[idx / c]);
                self.accumulate(grads, *x, gx)
            }
            OpRecord::LayerNorm {
                x,
                gamma,
                beta,
                axis,
                stats,
            } => {
                let (gx, ggamma, gbeta) = kernels::layer_norm_backward(
                    self.value(*x),
                    self.value(*gamma),
                    *axis,
                    stats,
                    g,
                )?;
                self.accumulate(grads, *x, gx)?;
                self.accumulate(grads, *gamma, ggamma)?;
                self.accumulate(grads, *beta, gbeta)
            }
            OpRecord::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let (gx, gw, gb) = kernels::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    self.value(*b),
                    *stride,
                    *pad,
                    g,
                )?;
                self.accumulate(grads, *x, gx)?;
                self.accumulate(grads, *w, gw)?;
                self.accumulate(grads, *b, gb)
            }
            OpRecord::Conv1d { x, w, b, pad } => {
                let (gx, gw, gb) = kernels::conv1d_backward(
                    self.value(*x),
                    self.value(*w),
                    self.value(*b),
                    *pad,
                    g,
                )?;
                self.accumulate(grads, *x, gx)?;
                self.accumulate(grads, *w, gw)?;
                self.accumulate(grads, *b, gb)
            }
            OpRecord::Pool {
                x,
                dims,
                mode,
                argmax,
                count,
            } => {
                let gx =
                    kernels::pool_backward(self.value(*x).shape(), dims, *mode, argmax, *count, g)?;
                self.accumulate(grads, *x, gx)
            }
            OpRecord::ConcatRows { parts } => {
                let d = g.shape()[1];
                for (row, &p) in parts.iter().enumerate() {
                    let slice = g.data()[row * d..(row + 1) * d].to_vec();
                    self.accumulate(grads, p, Tensor::new(vec![d], slice)?)?;
                }
                Ok(())
            }
            OpRecord::SumAll { x } => {
                let gv = g.data()[0];
                self.accumulate(grads, *x, Tensor::full(self.value(*x).shape(), gv))
            }
            OpRecord::Triplet {
                normals,
                abnormals,
                margin,
                saved,
            } => {
                let (vn, va) = (self.value(*normals), self.value(*abnormals));
                let (n, d) = (vn.shape()[0], vn.shape()[1]);
                let gs = g.data()[0];
                let inv_n = E::from_f64(1.0 / n as f64);
                let m = E::from_f64(*margin);
                let tiny = E::from_f64(1e-12);
                let mut gn = Tensor::zeros(vn.shape());
                let mut ga = Tensor::zeros(va.shape());
                for i2 in 0..n {
                    // term 1: farthest normal pulls together
                    let j = saved.max_j[i2];
                    let dist = saved.max_dist[i2];
                    if dist > tiny {
                        let coef = gs * inv_n / dist;
                        for kk in 0..d {
                            let diff = vn.data()[i2 * d + kk] - vn.data()[j * d + kk];
                            gn.data_mut()[i2 * d + kk] += coef * diff;
                            gn.data_mut()[j * d + kk] += -(coef * diff);
                        }
                    }
                    // term 2: active hinge pushes the nearest abnormal out
                    let j = saved.min_j[i2];
                    let dist = saved.min_dist[i2];
                    if m - dist > E::ZERO && dist > tiny {
                        let coef = gs * inv_n / dist;
                        for kk in 0..d {
                            let diff = vn.data()[i2 * d + kk] - va.data()[j * d + kk];
                            gn.data_mut()[i2 * d + kk] += -(coef * diff);
                            ga.data_mut()[j * d + kk] += coef * diff;
                        }
                    }
                }
                self.accumulate(grads, *normals, gn)?;
                self.accumulate(grads, *abnormals, ga)
            }
            OpRecord::Bce { scores, labels } => {
                let vs = self.value(*scores);
                let lo = E::from_f64(BCE_CLAMP);
                let hi = E::ONE - lo;
                let inv = E::from_f64(1.0 / labels.len() as f64);
                let gs = g.data()[0];
                let gx = Tensor::new(
                    vs.shape().to_vec(),
                    vs.data()
                        .iter()
                        .zip(labels)
                        .map(|(&s, &y)| {
                            if s > lo && s < hi {
                                let y = E::from_f64(y);
                                -(gs * inv) * (y / s - (E::ONE - y) / (E::ONE - s))
                            } else {
                                E::ZERO
                            }
                        })
                        .collect(),
                )?;
                self.accumulate(grads, *scores, gx)
            }
        }
    }
}

/// BCE score clamp keeping the logs finite.
pub const BCE_CLAMP: f64 = 1e-7;

fn check_col<E: Real>(x: &Tensor<E>, c: &Tensor<E>, what: &str) -> Result<()> {
    if x.rank() != 2 || c.shape() != [x.shape()[0], 1] {
        return Err(Error::Shape(format!(
            "{what}: x {:?}, column {:?}",
            x.shape(),
            c.shape()
        )));
    }
    Ok(())
}
