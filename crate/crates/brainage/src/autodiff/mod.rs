//! Minimal reverse-mode automatic differentiation over `ndarray` tensors.
//!
//! A [`Tape`] records a define-by-run computation graph. Values are computed
//! eagerly as nodes are appended; [`Tape::backward`] then runs a single
//! reverse sweep from a scalar node and accumulates gradients for every node
//! marked as requiring them.
//!
//! The op vocabulary is exactly what the generator, critic and age predictor
//! need. Second-order quantities (the parameter gradient of the critic's
//! input-gradient norm) are obtained by building the directional-derivative
//! computation as ordinary first-order nodes on the same tape, so this engine
//! never differentiates a backward pass.

pub mod kernels;

use ndarray::{Array1, ArrayD, Axis, IxDyn};

/// Element type of the engine: `f32` for training speed, `f64` in tests
/// where gradients are checked against finite differences.
pub trait Scalar:
    ndarray::LinalgScalar
    + num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + std::fmt::Debug
    + std::fmt::Display
    + std::ops::AddAssign
    + Send
    + Sync
    + 'static
{
    /// Convert an `f64` literal into this scalar type.
    fn lit(v: f64) -> Self {
        num_traits::FromPrimitive::from_f64(v).expect("literal conversion")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("f64 conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<T: Scalar> {
    Leaf,
    Conv2d {
        x: NodeId,
        w: NodeId,
        stride: usize,
        pad: usize,
    },
    BiasChannel {
        x: NodeId,
        b: NodeId,
    },
    Matmul {
        x: NodeId,
        w: NodeId,
    },
    BiasRow {
        x: NodeId,
        b: NodeId,
    },
    LeakyRelu {
        x: NodeId,
        alpha: T,
    },
    Tanh {
        x: NodeId,
    },
    Upsample2 {
        x: NodeId,
    },
    AvgPool {
        x: NodeId,
        k: usize,
    },
    MaxPool2 {
        x: NodeId,
        argmax: Vec<u32>,
    },
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    Reshape {
        x: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    MulConst {
        x: NodeId,
        c: ArrayD<T>,
    },
    Scale {
        x: NodeId,
        c: T,
    },
    Abs {
        x: NodeId,
    },
    MeanPerSample {
        x: NodeId,
    },
    DotConst {
        x: NodeId,
        w: Array1<T>,
    },
}

struct Node<T: Scalar> {
    value: ArrayD<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by a reverse sweep, indexed by node.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<ArrayD<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient w.r.t. a node, if any was accumulated.
    pub fn get(&self, id: NodeId) -> Option<&ArrayD<T>> {
        self.grads[id.0].as_ref()
    }

    /// Gradient w.r.t. a node that is known to participate in the objective.
    pub fn wrt(&self, id: NodeId) -> &ArrayD<T> {
        self.grads[id.0]
            .as_ref()
            .expect("no gradient accumulated for node")
    }

    pub fn take(&mut self, id: NodeId) -> Option<ArrayD<T>> {
        self.grads[id.0].take()
    }
}

/// Define-by-run computation graph.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &ArrayD<T> {
        &self.nodes[id.0].value
    }

    /// Value of a scalar-shaped node.
    pub fn scalar(&self, id: NodeId) -> T {
        let v = &self.nodes[id.0].value;
        debug_assert_eq!(v.len(), 1, "scalar() on non-scalar node");
        v.iter().next().copied().expect("scalar node")
    }

    fn push(&mut self, value: ArrayD<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn any_needs_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    /// Leaf that does not receive gradients.
    pub fn constant(&mut self, value: ArrayD<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that accumulates gradients (parameters, probed inputs).
    pub fn var(&mut self, value: ArrayD<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: usize, pad: usize) -> NodeId {
        let v = kernels::conv2d(
            &self.nodes[x.0].value.view().into_dimensionality().unwrap(),
            &self.nodes[w.0].value.view().into_dimensionality().unwrap(),
            stride,
            pad,
        );
        let needs = self.any_needs_grad(&[x, w]);
        self.push(v.into_dyn(), Op::Conv2d { x, w, stride, pad }, needs)
    }

    /// Add a per-channel bias (shape `[C]`) to a NCHW tensor.
    pub fn bias_channel(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let bv = &self.nodes[b.0].value;
        let mut v = xv.clone();
        let c = bv.len();
        for (ci, mut lane) in v.axis_iter_mut(Axis(1)).enumerate() {
            debug_assert!(ci < c);
            let bias = bv[[ci]];
            lane.mapv_inplace(|e| e + bias);
        }
        let needs = self.any_needs_grad(&[x, b]);
        self.push(v, Op::BiasChannel { x, b }, needs)
    }

    /// Matrix product of `x` (B, I) and `w` (I, O).
    pub fn matmul(&mut self, x: NodeId, w: NodeId) -> NodeId {
        let xv: ndarray::ArrayView2<T> = self.nodes[x.0]
            .value
            .view()
            .into_dimensionality()
            .expect("matmul lhs rank 2");
        let wv: ndarray::ArrayView2<T> = self.nodes[w.0]
            .value
            .view()
            .into_dimensionality()
            .expect("matmul rhs rank 2");
        let mut out = ndarray::Array2::<T>::zeros((xv.dim().0, wv.dim().1));
        ndarray::linalg::general_mat_mul(T::one(), &xv, &wv, T::zero(), &mut out);
        let needs = self.any_needs_grad(&[x, w]);
        self.push(out.into_dyn(), Op::Matmul { x, w }, needs)
    }

    /// Add a per-feature bias (shape `[O]`) to a (B, O) tensor.
    pub fn bias_row(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let bv = &self.nodes[b.0].value;
        let mut v = xv.clone();
        for mut row in v.axis_iter_mut(Axis(0)) {
            for (e, &bias) in row.iter_mut().zip(bv.iter()) {
                *e = *e + bias;
            }
        }
        let needs = self.any_needs_grad(&[x, b]);
        self.push(v, Op::BiasRow { x, b }, needs)
    }

    pub fn leaky_relu(&mut self, x: NodeId, alpha: f64) -> NodeId {
        let a = T::lit(alpha);
        let v = self.nodes[x.0]
            .value
            .mapv(|e| if e > T::zero() { e } else { e * a });
        let needs = self.nodes[x.0].needs_grad;
        self.push(v, Op::LeakyRelu { x, alpha: a }, needs)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.mapv(|e| e.tanh());
        let needs = self.nodes[x.0].needs_grad;
        self.push(v, Op::Tanh { x }, needs)
    }

    pub fn upsample2(&mut self, x: NodeId) -> NodeId {
        let v = kernels::upsample2(&self.nodes[x.0].value.view().into_dimensionality().unwrap());
        let needs = self.nodes[x.0].needs_grad;
        self.push(v.into_dyn(), Op::Upsample2 { x }, needs)
    }

    pub fn avg_pool(&mut self, x: NodeId, k: usize) -> NodeId {
        let v = kernels::avg_pool(
            &self.nodes[x.0].value.view().into_dimensionality().unwrap(),
            k,
        );
        let needs = self.nodes[x.0].needs_grad;
        self.push(v.into_dyn(), Op::AvgPool { x, k }, needs)
    }

    pub fn max_pool2(&mut self, x: NodeId) -> NodeId {
        let (v, argmax) =
            kernels::max_pool2(&self.nodes[x.0].value.view().into_dimensionality().unwrap());
        let needs = self.nodes[x.0].needs_grad;
        self.push(v.into_dyn(), Op::MaxPool2 { x, argmax }, needs)
    }

    /// Concatenate along `axis` (all other dims equal).
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> NodeId {
        let views: Vec<_> = parts.iter().map(|id| self.nodes[id.0].value.view()).collect();
        let v = ndarray::concatenate(Axis(axis), &views).expect("concat shape mismatch");
        let needs = self.any_needs_grad(parts);
        self.push(
            v,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            needs,
        )
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        let v = self.nodes[x.0]
            .value
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape element count mismatch");
        let needs = self.nodes[x.0].needs_grad;
        self.push(v, Op::Reshape { x }, needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let needs = self.any_needs_grad(&[a, b]);
        self.push(v, Op::Add { a, b }, needs)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        let needs = self.any_needs_grad(&[a, b]);
        self.push(v, Op::Sub { a, b }, needs)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        let needs = self.any_needs_grad(&[a, b]);
        self.push(v, Op::Mul { a, b }, needs)
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, x: NodeId, c: ArrayD<T>) -> NodeId {
        let v = &self.nodes[x.0].value * &c;
        let needs = self.nodes[x.0].needs_grad;
        self.push(v, Op::MulConst { x, c }, needs)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let cs = T::lit(c);
        let v = self.nodes[x.0].value.mapv(|e| e * cs);
        let needs = self.nodes[x.0].needs_grad;
        self.push(v, Op::Scale { x, c: cs }, needs)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.mapv(|e| e.abs());
        let needs = self.nodes[x.0].needs_grad;
        self.push(v, Op::Abs { x }, needs)
    }

    /// Mean over all non-batch axes: (B, ...) -> (B,).
    pub fn mean_per_sample(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let b = xv.shape()[0];
        let count = xv.len() / b;
        let norm = T::lit(1.0 / count as f64);
        let mut out = Array1::<T>::zeros(b);
        for (i, sample) in xv.axis_iter(Axis(0)).enumerate() {
            let mut s = T::zero();
            for &e in sample.iter() {
                s = s + e;
            }
            out[i] = s * norm;
        }
        let needs = self.nodes[x.0].needs_grad;
        self.push(out.into_dyn(), Op::MeanPerSample { x }, needs)
    }

    /// Weighted sum of a (B,) vector with constant weights, producing a scalar.
    pub fn dot_const(&mut self, x: NodeId, w: Array1<T>) -> NodeId {
        let xv = &self.nodes[x.0].value;
        debug_assert_eq!(xv.len(), w.len());
        let mut s = T::zero();
        for (&a, &b) in xv.iter().zip(w.iter()) {
            s = s + a * b;
        }
        let needs = self.nodes[x.0].needs_grad;
        self.push(
            ndarray::arr1(&[s]).into_dyn(),
            Op::DotConst { x, w },
            needs,
        )
    }

    /// Mean over every element, producing a scalar node.
    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let per = self.mean_per_sample(x);
        let b = self.nodes[per.0].value.len();
        let w = Array1::from_elem(b, T::lit(1.0 / b as f64));
        self.dot_const(per, w)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, root: NodeId) -> Gradients<T> {
        assert_eq!(
            self.nodes[root.0].value.len(),
            1,
            "backward root must be scalar"
        );
        let mut grads: Vec<Option<ArrayD<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(ArrayD::from_elem(
            self.nodes[root.0].value.raw_dim(),
            T::one(),
        ));

        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accum(&self, grads: &mut [Option<ArrayD<T>>], id: NodeId, delta: ArrayD<T>) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, i: usize, g: &ArrayD<T>, grads: &mut [Option<ArrayD<T>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d { x, w, stride, pad } => {
                let gv = g.view().into_dimensionality().unwrap();
                let xv = self.nodes[x.0].value.view().into_dimensionality().unwrap();
                let wv = self.nodes[w.0].value.view().into_dimensionality().unwrap();
                if self.nodes[x.0].needs_grad {
                    let (_, _, h, wd) = xv.dim();
                    let gx = kernels::conv2d_grad_input(&gv, &wv, *stride, *pad, h, wd);
                    self.accum(grads, *x, gx.into_dyn());
                }
                if self.nodes[w.0].needs_grad {
                    let (_, _, kh, kw) = wv.dim();
                    let gw = kernels::conv2d_grad_weight(&xv, &gv, *stride, *pad, kh, kw);
                    self.accum(grads, *w, gw.into_dyn());
                }
            }
            Op::BiasChannel { x, b } => {
                self.accum(grads, *x, g.clone());
                if self.nodes[b.0].needs_grad {
                    let c = self.nodes[b.0].value.len();
                    let mut gb = Array1::<T>::zeros(c);
                    for (ci, lane) in g.axis_iter(Axis(1)).enumerate() {
                        let mut s = T::zero();
                        for &e in lane.iter() {
                            s = s + e;
                        }
                        gb[ci] = s;
                    }
                    self.accum(grads, *b, gb.into_dyn());
                }
            }
            Op::Matmul { x, w } => {
                let gv: ndarray::ArrayView2<T> = g.view().into_dimensionality().unwrap();
                let xv: ndarray::ArrayView2<T> =
                    self.nodes[x.0].value.view().into_dimensionality().unwrap();
                let wv: ndarray::ArrayView2<T> =
                    self.nodes[w.0].value.view().into_dimensionality().unwrap();
                if self.nodes[x.0].needs_grad {
                    let mut gx = ndarray::Array2::<T>::zeros(xv.raw_dim());
                    ndarray::linalg::general_mat_mul(T::one(), &gv, &wv.t(), T::zero(), &mut gx);
                    self.accum(grads, *x, gx.into_dyn());
                }
                if self.nodes[w.0].needs_grad {
                    let mut gw = ndarray::Array2::<T>::zeros(wv.raw_dim());
                    ndarray::linalg::general_mat_mul(T::one(), &xv.t(), &gv, T::zero(), &mut gw);
                    self.accum(grads, *w, gw.into_dyn());
                }
            }
            Op::BiasRow { x, b } => {
                self.accum(grads, *x, g.clone());
                if self.nodes[b.0].needs_grad {
                    let o = self.nodes[b.0].value.len();
                    let mut gb = Array1::<T>::zeros(o);
                    for row in g.axis_iter(Axis(0)) {
                        for (acc, &e) in gb.iter_mut().zip(row.iter()) {
                            *acc = *acc + e;
                        }
                    }
                    self.accum(grads, *b, gb.into_dyn());
                }
            }
            Op::LeakyRelu { x, alpha } => {
                let xv = &self.nodes[x.0].value;
                let gx = ndarray::Zip::from(g)
                    .and(xv)
                    .map_collect(|&gi, &xi| if xi > T::zero() { gi } else { gi * *alpha });
                self.accum(grads, *x, gx);
            }
            Op::Tanh { x } => {
                let yv = &self.nodes[i].value;
                let gx = ndarray::Zip::from(g)
                    .and(yv)
                    .map_collect(|&gi, &yi| gi * (T::one() - yi * yi));
                self.accum(grads, *x, gx);
            }
            Op::Upsample2 { x } => {
                let gx = kernels::upsample2_grad(&g.view().into_dimensionality().unwrap());
                self.accum(grads, *x, gx.into_dyn());
            }
            Op::AvgPool { x, k } => {
                let gx = kernels::avg_pool_grad(&g.view().into_dimensionality().unwrap(), *k);
                self.accum(grads, *x, gx.into_dyn());
            }
            Op::MaxPool2 { x, argmax } => {
                let dim = self.nodes[x.0].value.shape();
                let gx = kernels::max_pool2_grad(
                    &g.view().into_dimensionality().unwrap(),
                    argmax,
                    (dim[0], dim[1], dim[2], dim[3]),
                );
                self.accum(grads, *x, gx.into_dyn());
            }
            Op::Concat { parts, axis } => {
                let mut offset = 0;
                for part in parts {
                    let len = self.nodes[part.0].value.shape()[*axis];
                    let gp = g
                        .slice_axis(Axis(*axis), ndarray::Slice::from(offset..offset + len))
                        .to_owned();
                    self.accum(grads, *part, gp);
                    offset += len;
                }
            }
            Op::Reshape { x } => {
                let shape = self.nodes[x.0].value.shape().to_vec();
                let gx = g
                    .as_standard_layout()
                    .to_owned()
                    .into_shape_with_order(IxDyn(&shape))
                    .expect("reshape grad");
                self.accum(grads, *x, gx);
            }
            Op::Add { a, b } => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.clone());
            }
            Op::Sub { a, b } => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.mapv(|e| T::zero() - e));
            }
            Op::Mul { a, b } => {
                if self.nodes[a.0].needs_grad {
                    self.accum(grads, *a, g * &self.nodes[b.0].value);
                }
                if self.nodes[b.0].needs_grad {
                    self.accum(grads, *b, g * &self.nodes[a.0].value);
                }
            }
            Op::MulConst { x, c } => {
                self.accum(grads, *x, g * c);
            }
            Op::Scale { x, c } => {
                self.accum(grads, *x, g.mapv(|e| e * *c));
            }
            Op::Abs { x } => {
                let xv = &self.nodes[x.0].value;
                let gx = ndarray::Zip::from(g).and(xv).map_collect(|&gi, &xi| {
                    if xi > T::zero() {
                        gi
                    } else if xi < T::zero() {
                        T::zero() - gi
                    } else {
                        T::zero()
                    }
                });
                self.accum(grads, *x, gx);
            }
            Op::MeanPerSample { x } => {
                let xv = &self.nodes[x.0].value;
                let b = xv.shape()[0];
                let count = xv.len() / b;
                let norm = T::lit(1.0 / count as f64);
                let mut gx = ArrayD::<T>::zeros(xv.raw_dim());
                for (bi, mut sample) in gx.axis_iter_mut(Axis(0)).enumerate() {
                    let gi = g[[bi]] * norm;
                    sample.mapv_inplace(|_| gi);
                }
                self.accum(grads, *x, gx);
            }
            Op::DotConst { x, w } => {
                let g0 = g.iter().next().copied().expect("scalar grad");
                let gx = w.mapv(|wi| wi * g0);
                self.accum(grads, *x, gx.into_dyn());
            }
        }
    }
}

#[cfg(test)]
mod tests;
