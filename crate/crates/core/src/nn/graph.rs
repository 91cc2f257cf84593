//! Tape-based reverse-mode automatic differentiation over
//! dynamic-dimension f64 arrays.
//!
//! A [`Graph`] is an append-only tape: every operation records its
//! inputs and returns a [`VarId`]. Because inputs always precede their
//! consumers, one reverse sweep over the tape propagates gradients.
//! Nodes fed only by constants are skipped during the sweep.

use ndarray::{concatenate, ArrayD, Axis, Ix2, IxDyn, Slice};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Scale(VarId, f64),
    AddScalar(VarId),
    Matmul(VarId, VarId),
    Bmm(VarId, VarId),
    Sum(VarId),
    Mean(VarId),
    SumAxis(VarId, usize),
    Reshape(VarId),
    Permute(VarId, Vec<usize>),
    Concat(Vec<VarId>, usize),
    SliceAxis(VarId, usize, usize, usize),
    LeakyRelu(VarId, f64),
    SqrtGuarded(VarId),
    ClampMin(VarId, f64),
}

#[derive(Debug)]
struct Node {
    value: ArrayD<f64>,
    op: Op,
    needs_grad: bool,
}

/// Append-only computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<ArrayD<f64>>>,
}

/// Numpy-style broadcast of two shapes, aligned from the right.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let ndim = a.len().max(b.len());
    let mut out = vec![0usize; ndim];
    for i in 0..ndim {
        let da = if i < ndim - a.len() { 1 } else { a[i - (ndim - a.len())] };
        let db = if i < ndim - b.len() { 1 } else { b[i - (ndim - b.len())] };
        assert!(
            da == db || da == 1 || db == 1,
            "shapes {a:?} and {b:?} do not broadcast"
        );
        out[i] = da.max(db);
    }
    out
}

/// Sums a gradient down to `shape`, undoing broadcasting.
fn reduce_grad_to_shape(grad: &ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    let mut g = grad.clone();
    while g.ndim() > shape.len() {
        g = g.sum_axis(Axis(0));
    }
    for (axis, &dim) in shape.iter().enumerate() {
        if dim == 1 && g.shape()[axis] != 1 {
            g = g.sum_axis(Axis(axis)).insert_axis(Axis(axis));
        }
    }
    g
}

fn accumulate(slot: &mut Option<ArrayD<f64>>, contribution: ArrayD<f64>) {
    match slot {
        Some(existing) => *existing += &contribution,
        None => *slot = Some(contribution),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op, needs_grad: bool) -> VarId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        VarId(self.nodes.len() - 1)
    }

    fn needs(&self, id: VarId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// A trainable input; gradients flow into it.
    pub fn leaf(&mut self, value: ArrayD<f64>) -> VarId {
        self.push(value, Op::Leaf, true)
    }

    /// A fixed input; the backward sweep skips it.
    pub fn constant(&mut self, value: ArrayD<f64>) -> VarId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: VarId) -> &ArrayD<f64> {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated by the last [`Graph::backward`] call.
    pub fn grad(&self, id: VarId) -> Option<&ArrayD<f64>> {
        self.grads[id.0].as_ref()
    }

    /// Scalar value of a 1-element node.
    pub fn scalar(&self, id: VarId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.len(), 1, "scalar() on a node with {} elements", v.len());
        *v.iter().next().unwrap()
    }

    // ----- elementwise -----

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let shape = broadcast_shape(self.value(a).shape(), self.value(b).shape());
        let av = self.value(a).broadcast(IxDyn(&shape)).expect("checked");
        let bv = self.value(b).broadcast(IxDyn(&shape)).expect("checked");
        let out = &av + &bv;
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        let shape = broadcast_shape(self.value(a).shape(), self.value(b).shape());
        let av = self.value(a).broadcast(IxDyn(&shape)).expect("checked");
        let bv = self.value(b).broadcast(IxDyn(&shape)).expect("checked");
        let out = &av - &bv;
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        let shape = broadcast_shape(self.value(a).shape(), self.value(b).shape());
        let av = self.value(a).broadcast(IxDyn(&shape)).expect("checked");
        let bv = self.value(b).broadcast(IxDyn(&shape)).expect("checked");
        let out = &av * &bv;
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: VarId, factor: f64) -> VarId {
        let out = self.value(a) * factor;
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, factor), ng)
    }

    pub fn add_scalar(&mut self, a: VarId, offset: f64) -> VarId {
        let out = self.value(a) + offset;
        let ng = self.needs(a);
        self.push(out, Op::AddScalar(a), ng)
    }

    // ----- linear algebra -----

    /// 2-D matrix product `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: VarId, b: VarId) -> VarId {
        let a2 = self
            .value(a)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("matmul lhs must be 2-D");
        let b2 = self
            .value(b)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("matmul rhs must be 2-D");
        assert_eq!(
            a2.ncols(),
            b2.nrows(),
            "matmul inner dims: {:?} x {:?}",
            a2.dim(),
            b2.dim()
        );
        let out = a2.dot(&b2).into_dyn();
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Matmul(a, b), ng)
    }

    /// Batched matrix product `[b, m, k] x [b, k, n] -> [b, m, n]`.
    pub fn bmm(&mut self, a: VarId, b: VarId) -> VarId {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.ndim(), 3, "bmm lhs must be 3-D");
        assert_eq!(bv.ndim(), 3, "bmm rhs must be 3-D");
        let (batch, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
        let (batch2, k2, n) = (bv.shape()[0], bv.shape()[1], bv.shape()[2]);
        assert_eq!(batch, batch2, "bmm batch dims differ");
        assert_eq!(k, k2, "bmm inner dims differ");
        let mut out = ArrayD::zeros(IxDyn(&[batch, m, n]));
        for i in 0..batch {
            let ai = av
                .index_axis(Axis(0), i)
                .into_dimensionality::<Ix2>()
                .unwrap();
            let bi = bv
                .index_axis(Axis(0), i)
                .into_dimensionality::<Ix2>()
                .unwrap();
            out.index_axis_mut(Axis(0), i).assign(&ai.dot(&bi));
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Bmm(a, b), ng)
    }

    // ----- reductions -----

    /// Sum of every element, as a 0-d array.
    pub fn sum(&mut self, a: VarId) -> VarId {
        let out = ndarray::arr0(self.value(a).sum()).into_dyn();
        let ng = self.needs(a);
        self.push(out, Op::Sum(a), ng)
    }

    /// Mean of every element, as a 0-d array.
    pub fn mean(&mut self, a: VarId) -> VarId {
        let out = ndarray::arr0(self.value(a).mean().expect("mean of empty array")).into_dyn();
        let ng = self.needs(a);
        self.push(out, Op::Mean(a), ng)
    }

    /// Sums out one axis.
    pub fn sum_axis(&mut self, a: VarId, axis: usize) -> VarId {
        let out = self.value(a).sum_axis(Axis(axis));
        let ng = self.needs(a);
        self.push(out, Op::SumAxis(a, axis), ng)
    }

    // ----- shape -----

    pub fn reshape(&mut self, a: VarId, shape: &[usize]) -> VarId {
        let out = self
            .value(a)
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape element count mismatch");
        let ng = self.needs(a);
        self.push(out, Op::Reshape(a), ng)
    }

    pub fn permute(&mut self, a: VarId, axes: &[usize]) -> VarId {
        let out = self
            .value(a)
            .clone()
            .permuted_axes(IxDyn(axes))
            .as_standard_layout()
            .to_owned();
        let ng = self.needs(a);
        self.push(out, Op::Permute(a, axes.to_vec()), ng)
    }

    pub fn concat(&mut self, parts: &[VarId], axis: usize) -> VarId {
        assert!(!parts.is_empty(), "concat of zero parts");
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = concatenate(Axis(axis), &views).expect("concat shape mismatch");
        let ng = parts.iter().any(|p| self.needs(*p));
        self.push(out, Op::Concat(parts.to_vec(), axis), ng)
    }

    pub fn slice_axis(&mut self, a: VarId, axis: usize, start: usize, len: usize) -> VarId {
        let out = self
            .value(a)
            .slice_axis(Axis(axis), Slice::from(start..start + len))
            .to_owned();
        let ng = self.needs(a);
        self.push(out, Op::SliceAxis(a, axis, start, len), ng)
    }

    /// Row `index` of a 2-D node, as a 1-D array.
    pub fn select_row(&mut self, a: VarId, index: usize) -> VarId {
        let cols = self.value(a).shape()[1];
        let sliced = self.slice_axis(a, 0, index, 1);
        self.reshape(sliced, &[cols])
    }

    // ----- nonlinearities -----

    pub fn leaky_relu(&mut self, a: VarId, slope: f64) -> VarId {
        let out = self.value(a).mapv(|v| if v > 0.0 { v } else { slope * v });
        let ng = self.needs(a);
        self.push(out, Op::LeakyRelu(a, slope), ng)
    }

    /// Elementwise square root with a zero-clamped input and a gradient
    /// that vanishes at the origin instead of diverging. NaN inputs stay
    /// NaN so divergence remains visible in downstream loss values.
    pub fn sqrt_guarded(&mut self, a: VarId) -> VarId {
        let out = self
            .value(a)
            .mapv(|v| (if v < 0.0 { 0.0 } else { v }).sqrt());
        let ng = self.needs(a);
        self.push(out, Op::SqrtGuarded(a), ng)
    }

    pub fn clamp_min(&mut self, a: VarId, min: f64) -> VarId {
        let out = self.value(a).mapv(|v| v.max(min));
        let ng = self.needs(a);
        self.push(out, Op::ClampMin(a, min), ng)
    }

    // ----- composite helpers -----

    /// Affine map over the last axis: `x [..., in] -> [..., out]`.
    pub fn linear(&mut self, x: VarId, weight: VarId, bias: Option<VarId>) -> VarId {
        let xshape = self.value(x).shape().to_vec();
        let (w_in, w_out) = {
            let w = self.value(weight);
            assert_eq!(w.ndim(), 2, "linear weight must be 2-D");
            (w.shape()[0], w.shape()[1])
        };
        let last = *xshape.last().expect("linear input must have an axis");
        assert_eq!(last, w_in, "linear: input width {last} vs weight {w_in}");
        let rows: usize = xshape[..xshape.len() - 1].iter().product();
        let flat = self.reshape(x, &[rows.max(1), last]);
        let mut y = self.matmul(flat, weight);
        if let Some(b) = bias {
            y = self.add(y, b);
        }
        let mut out_shape = xshape;
        *out_shape.last_mut().unwrap() = w_out;
        self.reshape(y, &out_shape)
    }

    // ----- backward -----

    /// Reverse sweep from a scalar loss node; gradients accumulate and
    /// are readable via [`Graph::grad`] until the next call.
    pub fn backward(&mut self, loss: VarId) {
        assert_eq!(
            self.nodes[loss.0].value.len(),
            1,
            "backward requires a scalar loss"
        );
        for g in self.grads.iter_mut() {
            *g = None;
        }
        let seed_shape = self.nodes[loss.0].value.raw_dim();
        self.grads[loss.0] = Some(ArrayD::ones(seed_shape));

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(gout) = self.grads[i].clone() else {
                continue;
            };
            match self.nodes[i].op.clone() {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    if self.needs(a) {
                        let c = reduce_grad_to_shape(&gout, self.value(a).shape());
                        accumulate(&mut self.grads[a.0], c);
                    }
                    if self.needs(b) {
                        let c = reduce_grad_to_shape(&gout, self.value(b).shape());
                        accumulate(&mut self.grads[b.0], c);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(a) {
                        let c = reduce_grad_to_shape(&gout, self.value(a).shape());
                        accumulate(&mut self.grads[a.0], c);
                    }
                    if self.needs(b) {
                        let c = reduce_grad_to_shape(&(-&gout), self.value(b).shape());
                        accumulate(&mut self.grads[b.0], c);
                    }
                }
                Op::Mul(a, b) => {
                    let shape = gout.shape().to_vec();
                    if self.needs(a) {
                        let bv = self.value(b).broadcast(IxDyn(&shape)).expect("checked");
                        let c = reduce_grad_to_shape(&(&gout * &bv), self.value(a).shape());
                        accumulate(&mut self.grads[a.0], c);
                    }
                    if self.needs(b) {
                        let av = self.value(a).broadcast(IxDyn(&shape)).expect("checked");
                        let c = reduce_grad_to_shape(&(&gout * &av), self.value(b).shape());
                        accumulate(&mut self.grads[b.0], c);
                    }
                }
                Op::Scale(a, f) => {
                    if self.needs(a) {
                        accumulate(&mut self.grads[a.0], &gout * f);
                    }
                }
                Op::AddScalar(a) => {
                    if self.needs(a) {
                        accumulate(&mut self.grads[a.0], gout.clone());
                    }
                }
                Op::Matmul(a, b) => {
                    let g2 = gout.view().into_dimensionality::<Ix2>().unwrap();
                    if self.needs(a) {
                        let b2 = self.value(b).view().into_dimensionality::<Ix2>().unwrap();
                        let c = g2.dot(&b2.t()).into_dyn();
                        accumulate(&mut self.grads[a.0], c);
                    }
                    if self.needs(b) {
                        let a2 = self.value(a).view().into_dimensionality::<Ix2>().unwrap();
                        let c = a2.t().dot(&g2).into_dyn();
                        accumulate(&mut self.grads[b.0], c);
                    }
                }
                Op::Bmm(a, b) => {
                    let batch = gout.shape()[0];
                    if self.needs(a) {
                        let mut c = ArrayD::zeros(self.value(a).raw_dim());
                        for t in 0..batch {
                            let gi = gout
                                .index_axis(Axis(0), t)
                                .into_dimensionality::<Ix2>()
                                .unwrap();
                            let bi = self
                                .value(b)
                                .index_axis(Axis(0), t)
                                .into_dimensionality::<Ix2>()
                                .unwrap();
                            c.index_axis_mut(Axis(0), t).assign(&gi.dot(&bi.t()));
                        }
                        accumulate(&mut self.grads[a.0], c);
                    }
                    if self.needs(b) {
                        let mut c = ArrayD::zeros(self.value(b).raw_dim());
                        for t in 0..batch {
                            let gi = gout
                                .index_axis(Axis(0), t)
                                .into_dimensionality::<Ix2>()
                                .unwrap();
                            let ai = self
                                .value(a)
                                .index_axis(Axis(0), t)
                                .into_dimensionality::<Ix2>()
                                .unwrap();
                            c.index_axis_mut(Axis(0), t).assign(&ai.t().dot(&gi));
                        }
                        accumulate(&mut self.grads[b.0], c);
                    }
                }
                Op::Sum(a) => {
                    if self.needs(a) {
                        let g = gout.iter().next().copied().unwrap();
                        let c = ArrayD::from_elem(self.value(a).raw_dim(), g);
                        accumulate(&mut self.grads[a.0], c);
                    }
                }
                Op::Mean(a) => {
                    if self.needs(a) {
                        let n = self.value(a).len() as f64;
                        let g = gout.iter().next().copied().unwrap() / n;
                        let c = ArrayD::from_elem(self.value(a).raw_dim(), g);
                        accumulate(&mut self.grads[a.0], c);
                    }
                }
                Op::SumAxis(a, axis) => {
                    if self.needs(a) {
                        let expanded = gout.clone().insert_axis(Axis(axis));
                        let c = expanded
                            .broadcast(self.value(a).raw_dim())
                            .expect("sum_axis grad broadcast")
                            .to_owned();
                        accumulate(&mut self.grads[a.0], c);
                    }
                }
                Op::Reshape(a) => {
                    if self.needs(a) {
                        let c = gout
                            .as_standard_layout()
                            .to_owned()
                            .into_shape_with_order(self.value(a).raw_dim())
                            .expect("reshape grad");
                        accumulate(&mut self.grads[a.0], c);
                    }
                }
                Op::Permute(a, axes) => {
                    if self.needs(a) {
                        let mut inverse = vec![0usize; axes.len()];
                        for (to, &from) in axes.iter().enumerate() {
                            inverse[from] = to;
                        }
                        let c = gout
                            .clone()
                            .permuted_axes(IxDyn(&inverse))
                            .as_standard_layout()
                            .to_owned();
                        accumulate(&mut self.grads[a.0], c);
                    }
                }
                Op::Concat(parts, axis) => {
                    let mut offset = 0usize;
                    for p in parts {
                        let len = self.value(p).shape()[axis];
                        if self.needs(p) {
                            let c = gout
                                .slice_axis(Axis(axis), Slice::from(offset..offset + len))
                                .to_owned();
                            accumulate(&mut self.grads[p.0], c);
                        }
                        offset += len;
                    }
                }
                Op::SliceAxis(a, axis, start, len) => {
                    if self.needs(a) {
                        let mut c = ArrayD::zeros(self.value(a).raw_dim());
                        c.slice_axis_mut(Axis(axis), Slice::from(start..start + len))
                            .assign(&gout);
                        accumulate(&mut self.grads[a.0], c);
                    }
                }
                Op::LeakyRelu(a, slope) => {
                    if self.needs(a) {
                        let mask = self.value(a).mapv(|v| if v > 0.0 { 1.0 } else { slope });
                        accumulate(&mut self.grads[a.0], &gout * &mask);
                    }
                }
                Op::SqrtGuarded(a) => {
                    if self.needs(a) {
                        // d sqrt(x) = 0.5 / sqrt(x), forced to 0 at the origin
                        let y = &self.nodes[i].value;
                        let factor = y.mapv(|v| if v > 1e-12 { 0.5 / v } else { 0.0 });
                        accumulate(&mut self.grads[a.0], &gout * &factor);
                    }
                }
                Op::ClampMin(a, min) => {
                    if self.needs(a) {
                        let mask = self.value(a).mapv(|v| if v > min { 1.0 } else { 0.0 });
                        accumulate(&mut self.grads[a.0], &gout * &mask);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{ArrayD, IxDyn};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(-1.5..1.5))
    }

    /// Central-difference gradient of `f` at `x`, element by element.
    fn numeric_grad(
        x: &ArrayD<f64>,
        f: &dyn Fn(&ArrayD<f64>) -> f64,
        eps: f64,
    ) -> ArrayD<f64> {
        let mut g = ArrayD::zeros(x.raw_dim());
        let flat: Vec<f64> = x.iter().copied().collect();
        for i in 0..flat.len() {
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus.as_slice_mut().unwrap()[i] += eps;
            minus.as_slice_mut().unwrap()[i] -= eps;
            g.as_slice_mut().unwrap()[i] = (f(&plus) - f(&minus)) / (2.0 * eps);
        }
        g
    }

    fn assert_grads_close(analytic: &ArrayD<f64>, numeric: &ArrayD<f64>, tol: f64) {
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
            assert!(rel < tol, "grad mismatch: analytic {a}, numeric {n}");
        }
    }

    /// Checks d(loss)/d(x0) for a scalar-valued builder applied to one
    /// variable input (other inputs captured as constants).
    fn check_unary(build: impl Fn(&mut Graph, VarId) -> VarId, x0: ArrayD<f64>) {
        let mut g = Graph::new();
        let x = g.leaf(x0.clone());
        let loss = build(&mut g, x);
        g.backward(loss);
        let analytic = g.grad(x).expect("leaf received a gradient").clone();

        let f = |xv: &ArrayD<f64>| {
            let mut g = Graph::new();
            let x = g.leaf(xv.clone());
            let loss = build(&mut g, x);
            g.scalar(loss)
        };
        let numeric = numeric_grad(&x0, &f, 1e-5);
        assert_grads_close(&analytic, &numeric, 1e-6);
    }

    #[test]
    fn add_broadcast_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b0 = randn(&mut rng, &[4]);
        let x0 = randn(&mut rng, &[3, 4]);
        check_unary(
            move |g, x| {
                let b = g.leaf(b0.clone());
                let y = g.add(x, b);
                let y2 = g.mul(y, y);
                g.sum(y2)
            },
            x0,
        );
        // and the broadcast side
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a0 = randn(&mut rng, &[3, 4]);
        let b0 = randn(&mut rng, &[4]);
        let mut g = Graph::new();
        let a = g.constant(a0.clone());
        let b = g.leaf(b0.clone());
        let y = g.add(a, b);
        let y2 = g.mul(y, y);
        let loss = g.sum(y2);
        g.backward(loss);
        let analytic = g.grad(b).unwrap().clone();
        let f = |bv: &ArrayD<f64>| {
            let mut g = Graph::new();
            let a = g.constant(a0.clone());
            let b = g.leaf(bv.clone());
            let y = g.add(a, b);
            let y2 = g.mul(y, y);
            let loss = g.sum(y2);
            g.scalar(loss)
        };
        let numeric = numeric_grad(&b0, &f, 1e-5);
        assert_grads_close(&analytic, &numeric, 1e-6);
    }

    #[test]
    fn matmul_gradients_both_sides() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a0 = randn(&mut rng, &[3, 5]);
        let b0 = randn(&mut rng, &[5, 2]);

        let mut g = Graph::new();
        let a = g.leaf(a0.clone());
        let b = g.leaf(b0.clone());
        let y = g.matmul(a, b);
        let y2 = g.mul(y, y);
        let loss = g.mean(y2);
        g.backward(loss);
        let ga = g.grad(a).unwrap().clone();
        let gb = g.grad(b).unwrap().clone();

        let fa = |av: &ArrayD<f64>| {
            let mut g = Graph::new();
            let a = g.leaf(av.clone());
            let b = g.constant(b0.clone());
            let y = g.matmul(a, b);
            let y2 = g.mul(y, y);
            let loss = g.mean(y2);
            g.scalar(loss)
        };
        let fb = |bv: &ArrayD<f64>| {
            let mut g = Graph::new();
            let a = g.constant(a0.clone());
            let b = g.leaf(bv.clone());
            let y = g.matmul(a, b);
            let y2 = g.mul(y, y);
            let loss = g.mean(y2);
            g.scalar(loss)
        };
        assert_grads_close(&ga, &numeric_grad(&a0, &fa, 1e-5), 1e-6);
        assert_grads_close(&gb, &numeric_grad(&b0, &fb, 1e-5), 1e-6);
    }

    #[test]
    fn bmm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b0 = randn(&mut rng, &[2, 4, 3]);
        let x0 = randn(&mut rng, &[2, 3, 2]);
        check_unary(
            move |g, x| {
                let a = g.leaf(b0.clone());
                let y = g.bmm(a, x);
                let y2 = g.mul(y, y);
                g.sum(y2)
            },
            x0,
        );
    }

    #[test]
    fn shape_ops_chain_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x0 = randn(&mut rng, &[2, 3, 4]);
        check_unary(
            |g, x| {
                let p = g.permute(x, &[2, 0, 1]); // [4, 2, 3]
                let r = g.reshape(p, &[4, 6]);
                let s = g.slice_axis(r, 1, 1, 4); // [4, 4]
                let sq = g.mul(s, s);
                g.sum(sq)
            },
            x0,
        );
    }

    #[test]
    fn concat_routes_gradients_to_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a0 = randn(&mut rng, &[2, 3]);
        let b0 = randn(&mut rng, &[2, 2]);
        let mut g = Graph::new();
        let a = g.leaf(a0.clone());
        let b = g.leaf(b0.clone());
        let c = g.concat(&[a, b], 1);
        let c2 = g.mul(c, c);
        let loss = g.sum(c2);
        g.backward(loss);
        assert_abs_diff_eq!(g.grad(a).unwrap()[[0, 0]], 2.0 * a0[[0, 0]], epsilon = 1e-10);
        assert_abs_diff_eq!(g.grad(b).unwrap()[[1, 1]], 2.0 * b0[[1, 1]], epsilon = 1e-10);
    }

    #[test]
    fn nonlinearity_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x0 = randn(&mut rng, &[3, 3]);
        check_unary(
            |g, x| {
                let y = g.leaky_relu(x, 0.1);
                g.sum(y)
            },
            x0.clone(),
        );
        // sqrt over strictly positive values
        let pos = x0.mapv(|v| v.abs() + 0.5);
        check_unary(
            |g, x| {
                let y = g.sqrt_guarded(x);
                g.sum(y)
            },
            pos,
        );
        check_unary(
            |g, x| {
                let y = g.clamp_min(x, 0.2);
                let y2 = g.mul(y, y);
                g.sum(y2)
            },
            x0,
        );
    }

    #[test]
    fn sqrt_gradient_is_finite_at_zero() {
        let mut g = Graph::new();
        let x = g.leaf(ndarray::arr1(&[0.0, 4.0]).into_dyn());
        let y = g.sqrt_guarded(x);
        let loss = g.sum(y);
        g.backward(loss);
        let grad = g.grad(x).unwrap();
        assert_eq!(grad[[0]], 0.0);
        assert_abs_diff_eq!(grad[[1]], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn reused_node_accumulates_gradient() {
        // loss = sum(x * x) + sum(x) => d/dx = 2x + 1
        let x0 = ndarray::arr1(&[1.5, -2.0]).into_dyn();
        let mut g = Graph::new();
        let x = g.leaf(x0.clone());
        let sq = g.mul(x, x);
        let s1 = g.sum(sq);
        let s2 = g.sum(x);
        let loss = g.add(s1, s2);
        g.backward(loss);
        let grad = g.grad(x).unwrap();
        assert_abs_diff_eq!(grad[[0]], 2.0 * 1.5 + 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(grad[[1]], 2.0 * -2.0 + 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(ndarray::arr1(&[1.0, 2.0]).into_dyn());
        let x = g.leaf(ndarray::arr1(&[3.0, 4.0]).into_dyn());
        let y = g.mul(c, x);
        let loss = g.sum(y);
        g.backward(loss);
        assert!(g.grad(c).is_none());
        assert!(g.grad(x).is_some());
    }

    #[test]
    fn linear_helper_matches_manual_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x0 = randn(&mut rng, &[2, 3, 4]);
        let w0 = randn(&mut rng, &[4, 5]);
        let b0 = randn(&mut rng, &[5]);
        let mut g = Graph::new();
        let x = g.constant(x0.clone());
        let w = g.leaf(w0.clone());
        let b = g.leaf(b0.clone());
        let y = g.linear(x, w, Some(b));
        assert_eq!(g.value(y).shape(), &[2, 3, 5]);
        for i in 0..2 {
            for j in 0..3 {
                for o in 0..5 {
                    let want: f64 =
                        (0..4).map(|k| x0[[i, j, k]] * w0[[k, o]]).sum::<f64>() + b0[[o]];
                    assert_abs_diff_eq!(g.value(y)[[i, j, o]], want, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn select_row_gradient_hits_one_row() {
        let x0 = ndarray::arr2(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).into_dyn();
        let mut g = Graph::new();
        let x = g.leaf(x0);
        let row = g.select_row(x, 1);
        let loss = g.sum(row);
        g.backward(loss);
        let grad = g.grad(x).unwrap();
        assert_eq!(grad[[0, 0]], 0.0);
        assert_eq!(grad[[1, 0]], 1.0);
        assert_eq!(grad[[1, 1]], 1.0);
        assert_eq!(grad[[2, 1]], 0.0);
    }

    #[test]
    fn sum_axis_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x0 = randn(&mut rng, &[3, 4, 2]);
        check_unary(
            |g, x| {
                let s = g.sum_axis(x, 1); // [3, 2]
                let sq = g.mul(s, s);
                g.mean(sq)
            },
            x0,
        );
    }
}
