//! Reverse-mode automatic differentiation over `ndarray` tensors.
//!
//! Define-by-run: every op constructor computes its value eagerly and, when
//! gradient recording is enabled and an input requires gradients, records the
//! op and its inputs. [`grad_arrays`] runs plain backpropagation;
//! [`grad_vars`] with `create_graph` builds the backward pass out of the same
//! recorded ops, so gradients are themselves differentiable (needed for the
//! gradient penalty, which backpropagates through an input gradient).
//!
//! The op set is small and closed under differentiation: elementwise
//! arithmetic and nonlinearities, reductions/broadcasts, shape ops, reflect
//! padding and the conv2d / conv_transpose2d / conv_wgrad triangle.

pub mod conv;
pub mod gradcheck;

use std::cell::{Cell, RefCell};
use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with gradient recording disabled (inference mode).
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    with_grad_mode(false, f)
}

fn with_grad_mode<R>(enabled: bool, f: impl FnOnce() -> R) -> R {
    GRAD_ENABLED.with(|cell| {
        let prev = cell.get();
        cell.set(enabled);
        let out = f();
        cell.set(prev);
        out
    })
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|cell| cell.get())
}

// Some parameter fields are consumed eagerly in the constructors and kept
// only so `Debug` prints the full op signature.
#[allow(dead_code)]
#[derive(Debug, Clone)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    AddScalar(f64),
    MulScalar(f64),
    PowScalar(f64),
    Exp,
    Ln,
    Sqrt,
    Abs,
    Tanh,
    Relu,
    LeakyRelu(f64),
    SumAll,
    MeanAll,
    BroadcastScalar(Vec<usize>),
    SpatialSum,
    SpatialBroadcast(usize, usize),
    BiasBroadcast(usize, usize, usize),
    BiasReduce,
    Reshape(Vec<usize>),
    Narrow { axis: usize, start: usize, len: usize },
    ZeroEmbed { axis: usize, start: usize, full: usize },
    Concat { axis: usize },
    PadReflect(usize),
    PadReflectAdjoint(usize),
    Conv2d { stride: usize, pad: usize },
    ConvTranspose2d { stride: usize, pad: usize },
    ConvWGrad { stride: usize, pad: usize, kh: usize, kw: usize },
}

struct Recorded<F: Scalar> {
    op: Op,
    inputs: Vec<Var<F>>,
}

struct Inner<F: Scalar> {
    id: u64,
    value: RefCell<ArrayD<F>>,
    requires_grad: bool,
    recorded: Option<Recorded<F>>,
}

/// A tensor in the autodiff graph. Cloning is cheap (reference counted).
pub struct Var<F: Scalar> {
    inner: Rc<Inner<F>>,
}

impl<F: Scalar> Clone for Var<F> {
    fn clone(&self) -> Self {
        Self { inner: Rc::clone(&self.inner) }
    }
}

impl<F: Scalar> std::fmt::Debug for Var<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Var(id={}, shape={:?}, requires_grad={})",
            self.inner.id,
            self.shape(),
            self.inner.requires_grad
        )
    }
}

impl<F: Scalar> Var<F> {
    fn new(value: ArrayD<F>, requires_grad: bool, recorded: Option<Recorded<F>>) -> Self {
        Self {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                value: RefCell::new(value),
                requires_grad,
                recorded,
            }),
        }
    }

    /// Trainable leaf.
    pub fn param(value: ArrayD<F>) -> Self {
        Self::new(value, true, None)
    }

    /// Constant leaf; gradients do not flow into it.
    pub fn constant(value: ArrayD<F>) -> Self {
        Self::new(value, false, None)
    }

    pub fn scalar(v: F) -> Self {
        Self::constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.value.borrow().shape().to_vec()
    }

    pub fn value(&self) -> ArrayD<F> {
        self.inner.value.borrow().clone()
    }

    /// Scalar payload of a 0-d tensor.
    pub fn scalar_value(&self) -> F {
        let v = self.inner.value.borrow();
        debug_assert_eq!(v.ndim(), 0, "scalar_value on non-scalar tensor");
        *v.iter().next().expect("0-d tensor has one element")
    }

    pub fn len(&self) -> usize {
        self.inner.value.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Overwrites the value of a leaf in place (optimizer updates).
    pub fn assign(&self, value: &ArrayD<F>) {
        debug_assert!(self.inner.recorded.is_none(), "assign on non-leaf tensor");
        self.inner.value.borrow_mut().assign(value);
    }

    /// Applies `f` to the leaf value in place.
    pub fn update_value(&self, f: impl FnOnce(&mut ArrayD<F>)) {
        debug_assert!(self.inner.recorded.is_none(), "update on non-leaf tensor");
        f(&mut self.inner.value.borrow_mut());
    }

    /// Same value, detached from the graph.
    pub fn detach(&self) -> Self {
        Self::constant(self.value())
    }

    fn make(op: Op, inputs: Vec<Var<F>>, value: ArrayD<F>) -> Self {
        let track = grad_enabled() && inputs.iter().any(|v| v.inner.requires_grad);
        if track {
            Self::new(value, true, Some(Recorded { op, inputs }))
        } else {
            Self::new(value, false, None)
        }
    }

    fn binary_same_shape(&self, other: &Self, op: Op) -> Self {
        let a = self.inner.value.borrow();
        let b = other.inner.value.borrow();
        assert_eq!(a.shape(), b.shape(), "elementwise op on mismatched shapes");
        let value = match op {
            Op::Add => &*a + &*b,
            Op::Sub => &*a - &*b,
            Op::Mul => &*a * &*b,
            Op::Div => &*a / &*b,
            _ => unreachable!(),
        };
        drop(a);
        drop(b);
        Self::make(op, vec![self.clone(), other.clone()], value)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.binary_same_shape(other, Op::Add)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.binary_same_shape(other, Op::Sub)
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.binary_same_shape(other, Op::Mul)
    }

    pub fn div(&self, other: &Self) -> Self {
        self.binary_same_shape(other, Op::Div)
    }

    fn unary(&self, op: Op) -> Self {
        let value = {
            let a = self.inner.value.borrow();
            match &op {
                Op::Neg => a.mapv(|v| -v),
                Op::AddScalar(c) => {
                    let c = F::of_f64(*c);
                    a.mapv(|v| v + c)
                }
                Op::MulScalar(c) => {
                    let c = F::of_f64(*c);
                    a.mapv(|v| v * c)
                }
                Op::PowScalar(p) => {
                    let p = F::of_f64(*p);
                    a.mapv(|v| v.powf(p))
                }
                Op::Exp => a.mapv(|v| v.exp()),
                Op::Ln => a.mapv(|v| v.ln()),
                Op::Sqrt => a.mapv(|v| v.sqrt()),
                Op::Abs => a.mapv(|v| v.abs()),
                Op::Tanh => a.mapv(|v| v.tanh()),
                Op::Relu => a.mapv(|v| if v > F::zero() { v } else { F::zero() }),
                Op::LeakyRelu(s) => {
                    let s = F::of_f64(*s);
                    a.mapv(|v| if v > F::zero() { v } else { v * s })
                }
                _ => unreachable!(),
            }
        };
        Self::make(op, vec![self.clone()], value)
    }

    pub fn neg(&self) -> Self {
        self.unary(Op::Neg)
    }

    pub fn add_scalar(&self, c: f64) -> Self {
        self.unary(Op::AddScalar(c))
    }

    pub fn mul_scalar(&self, c: f64) -> Self {
        self.unary(Op::MulScalar(c))
    }

    /// Elementwise `x^p`; for fractional `p` the input must be non-negative.
    pub fn pow_scalar(&self, p: f64) -> Self {
        self.unary(Op::PowScalar(p))
    }

    pub fn exp(&self) -> Self {
        self.unary(Op::Exp)
    }

    pub fn ln(&self) -> Self {
        self.unary(Op::Ln)
    }

    pub fn sqrt(&self) -> Self {
        self.unary(Op::Sqrt)
    }

    pub fn abs(&self) -> Self {
        self.unary(Op::Abs)
    }

    pub fn tanh(&self) -> Self {
        self.unary(Op::Tanh)
    }

    pub fn relu(&self) -> Self {
        self.unary(Op::Relu)
    }

    pub fn leaky_relu(&self, slope: f64) -> Self {
        self.unary(Op::LeakyRelu(slope))
    }

    pub fn square(&self) -> Self {
        self.mul(self)
    }

    /// Sum of all elements as a 0-d tensor.
    pub fn sum_all(&self) -> Self {
        let value = ArrayD::from_elem(IxDyn(&[]), self.inner.value.borrow().iter().copied().sum::<F>());
        Self::make(Op::SumAll, vec![self.clone()], value)
    }

    /// Mean of all elements as a 0-d tensor.
    pub fn mean_all(&self) -> Self {
        let a = self.inner.value.borrow();
        let n = F::from_usize(a.len()).unwrap();
        let value = ArrayD::from_elem(IxDyn(&[]), a.iter().copied().sum::<F>() / n);
        drop(a);
        Self::make(Op::MeanAll, vec![self.clone()], value)
    }

    /// Broadcast of a 0-d tensor to `shape`.
    pub fn broadcast_scalar(&self, shape: &[usize]) -> Self {
        let v = self.scalar_value();
        let value = ArrayD::from_elem(IxDyn(shape), v);
        Self::make(Op::BroadcastScalar(shape.to_vec()), vec![self.clone()], value)
    }

    /// `[N,C,H,W]` → `[N,C,1,1]` sum over the spatial axes.
    pub fn spatial_sum(&self) -> Self {
        let a = self.inner.value.borrow();
        let shape = a.shape();
        assert_eq!(shape.len(), 4, "spatial_sum expects NCHW");
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let mut out = ArrayD::<F>::zeros(IxDyn(&[n, c, 1, 1]));
        for ni in 0..n {
            for ci in 0..c {
                let mut acc = F::zero();
                for y in 0..h {
                    for x in 0..w {
                        acc = acc + a[[ni, ci, y, x]];
                    }
                }
                out[[ni, ci, 0, 0]] = acc;
            }
        }
        drop(a);
        Self::make(Op::SpatialSum, vec![self.clone()], out)
    }

    /// `[N,C,1,1]` → `[N,C,H,W]` broadcast over the spatial axes.
    pub fn spatial_broadcast(&self, h: usize, w: usize) -> Self {
        let a = self.inner.value.borrow();
        let shape = a.shape();
        assert_eq!(&shape[2..], &[1, 1], "spatial_broadcast expects [N,C,1,1]");
        let (n, c) = (shape[0], shape[1]);
        let mut out = ArrayD::<F>::zeros(IxDyn(&[n, c, h, w]));
        for ni in 0..n {
            for ci in 0..c {
                let v = a[[ni, ci, 0, 0]];
                for y in 0..h {
                    for x in 0..w {
                        out[[ni, ci, y, x]] = v;
                    }
                }
            }
        }
        drop(a);
        Self::make(Op::SpatialBroadcast(h, w), vec![self.clone()], out)
    }

    /// `[C]` → `[N,C,H,W]` broadcast (bias application).
    pub fn bias_broadcast(&self, n: usize, h: usize, w: usize) -> Self {
        let a = self.inner.value.borrow();
        assert_eq!(a.ndim(), 1, "bias_broadcast expects [C]");
        let c = a.len();
        let mut out = ArrayD::<F>::zeros(IxDyn(&[n, c, h, w]));
        for ni in 0..n {
            for ci in 0..c {
                let v = a[[ci]];
                for y in 0..h {
                    for x in 0..w {
                        out[[ni, ci, y, x]] = v;
                    }
                }
            }
        }
        drop(a);
        Self::make(Op::BiasBroadcast(n, h, w), vec![self.clone()], out)
    }

    /// `[N,C,H,W]` → `[C]` sum over batch and spatial axes.
    pub fn bias_reduce(&self) -> Self {
        let a = self.inner.value.borrow();
        let shape = a.shape();
        assert_eq!(shape.len(), 4, "bias_reduce expects NCHW");
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let mut out = ArrayD::<F>::zeros(IxDyn(&[c]));
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        out[[ci]] = out[[ci]] + a[[ni, ci, y, x]];
                    }
                }
            }
        }
        drop(a);
        Self::make(Op::BiasReduce, vec![self.clone()], out)
    }

    pub fn reshape(&self, shape: &[usize]) -> Self {
        let a = self.inner.value.borrow();
        let value = a
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape element count mismatch");
        drop(a);
        Self::make(Op::Reshape(shape.to_vec()), vec![self.clone()], value)
    }

    /// Slice of `len` indices starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Self {
        let a = self.inner.value.borrow();
        let value = a
            .slice_axis(ndarray::Axis(axis), ndarray::Slice::from(start..start + len))
            .to_owned();
        drop(a);
        Self::make(Op::Narrow { axis, start, len }, vec![self.clone()], value)
    }

    /// Embeds into a zero tensor whose `axis` has size `full`, writing at
    /// offset `start`; the adjoint of [`Var::narrow`].
    pub fn zero_embed(&self, axis: usize, start: usize, full: usize) -> Self {
        let a = self.inner.value.borrow();
        let mut shape = a.shape().to_vec();
        let len = shape[axis];
        shape[axis] = full;
        let mut out = ArrayD::<F>::zeros(IxDyn(&shape));
        out.slice_axis_mut(ndarray::Axis(axis), ndarray::Slice::from(start..start + len))
            .assign(&a);
        drop(a);
        Self::make(Op::ZeroEmbed { axis, start, full }, vec![self.clone()], out)
    }

    pub fn concat(&self, other: &Self, axis: usize) -> Self {
        let a = self.inner.value.borrow();
        let b = other.inner.value.borrow();
        let value = ndarray::concatenate(ndarray::Axis(axis), &[a.view(), b.view()])
            .expect("concat shape mismatch");
        drop(a);
        drop(b);
        Self::make(Op::Concat { axis }, vec![self.clone(), other.clone()], value)
    }

    pub fn pad_reflect(&self, pad: usize) -> Self {
        let a = self.inner.value.borrow();
        let a4 = a.view().into_dimensionality::<ndarray::Ix4>().expect("NCHW");
        let value = conv::pad_reflect(&a4, pad).expect("reflect pad").into_dyn();
        drop(a);
        Self::make(Op::PadReflect(pad), vec![self.clone()], value)
    }

    fn pad_reflect_adjoint(&self, pad: usize) -> Self {
        let a = self.inner.value.borrow();
        let a4 = a.view().into_dimensionality::<ndarray::Ix4>().expect("NCHW");
        let value = conv::pad_reflect_adjoint(&a4, pad).expect("reflect adjoint").into_dyn();
        drop(a);
        Self::make(Op::PadReflectAdjoint(pad), vec![self.clone()], value)
    }

    /// Zero-padded strided convolution; `self` is NCHW, `weight` is
    /// `[Co, Ci, kh, kw]`.
    pub fn conv2d(&self, weight: &Self, stride: usize, pad: usize) -> Self {
        let a = self.inner.value.borrow();
        let w = weight.inner.value.borrow();
        let a4 = a.view().into_dimensionality::<ndarray::Ix4>().expect("NCHW input");
        let w4 = w.view().into_dimensionality::<ndarray::Ix4>().expect("OIHW weight");
        let value = conv::conv2d(&a4, &w4, stride, pad).expect("conv2d").into_dyn();
        drop(a);
        drop(w);
        Self::make(Op::Conv2d { stride, pad }, vec![self.clone(), weight.clone()], value)
    }

    /// Transposed convolution (fractionally strided); adjoint of
    /// [`Var::conv2d`] with the same geometry.
    pub fn conv_transpose2d(&self, weight: &Self, stride: usize, pad: usize) -> Self {
        let a = self.inner.value.borrow();
        let w = weight.inner.value.borrow();
        let a4 = a.view().into_dimensionality::<ndarray::Ix4>().expect("NCHW input");
        let w4 = w.view().into_dimensionality::<ndarray::Ix4>().expect("OIHW weight");
        let value = conv::conv_transpose2d(&a4, &w4, stride, pad)
            .expect("conv_transpose2d")
            .into_dyn();
        drop(a);
        drop(w);
        Self::make(
            Op::ConvTranspose2d { stride, pad },
            vec![self.clone(), weight.clone()],
            value,
        )
    }

    /// Weight gradient of [`Var::conv2d`]: `self` is the conv input, `gy` the
    /// output cotangent.
    pub fn conv_wgrad(&self, gy: &Self, stride: usize, pad: usize, kh: usize, kw: usize) -> Self {
        let a = self.inner.value.borrow();
        let g = gy.inner.value.borrow();
        let a4 = a.view().into_dimensionality::<ndarray::Ix4>().expect("NCHW input");
        let g4 = g.view().into_dimensionality::<ndarray::Ix4>().expect("NCHW cotangent");
        let value = conv::conv_wgrad(&a4, &g4, stride, pad, kh, kw)
            .expect("conv_wgrad")
            .into_dyn();
        drop(a);
        drop(g);
        Self::make(
            Op::ConvWGrad { stride, pad, kh, kw },
            vec![self.clone(), gy.clone()],
            value,
        )
    }

    /// 0/1 (or slope) derivative masks detached from the graph; piecewise
    /// constant, so treating them as constants is exact almost everywhere.
    fn const_mask(&self, f: impl Fn(F) -> F) -> Self {
        Self::constant(self.inner.value.borrow().mapv(f))
    }
}

/// Vector-Jacobian products, each expressed through the public op
/// constructors so the backward pass is itself differentiable.
fn vjp<F: Scalar>(rec: &Recorded<F>, output: &Var<F>, grad: &Var<F>) -> Vec<Option<Var<F>>> {
    let ins = &rec.inputs;
    match &rec.op {
        Op::Add => vec![Some(grad.clone()), Some(grad.clone())],
        Op::Sub => vec![Some(grad.clone()), Some(grad.neg())],
        Op::Mul => vec![Some(grad.mul(&ins[1])), Some(grad.mul(&ins[0]))],
        Op::Div => {
            let ga = grad.div(&ins[1]);
            let gb = grad.mul(&ins[0]).div(&ins[1].mul(&ins[1])).neg();
            vec![Some(ga), Some(gb)]
        }
        Op::Neg => vec![Some(grad.neg())],
        Op::AddScalar(_) => vec![Some(grad.clone())],
        Op::MulScalar(c) => vec![Some(grad.mul_scalar(*c))],
        Op::PowScalar(p) => {
            let d = ins[0].pow_scalar(p - 1.0).mul_scalar(*p);
            vec![Some(grad.mul(&d))]
        }
        Op::Exp => vec![Some(grad.mul(output))],
        Op::Ln => vec![Some(grad.div(&ins[0]))],
        Op::Sqrt => vec![Some(grad.div(&output.mul_scalar(2.0)))],
        Op::Abs => {
            let mask = ins[0].const_mask(|v| {
                if v > F::zero() {
                    F::one()
                } else if v < F::zero() {
                    -F::one()
                } else {
                    F::zero()
                }
            });
            vec![Some(grad.mul(&mask))]
        }
        Op::Tanh => {
            let one_minus_sq = output.mul(output).neg().add_scalar(1.0);
            vec![Some(grad.mul(&one_minus_sq))]
        }
        Op::Relu => {
            let mask = ins[0].const_mask(|v| if v > F::zero() { F::one() } else { F::zero() });
            vec![Some(grad.mul(&mask))]
        }
        Op::LeakyRelu(s) => {
            let slope = F::of_f64(*s);
            let mask = ins[0].const_mask(|v| if v > F::zero() { F::one() } else { slope });
            vec![Some(grad.mul(&mask))]
        }
        Op::SumAll => vec![Some(grad.broadcast_scalar(&ins[0].shape()))],
        Op::MeanAll => {
            let n = ins[0].len() as f64;
            vec![Some(grad.broadcast_scalar(&ins[0].shape()).mul_scalar(1.0 / n))]
        }
        Op::BroadcastScalar(_) => vec![Some(grad.sum_all())],
        Op::SpatialSum => {
            let shape = ins[0].shape();
            vec![Some(grad.spatial_broadcast(shape[2], shape[3]))]
        }
        Op::SpatialBroadcast(_, _) => vec![Some(grad.spatial_sum())],
        Op::BiasBroadcast(_, _, _) => vec![Some(grad.bias_reduce())],
        Op::BiasReduce => {
            let shape = ins[0].shape();
            vec![Some(grad.bias_broadcast(shape[0], shape[2], shape[3]))]
        }
        Op::Reshape(_) => vec![Some(grad.reshape(&ins[0].shape()))],
        Op::Narrow { axis, start, .. } => {
            let full = ins[0].shape()[*axis];
            vec![Some(grad.zero_embed(*axis, *start, full))]
        }
        Op::ZeroEmbed { axis, start, .. } => {
            let len = ins[0].shape()[*axis];
            vec![Some(grad.narrow(*axis, *start, len))]
        }
        Op::Concat { axis } => {
            let n1 = ins[0].shape()[*axis];
            let n2 = ins[1].shape()[*axis];
            vec![
                Some(grad.narrow(*axis, 0, n1)),
                Some(grad.narrow(*axis, n1, n2)),
            ]
        }
        Op::PadReflect(p) => vec![Some(grad.pad_reflect_adjoint(*p))],
        Op::PadReflectAdjoint(p) => vec![Some(grad.pad_reflect(*p))],
        Op::Conv2d { stride, pad } => {
            let w_shape = ins[1].shape();
            let gx = grad.conv_transpose2d(&ins[1], *stride, *pad);
            let gw = ins[0].conv_wgrad(grad, *stride, *pad, w_shape[2], w_shape[3]);
            vec![Some(gx), Some(gw)]
        }
        Op::ConvTranspose2d { stride, pad } => {
            let w_shape = ins[1].shape();
            let gy = grad.conv2d(&ins[1], *stride, *pad);
            let gw = grad.conv_wgrad(&ins[0], *stride, *pad, w_shape[2], w_shape[3]);
            vec![Some(gy), Some(gw)]
        }
        Op::ConvWGrad { stride, pad, .. } => {
            let gx = ins[1].conv_transpose2d(grad, *stride, *pad);
            let ggy = ins[0].conv2d(grad, *stride, *pad);
            vec![Some(gx), Some(ggy)]
        }
    }
}

/// Post-order over the recorded subgraph that requires gradients.
fn topo_order<F: Scalar>(root: &Var<F>) -> Vec<Var<F>> {
    let mut order = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    let mut stack: Vec<(Var<F>, usize)> = vec![(root.clone(), 0)];
    while let Some((node, child_idx)) = stack.pop() {
        if child_idx == 0 {
            if visited.contains(&node.id()) {
                continue;
            }
            visited.insert(node.id());
        }
        if let Some(rec) = &node.inner.recorded {
            if child_idx < rec.inputs.len() {
                let child = rec.inputs[child_idx].clone();
                stack.push((node.clone(), child_idx + 1));
                if child.requires_grad() && !visited.contains(&child.id()) {
                    stack.push((child, 0));
                }
                continue;
            }
        }
        order.push(node);
    }
    order
}

/// Gradients of a scalar `loss` with respect to `wrt`, as graph tensors.
///
/// With `create_graph` the returned gradients are differentiable again;
/// without it they are constants.
pub fn grad_vars<F: Scalar>(
    loss: &Var<F>,
    wrt: &[&Var<F>],
    create_graph: bool,
) -> Result<Vec<Var<F>>> {
    if loss.value().ndim() != 0 {
        return Err(Error::Contract("backward requires a scalar loss".into()));
    }
    if !loss.requires_grad() {
        return Err(Error::Contract("loss does not depend on any trainable tensor".into()));
    }
    let order = topo_order(loss);
    let mut grads: HashMap<u64, Var<F>> = HashMap::new();
    grads.insert(loss.id(), Var::constant(ArrayD::from_elem(IxDyn(&[]), F::one())));

    with_grad_mode(create_graph, || {
        for node in order.iter().rev() {
            let Some(grad) = grads.get(&node.id()).cloned() else {
                continue;
            };
            let Some(rec) = &node.inner.recorded else {
                continue;
            };
            let input_grads = vjp(rec, node, &grad);
            for (input, ig) in rec.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !input.requires_grad() {
                    continue;
                }
                match grads.remove(&input.id()) {
                    Some(existing) => {
                        grads.insert(input.id(), existing.add(&ig));
                    }
                    None => {
                        grads.insert(input.id(), ig);
                    }
                }
            }
        }
    });

    Ok(wrt
        .iter()
        .map(|v| match grads.get(&v.id()) {
            Some(g) => g.clone(),
            None => Var::constant(ArrayD::zeros(IxDyn(&v.shape()))),
        })
        .collect())
}

/// Plain backpropagation: gradient arrays for `wrt`.
pub fn grad_arrays<F: Scalar>(loss: &Var<F>, wrt: &[&Var<F>]) -> Result<Vec<ArrayD<F>>> {
    Ok(grad_vars(loss, wrt, false)?.into_iter().map(|g| g.value()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};

    fn tensor(values: &[f64], shape: &[usize]) -> Var<f64> {
        Var::param(ArrayD::from_shape_vec(IxDyn(shape), values.to_vec()).unwrap())
    }

    #[test]
    fn simple_chain_gradient() {
        // L = mean((2x + 1)^2); dL/dx = 4(2x + 1)/n.
        let x = tensor(&[0.5, -1.0, 2.0, 0.0], &[4]);
        let y = x.mul_scalar(2.0).add_scalar(1.0).square().mean_all();
        let g = grad_arrays(&y, &[&x]).unwrap();
        for (i, &xv) in [0.5, -1.0, 2.0, 0.0].iter().enumerate() {
            let expect = 4.0 * (2.0 * xv + 1.0) / 4.0;
            assert!((g[0][[i]] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn grad_accumulates_over_shared_input() {
        // L = sum(x * x + x); dL/dx = 2x + 1.
        let x = tensor(&[1.0, -2.0], &[2]);
        let l = x.mul(&x).add(&x).sum_all();
        let g = grad_arrays(&l, &[&x]).unwrap();
        assert!((g[0][[0]] - 3.0).abs() < 1e-12);
        assert!((g[0][[1]] + 3.0).abs() < 1e-12);
    }

    #[test]
    fn no_grad_suppresses_recording() {
        let x = tensor(&[1.0], &[1]);
        let y = no_grad(|| x.mul_scalar(3.0));
        assert!(!y.requires_grad());
    }

    #[test]
    fn constant_inputs_get_no_gradient() {
        let x = tensor(&[2.0], &[1]);
        let c = Var::constant(ArrayD::from_elem(IxDyn(&[1]), 5.0));
        let l = x.mul(&c).sum_all();
        let g = grad_arrays(&l, &[&x]).unwrap();
        assert_eq!(g[0][[0]], 5.0);
    }

    #[test]
    fn unused_wrt_gets_zeros() {
        let x = tensor(&[1.0], &[1]);
        let z = tensor(&[4.0], &[1]);
        let l = x.square().sum_all();
        let g = grad_arrays(&l, &[&x, &z]).unwrap();
        assert_eq!(g[1][[0]], 0.0);
    }

    #[test]
    fn double_backward_through_square() {
        // L = sum(x^3). dL/dx = 3x^2. s = sum(dL/dx) -> ds/dx = 6x.
        let x = tensor(&[2.0, -1.0], &[2]);
        let l = x.mul(&x).mul(&x).sum_all();
        let g = grad_vars(&l, &[&x], true).unwrap();
        let s = g[0].sum_all();
        let gg = grad_arrays(&s, &[&x]).unwrap();
        assert!((gg[0][[0]] - 12.0).abs() < 1e-12);
        assert!((gg[0][[1]] + 6.0).abs() < 1e-12);
    }

    #[test]
    fn double_backward_through_norm_of_gradient() {
        // The gradient-penalty pattern: p = (||dL/dx|| - 1)^2 for
        // L = 0.5 * sum(a ⊙ x ⊙ x) gives dL/dx = a ⊙ x, so
        // dp/da_i = 2 (n-1)/n * a_i * x_i^2 with n = ||a ⊙ x||.
        let a = tensor(&[0.7, -1.3], &[2]);
        let x_leaf = Var::param(ArrayD::from_shape_vec(IxDyn(&[2]), vec![2.0, 1.0]).unwrap());
        let l = a.mul(&x_leaf).mul(&x_leaf).mul_scalar(0.5).sum_all();
        let g = grad_vars(&l, &[&x_leaf], true).unwrap();
        let norm = g[0].square().sum_all().sqrt();
        let p = norm.add_scalar(-1.0).square();
        let gp = grad_arrays(&p, &[&a]).unwrap();

        let (a0, a1, x0, x1) = (0.7f64, -1.3f64, 2.0f64, 1.0f64);
        let n = ((a0 * x0).powi(2) + (a1 * x1).powi(2)).sqrt();
        let dp0 = 2.0 * (n - 1.0) / n * a0 * x0 * x0;
        let dp1 = 2.0 * (n - 1.0) / n * a1 * x1 * x1;
        assert!((gp[0][[0]] - dp0).abs() < 1e-10, "{} vs {}", gp[0][[0]], dp0);
        assert!((gp[0][[1]] - dp1).abs() < 1e-10, "{} vs {}", gp[0][[1]], dp1);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        use crate::autodiff::gradcheck::max_relative_error;
        let x = Var::param(ArrayD::from_shape_vec(IxDyn(&[1, 2, 5, 5]), (0..50).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap());
        let w = Var::param(ArrayD::from_shape_vec(IxDyn(&[3, 2, 3, 3]), (0..54).map(|i| (i as f64 * 0.17).cos() * 0.3).collect()).unwrap());
        let f = || x.conv2d(&w, 2, 1).tanh().mean_all();
        let loss = f();
        let analytic = grad_arrays(&loss, &[&x, &w]).unwrap();
        let err = max_relative_error(&f, &[&x, &w], &analytic, 1e-5);
        assert!(err < 1e-6, "conv gradcheck err {err}");
    }

    #[test]
    fn conv_transpose_gradients_match_finite_differences() {
        use crate::autodiff::gradcheck::max_relative_error;
        let x = Var::param(ArrayD::from_shape_vec(IxDyn(&[1, 3, 3, 3]), (0..27).map(|i| (i as f64 * 0.29).sin()).collect()).unwrap());
        let w = Var::param(ArrayD::from_shape_vec(IxDyn(&[3, 2, 4, 4]), (0..96).map(|i| (i as f64 * 0.11).cos() * 0.2).collect()).unwrap());
        let f = || x.conv_transpose2d(&w, 2, 1).abs().mean_all();
        let loss = f();
        let analytic = grad_arrays(&loss, &[&x, &w]).unwrap();
        let err = max_relative_error(&f, &[&x, &w], &analytic, 1e-5);
        assert!(err < 1e-6, "convT gradcheck err {err}");
    }

    #[test]
    fn shape_ops_round_trip_gradients() {
        use crate::autodiff::gradcheck::max_relative_error;
        let x = Var::param(ArrayD::from_shape_vec(IxDyn(&[1, 2, 4, 4]), (0..32).map(|i| i as f64 * 0.1 - 1.5).collect()).unwrap());
        let f = || {
            let a = x.narrow(1, 0, 1);
            let b = x.narrow(1, 1, 1);
            let c = a.concat(&b.neg(), 1).pad_reflect(1);
            c.reshape(&[1, 2, 36]).square().sum_all().sqrt()
        };
        let loss = f();
        let analytic = grad_arrays(&loss, &[&x]).unwrap();
        let err = max_relative_error(&f, &[&x], &analytic, 1e-5);
        assert!(err < 1e-6, "shape op gradcheck err {err}");
    }
}
