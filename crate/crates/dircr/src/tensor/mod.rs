//! Reverse-mode automatic differentiation over dynamic-rank `ndarray` arrays.
//!
//! The design is a forward-eager tape: each operation computes its value
//! immediately and records a boxed backward closure. [`Tape::backward`] walks
//! the nodes in reverse insertion order (which is a valid reverse topological
//! order, since every operand must already exist when an op is recorded) and
//! accumulates gradients into a [`Grads`] table indexed by node id.
//!
//! Values are stored as [`ArcArray`], so sharing a tensor's value into a
//! backward closure is a reference-count bump, not a copy. Subgraphs where no
//! operand requires a gradient record no closure at all, which keeps pure
//! inference passes cheap.

mod gradcheck;
mod linalg;
mod nn;
mod ops;
mod shape;

pub use gradcheck::{gradcheck, CheckOpts, CheckReport};
pub use ops::{gelu_grad_scalar, gelu_scalar};
pub use shape::concat;

use ndarray::{ArcArray, ArrayD, IxDyn};
use std::cell::RefCell;
use std::rc::Rc;

/// Element type for all tensors: `f32` for training, `f64` for tight
/// numerical verification. Transcendentals are routed through `libm` so
/// results do not depend on the platform's C math library.
pub trait Scalar: ndarray::NdFloat + num_traits::FromPrimitive {
    fn fr(v: f64) -> Self;
    fn to64(self) -> f64;
    fn s_exp(self) -> Self;
    fn s_ln(self) -> Self;
    fn s_erf(self) -> Self;
}

impl Scalar for f32 {
    fn fr(v: f64) -> f32 {
        v as f32
    }
    fn to64(self) -> f64 {
        self as f64
    }
    fn s_exp(self) -> f32 {
        libm::expf(self)
    }
    fn s_ln(self) -> f32 {
        libm::logf(self)
    }
    fn s_erf(self) -> f32 {
        libm::erff(self)
    }
}

impl Scalar for f64 {
    fn fr(v: f64) -> f64 {
        v
    }
    fn to64(self) -> f64 {
        self
    }
    fn s_exp(self) -> f64 {
        libm::exp(self)
    }
    fn s_ln(self) -> f64 {
        libm::log(self)
    }
    fn s_erf(self) -> f64 {
        libm::erf(self)
    }
}

pub(crate) type BackFn<F> = Box<dyn FnOnce(ArrayD<F>, &mut Grads<F>)>;

struct Node<F: Scalar> {
    value: ArcArray<F, IxDyn>,
    back: Option<BackFn<F>>,
    requires_grad: bool,
}

/// Gradient accumulator, indexed by tape node id. Intermediate gradients are
/// consumed as backward proceeds; only leaf gradients survive the walk.
pub struct Grads<F: Scalar> {
    g: Vec<Option<ArrayD<F>>>,
}

impl<F: Scalar> Grads<F> {
    pub(crate) fn add(&mut self, id: usize, delta: ArrayD<F>) {
        match &mut self.g[id] {
            Some(acc) => {
                debug_assert_eq!(acc.shape(), delta.shape(), "gradient shape drifted");
                *acc += &delta;
            }
            slot => *slot = Some(delta),
        }
    }

    pub fn get(&self, t: &Tensor<F>) -> Option<&ArrayD<F>> {
        self.g.get(t.id).and_then(|o| o.as_ref())
    }

    pub fn take(&mut self, t: &Tensor<F>) -> Option<ArrayD<F>> {
        self.g.get_mut(t.id).and_then(|o| o.take())
    }
}

/// The recording tape. Cloning is cheap (shared handle).
pub struct Tape<F: Scalar> {
    nodes: Rc<RefCell<Vec<Node<F>>>>,
}

impl<F: Scalar> Clone for Tape<F> {
    fn clone(&self) -> Self {
        Tape {
            nodes: Rc::clone(&self.nodes),
        }
    }
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Rc::new(RefCell::new(Vec::new())),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(
        &self,
        value: ArcArray<F, IxDyn>,
        requires_grad: bool,
        back: Option<BackFn<F>>,
    ) -> Tensor<F> {
        let shape = value.shape().to_vec();
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            back: if requires_grad { back } else { None },
            requires_grad,
        });
        Tensor {
            id,
            shape,
            tape: self.clone(),
        }
    }

    /// Leaf with gradient tracking (parameters, gradcheck probes).
    pub fn var(&self, value: ArrayD<F>) -> Tensor<F> {
        self.push(value.into_shared(), true, None)
    }

    pub fn var_shared(&self, value: ArcArray<F, IxDyn>) -> Tensor<F> {
        self.push(value, true, None)
    }

    /// Leaf without gradient tracking (inputs, detached values).
    pub fn constant(&self, value: ArrayD<F>) -> Tensor<F> {
        self.push(value.into_shared(), false, None)
    }

    pub fn constant_shared(&self, value: ArcArray<F, IxDyn>) -> Tensor<F> {
        self.push(value, false, None)
    }

    /// 0-d constant.
    pub fn scalar(&self, v: F) -> Tensor<F> {
        self.constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    pub(crate) fn op(
        &self,
        value: ArrayD<F>,
        requires_grad: bool,
        back: impl FnOnce(ArrayD<F>, &mut Grads<F>) + 'static,
    ) -> Tensor<F> {
        self.push(value.into_shared(), requires_grad, Some(Box::new(back)))
    }

    /// Reverse pass from a scalar loss. Consumes the recorded closures, so a
    /// tape supports exactly one backward sweep.
    pub fn backward(&self, loss: &Tensor<F>) -> Grads<F> {
        assert!(
            Rc::ptr_eq(&self.nodes, &loss.tape.nodes),
            "loss from another tape"
        );
        assert_eq!(loss.value().len(), 1, "backward needs a scalar loss");
        let n = loss.id + 1;
        let mut grads = Grads { g: vec![None; n] };
        grads.g[loss.id] = Some(ArrayD::from_elem(IxDyn(&loss.shape), F::one()));
        for id in (0..n).rev() {
            let back = self.nodes.borrow_mut()[id].back.take();
            if let Some(f) = back {
                if let Some(dy) = grads.g[id].take() {
                    f(dy, &mut grads);
                }
            }
        }
        grads
    }
}

/// Handle to one tape node: an immutable value plus its position in the graph.
pub struct Tensor<F: Scalar> {
    id: usize,
    shape: Vec<usize>,
    tape: Tape<F>,
}

impl<F: Scalar> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor {
            id: self.id,
            shape: self.shape.clone(),
            tape: self.tape.clone(),
        }
    }
}

impl<F: Scalar> Tensor<F> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn tape(&self) -> &Tape<F> {
        &self.tape
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Shared view of the value (cheap clone of an `ArcArray`).
    pub fn value(&self) -> ArcArray<F, IxDyn> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// Owned copy of the value.
    pub fn array(&self) -> ArrayD<F> {
        self.value().to_owned()
    }

    /// The value of a 0-d (or single-element) tensor.
    pub fn item(&self) -> F {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on non-scalar tensor");
        *v.iter().next().unwrap()
    }

    /// Re-enter the value as a gradient-free leaf.
    pub fn detach(&self) -> Tensor<F> {
        self.tape.constant_shared(self.value())
    }

    pub(crate) fn same_tape(&self, other: &Tensor<F>) {
        assert!(
            Rc::ptr_eq(&self.tape.nodes, &other.tape.nodes),
            "tensors from different tapes"
        );
    }
}
