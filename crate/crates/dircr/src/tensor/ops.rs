//! Elementwise operations, reductions, and axis broadcasts.

use super::{Scalar, Tensor};
use ndarray::{ArrayD, Axis, IxDyn};

const INV_SQRT_2: f64 = 0.7071067811865476;
const INV_SQRT_2PI: f64 = 0.3989422804014327;

/// Exact GELU: `0.5 * x * (1 + erf(x / sqrt(2)))`.
pub fn gelu_scalar<F: Scalar>(x: F) -> F {
    let half = F::fr(0.5);
    half * x * (F::one() + (x * F::fr(INV_SQRT_2)).s_erf())
}

/// d/dx GELU = Phi(x) + x * phi(x).
pub fn gelu_grad_scalar<F: Scalar>(x: F) -> F {
    let phi_big = F::fr(0.5) * (F::one() + (x * F::fr(INV_SQRT_2)).s_erf());
    let pdf = (-(x * x) * F::fr(0.5)).s_exp() * F::fr(INV_SQRT_2PI);
    phi_big + x * pdf
}

impl<F: Scalar> Tensor<F> {
    fn assert_same_shape(&self, rhs: &Tensor<F>, op: &str) {
        self.same_tape(rhs);
        assert_eq!(
            self.shape(),
            rhs.shape(),
            "{op}: shape {:?} vs {:?}",
            self.shape(),
            rhs.shape()
        );
    }

    pub fn add(&self, rhs: &Tensor<F>) -> Tensor<F> {
        self.assert_same_shape(rhs, "add");
        let v = &self.value() + &rhs.value();
        let (ia, ib) = (self.id(), rhs.id());
        let (ra, rb) = (self.requires_grad(), rhs.requires_grad());
        self.tape().op(v, ra || rb, move |dy, g| {
            if ra {
                g.add(ia, dy.clone());
            }
            if rb {
                g.add(ib, dy);
            }
        })
    }

    pub fn sub(&self, rhs: &Tensor<F>) -> Tensor<F> {
        self.assert_same_shape(rhs, "sub");
        let v = &self.value() - &rhs.value();
        let (ia, ib) = (self.id(), rhs.id());
        let (ra, rb) = (self.requires_grad(), rhs.requires_grad());
        self.tape().op(v, ra || rb, move |dy, g| {
            if ra {
                g.add(ia, dy.clone());
            }
            if rb {
                g.add(ib, -dy);
            }
        })
    }

    pub fn mul(&self, rhs: &Tensor<F>) -> Tensor<F> {
        self.assert_same_shape(rhs, "mul");
        let (av, bv) = (self.value(), rhs.value());
        let v = &av * &bv;
        let (ia, ib) = (self.id(), rhs.id());
        let (ra, rb) = (self.requires_grad(), rhs.requires_grad());
        self.tape().op(v, ra || rb, move |dy, g| {
            if ra {
                g.add(ia, &dy * &bv);
            }
            if rb {
                g.add(ib, &dy * &av);
            }
        })
    }

    pub fn neg(&self) -> Tensor<F> {
        let v = self.value().mapv(|x| -x);
        let (id, rg) = (self.id(), self.requires_grad());
        self.tape().op(v, rg, move |dy, g| g.add(id, -dy))
    }

    pub fn add_scalar(&self, c: F) -> Tensor<F> {
        let v = self.value().mapv(|x| x + c);
        let (id, rg) = (self.id(), self.requires_grad());
        self.tape().op(v, rg, move |dy, g| g.add(id, dy))
    }

    pub fn mul_scalar(&self, c: F) -> Tensor<F> {
        let v = self.value().mapv(|x| x * c);
        let (id, rg) = (self.id(), self.requires_grad());
        self.tape().op(v, rg, move |dy, g| g.add(id, dy.mapv(|d| d * c)))
    }

    pub fn relu(&self) -> Tensor<F> {
        let xv = self.value();
        let v = xv.mapv(|x| if x > F::zero() { x } else { F::zero() });
        let (id, rg) = (self.id(), self.requires_grad());
        self.tape().op(v, rg, move |dy, g| {
            let mut dx = dy;
            dx.zip_mut_with(&xv, |d, &x| {
                if x <= F::zero() {
                    *d = F::zero();
                }
            });
            g.add(id, dx);
        })
    }

    pub fn gelu(&self) -> Tensor<F> {
        let xv = self.value();
        let v = xv.mapv(gelu_scalar);
        let (id, rg) = (self.id(), self.requires_grad());
        self.tape().op(v, rg, move |dy, g| {
            let mut dx = dy;
            dx.zip_mut_with(&xv, |d, &x| *d = *d * gelu_grad_scalar(x));
            g.add(id, dx);
        })
    }

    pub fn exp(&self) -> Tensor<F> {
        let v = self.value().mapv(F::s_exp);
        let (id, rg) = (self.id(), self.requires_grad());
        let yv = v.clone();
        self.tape().op(v, rg, move |dy, g| g.add(id, &dy * &yv))
    }

    pub fn ln(&self) -> Tensor<F> {
        let xv = self.value();
        let v = xv.mapv(F::s_ln);
        let (id, rg) = (self.id(), self.requires_grad());
        self.tape().op(v, rg, move |dy, g| {
            let mut dx = dy;
            dx.zip_mut_with(&xv, |d, &x| *d = *d / x);
            g.add(id, dx);
        })
    }

    pub fn sum_all(&self) -> Tensor<F> {
        let total = self.value().sum();
        let v = ArrayD::from_elem(IxDyn(&[]), total);
        let (id, rg) = (self.id(), self.requires_grad());
        let shape = self.shape().to_vec();
        self.tape().op(v, rg, move |dy, g| {
            let d = dy[[]];
            g.add(id, ArrayD::from_elem(IxDyn(&shape), d));
        })
    }

    pub fn mean_all(&self) -> Tensor<F> {
        let n = F::fr(self.value().len() as f64);
        self.sum_all().mul_scalar(F::one() / n)
    }

    /// Sum along one axis (the axis is removed).
    pub fn sum_axis(&self, axis: usize) -> Tensor<F> {
        let v = self.value().sum_axis(Axis(axis));
        let (id, rg) = (self.id(), self.requires_grad());
        let shape = self.shape().to_vec();
        self.tape().op(v, rg, move |dy, g| {
            let expanded = dy.insert_axis(Axis(axis));
            let dx = expanded.broadcast(IxDyn(&shape)).unwrap().to_owned();
            g.add(id, dx);
        })
    }

    /// Mean along one axis (the axis is removed).
    pub fn mean_axis(&self, axis: usize) -> Tensor<F> {
        let n = F::fr(self.shape()[axis] as f64);
        self.sum_axis(axis).mul_scalar(F::one() / n)
    }

    /// Broadcast-add a vector along `axis` of `self`
    /// (`bias.len() == self.shape()[axis]`).
    pub fn add_bias(&self, bias: &Tensor<F>, axis: usize) -> Tensor<F> {
        self.same_tape(bias);
        assert_eq!(bias.shape().len(), 1, "add_bias: bias must be rank 1");
        assert_eq!(
            bias.shape()[0],
            self.shape()[axis],
            "add_bias: axis {axis} size {} vs bias {}",
            self.shape()[axis],
            bias.shape()[0]
        );
        let ndim = self.shape().len();
        let bshaped = {
            let mut s = vec![1usize; ndim];
            s[axis] = bias.shape()[0];
            bias.value().to_owned().into_shape_with_order(IxDyn(&s)).unwrap()
        };
        let v = &self.value() + &bshaped;
        let (ia, ib) = (self.id(), bias.id());
        let (ra, rb) = (self.requires_grad(), bias.requires_grad());
        self.tape().op(v, ra || rb, move |dy, g| {
            if rb {
                let mut db = dy.clone();
                for ax in (0..ndim).rev() {
                    if ax != axis {
                        db = db.sum_axis(Axis(ax));
                    }
                }
                g.add(ib, db);
            }
            if ra {
                g.add(ia, dy);
            }
        })
    }

    /// Broadcast-multiply: `scale`'s shape must equal `self`'s with `axis`
    /// removed. Used for per-channel gating over token axes.
    pub fn mul_bcast(&self, scale: &Tensor<F>, axis: usize) -> Tensor<F> {
        self.same_tape(scale);
        let mut expect = self.shape().to_vec();
        expect.remove(axis);
        assert_eq!(
            scale.shape(),
            &expect[..],
            "mul_bcast: scale shape {:?} vs expected {:?}",
            scale.shape(),
            expect
        );
        let xv = self.value();
        let sv = scale.value();
        let s_exp = sv.to_owned().insert_axis(Axis(axis));
        let v = &xv * &s_exp;
        let (ia, ib) = (self.id(), scale.id());
        let (ra, rb) = (self.requires_grad(), scale.requires_grad());
        self.tape().op(v, ra || rb, move |dy, g| {
            if rb {
                let ds = (&dy * &xv).sum_axis(Axis(axis));
                g.add(ib, ds);
            }
            if ra {
                g.add(ia, &dy * &s_exp);
            }
        })
    }
}
