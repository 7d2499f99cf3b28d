//! Dense matrix products (2-D and batched 3-D).

use super::{Scalar, Tensor};
use ndarray::{Array3, Ix2, Ix3};

impl<F: Scalar> Tensor<F> {
    /// `[M,K] x [K,N] -> [M,N]`.
    pub fn matmul(&self, rhs: &Tensor<F>) -> Tensor<F> {
        self.same_tape(rhs);
        let av = self.value();
        let bv = rhs.value();
        let a2 = av.view().into_dimensionality::<Ix2>().expect("matmul: lhs not 2-D");
        let b2 = bv.view().into_dimensionality::<Ix2>().expect("matmul: rhs not 2-D");
        assert_eq!(a2.ncols(), b2.nrows(), "matmul: inner dims {} vs {}", a2.ncols(), b2.nrows());
        let v = a2.dot(&b2).into_dyn();
        let (ia, ib) = (self.id(), rhs.id());
        let (ra, rb) = (self.requires_grad(), rhs.requires_grad());
        self.tape().op(v, ra || rb, move |dy, g| {
            let d2 = dy.view().into_dimensionality::<Ix2>().unwrap();
            let a2 = av.view().into_dimensionality::<Ix2>().unwrap();
            let b2 = bv.view().into_dimensionality::<Ix2>().unwrap();
            if ra {
                g.add(ia, d2.dot(&b2.t()).into_dyn());
            }
            if rb {
                g.add(ib, a2.t().dot(&d2).into_dyn());
            }
        })
    }

    /// Batched matmul: `[B,M,K] x [B,K,N] -> [B,M,N]`.
    pub fn bmm(&self, rhs: &Tensor<F>) -> Tensor<F> {
        self.same_tape(rhs);
        let av = self.value();
        let bv = rhs.value();
        let a3 = av.view().into_dimensionality::<Ix3>().expect("bmm: lhs not 3-D");
        let b3 = bv.view().into_dimensionality::<Ix3>().expect("bmm: rhs not 3-D");
        let (bs, m, k) = a3.dim();
        let (bs2, k2, n) = b3.dim();
        assert_eq!(bs, bs2, "bmm: batch {} vs {}", bs, bs2);
        assert_eq!(k, k2, "bmm: inner dims {} vs {}", k, k2);
        let mut out = Array3::<F>::zeros((bs, m, n));
        for b in 0..bs {
            out.index_axis_mut(ndarray::Axis(0), b)
                .assign(&a3.index_axis(ndarray::Axis(0), b).dot(&b3.index_axis(ndarray::Axis(0), b)));
        }
        let (ia, ib) = (self.id(), rhs.id());
        let (ra, rb) = (self.requires_grad(), rhs.requires_grad());
        self.tape().op(out.into_dyn(), ra || rb, move |dy, g| {
            let d3 = dy.view().into_dimensionality::<Ix3>().unwrap();
            let a3 = av.view().into_dimensionality::<Ix3>().unwrap();
            let b3 = bv.view().into_dimensionality::<Ix3>().unwrap();
            if ra {
                let mut da = Array3::<F>::zeros(a3.dim());
                for b in 0..bs {
                    da.index_axis_mut(ndarray::Axis(0), b).assign(
                        &d3.index_axis(ndarray::Axis(0), b)
                            .dot(&b3.index_axis(ndarray::Axis(0), b).t()),
                    );
                }
                g.add(ia, da.into_dyn());
            }
            if rb {
                let mut db = Array3::<F>::zeros(b3.dim());
                for b in 0..bs {
                    db.index_axis_mut(ndarray::Axis(0), b).assign(
                        &a3.index_axis(ndarray::Axis(0), b)
                            .t()
                            .dot(&d3.index_axis(ndarray::Axis(0), b)),
                    );
                }
                g.add(ib, db.into_dyn());
            }
        })
    }
}
