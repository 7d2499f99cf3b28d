//! Shape manipulation: reshape, permute, concatenate, slice, gather.

use super::{Scalar, Tensor};
use ndarray::{ArrayD, Axis, IxDyn, Slice};

impl<F: Scalar> Tensor<F> {
    /// Reshape without copying (values are always stored in standard layout).
    pub fn reshape(&self, shape: &[usize]) -> Tensor<F> {
        let n: usize = shape.iter().product();
        assert_eq!(n, self.value().len(), "reshape: element count mismatch");
        let v = self
            .value()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape: non-contiguous value");
        let (id, rg) = (self.id(), self.requires_grad());
        let old = self.shape().to_vec();
        self.tape().push(v, rg, Some(Box::new(move |dy, g| {
            let dx = dy
                .as_standard_layout()
                .to_owned()
                .into_shape_with_order(IxDyn(&old))
                .unwrap();
            g.add(id, dx);
        })))
    }

    /// Permute axes; the result is materialized in standard layout.
    pub fn transpose(&self, perm: &[usize]) -> Tensor<F> {
        assert_eq!(perm.len(), self.shape().len(), "transpose: rank mismatch");
        let v = self
            .value()
            .view()
            .permuted_axes(IxDyn(perm))
            .as_standard_layout()
            .to_owned();
        let (id, rg) = (self.id(), self.requires_grad());
        let mut inv = vec![0usize; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        self.tape().op(v, rg, move |dy, g| {
            let dx = dy
                .view()
                .permuted_axes(IxDyn(&inv))
                .as_standard_layout()
                .to_owned();
            g.add(id, dx);
        })
    }

    /// Contiguous slice `start..start+len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor<F> {
        assert!(
            start + len <= self.shape()[axis],
            "narrow: {start}+{len} exceeds axis {axis} of {:?}",
            self.shape()
        );
        let v = self
            .value()
            .slice_axis(Axis(axis), Slice::from(start..start + len))
            .to_owned();
        let (id, rg) = (self.id(), self.requires_grad());
        let full = self.shape().to_vec();
        self.tape().op(v, rg, move |dy, g| {
            let mut dx = ArrayD::zeros(IxDyn(&full));
            dx.slice_axis_mut(Axis(axis), Slice::from(start..start + len))
                .assign(&dy);
            g.add(id, dx);
        })
    }

    /// Gather rows along `axis`; duplicate indices accumulate in backward.
    pub fn index_select(&self, axis: usize, indices: &[usize]) -> Tensor<F> {
        let n = self.shape()[axis];
        assert!(
            indices.iter().all(|&i| i < n),
            "index_select: index out of range on axis {axis}"
        );
        // select() appends along `axis`, leaving it with the largest stride;
        // force standard layout so downstream reshapes stay copy-free.
        let v = self.value().select(Axis(axis), indices);
        let v = if v.is_standard_layout() {
            v
        } else {
            v.as_standard_layout().to_owned()
        };
        let (id, rg) = (self.id(), self.requires_grad());
        let full = self.shape().to_vec();
        let idx = indices.to_vec();
        self.tape().op(v, rg, move |dy, g| {
            let mut dx = ArrayD::zeros(IxDyn(&full));
            for (k, &i) in idx.iter().enumerate() {
                let mut dst = dx.index_axis_mut(Axis(axis), i);
                dst += &dy.index_axis(Axis(axis), k);
            }
            g.add(id, dx);
        })
    }
}

/// Concatenate along `axis`. All inputs must share every other dimension.
pub fn concat<F: Scalar>(parts: &[&Tensor<F>], axis: usize) -> Tensor<F> {
    assert!(!parts.is_empty(), "concat: no inputs");
    let first = parts[0];
    for p in &parts[1..] {
        first.same_tape(p);
    }
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let views: Vec<_> = values.iter().map(|v| v.view()).collect();
    // concatenate() leaves `axis` with the largest stride; normalize.
    let v = ndarray::concatenate(Axis(axis), &views).expect("concat: incompatible shapes");
    let v = if v.is_standard_layout() {
        v
    } else {
        v.as_standard_layout().to_owned()
    };
    let ids: Vec<usize> = parts.iter().map(|p| p.id()).collect();
    let rgs: Vec<bool> = parts.iter().map(|p| p.requires_grad()).collect();
    let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    let any = rgs.iter().any(|&r| r);
    first.tape().op(v, any, move |dy, g| {
        let mut off = 0;
        for ((&id, &rg), &sz) in ids.iter().zip(&rgs).zip(&sizes) {
            if rg {
                let part = dy
                    .slice_axis(Axis(axis), Slice::from(off..off + sz))
                    .to_owned();
                g.add(id, part);
            }
            off += sz;
        }
    })
}
