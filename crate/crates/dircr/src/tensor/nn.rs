//! Neural-network primitives: convolution, batch norm, dropout, softmax
//! heads, and row normalization.

use super::{Scalar, Tensor};
use crate::error::{DircrError, Result};
use ndarray::{Array1, Array2, Array4, ArrayD, ArrayView4, Axis, Ix2, Ix4, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Patch matrix for a whole batch: `[Ci*kh*kw, N*Ho*Wo]`, zero-padded.
fn im2col<F: Scalar>(
    x: ArrayView4<F>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array2<F> {
    let (n, ci, h, w) = x.dim();
    let ncols = n * ho * wo;
    let mut col = Array2::<F>::zeros((ci * kh * kw, ncols));
    let xs = x.as_slice().expect("im2col: input not contiguous");
    let cs = col.as_slice_mut().unwrap();
    for c in 0..ci {
        for ki in 0..kh {
            for kj in 0..kw {
                let row_base = ((c * kh + ki) * kw + kj) * ncols;
                for nn in 0..n {
                    let x_base = (nn * ci + c) * h * w;
                    for oh in 0..ho {
                        let ih = (oh * stride + ki) as isize - pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let dst = row_base + (nn * ho + oh) * wo;
                        let src = x_base + ih as usize * w;
                        for ow in 0..wo {
                            let iw = (ow * stride + kj) as isize - pad as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            cs[dst + ow] = xs[src + iw as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of `im2col`: scatter-add patch gradients back onto the image grid.
fn col2im_add<F: Scalar>(
    dcol: &Array2<F>,
    dx: &mut Array4<F>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) {
    let (n, ci, h, w) = dx.dim();
    let ncols = n * ho * wo;
    let ds = dcol.as_slice().unwrap();
    let xs = dx.as_slice_mut().unwrap();
    for c in 0..ci {
        for ki in 0..kh {
            for kj in 0..kw {
                let row_base = ((c * kh + ki) * kw + kj) * ncols;
                for nn in 0..n {
                    let x_base = (nn * ci + c) * h * w;
                    for oh in 0..ho {
                        let ih = (oh * stride + ki) as isize - pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let src = row_base + (nn * ho + oh) * wo;
                        let dst = x_base + ih as usize * w;
                        for ow in 0..wo {
                            let iw = (ow * stride + kj) as isize - pad as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            xs[dst + iw as usize] = xs[dst + iw as usize] + ds[src + ow];
                        }
                    }
                }
            }
        }
    }
}

fn chan_shape<F: Scalar>(v: &Array1<F>) -> Array4<F> {
    v.clone().into_shape_with_order((1, v.len(), 1, 1)).unwrap()
}

impl<F: Scalar> Tensor<F> {
    /// 2-D convolution, bias-free: `x [N,Ci,H,W] * w [Co,Ci,kh,kw]`.
    /// Lowered to one GEMM over the whole batch via `im2col`.
    pub fn conv2d(&self, w: &Tensor<F>, stride: usize, pad: usize) -> Tensor<F> {
        self.same_tape(w);
        let xv = self.value();
        let wv = w.value();
        let xs = xv.view().into_dimensionality::<Ix4>().expect("conv2d: input not 4-D");
        let (n, ci, h, wd) = xs.dim();
        let ws = wv.view().into_dimensionality::<Ix4>().expect("conv2d: weight not 4-D");
        let (co, ci2, kh, kw) = ws.dim();
        assert_eq!(ci, ci2, "conv2d: channels {} vs weight {}", ci, ci2);
        assert!(h + 2 * pad >= kh && wd + 2 * pad >= kw, "conv2d: kernel larger than padded input");
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;

        let col = im2col(xs, kh, kw, stride, pad, ho, wo);
        let wmat = ws
            .to_shape((co, ci * kh * kw))
            .expect("conv2d: weight reshape");
        let out_mat = wmat.dot(&col); // [Co, N*Ho*Wo]
        let out = out_mat
            .into_shape_with_order((co, n, ho, wo))
            .unwrap()
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .to_owned()
            .into_dyn();

        let (ix, iw) = (self.id(), w.id());
        let (rx, rw) = (self.requires_grad(), w.requires_grad());
        self.tape().op(out, rx || rw, move |dy, g| {
            let dy4 = dy.view().into_dimensionality::<Ix4>().unwrap();
            let dy_mat = dy4
                .permuted_axes([1, 0, 2, 3])
                .as_standard_layout()
                .to_owned()
                .into_shape_with_order((co, n * ho * wo))
                .unwrap();
            let xs = xv.view().into_dimensionality::<Ix4>().unwrap();
            let ws = wv.view().into_dimensionality::<Ix4>().unwrap();
            if rw {
                let col = im2col(xs, kh, kw, stride, pad, ho, wo);
                let dw = dy_mat.dot(&col.t());
                g.add(
                    iw,
                    dw.into_shape_with_order((co, ci, kh, kw)).unwrap().into_dyn(),
                );
            }
            if rx {
                let wmat = ws.to_shape((co, ci * kh * kw)).unwrap().to_owned();
                let dcol = wmat.t().dot(&dy_mat);
                let mut dx = Array4::<F>::zeros((n, ci, h, wd));
                col2im_add(&dcol, &mut dx, kh, kw, stride, pad, ho, wo);
                g.add(ix, dx.into_dyn());
            }
        })
    }

    /// Batch normalization over `[N,C,H,W]`. In training mode the statistics
    /// of this exact invocation are used and the updated running averages are
    /// returned (`new = momentum * old + (1 - momentum) * batch`); in
    /// inference mode the supplied running statistics are used and `None` is
    /// returned.
    pub fn batchnorm2d(
        &self,
        gamma: &Tensor<F>,
        beta: &Tensor<F>,
        running_mean: &ArrayD<F>,
        running_var: &ArrayD<F>,
        train: bool,
        momentum: f64,
        eps: f64,
    ) -> (Tensor<F>, Option<(ArrayD<F>, ArrayD<F>)>) {
        self.same_tape(gamma);
        self.same_tape(beta);
        let xv = self.value();
        let x4 = xv.view().into_dimensionality::<Ix4>().expect("batchnorm2d: input not 4-D");
        let (n, c, h, w) = x4.dim();
        assert_eq!(gamma.shape(), &[c], "batchnorm2d: gamma channels");
        assert_eq!(beta.shape(), &[c], "batchnorm2d: beta channels");
        let m = (n * h * w) as f64;
        let eps_f = F::fr(eps);

        let (mu, var, update): (Array1<F>, Array1<F>, Option<(ArrayD<F>, ArrayD<F>)>) = if train {
            let mu = (&x4.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0))
                / F::fr(m))
            .to_owned();
            let centered = &x4 - &chan_shape(&mu);
            let var = (centered.mapv(|v| v * v).sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0))
                / F::fr(m))
            .to_owned();
            let mom = F::fr(momentum);
            let one_m = F::one() - mom;
            let rm = running_mean.mapv(|v| v * mom) + mu.mapv(|v| v * one_m).into_dyn();
            let rv = running_var.mapv(|v| v * mom) + var.mapv(|v| v * one_m).into_dyn();
            (mu, var, Some((rm, rv)))
        } else {
            let rm = running_mean.view().into_dimensionality::<ndarray::Ix1>().unwrap().to_owned();
            let rv = running_var.view().into_dimensionality::<ndarray::Ix1>().unwrap().to_owned();
            (rm, rv, None)
        };

        let invstd = var.mapv(|v| F::one() / (v + eps_f).sqrt());
        let xhat = (&x4 - &chan_shape(&mu)) * &chan_shape(&invstd);
        let gv = gamma.value();
        let g1 = gv.view().into_dimensionality::<ndarray::Ix1>().unwrap().to_owned();
        let bv = beta.value();
        let b1 = bv.view().into_dimensionality::<ndarray::Ix1>().unwrap().to_owned();
        let y = &xhat * &chan_shape(&g1) + &chan_shape(&b1);

        let (ix, ig, ib) = (self.id(), gamma.id(), beta.id());
        let (rx, rg_, rb) = (
            self.requires_grad(),
            gamma.requires_grad(),
            beta.requires_grad(),
        );
        let out = self.tape().op(y.into_dyn(), rx || rg_ || rb, move |dy, g| {
            let dy4 = dy.view().into_dimensionality::<Ix4>().unwrap();
            let dbeta = dy4.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
            let dgamma = (&dy4 * &xhat).sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
            if rx {
                let scale = chan_shape(&(&g1 * &invstd));
                let dx = if train {
                    let mf = F::fr(m);
                    let term = &dy4.to_owned()
                        - &(chan_shape(&(&dbeta / mf)))
                        - &(&xhat * &chan_shape(&(&dgamma / mf)));
                    term * &scale
                } else {
                    &dy4 * &scale
                };
                g.add(ix, dx.into_dyn());
            }
            if rg_ {
                g.add(ig, dgamma.into_dyn());
            }
            if rb {
                g.add(ib, dbeta.into_dyn());
            }
        });
        (out, update)
    }

    /// Inverted dropout; identity in inference mode or at rate zero.
    pub fn dropout(&self, rate: f64, rng: &mut ChaCha8Rng, train: bool) -> Tensor<F> {
        if !train || rate <= 0.0 {
            return self.clone();
        }
        assert!(rate < 1.0, "dropout: rate must be < 1");
        let keep = 1.0 - rate;
        let inv = F::fr(1.0 / keep);
        let mask = ArrayD::from_shape_simple_fn(IxDyn(self.shape()), || {
            if rng.gen::<f64>() < keep {
                inv
            } else {
                F::zero()
            }
        });
        let v = &self.value() * &mask;
        let (id, rg) = (self.id(), self.requires_grad());
        self.tape().op(v, rg, move |dy, g| g.add(id, dy * &mask))
    }

    /// Numerically stable log-softmax along the last axis.
    pub fn log_softmax_last(&self) -> Tensor<F> {
        let xv = self.value();
        let k = *self.shape().last().expect("log_softmax: rank 0");
        let rows = xv.len() / k;
        let x2 = xv
            .view()
            .into_shape_with_order((rows, k))
            .unwrap();
        let mut y = Array2::<F>::zeros((rows, k));
        for r in 0..rows {
            let row = x2.row(r);
            let m = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let s: F = row.iter().map(|&v| (v - m).s_exp()).fold(F::zero(), |a, b| a + b);
            let lse = m + s.s_ln();
            for (dst, &v) in y.row_mut(r).iter_mut().zip(row.iter()) {
                *dst = v - lse;
            }
        }
        let v = y.into_shape_with_order(IxDyn(self.shape())).unwrap();
        let yv = v.clone();
        let (id, rg) = (self.id(), self.requires_grad());
        let shape = self.shape().to_vec();
        self.tape().op(v, rg, move |dy, g| {
            let y2 = yv.view().into_shape_with_order((rows, k)).unwrap();
            let d2 = dy.view().into_shape_with_order((rows, k)).unwrap();
            let mut dx = Array2::<F>::zeros((rows, k));
            for r in 0..rows {
                let dsum: F = d2.row(r).iter().cloned().fold(F::zero(), |a, b| a + b);
                for j in 0..k {
                    dx[[r, j]] = d2[[r, j]] - y2[[r, j]].s_exp() * dsum;
                }
            }
            g.add(id, dx.into_shape_with_order(IxDyn(&shape)).unwrap().into_dyn());
        })
    }

    /// Softmax along the last axis; rows sum to one.
    pub fn softmax_last(&self) -> Tensor<F> {
        let xv = self.value();
        let k = *self.shape().last().expect("softmax: rank 0");
        let rows = xv.len() / k;
        let x2 = xv.view().into_shape_with_order((rows, k)).unwrap();
        let mut y = Array2::<F>::zeros((rows, k));
        for r in 0..rows {
            let row = x2.row(r);
            let m = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let mut s = F::zero();
            for (dst, &v) in y.row_mut(r).iter_mut().zip(row.iter()) {
                let e = (v - m).s_exp();
                *dst = e;
                s = s + e;
            }
            y.row_mut(r).mapv_inplace(|e| e / s);
        }
        let v = y.into_shape_with_order(IxDyn(self.shape())).unwrap();
        let yv = v.clone();
        let (id, rg) = (self.id(), self.requires_grad());
        let shape = self.shape().to_vec();
        self.tape().op(v, rg, move |dy, g| {
            let y2 = yv.view().into_shape_with_order((rows, k)).unwrap();
            let d2 = dy.view().into_shape_with_order((rows, k)).unwrap();
            let mut dx = Array2::<F>::zeros((rows, k));
            for r in 0..rows {
                let dot: F = (0..k).map(|j| d2[[r, j]] * y2[[r, j]]).fold(F::zero(), |a, b| a + b);
                for j in 0..k {
                    dx[[r, j]] = y2[[r, j]] * (d2[[r, j]] - dot);
                }
            }
            g.add(id, dx.into_shape_with_order(IxDyn(&shape)).unwrap().into_dyn());
        })
    }

    /// Mean negative log-likelihood of `targets` under log-probabilities
    /// `[B,K]`. Targets are bounds-checked by the caller.
    pub fn nll_mean(&self, targets: &[usize]) -> Tensor<F> {
        let v2 = self.value();
        let lp = v2.view().into_dimensionality::<Ix2>().expect("nll_mean: not 2-D");
        let (b, k) = lp.dim();
        assert_eq!(b, targets.len(), "nll_mean: batch {} vs targets {}", b, targets.len());
        assert!(targets.iter().all(|&t| t < k), "nll_mean: target out of range");
        let mut total = F::zero();
        for (r, &t) in targets.iter().enumerate() {
            total = total - lp[[r, t]];
        }
        let val = ArrayD::from_elem(IxDyn(&[]), total / F::fr(b as f64));
        let (id, rg) = (self.id(), self.requires_grad());
        let tg = targets.to_vec();
        self.tape().op(val, rg, move |dy, g| {
            let d = dy[[]];
            let mut dx = Array2::<F>::zeros((b, k));
            let scale = d / F::fr(b as f64);
            for (r, &t) in tg.iter().enumerate() {
                dx[[r, t]] = -scale;
            }
            g.add(id, dx.into_dyn());
        })
    }

    /// Project each row of `[M,D]` onto the unit sphere.
    pub fn l2_normalize_rows(&self) -> Result<Tensor<F>> {
        let xv = self.value();
        let x2 = xv.view().into_dimensionality::<Ix2>().map_err(|_| {
            DircrError::ShapeMismatch {
                op: "l2_normalize_rows",
                expected: "[M,D]".into(),
                got: format!("{:?}", self.shape()),
            }
        })?;
        let (mrows, d) = x2.dim();
        let mut norms = Array1::<F>::zeros(mrows);
        for r in 0..mrows {
            let n2: F = x2.row(r).iter().map(|&v| v * v).fold(F::zero(), |a, b| a + b);
            let n = n2.sqrt();
            if n.to64() < 1e-12 {
                return Err(DircrError::DegenerateInput(format!(
                    "row {r} has norm {:.3e} before normalization (dead network?)",
                    n.to64()
                )));
            }
            norms[r] = n;
        }
        let y = &x2 / &norms.view().insert_axis(Axis(1));
        let yv = y.to_owned();
        let (id, rg) = (self.id(), self.requires_grad());
        let out = self.tape().op(yv.clone().into_dyn(), rg, move |dy, g| {
            let d2 = dy.view().into_shape_with_order((mrows, d)).unwrap();
            let mut dx = Array2::<F>::zeros((mrows, d));
            for r in 0..mrows {
                let yr = yv.row(r);
                let dr = d2.row(r);
                let dot: F = yr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).fold(F::zero(), |a, b| a + b);
                let inv_n = F::one() / norms[r];
                for j in 0..d {
                    dx[[r, j]] = (dr[j] - yr[j] * dot) * inv_n;
                }
            }
            g.add(id, dx.into_dyn());
        });
        Ok(out)
    }
}
