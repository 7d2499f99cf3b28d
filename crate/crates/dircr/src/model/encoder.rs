//! Panel encoder: a stack of stride-2 residual blocks mapping one grayscale
//! panel `[N, 1, S, S]` to a feature map `[N, C, S/2^B, S/2^B]`.

use crate::error::{DircrError, Result};
use crate::tensor::{Scalar, Tensor};

use super::{BatchNorm2d, Conv2d, Fwd, ModelArch, ParamBuilder};

/// One residual block: two 3x3 conv+BN stages plus a 1x1 projection skip.
/// The skip is always a conv so every block downsamples and rescales
/// uniformly.
pub struct ResBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    skip: Conv2d,
}

impl ResBlock {
    pub fn new<F: Scalar>(
        pb: &mut ParamBuilder<F>,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
    ) -> Self {
        ResBlock {
            conv1: Conv2d::new(pb, &format!("{name}.conv1"), c_in, c_out, 3, stride, 1, false),
            bn1: BatchNorm2d::new(pb, &format!("{name}.bn1"), c_out),
            conv2: Conv2d::new(pb, &format!("{name}.conv2"), c_out, c_out, 3, 1, 1, false),
            bn2: BatchNorm2d::new(pb, &format!("{name}.bn2"), c_out),
            skip: Conv2d::new(pb, &format!("{name}.skip"), c_in, c_out, 1, stride, 0, false),
        }
    }

    pub fn forward<F: Scalar>(&self, fw: &mut Fwd<F>, x: &Tensor<F>) -> Tensor<F> {
        let y = self.conv1.forward(fw, x);
        let y = self.bn1.forward(fw, &y).relu();
        let y = self.conv2.forward(fw, &y);
        let y = self.bn2.forward(fw, &y);
        let s = self.skip.forward(fw, x);
        y.add(&s).relu()
    }
}

pub struct Encoder {
    blocks: Vec<ResBlock>,
    in_size: usize,
    out_channels: usize,
}

impl Encoder {
    pub fn new<F: Scalar>(pb: &mut ParamBuilder<F>, arch: &ModelArch) -> Result<Self> {
        let c = arch.channels;
        // Channel schedule: C/2 after the first block, C everywhere after.
        let widths: Vec<usize> = (0..arch.n_blocks)
            .map(|i| if i == 0 { c / 2 } else { c })
            .collect();
        let mut blocks = Vec::with_capacity(arch.n_blocks);
        let mut c_in = 1;
        for (i, &c_out) in widths.iter().enumerate() {
            blocks.push(ResBlock::new(pb, &format!("encoder.block{i}"), c_in, c_out, 2));
            c_in = c_out;
        }
        Ok(Encoder { blocks, in_size: arch.image_size, out_channels: c })
    }

    /// `[N, 1, S, S]` -> `[N, C, S/2^B, S/2^B]`; rejects a wrong panel size
    /// instead of producing misaligned features.
    pub fn forward<F: Scalar>(&self, fw: &mut Fwd<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        let shape = x.shape().to_vec();
        if shape.len() != 4 || shape[1] != 1 || shape[2] != self.in_size || shape[3] != self.in_size
        {
            return Err(DircrError::ShapeMismatch {
                op: "encode_panels",
                expected: format!("[N, 1, {0}, {0}]", self.in_size),
                got: format!("{shape:?}"),
            });
        }
        let mut y = x.clone();
        for b in &self.blocks {
            y = b.forward(fw, &y);
        }
        debug_assert_eq!(y.shape()[1], self.out_channels);
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testutil::*;
    use crate::model::{Fwd, ParamStore, StatsStore};
    use crate::tensor::{gradcheck, CheckOpts, Tape};
    use ndarray::{ArrayD, IxDyn};

    #[test]
    fn sixteen_panels_80px_to_64ch_5x5() {
        let arch = ModelArch {
            image_size: 80,
            channels: 64,
            n_blocks: 4,
            ..tiny_arch()
        };
        let mut ps = ParamStore::<f32>::new();
        let mut ss = StatsStore::new();
        let mut pb = ParamBuilder::new(&mut ps, &mut ss, 1);
        let enc = Encoder::new(&mut pb, &arch).unwrap();
        let tape = Tape::new();
        let mut stats = ss.clone();
        let mut fw = Fwd::new(&tape, &ps, &mut stats, false, false, test_rng(0));
        let x = tape.constant(rand_arr(7, &[16, 1, 80, 80], 0.0, 1.0));
        let y = enc.forward(&mut fw, &x).unwrap();
        assert_eq!(y.shape(), &[16, 64, 5, 5]);
    }

    #[test]
    fn zero_main_path_identity_skip_is_relu() {
        // conv1 = conv2 = 0 makes the residual branch vanish through the
        // (eval-mode) batch norms, and an identity 1x1 skip leaves relu(x).
        let mut ps = ParamStore::<f64>::new();
        let mut ss = StatsStore::new();
        let mut pb = ParamBuilder::new(&mut ps, &mut ss, 2);
        let blk = ResBlock::new(&mut pb, "b", 3, 3, 1);
        ps.set(blk.conv1.w, ArrayD::zeros(IxDyn(&[3, 3, 3, 3])));
        ps.set(blk.conv2.w, ArrayD::zeros(IxDyn(&[3, 3, 3, 3])));
        let mut eye = ArrayD::zeros(IxDyn(&[3, 3, 1, 1]));
        for i in 0..3 {
            eye[[i, i, 0, 0]] = 1.0;
        }
        ps.set(blk.skip.w, eye);
        let tape = Tape::new();
        let mut stats = ss.clone();
        let mut fw = Fwd::new(&tape, &ps, &mut stats, false, false, test_rng(0));
        let x = tape.constant(rand_arr(8, &[2, 3, 4, 4], -1.0, 1.0));
        let y = blk.forward(&mut fw, &x);
        let xv = x.value();
        let yv = y.value();
        for (a, b) in xv.iter().zip(yv.iter()) {
            assert!((a.max(0.0) - b).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_panel_size_rejected() {
        let arch = tiny_arch();
        let mut ps = ParamStore::<f64>::new();
        let mut ss = StatsStore::new();
        let mut pb = ParamBuilder::new(&mut ps, &mut ss, 3);
        let enc = Encoder::new(&mut pb, &arch).unwrap();
        let tape = Tape::new();
        let mut stats = ss.clone();
        let mut fw = Fwd::new(&tape, &ps, &mut stats, false, false, test_rng(0));
        let x = tape.constant(rand_arr(9, &[1, 1, 8, 8], 0.0, 1.0));
        let err = enc.forward(&mut fw, &x).err().unwrap();
        assert!(matches!(
            err,
            DircrError::ShapeMismatch { op: "encode_panels", .. }
        ));
    }

    #[test]
    fn gradcheck_encoder_block() {
        let mut ps = ParamStore::<f64>::new();
        let mut ss = StatsStore::new();
        let mut pb = ParamBuilder::new(&mut ps, &mut ss, 4);
        let blk = ResBlock::new(&mut pb, "b", 2, 4, 2);
        let x0 = rand_arr::<f64>(10, &[2, 2, 6, 6], -1.0, 1.0);
        let inputs = vec![
            x0,
            ps.value(blk.conv1.w).to_owned(),
            ps.value(blk.conv2.w).to_owned(),
            ps.value(blk.skip.w).to_owned(),
            rand_arr::<f64>(11, &[4], 0.5, 1.5), // bn1 gamma
            rand_arr::<f64>(12, &[4], -0.2, 0.2), // bn1 beta
        ];
        let report = gradcheck(
            &|tape, ts| {
                let mut stats = ss.clone();
                let mut fw = Fwd::new(tape, &ps, &mut stats, false, true, test_rng(0));
                fw.preload(blk.conv1.w, ts[1].clone());
                fw.preload(blk.conv2.w, ts[2].clone());
                fw.preload(blk.skip.w, ts[3].clone());
                fw.preload(blk.bn1.gamma, ts[4].clone());
                fw.preload(blk.bn1.beta, ts[5].clone());
                let y = blk.forward(&mut fw, &ts[0]);
                y.mul(&y).sum_all().mul_scalar(0.5)
            },
            &inputs,
            &CheckOpts::f64_defaults(),
        );
        assert!(report.pass, "{report}");
    }
}
