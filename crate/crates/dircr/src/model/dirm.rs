//! Dual-Inference Reasoning Module.
//!
//! Each block reads the 9-panel state `[N, 9, C, h, w]` (rows of the 3x3 grid
//! in row-major order, candidate in slot 8) and refines it through two
//! inference paths:
//!
//! - local (2-to-1): predict each row's third panel from its first two and
//!   keep the prediction error alongside the actual panel;
//! - global (8-to-1): predict the missing panel from all eight context panels.
//!
//! The two token streams fuse through shared-parameter bidirectional
//! cross-attention, pass through self-attention, a GELU channel gate, and are
//! folded back into the per-panel state via a 1x1 convolution, so blocks
//! stack.

use crate::tensor::{concat, Scalar, Tensor};

use super::{BatchNorm2d, Conv2d, ConvNormAct, Fwd, Linear, Mha, ModelArch, ParamBuilder};

pub struct DirmBlock {
    psi_l: Option<[ConvNormAct; 2]>,
    psi_g: Option<[ConvNormAct; 2]>,
    /// Shared token embedding for both streams, 2C -> d.
    embed: Linear,
    /// One cross-attention parameter set serves both directions.
    ca: Option<Mha>,
    sa: Mha,
    gate: Linear,
    /// Normalizes the refolded refinement channels. R scales multiplicatively
    /// with both the gate and the token stream, so without this the state
    /// magnitude compounds through stacked blocks once the gate opens.
    refold_bn: BatchNorm2d,
    refold: Conv2d,
    channels: usize,
    attn_dim: usize,
    dropout: f64,
    use_local: bool,
    use_global: bool,
}

impl DirmBlock {
    pub fn new<F: Scalar>(pb: &mut ParamBuilder<F>, name: &str, arch: &ModelArch) -> Self {
        let c = arch.channels;
        let d = arch.attn_dim;
        let psi_l = arch.use_local.then(|| {
            [
                ConvNormAct::new(pb, &format!("{name}.psi_l0"), 2 * c, c, 3, 1, 1),
                ConvNormAct::new(pb, &format!("{name}.psi_l1"), c, c, 3, 1, 1),
            ]
        });
        let psi_g = arch.use_global.then(|| {
            [
                ConvNormAct::new(pb, &format!("{name}.psi_g0"), 8 * c, 2 * c, 3, 1, 1),
                ConvNormAct::new(pb, &format!("{name}.psi_g1"), 2 * c, c, 3, 1, 1),
            ]
        });
        let ca = (arch.use_local && arch.use_global)
            .then(|| Mha::new(pb, &format!("{name}.ca"), d, arch.n_heads));
        DirmBlock {
            psi_l,
            psi_g,
            embed: Linear::new(pb, &format!("{name}.embed"), 2 * c, d, true),
            ca,
            sa: Mha::new(pb, &format!("{name}.sa"), d, arch.n_heads),
            // Zero-initialized: GELU(0) = 0, so R starts at exactly zero and
            // each block begins as a plain refold of its input. The gate is
            // multiplicative (R = GELU(g) ⊙ O); any nonzero start squares the
            // activation scale through every stacked block, and a K=3 model
            // overflows f32 before the first step.
            gate: Linear::new_zeroed(pb, &format!("{name}.gate"), d, d),
            refold_bn: BatchNorm2d::new(pb, &format!("{name}.refold_bn"), d),
            refold: Conv2d::new(pb, &format!("{name}.refold"), c + d, c, 1, 1, 0, true),
            channels: c,
            attn_dim: d,
            dropout: arch.dropout,
            use_local: arch.use_local,
            use_global: arch.use_global,
        }
    }

    /// Local stream: for each row, predict panel 3 from panels 1 and 2 and
    /// emit `concat(actual, error)` tokens. Returns `[(3N), T, 2C]` with rows
    /// kept in separate batch entries.
    fn local_tokens<F: Scalar>(&self, fw: &mut Fwd<F>, state: &Tensor<F>) -> Tensor<F> {
        let psi = self.psi_l.as_ref().unwrap();
        let (n, c) = (state.shape()[0], self.channels);
        let (h, w) = (state.shape()[3], state.shape()[4]);
        let pick = |slots: &[usize]| {
            state
                .index_select(1, slots)
                .reshape(&[n * 3, c, h, w])
        };
        let f1 = pick(&[0, 3, 6]);
        let f2 = pick(&[1, 4, 7]);
        let f3 = pick(&[2, 5, 8]);
        let hid = psi[0].forward(fw, &concat(&[&f1, &f2], 1));
        let pred = psi[1].forward(fw, &hid);
        let err = pred.sub(&f3);
        concat(&[&f3, &err], 1)
            .reshape(&[n * 3, 2 * c, h * w])
            .transpose(&[0, 2, 1])
    }

    /// Global stream: predict the missing panel from all eight context panels
    /// stacked along channels. Returns `[N, T, 2C]`.
    fn global_tokens<F: Scalar>(&self, fw: &mut Fwd<F>, state: &Tensor<F>) -> Tensor<F> {
        let psi = self.psi_g.as_ref().unwrap();
        let (n, c) = (state.shape()[0], self.channels);
        let (h, w) = (state.shape()[3], state.shape()[4]);
        let ctx = state.narrow(1, 0, 8).reshape(&[n, 8 * c, h, w]);
        let f_t = state.index_select(1, &[8]).reshape(&[n, c, h, w]);
        let hid = psi[0].forward(fw, &ctx);
        let pred = psi[1].forward(fw, &hid);
        let err = pred.sub(&f_t);
        concat(&[&f_t, &err], 1)
            .reshape(&[n, 2 * c, h * w])
            .transpose(&[0, 2, 1])
    }

    fn gate_and_spread<F: Scalar>(&self, fw: &mut Fwd<F>, o: &Tensor<F>) -> Tensor<F> {
        let g = self.gate.forward(fw, &o.mean_axis(1)).gelu();
        o.mul_bcast(&g, 1)
    }

    /// `[N, 9, C, h, w]` -> `[N, 9, C, h, w]`.
    pub fn forward<F: Scalar>(&self, fw: &mut Fwd<F>, state: &Tensor<F>) -> Tensor<F> {
        let (n, c, d) = (state.shape()[0], self.channels, self.attn_dim);
        let (h, w) = (state.shape()[3], state.shape()[4]);
        let t = h * w;
        debug_assert_eq!(state.shape()[1], 9);
        debug_assert_eq!(state.shape()[2], c);

        // Per-panel refinement tokens, expanded to all 9 slots.
        let r9 = match (self.use_local, self.use_global) {
            (true, true) => {
                let tok_l = self.local_tokens(fw, state).reshape(&[n, 3 * t, 2 * c]);
                let tok_g = self.global_tokens(fw, state);
                let el = self.embed.forward(fw, &tok_l); // [N, 3T, d]
                let eg = self.embed.forward(fw, &tok_g); // [N, T, d]
                let ca = self.ca.as_ref().unwrap();
                // Local queries attend globally and vice versa; the local
                // direction folds its three row blocks back to T tokens.
                let ca_l = ca
                    .forward(fw, &el, &eg)
                    .reshape(&[n, 3, t, d])
                    .mean_axis(1);
                let ca_g = ca.forward(fw, &eg, &el);
                let fused = ca_l.add(&ca_g);
                let o = self.sa.forward(fw, &fused, &fused);
                let o = fw.dropout(&o, self.dropout);
                let r = self.gate_and_spread(fw, &o); // [N, T, d]
                r.reshape(&[n, 1, t, d]).index_select(1, &[0; 9])
            }
            (true, false) => {
                // Rows stay separate sequences: each row's tokens only attend
                // within that row, and its slots receive that row's update.
                let tok_l = self.local_tokens(fw, state); // [(3N), T, 2C]
                let el = self.embed.forward(fw, &tok_l);
                let o = self.sa.forward(fw, &el, &el);
                let o = fw.dropout(&o, self.dropout);
                let r = self.gate_and_spread(fw, &o); // [(3N), T, d]
                r.reshape(&[n, 3, t, d])
                    .index_select(1, &[0, 0, 0, 1, 1, 1, 2, 2, 2])
            }
            (false, true) => {
                let tok_g = self.global_tokens(fw, state);
                let eg = self.embed.forward(fw, &tok_g);
                let o = self.sa.forward(fw, &eg, &eg);
                let o = fw.dropout(&o, self.dropout);
                let r = self.gate_and_spread(fw, &o);
                r.reshape(&[n, 1, t, d]).index_select(1, &[0; 9])
            }
            (false, false) => unreachable!("arch validation requires one path"),
        };

        // Refold: append the refinement channels to every panel and mix back
        // down to C channels with a 1x1 conv.
        let r_panels = r9
            .transpose(&[0, 1, 3, 2])
            .reshape(&[n * 9, d, h, w]);
        let r_panels = self.refold_bn.forward(fw, &r_panels);
        let x_panels = state.reshape(&[n * 9, c, h, w]);
        self.refold
            .forward(fw, &concat(&[&x_panels, &r_panels], 1))
            .reshape(&[n, 9, c, h, w])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testutil::*;
    use crate::model::{Fwd, ModelArch, ParamBuilder, ParamStore, StatsStore};
    use crate::tensor::{gradcheck, CheckOpts, Tape};
    use ndarray::{ArrayD, IxDyn};

    fn block_arch(use_local: bool, use_global: bool) -> ModelArch {
        ModelArch {
            use_local,
            use_global,
            ..tiny_arch()
        }
    }

    fn build(arch: &ModelArch) -> (ParamStore<f64>, StatsStore<f64>, DirmBlock) {
        let mut ps = ParamStore::new();
        let mut ss = StatsStore::new();
        let mut pb = ParamBuilder::new(&mut ps, &mut ss, 17);
        let blk = DirmBlock::new(&mut pb, "d", arch);
        (ps, ss, blk)
    }

    /// The gate initializes closed (R = 0); bias it open so refinement
    /// actually reaches the refold.
    fn open_gate(ps: &mut ParamStore<f64>, blk: &DirmBlock) {
        let b = blk.gate.b.unwrap();
        let shape = ps.value(b).shape().to_vec();
        ps.set(b, ArrayD::ones(IxDyn(&shape)));
    }

    fn forward(
        ps: &ParamStore<f64>,
        ss: &StatsStore<f64>,
        blk: &DirmBlock,
        state: &ArrayD<f64>,
    ) -> ArrayD<f64> {
        let tape = Tape::new();
        let mut stats = ss.clone();
        let mut fw = Fwd::new(&tape, ps, &mut stats, false, false, test_rng(0));
        let s = tape.constant(state.clone());
        blk.forward(&mut fw, &s).value().to_owned()
    }

    #[test]
    fn block_preserves_state_shape_in_all_modes() {
        let state = rand_arr::<f64>(70, &[2, 9, 4, 3, 3], -1.0, 1.0);
        for (l, g) in [(true, true), (true, false), (false, true)] {
            let arch = block_arch(l, g);
            let (ps, ss, blk) = build(&arch);
            let out = forward(&ps, &ss, &blk, &state);
            assert_eq!(out.shape(), state.shape(), "mode ({l},{g})");
            // Path-specific parameters only exist for enabled paths, and the
            // cross-attention only when both are.
            assert_eq!(ps.id_of("d.psi_l0.conv.w").is_some(), l);
            assert_eq!(ps.id_of("d.psi_g0.conv.w").is_some(), g);
            assert_eq!(ps.id_of("d.ca.wq.w").is_some(), l && g);
        }
    }

    #[test]
    fn identical_streams_fuse_to_twice_self_attention() {
        // When every panel carries the same features and both predictors
        // output zero, the local stream is three copies of the global one.
        // Folding the local cross-attention output and adding the global one
        // must then equal exactly 2 * CA(x, x): duplicated keys renormalize
        // to the same attention distribution.
        let arch = block_arch(true, true);
        let (mut ps, ss, blk) = build(&arch);
        for name in ["d.psi_l1.conv.w", "d.psi_g1.conv.w"] {
            let id = ps.id_of(name).unwrap();
            let shape = ps.value(id).shape().to_vec();
            ps.set(id, ArrayD::zeros(IxDyn(&shape)));
        }
        let panel = rand_arr::<f64>(71, &[2, 1, 4, 3, 3], -1.0, 1.0);
        let state = panel
            .index_axis(ndarray::Axis(1), 0)
            .insert_axis(ndarray::Axis(1))
            .to_owned()
            .select(ndarray::Axis(1), &[0; 9]);
        let state = state.as_standard_layout().to_owned();
        assert_eq!(state.shape(), &[2, 9, 4, 3, 3]);

        let tape = Tape::new();
        let mut stats = ss.clone();
        let mut fw = Fwd::new(&tape, &ps, &mut stats, false, false, test_rng(0));
        let s = tape.constant(state.clone().into_dyn());
        let (n, t) = (2, 9);
        let tok_l = blk.local_tokens(&mut fw, &s).reshape(&[n, 3 * t, 8]);
        let tok_g = blk.global_tokens(&mut fw, &s);
        let el = blk.embed.forward(&mut fw, &tok_l);
        let eg = blk.embed.forward(&mut fw, &tok_g);
        let ca = blk.ca.as_ref().unwrap();
        let ca_l = ca.forward(&mut fw, &el, &eg);
        let folded = ca_l.reshape(&[n, 3, t, 4]).mean_axis(1);
        let ca_g = ca.forward(&mut fw, &eg, &el);
        let lhs = folded.add(&ca_g);
        let rhs = ca.forward(&mut fw, &eg, &eg).mul_scalar(2.0);
        let (lv, rv) = (lhs.value(), rhs.value());
        for (a, b) in lv.iter().zip(rv.iter()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn local_only_keeps_candidate_out_of_first_two_rows() {
        let arch = block_arch(true, false);
        let (mut ps, ss, blk) = build(&arch);
        open_gate(&mut ps, &blk);
        let base = rand_arr::<f64>(72, &[1, 9, 4, 3, 3], -1.0, 1.0);
        let mut tampered = base.clone();
        for v in tampered.index_axis_mut(ndarray::Axis(1), 8).iter_mut() {
            *v += 0.5;
        }
        let out_a = forward(&ps, &ss, &blk, &base);
        let out_b = forward(&ps, &ss, &blk, &tampered);
        let slot_diff = |out_a: &ArrayD<f64>, out_b: &ArrayD<f64>, s: usize| {
            let a = out_a.index_axis(ndarray::Axis(1), s);
            let b = out_b.index_axis(ndarray::Axis(1), s);
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        };
        for s in 0..6 {
            assert!(slot_diff(&out_a, &out_b, s) < 1e-12, "slot {s} leaked");
        }
        assert!(slot_diff(&out_a, &out_b, 8) > 1e-6);
    }

    #[test]
    fn global_only_couples_all_slots_to_candidate() {
        let arch = block_arch(false, true);
        let (mut ps, ss, blk) = build(&arch);
        open_gate(&mut ps, &blk);
        let base = rand_arr::<f64>(73, &[1, 9, 4, 3, 3], -1.0, 1.0);
        let mut tampered = base.clone();
        for v in tampered.index_axis_mut(ndarray::Axis(1), 8).iter_mut() {
            *v += 0.5;
        }
        let out_a = forward(&ps, &ss, &blk, &base);
        let out_b = forward(&ps, &ss, &blk, &tampered);
        // The shared refinement tokens depend on the candidate, so even
        // context slots move.
        let a0 = out_a.index_axis(ndarray::Axis(1), 0);
        let b0 = out_b.index_axis(ndarray::Axis(1), 0);
        let diff = a0
            .iter()
            .zip(b0.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff > 1e-9);
    }

    #[test]
    fn gate_saturates_to_pass_and_block() {
        // gelu(10) is within 1e-20 of 10 and gelu(-10) within 1e-20 of 0, so
        // extreme gate preactivations scale channels by 10 or silence them.
        let arch = block_arch(true, true);
        let (mut ps, ss, blk) = build(&arch);
        ps.set(blk.gate.w, ArrayD::zeros(IxDyn(&[4, 4])));
        ps.set(
            blk.gate.b.unwrap(),
            ArrayD::from_shape_vec(IxDyn(&[4]), vec![10.0, 10.0, -10.0, -10.0]).unwrap(),
        );
        let tape = Tape::new();
        let mut stats = ss.clone();
        let mut fw = Fwd::new(&tape, &ps, &mut stats, false, false, test_rng(0));
        let o = tape.constant(rand_arr::<f64>(74, &[2, 5, 4], -1.0, 1.0));
        let r = blk.gate_and_spread(&mut fw, &o);
        let (ov, rv) = (o.value(), r.value());
        for i in 0..2 {
            for tq in 0..5 {
                for d in 0..2 {
                    assert!((rv[[i, tq, d]] - 10.0 * ov[[i, tq, d]]).abs() < 1e-15);
                    assert!(rv[[i, tq, d + 2]].abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn gradcheck_psi_l() {
        // 2-to-1 predictor pair in training mode, exercising batch-norm's
        // batch-statistics gradient path.
        let mut ps = ParamStore::<f64>::new();
        let mut ss = StatsStore::new();
        let mut pb = ParamBuilder::new(&mut ps, &mut ss, 18);
        let p0 = ConvNormAct::new(&mut pb, "p0", 4, 2, 3, 1, 1);
        let p1 = ConvNormAct::new(&mut pb, "p1", 2, 2, 3, 1, 1);
        let inputs = vec![
            rand_arr::<f64>(75, &[3, 4, 3, 3], -1.0, 1.0),
            ps.value(p0.conv.w).to_owned(),
            ps.value(p1.conv.w).to_owned(),
            rand_arr::<f64>(76, &[2], 0.5, 1.5),
        ];
        let report = gradcheck(
            &|tape, ts| {
                let mut stats = ss.clone();
                let mut fw = Fwd::new(tape, &ps, &mut stats, true, true, test_rng(0));
                fw.preload(p0.conv.w, ts[1].clone());
                fw.preload(p1.conv.w, ts[2].clone());
                fw.preload(p0.bn.gamma, ts[3].clone());
                let h = p0.forward(&mut fw, &ts[0]);
                let y = p1.forward(&mut fw, &h);
                y.mul(&y).sum_all().mul_scalar(0.5)
            },
            &inputs,
            &CheckOpts::f64_defaults(),
        );
        assert!(report.pass, "{report}");
    }

    #[test]
    fn gradcheck_psi_g() {
        // 8-to-1 predictor pair: stacked-context channels in, one panel out.
        let mut ps = ParamStore::<f64>::new();
        let mut ss = StatsStore::new();
        let mut pb = ParamBuilder::new(&mut ps, &mut ss, 19);
        let p0 = ConvNormAct::new(&mut pb, "p0", 8, 2, 3, 1, 1);
        let p1 = ConvNormAct::new(&mut pb, "p1", 2, 1, 3, 1, 1);
        let inputs = vec![
            rand_arr::<f64>(77, &[2, 8, 3, 3], -1.0, 1.0),
            ps.value(p0.conv.w).to_owned(),
            ps.value(p1.conv.w).to_owned(),
        ];
        let report = gradcheck(
            &|tape, ts| {
                let mut stats = ss.clone();
                let mut fw = Fwd::new(tape, &ps, &mut stats, true, true, test_rng(0));
                fw.preload(p0.conv.w, ts[1].clone());
                fw.preload(p1.conv.w, ts[2].clone());
                let h = p0.forward(&mut fw, &ts[0]);
                let y = p1.forward(&mut fw, &h);
                y.mul(&y).sum_all().mul_scalar(0.5)
            },
            &inputs,
            &CheckOpts::f64_defaults(),
        );
        assert!(report.pass, "{report}");
    }

    #[test]
    fn gradcheck_fusion_attention() {
        let arch = block_arch(true, true);
        let (ps, ss, blk) = build(&arch);
        let ca = blk.ca.as_ref().unwrap();
        let inputs = vec![
            rand_arr::<f64>(78, &[2, 3, 4], -1.0, 1.0), // queries
            rand_arr::<f64>(79, &[2, 5, 4], -1.0, 1.0), // keys/values
            ps.value(ca.wq.w).to_owned(),
            ps.value(ca.wk.w).to_owned(),
            ps.value(ca.wv.w).to_owned(),
            ps.value(ca.wo.w).to_owned(),
        ];
        let report = gradcheck(
            &|tape, ts| {
                let mut stats = ss.clone();
                let mut fw = Fwd::new(tape, &ps, &mut stats, false, true, test_rng(0));
                fw.preload(ca.wq.w, ts[2].clone());
                fw.preload(ca.wk.w, ts[3].clone());
                fw.preload(ca.wv.w, ts[4].clone());
                fw.preload(ca.wo.w, ts[5].clone());
                let y = ca.forward(&mut fw, &ts[0], &ts[1]);
                y.mul(&y).sum_all().mul_scalar(0.5)
            },
            &inputs,
            &CheckOpts::f64_defaults(),
        );
        assert!(report.pass, "{report}");
    }

    #[test]
    fn gradcheck_gate() {
        let arch = block_arch(true, true);
        let (ps, ss, blk) = build(&arch);
        // The stored gate starts at zero, which would make this check vacuous;
        // use random gate parameters instead.
        let inputs = vec![
            rand_arr::<f64>(80, &[2, 5, 4], -1.0, 1.0),
            rand_arr::<f64>(81, &[4, 4], -0.7, 0.7),
            rand_arr::<f64>(82, &[4], -0.5, 0.5),
        ];
        let report = gradcheck(
            &|tape, ts| {
                let mut stats = ss.clone();
                let mut fw = Fwd::new(tape, &ps, &mut stats, false, true, test_rng(0));
                fw.preload(blk.gate.w, ts[1].clone());
                fw.preload(blk.gate.b.unwrap(), ts[2].clone());
                let r = blk.gate_and_spread(&mut fw, &ts[0]);
                r.mul(&r).sum_all().mul_scalar(0.5)
            },
            &inputs,
            &CheckOpts::f64_defaults(),
        );
        assert!(report.pass, "{report}");
    }
}
