//! The DIRCR network: a small residual encoder feeding a stack of
//! dual-inference reasoning blocks, a candidate scoring head, and an optional
//! contrastive projection.
//!
//! Parameters live in a [`ParamStore`] owned by the [`Model`]; a forward pass
//! leases them onto a [`Tape`](crate::tensor::Tape) through the [`Fwd`]
//! context so the trainer can map gradients back to stable parameter ids.

mod dirm;
mod encoder;
mod rclm;
mod scoring;

pub use dirm::DirmBlock;
pub use encoder::Encoder;
pub use rclm::{contrastive_loss, pseudo_label, rclm_graph_loss, Projection};
pub use scoring::{argmax, classification_loss, softmax8, ScoringHead};

use std::collections::HashMap;

use ndarray::{ArcArray, ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DircrError, Result};
use crate::seed::rng_for;
use crate::tensor::{Scalar, Tape, Tensor};

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

/// Stable handle to one parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PId(usize);

impl PId {
    /// Registration-order index; stable for a fixed architecture, which lets
    /// optimizer state and checkpoints address parameters positionally.
    pub fn index(self) -> usize {
        self.0
    }
}

/// Stable handle to one batch-norm running statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SId(usize);

/// Named trainable parameters. Values are shared arrays so leasing one onto a
/// tape is a cheap reference-count bump, not a copy.
#[derive(Clone)]
pub struct ParamStore<F: Scalar> {
    entries: Vec<(String, ArcArray<F, IxDyn>)>,
    index: HashMap<String, PId>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new(), index: HashMap::new() }
    }

    pub fn register(&mut self, name: &str, value: ArrayD<F>) -> PId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = PId(self.entries.len());
        self.entries.push((name.to_string(), value.into_shared()));
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, id: PId) -> &str {
        &self.entries[id.0].0
    }

    pub fn value(&self, id: PId) -> &ArcArray<F, IxDyn> {
        &self.entries[id.0].1
    }

    pub fn set(&mut self, id: PId, value: ArrayD<F>) {
        assert_eq!(
            self.entries[id.0].1.shape(),
            value.shape(),
            "parameter {} shape changed",
            self.entries[id.0].0
        );
        self.entries[id.0].1 = value.into_shared();
    }

    pub fn id_of(&self, name: &str) -> Option<PId> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (PId, &str, &ArcArray<F, IxDyn>)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (n, v))| (PId(i), n.as_str(), v))
    }

    /// Total scalar count across all parameters.
    pub fn n_scalars(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.len()).sum()
    }
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Named non-trainable state (batch-norm running mean/variance).
#[derive(Clone)]
pub struct StatsStore<F: Scalar> {
    entries: Vec<(String, ArrayD<F>)>,
    index: HashMap<String, SId>,
}

impl<F: Scalar> StatsStore<F> {
    pub fn new() -> Self {
        StatsStore { entries: Vec::new(), index: HashMap::new() }
    }

    pub fn register(&mut self, name: &str, value: ArrayD<F>) -> SId {
        assert!(
            !self.index.contains_key(name),
            "duplicate statistic name {name}"
        );
        let id = SId(self.entries.len());
        self.entries.push((name.to_string(), value));
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, id: SId) -> &str {
        &self.entries[id.0].0
    }

    pub fn value(&self, id: SId) -> &ArrayD<F> {
        &self.entries[id.0].1
    }

    pub fn set(&mut self, id: SId, value: ArrayD<F>) {
        self.entries[id.0].1 = value;
    }

    pub fn id_of(&self, name: &str) -> Option<SId> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (SId, &str, &ArrayD<F>)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (n, v))| (SId(i), n.as_str(), v))
    }
}

impl<F: Scalar> Default for StatsStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Registers parameters with deterministic initialization. Each parameter's
/// values derive from `(init_seed, parameter name)` alone, so construction
/// order never changes the numbers.
pub struct ParamBuilder<'a, F: Scalar> {
    pub params: &'a mut ParamStore<F>,
    pub stats: &'a mut StatsStore<F>,
    init_seed: u64,
}

impl<'a, F: Scalar> ParamBuilder<'a, F> {
    pub fn new(
        params: &'a mut ParamStore<F>,
        stats: &'a mut StatsStore<F>,
        init_seed: u64,
    ) -> Self {
        ParamBuilder { params, stats, init_seed }
    }

    fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> PId {
        let mut rng = rng_for(self.init_seed, name, &[]);
        let v = ArrayD::from_shape_simple_fn(IxDyn(shape), || F::fr(rng.gen_range(-bound..bound)));
        self.params.register(name, v)
    }

    /// He-uniform init, U(-b, b) with b = sqrt(6 / fan_in).
    pub fn he(&mut self, name: &str, shape: &[usize], fan_in: usize) -> PId {
        self.uniform(name, shape, (6.0 / fan_in as f64).sqrt())
    }

    /// He-uniform shrunk by `scale`; used for output layers that should start
    /// near (but not at) zero.
    pub fn he_scaled(&mut self, name: &str, shape: &[usize], fan_in: usize, scale: f64) -> PId {
        self.uniform(name, shape, scale * (6.0 / fan_in as f64).sqrt())
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> PId {
        self.params.register(name, ArrayD::zeros(IxDyn(shape)))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> PId {
        self.params
            .register(name, ArrayD::from_elem(IxDyn(shape), F::one()))
    }

    pub fn stat_zeros(&mut self, name: &str, shape: &[usize]) -> SId {
        self.stats.register(name, ArrayD::zeros(IxDyn(shape)))
    }

    pub fn stat_ones(&mut self, name: &str, shape: &[usize]) -> SId {
        self.stats
            .register(name, ArrayD::from_elem(IxDyn(shape), F::one()))
    }
}

/// Per-pass forward context: the tape, leased parameters, mutable running
/// statistics, and the dropout stream. `grad = false` skips recording backward
/// closures entirely (evaluation); `train` switches batch-norm and dropout.
pub struct Fwd<'a, F: Scalar> {
    pub tape: &'a Tape<F>,
    pub params: &'a ParamStore<F>,
    pub stats: &'a mut StatsStore<F>,
    pub train: bool,
    pub grad: bool,
    dropout_rng: ChaCha8Rng,
    leased: HashMap<PId, Tensor<F>>,
}

impl<'a, F: Scalar> Fwd<'a, F> {
    pub fn new(
        tape: &'a Tape<F>,
        params: &'a ParamStore<F>,
        stats: &'a mut StatsStore<F>,
        train: bool,
        grad: bool,
        dropout_rng: ChaCha8Rng,
    ) -> Self {
        Fwd { tape, params, stats, train, grad, dropout_rng, leased: HashMap::new() }
    }

    /// Leases a parameter onto the tape (at most once per pass).
    pub fn p(&mut self, id: PId) -> Tensor<F> {
        if let Some(t) = self.leased.get(&id) {
            return t.clone();
        }
        let arc = self.params.value(id).clone();
        let t = if self.grad {
            self.tape.var_shared(arc)
        } else {
            self.tape.constant_shared(arc)
        };
        self.leased.insert(id, t.clone());
        t
    }

    /// Substitutes a tape tensor for a parameter before the forward pass;
    /// used by gradient checks to differentiate with respect to a parameter
    /// supplied from outside the store.
    pub fn preload(&mut self, id: PId, t: Tensor<F>) {
        self.leased.insert(id, t);
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.dropout_rng
    }

    /// Dropout drawing from this context's stream; identity in eval mode.
    pub fn dropout(&mut self, x: &Tensor<F>, rate: f64) -> Tensor<F> {
        let train = self.train;
        x.dropout(rate, &mut self.dropout_rng, train)
    }

    /// Hands back the leased tensors so gradients can be mapped to ids.
    pub fn into_leases(self) -> HashMap<PId, Tensor<F>> {
        self.leased
    }
}

/// Fully-connected layer; weight stored `[in, out]` so forward needs no
/// transpose.
pub struct Linear {
    pub w: PId,
    pub b: Option<PId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<F: Scalar>(
        pb: &mut ParamBuilder<F>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Self {
        let w = pb.he(&format!("{name}.w"), &[in_dim, out_dim], in_dim);
        let b = bias.then(|| pb.zeros(&format!("{name}.b"), &[out_dim]));
        Linear { w, b, in_dim, out_dim }
    }

    /// Output-layer variant: weights shrunk by `scale` so the layer starts
    /// close to zero without killing its gradient.
    pub fn new_scaled<F: Scalar>(
        pb: &mut ParamBuilder<F>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        scale: f64,
    ) -> Self {
        let w = pb.he_scaled(&format!("{name}.w"), &[in_dim, out_dim], in_dim, scale);
        let b = bias.then(|| pb.zeros(&format!("{name}.b"), &[out_dim]));
        Linear { w, b, in_dim, out_dim }
    }

    /// Gate/residual variant: weight and bias start at exactly zero so the
    /// layer contributes nothing until training opens it.
    pub fn new_zeroed<F: Scalar>(
        pb: &mut ParamBuilder<F>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let w = pb.zeros(&format!("{name}.w"), &[in_dim, out_dim]);
        let b = Some(pb.zeros(&format!("{name}.b"), &[out_dim]));
        Linear { w, b, in_dim, out_dim }
    }

    /// Applies over the last axis; any leading shape is preserved.
    pub fn forward<F: Scalar>(&self, fw: &mut Fwd<F>, x: &Tensor<F>) -> Tensor<F> {
        let shape = x.shape().to_vec();
        let (lead, last) = shape.split_at(shape.len() - 1);
        assert_eq!(last[0], self.in_dim, "linear input dim");
        let m: usize = lead.iter().product();
        let w = fw.p(self.w);
        let mut y = x.reshape(&[m, self.in_dim]).matmul(&w);
        if let Some(b) = self.b {
            let bias = fw.p(b);
            y = y.add_bias(&bias, 1);
        }
        let mut out_shape = lead.to_vec();
        out_shape.push(self.out_dim);
        y.reshape(&out_shape)
    }
}

/// 2-D convolution layer over `[N, C_in, H, W]`.
pub struct Conv2d {
    pub w: PId,
    pub b: Option<PId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Scalar>(
        pb: &mut ParamBuilder<F>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        let w = pb.he(&format!("{name}.w"), &[c_out, c_in, k, k], c_in * k * k);
        let b = bias.then(|| pb.zeros(&format!("{name}.b"), &[c_out]));
        Conv2d { w, b, stride, pad }
    }

    pub fn forward<F: Scalar>(&self, fw: &mut Fwd<F>, x: &Tensor<F>) -> Tensor<F> {
        let w = fw.p(self.w);
        let mut y = x.conv2d(&w, self.stride, self.pad);
        if let Some(b) = self.b {
            let bias = fw.p(b);
            y = y.add_bias(&bias, 1);
        }
        y
    }
}

/// Batch normalization over the channel axis of `[N, C, H, W]`.
pub struct BatchNorm2d {
    pub gamma: PId,
    pub beta: PId,
    pub mean: SId,
    pub var: SId,
}

impl BatchNorm2d {
    pub fn new<F: Scalar>(pb: &mut ParamBuilder<F>, name: &str, c: usize) -> Self {
        BatchNorm2d {
            gamma: pb.ones(&format!("{name}.gamma"), &[c]),
            beta: pb.zeros(&format!("{name}.beta"), &[c]),
            mean: pb.stat_zeros(&format!("{name}.running_mean"), &[c]),
            var: pb.stat_ones(&format!("{name}.running_var"), &[c]),
        }
    }

    pub fn forward<F: Scalar>(&self, fw: &mut Fwd<F>, x: &Tensor<F>) -> Tensor<F> {
        let gamma = fw.p(self.gamma);
        let beta = fw.p(self.beta);
        let rm = fw.stats.value(self.mean).clone();
        let rv = fw.stats.value(self.var).clone();
        let (y, updated) =
            x.batchnorm2d(&gamma, &beta, &rm, &rv, fw.train, BN_MOMENTUM, BN_EPS);
        if let Some((nm, nv)) = updated {
            fw.stats.set(self.mean, nm);
            fw.stats.set(self.var, nv);
        }
        y
    }
}

/// Conv -> BatchNorm -> ReLU, the predictor building unit.
pub struct ConvNormAct {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvNormAct {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Scalar>(
        pb: &mut ParamBuilder<F>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        ConvNormAct {
            conv: Conv2d::new(pb, &format!("{name}.conv"), c_in, c_out, k, stride, pad, false),
            bn: BatchNorm2d::new(pb, &format!("{name}.bn"), c_out),
        }
    }

    pub fn forward<F: Scalar>(&self, fw: &mut Fwd<F>, x: &Tensor<F>) -> Tensor<F> {
        let y = self.conv.forward(fw, x);
        self.bn.forward(fw, &y).relu()
    }
}

/// Multi-head scaled-dot-product attention over `[N, T, d]` token sequences.
/// One parameter set serves both cross-attention (distinct query and key/value
/// sequences) and self-attention.
pub struct Mha {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub n_heads: usize,
}

impl Mha {
    pub fn new<F: Scalar>(pb: &mut ParamBuilder<F>, name: &str, d: usize, n_heads: usize) -> Self {
        assert!(d % n_heads == 0, "attn_dim {d} not divisible by {n_heads} heads");
        Mha {
            wq: Linear::new(pb, &format!("{name}.wq"), d, d, true),
            wk: Linear::new(pb, &format!("{name}.wk"), d, d, true),
            wv: Linear::new(pb, &format!("{name}.wv"), d, d, true),
            wo: Linear::new(pb, &format!("{name}.wo"), d, d, true),
            n_heads,
        }
    }

    /// `q`: `[N, Tq, d]`, `kv`: `[N, Tk, d]` -> `[N, Tq, d]`.
    pub fn forward<F: Scalar>(&self, fw: &mut Fwd<F>, q: &Tensor<F>, kv: &Tensor<F>) -> Tensor<F> {
        let (n, tq, d) = (q.shape()[0], q.shape()[1], q.shape()[2]);
        let tk = kv.shape()[1];
        let h = self.n_heads;
        let dh = d / h;
        let split = |t: &Tensor<F>, tt: usize| {
            // [N, T, d] -> [N*H, T, dh]
            t.reshape(&[n, tt, h, dh])
                .transpose(&[0, 2, 1, 3])
                .reshape(&[n * h, tt, dh])
        };
        let qh = split(&self.wq.forward(fw, q), tq);
        let kh = split(&self.wk.forward(fw, kv), tk);
        let vh = split(&self.wv.forward(fw, kv), tk);
        let scale = F::fr(1.0 / (dh as f64).sqrt());
        let scores = qh.bmm(&kh.transpose(&[0, 2, 1])).mul_scalar(scale);
        let attn = scores.softmax_last();
        let ctx = attn.bmm(&vh); // [N*H, Tq, dh]
        let merged = ctx
            .reshape(&[n, h, tq, dh])
            .transpose(&[0, 2, 1, 3])
            .reshape(&[n, tq, d]);
        self.wo.forward(fw, &merged)
    }
}

/// Resolved architecture of one model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArch {
    pub image_size: usize,
    pub channels: usize,
    pub n_blocks: usize,
    pub k: usize,
    pub n_heads: usize,
    pub attn_dim: usize,
    pub dropout: f64,
    pub use_local: bool,
    pub use_global: bool,
    pub use_rclm: bool,
    pub proj_dim: usize,
}

impl Default for ModelArch {
    fn default() -> Self {
        ModelArch {
            image_size: 80,
            channels: 64,
            n_blocks: 4,
            k: 3,
            n_heads: 4,
            attn_dim: 64,
            dropout: 0.1,
            use_local: true,
            use_global: true,
            use_rclm: true,
            proj_dim: 128,
        }
    }
}

impl ModelArch {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(DircrError::Config(m));
        if !self.use_local && !self.use_global {
            return err("at least one of the local and global paths must be enabled".into());
        }
        if self.k < 1 {
            return err("k must be at least 1".into());
        }
        if self.channels % 2 != 0 {
            return err(format!("channels {} must be even", self.channels));
        }
        if self.n_blocks == 0 || self.image_size % (1 << self.n_blocks) != 0 {
            return err(format!(
                "image_size {} must be divisible by 2^n_blocks = {}",
                self.image_size,
                1 << self.n_blocks
            ));
        }
        if self.attn_dim % self.n_heads != 0 {
            return err(format!(
                "attn_dim {} must be divisible by n_heads {}",
                self.attn_dim, self.n_heads
            ));
        }
        Ok(())
    }

    /// Spatial side of the encoder output feature maps.
    pub fn feat_size(&self) -> usize {
        self.image_size >> self.n_blocks
    }
}

/// Output of one scoring forward pass over a batch of puzzles.
pub struct ForwardOut<F: Scalar> {
    /// `[B, 8]` candidate logits.
    pub logits: Tensor<F>,
    /// `[(B*8*3), 3C]` per-candidate row features (sample-major, candidate,
    /// then row), present when the contrastive module is enabled.
    pub g_rows: Option<Tensor<F>>,
}

pub struct Model<F: Scalar> {
    pub arch: ModelArch,
    pub params: ParamStore<F>,
    pub stats: StatsStore<F>,
    pub encoder: Encoder,
    pub blocks: Vec<DirmBlock>,
    pub head: ScoringHead,
    pub projection: Option<Projection>,
}

impl<F: Scalar> Model<F> {
    pub fn new(arch: ModelArch, init_seed: u64) -> Result<Model<F>> {
        arch.validate()?;
        let mut params = ParamStore::new();
        let mut stats = StatsStore::new();
        let mut pb = ParamBuilder::new(&mut params, &mut stats, init_seed);
        let encoder = Encoder::new(&mut pb, &arch)?;
        let blocks = (0..arch.k)
            .map(|k| DirmBlock::new(&mut pb, &format!("dirm{k}"), &arch))
            .collect();
        let head = ScoringHead::new(&mut pb, "head", &arch);
        let projection = arch
            .use_rclm
            .then(|| Projection::new(&mut pb, "proj", &arch));
        Ok(Model { arch, params, stats, encoder, blocks, head, projection })
    }

    /// Scores a batch of puzzles. `images` is `[B, 16, S, S]` with pixel
    /// values in `[0, 1]`: 8 context panels then 8 candidates per puzzle.
    pub fn forward(&self, fw: &mut Fwd<F>, images: &ArrayD<F>) -> Result<ForwardOut<F>> {
        let dims = images.shape().to_vec();
        let s = self.arch.image_size;
        if dims.len() != 4 || dims[1] != 16 || dims[2] != s || dims[3] != s {
            return Err(DircrError::ShapeMismatch {
                op: "model_forward",
                expected: format!("[B, 16, {s}, {s}]"),
                got: format!("{dims:?}"),
            });
        }
        let b = dims[0];
        let c = self.arch.channels;
        let hw = self.arch.feat_size();

        let x = fw
            .tape
            .constant(images.clone().into_shape_with_order(IxDyn(&[b * 16, 1, s, s])).unwrap());
        let feats = self.encoder.forward(fw, &x)?; // [(B*16), C, h, w]

        // One reasoning state per candidate: panels Q1..Q8 then the candidate
        // in the missing slot.
        let mut sel = Vec::with_capacity(b * 8 * 9);
        for bb in 0..b {
            for j in 0..8 {
                for slot in 0..8 {
                    sel.push(bb * 16 + slot);
                }
                sel.push(bb * 16 + 8 + j);
            }
        }
        let n = b * 8;
        let mut state = feats.index_select(0, &sel).reshape(&[n, 9, c, hw, hw]);
        for block in &self.blocks {
            state = block.forward(fw, &state);
        }

        let pooled = state.reshape(&[n, 9, c, hw * hw]).mean_axis(3).mean_axis(1); // [N, C]
        let logits = self.head.forward(fw, &pooled).reshape(&[b, 8]);

        let g_rows = self.arch.use_rclm.then(|| {
            let mut rows = Vec::with_capacity(3);
            for r in 0..3 {
                let row = state.index_select(1, &[3 * r, 3 * r + 1, 3 * r + 2]); // [N,3,C,h,w]
                rows.push(
                    row.reshape(&[n, 3, c, hw * hw])
                        .mean_axis(3)
                        .reshape(&[n, 1, 3 * c]),
                );
            }
            let refs: Vec<&Tensor<F>> = rows.iter().collect();
            crate::tensor::concat(&refs, 1).reshape(&[n * 3, 3 * c])
        });

        Ok(ForwardOut { logits, g_rows })
    }
}

/// Packs puzzles into the `[B, 16, S, S]` input tensor, normalized to [0, 1].
pub fn batch_images<F: Scalar>(puzzles: &[&crate::puzzle::Puzzle]) -> ArrayD<F> {
    assert!(!puzzles.is_empty());
    let s = puzzles[0].image_size as usize;
    let b = puzzles.len();
    let mut out = ArrayD::<F>::zeros(IxDyn(&[b, 16, s, s]));
    let inv = 1.0 / 255.0;
    {
        let flat = out.as_slice_mut().unwrap();
        for (bi, p) in puzzles.iter().enumerate() {
            for (pi, img) in p.context.iter().chain(p.candidates.iter()).enumerate() {
                let base = (bi * 16 + pi) * s * s;
                for (k, &byte) in img.iter().enumerate() {
                    flat[base + k] = F::fr(byte as f64 * inv);
                }
            }
        }
    }
    out
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use crate::puzzle::{generate_puzzle, PuzzleConfig};

    fn close(a: &ArrayD<f64>, b: &ArrayD<f64>, tol: f64) -> bool {
        a.shape() == b.shape()
            && a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn param_store_roundtrip() {
        let mut ps = ParamStore::<f32>::new();
        let a = ps.register("a", ArrayD::zeros(IxDyn(&[2, 3])));
        let b = ps.register("b", ArrayD::zeros(IxDyn(&[4])));
        assert_eq!(ps.len(), 2);
        assert_eq!(ps.n_scalars(), 10);
        assert_eq!(ps.id_of("a"), Some(a));
        assert_eq!(ps.id_of("c"), None);
        assert_eq!(ps.name(b), "b");
        ps.set(a, ArrayD::from_elem(IxDyn(&[2, 3]), 7.0));
        assert_eq!(ps.value(a)[[0, 0]], 7.0);
        let names: Vec<&str> = ps.iter().map(|(_, n, _)| n).collect();
        assert_eq!(names, ["a", "b"]);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter")]
    fn param_store_rejects_duplicate_names() {
        let mut ps = ParamStore::<f32>::new();
        ps.register("w", ArrayD::zeros(IxDyn(&[1])));
        ps.register("w", ArrayD::zeros(IxDyn(&[1])));
    }

    #[test]
    fn init_depends_on_name_and_seed_not_order() {
        let build = |order_flip: bool, seed: u64| {
            let mut ps = ParamStore::<f64>::new();
            let mut ss = StatsStore::new();
            let mut pb = ParamBuilder::new(&mut ps, &mut ss, seed);
            if order_flip {
                pb.he("x", &[3, 3], 3);
                pb.he("y", &[3, 3], 3);
            } else {
                pb.he("y", &[3, 3], 3);
                pb.he("x", &[3, 3], 3);
            }
            let xv = ps.value(ps.id_of("x").unwrap()).to_owned();
            let yv = ps.value(ps.id_of("y").unwrap()).to_owned();
            (xv, yv)
        };
        let (x1, y1) = build(false, 9);
        let (x2, y2) = build(true, 9);
        assert_eq!(x1, x2);
        assert_eq!(y1, y2);
        assert_ne!(x1, y1);
        let (x3, _) = build(false, 10);
        assert_ne!(x1, x3);
    }

    #[test]
    fn he_bounds_respected() {
        let mut ps = ParamStore::<f64>::new();
        let mut ss = StatsStore::new();
        let mut pb = ParamBuilder::new(&mut ps, &mut ss, 1);
        let id = pb.he("w", &[64, 9], 9);
        let b = (6.0_f64 / 9.0).sqrt();
        let v = ps.value(id);
        assert!(v.iter().all(|&x| x > -b && x < b));
        // Not degenerate: values spread over the range.
        assert!(v.iter().any(|&x| x > 0.5 * b));
        assert!(v.iter().any(|&x| x < -0.5 * b));
    }

    #[test]
    fn linear_matches_manual_matmul() {
        let mut ps = ParamStore::<f64>::new();
        let mut ss = StatsStore::new();
        let mut pb = ParamBuilder::new(&mut ps, &mut ss, 3);
        let lin = Linear::new(&mut pb, "l", 3, 2, true);
        ps.set(
            lin.w,
            ArrayD::from_shape_vec(IxDyn(&[3, 2]), vec![1.0, 0.0, 0.0, 1.0, 2.0, -1.0]).unwrap(),
        );
        ps.set(lin.b.unwrap(), ArrayD::from_shape_vec(IxDyn(&[2]), vec![0.5, -0.5]).unwrap());
        let tape = Tape::new();
        let mut ss2 = StatsStore::new();
        let mut fw = Fwd::new(&tape, &ps, &mut ss2, false, false, test_rng(0));
        // Batched leading shape [2, 2, 3].
        let x = tape.constant(rand_arr(5, &[2, 2, 3], -1.0, 1.0));
        let y = lin.forward(&mut fw, &x);
        assert_eq!(y.shape(), &[2, 2, 2]);
        let xv = x.value();
        let yv = y.value();
        for i in 0..2 {
            for j in 0..2 {
                let (a, b, c) = (xv[[i, j, 0]], xv[[i, j, 1]], xv[[i, j, 2]]);
                assert!((yv[[i, j, 0]] - (a + 2.0 * c + 0.5)).abs() < 1e-12);
                assert!((yv[[i, j, 1]] - (b - c - 0.5)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mha_shapes_and_determinism() {
        let mut ps = ParamStore::<f64>::new();
        let mut ss = StatsStore::new();
        let mut pb = ParamBuilder::new(&mut ps, &mut ss, 11);
        let mha = Mha::new(&mut pb, "m", 6, 3);
        let run = || {
            let tape = Tape::new();
            let mut ss2 = StatsStore::new();
            let mut fw = Fwd::new(&tape, &ps, &mut ss2, false, false, test_rng(0));
            let q = tape.constant(rand_arr(21, &[2, 4, 6], -1.0, 1.0));
            let kv = tape.constant(rand_arr(22, &[2, 7, 6], -1.0, 1.0));
            let y = mha.forward(&mut fw, &q, &kv);
            assert_eq!(y.shape(), &[2, 4, 6]);
            y.value().to_owned()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn mha_single_key_collapses_attention() {
        // With one key/value token, attention weights are exactly 1, so the
        // output is wo(wv(kv)) for every query token regardless of q.
        let mut ps = ParamStore::<f64>::new();
        let mut ss = StatsStore::new();
        let mut pb = ParamBuilder::new(&mut ps, &mut ss, 13);
        let mha = Mha::new(&mut pb, "m", 4, 2);
        let tape = Tape::new();
        let mut ss2 = StatsStore::new();
        let mut fw = Fwd::new(&tape, &ps, &mut ss2, false, false, test_rng(0));
        let q = tape.constant(rand_arr(31, &[1, 5, 4], -1.0, 1.0));
        let kv = tape.constant(rand_arr(32, &[1, 1, 4], -1.0, 1.0));
        let y = mha.forward(&mut fw, &q, &kv);
        let v = mha.wv.forward(&mut fw, &kv);
        let expect = mha.wo.forward(&mut fw, &v);
        let yv = y.value();
        let ev = expect.value();
        for tq in 0..5 {
            for d in 0..4 {
                assert!((yv[[0, tq, d]] - ev[[0, 0, d]]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn model_forward_shapes() {
        let arch = tiny_arch();
        let model = Model::<f64>::new(arch.clone(), 77).unwrap();
        let images = rand_arr(41, &[2, 16, 16, 16], 0.0, 1.0);
        let tape = Tape::new();
        let mut stats = model.stats.clone();
        let mut fw = Fwd::new(&tape, &model.params, &mut stats, false, false, test_rng(0));
        let out = model.forward(&mut fw, &images).unwrap();
        assert_eq!(out.logits.shape(), &[2, 8]);
        let g = out.g_rows.unwrap();
        assert_eq!(g.shape(), &[2 * 8 * 3, 3 * arch.channels]);
    }

    #[test]
    fn model_rejects_wrong_input_shape() {
        let model = Model::<f64>::new(tiny_arch(), 77).unwrap();
        let images = rand_arr(41, &[2, 16, 8, 8], 0.0, 1.0);
        let tape = Tape::new();
        let mut stats = model.stats.clone();
        let mut fw = Fwd::new(&tape, &model.params, &mut stats, false, false, test_rng(0));
        let err = match model.forward(&mut fw, &images) {
            Err(e) => e,
            Ok(_) => panic!("wrong image size accepted"),
        };
        assert!(matches!(err, crate::error::DircrError::ShapeMismatch { op: "model_forward", .. }));
    }

    #[test]
    fn eval_forward_is_per_sample() {
        // In eval mode nothing couples batch entries, so scoring two puzzles
        // together must match scoring them alone.
        let model = Model::<f64>::new(tiny_arch(), 123).unwrap();
        let cfg = PuzzleConfig { image_size: 16, ..PuzzleConfig::default() };
        let mut rng = test_rng(500);
        let p0 = generate_puzzle(&mut rng, &cfg).unwrap();
        let p1 = generate_puzzle(&mut rng, &cfg).unwrap();

        let run = |ps: &[&crate::puzzle::Puzzle]| {
            let images = batch_images::<f64>(ps);
            let tape = Tape::new();
            let mut stats = model.stats.clone();
            let mut fw = Fwd::new(&tape, &model.params, &mut stats, false, false, test_rng(0));
            model.forward(&mut fw, &images).unwrap().logits.value().to_owned()
        };
        let both = run(&[&p0, &p1]);
        let solo0 = run(&[&p0]);
        let solo1 = run(&[&p1]);
        for j in 0..8 {
            assert!((both[[0, j]] - solo0[[0, j]]).abs() < 1e-9);
            assert!((both[[1, j]] - solo1[[0, j]]).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_deterministic_and_seed_sensitive() {
        let images = rand_arr(51, &[1, 16, 16, 16], 0.0, 1.0);
        let run = |seed: u64| {
            let model = Model::<f64>::new(tiny_arch(), seed).unwrap();
            let tape = Tape::new();
            let mut stats = model.stats.clone();
            let mut fw = Fwd::new(&tape, &model.params, &mut stats, false, false, test_rng(0));
            model.forward(&mut fw, &images).unwrap().logits.value().to_owned()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn local_only_rows_one_and_two_ignore_candidates() {
        // With the global path ablated at K=1, the first two rows of every
        // candidate's state see only context panels, so their row features
        // are identical across the 8 candidates; the third row differs.
        let arch = ModelArch {
            use_global: false,
            ..tiny_arch()
        };
        let model = Model::<f64>::new(arch.clone(), 999).unwrap();
        let cfg = PuzzleConfig { image_size: 16, ..PuzzleConfig::default() };
        let mut rng = test_rng(321);
        let p = generate_puzzle(&mut rng, &cfg).unwrap();
        let images = batch_images::<f64>(&[&p]);
        let tape = Tape::new();
        let mut stats = model.stats.clone();
        let mut fw = Fwd::new(&tape, &model.params, &mut stats, false, false, test_rng(0));
        let g = model.forward(&mut fw, &images).unwrap().g_rows.unwrap();
        let gv = g.value();
        let row = |j: usize, r: usize| gv.index_axis(ndarray::Axis(0), j * 3 + r).to_owned();
        for r in 0..2 {
            let base = row(0, r);
            for j in 1..8 {
                assert!(
                    close(&base, &row(j, r), 1e-9),
                    "row {r} varied across candidates"
                );
            }
        }
        let third: Vec<ArrayD<f64>> = (0..8).map(|j| row(j, 2)).collect();
        let all_same = third.iter().skip(1).all(|t| close(&third[0], t, 1e-9));
        assert!(!all_same, "third-row features failed to distinguish candidates");
    }

    #[test]
    fn dropout_active_only_in_training() {
        let model = Model::<f64>::new(
            ModelArch { dropout: 0.5, ..tiny_arch() },
            3,
        )
        .unwrap();
        let images = rand_arr(61, &[1, 16, 16, 16], 0.0, 1.0);
        let run = |train: bool, rng_seed: u64| {
            let tape = Tape::new();
            let mut stats = model.stats.clone();
            let mut fw =
                Fwd::new(&tape, &model.params, &mut stats, train, false, test_rng(rng_seed));
            model.forward(&mut fw, &images).unwrap().logits.value().to_owned()
        };
        // Eval ignores the dropout stream entirely.
        assert_eq!(run(false, 1), run(false, 2));
        // Training draws masks from it.
        assert_ne!(run(true, 1), run(true, 2));
    }
}
