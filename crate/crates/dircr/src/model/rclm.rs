//! Rule-Contrastive Learning Module.
//!
//! For each sample whose predicted answer probability clears a confidence
//! threshold, the three row features of the pseudo-labeled candidate's state
//! form the positive set and the third-row features under the other seven
//! candidates form the negatives. Projected, L2-normalized embeddings are
//! pulled together / pushed apart with a temperature-scaled contrastive loss:
//!
//!   L = -sum_{P in pos} log( sum_{U in pos} sim(P,U) / sum_{U in pos+neg} sim(P,U) )
//!
//! with sim(a,b) = exp(cos(a,b)/tau). Both sums include the anchor itself.

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

use super::{Fwd, Linear, ModelArch, ParamBuilder};

/// Projection MLP 3C -> 3C -> proj_dim with ReLU, output L2-normalized.
pub struct Projection {
    fc1: Linear,
    fc2: Linear,
}

impl Projection {
    pub fn new<F: Scalar>(pb: &mut ParamBuilder<F>, name: &str, arch: &ModelArch) -> Self {
        let c3 = 3 * arch.channels;
        Projection {
            fc1: Linear::new(pb, &format!("{name}.fc1"), c3, c3, true),
            fc2: Linear::new(pb, &format!("{name}.fc2"), c3, arch.proj_dim, true),
        }
    }

    /// `[M, 3C]` -> `[M, proj_dim]`, rows unit-norm.
    pub fn forward<F: Scalar>(&self, fw: &mut Fwd<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        let h = self.fc1.forward(fw, x).relu();
        self.fc2.forward(fw, &h).l2_normalize_rows()
    }
}

/// Confident-argmax pseudo-label: the argmax candidate when its probability
/// reaches `threshold`, otherwise `None`. Ties break to the lowest index.
pub fn pseudo_label(probs: &[f64], threshold: f64) -> Option<usize> {
    let c = super::argmax(probs);
    (probs[c] >= threshold).then_some(c)
}

/// Contrastive loss for the accepted samples of one batch, built on the tape
/// so gradients flow to the projection and everything beneath it.
///
/// `g_rows` is the `[(B*8*3), 3C]` layout from the model forward; `accepted`
/// pairs each confident sample index with its pseudo-label. Returns the
/// `loss_weight`-scaled mean over accepted samples; with none accepted, a
/// constant zero that moves no parameter.
pub fn rclm_graph_loss<F: Scalar>(
    fw: &mut Fwd<F>,
    g_rows: &Tensor<F>,
    proj: &Projection,
    accepted: &[(usize, usize)],
    tau: f64,
    loss_weight: f64,
) -> Result<Tensor<F>> {
    if accepted.is_empty() {
        return Ok(fw.tape.scalar(F::zero()));
    }
    let a = accepted.len();
    // Per accepted sample: 3 positives (rows of the pseudo-labeled
    // candidate's state) then 7 negatives (third rows under the other
    // candidates), 10 embeddings total.
    let mut sel = Vec::with_capacity(a * 10);
    for &(b, c_hat) in accepted {
        let n_hat = b * 8 + c_hat;
        sel.extend([n_hat * 3, n_hat * 3 + 1, n_hat * 3 + 2]);
        for j in 0..8 {
            if j != c_hat {
                sel.push((b * 8 + j) * 3 + 2);
            }
        }
    }
    let z = proj.forward(fw, &g_rows.index_select(0, &sel))?;
    let d = z.shape()[1];
    let zr = z.reshape(&[a, 10, d]);
    // Unit rows: bmm against the transpose yields cosine similarities of the
    // 3 anchors (positives) against all 10 embeddings.
    let sims = zr.narrow(1, 0, 3).bmm(&zr.transpose(&[0, 2, 1]));
    let scaled = sims.mul_scalar(F::fr(1.0 / tau)).exp(); // [A, 3, 10]
    let num = scaled.narrow(2, 0, 3).sum_axis(2); // [A, 3]
    let den = scaled.sum_axis(2);
    let per_anchor = den.ln().sub(&num.ln());
    Ok(per_anchor
        .sum_all()
        .mul_scalar(F::fr(loss_weight / a as f64)))
}

/// Reference contrastive loss on plain vectors (unscaled, one sample).
/// Cosine similarity is computed exactly, so inputs need not be unit-norm.
pub fn contrastive_loss(positives: &[Vec<f64>], negatives: &[Vec<f64>], tau: f64) -> f64 {
    fn cos(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }
    let mut loss = 0.0;
    for p in positives {
        let num: f64 = positives.iter().map(|u| (cos(p, u) / tau).exp()).sum();
        let den: f64 = num
            + negatives
                .iter()
                .map(|u| (cos(p, u) / tau).exp())
                .sum::<f64>();
        loss += den.ln() - num.ln();
    }
    loss
}
