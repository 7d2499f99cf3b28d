//! Candidate scoring: pooled state -> scalar logit, plus the cross-entropy
//! objective and host-side probability helpers.

use crate::error::{DircrError, Result};
use crate::tensor::{Scalar, Tensor};

use super::{Fwd, Linear, ModelArch, ParamBuilder};

/// Two-layer MLP, C -> C -> 1, ReLU and dropout between.
pub struct ScoringHead {
    fc1: Linear,
    fc2: Linear,
    dropout: f64,
}

impl ScoringHead {
    /// Shrink factor for the logit layer's init: an untrained model must
    /// score the 8 candidates near-uniformly (cross-entropy ~ ln 8), which
    /// full-strength init violates at small widths.
    pub const LOGIT_INIT_SCALE: f64 = 1e-3;

    pub fn new<F: Scalar>(pb: &mut ParamBuilder<F>, name: &str, arch: &ModelArch) -> Self {
        let c = arch.channels;
        ScoringHead {
            fc1: Linear::new(pb, &format!("{name}.fc1"), c, c, true),
            fc2: Linear::new_scaled(
                pb,
                &format!("{name}.fc2"),
                c,
                1,
                true,
                Self::LOGIT_INIT_SCALE,
            ),
            dropout: arch.dropout,
        }
    }

    /// `[N, C]` pooled states -> `[N, 1]` logits.
    pub fn forward<F: Scalar>(&self, fw: &mut Fwd<F>, pooled: &Tensor<F>) -> Tensor<F> {
        let h = self.fc1.forward(fw, pooled).relu();
        let h = fw.dropout(&h, self.dropout);
        self.fc2.forward(fw, &h)
    }
}

/// Mean cross-entropy of `[B, 8]` logits against the answer indices.
pub fn classification_loss<F: Scalar>(logits: &Tensor<F>, answers: &[usize]) -> Result<Tensor<F>> {
    let b = logits.shape()[0];
    if answers.len() != b {
        return Err(DircrError::ShapeMismatch {
            op: "classification_loss",
            expected: format!("{b} answers"),
            got: format!("{}", answers.len()),
        });
    }
    for &a in answers {
        if a >= 8 {
            return Err(DircrError::IndexOutOfRange { index: a, len: 8 });
        }
    }
    Ok(logits.log_softmax_last().nll_mean(answers))
}

/// Softmax of one logit row in f64, for pseudo-labels and accuracy counts.
pub fn softmax8(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / z).collect()
}

/// Index of the largest logit; first index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
