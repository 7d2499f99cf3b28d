//! Central-difference verification of reverse-mode gradients.
//!
//! The function under test is rebuilt from scratch for every probe, so it
//! must be deterministic given its inputs (fix any dropout seed, use a fresh
//! statistics store per call, and so on).

use super::{Scalar, Tape, Tensor};
use ndarray::ArrayD;

#[derive(Clone, Debug)]
pub struct CheckOpts {
    /// Central-difference step h.
    pub step: f64,
    /// Relative tolerance against max(|analytic|, |numeric|).
    pub rtol: f64,
    /// Absolute floor as a fraction of max(1, |f|); absorbs FD noise on
    /// entries whose gradient is tiny compared to the loss scale.
    pub atol_scale: f64,
    /// Probe at most this many entries per input (deterministic stride).
    pub max_entries: usize,
}

impl CheckOpts {
    /// Tolerances for 32-bit checks: step 1e-3, relative error 1e-3.
    pub fn f32_defaults() -> Self {
        CheckOpts {
            step: 1e-3,
            rtol: 1e-3,
            atol_scale: 1e-4,
            max_entries: 200,
        }
    }

    /// Tolerances for 64-bit checks: step 1e-5, relative error 1e-6.
    pub fn f64_defaults() -> Self {
        CheckOpts {
            step: 1e-5,
            rtol: 1e-6,
            atol_scale: 1e-9,
            max_entries: 400,
        }
    }
}

#[derive(Debug)]
pub struct CheckReport {
    pub checked: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// (input index, flat entry, analytic, numeric) for the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub pass: bool,
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} ({} entries, max rel {:.3e}, max abs {:.3e})",
            if self.pass { "ok" } else { "FAIL" },
            self.checked,
            self.max_rel_err,
            self.max_abs_err,
        )?;
        if let (false, Some((i, j, a, n))) = (self.pass, self.worst) {
            write!(f, " worst input[{i}][{j}]: analytic {a:.6e} vs numeric {n:.6e}")?;
        }
        Ok(())
    }
}

fn eval_scalar<F: Scalar>(
    f: &dyn Fn(&Tape<F>, &[Tensor<F>]) -> Tensor<F>,
    inputs: &[ArrayD<F>],
) -> f64 {
    let tape = Tape::new();
    let ts: Vec<Tensor<F>> = inputs.iter().map(|a| tape.constant(a.clone())).collect();
    let out = f(&tape, &ts);
    assert_eq!(out.value().len(), 1, "gradcheck: function must return a scalar");
    out.item().to64()
}

/// Compare reverse-mode gradients of `f` against central differences at the
/// given `inputs`. Every input is treated as differentiable.
pub fn gradcheck<F: Scalar>(
    f: &dyn Fn(&Tape<F>, &[Tensor<F>]) -> Tensor<F>,
    inputs: &[ArrayD<F>],
    opts: &CheckOpts,
) -> CheckReport {
    // Analytic pass.
    let tape = Tape::new();
    let ts: Vec<Tensor<F>> = inputs.iter().map(|a| tape.var(a.clone())).collect();
    let out = f(&tape, &ts);
    assert_eq!(out.value().len(), 1, "gradcheck: function must return a scalar");
    let f0 = out.item().to64();
    let mut grads = tape.backward(&out);
    let analytic: Vec<ArrayD<F>> = ts
        .iter()
        .map(|t| {
            grads
                .take(t)
                .unwrap_or_else(|| ArrayD::zeros(t.value().raw_dim()))
        })
        .collect();

    let atol = opts.atol_scale * f0.abs().max(1.0);
    let h = opts.step;
    let mut report = CheckReport {
        checked: 0,
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        worst: None,
        pass: true,
    };

    for (i, base) in inputs.iter().enumerate() {
        let len = base.len();
        let probes: Vec<usize> = if len <= opts.max_entries {
            (0..len).collect()
        } else {
            (0..opts.max_entries)
                .map(|k| k * len / opts.max_entries)
                .collect()
        };
        for j in probes {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            {
                let p = plus[i].as_slice_mut().unwrap();
                p[j] = p[j] + F::fr(h);
                let m = minus[i].as_slice_mut().unwrap();
                m[j] = m[j] - F::fr(h);
            }
            let fp = eval_scalar(f, &plus);
            let fm = eval_scalar(f, &minus);
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[i].as_slice().unwrap()[j].to64();
            let abs_err = (a - numeric).abs();
            let denom = a.abs().max(numeric.abs());
            let ok = abs_err <= atol + opts.rtol * denom;
            report.checked += 1;
            if abs_err > report.max_abs_err {
                report.max_abs_err = abs_err;
            }
            if denom > 10.0 * atol {
                let rel = abs_err / denom;
                if rel > report.max_rel_err {
                    report.max_rel_err = rel;
                }
            }
            let prior_worst = report.worst.map_or(0.0, |(_, _, wa, wn)| (wa - wn).abs());
            if !ok && abs_err > prior_worst {
                report.worst = Some((i, j, a, numeric));
            }
            report.pass &= ok;
        }
    }
    report
}
