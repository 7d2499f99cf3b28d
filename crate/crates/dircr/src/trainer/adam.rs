//! Adam with decoupled weight decay. The decay term multiplies the parameter
//! directly (`p -= lr*wd*p`) and never enters the moment estimates, so a
//! parameter whose gradient is identically zero still shrinks by exactly
//! `(1 - lr*wd)` per step.

use std::collections::HashMap;

use ndarray::ArrayD;

use crate::model::{PId, ParamStore};
use crate::tensor::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

pub struct Adam<F: Scalar> {
    pub lr: f64,
    pub weight_decay: f64,
    /// Completed steps; bias correction uses t after increment.
    pub t: u64,
    m: Vec<ArrayD<F>>,
    v: Vec<ArrayD<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(lr: f64, weight_decay: f64, params: &ParamStore<F>) -> Self {
        let zeros: Vec<ArrayD<F>> = params
            .iter()
            .map(|(_, _, value)| ArrayD::zeros(value.raw_dim()))
            .collect();
        Adam { lr, weight_decay, t: 0, m: zeros.clone(), v: zeros }
    }

    /// Applies one update to every parameter. Parameters missing from `grads`
    /// are treated as having a zero gradient: their moments decay and the
    /// weight-decay term still applies.
    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &HashMap<PId, ArrayD<F>>) {
        self.t += 1;
        let b1 = F::fr(BETA1);
        let b2 = F::fr(BETA2);
        let bc1 = F::fr(1.0 - BETA1.powi(self.t as i32));
        let bc2 = F::fr(1.0 - BETA2.powi(self.t as i32));
        let lr = F::fr(self.lr);
        let eps = F::fr(ADAM_EPS);
        let decay = F::fr(self.lr * self.weight_decay);
        let ids: Vec<PId> = params.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            let i = id.index();
            match grads.get(&id) {
                Some(g) => {
                    ndarray::Zip::from(&mut self.m[i]).and(g).for_each(|m, &g| {
                        *m = b1 * *m + (F::one() - b1) * g;
                    });
                    ndarray::Zip::from(&mut self.v[i]).and(g).for_each(|v, &g| {
                        *v = b2 * *v + (F::one() - b2) * g * g;
                    });
                }
                None => {
                    self.m[i].mapv_inplace(|m| b1 * m);
                    self.v[i].mapv_inplace(|v| b2 * v);
                }
            }
            let mut p = params.value(id).to_owned();
            ndarray::Zip::from(&mut p)
                .and(&self.m[i])
                .and(&self.v[i])
                .for_each(|p, &m, &v| {
                    let m_hat = m / bc1;
                    let v_hat = v / bc2;
                    *p = *p - lr * m_hat / (v_hat.sqrt() + eps) - decay * *p;
                });
            params.set(id, p);
        }
    }

    pub fn moments(&self) -> (&[ArrayD<F>], &[ArrayD<F>]) {
        (&self.m, &self.v)
    }

    /// Restores optimizer state from a checkpoint; shapes must match the
    /// parameter store the optimizer was built for.
    pub fn restore(&mut self, t: u64, m: Vec<ArrayD<F>>, v: Vec<ArrayD<F>>) {
        assert_eq!(m.len(), self.m.len(), "optimizer state count mismatch");
        assert_eq!(v.len(), self.v.len(), "optimizer state count mismatch");
        for (cur, new) in self.m.iter().zip(&m) {
            assert_eq!(cur.shape(), new.shape(), "optimizer moment shape mismatch");
        }
        self.t = t;
        self.m = m;
        self.v = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    fn tiny_store() -> (ParamStore<f64>, PId, PId) {
        let mut ps = ParamStore::new();
        let a = ps.register("a", arr1(&[1.0, -2.0, 3.0]).into_dyn());
        let b = ps.register("b", arr1(&[0.5, 0.25]).into_dyn());
        (ps, a, b)
    }

    #[test]
    fn zero_lr_is_bit_identical() {
        let (mut ps, a, b) = tiny_store();
        let before_a = ps.value(a).to_owned();
        let before_b = ps.value(b).to_owned();
        let mut opt = Adam::new(0.0, 0.1, &ps);
        let mut grads = HashMap::new();
        grads.insert(a, arr1(&[1.0, 1.0, 1.0]).into_dyn());
        for _ in 0..5 {
            opt.step(&mut ps, &grads);
        }
        assert_eq!(ps.value(a).as_slice().unwrap(), before_a.as_slice().unwrap());
        assert_eq!(ps.value(b).as_slice().unwrap(), before_b.as_slice().unwrap());
    }

    #[test]
    fn zero_grad_param_decays_exactly() {
        let (mut ps, a, b) = tiny_store();
        let lr = 1e-2;
        let wd = 1e-3;
        let mut opt = Adam::new(lr, wd, &ps);
        let mut grads = HashMap::new();
        grads.insert(a, arr1(&[0.3, -0.1, 0.2]).into_dyn());
        let b0 = ps.value(b).to_owned();
        let steps = 7;
        for _ in 0..steps {
            opt.step(&mut ps, &grads);
        }
        let scale = (1.0 - lr * wd).powi(steps);
        for (got, want) in ps.value(b).iter().zip(b0.iter()) {
            assert!((got - want * scale).abs() < 1e-15, "{got} vs {}", want * scale);
        }
    }

    #[test]
    fn single_step_matches_closed_form() {
        // After one step with gradient g: m_hat = g, v_hat = g^2, so the
        // update is -lr*g/(|g|+eps) - lr*wd*p regardless of g's magnitude.
        let (mut ps, a, _) = tiny_store();
        let lr = 0.05;
        let wd = 0.01;
        let mut opt = Adam::new(lr, wd, &ps);
        let g = arr1(&[0.3, -0.7, 0.0001]).into_dyn();
        let p0 = ps.value(a).to_owned();
        let mut grads = HashMap::new();
        grads.insert(a, g.clone());
        opt.step(&mut ps, &grads);
        for i in 0..3 {
            let gi: f64 = g[[i]];
            let want = p0[[i]] - lr * gi / (gi.abs() + ADAM_EPS) - lr * wd * p0[[i]];
            let got: f64 = ps.value(a)[[i]];
            assert!((got - want).abs() < 1e-12, "i={i}: {got} vs {want}");
        }
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn descends_a_quadratic() {
        let mut ps = ParamStore::new();
        let x = ps.register("x", arr1(&[5.0_f64, -4.0]).into_dyn());
        let mut opt = Adam::new(0.1, 0.0, &ps);
        for _ in 0..400 {
            let g = ps.value(x).to_owned().mapv(|v| 2.0 * v);
            let mut grads = HashMap::new();
            grads.insert(x, g);
            opt.step(&mut ps, &grads);
        }
        for &v in ps.value(x).iter() {
            assert!(v.abs() < 1e-2, "did not converge: {v}");
        }
    }

    #[test]
    fn restore_resumes_identically() {
        let (mut ps, a, b) = tiny_store();
        let mut grads = HashMap::new();
        grads.insert(a, arr1(&[0.3, -0.1, 0.2]).into_dyn());
        grads.insert(b, arr1(&[-0.05, 0.6]).into_dyn());

        let mut opt = Adam::new(1e-2, 1e-3, &ps);
        let mut ps_full = ps.clone();
        for _ in 0..3 {
            opt.step(&mut ps_full, &grads);
        }
        let (m, v) = opt.moments();
        let (m, v) = (m.to_vec(), v.to_vec());
        let t = opt.t;
        let ps_mid = ps_full.clone();

        for _ in 0..3 {
            opt.step(&mut ps_full, &grads);
        }

        let mut opt2 = Adam::new(1e-2, 1e-3, &ps);
        opt2.restore(t, m, v);
        ps = ps_mid;
        for _ in 0..3 {
            opt2.step(&mut ps, &grads);
        }
        for (id, _, val) in ps.iter() {
            assert_eq!(
                val.as_slice().unwrap(),
                ps_full.value(id).as_slice().unwrap()
            );
        }
    }
}
