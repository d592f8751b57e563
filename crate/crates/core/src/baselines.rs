//! Reference optimizers: gradient descent, multiplicative weight updates
//! (optionally with magnitude clipping, "mwu-clip") and AdamW.
//!
//! Each optimizer owns its parameter tensors so the harness can treat all
//! of them, and LMD, behind the same single-writer contract.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

fn check_grads(op: &'static str, params: &[Tensor], grads: &[Tensor]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(shape_err(op, format!("{} gradients for {} tensors", grads.len(), params.len())));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(shape_err(op, format!("gradient shape {:?} vs parameter {:?}", g.shape(), p.shape())));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite { op });
        }
    }
    Ok(())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `θ ← θ − η ∇ℓ(θ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdState {
    pub params: Vec<Tensor>,
    pub step: u64,
}

impl GdState {
    pub fn new(params: Vec<Tensor>) -> Self {
        Self { params, step: 0 }
    }

    pub fn gd_step(&mut self, grads: &[Tensor], eta: f64) -> Result<()> {
        check_grads("gd_step", &self.params, grads)?;
        for (p, g) in self.params.iter_mut().zip(grads) {
            p.data_mut().iter_mut().zip(g.data()).for_each(|(t, g)| *t -= eta * g);
        }
        self.step += 1;
        Ok(())
    }
}

/// `θ ← θ ⊙ exp(−η ∇ℓ(θ) ⊙ sign(θ))`, then `|θ| ≤ clip` when set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MwuState {
    pub params: Vec<Tensor>,
    pub clip: Option<f64>,
    pub step: u64,
}

impl MwuState {
    pub fn new(params: Vec<Tensor>, clip: Option<f64>) -> Result<Self> {
        if let Some(c) = clip {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::InvalidArgument(format!("clip bound must be > 0, got {c}")));
            }
        }
        Ok(Self { params, clip, step: 0 })
    }

    pub fn mwu_step(&mut self, grads: &[Tensor], eta: f64) -> Result<()> {
        check_grads("mwu_step", &self.params, grads)?;
        for (p, g) in self.params.iter_mut().zip(grads) {
            for (t, &g) in p.data_mut().iter_mut().zip(g.data()) {
                *t *= (-eta * g * sign(*t)).exp();
                if let Some(c) = self.clip {
                    *t = t.clamp(-c, c);
                }
            }
        }
        self.step += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        Self { lr: 0.001, beta1: 0.9, beta2: 0.999, weight_decay: 0.1, eps: 1e-8 }
    }
}

/// AdamW with bias correction and decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamWState {
    pub params: Vec<Tensor>,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
    pub hyper: AdamWHyper,
    pub step: u64,
}

impl AdamWState {
    pub fn new(params: Vec<Tensor>, hyper: AdamWHyper) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { first: zeros.clone(), second: zeros, params, hyper, step: 0 }
    }

    pub fn adamw_step(&mut self, grads: &[Tensor]) -> Result<()> {
        let lr = self.hyper.lr;
        self.adamw_step_with_lr(grads, lr)
    }

    pub fn adamw_step_with_lr(&mut self, grads: &[Tensor], lr: f64) -> Result<()> {
        check_grads("adamw_step", &self.params, grads)?;
        let AdamWHyper { beta1, beta2, weight_decay, eps, .. } = self.hyper;
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let p = self.params[i].data_mut();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] = p[j] * (1.0 - lr * weight_decay) - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// ℓ2 norm of the first moment.
    pub fn first_moment_l2(&self) -> f64 {
        crate::tensor::global_l2_norm(&self.first)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> Vec<Tensor> {
        vec![Tensor::vector(vec![v])]
    }

    #[test]
    fn mwu_examples() {
        let mut pos = MwuState::new(s(1.0), None).unwrap();
        pos.mwu_step(&s(1.0), 0.1).unwrap();
        assert_eq!(pos.params[0].data()[0], (-0.1f64).exp());

        let mut neg = MwuState::new(s(-1.0), None).unwrap();
        neg.mwu_step(&s(1.0), 0.1).unwrap();
        assert_eq!(neg.params[0].data()[0], -(0.1f64).exp());

        let mut zero = MwuState::new(s(0.0), None).unwrap();
        for _ in 0..100 {
            zero.mwu_step(&s(3.0), 0.1).unwrap();
        }
        assert_eq!(zero.params[0].data()[0], 0.0);
    }

    #[test]
    fn mwu_clip_bounds_magnitude() {
        let mut st = MwuState::new(vec![Tensor::vector(vec![0.9, -0.9, 0.2])], Some(1.0)).unwrap();
        for _ in 0..50 {
            st.mwu_step(&[Tensor::vector(vec![-1.0, 1.0, -1.0])], 0.1).unwrap();
            assert!(st.params[0].data().iter().all(|v| v.abs() <= 1.0));
        }
        assert_eq!(st.params[0].data()[..2], [1.0, -1.0]);
    }

    #[test]
    fn non_finite_gradients_are_rejected() {
        let mut st = MwuState::new(s(1.0), None).unwrap();
        assert!(st.mwu_step(&s(f64::NAN), 0.1).is_err());
        let mut ad = AdamWState::new(s(1.0), AdamWHyper::default());
        assert!(ad.adamw_step(&s(f64::INFINITY)).is_err());
        assert_eq!(ad.step, 0);
    }

    #[test]
    fn adamw_zero_gradient_without_decay_is_noop() {
        let mut ad = AdamWState::new(s(0.7), AdamWHyper { weight_decay: 0.0, ..AdamWHyper::default() });
        for _ in 0..10 {
            ad.adamw_step(&s(0.0)).unwrap();
        }
        assert_eq!(ad.params[0].data()[0], 0.7);
    }

    #[test]
    fn adamw_decay_only() {
        let mut ad = AdamWState::new(s(2.0), AdamWHyper::default());
        let mut expected = 2.0;
        for _ in 0..5 {
            ad.adamw_step(&s(0.0)).unwrap();
            expected *= 0.9999;
            assert!((ad.params[0].data()[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn adamw_first_step_from_zero_state() {
        let h = AdamWHyper { weight_decay: 0.0, ..AdamWHyper::default() };
        let mut ad = AdamWState::new(s(0.5), h);
        ad.adamw_step(&s(1.0)).unwrap();
        let expected = 0.5 - h.lr * 1.0 / (1.0 + h.eps);
        assert!((ad.params[0].data()[0] - expected).abs() < 1e-15);
        assert!(ad.second[0].data()[0] >= 0.0);
    }

    #[test]
    fn gd_examples() {
        let mut gd = GdState::new(s(3.0));
        gd.gd_step(&s(2.0), 0.5).unwrap();
        assert_eq!(gd.params[0].data()[0], 2.0);
        gd.gd_step(&s(0.0), 0.5).unwrap();
        assert_eq!(gd.params[0].data()[0], 2.0);
    }

    #[test]
    fn gd_quadratic_contracts_at_closed_form_rate() {
        // l = h/2 θ², gradient hθ, so θ_k = (1 − ηh)^k θ_0
        let (h, eta) = (3.0, 0.1);
        let mut gd = GdState::new(s(1.0));
        for k in 1..=20 {
            let theta = gd.params[0].data()[0];
            gd.gd_step(&s(h * theta), eta).unwrap();
            let expected = (1.0f64 - eta * h).powi(k);
            assert!((gd.params[0].data()[0] - expected).abs() < 1e-14);
        }
    }
}
