//! Log-normal multiplicative dynamics (LMD).
//!
//! Every signed weight is represented as `θ₊ − θ₋` with `θ± = m± ⊙ ε±`,
//! `ε ~ LogN(0, σ²)`. One optimizer step is
//!
//! ```text
//! g        = θ ⊙ Aᵀ∇ℓ(Aθ)                     (A = [I, −I])
//! r        = (log θ − log m_r) / (log a − log m_r)   a = 1 (weights) or 2 (scales)
//! ν_temp   = β₁ ν + (1 − β₁) g
//! ν        = β₂ ν + (1 − β₂) g
//! m        = m ⊙ exp(−η (sign(ν_temp) + r))
//! ```
//!
//! The regularizer is the log-normal prior gradient `τ (log θ − log m_r)/σ²`
//! with the temperature fixed so that `r(a) = 1`; it is evaluated in the
//! ratio form above so the anchors hold exactly and so `σ = 0` stays
//! defined. `g` and `r` may be averaged over several sampled contributions
//! with [`aggregate`] before the step.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::lognormal::{draw, kl_equal_sigma, mean_factor, RngStream};
use crate::param::{NamedParam, ParamKind};
use crate::tensor::{clip_global_norm, Tensor};

/// Which momentum feeds the sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentumOrder {
    /// `ν_temp` interpolates the momentum from before this step's update.
    #[default]
    Lion,
    /// `ν` is updated first and `ν_temp` interpolates the updated value.
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayMode {
    /// Log-normal prior: `r = (log θ − log m_r)/(log a − log m_r)`.
    #[default]
    Multiplicative,
    /// `r = (θ − m_r)/(a − m_r)`.
    Additive,
    /// `r = 0`.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradScaling {
    /// `g = θ ⊙ Aᵀ∇ℓ`.
    #[default]
    ByTheta,
    /// `g = Aᵀ∇ℓ`.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMode {
    /// `θ = m ⊙ ε`.
    #[default]
    Sampled,
    /// `θ = m · exp(σ²/2)`, the distribution mean.
    Mean,
}

/// LMD hyperparameters. The temperature is always derived from `sigma` and
/// `m_r`, see [`LmdHyper::tau`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmdHyper {
    pub eta: f64,
    pub sigma: f64,
    pub m_r: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Global ℓ2 threshold applied to ∇ℓ(θ_trick) of each contribution.
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub momentum_order: MomentumOrder,
    #[serde(default)]
    pub decay: DecayMode,
    #[serde(default)]
    pub grad_scaling: GradScaling,
}

impl Default for LmdHyper {
    fn default() -> Self {
        let sigma = 0.125;
        Self {
            eta: 0.005,
            sigma,
            m_r: 0.01 * mean_factor(sigma),
            beta1: 0.95,
            beta2: 0.99,
            grad_clip: None,
            momentum_order: MomentumOrder::Lion,
            decay: DecayMode::Multiplicative,
            grad_scaling: GradScaling::ByTheta,
        }
    }
}

impl LmdHyper {
    /// Defaults with `m_r = 0.01 · exp(σ²/2)` for the given σ.
    pub fn with_sigma(sigma: f64) -> Self {
        Self { sigma, m_r: 0.01 * mean_factor(sigma), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be > 0, got {}", self.eta));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be >= 0, got {}", self.sigma));
        }
        if !(self.m_r > 0.0 && self.m_r < 1.0) {
            return bad(format!("m_r must lie in (0, 1), got {}", self.m_r));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return bad(format!("grad_clip must be > 0, got {c}"));
            }
        }
        Ok(())
    }

    /// Temperature of ordinary weights: `τ = −σ² / log m_r`.
    pub fn tau(&self) -> f64 {
        GroupPrior::for_kind(ParamKind::Weight, self).tau(self.sigma)
    }
}

/// Prior median and soft-clip anchor of one parameter group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupPrior {
    pub m_r: f64,
    /// Value of θ at which `r = 1`.
    pub anchor: f64,
}

impl GroupPrior {
    pub fn for_kind(kind: ParamKind, hyper: &LmdHyper) -> Self {
        match kind {
            ParamKind::Weight | ParamKind::Bias => Self { m_r: hyper.m_r, anchor: 1.0 },
            ParamKind::ScaleParam => Self { m_r: (-0.5 * hyper.sigma * hyper.sigma).exp(), anchor: 2.0 },
        }
    }

    /// `τ = σ² / (log a − log m_r)`, from `τ⁻¹ = a R̃′(a) − 1`.
    pub fn tau(&self, sigma: f64) -> f64 {
        sigma * sigma / (self.anchor.ln() - self.m_r.ln())
    }

    /// Regularizer gradient at a sampled `theta > 0`.
    pub fn reg(&self, decay: DecayMode, theta: f64) -> f64 {
        match decay {
            DecayMode::Multiplicative => (theta.ln() - self.m_r.ln()) / (self.anchor.ln() - self.m_r.ln()),
            DecayMode::Additive => (theta - self.m_r) / (self.anchor - self.m_r),
            DecayMode::None => 0.0,
        }
    }
}

/// EG± medians for a default initial value `θ₀`; `E[θ₊ − θ₋] = θ₀`.
pub fn init_from_default(theta0: &[f64], hyper: &LmdHyper) -> (Vec<f64>, Vec<f64>) {
    let shrink = (-0.5 * hyper.sigma * hyper.sigma).exp();
    theta0
        .iter()
        .map(|&t| {
            if t > 0.0 {
                (t * shrink + hyper.m_r, hyper.m_r)
            } else {
                (hyper.m_r, -t * shrink + hyper.m_r)
            }
        })
        .unzip()
}

/// Initial state of a normalization gain.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleInit {
    pub m_plus: Vec<f64>,
    pub m_minus: Vec<f64>,
    pub m_r: f64,
    pub tau: f64,
}

/// `m₊ = exp(−σ²/2)`, `m₋ = 0`, `m_r = exp(−σ²/2)`, `τ⁻¹ = 2R̃′(2) − 1`.
pub fn init_scale_param(len: usize, sigma: f64) -> ScaleInit {
    let m = (-0.5 * sigma * sigma).exp();
    let prior = GroupPrior { m_r: m, anchor: 2.0 };
    ScaleInit { m_plus: vec![m; len], m_minus: vec![0.0; len], m_r: m, tau: prior.tau(sigma) }
}

/// Optimizer state of one trainable tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamState {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub m_plus: Vec<f64>,
    pub m_minus: Vec<f64>,
    pub nu_plus: Vec<f64>,
    pub nu_minus: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmdState {
    pub params: Vec<ParamState>,
    pub step: u64,
}

/// A value per entry of `θ₊` and of `θ₋`, tensor by tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Signed {
    pub plus: Vec<Vec<f64>>,
    pub minus: Vec<Vec<f64>>,
}

impl Signed {
    fn zeros_like(other: &Signed) -> Self {
        let z = |v: &Vec<Vec<f64>>| v.iter().map(|t| vec![0.0; t.len()]).collect();
        Self { plus: z(&other.plus), minus: z(&other.minus) }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.plus.iter().chain(&self.minus).flatten()
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.plus.iter_mut().chain(self.minus.iter_mut()).flatten()
    }

    fn same_layout(&self, other: &Signed) -> bool {
        let lens = |v: &Vec<Vec<f64>>| v.iter().map(Vec::len).collect::<Vec<_>>();
        lens(&self.plus) == lens(&other.plus) && lens(&self.minus) == lens(&other.minus)
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }
}

/// Weights drawn for one forward/backward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleContext {
    pub theta: Signed,
    shapes: Vec<Vec<usize>>,
    /// `None` in mean mode.
    pub stream: Option<RngStream>,
}

impl SampleContext {
    /// `θ₊ − θ₋`, the weights the network sees.
    pub fn theta_trick(&self) -> Vec<Tensor> {
        self.theta
            .plus
            .iter()
            .zip(&self.theta.minus)
            .zip(&self.shapes)
            .map(|((p, m), s)| {
                let d = p.iter().zip(m).map(|(a, b)| a - b).collect();
                Tensor::new(s.clone(), d).expect("sample layout matches state")
            })
            .collect()
    }
}

/// Per-sample `g` and `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct Contribution {
    pub g: Signed,
    pub r: Signed,
}

/// Mean of `contributions`, summed in slice order.
pub fn aggregate(contributions: &[Contribution]) -> Result<Contribution> {
    let first = contributions.first().ok_or(Error::EmptyAggregate)?;
    let mut g = Signed::zeros_like(&first.g);
    let mut r = Signed::zeros_like(&first.r);
    for c in contributions {
        if !c.g.same_layout(&g) || !c.r.same_layout(&r) {
            return Err(shape_err("aggregate", "contributions have different layouts"));
        }
        g.values_mut().zip(c.g.values()).for_each(|(a, b)| *a += b);
        r.values_mut().zip(c.r.values()).for_each(|(a, b)| *a += b);
    }
    let n = contributions.len() as f64;
    g.values_mut().chain(r.values_mut()).for_each(|v| *v /= n);
    Ok(Contribution { g, r })
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

/// Serialized optimizer: hyperparameters plus full state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmdCheckpoint {
    pub hyper: LmdHyper,
    pub state: LmdState,
}

/// The LMD optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Lmd {
    hyper: LmdHyper,
    state: LmdState,
}

impl Lmd {
    /// Builds the EG± state from default initial values, routing scale
    /// parameters to their own initialization.
    pub fn new(hyper: LmdHyper, params: &[NamedParam]) -> Result<Self> {
        hyper.validate()?;
        let params = params
            .iter()
            .map(|p| {
                let (m_plus, m_minus) = match p.kind {
                    ParamKind::Weight | ParamKind::Bias => init_from_default(p.value.data(), &hyper),
                    ParamKind::ScaleParam => {
                        let s = init_scale_param(p.value.len(), hyper.sigma);
                        (s.m_plus, s.m_minus)
                    }
                };
                let n = m_plus.len();
                ParamState {
                    name: p.name.clone(),
                    kind: p.kind,
                    shape: p.value.shape().to_vec(),
                    m_plus,
                    m_minus,
                    nu_plus: vec![0.0; n],
                    nu_minus: vec![0.0; n],
                }
            })
            .collect();
        Ok(Self { hyper, state: LmdState { params, step: 0 } })
    }

    pub fn from_checkpoint(ckpt: LmdCheckpoint) -> Result<Self> {
        ckpt.hyper.validate()?;
        for p in &ckpt.state.params {
            let n: usize = p.shape.iter().product();
            if [&p.m_plus, &p.m_minus, &p.nu_plus, &p.nu_minus].iter().any(|v| v.len() != n) {
                return Err(Error::Checkpoint(format!("tensor `{}` has inconsistent lengths", p.name)));
            }
        }
        Ok(Self { hyper: ckpt.hyper, state: ckpt.state })
    }

    pub fn checkpoint(&self) -> LmdCheckpoint {
        LmdCheckpoint { hyper: self.hyper, state: self.state.clone() }
    }

    pub fn hyper(&self) -> &LmdHyper {
        &self.hyper
    }

    pub fn state(&self) -> &LmdState {
        &self.state
    }

    /// Direct access for tests and tooling; the invariants of
    /// [`ParamState`] are the caller's responsibility.
    pub fn state_mut(&mut self) -> &mut LmdState {
        &mut self.state
    }

    fn prior(&self, p: &ParamState) -> GroupPrior {
        GroupPrior::for_kind(p.kind, &self.hyper)
    }

    /// `θ = m ⊙ ε` with ε drawn from `stream`: per tensor, all `θ₊` entries
    /// then all `θ₋` entries.
    pub fn sample(&self, stream: RngStream) -> SampleContext {
        let mut rng = stream.generator();
        let sigma = self.hyper.sigma;
        let mut draw_all = |m: &[f64]| m.iter().map(|&v| v * draw(&mut rng, sigma)).collect::<Vec<_>>();
        let mut plus = Vec::with_capacity(self.state.params.len());
        let mut minus = Vec::with_capacity(self.state.params.len());
        for p in &self.state.params {
            plus.push(draw_all(&p.m_plus));
            minus.push(draw_all(&p.m_minus));
        }
        SampleContext { theta: Signed { plus, minus }, shapes: self.shapes(), stream: Some(stream) }
    }

    /// `θ = m · exp(σ²/2)`.
    pub fn mean(&self) -> SampleContext {
        let f = mean_factor(self.hyper.sigma);
        let scale = |m: &[f64]| m.iter().map(|v| v * f).collect::<Vec<_>>();
        let plus = self.state.params.iter().map(|p| scale(&p.m_plus)).collect();
        let minus = self.state.params.iter().map(|p| scale(&p.m_minus)).collect();
        SampleContext { theta: Signed { plus, minus }, shapes: self.shapes(), stream: None }
    }

    pub fn sample_with_mode(&self, mode: SampleMode, stream: RngStream) -> SampleContext {
        match mode {
            SampleMode::Sampled => self.sample(stream),
            SampleMode::Mean => self.mean(),
        }
    }

    fn shapes(&self) -> Vec<Vec<usize>> {
        self.state.params.iter().map(|p| p.shape.clone()).collect()
    }

    /// Mean network weights `(m₊ − m₋) · exp(σ²/2)`.
    pub fn mean_weights(&self) -> Vec<Tensor> {
        self.mean().theta_trick()
    }

    /// EG± gradient: `g₊ = θ₊ ⊙ ∇`, `g₋ = −θ₋ ⊙ ∇`, with `∇ = ∇ℓ(θ₊ − θ₋)`.
    pub fn grad_transform(&self, ctx: &SampleContext, grads: &[Tensor]) -> Result<Signed> {
        if grads.len() != ctx.shapes.len() {
            return Err(shape_err("grad_transform", format!("{} gradients for {} tensors", grads.len(), ctx.shapes.len())));
        }
        let mut plus = Vec::with_capacity(grads.len());
        let mut minus = Vec::with_capacity(grads.len());
        for (i, grad) in grads.iter().enumerate() {
            if grad.shape() != ctx.shapes[i].as_slice() {
                return Err(shape_err(
                    "grad_transform",
                    format!("gradient {i} has shape {:?}, expected {:?}", grad.shape(), ctx.shapes[i]),
                ));
            }
            let (tp, tm) = (&ctx.theta.plus[i], &ctx.theta.minus[i]);
            let gd = grad.data();
            match self.hyper.grad_scaling {
                GradScaling::ByTheta => {
                    plus.push(tp.iter().zip(gd).map(|(t, g)| t * g).collect());
                    minus.push(tm.iter().zip(gd).map(|(t, g)| -t * g).collect());
                }
                GradScaling::None => {
                    let gate = |t: f64, v: f64| if t > 0.0 { v } else { 0.0 };
                    plus.push(tp.iter().zip(gd).map(|(&t, &g)| gate(t, g)).collect());
                    minus.push(tm.iter().zip(gd).map(|(&t, &g)| gate(t, -g)).collect());
                }
            }
        }
        Ok(Signed { plus, minus })
    }

    /// Regularizer gradient at the sampled weights; entries with `θ = 0`
    /// (zero medians) get `r = 0`.
    pub fn reg_gradient(&self, ctx: &SampleContext) -> Signed {
        let decay = self.hyper.decay;
        let mut plus = Vec::with_capacity(self.state.params.len());
        let mut minus = Vec::with_capacity(self.state.params.len());
        for (i, p) in self.state.params.iter().enumerate() {
            let prior = self.prior(p);
            let reg = |t: &f64| if *t > 0.0 { prior.reg(decay, *t) } else { 0.0 };
            plus.push(ctx.theta.plus[i].iter().map(reg).collect());
            minus.push(ctx.theta.minus[i].iter().map(reg).collect());
        }
        Signed { plus, minus }
    }

    /// `g` and `r` of one evaluation; clips `grads` first when `grad_clip`
    /// is set.
    pub fn contribution(&self, ctx: &SampleContext, grads: &[Tensor]) -> Result<Contribution> {
        let g = match self.hyper.grad_clip {
            Some(c) => {
                let mut clipped = grads.to_vec();
                clip_global_norm(&mut clipped, c);
                self.grad_transform(ctx, &clipped)?
            }
            None => self.grad_transform(ctx, grads)?,
        };
        Ok(Contribution { g, r: self.reg_gradient(ctx) })
    }

    /// One update at the configured learning rate.
    pub fn step(&mut self, update: &Contribution) -> Result<()> {
        self.step_with_lr(update, self.hyper.eta)
    }

    /// One update with learning rate `eta`. Rejects non-finite input and
    /// leaves the state untouched in that case.
    pub fn step_with_lr(&mut self, update: &Contribution, eta: f64) -> Result<()> {
        let layout = Signed {
            plus: self.state.params.iter().map(|p| vec![0.0; p.m_plus.len()]).collect(),
            minus: self.state.params.iter().map(|p| vec![0.0; p.m_minus.len()]).collect(),
        };
        if !update.g.same_layout(&layout) || !update.r.same_layout(&layout) {
            return Err(shape_err("step", "update layout does not match optimizer state"));
        }
        if !update.g.is_finite() {
            return Err(Error::NonFinite { op: "step (g)" });
        }
        if !update.r.is_finite() {
            return Err(Error::NonFinite { op: "step (r)" });
        }
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be >= 0, got {eta}")));
        }
        let (b1, b2, order) = (self.hyper.beta1, self.hyper.beta2, self.hyper.momentum_order);
        let apply = |m: &mut [f64], nu: &mut [f64], g: &[f64], r: &[f64]| {
            for i in 0..m.len() {
                let (nu_temp, nu_next) = match order {
                    MomentumOrder::Lion => (b1 * nu[i] + (1.0 - b1) * g[i], b2 * nu[i] + (1.0 - b2) * g[i]),
                    MomentumOrder::Sequential => {
                        let n = b2 * nu[i] + (1.0 - b2) * g[i];
                        (b1 * n + (1.0 - b1) * g[i], n)
                    }
                };
                nu[i] = nu_next;
                m[i] *= (-eta * (sign(nu_temp) + r[i])).exp();
            }
        };
        for (i, p) in self.state.params.iter_mut().enumerate() {
            apply(&mut p.m_plus, &mut p.nu_plus, &update.g.plus[i], &update.r.plus[i]);
            apply(&mut p.m_minus, &mut p.nu_minus, &update.g.minus[i], &update.r.minus[i]);
        }
        self.state.step += 1;
        Ok(())
    }

    /// Monte-Carlo estimate of `E_q[ℓ] + τ KL(q ‖ p₀)`, with the closed-form
    /// KL summed over all non-zero medians using each group's `τ` and `m_r`.
    pub fn elbo_diagnostic(&self, loss_samples: &[f64]) -> Result<f64> {
        if loss_samples.is_empty() {
            return Err(Error::InvalidArgument("elbo needs at least one loss sample".into()));
        }
        let mc = loss_samples.iter().sum::<f64>() / loss_samples.len() as f64;
        let sigma = self.hyper.sigma;
        let mut reg = 0.0;
        for p in &self.state.params {
            let prior = self.prior(p);
            let tau = prior.tau(sigma);
            if tau == 0.0 {
                continue;
            }
            let mu_p = prior.m_r.ln();
            let mut kl = 0.0;
            for &m in p.m_plus.iter().chain(&p.m_minus).filter(|&&m| m > 0.0) {
                kl += kl_equal_sigma(m.ln(), mu_p, sigma)?;
            }
            reg += tau * kl;
        }
        Ok(mc + reg)
    }

    /// ‖(m₊ − m₋) · exp(σ²/2)‖₂ over all tensors.
    pub fn weight_l2(&self) -> f64 {
        let f = mean_factor(self.hyper.sigma);
        self.state
            .params
            .iter()
            .flat_map(|p| p.m_plus.iter().zip(&p.m_minus).map(move |(a, b)| ((a - b) * f).powi(2)))
            .sum::<f64>()
            .sqrt()
    }

    /// ‖ν₊‖₂ over all tensors.
    pub fn momentum_l2_pos(&self) -> f64 {
        self.state.params.iter().flat_map(|p| &p.nu_plus).map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(kind: ParamKind, theta0: f64, hyper: LmdHyper) -> Lmd {
        Lmd::new(hyper, &[NamedParam::new("w", kind, Tensor::vector(vec![theta0]))]).unwrap()
    }

    fn one(g_plus: f64, g_minus: f64, r_plus: f64, r_minus: f64) -> Contribution {
        Contribution {
            g: Signed { plus: vec![vec![g_plus]], minus: vec![vec![g_minus]] },
            r: Signed { plus: vec![vec![r_plus]], minus: vec![vec![r_minus]] },
        }
    }

    #[test]
    fn defaults_follow_reference_settings() {
        let h = LmdHyper::default();
        assert_eq!((h.eta, h.sigma, h.beta1, h.beta2), (0.005, 0.125, 0.95, 0.99));
        assert_eq!(h.m_r, 0.01 * (0.125f64 * 0.125 / 2.0).exp());
        assert!((h.tau() - (-h.sigma * h.sigma / h.m_r.ln())).abs() < 1e-18);
    }

    #[test]
    fn init_examples() {
        let h = LmdHyper::default();
        let (p, m) = init_from_default(&[0.0], &h);
        assert_eq!((p[0], m[0]), (h.m_r, h.m_r));

        let (p, m) = init_from_default(&[0.5], &h);
        assert!((p[0] - 0.506_187).abs() < 1e-6, "{}", p[0]);
        assert!((m[0] - 0.010_078).abs() < 1e-6, "{}", m[0]);
        assert!(((p[0] - m[0]) * mean_factor(h.sigma) - 0.5).abs() < 1e-12);

        let (p, m) = init_from_default(&[-1.0], &h);
        assert_eq!(p[0], h.m_r);
        assert!((m[0] - ((-h.sigma * h.sigma / 2.0).exp() + h.m_r)).abs() < 1e-15);
        assert!(((p[0] - m[0]) * mean_factor(h.sigma) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn scale_param_init_and_anchor() {
        let sigma = 0.125;
        let s = init_scale_param(3, sigma);
        assert!((s.m_plus[0] * mean_factor(sigma) - 1.0).abs() < 1e-15);
        assert_eq!(s.m_minus, vec![0.0; 3]);
        let prior = GroupPrior { m_r: s.m_r, anchor: 2.0 };
        assert_eq!(prior.reg(DecayMode::Multiplicative, 2.0), 1.0);
        for theta in [0.3, 1.0, 1.7, 3.5] {
            let closed = (f64::ln(theta) + sigma * sigma / 2.0) / (2f64.ln() + sigma * sigma / 2.0);
            assert!((prior.reg(DecayMode::Multiplicative, theta) - closed).abs() < 1e-14);
        }
        // tau^{-1} = 2 R'(2) - 1 with R'(t) = (1 + (ln t - ln m_r)/s^2)/t
        let r_prime_2 = (1.0 + (2f64.ln() - s.m_r.ln()) / (sigma * sigma)) / 2.0;
        assert!((1.0 / s.tau - (2.0 * r_prime_2 - 1.0)).abs() < 1e-10);
    }

    #[test]
    fn regularizer_anchors() {
        let h = LmdHyper::default();
        let prior = GroupPrior::for_kind(ParamKind::Weight, &h);
        assert_eq!(prior.reg(DecayMode::Multiplicative, 1.0), 1.0);
        assert_eq!(prior.reg(DecayMode::Multiplicative, h.m_r), 0.0);
        assert!((prior.reg(DecayMode::Multiplicative, h.m_r * h.m_r) + 1.0).abs() < 1e-12);
        assert_eq!(prior.reg(DecayMode::Additive, 1.0), 1.0);
        assert_eq!(prior.reg(DecayMode::Additive, h.m_r), 0.0);
        // τ (log θ − log m_r)/σ² form agrees with the ratio form
        let theta: f64 = 0.37;
        let direct = h.tau() * (theta.ln() - h.m_r.ln()) / (h.sigma * h.sigma);
        assert!((direct - prior.reg(DecayMode::Multiplicative, theta)).abs() < 1e-12);
    }

    #[test]
    fn zero_sigma_sample_is_exact_median() {
        let lmd = single(ParamKind::Weight, 0.7, LmdHyper::with_sigma(0.0));
        let ctx = lmd.sample(RngStream::new(1, 0));
        assert_eq!(ctx.theta.plus[0], lmd.state().params[0].m_plus);
        assert_eq!(ctx.theta.minus[0], lmd.state().params[0].m_minus);
    }

    #[test]
    fn sampling_is_deterministic_per_stream() {
        let lmd = single(ParamKind::Weight, 0.7, LmdHyper::default());
        assert_eq!(lmd.sample(RngStream::new(4, 1)), lmd.sample(RngStream::new(4, 1)));
        assert_ne!(lmd.sample(RngStream::new(4, 1)), lmd.sample(RngStream::new(4, 2)));
    }

    #[test]
    fn grad_transform_substitution() {
        let mut lmd = single(ParamKind::Weight, 1.0, LmdHyper::with_sigma(0.0));
        lmd.state_mut().params[0].m_plus = vec![2.0];
        lmd.state_mut().params[0].m_minus = vec![0.5];
        let ctx = lmd.sample(RngStream::new(0, 0));
        let g = lmd.grad_transform(&ctx, &[Tensor::vector(vec![3.0])]).unwrap();
        assert_eq!((g.plus[0][0], g.minus[0][0]), (6.0, -1.5));
        let z = lmd.grad_transform(&ctx, &[Tensor::vector(vec![0.0])]).unwrap();
        assert_eq!((z.plus[0][0], z.minus[0][0]), (0.0, 0.0));
        assert!(lmd.grad_transform(&ctx, &[Tensor::vector(vec![1.0, 2.0])]).is_err());
    }

    #[test]
    fn zero_update_leaves_medians() {
        let mut lmd = single(ParamKind::Weight, 0.3, LmdHyper::default());
        let before = lmd.state().params[0].clone();
        lmd.step(&one(0.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(lmd.state().params[0].m_plus, before.m_plus);
        assert_eq!(lmd.state().params[0].m_minus, before.m_minus);
    }

    #[test]
    fn decay_step_example() {
        let h = LmdHyper { eta: 0.1, sigma: 0.0, m_r: (-2.0f64).exp(), ..LmdHyper::default() };
        let mut lmd = single(ParamKind::Weight, 1.0, h);
        lmd.state_mut().params[0].m_plus = vec![1.0];
        let ctx = lmd.sample(RngStream::new(0, 0));
        let c = Contribution { g: Signed::zeros_like(&ctx.theta), r: lmd.reg_gradient(&ctx) };
        lmd.step(&c).unwrap();
        assert!((lmd.state().params[0].m_plus[0] - (-0.1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn sign_step_ignores_magnitude() {
        let h = LmdHyper::default();
        for g in [5.0, 1e-9, 1e9] {
            let mut lmd = single(ParamKind::Weight, 0.5, h);
            let m0 = lmd.state().params[0].m_plus[0];
            lmd.step(&one(g, 0.0, 0.0, 0.0)).unwrap();
            assert_eq!(lmd.state().params[0].m_plus[0], m0 * (-h.eta).exp());
        }
    }

    #[test]
    fn momentum_orders_differ_as_documented() {
        let h = LmdHyper { beta1: 0.5, beta2: 0.9, ..LmdHyper::default() };
        let mut lion = single(ParamKind::Weight, 0.5, h);
        let mut seq = single(ParamKind::Weight, 0.5, LmdHyper { momentum_order: MomentumOrder::Sequential, ..h });
        for l in [&mut lion, &mut seq] {
            l.state_mut().params[0].nu_plus = vec![1.0];
        }
        // g = -1.5: Lion nu_temp = 0.5 - 0.75 < 0; sequential nu = 0.75, nu_temp = 0.375 - 0.75 < 0
        // g = -0.9: Lion nu_temp = 0.05 > 0; sequential nu = 0.81, nu_temp = 0.405 - 0.45 < 0
        let m0 = lion.state().params[0].m_plus[0];
        lion.step(&one(-0.9, 0.0, 0.0, 0.0)).unwrap();
        seq.step(&one(-0.9, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(lion.state().params[0].m_plus[0], m0 * (-h.eta).exp());
        assert_eq!(seq.state().params[0].m_plus[0], m0 * h.eta.exp());
        assert_eq!(lion.state().params[0].nu_plus, seq.state().params[0].nu_plus);
    }

    #[test]
    fn non_finite_update_is_rejected_without_mutation() {
        let mut lmd = single(ParamKind::Weight, 0.5, LmdHyper::default());
        let before = lmd.clone();
        assert!(lmd.step(&one(f64::NAN, 0.0, 0.0, 0.0)).is_err());
        assert!(lmd.step(&one(0.0, 0.0, f64::INFINITY, 0.0)).is_err());
        assert_eq!(lmd, before);
    }

    #[test]
    fn aggregate_means_in_order() {
        let a = one(1.0, 2.0, 3.0, 4.0);
        assert_eq!(aggregate(std::slice::from_ref(&a)).unwrap(), a);
        let neg = one(-1.0, -2.0, -3.0, -4.0);
        let z = aggregate(&[a.clone(), neg]).unwrap();
        assert_eq!(z, one(0.0, 0.0, 0.0, 0.0));
        assert_eq!(aggregate(&[]), Err(Error::EmptyAggregate));
        let four = [one(0.1, 1.0, 0.0, 2.0), one(0.2, -3.0, 1.0, 2.0), one(0.3, 0.5, 0.0, 2.0), one(0.4, 0.25, 1.0, 2.0)];
        let m = aggregate(&four).unwrap();
        assert!((m.g.plus[0][0] - 0.25).abs() < 1e-15);
        assert!((m.g.minus[0][0] - (-0.3125)).abs() < 1e-15);
        assert_eq!(m.r.plus[0][0], 0.5);
        assert_eq!(m.r.minus[0][0], 2.0);
    }

    #[test]
    fn elbo_reduces_to_loss_mean_at_prior() {
        let h = LmdHyper::default();
        let mut lmd = single(ParamKind::Weight, 0.0, h);
        assert_eq!(lmd.state().params[0].m_plus[0], h.m_r);
        assert_eq!(lmd.elbo_diagnostic(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        lmd.state_mut().params[0].m_plus = vec![0.5];
        assert!(lmd.elbo_diagnostic(&[1.0]).unwrap() > 1.0);
        assert!(lmd.elbo_diagnostic(&[]).is_err());
    }

    #[test]
    fn scale_param_minus_half_stays_zero() {
        let mut lmd = single(ParamKind::ScaleParam, 1.0, LmdHyper::default());
        for s in 0..1000u64 {
            let ctx = lmd.sample(RngStream::new(s, 0));
            let grad = Tensor::vector(vec![((s as f64) * 0.37).sin() * 10.0]);
            let c = lmd.contribution(&ctx, &[grad]).unwrap();
            lmd.step(&c).unwrap();
        }
        let p = &lmd.state().params[0];
        assert_eq!(p.m_minus, vec![0.0]);
        assert_eq!(p.nu_minus, vec![0.0]);
        assert!(p.m_plus[0] > 0.0);
    }

    #[test]
    fn checkpoint_json_roundtrip_is_exact() {
        let mut lmd = single(ParamKind::Weight, 0.123_456_789, LmdHyper::default());
        lmd.step(&one(0.3, -0.3, 0.1, 0.2)).unwrap();
        let json = serde_json::to_string(&lmd.checkpoint()).unwrap();
        let back = Lmd::from_checkpoint(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, lmd);
    }
}
