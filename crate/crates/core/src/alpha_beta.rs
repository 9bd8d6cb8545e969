//! (α,β)-geometries: `L = Ω(s) A` with `s = B²/A`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Bindings, Expr};
use crate::finsler::{FinslerLagrangian, LagrangianKind, Thresholds};
use crate::geometry::{MetricModel, Tensor3, TensorField};
use crate::jets::{Jet, Layout, Scalar, TangentPoint};

/// Constants of the generalized Kropina profile `Ω = s^{−n}(c + m s)^{n+1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KropinaParams {
    pub n: f64,
    pub m: f64,
    pub c: f64,
}

impl KropinaParams {
    pub fn new(n: f64, m: f64, c: f64) -> Result<KropinaParams> {
        let p = KropinaParams { n, m, c };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let KropinaParams { n, m, c } = *self;
        if !(n.is_finite() && m.is_finite() && c.is_finite()) {
            return Err(Error::InvalidParams("n, m, c must be finite".into()));
        }
        if c == 0.0 && m == 0.0 {
            return Err(Error::InvalidParams("c = m = 0 makes Ω vanish identically".into()));
        }
        if n == -1.0 {
            return Err(Error::InvalidParams(
                "n = −1 gives L = B², a degenerate L-metric".into(),
            ));
        }
        if c <= 0.0 && m <= 0.0 {
            // c + m s > 0 then needs s < 0, which only Lorentzian A allows
            if c == 0.0 || m == 0.0 {
                return Err(Error::InvalidParams("c + m s > 0 has no solution".into()));
            }
        }
        Ok(())
    }

    /// Degenerate-but-valid combinations, reported rather than rejected.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.n == 1.0 {
            w.push("n = 1: c(1−n) vanishes, q is only constrained by the g_ab term".into());
        }
        if self.n == 0.0 {
            w.push("n = 0: Ω = c + m s is affine in s".into());
        }
        if self.m == 0.0 {
            w.push("m = 0: m-Kropina limit, λ_T vanishes".into());
        }
        w
    }

    /// Ratio `σ_T/λ_T = n c / m` required by the structured connection.
    pub fn sigma_over_lambda(&self) -> f64 {
        self.n * self.c / self.m
    }
}

/// The 0-homogeneous factor Ω as a function of `s = B²/A`.
#[derive(Debug, Clone, PartialEq)]
pub enum OmegaProfile {
    /// `Ω = 1`, i.e. `L = A`.
    Unit,
    /// `Ω = (1 + √s)²`.
    Randers,
    /// `Ω = e^{−s}`.
    Exponential,
    /// `Ω = s^{−n}(c + m s)^{n+1}`.
    GeneralizedKropina(KropinaParams),
    /// Free expression in `s` and named parameters.
    Expression {
        source: Expr,
        params: BTreeMap<String, f64>,
    },
}

pub fn profile_randers() -> OmegaProfile {
    OmegaProfile::Randers
}

pub fn profile_exponential() -> OmegaProfile {
    OmegaProfile::Exponential
}

pub fn profile_generalized_kropina(p: KropinaParams) -> Result<OmegaProfile> {
    p.validate()?;
    Ok(OmegaProfile::GeneralizedKropina(p))
}

fn real_pow<S: Scalar>(base: &S, r: f64) -> Result<S> {
    if r.fract() == 0.0 && r.abs() <= i32::MAX as f64 {
        if r < 0.0 && base.value() == 0.0 {
            return Err(Error::ProfileDegenerate("zero to a negative power".into()));
        }
        return Ok(base.powi(r as i32));
    }
    if !(base.value() > 0.0) {
        return Err(Error::ProfileDegenerate(format!(
            "non-integer power of non-positive value {}",
            base.value()
        )));
    }
    Ok(base.powf(r))
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

impl OmegaProfile {
    pub fn name(&self) -> &'static str {
        match self {
            OmegaProfile::Unit => "unit",
            OmegaProfile::Randers => "randers",
            OmegaProfile::Exponential => "exponential",
            OmegaProfile::GeneralizedKropina(_) => "kropina",
            OmegaProfile::Expression { .. } => "expression",
        }
    }

    pub fn expression(source: &str, params: BTreeMap<String, f64>) -> Result<OmegaProfile> {
        let source: Expr = source.parse()?;
        if let Some(bad) = source
            .symbols()
            .into_iter()
            .find(|s| s != "s" && !params.contains_key(s))
        {
            return Err(Error::Model(format!("Ω(s) references unknown symbol `{bad}`")));
        }
        Ok(OmegaProfile::Expression { source, params })
    }

    /// Ω over any scalar ring.
    pub fn eval<S: Scalar>(&self, s: &S) -> Result<S> {
        match self {
            OmegaProfile::Unit => Ok(S::from_f64(1.0)),
            OmegaProfile::Randers => {
                if !(s.value() > 0.0) {
                    return Err(Error::Inadmissible(format!(
                        "Randers profile needs s > 0, got {}",
                        s.value()
                    )));
                }
                let r = S::from_f64(1.0) + s.sqrt();
                Ok(r.clone() * r)
            }
            OmegaProfile::Exponential => Ok((-s.clone()).exp()),
            OmegaProfile::GeneralizedKropina(k) => {
                let lin = S::from_f64(k.c) + s.clone() * S::from_f64(k.m);
                Ok(real_pow(s, -k.n)? * real_pow(&lin, k.n + 1.0)?)
            }
            OmegaProfile::Expression { source, params } => {
                let mut b = Bindings::new();
                b.bind_params(params);
                b.bind("s", s.clone());
                Ok(source.eval(&b)?)
            }
        }
    }

    pub fn value(&self, s: f64) -> Result<f64> {
        self.eval(&s)
    }

    /// `L = Ω(B²/A) A`, written so that no jet of `B²/A` is formed when a
    /// closed form exists. Near the null cone `B²/A` is huge and its fiber
    /// derivatives cancel catastrophically.
    pub fn lagrangian<S: Scalar>(&self, a: &S, b: &S) -> Result<S> {
        if a.value() == 0.0 {
            return Err(Error::Inadmissible("A = 0".into()));
        }
        match self {
            OmegaProfile::Unit => Ok(a.clone()),
            OmegaProfile::Randers => {
                if !(a.value() > 0.0) {
                    return Err(Error::Inadmissible(format!(
                        "Randers profile needs A > 0, got {}",
                        a.value()
                    )));
                }
                let r = a.sqrt() + b.abs();
                Ok(r.clone() * r)
            }
            OmegaProfile::GeneralizedKropina(k) => {
                let b2 = b.clone() * b.clone();
                let lin = a.clone() * S::from_f64(k.c) + b2.clone() * S::from_f64(k.m);
                Ok(real_pow(&b2, -k.n)? * real_pow(&lin, k.n + 1.0)?)
            }
            _ => {
                let s = b.clone() * b.clone() / a.clone();
                Ok(self.eval(&s)? * a.clone())
            }
        }
    }

    /// Normalized Taylor coefficients `Ω^{(k)}(s0)/k!`, `k = 0..=order`.
    pub fn taylor(&self, s0: f64, order: u8) -> Result<Vec<f64>> {
        let l = Layout::fiber_only(1, order);
        let j = self.eval(&Jet::variable(&l, 0, s0))?;
        Ok((0..=order).map(|k| j.coeff(&[k])).collect())
    }

    /// `Ω^{(k)}(s0)`.
    pub fn derivative(&self, s0: f64, k: u8) -> Result<f64> {
        Ok(self.taylor(s0, k)?[k as usize] * factorial(k as usize))
    }

    /// `Ω^{(k)}` evaluated on a scalar (possibly a jet) argument.
    pub fn derivative_at<S: Scalar>(&self, s: &S, k: usize) -> Result<S> {
        let order = s.degree() + k;
        let tay = self.taylor(s.value(), order as u8)?;
        let shifted: Vec<f64> = (0..=s.degree())
            .map(|j| tay[j + k] * factorial(j + k) / factorial(j))
            .collect();
        Ok(s.compose(&shifted))
    }

    /// Conditioning estimate at `(A, B)`: the largest relative fiber
    /// log-derivative among the non-polynomial building blocks of `L`.
    /// `a_scale` and `b_scale` bound `|A|` and `|B|` over the unit sphere
    /// scaled to `ẋ` (`‖g‖ ‖ẋ‖²` and `‖β‖ ‖ẋ‖`).
    pub fn amplification(&self, a: f64, b: f64, a_scale: f64, b_scale: f64) -> f64 {
        let ka = 2.0 * a_scale / a.abs();
        let kb = b_scale / b.abs();
        match self {
            OmegaProfile::Unit => 1.0,
            OmegaProfile::Randers => ka.max(kb),
            OmegaProfile::Exponential => {
                // Ω − sΩ′ = e^{-s}(1 + s) degenerates the L-metric at s = -1
                let s = b * b / a;
                let kd = (1.0 + s.abs()) / (1.0 + s).abs();
                (ka * s.abs().max(1.0)).max(kd)
            }
            OmegaProfile::GeneralizedKropina(k) => {
                let w = k.c * a + k.m * b * b;
                let kw = 2.0 * (k.c.abs() * a_scale + k.m.abs() * b_scale * b_scale) / w.abs();
                kb.max(kw)
            }
            OmegaProfile::Expression { .. } => ka.max(kb),
        }
    }

    /// Profile-specific admissibility on `(A, B)`.
    pub fn admissible(&self, a: f64, b: f64, th: &Thresholds) -> std::result::Result<(), String> {
        let s = b * b / a;
        match self {
            OmegaProfile::Unit | OmegaProfile::Exponential => Ok(()),
            OmegaProfile::Randers => {
                if a > th.eps_a {
                    Ok(())
                } else {
                    Err(format!("Randers profile needs A > ε_A, got A = {a:e}"))
                }
            }
            OmegaProfile::GeneralizedKropina(k) => {
                if !(s.abs() > th.eps_b) {
                    return Err(format!("|s| = {:e} too small", s.abs()));
                }
                if !(k.c + k.m * s > th.eps_b) {
                    return Err(format!("c + m s = {:e} not positive", k.c + k.m * s));
                }
                // Ω′ ∝ (m s − n c) must not vanish for the Ω″/Ω′ quotient
                if !((k.m * s - k.n * k.c).abs() > th.eps_b) {
                    return Err(format!("Ω′ vanishes at s = {s}"));
                }
                if k.n.fract() != 0.0 && s <= 0.0 {
                    return Err(format!("non-integer n needs s > 0, got {s}"));
                }
                Ok(())
            }
            OmegaProfile::Expression { .. } => {
                let tay = self.taylor(s, 2).map_err(|e| e.to_string())?;
                if tay.iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(format!("Ω not smooth at s = {s}"))
                }
            }
        }
    }
}

/// `L = Ω(B²/A) A`.
pub fn build_ab_lagrangian(m: &MetricModel, profile: OmegaProfile) -> Result<FinslerLagrangian> {
    if !m.has_beta() {
        return Err(Error::MissingOneForm);
    }
    Ok(FinslerLagrangian {
        kind: LagrangianKind::AlphaBeta(profile),
    })
}

/// `T^a_bc = λ β^a β_b β_c + ρ(β_c δ^a_b + β_b δ^a_c) + σ β^a g_bc`, with the
/// three coefficients given as base fields.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredTParams {
    pub lambda: Expr,
    pub rho: Expr,
    pub sigma: Expr,
}

impl StructuredTParams {
    pub fn new(lambda: &str, rho: &str, sigma: &str) -> Result<StructuredTParams> {
        Ok(StructuredTParams {
            lambda: lambda.parse()?,
            rho: rho.parse()?,
            sigma: sigma.parse()?,
        })
    }

    pub fn zero() -> StructuredTParams {
        StructuredTParams {
            lambda: Expr::num(0.0),
            rho: Expr::num(0.0),
            sigma: Expr::num(0.0),
        }
    }

    /// `(λ, ρ, σ)` at `x`.
    pub fn values(&self, m: &MetricModel, x: &[f64]) -> Result<(f64, f64, f64)> {
        let b = m.bindings(x);
        Ok((self.lambda.eval(&b)?, self.rho.eval(&b)?, self.sigma.eval(&b)?))
    }
}

pub fn structured_t(params: StructuredTParams) -> StructuredTParams {
    params
}

/// The structured tensor for given coefficient values at `x`.
pub fn structured_t_at(m: &MetricModel, x: &[f64], lambda: f64, rho: f64, sigma: f64) -> Result<Tensor3> {
    let n = m.dim();
    let (g, inv) = m.metric_at(x)?;
    let beta = m.beta_components(x)?;
    let up: Vec<f64> = (0..n).map(|a| (0..n).map(|b| inv[(a, b)] * beta[b]).sum()).collect();
    let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    Ok(Tensor3::from_fn(n, |a, b, c| {
        lambda * up[a] * beta[b] * beta[c]
            + rho * (beta[c] * delta(a, b) + beta[b] * delta(a, c))
            + sigma * up[a] * g[(b, c)]
    }))
}

impl TensorField for StructuredTParams {
    fn at(&self, m: &MetricModel, x: &[f64]) -> Result<Tensor3> {
        let (l, r, s) = self.values(m, x)?;
        structured_t_at(m, x, l, r, s)
    }
}

fn profile_of(lag: &FinslerLagrangian) -> Result<&OmegaProfile> {
    lag.profile()
        .ok_or_else(|| Error::Model("not an (α,β) Lagrangian".into()))
}

/// `Q = Ω/(Ω′B) − B/A`.
pub fn ab_quotient(profile: &OmegaProfile, a: f64, b: f64) -> Result<f64> {
    let s = b * b / a;
    let tay = profile.taylor(s, 1)?;
    if tay[1] == 0.0 || b == 0.0 {
        return Err(Error::ProfileDegenerate(format!("Ω′ B = 0 at s = {s}")));
    }
    Ok(tay[0] / (tay[1] * b) - b / a)
}

struct AbPoint {
    g: DMatrix<f64>,
    beta: Vec<f64>,
    nabla: DMatrix<f64>,
    t: Tensor3,
}

impl AbPoint {
    fn new(m: &MetricModel, t: &dyn TensorField, x: &[f64]) -> Result<AbPoint> {
        let (g, _) = m.metric_at(x)?;
        Ok(AbPoint {
            g,
            beta: m.beta_components(x)?,
            nabla: m.nabla_beta(x)?,
            t: t.at(m, x)?,
        })
    }
}

/// (α,β) Berwald residual vector over any scalar ring in the fiber variables:
/// `R_a = ẋ^c ∇_aβ_c − T^b_ac ẋ^c β_b − T^b_ac ẋ^c ẋ_b Q`.
fn corollary2_generic<S: Scalar>(profile: &OmegaProfile, pt: &AbPoint, xdot: &[S]) -> Result<Vec<S>> {
    let n = xdot.len();
    let zero = S::from_f64(0.0);
    let lower: Vec<S> = (0..n)
        .map(|b| (0..n).fold(zero.clone(), |acc, c| acc + xdot[c].clone() * S::from_f64(pt.g[(b, c)])))
        .collect();
    let a = (0..n).fold(zero.clone(), |acc, b| acc + lower[b].clone() * xdot[b].clone());
    let bb = (0..n).fold(zero.clone(), |acc, b| acc + xdot[b].clone() * S::from_f64(pt.beta[b]));
    if a.value() == 0.0 || bb.value() == 0.0 {
        return Err(Error::Inadmissible("A or B vanishes".into()));
    }
    let s = bb.clone() * bb.clone() / a.clone();
    let om = profile.eval(&s)?;
    let om1 = profile.derivative_at(&s, 1)?;
    if om1.value() == 0.0 {
        return Err(Error::ProfileDegenerate(format!("Ω′ = 0 at s = {}", s.value())));
    }
    let q = om / (om1 * bb.clone()) - bb / a;
    let mut out = Vec::with_capacity(n);
    for ai in 0..n {
        let mut r = zero.clone();
        for c in 0..n {
            r = r + xdot[c].clone() * S::from_f64(pt.nabla[(ai, c)]);
        }
        for b in 0..n {
            for c in 0..n {
                let t = pt.t.get(b, ai, c);
                if t == 0.0 {
                    continue;
                }
                let tx = xdot[c].clone() * S::from_f64(t);
                r = r - tx.clone() * S::from_f64(pt.beta[b]) - tx * lower[b].clone() * q.clone();
            }
        }
        out.push(r);
    }
    Ok(out)
}

/// Per-index (α,β) Berwald residual.
pub fn corollary2_residual_vec(
    m: &MetricModel,
    profile: &OmegaProfile,
    t: &dyn TensorField,
    p: &TangentPoint,
) -> Result<Vec<f64>> {
    let pt = AbPoint::new(m, t, &p.x)?;
    corollary2_generic(profile, &pt, &p.xdot)
}

/// `‖R‖∞` of the (α,β) Berwald residual.
pub fn corollary2_residual(
    m: &MetricModel,
    profile: &OmegaProfile,
    t: &dyn TensorField,
    p: &TangentPoint,
) -> Result<f64> {
    Ok(corollary2_residual_vec(m, profile, t, p)?
        .iter()
        .fold(0.0, |acc, v| acc.max(v.abs())))
}

/// Fiber derivative `∂̇_d R_a` of the (α,β) Berwald residual, computed with jets.
pub fn corollary2_fiber_derivative(
    m: &MetricModel,
    profile: &OmegaProfile,
    t: &dyn TensorField,
    p: &TangentPoint,
) -> Result<DMatrix<f64>> {
    let n = p.dim();
    let pt = AbPoint::new(m, t, &p.x)?;
    let l = Layout::fiber_only(n, 1);
    let xdot: Vec<Jet> = (0..n).map(|i| Jet::variable(&l, i, p.xdot[i])).collect();
    let r = corollary2_generic(profile, &pt, &xdot)?;
    Ok(DMatrix::from_fn(n, n, |a, d| r[a].derivative(&crate::jets::unit(n, d))))
}

/// Closed-form pointwise residual (the fiber-differentiated condition):
///
/// `R_ad = ∇_aβ_d − T^b_ad β_b − (T^b_ad ẋ_b + T^b_ac ẋ^c g_db) Q − T^b_ac ẋ^c ẋ_b ∂̇_d Q`
///
/// with `∂̇_d Q = ẋ_d (2B/A²) ΩΩ″/Ω′² + β_d (1/A − Ω/(Ω′B²) − 2ΩΩ″/(Ω′² A))`.
pub fn corollary2_pointwise_residual(
    m: &MetricModel,
    profile: &OmegaProfile,
    t: &dyn TensorField,
    p: &TangentPoint,
) -> Result<DMatrix<f64>> {
    let n = p.dim();
    let pt = AbPoint::new(m, t, &p.x)?;
    let v = &p.xdot;
    let lower: Vec<f64> = (0..n).map(|b| (0..n).map(|c| pt.g[(b, c)] * v[c]).sum()).collect();
    let a: f64 = (0..n).map(|b| lower[b] * v[b]).sum();
    let bb: f64 = (0..n).map(|b| pt.beta[b] * v[b]).sum();
    let s = bb * bb / a;
    let tay = profile.taylor(s, 2)?;
    let (om, om1, om2) = (tay[0], tay[1], 2.0 * tay[2]);
    if om1 == 0.0 || bb == 0.0 {
        return Err(Error::ProfileDegenerate(format!("Ω′ B = 0 at s = {s}")));
    }
    let q = om / (om1 * bb) - bb / a;
    let curv = om * om2 / (om1 * om1);
    let dq_x = 2.0 * bb / (a * a) * curv;
    let dq_b = 1.0 / a - om / (om1 * bb * bb) - 2.0 * curv / a;

    // w_a = T^b_ac ẋ^c ẋ_b
    let w: Vec<f64> = (0..n)
        .map(|ai| {
            let mut s = 0.0;
            for b in 0..n {
                for c in 0..n {
                    s += pt.t.get(b, ai, c) * v[c] * lower[b];
                }
            }
            s
        })
        .collect();
    Ok(DMatrix::from_fn(n, n, |ai, d| {
        let mut r = pt.nabla[(ai, d)];
        let mut tq = 0.0;
        for b in 0..n {
            r -= pt.t.get(b, ai, d) * pt.beta[b];
            tq += pt.t.get(b, ai, d) * lower[b];
            for c in 0..n {
                tq += pt.t.get(b, ai, c) * v[c] * pt.g[(d, b)];
            }
        }
        r - tq * q - w[ai] * (lower[d] * dq_x + pt.beta[d] * dq_b)
    }))
}

/// `D_ab = [c(1−n) + m β²] β_a β_b + c n β² g_ab`, `β² = g^{-1}(β, β)`.
pub fn corollary3_design(m: &MetricModel, k: &KropinaParams, x: &[f64]) -> Result<DMatrix<f64>> {
    let n = m.dim();
    let (g, inv) = m.metric_at(x)?;
    let beta = m.beta_components(x)?;
    let mut b2 = 0.0;
    for a in 0..n {
        for b in 0..n {
            b2 += inv[(a, b)] * beta[a] * beta[b];
        }
    }
    let coef = k.c * (1.0 - k.n) + k.m * b2;
    Ok(DMatrix::from_fn(n, n, |a, b| {
        coef * beta[a] * beta[b] + k.c * k.n * b2 * g[(a, b)]
    }))
}

/// `∇_aβ_b − q D_ab`.
pub fn corollary3_residual(m: &MetricModel, k: &KropinaParams, q: &Expr, x: &[f64]) -> Result<DMatrix<f64>> {
    let qv = q.eval(&m.bindings(x))?;
    corollary3_residual_value(m, k, qv, x)
}

pub fn corollary3_residual_value(m: &MetricModel, k: &KropinaParams, q: f64, x: &[f64]) -> Result<DMatrix<f64>> {
    Ok(m.nabla_beta(x)? - corollary3_design(m, k, x)? * q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QFit {
    pub q: f64,
    /// Frobenius norm of the residual at the optimum.
    pub residual: f64,
}

/// Least-squares `q` minimizing `‖∇β − q D‖_F`.
pub fn solve_q(m: &MetricModel, k: &KropinaParams, x: &[f64]) -> Result<QFit> {
    let d = corollary3_design(m, k, x)?;
    let nb = m.nabla_beta(x)?;
    let dd = d.dot(&d);
    if !(dd.sqrt() > 1e-12) {
        return Err(Error::UndefinedFit(format!(
            "design tensor vanishes at {x:?}; q is undetermined"
        )));
    }
    let q = nb.dot(&d) / dd;
    Ok(QFit {
        q,
        residual: (nb - d * q).norm(),
    })
}

/// Residual of the profile equation
/// `Ω Ω′ σ + s Ω Ω″ (σ − λ s) − σ s Ω′²` for the generalized Kropina profile.
pub fn omega_ode_residual(k: &KropinaParams, lambda: f64, sigma: f64, s: f64) -> Result<f64> {
    let profile = profile_generalized_kropina(*k)?;
    if !(k.c + k.m * s > 0.0) || s == 0.0 {
        return Err(Error::Inadmissible(format!("s = {s} outside the profile domain")));
    }
    let tay = profile.taylor(s, 2)?;
    let (om, om1, om2) = (tay[0], tay[1], 2.0 * tay[2]);
    Ok(om * om1 * sigma + s * om * om2 * (sigma - lambda * s) - sigma * s * om1 * om1)
}

/// General solution `c₂ s^{−σ/c₁}(λ s + c₁)^{σ/c₁+1}` with `c₁ = σ/n`,
/// `c₂ = (m/λ)^{n+1}`.
pub fn kropina_ode_general_solution(k: &KropinaParams, lambda: f64, sigma: f64, s: f64) -> Result<f64> {
    if k.n == 0.0 || lambda == 0.0 {
        return Err(Error::InvalidParams("needs n ≠ 0 and λ ≠ 0".into()));
    }
    let c1 = sigma / k.n;
    let c2 = (k.m / lambda).powf(k.n + 1.0);
    let e = sigma / c1;
    Ok(c2 * real_pow(&s, -e)? * real_pow(&(lambda * s + c1), e + 1.0)?)
}

/// Kundt-family structured-T coefficients for a given `∂_vH`:
/// `σ = n/(1−n) ∂_vH`, `ρ = −σ`, `λ = m σ/(n c)`.
pub fn kundt_t_coefficients(k: &KropinaParams, dv_h: f64) -> (f64, f64, f64) {
    let sigma = k.n / (1.0 - k.n) * dv_h;
    (k.m * sigma / (k.n * k.c), -sigma, sigma)
}

/// Ω recovered from `L/A` must agree with the profile; helper for tests.
pub fn omega_from_l(lag: &FinslerLagrangian, m: &MetricModel, p: &TangentPoint) -> Result<(f64, f64)> {
    let profile = profile_of(lag)?;
    let g = m.metric_components(&p.x)?;
    let a = MetricModel::quadratic_form(&g, &p.xdot);
    let beta = m.beta_components(&p.x)?;
    let b = MetricModel::pairing(&beta, &p.xdot);
    Ok((lag.value(m, p)? / a, profile.value(b * b / a)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ZeroT;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kro(n: f64, m: f64, c: f64) -> KropinaParams {
        KropinaParams::new(n, m, c).unwrap()
    }

    #[test]
    fn profile_values() {
        let k = profile_generalized_kropina(kro(1.0, 0.0, 1.0)).unwrap();
        assert_relative_eq!(k.value(2.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(OmegaProfile::Randers.value(1.0).unwrap(), 4.0, epsilon = 1e-15);
        assert_eq!(OmegaProfile::Exponential.value(0.0).unwrap(), 1.0);
    }

    #[test]
    fn profile_derivatives_match_finite_differences() {
        let h = 1e-4;
        let profiles = [
            (OmegaProfile::Randers, 0.7),
            (OmegaProfile::Exponential, 1.3),
            (OmegaProfile::GeneralizedKropina(kro(2.0, 1.0, 1.0)), 0.6),
            (OmegaProfile::GeneralizedKropina(kro(0.5, 2.0, 1.5)), 1.1),
            (OmegaProfile::expression("(1 + s)^3 / s", BTreeMap::new()).unwrap(), 0.9),
        ];
        for (p, s) in profiles {
            let f = |v: f64| p.value(v).unwrap();
            let d1 = (f(s + h) - f(s - h)) / (2.0 * h);
            let d2 = (f(s + h) - 2.0 * f(s) + f(s - h)) / (h * h);
            assert_relative_eq!(p.derivative(s, 1).unwrap(), d1, max_relative = 1e-6);
            assert_relative_eq!(p.derivative(s, 2).unwrap(), d2, max_relative = 1e-6);
        }
    }

    #[test]
    fn unit_profile_builds_riemannian() {
        let m = MetricModel::euclidean(2).with_beta_str(&["0.3", "0"]).unwrap();
        let lag = build_ab_lagrangian(&m, OmegaProfile::Unit).unwrap();
        let p = TangentPoint::new(vec![0.1, 0.2], vec![1.0, 2.0]).unwrap();
        assert_eq!(lag.value(&m, &p).unwrap(), 5.0);
    }

    #[test]
    fn randers_lagrangian_value() {
        let m = MetricModel::euclidean(4)
            .with_beta_str(&["0.1", "0", "0", "0"])
            .unwrap();
        let lag = build_ab_lagrangian(&m, OmegaProfile::Randers).unwrap();
        let p = TangentPoint::new(vec![0.0; 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(lag.value(&m, &p).unwrap(), 1.21, epsilon = 1e-15);
    }

    #[test]
    fn build_requires_beta() {
        assert_eq!(
            build_ab_lagrangian(&MetricModel::euclidean(2), OmegaProfile::Randers).unwrap_err(),
            Error::MissingOneForm
        );
    }

    #[test]
    fn omega_recovered_from_lagrangian() {
        let m = MetricModel::euclidean(3).with_beta_str(&["x2", "0.5", "x1"]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for prof in [
            OmegaProfile::Randers,
            OmegaProfile::Exponential,
            OmegaProfile::GeneralizedKropina(kro(2.0, 1.0, 1.0)),
        ] {
            let lag = build_ab_lagrangian(&m, prof).unwrap();
            for _ in 0..20 {
                let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let p = TangentPoint::new(x, v).unwrap();
                let (from_l, direct) = omega_from_l(&lag, &m, &p).unwrap();
                assert!((from_l - direct).abs() <= 1e-10 * direct.abs().max(1.0));
            }
        }
    }

    #[test]
    fn randers_and_exponential_quotients() {
        for (a, b) in [(1.0, 0.3), (2.5, -0.7), (0.4, 1.9)] {
            let q = ab_quotient(&OmegaProfile::Randers, a, b).unwrap();
            assert_relative_eq!(q, b.signum() / a.sqrt(), epsilon = 1e-10);
            let q = ab_quotient(&OmegaProfile::Exponential, a, b).unwrap();
            assert_relative_eq!(q, -(1.0 / b + b / a), epsilon = 1e-10);
        }
    }

    #[test]
    fn structured_t_by_hand() {
        let m = MetricModel::euclidean(2).with_beta_str(&["1", "0"]).unwrap();
        let t = StructuredTParams::new("0", "1", "0")
            .unwrap()
            .at(&m, &[0.0, 0.0])
            .unwrap();
        // ρ(β_c δ^a_b + β_b δ^a_c) with β = (1, 0)
        assert_eq!(t.get(0, 0, 0), 2.0);
        assert_eq!(t.get(1, 1, 0), 1.0);
        assert_eq!(t.get(1, 0, 1), 1.0);
        assert_eq!(t.get(0, 1, 1), 0.0);
        assert_eq!(t.get(0, 0, 1), 0.0);
        assert_eq!(t.get(1, 1, 1), 0.0);
        let z = StructuredTParams::zero().at(&m, &[0.3, 0.1]).unwrap();
        assert_eq!(z.max_abs(), 0.0);
        let s = StructuredTParams::new("x1", "2", "x2 - 1")
            .unwrap()
            .at(&m, &[0.3, 0.1])
            .unwrap();
        assert_eq!(s.lower_asymmetry(), 0.0);
    }

    #[test]
    fn parallel_beta_gives_zero_residuals() {
        let m = MetricModel::euclidean(3).with_beta_str(&["1", "-2", "0.5"]).unwrap();
        let p = TangentPoint::new(vec![0.1, 0.2, 0.3], vec![0.6, 0.1, -0.9]).unwrap();
        for prof in [OmegaProfile::Randers, OmegaProfile::Exponential] {
            assert_eq!(corollary2_residual(&m, &prof, &ZeroT, &p).unwrap(), 0.0);
            assert_eq!(
                corollary2_pointwise_residual(&m, &prof, &ZeroT, &p).unwrap().amax(),
                0.0
            );
        }
    }

    #[test]
    fn pointwise_residual_is_fiber_derivative() {
        let m = MetricModel::diagonal(&["x1", "x2", "x3"], &["1 + x2^2", "exp(x1)", "2"])
            .unwrap()
            .with_beta_str(&["x2", "x1*x3", "1"])
            .unwrap();
        let t = StructuredTParams::new("0.3 + x1", "x2", "-0.4").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for prof in [
            OmegaProfile::Randers,
            OmegaProfile::Exponential,
            OmegaProfile::GeneralizedKropina(kro(2.0, 1.0, 1.0)),
        ] {
            for _ in 0..25 {
                let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let p = TangentPoint::new(x, v).unwrap();
                let closed = corollary2_pointwise_residual(&m, &prof, &t, &p).unwrap();
                let jet = corollary2_fiber_derivative(&m, &prof, &t, &p).unwrap();
                let scale = jet.amax().max(1.0);
                assert!((closed - jet).amax() < 1e-9 * scale, "{}", prof.name());
            }
        }
    }

    #[test]
    fn corollary3_on_parallel_beta() {
        let m = MetricModel::euclidean(3).with_beta_str(&["1", "0", "0"]).unwrap();
        let k = kro(2.0, 1.0, 1.0);
        let r = corollary3_residual(&m, &k, &Expr::num(0.0), &[0.2, 0.1, 0.0]).unwrap();
        assert_eq!(r.amax(), 0.0);
        let fit = solve_q(&m, &k, &[0.2, 0.1, 0.0]).unwrap();
        assert_eq!(fit.q, 0.0);
        assert_eq!(fit.residual, 0.0);
    }

    #[test]
    fn mismatched_structure_has_large_fit_residual() {
        // ∇β symmetric off-diagonal, while D is diagonal-dominated
        let m = MetricModel::euclidean(2).with_beta_str(&["x2", "x1"]).unwrap();
        let fit = solve_q(&m, &kro(2.0, 1.0, 1.0), &[0.5, 0.5]).unwrap();
        assert!(fit.residual > 1e-3);
    }

    #[test]
    fn null_design_is_undefined() {
        // β = 0 at the origin makes D vanish
        let m = MetricModel::euclidean(2).with_beta_str(&["x1", "x2"]).unwrap();
        assert!(matches!(
            solve_q(&m, &kro(2.0, 1.0, 1.0), &[0.0, 0.0]),
            Err(Error::UndefinedFit(_))
        ));
    }

    #[test]
    fn ode_holds_on_constraint_and_fails_off_it() {
        for k in [kro(1.0, 1.0, 1.0), kro(2.0, 1.0, 1.0), kro(3.0, 0.5, 2.0)] {
            let sigma = 0.8;
            let lambda = sigma / k.sigma_over_lambda();
            for s in [0.5, 1.0, 2.0] {
                assert!(omega_ode_residual(&k, lambda, sigma, s).unwrap().abs() < 1e-10);
                let gen = kropina_ode_general_solution(&k, lambda, sigma, s).unwrap();
                let direct = OmegaProfile::GeneralizedKropina(k).value(s).unwrap();
                assert_relative_eq!(gen, direct, max_relative = 1e-12);
            }
            let worst = [0.5, 1.0, 2.0]
                .iter()
                .map(|&s| omega_ode_residual(&k, 1.5 * lambda, sigma, s).unwrap().abs())
                .fold(0.0, f64::max);
            assert!(worst > 1e-3);
        }
    }

    #[test]
    fn kropina_param_validation() {
        assert!(KropinaParams::new(2.0, 0.0, 0.0).is_err());
        assert!(KropinaParams::new(-1.0, 1.0, 1.0).is_err());
        assert!(KropinaParams::new(f64::NAN, 1.0, 1.0).is_err());
        assert!(!kro(1.0, 1.0, 1.0).warnings().is_empty());
        assert!(kro(2.0, 1.0, 1.0).warnings().is_empty());
    }
}
