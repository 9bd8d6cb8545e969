//! Berwald conditions phrased through `Ω = L/A` and the tensor `T = Ξ − Γ`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::finsler::{BaseOutcome, FinslerLagrangian, SprayJets, XI_FIBER_ORDER};
use crate::geometry::{MetricModel, Tensor3, TensorField};
use crate::jets::{seed_all, unit, Jet, Scalar, TangentPoint};

/// `Ω(x, ẋ) = L/A`, 0-homogeneous in `ẋ`.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaField {
    lag: FinslerLagrangian,
    pub eps_a: f64,
}

/// `Ω`, `A` and the first partials of `Ω` at one tangent point.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaJet {
    pub omega: f64,
    pub a: f64,
    /// `∂_a Ω`.
    pub dx: Vec<f64>,
    /// `∂̇_a Ω`.
    pub dv: Vec<f64>,
}

pub fn omega_from_lagrangian(lag: &FinslerLagrangian) -> OmegaField {
    OmegaField {
        lag: lag.clone(),
        eps_a: 1e-6,
    }
}

impl OmegaField {
    pub fn lagrangian(&self) -> &FinslerLagrangian {
        &self.lag
    }

    fn eval<S: Scalar>(&self, m: &MetricModel, x: &[S], xdot: &[S]) -> Result<(S, S)> {
        let g = m.metric_components(x)?;
        let a = MetricModel::quadratic_form(&g, xdot);
        if !(a.value().abs() > self.eps_a) {
            return Err(Error::Inadmissible(format!(
                "|A| = {:e} not above ε_A",
                a.value().abs()
            )));
        }
        let l = self.lag.eval(m, x, xdot)?;
        Ok((l / a.clone(), a))
    }

    pub fn value(&self, m: &MetricModel, p: &TangentPoint) -> Result<f64> {
        Ok(self.eval(m, &p.x, &p.xdot)?.0)
    }

    pub fn jet(&self, m: &MetricModel, p: &TangentPoint) -> Result<OmegaJet> {
        let n = p.dim();
        let sp = seed_all(p, (1, 1))?;
        let (om, a): (Jet, Jet) = self.eval(m, &sp.x, &sp.xdot)?;
        let vars = 2 * n;
        Ok(OmegaJet {
            omega: om.value(),
            a: a.value(),
            dx: (0..n).map(|i| om.coeff(&unit(vars, i))).collect(),
            dv: (0..n).map(|i| om.coeff(&unit(vars, n + i))).collect(),
        })
    }
}

/// Base-manifold conformal exponent `σ(x)` of `L = e^{2σ} A`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformalFactor {
    pub sigma: Expr,
}

impl ConformalFactor {
    pub fn new(sigma: Expr) -> Self {
        ConformalFactor { sigma }
    }

    pub fn lagrangian(&self) -> FinslerLagrangian {
        FinslerLagrangian::conformal(self.sigma.clone())
    }
}

/// `R_a = ∂_aΩ − Γ^b_ac ẋ^c ∂̇_bΩ − T^b_ac ẋ^c (∂̇_bΩ + 2 ẋ_b Ω/A)`.
pub fn theorem1_residual(
    omega: &OmegaField,
    m: &MetricModel,
    t: &dyn TensorField,
    p: &TangentPoint,
) -> Result<Vec<f64>> {
    let tt = t.at(m, &p.x)?;
    theorem1_residual_with(omega, m, &tt, p)
}

fn theorem1_residual_with(omega: &OmegaField, m: &MetricModel, t: &Tensor3, p: &TangentPoint) -> Result<Vec<f64>> {
    let n = p.dim();
    let oj = omega.jet(m, p)?;
    let gamma = m.christoffel(&p.x)?;
    let (g, _) = m.metric_at(&p.x)?;
    let v = &p.xdot;
    let lower: Vec<f64> = (0..n).map(|b| (0..n).map(|c| g[(b, c)] * v[c]).sum()).collect();
    Ok((0..n)
        .map(|a| {
            let mut r = oj.dx[a];
            for b in 0..n {
                let mut gv = 0.0;
                let mut tv = 0.0;
                for c in 0..n {
                    gv += gamma.get(b, a, c) * v[c];
                    tv += t.get(b, a, c) * v[c];
                }
                r -= gv * oj.dv[b] + tv * (oj.dv[b] + 2.0 * lower[b] * oj.omega / oj.a);
            }
            r
        })
        .collect())
}

/// `R_a = ∂_a σ`: the fiber term vanishes because σ lives on the base.
pub fn tavakol_residual(sigma: &ConformalFactor, m: &MetricModel, p: &TangentPoint) -> Result<Vec<f64>> {
    let sp = seed_all(p, (1, 0))?;
    let b = m.bindings(&sp.x);
    let s: Jet = sigma.sigma.eval(&b)?;
    let n = p.dim();
    Ok((0..n).map(|a| s.coeff(&unit(n, a))).collect())
}

/// `T = mean_i Ξ(x, ẋ_i) − Γ(x)` and the largest deviation of any sample
/// from the mean.
pub fn extract_t(lag: &FinslerLagrangian, m: &MetricModel, x: &[f64], fibers: &[Vec<f64>]) -> Result<(Tensor3, f64)> {
    if fibers.is_empty() {
        return Err(Error::Sampling("no fiber samples".into()));
    }
    let n = m.dim();
    let gamma = m.christoffel(x)?;
    let xis = fibers
        .iter()
        .map(|v| {
            let p = TangentPoint::new(x.to_vec(), v.clone())?;
            Ok(SprayJets::compute(lag, m, &p, XI_FIBER_ORDER)?.affine())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mean = Tensor3::zeros(n);
    for t in &xis {
        mean = mean.add(t);
    }
    let mean = mean.scaled(1.0 / xis.len() as f64);
    let score = xis.iter().fold(0.0f64, |s, t| s.max(t.max_abs_diff(&mean)));
    Ok((mean.sub(&gamma), score))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem1Summary {
    /// `T` used: `extracted` or `given`.
    pub tensor: String,
    pub max_residual: f64,
    /// `‖R‖∞ / max(1, |Ω|)`. The condition is linear in `Ω`, whose overall
    /// scale is arbitrary, so this is the quantity compared with `tol`.
    pub max_relative: f64,
    pub worst_x: Vec<f64>,
    pub worst_xdot: Vec<f64>,
    pub tol: f64,
    pub passed: bool,
}

/// Ω-condition residual over classified base points, with `T` either given or
/// extracted per base point.
pub fn theorem1_scan(
    lag: &FinslerLagrangian,
    m: &MetricModel,
    outcomes: &[BaseOutcome],
    given: Option<&dyn TensorField>,
    tol: f64,
) -> Result<Theorem1Summary> {
    let omega = omega_from_lagrangian(lag);
    let mut max_abs = 0.0f64;
    let mut worst = (0.0f64, Vec::new(), Vec::new());
    for o in outcomes {
        let t = match given {
            Some(t) => t.at(m, &o.sample.x)?,
            None => o.extracted_t(),
        };
        for p in o.sample.points() {
            let r = theorem1_residual_with(&omega, m, &t, &p)?;
            let mx = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let rel = mx / omega.value(m, &p)?.abs().max(1.0);
            max_abs = max_abs.max(mx);
            if rel > worst.0 || worst.1.is_empty() {
                worst = (rel, p.x.clone(), p.xdot.clone());
            }
        }
    }
    Ok(Theorem1Summary {
        tensor: if given.is_some() { "given" } else { "extracted" }.into(),
        max_residual: max_abs,
        max_relative: worst.0,
        worst_x: worst.1,
        worst_xdot: worst.2,
        tol,
        passed: worst.0 < tol,
    })
}
