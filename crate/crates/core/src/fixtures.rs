//! Canned metric / one-form / profile combinations with expected verdicts.

use crate::alpha_beta::{
    build_ab_lagrangian, profile_generalized_kropina, KropinaParams, OmegaProfile, StructuredTParams,
};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::finsler::{AdmissibleSampler, FinslerLagrangian, Verdict};
use crate::geometry::{MetricModel, Tensor3, TensorField};
use crate::jets::{Jet, Layout};

/// Index of the `v` coordinate in the light-cone charts below.
pub const V: usize = 1;

fn e(src: &str) -> Result<Expr> {
    Ok(src.parse()?)
}

fn forbid(component: &str, expr: &Expr, coord: &str) -> Result<()> {
    if expr.references(coord) {
        return Err(Error::ForbiddenDependence {
            component: component.into(),
            coordinate: coord.into(),
        });
    }
    Ok(())
}

fn light_cone(h: &Expr, w: &[Expr], transverse: &[Vec<Expr>]) -> Result<MetricModel> {
    let k = w.len();
    if transverse.len() != k || transverse.iter().any(|r| r.len() != k) {
        return Err(Error::Model(format!("transverse metric must be {k}×{k}")));
    }
    let mut coords = vec!["u".to_string(), "v".to_string()];
    coords.extend((1..=k).map(|i| format!("x{i}")));
    let n = k + 2;
    let mut lower = vec![Vec::new(); n];
    lower[0].push(Expr::Bin(
        crate::expr::BinOp::Mul,
        Expr::num(2.0).into(),
        h.clone().into(),
    ));
    lower[1] = vec![Expr::num(1.0), Expr::num(0.0)];
    for i in 0..k {
        let row = &mut lower[i + 2];
        row.push(w[i].clone());
        row.push(Expr::num(0.0));
        for j in 0..=i {
            row.push(transverse[i][j].clone());
        }
    }
    let mut beta = vec![Expr::num(0.0); n];
    beta[0] = Expr::num(1.0);
    MetricModel::from_lower(coords, lower)?.with_beta(beta)
}

/// `g = 2 du dv + 2H du² + 2 W_a du dx^a + h_ab dx^a dx^b` with `β = du`, in
/// coordinates `(u, v, x1, …)`; nothing may depend on `v`.
pub fn ccnv_metric(h: &Expr, w: &[Expr], transverse: &[Vec<Expr>], dim: usize) -> Result<MetricModel> {
    if dim < 3 || w.len() != dim - 2 {
        return Err(Error::Model(format!(
            "need dim ≥ 3 and {} W components",
            dim.saturating_sub(2)
        )));
    }
    forbid("H", h, "v")?;
    for (i, wi) in w.iter().enumerate() {
        forbid(&format!("W_{}", i + 1), wi, "v")?;
    }
    for (i, row) in transverse.iter().enumerate() {
        for (j, hij) in row.iter().enumerate() {
            forbid(&format!("h_{}{}", i + 1, j + 1), hij, "v")?;
        }
    }
    light_cone(h, w, transverse)
}

/// 4D Kundt metric with `β = du`; `H` may depend on `v`, `W_i` may not.
pub fn kundt_metric(h: &Expr, w1: &Expr, w2: &Expr, transverse: &[Vec<Expr>]) -> Result<MetricModel> {
    forbid("W_1", w1, "v")?;
    forbid("W_2", w2, "v")?;
    light_cone(h, &[w1.clone(), w2.clone()], transverse)
}

fn identity_transverse(k: usize) -> Vec<Vec<Expr>> {
    (0..k)
        .map(|i| (0..k).map(|j| Expr::num(if i == j { 1.0 } else { 0.0 })).collect())
        .collect()
}

/// A Kundt metric whose `H` is `Φ + v Φ̃ + σ₀ v²`.
#[derive(Debug, Clone)]
pub struct KundtCsi {
    pub metric: MetricModel,
    pub h: Expr,
    pub sigma0: f64,
    /// `σ₀ = 0`.
    pub vsi: bool,
}

pub fn kundt_csi(phi: &str, phi_tilde: &str, sigma0: f64) -> Result<KundtCsi> {
    let (phi, phi_tilde) = (e(phi)?, e(phi_tilde)?);
    forbid("Φ", &phi, "v")?;
    forbid("Φ̃", &phi_tilde, "v")?;
    let h = e(&format!("({phi}) + v*({phi_tilde}) + ({sigma0:?})*v^2"))?;
    let metric = kundt_metric(&h, &Expr::num(0.0), &Expr::num(0.0), &identity_transverse(2))?;
    Ok(KundtCsi {
        metric,
        h,
        sigma0,
        vsi: sigma0 == 0.0,
    })
}

/// `∂_v H` at `x`, by a jet in the `v` direction.
pub fn dv_of(h: &Expr, m: &MetricModel, x: &[f64]) -> Result<f64> {
    let l = Layout::cached(1, 1, 0, 0);
    let xs: Vec<Jet> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if i == V {
                Jet::variable(&l, 0, v)
            } else {
                Jet::constant(&l, v)
            }
        })
        .collect();
    let hv: Jet = h.eval(&m.bindings(&xs))?;
    Ok(hv.coeff(&[1]))
}

/// Structured `T` predicted for a Kundt geometry with a generalized
/// Kropina profile: `σ = n/(1−n) ∂_vH`, `ρ = −σ`, `λ = m σ/(n c)`.
#[derive(Debug, Clone)]
pub struct KundtT {
    pub h: Expr,
    pub params: KropinaParams,
}

impl KundtT {
    pub fn coefficients(&self, m: &MetricModel, x: &[f64]) -> Result<(f64, f64, f64)> {
        Ok(crate::alpha_beta::kundt_t_coefficients(
            &self.params,
            dv_of(&self.h, m, x)?,
        ))
    }
}

impl TensorField for KundtT {
    fn at(&self, m: &MetricModel, x: &[f64]) -> Result<Tensor3> {
        let (l, r, s) = self.coefficients(m, x)?;
        crate::alpha_beta::structured_t_at(m, x, l, r, s)
    }
}

#[derive(Debug, Clone)]
pub enum ExpectedT {
    Zero,
    Kundt(KundtT),
    /// Berwald, but T is whatever the Christoffel difference is.
    Unspecified,
}

/// A ready-to-run geometry.
#[derive(Debug, Clone)]
pub struct FixtureSpec {
    pub name: &'static str,
    pub family: &'static str,
    pub metric: MetricModel,
    pub lagrangian: FinslerLagrangian,
    pub kropina: Option<KropinaParams>,
    pub expected: Option<Verdict>,
    pub expected_t: ExpectedT,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl FixtureSpec {
    pub fn sampler(&self, seed: u64) -> AdmissibleSampler {
        AdmissibleSampler::new(self.metric.dim(), seed).with_box(self.lo.clone(), self.hi.clone())
    }

    pub fn profile(&self) -> Option<&OmegaProfile> {
        self.lagrangian.profile()
    }

    /// Hand-written structured coefficients, for comparison with [`KundtT`].
    pub fn structured_params(&self) -> Option<StructuredTParams> {
        match &self.expected_t {
            ExpectedT::Zero => Some(StructuredTParams::zero()),
            _ => None,
        }
    }
}

pub const KUNDT_SIGMA0: f64 = 0.3;

fn pp_wave() -> Result<MetricModel> {
    ccnv_metric(
        &e("x1^2 - x2^2")?,
        &[Expr::num(0.0), Expr::num(0.0)],
        &identity_transverse(2),
        4,
    )
}

fn unit_box(n: usize) -> (Vec<f64>, Vec<f64>) {
    (vec![-1.0; n], vec![1.0; n])
}

/// All canned fixtures.
pub fn canned_fixtures() -> Vec<FixtureSpec> {
    build_fixtures().expect("canned fixtures are well-formed")
}

pub fn fixture(name: &str) -> Option<FixtureSpec> {
    canned_fixtures().into_iter().find(|f| f.name == name)
}

fn build_fixtures() -> Result<Vec<FixtureSpec>> {
    let k211 = KropinaParams::new(2.0, 1.0, 1.0)?;
    let kropina = profile_generalized_kropina(k211)?;
    let mut out = Vec::new();

    let (lo, hi) = unit_box(4);
    for (name, profile) in [
        ("ccnv_randers", OmegaProfile::Randers),
        ("ccnv_exponential", OmegaProfile::Exponential),
        ("ccnv_kropina", kropina.clone()),
    ] {
        let m = pp_wave()?.with_name(name);
        out.push(FixtureSpec {
            name,
            family: "CCNV pp-wave, H = x1² − x2²",
            lagrangian: build_ab_lagrangian(&m, profile.clone())?,
            kropina: matches!(profile, OmegaProfile::GeneralizedKropina(_)).then_some(k211),
            metric: m,
            expected: Some(Verdict::Berwald),
            expected_t: ExpectedT::Zero,
            lo: lo.clone(),
            hi: hi.clone(),
        });
    }

    let w = ccnv_metric(
        &e("x1*x2 + u")?,
        &[e("u*x2")?, e("0.5*x1")?],
        &identity_transverse(2),
        4,
    )?;
    let w = w.with_name("ccnv_gyraton_kropina");
    out.push(FixtureSpec {
        name: "ccnv_gyraton_kropina",
        family: "CCNV with W ≠ 0",
        lagrangian: build_ab_lagrangian(&w, kropina.clone())?,
        kropina: Some(k211),
        metric: w,
        expected: Some(Verdict::Berwald),
        expected_t: ExpectedT::Zero,
        lo: lo.clone(),
        hi: hi.clone(),
    });

    for (name, sigma0, family) in [
        ("kundt_kropina", KUNDT_SIGMA0, "Kundt CSI, H = x1² + v(u + x2) + 0.3 v²"),
        ("kundt_vsi_kropina", 0.0, "Kundt VSI, H = x1² + v(u + x2)"),
    ] {
        let k = kundt_csi("x1^2", "u + x2", sigma0)?;
        let m = k.metric.with_name(name);
        out.push(FixtureSpec {
            name,
            family,
            lagrangian: build_ab_lagrangian(&m, kropina.clone())?,
            kropina: Some(k211),
            metric: m,
            expected: Some(Verdict::Berwald),
            expected_t: ExpectedT::Kundt(KundtT { h: k.h, params: k211 }),
            lo: lo.clone(),
            hi: hi.clone(),
        });
    }

    let (lo2, hi2) = unit_box(2);
    for (name, profile) in [
        ("flat_randers_nonparallel", OmegaProfile::Randers),
        ("flat_exponential_nonparallel", OmegaProfile::Exponential),
    ] {
        let m = MetricModel::euclidean(2).with_beta_str(&["0", "x1"])?.with_name(name);
        out.push(FixtureSpec {
            name,
            family: "flat plane, β = x1 dx2",
            lagrangian: build_ab_lagrangian(&m, profile)?,
            kropina: None,
            metric: m,
            expected: Some(Verdict::NotBerwald),
            expected_t: ExpectedT::Unspecified,
            lo: lo2.clone(),
            hi: hi2.clone(),
        });
    }

    let (lo3, hi3) = unit_box(3);
    let curved = MetricModel::diagonal(&["x1", "x2", "x3"], &["1 + x2^2", "exp(x1)", "2 + sin(x1*x3)"])?
        .with_name("curved_riemannian");
    out.push(FixtureSpec {
        name: "curved_riemannian",
        family: "Riemannian, L = A",
        lagrangian: FinslerLagrangian::riemannian(),
        kropina: None,
        metric: curved,
        expected: Some(Verdict::Berwald),
        expected_t: ExpectedT::Zero,
        lo: lo3.clone(),
        hi: hi3.clone(),
    });

    let conformal = MetricModel::euclidean(3).with_name("conformal_flat");
    out.push(FixtureSpec {
        name: "conformal_flat",
        family: "conformally flat, L = e^{2σ} A with σ = 0.3 x1 − 0.2 x2 x3",
        lagrangian: FinslerLagrangian::conformal(e("0.3*x1 - 0.2*x2*x3")?),
        kropina: None,
        metric: conformal,
        expected: Some(Verdict::Berwald),
        expected_t: ExpectedT::Unspecified,
        lo: lo3,
        hi: hi3,
    });

    let sphere = vec![
        vec![Expr::num(1.0), Expr::num(0.0)],
        vec![Expr::num(0.0), e("sin(x1)^2")?],
    ];
    let h = e(&format!("cos(x1) + v*(u + x2) + ({KUNDT_SIGMA0:?})*v^2"))?;
    let m = kundt_metric(&h, &Expr::num(0.0), &Expr::num(0.0), &sphere)?.with_name("kundt_sphere_kropina");
    out.push(FixtureSpec {
        name: "kundt_sphere_kropina",
        family: "Kundt with round-sphere transverse space (exploratory)",
        lagrangian: build_ab_lagrangian(&m, kropina)?,
        kropina: Some(k211),
        metric: m,
        expected: None,
        expected_t: ExpectedT::Kundt(KundtT { h, params: k211 }),
        lo: vec![-1.0, -1.0, 0.5, -1.0],
        hi: vec![1.0, 1.0, 2.5, 1.0],
    });
    Ok(out)
}

/// Parameters of every fixture, flattened (useful for model files).
pub fn fixture_names() -> Vec<&'static str> {
    canned_fixtures().iter().map(|f| f.name).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn flat_light_cone() {
        let m = ccnv_metric(
            &Expr::num(0.0),
            &[Expr::num(0.0), Expr::num(0.0)],
            &identity_transverse(2),
            4,
        )
        .unwrap();
        let (g, _) = m.metric_at(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(g[(0, 1)], 1.0);
        assert_eq!(g[(1, 0)], 1.0);
        assert_eq!(g[(0, 0)], 0.0);
        assert_eq!(g[(2, 2)], 1.0);
        assert_eq!(m.christoffel(&[0.1, 0.2, 0.3, 0.4]).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn pp_wave_christoffels() {
        let m = ccnv_metric(
            &e("x1^2").unwrap(),
            &[Expr::num(0.0), Expr::num(0.0)],
            &identity_transverse(2),
            4,
        )
        .unwrap();
        let gam = m.christoffel(&[0.0, 0.0, 1.0, 0.0]).unwrap();
        // Γ^v_{u x1} = ∂_{x1} H, Γ^{x1}_{uu} = −∂_{x1} H
        assert_relative_eq!(gam.get(V, 0, 2), 2.0, epsilon = 1e-14);
        assert_relative_eq!(gam.get(2, 0, 0), -2.0, epsilon = 1e-14);
        let mut nonzero = 0;
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    if gam.get(a, b, c) != 0.0 {
                        nonzero += 1;
                    }
                }
            }
        }
        assert_eq!(nonzero, 3);
        assert_eq!(m.nabla_beta(&[0.3, 0.5, 1.0, -0.2]).unwrap().amax(), 0.0);
    }

    #[test]
    fn v_dependence_rejected() {
        let err = ccnv_metric(
            &e("v*x1").unwrap(),
            &[Expr::num(0.0), Expr::num(0.0)],
            &identity_transverse(2),
            4,
        );
        assert!(matches!(err, Err(Error::ForbiddenDependence { .. })));
        let err = kundt_metric(
            &e("v").unwrap(),
            &e("v*u").unwrap(),
            &Expr::num(0.0),
            &identity_transverse(2),
        );
        assert!(matches!(err, Err(Error::ForbiddenDependence { .. })));
    }

    #[test]
    fn kundt_nabla_beta() {
        let k = kundt_csi("x1^2", "u + x2", 0.3).unwrap();
        assert!(!k.vsi);
        let x = [0.4, -0.3, 0.2, 0.7];
        let nb = k.metric.nabla_beta(&x).unwrap();
        let expect = 0.4 + 0.7 + 0.6 * -0.3;
        assert_relative_eq!(nb[(0, 0)], expect, epsilon = 1e-14);
        assert_relative_eq!(dv_of(&k.h, &k.metric, &x).unwrap(), expect, epsilon = 1e-14);
        for a in 0..4 {
            for b in 0..4 {
                if (a, b) != (0, 0) {
                    assert_eq!(nb[(a, b)], 0.0);
                }
            }
        }
        assert!(kundt_csi("x1^2", "u + x2", 0.0).unwrap().vsi);
    }

    #[test]
    fn fixture_inventory() {
        let all = canned_fixtures();
        assert!(all.len() >= 7);
        for f in &all {
            let s = f.sampler(1);
            let mid: Vec<f64> = s.lo.iter().zip(&s.hi).map(|(a, b)| 0.5 * (a + b)).collect();
            f.metric.metric_at(&mid).unwrap();
        }
        let kundt = fixture("kundt_kropina").unwrap();
        let ExpectedT::Kundt(kt) = &kundt.expected_t else {
            panic!()
        };
        let x = [0.1, 0.2, 0.3, 0.4];
        let (l, r, s) = kt.coefficients(&kundt.metric, &x).unwrap();
        let dv = 0.1 + 0.4 + 0.6 * 0.2;
        assert_relative_eq!(s, -2.0 * dv, epsilon = 1e-14);
        assert_relative_eq!(r, -s, epsilon = 1e-14);
        assert_relative_eq!(s / l, 2.0, epsilon = 1e-14);
    }
}
