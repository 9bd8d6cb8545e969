//! Finsler pipeline: Lagrangian, L-metric, Cartan nonlinear connection,
//! geodesic spray, affine coefficients and the Berwald classifier.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::alpha_beta::OmegaProfile;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{MetricModel, Tensor3};
use crate::jets::{jet_linear_solve, seed, seed_all, unit, Jet, Layout, Scalar, TangentPoint, DEFAULT_EPS_DET};

/// Fiber order of the jet pass behind the affine coefficients.
pub const XI_FIBER_ORDER: u8 = 4;
/// Fiber order needed for the third fiber derivative of the spray.
pub const THIRD_FIBER_ORDER: u8 = 5;

/// Admissibility thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    pub eps_a: f64,
    pub eps_b: f64,
    pub eps_det: f64,
    /// Bound on the profile's conditioning estimate (see
    /// [`OmegaProfile::amplification`]). Jets of `√A`, `e^{-B²/A}` or `B^{-2n}`
    /// lose roughly `κ^4` in relative precision at fiber order four.
    pub kappa_max: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            eps_a: 1e-6,
            eps_b: 1e-6,
            eps_det: DEFAULT_EPS_DET,
            kappa_max: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LagrangianKind {
    /// `L = A`.
    Riemannian,
    /// `L = Ω(B²/A) A`.
    AlphaBeta(OmegaProfile),
    /// `L = e^{2σ(x)} A`.
    Conformal(Expr),
    /// Free expression in the coordinates, `dot_<coord>`, `A` and `B`.
    Free(Expr),
}

/// A Finsler Lagrangian on top of a [`MetricModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct FinslerLagrangian {
    pub kind: LagrangianKind,
}

impl FinslerLagrangian {
    pub fn riemannian() -> Self {
        FinslerLagrangian {
            kind: LagrangianKind::Riemannian,
        }
    }

    pub fn conformal(sigma: Expr) -> Self {
        FinslerLagrangian {
            kind: LagrangianKind::Conformal(sigma),
        }
    }

    /// Free `L(x, ẋ)`; fiber coordinates are spelled `dot_<coord>`.
    pub fn free(expr: Expr) -> Self {
        FinslerLagrangian {
            kind: LagrangianKind::Free(expr),
        }
    }

    /// Short provenance tag, e.g. `alpha-beta:randers`.
    pub fn tag(&self) -> String {
        match &self.kind {
            LagrangianKind::Riemannian => "riemannian".into(),
            LagrangianKind::AlphaBeta(p) => format!("alpha-beta:{}", p.name()),
            LagrangianKind::Conformal(_) => "conformal".into(),
            LagrangianKind::Free(_) => "free".into(),
        }
    }

    pub fn profile(&self) -> Option<&OmegaProfile> {
        match &self.kind {
            LagrangianKind::AlphaBeta(p) => Some(p),
            _ => None,
        }
    }

    /// Evaluate `L` over any scalar ring.
    pub fn eval<S: Scalar>(&self, m: &MetricModel, x: &[S], xdot: &[S]) -> Result<S> {
        let mut b = m.bindings(x);
        let g = m.metric_with(&b)?;
        let a = MetricModel::quadratic_form(&g, xdot);
        match &self.kind {
            LagrangianKind::Riemannian => Ok(a),
            LagrangianKind::AlphaBeta(profile) => {
                let beta = m.beta_with(&b)?;
                let bb = MetricModel::pairing(&beta, xdot);
                profile.lagrangian(&a, &bb)
            }
            LagrangianKind::Conformal(sigma) => {
                let sv = sigma.eval(&b)?;
                Ok((sv * S::from_f64(2.0)).exp() * a)
            }
            LagrangianKind::Free(expr) => {
                for (name, v) in m.coords().iter().zip(xdot) {
                    b.bind(format!("dot_{name}"), v.clone());
                }
                if m.has_beta() {
                    let beta = m.beta_with(&b)?;
                    b.bind("B", MetricModel::pairing(&beta, xdot));
                }
                b.bind("A", a);
                Ok(expr.eval(&b)?)
            }
        }
    }

    pub fn value(&self, m: &MetricModel, p: &TangentPoint) -> Result<f64> {
        self.eval(m, &p.x, &p.xdot)
    }

    /// Pointwise admissibility, excluding the L-metric determinant (see
    /// [`l_metric`]). `Err` carries the reason.
    pub fn check_admissible(
        &self,
        m: &MetricModel,
        p: &TangentPoint,
        th: &Thresholds,
    ) -> std::result::Result<(), String> {
        let g = m.metric_components(&p.x).map_err(|e| e.to_string())?;
        let a = MetricModel::quadratic_form(&g, &p.xdot);
        if !(a.abs() > th.eps_a) {
            return Err(format!("|A| = {:e} not above ε_A", a.abs()));
        }
        let mut b = None;
        if m.has_beta() {
            let beta = m.beta_components(&p.x).map_err(|e| e.to_string())?;
            let bv = MetricModel::pairing(&beta, &p.xdot);
            if !(bv.abs() > th.eps_b) {
                return Err(format!("|B| = {:e} not above ε_B", bv.abs()));
            }
            b = Some(bv);
        }
        if let LagrangianKind::AlphaBeta(profile) = &self.kind {
            let bv = b.ok_or_else(|| Error::MissingOneForm.to_string())?;
            profile.admissible(a, bv, th)?;
            let v2: f64 = p.xdot.iter().map(|v| v * v).sum();
            let g_norm = g.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
            let beta = m.beta_components(&p.x).map_err(|e| e.to_string())?;
            let b_norm = beta.iter().map(|v| v * v).sum::<f64>().sqrt();
            let kappa = profile.amplification(a, bv, g_norm * v2, b_norm * v2.sqrt());
            if !(kappa <= th.kappa_max) {
                return Err(format!("conditioning estimate κ = {kappa:.3e} above κ_max"));
            }
        }
        match self.value(m, p) {
            Ok(l) if l.is_finite() => Ok(()),
            Ok(l) => Err(format!("L = {l}")),
            Err(e) => Err(e.to_string()),
        }
    }
}

/// `g^L_ab = ½ ∂̇_a ∂̇_b L`.
pub fn l_metric(lag: &FinslerLagrangian, m: &MetricModel, p: &TangentPoint) -> Result<DMatrix<f64>> {
    let n = p.dim();
    let dirs: Vec<usize> = (0..n).collect();
    let sp = seed(p, &[], &dirs, (0, 2))?;
    let l = lag.eval(m, &sp.x, &sp.xdot)?;
    Ok(DMatrix::from_fn(n, n, |a, b| {
        let mut e = vec![0u8; n];
        e[a] += 1;
        e[b] += 1;
        0.5 * l.derivative(&e)
    }))
}

/// Fiber jets of the L-metric and spray at one tangent point.
#[derive(Debug, Clone)]
pub struct SprayJets {
    pub point: TangentPoint,
    /// Full jet of `L` (base order 1, fiber order `fiber_order`).
    pub l: Jet,
    /// `g^L_ab` as fiber jets of order `fiber_order − 2`.
    pub g: Vec<Vec<Jet>>,
    /// `G^a` as fiber jets of order `fiber_order − 2`.
    pub spray: Vec<Jet>,
}

impl SprayJets {
    pub fn compute(lag: &FinslerLagrangian, m: &MetricModel, p: &TangentPoint, fiber_order: u8) -> Result<SprayJets> {
        SprayJets::compute_with(lag, m, p, fiber_order, m.eps_det())
    }

    pub fn compute_with(
        lag: &FinslerLagrangian,
        m: &MetricModel,
        p: &TangentPoint,
        fiber_order: u8,
        eps_det: f64,
    ) -> Result<SprayJets> {
        assert!(fiber_order >= 3, "the spray pipeline needs fiber order ≥ 3");
        let n = p.dim();
        let sp = seed_all(p, (1, fiber_order))?;
        let l = lag.eval(m, &sp.x, &sp.xdot)?;
        let target = Layout::fiber_only(n, fiber_order - 2);
        let vars = 2 * n;
        let fib = |a: usize| n + a;

        let mut g: Vec<Vec<Jet>> = vec![Vec::with_capacity(n); n];
        for a in 0..n {
            for b in 0..n {
                if b < a {
                    let v: Jet = g[b][a].clone();
                    g[a].push(v);
                    continue;
                }
                let mut alpha = vec![0u8; vars];
                alpha[fib(a)] += 1;
                alpha[fib(b)] += 1;
                g[a].push(l.derivative_jet(&alpha, &target) * 0.5);
            }
        }
        let xdot: Vec<Jet> = (0..n).map(|i| Jet::variable(&target, i, p.xdot[i])).collect();
        let mut y = Vec::with_capacity(n);
        for q in 0..n {
            let mut acc = -l.derivative_jet(&unit(vars, q), &target);
            for (mi, v) in xdot.iter().enumerate() {
                let mut alpha = unit(vars, mi);
                alpha[fib(q)] += 1;
                acc = acc + v * &l.derivative_jet(&alpha, &target);
            }
            y.push(acc);
        }
        let z = jet_linear_solve(&g, &y, eps_det)?;
        let spray = z.into_iter().map(|za| za * 0.25).collect();
        Ok(SprayJets {
            point: p.clone(),
            l,
            g,
            spray,
        })
    }

    pub fn dim(&self) -> usize {
        self.point.dim()
    }

    fn fiber_derivative(j: &Jet, dirs: &[usize]) -> f64 {
        let mut e = vec![0u8; j.layout().vars()];
        for &d in dirs {
            e[d] += 1;
        }
        j.derivative(&e)
    }

    pub fn l_metric(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |a, b| self.g[a][b].value())
    }

    pub fn spray_value(&self) -> Vec<f64> {
        self.spray.iter().map(|j| j.value()).collect()
    }

    /// `N^a_b = ∂̇_b G^a`.
    pub fn connection(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |a, b| Self::fiber_derivative(&self.spray[a], &[b]))
    }

    /// `Ξ^a_bc = ∂̇_b ∂̇_c G^a`.
    pub fn affine(&self) -> Tensor3 {
        assert!(
            self.spray[0].layout().fiber_order() >= 2,
            "affine coefficients need fiber order ≥ 4"
        );
        Tensor3::from_fn(self.dim(), |a, b, c| Self::fiber_derivative(&self.spray[a], &[b, c]))
    }

    /// `max |∂̇_b ∂̇_c ∂̇_d G^a|`; vanishes exactly for Berwald geometries.
    pub fn third_derivative_norm(&self) -> f64 {
        assert!(
            self.spray[0].layout().fiber_order() >= 3,
            "third derivative needs fiber order ≥ 5"
        );
        let n = self.dim();
        let mut m: f64 = 0.0;
        for a in 0..n {
            for b in 0..n {
                for c in b..n {
                    for d in c..n {
                        m = m.max(Self::fiber_derivative(&self.spray[a], &[b, c, d]).abs());
                    }
                }
            }
        }
        m
    }

    /// Residuals of the identities satisfied by the Cartan connection,
    /// with `N` supplied by the caller (so a corrupted connection can be
    /// checked too).
    pub fn identity_residuals_with(&self, nconn: &DMatrix<f64>) -> IdentityResiduals {
        let n = self.dim();
        let vars = 2 * n;
        let xd = &self.point.xdot;
        let dl_x = |a: usize| self.l.derivative(&unit(vars, a));
        let dl_v = |a: usize| self.l.derivative(&unit(vars, n + a));

        let mut delta_l = Vec::with_capacity(n);
        let mut delta_scale: f64 = 1.0;
        for a in 0..n {
            let mut corr = 0.0;
            for b in 0..n {
                corr += nconn[(b, a)] * dl_v(b);
            }
            delta_scale = delta_scale.max(dl_x(a).abs()).max(corr.abs());
            delta_l.push(dl_x(a) - corr);
        }

        // g^L derivatives: ∂_c g^L_ab and ∂̇_d g^L_ab from the full L jet
        let gl = |a: usize, b: usize, extra: usize| {
            let mut e = vec![0u8; vars];
            e[n + a] += 1;
            e[n + b] += 1;
            e[extra] += 1;
            0.5 * self.l.derivative(&e)
        };
        let gv = self.l_metric();
        let mut compat = DMatrix::zeros(n, n);
        let mut compat_scale: f64 = 1.0;
        for a in 0..n {
            for b in 0..n {
                let mut hor = 0.0;
                for c in 0..n {
                    let mut dc = gl(a, b, c);
                    for d in 0..n {
                        dc -= nconn[(d, c)] * gl(a, b, n + d);
                    }
                    hor += xd[c] * dc;
                }
                let mut rot = 0.0;
                for c in 0..n {
                    rot += nconn[(c, a)] * gv[(c, b)] + nconn[(c, b)] * gv[(c, a)];
                }
                compat_scale = compat_scale.max(hor.abs()).max(rot.abs());
                compat[(a, b)] = hor - rot;
            }
        }

        let torsion = if self.spray[0].layout().fiber_order() >= 2 {
            let xi = self.affine();
            xi.lower_asymmetry()
        } else {
            0.0
        };
        let delta_max = delta_l.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        IdentityResiduals {
            delta_l: delta_max,
            compat: compat.amax(),
            torsion,
            delta_l_relative: delta_max / delta_scale,
            compat_relative: compat.amax() / compat_scale,
        }
    }

    pub fn identity_residuals(&self) -> IdentityResiduals {
        self.identity_residuals_with(&self.connection())
    }
}

/// Maxima of the identity residuals at one tangent point. The `_relative`
/// fields divide by the largest term being cancelled (at least 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct IdentityResiduals {
    pub delta_l: f64,
    pub compat: f64,
    pub torsion: f64,
    pub delta_l_relative: f64,
    pub compat_relative: f64,
}

impl IdentityResiduals {
    pub fn max(&self) -> f64 {
        self.delta_l.max(self.compat).max(self.torsion)
    }

    pub fn max_relative(&self) -> f64 {
        self.delta_l_relative.max(self.compat_relative).max(self.torsion)
    }

    pub fn merge(&self, o: &IdentityResiduals) -> IdentityResiduals {
        IdentityResiduals {
            delta_l: self.delta_l.max(o.delta_l),
            compat: self.compat.max(o.compat),
            torsion: self.torsion.max(o.torsion),
            delta_l_relative: self.delta_l_relative.max(o.delta_l_relative),
            compat_relative: self.compat_relative.max(o.compat_relative),
        }
    }
}

pub fn nonlinear_connection(lag: &FinslerLagrangian, m: &MetricModel, p: &TangentPoint) -> Result<DMatrix<f64>> {
    Ok(SprayJets::compute(lag, m, p, 3)?.connection())
}

pub fn geodesic_spray(lag: &FinslerLagrangian, m: &MetricModel, p: &TangentPoint) -> Result<Vec<f64>> {
    Ok(SprayJets::compute(lag, m, p, 3)?.spray_value())
}

pub fn affine_coefficients(lag: &FinslerLagrangian, m: &MetricModel, x: &[f64], xdot: &[f64]) -> Result<Tensor3> {
    let p = TangentPoint::new(x.to_vec(), xdot.to_vec())?;
    Ok(SprayJets::compute(lag, m, &p, XI_FIBER_ORDER)?.affine())
}

pub fn identity_residuals(lag: &FinslerLagrangian, m: &MetricModel, p: &TangentPoint) -> Result<IdentityResiduals> {
    Ok(SprayJets::compute(lag, m, p, 3)?.identity_residuals())
}

/// Rejection sampler over a coordinate box and fiber shells.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissibleSampler {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub shells: Vec<f64>,
    pub base_points: usize,
    pub fiber_samples: usize,
    pub seed: u64,
    pub thresholds: Thresholds,
    /// Fiber proposals allowed per base point, as a multiple of `fiber_samples`.
    pub proposal_factor: usize,
}

impl AdmissibleSampler {
    /// Box `[-1, 1]^n`, shells `{1, 2}`, 16 base points × 8 fiber samples.
    pub fn new(n: usize, seed: u64) -> Self {
        AdmissibleSampler {
            lo: vec![-1.0; n],
            hi: vec![1.0; n],
            shells: vec![1.0, 2.0],
            base_points: 16,
            fiber_samples: 8,
            seed,
            thresholds: Thresholds::default(),
            proposal_factor: 16,
        }
    }

    pub fn with_counts(mut self, base_points: usize, fiber_samples: usize) -> Self {
        self.base_points = base_points;
        self.fiber_samples = fiber_samples;
        self
    }

    pub fn with_box(mut self, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        self.lo = lo;
        self.hi = hi;
        self
    }

    pub fn with_shells(mut self, shells: Vec<f64>) -> Self {
        self.shells = shells;
        self
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.lo.len() != n || self.hi.len() != n {
            return Err(Error::Model(format!("sampling box must have {n} ranges")));
        }
        if self.lo.iter().zip(&self.hi).any(|(l, h)| !(l <= h)) {
            return Err(Error::Model("sampling box has an empty range".into()));
        }
        if self.shells.is_empty() || self.shells.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Model("fiber shells must be positive".into()));
        }
        if self.fiber_samples < 2 || self.base_points < 1 {
            return Err(Error::Model("need at least 2 fiber samples and 1 base point".into()));
        }
        Ok(())
    }

    fn rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        rng
    }

    /// Draw the samples of base point `index`. Only depends on the seed and
    /// the index, so parallel sampling is reproducible.
    pub fn sample_base(&self, lag: &FinslerLagrangian, m: &MetricModel, index: usize) -> BaseSample {
        let n = m.dim();
        let mut rng = self.rng(index);
        let budget = self.fiber_samples * self.proposal_factor;
        let mut proposed = 0;
        let mut x = Vec::new();
        let mut base_ok = false;
        while proposed < budget {
            proposed += 1;
            x = (0..n).map(|i| rng.gen_range(self.lo[i]..=self.hi[i])).collect();
            if m.metric_at(&x).is_ok() {
                base_ok = true;
                break;
            }
        }
        let mut fibers = Vec::with_capacity(self.fiber_samples);
        while base_ok && fibers.len() < self.fiber_samples && proposed < budget {
            proposed += 1;
            let dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            if norm < 1e-3 {
                continue;
            }
            let r = self.shells[fibers.len() % self.shells.len()];
            let xdot: Vec<f64> = dir.iter().map(|v| sign * r * v / norm).collect();
            let p = TangentPoint { x: x.clone(), xdot };
            if self.admissible(lag, m, &p).is_ok() {
                fibers.push(p.xdot);
            }
        }
        BaseSample {
            index,
            x,
            fibers,
            proposed,
        }
    }

    /// Full admissibility: pointwise predicate plus a nondegenerate L-metric.
    pub fn admissible(
        &self,
        lag: &FinslerLagrangian,
        m: &MetricModel,
        p: &TangentPoint,
    ) -> std::result::Result<(), String> {
        lag.check_admissible(m, p, &self.thresholds)?;
        let gl = l_metric(lag, m, p).map_err(|e| e.to_string())?;
        let det = gl.determinant();
        if !(det.abs() > self.thresholds.eps_det) || !det.is_finite() {
            return Err(format!("|det g^L| = {:e} not above ε_det", det.abs()));
        }
        Ok(())
    }

    pub fn sample(&self, lag: &FinslerLagrangian, m: &MetricModel) -> Result<SampleSet> {
        self.validate(m.dim())?;
        let bases: Vec<BaseSample> = (0..self.base_points)
            .into_par_iter()
            .map(|i| self.sample_base(lag, m, i))
            .collect();
        Ok(SampleSet {
            bases,
            fiber_target: self.fiber_samples,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaseSample {
    pub index: usize,
    pub x: Vec<f64>,
    pub fibers: Vec<Vec<f64>>,
    pub proposed: usize,
}

impl BaseSample {
    pub fn points(&self) -> impl Iterator<Item = TangentPoint> + '_ {
        self.fibers.iter().map(|v| TangentPoint {
            x: self.x.clone(),
            xdot: v.clone(),
        })
    }

    pub fn usable(&self) -> bool {
        self.fibers.len() >= 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSet {
    pub bases: Vec<BaseSample>,
    pub fiber_target: usize,
}

impl SampleSet {
    pub fn proposed(&self) -> usize {
        self.bases.iter().map(|b| b.proposed).sum()
    }

    pub fn accepted(&self) -> usize {
        self.bases.iter().map(|b| b.fibers.len()).sum()
    }

    pub fn acceptance_rate(&self) -> f64 {
        let p = self.proposed();
        if p == 0 {
            0.0
        } else {
            self.accepted() as f64 / p as f64
        }
    }

    pub fn usable_bases(&self) -> impl Iterator<Item = &BaseSample> {
        self.bases.iter().filter(|b| b.usable())
    }

    /// Why the sample set cannot support a verdict, if it cannot.
    pub fn starvation(&self, min_bases: usize) -> Option<String> {
        let rate = self.acceptance_rate();
        if rate < 0.5 {
            return Some(format!("only {:.1}% of proposed samples were admissible", 100.0 * rate));
        }
        let usable = self.usable_bases().count();
        if usable < min_bases {
            return Some(format!(
                "{usable} base points with ≥ 2 admissible fibers, need {min_bases}"
            ));
        }
        None
    }

    pub fn metadata(&self, seed: u64) -> SamplingMeta {
        SamplingMeta {
            seed,
            base_points: self.bases.len(),
            fiber_samples: self.fiber_target,
            proposed: self.proposed(),
            accepted: self.accepted(),
            acceptance_rate: self.acceptance_rate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplingMeta {
    pub seed: u64,
    pub base_points: usize,
    pub fiber_samples: usize,
    pub proposed: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Berwald,
    NotBerwald,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Berwald => "Berwald",
            Verdict::NotBerwald => "not-Berwald",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

/// Classifier settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifyOptions {
    /// Threshold on the Ξ-spread.
    pub tol: f64,
    /// Threshold on the identity residuals; `None` skips them.
    pub identity_tol: Option<f64>,
    pub third_derivative: bool,
    /// Base points whose Ξ and T tables go into the report.
    pub probes: usize,
    pub min_bases: usize,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            tol: 1e-7,
            identity_tol: Some(1e-9),
            third_derivative: false,
            probes: 4,
            min_bases: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Probe {
    pub x: Vec<f64>,
    pub spread: f64,
    pub xi: Vec<Vec<Vec<f64>>>,
    pub t: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub x: Vec<f64>,
    pub xdot_i: Vec<f64>,
    pub xdot_j: Vec<f64>,
    pub spread: f64,
}

/// Per-base-point outcome, kept for downstream checks.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseOutcome {
    pub sample: BaseSample,
    pub gamma: Tensor3,
    pub xi: Vec<Tensor3>,
    pub xi_mean: Tensor3,
    pub spread: f64,
    pub spread_pair: (usize, usize),
    pub identities: IdentityResiduals,
    pub third: Option<f64>,
}

impl BaseOutcome {
    /// `T = mean Ξ − Γ`.
    pub fn extracted_t(&self) -> Tensor3 {
        self.xi_mean.sub(&self.gamma)
    }

    /// Largest deviation of any sample's Ξ from the mean.
    pub fn consistency(&self) -> f64 {
        self.xi.iter().fold(0.0, |m, x| m.max(x.max_abs_diff(&self.xi_mean)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BerwaldReport {
    pub verdict: Verdict,
    pub lagrangian: String,
    pub tol: f64,
    pub max_spread: f64,
    pub max_t: f64,
    pub max_third_derivative: Option<f64>,
    pub identities: Option<IdentityResiduals>,
    pub witness: Option<Witness>,
    pub probes: Vec<Probe>,
    pub sampling: SamplingMeta,
    pub note: Option<String>,
    #[serde(skip)]
    pub outcomes: Vec<BaseOutcome>,
}

impl BerwaldReport {
    pub fn is_berwald(&self) -> bool {
        self.verdict == Verdict::Berwald
    }
}

fn evaluate_base(
    lag: &FinslerLagrangian,
    m: &MetricModel,
    sample: &BaseSample,
    opts: &ClassifyOptions,
    eps_det: f64,
) -> Result<BaseOutcome> {
    let order = if opts.third_derivative {
        THIRD_FIBER_ORDER
    } else {
        XI_FIBER_ORDER
    };
    let gamma = m.christoffel(&sample.x)?;
    let mut xi = Vec::with_capacity(sample.fibers.len());
    let mut ids = IdentityResiduals::default();
    let mut third: Option<f64> = None;
    for p in sample.points() {
        let sj = SprayJets::compute_with(lag, m, &p, order, eps_det)?;
        xi.push(sj.affine());
        if opts.identity_tol.is_some() {
            ids = ids.merge(&sj.identity_residuals());
        }
        if opts.third_derivative {
            let t = sj.third_derivative_norm();
            third = Some(third.map_or(t, |m: f64| m.max(t)));
        }
    }
    let k = xi.len() as f64;
    let n = m.dim();
    let mut mean = Tensor3::zeros(n);
    for t in &xi {
        mean = mean.add(t);
    }
    let xi_mean = mean.scaled(1.0 / k);
    let mut spread = 0.0;
    let mut pair = (0, 0);
    for i in 0..xi.len() {
        for j in 0..i {
            let d = xi[i].max_abs_diff(&xi[j]);
            if d > spread {
                spread = d;
                pair = (j, i);
            }
        }
    }
    Ok(BaseOutcome {
        sample: sample.clone(),
        gamma,
        xi,
        xi_mean,
        spread,
        spread_pair: pair,
        identities: ids,
        third,
    })
}

/// Evaluate the per-base-point classification data over a sample set.
pub fn evaluate_samples(
    lag: &FinslerLagrangian,
    m: &MetricModel,
    samples: &SampleSet,
    opts: &ClassifyOptions,
    eps_det: f64,
) -> Result<Vec<BaseOutcome>> {
    let usable: Vec<&BaseSample> = samples.usable_bases().collect();
    usable
        .par_iter()
        .map(|s| evaluate_base(lag, m, s, opts, eps_det))
        .collect()
}

/// Classify on a pre-drawn sample set.
pub fn classify_samples(
    lag: &FinslerLagrangian,
    m: &MetricModel,
    samples: &SampleSet,
    seed: u64,
    eps_det: f64,
    opts: &ClassifyOptions,
) -> Result<BerwaldReport> {
    let sampling = samples.metadata(seed);
    let mut report = BerwaldReport {
        verdict: Verdict::Inconclusive,
        lagrangian: lag.tag(),
        tol: opts.tol,
        max_spread: 0.0,
        max_t: 0.0,
        max_third_derivative: None,
        identities: None,
        witness: None,
        probes: Vec::new(),
        sampling,
        note: None,
        outcomes: Vec::new(),
    };
    if let Some(why) = samples.starvation(opts.min_bases) {
        log::warn!("sampling starved: {why}");
        report.note = Some(why);
        return Ok(report);
    }
    let outcomes = evaluate_samples(lag, m, samples, opts, eps_det)?;

    let mut worst: Option<&BaseOutcome> = None;
    let mut ids = IdentityResiduals::default();
    for o in &outcomes {
        if worst.is_none_or(|w| o.spread > w.spread) {
            worst = Some(o);
        }
        ids = ids.merge(&o.identities);
        report.max_t = report.max_t.max(o.extracted_t().max_abs());
        if let Some(t) = o.third {
            report.max_third_derivative = Some(report.max_third_derivative.map_or(t, |m: f64| m.max(t)));
        }
    }
    let worst = worst.expect("starvation check guarantees base points");
    report.max_spread = worst.spread;
    report.probes = outcomes
        .iter()
        .take(opts.probes)
        .map(|o| Probe {
            x: o.sample.x.clone(),
            spread: o.spread,
            xi: o.xi_mean.to_nested(),
            t: o.extracted_t().to_nested(),
        })
        .collect();

    let identity_failed = match opts.identity_tol {
        Some(tol) => {
            report.identities = Some(ids);
            ids.max_relative() >= tol
        }
        None => false,
    };
    report.verdict = if identity_failed {
        report.note = Some(format!(
            "connection identities violated (max relative residual {:e})",
            ids.max_relative()
        ));
        Verdict::Inconclusive
    } else if worst.spread < opts.tol {
        Verdict::Berwald
    } else {
        Verdict::NotBerwald
    };
    if report.verdict == Verdict::NotBerwald {
        let (i, j) = worst.spread_pair;
        report.witness = Some(Witness {
            x: worst.sample.x.clone(),
            xdot_i: worst.sample.fibers[i].clone(),
            xdot_j: worst.sample.fibers[j].clone(),
            spread: worst.spread,
        });
    }
    report.outcomes = outcomes;
    Ok(report)
}

/// Sample, then decide Berwald-ness from the spread of `Ξ` across fibers.
pub fn classify_berwald(
    lag: &FinslerLagrangian,
    m: &MetricModel,
    sampler: &AdmissibleSampler,
    opts: &ClassifyOptions,
) -> Result<BerwaldReport> {
    let samples = sampler.sample(lag, m)?;
    classify_samples(lag, m, &samples, sampler.seed, sampler.thresholds.eps_det, opts)
}
