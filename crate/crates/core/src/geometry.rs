//! Pseudo-Riemannian backbone: metric, inverse, Christoffel symbols and the
//! Levi-Civita derivative of the one-form.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Bindings, Expr};
use crate::jets::{seed, unit, Jet, Scalar, DEFAULT_EPS_DET};

/// Dense rank-3 array `t[a][b][c]`; for connection-like objects `a` is the
/// upper index and `(b, c)` the lower pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tensor3 {
    n: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(n: usize) -> Tensor3 {
        Tensor3 {
            n,
            data: vec![0.0; n * n * n],
        }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize, usize) -> f64) -> Tensor3 {
        let mut t = Tensor3::zeros(n);
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    t.set(a, b, c, f(a, b, c));
                }
            }
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.data[(a * self.n + b) * self.n + c]
    }

    #[inline]
    pub fn set(&mut self, a: usize, b: usize, c: usize, v: f64) {
        self.data[(a * self.n + b) * self.n + c] = v;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |self − other|` over all entries.
    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Largest violation of symmetry in the lower pair.
    pub fn lower_asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for a in 0..self.n {
            for b in 0..self.n {
                for c in 0..b {
                    m = m.max((self.get(a, b, c) - self.get(a, c, b)).abs());
                }
            }
        }
        m
    }

    pub fn sub(&self, other: &Tensor3) -> Tensor3 {
        Tensor3 {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add(&self, other: &Tensor3) -> Tensor3 {
        Tensor3 {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Tensor3 {
        Tensor3 {
            n: self.n,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Nested `[a][b][c]` form, used in reports.
    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.n)
            .map(|a| {
                (0..self.n)
                    .map(|b| (0..self.n).map(|c| self.get(a, b, c)).collect())
                    .collect()
            })
            .collect()
    }

    /// `t^a_bc v^b w^c`.
    pub fn contract2(&self, v: &[f64], w: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|a| {
                let mut s = 0.0;
                for b in 0..self.n {
                    for c in 0..self.n {
                        s += self.get(a, b, c) * v[b] * w[c];
                    }
                }
                s
            })
            .collect()
    }
}

/// Metric (and optional one-form) given by expressions in the base coordinates.
#[derive(Debug, Clone)]
pub struct MetricModel {
    pub name: Option<String>,
    coords: Vec<String>,
    metric: Vec<Vec<Expr>>,
    beta: Option<Vec<Expr>>,
    params: BTreeMap<String, f64>,
    eps_det: f64,
}

impl MetricModel {
    /// Build from the lower triangle (`g[a][b]` with `b <= a`); entries above
    /// the diagonal are ignored and mirrored, so the result is symmetric by
    /// construction.
    pub fn from_lower(coords: Vec<String>, lower: Vec<Vec<Expr>>) -> Result<MetricModel> {
        let n = coords.len();
        if n == 0 {
            return Err(Error::Model("no coordinates".into()));
        }
        if lower.len() != n || lower.iter().enumerate().any(|(a, row)| row.len() < a + 1) {
            return Err(Error::Model(format!("metric must have {n} rows with a lower triangle")));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &coords {
            if !seen.insert(c) {
                return Err(Error::Model(format!("duplicate coordinate `{c}`")));
            }
        }
        let metric = (0..n)
            .map(|a| {
                (0..n)
                    .map(|b| {
                        if b <= a {
                            lower[a][b].clone()
                        } else {
                            lower[b][a].clone()
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(MetricModel {
            name: None,
            coords,
            metric,
            beta: None,
            params: BTreeMap::new(),
            eps_det: DEFAULT_EPS_DET,
        })
    }

    /// Diagonal metric from expression strings.
    pub fn diagonal(coords: &[&str], diag: &[&str]) -> Result<MetricModel> {
        let n = coords.len();
        let mut lower = vec![Vec::new(); n];
        for a in 0..n {
            for b in 0..=a {
                lower[a].push(if a == b {
                    diag[a].parse::<Expr>()?
                } else {
                    Expr::num(0.0)
                });
            }
        }
        MetricModel::from_lower(coords.iter().map(|s| s.to_string()).collect(), lower)
    }

    /// Flat Euclidean metric in `n` dimensions with coordinates `x1..xn`.
    pub fn euclidean(n: usize) -> MetricModel {
        let names: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        MetricModel::diagonal(&refs, &vec!["1"; n]).expect("literal metric")
    }

    pub fn with_beta(mut self, beta: Vec<Expr>) -> Result<MetricModel> {
        if beta.len() != self.dim() {
            return Err(Error::Model(format!(
                "one-form has {} components, expected {}",
                beta.len(),
                self.dim()
            )));
        }
        self.beta = Some(beta);
        Ok(self)
    }

    pub fn with_beta_str(self, beta: &[&str]) -> Result<MetricModel> {
        let parsed = beta.iter().map(|s| s.parse::<Expr>()).collect::<Result<Vec<_>, _>>()?;
        self.with_beta(parsed)
    }

    pub fn with_params(mut self, params: BTreeMap<String, f64>) -> MetricModel {
        self.params = params;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> MetricModel {
        self.name = Some(name.into());
        self
    }

    pub fn with_eps_det(mut self, eps: f64) -> MetricModel {
        self.eps_det = eps;
        self
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[String] {
        &self.coords
    }

    pub fn coord_index(&self, name: &str) -> Option<usize> {
        self.coords.iter().position(|c| c == name)
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn eps_det(&self) -> f64 {
        self.eps_det
    }

    pub fn metric_exprs(&self) -> &[Vec<Expr>] {
        &self.metric
    }

    pub fn beta_exprs(&self) -> Option<&[Expr]> {
        self.beta.as_deref()
    }

    pub fn has_beta(&self) -> bool {
        self.beta.is_some()
    }

    /// Bindings of the coordinates to `x` plus all parameters as constants.
    pub fn bindings<S: Scalar>(&self, x: &[S]) -> Bindings<S> {
        let mut b = Bindings::new();
        b.bind_params(&self.params);
        for (name, v) in self.coords.iter().zip(x) {
            b.bind(name.clone(), v.clone());
        }
        b
    }

    pub fn metric_components<S: Scalar>(&self, x: &[S]) -> Result<Vec<Vec<S>>> {
        let b = self.bindings(x);
        self.metric_with(&b)
    }

    pub fn metric_with<S: Scalar>(&self, b: &Bindings<S>) -> Result<Vec<Vec<S>>> {
        let n = self.dim();
        let mut g = vec![vec![S::from_f64(0.0); n]; n];
        for a in 0..n {
            for c in 0..=a {
                let v = self.metric[a][c].eval(b)?;
                g[c][a] = v.clone();
                g[a][c] = v;
            }
        }
        Ok(g)
    }

    pub fn beta_components<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>> {
        let b = self.bindings(x);
        self.beta_with(&b)
    }

    pub fn beta_with<S: Scalar>(&self, b: &Bindings<S>) -> Result<Vec<S>> {
        let beta = self.beta.as_ref().ok_or(Error::MissingOneForm)?;
        beta.iter().map(|e| e.eval(b).map_err(Error::from)).collect()
    }

    /// `A = g_ab ẋ^a ẋ^b`.
    pub fn quadratic_form<S: Scalar>(g: &[Vec<S>], xdot: &[S]) -> S {
        let n = xdot.len();
        let mut acc = S::from_f64(0.0);
        for a in 0..n {
            let mut row = g[a][a].clone() * xdot[a].clone();
            for b in 0..a {
                row = row + (g[a][b].clone() * xdot[b].clone()) * S::from_f64(2.0);
            }
            acc = acc + row * xdot[a].clone();
        }
        acc
    }

    /// `B = β_a ẋ^a`.
    pub fn pairing<S: Scalar>(beta: &[S], xdot: &[S]) -> S {
        beta.iter()
            .zip(xdot)
            .fold(S::from_f64(0.0), |acc, (b, v)| acc + b.clone() * v.clone())
    }

    /// Metric and inverse at `x`. Fails when `|det g| <= eps_det` or when the
    /// computed inverse misses `g·g⁻¹ = I` by more than `1e-12` (relative to
    /// the size of `g`).
    pub fn metric_at(&self, x: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let n = self.dim();
        let g = self.metric_components(x)?;
        let g = DMatrix::from_fn(n, n, |a, b| g[a][b]);
        let det = g.determinant();
        if !(det.abs() > self.eps_det) {
            return Err(Error::Singular {
                det,
                threshold: self.eps_det,
            });
        }
        let inv = g.clone().try_inverse().ok_or(Error::Singular {
            det,
            threshold: self.eps_det,
        })?;
        let scale = g.amax().max(1.0) * inv.amax().max(1.0);
        let resid = (&g * &inv - DMatrix::identity(n, n)).amax();
        if resid > 1e-12 * scale {
            return Err(Error::Singular {
                det,
                threshold: self.eps_det,
            });
        }
        Ok((g, inv))
    }

    /// Partial derivatives `dg[c][a][b] = ∂_c g_ab` at `x`.
    pub fn metric_derivatives(&self, x: &[f64]) -> Result<Vec<Vec<Vec<f64>>>> {
        let n = self.dim();
        let dirs: Vec<usize> = (0..n).collect();
        let p = crate::jets::TangentPoint {
            x: x.to_vec(),
            xdot: vec![0.0; n],
        };
        let sp = seed(&p, &dirs, &[], (1, 0))?;
        let g: Vec<Vec<Jet>> = self.metric_components(&sp.x)?;
        let vars = sp.layout.vars();
        Ok((0..n)
            .map(|c| {
                let e = unit(vars, c);
                (0..n).map(|a| (0..n).map(|b| g[a][b].coeff(&e)).collect()).collect()
            })
            .collect())
    }

    /// Christoffel symbols `Γ^b_ac`, stored as `get(b, a, c)`.
    pub fn christoffel(&self, x: &[f64]) -> Result<Tensor3> {
        let (_, inv) = self.metric_at(x)?;
        let dg = self.metric_derivatives(x)?;
        Ok(christoffel_from(&inv, &dg))
    }

    /// `∇_a β_b = ∂_a β_b − Γ^c_ab β_c`, row index `a`.
    pub fn nabla_beta(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        if self.beta.is_none() {
            return Err(Error::MissingOneForm);
        }
        let n = self.dim();
        let gamma = self.christoffel(x)?;
        let dirs: Vec<usize> = (0..n).collect();
        let p = crate::jets::TangentPoint {
            x: x.to_vec(),
            xdot: vec![0.0; n],
        };
        let sp = seed(&p, &dirs, &[], (1, 0))?;
        let beta: Vec<Jet> = self.beta_components(&sp.x)?;
        let vars = sp.layout.vars();
        Ok(DMatrix::from_fn(n, n, |a, b| {
            let mut v = beta[b].coeff(&unit(vars, a));
            for c in 0..n {
                v -= gamma.get(c, a, b) * beta[c].value();
            }
            v
        }))
    }
}

/// `Γ^b_ac = ½ g^{bd}(∂_a g_dc + ∂_c g_da − ∂_d g_ac)`.
pub fn christoffel_from(inv: &DMatrix<f64>, dg: &[Vec<Vec<f64>>]) -> Tensor3 {
    let n = inv.nrows();
    let mut t = Tensor3::zeros(n);
    for a in 0..n {
        for c in 0..=a {
            for b in 0..n {
                let mut s = 0.0;
                for d in 0..n {
                    s += inv[(b, d)] * (dg[a][d][c] + dg[c][d][a] - dg[d][a][c]);
                }
                t.set(b, a, c, 0.5 * s);
                t.set(b, c, a, 0.5 * s);
            }
        }
    }
    t
}

/// A (1,2)-tensor field on the base, symmetric in its lower pair.
pub trait TensorField: Send + Sync {
    fn at(&self, m: &MetricModel, x: &[f64]) -> Result<Tensor3>;
}

/// The zero tensor.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroT;

impl TensorField for ZeroT {
    fn at(&self, m: &MetricModel, _x: &[f64]) -> Result<Tensor3> {
        Ok(Tensor3::zeros(m.dim()))
    }
}

/// The same components at every base point.
#[derive(Debug, Clone)]
pub struct ConstantT(pub Tensor3);

impl TensorField for ConstantT {
    fn at(&self, _m: &MetricModel, _x: &[f64]) -> Result<Tensor3> {
        Ok(self.0.clone())
    }
}

impl<F> TensorField for F
where
    F: Fn(&MetricModel, &[f64]) -> Result<Tensor3> + Send + Sync,
{
    fn at(&self, m: &MetricModel, x: &[f64]) -> Result<Tensor3> {
        self(m, x)
    }
}
