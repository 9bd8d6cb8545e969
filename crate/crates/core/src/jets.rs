//! Truncated multivariate Taylor ("jet") arithmetic.
//!
//! A [`Jet`] holds normalized Taylor coefficients `c[α] = ∂^α f / α!` over a
//! [`Layout`] of monomials. Variables come in two groups: base directions
//! (`x`, total degree capped by `base_order`) and fiber directions (`ẋ`,
//! total degree capped by `fiber_order`). Products that leave either cap are
//! truncated, so the layout is a quotient of the polynomial ring and all ring
//! operations stay exact up to the caps.
//!
//! Jets built on a zero-variable layout act as plain constants and broadcast
//! against any other layout.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use std::sync::LazyLock;

use crate::error::{Error, Result};

/// Highest supported total degree in base directions.
pub const MAX_BASE_ORDER: u8 = 1;
/// Highest supported total degree in fiber directions.
///
/// The affine coefficients need four fiber derivatives of `L` (two for the
/// L-metric, two more on the spray); the optional third-derivative probe of
/// the spray needs a fifth.
pub const MAX_FIBER_ORDER: u8 = 5;

/// Default threshold on `|det|` below which a value matrix counts as singular.
pub const DEFAULT_EPS_DET: f64 = 1e-10;

/// Scalar ring used by expression evaluation and the geometry pipeline.
///
/// Implemented for `f64` (plain values) and [`Jet`] (values carrying exact
/// Taylor coefficients).
pub trait Scalar:
    Clone
    + fmt::Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn value(&self) -> f64;
    /// True when every non-constant coefficient vanishes.
    fn is_constant(&self) -> bool;
    /// Apply a univariate function given its Taylor coefficients at `self.value()`.
    fn compose(&self, taylor: &[f64]) -> Self;
    /// Highest total degree that can carry a nonzero coefficient.
    fn degree(&self) -> usize;

    fn powi(&self, n: i32) -> Self;

    fn recip(&self) -> Self {
        let a = self.value();
        self.compose(&power_series(a, -1.0, 1.0 / a, self.degree()))
    }

    fn exp(&self) -> Self {
        let d = self.degree();
        let e = self.value().exp();
        let mut t = Vec::with_capacity(d + 1);
        let mut fact = 1.0;
        for k in 0..=d {
            if k > 0 {
                fact *= k as f64;
            }
            t.push(e / fact);
        }
        self.compose(&t)
    }

    fn ln(&self) -> Self {
        let a = self.value();
        let d = self.degree();
        let mut t = vec![a.ln()];
        for k in 1..=d {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            t.push(sign / (k as f64 * a.powi(k as i32)));
        }
        self.compose(&t)
    }

    fn powf(&self, r: f64) -> Self {
        let a = self.value();
        self.compose(&power_series(a, r, a.powf(r), self.degree()))
    }

    fn sqrt(&self) -> Self {
        let a = self.value();
        self.compose(&power_series(a, 0.5, a.sqrt(), self.degree()))
    }

    fn sin(&self) -> Self {
        let a = self.value();
        self.compose(&trig_series(a.sin(), a.cos(), self.degree()))
    }

    fn cos(&self) -> Self {
        let a = self.value();
        self.compose(&trig_series(a.cos(), -a.sin(), self.degree()))
    }

    fn abs(&self) -> Self {
        let a = self.value();
        self.compose(&[a.abs(), a.signum()])
    }
}

/// Taylor coefficients of `t ↦ t^r` at `a`, given `c0 = a^r`.
fn power_series(a: f64, r: f64, c0: f64, degree: usize) -> Vec<f64> {
    let mut t = Vec::with_capacity(degree + 1);
    t.push(c0);
    for k in 1..=degree {
        let prev = t[k - 1];
        t.push(prev * (r - (k as f64 - 1.0)) / (k as f64 * a));
    }
    t
}

/// Taylor coefficients of a function whose derivatives cycle `f, f', -f, -f'`.
fn trig_series(f0: f64, f1: f64, degree: usize) -> Vec<f64> {
    let cycle = [f0, f1, -f0, -f1];
    let mut fact = 1.0;
    (0..=degree)
        .map(|k| {
            if k > 0 {
                fact *= k as f64;
            }
            cycle[k % 4] / fact
        })
        .collect()
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn is_constant(&self) -> bool {
        true
    }
    fn compose(&self, taylor: &[f64]) -> Self {
        taylor[0]
    }
    fn degree(&self) -> usize {
        0
    }
    fn powi(&self, n: i32) -> Self {
        f64::powi(*self, n)
    }
    fn recip(&self) -> Self {
        1.0 / *self
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn powf(&self, r: f64) -> Self {
        f64::powf(*self, r)
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn abs(&self) -> Self {
        f64::abs(*self)
    }
}

/// Monomial basis and multiplication table shared by all jets of one shape.
pub struct Layout {
    base_vars: usize,
    fiber_vars: usize,
    base_order: u8,
    fiber_order: u8,
    exponents: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
    // (i, j, k): c[k] += a[i] * b[j]; sorted by i, with row offsets
    products: Vec<(u32, u32, u32)>,
    row_start: Vec<usize>,
    // for each target k, the (i, j) pairs with i != 0
    by_target: Vec<Vec<(u32, u32)>>,
    degree: usize,
}

type LayoutKey = (usize, u8, usize, u8);

static LAYOUTS: LazyLock<Mutex<HashMap<LayoutKey, Arc<Layout>>>> = LazyLock::new(|| Mutex::new(HashMap::new()));

static SCALAR_LAYOUT: LazyLock<Arc<Layout>> = LazyLock::new(|| Layout::cached(0, 0, 0, 0));

fn exponent_vectors(vars: usize, max_total: u8) -> Vec<Vec<u8>> {
    fn rec(vars: usize, left: u8, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if cur.len() == vars {
            out.push(cur.clone());
            return;
        }
        for e in 0..=left {
            cur.push(e);
            rec(vars, left - e, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(vars, max_total, &mut Vec::with_capacity(vars), &mut out);
    out
}

impl Layout {
    fn build(base_vars: usize, base_order: u8, fiber_vars: usize, fiber_order: u8) -> Layout {
        let bases = exponent_vectors(base_vars, base_order);
        let fibers = exponent_vectors(fiber_vars, fiber_order);
        let mut exponents: Vec<Vec<u8>> = Vec::with_capacity(bases.len() * fibers.len());
        for b in &bases {
            for f in &fibers {
                let mut e = b.clone();
                e.extend_from_slice(f);
                exponents.push(e);
            }
        }
        exponents.sort_by(|a, b| {
            let da: u32 = a.iter().map(|&e| e as u32).sum();
            let db: u32 = b.iter().map(|&e| e as u32).sum();
            da.cmp(&db).then_with(|| b.cmp(a))
        });
        let index: HashMap<Vec<u8>, usize> = exponents.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();

        let within = |e: &[u8]| {
            let bsum: u32 = e[..base_vars].iter().map(|&v| v as u32).sum();
            let fsum: u32 = e[base_vars..].iter().map(|&v| v as u32).sum();
            bsum <= base_order as u32 && fsum <= fiber_order as u32
        };
        let m = exponents.len();
        let mut products = Vec::new();
        let mut row_start = Vec::with_capacity(m + 1);
        let mut by_target = vec![Vec::new(); m];
        let mut sum = vec![0u8; base_vars + fiber_vars];
        for i in 0..m {
            row_start.push(products.len());
            for j in 0..m {
                for (s, (a, b)) in sum.iter_mut().zip(exponents[i].iter().zip(&exponents[j])) {
                    *s = a + b;
                }
                if within(&sum) {
                    let k = index[&sum];
                    products.push((i as u32, j as u32, k as u32));
                    if i != 0 {
                        by_target[k].push((i as u32, j as u32));
                    }
                }
            }
        }
        row_start.push(products.len());
        Layout {
            base_vars,
            fiber_vars,
            base_order,
            fiber_order,
            exponents,
            index,
            products,
            row_start,
            by_target,
            degree: base_order as usize + fiber_order as usize,
        }
    }

    /// Shared layout for the given shape. Layouts are memoized process-wide.
    pub fn cached(base_vars: usize, base_order: u8, fiber_vars: usize, fiber_order: u8) -> Arc<Layout> {
        let base_order = if base_vars == 0 { 0 } else { base_order };
        let fiber_order = if fiber_vars == 0 { 0 } else { fiber_order };
        let key = (base_vars, base_order, fiber_vars, fiber_order);
        let mut map = LAYOUTS.lock().expect("layout cache poisoned");
        map.entry(key)
            .or_insert_with(|| Arc::new(Layout::build(base_vars, base_order, fiber_vars, fiber_order)))
            .clone()
    }

    /// Layout with fiber variables only.
    pub fn fiber_only(fiber_vars: usize, fiber_order: u8) -> Arc<Layout> {
        Layout::cached(0, 0, fiber_vars, fiber_order)
    }

    pub fn scalar() -> Arc<Layout> {
        SCALAR_LAYOUT.clone()
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn vars(&self) -> usize {
        self.base_vars + self.fiber_vars
    }

    pub fn base_vars(&self) -> usize {
        self.base_vars
    }

    pub fn fiber_vars(&self) -> usize {
        self.fiber_vars
    }

    pub fn base_order(&self) -> u8 {
        self.base_order
    }

    pub fn fiber_order(&self) -> u8 {
        self.fiber_order
    }

    pub fn exponents(&self) -> &[Vec<u8>] {
        &self.exponents
    }

    pub fn position(&self, exps: &[u8]) -> Option<usize> {
        self.index.get(exps).copied()
    }

    fn is_scalar(&self) -> bool {
        self.vars() == 0
    }

    fn same_shape(&self, other: &Layout) -> bool {
        self.base_vars == other.base_vars
            && self.fiber_vars == other.fiber_vars
            && self.base_order == other.base_order
            && self.fiber_order == other.fiber_order
    }
}

impl fmt::Debug for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Layout")
            .field("base_vars", &self.base_vars)
            .field("base_order", &self.base_order)
            .field("fiber_vars", &self.fiber_vars)
            .field("fiber_order", &self.fiber_order)
            .field("monomials", &self.exponents.len())
            .finish()
    }
}

fn factorial(e: u8) -> f64 {
    (1..=e as u32).map(|v| v as f64).product()
}

fn multi_factorial(exps: &[u8]) -> f64 {
    exps.iter().map(|&e| factorial(e)).product()
}

/// Truncated Taylor expansion of a scalar field around a point.
#[derive(Clone)]
pub struct Jet {
    layout: Arc<Layout>,
    coeffs: Vec<f64>,
}

impl fmt::Debug for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("Jet");
        d.field("value", &self.coeffs[0]);
        let terms: Vec<(Vec<u8>, f64)> = self
            .layout
            .exponents
            .iter()
            .zip(&self.coeffs)
            .skip(1)
            .filter(|(_, &c)| c != 0.0)
            .map(|(e, &c)| (e.clone(), c))
            .collect();
        d.field("terms", &terms).finish()
    }
}

impl Jet {
    pub fn constant(layout: &Arc<Layout>, v: f64) -> Jet {
        let mut coeffs = vec![0.0; layout.len()];
        coeffs[0] = v;
        Jet {
            layout: layout.clone(),
            coeffs,
        }
    }

    /// Jet of the coordinate function for variable `var`, valued `v`.
    pub fn variable(layout: &Arc<Layout>, var: usize, v: f64) -> Jet {
        assert!(var < layout.vars(), "variable {var} out of range");
        let mut e = vec![0u8; layout.vars()];
        e[var] = 1;
        let mut jet = Jet::constant(layout, v);
        let pos = layout.position(&e).expect("first-order monomial missing from layout");
        jet.coeffs[pos] = 1.0;
        jet
    }

    pub fn from_coeffs(layout: &Arc<Layout>, coeffs: Vec<f64>) -> Jet {
        assert_eq!(coeffs.len(), layout.len());
        Jet {
            layout: layout.clone(),
            coeffs,
        }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Normalized Taylor coefficient of the monomial `exps` (zero if truncated).
    pub fn coeff(&self, exps: &[u8]) -> f64 {
        if self.layout.is_scalar() {
            return if exps.iter().all(|&e| e == 0) {
                self.coeffs[0]
            } else {
                0.0
            };
        }
        self.layout.position(exps).map(|p| self.coeffs[p]).unwrap_or(0.0)
    }

    /// Partial derivative `∂^α f` at the expansion point.
    pub fn derivative(&self, exps: &[u8]) -> f64 {
        self.coeff(exps) * multi_factorial(exps)
    }

    /// Re-expand the partial derivative `∂^α f` as a jet over the fiber
    /// variables of `target` (a fiber-only layout with as many fiber variables
    /// as this jet). Base directions are evaluated at the expansion point.
    pub fn derivative_jet(&self, alpha: &[u8], target: &Arc<Layout>) -> Jet {
        let l = &self.layout;
        assert_eq!(alpha.len(), l.vars());
        assert_eq!(target.base_vars, 0);
        assert_eq!(target.fiber_vars, l.fiber_vars);
        let mut out = vec![0.0; target.len()];
        let mut src = alpha.to_vec();
        for (slot, gamma) in out.iter_mut().zip(&target.exponents) {
            let mut scale = 1.0;
            for (f, &g) in gamma.iter().enumerate() {
                let s = l.base_vars + f;
                src[s] = alpha[s] + g;
                scale *= factorial(src[s]) / factorial(g);
            }
            for b in 0..l.base_vars {
                scale *= factorial(alpha[b]);
            }
            *slot = l.position(&src).map(|p| self.coeffs[p] * scale).unwrap_or(0.0);
        }
        Jet::from_coeffs(target, out)
    }

    /// Same jet expressed on a (compatible) non-scalar layout.
    pub fn lift(&self, layout: &Arc<Layout>) -> Jet {
        if Arc::ptr_eq(&self.layout, layout) {
            return self.clone();
        }
        if self.layout.is_scalar() {
            return Jet::constant(layout, self.coeffs[0]);
        }
        assert!(
            self.layout.same_shape(layout),
            "cannot lift jet between layouts {:?} and {:?}",
            self.layout,
            layout
        );
        Jet {
            layout: layout.clone(),
            coeffs: self.coeffs.clone(),
        }
    }

    fn scale(&self, s: f64) -> Jet {
        Jet {
            layout: self.layout.clone(),
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    fn shift(&self, s: f64) -> Jet {
        let mut out = self.clone();
        out.coeffs[0] += s;
        out
    }

    fn check_compatible(&self, other: &Jet) {
        if !Arc::ptr_eq(&self.layout, &other.layout) {
            assert!(
                self.layout.same_shape(&other.layout),
                "mixing jets of layouts {:?} and {:?}",
                self.layout,
                other.layout
            );
        }
    }

    fn add_ref(&self, o: &Jet) -> Jet {
        if o.layout.is_scalar() {
            return self.shift(o.coeffs[0]);
        }
        if self.layout.is_scalar() {
            return o.shift(self.coeffs[0]);
        }
        self.check_compatible(o);
        Jet {
            layout: self.layout.clone(),
            coeffs: self.coeffs.iter().zip(&o.coeffs).map(|(a, b)| a + b).collect(),
        }
    }

    fn sub_ref(&self, o: &Jet) -> Jet {
        if o.layout.is_scalar() {
            return self.shift(-o.coeffs[0]);
        }
        if self.layout.is_scalar() {
            return o.neg_ref().shift(self.coeffs[0]);
        }
        self.check_compatible(o);
        Jet {
            layout: self.layout.clone(),
            coeffs: self.coeffs.iter().zip(&o.coeffs).map(|(a, b)| a - b).collect(),
        }
    }

    fn neg_ref(&self) -> Jet {
        self.scale(-1.0)
    }

    fn mul_ref(&self, o: &Jet) -> Jet {
        if self.layout.is_scalar() {
            return o.scale(self.coeffs[0]);
        }
        if o.layout.is_scalar() {
            return self.scale(o.coeffs[0]);
        }
        self.check_compatible(o);
        let l = &self.layout;
        let a = &self.coeffs;
        let b = &o.coeffs;
        let mut c = vec![0.0; l.len()];
        for i in 0..l.len() {
            let ai = a[i];
            if ai == 0.0 {
                continue;
            }
            for &(_, j, k) in &l.products[l.row_start[i]..l.row_start[i + 1]] {
                c[k as usize] += ai * b[j as usize];
            }
        }
        Jet {
            layout: self.layout.clone(),
            coeffs: c,
        }
    }

    fn div_ref(&self, o: &Jet) -> Jet {
        if o.layout.is_scalar() {
            return self.scale(1.0 / o.coeffs[0]);
        }
        self.mul_ref(&Scalar::recip(o))
    }
}

impl PartialEq for Jet {
    fn eq(&self, other: &Jet) -> bool {
        self.layout.same_shape(&other.layout) && self.coeffs == other.coeffs
    }
}

impl From<f64> for Jet {
    fn from(v: f64) -> Jet {
        Jet::constant(&Layout::scalar(), v)
    }
}

macro_rules! jet_binop {
    ($trait:ident, $method:ident, $inner:ident) => {
        impl $trait for Jet {
            type Output = Jet;
            fn $method(self, o: Jet) -> Jet {
                self.$inner(&o)
            }
        }
        impl<'a> $trait<&'a Jet> for &'a Jet {
            type Output = Jet;
            fn $method(self, o: &'a Jet) -> Jet {
                self.$inner(o)
            }
        }
        impl $trait<&Jet> for Jet {
            type Output = Jet;
            fn $method(self, o: &Jet) -> Jet {
                self.$inner(o)
            }
        }
        impl $trait<Jet> for &Jet {
            type Output = Jet;
            fn $method(self, o: Jet) -> Jet {
                self.$inner(&o)
            }
        }
        impl $trait<f64> for Jet {
            type Output = Jet;
            fn $method(self, o: f64) -> Jet {
                self.$inner(&Jet::from(o))
            }
        }
        impl $trait<f64> for &Jet {
            type Output = Jet;
            fn $method(self, o: f64) -> Jet {
                self.$inner(&Jet::from(o))
            }
        }
    };
}

jet_binop!(Add, add, add_ref);
jet_binop!(Sub, sub, sub_ref);
jet_binop!(Mul, mul, mul_ref);
jet_binop!(Div, div, div_ref);

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.neg_ref()
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.neg_ref()
    }
}

impl Scalar for Jet {
    fn from_f64(v: f64) -> Self {
        Jet::from(v)
    }

    fn value(&self) -> f64 {
        self.coeffs[0]
    }

    fn is_constant(&self) -> bool {
        self.coeffs[1..].iter().all(|&c| c == 0.0)
    }

    fn compose(&self, taylor: &[f64]) -> Self {
        let d = self.layout.degree.min(taylor.len() - 1);
        if d == 0 || self.layout.is_scalar() {
            return Jet::constant(&self.layout, taylor[0]);
        }
        let mut h = self.clone();
        h.coeffs[0] = 0.0;
        let mut acc = Jet::constant(&self.layout, taylor[d]);
        for k in (0..d).rev() {
            acc = acc.mul_ref(&h).shift(taylor[k]);
        }
        acc
    }

    fn degree(&self) -> usize {
        self.layout.degree
    }

    fn powi(&self, n: i32) -> Self {
        if n < 0 {
            return Scalar::recip(&self.powi(-n));
        }
        let mut result = Jet::constant(&self.layout, 1.0);
        let mut base = self.clone();
        let mut e = n as u32;
        while e > 0 {
            if e & 1 == 1 {
                result = result.mul_ref(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul_ref(&base);
            }
        }
        result
    }
}

/// A point of the tangent bundle in manifold-induced coordinates.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TangentPoint {
    pub x: Vec<f64>,
    pub xdot: Vec<f64>,
}

impl TangentPoint {
    pub fn new(x: Vec<f64>, xdot: Vec<f64>) -> Result<TangentPoint> {
        if x.len() != xdot.len() {
            return Err(Error::Inadmissible(format!(
                "base has {} components, fiber has {}",
                x.len(),
                xdot.len()
            )));
        }
        if x.iter().chain(&xdot).any(|v| !v.is_finite()) {
            return Err(Error::Inadmissible("non-finite coordinate".into()));
        }
        Ok(TangentPoint { x, xdot })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn with_fiber_scaled(&self, lambda: f64) -> TangentPoint {
        TangentPoint {
            x: self.x.clone(),
            xdot: self.xdot.iter().map(|v| v * lambda).collect(),
        }
    }
}

/// Coordinates of a tangent point lifted to jets. Seeded directions carry a
/// unit first-order coefficient; the rest are constants.
#[derive(Debug, Clone)]
pub struct SeededPoint {
    pub layout: Arc<Layout>,
    pub x: Vec<Jet>,
    pub xdot: Vec<Jet>,
}

/// Lift `p` to jets, seeding the requested base and fiber directions.
///
/// Layout variable `k < base_dirs.len()` is `x^{base_dirs[k]}`; the following
/// variables are `ẋ^{fiber_dirs[k]}`.
pub fn seed(p: &TangentPoint, base_dirs: &[usize], fiber_dirs: &[usize], orders: (u8, u8)) -> Result<SeededPoint> {
    let (kx, kv) = orders;
    if kx > MAX_BASE_ORDER || kv > MAX_FIBER_ORDER {
        return Err(Error::OrderCap {
            base: kx,
            fiber: kv,
            max_base: MAX_BASE_ORDER,
            max_fiber: MAX_FIBER_ORDER,
        });
    }
    let n = p.dim();
    if let Some(&bad) = base_dirs.iter().chain(fiber_dirs).find(|&&i| i >= n) {
        return Err(Error::Direction { index: bad, dim: n });
    }
    let layout = Layout::cached(base_dirs.len(), kx, fiber_dirs.len(), kv);
    let mut x: Vec<Jet> = p.x.iter().map(|&v| Jet::constant(&layout, v)).collect();
    let mut xdot: Vec<Jet> = p.xdot.iter().map(|&v| Jet::constant(&layout, v)).collect();
    for (k, &i) in base_dirs.iter().enumerate() {
        if kx > 0 {
            x[i] = Jet::variable(&layout, k, p.x[i]);
        }
    }
    for (k, &i) in fiber_dirs.iter().enumerate() {
        if kv > 0 {
            xdot[i] = Jet::variable(&layout, base_dirs.len() + k, p.xdot[i]);
        }
    }
    Ok(SeededPoint { layout, x, xdot })
}

/// Seed every base and fiber direction of `p`.
pub fn seed_all(p: &TangentPoint, orders: (u8, u8)) -> Result<SeededPoint> {
    let dirs: Vec<usize> = (0..p.dim()).collect();
    let base: &[usize] = if orders.0 == 0 { &[] } else { &dirs };
    let fiber: &[usize] = if orders.1 == 0 { &[] } else { &dirs };
    seed(p, base, fiber, orders)
}

/// Multi-index with a single entry.
pub fn unit(vars: usize, i: usize) -> Vec<u8> {
    let mut e = vec![0u8; vars];
    e[i] = 1;
    e
}

/// Solve `M z = rhs` for jets.
///
/// The value part is factorized once; higher Taylor blocks follow by forward
/// substitution in graded monomial order, so the solution is exact to the
/// truncation order.
pub fn jet_linear_solve(m: &[Vec<Jet>], rhs: &[Jet], eps_det: f64) -> Result<Vec<Jet>> {
    let n = rhs.len();
    assert!(m.len() == n && m.iter().all(|row| row.len() == n));
    let layout = m
        .iter()
        .flatten()
        .chain(rhs)
        .map(|j| &j.layout)
        .find(|l| !l.is_scalar())
        .cloned()
        .unwrap_or_else(Layout::scalar);
    let m: Vec<Vec<Jet>> = m
        .iter()
        .map(|row| row.iter().map(|j| j.lift(&layout)).collect())
        .collect();
    let rhs: Vec<Jet> = rhs.iter().map(|j| j.lift(&layout)).collect();

    let m0 = DMatrix::from_fn(n, n, |a, b| m[a][b].coeffs[0]);
    let det = m0.determinant();
    if !(det.abs() > eps_det) {
        return Err(Error::Singular {
            det,
            threshold: eps_det,
        });
    }
    let lu = m0.lu();
    let mut z = vec![vec![0.0; layout.len()]; n];
    for k in 0..layout.len() {
        let mut acc = DVector::from_fn(n, |a, _| rhs[a].coeffs[k]);
        for &(i, j) in &layout.by_target[k] {
            let (i, j) = (i as usize, j as usize);
            for a in 0..n {
                let mut s = 0.0;
                for b in 0..n {
                    s += m[a][b].coeffs[i] * z[b][j];
                }
                acc[a] -= s;
            }
        }
        let sol = lu.solve(&acc).ok_or(Error::Singular {
            det,
            threshold: eps_det,
        })?;
        for a in 0..n {
            z[a][k] = sol[a];
        }
    }
    Ok(z.into_iter().map(|c| Jet::from_coeffs(&layout, c)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn uni(order: u8, v: f64) -> Jet {
        let l = Layout::fiber_only(1, order);
        Jet::variable(&l, 0, v)
    }

    #[test]
    fn square_taylor_coefficients() {
        let t = uni(2, 3.0);
        let f = &t * &t;
        assert_eq!(f.coeff(&[0]), 9.0);
        assert_eq!(f.coeff(&[1]), 6.0);
        assert_eq!(f.coeff(&[2]), 1.0);
    }

    #[test]
    fn bilinear_mixed_coefficient() {
        let p = TangentPoint::new(vec![2.0, 5.0], vec![0.0, 0.0]).unwrap();
        let s = seed(&p, &[], &[], (0, 0)).unwrap();
        assert_eq!(s.x[0].value(), 2.0);
        let l = Layout::fiber_only(2, 2);
        let x = Jet::variable(&l, 0, 2.0);
        let y = Jet::variable(&l, 1, 5.0);
        let f = &x * &y;
        assert_eq!(f.value(), 10.0);
        assert_eq!(f.coeff(&[1, 1]), 1.0);
        assert_eq!(f.derivative(&[1, 1]), 1.0);
    }

    #[test]
    fn flat_quadratic_form_fiber_hessian() {
        let p = TangentPoint::new(vec![0.3, -0.2], vec![1.0, 2.0]).unwrap();
        let s = seed_all(&p, (0, 2)).unwrap();
        let a = &s.xdot[0] * &s.xdot[0] + &s.xdot[1] * &s.xdot[1];
        assert_eq!(a.value(), 5.0);
        assert_eq!(a.derivative(&[2, 0]), 2.0);
        assert_eq!(a.derivative(&[0, 2]), 2.0);
        assert_eq!(a.derivative(&[1, 1]), 0.0);
    }

    #[test]
    fn seed_rejects_orders_above_caps() {
        let p = TangentPoint::new(vec![0.0], vec![1.0]).unwrap();
        assert!(matches!(seed(&p, &[0], &[0], (2, 1)), Err(Error::OrderCap { .. })));
        assert!(matches!(
            seed(&p, &[0], &[0], (1, MAX_FIBER_ORDER + 1)),
            Err(Error::OrderCap { .. })
        ));
        assert!(matches!(seed(&p, &[1], &[0], (1, 1)), Err(Error::Direction { .. })));
    }

    #[test]
    fn layout_truncates_per_group() {
        let l = Layout::cached(2, 1, 2, 2);
        // base part: 1 + 2 monomials, fiber part: 1 + 2 + 3 monomials
        assert_eq!(l.len(), 3 * 6);
        assert!(l.position(&[1, 1, 0, 0]).is_none());
        assert!(l.position(&[1, 0, 1, 1]).is_some());
        assert_eq!(l.exponents()[0], vec![0, 0, 0, 0]);
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let l = Layout::fiber_only(2, 2);
        let x = Jet::variable(&l, 0, 0.5);
        let y = Jet::variable(&l, 1, -1.5);
        let one = Jet::constant(&l, 1.0);
        let zero = Jet::constant(&l, 0.0);
        let m = vec![vec![one.clone(), zero.clone()], vec![zero, one]];
        let rhs = vec![&x * &y, x.exp()];
        let z = jet_linear_solve(&m, &rhs, DEFAULT_EPS_DET).unwrap();
        for (a, b) in z.iter().zip(&rhs) {
            for (p, q) in a.coeffs().iter().zip(b.coeffs()) {
                assert_relative_eq!(*p, *q, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn geometric_series_from_diagonal_solve() {
        let eps = 0.1;
        let t = uni(4, 0.0);
        let d = (&t * eps) + 1.0;
        let m = vec![vec![d]];
        let z = jet_linear_solve(&m, &[Jet::from(1.0)], DEFAULT_EPS_DET).unwrap();
        for k in 0..=4u8 {
            assert_relative_eq!(z[0].coeff(&[k]), (-eps).powi(k as i32), epsilon = 1e-15);
        }
    }

    #[test]
    fn singular_value_part_rejected() {
        let t = uni(2, 0.0);
        let m = vec![vec![t]];
        assert!(matches!(
            jet_linear_solve(&m, &[Jet::from(1.0)], DEFAULT_EPS_DET),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn random_matrix_solve_multiplies_back() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let l = Layout::cached(1, 1, 3, 3);
        let rand_jet = |rng: &mut rand_chacha::ChaCha8Rng, diag: bool| {
            let mut c: Vec<f64> = (0..l.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if diag {
                c[0] += 4.0;
            }
            Jet::from_coeffs(&l, c)
        };
        let m: Vec<Vec<Jet>> = (0..4)
            .map(|a| (0..4).map(|b| rand_jet(&mut rng, a == b)).collect())
            .collect();
        let rhs: Vec<Jet> = (0..4).map(|_| rand_jet(&mut rng, false)).collect();
        let z = jet_linear_solve(&m, &rhs, DEFAULT_EPS_DET).unwrap();
        for a in 0..4 {
            let mut back = Jet::constant(&l, 0.0);
            for b in 0..4 {
                back = back + &m[a][b] * &z[b];
            }
            for (p, q) in back.coeffs().iter().zip(rhs[a].coeffs()) {
                assert!((p - q).abs() < 1e-12, "residual {}", (p - q).abs());
            }
        }
    }

    #[test]
    fn exp_of_negated_seed_matches_central_difference() {
        let s = uni(1, 1.0);
        let f = Scalar::exp(&(-s));
        let h = 1e-5;
        let fd = ((-(1.0 + h)).exp() - (-(1.0 - h)).exp()) / (2.0 * h);
        assert_relative_eq!(f.value(), (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(f.coeff(&[1]), fd, max_relative = 1e-9);
        assert_relative_eq!(f.coeff(&[1]), -(-1.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn derivative_jet_reexpands_partials() {
        // f = x * v^3 with base x and fiber v; ∂x ∂v f = 3 v^2
        let p = TangentPoint::new(vec![2.0], vec![1.5]).unwrap();
        let s = seed_all(&p, (1, 3)).unwrap();
        let f = &s.x[0] * &s.xdot[0].powi(3);
        let target = Layout::fiber_only(1, 2);
        let d = f.derivative_jet(&[1, 1], &target);
        assert_relative_eq!(d.value(), 3.0 * 1.5 * 1.5, epsilon = 1e-14);
        assert_relative_eq!(d.coeff(&[1]), 6.0 * 1.5, epsilon = 1e-14);
        assert_relative_eq!(d.coeff(&[2]), 3.0, epsilon = 1e-14);
    }

    type Prim = fn(f64) -> f64;
    type JetPrim = fn(&Jet) -> Jet;

    fn primitives() -> Vec<(&'static str, Prim, JetPrim, (f64, f64))> {
        vec![
            ("exp", f64::exp, |j| Scalar::exp(j), (-2.0, 2.0)),
            ("ln", f64::ln, |j| Scalar::ln(j), (0.3, 3.0)),
            ("sqrt", f64::sqrt, |j| Scalar::sqrt(j), (0.3, 3.0)),
            ("sin", f64::sin, |j| Scalar::sin(j), (-3.0, 3.0)),
            ("cos", f64::cos, |j| Scalar::cos(j), (-3.0, 3.0)),
            ("recip", |v| 1.0 / v, |j| Scalar::recip(j), (0.5, 3.0)),
            ("abs", f64::abs, |j| Scalar::abs(j), (0.2, 3.0)),
            ("powf", |v| v.powf(1.7), |j| Scalar::powf(j, 1.7), (0.3, 3.0)),
            ("powi", |v| v.powi(-3), |j| Scalar::powi(j, -3), (0.5, 3.0)),
        ]
    }

    proptest! {
        #[test]
        fn primitives_match_central_differences(t in 0.0f64..1.0, which in 0usize..9) {
            let (name, f, fj, (lo, hi)) = primitives()[which];
            let a = lo + (hi - lo) * t;
            let j = fj(&uni(2, a));
            let h = 1e-5;
            let d1 = (f(a + h) - f(a - h)) / (2.0 * h);
            let d2 = (f(a + h) - 2.0 * f(a) + f(a - h)) / (h * h);
            let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(1.0);
            prop_assert!(rel(j.derivative(&[1]), d1) <= 1e-6, "{} first derivative", name);
            // second differences at h = 1e-5 carry ~1e-6 rounding; use a wider step for them
            let h2 = 1e-3;
            let d2w = (f(a + h2) - 2.0 * f(a) + f(a - h2)) / (h2 * h2);
            let d2r = (4.0 * d2w - (f(a + 2.0 * h2) - 2.0 * f(a) + f(a - 2.0 * h2)) / (4.0 * h2 * h2)) / 3.0;
            prop_assert!(rel(j.derivative(&[2]), d2r) <= 1e-6, "{} second derivative {} vs {} ({})", name, j.derivative(&[2]), d2r, d2);
        }

        #[test]
        fn ring_axioms_hold(cs in proptest::collection::vec(-2.0f64..2.0, 3 * 12)) {
            let l = Layout::cached(1, 1, 2, 2);
            prop_assert_eq!(l.len(), 12);
            let mk = |k: usize| Jet::from_coeffs(&l, cs[k * 12..k * 12 + 12].to_vec());
            let (a, b, c) = (mk(0), mk(1), mk(2));
            let lhs = (&a + &b) + c.clone();
            let rhs = &a + &(&b + &c);
            for (p, q) in lhs.coeffs().iter().zip(rhs.coeffs()) {
                prop_assert!((p - q).abs() <= 1e-14);
            }
            let lhs = &a * &(&b + &c);
            let rhs = &a * &b + &a * &c;
            for (p, q) in lhs.coeffs().iter().zip(rhs.coeffs()) {
                prop_assert!((p - q).abs() <= 1e-13);
            }
        }
    }
}
