//! TOML model files: metric, one-form, Lagrangian, sampling and checks.
//!
//! ```toml
//! [model]
//! name = "ccnv_randers"
//! coordinates = ["u", "v", "x1", "x2"]
//!
//! [metric]            # lower triangle; omitted entries are zero
//! g_uu = "2*(x1^2 - x2^2)"
//! g_vu = "1"
//! g_x1x1 = "1"
//! g_x2x2 = "1"
//!
//! [oneform]
//! u = "1"
//!
//! [lagrangian]
//! kind = "alpha-beta"
//! profile = "randers"
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::alpha_beta::{build_ab_lagrangian, KropinaParams, OmegaProfile, StructuredTParams};
use crate::expr::Expr;
use crate::finsler::{AdmissibleSampler, ClassifyOptions, FinslerLagrangian, Thresholds, Verdict};
use crate::geometry::MetricModel;

/// A problem with the input, reported with exit code 3.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{message}")]
pub struct InputError {
    pub message: String,
}

impl InputError {
    fn new(message: impl Into<String>) -> Self {
        InputError {
            message: message.into(),
        }
    }
}

type Res<T> = std::result::Result<T, InputError>;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub model: ModelSection,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    pub metric: BTreeMap<String, String>,
    #[serde(default)]
    pub oneform: Option<BTreeMap<String, String>>,
    pub lagrangian: LagrangianSection,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default)]
    pub checks: ChecksSection,
    #[serde(default)]
    pub tolerances: TolerancesSection,
    #[serde(default)]
    pub tensor: Option<TensorSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: String,
    pub coordinates: Vec<String>,
    #[serde(default)]
    pub dimension: Option<usize>,
    #[serde(default)]
    pub description: Option<String>,
    /// Verdict the model is known to have; informational.
    #[serde(default)]
    pub expected: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagrangianSection {
    /// `riemannian`, `alpha-beta`, `conformal` or `free`.
    pub kind: String,
    /// `unit`, `randers`, `exponential`, `kropina` or `expression`.
    #[serde(default)]
    pub profile: Option<String>,
    #[serde(default)]
    pub n: Option<f64>,
    #[serde(default)]
    pub m: Option<f64>,
    #[serde(default)]
    pub c: Option<f64>,
    /// `Ω(s)` for `profile = "expression"`.
    #[serde(default)]
    pub omega: Option<String>,
    /// Conformal factor σ(x) in `L = e^{2σ} A`.
    #[serde(default)]
    pub sigma: Option<String>,
    /// `L(x, ẋ)` for `kind = "free"`, in `dot_<coord>`, `A` and `B`.
    #[serde(default)]
    pub expression: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    #[serde(rename = "box", default)]
    pub bounds: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub shells: Option<Vec<f64>>,
    #[serde(default)]
    pub base_points: Option<usize>,
    #[serde(default)]
    pub fiber_samples: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub eps_a: Option<f64>,
    #[serde(default)]
    pub eps_b: Option<f64>,
    #[serde(default)]
    pub eps_det: Option<f64>,
    #[serde(default)]
    pub kappa_max: Option<f64>,
    #[serde(default)]
    pub min_bases: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksSection {
    #[serde(default)]
    pub identities: Option<bool>,
    #[serde(default)]
    pub theorem1: Option<bool>,
    #[serde(default)]
    pub alpha_beta: Option<bool>,
    #[serde(default)]
    pub corollary3: Option<bool>,
    #[serde(default)]
    pub third_derivative: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolerancesSection {
    #[serde(default)]
    pub spread: Option<f64>,
    #[serde(default)]
    pub identity: Option<f64>,
    #[serde(default)]
    pub theorem1: Option<f64>,
    #[serde(default)]
    pub alpha_beta: Option<f64>,
    #[serde(default)]
    pub corollary3: Option<f64>,
}

/// Coefficients of a structured `T` (all default to zero).
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorSection {
    #[serde(default)]
    pub lambda: Option<String>,
    #[serde(default)]
    pub rho: Option<String>,
    #[serde(default)]
    pub sigma: Option<String>,
}

/// Which checks `report-all` runs.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Checks {
    pub identities: bool,
    pub theorem1: bool,
    pub alpha_beta: bool,
    pub corollary3: bool,
    pub third_derivative: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Tolerances {
    pub spread: f64,
    pub identity: f64,
    pub theorem1: f64,
    pub alpha_beta: f64,
    pub corollary3: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            spread: 1e-7,
            identity: 1e-9,
            theorem1: 1e-7,
            alpha_beta: 1e-7,
            corollary3: 1e-8,
        }
    }
}

/// A validated model, ready to run.
#[derive(Debug, Clone)]
pub struct Model {
    pub name: String,
    pub description: Option<String>,
    pub expected: Option<Verdict>,
    pub metric: MetricModel,
    pub lagrangian: FinslerLagrangian,
    pub kropina: Option<KropinaParams>,
    pub tensor: Option<StructuredTParams>,
    pub sampler: AdmissibleSampler,
    pub min_bases: usize,
    pub checks: Checks,
    pub tolerances: Tolerances,
}

impl Model {
    pub fn classify_options(&self) -> ClassifyOptions {
        ClassifyOptions {
            tol: self.tolerances.spread,
            identity_tol: self.checks.identities.then_some(self.tolerances.identity),
            third_derivative: self.checks.third_derivative,
            min_bases: self.min_bases,
            ..ClassifyOptions::default()
        }
    }
}

/// Models shipped with the crate, addressable by name.
pub const SHIPPED_MODELS: &[(&str, &str)] = &[
    ("ccnv_randers", include_str!("../examples/models/ccnv_randers.toml")),
    (
        "ccnv_exponential",
        include_str!("../examples/models/ccnv_exponential.toml"),
    ),
    ("ccnv_kropina", include_str!("../examples/models/ccnv_kropina.toml")),
    (
        "ccnv_gyraton_kropina",
        include_str!("../examples/models/ccnv_gyraton_kropina.toml"),
    ),
    ("kundt_kropina", include_str!("../examples/models/kundt_kropina.toml")),
    (
        "kundt_vsi_kropina",
        include_str!("../examples/models/kundt_vsi_kropina.toml"),
    ),
    (
        "flat_randers_nonparallel",
        include_str!("../examples/models/flat_randers_nonparallel.toml"),
    ),
    (
        "flat_exponential_nonparallel",
        include_str!("../examples/models/flat_exponential_nonparallel.toml"),
    ),
    (
        "curved_riemannian",
        include_str!("../examples/models/curved_riemannian.toml"),
    ),
    ("conformal_flat", include_str!("../examples/models/conformal_flat.toml")),
    (
        "kundt_sphere_kropina",
        include_str!("../examples/models/kundt_sphere_kropina.toml"),
    ),
];

/// Where a model came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    File(PathBuf),
    Shipped(&'static str),
}

/// Resolve `path`: as given, with `.toml` appended, or (for a path whose
/// file does not exist) a shipped model with the same file stem.
pub fn resolve(path: &Path) -> Res<(Source, String)> {
    let mut candidates = vec![path.to_path_buf()];
    if path.extension().is_none() {
        candidates.push(path.with_extension("toml"));
    }
    for c in &candidates {
        if c.is_file() {
            let text = std::fs::read_to_string(c).map_err(|e| InputError::new(format!("{}: {e}", c.display())))?;
            return Ok((Source::File(c.clone()), text));
        }
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    if let Some((name, text)) = SHIPPED_MODELS.iter().find(|(n, _)| *n == stem) {
        log::info!("{} not found on disk, using the shipped model `{name}`", path.display());
        return Ok((Source::Shipped(name), text.to_string()));
    }
    Err(InputError::new(format!("{}: no such model file", path.display())))
}

pub fn load(path: &Path) -> Res<Model> {
    let (source, text) = resolve(path)?;
    let label = match &source {
        Source::File(p) => p.display().to_string(),
        Source::Shipped(n) => format!("<shipped>/{n}.toml"),
    };
    parse_model(&text).map_err(|e| InputError::new(format!("{label}: {}", e.message)))
}

pub fn shipped(name: &str) -> Option<Model> {
    SHIPPED_MODELS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| parse_model(t).expect("shipped models are valid"))
}

/// Parse and validate a model file.
pub fn parse_model(text: &str) -> Res<Model> {
    let file: ModelFile = toml::from_str(text).map_err(|e| InputError::new(e.to_string().trim_end().to_string()))?;
    file.build(text)
}

/// 1-based line of `key = …` inside `[section]`, for error messages.
fn line_of(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = h.trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim().trim_matches('"') == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

fn at(text: &str, section: &str, key: &str, msg: impl std::fmt::Display) -> InputError {
    match line_of(text, section, key) {
        Some(l) => InputError::new(format!("[{section}] {key} (line {l}): {msg}")),
        None => InputError::new(format!("[{section}] {key}: {msg}")),
    }
}

fn section_err(section: &str, msg: impl std::fmt::Display) -> InputError {
    InputError::new(format!("[{section}] {msg}"))
}

/// Split `g_<a><b>` into two coordinate indices.
fn metric_key(key: &str, coords: &[String]) -> Option<std::result::Result<(usize, usize), String>> {
    let rest = key.strip_prefix("g_")?;
    let splits: Vec<(usize, usize)> = coords
        .iter()
        .enumerate()
        .filter_map(|(i, a)| {
            let tail = rest.strip_prefix(a.as_str())?;
            coords.iter().position(|b| b == tail).map(|j| (i, j))
        })
        .collect();
    Some(match splits.as_slice() {
        [one] => Ok(*one),
        [] => Err("does not name two coordinates".into()),
        _ => Err("ambiguous coordinate split".into()),
    })
}

impl ModelFile {
    fn parse_expr(text: &str, section: &str, key: &str, src: &str, allowed: &dyn Fn(&str) -> bool) -> Res<Expr> {
        let e: Expr = src.parse().map_err(|err| at(text, section, key, err))?;
        if let Some(bad) = e.symbols().into_iter().find(|s| !allowed(s)) {
            return Err(at(text, section, key, format!("unknown symbol `{bad}`")));
        }
        Ok(e)
    }

    /// Validate and assemble; `text` is the source, used for line numbers.
    pub fn build(&self, text: &str) -> Res<Model> {
        let coords = &self.model.coordinates;
        let n = coords.len();
        if n == 0 {
            return Err(section_err("model", "coordinates must not be empty"));
        }
        if let Some(d) = self.model.dimension {
            if d != n {
                return Err(at(
                    text,
                    "model",
                    "dimension",
                    format!("{d} does not match {n} coordinates"),
                ));
            }
        }
        for (i, c) in coords.iter().enumerate() {
            if coords[..i].contains(c) {
                return Err(section_err("model", format!("duplicate coordinate `{c}`")));
            }
            let ok = c.chars().next().is_some_and(|ch| ch.is_ascii_alphabetic() || ch == '_')
                && c.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '_');
            if !ok || matches!(c.as_str(), "A" | "B" | "s") || c.starts_with("dot_") {
                return Err(section_err("model", format!("invalid coordinate name `{c}`")));
            }
            if self.parameters.contains_key(c) {
                return Err(section_err("parameters", format!("`{c}` is also a coordinate")));
            }
        }
        let base_ok = |s: &str| coords.iter().any(|c| c == s) || self.parameters.contains_key(s);

        let mut lower: Vec<Vec<Option<Expr>>> = (0..n).map(|i| vec![None; i + 1]).collect();
        for (key, src) in &self.metric {
            let (i, j) = match metric_key(key, coords) {
                Some(Ok(ij)) => ij,
                Some(Err(why)) => return Err(at(text, "metric", key, why)),
                None => return Err(at(text, "metric", key, "metric keys look like g_<coord><coord>")),
            };
            let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
            if lower[hi][lo].is_some() {
                return Err(at(text, "metric", key, "component given twice"));
            }
            lower[hi][lo] = Some(Self::parse_expr(text, "metric", key, src, &base_ok)?);
        }
        let lower: Vec<Vec<Expr>> = lower
            .into_iter()
            .map(|row| row.into_iter().map(|e| e.unwrap_or_else(|| Expr::num(0.0))).collect())
            .collect();
        let mut metric = MetricModel::from_lower(coords.clone(), lower)
            .map_err(|e| section_err("metric", e))?
            .with_params(self.parameters.clone())
            .with_name(self.model.name.clone());

        if let Some(of) = &self.oneform {
            let mut beta = vec![Expr::num(0.0); n];
            for (key, src) in of {
                let i = coords
                    .iter()
                    .position(|c| c == key)
                    .ok_or_else(|| at(text, "oneform", key, "not a coordinate"))?;
                beta[i] = Self::parse_expr(text, "oneform", key, src, &base_ok)?;
            }
            metric = metric.with_beta(beta).map_err(|e| section_err("oneform", e))?;
        }

        let s = &self.sampling;
        let mut thresholds = Thresholds::default();
        for (key, slot, v) in [
            ("eps_a", &mut thresholds.eps_a, s.eps_a),
            ("eps_b", &mut thresholds.eps_b, s.eps_b),
            ("eps_det", &mut thresholds.eps_det, s.eps_det),
            ("kappa_max", &mut thresholds.kappa_max, s.kappa_max),
        ] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(at(text, "sampling", key, "must be positive"));
                }
                *slot = v;
            }
        }
        metric = metric.with_eps_det(thresholds.eps_det);

        let (lagrangian, kropina) = self.build_lagrangian(text, &metric)?;

        let mut sampler = AdmissibleSampler::new(n, s.seed.unwrap_or(1));
        sampler.thresholds = thresholds;
        if let Some(b) = &s.bounds {
            if b.len() != n {
                return Err(at(
                    text,
                    "sampling",
                    "box",
                    format!("needs {n} ranges, got {}", b.len()),
                ));
            }
            if b.iter().any(|[l, h]| !(l <= h)) {
                return Err(at(text, "sampling", "box", "empty range"));
            }
            sampler = sampler.with_box(b.iter().map(|r| r[0]).collect(), b.iter().map(|r| r[1]).collect());
        }
        if let Some(sh) = &s.shells {
            if sh.is_empty() || sh.iter().any(|r| !(*r > 0.0)) {
                return Err(at(text, "sampling", "shells", "radii must be positive"));
            }
            sampler = sampler.with_shells(sh.clone());
        }
        let base_points = s.base_points.unwrap_or(sampler.base_points);
        let fiber_samples = s.fiber_samples.unwrap_or(sampler.fiber_samples);
        if base_points == 0 {
            return Err(at(text, "sampling", "base_points", "must be positive"));
        }
        if fiber_samples < 2 {
            return Err(at(text, "sampling", "fiber_samples", "needs at least 2"));
        }
        sampler = sampler.with_counts(base_points, fiber_samples);

        let is_ab = lagrangian.profile().is_some();
        let c = &self.checks;
        let checks = Checks {
            identities: c.identities.unwrap_or(true),
            theorem1: c.theorem1.unwrap_or(true),
            alpha_beta: c.alpha_beta.unwrap_or(is_ab),
            corollary3: c.corollary3.unwrap_or(kropina.is_some()),
            third_derivative: c.third_derivative.unwrap_or(false),
        };
        if checks.alpha_beta && !is_ab {
            return Err(at(text, "checks", "alpha_beta", "needs an (α,β) Lagrangian"));
        }
        if checks.corollary3 && kropina.is_none() {
            return Err(at(text, "checks", "corollary3", "needs the kropina profile"));
        }
        let t = &self.tolerances;
        let d = Tolerances::default();
        let tolerances = Tolerances {
            spread: t.spread.unwrap_or(d.spread),
            identity: t.identity.unwrap_or(d.identity),
            theorem1: t.theorem1.unwrap_or(d.theorem1),
            alpha_beta: t.alpha_beta.unwrap_or(d.alpha_beta),
            corollary3: t.corollary3.unwrap_or(d.corollary3),
        };
        for (k, v) in [
            ("spread", tolerances.spread),
            ("identity", tolerances.identity),
            ("theorem1", tolerances.theorem1),
            ("alpha_beta", tolerances.alpha_beta),
            ("corollary3", tolerances.corollary3),
        ] {
            if !(v > 0.0) {
                return Err(at(text, "tolerances", k, "must be positive"));
            }
        }

        let tensor = match &self.tensor {
            None => None,
            Some(ts) => {
                let get = |key: &str, v: &Option<String>| -> Res<Expr> {
                    match v {
                        Some(src) => Self::parse_expr(text, "tensor", key, src, &base_ok),
                        None => Ok(Expr::num(0.0)),
                    }
                };
                if !metric.has_beta() {
                    return Err(section_err("tensor", "a structured T needs [oneform]"));
                }
                Some(StructuredTParams {
                    lambda: get("lambda", &ts.lambda)?,
                    rho: get("rho", &ts.rho)?,
                    sigma: get("sigma", &ts.sigma)?,
                })
            }
        };

        let expected = match self.model.expected.as_deref() {
            None => None,
            Some("berwald") => Some(Verdict::Berwald),
            Some("not-berwald") => Some(Verdict::NotBerwald),
            Some("inconclusive") => Some(Verdict::Inconclusive),
            Some(other) => return Err(at(text, "model", "expected", format!("unknown verdict `{other}`"))),
        };

        Ok(Model {
            name: self.model.name.clone(),
            description: self.model.description.clone(),
            expected,
            metric,
            lagrangian,
            kropina,
            tensor,
            sampler,
            min_bases: s.min_bases.unwrap_or(ClassifyOptions::default().min_bases),
            checks,
            tolerances,
        })
    }

    fn build_lagrangian(&self, text: &str, metric: &MetricModel) -> Res<(FinslerLagrangian, Option<KropinaParams>)> {
        let l = &self.lagrangian;
        let coords = metric.coords();
        let base_ok = |s: &str| coords.iter().any(|c| c == s) || self.parameters.contains_key(s);
        let stray = |keys: &[(&str, bool)]| -> Res<()> {
            match keys.iter().find(|(_, present)| *present) {
                Some((k, _)) => Err(at(
                    text,
                    "lagrangian",
                    k,
                    format!("not used with kind = \"{}\"", l.kind),
                )),
                None => Ok(()),
            }
        };
        let kropina_keys = [("n", l.n.is_some()), ("m", l.m.is_some()), ("c", l.c.is_some())];
        match l.kind.as_str() {
            "riemannian" => {
                stray(&[
                    ("profile", l.profile.is_some()),
                    ("omega", l.omega.is_some()),
                    ("sigma", l.sigma.is_some()),
                    ("expression", l.expression.is_some()),
                ])?;
                stray(&kropina_keys)?;
                Ok((FinslerLagrangian::riemannian(), None))
            }
            "conformal" => {
                stray(&[
                    ("profile", l.profile.is_some()),
                    ("omega", l.omega.is_some()),
                    ("expression", l.expression.is_some()),
                ])?;
                stray(&kropina_keys)?;
                let src = l
                    .sigma
                    .as_deref()
                    .ok_or_else(|| section_err("lagrangian", "conformal needs `sigma`"))?;
                let sigma = Self::parse_expr(text, "lagrangian", "sigma", src, &base_ok)?;
                Ok((FinslerLagrangian::conformal(sigma), None))
            }
            "free" => {
                stray(&[
                    ("profile", l.profile.is_some()),
                    ("omega", l.omega.is_some()),
                    ("sigma", l.sigma.is_some()),
                ])?;
                stray(&kropina_keys)?;
                let src = l
                    .expression
                    .as_deref()
                    .ok_or_else(|| section_err("lagrangian", "free needs `expression`"))?;
                let has_b = metric.has_beta();
                let ok = |s: &str| {
                    base_ok(s)
                        || s == "A"
                        || (s == "B" && has_b)
                        || s.strip_prefix("dot_").is_some_and(|c| coords.iter().any(|k| k == c))
                };
                let e = Self::parse_expr(text, "lagrangian", "expression", src, &ok)?;
                Ok((FinslerLagrangian::free(e), None))
            }
            "alpha-beta" => {
                stray(&[("sigma", l.sigma.is_some()), ("expression", l.expression.is_some())])?;
                if !metric.has_beta() {
                    return Err(section_err("lagrangian", "alpha-beta needs a [oneform] section"));
                }
                let name = l
                    .profile
                    .as_deref()
                    .ok_or_else(|| section_err("lagrangian", "alpha-beta needs `profile`"))?;
                let mut kropina = None;
                let profile = match name {
                    "unit" | "randers" | "exponential" => {
                        stray(&[("omega", l.omega.is_some())])?;
                        stray(&kropina_keys)?;
                        match name {
                            "unit" => OmegaProfile::Unit,
                            "randers" => OmegaProfile::Randers,
                            _ => OmegaProfile::Exponential,
                        }
                    }
                    "kropina" => {
                        stray(&[("omega", l.omega.is_some())])?;
                        let need = |k: &str, v: Option<f64>| {
                            v.ok_or_else(|| section_err("lagrangian", format!("kropina needs `{k}`")))
                        };
                        let p = KropinaParams::new(need("n", l.n)?, need("m", l.m)?, need("c", l.c)?)
                            .map_err(|e| section_err("lagrangian", e))?;
                        for w in p.warnings() {
                            log::warn!("{w}");
                        }
                        kropina = Some(p);
                        OmegaProfile::GeneralizedKropina(p)
                    }
                    "expression" => {
                        stray(&kropina_keys)?;
                        let src = l
                            .omega
                            .as_deref()
                            .ok_or_else(|| section_err("lagrangian", "expression profile needs `omega`"))?;
                        OmegaProfile::expression(src, self.parameters.clone())
                            .map_err(|e| at(text, "lagrangian", "omega", e))?
                    }
                    other => return Err(at(text, "lagrangian", "profile", format!("unknown profile `{other}`"))),
                };
                let lag = build_ab_lagrangian(metric, profile).map_err(|e| section_err("lagrangian", e))?;
                Ok((lag, kropina))
            }
            other => Err(at(text, "lagrangian", "kind", format!("unknown kind `{other}`"))),
        }
    }
}
