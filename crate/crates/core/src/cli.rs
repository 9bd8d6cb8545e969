//! Batch front end: run checks on a model and assemble a deterministic report.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::alpha_beta::{corollary2_residual, omega_ode_residual, solve_q, KropinaParams, OmegaProfile};
use crate::berwald::{theorem1_scan, Theorem1Summary};
use crate::finsler::{
    classify_samples, evaluate_samples, BaseOutcome, BerwaldReport, IdentityResiduals, SampleSet, SamplingMeta,
    SprayJets, Thresholds, Verdict,
};
use crate::geometry::{ConstantT, TensorField};
use crate::model_file::{load, Checks, InputError, Model, Tolerances};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INCONCLUSIVE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;

/// Tolerance on `|2G − N ẋ|`, which holds by homogeneity alone.
pub const EULER_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Classify,
    CheckTheorem1,
    CheckAb,
    CheckCorollary3,
    Identities,
    ReportAll,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::Classify,
        Command::CheckTheorem1,
        Command::CheckAb,
        Command::CheckCorollary3,
        Command::Identities,
        Command::ReportAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Classify => "classify",
            Command::CheckTheorem1 => "check-theorem1",
            Command::CheckAb => "check-ab",
            Command::CheckCorollary3 => "check-corollary3",
            Command::Identities => "identities",
            Command::ReportAll => "report-all",
        }
    }
}

impl FromStr for Command {
    type Err = InputError;

    fn from_str(s: &str) -> Result<Self, InputError> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| InputError {
                message: format!("unknown command `{s}`"),
            })
    }
}

/// Command-line overrides of model-file settings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub tol: Option<f64>,
    pub samples: Option<usize>,
    pub fiber_samples: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Settings {
    pub seed: u64,
    pub base_points: usize,
    pub fiber_samples: usize,
    pub shells: Vec<f64>,
    pub box_lo: Vec<f64>,
    pub box_hi: Vec<f64>,
    pub thresholds: Thresholds,
    pub tolerances: Tolerances,
    pub checks: Checks,
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentitySummary {
    pub samples: usize,
    pub residuals: IdentityResiduals,
    /// `max |2G − N ẋ|`.
    pub spray_euler: f64,
    pub tol: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Theorem1Check {
    pub extracted: Theorem1Summary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub given: Option<Theorem1Summary>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualSummary {
    pub tensor: String,
    pub max_residual: f64,
    pub worst_x: Vec<f64>,
    pub worst_xdot: Vec<f64>,
    pub tol: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AbCheck {
    pub profile: String,
    pub extracted: ResidualSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub given: Option<ResidualSummary>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct QRow {
    pub x: Vec<f64>,
    pub q: Option<f64>,
    pub fit_residual: Option<f64>,
    /// `∇β` at the component where the design tensor is largest.
    pub reference: Option<f64>,
    /// `q / reference`.
    pub ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Convention {
    pub formula: &'static str,
    pub value: f64,
    pub matched: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Corollary3Check {
    pub params: KropinaParams,
    pub rows: Vec<QRow>,
    pub max_fit_residual: f64,
    /// Two sign conventions for `q` are in use; the recovered ratio is
    /// compared with both.
    pub conventions: Vec<Convention>,
    /// Profile ODE residual on `s ∈ [0.2, 5]` at `σ/λ = n c/m`.
    pub ode_max_residual: f64,
    pub tol: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub model: String,
    pub lagrangian: String,
    pub settings: Settings,
    pub sampling: SamplingMeta,
    pub verdict: Option<Verdict>,
    pub passed: bool,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification: Option<BerwaldReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub identities: Option<IdentitySummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theorem1: Option<Theorem1Check>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_beta: Option<AbCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corollary3: Option<Corollary3Check>,
    pub notes: Vec<String>,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Short human-readable summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} {} on `{}` ({})",
            self.tool, self.command, self.model, self.lagrangian
        );
        let _ = writeln!(
            s,
            "  sampling: seed {}, {} bases × {} fibers, acceptance {:.1}%",
            self.settings.seed,
            self.settings.base_points,
            self.settings.fiber_samples,
            100.0 * self.sampling.acceptance_rate
        );
        if let Some(c) = &self.classification {
            let _ = writeln!(
                s,
                "  verdict: {} (max Ξ spread {:.3e}, tol {:.1e})",
                c.verdict, c.max_spread, c.tol
            );
            if let Some(w) = &c.witness {
                let _ = writeln!(s, "  witness: x = {:?}, spread {:.3e}", w.x, w.spread);
            }
        }
        if let Some(i) = &self.identities {
            let _ = writeln!(
                s,
                "  identities: max relative {:.3e}, torsion {:.3e}, 2G − Nẋ {:.3e} over {} samples: {}",
                i.residuals.max_relative(),
                i.residuals.torsion,
                i.spray_euler,
                i.samples,
                pass(i.passed)
            );
        }
        if let Some(t) = &self.theorem1 {
            let _ = writeln!(
                s,
                "  Ω condition (extracted T): relative residual {:.3e}: {}",
                t.extracted.max_relative,
                pass(t.extracted.passed)
            );
            if let Some(g) = &t.given {
                let _ = writeln!(
                    s,
                    "  Ω condition (given T): relative residual {:.3e}: {}",
                    g.max_relative,
                    pass(g.passed)
                );
            }
        }
        if let Some(a) = &self.alpha_beta {
            let _ = writeln!(
                s,
                "  (α,β) condition (extracted T): {:.3e}: {}",
                a.extracted.max_residual,
                pass(a.extracted.passed)
            );
            if let Some(g) = &a.given {
                let _ = writeln!(
                    s,
                    "  (α,β) condition (given T): {:.3e}: {}",
                    g.max_residual,
                    pass(g.passed)
                );
            }
        }
        if let Some(c) = &self.corollary3 {
            let _ = writeln!(
                s,
                "  q fit: {} points, max residual {:.3e}: {}",
                c.rows.len(),
                c.max_fit_residual,
                pass(c.passed)
            );
            for conv in &c.conventions {
                let _ = writeln!(
                    s,
                    "    q/∇β = {} = {}: {}",
                    conv.formula,
                    conv.value,
                    if conv.matched { "matches" } else { "no match" }
                );
            }
        }
        for n in &self.notes {
            let _ = writeln!(s, "  note: {n}");
        }
        let _ = writeln!(s, "  exit code {}", self.exit_code);
        s
    }

    /// Plain-text rendering with the summary and the probe tables.
    pub fn to_text(&self) -> String {
        let mut s = self.summary();
        if let Some(c) = &self.classification {
            for p in &c.probes {
                let _ = writeln!(s, "probe x = {:?} (spread {:.3e})", p.x, p.spread);
                let n = p.t.len();
                for a in 0..n {
                    for b in 0..n {
                        for d in b..n {
                            let t = p.t[a][b][d];
                            if t.abs() > 1e-12 {
                                let _ = writeln!(s, "  T^{a}_{b}{d} = {t:.9e}   Ξ^{a}_{b}{d} = {:.9e}", p.xi[a][b][d]);
                            }
                        }
                    }
                }
            }
        }
        if let Some(c) = &self.corollary3 {
            let _ = writeln!(s, "q table:");
            for r in &c.rows {
                match (&r.q, &r.error) {
                    (Some(q), _) => {
                        let _ = writeln!(
                            s,
                            "  x = {:?}  q = {q:.9e}  residual = {:.2e}  ratio = {:?}",
                            r.x,
                            r.fit_residual.unwrap_or(f64::NAN),
                            r.ratio
                        );
                    }
                    (None, Some(e)) => {
                        let _ = writeln!(s, "  x = {:?}  {e}", r.x);
                    }
                    _ => {}
                }
            }
        }
        s
    }
}

fn pass(b: bool) -> &'static str {
    if b {
        "pass"
    } else {
        "FAIL"
    }
}

/// Result of a run: the report and the process exit code it implies.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Report,
    pub exit_code: i32,
}

fn input(e: impl std::fmt::Display) -> InputError {
    InputError { message: e.to_string() }
}

/// Apply overrides. `--tol` sets the tolerance of the command's main test.
pub fn apply_overrides(model: &mut Model, cmd: Command, o: &Overrides) -> Result<(), InputError> {
    if let Some(t) = o.tol {
        if !(t > 0.0) {
            return Err(input("--tol must be positive"));
        }
        let tols = &mut model.tolerances;
        match cmd {
            Command::Classify => tols.spread = t,
            Command::CheckTheorem1 => tols.theorem1 = t,
            Command::CheckAb => tols.alpha_beta = t,
            Command::CheckCorollary3 => tols.corollary3 = t,
            Command::Identities => tols.identity = t,
            Command::ReportAll => {
                tols.spread = t;
                tols.theorem1 = t;
                tols.alpha_beta = t;
            }
        }
    }
    if let Some(n) = o.samples {
        if n == 0 {
            return Err(input("--samples must be positive"));
        }
        model.sampler.base_points = n;
    }
    if let Some(k) = o.fiber_samples {
        if k < 2 {
            return Err(input("--fiber-samples must be at least 2"));
        }
        model.sampler.fiber_samples = k;
    }
    if let Some(s) = o.seed {
        model.sampler.seed = s;
    }
    Ok(())
}

/// Load `path`, apply overrides and run `cmd`, optionally on a dedicated
/// pool of `jobs` worker threads.
pub fn run_path(cmd: Command, path: &Path, o: &Overrides, jobs: Option<usize>) -> Result<Outcome, InputError> {
    let mut model = load(path)?;
    apply_overrides(&mut model, cmd, o)?;
    match jobs {
        None => run(cmd, &model),
        Some(0) => Err(input("--jobs must be positive")),
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(j).build().map_err(input)?;
            pool.install(|| run(cmd, &model))
        }
    }
}

/// Run `cmd` on a loaded model.
pub fn run(cmd: Command, model: &Model) -> Result<Outcome, InputError> {
    let lag = &model.lagrangian;
    let m = &model.metric;
    if cmd == Command::CheckAb && lag.profile().is_none() {
        return Err(input("check-ab needs an (α,β) Lagrangian"));
    }
    if cmd == Command::CheckCorollary3 && model.kropina.is_none() {
        return Err(input("check-corollary3 needs the kropina profile"));
    }
    let samples = model.sampler.sample(lag, m).map_err(input)?;
    let sampler = &model.sampler;
    let mut report = Report {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: cmd.name(),
        model: model.name.clone(),
        lagrangian: lag.tag(),
        settings: Settings {
            seed: sampler.seed,
            base_points: sampler.base_points,
            fiber_samples: sampler.fiber_samples,
            shells: sampler.shells.clone(),
            box_lo: sampler.lo.clone(),
            box_hi: sampler.hi.clone(),
            thresholds: sampler.thresholds,
            tolerances: model.tolerances,
            checks: model.checks,
        },
        sampling: samples.metadata(sampler.seed),
        verdict: None,
        passed: false,
        exit_code: EXIT_INCONCLUSIVE,
        classification: None,
        identities: None,
        theorem1: None,
        alpha_beta: None,
        corollary3: None,
        notes: Vec::new(),
    };
    if let Some(k) = &model.kropina {
        report.notes.extend(k.warnings());
    }
    if let Some(why) = samples.starvation(model.min_bases) {
        log::warn!("sampling starved: {why}");
        report.notes.push(format!("inconclusive: {why}"));
        if matches!(cmd, Command::Classify | Command::ReportAll) {
            report.verdict = Some(Verdict::Inconclusive);
        }
        return Ok(finish(report, EXIT_INCONCLUSIVE));
    }

    let opts = model.classify_options();
    let needs_outcomes = matches!(
        cmd,
        Command::Classify | Command::CheckTheorem1 | Command::CheckAb | Command::ReportAll
    );
    let mut outcomes: Vec<BaseOutcome> = Vec::new();
    if matches!(cmd, Command::Classify | Command::ReportAll) {
        let mut c =
            classify_samples(lag, m, &samples, sampler.seed, sampler.thresholds.eps_det, &opts).map_err(input)?;
        report.verdict = Some(c.verdict);
        outcomes = std::mem::take(&mut c.outcomes);
        report.classification = Some(c);
    } else if needs_outcomes {
        let mut o = opts.clone();
        o.identity_tol = None;
        outcomes = evaluate_samples(lag, m, &samples, &o, sampler.thresholds.eps_det).map_err(input)?;
    }

    let all = cmd == Command::ReportAll;
    let mut passes: Vec<bool> = Vec::new();
    if cmd == Command::Identities || (all && model.checks.identities) {
        let s = identity_check(model, &samples)?;
        passes.push(s.passed);
        report.identities = Some(s);
    }
    if cmd == Command::CheckTheorem1 || (all && model.checks.theorem1) {
        let t = theorem1_check(model, &outcomes)?;
        passes.push(t.passed);
        report.theorem1 = Some(t);
    }
    if cmd == Command::CheckAb || (all && model.checks.alpha_beta) {
        let a = ab_check(model, &outcomes)?;
        passes.push(a.passed);
        report.alpha_beta = Some(a);
    }
    if cmd == Command::CheckCorollary3 || (all && model.checks.corollary3) {
        let c = corollary3_check(model, &samples)?;
        passes.push(c.passed);
        report.corollary3 = Some(c);
    }

    let code = match report.verdict {
        Some(Verdict::Inconclusive) => EXIT_INCONCLUSIVE,
        Some(Verdict::NotBerwald) => EXIT_FAIL,
        _ if passes.iter().all(|p| *p) => EXIT_PASS,
        _ => EXIT_FAIL,
    };
    if let Some(note) = report.classification.as_ref().and_then(|c| c.note.clone()) {
        report.notes.push(note);
    }
    Ok(finish(report, code))
}

fn finish(mut report: Report, code: i32) -> Outcome {
    report.exit_code = code;
    report.passed = code == EXIT_PASS;
    Outcome {
        report,
        exit_code: code,
    }
}

fn identity_check(model: &Model, samples: &SampleSet) -> Result<IdentitySummary, InputError> {
    use rayon::prelude::*;
    let points: Vec<_> = samples.usable_bases().flat_map(|b| b.points()).collect();
    let per: Vec<(IdentityResiduals, f64)> = points
        .par_iter()
        .map(|p| {
            let sj = SprayJets::compute_with(&model.lagrangian, &model.metric, p, 3, model.sampler.thresholds.eps_det)?;
            let nconn = sj.connection();
            let g2 = sj.spray_value();
            let n = p.dim();
            let euler = (0..n)
                .map(|a| (2.0 * g2[a] - (0..n).map(|b| nconn[(a, b)] * p.xdot[b]).sum::<f64>()).abs())
                .fold(0.0f64, f64::max);
            Ok((sj.identity_residuals_with(&nconn), euler))
        })
        .collect::<crate::Result<_>>()
        .map_err(input)?;
    let mut res = IdentityResiduals::default();
    let mut euler = 0.0f64;
    for (r, e) in &per {
        res = res.merge(r);
        euler = euler.max(*e);
    }
    let tol = model.tolerances.identity;
    Ok(IdentitySummary {
        samples: per.len(),
        residuals: res,
        spray_euler: euler,
        tol,
        passed: res.max_relative() < tol && euler < EULER_TOL,
    })
}

fn theorem1_check(model: &Model, outcomes: &[BaseOutcome]) -> Result<Theorem1Check, InputError> {
    let tol = model.tolerances.theorem1;
    let lag = &model.lagrangian;
    let extracted = theorem1_scan(lag, &model.metric, outcomes, None, tol).map_err(input)?;
    let given = match &model.tensor {
        Some(t) => Some(theorem1_scan(lag, &model.metric, outcomes, Some(t as &dyn TensorField), tol).map_err(input)?),
        None => None,
    };
    let passed = extracted.passed && given.as_ref().is_none_or(|g| g.passed);
    Ok(Theorem1Check {
        extracted,
        given,
        passed,
    })
}

fn ab_scan(
    model: &Model,
    profile: &OmegaProfile,
    outcomes: &[BaseOutcome],
    given: Option<&dyn TensorField>,
) -> crate::Result<ResidualSummary> {
    let m = &model.metric;
    let mut worst = (0.0f64, Vec::new(), Vec::new());
    for o in outcomes {
        let t = match given {
            Some(g) => g.at(m, &o.sample.x)?,
            None => o.extracted_t(),
        };
        let t = ConstantT(t);
        for p in o.sample.points() {
            let r = corollary2_residual(m, profile, &t, &p)?;
            if r > worst.0 || worst.1.is_empty() {
                worst = (r, p.x.clone(), p.xdot.clone());
            }
        }
    }
    let tol = model.tolerances.alpha_beta;
    Ok(ResidualSummary {
        tensor: if given.is_some() { "given" } else { "extracted" }.into(),
        max_residual: worst.0,
        worst_x: worst.1,
        worst_xdot: worst.2,
        tol,
        passed: worst.0 < tol,
    })
}

fn ab_check(model: &Model, outcomes: &[BaseOutcome]) -> Result<AbCheck, InputError> {
    let profile = model
        .lagrangian
        .profile()
        .ok_or_else(|| input("not an (α,β) Lagrangian"))?;
    let extracted = ab_scan(model, profile, outcomes, None).map_err(input)?;
    let given = match &model.tensor {
        Some(t) => Some(ab_scan(model, profile, outcomes, Some(t)).map_err(input)?),
        None => None,
    };
    let passed = extracted.passed && given.as_ref().is_none_or(|g| g.passed);
    Ok(AbCheck {
        profile: profile.name().into(),
        extracted,
        given,
        passed,
    })
}

fn corollary3_check(model: &Model, samples: &SampleSet) -> Result<Corollary3Check, InputError> {
    let k = model.kropina.ok_or_else(|| input("no kropina parameters"))?;
    let m = &model.metric;
    let tol = model.tolerances.corollary3;
    let mut rows = Vec::new();
    let mut max_fit = 0.0f64;
    let mut ok = true;
    for b in samples.usable_bases() {
        let x = b.x.clone();
        let fit = solve_q(m, &k, &x);
        let row = match fit {
            Ok(f) => {
                max_fit = max_fit.max(f.residual);
                ok &= f.residual < tol;
                let d = crate::alpha_beta::corollary3_design(m, &k, &x).map_err(input)?;
                let nb = m.nabla_beta(&x).map_err(input)?;
                let (ia, ib) = d.iamax_full();
                let r = nb[(ia, ib)];
                let reference = (r.abs() > 1e-12).then_some(r);
                QRow {
                    x,
                    q: Some(f.q),
                    fit_residual: Some(f.residual),
                    reference,
                    ratio: reference.map(|r| f.q / r),
                    error: None,
                }
            }
            Err(e) => {
                ok = false;
                QRow {
                    x,
                    q: None,
                    fit_residual: None,
                    reference: None,
                    ratio: None,
                    error: Some(e.to_string()),
                }
            }
        };
        rows.push(row);
    }
    let ratios: Vec<f64> = rows.iter().filter_map(|r| r.ratio).collect();
    let conventions = [
        ("1/(c(1-n))", 1.0 / (k.c * (1.0 - k.n))),
        ("1/(c(n-1))", 1.0 / (k.c * (k.n - 1.0))),
    ]
    .into_iter()
    .map(|(formula, value)| Convention {
        formula,
        value,
        matched: value.is_finite()
            && !ratios.is_empty()
            && ratios.iter().all(|r| (r - value).abs() <= 1e-6 * value.abs().max(1.0)),
    })
    .collect();

    let lambda = 1.0;
    let sigma = k.sigma_over_lambda() * lambda;
    let mut ode = 0.0f64;
    for i in 0..=20 {
        let s = 0.2 + 4.8 * i as f64 / 20.0;
        if let Ok(r) = omega_ode_residual(&k, lambda, sigma, s) {
            ode = ode.max(r.abs());
        }
    }
    Ok(Corollary3Check {
        params: k,
        rows,
        max_fit_residual: max_fit,
        conventions,
        ode_max_residual: ode,
        tol,
        passed: ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_file::shipped;

    #[test]
    fn command_names_round_trip() {
        for c in Command::ALL {
            assert_eq!(c.name().parse::<Command>().unwrap(), c);
        }
        assert!("classify-all".parse::<Command>().is_err());
    }

    #[test]
    fn overrides_reach_the_report() {
        let mut m = shipped("curved_riemannian").unwrap();
        let o = Overrides {
            tol: Some(1e-6),
            samples: Some(9),
            fiber_samples: Some(4),
            seed: Some(42),
        };
        apply_overrides(&mut m, Command::Classify, &o).unwrap();
        let r = run(Command::Classify, &m).unwrap().report;
        assert_eq!(r.settings.seed, 42);
        assert_eq!(r.settings.base_points, 9);
        assert_eq!(r.settings.fiber_samples, 4);
        assert_eq!(r.settings.tolerances.spread, 1e-6);
        assert_eq!(r.classification.unwrap().tol, 1e-6);
    }

    #[test]
    fn wrong_command_for_model_is_input_error() {
        let m = shipped("curved_riemannian").unwrap();
        assert!(run(Command::CheckAb, &m).is_err());
        assert!(run(Command::CheckCorollary3, &m).is_err());
    }

    #[test]
    fn starvation_is_inconclusive() {
        let mut m = shipped("curved_riemannian").unwrap();
        m.sampler.base_points = 3;
        let out = run(Command::Classify, &m).unwrap();
        assert_eq!(out.exit_code, EXIT_INCONCLUSIVE);
        assert_eq!(out.report.verdict, Some(Verdict::Inconclusive));
    }
}
