//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines are always printed.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use finsler_berwald::alpha_beta::{
    corollary2_residual, corollary3_residual_value, omega_ode_residual, solve_q, structured_t_at, KropinaParams,
};
use finsler_berwald::berwald::theorem1_scan;
use finsler_berwald::cli::{run_path, Command, Overrides};
use finsler_berwald::finsler::{classify_berwald, ClassifyOptions, FinslerLagrangian, SprayJets, Verdict};
use finsler_berwald::fixtures::{canned_fixtures, fixture, ExpectedT, FixtureSpec};
use finsler_berwald::geometry::{ConstantT, MetricModel, TensorField};
use finsler_berwald::jets::{seed_all, unit, TangentPoint};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn points(f: &FixtureSpec, seed: u64, bases: usize) -> Vec<TangentPoint> {
    let s = f
        .sampler(seed)
        .with_counts(bases, 8)
        .sample(&f.lagrangian, &f.metric)
        .unwrap();
    s.usable_bases().flat_map(|b| b.points().collect::<Vec<_>>()).collect()
}

fn identity_suite() -> Check {
    let mut worst = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut least = usize::MAX;
    for f in canned_fixtures() {
        let pts = points(&f, 11, 140);
        ensure(pts.len() >= 1000, || {
            format!("{}: only {} admissible samples", f.name, pts.len())
        })?;
        least = least.min(pts.len());
        let res: Vec<_> = pts
            .par_iter()
            .map(|p| {
                let sj = SprayJets::compute(&f.lagrangian, &f.metric, p, 3).unwrap();
                let n = sj.connection();
                let g = sj.spray_value();
                let euler = (0..p.dim())
                    .map(|a| (2.0 * g[a] - (0..p.dim()).map(|b| n[(a, b)] * p.xdot[b]).sum::<f64>()).abs())
                    .fold(0.0f64, f64::max);
                (sj.identity_residuals_with(&n), euler)
            })
            .collect();
        for (r, e) in res {
            worst.0 = worst.0.max(r.delta_l_relative);
            worst.1 = worst.1.max(r.compat_relative);
            worst.2 = worst.2.max(r.torsion);
            worst.3 = worst.3.max(e);
        }
    }
    ensure(worst.0 < 1e-9 && worst.1 < 1e-9 && worst.2 < 1e-9, || {
        format!("residuals {worst:?}")
    })?;
    ensure(worst.3 < 1e-10, || format!("2G − Nẋ = {:e}", worst.3))?;
    Ok(format!(
        "δL {:.1e}, compat {:.1e}, torsion {:.1e}, 2G−Nẋ {:.1e} (≥ {least} samples per fixture)",
        worst.0, worst.1, worst.2, worst.3
    ))
}

fn central(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

/// Central difference with one Richardson step.
fn richardson(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (4.0 * central(&f, h / 2.0) - central(&f, h)) / 3.0
}

const FD_STEP: f64 = 1e-4;

fn lval(lag: &FinslerLagrangian, m: &MetricModel, x: &[f64], v: &[f64]) -> f64 {
    lag.eval(m, x, v).unwrap()
}

fn shift(v: &[f64], i: usize, h: f64) -> Vec<f64> {
    let mut w = v.to_vec();
    w[i] += h;
    w
}

/// Largest relative error, each array compared against its own ∞-norm.
fn rel(jet: &[f64], fd: &[f64]) -> f64 {
    let scale = jet.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    jet.iter()
        .zip(fd)
        .fold(0.0f64, |a, (j, f)| a.max((j - f).abs() / scale))
}

fn jet_vs_fd() -> Check {
    let mut worst = [0.0f64; 5];
    for f in canned_fixtures() {
        let pts: Vec<_> = points(&f, 5, 16).into_iter().take(100).collect();
        ensure(pts.len() == 100, || format!("{}: {} points", f.name, pts.len()))?;
        let (lag, m) = (&f.lagrangian, &f.metric);
        for p in &pts {
            let n = p.dim();
            let vars = 2 * n;
            let j = lag
                .eval(m, &seed_all(p, (1, 3)).unwrap().x, &seed_all(p, (1, 3)).unwrap().xdot)
                .unwrap();
            let (x, v) = (&p.x, &p.xdot);
            let h1 = FD_STEP;
            // ∂_q L, ∂̇_q L
            let jx: Vec<f64> = (0..n).map(|q| j.derivative(&unit(vars, q))).collect();
            let fx: Vec<f64> = (0..n)
                .map(|q| richardson(|h| lval(lag, m, &shift(x, q, h), v), h1))
                .collect();
            let jv: Vec<f64> = (0..n).map(|q| j.derivative(&unit(vars, n + q))).collect();
            let fv: Vec<f64> = (0..n)
                .map(|q| richardson(|h| lval(lag, m, x, &shift(v, q, h)), h1))
                .collect();
            // ∂̇_a ∂̇_b L and ∂_m ∂̇_q L
            let h2 = FD_STEP;
            let mut jvv = Vec::new();
            let mut fvv = Vec::new();
            let mut jxv = Vec::new();
            let mut fxv = Vec::new();
            for a in 0..n {
                for b in 0..n {
                    let mut e = vec![0u8; vars];
                    e[n + a] += 1;
                    e[n + b] += 1;
                    jvv.push(j.derivative(&e));
                    fvv.push(richardson(
                        |h| richardson(|k| lval(lag, m, x, &shift(&shift(v, a, h), b, k)), h2),
                        h2,
                    ));
                    let mut e = vec![0u8; vars];
                    e[a] += 1;
                    e[n + b] += 1;
                    jxv.push(j.derivative(&e));
                    fxv.push(richardson(
                        |h| richardson(|k| lval(lag, m, &shift(x, a, h), &shift(v, b, k)), h2),
                        h2,
                    ));
                }
            }
            // ∂̇_a ∂̇_b ∂̇_c L against differences of the second-order Hessian
            let hess = |w: &[f64]| -> Vec<f64> {
                let q = TangentPoint::new(x.clone(), w.to_vec()).unwrap();
                let s = seed_all(&q, (0, 2)).unwrap();
                let l = lag.eval(m, &s.x, &s.xdot).unwrap();
                let mut out = Vec::new();
                for a in 0..n {
                    for b in 0..n {
                        let mut e = vec![0u8; n];
                        e[a] += 1;
                        e[b] += 1;
                        out.push(l.derivative(&e));
                    }
                }
                out
            };
            let mut jvvv = Vec::new();
            let mut fvvv = Vec::new();
            for c in 0..n {
                let d = |h: f64| -> Vec<f64> {
                    let (p, q) = (hess(&shift(v, c, h)), hess(&shift(v, c, -h)));
                    p.iter().zip(&q).map(|(p, q)| (p - q) / (2.0 * h)).collect()
                };
                let (coarse, fine) = (d(h1), d(h1 / 2.0));
                for a in 0..n {
                    for b in 0..n {
                        let mut e = vec![0u8; vars];
                        e[n + a] += 1;
                        e[n + b] += 1;
                        e[n + c] += 1;
                        jvvv.push(j.derivative(&e));
                        fvvv.push((4.0 * fine[a * n + b] - coarse[a * n + b]) / 3.0);
                    }
                }
            }
            for (k, r) in [
                rel(&jx, &fx),
                rel(&jv, &fv),
                rel(&jvv, &fvv),
                rel(&jxv, &fxv),
                rel(&jvvv, &fvvv),
            ]
            .into_iter()
            .enumerate()
            {
                if r > worst[k] {
                    worst[k] = r;
                }
                ensure(r <= 1e-5, || {
                    format!("{}: derivative group {k} off by {r:e} at {p:?}", f.name)
                })?;
            }
        }
    }
    Ok(format!(
        "∂L {:.1e}, ∂̇L {:.1e}, ∂̇∂̇L {:.1e}, ∂∂̇L {:.1e}, ∂̇∂̇∂̇L {:.1e} (100 points per fixture)",
        worst[0], worst[1], worst[2], worst[3], worst[4]
    ))
}

fn ccnv_berwald() -> Check {
    let mut lines = Vec::new();
    for name in ["ccnv_randers", "ccnv_exponential", "ccnv_kropina"] {
        let f = fixture(name).unwrap();
        let r = classify_berwald(&f.lagrangian, &f.metric, &f.sampler(3), &ClassifyOptions::default())
            .map_err(|e| e.to_string())?;
        ensure(r.verdict == Verdict::Berwald, || {
            format!("{name}: verdict {}", r.verdict)
        })?;
        ensure(r.max_spread < 1e-7, || format!("{name}: spread {:e}", r.max_spread))?;
        ensure(r.max_t < 1e-7, || format!("{name}: ‖T‖ {:e}", r.max_t))?;
        let mut dg = 0.0f64;
        for o in &r.outcomes {
            for p in o.sample.points() {
                let sj = SprayJets::compute(&f.lagrangian, &f.metric, &p, 3).unwrap();
                let half = o.gamma.contract2(&p.xdot, &p.xdot);
                for (g, w) in sj.spray_value().iter().zip(&half) {
                    dg = dg.max((g - 0.5 * w).abs());
                }
            }
        }
        ensure(dg < 1e-8, || format!("{name}: ‖G − ½Γẋẋ‖ {dg:e}"))?;
        lines.push(format!(
            "{name} spread {:.1e} ‖T‖ {:.1e} ‖G−½Γẋẋ‖ {:.1e}",
            r.max_spread, r.max_t, dg
        ));
    }
    Ok(lines.join("; "))
}

fn kundt_berwald() -> Check {
    let f = fixture("kundt_kropina").unwrap();
    let ExpectedT::Kundt(kt) = &f.expected_t else {
        return Err("fixture has no structured T".into());
    };
    let r = classify_berwald(&f.lagrangian, &f.metric, &f.sampler(3), &ClassifyOptions::default())
        .map_err(|e| e.to_string())?;
    ensure(r.verdict == Verdict::Berwald, || format!("verdict {}", r.verdict))?;
    let profile = f.profile().unwrap();
    let (mut t_rel, mut c2, mut c2x, mut nb_err, mut nb_min) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, f64::INFINITY);
    for o in &r.outcomes {
        let x = &o.sample.x;
        // ∂_v H of x1² + v(u + x2) + 0.3 v², by hand
        let dv = x[0] + x[3] + 0.6 * x[1];
        // (n, m, c) = (2, 1, 1): σ = n/(1−n) ∂_vH, ρ = −σ, λ = m σ/(n c)
        let sigma = -2.0 * dv;
        let want = structured_t_at(&f.metric, x, sigma / 2.0, -sigma, sigma).unwrap();
        let got = o.extracted_t();
        t_rel = t_rel.max(got.max_abs_diff(&want) / want.max_abs());
        let nb = f.metric.nabla_beta(x).unwrap();
        nb_err = nb_err.max((nb[(0, 0)] - dv).abs());
        nb_min = nb_min.min(nb.amax());
        let ext = ConstantT(got);
        for p in o.sample.points() {
            c2 = c2.max(corollary2_residual(&f.metric, profile, kt, &p).unwrap());
            c2x = c2x.max(corollary2_residual(&f.metric, profile, &ext, &p).unwrap());
        }
    }
    let t1 = theorem1_scan(
        &f.lagrangian,
        &f.metric,
        &r.outcomes,
        Some(kt as &dyn TensorField),
        1e-7,
    )
    .unwrap();
    let t1x = theorem1_scan(&f.lagrangian, &f.metric, &r.outcomes, None, 1e-7).unwrap();
    ensure(t_rel < 1e-5, || format!("T relative error {t_rel:e}"))?;
    ensure(c2 < 1e-7 && c2x < 1e-7, || format!("(α,β) residual {c2:e} / {c2x:e}"))?;
    ensure(t1.passed && t1x.passed, || {
        format!("Ω-condition residual {:e} / {:e}", t1.max_relative, t1x.max_relative)
    })?;
    ensure(nb_err < 1e-9, || format!("∇_uβ_u − ∂_vH = {nb_err:e}"))?;
    ensure(nb_min > 0.0, || "∇β vanishes at a sample".into())?;
    Ok(format!(
        "T rel err {t_rel:.1e}, (α,β) {c2:.1e}/{c2x:.1e}, Ω condition {:.1e}/{:.1e}, ∇_uβ_u err {nb_err:.1e}, min ‖∇β‖ {nb_min:.2}",
        t1.max_relative, t1x.max_relative
    ))
}

fn no_go() -> Check {
    let mut lines = Vec::new();
    for name in ["flat_randers_nonparallel", "flat_exponential_nonparallel"] {
        let f = fixture(name).unwrap();
        let r = classify_berwald(&f.lagrangian, &f.metric, &f.sampler(3), &ClassifyOptions::default())
            .map_err(|e| e.to_string())?;
        ensure(r.verdict == Verdict::NotBerwald, || {
            format!("{name}: verdict {}", r.verdict)
        })?;
        ensure(r.max_spread > 1e-3, || format!("{name}: spread {:e}", r.max_spread))?;
        ensure(r.witness.is_some(), || format!("{name}: no witness"))?;
        let profile = f.profile().unwrap();
        let pts = points(&f, 9, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut least = f64::INFINITY;
        for draw in 0..100 {
            let (l, rh, s) = (
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let base = &pts[(draw * 8) % pts.len()];
            let t = ConstantT(structured_t_at(&f.metric, &base.x, l, rh, s).unwrap());
            let worst = pts
                .iter()
                .filter(|p| p.x == base.x)
                .map(|p| corollary2_residual(&f.metric, profile, &t, p).unwrap())
                .fold(0.0f64, f64::max);
            least = least.min(worst);
        }
        ensure(least > 1e-3, || {
            format!("{name}: a structured T reached residual {least:e}")
        })?;
        lines.push(format!(
            "{name} spread {:.2}, min (α,β) residual over 100 T draws {least:.2e}",
            r.max_spread
        ));
    }
    Ok(lines.join("; "))
}

fn corollary3() -> Check {
    let mut ode = 0.0f64;
    for k in [
        KropinaParams::new(2.0, 1.0, 1.0).unwrap(),
        KropinaParams::new(0.5, 2.0, 1.5).unwrap(),
    ] {
        let lambda = 0.7;
        let sigma = k.sigma_over_lambda() * lambda;
        for i in 0..=20 {
            let s = 0.2 + 4.8 * i as f64 / 20.0;
            ode = ode.max(omega_ode_residual(&k, lambda, sigma, s).unwrap().abs());
        }
    }
    ensure(ode < 1e-10, || format!("ODE residual {ode:e}"))?;

    let f = fixture("kundt_kropina").unwrap();
    let k = f.kropina.unwrap();
    let mut fit = 0.0f64;
    let mut ratios = Vec::new();
    for p in points(&f, 4, 16).iter().step_by(8) {
        let x = &p.x;
        let q = solve_q(&f.metric, &k, x).map_err(|e| e.to_string())?;
        fit = fit.max(corollary3_residual_value(&f.metric, &k, q.q, x).unwrap().amax());
        ratios.push(q.q / (x[0] + x[3] + 0.6 * x[1]));
    }
    ensure(fit < 1e-8, || format!("fit residual {fit:e}"))?;
    let conv_a = 1.0 / (k.c * (1.0 - k.n));
    let conv_b = 1.0 / (k.c * (k.n - 1.0));
    let matches = |c: f64| ratios.iter().all(|r| (r - c).abs() < 1e-9);
    ensure(matches(conv_a) || matches(conv_b), || format!("q/∂_vH = {ratios:?}"))?;

    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/models/kundt_kropina.toml");
    let out = run_path(Command::CheckCorollary3, &shipped, &Overrides::default(), None).map_err(|e| e.message)?;
    let c3 = out.report.corollary3.ok_or("no q table")?;
    ensure(out.exit_code == 0 && c3.conventions.iter().any(|c| c.matched), || {
        "report has no matched convention".into()
    })?;
    let which = if matches(conv_a) {
        "1/(c(1−n))"
    } else {
        "1/(c(n−1))"
    };
    Ok(format!(
        "ODE residual {ode:.1e} on 21-point grid, fit residual {fit:.1e}, q/∂_vH = {} matches {which}",
        ratios[0]
    ))
}

fn biconditional() -> Check {
    let mut disagreements = Vec::new();
    let mut runs = 0;
    for f in canned_fixtures() {
        for seed in 1..=5u64 {
            let r = classify_berwald(&f.lagrangian, &f.metric, &f.sampler(seed), &ClassifyOptions::default())
                .map_err(|e| e.to_string())?;
            let t1 = theorem1_scan(&f.lagrangian, &f.metric, &r.outcomes, None, 1e-7).map_err(|e| e.to_string())?;
            runs += 1;
            let agree = match r.verdict {
                Verdict::Berwald => t1.passed,
                Verdict::NotBerwald => !t1.passed,
                Verdict::Inconclusive => false,
            };
            if !agree {
                disagreements.push(format!(
                    "{} seed {seed}: {} vs Ω condition {:e}",
                    f.name, r.verdict, t1.max_relative
                ));
            }
            if let Some(e) = f.expected {
                if e != r.verdict {
                    disagreements.push(format!("{} seed {seed}: expected {e}, got {}", f.name, r.verdict));
                }
            }
        }
    }
    ensure(disagreements.is_empty(), || disagreements.join("; "))?;
    Ok(format!("{runs} runs, 0 disagreements"))
}

fn determinism() -> Check {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/models");
    let mut n = 0;
    for name in [
        "ccnv_kropina",
        "kundt_kropina",
        "flat_randers_nonparallel",
        "conformal_flat",
    ] {
        let path = dir.join(format!("{name}.toml"));
        for seed in [1u64, 77] {
            let o = Overrides {
                seed: Some(seed),
                ..Overrides::default()
            };
            let one = run_path(Command::ReportAll, &path, &o, Some(1))
                .map_err(|e| e.message)?
                .report
                .to_json();
            let eight = run_path(Command::ReportAll, &path, &o, Some(8))
                .map_err(|e| e.message)?
                .report
                .to_json();
            ensure(one == eight, || format!("{name} seed {seed}: reports differ"))?;
            n += 1;
        }
    }
    let bin = env!("CARGO_BIN_EXE_finsler-berwald");
    let run = |jobs: &str| {
        std::process::Command::new(bin)
            .args([
                "report-all",
                dir.join("kundt_kropina.toml").to_str().unwrap(),
                "--seed",
                "5",
                "--jobs",
                jobs,
            ])
            .env("FINSLER_LOG", "off")
            .output()
            .unwrap()
    };
    let (a, b) = (run("1"), run("8"));
    ensure(a.status.code() == Some(0) && b.status.code() == Some(0), || {
        "binary failed".into()
    })?;
    ensure(a.stdout == b.stdout && !a.stdout.is_empty(), || {
        "binary reports differ".into()
    })?;
    Ok(format!(
        "{n} library report pairs and the binary: byte-identical for 1 and 8 workers"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("identity suite", identity_suite),
        ("jet correctness", jet_vs_fd),
        ("CCNV Berwald", ccnv_berwald),
        ("Kundt Berwald with non-parallel β", kundt_berwald),
        ("no-go results", no_go),
        ("profile ODE and q fit", corollary3),
        ("biconditional", biconditional),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let label = format!("criterion {} ({name})", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t0.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("{label}: PASS [{secs:.1}s] {detail}"),
            Err(why) => {
                failed += 1;
                println!("{label}: FAIL [{secs:.1}s] {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
