//! The (α,β) Berwald residual for a structured T: zero on a Berwald Kundt
//! geometry, bounded away from zero when β is not parallel on flat space.

use finsler_berwald::alpha_beta::{
    corollary2_pointwise_residual, corollary2_residual, structured_t_at, StructuredTParams,
};
use finsler_berwald::fixtures::{fixture, ExpectedT};
use finsler_berwald::geometry::TensorField;

fn main() -> finsler_berwald::Result<()> {
    let f = fixture("kundt_kropina").expect("canned fixture");
    let ExpectedT::Kundt(t) = &f.expected_t else {
        unreachable!()
    };
    let profile = f.profile().expect("(α,β) fixture");
    let sample = f.sampler(2).sample(&f.lagrangian, &f.metric)?;
    let mut worst = (0.0f64, 0.0f64);
    for p in sample.usable_bases().flat_map(|b| b.points()).take(64) {
        worst.0 = worst.0.max(corollary2_residual(&f.metric, profile, t, &p)?);
        worst.1 = worst
            .1
            .max(corollary2_pointwise_residual(&f.metric, profile, t, &p)?.amax());
    }
    println!(
        "{} with the predicted T: max |R| {:.1e}, max |∂̇R| {:.1e}",
        f.name, worst.0, worst.1
    );
    let (l, r, s) = t.coefficients(&f.metric, &[0.2, 0.1, -0.3, 0.4])?;
    println!("  T coefficients at a sample point: λ = {l:.4}, ρ = {r:.4}, σ = {s:.4}");
    let direct = structured_t_at(&f.metric, &[0.2, 0.1, -0.3, 0.4], l, r, s)?;
    println!("  |T| = {:.4}", direct.max_abs());

    // flat plane, β = x1 dx2: no T of the structured family fits
    let f = fixture("flat_randers_nonparallel").expect("canned fixture");
    let profile = f.profile().expect("(α,β) fixture");
    let sample = f.sampler(2).sample(&f.lagrangian, &f.metric)?;
    let pts: Vec<_> = sample.usable_bases().flat_map(|b| b.points()).take(32).collect();
    println!("{}: smallest max |R| over a grid of structured T", f.name);
    let mut best = (f64::INFINITY, 0.0, 0.0, 0.0);
    for l in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        for r in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            for s in [-1.0, -0.5, 0.0, 0.5, 1.0] {
                let t = StructuredTParams::new(&l.to_string(), &r.to_string(), &s.to_string())?;
                let mut worst = 0.0f64;
                for p in &pts {
                    if let Ok(v) = corollary2_residual(&f.metric, profile, &t as &dyn TensorField, p) {
                        worst = worst.max(v);
                    }
                }
                if worst < best.0 {
                    best = (worst, l, r, s);
                }
            }
        }
    }
    println!(
        "  best: {:.3} at λ = {}, ρ = {}, σ = {}",
        best.0, best.1, best.2, best.3
    );
    Ok(())
}
