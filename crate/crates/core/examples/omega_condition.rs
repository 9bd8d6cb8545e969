//! The Ω-form Berwald condition with extracted and predicted T, plus the
//! conformal special case where it reduces to the gradient of σ.

use finsler_berwald::berwald::{
    extract_t, omega_from_lagrangian, tavakol_residual, theorem1_residual, ConformalFactor,
};
use finsler_berwald::fixtures::{fixture, ExpectedT};
use finsler_berwald::geometry::{ConstantT, TensorField};
use finsler_berwald::jets::TangentPoint;

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

fn main() -> finsler_berwald::Result<()> {
    let f = fixture("kundt_kropina").expect("canned fixture");
    let (lag, m) = (&f.lagrangian, &f.metric);
    let sample = f.sampler(4).sample(lag, m)?;
    let omega = omega_from_lagrangian(lag);
    let ExpectedT::Kundt(predicted) = &f.expected_t else {
        unreachable!()
    };

    println!(
        "{}: Ω = L/A, residual R_a = ∂_aΩ − Γ^b_ac ẋ^c ∂̇_bΩ − T^b_ac ẋ^c (∂̇_bΩ + 2ẋ_bΩ/A)",
        f.name
    );
    for b in sample.usable_bases().take(4) {
        let (t, spread) = extract_t(lag, m, &b.x, &b.fibers)?;
        let t = ConstantT(t);
        let gap = t.0.max_abs_diff(&predicted.at(m, &b.x)?);
        let mut worst = 0.0f64;
        for v in &b.fibers {
            let p = TangentPoint::new(b.x.clone(), v.clone())?;
            let om = omega.value(m, &p)?.abs().max(1.0);
            worst = worst.max(sup(&theorem1_residual(&omega, m, &t, &p)?) / om);
        }
        println!(
            "  x = {:.3?}: Ξ spread {spread:.1e}, |T − T_predicted| {gap:.1e}, max |R|/|Ω| {worst:.1e}",
            b.x
        );
    }

    let conformal = fixture("conformal_flat").expect("canned fixture");
    let sigma = ConformalFactor::new("0.3*x1 - 0.2*x2*x3".parse()?);
    let p = TangentPoint::new(vec![0.1, 0.5, -0.4], vec![1.0, 0.2, 0.3])?;
    println!(
        "{}: ∂σ = {:.3?}; e^{{2σ}}A is Riemannian, so Berwald with T built from ∂σ",
        conformal.name,
        tavakol_residual(&sigma, &conformal.metric, &p)?
    );
    Ok(())
}
