//! Geodesic spray, nonlinear connection and affine coefficients of a Randers geometry.

use finsler_berwald::alpha_beta::{build_ab_lagrangian, profile_randers};
use finsler_berwald::finsler::SprayJets;
use finsler_berwald::geometry::MetricModel;
use finsler_berwald::jets::TangentPoint;
use nalgebra::DMatrix;

fn rows(m: &DMatrix<f64>) -> String {
    let r: Vec<String> = m
        .row_iter()
        .map(|r| format!("{:.6?}", r.iter().collect::<Vec<_>>()))
        .collect();
    r.join(" ")
}

fn main() -> finsler_berwald::Result<()> {
    // flat plane with the closed, non-parallel one-form β = x1 dx2
    let m = MetricModel::euclidean(2).with_beta_str(&["0", "x1"])?;
    let lag = build_ab_lagrangian(&m, profile_randers())?;
    let x = vec![0.3, -0.2];
    for v in [vec![1.0, 0.5], vec![-0.4, 1.0]] {
        let p = TangentPoint::new(x.clone(), v.clone())?;
        let sj = SprayJets::compute(&lag, &m, &p, 4)?;
        println!("ẋ = {v:?}, L = {:.6}", lag.value(&m, &p)?);
        println!("  g^L = {}", rows(&sj.l_metric()));
        println!("  G   = {:.6?}", sj.spray_value());
        println!("  N   = {}", rows(&sj.connection()));
        let xi = sj.affine();
        println!("  Ξ^1_12 = {:.6}, Ξ^2_11 = {:.6}", xi.get(0, 0, 1), xi.get(1, 0, 0));
        let ids = sj.identity_residuals();
        println!(
            "  identities: δL {:.1e}, compatibility {:.1e}, torsion {:.1e}",
            ids.delta_l, ids.compat, ids.torsion
        );
    }
    println!("Ξ depends on ẋ, so this geometry is not Berwald.");
    Ok(())
}
