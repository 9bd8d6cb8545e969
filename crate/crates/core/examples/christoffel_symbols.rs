//! Christoffel symbols and ∇β of symbolic metrics.

use finsler_berwald::expr::Expr;
use finsler_berwald::fixtures::ccnv_metric;
use finsler_berwald::geometry::MetricModel;

fn main() -> finsler_berwald::Result<()> {
    // polar coordinates on the plane: g = diag(1, r²)
    let polar = MetricModel::diagonal(&["r", "th"], &["1", "r^2"])?;
    let gam = polar.christoffel(&[2.0, 0.0])?;
    println!("polar plane at r = 2:");
    println!("  Γ^th_(r th) = {}  (1/r)", gam.get(1, 0, 1));
    println!("  Γ^r_(th th) = {}  (−r)", gam.get(0, 1, 1));

    // pp-wave: 2H du² + 2 du dv + dx1² + dx2², H = x1²
    let ident = vec![
        vec![Expr::num(1.0), Expr::num(0.0)],
        vec![Expr::num(0.0), Expr::num(1.0)],
    ];
    let pp = ccnv_metric(&"x1^2".parse()?, &[Expr::num(0.0), Expr::num(0.0)], &ident, 4)?
        .with_beta_str(&["1", "0", "0", "0"])?;
    let x = [0.0, 0.0, 1.0, 0.0];
    let gam = pp.christoffel(&x)?;
    println!("pp-wave with H = x1² at x1 = 1, coordinates {:?}:", pp.coords());
    for a in 0..4 {
        for b in 0..4 {
            for c in b..4 {
                let v = gam.get(a, b, c);
                if v != 0.0 {
                    println!("  Γ^{}_({} {}) = {v}", pp.coords()[a], pp.coords()[b], pp.coords()[c]);
                }
            }
        }
    }
    println!(
        "  ∇β for β = du (parallel, so zero): max |∇β| = {:e}",
        pp.nabla_beta(&x)?.amax()
    );
    Ok(())
}
