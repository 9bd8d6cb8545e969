//! Recover q in ∇β = q D for a generalized Kropina Kundt geometry, then check
//! that the profile solves its ODE and matches the closed-form solution.

use finsler_berwald::alpha_beta::{
    kropina_ode_general_solution, omega_ode_residual, profile_generalized_kropina, solve_q, KropinaParams,
};
use finsler_berwald::fixtures::{dv_of, fixture, ExpectedT};

fn main() -> finsler_berwald::Result<()> {
    let f = fixture("kundt_kropina").expect("canned fixture");
    let k = f.kropina.expect("Kropina fixture");
    let ExpectedT::Kundt(t) = &f.expected_t else {
        unreachable!()
    };
    println!("{}: (n, m, c) = ({}, {}, {})", f.name, k.n, k.m, k.c);
    println!("{:>32} {:>12} {:>10} {:>12}", "x", "q", "fit res", "q / ∂_vH");
    for x in [[0.1, 0.2, -0.3, 0.4], [-0.5, 0.3, 0.2, -0.1], [0.7, -0.6, 0.5, 0.9]] {
        let fit = solve_q(&f.metric, &k, &x)?;
        let dv = dv_of(&t.h, &f.metric, &x)?;
        println!(
            "{:>32} {:>12.6} {:>10.1e} {:>12.6}",
            format!("{x:?}"),
            fit.q,
            fit.residual,
            fit.q / dv
        );
    }
    println!("1/(c(1−n)) = {}", 1.0 / (k.c * (1.0 - k.n)));

    // Ω is fixed by the ratio σ/λ = nc/m
    let lambda = 1.0;
    let sigma = k.sigma_over_lambda() * lambda;
    let profile = profile_generalized_kropina(k)?;
    println!("profile ODE with λ = {lambda}, σ = {sigma}:");
    for s in [0.25, 0.5, 1.0, 2.0, 4.0] {
        let res = omega_ode_residual(&k, lambda, sigma, s)?;
        let closed = kropina_ode_general_solution(&k, lambda, sigma, s)?;
        println!(
            "  s = {s:<5} residual {res:>9.1e}   Ω {:.6}   closed form {closed:.6}",
            profile.value(s)?
        );
    }

    // a different parameter set, for contrast
    let k = KropinaParams::new(3.0, 2.0, 1.5)?;
    let sigma = k.sigma_over_lambda();
    let res = omega_ode_residual(&k, 1.0, sigma, 0.8)?;
    println!("(n, m, c) = (3, 2, 1.5): ODE residual at s = 0.8 is {res:.1e}");
    Ok(())
}
