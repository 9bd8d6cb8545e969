//! Parse an expression and read exact derivatives off its truncated Taylor jet.

use finsler_berwald::expr::{Bindings, Expr};
use finsler_berwald::jets::{Jet, Layout};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let e: Expr = "x^2 * sin(y) + exp(-x*y)".parse()?;
    let (x0, y0) = (0.7, 1.3);

    // two variables, derivatives up to total order 3
    let layout = Layout::fiber_only(2, 3);
    let b = Bindings::new()
        .with("x", Jet::variable(&layout, 0, x0))
        .with("y", Jet::variable(&layout, 1, y0));
    let j = e.eval(&b)?;

    println!("f(x, y) = {e}   at (x, y) = ({x0}, {y0})");
    println!("{:<10} {:>22} {:>22}", "∂", "jet", "closed form");
    let ex = (-x0 * y0).exp();
    let rows: [(&str, [u8; 2], f64); 5] = [
        ("f", [0, 0], x0 * x0 * y0.sin() + ex),
        ("∂x", [1, 0], 2.0 * x0 * y0.sin() - y0 * ex),
        ("∂y", [0, 1], x0 * x0 * y0.cos() - x0 * ex),
        ("∂x∂y", [1, 1], 2.0 * x0 * y0.cos() - ex + x0 * y0 * ex),
        ("∂x∂x∂x", [3, 0], -y0.powi(3) * ex),
    ];
    for (name, alpha, exact) in rows {
        println!("{name:<10} {:>22.15e} {:>22.15e}", j.derivative(&alpha), exact);
    }

    // plain f64 evaluation goes through the same code path
    let v = e.eval(&Bindings::new().with("x", x0).with("y", y0))?;
    println!("f64 evaluation: {v:.15e}");
    Ok(())
}
