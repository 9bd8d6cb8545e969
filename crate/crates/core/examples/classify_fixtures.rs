//! Classify every canned fixture and print a verdict table.

use std::time::Instant;

use finsler_berwald::finsler::{classify_berwald, ClassifyOptions};
use finsler_berwald::fixtures::canned_fixtures;

fn main() -> finsler_berwald::Result<()> {
    let opts = ClassifyOptions::default();
    println!(
        "{:<30} {:<13} {:<13} {:>10} {:>10} {:>10} {:>6}",
        "fixture", "expected", "verdict", "spread", "id(rel)", "id(abs)", "acc"
    );
    for f in canned_fixtures() {
        let t0 = Instant::now();
        let r = classify_berwald(&f.lagrangian, &f.metric, &f.sampler(7), &opts)?;
        let ids = r.identities.unwrap_or_default();
        println!(
            "{:<30} {:<13} {:<13} {:>10.2e} {:>10.2e} {:>10.2e} {:>6.2}  {:?}",
            f.name,
            f.expected.map_or("-".to_string(), |v| v.to_string()),
            r.verdict.to_string(),
            r.max_spread,
            ids.max_relative(),
            ids.max(),
            r.sampling.acceptance_rate,
            t0.elapsed(),
        );
        if let Some(n) = &r.note {
            println!("    note: {n}");
        }
    }
    Ok(())
}
