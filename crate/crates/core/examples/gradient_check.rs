//! Compares analytic gradients of every differentiable kernel against
//! central finite differences in f64.

use spikepose::numcore::gradcheck::{run_suite, REL_TOL};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cases: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(20);
    let reports = run_suite(0, cases)?;
    println!("{:<10} {:>5} {:>12}  tolerance {REL_TOL:e}", "op", "cases", "max rel err");
    for r in &reports {
        println!(
            "{:<10} {:>5} {:>12.3e}  {}",
            r.op,
            r.cases,
            r.max_rel_error,
            if r.passed() { "ok" } else { "FAILED" }
        );
    }
    if reports.iter().any(|r| !r.passed()) {
        std::process::exit(3);
    }
    Ok(())
}
