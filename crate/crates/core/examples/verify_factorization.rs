//! Check that negative-sampling optima factorize the shifted log targets.
//!
//! ```text
//! cargo run --release --example verify_factorization -- [problems] [seed]
//! ```

use std::time::Instant;

use citegcl::losses::theory::{
    random_bipartite_problem, random_citation_problem, verify_factorization, FactorizationProblem, VerifyOptions,
};

fn main() -> citegcl::Result<()> {
    let mut args = std::env::args().skip(1);
    let count: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for i in 0..count {
        let s = seed + i;
        let problems = [
            FactorizationProblem::Bipartite(random_bipartite_problem(2 + (s % 4) as usize, 6 + (s % 15) as usize, s)),
            FactorizationProblem::Citation(random_citation_problem(3 + (s % 4) as usize, s)),
        ];
        for p in &problems {
            let report = verify_factorization(p, &VerifyOptions::for_problem(p))?;
            worst = worst.max(report.max_deviation);
            if !report.passed {
                failures += 1;
            }
            println!(
                "{:<9} seed {:>3}  nodes {:>2}  steps {:>6}  max dev {:.2e}  residual {:.2e}  {}",
                report.kind,
                s,
                p.node_count(),
                report.steps_run,
                report.max_deviation,
                report.max_residual,
                report.verdict()
            );
        }
    }
    println!("worst deviation {worst:.2e}, {failures} failed, {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
