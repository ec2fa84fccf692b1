//! Runs all fourteen acceptance criteria against a freshly trained toy run
//! and prints one line per criterion.

mod common;

use omnistack::eval::{run_criterion, EvalContext, CRITERIA, SHIPPED_SEED};

fn main() {
    let started = std::time::Instant::now();
    let run = common::trained_run();
    println!("toy curriculum trained in {:.0}s", started.elapsed().as_secs_f64());
    let ctx = EvalContext { seed: SHIPPED_SEED, run_dir: Some(run.path().to_path_buf()) };
    let mut failed = Vec::new();
    for c in CRITERIA {
        let result = run_criterion(c.id, &ctx).unwrap_or_else(|e| panic!("criterion {}: {e}", c.id));
        println!("{}", result.line());
        if !result.passed() {
            failed.push(c.name);
        }
    }
    println!(
        "acceptance: {}/{} passed in {:.0}s",
        CRITERIA.len() - failed.len(),
        CRITERIA.len(),
        started.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        eprintln!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
