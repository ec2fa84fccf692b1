//! Prints the staged curriculum and replays the P2 mixture sampler.

use std::collections::BTreeMap;

use omnistack::curriculum::{builtin_stages, context_for, find_stage, MixtureSampler, DEFAULT_BUDGET_SCALE};
use rand::SeedableRng;

fn main() -> anyhow::Result<()> {
    let stages = builtin_stages(DEFAULT_BUDGET_SCALE)?;
    for s in &stages {
        let mix: Vec<String> = s.fractions().iter().map(|(k, f)| format!("{k}={f:.3}")).collect();
        println!(
            "{:<4} {:<24} budget {:>9} ctx {:>4} triggers {} | {}",
            s.name,
            s.freeze_policy.to_string(),
            s.token_budget,
            context_for(s),
            s.triggers.len(),
            mix.join(" ")
        );
    }
    let p2 = find_stage(&stages, "P2")?;
    let sampler = MixtureSampler::new(&p2.mixture)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut counts = BTreeMap::new();
    for _ in 0..100_000 {
        *counts.entry(sampler.draw(&mut rng)).or_insert(0usize) += 1;
    }
    for (k, c) in counts {
        println!("P2 {k}: {:.4}", c as f64 / 100_000.0);
    }
    Ok(())
}
