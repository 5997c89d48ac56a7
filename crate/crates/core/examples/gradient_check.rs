//! Check reverse-mode gradients of random tape programs against central
//! finite differences.
//!
//! Run with `cargo run --example gradient_check [programs]`.

use causal_amortized::oracles::gradient_check;

fn main() -> causal_amortized::Result<()> {
    let programs: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let mut worst = 0.0f64;
    for seed in 0..programs {
        let check = gradient_check(seed)?;
        worst = worst.max(check.max_rel_err);
        println!(
            "program {seed:>2}: {:>3} coordinates, max rel err {:.2e}  [{}]",
            check.coordinates,
            check.max_rel_err,
            check.ops.join(" → ")
        );
    }
    println!("worst relative error over {programs} programs: {worst:.2e} (tolerance 1e-4)");
    Ok(())
}
