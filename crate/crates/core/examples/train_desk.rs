//! Train the amortized inference model on small linear-Gaussian tasks with the
//! acyclicity constraint, writing `config.json`, `metrics.jsonl` and a
//! checkpoint.
//!
//! Run with `cargo run --release --example train_desk [steps] [out_dir]`.
//! The full desk schedule is 2000 steps (a few minutes on one core).

use std::path::PathBuf;

use causal_amortized::suite::desk_run;
use causal_amortized::train::Trainer;

fn main() -> causal_amortized::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);
    let out = args.next().map_or_else(|| PathBuf::from("target/train_desk"), PathBuf::from);

    let mut cfg = desk_run(0, true);
    cfg.schedule.steps = steps;
    cfg.schedule.log_every = 25;
    let mut trainer = Trainer::new(cfg)?;
    let history = trainer.run(Some(&out))?;

    println!("{:>6} {:>9} {:>9} {:>8} {:>9}", "step", "loss", "F_ema", "lambda", "lr");
    for r in history.iter().step_by(25) {
        println!("{:>6} {:>9.4} {:>9.4} {:>8.4} {:>9.2e}", r.step, r.loss, r.f_ema, r.lambda, r.lr);
    }
    println!("checkpoint written to {}", out.join("checkpoint").display());
    Ok(())
}
