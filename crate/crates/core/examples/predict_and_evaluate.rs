//! Predict edge beliefs for held-out tasks and score them: SHD, SID,
//! precision/recall/F1 at τ = 0.5, AUROC and AUPRC, aggregated as mean ± SE.
//!
//! Run with `cargo run --release --example predict_and_evaluate [checkpoint_dir]`.
//! Without a checkpoint the model is randomly initialized, which ranks edges
//! near chance. Train one first with the `train_desk` example.

use std::path::PathBuf;

use causal_amortized::metrics::{aggregate, MeanSe};
use causal_amortized::model::{Model, ModelConfig};
use causal_amortized::rng::stream;
use causal_amortized::suite::{base_rate, eval_domain, evaluate_model, heldout_tasks};

fn show(name: &str, m: Option<MeanSe>) {
    match m {
        Some(m) => println!("  {name:<10} {:.3} ± {:.3}", m.mean, m.se),
        None => println!("  {name:<10} undefined"),
    }
}

fn main() -> causal_amortized::Result<()> {
    let model = match std::env::args().nth(1).map(PathBuf::from) {
        Some(dir) => Model::load(&dir)?,
        None => Model::init(ModelConfig::default(), &mut stream(0, &[]))?,
    };
    for d in [5, 10] {
        let tasks = heldout_tasks(&eval_domain(), d, 100, 20, 99)?;
        let reports = evaluate_model(&model, &tasks)?;
        let agg = aggregate(&reports);
        println!("d = {d} ({} tasks, edge base rate {:.3}):", agg.tasks, base_rate(&tasks));
        show("SHD", agg.shd);
        show("SID", agg.sid);
        show("F1", agg.f1);
        show("AUROC", agg.auroc);
        show("AUPRC", agg.auprc);
        println!("  cyclic predictions: {:.0}%", 100.0 * agg.cyclic_fraction);
    }

    let task = &heldout_tasks(&eval_domain(), 4, 100, 1, 7)?[0];
    let beliefs = model.predict(&task.data)?;
    println!("\ntrue graph:\n{}beliefs:\n{}", task.graph.to_csv(), beliefs.to_csv());
    Ok(())
}
