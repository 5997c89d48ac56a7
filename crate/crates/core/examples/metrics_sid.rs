//! Structural Hamming and structural intervention distances, thresholding,
//! and ranking metrics on small hand-made graphs.
//!
//! Run with `cargo run --example metrics_sid`.

use causal_amortized::graph::Graph;
use causal_amortized::metrics::{auprc, auroc, evaluate, off_diagonal, shd, sid};
use causal_amortized::model::EdgeBeliefs;

fn main() -> causal_amortized::Result<()> {
    // Chain 0 → 1 → 2 → 3.
    let truth = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)])?;
    let candidates = [
        ("truth", vec![(0, 1), (1, 2), (2, 3)]),
        ("empty", vec![]),
        ("reversed", vec![(1, 0), (2, 1), (3, 2)]),
        ("one flip", vec![(0, 1), (2, 1), (2, 3)]),
        ("extra edge", vec![(0, 1), (1, 2), (2, 3), (0, 3)]),
        ("cyclic", vec![(0, 1), (1, 2), (2, 3), (3, 0)]),
    ];
    println!("{:<12} {:>4} {:>4}  cyclic fallback", "prediction", "SHD", "SID");
    for (name, edges) in candidates {
        let pred = Graph::from_edges(4, &edges)?;
        let s = sid(&truth, &pred)?;
        println!("{name:<12} {:>4} {:>4}  {}", shd(&truth, &pred), s.value, s.cyclic_fallback);
    }

    // Soft beliefs: ranking metrics use every off-diagonal entry.
    #[rustfmt::skip]
    let theta = vec![
        0.0, 0.9, 0.2, 0.1,
        0.75, 0.0, 0.7, 0.1,
        0.1, 0.4, 0.0, 0.6,
        0.2, 0.1, 0.3, 0.0,
    ];
    let beliefs = EdgeBeliefs::new(4, theta)?;
    let (scores, labels) = off_diagonal(&beliefs, &truth);
    println!("\nAUROC {:.3}  AUPRC {:.3}", auroc(&scores, &labels).unwrap_or(f64::NAN), auprc(&scores, &labels).unwrap_or(f64::NAN));
    let report = evaluate(&beliefs, &truth, 0.5)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
