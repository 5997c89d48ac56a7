//! Simulate linear and random-Fourier-feature tasks, compare a linear-Gaussian
//! sample covariance with its closed form, and round-trip a task directory.
//!
//! Run with `cargo run --example simulate_linear`.

use causal_amortized::dataset::Task;
use causal_amortized::domain::{DomainConfig, NoiseFamily};
use causal_amortized::graph::GraphModel;
use causal_amortized::oracles::{linear_gaussian_covariance, sample_covariance};
use causal_amortized::rng::stream;
use causal_amortized::scm::{ancestral_sample, sample_mechanisms, InterventionSpec, MechanismKind, NoiseSpec};
use causal_amortized::simulate::indexed_task;

fn main() -> causal_amortized::Result<()> {
    let d = 5;
    let mut rng = stream(2024, &[]);
    let g = GraphModel::ErdosRenyi { edges_per_node: 1.5 }.sample(d, &mut rng)?;
    let mechs = sample_mechanisms(&g, &DomainConfig::linear(), &mut rng)?;

    let mut w = vec![0.0; d * d];
    for (j, m) in mechs.iter().enumerate() {
        if let MechanismKind::Linear { weights, .. } = &m.kind {
            for (&i, &x) in m.parents.iter().zip(weights) {
                w[i * d + j] = x;
            }
        }
    }
    let sd = vec![1.0; d];
    let n = 50_000;
    let noise = NoiseSpec::homoscedastic(NoiseFamily::Gaussian, sd.clone());
    let data = ancestral_sample(&g, &mechs, &noise, &InterventionSpec::none(n, d), n, &mut rng)?;
    let want = linear_gaussian_covariance(&w, &sd.iter().map(|s| s * s).collect::<Vec<_>>());
    let got = sample_covariance(data.values(), n, d);
    let worst = want.iter().zip(&got).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = want.iter().map(|a| a.abs()).fold(0.0, f64::max);
    println!(
        "{} edges; worst |Σ̂ − Σ| = {worst:.4} against max |Σ| = {scale:.2} (n = {n})",
        g.num_edges()
    );

    for dom in [DomainConfig::linear(), DomainConfig::rff()] {
        let task = indexed_task(&dom, 8, 200, 7, 0)?;
        let x = &task.data;
        println!(
            "{:<6} family={:<20} edges={:<3} interventional rows={:<3} standardized={}",
            task.meta.domain,
            task.graph_family,
            task.graph.num_edges(),
            x.interventional_rows(),
            task.meta.standardized
        );
    }

    let task = indexed_task(&DomainConfig::linear(), 6, 100, 7, 3)?;
    let dir = std::env::temp_dir().join(format!("simulate_linear_{}", std::process::id()));
    task.write_dir(&dir)?;
    let back = Task::read_dir(&dir)?;
    println!("task directory {} round-trips: {}", dir.display(), back == task);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
