//! Simulate single-cell expression from a gene regulatory network with
//! knockout interventions, then pass it through each technical-noise preset.
//!
//! Run with `cargo run --example grn_knockouts`.

use causal_amortized::domain::DomainConfig;
use causal_amortized::grn::{
    apply_technical_noise, knockout_design, mean_field, sample_grn_params, simulate_clean, Integrator,
};
use causal_amortized::rng::stream;
use causal_amortized::simulate::indexed_task;

fn main() -> causal_amortized::Result<()> {
    let dom = DomainConfig::grn();
    let (d, cells) = (10, 1000);
    let mut rng = stream(5, &[]);
    let g = dom.graph_models()[0].sample(d, &mut rng)?;
    let params = sample_grn_params(&g, dom.active_grn(), &mut rng);
    let ko = knockout_design(cells, d);
    let clean = simulate_clean(&g, &params, &ko, cells, &Integrator::default(), &mut rng)?;
    println!("{d} genes, {} regulatory edges, {} cell types", g.num_edges(), params.cell_types);

    // Unperturbed cells against the deterministic steady state of cell type 0.
    let steady = mean_field(&g, &params, 0, &vec![false; d]);
    let rows: Vec<usize> = (0..cells / 2).step_by(params.cell_types).collect();
    println!("gene  masters  steady   simulated mean (type 0, unperturbed)");
    for j in 0..d.min(5) {
        let mean = rows.iter().map(|&r| clean[r * d + j]).sum::<f64>() / rows.len() as f64;
        let master = if g.in_degree(j) == 0 { "yes" } else { "no" };
        println!("{j:>4}  {master:>7}  {:>6.3}   {mean:.3}", steady[j]);
    }

    println!("\npreset               zeros   zeros among knocked-out entries");
    for preset in dom.active_tech_presets() {
        let counts = apply_technical_noise(&clean, cells, d, preset, &mut rng)?;
        let (mut hit, mut total) = (0, 0);
        for r in 0..cells {
            for c in 0..d {
                if ko.mask[r * d + c] {
                    total += 1;
                    hit += usize::from(counts.get(r, c) == 0);
                }
            }
        }
        println!(
            "{:<20} {:>5.1}%  {:>5.1}%",
            preset.name,
            100.0 * counts.zero_fraction(),
            100.0 * hit as f64 / total as f64
        );
    }

    let task = indexed_task(&dom, 8, 400, 1, 0)?;
    println!(
        "\nfull task: family={} preset={} interventional rows={}/{}",
        task.graph_family,
        task.meta.tech_noise_preset.as_deref().unwrap_or("-"),
        task.data.interventional_rows(),
        task.data.n()
    );
    Ok(())
}
