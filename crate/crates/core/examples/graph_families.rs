//! Sample one graph from every random-graph family and report its shape.
//!
//! Run with `cargo run --example graph_families`.

use causal_amortized::graph::{extract_subgraph, modularity, sample_erdos_renyi, GraphModel};
use causal_amortized::rng::{permutation, stream};

fn main() -> causal_amortized::Result<()> {
    let d = 20;
    let er = GraphModel::ErdosRenyi { edges_per_node: 2.0 };
    let models = vec![
        er.clone(),
        GraphModel::ScaleFree { edges_per_node: 2.0, power: 1.0 },
        GraphModel::WattsStrogatz { lattice_degree: 2, rewire_prob: 0.3 },
        GraphModel::StochasticBlock { blocks: 4, edges_per_node: 2.0, damping: 0.1 },
        GraphModel::Geometric { radius: 0.3 },
        GraphModel::SubgraphExtraction { source: Box::new(er), source_nodes: 100, percentile: 20.0 },
    ];
    println!("{:<22} {:>6} {:>8} {:>8} {:>8}", "family", "edges", "max_in", "max_out", "acyclic");
    for (k, model) in models.iter().enumerate() {
        model.validate()?;
        let g = model.sample(d, &mut stream(7, &[k as u64]))?;
        let max_in = (0..d).map(|j| g.in_degree(j)).max().unwrap_or(0);
        let max_out = (0..d).map(|i| g.out_degree(i)).max().unwrap_or(0);
        println!(
            "{:<22} {:>6} {:>8} {:>8} {:>8}",
            model.family_name(),
            g.num_edges(),
            max_in,
            max_out,
            g.is_acyclic()
        );
    }

    // Greedy extraction picks a set that is well separated from the rest of the source.
    let mut rng = stream(11, &[]);
    let source = sample_erdos_renyi(200, 1.5, &mut rng);
    let ex = extract_subgraph(&source, d, 20.0, &mut rng)?;
    let mut side = vec![0; source.d()];
    for &v in &ex.nodes {
        side[v] = 1;
    }
    let random: Vec<usize> = permutation(source.d(), &mut rng).iter().map(|&v| usize::from(v < d)).collect();
    println!("\ntwo-way modularity of a {d}-node set in a 200-node ER source:");
    println!("  greedy extraction: {:.3} ({} internal edges)", modularity(&source, &side), ex.graph.num_edges());
    println!("  random node set:   {:.3}", modularity(&source, &random));

    let g = models[0].sample(6, &mut stream(3, &[]))?;
    println!("\nadjacency (row = parent) of a 6-node ER graph:\n{}", g.to_csv());
    Ok(())
}
