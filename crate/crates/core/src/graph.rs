//! Directed graphs and the random-graph families used as causal structures.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{permutation, Rng};

/// Directed graph over `d` nodes; entry `(i, j)` set means an edge `i → j`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Graph {
    d: usize,
    adj: Vec<bool>,
}

impl Graph {
    pub fn empty(d: usize) -> Self {
        Self {
            d,
            adj: vec![false; d * d],
        }
    }

    /// Build from an edge list; self-loops are rejected.
    pub fn from_edges(d: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::empty(d);
        for &(i, j) in edges {
            if i >= d || j >= d || i == j {
                return Err(Error::invalid(format!("invalid edge {i}->{j} for d={d}")));
            }
            g.adj[i * d + j] = true;
        }
        Ok(g)
    }

    /// Build from a row-major 0/1 matrix. The diagonal must be zero.
    pub fn from_adjacency(d: usize, adj: Vec<bool>) -> Result<Self> {
        if adj.len() != d * d {
            return Err(Error::invalid(format!("adjacency of length {} for d={d}", adj.len())));
        }
        if (0..d).any(|i| adj[i * d + i]) {
            return Err(Error::invalid("adjacency has a self-loop"));
        }
        Ok(Self { d, adj })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.d + j]
    }

    pub fn set_edge(&mut self, i: usize, j: usize, present: bool) {
        assert_ne!(i, j, "self-loops are not allowed");
        self.adj[i * self.d + j] = present;
    }

    pub fn adjacency(&self) -> &[bool] {
        &self.adj
    }

    pub fn num_edges(&self) -> usize {
        self.adj.iter().filter(|&&e| e).count()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let d = self.d;
        self.adj
            .iter()
            .enumerate()
            .filter(|(_, &e)| e)
            .map(move |(k, _)| (k / d, k % d))
    }

    pub fn parents(&self, j: usize) -> Vec<usize> {
        (0..self.d).filter(|&i| self.has_edge(i, j)).collect()
    }

    pub fn children(&self, i: usize) -> Vec<usize> {
        (0..self.d).filter(|&j| self.has_edge(i, j)).collect()
    }

    pub fn in_degree(&self, j: usize) -> usize {
        (0..self.d).filter(|&i| self.has_edge(i, j)).count()
    }

    pub fn out_degree(&self, i: usize) -> usize {
        (0..self.d).filter(|&j| self.has_edge(i, j)).count()
    }

    /// Kahn's algorithm; `None` when the graph has a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let d = self.d;
        let mut indeg: Vec<usize> = (0..d).map(|j| self.in_degree(j)).collect();
        let mut ready: Vec<usize> = (0..d).rev().filter(|&j| indeg[j] == 0).collect();
        let mut order = Vec::with_capacity(d);
        while let Some(i) = ready.pop() {
            order.push(i);
            for j in (0..d).rev() {
                if self.has_edge(i, j) {
                    indeg[j] -= 1;
                    if indeg[j] == 0 {
                        ready.push(j);
                    }
                }
            }
        }
        (order.len() == d).then_some(order)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }

    /// Relabel nodes: node `i` of `self` becomes node `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        let mut g = Self::empty(self.d);
        for (i, j) in self.edges() {
            g.adj[perm[i] * self.d + perm[j]] = true;
        }
        g
    }

    /// Subgraph induced by `nodes`, relabelled to `0..nodes.len()` in the given order.
    pub fn induced(&self, nodes: &[usize]) -> Self {
        let k = nodes.len();
        let mut g = Self::empty(k);
        for (a, &i) in nodes.iter().enumerate() {
            for (b, &j) in nodes.iter().enumerate() {
                if i != j && self.has_edge(i, j) {
                    g.adj[a * k + b] = true;
                }
            }
        }
        g
    }

    /// Undirected neighbour lists of the skeleton.
    pub fn skeleton_neighbors(&self) -> Vec<Vec<usize>> {
        (0..self.d)
            .map(|i| (0..self.d).filter(|&j| self.has_edge(i, j) || self.has_edge(j, i)).collect())
            .collect()
    }

    /// Remove back-edges of a depth-first search visiting nodes in index
    /// order. The result is acyclic; it equals `self` when `self` is a DAG.
    pub fn remove_back_edges(&self) -> Self {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Active,
            Done,
        }
        let d = self.d;
        let mut out = self.clone();
        let mut mark = vec![Mark::New; d];
        for root in 0..d {
            if mark[root] != Mark::New {
                continue;
            }
            // explicit stack of (node, next child to inspect)
            let mut stack = vec![(root, 0usize)];
            mark[root] = Mark::Active;
            while let Some(&mut (v, ref mut next)) = stack.last_mut() {
                if *next < d {
                    let w = *next;
                    *next += 1;
                    if !self.has_edge(v, w) {
                        continue;
                    }
                    match mark[w] {
                        Mark::Active => out.adj[v * d + w] = false,
                        Mark::New => {
                            mark[w] = Mark::Active;
                            stack.push((w, 0));
                        }
                        Mark::Done => {}
                    }
                } else {
                    mark[v] = Mark::Done;
                    stack.pop();
                }
            }
        }
        out
    }

    /// `d` rows of `d` comma-separated 0/1 values.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for i in 0..self.d {
            let row: Vec<&str> = (0..self.d).map(|j| if self.has_edge(i, j) { "1" } else { "0" }).collect();
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let rows: Vec<Vec<f64>> = crate::dataset::parse_csv_matrix(text)?;
        let d = rows.len();
        let mut adj = Vec::with_capacity(d * d);
        for row in &rows {
            if row.len() != d {
                return Err(Error::invalid(format!("graph CSV row of length {} for d={d}", row.len())));
            }
            for &v in row {
                match v {
                    v if v == 0.0 => adj.push(false),
                    v if v == 1.0 => adj.push(true),
                    _ => return Err(Error::invalid(format!("graph CSV entry {v} is not 0/1"))),
                }
            }
        }
        Self::from_adjacency(d, adj)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Sidecar metadata written next to a graph CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphMeta {
    pub d: usize,
    pub family: String,
    pub seed: u64,
}

/// A random-graph family with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GraphModel {
    ErdosRenyi {
        edges_per_node: f64,
    },
    ScaleFree {
        edges_per_node: f64,
        power: f64,
    },
    WattsStrogatz {
        lattice_degree: usize,
        rewire_prob: f64,
    },
    StochasticBlock {
        blocks: usize,
        edges_per_node: f64,
        damping: f64,
    },
    Geometric {
        radius: f64,
    },
    /// Modularity-greedy extraction from a synthetic source network.
    SubgraphExtraction {
        source: Box<GraphModel>,
        source_nodes: usize,
        percentile: f64,
    },
}

impl GraphModel {
    pub fn family_name(&self) -> &'static str {
        match self {
            GraphModel::ErdosRenyi { .. } => "erdos_renyi",
            GraphModel::ScaleFree { .. } => "scale_free",
            GraphModel::WattsStrogatz { .. } => "watts_strogatz",
            GraphModel::StochasticBlock { .. } => "stochastic_block",
            GraphModel::Geometric { .. } => "geometric",
            GraphModel::SubgraphExtraction { .. } => "subgraph_extraction",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("{}: {m}", self.family_name())));
        match self {
            GraphModel::ErdosRenyi { edges_per_node } if !(*edges_per_node >= 0.0) => bad("edges_per_node < 0"),
            GraphModel::ScaleFree { edges_per_node, power } if !(*edges_per_node >= 0.0) || !power.is_finite() => {
                bad("edges_per_node < 0 or non-finite power")
            }
            GraphModel::WattsStrogatz { rewire_prob, .. } if !(0.0..=1.0).contains(rewire_prob) => {
                bad("rewire_prob outside [0,1]")
            }
            GraphModel::StochasticBlock {
                blocks,
                edges_per_node,
                damping,
            } if *blocks == 0 || !(*edges_per_node >= 0.0) || !(0.0..=1.0).contains(damping) => {
                bad("need blocks >= 1, edges_per_node >= 0, damping in [0,1]")
            }
            GraphModel::Geometric { radius } if !(*radius >= 0.0) => bad("radius < 0"),
            GraphModel::SubgraphExtraction { source, percentile, .. } => {
                if !(*percentile > 0.0 && *percentile <= 100.0) {
                    return bad("percentile outside (0,100]");
                }
                source.validate()
            }
            _ => Ok(()),
        }
    }

    /// Sample a graph over `d` nodes.
    pub fn sample(&self, d: usize, rng: &mut Rng) -> Result<Graph> {
        self.validate()?;
        if d == 0 {
            return Err(Error::invalid("graph needs d >= 1"));
        }
        Ok(match *self {
            GraphModel::ErdosRenyi { edges_per_node } => sample_erdos_renyi(d, edges_per_node, rng),
            GraphModel::ScaleFree { edges_per_node, power } => sample_scale_free(d, edges_per_node, power, rng),
            GraphModel::WattsStrogatz {
                lattice_degree,
                rewire_prob,
            } => sample_watts_strogatz(d, lattice_degree, rewire_prob, rng),
            GraphModel::StochasticBlock {
                blocks,
                edges_per_node,
                damping,
            } => sample_stochastic_block(d, blocks, edges_per_node, damping, rng),
            GraphModel::Geometric { radius } => sample_geometric(d, radius, rng),
            GraphModel::SubgraphExtraction {
                ref source,
                source_nodes,
                percentile,
            } => {
                let src = source.sample(source_nodes.max(d), rng)?;
                let ex = extract_subgraph(&src, d, percentile, rng)?;
                // the extraction order follows the greedy walk; hide it
                let perm = permutation(d, rng);
                ex.graph.relabel(&perm)
            }
        })
    }
}

/// Orient an undirected skeleton by a uniformly random node order.
///
/// Equivalent to relabelling the nodes at random and keeping the upper
/// triangular half of the adjacency matrix.
fn orient_by_random_order(d: usize, skeleton: &[(usize, usize)], rng: &mut Rng) -> Graph {
    let rank = permutation(d, rng);
    let mut g = Graph::empty(d);
    for &(a, b) in skeleton {
        let (i, j) = if rank[a] < rank[b] { (a, b) } else { (b, a) };
        g.set_edge(i, j, true);
    }
    g
}

/// Each unordered pair receives an edge with probability `min(1, 2e/(d-1))`,
/// oriented along a random order. Expected edge count is `e·d`.
pub fn sample_erdos_renyi(d: usize, edges_per_node: f64, rng: &mut Rng) -> Graph {
    if d < 2 {
        return Graph::empty(d);
    }
    let p = (2.0 * edges_per_node / (d as f64 - 1.0)).min(1.0);
    let mut skeleton = Vec::new();
    for a in 0..d {
        for b in a + 1..d {
            if rng.random_bool(p) {
                skeleton.push((a, b));
            }
        }
    }
    orient_by_random_order(d, &skeleton, rng)
}

/// Sequential preferential attachment with weights `(degree + 1)^power`.
///
/// Each arriving node attaches to `e` existing nodes on average (the
/// fractional part is resolved by a coin flip), without replacement. The
/// whole graph points either from existing to new nodes or the reverse,
/// chosen by a fair coin; nodes are relabelled at random afterwards.
pub fn sample_scale_free(d: usize, edges_per_node: f64, power: f64, rng: &mut Rng) -> Graph {
    let toward_new = rng.random_bool(0.5);
    let mut degree = vec![0usize; d];
    let mut edges = Vec::new();
    let whole = edges_per_node.floor();
    let frac = edges_per_node - whole;
    for t in 1..d {
        let mut m = whole as usize + usize::from(frac > 0.0 && rng.random_bool(frac));
        m = m.min(t);
        let mut candidates: Vec<usize> = (0..t).collect();
        for _ in 0..m {
            let weights: Vec<f64> = candidates.iter().map(|&c| ((degree[c] + 1) as f64).powf(power)).collect();
            let total: f64 = weights.iter().sum();
            let mut r = rng.random::<f64>() * total;
            let mut pick = candidates.len() - 1;
            for (k, w) in weights.iter().enumerate() {
                if r < *w {
                    pick = k;
                    break;
                }
                r -= w;
            }
            let target = candidates.swap_remove(pick);
            edges.push((target, t));
        }
        for &(s, _) in edges.iter().rev().take(m) {
            degree[s] += 1;
        }
        degree[t] += m;
    }
    let perm = permutation(d, rng);
    let mut g = Graph::empty(d);
    for (old, new) in edges {
        let (i, j) = if toward_new { (old, new) } else { (new, old) };
        g.set_edge(perm[i], perm[j], true);
    }
    g
}

/// Undirected skeleton of a ring lattice where every node links to its
/// `k/2` nearest neighbours on each side, with each lattice edge rewired to
/// a uniformly random new endpoint with probability `rewire_prob`.
pub fn watts_strogatz_skeleton(d: usize, k: usize, rewire_prob: f64, rng: &mut Rng) -> Vec<(usize, usize)> {
    let half = (k / 2).min(d.saturating_sub(1) / 2);
    let mut present = vec![false; d * d];
    let mut lattice = Vec::new();
    for i in 0..d {
        for s in 1..=half {
            let j = (i + s) % d;
            if !present[i * d + j] {
                present[i * d + j] = true;
                present[j * d + i] = true;
                lattice.push((i, j));
            }
        }
    }
    let mut out = Vec::with_capacity(lattice.len());
    for (i, j) in lattice {
        if rewire_prob > 0.0 && rng.random_bool(rewire_prob) {
            let options: Vec<usize> = (0..d).filter(|&w| w != i && !present[i * d + w]).collect();
            if let Some(&w) = options.choose(rng) {
                present[i * d + j] = false;
                present[j * d + i] = false;
                present[i * d + w] = true;
                present[w * d + i] = true;
                out.push((i, w));
                continue;
            }
        }
        out.push((i, j));
    }
    out
}

pub fn sample_watts_strogatz(d: usize, k: usize, rewire_prob: f64, rng: &mut Rng) -> Graph {
    let skeleton = watts_strogatz_skeleton(d, k, rewire_prob, rng);
    orient_by_random_order(d, &skeleton, rng)
}

/// Nodes get uniform block labels; intra-block pairs connect with
/// probability `p`, inter-block pairs with `damping·p`, where `p` is tuned
/// on the realised partition to give `e·d` expected edges.
pub fn sample_stochastic_block(d: usize, blocks: usize, edges_per_node: f64, damping: f64, rng: &mut Rng) -> Graph {
    let label: Vec<usize> = (0..d).map(|_| rng.random_range(0..blocks.max(1))).collect();
    let mut intra = 0usize;
    let mut inter = 0usize;
    for a in 0..d {
        for b in a + 1..d {
            if label[a] == label[b] {
                intra += 1;
            } else {
                inter += 1;
            }
        }
    }
    let denom = intra as f64 + damping * inter as f64;
    let p = if denom > 0.0 {
        (edges_per_node * d as f64 / denom).min(1.0)
    } else {
        0.0
    };
    let mut skeleton = Vec::new();
    for a in 0..d {
        for b in a + 1..d {
            let q = if label[a] == label[b] { p } else { (damping * p).min(1.0) };
            if q > 0.0 && rng.random_bool(q) {
                skeleton.push((a, b));
            }
        }
    }
    orient_by_random_order(d, &skeleton, rng)
}

/// Nodes placed uniformly in the unit square, linked within `radius`.
pub fn sample_geometric(d: usize, radius: f64, rng: &mut Rng) -> Graph {
    let pts: Vec<(f64, f64)> = (0..d).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
    let mut skeleton = Vec::new();
    for a in 0..d {
        for b in a + 1..d {
            let (dx, dy) = (pts[a].0 - pts[b].0, pts[a].1 - pts[b].1);
            if (dx * dx + dy * dy).sqrt() <= radius {
                skeleton.push((a, b));
            }
        }
    }
    orient_by_random_order(d, &skeleton, rng)
}

/// Newman modularity of a node partition of the undirected skeleton,
/// `Q = Σ_c (e_c/m − (deg_c/2m)²)`. `community[i]` labels node `i`.
pub fn modularity(g: &Graph, community: &[usize]) -> f64 {
    let nb = g.skeleton_neighbors();
    let m2: usize = nb.iter().map(Vec::len).sum();
    if m2 == 0 {
        return 0.0;
    }
    let m = m2 as f64 / 2.0;
    let k = community.iter().copied().max().map_or(0, |c| c + 1);
    let mut inside = vec![0.0; k];
    let mut degree = vec![0.0; k];
    for (i, ns) in nb.iter().enumerate() {
        degree[community[i]] += ns.len() as f64;
        for &j in ns {
            if j > i && community[j] == community[i] {
                inside[community[i]] += 1.0;
            }
        }
    }
    inside
        .iter()
        .zip(&degree)
        .map(|(e, deg)| e / m - (deg / (2.0 * m)).powi(2))
        .sum()
}

/// Outcome of [`extract_subgraph`].
#[derive(Clone, Debug, PartialEq)]
pub struct Extraction {
    /// Source node ids in the order they were added.
    pub nodes: Vec<usize>,
    /// Induced directed subgraph, node `a` being `nodes[a]`.
    pub graph: Graph,
    /// Set when growth stalled on every attempt and a smaller set was returned.
    pub incomplete: bool,
}

pub const EXTRACTION_RESTARTS: usize = 10;

/// Modularity-greedy subgraph extraction with a uniformly random seed node.
pub fn extract_subgraph(source: &Graph, d_target: usize, percentile: f64, rng: &mut Rng) -> Result<Extraction> {
    check_extraction_args(source, d_target, percentile)?;
    let mut best: Option<Vec<usize>> = None;
    for _ in 0..EXTRACTION_RESTARTS {
        let seed = rng.random_range(0..source.d());
        let nodes = grow_modular_set(source, d_target, percentile, seed, rng);
        if nodes.len() == d_target {
            return Ok(finish_extraction(source, nodes, false));
        }
        if best.as_ref().is_none_or(|b| nodes.len() > b.len()) {
            best = Some(nodes);
        }
    }
    let nodes = best.unwrap_or_default();
    log::warn!(
        "subgraph extraction stalled at {} of {d_target} nodes after {EXTRACTION_RESTARTS} restarts",
        nodes.len()
    );
    Ok(finish_extraction(source, nodes, true))
}

/// Modularity-greedy extraction from a fixed seed node (no restarts).
pub fn extract_subgraph_from(
    source: &Graph,
    d_target: usize,
    percentile: f64,
    seed_node: usize,
    rng: &mut Rng,
) -> Result<Extraction> {
    check_extraction_args(source, d_target, percentile)?;
    if seed_node >= source.d() {
        return Err(Error::invalid("seed node out of range"));
    }
    let nodes = grow_modular_set(source, d_target, percentile, seed_node, rng);
    let incomplete = nodes.len() < d_target;
    Ok(finish_extraction(source, nodes, incomplete))
}

fn check_extraction_args(source: &Graph, d_target: usize, percentile: f64) -> Result<()> {
    if d_target == 0 || d_target > source.d() {
        return Err(Error::invalid(format!(
            "cannot extract {d_target} nodes from a source of {}",
            source.d()
        )));
    }
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::invalid("percentile outside (0,100]"));
    }
    Ok(())
}

fn finish_extraction(source: &Graph, nodes: Vec<usize>, incomplete: bool) -> Extraction {
    Extraction {
        graph: source.induced(&nodes),
        nodes,
        incomplete,
    }
}

/// Grow a node set from `seed` by adding, at each step, a neighbour drawn
/// uniformly from the candidates whose addition ranks in the top
/// `percentile` percent by modularity of the two-way split {set, rest}.
/// Ties in modularity rank lower node ids first.
fn grow_modular_set(source: &Graph, d_target: usize, percentile: f64, seed: usize, rng: &mut Rng) -> Vec<usize> {
    let nb = source.skeleton_neighbors();
    let n = source.d();
    let m2: usize = nb.iter().map(Vec::len).sum();
    let m = m2 as f64 / 2.0;
    let mut in_set = vec![false; n];
    let mut nodes = vec![seed];
    in_set[seed] = true;
    let mut e_in = 0.0;
    let mut deg_in = nb[seed].len() as f64;
    let mut e_out = m - nb[seed].len() as f64;
    while nodes.len() < d_target {
        let mut frontier: Vec<usize> = nodes
            .iter()
            .flat_map(|&v| nb[v].iter().copied())
            .filter(|&w| !in_set[w])
            .collect();
        frontier.sort_unstable();
        frontier.dedup();
        if frontier.is_empty() {
            break;
        }
        let mut scored: Vec<(f64, usize)> = frontier
            .iter()
            .map(|&v| {
                let to_set = nb[v].iter().filter(|&&w| in_set[w]).count() as f64;
                let to_rest = nb[v].len() as f64 - to_set;
                let q = if m > 0.0 {
                    let (ei, eo) = (e_in + to_set, e_out - to_rest);
                    let di = deg_in + nb[v].len() as f64;
                    let dout = 2.0 * m - di;
                    ei / m - (di / (2.0 * m)).powi(2) + eo / m - (dout / (2.0 * m)).powi(2)
                } else {
                    0.0
                };
                (q, v)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let keep = ((percentile / 100.0 * scored.len() as f64).ceil() as usize).clamp(1, scored.len());
        let (_, v) = scored[rng.random_range(0..keep)];
        let to_set = nb[v].iter().filter(|&&w| in_set[w]).count() as f64;
        e_in += to_set;
        e_out -= nb[v].len() as f64 - to_set;
        deg_in += nb[v].len() as f64;
        in_set[v] = true;
        nodes.push(v);
    }
    nodes
}
