//! Single-cell gene-expression simulator.
//!
//! Clean expression follows a chemical Langevin equation over the regulatory
//! graph, integrated by Euler–Maruyama. Each cell is an independent chain
//! started at the mean-field steady state of its cell type and snapshotted at
//! a random time after burn-in. Clean values are then passed through outlier
//! genes, library-size scaling, dropout and Poisson UMI sampling, and finally
//! CPM-normalized and divided by the median non-zero value.

use rand::Rng as _;
use rand_distr::{Beta, Distribution, LogNormal, Poisson, StandardNormal};

use crate::dataset::{Dataset, DatasetMeta, Task};
use crate::domain::{DomainConfig, DomainKind, GrnRanges, TechNoisePreset};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::{uniform, Rng};
use crate::scm::InterventionSpec;

/// Beta parameters of the per-gene probability of up-regulating its targets.
pub const POLARITY_ALPHA: f64 = 0.2588;
pub const POLARITY_BETA: f64 = 0.2499;

/// Kinetic parameters for `d` genes and `cell_types` cell types.
#[derive(Clone, Debug, PartialEq)]
pub struct GrnParams {
    pub d: usize,
    pub cell_types: usize,
    /// `d × d` signed interaction strengths, nonzero only on edges.
    pub k: Vec<f64>,
    /// `d × cell_types` master-regulator production rates.
    pub production: Vec<f64>,
    /// `d × d` Hill coefficients.
    pub hill: Vec<f64>,
    /// `d × d` half-response thresholds.
    pub half_response: Vec<f64>,
    pub decay: Vec<f64>,
    pub process_noise: Vec<f64>,
}

impl GrnParams {
    pub fn validate(&self, g: &Graph) -> Result<()> {
        let d = self.d;
        if g.d() != d
            || self.k.len() != d * d
            || self.hill.len() != d * d
            || self.half_response.len() != d * d
            || self.production.len() != d * self.cell_types
            || self.decay.len() != d
            || self.process_noise.len() != d
            || self.cell_types == 0
        {
            return Err(Error::invalid("GrnParams: inconsistent sizes"));
        }
        for i in 0..d {
            for j in 0..d {
                let e = i * d + j;
                if !g.has_edge(i, j) && self.k[e] != 0.0 {
                    return Err(Error::invalid(format!("interaction {i}->{j} set without an edge")));
                }
                if g.has_edge(i, j) && !(self.hill[e] > 0.0 && self.half_response[e] > 0.0) {
                    return Err(Error::invalid(format!("edge {i}->{j} needs positive Hill parameters")));
                }
            }
        }
        if self.decay.iter().any(|&l| !(l > 0.0)) || self.process_noise.iter().any(|&z| !(z >= 0.0)) {
            return Err(Error::invalid("decay must be positive and process noise non-negative"));
        }
        if self.production.iter().any(|&b| !(b > 0.0)) {
            return Err(Error::invalid("production rates must be positive"));
        }
        Ok(())
    }

    fn production_rate(&self, g: &Graph, j: usize, cell_type: usize, x: &[f64]) -> f64 {
        let d = self.d;
        let parents = g.parents(j);
        if parents.is_empty() {
            return self.production[j * self.cell_types + cell_type];
        }
        parents
            .iter()
            .map(|&i| {
                let e = i * d + j;
                let h = hill(x[i], self.hill[e], self.half_response[e]);
                let k = self.k[e];
                k.max(0.0) * h + (-k).max(0.0) * (1.0 - h)
            })
            .sum()
    }
}

pub fn hill(x: f64, gamma: f64, half: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let r = (half / x).powf(gamma);
    1.0 / (1.0 + r)
}

/// Integration settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Integrator {
    pub dt: f64,
    pub burn_in: usize,
    pub stride: usize,
    /// Snapshot after `burn_in + stride·U{0..=max_extra_strides}` steps.
    pub max_extra_strides: usize,
    /// Any state above this counts as divergence.
    pub state_cap: f64,
}

impl Default for Integrator {
    fn default() -> Self {
        Self {
            dt: 0.01,
            burn_in: 1000,
            stride: 10,
            max_extra_strides: 20,
            state_cap: 1e6,
        }
    }
}

/// Cell type of row `r`: rows cycle through the types.
pub fn cell_type_of(row: usize, cell_types: usize) -> usize {
    row % cell_types
}

/// Deterministic steady state of the noise-free dynamics for one cell type,
/// with `knocked_out` genes held at zero. Uses topological order when the
/// graph is acyclic and fixed-point iteration otherwise.
pub fn mean_field(g: &Graph, p: &GrnParams, cell_type: usize, knocked_out: &[bool]) -> Vec<f64> {
    let d = p.d;
    let mut x = vec![0.0; d];
    let rate = |j: usize, x: &[f64]| {
        if knocked_out[j] {
            0.0
        } else {
            p.production_rate(g, j, cell_type, x) / p.decay[j]
        }
    };
    match g.topological_order() {
        Some(order) => {
            for j in order {
                x[j] = rate(j, &x);
            }
        }
        None => {
            for _ in 0..100 {
                let next: Vec<f64> = (0..d).map(|j| rate(j, &x)).collect();
                x = next;
            }
        }
    }
    x
}

/// Set each edge's half-response threshold to the regulator's mean-field
/// expression averaged over cell types.
pub fn calibrate_half_response(g: &Graph, p: &mut GrnParams) {
    let d = p.d;
    let none = vec![false; d];
    let mut avg = vec![0.0; d];
    if g.is_acyclic() {
        for t in 0..p.cell_types {
            for (a, v) in avg.iter_mut().zip(mean_field(g, p, t, &none)) {
                *a += v / p.cell_types as f64;
            }
        }
    } else {
        let mr: Vec<f64> = (0..d)
            .filter(|&j| g.in_degree(j) == 0)
            .flat_map(|j| (0..p.cell_types).map(move |t| (j, t)))
            .map(|(j, t)| p.production[j * p.cell_types + t] / p.decay[j])
            .collect();
        let fill = if mr.is_empty() { 1.0 } else { mr.iter().sum::<f64>() / mr.len() as f64 };
        avg.fill(fill);
    }
    for i in 0..d {
        for j in 0..d {
            if g.has_edge(i, j) {
                p.half_response[i * d + j] = avg[i].max(1e-3);
            }
        }
    }
}

/// Simulate clean steady-state expression for `n` cells. Knockouts come
/// from `knockouts.mask`; their values are ignored.
pub fn simulate_clean(
    g: &Graph,
    params: &GrnParams,
    knockouts: &InterventionSpec,
    n: usize,
    integrator: &Integrator,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    params.validate(g)?;
    let d = params.d;
    if knockouts.n != n || knockouts.d != d {
        return Err(Error::invalid("knockout spec does not match n x d"));
    }
    let mut out = vec![0.0; n * d];
    for r in 0..n {
        let ko = &knockouts.mask[r * d..(r + 1) * d];
        let t = cell_type_of(r, params.cell_types);
        let start = mean_field(g, params, t, ko);
        let extra = integrator.stride * rng.random_range(0..=integrator.max_extra_strides);
        let steps = integrator.burn_in + extra;
        let cell = match run_chain(g, params, t, ko, &start, integrator.dt, steps, integrator.state_cap, rng) {
            Some(x) => x,
            None => {
                log::warn!("cell {r}: divergence, retrying with dt/2");
                run_chain(g, params, t, ko, &start, integrator.dt / 2.0, 2 * steps, integrator.state_cap, rng)
                    .ok_or_else(|| Error::Simulation(format!("cell {r} diverged at dt/2")))?
            }
        };
        out[r * d..(r + 1) * d].copy_from_slice(&cell);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn run_chain(
    g: &Graph,
    p: &GrnParams,
    cell_type: usize,
    knocked_out: &[bool],
    start: &[f64],
    dt: f64,
    steps: usize,
    cap: f64,
    rng: &mut Rng,
) -> Option<Vec<f64>> {
    let d = p.d;
    let sq = dt.sqrt();
    let mut x = start.to_vec();
    let mut prod = vec![0.0; d];
    for _ in 0..steps {
        for j in 0..d {
            prod[j] = if knocked_out[j] {
                0.0
            } else {
                p.production_rate(g, j, cell_type, &x)
            };
        }
        for j in 0..d {
            let w1: f64 = StandardNormal.sample(rng);
            let w2: f64 = StandardNormal.sample(rng);
            let decay = p.decay[j] * x[j];
            let dx = (prod[j] - decay) * dt + p.process_noise[j] * (prod[j].sqrt() * w1 + decay.sqrt() * w2) * sq;
            x[j] = (x[j] + dx).max(0.0);
            if !(x[j] <= cap) {
                return None;
            }
        }
    }
    Some(x)
}

pub type TechNoiseParams = TechNoisePreset;

pub fn validate_tech_noise(tn: &TechNoiseParams) -> Result<()> {
    if !(0.0..=1.0).contains(&tn.outlier_prob) {
        return Err(Error::invalid("outlier_prob outside [0,1]"));
    }
    if !(tn.outlier_sigma >= 0.0 && tn.library_sigma >= 0.0) || !tn.outlier_mu.is_finite() || !tn.library_mu.is_finite() {
        return Err(Error::invalid("log-normal parameters must be finite with non-negative sigma"));
    }
    if !(0.0..=100.0).contains(&tn.dropout_percentile) {
        return Err(Error::invalid("dropout_percentile outside [0,100]"));
    }
    if !(tn.dropout_temperature > 0.0) {
        return Err(Error::invalid("dropout_temperature must be positive"));
    }
    Ok(())
}

/// Non-negative integer counts.
#[derive(Clone, Debug, PartialEq)]
pub struct CountMatrix {
    pub n: usize,
    pub d: usize,
    pub counts: Vec<u64>,
}

impl CountMatrix {
    pub fn get(&self, r: usize, c: usize) -> u64 {
        self.counts[r * self.d + c]
    }

    pub fn zero_fraction(&self) -> f64 {
        if self.counts.is_empty() {
            return 0.0;
        }
        self.counts.iter().filter(|&&c| c == 0).count() as f64 / self.counts.len() as f64
    }
}

fn lognormal(mu: f64, sigma: f64, rng: &mut Rng) -> f64 {
    if sigma == 0.0 {
        mu.exp()
    } else {
        LogNormal::new(mu, sigma).expect("validated").sample(rng)
    }
}

/// Rank percentile of each entry within its row, in `[0, 100]`; ties share
/// their mean rank. A single-entry row scores 100.
pub fn rank_percentiles(row: &[f64]) -> Vec<f64> {
    let m = row.len();
    if m <= 1 {
        return vec![100.0; m];
    }
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
    let mut out = vec![0.0; m];
    let mut s = 0;
    while s < m {
        let mut e = s;
        while e + 1 < m && row[idx[e + 1]] == row[idx[s]] {
            e += 1;
        }
        let rank = (s + e) as f64 / 2.0;
        for &i in &idx[s..=e] {
            out[i] = 100.0 * rank / (m - 1) as f64;
        }
        s = e + 1;
    }
    out
}

/// Scale each non-zero row of an `n × d` matrix to sum `totals[r]`.
pub fn scale_rows(values: &mut [f64], d: usize, totals: &[f64]) {
    for (row, &t) in values.chunks_mut(d).zip(totals) {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v *= t / s);
        }
    }
}

/// Outlier genes, library size, dropout, then Poisson counts.
pub fn apply_technical_noise(clean: &[f64], n: usize, d: usize, tn: &TechNoiseParams, rng: &mut Rng) -> Result<CountMatrix> {
    validate_tech_noise(tn)?;
    if clean.len() != n * d || clean.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid("clean expression must be a finite non-negative n x d matrix"));
    }
    let mut x = clean.to_vec();

    for j in 0..d {
        if rng.random_bool(tn.outlier_prob) {
            let m = lognormal(tn.outlier_mu, tn.outlier_sigma, rng);
            (0..n).for_each(|r| x[r * d + j] *= m);
        }
    }

    let totals: Vec<f64> = (0..n).map(|_| lognormal(tn.library_mu, tn.library_sigma, rng)).collect();
    scale_rows(&mut x, d, &totals);

    for r in 0..n {
        let row = &mut x[r * d..(r + 1) * d];
        let q = rank_percentiles(row);
        for (v, q) in row.iter_mut().zip(q) {
            let keep = crate::autodiff::logistic((q - tn.dropout_percentile) / tn.dropout_temperature);
            if !rng.random_bool(keep.clamp(0.0, 1.0)) {
                *v = 0.0;
            }
        }
    }

    let counts = x
        .iter()
        .map(|&m| {
            if m > 0.0 {
                Poisson::new(m).map(|p| p.sample(rng) as u64).unwrap_or(0)
            } else {
                0
            }
        })
        .collect();
    Ok(CountMatrix { n, d, counts })
}

/// CPM-normalize each row, then divide by the median non-zero entry. The
/// flag is set when the matrix has no non-zero entries.
pub fn standardize_counts(counts: &CountMatrix) -> (Vec<f64>, bool) {
    let d = counts.d;
    let mut x: Vec<f64> = counts.counts.iter().map(|&c| c as f64).collect();
    scale_rows(&mut x, d, &vec![1e6; counts.n]);
    let mut nz: Vec<f64> = x.iter().copied().filter(|&v| v > 0.0).collect();
    if nz.is_empty() {
        log::warn!("all-zero count matrix left unnormalized");
        return (x, true);
    }
    nz.sort_by(f64::total_cmp);
    let k = nz.len();
    let median = if k % 2 == 1 { nz[k / 2] } else { 0.5 * (nz[k / 2 - 1] + nz[k / 2]) };
    x.iter_mut().for_each(|v| *v /= median);
    (x, false)
}

/// Draw kinetic parameters; interaction signs follow a per-regulator
/// polarity drawn from the fitted Beta distribution.
pub fn sample_grn_params(g: &Graph, ranges: &GrnRanges, rng: &mut Rng) -> GrnParams {
    let d = g.d();
    let (lo, hi) = ranges.cell_types;
    let c = rng.random_range(lo..=hi);
    let polarity = Beta::new(POLARITY_ALPHA, POLARITY_BETA).expect("valid Beta");
    let mut k = vec![0.0; d * d];
    let mut hillc = vec![1.0; d * d];
    for i in 0..d {
        let up: f64 = polarity.sample(rng);
        for j in g.children(i) {
            let mag = uniform(rng, ranges.interaction.0, ranges.interaction.1);
            k[i * d + j] = if rng.random_bool(up.clamp(0.0, 1.0)) { mag } else { -mag };
            hillc[i * d + j] = uniform(rng, ranges.hill.0, ranges.hill.1);
        }
    }
    let production = (0..d * c).map(|_| uniform(rng, ranges.production.0, ranges.production.1)).collect();
    let decay = (0..d).map(|_| uniform(rng, ranges.decay.0, ranges.decay.1)).collect();
    let process_noise = (0..d).map(|_| uniform(rng, ranges.process_noise.0, ranges.process_noise.1)).collect();
    let mut p = GrnParams {
        d,
        cell_types: c,
        k,
        production,
        hill: hillc,
        half_response: vec![1.0; d * d],
        decay,
        process_noise,
    };
    calibrate_half_response(g, &mut p);
    p
}

/// Knockout layout: the first `n/2` rows are observational, the remaining
/// rows knock out genes `0, 1, …, d−1, 0, …` in turn.
pub fn knockout_design(n: usize, d: usize) -> InterventionSpec {
    let mut s = InterventionSpec::none(n, d);
    for (m, r) in (n / 2..n).enumerate() {
        s.set(r, m % d, 0.0);
    }
    s
}

/// Simulate a full task for an already sampled graph.
pub fn build_grn_task_for_graph(g: &Graph, domain: &DomainConfig, n: usize, seed: u64, rng: &mut Rng) -> Result<Task> {
    let d = g.d();
    if d < 2 || n < 2 {
        return Err(Error::invalid("grn tasks need d >= 2 and n >= 2"));
    }
    let params = sample_grn_params(g, domain.active_grn(), rng);
    let presets = domain.active_tech_presets();
    if presets.is_empty() {
        return Err(Error::invalid("no technical-noise presets configured"));
    }
    let preset = &presets[rng.random_range(0..presets.len())];
    let ko = knockout_design(n, d);
    let clean = simulate_clean(g, &params, &ko, n, &Integrator::default(), rng)?;
    let counts = apply_technical_noise(&clean, n, d, preset, rng)?;
    let (values, _) = standardize_counts(&counts);
    let mut data = Dataset::new(n, d, values, ko.mask)?;
    if domain.standardize {
        data.standardize();
    }
    Ok(Task {
        graph: g.clone(),
        data,
        meta: DatasetMeta {
            n,
            d,
            domain: DomainKind::Grn.name().into(),
            seed,
            standardized: domain.standardize,
            cell_types: Some(params.cell_types),
            tech_noise_preset: Some(preset.name.clone()),
        },
        graph_family: String::new(),
    })
}

/// Sample a graph from the domain's (extraction) families and simulate it.
pub fn build_grn_task(domain: &DomainConfig, d: usize, n: usize, seed: u64, rng: &mut Rng) -> Result<Task> {
    domain.validate()?;
    let models = domain.graph_models();
    let model = &models[rng.random_range(0..models.len())];
    let g = model.sample(d, rng)?;
    let mut task = build_grn_task_for_graph(&g, domain, n, seed, rng)?;
    task.graph_family = model.family_name().into();
    Ok(task)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn quiet_preset() -> TechNoiseParams {
        TechNoisePreset {
            name: "test".into(),
            outlier_prob: 0.0,
            outlier_mu: 0.0,
            outlier_sigma: 0.0,
            library_mu: 8.0,
            library_sigma: 0.0,
            dropout_percentile: 0.0,
            dropout_temperature: 1e-9,
        }
    }

    fn single_mr(b: f64, lambda: f64, zeta: f64) -> (Graph, GrnParams) {
        let g = Graph::empty(1);
        let p = GrnParams {
            d: 1,
            cell_types: 1,
            k: vec![0.0],
            production: vec![b],
            hill: vec![1.0],
            half_response: vec![1.0],
            decay: vec![lambda],
            process_noise: vec![zeta],
        };
        (g, p)
    }

    #[test]
    fn master_regulator_steady_state() {
        let (g, p) = single_mr(2.0, 0.8, 0.4);
        let n = 10_000;
        let mut rng = stream(11, &[]);
        let x = simulate_clean(&g, &p, &InterventionSpec::none(n, 1), n, &Integrator::default(), &mut rng).unwrap();
        let mean = x.iter().sum::<f64>() / n as f64;
        assert!((mean / 2.5 - 1.0).abs() < 0.05, "mean {mean}");
        assert!(x.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn knockout_silences_gene() {
        let (g, p) = single_mr(3.0, 0.7, 0.5);
        let mut rng = stream(12, &[]);
        let ko = InterventionSpec::all_rows(200, 1, 0, 0.0);
        let x = simulate_clean(&g, &p, &ko, 200, &Integrator::default(), &mut rng).unwrap();
        assert!(x.iter().all(|&v| v < 1e-3 * 3.0 / 0.7));
    }

    #[test]
    fn activator_tracks_regulator_level() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let mut p = GrnParams {
            d: 2,
            cell_types: 2,
            k: vec![0.0, 5.0, 0.0, 0.0],
            production: vec![0.5, 4.0, 1.0, 1.0],
            hill: vec![1.0, 2.0, 1.0, 1.0],
            half_response: vec![1.0; 4],
            decay: vec![0.8, 0.8],
            process_noise: vec![0.3, 0.3],
        };
        calibrate_half_response(&g, &mut p);
        let mut rng = stream(13, &[]);
        let n = 2000;
        let x = simulate_clean(&g, &p, &InterventionSpec::none(n, 2), n, &Integrator::default(), &mut rng).unwrap();
        let mean_child = |t: usize| {
            let v: Vec<f64> = (0..n).filter(|r| r % 2 == t).map(|r| x[r * 2 + 1]).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean_child(1) > mean_child(0) + 0.5);
    }

    #[test]
    fn hill_shape() {
        assert_eq!(hill(0.0, 2.0, 1.0), 0.0);
        assert!((hill(1.0, 2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(hill(100.0, 2.0, 1.0) > 0.999);
    }

    #[test]
    fn zero_matrix_stays_zero() {
        let mut rng = stream(14, &[]);
        let mut tn = quiet_preset();
        tn.library_sigma = 1e-12;
        let c = apply_technical_noise(&[0.0; 12], 3, 4, &tn, &mut rng).unwrap();
        assert!(c.counts.iter().all(|&v| v == 0));
        let (norm, flagged) = standardize_counts(&c);
        assert!(flagged);
        assert!(norm.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sharp_zero_threshold_adds_no_dropout() {
        let mut rng = stream(15, &[]);
        let tn = quiet_preset();
        let clean: Vec<f64> = (0..40).map(|i| 1.0 + (i % 4) as f64).collect();
        let c = apply_technical_noise(&clean, 10, 4, &tn, &mut rng).unwrap();
        // only the row minimum sits at the 0th percentile
        for r in 0..10 {
            assert!((1..4).all(|j| c.get(r, j) > 0));
        }
    }

    #[test]
    fn higher_dropout_percentile_more_zeros() {
        let clean: Vec<f64> = (0..500).map(|i| 1.0 + (i * 7 % 13) as f64).collect();
        let mut wins = 0;
        for s in 0..50 {
            let mut lo = default_preset();
            lo.dropout_percentile = 20.0;
            let mut hi = lo.clone();
            hi.dropout_percentile = 70.0;
            let a = apply_technical_noise(&clean, 50, 10, &lo, &mut stream(16, &[s])).unwrap();
            let b = apply_technical_noise(&clean, 50, 10, &hi, &mut stream(16, &[s])).unwrap();
            wins += usize::from(b.zero_fraction() > a.zero_fraction());
        }
        assert_eq!(wins, 50);
    }

    fn default_preset() -> TechNoiseParams {
        crate::domain::default_tech_presets().remove(0)
    }

    #[test]
    fn library_scaling_keeps_ratios() {
        let mut x = vec![1.0, 2.0, 5.0, 0.0, 3.0, 6.0];
        scale_rows(&mut x, 3, &[80.0, 9.0]);
        assert!((x[1] / x[0] - 2.0).abs() < 1e-12 && (x[2] / x[0] - 5.0).abs() < 1e-12);
        assert!((x[5] / x[4] - 2.0).abs() < 1e-12 && x[3] == 0.0);
        assert!((x[0] + x[1] + x[2] - 80.0).abs() < 1e-9);
    }

    #[test]
    fn cpm_median_hand_case() {
        let c = CountMatrix {
            n: 1,
            d: 3,
            counts: vec![1, 1, 2],
        };
        let (x, flagged) = standardize_counts(&c);
        assert!(!flagged);
        for (a, b) in x.iter().zip([1.0, 1.0, 2.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cpm_commutes_with_gene_permutation() {
        let c = CountMatrix {
            n: 2,
            d: 3,
            counts: vec![4, 0, 7, 1, 9, 2],
        };
        let p = CountMatrix {
            n: 2,
            d: 3,
            counts: vec![7, 4, 0, 2, 1, 9],
        };
        let (a, _) = standardize_counts(&c);
        let (b, _) = standardize_counts(&p);
        assert_eq!(b, vec![a[2], a[0], a[1], a[5], a[3], a[4]]);
        assert_eq!(a[1], 0.0);
    }

    #[test]
    fn rank_percentile_ties() {
        assert_eq!(rank_percentiles(&[3.0, 1.0, 3.0]), vec![75.0, 0.0, 75.0]);
        assert_eq!(rank_percentiles(&[5.0]), vec![100.0]);
    }

    #[test]
    fn grn_task_layout_and_knockouts() {
        let dom = DomainConfig::grn();
        let (n, d) = (100, 5);
        let t = build_grn_task(&dom, d, n, 0, &mut stream(17, &[])).unwrap();
        assert!(t.graph.is_acyclic());
        for j in 0..d {
            let hits = (n / 2..n).filter(|&r| t.data.is_intervened(r, j)).count();
            assert!(hits >= n / (2 * d));
            let zeros = (n / 2..n).filter(|&r| t.data.is_intervened(r, j) && t.data.value(r, j) == 0.0).count();
            assert_eq!(zeros, hits);
        }
        assert!((0..n / 2).all(|r| (0..d).all(|j| !t.data.is_intervened(r, j))));
        assert!(t.meta.cell_types.is_some() && t.meta.tech_noise_preset.is_some());
        let again = build_grn_task(&dom, d, n, 0, &mut stream(17, &[])).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn strong_activation_correlates_after_noise() {
        // With only two genes, library scaling and CPM fix each row's total
        // and force a negative correlation, so the pair sits among eight
        // unrelated genes.
        let d = 10;
        let g = Graph::from_edges(d, &[(0, 1)]).unwrap();
        let c = 5;
        let mut k = vec![0.0; d * d];
        k[1] = 6.0;
        let mut production = vec![2.0; d * c];
        for (t, b) in [0.3, 1.0, 2.0, 3.0, 4.0].into_iter().enumerate() {
            production[t] = b;
        }
        let mut p = GrnParams {
            d,
            cell_types: c,
            k,
            production,
            hill: vec![2.0; d * d],
            half_response: vec![1.0; d * d],
            decay: vec![0.8; d],
            process_noise: vec![0.2; d],
        };
        calibrate_half_response(&g, &mut p);
        let mut rng = stream(18, &[]);
        let n = 500;
        let clean = simulate_clean(&g, &p, &InterventionSpec::none(n, d), n, &Integrator::default(), &mut rng).unwrap();
        let counts = apply_technical_noise(&clean, n, d, &default_preset(), &mut rng).unwrap();
        let (x, _) = standardize_counts(&counts);
        let a: Vec<f64> = (0..n).map(|r| x[r * d]).collect();
        let b: Vec<f64> = (0..n).map(|r| x[r * d + 1]).collect();
        assert!(pearson(&a, &b) > 0.2, "{}", pearson(&a, &b));
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }
}
