//! Structural causal models with linear and random-Fourier-feature
//! mechanisms, additive (optionally heteroscedastic) noise and hard
//! interventions.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Cauchy, Distribution, Normal};

use crate::dataset::{Dataset, DatasetMeta, Task};
use crate::domain::{DomainConfig, DomainKind, MechanismRanges, NoiseFamily};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::{signed_uniform, uniform, Rng};

/// A random function `b + c·√(2/m)·Σ_k cos(ω_k·x + φ_k)` whose draws have
/// the squared-exponential covariance `c²·exp(−‖x−x′‖²/2ℓ²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RffFunction {
    pub bias: f64,
    pub output_scale: f64,
    pub length_scale: f64,
    /// `m × inputs`, row-major.
    pub frequencies: Vec<f64>,
    pub phases: Vec<f64>,
}

impl RffFunction {
    pub fn sample(inputs: usize, features: usize, bias: f64, output_scale: f64, length_scale: f64, rng: &mut Rng) -> Self {
        let normal = Normal::new(0.0, 1.0 / length_scale).expect("positive length scale");
        let frequencies = (0..features * inputs).map(|_| normal.sample(rng)).collect();
        let phases = (0..features).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        Self {
            bias,
            output_scale,
            length_scale,
            frequencies,
            phases,
        }
    }

    pub fn features(&self) -> usize {
        self.phases.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let m = self.features();
        let k = x.len();
        let mut acc = 0.0;
        for (f, phase) in self.phases.iter().enumerate() {
            let w = &self.frequencies[f * k..(f + 1) * k];
            let arg: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + phase;
            acc += arg.cos();
        }
        self.bias + self.output_scale * (2.0 / m as f64).sqrt() * acc
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MechanismKind {
    Linear { weights: Vec<f64>, bias: f64 },
    Rff(RffFunction),
}

/// The deterministic part `f_j` of one node's structural equation.
#[derive(Clone, Debug, PartialEq)]
pub struct Mechanism {
    pub parents: Vec<usize>,
    pub kind: MechanismKind,
}

impl Mechanism {
    pub fn eval(&self, x_parents: &[f64]) -> f64 {
        match &self.kind {
            MechanismKind::Linear { weights, bias } => {
                bias + weights.iter().zip(x_parents).map(|(w, x)| w * x).sum::<f64>()
            }
            MechanismKind::Rff(f) => f.eval(x_parents),
        }
    }
}

/// Evaluate an RFF mechanism on its parents' values.
pub fn eval_rff(mech: &Mechanism, x_parents: &[f64]) -> Result<f64> {
    match &mech.kind {
        MechanismKind::Rff(f) => Ok(f.eval(x_parents)),
        MechanismKind::Linear { .. } => Err(Error::invalid("eval_rff on a linear mechanism")),
    }
}

/// Per-node noise: `h_j(x_pa)·ε_j`, `ε_j` from `family` with scale `scales[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub scales: Vec<f64>,
    /// `h_j = softplus(g_j) + 0.1` for a random function `g_j`, when present.
    pub heteroscedastic: Option<Vec<RffFunction>>,
}

pub const HETEROSCEDASTIC_FLOOR: f64 = 0.1;

impl NoiseSpec {
    pub fn homoscedastic(family: NoiseFamily, scales: Vec<f64>) -> Self {
        Self {
            family,
            scales,
            heteroscedastic: None,
        }
    }

    fn multiplier(&self, j: usize, x_parents: &[f64]) -> f64 {
        match &self.heteroscedastic {
            Some(h) => softplus(h[j].eval(x_parents)) + HETEROSCEDASTIC_FLOOR,
            None => 1.0,
        }
    }

    fn draw(&self, j: usize, rng: &mut Rng) -> f64 {
        let s = self.scales[j];
        match self.family {
            NoiseFamily::Gaussian => {
                let z: f64 = rand_distr::StandardNormal.sample(rng);
                s * z
            }
            NoiseFamily::Laplace => {
                let u: f64 = rng.random::<f64>() - 0.5;
                -s * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            NoiseFamily::Cauchy => Cauchy::new(0.0, s).expect("positive scale").sample(rng),
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Hard interventions per sample: where `mask` is set, the variable is
/// clamped to the matching entry of `values`.
#[derive(Clone, Debug, PartialEq)]
pub struct InterventionSpec {
    pub n: usize,
    pub d: usize,
    pub mask: Vec<bool>,
    pub values: Vec<f64>,
}

impl InterventionSpec {
    pub fn none(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            mask: vec![false; n * d],
            values: vec![0.0; n * d],
        }
    }

    pub fn set(&mut self, row: usize, node: usize, value: f64) {
        self.mask[row * self.d + node] = true;
        self.values[row * self.d + node] = value;
    }

    /// The same `do(x_node = value)` on every row.
    pub fn all_rows(n: usize, d: usize, node: usize, value: f64) -> Self {
        let mut s = Self::none(n, d);
        for r in 0..n {
            s.set(r, node, value);
        }
        s
    }
}

/// Draw one mechanism per node for the domain's mechanism class.
pub fn sample_mechanisms(g: &Graph, domain: &DomainConfig, rng: &mut Rng) -> Result<Vec<Mechanism>> {
    if !g.is_acyclic() {
        return Err(Error::Cyclic);
    }
    let ranges = domain.active_mechanisms();
    let kind = match domain.kind {
        DomainKind::Linear => MechKindTag::Linear,
        DomainKind::Rff => MechKindTag::Rff,
        DomainKind::Grn => return Err(Error::invalid("grn tasks use the gene-regulatory simulator")),
    };
    Ok((0..g.d()).map(|j| sample_mechanism(g.parents(j), kind, ranges, rng)).collect())
}

#[derive(Clone, Copy)]
enum MechKindTag {
    Linear,
    Rff,
}

fn sample_mechanism(parents: Vec<usize>, kind: MechKindTag, r: &MechanismRanges, rng: &mut Rng) -> Mechanism {
    let bias = uniform(rng, r.bias.0, r.bias.1);
    let kind = match kind {
        MechKindTag::Linear => MechanismKind::Linear {
            weights: parents.iter().map(|_| signed_uniform(rng, r.weight.0, r.weight.1)).collect(),
            bias,
        },
        MechKindTag::Rff => {
            let c = uniform(rng, r.output_scale.0, r.output_scale.1);
            let l = uniform(rng, r.length_scale.0, r.length_scale.1);
            MechanismKind::Rff(RffFunction::sample(parents.len(), r.rff_features, bias, c, l, rng))
        }
    };
    Mechanism { parents, kind }
}

/// Draw a noise specification from the domain's active noise ranges.
pub fn sample_noise(g: &Graph, domain: &DomainConfig, rng: &mut Rng) -> NoiseSpec {
    let nr = domain.active_noise();
    let family = nr.families[rng.random_range(0..nr.families.len())];
    let scales = (0..g.d()).map(|_| uniform(rng, nr.scale.0, nr.scale.1)).collect();
    let heteroscedastic = nr.heteroscedastic.then(|| {
        let mr = domain.active_mechanisms();
        (0..g.d())
            .map(|j| {
                let l = uniform(rng, mr.length_scale.0, mr.length_scale.1);
                RffFunction::sample(g.in_degree(j), mr.rff_features, 0.0, 1.0, l, rng)
            })
            .collect()
    });
    NoiseSpec {
        family,
        scales,
        heteroscedastic,
    }
}

const MAX_ROW_RETRIES: usize = 100;

/// Sample `n` rows in topological order. Intervened variables take their
/// clamp value and ignore parents and noise.
pub fn ancestral_sample(
    g: &Graph,
    mechanisms: &[Mechanism],
    noise: &NoiseSpec,
    interventions: &InterventionSpec,
    n: usize,
    rng: &mut Rng,
) -> Result<Dataset> {
    let d = g.d();
    let order = g.topological_order().ok_or(Error::Cyclic)?;
    if mechanisms.len() != d || noise.scales.len() != d || interventions.n != n || interventions.d != d {
        return Err(Error::invalid("ancestral_sample: inconsistent sizes"));
    }
    let mut values = vec![0.0; n * d];
    let mut xpa = Vec::new();
    for r in 0..n {
        let mut attempt = 0;
        loop {
            let row = &mut values[r * d..(r + 1) * d];
            for &j in &order {
                if interventions.mask[r * d + j] {
                    row[j] = interventions.values[r * d + j];
                    continue;
                }
                xpa.clear();
                xpa.extend(mechanisms[j].parents.iter().map(|&p| row[p]));
                let f = mechanisms[j].eval(&xpa);
                row[j] = f + noise.multiplier(j, &xpa) * noise.draw(j, rng);
            }
            if row.iter().all(|v| v.is_finite()) {
                break;
            }
            attempt += 1;
            if attempt > MAX_ROW_RETRIES {
                return Err(Error::Simulation(format!("row {r} non-finite after {MAX_ROW_RETRIES} retries")));
            }
        }
    }
    Dataset::new(n, d, values, interventions.mask.clone())
}

/// Generate a dataset for a given graph: first half observational; with the
/// domain's probability, second half single-node interventions on targets
/// drawn from a random subset of the nodes.
pub fn build_task(g: &Graph, domain: &DomainConfig, n: usize, seed: u64, rng: &mut Rng) -> Result<Task> {
    if n < 2 {
        return Err(Error::invalid("build_task needs n >= 2"));
    }
    domain.validate()?;
    let d = g.d();
    let mechanisms = sample_mechanisms(g, domain, rng)?;
    let noise = sample_noise(g, domain, rng);
    let mut iv = InterventionSpec::none(n, d);
    if rng.random_bool(domain.interventional_prob) {
        let k = ((domain.target_fraction * d as f64).ceil() as usize).clamp(1, d);
        let targets = rand::seq::index::sample(rng, d, k).into_vec();
        for r in n / 2..n {
            let j = targets[rng.random_range(0..k)];
            let v = uniform(rng, domain.intervention_value.0, domain.intervention_value.1);
            iv.set(r, j, v);
        }
    }
    let mut data = ancestral_sample(g, &mechanisms, &noise, &iv, n, rng)?;
    if domain.standardize {
        data.standardize();
    }
    Ok(Task {
        graph: g.clone(),
        data,
        meta: DatasetMeta {
            n,
            d,
            domain: domain.kind.name().into(),
            seed,
            standardized: domain.standardize,
            cell_types: None,
            tech_noise_preset: None,
        },
        graph_family: String::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn linear(parents: Vec<usize>, weights: Vec<f64>, bias: f64) -> Mechanism {
        Mechanism {
            parents,
            kind: MechanismKind::Linear { weights, bias },
        }
    }

    #[test]
    fn root_linear_mechanism_is_constant() {
        let m = linear(vec![], vec![], 1.5);
        assert_eq!(m.eval(&[]), 1.5);
    }

    #[test]
    fn single_feature_at_origin() {
        let f = RffFunction {
            bias: 0.7,
            output_scale: 2.0,
            length_scale: 1.0,
            frequencies: vec![0.0],
            phases: vec![0.0],
        };
        assert!((f.eval(&[3.0]) - (0.7 + 2.0 * 2f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn rff_is_bounded_and_deterministic() {
        let mut rng = stream(1, &[]);
        for _ in 0..1000 {
            let m = 1 + rng.random_range(0..50);
            let c = uniform(&mut rng, 0.5, 5.0);
            let f = RffFunction::sample(2, m, 1.0, c, 3.0, &mut rng);
            let x = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
            let y = f.eval(&x);
            assert!((y - 1.0).abs() <= c * (2.0 * m as f64).sqrt() + 1e-9);
            assert_eq!(y, f.eval(&x));
        }
        let mech = Mechanism {
            parents: vec![],
            kind: MechanismKind::Linear {
                weights: vec![],
                bias: 0.0,
            },
        };
        assert!(eval_rff(&mech, &[]).is_err());
    }

    #[test]
    fn clamp_semantics_on_a_chain() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let mechs = vec![linear(vec![], vec![], 0.0), linear(vec![0], vec![2.0], 0.0)];
        let noise = NoiseSpec::homoscedastic(NoiseFamily::Gaussian, vec![1e-300, 1e-300]);
        let iv = InterventionSpec::all_rows(3, 2, 0, 5.0);
        let mut rng = stream(2, &[]);
        let ds = ancestral_sample(&g, &mechs, &noise, &iv, 3, &mut rng).unwrap();
        for r in 0..3 {
            assert_eq!(ds.value(r, 0), 5.0);
            assert!((ds.value(r, 1) - 10.0).abs() < 1e-12);
            assert!(ds.is_intervened(r, 0) && !ds.is_intervened(r, 1));
        }
    }

    #[test]
    fn zero_noise_copy_chain() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let mechs = vec![linear(vec![], vec![], 0.0), linear(vec![0], vec![1.0], 0.0)];
        let noise = NoiseSpec::homoscedastic(NoiseFamily::Gaussian, vec![1.0, 1e-12]);
        let mut rng = stream(3, &[]);
        let ds = ancestral_sample(&g, &mechs, &noise, &InterventionSpec::none(50, 2), 50, &mut rng).unwrap();
        for r in 0..50 {
            assert!((ds.value(r, 0) - ds.value(r, 1)).abs() < 1e-9);
        }
    }

    #[test]
    fn cyclic_graph_rejected() {
        let g = Graph::from_edges(2, &[(0, 1), (1, 0)]).unwrap();
        let mut rng = stream(4, &[]);
        assert!(matches!(sample_mechanisms(&g, &DomainConfig::linear(), &mut rng), Err(Error::Cyclic)));
    }

    #[test]
    fn build_task_intervention_layout() {
        let mut rng = stream(5, &[]);
        let g = crate::graph::sample_erdos_renyi(6, 2.0, &mut rng);
        let mut dom = DomainConfig::linear();
        dom.interventional_prob = 1.0;
        let t = build_task(&g, &dom, 200, 0, &mut rng).unwrap();
        let single = (0..200)
            .filter(|&r| (0..6).filter(|&j| t.data.is_intervened(r, j)).count() == 1)
            .count();
        assert_eq!(single, 100);
        assert!((0..100).all(|r| (0..6).all(|j| !t.data.is_intervened(r, j))));
        let data = &t.data;
        let targets: std::collections::BTreeSet<usize> =
            (100..200).flat_map(|r| (0..6).filter(move |&j| data.is_intervened(r, j))).collect();
        assert!(targets.len() <= 3);

        dom.interventional_prob = 0.0;
        let t = build_task(&g, &dom, 50, 0, &mut rng).unwrap();
        assert!(t.data.mask().iter().all(|&m| !m));
    }

    #[test]
    fn standardized_columns() {
        let mut rng = stream(6, &[]);
        let g = crate::graph::sample_erdos_renyi(4, 1.0, &mut rng);
        let mut dom = DomainConfig::rff();
        dom.interventional_prob = 0.0;
        dom.standardize = true;
        let t = build_task(&g, &dom, 300, 0, &mut rng).unwrap();
        for c in 0..4 {
            let col = t.data.column(c);
            let mean = col.iter().sum::<f64>() / 300.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 300.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }
}
