//! Data-generating distributions: which graphs, mechanisms and noise a task
//! is drawn from, and which of them are shifted out of distribution.
//!
//! All numeric ranges below are desk defaults chosen for this crate; they are
//! centralised here so experiments can override them from JSON.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Linear,
    Rff,
    Grn,
}

impl DomainKind {
    pub fn name(self) -> &'static str {
        match self {
            DomainKind::Linear => "linear",
            DomainKind::Rff => "rff",
            DomainKind::Grn => "grn",
        }
    }
}

/// Which aspects of the distribution are drawn from their shifted variant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Shift {
    pub graphs: bool,
    pub mechanisms: bool,
    pub noise: bool,
}

impl Shift {
    pub const NONE: Shift = Shift {
        graphs: false,
        mechanisms: false,
        noise: false,
    };
    pub const ALL: Shift = Shift {
        graphs: true,
        mechanisms: true,
        noise: true,
    };
}

/// Closed interval `[lo, hi]` for a uniform draw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range(pub f64, pub f64);

impl Range {
    pub fn validate(&self, what: &str) -> Result<()> {
        if !(self.0.is_finite() && self.1.is_finite() && self.0 <= self.1) {
            return Err(Error::invalid(format!("{what}: bad range [{}, {}]", self.0, self.1)));
        }
        Ok(())
    }

    pub fn positive(&self, what: &str) -> Result<()> {
        self.validate(what)?;
        if self.0 <= 0.0 {
            return Err(Error::invalid(format!("{what}: range must be positive")));
        }
        Ok(())
    }
}

/// Parameter ranges for linear and random-Fourier-feature mechanisms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MechanismRanges {
    /// Magnitude of linear weights; the sign is a fair coin.
    pub weight: Range,
    pub bias: Range,
    pub length_scale: Range,
    pub output_scale: Range,
    pub rff_features: usize,
}

impl MechanismRanges {
    pub fn in_distribution() -> Self {
        Self {
            weight: Range(1.0, 3.0),
            bias: Range(-3.0, 3.0),
            length_scale: Range(7.0, 10.0),
            output_scale: Range(5.0, 10.0),
            rff_features: 100,
        }
    }

    /// Magnitudes strictly beyond the in-distribution ranges.
    pub fn shifted() -> Self {
        Self {
            weight: Range(3.5, 5.0),
            bias: Range(-3.0, 3.0),
            length_scale: Range(10.5, 20.0),
            output_scale: Range(10.5, 20.0),
            rff_features: 100,
        }
    }

    fn validate(&self) -> Result<()> {
        self.weight.validate("weight")?;
        self.bias.validate("bias")?;
        self.length_scale.positive("length_scale")?;
        self.output_scale.positive("output_scale")?;
        if self.rff_features == 0 {
            return Err(Error::invalid("rff_features must be >= 1"));
        }
        Ok(())
    }
}

impl Default for MechanismRanges {
    fn default() -> Self {
        Self::in_distribution()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    Gaussian,
    Laplace,
    Cauchy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseRanges {
    /// One family is chosen uniformly per task.
    pub families: Vec<NoiseFamily>,
    pub scale: Range,
    pub heteroscedastic: bool,
}

impl NoiseRanges {
    pub fn in_distribution() -> Self {
        Self {
            families: vec![NoiseFamily::Gaussian],
            scale: Range(0.2, 1.0),
            heteroscedastic: false,
        }
    }

    pub fn shifted() -> Self {
        Self {
            families: vec![NoiseFamily::Laplace, NoiseFamily::Cauchy],
            scale: Range(0.2, 1.0),
            heteroscedastic: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.families.is_empty() {
            return Err(Error::invalid("noise families must not be empty"));
        }
        self.scale.positive("noise scale")
    }
}

impl Default for NoiseRanges {
    fn default() -> Self {
        Self::in_distribution()
    }
}

/// Technical measurement noise of one sequencing technology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TechNoisePreset {
    pub name: String,
    pub outlier_prob: f64,
    pub outlier_mu: f64,
    pub outlier_sigma: f64,
    pub library_mu: f64,
    pub library_sigma: f64,
    /// Dropout percentile in `[0, 100]`.
    pub dropout_percentile: f64,
    pub dropout_temperature: f64,
}

/// Parameter ranges of the gene-regulatory simulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrnRanges {
    pub cell_types: (usize, usize),
    pub interaction: Range,
    pub production: Range,
    pub hill: Range,
    pub decay: Range,
    pub process_noise: Range,
}

impl GrnRanges {
    pub fn in_distribution() -> Self {
        Self {
            cell_types: (5, 10),
            interaction: Range(1.0, 5.0),
            production: Range(1.0, 4.0),
            hill: Range(1.5, 2.5),
            decay: Range(0.7, 0.9),
            process_noise: Range(0.1, 0.5),
        }
    }

    pub fn shifted() -> Self {
        Self {
            cell_types: (5, 10),
            interaction: Range(0.5, 8.0),
            production: Range(0.5, 6.0),
            hill: Range(1.0, 4.0),
            decay: Range(0.5, 1.2),
            process_noise: Range(0.1, 1.0),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.cell_types.0 == 0 || self.cell_types.0 > self.cell_types.1 {
            return Err(Error::invalid("cell_types must be a non-empty positive range"));
        }
        self.interaction.positive("interaction")?;
        self.production.positive("production")?;
        self.hill.positive("hill")?;
        self.decay.positive("decay")?;
        self.process_noise.validate("process_noise")
    }
}

impl Default for GrnRanges {
    fn default() -> Self {
        Self::in_distribution()
    }
}

pub fn default_tech_presets() -> Vec<TechNoisePreset> {
    vec![
        TechNoisePreset {
            name: "droplet_a".into(),
            outlier_prob: 0.01,
            outlier_mu: 0.8,
            outlier_sigma: 1.0,
            library_mu: 6.0,
            library_sigma: 0.3,
            dropout_percentile: 45.0,
            dropout_temperature: 8.0,
        },
        TechNoisePreset {
            name: "droplet_b".into(),
            outlier_prob: 0.01,
            outlier_mu: 1.0,
            outlier_sigma: 0.8,
            library_mu: 6.5,
            library_sigma: 0.4,
            dropout_percentile: 55.0,
            dropout_temperature: 8.0,
        },
    ]
}

pub fn shifted_tech_presets() -> Vec<TechNoisePreset> {
    vec![
        TechNoisePreset {
            name: "plate_deep".into(),
            outlier_prob: 0.02,
            outlier_mu: 3.0,
            outlier_sigma: 0.8,
            library_mu: 8.0,
            library_sigma: 0.5,
            dropout_percentile: 25.0,
            dropout_temperature: 5.0,
        },
        TechNoisePreset {
            name: "sparse_umi".into(),
            outlier_prob: 0.05,
            outlier_mu: 2.0,
            outlier_sigma: 1.0,
            library_mu: 5.0,
            library_sigma: 0.6,
            dropout_percentile: 75.0,
            dropout_temperature: 5.0,
        },
    ]
}

/// A full data-generating distribution `p(G, D)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainConfig {
    pub kind: DomainKind,
    /// In-distribution graph families; `None` selects the kind's default.
    pub graphs: Option<Vec<GraphModel>>,
    pub shifted_graphs: Option<Vec<GraphModel>>,
    pub shift: Shift,
    /// Probability that a dataset's second half is interventional.
    pub interventional_prob: f64,
    /// Fraction of nodes eligible as intervention targets (SCM domains).
    pub target_fraction: f64,
    /// Clamp values of SCM interventions are uniform on this range.
    pub intervention_value: Range,
    /// Z-score each column of SCM data.
    pub standardize: bool,
    pub mechanisms: MechanismRanges,
    pub shifted_mechanisms: MechanismRanges,
    pub noise: NoiseRanges,
    pub shifted_noise: NoiseRanges,
    pub grn: GrnRanges,
    pub shifted_grn: GrnRanges,
    pub tech_presets: Vec<TechNoisePreset>,
    pub shifted_tech_presets: Vec<TechNoisePreset>,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self::new(DomainKind::Linear)
    }
}

impl DomainConfig {
    pub fn new(kind: DomainKind) -> Self {
        Self {
            kind,
            graphs: None,
            shifted_graphs: None,
            shift: Shift::NONE,
            interventional_prob: 0.5,
            target_fraction: 0.5,
            intervention_value: Range(-5.0, 5.0),
            standardize: false,
            mechanisms: MechanismRanges::in_distribution(),
            shifted_mechanisms: MechanismRanges::shifted(),
            noise: NoiseRanges::in_distribution(),
            shifted_noise: NoiseRanges::shifted(),
            grn: GrnRanges::in_distribution(),
            shifted_grn: GrnRanges::shifted(),
            tech_presets: default_tech_presets(),
            shifted_tech_presets: shifted_tech_presets(),
        }
    }

    pub fn linear() -> Self {
        Self::new(DomainKind::Linear)
    }

    pub fn rff() -> Self {
        Self::new(DomainKind::Rff)
    }

    pub fn grn() -> Self {
        Self::new(DomainKind::Grn)
    }

    pub fn with_shift(mut self, shift: Shift) -> Self {
        self.shift = shift;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.interventional_prob) {
            return Err(Error::invalid("interventional_prob outside [0,1]"));
        }
        if !(self.target_fraction > 0.0 && self.target_fraction <= 1.0) {
            return Err(Error::invalid("target_fraction outside (0,1]"));
        }
        self.intervention_value.validate("intervention_value")?;
        self.mechanisms.validate()?;
        self.shifted_mechanisms.validate()?;
        self.noise.validate()?;
        self.shifted_noise.validate()?;
        self.grn.validate()?;
        self.shifted_grn.validate()?;
        for p in self.tech_presets.iter().chain(&self.shifted_tech_presets) {
            validate_preset(p)?;
        }
        if self.kind == DomainKind::Grn && (self.tech_presets.is_empty() || self.shifted_tech_presets.is_empty()) {
            return Err(Error::invalid("grn domain needs technical noise presets"));
        }
        for g in self.graph_models() {
            g.validate()?;
        }
        if self.graph_models().is_empty() {
            return Err(Error::invalid("no graph models configured"));
        }
        Ok(())
    }

    /// Graph families in effect given the shift switches.
    pub fn graph_models(&self) -> Vec<GraphModel> {
        let (custom, shifted) = if self.shift.graphs {
            (&self.shifted_graphs, true)
        } else {
            (&self.graphs, false)
        };
        custom.clone().unwrap_or_else(|| default_graphs(self.kind, shifted))
    }

    pub fn active_mechanisms(&self) -> &MechanismRanges {
        if self.shift.mechanisms {
            &self.shifted_mechanisms
        } else {
            &self.mechanisms
        }
    }

    pub fn active_noise(&self) -> &NoiseRanges {
        if self.shift.noise {
            &self.shifted_noise
        } else {
            &self.noise
        }
    }

    pub fn active_grn(&self) -> &GrnRanges {
        if self.shift.mechanisms {
            &self.shifted_grn
        } else {
            &self.grn
        }
    }

    pub fn active_tech_presets(&self) -> &[TechNoisePreset] {
        if self.shift.noise {
            &self.shifted_tech_presets
        } else {
            &self.tech_presets
        }
    }
}

fn validate_preset(p: &TechNoisePreset) -> Result<()> {
    let ok = (0.0..=1.0).contains(&p.outlier_prob)
        && p.outlier_sigma >= 0.0
        && p.library_sigma >= 0.0
        && (0.0..=100.0).contains(&p.dropout_percentile)
        && p.dropout_temperature > 0.0;
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("technical noise preset {:?} out of range", p.name)))
    }
}

/// Default graph families per domain kind.
pub fn default_graphs(kind: DomainKind, shifted: bool) -> Vec<GraphModel> {
    match (kind, shifted) {
        (DomainKind::Grn, false) => vec![
            GraphModel::SubgraphExtraction {
                source: Box::new(GraphModel::ErdosRenyi { edges_per_node: 1.5 }),
                source_nodes: 100,
                percentile: 20.0,
            },
            GraphModel::SubgraphExtraction {
                source: Box::new(GraphModel::ScaleFree {
                    edges_per_node: 1.5,
                    power: 1.0,
                }),
                source_nodes: 100,
                percentile: 20.0,
            },
        ],
        (DomainKind::Grn, true) => vec![GraphModel::SubgraphExtraction {
            source: Box::new(GraphModel::ScaleFree {
                edges_per_node: 1.0,
                power: 2.0,
            }),
            source_nodes: 200,
            percentile: 20.0,
        }],
        (_, false) => [1.0, 2.0, 3.0]
            .into_iter()
            .flat_map(|e| {
                [
                    GraphModel::ErdosRenyi { edges_per_node: e },
                    GraphModel::ScaleFree {
                        edges_per_node: e,
                        power: 1.0,
                    },
                ]
            })
            .collect(),
        (_, true) => vec![
            GraphModel::WattsStrogatz {
                lattice_degree: 2,
                rewire_prob: 0.3,
            },
            GraphModel::WattsStrogatz {
                lattice_degree: 4,
                rewire_prob: 0.3,
            },
            GraphModel::StochasticBlock {
                blocks: 3,
                edges_per_node: 2.0,
                damping: 0.1,
            },
            GraphModel::Geometric { radius: 0.4 },
        ],
    }
}
