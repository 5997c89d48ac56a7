//! The inference network: dataset in, edge probabilities out.
//!
//! Tokens `(x, u)` are embedded by one shared affine map, passed through `L`
//! blocks that alternate self-attention over the sample axis and over the
//! variable axis (each followed by a feed-forward layer, all pre-norm
//! residual), max-pooled over samples, and mapped to
//! `θ_ij = σ(u_i·v_j + b)` with a zero diagonal.
//!
//! Nothing in the network depends on the position of a sample or a
//! variable, so the output is invariant to row order and equivariant to
//! column order.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::optim::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Lower/upper clamp applied to probabilities inside `log_q`.
pub const PROB_CLAMP: f64 = 1e-7;
pub const EDGE_BIAS_INIT: f64 = -3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub width: usize,
    pub key_size: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    pub dropout: f64,
    /// Power-iteration steps of the acyclicity penalty.
    pub power_iterations: usize,
    /// Multiplier on the Kaiming bound of the two edge-head maps.
    pub edge_init_gain: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            width: 64,
            key_size: 16,
            heads: 4,
            ff_hidden: 128,
            dropout: 0.0,
            power_iterations: 10,
            edge_init_gain: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [self.layers, self.width, self.key_size, self.heads, self.ff_hidden];
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::invalid("model sizes must be >= 1"));
        }
        if self.width % self.heads != 0 {
            return Err(Error::invalid("width must be divisible by heads"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        if !(self.edge_init_gain >= 0.0) {
            return Err(Error::invalid("edge_init_gain must be non-negative"));
        }
        Ok(())
    }
}

/// `d × d` edge probabilities with a zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeBeliefs {
    d: usize,
    theta: Vec<f64>,
}

impl EdgeBeliefs {
    pub fn new(d: usize, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != d * d {
            return Err(Error::invalid(format!("beliefs for d={d} need {} entries", d * d)));
        }
        for i in 0..d {
            for j in 0..d {
                let t = theta[i * d + j];
                let ok = if i == j { t == 0.0 } else { (0.0..=1.0).contains(&t) };
                if !ok {
                    return Err(Error::invalid(format!("theta[{i}][{j}] = {t} out of range")));
                }
            }
        }
        Ok(Self { d, theta })
    }

    /// The indicator of `g`, clamped into `[ε, 1−ε]` off the diagonal.
    pub fn from_graph(g: &Graph) -> Self {
        let d = g.d();
        let theta = (0..d * d)
            .map(|e| {
                let (i, j) = (e / d, e % d);
                if i == j {
                    0.0
                } else if g.has_edge(i, j) {
                    1.0 - PROB_CLAMP
                } else {
                    PROB_CLAMP
                }
            })
            .collect();
        Self { d, theta }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.theta[i * self.d + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    /// `θ′_ij = θ_{perm[i], perm[j]}`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        let d = self.d;
        let theta = (0..d * d).map(|e| self.get(perm[e / d], perm[e % d])).collect();
        Self { d, theta }
    }

    pub fn to_csv(&self) -> String {
        crate::dataset::format_matrix(self.d, self.d, &self.theta)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (r, c, data) = crate::dataset::read_matrix(path)?;
        if r != c {
            return Err(Error::format(path, format!("beliefs must be square, got {r}x{c}")));
        }
        Self::new(r, data).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// `Σ_{i≠j} g_ij log θ_ij + (1−g_ij) log(1−θ_ij)` with clamped probabilities.
pub fn log_q(g: &Graph, beliefs: &EdgeBeliefs) -> Result<f64> {
    let d = g.d();
    if beliefs.d() != d {
        return Err(Error::invalid("log_q: graph and beliefs differ in size"));
    }
    let mut total = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            let t = beliefs.get(i, j).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            total += if g.has_edge(i, j) { t.ln() } else { (1.0 - t).ln() };
        }
    }
    Ok(total)
}

/// Stack datasets of equal shape into a `(B, n, d, 2)` tensor of `(x, u)`.
pub fn input_tensor(batch: &[&Dataset]) -> Result<Tensor> {
    let first = batch.first().ok_or_else(|| Error::invalid("empty batch"))?;
    let (n, d) = (first.n(), first.d());
    if n == 0 || d == 0 {
        return Err(Error::invalid("datasets need n >= 1 and d >= 1"));
    }
    let mut data = Vec::with_capacity(batch.len() * n * d * 2);
    for ds in batch {
        if (ds.n(), ds.d()) != (n, d) {
            return Err(Error::invalid("batch datasets must share n and d"));
        }
        for (x, &u) in ds.values().iter().zip(ds.mask()) {
            if !x.is_finite() {
                return Err(Error::NonFinite { op: "embed" });
            }
            data.push(*x);
            data.push(if u { 1.0 } else { 0.0 });
        }
    }
    Tensor::new(vec![batch.len(), n, d, 2], data)
}

/// Stack graphs into a `(B, d, d)` 0/1 tensor.
pub fn target_tensor(graphs: &[&Graph]) -> Result<Tensor> {
    let d = graphs.first().ok_or_else(|| Error::invalid("empty batch"))?.d();
    let mut data = Vec::with_capacity(graphs.len() * d * d);
    for g in graphs {
        if g.d() != d {
            return Err(Error::invalid("batch graphs must share d"));
        }
        data.extend(g.adjacency().iter().map(|&e| if e { 1.0 } else { 0.0 }));
    }
    Tensor::new(vec![graphs.len(), d, d], data)
}

fn off_diagonal(d: usize) -> Tensor {
    Tensor::from_fn(&[d, d], |e| if e / d == e % d { 0.0 } else { 1.0 })
}

/// Kaiming-uniform weights, bound `gain·√(6/fan_in)`.
fn kaiming(fan_in: usize, fan_out: usize, gain: f64, rng: &mut Rng) -> Tensor {
    let bound = gain * (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(&[fan_in, fan_out], |_| {
        if bound > 0.0 {
            rng.random_range(-bound..bound)
        } else {
            0.0
        }
    })
}

/// Dropout state for one forward pass.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut Rng,
}

impl Dropout<'_> {
    fn mask(&mut self, shape: &[usize]) -> Tensor {
        let keep = 1.0 - self.rate;
        Tensor::from_fn(shape, |_| if self.rng.random_bool(keep) { 1.0 / keep } else { 0.0 })
    }
}

/// Parameters bound to one tape.
struct Bound<'t> {
    tape: &'t Tape,
    store: &'t ParamStore,
    vars: Vec<Var>,
}

impl Bound<'_> {
    fn get(&self, name: &str) -> Result<&Var> {
        let id = self.store.id(name).ok_or_else(|| Error::invalid(format!("missing parameter {name}")))?;
        Ok(&self.vars[id.0])
    }
}

/// Model configuration plus parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let k = config.width;
        let hk = config.heads * config.key_size;
        let mut p = ParamStore::new();
        p.insert("embed/w", kaiming(2, k, 1.0, rng))?;
        p.insert("embed/b", Tensor::zeros(&[k]))?;
        for l in 0..config.layers {
            for axis in ["n", "d"] {
                let a = format!("block{l}/attn_{axis}");
                p.insert(format!("{a}/ln/gain"), Tensor::ones(&[k]))?;
                p.insert(format!("{a}/ln/offset"), Tensor::zeros(&[k]))?;
                p.insert(format!("{a}/wq"), kaiming(k, hk, 1.0, rng))?;
                p.insert(format!("{a}/wk"), kaiming(k, hk, 1.0, rng))?;
                p.insert(format!("{a}/wv"), kaiming(k, hk, 1.0, rng))?;
                p.insert(format!("{a}/wo"), kaiming(hk, k, 1.0, rng))?;
                p.insert(format!("{a}/bo"), Tensor::zeros(&[k]))?;
                let f = format!("block{l}/ff_{axis}");
                p.insert(format!("{f}/ln/gain"), Tensor::ones(&[k]))?;
                p.insert(format!("{f}/ln/offset"), Tensor::zeros(&[k]))?;
                p.insert(format!("{f}/w1"), kaiming(k, config.ff_hidden, 1.0, rng))?;
                p.insert(format!("{f}/b1"), Tensor::zeros(&[config.ff_hidden]))?;
                p.insert(format!("{f}/w2"), kaiming(config.ff_hidden, k, 1.0, rng))?;
                p.insert(format!("{f}/b2"), Tensor::zeros(&[k]))?;
            }
        }
        p.insert("final_ln/gain", Tensor::ones(&[k]))?;
        p.insert("final_ln/offset", Tensor::zeros(&[k]))?;
        p.insert("head/wu", kaiming(k, k, config.edge_init_gain, rng))?;
        p.insert("head/wv", kaiming(k, k, config.edge_init_gain, rng))?;
        p.insert("head/bias", Tensor::scalar(EDGE_BIAS_INIT))?;
        Ok(Self { config, params: p })
    }

    fn bind<'t>(&'t self, tape: &'t Tape) -> Bound<'t> {
        let vars = self.params.iter().map(|(id, p)| tape.param(id, p.value.clone())).collect();
        Bound {
            tape,
            store: &self.params,
            vars,
        }
    }

    /// `(B, n, d, 2)` tokens to `(B, n, d, width)` embeddings.
    pub fn embed_inputs(&self, tape: &Tape, x: &Tensor) -> Result<Var> {
        let b = self.bind(tape);
        self.embed(&b, x)
    }

    fn embed(&self, b: &Bound, x: &Tensor) -> Result<Var> {
        if x.rank() != 4 || x.shape()[3] != 2 {
            return Err(Error::Shape {
                op: "embed",
                lhs: x.shape().to_vec(),
                rhs: vec![2],
            });
        }
        if !x.all_finite() {
            return Err(Error::NonFinite { op: "embed" });
        }
        let t = b.tape;
        let xv = t.constant(x.clone());
        t.add(&t.matmul(&xv, b.get("embed/w")?)?, b.get("embed/b")?)
    }

    /// Full forward pass to `(B, d, d)` edge probabilities.
    pub fn forward(&self, tape: &Tape, x: &Tensor, dropout: Option<&mut Rng>) -> Result<Var> {
        let b = self.bind(tape);
        let mut drop = match dropout {
            Some(rng) if self.config.dropout > 0.0 => Some(Dropout {
                rate: self.config.dropout,
                rng,
            }),
            _ => None,
        };
        let z = self.embed(&b, x)?;
        let z = self.encode(&b, z, &mut drop)?;
        self.head(&b, &z)
    }

    /// The `L` axial blocks plus the final layer norm.
    pub fn encoder_forward(&self, tape: &Tape, e: &Var, dropout: Option<Dropout>) -> Result<Var> {
        let b = self.bind(tape);
        let mut drop = dropout;
        self.encode(&b, e.clone(), &mut drop)
    }

    /// Pool, project and score an encoded `(B, n, d, width)` tensor.
    pub fn edge_head(&self, tape: &Tape, e: &Var) -> Result<Var> {
        let b = self.bind(tape);
        self.head(&b, e)
    }

    fn encode(&self, b: &Bound, mut z: Var, drop: &mut Option<Dropout>) -> Result<Var> {
        let t = b.tape;
        for l in 0..self.config.layers {
            // attention across samples: put n in the sequence position
            let zt = t.transpose(&z, &[0, 2, 1, 3])?;
            let zt = self.attention(b, &zt, &format!("block{l}/attn_n"), drop)?;
            z = t.transpose(&zt, &[0, 2, 1, 3])?;
            z = self.feed_forward(b, &z, &format!("block{l}/ff_n"), drop)?;
            z = self.attention(b, &z, &format!("block{l}/attn_d"), drop)?;
            z = self.feed_forward(b, &z, &format!("block{l}/ff_d"), drop)?;
        }
        t.layer_norm(&z, b.get("final_ln/gain")?, b.get("final_ln/offset")?)
    }

    fn maybe_dropout(&self, b: &Bound, x: Var, drop: &mut Option<Dropout>) -> Result<Var> {
        match drop {
            Some(dr) => {
                let m = dr.mask(x.shape());
                b.tape.dropout(&x, &m)
            }
            None => Ok(x),
        }
    }

    /// Residual multi-head self-attention over axis 2 of `(B, A, S, k)`.
    fn attention(&self, b: &Bound, z: &Var, prefix: &str, drop: &mut Option<Dropout>) -> Result<Var> {
        let t = b.tape;
        let shape = z.shape().to_vec();
        let (bs, a, s) = (shape[0], shape[1], shape[2]);
        let (h, ks) = (self.config.heads, self.config.key_size);
        let p = |n: &str| b.get(&format!("{prefix}/{n}"));
        let x = t.layer_norm(z, p("ln/gain")?, p("ln/offset")?)?;
        let split = |w: &Var, perm: &[usize]| -> Result<Var> {
            let y = t.matmul(&x, w)?;
            let y = t.reshape(&y, &[bs, a, s, h, ks])?;
            t.transpose(&y, perm)
        };
        let q = split(p("wq")?, &[0, 1, 3, 2, 4])?;
        let kt = split(p("wk")?, &[0, 1, 3, 4, 2])?;
        let v = split(p("wv")?, &[0, 1, 3, 2, 4])?;
        let scores = t.scale(&t.matmul(&q, &kt)?, 1.0 / (ks as f64).sqrt())?;
        let attn = t.softmax(&scores, 4)?;
        let o = t.matmul(&attn, &v)?;
        let o = t.transpose(&o, &[0, 1, 3, 2, 4])?;
        let o = t.reshape(&o, &[bs, a, s, h * ks])?;
        let o = t.add(&t.matmul(&o, p("wo")?)?, p("bo")?)?;
        let o = self.maybe_dropout(b, o, drop)?;
        t.add(z, &o)
    }

    fn feed_forward(&self, b: &Bound, z: &Var, prefix: &str, drop: &mut Option<Dropout>) -> Result<Var> {
        let t = b.tape;
        let p = |n: &str| b.get(&format!("{prefix}/{n}"));
        let x = t.layer_norm(z, p("ln/gain")?, p("ln/offset")?)?;
        let hdn = t.relu(&t.add(&t.matmul(&x, p("w1")?)?, p("b1")?)?)?;
        let o = t.add(&t.matmul(&hdn, p("w2")?)?, p("b2")?)?;
        let o = self.maybe_dropout(b, o, drop)?;
        t.add(z, &o)
    }

    fn head(&self, b: &Bound, z: &Var) -> Result<Var> {
        let t = b.tape;
        let d = z.shape()[2];
        let pooled = t.max_pool(z, 1)?;
        let u = t.matmul(&pooled, b.get("head/wu")?)?;
        let v = t.matmul(&pooled, b.get("head/wv")?)?;
        let vt = t.transpose(&v, &[0, 2, 1])?;
        let logits = t.add(&t.matmul(&u, &vt)?, b.get("head/bias")?)?;
        let theta = t.sigmoid(&logits)?;
        t.mul(&theta, &t.constant(off_diagonal(d)))
    }

    /// Deterministic prediction for one dataset.
    pub fn predict(&self, data: &Dataset) -> Result<EdgeBeliefs> {
        let tape = Tape::inference();
        let x = input_tensor(&[data])?;
        let theta = self.forward(&tape, &x, None)?;
        EdgeBeliefs::new(data.d(), theta.value().data().to_vec())
    }

    /// Parameters as named tensors, in insertion order.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.params.iter().map(|(_, p)| (format!("params/{}", p.name), p.value.clone())).collect()
    }

    pub fn checkpoint(&self, extra: serde_json::Value) -> Result<Checkpoint> {
        Ok(Checkpoint {
            tensors: self.named_tensors(),
            metadata: serde_json::json!({
                "model": serde_json::to_value(&self.config)?,
                "extra": extra,
            }),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.checkpoint(serde_json::Value::Null)?.save(dir)
    }

    /// Rebuild a model from a checkpoint's config and `params/…` tensors.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_value(ck.metadata.get("model").cloned().unwrap_or_default())
            .map_err(|e| Error::invalid(format!("checkpoint model config: {e}")))?;
        // init only fixes names and shapes; every value is overwritten
        let mut model = Self::init(cfg, &mut crate::rng::stream(0, &[]))?;
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = format!("params/{}", model.params.get(id).name);
            let t = ck.get(&name).ok_or_else(|| Error::invalid(format!("checkpoint lacks {name}")))?;
            if t.shape() != model.params.value(id).shape() {
                return Err(Error::invalid(format!("checkpoint shape mismatch for {name}")));
            }
            *model.params.value_mut(id) = t.clone();
        }
        Ok(model)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(dir)?)
    }
}

/// `−mean_b log_q(G_b, θ_b)` on the tape for `(B, d, d)` beliefs and targets.
pub fn neg_log_q_var(tape: &Tape, theta: &Var, targets: &Tensor) -> Result<Var> {
    if theta.shape() != targets.shape() || theta.shape().len() != 3 {
        return Err(Error::Shape {
            op: "log_q",
            lhs: theta.shape().to_vec(),
            rhs: targets.shape().to_vec(),
        });
    }
    let (bs, d) = (theta.shape()[0], theta.shape()[1]);
    let th = tape.clamp(theta, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let g = tape.constant(targets.clone());
    let not_g = tape.constant(targets.map(|v| 1.0 - v));
    let ones = tape.constant(Tensor::ones(targets.shape()));
    let pos = tape.mul(&tape.log(&th)?, &g)?;
    let neg = tape.mul(&tape.log(&tape.sub(&ones, &th)?)?, &not_g)?;
    let ll = tape.mul(&tape.add(&pos, &neg)?, &tape.constant(off_diagonal(d)))?;
    tape.scale(&tape.sum(&ll)?, -1.0 / bs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::logistic;
    use crate::rng::{permutation, stream};

    fn small() -> ModelConfig {
        ModelConfig {
            layers: 1,
            width: 8,
            key_size: 2,
            heads: 2,
            ff_hidden: 12,
            ..ModelConfig::default()
        }
    }

    fn random_dataset(n: usize, d: usize, rng: &mut Rng) -> Dataset {
        let values = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mask = (0..n * d).map(|_| rng.random_bool(0.2)).collect();
        Dataset::new(n, d, values, mask).unwrap()
    }

    #[test]
    fn zero_embedding_gives_zero_tensor() {
        let mut m = Model::init(small(), &mut stream(0, &[])).unwrap();
        for name in ["embed/w", "embed/b"] {
            let id = m.params.id(name).unwrap();
            m.params.value_mut(id).data_mut().fill(0.0);
        }
        let tape = Tape::inference();
        let ds = random_dataset(3, 4, &mut stream(1, &[]));
        let e = m.embed_inputs(&tape, &input_tensor(&[&ds]).unwrap()).unwrap();
        assert_eq!(e.shape(), &[1, 3, 4, 8]);
        assert!(e.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_rows_embed_identically() {
        let m = Model::init(small(), &mut stream(0, &[])).unwrap();
        let ds = Dataset::new(2, 2, vec![0.3, -1.0, 0.3, -1.0], vec![false, true, false, true]).unwrap();
        let e = m.embed_inputs(&Tape::inference(), &input_tensor(&[&ds]).unwrap()).unwrap();
        let v = e.value().data();
        assert_eq!(&v[..16], &v[16..]);
    }

    #[test]
    fn nan_input_rejected() {
        let ds = Dataset::observational(1, 2, vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(input_tensor(&[&ds]), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn zero_head_maps_give_prior() {
        let mut m = Model::init(small(), &mut stream(0, &[])).unwrap();
        for name in ["head/wu", "head/wv"] {
            let id = m.params.id(name).unwrap();
            m.params.value_mut(id).data_mut().fill(0.0);
        }
        let th = m.predict(&random_dataset(5, 4, &mut stream(2, &[]))).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 0.0 } else { logistic(-3.0) };
                assert!((th.get(i, j) - want).abs() < 1e-15);
            }
        }
        assert!((logistic(-3.0) - 0.04743).abs() < 1e-5);
    }

    #[test]
    fn degenerate_single_token() {
        let m = Model::init(small(), &mut stream(0, &[])).unwrap();
        let tape = Tape::inference();
        let x = input_tensor(&[&Dataset::observational(1, 1, vec![0.7]).unwrap()]).unwrap();
        let e = m.encoder_forward(&tape, &m.embed_inputs(&tape, &x).unwrap(), None).unwrap();
        assert_eq!(e.shape(), &[1, 1, 1, 8]);
        assert_eq!(m.predict(&Dataset::observational(1, 1, vec![0.7]).unwrap()).unwrap().as_slice(), &[0.0]);
    }

    #[test]
    fn row_invariance_and_column_equivariance() {
        let m = Model::init(small(), &mut stream(3, &[])).unwrap();
        let mut rng = stream(4, &[]);
        let ds = random_dataset(7, 5, &mut rng);
        let base = m.predict(&ds).unwrap();
        let rows = permutation(7, &mut rng);
        let shuffled = m.predict(&ds.permute_rows(&rows)).unwrap();
        assert!(base.as_slice().iter().zip(shuffled.as_slice()).all(|(a, b)| (a - b).abs() < 1e-12));
        let cols = permutation(5, &mut rng);
        let permuted = m.predict(&ds.permute_columns(&cols)).unwrap();
        let expect = base.permute(&cols);
        assert!(permuted.as_slice().iter().zip(expect.as_slice()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn every_parameter_gets_gradient() {
        let m = Model::init(small(), &mut stream(5, &[])).unwrap();
        let mut rng = stream(6, &[]);
        let ds: Vec<Dataset> = (0..2).map(|_| random_dataset(6, 4, &mut rng)).collect();
        let gs: Vec<Graph> = (0..2).map(|_| crate::graph::sample_erdos_renyi(4, 1.5, &mut rng)).collect();
        let tape = Tape::new();
        let x = input_tensor(&ds.iter().collect::<Vec<_>>()).unwrap();
        let theta = m.forward(&tape, &x, None).unwrap();
        let loss = neg_log_q_var(&tape, &theta, &target_tensor(&gs.iter().collect::<Vec<_>>()).unwrap()).unwrap();
        let grads = tape.backward(&loss).unwrap();
        for (id, p) in m.params.iter() {
            let g = grads.param(id).unwrap_or_else(|| panic!("no gradient for {}", p.name));
            assert!(g.norm() > 0.0, "zero gradient for {}", p.name);
        }
    }

    #[test]
    fn log_q_hand_values() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let half = EdgeBeliefs::new(2, vec![0.0, 0.5, 0.5, 0.0]).unwrap();
        assert!((log_q(&g, &half).unwrap() - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        let exact = EdgeBeliefs::from_graph(&g);
        assert!((log_q(&g, &exact).unwrap() - 2.0 * (1.0 - 1e-7f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn tape_log_q_matches_scalar_version() {
        let mut rng = stream(7, &[]);
        let g = crate::graph::sample_erdos_renyi(5, 2.0, &mut rng);
        let theta: Vec<f64> = (0..25).map(|e| if e / 5 == e % 5 { 0.0 } else { rng.random_range(0.0..1.0) }).collect();
        let beliefs = EdgeBeliefs::new(5, theta.clone()).unwrap();
        let tape = Tape::inference();
        let tv = tape.constant(Tensor::new(vec![1, 5, 5], theta).unwrap());
        let nlq = neg_log_q_var(&tape, &tv, &target_tensor(&[&g]).unwrap()).unwrap();
        assert!((nlq.value().item() + log_q(&g, &beliefs).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = Model::init(small(), &mut stream(8, &[])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = Model::load(dir.path()).unwrap();
        assert_eq!(back.config, m.config);
        for (id, p) in m.params.iter() {
            assert_eq!(back.params.value(id), &p.value);
        }
    }

    #[test]
    fn config_validation() {
        let bad = ModelConfig {
            width: 10,
            heads: 4,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(serde_json::from_str::<ModelConfig>(r#"{"layer": 2}"#).is_err());
    }
}
