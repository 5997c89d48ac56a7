//! Slow reference implementations used to check the fast code paths.
//!
//! Everything here favours transparency over speed: triple-loop products,
//! explicit path enumeration, all-pairs rank comparisons, dense
//! eigensolvers and central finite differences.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::graph::Graph;
use crate::rng::{stream, Rng};
use crate::tensor::Tensor;

/// Batched `a · b` over the last two axes by three nested loops.
pub fn matmul_naive(a: &Tensor, b: &Tensor) -> Tensor {
    let (sa, sb) = (a.shape(), b.shape());
    let (m, k, n) = (sa[sa.len() - 2], sa[sa.len() - 1], sb[sb.len() - 1]);
    assert_eq!(k, sb[sb.len() - 2], "inner dimensions differ");
    let batch: usize = sa[..sa.len() - 2].iter().product();
    let b_batched = sb.len() > 2;
    let mut out = vec![0.0; batch * m * n];
    for t in 0..batch {
        let bo = if b_batched { t * k * n } else { 0 };
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for l in 0..k {
                    s += a.data()[t * m * k + i * k + l] * b.data()[bo + l * n + j];
                }
                out[t * m * n + i * n + j] = s;
            }
        }
    }
    let mut shape = sa[..sa.len() - 1].to_vec();
    shape.push(n);
    Tensor::new(shape, out).expect("consistent shape")
}

/// Central differences `(f(x+εe_i) − f(x−εe_i)) / 2ε` for every coordinate.
pub fn finite_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + eps;
            let up = f(&p);
            p[i] = x[i] - eps;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, 1)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

#[derive(Clone, Debug)]
enum Step {
    AddLeaf,
    SubLeaf,
    MulLeaf,
    MatMulLeaf,
    SwapLast,
    Relu,
    Sigmoid,
    LogSigmoid,
    Exp,
    Softmax(usize),
    LayerNorm,
    Scale(f64),
    Dropout,
    Clamp,
}

/// A random composition of tape primitives on a rank-3 input, reduced to a
/// scalar by an optional max-pool and a weighted sum.
#[derive(Clone, Debug)]
pub struct Program {
    steps: Vec<Step>,
    pool_axis: Option<usize>,
    input_shape: [usize; 3],
    /// Leaf tensors: the input followed by one or two per step and the
    /// output weights.
    pub leaves: Vec<Tensor>,
    masks: Vec<Tensor>,
}

const CLAMP_BOUND: f64 = 2.0;

impl Program {
    pub fn random(rng: &mut Rng) -> Self {
        let dims = [rng.random_range(1..=4), rng.random_range(2..=5), rng.random_range(2..=6)];
        let n_steps = rng.random_range(3..=7);
        let mut shape = dims;
        let mut steps = Vec::new();
        let mut leaves = vec![normal(&dims, rng)];
        let mut masks = Vec::new();
        for _ in 0..n_steps {
            let step = match rng.random_range(0..14) {
                0 => Step::AddLeaf,
                1 => Step::SubLeaf,
                2 => Step::MulLeaf,
                3 => Step::MatMulLeaf,
                4 => Step::SwapLast,
                5 => Step::Relu,
                6 => Step::Sigmoid,
                7 => Step::LogSigmoid,
                8 => Step::Exp,
                9 => Step::Softmax(rng.random_range(0..3)),
                10 => Step::LayerNorm,
                11 => Step::Scale(rng.random_range(-2.0..2.0)),
                12 => Step::Dropout,
                _ => Step::Clamp,
            };
            match step {
                // right operand broadcasts over the leading axis half the time
                Step::AddLeaf | Step::SubLeaf | Step::MulLeaf => {
                    let s = if rng.random_bool(0.5) { shape.to_vec() } else { shape[1..].to_vec() };
                    leaves.push(normal(&s, rng));
                }
                Step::MatMulLeaf => {
                    let out = rng.random_range(2..=6);
                    leaves.push(normal(&[shape[2], out], rng).map(|v| v * 0.5));
                    shape[2] = out;
                }
                Step::SwapLast => shape.swap(1, 2),
                Step::LayerNorm => {
                    leaves.push(normal(&[shape[2]], rng).map(|v| 1.0 + 0.3 * v));
                    leaves.push(normal(&[shape[2]], rng));
                }
                Step::Dropout => {
                    masks.push(Tensor::from_fn(&shape, |_| if rng.random_bool(0.7) { 1.0 / 0.7 } else { 0.0 }));
                }
                _ => {}
            }
            steps.push(step);
        }
        let pool_axis = rng.random_bool(0.5).then(|| rng.random_range(0..3));
        let mut out_shape = shape.to_vec();
        if let Some(a) = pool_axis {
            out_shape.remove(a);
        }
        leaves.push(normal(&out_shape, rng));
        Self {
            steps,
            pool_axis,
            input_shape: dims,
            leaves,
            masks,
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    /// Operation names, for reporting.
    pub fn describe(&self) -> Vec<String> {
        let mut names: Vec<String> = self.steps.iter().map(|s| format!("{s:?}")).collect();
        if let Some(a) = self.pool_axis {
            names.push(format!("MaxPool({a})"));
        }
        names
    }

    /// Scalar output and the smallest distance of any relu, clamp or
    /// max-pool input to a point where the program is not differentiable.
    pub fn eval(&self, tape: &Tape, leaves: &[Var]) -> Result<(Var, f64)> {
        let mut margin = f64::INFINITY;
        let mut next = 1;
        let mut masks = self.masks.iter();
        let mut x = leaves[0].clone();
        for step in &self.steps {
            x = match step {
                Step::AddLeaf | Step::SubLeaf | Step::MulLeaf => {
                    let l = &leaves[next];
                    next += 1;
                    match step {
                        Step::AddLeaf => tape.add(&x, l)?,
                        Step::SubLeaf => tape.sub(&x, l)?,
                        _ => tape.mul(&x, l)?,
                    }
                }
                Step::MatMulLeaf => {
                    next += 1;
                    tape.matmul(&x, &leaves[next - 1])?
                }
                Step::SwapLast => tape.transpose(&x, &[0, 2, 1])?,
                Step::Relu => {
                    margin = margin.min(x.value().data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs())));
                    tape.relu(&x)?
                }
                Step::Sigmoid => tape.sigmoid(&x)?,
                Step::LogSigmoid => tape.log(&tape.sigmoid(&x)?)?,
                Step::Exp => tape.exp(&tape.scale(&x, 0.3)?)?,
                Step::Softmax(a) => tape.softmax(&x, *a)?,
                Step::LayerNorm => {
                    next += 2;
                    tape.layer_norm(&x, &leaves[next - 2], &leaves[next - 1])?
                }
                Step::Scale(s) => tape.scale(&x, *s)?,
                Step::Dropout => tape.dropout(&x, masks.next().expect("mask per dropout"))?,
                Step::Clamp => {
                    let m = x
                        .value()
                        .data()
                        .iter()
                        .fold(f64::INFINITY, |m, v| m.min((v.abs() - CLAMP_BOUND).abs()));
                    margin = margin.min(m);
                    tape.clamp(&x, -CLAMP_BOUND, CLAMP_BOUND)?
                }
            };
        }
        if let Some(axis) = self.pool_axis {
            margin = margin.min(max_gap(x.value(), axis));
            x = tape.max_pool(&x, axis)?;
        }
        let loss = tape.sum(&tape.mul(&x, &leaves[next])?)?;
        Ok((loss, margin))
    }

    /// Loss for leaf values given as one flat vector.
    pub fn loss_at(&self, flat: &[f64]) -> Result<f64> {
        let tape = Tape::inference();
        let leaves = self.unflatten(&tape, flat)?;
        Ok(self.eval(&tape, &leaves)?.0.value().item())
    }

    fn unflatten(&self, tape: &Tape, flat: &[f64]) -> Result<Vec<Var>> {
        let mut off = 0;
        self.leaves
            .iter()
            .map(|l| {
                let t = Tensor::new(l.shape().to_vec(), flat[off..off + l.len()].to_vec())?;
                off += l.len();
                Ok(tape.var(t))
            })
            .collect()
    }

    pub fn flat_leaves(&self) -> Vec<f64> {
        self.leaves.iter().flat_map(|l| l.data().iter().copied()).collect()
    }
}

fn max_gap(x: &Tensor, axis: usize) -> f64 {
    let shape = x.shape();
    let outer: usize = shape[..axis].iter().product();
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut gap = f64::INFINITY;
    for o in 0..outer {
        for i in 0..inner {
            let mut vals: Vec<f64> = (0..n).map(|k| x.data()[o * n * inner + k * inner + i]).collect();
            vals.sort_by(|a, b| b.total_cmp(a));
            if n > 1 {
                gap = gap.min(vals[0] - vals[1]);
            }
        }
    }
    gap
}

fn normal(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

/// Result of one finite-difference check.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub ops: Vec<String>,
    pub max_rel_err: f64,
    pub coordinates: usize,
}

/// Compare tape gradients of a random program against central differences
/// with `ε = 1e-5`, redrawing programs whose inputs sit too close to a kink.
pub fn gradient_check(seed: u64) -> Result<GradCheck> {
    let eps = 1e-5;
    for attempt in 0u64.. {
        let prog = Program::random(&mut stream(seed, &[attempt]));
        let tape = Tape::new();
        let leaves: Vec<Var> = prog.leaves.iter().map(|l| tape.var(l.clone())).collect();
        let (loss, margin) = match prog.eval(&tape, &leaves) {
            Ok(v) => v,
            Err(_) => continue,
        };
        if margin < 1e-3 {
            continue;
        }
        let grads = tape.backward(&loss)?;
        let analytic: Vec<f64> = leaves
            .iter()
            .flat_map(|l| match grads.get(l) {
                Some(g) => g.data().to_vec(),
                None => vec![0.0; l.value().len()],
            })
            .collect();
        let mut f = |p: &[f64]| prog.loss_at(p).unwrap_or(f64::NAN);
        let numeric = finite_difference(&mut f, &prog.flat_leaves(), eps);
        let max_rel_err = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| relative_error(*a, *n))
            .fold(0.0, f64::max);
        return Ok(GradCheck {
            ops: prog.describe(),
            max_rel_err,
            coordinates: analytic.len(),
        });
    }
    unreachable!()
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(w: &[f64], d: usize) -> f64 {
    let m = DMatrix::from_row_slice(d, d, w);
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `(I − Wᵀ)⁻¹ Σ (I − Wᵀ)⁻ᵀ`, the covariance of `x = Wᵀx + ε`, with `W`
/// row-major (`w[i·d + j]` is the weight of `i → j`).
pub fn linear_gaussian_covariance(w: &[f64], noise_var: &[f64]) -> Vec<f64> {
    let d = noise_var.len();
    let wt = DMatrix::from_row_slice(d, d, w).transpose();
    let a = (DMatrix::identity(d, d) - wt).try_inverse().expect("acyclic weights are invertible");
    let s = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(noise_var));
    let c = &a * s * a.transpose();
    (0..d * d).map(|e| c[(e / d, e % d)]).collect()
}

/// Row-major sample covariance of an `n × d` matrix.
pub fn sample_covariance(values: &[f64], n: usize, d: usize) -> Vec<f64> {
    let m = DMatrix::from_row_slice(n, d, values);
    let mean = m.row_mean();
    let centered = DMatrix::from_fn(n, d, |r, c| m[(r, c)] - mean[c]);
    let c = centered.transpose() * &centered / (n as f64 - 1.0);
    (0..d * d).map(|e| c[(e / d, e % d)]).collect()
}

/// SHD as the directed symmetric difference minus the pairs where both
/// directions differ, so that a reversal counts once.
pub fn shd_oracle(g: &Graph, h: &Graph) -> usize {
    let d = g.d();
    let mut diff = 0;
    let mut double = 0;
    for i in 0..d {
        for j in 0..d {
            if i != j && g.has_edge(i, j) != h.has_edge(i, j) {
                diff += 1;
                if i < j && g.has_edge(j, i) != h.has_edge(j, i) {
                    double += 1;
                }
            }
        }
    }
    diff - double
}

/// All simple paths between `x` and `y` in the skeleton, as node lists.
pub fn simple_paths(g: &Graph, x: usize, y: usize) -> Vec<Vec<usize>> {
    fn go(g: &Graph, path: &mut Vec<usize>, on: &mut [bool], y: usize, out: &mut Vec<Vec<usize>>) {
        let v = *path.last().expect("non-empty");
        if v == y {
            out.push(path.clone());
            return;
        }
        for w in 0..g.d() {
            if !on[w] && (g.has_edge(v, w) || g.has_edge(w, v)) {
                on[w] = true;
                path.push(w);
                go(g, path, on, y, out);
                path.pop();
                on[w] = false;
            }
        }
    }
    let mut out = Vec::new();
    let mut on = vec![false; g.d()];
    on[x] = true;
    go(g, &mut vec![x], &mut on, y, &mut out);
    out
}

/// Directed paths `x → … → y`.
pub fn directed_paths(g: &Graph, x: usize, y: usize) -> Vec<Vec<usize>> {
    simple_paths(g, x, y)
        .into_iter()
        .filter(|p| p.windows(2).all(|w| g.has_edge(w[0], w[1])))
        .collect()
}

fn is_descendant(g: &Graph, of: usize, v: usize) -> bool {
    of == v || !directed_paths(g, of, v).is_empty()
}

/// Is the path blocked by `z` under the d-separation rules?
pub fn path_blocked(g: &Graph, path: &[usize], z: &[usize]) -> bool {
    path.windows(3).any(|w| {
        let (a, v, b) = (w[0], w[1], w[2]);
        let collider = g.has_edge(a, v) && g.has_edge(b, v);
        if collider {
            !z.iter().any(|&s| is_descendant(g, v, s))
        } else {
            z.contains(&v)
        }
    })
}

/// d-separation by enumerating every path.
pub fn d_separated(g: &Graph, x: usize, y: usize, z: &[usize]) -> bool {
    simple_paths(g, x, y).iter().all(|p| path_blocked(g, p, z))
}

/// SID by the adjustment criterion checked path by path: for each ordered
/// pair, either the prediction declares `j` a parent of `i` (correct iff `j`
/// is not a descendant of `i`), or the predicted parents of `i` must avoid
/// descendants of causal-path nodes and block every non-causal path.
pub fn sid_oracle(truth: &Graph, pred: &Graph) -> usize {
    let d = truth.d();
    let mut count = 0;
    for i in 0..d {
        let z = pred.parents(i);
        for j in 0..d {
            if i == j {
                continue;
            }
            let wrong = if z.contains(&j) {
                is_descendant(truth, i, j)
            } else {
                let causal = directed_paths(truth, i, j);
                let forbidden = causal
                    .iter()
                    .flat_map(|p| p[1..].iter().copied())
                    .any(|w| z.iter().any(|&s| is_descendant(truth, w, s)));
                let open_noncausal = simple_paths(truth, i, j)
                    .iter()
                    .filter(|p| !p.windows(2).all(|w| truth.has_edge(w[0], w[1])))
                    .any(|p| !path_blocked(truth, p, &z));
                forbidden || open_noncausal
            };
            count += usize::from(wrong);
        }
    }
    count
}

/// AUROC as the fraction of positive/negative pairs ordered correctly,
/// counting ties as one half.
pub fn auroc_pairwise(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (sp, _) in scores.iter().zip(labels).filter(|(_, &l)| l) {
        for (sn, _) in scores.iter().zip(labels).filter(|(_, &l)| !l) {
            pairs += 1.0;
            wins += if sp > sn {
                1.0
            } else if sp == sn {
                0.5
            } else {
                0.0
            };
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

/// Average precision by sweeping every distinct score as a threshold.
pub fn auprc_sweep(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    if pos == 0.0 {
        return None;
    }
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut area = 0.0;
    let mut last_recall = 0.0;
    for t in thresholds {
        let predicted: Vec<bool> = scores.iter().map(|&s| s >= t).collect();
        let tp = predicted.iter().zip(labels).filter(|(&p, &l)| p && l).count() as f64;
        let np = predicted.iter().filter(|&&p| p).count() as f64;
        let recall = tp / pos;
        area += (recall - last_recall) * tp / np;
        last_recall = recall;
    }
    Some(area)
}

/// Every DAG on `d` labelled nodes (`d ≤ 4` keeps this at 543 graphs).
pub fn all_dags(d: usize) -> Vec<Graph> {
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (i + 1..d).map(move |j| (i, j))).collect();
    let mut out = Vec::new();
    // each unordered pair is absent, forward or backward
    let total = 3usize.pow(pairs.len() as u32);
    for code in 0..total {
        let mut c = code;
        let mut g = Graph::empty(d);
        for &(i, j) in &pairs {
            match c % 3 {
                1 => g.set_edge(i, j, true),
                2 => g.set_edge(j, i, true),
                _ => {}
            }
            c /= 3;
        }
        if g.is_acyclic() {
            out.push(g);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dag_counts() {
        // OEIS A003024
        assert_eq!(all_dags(1).len(), 1);
        assert_eq!(all_dags(2).len(), 3);
        assert_eq!(all_dags(3).len(), 25);
        assert_eq!(all_dags(4).len(), 543);
    }

    #[test]
    fn matmul_naive_hand_case() {
        let a = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(matmul_naive(&a, &b).data(), &[13.0, 16.0]);
    }

    #[test]
    fn d_separation_textbook() {
        // collider 0 → 2 ← 1 with descendant 3
        let g = Graph::from_edges(4, &[(0, 2), (1, 2), (2, 3)]).unwrap();
        assert!(d_separated(&g, 0, 1, &[]));
        assert!(!d_separated(&g, 0, 1, &[2]));
        assert!(!d_separated(&g, 0, 1, &[3]));
    }

    #[test]
    fn spectral_radius_of_swap_is_one() {
        assert!((spectral_radius(&[0.0, 1.0, 1.0, 0.0], 2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn covariance_of_a_single_edge() {
        let c = linear_gaussian_covariance(&[0.0, 2.0, 0.0, 0.0], &[1.0, 1.0]);
        assert_eq!(c, vec![1.0, 2.0, 2.0, 5.0]);
    }
}
