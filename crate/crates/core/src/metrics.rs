//! Structure metrics: SHD, SID, precision/recall/F1, AUPRC and AUROC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::EdgeBeliefs;

/// Keep edges with `θ_ij > τ`.
pub fn threshold(beliefs: &EdgeBeliefs, tau: f64) -> Graph {
    let d = beliefs.d();
    let adj = (0..d * d).map(|e| e / d != e % d && beliefs.as_slice()[e] > tau).collect();
    Graph::from_adjacency(d, adj).expect("diagonal excluded")
}

/// Structural Hamming distance. Each unordered pair whose edge state differs
/// counts once, so a reversed edge costs 1.
pub fn shd(g: &Graph, h: &Graph) -> usize {
    assert_eq!(g.d(), h.d(), "shd: size mismatch");
    let d = g.d();
    let mut count = 0;
    for i in 0..d {
        for j in i + 1..d {
            if (g.has_edge(i, j), g.has_edge(j, i)) != (h.has_edge(i, j), h.has_edge(j, i)) {
                count += 1;
            }
        }
    }
    count
}

/// Structural intervention distance and whether an input had to be made
/// acyclic first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sid {
    pub value: usize,
    pub cyclic_fallback: bool,
}

/// Count ordered pairs `(i, j)` for which adjusting for the parents of `i` in
/// `pred` does not identify `p(x_j | do(x_i))` under `truth`.
///
/// Cyclic inputs are reduced to the DAG left after removing depth-first
/// back-edges, and the result is flagged.
pub fn sid(truth: &Graph, pred: &Graph) -> Result<Sid> {
    if truth.d() != pred.d() {
        return Err(Error::invalid("sid: size mismatch"));
    }
    let mut cyclic_fallback = false;
    let mut acyclic = |g: &Graph| {
        if g.is_acyclic() {
            g.clone()
        } else {
            cyclic_fallback = true;
            g.remove_back_edges()
        }
    };
    let (g, h) = (acyclic(truth), acyclic(pred));
    let d = g.d();
    let desc: Vec<Vec<bool>> = (0..d).map(|i| descendants(&g, i)).collect();
    let anc_of: Vec<Vec<bool>> = (0..d).map(|j| ancestors(&g, j)).collect();
    let mut value = 0;
    for i in 0..d {
        let z = h.parents(i);
        let mut in_z = vec![false; d];
        for &p in &z {
            in_z[p] = true;
        }
        for j in 0..d {
            if i == j {
                continue;
            }
            let wrong = if in_z[j] {
                desc[i][j]
            } else {
                // nodes strictly after i on directed i → j paths
                let on_path: Vec<usize> = (0..d).filter(|&w| w != i && desc[i][w] && anc_of[j][w]).collect();
                let forbidden = z.iter().any(|&p| on_path.iter().any(|&w| desc[w][p]));
                forbidden || !d_separated_backdoor(&g, i, j, &in_z, &on_path)
            };
            value += usize::from(wrong);
        }
    }
    Ok(Sid { value, cyclic_fallback })
}

/// Nodes reachable from `i`, including `i`.
pub fn descendants(g: &Graph, i: usize) -> Vec<bool> {
    reach(g, i, |g, v| g.children(v))
}

/// Nodes that reach `j`, including `j`.
pub fn ancestors(g: &Graph, j: usize) -> Vec<bool> {
    reach(g, j, |g, v| g.parents(v))
}

fn reach(g: &Graph, start: usize, next: impl Fn(&Graph, usize) -> Vec<usize>) -> Vec<bool> {
    let mut seen = vec![false; g.d()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(v) = stack.pop() {
        for w in next(g, v) {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen
}

/// Bayes-ball reachability: is `y` d-separated from `x` given `z` in `g`
/// after deleting the edges from `x` into `cut` nodes?
fn d_separated_backdoor(g: &Graph, x: usize, y: usize, in_z: &[bool], cut: &[usize]) -> bool {
    let d = g.d();
    let mut removed = vec![false; d];
    for &c in cut {
        removed[c] = g.has_edge(x, c);
    }
    let edge = |a: usize, b: usize| g.has_edge(a, b) && !(a == x && removed[b]);
    // ancestors of z decide whether a collider is open
    let mut anc_z = vec![false; d];
    let mut stack: Vec<usize> = (0..d).filter(|&v| in_z[v]).collect();
    for &v in &stack {
        anc_z[v] = true;
    }
    while let Some(v) = stack.pop() {
        for p in 0..d {
            if edge(p, v) && !anc_z[p] {
                anc_z[p] = true;
                stack.push(p);
            }
        }
    }
    // state: (node, arrived from a child = going up)
    let mut visited = vec![[false; 2]; d];
    let mut queue = vec![(x, true)];
    while let Some((v, up)) = queue.pop() {
        if visited[v][usize::from(up)] {
            continue;
        }
        visited[v][usize::from(up)] = true;
        if v == y {
            return false;
        }
        if up && !in_z[v] {
            for w in 0..d {
                if edge(w, v) {
                    queue.push((w, true));
                }
                if edge(v, w) {
                    queue.push((w, false));
                }
            }
        } else if !up {
            if !in_z[v] {
                for w in 0..d {
                    if edge(v, w) {
                        queue.push((w, false));
                    }
                }
            }
            if anc_z[v] {
                for w in 0..d {
                    if edge(w, v) {
                        queue.push((w, true));
                    }
                }
            }
        }
    }
    true
}

/// Off-diagonal scores and labels in row-major order.
pub fn off_diagonal(beliefs: &EdgeBeliefs, truth: &Graph) -> (Vec<f64>, Vec<bool>) {
    let d = beliefs.d();
    let mut scores = Vec::with_capacity(d * d.saturating_sub(1));
    let mut labels = Vec::with_capacity(scores.capacity());
    for i in 0..d {
        for j in 0..d {
            if i != j {
                scores.push(beliefs.get(i, j));
                labels.push(truth.has_edge(i, j));
            }
        }
    }
    (scores, labels)
}

/// Area under the ROC curve by the Mann–Whitney statistic with midranks, so
/// ties count one half. `None` unless both classes are present.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < idx.len() {
        let mut end = k;
        while end + 1 < idx.len() && scores[idx[end + 1]] == scores[idx[k]] {
            end += 1;
        }
        let midrank = (k + end) as f64 / 2.0 + 1.0;
        rank_sum += midrank * idx[k..=end].iter().filter(|&&e| labels[e]).count() as f64;
        k = end + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: `Σ (R_k − R_{k−1}) P_k` over distinct score
/// thresholds in decreasing order, without interpolation. `None` without
/// positives.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut area, mut last_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut k = 0;
    while k < idx.len() {
        let s = scores[idx[k]];
        while k < idx.len() && scores[idx[k]] == s {
            tp += usize::from(labels[idx[k]]);
            seen += 1;
            k += 1;
        }
        let recall = tp as f64 / pos as f64;
        area += (recall - last_recall) * tp as f64 / seen as f64;
        last_recall = recall;
    }
    Some(area)
}

/// `(auprc, auroc)` of the off-diagonal beliefs.
pub fn pr_roc(beliefs: &EdgeBeliefs, truth: &Graph) -> Result<(Option<f64>, Option<f64>)> {
    if beliefs.d() != truth.d() {
        return Err(Error::invalid("pr_roc: size mismatch"));
    }
    if beliefs.d() < 2 {
        return Err(Error::invalid("pr_roc: need d >= 2"));
    }
    let (s, l) = off_diagonal(beliefs, truth);
    Ok((auprc(&s, &l), auroc(&s, &l)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub shd: usize,
    pub sid: usize,
    /// 0 when nothing is predicted.
    pub precision: f64,
    /// 0 when the truth has no edges.
    pub recall: f64,
    pub f1: f64,
    /// Absent without positive labels.
    pub auprc: Option<f64>,
    /// Absent unless both labels occur.
    pub auroc: Option<f64>,
    pub acyclic: bool,
    pub edges_predicted: usize,
    pub sid_cyclic_fallback: bool,
}

/// All metrics for one prediction at threshold `tau`.
pub fn evaluate(beliefs: &EdgeBeliefs, truth: &Graph, tau: f64) -> Result<EvalReport> {
    if beliefs.d() != truth.d() {
        return Err(Error::invalid(format!(
            "prediction has d={} but truth has d={}",
            beliefs.d(),
            truth.d()
        )));
    }
    let pred = threshold(beliefs, tau);
    let tp = pred.edges().filter(|&(i, j)| truth.has_edge(i, j)).count();
    let (np, nt) = (pred.num_edges(), truth.num_edges());
    let precision = if np == 0 { 0.0 } else { tp as f64 / np as f64 };
    let recall = if nt == 0 { 0.0 } else { tp as f64 / nt as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let s = sid(truth, &pred)?;
    let (auprc, auroc) = if truth.d() >= 2 { pr_roc(beliefs, truth)? } else { (None, None) };
    Ok(EvalReport {
        shd: shd(truth, &pred),
        sid: s.value,
        precision,
        recall,
        f1,
        auprc,
        auroc,
        acyclic: pred.is_acyclic(),
        edges_predicted: np,
        sid_cyclic_fallback: s.cyclic_fallback,
    })
}

/// Mean and standard error of one metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

impl MeanSe {
    /// Over the finite values; `None` when none are present.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let se = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        Some(Self {
            mean,
            se,
            count: v.len(),
        })
    }
}

/// Aggregate row of a batch evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub tasks: usize,
    pub shd: Option<MeanSe>,
    pub sid: Option<MeanSe>,
    pub precision: Option<MeanSe>,
    pub recall: Option<MeanSe>,
    pub f1: Option<MeanSe>,
    pub auprc: Option<MeanSe>,
    pub auroc: Option<MeanSe>,
    /// Fraction of thresholded predictions containing a cycle.
    pub cyclic_fraction: f64,
}

pub fn aggregate(reports: &[EvalReport]) -> Aggregate {
    let col = |f: fn(&EvalReport) -> Option<f64>| MeanSe::of(reports.iter().filter_map(f));
    Aggregate {
        tasks: reports.len(),
        shd: col(|r| Some(r.shd as f64)),
        sid: col(|r| Some(r.sid as f64)),
        precision: col(|r| Some(r.precision)),
        recall: col(|r| Some(r.recall)),
        f1: col(|r| Some(r.f1)),
        auprc: col(|r| r.auprc),
        auroc: col(|r| r.auroc),
        cyclic_fraction: if reports.is_empty() {
            0.0
        } else {
            reports.iter().filter(|r| !r.acyclic).count() as f64 / reports.len() as f64
        },
    }
}

/// One JSON line per report followed by the aggregate row.
pub fn to_json_lines(reports: &[EvalReport]) -> Result<String> {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    out.push_str(&serde_json::to_string(&serde_json::json!({ "aggregate": aggregate(reports) }))?);
    out.push('\n');
    Ok(out)
}
