//! Observation matrices with intervention masks, and their on-disk format.
//!
//! A task directory holds:
//!
//! ```text
//! meta.json    {"n":..,"d":..,"domain":..,"seed":..,"standardized":..}
//! values.csv   n rows × d reals
//! mask.csv     n rows × d 0/1 intervention indicators
//! graph.csv    d rows × d 0/1 adjacency (i, j) = edge i → j
//! graph.json   {"d":..,"family":..,"seed":..}
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphMeta};

/// `n` samples of `d` variables plus the per-entry intervention indicator.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl Dataset {
    pub fn new(n: usize, d: usize, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != n * d || mask.len() != n * d {
            return Err(Error::invalid(format!(
                "dataset {n}x{d} given {} values and {} mask entries",
                values.len(),
                mask.len()
            )));
        }
        Ok(Self { n, d, values, mask })
    }

    pub fn observational(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(n, d, values, vec![false; n * d])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.d + col]
    }

    pub fn is_intervened(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.d + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n).map(|r| self.value(r, col)).collect()
    }

    /// Number of rows with at least one intervened variable.
    pub fn interventional_rows(&self) -> usize {
        (0..self.n)
            .filter(|&r| self.mask[r * self.d..(r + 1) * self.d].iter().any(|&m| m))
            .count()
    }

    /// Reorder rows: output row `r` is input row `perm[r]`.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        let d = self.d;
        let mut values = Vec::with_capacity(self.values.len());
        let mut mask = Vec::with_capacity(self.mask.len());
        for &r in perm {
            values.extend_from_slice(&self.values[r * d..(r + 1) * d]);
            mask.extend_from_slice(&self.mask[r * d..(r + 1) * d]);
        }
        Self {
            n: self.n,
            d,
            values,
            mask,
        }
    }

    /// Reorder variables: output column `c` is input column `perm[c]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        let d = self.d;
        let mut values = Vec::with_capacity(self.values.len());
        let mut mask = Vec::with_capacity(self.mask.len());
        for r in 0..self.n {
            for &c in perm {
                values.push(self.values[r * d + c]);
                mask.push(self.mask[r * d + c]);
            }
        }
        Self {
            n: self.n,
            d,
            values,
            mask,
        }
    }

    /// Z-score every column in place. Constant columns are only centred.
    pub fn standardize(&mut self) {
        let (n, d) = (self.n, self.d);
        if n == 0 {
            return;
        }
        for c in 0..d {
            let mean = (0..n).map(|r| self.values[r * d + c]).sum::<f64>() / n as f64;
            let var = (0..n).map(|r| (self.values[r * d + c] - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            for r in 0..n {
                let v = &mut self.values[r * d + c];
                *v -= mean;
                if sd > 0.0 {
                    *v /= sd;
                }
            }
        }
    }
}

/// Metadata written as `meta.json` in a task directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub n: usize,
    pub d: usize,
    pub domain: String,
    pub seed: u64,
    pub standardized: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_types: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tech_noise_preset: Option<String>,
}

/// A ground-truth graph with a dataset generated from it.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub graph: Graph,
    pub data: Dataset,
    pub meta: DatasetMeta,
    pub graph_family: String,
}

impl Task {
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let (n, d) = (self.data.n(), self.data.d());
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&self.meta)?)?;
        fs::write(dir.join("values.csv"), format_matrix(n, d, self.data.values()))?;
        let mask: Vec<f64> = self.data.mask().iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        fs::write(dir.join("mask.csv"), format_matrix(n, d, &mask))?;
        fs::write(dir.join("graph.csv"), self.graph.to_csv())?;
        let gm = GraphMeta {
            d,
            family: self.graph_family.clone(),
            seed: self.meta.seed,
        };
        fs::write(dir.join("graph.json"), serde_json::to_string_pretty(&gm)?)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)
            .map_err(|e| Error::format(&meta_path, e.to_string()))?;
        let data = read_dataset(dir, Some((meta.n, meta.d)))?;
        let graph = Graph::read(&dir.join("graph.csv"))?;
        if graph.d() != meta.d {
            return Err(Error::format(dir.join("graph.csv"), "graph size disagrees with meta.json"));
        }
        let graph_family = match fs::read_to_string(dir.join("graph.json")) {
            Ok(text) => serde_json::from_str::<GraphMeta>(&text)?.family,
            Err(_) => "unknown".into(),
        };
        Ok(Self {
            graph,
            data,
            meta,
            graph_family,
        })
    }
}

/// Read `values.csv` and `mask.csv` from a directory. A missing mask file
/// means purely observational data.
pub fn read_dataset(dir: &Path, expect: Option<(usize, usize)>) -> Result<Dataset> {
    let vpath = dir.join("values.csv");
    let rows = parse_csv_matrix(&fs::read_to_string(&vpath)?).map_err(|e| Error::format(&vpath, e.to_string()))?;
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::format(&vpath, "ragged rows"));
    }
    if let Some(shape) = expect {
        if shape != (n, d) {
            return Err(Error::format(&vpath, format!("expected {shape:?}, found ({n}, {d})")));
        }
    }
    let values: Vec<f64> = rows.into_iter().flatten().collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(&vpath, "non-finite value"));
    }
    let mpath = dir.join("mask.csv");
    let mask = if mpath.exists() {
        let m = parse_csv_matrix(&fs::read_to_string(&mpath)?).map_err(|e| Error::format(&mpath, e.to_string()))?;
        if m.len() != n || m.iter().any(|r| r.len() != d) {
            return Err(Error::format(&mpath, "mask shape differs from values"));
        }
        m.into_iter().flatten().map(|v| v != 0.0).collect()
    } else {
        vec![false; n * d]
    };
    Dataset::new(n, d, values, mask)
}

/// Rows of comma-separated reals, shortest round-trip formatting.
pub fn format_matrix(rows: usize, cols: usize, data: &[f64]) -> String {
    let mut s = String::with_capacity(rows * cols * 8);
    for r in 0..rows {
        for c in 0..cols {
            if c > 0 {
                s.push(',');
            }
            let _ = write!(s, "{}", data[r * cols + c]);
        }
        s.push('\n');
    }
    s
}

pub fn parse_csv_matrix(text: &str) -> Result<Vec<Vec<f64>>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            line.split(',')
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::invalid(format!("not a number: {f:?}")))
                })
                .collect()
        })
        .collect()
}

pub fn read_matrix(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let rows = parse_csv_matrix(&fs::read_to_string(path)?).map_err(|e| Error::format(path, e.to_string()))?;
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::format(path, "ragged rows"));
    }
    Ok((r, c, rows.into_iter().flatten().collect()))
}
