//! Piecewise-linear interpolation of sampled paths and the auxiliary
//! monomial processes built from powers of increments.
//!
//! A path is stored as node values on its uniform grid and evaluated lazily;
//! between nodes the value at t is taken from the step owning t's left grid
//! neighbor, i.e. slope h⁻¹·(node increment) on (t_k, t_{k+1}].

use crate::error::{Error, Result};
use crate::fbm::FbmPath;
use crate::io;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearPath {
    h: f64,
    dim: usize,
    /// (n+1) × dim node values, row-major; grid times are k·h from 0.
    values: Vec<f64>,
}

impl PiecewiseLinearPath {
    pub fn from_nodes(h: f64, dim: usize, values: Vec<f64>) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::parameter("h", format!("{h} not positive")));
        }
        if dim == 0 {
            return Err(Error::parameter("dim", "must be at least 1"));
        }
        if values.len() < 2 * dim || values.len() % dim != 0 {
            return Err(Error::Dimension {
                context: "from_nodes",
                expected: dim,
                got: values.len(),
            });
        }
        Ok(Self { h, dim, values })
    }

    pub fn n_steps(&self) -> usize {
        self.values.len() / self.dim - 1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps() as f64 * self.h
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.h
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn increment_into(&self, k: usize, out: &mut [f64]) {
        let a = self.node(k);
        let b = self.node(k + 1);
        for (o, (x, y)) in out.iter_mut().zip(b.iter().zip(a)) {
            *o = x - y;
        }
    }

    pub fn increment(&self, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.increment_into(k, &mut out);
        out
    }

    /// Linear interpolant at t ∈ [0, T].
    pub fn value_at(&self, t: f64) -> Result<Vec<f64>> {
        let horizon = self.horizon();
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::parameter(
                "t",
                format!("{t} outside [0, {horizon}]"),
            ));
        }
        let k = ((t / self.h).floor() as usize).min(self.n_steps() - 1);
        let frac = (t - self.time(k)) / self.h;
        let a = self.node(k);
        let b = self.node(k + 1);
        Ok(a.iter()
            .zip(b)
            .map(|(x, y)| x + frac * (y - x))
            .collect())
    }

    /// Σ_k |Δ component| over the grid; exact for a piecewise-linear path.
    pub fn total_variation(&self, component: usize) -> f64 {
        (0..self.n_steps())
            .map(|k| (self.node(k + 1)[component] - self.node(k)[component]).abs())
            .sum()
    }

    /// CSV export: header `t,x1,...,xD`, one row per grid point.
    pub fn to_csv(&self) -> String {
        let mut header = String::from("t");
        for l in 1..=self.dim {
            header.push_str(&format!(",x{l}"));
        }
        let lines = (0..=self.n_steps()).map(|k| {
            let mut fields = Vec::with_capacity(self.dim + 1);
            fields.push(self.time(k));
            fields.extend_from_slice(self.node(k));
            io::csv_line(&fields)
        });
        io::csv_document(&header, lines)
    }
}

/// Multi-index α over the driving dimensions; |α| = Σ α_l ≥ 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn new(exps: Vec<u32>) -> Result<Self> {
        if exps.is_empty() || exps.iter().sum::<u32>() == 0 {
            return Err(Error::parameter("alpha", "weight |alpha| must be >= 1"));
        }
        Ok(Self(exps))
    }

    pub fn weight(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// ∏_l v_l^{α_l}.
    pub fn monomial(&self, v: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(v)
            .map(|(&e, &x)| x.powi(e as i32))
            .product()
    }
}

impl std::fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

/// All weight-3 multi-indices over d letters, lexicographically decreasing:
/// (3,0,…) first, (0,…,0,3) last. This order is the canonical component
/// order everywhere the weight-3 block appears.
pub fn weight3_indices(d: usize) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    let mut current = vec![0u32; d];
    fn rec(pos: usize, remaining: u32, current: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
        if pos + 1 == current.len() {
            current[pos] = remaining;
            out.push(MultiIndex(current.clone()));
            return;
        }
        // Descending exponent first keeps the emitted order lex-decreasing.
        for e in (0..=remaining).rev() {
            current[pos] = e;
            rec(pos + 1, remaining - e, current, out);
        }
        current[pos] = 0;
    }
    rec(0, 3, &mut current, &mut out);
    out
}

/// Stars-and-bars count of weight-3 indices: C(d+2, 2).
pub fn weight3_count(d: usize) -> usize {
    d * (d + 1) * (d + 2) / 6
}

/// Dimension of the extended process for a d-dimensional driver.
pub fn xtilde_dim(d: usize) -> usize {
    d + weight3_count(d)
}

/// The sampled path as a piecewise-linear interpolant.
pub fn interpolate(path: &FbmPath) -> PiecewiseLinearPath {
    let n = path.n_steps();
    let d = path.dim();
    let mut values = Vec::with_capacity((n + 1) * d);
    for k in 0..=n {
        values.extend_from_slice(path.node(k));
    }
    PiecewiseLinearPath {
        h: path.step(),
        dim: d,
        values,
    }
}

/// Scalar process starting at 0 whose slope on step k+1 is
/// h⁻¹ ∏_l (ΔB^l_{k+1})^{α_l}; for |α| = 1 this is one interpolated
/// component of the path itself.
pub fn monomial_process(path: &FbmPath, alpha: &MultiIndex) -> Result<PiecewiseLinearPath> {
    if alpha.len() != path.dim() {
        return Err(Error::Dimension {
            context: "monomial_process",
            expected: path.dim(),
            got: alpha.len(),
        });
    }
    if alpha.weight() == 0 {
        return Err(Error::parameter("alpha", "weight |alpha| must be >= 1"));
    }
    let n = path.n_steps();
    let mut db = vec![0.0; path.dim()];
    let mut values = Vec::with_capacity(n + 1);
    values.push(0.0);
    let mut acc = 0.0;
    for k in 0..n {
        path.increment_into(k, &mut db);
        acc += alpha.monomial(&db);
        values.push(acc);
    }
    PiecewiseLinearPath::from_nodes(path.step(), 1, values)
}

/// Extended driver: first d components interpolate the path, then one
/// monomial process per weight-3 index in canonical order.
pub fn assemble_xtilde(path: &FbmPath) -> Result<PiecewiseLinearPath> {
    let d = path.dim();
    let n = path.n_steps();
    let dim = xtilde_dim(d);
    let mut columns: Vec<PiecewiseLinearPath> = Vec::with_capacity(weight3_count(d));
    for alpha in weight3_indices(d) {
        columns.push(monomial_process(path, &alpha)?);
    }
    let mut values = Vec::with_capacity((n + 1) * dim);
    for k in 0..=n {
        values.extend_from_slice(path.node(k));
        for col in &columns {
            values.push(col.node(k)[0]);
        }
    }
    PiecewiseLinearPath::from_nodes(path.step(), dim, values)
}

/// Comparison driver of the same dimension: the path in the first d
/// components and exact zeros in the weight-3 block.
pub fn assemble_xbar(path: &FbmPath, total_dim: usize) -> Result<PiecewiseLinearPath> {
    let d = path.dim();
    let expected = xtilde_dim(d);
    if total_dim != expected {
        return Err(Error::Dimension {
            context: "assemble_xbar",
            expected,
            got: total_dim,
        });
    }
    let n = path.n_steps();
    let mut values = Vec::with_capacity((n + 1) * total_dim);
    for k in 0..=n {
        values.extend_from_slice(path.node(k));
        values.extend(std::iter::repeat(0.0).take(total_dim - d));
    }
    PiecewiseLinearPath::from_nodes(path.step(), total_dim, values)
}
