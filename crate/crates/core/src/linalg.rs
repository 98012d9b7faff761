//! Task-gradient containers and the small amount of dense vector algebra the
//! solvers need. Everything is `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sum constraint tolerance for [`SimplexWeights`].
pub const SIMPLEX_TOL: f64 = 1e-9;

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

pub fn sub(u: &[f64], v: &[f64]) -> Vec<f64> {
    u.iter().zip(v).map(|(a, b)| a - b).collect()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scaled(alpha: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| alpha * v).collect()
}

/// Cosine similarity `u·v / (‖u‖‖v‖)`, clamped to `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), got: v.len() });
    }
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// The K×m matrix of per-task gradients, one row per task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskGradientSet {
    data: Vec<f64>,
    tasks: usize,
    dim: usize,
}

impl TaskGradientSet {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let tasks = rows.len();
        if tasks < 2 {
            return Err(Error::TooFewTasks(tasks));
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        let mut data = Vec::with_capacity(tasks * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: row.len() });
            }
            if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient entry {bad}")));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { data, tasks, dim })
    }

    /// Convenience constructor for literal fixtures.
    pub fn from_rows<const M: usize>(rows: &[[f64; M]]) -> Result<Self> {
        Self::new(rows.iter().map(|r| r.to_vec()).collect())
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn row_norms(&self) -> Vec<f64> {
        self.rows().map(norm).collect()
    }

    /// Row mean `g₀`.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        let inv = 1.0 / self.tasks as f64;
        for row in self.rows() {
            axpy(inv, row, &mut out);
        }
        out
    }

    /// `Gᵀw = Σ wᵢ gᵢ`.
    pub fn combine(&self, w: &[f64]) -> Vec<f64> {
        debug_assert_eq!(w.len(), self.tasks);
        let mut out = vec![0.0; self.dim];
        for (row, &wi) in self.rows().zip(w) {
            axpy(wi, row, &mut out);
        }
        out
    }

    /// Every row multiplied by the matching factor.
    pub fn scale_rows(&self, factors: &[f64]) -> Result<Self> {
        if factors.len() != self.tasks {
            return Err(Error::DimensionMismatch { expected: self.tasks, got: factors.len() });
        }
        Self::new(self.rows().zip(factors).map(|(r, &a)| scaled(a, r)).collect())
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }
}

/// Symmetric K×K matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Gram {
    data: Vec<f64>,
    size: usize,
}

impl Gram {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.size..(i + 1) * self.size]
    }

    pub fn mul_vec(&self, w: &[f64]) -> Vec<f64> {
        (0..self.size).map(|i| dot(self.row(i), w)).collect()
    }

    /// `wᵀ A w`.
    pub fn quad(&self, w: &[f64]) -> f64 {
        dot(w, &self.mul_vec(w))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.size).map(|i| self.row(i).to_vec()).collect()
    }
}

/// Gram matrix `gᵢ·gⱼ`.
pub fn gram(g: &TaskGradientSet) -> Gram {
    let k = g.tasks();
    let mut data = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            let v = dot(g.row(i), g.row(j));
            data[i * k + j] = v;
            data[j * k + i] = v;
        }
    }
    Gram { data, size: k }
}

/// Weights on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("simplex weight".into()));
        }
        let sum: f64 = w.iter().sum();
        if w.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidConfig(format!("not on the simplex: {w:?}")));
        }
        Ok(Self(w))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn vertex(k: usize, i: usize) -> Self {
        let mut w = vec![0.0; k];
        w[i] = 1.0;
        Self(w)
    }

    /// Caller guarantees the invariants.
    pub(crate) fn from_raw(w: Vec<f64>) -> Self {
        Self(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Strictly positive, unnormalized weights (Nash family).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PositiveWeights(Vec<f64>);

impl PositiveWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("positive weight".into()));
        }
        if w.iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidConfig(format!("weights must be > 0: {w:?}")));
        }
        Ok(Self(w))
    }

    pub fn ones(k: usize) -> Self {
        Self(vec![1.0; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Weights {
    Simplex(SimplexWeights),
    Positive(PositiveWeights),
}

impl Weights {
    pub fn as_slice(&self) -> &[f64] {
        match self {
            Weights::Simplex(w) => w.as_slice(),
            Weights::Positive(w) => w.as_slice(),
        }
    }
}

/// Result of one combiner call.
#[derive(Debug, Clone, PartialEq)]
pub struct CombineOutcome {
    pub d: Vec<f64>,
    pub weights: Weights,
    pub mu: Option<f64>,
    pub cos_theta: Option<f64>,
    pub pareto_failure: bool,
    /// Nash family only: the solver gave up and previous weights were reused.
    pub skipped: bool,
    pub solver_iters: usize,
}

impl CombineOutcome {
    /// Outcome with diagnostics filled from `d` and `g`.
    pub fn new(g: &TaskGradientSet, d: Vec<f64>, weights: Weights) -> Self {
        let pareto_failure = crate::metrics::pareto_failure(&d, g);
        Self { d, weights, mu: None, cos_theta: None, pareto_failure, skipped: false, solver_iters: 0 }
    }
}
