//! Diagnostics: gradient conflict, imbalance, Pareto failure, individual
//! progress, Δm%, the imbalance-vs-cosθ correlation study and the paired
//! Pareto-failure census.

use rand::Rng;
use serde::Serialize;

use crate::combiners::{estimate_mu, Combiner, MuMode};
use crate::error::{Error, Result};
use crate::linalg::{cosine, norm, TaskGradientSet};
use crate::runner::TrajectoryTrace;
use crate::seed;
use crate::solvers::SolverConfig;

/// Relative norm below which a combined direction counts as zero.
pub const ZERO_DIRECTION_RTOL: f64 = 1e-12;

pub fn gradient_similarity(gi: &[f64], gj: &[f64]) -> Result<f64> {
    cosine(gi, gj)
}

/// Strictly negative cosine.
pub fn is_conflicting(gi: &[f64], gj: &[f64]) -> Result<bool> {
    Ok(gradient_similarity(gi, gj)? < 0.0)
}

/// Largest over smallest task-gradient norm.
pub fn imbalance_ratio(g: &TaskGradientSet) -> Result<f64> {
    let norms = g.row_norms();
    let min = norms.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = norms.iter().cloned().fold(0.0, f64::max);
    if min == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(max / min)
}

pub fn is_imbalanced(g: &TaskGradientSet) -> Result<bool> {
    Ok(imbalance_ratio(g)? > 1.0)
}

/// True iff `d` has a negative cosine with some nonzero task gradient.
///
/// A zero direction is Pareto-stationary and never a failure; "zero" means
/// `‖d‖ ≤ 1e-12 · maxᵢ‖gᵢ‖`, which absorbs cancellation residue.
pub fn pareto_failure(d: &[f64], g: &TaskGradientSet) -> bool {
    let scale = g.row_norms().into_iter().fold(0.0, f64::max);
    let dn = norm(d);
    if dn == 0.0 || dn <= ZERO_DIRECTION_RTOL * scale {
        return false;
    }
    g.rows().filter(|row| norm(row) > 0.0).any(|row| cosine(d, row).map(|c| c < 0.0).unwrap_or(false))
}

/// `rᵢ(t) = Lᵢ(t)/Lᵢ(0)`; `None` when `Lᵢ(0) = 0`.
pub fn progress_from_losses(losses: &[Vec<f64>]) -> Vec<Option<Vec<f64>>> {
    let Some(first) = losses.first() else { return Vec::new() };
    (0..first.len())
        .map(|i| {
            let base = first[i];
            (base != 0.0).then(|| losses.iter().map(|l| l[i] / base).collect())
        })
        .collect()
}

pub fn individual_progress(trace: &TrajectoryTrace) -> Vec<Option<Vec<f64>>> {
    let losses: Vec<Vec<f64>> = trace.records.iter().map(|r| r.losses.clone()).collect();
    progress_from_losses(&losses)
}

/// One metric for Δm%: method value, baseline value, and whether higher is better.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaMEntry {
    pub method: f64,
    pub baseline: f64,
    pub higher_is_better: bool,
}

/// `(100/K) Σ (−1)^δ (M_m − M_b)/M_b`, in percent; lower is better.
pub fn delta_m(entries: &[DeltaMEntry]) -> Result<f64> {
    if entries.is_empty() {
        return Err(Error::InvalidConfig("delta_m needs at least one metric".into()));
    }
    let mut sum = 0.0;
    for (i, e) in entries.iter().enumerate() {
        if e.baseline == 0.0 {
            return Err(Error::ZeroBaseline(i));
        }
        let rel = (e.method - e.baseline) / e.baseline;
        sum += if e.higher_is_better { -rel } else { rel };
    }
    Ok(100.0 * sum / entries.len() as f64)
}

/// Average ranks (1-based), ties share the mean rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap());
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` if either series is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let mx = rx.iter().sum::<f64>() / n as f64;
    let my = ry.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Random two-task gradient pair in the plane: the first gradient has unit
/// norm, the second has norm `r` with `log r` uniform on `[0, ln max_ratio]`,
/// directions uniform on the circle. Task order is shuffled.
pub fn sample_imbalanced_pair<R: Rng>(rng: &mut R, max_ratio: f64) -> TaskGradientSet {
    let r = (rng.gen::<f64>() * max_ratio.ln()).exp();
    let a1 = rng.gen::<f64>() * std::f64::consts::TAU;
    let a2 = rng.gen::<f64>() * std::f64::consts::TAU;
    let small = vec![a1.cos(), a1.sin()];
    let large = vec![r * a2.cos(), r * a2.sin()];
    let rows = if rng.gen::<bool>() { vec![small, large] } else { vec![large, small] };
    TaskGradientSet::new(rows).expect("finite sample")
}

/// `n` pairs from [`sample_imbalanced_pair`] with norm ratios in `[1, 100]`.
pub fn imbalanced_stream(n: usize, seed: u64) -> Vec<TaskGradientSet> {
    let mut rng = seed::rng(seed, 0);
    (0..n).map(|_| sample_imbalanced_pair(&mut rng, 100.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesRange {
    pub min: f64,
    pub max: f64,
}

impl SeriesRange {
    fn of(x: &[f64]) -> Self {
        Self {
            min: x.iter().cloned().fold(f64::INFINITY, f64::min),
            max: x.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub samples: usize,
    /// Spearman ρ(1/r, cosθ); `None` when a series is constant.
    pub spearman: Option<f64>,
    pub degenerate: bool,
    pub inv_ratio: SeriesRange,
    pub cos_theta: SeriesRange,
    pub cos_theta_in_unit_interval: bool,
}

/// Correlation between `1/r` and `cosθ` computed from paired series.
pub fn correlation_report(inv_ratio: &[f64], cos_theta: &[f64]) -> CorrelationReport {
    let rho = spearman(inv_ratio, cos_theta);
    CorrelationReport {
        samples: inv_ratio.len(),
        spearman: rho,
        degenerate: rho.is_none(),
        inv_ratio: SeriesRange::of(inv_ratio),
        cos_theta: SeriesRange::of(cos_theta),
        cos_theta_in_unit_interval: cos_theta.iter().all(|c| (0.0..=1.0).contains(c)),
    }
}

/// Sample random imbalanced pairs, compute `r` and PM `cosθ` for each, and
/// report their rank correlation.
pub fn correlation_study(n_samples: usize, seed: u64) -> Result<CorrelationReport> {
    if n_samples < 100 {
        return Err(Error::InvalidConfig(format!("correlation study needs >= 100 samples, got {n_samples}")));
    }
    let solver = SolverConfig::default();
    let mut rng = seed::rng(seed, 1);
    let mut inv = Vec::with_capacity(n_samples);
    let mut cos = Vec::with_capacity(n_samples);
    while inv.len() < n_samples {
        let g = sample_imbalanced_pair(&mut rng, 100.0);
        // Exactly antiparallel pairs have no PM angle; they occur with probability zero.
        let Ok(c) = estimate_mu(&g, MuMode::Pm, &solver) else { continue };
        inv.push(1.0 / imbalance_ratio(&g)?);
        cos.push(c);
    }
    Ok(correlation_report(&inv, &cos))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CensusCount {
    pub combiner: String,
    pub steps: usize,
    pub pareto_failures: usize,
    pub skipped: usize,
    pub failures_on_skipped: usize,
}

/// Feed the same stream to every combiner and count Pareto failures.
pub fn pareto_failure_census(
    stream: &[TaskGradientSet],
    combiners: &mut [Box<dyn Combiner>],
) -> Result<Vec<CensusCount>> {
    combiners
        .iter_mut()
        .map(|c| {
            let mut count =
                CensusCount { combiner: c.name(), steps: 0, pareto_failures: 0, skipped: 0, failures_on_skipped: 0 };
            for g in stream {
                let out = c.combine(g)?;
                count.steps += 1;
                count.pareto_failures += out.pareto_failure as usize;
                count.skipped += out.skipped as usize;
                count.failures_on_skipped += (out.skipped && out.pareto_failure) as usize;
            }
            Ok(count)
        })
        .collect()
}
