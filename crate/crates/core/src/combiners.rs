//! Gradient-combination strategies.
//!
//! Each strategy is available as a free function on a single
//! [`TaskGradientSet`] and as a stateful [`Combiner`] built by
//! [`build_combiner`] for use over a stream of steps.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    axpy, cosine, dot, gram, norm, scaled, CombineOutcome, PositiveWeights, SimplexWeights, TaskGradientSet, Weights,
};
use crate::metrics::imbalance_ratio;
use crate::seed;
use crate::solvers::{mgda_minnorm, minimize_family, nash_weights, simplex_project, NormTerm, SolverConfig};

/// Positivity clip for the imbalance-sensitive Nash weights.
pub const POSITIVE_CLIP: f64 = 1e-9;
/// Floor inside `ln((GGᵀω)ᵢ)`.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Ls,
    Mgda,
    Pcgrad,
    Cagrad,
    Imgrad,
    Nash,
    ImgradNash,
    Adaptive,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Ls,
        Method::Mgda,
        Method::Pcgrad,
        Method::Cagrad,
        Method::Imgrad,
        Method::Nash,
        Method::ImgradNash,
        Method::Adaptive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ls => "ls",
            Method::Mgda => "mgda",
            Method::Pcgrad => "pcgrad",
            Method::Cagrad => "cagrad",
            Method::Imgrad => "imgrad",
            Method::Nash => "nash",
            Method::ImgradNash => "imgrad-nash",
            Method::Adaptive => "adaptive",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}`")))
    }
}

/// How the imbalance coefficient μ is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MuMode {
    /// Cosine between the mean gradient and the MGDA min-norm point.
    #[default]
    #[serde(rename = "PM")]
    Pm,
    /// Cosine between the mean gradient and the smallest task gradient.
    #[serde(rename = "LM")]
    Lm,
    /// `1 / (1 + ln r)` with `r` the imbalance ratio.
    #[serde(rename = "DC")]
    Dc,
}

impl FromStr for MuMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "PM" => Ok(MuMode::Pm),
            "LM" => Ok(MuMode::Lm),
            "DC" => Ok(MuMode::Dc),
            _ => Err(Error::InvalidConfig(format!("unknown mu mode `{s}`"))),
        }
    }
}

/// Which min-norm term the IMGrad objective uses: `μ√φ‖g_ω‖` (`alg1`) or
/// `μ√φ‖g_ω‖²` (`eq8`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveVariant {
    #[default]
    Alg1,
    Eq8,
}

impl ObjectiveVariant {
    fn norm_term(self) -> NormTerm {
        match self {
            ObjectiveVariant::Alg1 => NormTerm::Linear,
            ObjectiveVariant::Eq8 => NormTerm::Squared,
        }
    }
}

impl FromStr for ObjectiveVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "alg1" => Ok(ObjectiveVariant::Alg1),
            "eq8" => Ok(ObjectiveVariant::Eq8),
            _ => Err(Error::InvalidConfig(format!("unknown objective variant `{s}`"))),
        }
    }
}

/// Gate used by the adaptive-threshold combiner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// Apply the inner combiner when `r > r_threshold`.
    #[default]
    Imbalance,
    /// Apply the inner combiner when some pairwise cosine is below `sim_threshold`.
    Conflict,
}

impl FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "imbalance" => Ok(ThresholdMode::Imbalance),
            "conflict" => Ok(ThresholdMode::Conflict),
            _ => Err(Error::InvalidConfig(format!("unknown threshold mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CombinerConfig {
    /// CAGrad radius.
    pub c: f64,
    pub mu_mode: MuMode,
    pub objective_variant: ObjectiveVariant,
    pub r_threshold: f64,
    pub sim_threshold: f64,
    /// Recompute weights every `update_every` calls.
    pub update_every: usize,
    /// PCGrad shuffle seed.
    pub seed: u64,
    pub adaptive_inner: Method,
    pub adaptive_mode: ThresholdMode,
}

impl Default for CombinerConfig {
    fn default() -> Self {
        Self {
            c: 0.4,
            mu_mode: MuMode::Pm,
            objective_variant: ObjectiveVariant::Alg1,
            r_threshold: 2.0,
            sim_threshold: 0.0,
            update_every: 1,
            seed: 0,
            adaptive_inner: Method::Cagrad,
            adaptive_mode: ThresholdMode::Imbalance,
        }
    }
}

impl CombinerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.c) {
            return Err(Error::InvalidConfig(format!("c must be in [0, 1], got {}", self.c)));
        }
        if !(self.r_threshold >= 1.0) {
            return Err(Error::InvalidConfig(format!("r_threshold must be >= 1, got {}", self.r_threshold)));
        }
        if !(-1.0..=1.0).contains(&self.sim_threshold) {
            return Err(Error::InvalidConfig(format!("sim_threshold must be in [-1, 1], got {}", self.sim_threshold)));
        }
        if self.update_every < 1 {
            return Err(Error::InvalidConfig("update_every must be >= 1".into()));
        }
        if self.adaptive_inner == Method::Adaptive {
            return Err(Error::InvalidConfig("adaptive_inner cannot itself be adaptive".into()));
        }
        Ok(())
    }
}

/// Previous weights carried by the Nash-family combiners.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NashState {
    pub prev_weights: Option<PositiveWeights>,
}

/// A gradient combiner applied step by step.
pub trait Combiner: Send {
    fn name(&self) -> String;

    fn combine(&mut self, g: &TaskGradientSet) -> Result<CombineOutcome>;

    /// Direction from previously computed weights and fresh gradients.
    fn reapply(&self, g: &TaskGradientSet, weights: &Weights) -> Result<CombineOutcome> {
        let d = g.combine(weights.as_slice());
        Ok(CombineOutcome::new(g, d, weights.clone()))
    }
}

pub fn ls_combine(g: &TaskGradientSet) -> CombineOutcome {
    CombineOutcome::new(g, g.mean(), Weights::Simplex(SimplexWeights::uniform(g.tasks())))
}

pub fn mgda_combine(g: &TaskGradientSet, solver: &SolverConfig) -> Result<CombineOutcome> {
    let sol = mgda_minnorm(g, solver)?;
    let d = g.combine(sol.weights.as_slice());
    let mut out = CombineOutcome::new(g, d, Weights::Simplex(sol.weights));
    out.solver_iters = sol.iters;
    Ok(out)
}

/// Project each task gradient away from the others it conflicts with, in a
/// shuffled order, and average the results.
pub fn pcgrad_combine<R: Rng + ?Sized>(g: &TaskGradientSet, rng: &mut R) -> CombineOutcome {
    let k = g.tasks();
    let sq_norms: Vec<f64> = g.rows().map(|r| dot(r, r)).collect();
    let mut d = vec![0.0; g.dim()];
    for i in 0..k {
        let mut gi = g.row(i).to_vec();
        let mut order: Vec<usize> = (0..k).filter(|&j| j != i).collect();
        order.shuffle(rng);
        for j in order {
            // Zero-norm targets cannot be projected on; skip them.
            if sq_norms[j] == 0.0 {
                continue;
            }
            let gj = g.row(j);
            let p = dot(&gi, gj);
            if p < 0.0 {
                axpy(-p / sq_norms[j], gj, &mut gi);
            }
        }
        axpy(1.0 / k as f64, &gi, &mut d);
    }
    CombineOutcome::new(g, d, Weights::Simplex(SimplexWeights::uniform(k)))
}

/// `g₀ + (√φ/‖g_ω‖) g_ω` with `√φ = c‖g₀‖`; `g₀` when `g_ω = 0`.
pub fn conflict_averse_direction(g: &TaskGradientSet, w: &[f64], c: f64) -> Vec<f64> {
    let g0 = g.mean();
    let gw = g.combine(w);
    let gw_norm = norm(&gw);
    let mut d = g0.clone();
    if gw_norm > 0.0 {
        axpy(c * norm(&g0) / gw_norm, &gw, &mut d);
    }
    d
}

fn zero_outcome(g: &TaskGradientSet) -> CombineOutcome {
    CombineOutcome::new(g, vec![0.0; g.dim()], Weights::Simplex(SimplexWeights::uniform(g.tasks())))
}

/// CAGrad: minimize `g_ωᵀg₀ + √φ‖g_ω‖`, then step along the conflict-averse direction.
pub fn cagrad_combine(g: &TaskGradientSet, c: f64, solver: &SolverConfig) -> Result<CombineOutcome> {
    let g0 = g.mean();
    let g0_norm = norm(&g0);
    if g0_norm == 0.0 {
        return Ok(zero_outcome(g));
    }
    let sol = minimize_family(g, 1.0, c * g0_norm, NormTerm::Linear, solver)?;
    let d = conflict_averse_direction(g, sol.weights.as_slice(), c);
    let mut out = CombineOutcome::new(g, d, Weights::Simplex(sol.weights));
    out.solver_iters = sol.iters;
    Ok(out)
}

/// Imbalance coefficient before clamping. PM lies in `[0, 1]`; LM may be
/// negative; DC lies in `(0, 1]`.
pub fn estimate_mu(g: &TaskGradientSet, mode: MuMode, solver: &SolverConfig) -> Result<f64> {
    match mode {
        MuMode::Pm => {
            let g0 = g.mean();
            let gm = g.combine(mgda_minnorm(g, solver)?.weights.as_slice());
            // g₀·g_m ≥ ‖g_m‖² ≥ 0 at the min-norm point; clamp rounding only.
            Ok(cosine(&g0, &gm)?.clamp(0.0, 1.0))
        }
        MuMode::Lm => {
            let g0 = g.mean();
            let norms = g.row_norms();
            let smallest = (0..g.tasks()).min_by(|&i, &j| norms[i].partial_cmp(&norms[j]).unwrap()).unwrap();
            cosine(&g0, g.row(smallest))
        }
        MuMode::Dc => Ok(1.0 / (1.0 + imbalance_ratio(g)?.ln())),
    }
}

/// μ used by the IMGrad combiners: clamped to `[0, 1]`, zero when undefined
/// (Pareto-stationary or degenerate input).
fn clamped_mu(g: &TaskGradientSet, mode: MuMode, solver: &SolverConfig) -> Result<f64> {
    match estimate_mu(g, mode, solver) {
        Ok(mu) => Ok(mu.clamp(0.0, 1.0)),
        Err(Error::ZeroVector) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// IMGrad on CAGrad: minimize `(1−μ) g_ωᵀg₀ + μ√φ‖g_ω‖`, same update as CAGrad.
pub fn imgrad_cagrad_combine(
    g: &TaskGradientSet,
    cfg: &CombinerConfig,
    solver: &SolverConfig,
) -> Result<CombineOutcome> {
    let mu = clamped_mu(g, cfg.mu_mode, solver)?;
    imgrad_with_mu(g, mu, cfg.c, cfg.objective_variant, solver)
}

/// IMGrad with a caller-supplied μ.
pub fn imgrad_with_mu(
    g: &TaskGradientSet,
    mu: f64,
    c: f64,
    variant: ObjectiveVariant,
    solver: &SolverConfig,
) -> Result<CombineOutcome> {
    let g0 = g.mean();
    let g0_norm = norm(&g0);
    if g0_norm == 0.0 {
        let mut out = zero_outcome(g);
        out.mu = Some(mu);
        return Ok(out);
    }
    let sqrt_phi = c * g0_norm;
    let (push, pull) = (1.0 - mu, mu * sqrt_phi);
    let sol = if push + pull > 0.0 {
        minimize_family(g, push, pull, variant.norm_term(), solver)?
    } else {
        // c = 0 and μ = 1: F ≡ 0.
        crate::solvers::SimplexSolution { weights: SimplexWeights::uniform(g.tasks()), iters: 0 }
    };
    let d = conflict_averse_direction(g, sol.weights.as_slice(), c);
    let mut out = CombineOutcome::new(g, d, Weights::Simplex(sol.weights));
    out.mu = Some(mu);
    out.cos_theta = Some(mu);
    out.solver_iters = sol.iters;
    Ok(out)
}

fn skipped_outcome(g: &TaskGradientSet, state: &NashState) -> CombineOutcome {
    let w =
        state.prev_weights.clone().filter(|w| w.len() == g.tasks()).unwrap_or_else(|| PositiveWeights::ones(g.tasks()));
    let d = g.combine(w.as_slice());
    let mut out = CombineOutcome::new(g, d, Weights::Positive(w));
    out.skipped = true;
    out
}

/// Nash-MTL: solve `ωᵢ(GGᵀω)ᵢ = 1`; on a skip signal reuse the previous weights.
pub fn nash_combine(g: &TaskGradientSet, state: &mut NashState, solver: &SolverConfig) -> CombineOutcome {
    match nash_weights(g, solver) {
        Ok(sol) => {
            let d = g.combine(sol.weights.as_slice());
            state.prev_weights = Some(sol.weights.clone());
            let mut out = CombineOutcome::new(g, d, Weights::Positive(sol.weights));
            out.solver_iters = sol.iters;
            out
        }
        Err(_) => skipped_outcome(g, state),
    }
}

/// `J(ω) = (1−μ) Σᵢ(Âω)ᵢ − μ Σᵢ[ln ωᵢ + ln max((Âω)ᵢ, ε)]` on the simplex,
/// where `Â` is the Gram matrix divided by its Frobenius norm.
struct BalanceObjective {
    a: Vec<Vec<f64>>,
    col_sums: Vec<f64>,
    mu: f64,
}

impl BalanceObjective {
    fn new(g: &TaskGradientSet, mu: f64) -> Option<Self> {
        let rows = gram(g).to_rows();
        let frob = rows.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        if frob == 0.0 {
            return None;
        }
        let a: Vec<Vec<f64>> = rows.iter().map(|r| scaled(1.0 / frob, r)).collect();
        let k = a.len();
        let col_sums = (0..k).map(|j| a.iter().map(|r| r[j]).sum()).collect();
        Some(Self { a, col_sums, mu })
    }

    fn progress(&self, w: &[f64]) -> Vec<f64> {
        self.a.iter().map(|r| dot(r, w)).collect()
    }

    fn value(&self, w: &[f64]) -> f64 {
        let aw = self.progress(w);
        let linear: f64 = aw.iter().sum();
        let barrier: f64 = w.iter().zip(&aw).map(|(wi, x)| wi.max(POSITIVE_CLIP).ln() + x.max(LOG_FLOOR).ln()).sum();
        (1.0 - self.mu) * linear - self.mu * barrier
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let aw = self.progress(w);
        (0..w.len())
            .map(|j| {
                let inv_w = 1.0 / w[j].max(POSITIVE_CLIP);
                let through: f64 = aw.iter().zip(&self.a).filter(|(x, _)| **x > LOG_FLOOR).map(|(x, r)| r[j] / x).sum();
                (1.0 - self.mu) * self.col_sums[j] - self.mu * (inv_w + through)
            })
            .collect()
    }

    fn feasible(&self, w: &[f64]) -> bool {
        self.progress(w).iter().all(|&x| x > 0.0)
    }
}

/// Projection onto `{ω : ωᵢ ≥ ε, Σω = 1}`.
fn project_clipped(v: &[f64]) -> Vec<f64> {
    let k = v.len() as f64;
    let mass = 1.0 - k * POSITIVE_CLIP;
    let inner: Vec<f64> = v.iter().map(|x| (x - POSITIVE_CLIP) / mass).collect();
    simplex_project(&inner).as_slice().iter().map(|x| POSITIVE_CLIP + mass * x).collect()
}

fn normalized(w: &[f64]) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    project_clipped(&w.iter().map(|x| x / s).collect::<Vec<_>>())
}

fn minimize_balance(obj: &BalanceObjective, start: Vec<f64>, solver: &SolverConfig) -> (Vec<f64>, usize) {
    let mut w = start;
    let mut f = obj.value(&w);
    let mut step = 1.0;
    let mut iters = 0;
    while iters < solver.max_iters {
        let grad = obj.gradient(&w);
        let mut accepted = None;
        for _ in 0..64 {
            let trial: Vec<f64> = w.iter().zip(&grad).map(|(x, g)| x - step * g).collect();
            let cand = project_clipped(&trial);
            let diff: Vec<f64> = cand.iter().zip(&w).map(|(c, x)| c - x).collect();
            let dist2 = dot(&diff, &diff);
            let fc = obj.value(&cand);
            if fc.is_finite() && fc <= f + dot(&grad, &diff) + dist2 / (2.0 * step) + 1e-15 * f.abs() {
                accepted = Some((cand, fc, dist2.sqrt() / step));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc, mapping)) = accepted else { break };
        iters += 1;
        if fc <= f {
            w = cand;
            f = fc;
        }
        if mapping <= solver.tol {
            break;
        }
        step *= 2.0;
    }
    (w, iters)
}

/// Two tasks: `ω = (t, 1−t)`. The points with `(Âω)ᵢ ≥ ε` for both tasks
/// form an interval on which `J` is convex, so bisection on `dJ/dt` finds
/// the minimizer. `None` when that interval is empty.
fn minimize_balance_pair(obj: &BalanceObjective) -> Option<(Vec<f64>, usize)> {
    let (mut lo, mut hi) = (POSITIVE_CLIP, 1.0 - POSITIVE_CLIP);
    for r in &obj.a {
        let (base, slope) = (r[1], r[0] - r[1]);
        if slope > 0.0 {
            lo = lo.max((LOG_FLOOR - base) / slope);
        } else if slope < 0.0 {
            hi = hi.min((LOG_FLOOR - base) / slope);
        } else if base < LOG_FLOOR {
            return None;
        }
    }
    if !(lo <= hi) {
        return None;
    }
    let slope_at = |t: f64| {
        let g = obj.gradient(&[t, 1.0 - t]);
        g[0] - g[1]
    };
    let mut iters = 0;
    while hi - lo > 1e-15 && iters < 200 {
        let mid = 0.5 * (lo + hi);
        if slope_at(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        iters += 1;
    }
    let t = 0.5 * (lo + hi);
    Some((vec![t, 1.0 - t], iters))
}

/// Nash-MTL with imbalance sensitivity: weight the "push away" term by
/// `1−μ` and the balance term by `μ`, solve on the simplex, then rescale so
/// that `Σᵢ ωᵢ(GGᵀω)ᵢ = K` (the vanilla Nash magnitude). Falls back to the
/// previous weights when no feasible point with positive progress is found.
pub fn imgrad_nash_combine(
    g: &TaskGradientSet,
    state: &mut NashState,
    solver: &SolverConfig,
) -> Result<CombineOutcome> {
    let mu = clamped_mu(g, MuMode::Pm, solver)?;
    let Some(obj) = BalanceObjective::new(g, mu) else {
        let mut out = skipped_outcome(g, state);
        out.mu = Some(mu);
        return Ok(out);
    };
    let k = g.tasks();
    let solved = if k == 2 { minimize_balance_pair(&obj) } else { minimize_balance_general(g, &obj, state, solver)? };
    let Some((w, iters)) = solved else {
        let mut out = skipped_outcome(g, state);
        out.mu = Some(mu);
        return Ok(out);
    };
    let a = gram(g);
    let q = a.quad(&w);
    if !obj.feasible(&w) || !(q > 0.0) {
        let mut out = skipped_outcome(g, state);
        out.mu = Some(mu);
        return Ok(out);
    }
    let s = (k as f64 / q).sqrt();
    let weights = PositiveWeights::new(scaled(s, &w))?;
    state.prev_weights = Some(weights.clone());
    let d = g.combine(weights.as_slice());
    let mut out = CombineOutcome::new(g, d, Weights::Positive(weights));
    out.mu = Some(mu);
    out.cos_theta = Some(mu);
    out.solver_iters = iters;
    Ok(out)
}

/// Projected gradient from the previous weights (or uniform), falling back
/// to the min-norm weights when that start has nonpositive progress.
fn minimize_balance_general(
    g: &TaskGradientSet,
    obj: &BalanceObjective,
    state: &NashState,
    solver: &SolverConfig,
) -> Result<Option<(Vec<f64>, usize)>> {
    let k = g.tasks();
    let mut starts = Vec::new();
    if let Some(prev) = state.prev_weights.as_ref().filter(|w| w.len() == k) {
        starts.push(normalized(prev.as_slice()));
    } else {
        starts.push(vec![1.0 / k as f64; k]);
    }
    // The min-norm weights have gᵢ·g_m ≥ ‖g_m‖² > 0 whenever a common descent direction exists.
    starts.push(normalized(
        &mgda_minnorm(g, solver)?.weights.as_slice().iter().map(|x| x.max(POSITIVE_CLIP)).collect::<Vec<_>>(),
    ));
    Ok(starts.into_iter().find(|w| obj.feasible(w)).map(|start| minimize_balance(obj, start, solver)))
}

fn threshold_fires(g: &TaskGradientSet, cfg: &CombinerConfig, mode: ThresholdMode) -> bool {
    match mode {
        ThresholdMode::Imbalance => match imbalance_ratio(g) {
            Ok(r) => r > cfg.r_threshold,
            // A zero-norm task is infinitely imbalanced.
            Err(_) => true,
        },
        ThresholdMode::Conflict => {
            let k = g.tasks();
            (0..k)
                .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
                .filter_map(|(i, j)| cosine(g.row(i), g.row(j)).ok())
                .any(|c| c < cfg.sim_threshold)
        }
    }
}

/// Apply `inner` only when the imbalance (or conflict) gate fires; linear
/// scalarization otherwise.
pub fn adaptive_threshold_combine(
    g: &TaskGradientSet,
    inner: &mut dyn Combiner,
    cfg: &CombinerConfig,
    mode: ThresholdMode,
) -> Result<CombineOutcome> {
    if threshold_fires(g, cfg, mode) {
        inner.combine(g)
    } else {
        Ok(ls_combine(g))
    }
}

struct Ls;

impl Combiner for Ls {
    fn name(&self) -> String {
        Method::Ls.to_string()
    }
    fn combine(&mut self, g: &TaskGradientSet) -> Result<CombineOutcome> {
        Ok(ls_combine(g))
    }
}

struct Mgda {
    solver: SolverConfig,
}

impl Combiner for Mgda {
    fn name(&self) -> String {
        Method::Mgda.to_string()
    }
    fn combine(&mut self, g: &TaskGradientSet) -> Result<CombineOutcome> {
        mgda_combine(g, &self.solver)
    }
}

struct PcGrad {
    seed: u64,
    calls: u64,
}

impl Combiner for PcGrad {
    fn name(&self) -> String {
        Method::Pcgrad.to_string()
    }
    fn combine(&mut self, g: &TaskGradientSet) -> Result<CombineOutcome> {
        let mut rng = seed::rng(self.seed, self.calls);
        self.calls += 1;
        Ok(pcgrad_combine(g, &mut rng))
    }
}

struct CaGrad {
    c: f64,
    solver: SolverConfig,
}

impl Combiner for CaGrad {
    fn name(&self) -> String {
        Method::Cagrad.to_string()
    }
    fn combine(&mut self, g: &TaskGradientSet) -> Result<CombineOutcome> {
        cagrad_combine(g, self.c, &self.solver)
    }
    fn reapply(&self, g: &TaskGradientSet, weights: &Weights) -> Result<CombineOutcome> {
        let d = conflict_averse_direction(g, weights.as_slice(), self.c);
        Ok(CombineOutcome::new(g, d, weights.clone()))
    }
}

struct ImGrad {
    cfg: CombinerConfig,
    solver: SolverConfig,
}

impl Combiner for ImGrad {
    fn name(&self) -> String {
        Method::Imgrad.to_string()
    }
    fn combine(&mut self, g: &TaskGradientSet) -> Result<CombineOutcome> {
        imgrad_cagrad_combine(g, &self.cfg, &self.solver)
    }
    fn reapply(&self, g: &TaskGradientSet, weights: &Weights) -> Result<CombineOutcome> {
        let d = conflict_averse_direction(g, weights.as_slice(), self.cfg.c);
        Ok(CombineOutcome::new(g, d, weights.clone()))
    }
}

struct Nash {
    state: NashState,
    solver: SolverConfig,
}

impl Combiner for Nash {
    fn name(&self) -> String {
        Method::Nash.to_string()
    }
    fn combine(&mut self, g: &TaskGradientSet) -> Result<CombineOutcome> {
        Ok(nash_combine(g, &mut self.state, &self.solver))
    }
}

struct ImGradNash {
    state: NashState,
    solver: SolverConfig,
}

impl Combiner for ImGradNash {
    fn name(&self) -> String {
        Method::ImgradNash.to_string()
    }
    fn combine(&mut self, g: &TaskGradientSet) -> Result<CombineOutcome> {
        imgrad_nash_combine(g, &mut self.state, &self.solver)
    }
}

struct Adaptive {
    inner: Box<dyn Combiner>,
    cfg: CombinerConfig,
}

impl Combiner for Adaptive {
    fn name(&self) -> String {
        format!("adaptive({})", self.inner.name())
    }
    fn combine(&mut self, g: &TaskGradientSet) -> Result<CombineOutcome> {
        adaptive_threshold_combine(g, self.inner.as_mut(), &self.cfg, self.cfg.adaptive_mode)
    }
    fn reapply(&self, g: &TaskGradientSet, weights: &Weights) -> Result<CombineOutcome> {
        if threshold_fires(g, &self.cfg, self.cfg.adaptive_mode) {
            self.inner.reapply(g, weights)
        } else {
            Ok(ls_combine(g))
        }
    }
}

/// Recompute the inner combiner's weights every `period` calls; in between,
/// rebuild the direction from the cached weights and the fresh gradients.
pub struct UpdateEvery {
    inner: Box<dyn Combiner>,
    period: usize,
    calls: usize,
    cached: Option<Weights>,
}

impl UpdateEvery {
    pub fn new(inner: Box<dyn Combiner>, period: usize) -> Result<Self> {
        if period < 1 {
            return Err(Error::InvalidConfig("update period must be >= 1".into()));
        }
        Ok(Self { inner, period, calls: 0, cached: None })
    }
}

impl Combiner for UpdateEvery {
    fn name(&self) -> String {
        format!("{}/every{}", self.inner.name(), self.period)
    }

    fn combine(&mut self, g: &TaskGradientSet) -> Result<CombineOutcome> {
        let fresh = self.calls.is_multiple_of(self.period);
        self.calls += 1;
        match &self.cached {
            Some(w) if !fresh && w.as_slice().len() == g.tasks() => self.inner.reapply(g, w),
            _ => {
                let out = self.inner.combine(g)?;
                self.cached = Some(out.weights.clone());
                Ok(out)
            }
        }
    }

    fn reapply(&self, g: &TaskGradientSet, weights: &Weights) -> Result<CombineOutcome> {
        self.inner.reapply(g, weights)
    }
}

pub fn wrap_update_every(inner: Box<dyn Combiner>, period: usize) -> Result<Box<dyn Combiner>> {
    if period == 1 {
        return Ok(inner);
    }
    Ok(Box::new(UpdateEvery::new(inner, period)?))
}

fn build_base(method: Method, cfg: &CombinerConfig, solver: &SolverConfig) -> Result<Box<dyn Combiner>> {
    let solver = *solver;
    Ok(match method {
        Method::Ls => Box::new(Ls),
        Method::Mgda => Box::new(Mgda { solver }),
        Method::Pcgrad => Box::new(PcGrad { seed: cfg.seed, calls: 0 }),
        Method::Cagrad => Box::new(CaGrad { c: cfg.c, solver }),
        Method::Imgrad => Box::new(ImGrad { cfg: cfg.clone(), solver }),
        Method::Nash => Box::new(Nash { state: NashState::default(), solver }),
        Method::ImgradNash => Box::new(ImGradNash { state: NashState::default(), solver }),
        Method::Adaptive => {
            Box::new(Adaptive { inner: build_base(cfg.adaptive_inner, cfg, &solver)?, cfg: cfg.clone() })
        }
    })
}

/// Stateful combiner for `method`, wrapped for periodic weight updates when
/// `cfg.update_every > 1`.
pub fn build_combiner(method: Method, cfg: &CombinerConfig, solver: &SolverConfig) -> Result<Box<dyn Combiner>> {
    cfg.validate()?;
    solver.validate()?;
    wrap_update_every(build_base(method, cfg, solver)?, cfg.update_every)
}
