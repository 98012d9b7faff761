//! Inner solvers over task weights.
//!
//! * [`simplex_project`]: Euclidean projection onto the probability simplex.
//! * [`mgda_minnorm`]: min-norm point of the convex hull of task gradients.
//! * [`minimize_cagrad_family`]: `a·g_ωᵀg₀ + b·‖g_ω‖` over the simplex.
//! * [`nash_weights`]: positive solution of `ωᵢ (GGᵀω)ᵢ = 1`.
//!
//! Tolerances are relative to the largest squared task-gradient norm, so the
//! same config behaves identically on rescaled inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, gram, Gram, PositiveWeights, SimplexWeights, TaskGradientSet};

/// Denominator floor in the Nash fixed-point update.
pub const NASH_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub damping: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_iters: 1000, damping: 0.5 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidConfig(format!("damping must be in (0, 1], got {}", self.damping)));
        }
        Ok(())
    }
}

/// Solver output: the weights and how many iterations it took.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexSolution {
    pub weights: SimplexWeights,
    pub iters: usize,
}

/// Euclidean projection onto `{w : w ≥ 0, Σw = 1}` (sort and threshold).
pub fn simplex_project(v: &[f64]) -> SimplexWeights {
    let k = v.len();
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite input"));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cum += s;
        let t = (cum - 1.0) / (i + 1) as f64;
        if s - t > 0.0 {
            tau = t;
        }
    }
    let mut w: Vec<f64> = v.iter().map(|&x| (x - tau).max(0.0)).collect();
    // Remove the rounding residue so the sum invariant holds tightly.
    let sum: f64 = w.iter().sum();
    if sum > 0.0 {
        for x in &mut w {
            *x /= sum;
        }
    } else {
        w = vec![1.0 / k as f64; k];
    }
    SimplexWeights::from_raw(w)
}

fn gram_scale(a: &Gram) -> f64 {
    (0..a.size()).map(|i| a.get(i, i)).fold(0.0, f64::max)
}

/// Weights of the min-norm point of `conv{g₁..g_K}`.
///
/// Two tasks use the closed form; more tasks use Frank-Wolfe with exact line
/// search and away steps, started from uniform weights. When Frank-Wolfe
/// stalls above the duality-gap tolerance (near-degenerate hulls around the
/// origin), Wolfe's min-norm-point iteration finishes the job.
pub fn mgda_minnorm(g: &TaskGradientSet, cfg: &SolverConfig) -> Result<SimplexSolution> {
    let a = gram(g);
    check_gram(&a)?;
    if g.tasks() == 2 {
        return Ok(SimplexSolution { weights: mgda_pair(&a), iters: 0 });
    }
    let fw = mgda_frank_wolfe_gram(&a, cfg);
    let tol = cfg.tol * gram_scale(&a);
    if duality_gap(&a, fw.weights.as_slice()) <= tol {
        return Ok(fw);
    }
    Ok(match mgda_wolfe_gram(&a, cfg) {
        Some(wolfe) if a.quad(wolfe.weights.as_slice()) <= a.quad(fw.weights.as_slice()) => {
            SimplexSolution { weights: wolfe.weights, iters: fw.iters + wolfe.iters }
        }
        _ => fw,
    })
}

/// `ωᵀAω − minᵢ (Aω)ᵢ`.
fn duality_gap(a: &Gram, w: &[f64]) -> f64 {
    let aw = a.mul_vec(w);
    dot(w, &aw) - aw[argmin(&aw)]
}

/// Wolfe's min-norm-point algorithm on the Gram matrix. `None` when an affine
/// subproblem is numerically singular.
fn mgda_wolfe_gram(a: &Gram, cfg: &SolverConfig) -> Option<SimplexSolution> {
    let k = a.size();
    let tol = cfg.tol * gram_scale(a);
    let diag: Vec<f64> = (0..k).map(|i| a.get(i, i)).collect();
    let start = argmin(&diag);
    let mut support = vec![start];
    let mut w = vec![0.0; k];
    w[start] = 1.0;
    let mut iters = 0;
    'major: while iters < cfg.max_iters {
        let aw = a.mul_vec(&w);
        let q = dot(&w, &aw);
        let j = argmin(&aw);
        if q - aw[j] <= tol || support.contains(&j) {
            break;
        }
        support.push(j);
        loop {
            iters += 1;
            let v = affine_minimizer(a, &support)?;
            if v.iter().all(|&x| x > 0.0) {
                for (&i, &vi) in support.iter().zip(&v) {
                    w[i] = vi;
                }
                break;
            }
            let mut theta: f64 = 1.0;
            for (&i, &vi) in support.iter().zip(&v) {
                if vi <= 0.0 {
                    theta = theta.min(w[i] / (w[i] - vi));
                }
            }
            for (&i, &vi) in support.iter().zip(&v) {
                w[i] += theta * (vi - w[i]);
                if w[i] <= 1e-15 {
                    w[i] = 0.0;
                }
            }
            support.retain(|&i| w[i] > 0.0);
            if iters >= cfg.max_iters {
                break 'major;
            }
        }
    }
    let s: f64 = w.iter().sum();
    let weights = SimplexWeights::from_raw(w.iter().map(|x| x.max(0.0) / s).collect());
    Some(SimplexSolution { weights, iters })
}

/// Minimizer of `vᵀA_S v` subject to `Σv = 1` over the index set `S`, from
/// the KKT system `[A_S 1; 1ᵀ 0][v; λ] = [0; 1]`.
fn affine_minimizer(a: &Gram, support: &[usize]) -> Option<Vec<f64>> {
    let n = support.len();
    let scale = gram_scale(a).max(1.0);
    let mut m = vec![vec![0.0; n + 2]; n + 1];
    for (r, &i) in support.iter().enumerate() {
        for (c, &j) in support.iter().enumerate() {
            m[r][c] = a.get(i, j) / scale;
        }
        m[r][n] = 1.0;
    }
    for c in 0..n {
        m[n][c] = 1.0;
    }
    m[n][n + 1] = 1.0;
    for col in 0..=n {
        let piv = (col..=n).max_by(|&x, &y| m[x][col].abs().partial_cmp(&m[y][col].abs()).unwrap())?;
        if m[piv][col].abs() < 1e-13 {
            return None;
        }
        m.swap(col, piv);
        for r in 0..=n {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..n + 2 {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    let v: Vec<f64> = (0..n).map(|r| m[r][n + 1] / m[r][r]).collect();
    v.iter().all(|x| x.is_finite()).then_some(v)
}

/// `γ* = clip(((g₂−g₁)·g₂)/‖g₁−g₂‖², 0, 1)`, weights `(γ*, 1−γ*)`.
fn mgda_pair(a: &Gram) -> SimplexWeights {
    let (a11, a12, a22) = (a.get(0, 0), a.get(0, 1), a.get(1, 1));
    let denom = a11 + a22 - 2.0 * a12;
    if denom <= 0.0 {
        return SimplexWeights::uniform(2);
    }
    let gamma = ((a22 - a12) / denom).clamp(0.0, 1.0);
    SimplexWeights::from_raw(vec![gamma, 1.0 - gamma])
}

fn check_gram(a: &Gram) -> Result<()> {
    for i in 0..a.size() {
        if a.row(i).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gram entry".into()));
        }
    }
    Ok(())
}

/// The general Frank-Wolfe path, usable for any K (including 2).
pub fn mgda_frank_wolfe(g: &TaskGradientSet, cfg: &SolverConfig) -> Result<SimplexSolution> {
    let a = gram(g);
    check_gram(&a)?;
    Ok(mgda_frank_wolfe_gram(&a, cfg))
}

fn mgda_frank_wolfe_gram(a: &Gram, cfg: &SolverConfig) -> SimplexSolution {
    let k = a.size();
    let tol = cfg.tol * gram_scale(a).max(f64::MIN_POSITIVE);
    let mut w = vec![1.0 / k as f64; k];
    let mut iters = 0;
    while iters < cfg.max_iters {
        let aw = a.mul_vec(&w);
        let q = dot(&w, &aw);
        let toward = argmin(&aw);
        let away = (0..k).filter(|&i| w[i] > 0.0).max_by(|&i, &j| aw[i].partial_cmp(&aw[j]).unwrap()).unwrap_or(toward);
        let fw_gap = q - aw[toward];
        if fw_gap <= tol {
            break;
        }
        iters += 1;
        let away_gap = aw[away] - q;
        if fw_gap >= away_gap {
            // Segment from g_ω toward vertex `toward`.
            let num = q - aw[toward];
            let den = a.get(toward, toward) - 2.0 * aw[toward] + q;
            let gamma = if den > 0.0 { (num / den).clamp(0.0, 1.0) } else { 1.0 };
            for (i, wi) in w.iter_mut().enumerate() {
                *wi *= 1.0 - gamma;
                if i == toward {
                    *wi += gamma;
                }
            }
        } else {
            // Move mass off vertex `away`.
            let max_step = if w[away] < 1.0 { w[away] / (1.0 - w[away]) } else { f64::INFINITY };
            let num = aw[away] - q;
            let den = q - 2.0 * aw[away] + a.get(away, away);
            let gamma = if den > 0.0 { (num / den).min(max_step) } else { max_step };
            for (i, wi) in w.iter_mut().enumerate() {
                *wi *= 1.0 + gamma;
                if i == away {
                    *wi -= gamma;
                }
            }
            if gamma == max_step {
                w[away] = 0.0;
            }
            for wi in &mut w {
                *wi = wi.max(0.0);
            }
            let s: f64 = w.iter().sum();
            for wi in &mut w {
                *wi /= s;
            }
        }
    }
    // A single vertex can only beat the iterate by the residual gap; take it if so.
    let q = a.quad(&w);
    let best = (0..k).min_by(|&i, &j| a.get(i, i).partial_cmp(&a.get(j, j)).unwrap()).unwrap();
    let weights = if a.get(best, best) < q { SimplexWeights::vertex(k, best) } else { SimplexWeights::from_raw(w) };
    SimplexSolution { weights, iters }
}

fn argmin(v: &[f64]) -> usize {
    v.iter().enumerate().min_by(|a, b| a.1.partial_cmp(b.1).unwrap()).map(|(i, _)| i).unwrap()
}

/// Which power of `‖g_ω‖` enters the min-norm term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormTerm {
    /// `‖g_ω‖`
    #[default]
    Linear,
    /// `‖g_ω‖²`
    Squared,
}

/// `F(ω) = push·g_ωᵀg₀ + pull·‖g_ω‖^p` evaluated through the Gram matrix.
#[derive(Debug, Clone)]
pub struct FamilyObjective {
    a: Gram,
    mean_proj: Vec<f64>,
    push: f64,
    pull: f64,
    term: NormTerm,
}

impl FamilyObjective {
    pub fn new(g: &TaskGradientSet, push: f64, pull: f64, term: NormTerm) -> Self {
        let a = gram(g);
        let k = g.tasks() as f64;
        // (gᵢ·g₀)ᵢ = A·1/K
        let mean_proj = (0..a.size()).map(|i| a.row(i).iter().sum::<f64>() / k).collect();
        Self { a, mean_proj, push, pull, term }
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        let q = self.a.quad(w).max(0.0);
        let norm_term = match self.term {
            NormTerm::Linear => q.sqrt(),
            NormTerm::Squared => q,
        };
        self.push * dot(w, &self.mean_proj) + self.pull * norm_term
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let aw = self.a.mul_vec(w);
        let q = dot(w, &aw).max(0.0);
        let coef = match self.term {
            NormTerm::Linear if q > 0.0 => self.pull / q.sqrt(),
            NormTerm::Linear => 0.0,
            NormTerm::Squared => 2.0 * self.pull,
        };
        self.mean_proj.iter().zip(&aw).map(|(m, x)| self.push * m + coef * x).collect()
    }
}

/// Minimize `a·g_ωᵀg₀ + b·‖g_ω‖` over the simplex with projected gradient and
/// backtracking. Hitting `max_iters` is not an error; the best iterate is
/// returned with `iters == max_iters`.
pub fn minimize_cagrad_family(g: &TaskGradientSet, a: f64, b: f64, cfg: &SolverConfig) -> Result<SimplexSolution> {
    minimize_family(g, a, b, NormTerm::Linear, cfg)
}

pub fn minimize_family(
    g: &TaskGradientSet,
    a: f64,
    b: f64,
    term: NormTerm,
    cfg: &SolverConfig,
) -> Result<SimplexSolution> {
    if !(a >= 0.0 && b >= 0.0 && a + b > 0.0) {
        return Err(Error::InvalidConfig(format!("need a, b >= 0 and a + b > 0, got a={a}, b={b}")));
    }
    let obj = FamilyObjective::new(g, a, b, term);
    check_gram(&obj.a)?;
    let k = g.tasks();
    let scale = gram_scale(&obj.a);
    if scale == 0.0 {
        return Ok(SimplexSolution { weights: SimplexWeights::uniform(k), iters: 0 });
    }
    let tol = cfg.tol * scale;

    let mut w = SimplexWeights::uniform(k).as_slice().to_vec();
    let mut f = obj.value(&w);
    let mut step = 1.0 / scale;
    let mut iters = 0;
    while iters < cfg.max_iters {
        let grad = obj.gradient(&w);
        let mut accepted = None;
        for _ in 0..64 {
            let trial: Vec<f64> = w.iter().zip(&grad).map(|(wi, gi)| wi - step * gi).collect();
            let cand = simplex_project(&trial).as_slice().to_vec();
            let diff: Vec<f64> = cand.iter().zip(&w).map(|(c, x)| c - x).collect();
            let dist2 = dot(&diff, &diff);
            let fc = obj.value(&cand);
            if fc <= f + dot(&grad, &diff) + dist2 / (2.0 * step) + 1e-15 * f.abs() {
                accepted = Some((cand, fc, dist2.sqrt() / step));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc, mapping_norm)) = accepted else { break };
        iters += 1;
        if fc <= f {
            w = cand;
            f = fc;
        }
        if mapping_norm <= tol {
            break;
        }
        step *= 2.0;
    }
    Ok(SimplexSolution { weights: SimplexWeights::from_raw(w), iters })
}

/// Why the Nash solver declined to produce weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipSignal {
    /// Some `(GGᵀω)ᵢ ≤ 0` was reached.
    NonPositiveProgress,
    /// `max_iters` exhausted.
    NotConverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NashSolution {
    pub weights: PositiveWeights,
    pub iters: usize,
}

/// Damped fixed point `ωᵢ ← (1−δ)ωᵢ + δ / max((GGᵀω)ᵢ, ε)` from `ω = 1/K`.
///
/// `GGᵀω` is formed as `G(Gᵀω)`: with nearly opposed task gradients the Gram
/// entries cancel and lose most of their significant digits.
pub fn nash_weights(g: &TaskGradientSet, cfg: &SolverConfig) -> std::result::Result<NashSolution, SkipSignal> {
    let k = g.tasks();
    let mut w = vec![1.0 / k as f64; k];
    for iter in 0..=cfg.max_iters {
        let d = g.combine(&w);
        let aw: Vec<f64> = g.rows().map(|gi| dot(gi, &d)).collect();
        if aw.iter().any(|&x| !(x > 0.0)) {
            return Err(SkipSignal::NonPositiveProgress);
        }
        let residual = w.iter().zip(&aw).map(|(wi, x)| (wi * x - 1.0).abs()).fold(0.0, f64::max);
        if residual <= cfg.tol {
            return Ok(NashSolution {
                weights: PositiveWeights::new(w).map_err(|_| SkipSignal::NotConverged)?,
                iters: iter,
            });
        }
        if iter == cfg.max_iters {
            break;
        }
        for (wi, x) in w.iter_mut().zip(&aw) {
            *wi = (1.0 - cfg.damping) * *wi + cfg.damping / x.max(NASH_FLOOR);
        }
    }
    Err(SkipSignal::NotConverged)
}
