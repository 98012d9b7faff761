//! Optimization trajectories: gradients → combiner → optimizer step, recorded
//! per step.

use serde::{Deserialize, Serialize};

use crate::combiners::{estimate_mu, Combiner, MuMode};
use crate::error::{Error, Result};
use crate::linalg::{cosine, dot, norm, TaskGradientSet};
use crate::metrics::imbalance_ratio;
use crate::solvers::SolverConfig;
use crate::toybench::{toy_gradient_pair, toy_losses, ToyPoint};

/// A set of differentiable task losses over a shared parameter vector.
pub trait MultiObjective: Sync {
    fn tasks(&self) -> usize;
    fn dim(&self) -> usize;
    fn losses(&self, theta: &[f64]) -> Vec<f64>;
    fn gradients(&self, theta: &[f64]) -> Result<TaskGradientSet>;
}

/// The synthetic two-task benchmark.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyObjective;

impl MultiObjective for ToyObjective {
    fn tasks(&self) -> usize {
        2
    }
    fn dim(&self) -> usize {
        2
    }
    fn losses(&self, theta: &[f64]) -> Vec<f64> {
        let (a, b) = toy_losses(&ToyPoint([theta[0], theta[1]]));
        vec![a, b]
    }
    fn gradients(&self, theta: &[f64]) -> Result<TaskGradientSet> {
        let (a, b) = toy_gradient_pair(&ToyPoint([theta[0], theta[1]]));
        TaskGradientSet::new(vec![a.to_vec(), b.to_vec()])
    }
}

/// `Lᵢ(θ) = ‖θ − aᵢ‖²`; the mean loss has a 2-Lipschitz gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    pub centers: Vec<Vec<f64>>,
}

impl MultiObjective for QuadraticObjective {
    fn tasks(&self) -> usize {
        self.centers.len()
    }
    fn dim(&self) -> usize {
        self.centers[0].len()
    }
    fn losses(&self, theta: &[f64]) -> Vec<f64> {
        self.centers.iter().map(|a| theta.iter().zip(a).map(|(t, c)| (t - c) * (t - c)).sum()).collect()
    }
    fn gradients(&self, theta: &[f64]) -> Result<TaskGradientSet> {
        TaskGradientSet::new(
            self.centers.iter().map(|a| theta.iter().zip(a).map(|(t, c)| 2.0 * (t - c)).collect()).collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Gd,
    #[default]
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gd" => Ok(OptimizerKind::Gd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::InvalidConfig(format!("unknown optimizer `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { kind: OptimizerKind::Adam, lr: 2e-3, steps: 50_000, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl OptimizerConfig {
    pub fn gd(lr: f64, steps: usize) -> Self {
        Self { kind: OptimizerKind::Gd, lr, steps, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be > 0, got {}", self.lr)));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0) {
            return Err(Error::InvalidConfig("adam needs beta1, beta2 in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }
}

/// Adam moments; unused by plain gradient descent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// `θ − lr·d` for gd; bias-corrected Adam with `d` as the gradient otherwise.
pub fn optimizer_step(theta: &[f64], d: &[f64], opt: &OptimizerConfig, state: &mut OptimizerState) -> Vec<f64> {
    assert_eq!(theta.len(), d.len());
    match opt.kind {
        OptimizerKind::Gd => theta.iter().zip(d).map(|(t, g)| t - opt.lr * g).collect(),
        OptimizerKind::Adam => {
            if state.m.len() != theta.len() {
                state.m = vec![0.0; theta.len()];
                state.v = vec![0.0; theta.len()];
                state.t = 0;
            }
            state.t += 1;
            let bc1 = 1.0 - opt.beta1.powi(state.t as i32);
            let bc2 = 1.0 - opt.beta2.powi(state.t as i32);
            theta
                .iter()
                .zip(d)
                .enumerate()
                .map(|(i, (t, g))| {
                    state.m[i] = opt.beta1 * state.m[i] + (1.0 - opt.beta1) * g;
                    state.v[i] = opt.beta2 * state.v[i] + (1.0 - opt.beta2) * g * g;
                    let mhat = state.m[i] / bc1;
                    let vhat = state.v[i] / bc2;
                    t - opt.lr * mhat / (vhat.sqrt() + opt.eps)
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub theta: Vec<f64>,
    /// Unweighted task losses.
    pub losses: Vec<f64>,
    pub weights: Vec<f64>,
    pub d: Vec<f64>,
    pub d_norm: f64,
    /// Imbalance ratio of the weighted task gradients; `None` if a task gradient is zero.
    pub imbalance: Option<f64>,
    /// PM cosine between the mean gradient and the min-norm point.
    pub cos_theta: Option<f64>,
    pub pareto_failure: bool,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTrace {
    pub method: String,
    pub task_weights: Vec<f64>,
    pub optimizer: OptimizerConfig,
    pub records: Vec<StepRecord>,
    /// Set when the run stopped early on a numeric failure.
    pub abort: Option<String>,
}

impl TrajectoryTrace {
    pub fn weighted_loss(&self, record: &StepRecord) -> f64 {
        dot(&record.losses, &self.task_weights)
    }

    pub fn final_record(&self) -> &StepRecord {
        self.records.last().expect("trace always holds the initial record")
    }

    pub fn final_weighted_loss(&self) -> f64 {
        self.weighted_loss(self.final_record())
    }
}

/// Run `opt.steps` optimizer steps from `init`, feeding the combiner the
/// weighted task gradients `aᵢ∇Lᵢ`. The trace holds `steps + 1` records; the
/// last record's combiner output is diagnostic only.
pub fn run_trajectory(
    objective: &dyn MultiObjective,
    combiner: &mut dyn Combiner,
    opt: &OptimizerConfig,
    init: &[f64],
    task_weights: &[f64],
) -> Result<TrajectoryTrace> {
    opt.validate()?;
    if init.len() != objective.dim() {
        return Err(Error::DimensionMismatch { expected: objective.dim(), got: init.len() });
    }
    if task_weights.len() != objective.tasks() {
        return Err(Error::DimensionMismatch { expected: objective.tasks(), got: task_weights.len() });
    }
    let diag_solver = SolverConfig::default();
    let mut trace = TrajectoryTrace {
        method: combiner.name(),
        task_weights: task_weights.to_vec(),
        optimizer: *opt,
        records: Vec::with_capacity(opt.steps + 1),
        abort: None,
    };
    let mut state = OptimizerState::default();
    let mut theta = init.to_vec();
    for step in 0..=opt.steps {
        match record_step(objective, combiner, &theta, task_weights, step, &diag_solver) {
            Ok(rec) => {
                let next = (step < opt.steps).then(|| optimizer_step(&theta, &rec.d, opt, &mut state));
                trace.records.push(rec);
                if let Some(next) = next {
                    if next.iter().any(|v| !v.is_finite()) {
                        trace.abort = Some(format!("non-finite parameters after step {step}"));
                        break;
                    }
                    theta = next;
                }
            }
            Err(e) => {
                trace.abort = Some(format!("step {step}: {e}"));
                break;
            }
        }
    }
    Ok(trace)
}

fn record_step(
    objective: &dyn MultiObjective,
    combiner: &mut dyn Combiner,
    theta: &[f64],
    task_weights: &[f64],
    step: usize,
    diag_solver: &SolverConfig,
) -> Result<StepRecord> {
    let losses = objective.losses(theta);
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("task loss".into()));
    }
    let g = objective.gradients(theta)?.scale_rows(task_weights)?;
    let out = combiner.combine(&g)?;
    if out.d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("combined direction".into()));
    }
    let cos_theta = match out.cos_theta {
        Some(c) => Some(c),
        None => estimate_mu(&g, MuMode::Pm, diag_solver).ok(),
    };
    Ok(StepRecord {
        step,
        theta: theta.to_vec(),
        losses,
        weights: out.weights.as_slice().to_vec(),
        d_norm: norm(&out.d),
        d: out.d,
        imbalance: imbalance_ratio(&g).ok(),
        cos_theta,
        pareto_failure: out.pareto_failure,
        skipped: out.skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundViolation {
    pub step: usize,
    pub decrease: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub steps_checked: usize,
    /// Violations of `ΔL ≤ −(α/2)(1−c²+2c cosφ)‖g₀‖²`.
    pub violations: Vec<BoundViolation>,
    /// Violations of `ΔL ≤ −(α/2)(1−c²)‖g₀‖²` on steps with `cosφ ≥ 0`.
    pub loose_violations: Vec<BoundViolation>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.loose_violations.is_empty()
    }
}

/// Slack added to both per-step bounds.
pub const AUDIT_SLACK: f64 = 1e-9;

/// Check the per-step descent bounds of a gd trace of a conflict-averse
/// combiner on an objective with `H`-Lipschitz mean gradient and `α ≤ 1/H`.
/// `L` is the mean of the weighted task losses and `φ` is the angle between
/// `g₀` and `g_ω`.
pub fn descent_bound_audit(
    objective: &dyn MultiObjective,
    trace: &TrajectoryTrace,
    c: f64,
    alpha: f64,
) -> Result<AuditReport> {
    let k = trace.task_weights.len() as f64;
    let mean_loss = |r: &StepRecord| trace.weighted_loss(r) / k;
    let mut report = AuditReport { steps_checked: 0, violations: Vec::new(), loose_violations: Vec::new() };
    for pair in trace.records.windows(2) {
        let (now, next) = (&pair[0], &pair[1]);
        let g = objective.gradients(&now.theta)?.scale_rows(&trace.task_weights)?;
        let g0 = g.mean();
        let g0_sq = dot(&g0, &g0);
        let gw = g.combine(&now.weights);
        let cos_phi = cosine(&g0, &gw).unwrap_or(0.0);
        let decrease = mean_loss(next) - mean_loss(now);
        let tight = -(alpha / 2.0) * (1.0 - c * c + 2.0 * c * cos_phi) * g0_sq;
        if decrease > tight + AUDIT_SLACK {
            report.violations.push(BoundViolation { step: now.step, decrease, bound: tight });
        }
        if cos_phi >= 0.0 {
            let loose = -(alpha / 2.0) * (1.0 - c * c) * g0_sq;
            if decrease > loose + AUDIT_SLACK {
                report.loose_violations.push(BoundViolation { step: now.step, decrease, bound: loose });
            }
        }
        report.steps_checked += 1;
    }
    Ok(report)
}
