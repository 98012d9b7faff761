//! Synthetic two-task benchmark on `ϑ = (ϑ₁, ϑ₂)`.
//!
//! ```text
//! Lᵢ(ϑ) = c₁(ϑ)fᵢ(ϑ) + c₂(ϑ)gᵢ(ϑ)
//! f₁ = ln(max(|0.5(−ϑ₁−7) − tanh ϑ₂|, 5e-6)) + 6
//! f₂ = ln(max(|0.5(−ϑ₁+3) − tanh ϑ₂ + 2|, 5e-6)) + 6
//! g₁ = ((−ϑ₁+7)² + 0.1(−ϑ₂−8)²)/10 − 20
//! g₂ = ((−ϑ₁−7)² + 0.1(−ϑ₂−8)²)/10 − 20
//! c₁ = max(tanh(0.5ϑ₂), 0),  c₂ = max(tanh(−0.5ϑ₂), 0)
//! ```
//!
//! Gradients are analytic and piecewise. At kinks: `|x|` has derivative 0 at
//! 0, an active `5e-6` floor passes no gradient, and `max(x, 0)` passes the
//! gradient of `x` at `x = 0` (so the origin is not a stationary point).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::TaskGradientSet;

const LOG_FLOOR: f64 = 5e-6;

/// A point `(ϑ₁, ϑ₂)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyPoint(pub [f64; 2]);

impl ToyPoint {
    pub fn new(t1: f64, t2: f64) -> Result<Self> {
        if !(t1.is_finite() && t2.is_finite()) {
            return Err(Error::NonFinite(format!("toy point ({t1}, {t2})")));
        }
        Ok(Self([t1, t2]))
    }
}

/// Task weighting `(a₁, a₂)` with `a₁ + a₂ = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyWeighting {
    pub a1: f64,
    pub a2: f64,
}

impl ToyWeighting {
    pub fn new(a1: f64, a2: f64) -> Result<Self> {
        if !(a1 >= 0.0 && a2 >= 0.0) || (a1 + a2 - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("weighting must be nonnegative and sum to 1, got ({a1}, {a2})")));
        }
        Ok(Self { a1, a2 })
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.a1, self.a2]
    }

    pub fn weighted(&self, losses: (f64, f64)) -> f64 {
        self.a1 * losses.0 + self.a2 * losses.1
    }
}

/// The five starting points of the main comparison.
pub fn init_points() -> Vec<ToyPoint> {
    [(-8.5, 7.5), (-8.5, 5.0), (0.0, 0.0), (9.0, 9.0), (10.0, -8.0)]
        .into_iter()
        .map(|(a, b)| ToyPoint([a, b]))
        .collect()
}

/// The three starting points of the imbalance-statistics figure.
pub fn statistics_init_points() -> Vec<ToyPoint> {
    [(-8.5, 7.5), (0.0, 8.0), (5.0, 9.0)].into_iter().map(|(a, b)| ToyPoint([a, b])).collect()
}

pub fn weight_presets() -> Vec<ToyWeighting> {
    [(0.1, 0.9), (0.3, 0.7), (0.5, 0.5), (0.7, 0.3), (0.9, 0.1)]
        .into_iter()
        .map(|(a1, a2)| ToyWeighting { a1, a2 })
        .collect()
}

struct LogAbs {
    value: f64,
    /// d/dx of ln(max(|x|, floor)).
    slope: f64,
}

fn log_abs(x: f64) -> LogAbs {
    let ax = x.abs();
    if ax < LOG_FLOOR {
        LogAbs { value: LOG_FLOOR.ln(), slope: 0.0 }
    } else {
        // sign(x)/|x| = 1/x
        LogAbs { value: ax.ln(), slope: 1.0 / x }
    }
}

/// `(L₁, L₂)` at `p`.
pub fn toy_losses(p: &ToyPoint) -> (f64, f64) {
    let [t1, t2] = p.0;
    let th = t2.tanh();
    let f1 = log_abs(0.5 * (-t1 - 7.0) - th).value + 6.0;
    let f2 = log_abs(0.5 * (-t1 + 3.0) - th + 2.0).value + 6.0;
    let tail = 0.1 * (-t2 - 8.0).powi(2);
    let g1 = ((-t1 + 7.0).powi(2) + tail) / 10.0 - 20.0;
    let g2 = ((-t1 - 7.0).powi(2) + tail) / 10.0 - 20.0;
    let c1 = (0.5 * t2).tanh().max(0.0);
    let c2 = (-0.5 * t2).tanh().max(0.0);
    (c1 * f1 + c2 * g1, c1 * f2 + c2 * g2)
}

/// `(∇L₁, ∇L₂)` at `p`.
pub fn toy_gradient_pair(p: &ToyPoint) -> ([f64; 2], [f64; 2]) {
    let [t1, t2] = p.0;
    let th = t2.tanh();
    let sech2 = 1.0 - th * th;

    let u1 = log_abs(0.5 * (-t1 - 7.0) - th);
    let u2 = log_abs(0.5 * (-t1 + 3.0) - th + 2.0);
    let f1 = u1.value + 6.0;
    let f2 = u2.value + 6.0;
    // Both arguments have ∂/∂ϑ₁ = −0.5 and ∂/∂ϑ₂ = −sech²ϑ₂.
    let df1 = [-0.5 * u1.slope, -sech2 * u1.slope];
    let df2 = [-0.5 * u2.slope, -sech2 * u2.slope];

    let tail = 0.1 * (-t2 - 8.0).powi(2);
    let g1 = ((-t1 + 7.0).powi(2) + tail) / 10.0 - 20.0;
    let g2 = ((-t1 - 7.0).powi(2) + tail) / 10.0 - 20.0;
    let dtail = 0.02 * (t2 + 8.0);
    let dg1 = [(t1 - 7.0) / 5.0, dtail];
    let dg2 = [(t1 + 7.0) / 5.0, dtail];

    let half = (0.5 * t2).tanh();
    let dhalf = 0.5 * (1.0 - half * half);
    let (c1, dc1) = if half >= 0.0 { (half, dhalf) } else { (0.0, 0.0) };
    let (c2, dc2) = if half <= 0.0 { (-half, -dhalf) } else { (0.0, 0.0) };

    let grad = |f: f64, df: [f64; 2], g: f64, dg: [f64; 2]| {
        [c1 * df[0] + c2 * dg[0], c1 * df[1] + dc1 * f + c2 * dg[1] + dc2 * g]
    };
    (grad(f1, df1, g1, dg1), grad(f2, df2, g2, dg2))
}

/// Unweighted task gradients as a 2×2 set.
pub fn toy_gradients(p: &ToyPoint) -> TaskGradientSet {
    let (a, b) = toy_gradient_pair(p);
    TaskGradientSet::new(vec![a.to_vec(), b.to_vec()]).expect("toy gradients are finite")
}

/// Axis-aligned box `[lo₁, hi₁] × [lo₂, hi₂]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Default for Bounds {
    fn default() -> Self {
        Self { lo: [-12.0, -12.0], hi: [12.0, 12.0] }
    }
}

impl Bounds {
    pub fn contains(&self, p: &ToyPoint) -> bool {
        (0..2).all(|i| p.0[i] >= self.lo[i] && p.0[i] <= self.hi[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridOracleResult {
    pub theta_star: ToyPoint,
    pub loss_star: f64,
    pub grid_step: f64,
    pub bounds: Bounds,
}

/// Lowest weighted loss on the regular grid (ties broken by grid order).
fn grid_min(w: &ToyWeighting, bounds: &Bounds, step: f64) -> (ToyPoint, f64) {
    let n1 = ((bounds.hi[0] - bounds.lo[0]) / step + 1e-9).floor() as usize + 1;
    let n2 = ((bounds.hi[1] - bounds.lo[1]) / step + 1e-9).floor() as usize + 1;
    (0..n1)
        .into_par_iter()
        .map(|i| {
            let t1 = bounds.lo[0] + i as f64 * step;
            let mut best = (ToyPoint([t1, bounds.lo[1]]), f64::INFINITY);
            for j in 0..n2 {
                let p = ToyPoint([t1, bounds.lo[1] + j as f64 * step]);
                let v = w.weighted(toy_losses(&p));
                if v < best.1 {
                    best = (p, v);
                }
            }
            best
        })
        .reduce_with(|a, b| if b.1 < a.1 { b } else { a })
        .expect("non-empty grid")
}

/// Brute-force minimum of `a₁L₁ + a₂L₂` over `bounds`, followed by one 10×
/// finer pass over the cells adjacent to the incumbent.
pub fn grid_oracle(w: &ToyWeighting, bounds: &Bounds, step: f64) -> Result<GridOracleResult> {
    if !(step > 0.0) || (0..2).any(|i| !(bounds.hi[i] > bounds.lo[i])) {
        return Err(Error::InvalidConfig(format!("bad oracle grid: step {step}, bounds {bounds:?}")));
    }
    let (coarse, coarse_val) = grid_min(w, bounds, step);
    let local = Bounds {
        lo: [(coarse.0[0] - step).max(bounds.lo[0]), (coarse.0[1] - step).max(bounds.lo[1])],
        hi: [(coarse.0[0] + step).min(bounds.hi[0]), (coarse.0[1] + step).min(bounds.hi[1])],
    };
    let (fine, fine_val) = grid_min(w, &local, step / 10.0);
    let (theta_star, loss_star) = if fine_val < coarse_val { (fine, fine_val) } else { (coarse, coarse_val) };
    Ok(GridOracleResult { theta_star, loss_star, grid_step: step, bounds: *bounds })
}

pub fn default_grid_oracle(w: &ToyWeighting) -> GridOracleResult {
    grid_oracle(w, &Bounds::default(), 0.01).expect("default grid is valid")
}

/// One line per weighting: `a1=.. a2=.. theta1=.. theta2=.. loss=..`.
pub fn format_oracle_fixtures(results: &[(ToyWeighting, GridOracleResult)]) -> String {
    let mut out = String::new();
    for (w, r) in results {
        out.push_str(&format!(
            "a1={} a2={} theta1={:.17e} theta2={:.17e} loss={:.17e}\n",
            w.a1, w.a2, r.theta_star.0[0], r.theta_star.0[1], r.loss_star
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleFixture {
    pub weighting: ToyWeighting,
    pub theta_star: ToyPoint,
    pub loss_star: f64,
}

pub fn parse_oracle_fixtures(text: &str) -> Result<Vec<OracleFixture>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut vals = std::collections::HashMap::new();
        for tok in line.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key=value, got `{tok}`", n + 1)))?;
            let v: f64 = v.parse().map_err(|_| Error::InvalidConfig(format!("line {}: bad number `{v}`", n + 1)))?;
            vals.insert(k, v);
        }
        let get = |k: &str| {
            vals.get(k).copied().ok_or_else(|| Error::InvalidConfig(format!("line {}: missing `{k}`", n + 1)))
        };
        out.push(OracleFixture {
            weighting: ToyWeighting::new(get("a1")?, get("a2")?)?,
            theta_star: ToyPoint::new(get("theta1")?, get("theta2")?)?,
            loss_star: get("loss")?,
        });
    }
    Ok(out)
}
