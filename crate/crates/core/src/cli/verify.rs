//! Named invariant suites behind `mtlgrad verify`.

use rand::Rng;
use serde::Serialize;

use crate::combiners::{build_combiner, estimate_mu, CombinerConfig, Method, MuMode};
use crate::error::Result;
use crate::linalg::{dot, norm, TaskGradientSet};
use crate::metrics::{correlation_study, imbalanced_stream, pareto_failure_census, CensusCount};
use crate::runner::{descent_bound_audit, run_trajectory, OptimizerConfig, QuadraticObjective};
use crate::seed;
use crate::solvers::{mgda_frank_wolfe, mgda_minnorm, SolverConfig};
use crate::toybench::{toy_gradient_pair, toy_losses, ToyPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Mgda,
    Gradcheck,
    Correlation,
    Bounds,
    Census,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Mgda => "mgda",
            Suite::Gradcheck => "gradcheck",
            Suite::Correlation => "correlation",
            Suite::Bounds => "bounds",
            Suite::Census => "census",
        }
    }
}

/// One pass/fail line of a suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub summary: String,
    /// At most a handful of offending cases.
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub census: Option<Vec<CensusCount>>,
}

const MAX_LISTED: usize = 10;

fn check(name: &str, failures: Vec<String>, summary: String) -> Check {
    let passed = failures.is_empty();
    Check { name: name.into(), passed, summary, failures: failures.into_iter().take(MAX_LISTED).collect() }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<SuiteReport> {
    let (checks, census) = match suite {
        Suite::Mgda => (mgda_suite(seed, 1000)?, None),
        Suite::Gradcheck => (vec![gradcheck(seed, 100)], None),
        Suite::Correlation => (correlation_suite(seed)?, None),
        Suite::Bounds => (bounds_suite(seed)?, None),
        Suite::Census => {
            let (checks, counts) = census_suite(seed)?;
            (checks, Some(counts))
        }
    };
    Ok(SuiteReport { suite: suite.name(), seed, passed: checks.iter().all(|c| c.passed), checks, census })
}

/// `K×m` matrix with entries uniform in `[-3, 3]`.
pub fn random_set<R: Rng>(rng: &mut R, k: usize, m: usize) -> TaskGradientSet {
    TaskGradientSet::new((0..k).map(|_| (0..m).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect())
        .expect("finite random rows")
}

fn mgda_suite(seed: u64, n: usize) -> Result<Vec<Check>> {
    let solver = SolverConfig::default();
    let mut rng = seed::rng(seed, 10);
    let (mut kkt, mut bound) = (Vec::new(), Vec::new());
    for case in 0..n {
        let k = rng.gen_range(2..=5);
        let m = rng.gen_range(1..=20);
        let g = random_set(&mut rng, k, m);
        let w = mgda_minnorm(&g, &solver)?.weights;
        let gw = g.combine(w.as_slice());
        let n2 = dot(&gw, &gw);
        let worst = g.rows().map(|r| dot(r, &gw) - n2).fold(f64::INFINITY, f64::min);
        if worst < -1e-6 {
            kkt.push(format!("case {case} (K={k}, m={m}): min_i g_i.g_w - |g_w|^2 = {worst:e}"));
        }
        let min_norm = g.row_norms().into_iter().fold(f64::INFINITY, f64::min);
        if n2.sqrt() > min_norm + 1e-9 {
            bound.push(format!("case {case}: |g_w| = {} > min |g_i| = {min_norm}", n2.sqrt()));
        }
    }
    let fw_cfg = SolverConfig { tol: 1e-14, max_iters: 100_000, ..Default::default() };
    let mut pair = Vec::new();
    for case in 0..n {
        let m = rng.gen_range(1..=20);
        let g = random_set(&mut rng, 2, m);
        let closed = mgda_minnorm(&g, &solver)?.weights;
        let fw = mgda_frank_wolfe(&g, &fw_cfg)?.weights;
        let diff = (closed.as_slice()[0] - fw.as_slice()[0]).abs();
        // Near-parallel pairs make γ ill-conditioned; compare the min-norm points there.
        let gap = norm(&crate::linalg::sub(&g.combine(closed.as_slice()), &g.combine(fw.as_slice())));
        if diff > 1e-8 && gap > 1e-8 {
            pair.push(format!(
                "case {case}: closed-form γ = {}, Frank-Wolfe γ = {}",
                closed.as_slice()[0],
                fw.as_slice()[0]
            ));
        }
    }
    Ok(vec![
        check("kkt", kkt.clone(), format!("KKT violations: {} / {n}", kkt.len())),
        check("norm_bound", bound.clone(), format!("norm-bound violations: {} / {n}", bound.len())),
        check("pair_closed_form", pair.clone(), format!("K=2 closed-form mismatches (>1e-8): {} / {n}", pair.len())),
    ])
}

/// Points closer than this to a kink of the toy objective are resampled.
const KINK_MARGIN: f64 = 1e-2;

fn off_kink(p: &ToyPoint) -> bool {
    let [t1, t2] = p.0;
    let inner1 = 0.5 * (-t1 - 7.0) - t2.tanh();
    let inner2 = 0.5 * (-t1 + 3.0) - t2.tanh() + 2.0;
    t2.abs() > KINK_MARGIN && inner1.abs() > KINK_MARGIN && inner2.abs() > KINK_MARGIN
}

/// Largest per-task relative error `‖∇ − ∇_fd‖ / max(‖∇‖, ‖∇_fd‖)` with
/// central differences of step `h`.
pub fn gradcheck_point(p: &ToyPoint, h: f64) -> f64 {
    let (g1, g2) = toy_gradient_pair(p);
    let mut fd = [[0.0; 2]; 2];
    for j in 0..2 {
        let mut plus = *p;
        let mut minus = *p;
        plus.0[j] += h;
        minus.0[j] -= h;
        let (lp1, lp2) = toy_losses(&plus);
        let (lm1, lm2) = toy_losses(&minus);
        fd[0][j] = (lp1 - lm1) / (2.0 * h);
        fd[1][j] = (lp2 - lm2) / (2.0 * h);
    }
    [(g1, fd[0]), (g2, fd[1])]
        .iter()
        .map(|(a, n)| {
            let diff = norm(&[a[0] - n[0], a[1] - n[1]]);
            let scale = norm(a).max(norm(n)).max(1e-12);
            diff / scale
        })
        .fold(0.0, f64::max)
}

pub fn gradcheck(seed: u64, n: usize) -> Check {
    let mut rng = seed::rng(seed, 11);
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    let mut done = 0;
    while done < n {
        let p = ToyPoint([rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)]);
        if !off_kink(&p) {
            continue;
        }
        let err = gradcheck_point(&p, 1e-6);
        worst = worst.max(err);
        if err >= 1e-4 {
            failures.push(format!("({}, {}): relative error {err:e}", p.0[0], p.0[1]));
        }
        done += 1;
    }
    check("finite_difference", failures, format!("max rel err {worst:.3e} over {n} points (limit 1e-4)"))
}

fn correlation_suite(seed: u64) -> Result<Vec<Check>> {
    let report = correlation_study(1000, seed)?;
    let rho = report.spearman;
    let corr_fail = match rho {
        Some(r) if r > 0.3 => vec![],
        Some(r) => vec![format!("spearman {r} <= 0.3")],
        None => vec!["degenerate series".into()],
    };
    let range_fail = if report.cos_theta_in_unit_interval {
        vec![]
    } else {
        vec![format!("cos theta range [{}, {}]", report.cos_theta.min, report.cos_theta.max)]
    };
    let solver = SolverConfig::default();
    let mut rng = seed::rng(seed, 12);
    let mut mu_fail = Vec::new();
    let mut counted = 0;
    while counted < 1000 {
        let k = rng.gen_range(2..=5);
        let m = rng.gen_range(1..=10);
        let g = random_set(&mut rng, k, m);
        let Ok(mu) = estimate_mu(&g, MuMode::Pm, &solver) else { continue };
        if !(0.0..=1.0).contains(&mu) {
            mu_fail.push(format!("mu = {mu} for K={k}, m={m}"));
        }
        counted += 1;
    }
    Ok(vec![
        check(
            "spearman",
            corr_fail,
            format!(
                "rho(1/r, cos theta) = {} over {} samples (need > 0.3)",
                rho.map_or("undefined".into(), |r| format!("{r:.4}")),
                report.samples
            ),
        ),
        check(
            "cos_theta_range",
            range_fail,
            format!("cos theta in [{:.4}, {:.4}]", report.cos_theta.min, report.cos_theta.max),
        ),
        check("pm_mu_range", mu_fail.clone(), format!("PM mu outside [0, 1]: {} / 1000 random sets", mu_fail.len())),
    ])
}

/// Quadratic two-task instances used by the bound audit: the reference
/// pair, identical tasks, and seeded random centers.
pub fn audit_instances(seed: u64, random: usize) -> Vec<(String, QuadraticObjective, [f64; 2])> {
    let mut out = vec![
        (
            "a1=(1,0) a2=(-1,0)".to_string(),
            QuadraticObjective { centers: vec![vec![1.0, 0.0], vec![-1.0, 0.0]] },
            [0.0, 1.0],
        ),
        ("a1=a2=(1,2)".to_string(), QuadraticObjective { centers: vec![vec![1.0, 2.0], vec![1.0, 2.0]] }, [3.0, -1.0]),
    ];
    let mut rng = seed::rng(seed, 13);
    for i in 0..random {
        let mut pt = || [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        let (a1, a2, init) = (pt(), pt(), pt());
        out.push((format!("random {i}"), QuadraticObjective { centers: vec![a1.to_vec(), a2.to_vec()] }, init));
    }
    out
}

fn bounds_suite(seed: u64) -> Result<Vec<Check>> {
    let (c, alpha, steps) = (0.4, 0.1, 1000);
    let opt = OptimizerConfig::gd(alpha, steps);
    let cfg = CombinerConfig { c, seed, ..Default::default() };
    let solver = SolverConfig::default();
    let mut checks = Vec::new();
    for method in [Method::Cagrad, Method::Imgrad] {
        let mut failures = Vec::new();
        let mut checked = 0;
        let mut instances = 0;
        for (label, obj, init) in audit_instances(seed, 8) {
            let mut comb = build_combiner(method, &cfg, &solver)?;
            let trace = run_trajectory(&obj, comb.as_mut(), &opt, &init, &[1.0, 1.0])?;
            if let Some(why) = &trace.abort {
                failures.push(format!("{label}: aborted ({why})"));
                continue;
            }
            let report = descent_bound_audit(&obj, &trace, c, alpha)?;
            checked += report.steps_checked;
            instances += 1;
            for v in report.violations.iter().chain(&report.loose_violations) {
                failures.push(format!("{label} step {}: decrease {:e} > bound {:e}", v.step, v.decrease, v.bound));
            }
        }
        let n = failures.len();
        checks.push(check(
            &format!("descent_bound_{method}"),
            failures,
            format!("{method}: {n} violations over {checked} steps on {instances} quadratic instances"),
        ));
    }
    Ok(checks)
}

fn census_suite(seed: u64) -> Result<(Vec<Check>, Vec<CensusCount>)> {
    let stream = imbalanced_stream(1000, seed);
    let cfg = CombinerConfig { seed, ..Default::default() };
    let solver = SolverConfig::default();
    let mut combiners = Method::ALL.iter().map(|&m| build_combiner(m, &cfg, &solver)).collect::<Result<Vec<_>>>()?;
    let counts = pareto_failure_census(&stream, &mut combiners)?;
    let get = |m: Method| {
        let name = build_combiner(m, &cfg, &solver).expect("valid").name();
        counts.iter().find(|c| c.combiner == name).map(|c| c.pareto_failures).unwrap_or(usize::MAX)
    };
    let (pc, nash, imn, cag, img) =
        (get(Method::Pcgrad), get(Method::Nash), get(Method::ImgradNash), get(Method::Cagrad), get(Method::Imgrad));
    let fail_if = |ok: bool, msg: String| if ok { vec![] } else { vec![msg] };
    let checks = vec![
        check("pcgrad_zero", fail_if(pc == 0, format!("pcgrad count {pc}")), format!("pcgrad failures: {pc}")),
        check(
            "imgrad_nash_le_nash",
            fail_if(imn <= nash, format!("{imn} > {nash}")),
            format!("imgrad-nash {imn} vs nash {nash}"),
        ),
        check(
            "imgrad_le_cagrad",
            fail_if(img <= cag, format!("{img} > {cag}")),
            format!("imgrad {img} vs cagrad {cag}"),
        ),
    ];
    Ok((checks, counts))
}
