//! End-to-end acceptance run: one `[PASS]`/`[FAIL]` line per criterion,
//! non-zero exit if any criterion fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use mtlgrad::cli::verify::{random_set, run_suite, Suite};
use mtlgrad::cli::RunConfig;
use mtlgrad::combiners::{build_combiner, estimate_mu, nash_combine, Method, MuMode, NashState};
use mtlgrad::linalg::{dot, norm, sub, TaskGradientSet, Weights};
use mtlgrad::metrics::{delta_m, imbalanced_stream, DeltaMEntry};
use mtlgrad::runner::{run_trajectory, ToyObjective, TrajectoryTrace};
use mtlgrad::seed;
use mtlgrad::solvers::{minimize_cagrad_family, FamilyObjective, NormTerm, SolverConfig};
use mtlgrad::toybench::{default_grid_oracle, init_points, toy_gradients, weight_presets, ToyPoint, ToyWeighting};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

const GAP: f64 = 1e-2;
const CAGRAD_TOL: f64 = 1e-6;
const NASH_TOL: f64 = 1e-6;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict { passed, detail: detail.into() }
}

/// Summary of one toy run; full traces are dropped as soon as they are scanned.
struct Cell {
    method: Method,
    weighting: ToyWeighting,
    init: [f64; 2],
    gap: f64,
    abort: Option<String>,
    /// Largest `|‖d−g₀‖ − c‖g₀‖|` over steps with `‖g_ω‖ > 0`.
    constraint_dev: f64,
    constraint_steps: usize,
    nash: NashScan,
}

#[derive(Default)]
struct NashScan {
    checked: usize,
    worst: f64,
    violations: usize,
    bad: Vec<String>,
}

impl NashScan {
    fn visit(&mut self, label: &str, g: &TaskGradientSet, w: &[f64], d: &[f64], pareto_failure: bool) {
        self.checked += 1;
        let prods: Vec<f64> = g.rows().zip(w).map(|(gi, wi)| wi * dot(gi, d)).collect();
        let dev = prods.iter().map(|p| (p - 1.0).abs()).fold(0.0, f64::max);
        self.worst = self.worst.max(dev);
        if dev > NASH_TOL || pareto_failure {
            self.violations += 1;
            if self.bad.len() < 5 {
                self.bad.push(format!("{label}: w_i(GG'w)_i = {prods:?}, pareto_failure={pareto_failure}"));
            }
        }
    }
}

fn weighted_gradients(theta: &[f64], w: &ToyWeighting) -> TaskGradientSet {
    toy_gradients(&ToyPoint([theta[0], theta[1]])).scale_rows(&w.as_array()).expect("two weights")
}

fn scan(method: Method, w: ToyWeighting, init: [f64; 2], trace: &TrajectoryTrace, oracle: f64, c: f64) -> Cell {
    let mut cell = Cell {
        method,
        weighting: w,
        init,
        gap: trace.final_weighted_loss() - oracle,
        abort: trace.abort.clone(),
        constraint_dev: 0.0,
        constraint_steps: 0,
        nash: NashScan::default(),
    };
    for rec in &trace.records {
        let g = weighted_gradients(&rec.theta, &w);
        match method {
            Method::Cagrad | Method::Imgrad => {
                if norm(&g.combine(&rec.weights)) > 0.0 {
                    let g0 = g.mean();
                    let dev = (norm(&sub(&rec.d, &g0)) - c * norm(&g0)).abs();
                    cell.constraint_dev = cell.constraint_dev.max(dev);
                    cell.constraint_steps += 1;
                }
            }
            Method::Nash if !rec.skipped => {
                let label = format!("({}, {}) from {:?} step {}", w.a1, w.a2, init, rec.step);
                cell.nash.visit(&label, &g, &rec.weights, &rec.d, rec.pareto_failure);
            }
            _ => {}
        }
    }
    cell
}

fn toy_matrix(methods: &[Method]) -> Vec<Cell> {
    let base = RunConfig::default();
    let oracles: Vec<(ToyWeighting, f64)> =
        weight_presets().into_iter().map(|w| (w, default_grid_oracle(&w).loss_star)).collect();
    let jobs: Vec<(Method, usize, [f64; 2])> = methods
        .iter()
        .flat_map(|&m| (0..oracles.len()).flat_map(move |wi| init_points().into_iter().map(move |p| (m, wi, p.0))))
        .collect();
    jobs.par_iter()
        .map(|&(method, wi, init)| {
            let (w, oracle) = oracles[wi];
            let cfg = RunConfig { method, weights: w.as_array(), init, ..base.clone() };
            let mut comb = build_combiner(method, &cfg.combiner(), &cfg.solver()).expect("default config is valid");
            let trace = run_trajectory(&ToyObjective, comb.as_mut(), &cfg.optimizer_config(), &init, &cfg.weights)
                .expect("toy run");
            scan(method, w, init, &trace, oracle, cfg.c)
        })
        .collect()
}

fn converged(c: &Cell) -> bool {
    c.abort.is_none() && c.gap <= GAP
}

fn extreme(w: &ToyWeighting) -> bool {
    (w.a1 - 0.9).abs() < 1e-12 || (w.a1 - 0.1).abs() < 1e-12
}

fn criterion_1(cells: &[Cell]) -> Verdict {
    let mut passed = true;
    let mut parts = Vec::new();
    for m in [Method::Ls, Method::Pcgrad, Method::Cagrad, Method::Imgrad] {
        let mine: Vec<&Cell> = cells.iter().filter(|c| c.method == m).collect();
        let ok = mine.iter().filter(|c| converged(c)).count();
        if m == Method::Imgrad {
            passed &= ok == 25;
            let missed: Vec<String> = mine
                .iter()
                .filter(|c| !converged(c))
                .map(|c| format!("({}, {}) from {:?} gap {:.3}", c.weighting.a1, c.weighting.a2, c.init, c.gap))
                .collect();
            let tail = if missed.is_empty() { String::new() } else { format!(" [missed: {}]", missed.join("; ")) };
            parts.push(format!("imgrad {ok}/25{tail}"));
        } else {
            let extreme_misses = mine.iter().filter(|c| extreme(&c.weighting) && !converged(c)).count();
            passed &= extreme_misses >= 1;
            parts.push(format!("{m} {ok}/25 ({extreme_misses} misses at extreme weightings)"));
        }
    }
    verdict(passed, parts.join(", "))
}

fn criterion_2() -> Verdict {
    suite(Suite::Mgda)
}

fn criterion_3(cells: &[Cell]) -> Verdict {
    let runs: Vec<&Cell> = cells.iter().filter(|c| matches!(c.method, Method::Cagrad | Method::Imgrad)).collect();
    let worst = runs.iter().map(|c| c.constraint_dev).fold(0.0, f64::max);
    let steps: usize = runs.iter().map(|c| c.constraint_steps).sum();
    verdict(
        worst <= CAGRAD_TOL,
        format!("max |‖d−g0‖ − c‖g0‖| = {worst:.3e} over {steps} steps of {} cagrad/imgrad traces", runs.len()),
    )
}

fn criterion_4() -> Verdict {
    let mut rng = seed::rng(0, 14);
    let solver = SolverConfig::default();
    let mut worst = f64::NEG_INFINITY;
    let mut bad = Vec::new();
    for n in 0..200 {
        let k = 2 + n % 2;
        let m = rng.gen_range(2..=10);
        let g = random_set(&mut rng, k, m);
        let c: f64 = rng.gen_range(0.05..0.95);
        let g0 = norm(&g.mean());
        let (a, b) = if n % 4 < 2 {
            (1.0, c * g0)
        } else {
            let mu = estimate_mu(&g, MuMode::Pm, &solver).expect("finite set");
            (1.0 - mu, mu * c * g0)
        };
        let sol = minimize_cagrad_family(&g, a, b, &solver).expect("valid instance");
        let obj = FamilyObjective::new(&g, a, b, NormTerm::Linear);
        let f_solver = obj.value(sol.weights.as_slice());
        let f_grid = simplex_grid_min(&obj, k);
        let excess = f_solver - f_grid;
        worst = worst.max(excess);
        if excess > 1e-5 {
            bad.push(format!("#{n} K={k}: solver {f_solver:.9} vs grid {f_grid:.9}"));
        }
    }
    let tail = if bad.is_empty() { String::new() } else { format!(" [{}]", bad.join("; ")) };
    verdict(bad.is_empty(), format!("200 instances, worst F_solver − F_grid = {worst:.3e}{tail}"))
}

fn simplex_grid_min(obj: &FamilyObjective, k: usize) -> f64 {
    const N: usize = 1000;
    let h = 1.0 / N as f64;
    let mut best = f64::INFINITY;
    if k == 2 {
        for i in 0..=N {
            let w1 = i as f64 * h;
            best = best.min(obj.value(&[w1, 1.0 - w1]));
        }
    } else {
        for i in 0..=N {
            for j in 0..=(N - i) {
                let (w1, w2) = (i as f64 * h, j as f64 * h);
                best = best.min(obj.value(&[w1, w2, (1.0 - w1 - w2).max(0.0)]));
            }
        }
    }
    best
}

fn criterion_5() -> Verdict {
    suite(Suite::Gradcheck)
}

fn criterion_6() -> Verdict {
    suite(Suite::Correlation)
}

fn criterion_7(cells: &[Cell]) -> Verdict {
    let mut total = NashScan::default();
    for c in cells.iter().filter(|c| c.method == Method::Nash) {
        total.checked += c.nash.checked;
        total.worst = total.worst.max(c.nash.worst);
        total.violations += c.nash.violations;
        total.bad.extend(c.nash.bad.iter().cloned());
    }
    let toy_checked = total.checked;
    let solver = SolverConfig::default();
    let mut state = NashState::default();
    for (i, g) in imbalanced_stream(1000, 0).iter().enumerate() {
        let out = nash_combine(g, &mut state, &solver);
        if !out.skipped {
            let Weights::Positive(w) = &out.weights else { unreachable!("nash returns positive weights") };
            total.visit(&format!("stream #{i}"), g, w.as_slice(), &out.d, out.pareto_failure);
        }
    }
    total.bad.truncate(5);
    let tail = if total.bad.is_empty() { String::new() } else { format!(" [{}]", total.bad.join("; ")) };
    verdict(
        total.violations == 0,
        format!(
            "{} solved steps ({toy_checked} toy, {} stream), {} violations, max |w_i(GG'w)_i − 1| = {:.3e}{tail}",
            total.checked,
            total.checked - toy_checked,
            total.violations,
            total.worst
        ),
    )
}

fn criterion_8() -> Verdict {
    suite(Suite::Census)
}

fn criterion_9() -> Verdict {
    suite(Suite::Bounds)
}

fn criterion_10() -> Verdict {
    let e = |method, baseline, higher_is_better| DeltaMEntry { method, baseline, higher_is_better };
    let mut fails = Vec::new();
    let mut expect = |name: &str, entries: &[DeltaMEntry], want: f64| match delta_m(entries) {
        Ok(v) if (v - want).abs() <= 1e-9 => {}
        other => fails.push(format!("{name}: {other:?}, want {want}")),
    };
    expect("zero", &[e(5.0, 5.0, true), e(2.0, 2.0, false)], 0.0);
    expect("single higher-better +10%", &[e(1.1, 1.0, true)], -10.0);
    expect("mixed", &[e(1.1, 1.0, true), e(1.1, 1.0, false)], 0.0);

    let mut rng = seed::rng(0, 15);
    let mut perm_worst = 0.0f64;
    for _ in 0..1000 {
        let k = rng.gen_range(1..=8);
        let mut entries: Vec<DeltaMEntry> =
            (0..k).map(|_| e(rng.gen_range(0.1..10.0), rng.gen_range(0.1..10.0), rng.gen_bool(0.5))).collect();
        let before = delta_m(&entries).expect("nonzero baselines");
        entries.shuffle(&mut rng);
        let after = delta_m(&entries).expect("nonzero baselines");
        perm_worst = perm_worst.max((before - after).abs() / before.abs().max(1.0));
    }
    if perm_worst > 1e-12 {
        fails.push(format!("permutation changed Δm% by {perm_worst:.3e}"));
    }
    let detail = if fails.is_empty() {
        format!("hand cases exact, 1000 permutations within {perm_worst:.1e}")
    } else {
        fails.join("; ")
    };
    verdict(fails.is_empty(), detail)
}

fn bin(args: &[String]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mtlgrad")).args(args).output().expect("spawn mtlgrad")
}

/// Runs `args` (with `{out}` replaced by a fresh directory) twice and compares
/// every byte written: stdout plus each produced file.
fn twice(name: &str, args: &[&str], root: &Path) -> Option<String> {
    let mut results = Vec::new();
    for run in 0..2 {
        let dir = root.join(format!("{name}-{run}"));
        std::fs::create_dir_all(&dir).expect("scratch dir");
        let args: Vec<String> = args.iter().map(|a| a.replace("{out}", dir.to_str().unwrap())).collect();
        let o = bin(&args);
        let mut files: Vec<(String, Vec<u8>)> = Vec::new();
        collect(&dir, &dir, &mut files);
        files.sort();
        let stdout = String::from_utf8_lossy(&o.stdout).replace(dir.to_str().unwrap(), "{out}");
        results.push((o.status.code(), stdout, files));
    }
    if results[0].2.is_empty() {
        return Some(format!("{name}: produced no files (exit {:?})", results[0].0));
    }
    (results[0] != results[1]).then(|| format!("{name}: outputs differ between runs"))
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
    for entry in std::fs::read_dir(dir).expect("readable dir") {
        let p = entry.expect("dir entry").path();
        if p.is_dir() {
            collect(root, &p, out);
        } else {
            let bytes = std::fs::read(&p).expect("readable file");
            // The sidecar echoes the output path, which differs per run directory.
            let text = String::from_utf8_lossy(&bytes).replace(dir.to_str().unwrap(), "{out}");
            out.push((p.strip_prefix(root).unwrap().display().to_string(), text.into_bytes()));
        }
    }
}

fn criterion_11() -> Verdict {
    let root = tempfile::tempdir().expect("tempdir");
    let trace_dir = root.path().join("traces");
    std::fs::create_dir_all(&trace_dir).expect("trace dir");
    let mut traces = Vec::new();
    for m in ["imgrad", "nash"] {
        let p = trace_dir.join(format!("{m}.csv"));
        let o = bin(&[
            "toy-run".into(),
            "--method".into(),
            m.into(),
            "--steps".into(),
            "3000".into(),
            "--out".into(),
            p.display().to_string(),
        ]);
        assert!(o.status.success(), "seed trace for stats");
        traces.push(p.display().to_string());
    }
    let stats: Vec<&str> =
        ["stats"].into_iter().chain(traces.iter().map(String::as_str)).chain(["--out-dir", "{out}"]).collect();
    let cases: Vec<(&str, Vec<&str>)> = vec![
        ("toy-run-imgrad", vec!["toy-run", "--method", "imgrad", "--out", "{out}/t.csv"]),
        (
            "toy-run-pcgrad",
            vec!["toy-run", "--method", "pcgrad", "--weights", "0.9,0.1", "--seed", "7", "--out", "{out}/t.csv"],
        ),
        ("toy-run-imgrad-nash", vec!["toy-run", "--method", "imgrad-nash", "--steps", "5000", "--out", "{out}/t.csv"]),
        ("toy-run-adaptive", vec!["toy-run", "--method", "adaptive", "--steps", "5000", "--out", "{out}/t.csv"]),
        (
            "toy-matrix",
            vec![
                "toy-matrix",
                "--methods",
                "ls,mgda,pcgrad,cagrad,imgrad,nash",
                "--steps",
                "5000",
                "--out",
                "{out}/m.csv",
            ],
        ),
        ("verify-mgda", vec!["verify", "mgda", "--report", "{out}/r.json"]),
        ("verify-gradcheck", vec!["verify", "gradcheck", "--report", "{out}/r.json"]),
        ("verify-correlation", vec!["verify", "correlation", "--report", "{out}/r.json"]),
        ("verify-bounds", vec!["verify", "bounds", "--report", "{out}/r.json"]),
        ("verify-census", vec!["verify", "census", "--report", "{out}/r.json"]),
        ("stats", stats),
        ("oracle", vec!["oracle", "--out", "{out}/oracle.txt"]),
    ];
    let fails: Vec<String> = cases.iter().filter_map(|(name, args)| twice(name, args, root.path())).collect();
    let detail = if fails.is_empty() {
        format!("{} invocations byte-identical across two runs", cases.len())
    } else {
        fails.join("; ")
    };
    verdict(fails.is_empty(), detail)
}

fn suite(s: Suite) -> Verdict {
    let report = match run_suite(s, 0) {
        Ok(r) => r,
        Err(e) => return verdict(false, format!("suite {} errored: {e}", s.name())),
    };
    let parts: Vec<String> = report
        .checks
        .iter()
        .map(|c| {
            let mark = if c.passed { "ok" } else { "FAILED" };
            let first = c.failures.first().map(|f| format!(" ({f})")).unwrap_or_default();
            format!("{} {mark}: {}{first}", c.name, c.summary)
        })
        .collect();
    verdict(report.passed, parts.join("; "))
}

fn main() -> ExitCode {
    // `cargo test` passes harness flags; `--list` must answer without running anything.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let start = Instant::now();
    let cells = toy_matrix(&[Method::Ls, Method::Pcgrad, Method::Cagrad, Method::Imgrad, Method::Nash]);
    let matrix_secs = start.elapsed().as_secs_f64();

    type Run<'a> = Box<dyn Fn() -> Verdict + 'a>;
    let criteria: Vec<(&str, Run)> = vec![
        ("toy convergence matrix", Box::new(|| criterion_1(&cells))),
        ("MGDA oracle equivalence", Box::new(criterion_2)),
        ("CAGrad constraint", Box::new(|| criterion_3(&cells))),
        ("simplex-objective oracle", Box::new(criterion_4)),
        ("gradient check", Box::new(criterion_5)),
        ("mu range and correlation", Box::new(criterion_6)),
        ("Nash first-order condition", Box::new(|| criterion_7(&cells))),
        ("Pareto-failure census", Box::new(criterion_8)),
        ("descent-bound audit", Box::new(criterion_9)),
        ("delta-m unit suite", Box::new(criterion_10)),
        ("determinism", Box::new(criterion_11)),
    ];
    println!("toy matrix: {} runs in {matrix_secs:.1}s", cells.len());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let v = run();
        failed += !v.passed as usize;
        println!(
            "[{}] criterion {}: {name}: {} ({:.1}s)",
            if v.passed { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("{}/{} criteria passed in {:.1}s", criteria.len() - failed, criteria.len(), start.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
