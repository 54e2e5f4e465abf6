//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits non-zero when a criterion outside `KNOWN_FAILURES` fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use ouhjb::cell::{continuous_dependence_profile, solve_cell, solve_discounted, DeltaSchedule};
use ouhjb::effective::{build_lambda_field, solve_shaken, CellSettings, LambdaMethod, ShakeMode, SolveOptions};
use ouhjb::ergodic_mc::{lambda_mc, simulate_path, McConfig};
use ouhjb::grid::{weighted_holder_quotient, GridSpec};
use ouhjb::harness::{run_rate_sweep, RateConfig};
use ouhjb::problem::{fixture, Func, ProblemInstance, SeparatedTerm};
use ouhjb::twoscale::solve_two_scale_from;

/// Criteria that fail for a correct solver. The separated Lipschitz fixture
/// converges at O(eps), so e / (eps |log eps|)^{1/2} drifts by roughly
/// sqrt(64 ln 512 / ln 8) ~ 14 across 2^-3..2^-9 and cannot stay within 5.
const KNOWN_FAILURES: &[&str] = &["separated-lip"];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn spread(v: &[f64]) -> f64 {
    let (lo, hi) = v.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    hi / lo
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4e}")).collect();
    format!("[{}]", parts.join(", "))
}

/// E cos(Y) for Y ~ N(0, s2) by composite Simpson on [-12 s, 12 s].
fn gaussian_cos_mean(s2: f64) -> f64 {
    let s = s2.sqrt();
    let n = 20_000;
    let (a, b) = (-12.0 * s, 12.0 * s);
    let h = (b - a) / n as f64;
    let f = |y: f64| y.cos() * (-y * y / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2).sqrt();
    let mut acc = f(a) + f(b);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

fn lambda_cross_validation() -> Outcome {
    let p = fixture("ou-cos").unwrap();
    let oracle = gaussian_cos_mean(p.fast.tau_sup.powi(2) / p.fast.alpha);
    let exact = (-0.5f64).exp();
    let start = Instant::now();
    let cell = solve_cell(&p, &[0.0], &GridSpec::fast_1d(8.0, 801).unwrap(), &DeltaSchedule::default()).unwrap();
    let mc = lambda_mc(&p, &[0.0], &McConfig::default()).unwrap();
    let took = start.elapsed();
    let ok = (oracle - exact).abs() < 1e-10
        && (cell.lambda - oracle).abs() <= 5e-3
        && (mc.value - oracle).abs() <= 5e-3
        && took < Duration::from_secs(30);
    outcome(
        ok,
        format!(
            "quadrature {oracle:.6}, cell {:.6}, mc {:.6} +- {:.1e}, {:.1}s",
            cell.lambda,
            mc.value,
            mc.stderr,
            took.as_secs_f64()
        ),
    )
}

fn trivial_exactness() -> Outcome {
    let p = fixture("slow-only").unwrap();
    let start = Instant::now();
    let slow = GridSpec::slow_periodic_1d(201).unwrap();
    let fast = GridSpec::fast_1d(8.0, 201).unwrap();
    let opts = SolveOptions { tol: 1e-9, ..SolveOptions::default() };
    let lam = build_lambda_field(&p, &slow, LambdaMethod::Discount, &CellSettings::new(fast.clone())).unwrap();
    let eff = solve_shaken(&p, &lam, 0.0, ShakeMode::Lower, &opts).unwrap().u;
    let grid = GridSpec::product(&slow, &fast).unwrap();
    let mut errs = Vec::new();
    for eps in RateConfig::default().eps {
        let sol = solve_two_scale_from(&p, eps, &grid, &opts, None).unwrap();
        let e = (0..grid.len())
            .map(|k| (sol.u.values[k] - eff.values[k / fast.len()]).abs())
            .fold(0.0, f64::max);
        errs.push(e);
    }
    let took = start.elapsed();
    let ok = errs.iter().all(|&e| e <= 1e-7) && took < Duration::from_secs(60);
    outcome(ok, format!("sup errors {}, {:.1}s", fmt(&errs), took.as_secs_f64()))
}

fn rate(name: &str, pointwise: bool) -> ouhjb::harness::RateReport {
    let p = fixture(name).unwrap();
    let c = RateConfig {
        pointwise_bound: pointwise,
        ..RateConfig::default()
    };
    run_rate_sweep(&p, &c).unwrap()
}

fn criterion_flag(r: &ouhjb::harness::RateReport, name: &str) -> bool {
    r.criterion(name).map(|c| c.passed).unwrap_or(false)
}

fn rate_smooth() -> Outcome {
    let start = Instant::now();
    let r = rate("separated-c2", false);
    let took = start.elapsed();
    let slope = r.fit.as_ref().map(|f| f.slope).unwrap_or(f64::NAN);
    let q = r.q_ratio.unwrap_or(f64::NAN);
    let ok = slope >= 0.85 && q <= 5.0 && r.exponent == 1.0 && took < Duration::from_secs(300);
    outcome(ok, format!("slope {slope:.3} (>= 0.85), q max/min {q:.2} (<= 5), {:.1}s", took.as_secs_f64()))
}

fn rate_lipschitz() -> Outcome {
    let r = rate("separated-lip", false);
    let slope = r.fit.as_ref().map(|f| f.slope).unwrap_or(f64::NAN);
    let q = r.q_ratio.unwrap_or(f64::NAN);
    let plain = r.plain_eps_slope.unwrap_or(f64::NAN);
    let ok = slope >= 0.4 && q <= 5.0 && r.exponent == 0.5;
    outcome(
        ok,
        format!(
            "slope {slope:.3} (>= 0.4), q max/min with p=1/2 {q:.2} (<= 5), slope in plain eps {plain:.3}, one-sided {}",
            criterion_flag(&r, "one-sided")
        ),
    )
}

fn rate_holder() -> Outcome {
    let r = rate("holder-beta", true);
    let slope = r.fit.as_ref().map(|f| f.slope).unwrap_or(f64::NAN);
    let bound = r.bound.as_ref().expect("bound requested");
    let excess: Vec<f64> = bound.finer.iter().map(|f| f.1).collect();
    let ok = slope >= 0.15 && bound.passed() && bound.finer.len() == r.points.len() - 1;
    outcome(
        ok,
        format!(
            "slope {slope:.3} (>= 0.15), frozen K {:.4}, excess at finer eps {} (<= {:.0e})",
            bound.k,
            fmt(&excess),
            bound.slack
        ),
    )
}

fn holder_uniformity() -> Outcome {
    let p = fixture("ou-cos").unwrap();
    let g = GridSpec::fast_1d(8.0, 201).unwrap();
    let q: Vec<f64> = [1e-1, 1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&d| weighted_holder_quotient(&solve_discounted(&p, &[0.0], d, &g).unwrap().field(), 1.0, 1.0).unwrap())
        .collect();
    let s = spread(&q);
    outcome(s <= 3.0, format!("quotients {}, max/min {s:.3} (<= 3)", fmt(&q)))
}

fn growth_constant() -> Outcome {
    let p = fixture("ou-cos").unwrap();
    let c5: Vec<f64> = [(4.0, 201), (8.0, 401), (16.0, 801)]
        .iter()
        .map(|&(r, n)| {
            let g = GridSpec::fast_1d(r, n).unwrap();
            solve_cell(&p, &[0.0], &g, &DeltaSchedule::default()).unwrap().c5_fit
        })
        .collect();
    let s = spread(&c5);
    outcome(s <= 2.0, format!("C5 at R=4,8,16 {}, max/min {s:.3} (<= 2)", fmt(&c5)))
}

fn with_h(p: &ProblemInstance, h: Func) -> ProblemInstance {
    let mut src = p.source.clone();
    src.terms = vec![SeparatedTerm {
        h,
        g: p.source.terms[0].g.clone(),
    }];
    p.with_source("star", src)
}

fn continuous_dependence() -> Outcome {
    let g = GridSpec::fast_1d(8.0, 201).unwrap();
    let s = DeltaSchedule::default();
    let p = fixture("separated-c2").unwrap();
    let x1 = 0.5;
    let c6: Vec<f64> = [0.1, 0.05, 0.025]
        .iter()
        .map(|&d| continuous_dependence_profile(&p, &[x1], &[x1 + d], &g, &s).unwrap().1)
        .collect();
    let mut fact_err: f64 = 0.0;
    for name in ["separated-c2", "separated-lip"] {
        let p = fixture(name).unwrap();
        let h = &p.source.terms[0].h;
        let star = solve_cell(&with_h(&p, Func::constant(1.0)), &[0.0], &g, &s).unwrap();
        for (a, b) in [(0.4, 1.1), (-0.3, 0.2)] {
            let (w, _) = continuous_dependence_profile(&p, &[a], &[b], &g, &s).unwrap();
            let dh = h.eval(&[a]) - h.eval(&[b]);
            for k in 0..g.len() {
                fact_err = fact_err.max((w.values[k] - dh * star.w.values[k]).abs());
            }
        }
    }
    let sp = spread(&c6);
    outcome(
        sp <= 2.0 && fact_err <= 1e-6,
        format!("C6 at |dx|=0.1,0.05,0.025 {}, max/min {sp:.3} (<= 2), factorisation error {fact_err:.1e} (<= 1e-6)", fmt(&c6)),
    )
}

fn shaken_sandwich() -> Outcome {
    let p = fixture("separated-c2").unwrap();
    let g = GridSpec::slow_periodic_1d(201).unwrap();
    let lam = build_lambda_field(&p, &g, LambdaMethod::Separated, &CellSettings::new(GridSpec::fast_1d(8.0, 201).unwrap()))
        .unwrap();
    let o = SolveOptions::default();
    let plain = solve_shaken(&p, &lam, 0.0, ShakeMode::Lower, &o).unwrap().u;
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut gaps = Vec::new();
    for rho in [0.2, 0.1, 0.05] {
        // the lower shaken Hamiltonian yields the larger solution
        let hi = solve_shaken(&p, &lam, rho, ShakeMode::Lower, &o).unwrap().u;
        let lo = solve_shaken(&p, &lam, rho, ShakeMode::Upper, &o).unwrap().u;
        for k in 0..g.len() {
            worst = worst.max(lo.values[k] - plain.values[k]).max(plain.values[k] - hi.values[k]);
        }
        gaps.push(hi.sup_distance(&lo));
    }
    let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    outcome(
        worst <= 2e-8 && decreasing,
        format!("worst order violation {worst:.1e} (<= 2e-8), gaps at rho=0.2,0.1,0.05 {}", fmt(&gaps)),
    )
}

fn mc_second_moment() -> Outcome {
    let p = fixture("ou-cos").unwrap();
    let s = simulate_path(&p.fast, &McConfig::default(), &[0.0], |_| 0.0).unwrap();
    let m2 = &s.second_moment[0];
    let target = p.fast.tau_sup.powi(2) / p.fast.alpha;
    let z = (m2.value - target).abs() / m2.stderr;
    outcome(z <= 3.0, format!("E Y^2 = {:.5} +- {:.1e}, target {target}, {z:.2} standard errors", m2.value, m2.stderr))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("lambda-cross-validation", lambda_cross_validation),
        ("trivial-exactness", trivial_exactness),
        ("separated-c2", rate_smooth),
        ("separated-lip", rate_lipschitz),
        ("holder-beta", rate_holder),
        ("holder-uniformity", holder_uniformity),
        ("growth-constant", growth_constant),
        ("continuous-dependence", continuous_dependence),
        ("shaken-sandwich", shaken_sandwich),
        ("mc-second-moment", mc_second_moment),
    ];
    let mut unexpected = 0;
    for (name, run) in criteria {
        let o = run();
        let known = KNOWN_FAILURES.contains(&name);
        let tag = match (o.passed, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("{tag} {name}: {}", o.detail);
        if !o.passed && !known {
            unexpected += 1;
        }
        if o.passed && known {
            println!("note: {name} is listed as a known failure but passed");
        }
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{unexpected} criteria failed");
        ExitCode::FAILURE
    }
}
