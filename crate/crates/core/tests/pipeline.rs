use ouhjb::cell::{solve_cell, DeltaSchedule};
use ouhjb::cli::{dispatch_to, RunConfig, EXIT_CONFIG, EXIT_NONCONVERGENCE, EXIT_OK};
use ouhjb::effective::{build_lambda_field, CellSettings, LambdaMethod, SolveOptions};
use ouhjb::ergodic_mc::{lambda_mc, simulate_path, McConfig};
use ouhjb::grid::GridSpec;
use ouhjb::harness::{run_rate_sweep, RateConfig, TheoremTag};
use ouhjb::problem::{fixture, fixture_names, ControlHamiltonian, FastOperatorSpec};
use ouhjb::twoscale::solve_two_scale;

fn mc(chains: usize, steps: usize) -> McConfig {
    McConfig {
        burn_in: 10_000,
        sample_steps: steps,
        chains,
        ..McConfig::default()
    }
}

fn lambda_star() -> f64 {
    (-0.5f64).exp()
}

#[test]
fn mc_matches_cell_on_every_fixture() {
    let g = GridSpec::fast_1d(8.0, 801).unwrap();
    for name in fixture_names() {
        let p = fixture(name).unwrap();
        let x = [0.7];
        let cell = solve_cell(&p, &x, &g, &DeltaSchedule::default()).unwrap();
        let est = lambda_mc(&p, &x, &mc(16, 400_000)).unwrap();
        let tol = (3.0 * est.stderr).max(5e-3);
        assert!(
            (est.value - cell.lambda).abs() <= tol,
            "{name}: mc {} +- {} vs cell {}",
            est.value,
            est.stderr,
            cell.lambda
        );
    }
}

#[test]
fn mc_separated_scaling() {
    let p = fixture("separated-c2").unwrap();
    let x = [1.1];
    let est = lambda_mc(&p, &x, &mc(16, 400_000)).unwrap();
    let expect = x[0].sin() * lambda_star();
    assert!((est.value - expect).abs() <= (3.0 * est.stderr).max(5e-3), "{est:?} vs {expect}");
}

#[test]
fn mc_stationary_mean_is_zero() {
    let spec = FastOperatorSpec::ornstein_uhlenbeck(1, 1.0, 1.0);
    let s = simulate_path(&spec, &mc(16, 200_000), &[0.0], |_| 0.0).unwrap();
    assert!(s.mean[0].value.abs() <= 3.0 * s.mean[0].stderr, "{:?}", s.mean[0]);
}

#[test]
fn mc_standard_error_scales_with_chain_count() {
    // The standard error of a mean over independent chains scales like
    // chains^{-1/2}: doubling gives 1/sqrt(2), quadrupling gives 1/2.
    let p = fixture("ou-cos").unwrap();
    let se = |c| lambda_mc(&p, &[0.0], &mc(c, 20_000)).unwrap().stderr;
    let (s64, s128, s256) = (se(64), se(128), se(256));
    let r2 = s128 / s64;
    let r4 = s256 / s64;
    assert!((r2 / std::f64::consts::FRAC_1_SQRT_2 - 1.0).abs() <= 0.3, "doubling ratio {r2}");
    assert!((r4 / 0.5 - 1.0).abs() <= 0.3, "quadrupling ratio {r4}");
}

#[test]
fn lambda_field_methods_agree() {
    let p = fixture("holder-beta").unwrap();
    let slow = GridSpec::slow_periodic_1d(6).unwrap();
    let mut settings = CellSettings::new(GridSpec::fast_1d(8.0, 801).unwrap());
    settings.mc = mc(16, 200_000);
    let d = build_lambda_field(&p, &slow, LambdaMethod::Discount, &settings).unwrap();
    let m = build_lambda_field(&p, &slow, LambdaMethod::MonteCarlo, &settings).unwrap();
    for k in 0..slow.len() {
        let tol = (3.0 * m.stderr[k]).max(5e-3);
        assert!((d.values[k] - m.values[k]).abs() <= tol, "node {k}: {} vs {}", d.values[k], m.values[k]);
        assert_eq!(m.method[k], LambdaMethod::MonteCarlo);
    }
    assert!(d.sup_norm() <= p.source.c1);
}

#[test]
fn lambda_field_holder_in_x() {
    let p = fixture("holder-beta").unwrap();
    let slow = GridSpec::slow_periodic_1d(64).unwrap();
    let l = build_lambda_field(&p, &slow, LambdaMethod::Discount, &CellSettings::new(GridSpec::fast_1d(8.0, 201).unwrap()))
        .unwrap();
    let (beta, c3) = (p.source.beta, p.source.c3);
    for i in 0..slow.len() {
        for j in i + 1..slow.len() {
            let d = slow.distance(&slow.point(i), &slow.point(j));
            assert!((l.values[i] - l.values[j]).abs() <= c3 * d.powf(beta) + 1e-12);
        }
    }
}

#[test]
fn zero_hamiltonian_limit() {
    let mut p = fixture("ou-cos").unwrap();
    p.hamiltonian = ControlHamiltonian::zero(1);
    let g = GridSpec::product(&GridSpec::slow_periodic_1d(4).unwrap(), &GridSpec::fast_1d(8.0, 801).unwrap()).unwrap();
    let mut last = f64::INFINITY;
    for eps in [0.25, 0.0625, 0.015625] {
        let s = solve_two_scale(&p, eps, &g, &SolveOptions::default()).unwrap();
        let mut e: f64 = 0.0;
        for (k, v) in s.u.values.iter().enumerate() {
            if g.point(k)[1].abs() <= 2.0 {
                e = e.max((v + lambda_star()).abs());
            }
        }
        assert!(e < last, "eps {eps}: {e}");
        last = e;
    }
    assert!(last < 0.05, "{last}");
}

#[test]
fn halving_tolerance_moves_solution_by_at_most_tol() {
    let p = fixture("holder-beta").unwrap();
    let g = GridSpec::product(&GridSpec::slow_periodic_1d(48).unwrap(), &GridSpec::fast_1d(8.0, 81).unwrap()).unwrap();
    let tol = 1e-6;
    let a = solve_two_scale(&p, 0.05, &g, &SolveOptions { tol, max_iter: 100_000 }).unwrap();
    let b = solve_two_scale(&p, 0.05, &g, &SolveOptions { tol: tol / 2.0, max_iter: 100_000 }).unwrap();
    assert!(a.u.sup_distance(&b.u) <= tol);
}

#[test]
fn grid_refinement_changes_errors_little() {
    let p = fixture("separated-c2").unwrap();
    let cfg = |n| RateConfig {
        eps: vec![0.125, 0.03125, 0.0078125],
        slow_nodes: n,
        fast_nodes: n,
        ..RateConfig::default()
    };
    let coarse = run_rate_sweep(&p, &cfg(101)).unwrap();
    let fine = run_rate_sweep(&p, &cfg(201)).unwrap();
    for (a, b) in coarse.points.iter().zip(&fine.points) {
        let change = (a.sup_error - b.sup_error).abs() / b.sup_error;
        assert!(change < 0.25, "eps {}: {} vs {}", a.epsilon, a.sup_error, b.sup_error);
    }
}

#[test]
fn rate_report_is_deterministic() {
    let p = fixture("holder-beta").unwrap();
    let c = RateConfig {
        eps: vec![0.125, 0.0625, 0.03125],
        slow_nodes: 41,
        fast_nodes: 61,
        pointwise_bound: true,
        ..RateConfig::default()
    };
    assert_eq!(run_rate_sweep(&p, &c).unwrap(), run_rate_sweep(&p, &c).unwrap());
}

fn run_cli(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let code = dispatch_to(std::iter::once("ouhjb").chain(args.iter().copied()), &mut out);
    (code, String::from_utf8(out).unwrap())
}

#[test]
fn cli_check_exit_codes() {
    let (code, out) = run_cli(&["check", "--fixture", "ou-cos", "--samples", "200"]);
    assert_eq!(code, EXIT_OK);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let h2 = v["checks"].as_array().unwrap().iter().find(|c| c["assumption"] == "H2").unwrap();
    assert_eq!(h2["holds"], true);
    // waived for the separated Lipschitz fixture
    assert_eq!(run_cli(&["check", "--fixture", "separated-lip", "--samples", "200"]).0, EXIT_OK);
    assert_eq!(run_cli(&["bogus"]).0, EXIT_CONFIG);
    assert_eq!(run_cli(&["cell", "--fixture", "nope"]).0, EXIT_CONFIG);
}

#[test]
fn cli_cell_and_rate_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let (code, json) = run_cli(&["cell", "--fixture", "ou-cos", "--x", "0", "--fast-nodes", "801", "--out", out]);
    assert_eq!(code, EXIT_OK);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert!((v["lambda"].as_f64().unwrap() - lambda_star()).abs() < 5e-3);
    assert!(dir.path().join("cell.csv").exists() && dir.path().join("cell.json").exists());

    let (code, json) = run_cli(&[
        "rate", "--fixture", "separated-c2", "--eps", "2e-1:2^-1:7", "--slow-nodes", "41", "--fast-nodes", "61", "--out", out,
    ]);
    assert_eq!(code, EXIT_OK);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["theorem_tag"], TheoremTag::Smooth.label());
    let csv = std::fs::read_to_string(dir.path().join("rate.csv")).unwrap();
    assert_eq!(csv.lines().count(), 8);
}

#[test]
fn cli_non_convergence_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[problem]\nfixture = \"separated-c2\"\n[grid]\nslow_nodes = 32\nfast_nodes = 41\n[rate]\ntol = 1e-12\nmax_iter = 2\n",
    )
    .unwrap();
    let out = dir.path().join("o");
    let (code, _) = run_cli(&["solve", "--config", cfg.to_str().unwrap(), "--eps", "0.1", "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_NONCONVERGENCE);
}

#[test]
fn cli_dump_config_reloads() {
    let (code, toml) = run_cli(&["rate", "--fixture", "holder-beta", "--eps", "0.1,0.05,0.025", "--dump-config"]);
    assert_eq!(code, EXIT_OK);
    let c = RunConfig::from_toml_str(&toml).unwrap();
    assert_eq!(c.rate.eps, vec![0.1, 0.05, 0.025]);
    assert_eq!(c.problem.fixture.as_deref(), Some("holder-beta"));
    assert_eq!(c.to_toml_string().unwrap(), toml);
}
