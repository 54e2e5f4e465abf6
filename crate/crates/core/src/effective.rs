//! Ergodic constant as a slow field, shaken Hamiltonians, and the effective
//! problem `u + H(x, Du, D^2u) + lambda(x) = 0`.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cell::{CellSolver, DeltaSchedule};
use crate::ergodic_mc::{lambda_mc, McConfig};
use crate::grid::{AxisRole, DiscreteField, DiscreteHamiltonian, GridSpec, Outer};
use crate::problem::{ControlHamiltonian, ProblemInstance, SeparatedTerm};
use crate::{Error, Result};

/// Stopping rule shared by the fixed-point solvers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Target for the sup-norm of the discrete residual.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-8,
            max_iter: 100_000,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::config("solver.tol must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::config("solver.max_iter must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaMethod {
    Discount,
    MonteCarlo,
    Separated,
}

impl LambdaMethod {
    pub fn label(self) -> &'static str {
        match self {
            LambdaMethod::Discount => "discount",
            LambdaMethod::MonteCarlo => "monte-carlo",
            LambdaMethod::Separated => "separated",
        }
    }
}

impl std::str::FromStr for LambdaMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "discount" => Ok(LambdaMethod::Discount),
            "monte-carlo" => Ok(LambdaMethod::MonteCarlo),
            "separated" => Ok(LambdaMethod::Separated),
            _ => Err(Error::config(format!(
                "lambda method '{s}' (expected discount, monte-carlo or separated)"
            ))),
        }
    }
}

/// Fast-variable settings used to compute the ergodic constant.
#[derive(Clone, Debug)]
pub struct CellSettings {
    pub fast_grid: GridSpec,
    pub schedule: DeltaSchedule,
    pub mc: McConfig,
}

impl CellSettings {
    pub fn new(fast_grid: GridSpec) -> Self {
        CellSettings {
            fast_grid,
            schedule: DeltaSchedule::default(),
            mc: McConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LambdaField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    /// Monte Carlo standard errors; zero for deterministic methods.
    pub stderr: Vec<f64>,
    pub method: Vec<LambdaMethod>,
}

impl LambdaField {
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Nearest-node lookup.
    pub fn at(&self, x: &[f64]) -> f64 {
        self.values[self.grid.nearest_node(x)]
    }

    /// Columns `x-index, x, lambda, method` (one coordinate column per slow axis).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["x-index".to_string()];
        header.extend(self.grid.axis_names());
        header.extend(["lambda".to_string(), "method".to_string()]);
        wtr.write_record(&header)?;
        for (k, v) in self.values.iter().enumerate() {
            let mut rec = vec![k.to_string()];
            rec.extend(self.grid.point(k).iter().map(|c| format!("{c:.17e}")));
            rec.push(format!("{v:.17e}"));
            rec.push(self.method[k].label().to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// `lambda(x)` at every node of the slow grid.
pub fn build_lambda_field(
    instance: &ProblemInstance,
    slow_grid: &GridSpec,
    method: LambdaMethod,
    settings: &CellSettings,
) -> Result<LambdaField> {
    instance.validate()?;
    if slow_grid.axes.iter().any(|a| a.role != AxisRole::Slow) || slow_grid.dim() != instance.slow_dim() {
        return Err(Error::config("grid: lambda field needs the slow grid of the instance"));
    }
    let n = slow_grid.len();
    let (values, stderr) = match method {
        LambdaMethod::Discount => {
            let solver = CellSolver::new(instance, &settings.fast_grid, &settings.schedule)?;
            let mut vals = Vec::with_capacity(n);
            for k in 0..n {
                let x = slow_grid.point(k);
                vals.push(solver.solve(&x, &solver.source(instance, &x)?)?.lambda);
            }
            (vals, vec![0.0; n])
        }
        LambdaMethod::MonteCarlo => {
            let mut vals = Vec::with_capacity(n);
            let mut errs = Vec::with_capacity(n);
            for k in 0..n {
                let e = lambda_mc(instance, &slow_grid.point(k), &settings.mc)?;
                vals.push(e.value);
                errs.push(e.stderr);
            }
            (vals, errs)
        }
        LambdaMethod::Separated => {
            let lambda1 = separated_average(instance, settings)?;
            let h = &instance.source.separated().expect("checked above").h;
            ((0..n).map(|k| h.eval(&slow_grid.point(k)) * lambda1).collect(), vec![0.0; n])
        }
    };
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Evaluation {
            what: "lambda".into(),
            point: slow_grid.point(k),
        });
    }
    Ok(LambdaField {
        grid: slow_grid.clone(),
        values,
        stderr,
        method: vec![method; n],
    })
}

/// Average of `g` for a separated source `h(x) g(y)`.
pub fn separated_average(instance: &ProblemInstance, settings: &CellSettings) -> Result<f64> {
    let term = instance.source.separated().ok_or_else(|| {
        Error::config("lambda method 'separated' needs a source with a single product term h(x) g(y)")
    })?;
    let unit = instance.with_source(
        &format!("{}-g", instance.name),
        crate::problem::SourceTerm {
            terms: vec![SeparatedTerm {
                h: crate::problem::Func::constant(1.0),
                g: term.g.clone(),
            }],
            ..instance.source.clone()
        },
    );
    let x0 = vec![0.0; instance.slow_dim()];
    if term.g.is_constant() {
        return Ok(term.g.eval(&vec![0.0; instance.fast_dim()]));
    }
    let solver = CellSolver::new(&unit, &settings.fast_grid, &settings.schedule)?;
    Ok(solver.solve(&x0, &solver.source(&unit, &x0)?)?.lambda)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShakeMode {
    /// Minimum over the ball.
    Lower,
    /// Maximum over the ball.
    Upper,
}

impl ShakeMode {
    pub fn outer(self) -> Outer {
        match self {
            ShakeMode::Lower => Outer::Min,
            ShakeMode::Upper => Outer::Max,
        }
    }
}

/// Pointwise evaluator of `min` (or `max`) over slow-grid nodes `xi` within
/// `rho` of `x` of `H(xi, p, X) + lambda(xi)`. The point `x` itself is always
/// included, with `lambda(x)` read from the nearest node.
pub struct ShakenHamiltonian<'a> {
    pub ham: &'a ControlHamiltonian,
    pub lambda: &'a LambdaField,
    pub rho: f64,
    pub mode: ShakeMode,
}

impl<'a> ShakenHamiltonian<'a> {
    pub fn new(ham: &'a ControlHamiltonian, lambda: &'a LambdaField, rho: f64, mode: ShakeMode) -> Result<Self> {
        if !(rho >= 0.0) {
            return Err(Error::config("shaken hamiltonian: rho must be nonnegative"));
        }
        Ok(ShakenHamiltonian { ham, lambda, rho, mode })
    }

    pub fn eval(&self, x: &[f64], p: &[f64], hess: &DMatrix<f64>) -> Result<f64> {
        let grid = &self.lambda.grid;
        let mut best = self.ham.eval_h(x, p, hess)? + self.lambda.at(x);
        for k in 0..grid.len() {
            let xi = grid.point(k);
            if grid.distance(x, &xi) <= self.rho * (1.0 + 1e-12) {
                let v = self.ham.eval_h(&xi, p, hess)? + self.lambda.values[k];
                best = match self.mode {
                    ShakeMode::Lower => best.min(v),
                    ShakeMode::Upper => best.max(v),
                };
            }
        }
        Ok(best)
    }
}

#[derive(Clone, Debug)]
pub struct EffectiveSolution {
    pub u: DiscreteField,
    pub iterations: usize,
    pub residual: f64,
}

/// Sup-norm of `u_i + H_i(u)` over the slow grid.
pub fn effective_residual(ham: &DiscreteHamiltonian, u: &[f64]) -> f64 {
    (0..ham.len())
        .map(|i| (u[i] + ham.eval(i, u)).abs())
        .fold(0.0, f64::max)
}

/// Solves `u_i + H_i(u) = 0`, where the ergodic constant already sits in the
/// group shifts of `ham`, by Gauss-Seidel sweeps of exact nodal roots.
pub fn solve_effective(ham: &DiscreteHamiltonian, opts: &SolveOptions) -> Result<EffectiveSolution> {
    opts.validate()?;
    let n = ham.len();
    let mut u = vec![0.0; n];
    let mut history = Vec::new();
    for it in 1..=opts.max_iter {
        for i in 0..n {
            u[i] = ham.node_root(i, &u, 0.0);
        }
        let r = effective_residual(ham, &u);
        if r <= opts.tol {
            return Ok(EffectiveSolution {
                u: DiscreteField::new(ham.grid.clone(), u)?,
                iterations: it,
                residual: r,
            });
        }
        if it % 100 == 0 {
            history.push(r);
        }
    }
    Err(Error::NonConvergence {
        solver: "effective",
        iterations: opts.max_iter,
        residual: effective_residual(ham, &u),
        history,
    })
}

/// Effective solution with the plain (`rho = 0`) or shaken Hamiltonian.
pub fn solve_shaken(
    instance: &ProblemInstance,
    lambda: &LambdaField,
    rho: f64,
    mode: ShakeMode,
    opts: &SolveOptions,
) -> Result<EffectiveSolution> {
    let dh = DiscreteHamiltonian::shaken(&instance.hamiltonian, &lambda.grid, &lambda.values, rho, mode.outer())?;
    solve_effective(&dh, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{fixture, Func, SourceTerm};

    fn settings() -> CellSettings {
        CellSettings::new(GridSpec::fast_1d(8.0, 201).unwrap())
    }

    fn constant_source(c: f64) -> ProblemInstance {
        let p = fixture("ou-cos").unwrap();
        let s = SourceTerm {
            terms: vec![SeparatedTerm {
                h: Func::constant(c),
                g: Func::constant(1.0),
            }],
            ..p.source.clone()
        };
        p.with_source("const", s)
    }

    #[test]
    fn constant_source_field() {
        let g = GridSpec::slow_periodic_1d(16).unwrap();
        for m in [LambdaMethod::Discount, LambdaMethod::Separated] {
            let l = build_lambda_field(&constant_source(0.25), &g, m, &settings()).unwrap();
            assert!(l.values.iter().all(|v| (v - 0.25).abs() < 1e-12), "{m:?}");
        }
    }

    #[test]
    fn separated_matches_discount() {
        let p = fixture("separated-c2").unwrap();
        let g = GridSpec::slow_periodic_1d(12).unwrap();
        let a = build_lambda_field(&p, &g, LambdaMethod::Separated, &settings()).unwrap();
        let b = build_lambda_field(&p, &g, LambdaMethod::Discount, &settings()).unwrap();
        for k in 0..g.len() {
            assert!((a.values[k] - b.values[k]).abs() < 1e-10);
            let x = g.point(k)[0];
            assert!((a.values[k] - x.sin() * (-0.5f64).exp()).abs() < 1e-2);
        }
        assert!(build_lambda_field(&fixture("holder-beta").unwrap(), &g, LambdaMethod::Separated, &settings()).is_err());
    }

    #[test]
    fn csv_columns() {
        let g = GridSpec::slow_periodic_1d(4).unwrap();
        let l = build_lambda_field(&constant_source(1.0), &g, LambdaMethod::Separated, &settings()).unwrap();
        let mut buf = Vec::new();
        l.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next().unwrap(), "x-index,x,lambda,method");
        assert_eq!(s.lines().count(), 5);
        assert!(s.lines().nth(1).unwrap().ends_with(",separated"));
    }

    fn linear_lambda(n: usize) -> LambdaField {
        let grid = GridSpec::slow_periodic_1d(n).unwrap();
        LambdaField {
            values: grid.points().iter().map(|p| p[0]).collect(),
            stderr: vec![0.0; n],
            method: vec![LambdaMethod::Discount; n],
            grid,
        }
    }

    #[test]
    fn shaken_minimises_linear_lambda() {
        let ham = ControlHamiltonian::zero(1);
        let lam = linear_lambda(400);
        let h = lam.grid.axes[0].spacing();
        let zero = DMatrix::zeros(1, 1);
        let lo = ShakenHamiltonian::new(&ham, &lam, 0.1, ShakeMode::Lower).unwrap();
        let v = lo.eval(&[0.0], &[0.0], &zero).unwrap();
        assert!((v + 0.1).abs() <= h, "{v}");
        for mode in [ShakeMode::Lower, ShakeMode::Upper] {
            let s = ShakenHamiltonian::new(&ham, &lam, 0.0, mode).unwrap();
            assert_eq!(s.eval(&[0.5], &[0.0], &zero).unwrap(), lam.at(&[0.5]));
        }
    }

    #[test]
    fn effective_without_hamiltonian() {
        let mut p = fixture("ou-cos").unwrap();
        p.hamiltonian = ControlHamiltonian::zero(1);
        let lam = linear_lambda(32);
        let s = solve_shaken(&p, &lam, 0.0, ShakeMode::Lower, &SolveOptions::default()).unwrap();
        for k in 0..32 {
            assert_eq!(s.u.values[k], -lam.values[k]);
        }
    }

    #[test]
    fn sandwich() {
        let p = fixture("separated-c2").unwrap();
        let g = GridSpec::slow_periodic_1d(64).unwrap();
        let lam = build_lambda_field(&p, &g, LambdaMethod::Separated, &settings()).unwrap();
        let o = SolveOptions::default();
        let plain = solve_shaken(&p, &lam, 0.0, ShakeMode::Lower, &o).unwrap();
        assert!(plain.residual <= o.tol);
        let mut gaps = vec![];
        for rho in [0.2, 0.1, 0.05] {
            let lower = solve_shaken(&p, &lam, rho, ShakeMode::Lower, &o).unwrap();
            let upper = solve_shaken(&p, &lam, rho, ShakeMode::Upper, &o).unwrap();
            for k in 0..g.len() {
                assert!(upper.u.values[k] <= plain.u.values[k] + 2.0 * o.tol);
                assert!(plain.u.values[k] <= lower.u.values[k] + 2.0 * o.tol);
            }
            gaps.push(lower.u.sup_distance(&upper.u));
        }
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    }

    #[test]
    fn iteration_cap() {
        let p = fixture("separated-c2").unwrap();
        let g = GridSpec::slow_periodic_1d(64).unwrap();
        let lam = build_lambda_field(&p, &g, LambdaMethod::Separated, &settings()).unwrap();
        let o = SolveOptions { tol: 1e-14, max_iter: 3 };
        let e = solve_shaken(&p, &lam, 0.0, ShakeMode::Lower, &o).unwrap_err();
        assert!(e.is_non_convergence());
    }
}
