//! Ergodic cell problem by vanishing discount.
//!
//! The discounted problem is solved in the form `delta u + L u + f(x, .) = 0`,
//! so that `lambda = -lim delta u(0)` and `w = lim (u - u(0))` satisfy the cell
//! problem `L w + f(x, .) = lambda` with `w(0) = 0`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::grid::{assemble_discrete_l, DiscreteField, GridSpec};
use crate::problem::ProblemInstance;
use crate::sparse::{BandLu, SparseOperator};
use crate::{Error, Result};

/// Relative residual demanded of every discounted solve.
pub const DISCOUNT_RESIDUAL_TOL: f64 = 1e-10;

/// Strictly decreasing list of discount factors ending at the floor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaSchedule {
    pub deltas: Vec<f64>,
    /// Tolerance on the last two continuation values, relative to `1 + |lambda|`.
    #[serde(default = "default_cauchy_tol")]
    pub cauchy_tol: f64,
}

fn default_cauchy_tol() -> f64 {
    1e-4
}

impl DeltaSchedule {
    /// `start, start*factor, ...` while above `floor`, then `floor`.
    pub fn geometric(start: f64, factor: f64, floor: f64) -> Result<Self> {
        if !(start > 0.0 && floor > 0.0 && factor > 0.0 && factor < 1.0 && floor <= start) {
            return Err(Error::config("discount: need 0 < floor <= start and factor in (0, 1)"));
        }
        let mut deltas = vec![];
        let mut d = start;
        while d > floor * (1.0 + 1e-12) {
            deltas.push(d);
            d *= factor;
        }
        deltas.push(floor);
        let s = DeltaSchedule {
            deltas,
            cauchy_tol: default_cauchy_tol(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.deltas.len() < 2 {
            return Err(Error::config("discount.deltas: at least two values required"));
        }
        if self.deltas.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::config("discount.deltas must be positive"));
        }
        if self.deltas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::config("discount.deltas must be strictly decreasing"));
        }
        if !(self.cauchy_tol > 0.0) {
            return Err(Error::config("discount.cauchy_tol must be positive"));
        }
        Ok(())
    }

    pub fn floor(&self) -> f64 {
        *self.deltas.last().expect("validated schedule is nonempty")
    }
}

impl Default for DeltaSchedule {
    fn default() -> Self {
        DeltaSchedule::geometric(1e-1, 0.5, 1e-4).expect("default schedule is valid")
    }
}

/// Solution of `delta u + A u + f = 0`, stored as `u = v - shift / delta` so
/// that the O(1/delta) constant part never swamps the O(1) profile.
#[derive(Clone, Debug)]
pub struct DiscountedSolution {
    pub delta: f64,
    pub shift: f64,
    pub v: DiscreteField,
    /// `||(delta I + A) u + f||_inf`
    pub residual: f64,
}

impl DiscountedSolution {
    pub fn value(&self, k: usize) -> f64 {
        self.v.values[k] - self.shift / self.delta
    }

    /// `u_delta` as a plain field.
    pub fn field(&self) -> DiscreteField {
        let values = (0..self.v.values.len()).map(|k| self.value(k)).collect();
        DiscreteField {
            grid: self.v.grid.clone(),
            values,
        }
    }

    /// `delta * u_delta` at node `k`.
    pub fn scaled(&self, k: usize) -> f64 {
        self.delta * self.v.values[k] - self.shift
    }

    /// `u_delta - u_delta(node)`
    pub fn recentred(&self, node: usize) -> DiscreteField {
        let c = self.v.values[node];
        DiscreteField {
            grid: self.v.grid.clone(),
            values: self.v.values.iter().map(|v| v - c).collect(),
        }
    }
}

/// Assembled fast operator with cached factorisations, reusable across slow points.
pub struct CellSolver {
    grid: GridSpec,
    op: SparseOperator,
    schedule: DeltaSchedule,
    factors: Vec<BandLu>,
    origin: usize,
}

impl CellSolver {
    pub fn new(instance: &ProblemInstance, grid: &GridSpec, schedule: &DeltaSchedule) -> Result<Self> {
        instance.validate()?;
        schedule.validate()?;
        let op = assemble_discrete_l(&instance.fast, grid)?;
        if !op.has_m_matrix_pattern() {
            return Err(Error::Internal("assembled fast operator lost its M-matrix pattern".into()));
        }
        let factors = schedule
            .deltas
            .iter()
            .map(|&d| op.to_banded(&vec![d; op.dim()]).factor())
            .collect::<Result<Vec<_>>>()?;
        let origin = grid.nearest_node(&vec![0.0; grid.dim()]);
        Ok(CellSolver {
            grid: grid.clone(),
            op,
            schedule: schedule.clone(),
            factors,
            origin,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn operator(&self) -> &SparseOperator {
        &self.op
    }

    pub fn schedule(&self) -> &DeltaSchedule {
        &self.schedule
    }

    /// Node used for the normalisation `w(0) = 0`.
    pub fn origin(&self) -> usize {
        self.origin
    }

    /// `f(x, .)` sampled on the fast grid.
    pub fn source(&self, instance: &ProblemInstance, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != instance.slow_dim() {
            return Err(Error::Dimension {
                what: "slow point",
                expected: instance.slow_dim(),
                got: x.len(),
            });
        }
        (0..self.grid.len())
            .map(|k| {
                let y = self.grid.point(k);
                let v = instance.source.eval(x, &y);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Evaluation {
                        what: "f".into(),
                        point: [x, y.as_slice()].concat(),
                    })
                }
            })
            .collect()
    }

    fn discounted_with(&self, lu: &BandLu, delta: f64, f: &[f64]) -> Result<DiscountedSolution> {
        let fnorm = f.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let tol = DISCOUNT_RESIDUAL_TOL * fnorm.max(f64::MIN_POSITIVE);
        // first pass fixes the constant part, second pass the profile
        let mut rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        lu.solve_in_place(&mut rhs);
        let shift = -delta * rhs[self.origin];
        let mut v: Vec<f64> = f.iter().map(|fk| shift - fk).collect();
        lu.solve_in_place(&mut v);
        // residual of (delta I + A)(v - shift/delta) + f, using A 1 = 0
        let resid = |v: &[f64]| -> Vec<f64> {
            (0..v.len())
                .map(|k| delta * v[k] + self.op.apply_row(k, v) - shift + f[k])
                .collect()
        };
        let mut r = resid(&v);
        let mut rnorm = r.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        for _ in 0..3 {
            if rnorm <= tol {
                break;
            }
            for x in r.iter_mut() {
                *x = -*x;
            }
            lu.solve_in_place(&mut r);
            for (vk, dk) in v.iter_mut().zip(&r) {
                *vk += dk;
            }
            r = resid(&v);
            rnorm = r.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        }
        if !(rnorm <= tol) {
            return Err(Error::Internal(format!(
                "discounted solve residual {rnorm:e} exceeds {tol:e} at delta {delta:e}"
            )));
        }
        Ok(DiscountedSolution {
            delta,
            shift,
            v: DiscreteField::new(self.grid.clone(), v)?,
            residual: rnorm,
        })
    }

    /// Discounted solve at an arbitrary `delta` (factorises on the fly unless
    /// `delta` is on the schedule).
    pub fn discounted(&self, f: &[f64], delta: f64) -> Result<DiscountedSolution> {
        if !(delta > 0.0) {
            return Err(Error::config("discount: delta must be positive"));
        }
        if let Some(k) = self.schedule.deltas.iter().position(|&d| d == delta) {
            return self.discounted_with(&self.factors[k], delta, f);
        }
        let lu = self.op.to_banded(&vec![delta; self.op.dim()]).factor()?;
        self.discounted_with(&lu, delta, f)
    }

    /// Vanishing-discount continuation along the schedule.
    pub fn solve(&self, x: &[f64], f: &[f64]) -> Result<CellSolution> {
        let mut trace = Vec::with_capacity(self.schedule.deltas.len());
        let mut last = None;
        for (k, &delta) in self.schedule.deltas.iter().enumerate() {
            let sol = self.discounted_with(&self.factors[k], delta, f)?;
            trace.push(ContinuationStep {
                delta,
                delta_u0: sol.scaled(self.origin),
                residual: sol.residual,
            });
            last = Some(sol);
        }
        let sol = last.expect("schedule is nonempty");
        let n = trace.len();
        let lambda = -trace[n - 1].delta_u0;
        let prev = -trace[n - 2].delta_u0;
        if (lambda - prev).abs() > self.schedule.cauchy_tol * (1.0 + lambda.abs()) {
            return Err(Error::NonConvergence {
                solver: "vanishing discount",
                iterations: n,
                residual: (lambda - prev).abs(),
                history: trace.iter().map(|s| -s.delta_u0).collect(),
            });
        }
        let w = sol.recentred(self.origin);
        // keep the orientation for which L w + f - lambda is smallest
        let plus = self.cell_residual(&w.values, f, lambda);
        let flipped: Vec<f64> = w.values.iter().map(|v| -v).collect();
        let minus = self.cell_residual(&flipped, f, lambda);
        let (w, residual) = if minus < plus {
            (DiscreteField::new(self.grid.clone(), flipped)?, minus)
        } else {
            (w, plus)
        };
        let c5_fit = growth_constant(&w);
        Ok(CellSolution {
            x: x.to_vec(),
            w,
            lambda,
            delta_floor: self.schedule.floor(),
            trace,
            residual,
            c5_fit,
        })
    }

    /// `||A w + f - lambda||_inf`
    pub fn cell_residual(&self, w: &[f64], f: &[f64], lambda: f64) -> f64 {
        (0..w.len())
            .map(|k| (self.op.apply_row(k, w) + f[k] - lambda).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuationStep {
    pub delta: f64,
    /// `delta * u_delta(0)`
    pub delta_u0: f64,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct CellSolution {
    pub x: Vec<f64>,
    /// Corrector, zero at the node nearest the origin.
    pub w: DiscreteField,
    pub lambda: f64,
    pub delta_floor: f64,
    pub trace: Vec<ContinuationStep>,
    /// `||A w + f - lambda||_inf`
    pub residual: f64,
    /// `max |w(y)| / (1 + log(1 + |y|^2))`
    pub c5_fit: f64,
}

#[derive(Serialize, Deserialize)]
struct CellSidecar {
    x: Vec<f64>,
    lambda: f64,
    delta_floor: f64,
    residual: f64,
    #[serde(rename = "C5_fit")]
    c5_fit: f64,
}

impl CellSolution {
    pub fn sidecar_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&CellSidecar {
            x: self.x.clone(),
            lambda: self.lambda,
            delta_floor: self.delta_floor,
            residual: self.residual,
            c5_fit: self.c5_fit,
        })?)
    }

    /// Writes `<stem>.csv` (the corrector) and `<stem>.json` (the sidecar).
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.w.write_csv_file(&dir.join(format!("{stem}.csv")))?;
        std::fs::write(dir.join(format!("{stem}.json")), self.sidecar_json()?)?;
        Ok(())
    }
}

/// `max |w(y)| / (1 + log(1 + |y|^2))`
pub fn growth_constant(w: &DiscreteField) -> f64 {
    (0..w.values.len())
        .map(|k| {
            let y = w.grid.point(k);
            let r2: f64 = y.iter().map(|v| v * v).sum();
            w.values[k].abs() / (1.0 + (1.0 + r2).ln())
        })
        .fold(0.0, f64::max)
}

/// Solves `delta u + L u + f(x, .) = 0` on the fast grid.
pub fn solve_discounted(
    instance: &ProblemInstance,
    x: &[f64],
    delta: f64,
    grid: &GridSpec,
) -> Result<DiscountedSolution> {
    if !(delta > 0.0) {
        return Err(Error::config("discount: delta must be positive"));
    }
    let schedule = DeltaSchedule {
        deltas: vec![2.0 * delta, delta],
        cauchy_tol: default_cauchy_tol(),
    };
    let solver = CellSolver::new(instance, grid, &schedule)?;
    let f = solver.source(instance, x)?;
    solver.discounted(&f, delta)
}

/// Corrector and ergodic constant at the slow point `x`.
pub fn solve_cell(
    instance: &ProblemInstance,
    x: &[f64],
    grid: &GridSpec,
    schedule: &DeltaSchedule,
) -> Result<CellSolution> {
    let solver = CellSolver::new(instance, grid, schedule)?;
    let f = solver.source(instance, x)?;
    solver.solve(x, &f)
}

/// `W = w(.; x1) - w(.; x2)` and the fitted constant
/// `C6 = max |W(y)| / (|x1 - x2|^beta (1 + log(1 + |y|^2)))`.
pub fn continuous_dependence_profile(
    instance: &ProblemInstance,
    x1: &[f64],
    x2: &[f64],
    grid: &GridSpec,
    schedule: &DeltaSchedule,
) -> Result<(DiscreteField, f64)> {
    let dx = x1
        .iter()
        .zip(x2)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if dx == 0.0 {
        return Err(Error::FitDegenerate("continuous dependence needs x1 != x2".into()));
    }
    let solver = CellSolver::new(instance, grid, schedule)?;
    let w1 = solver.solve(x1, &solver.source(instance, x1)?)?;
    let w2 = solver.solve(x2, &solver.source(instance, x2)?)?;
    let values: Vec<f64> = w1.w.values.iter().zip(&w2.w.values).map(|(a, b)| a - b).collect();
    let big_w = DiscreteField::new(grid.clone(), values)?;
    let c6 = growth_constant(&big_w) / dx.powf(instance.source.beta);
    Ok((big_w, c6))
}
