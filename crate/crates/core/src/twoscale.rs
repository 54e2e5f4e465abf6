//! The singularly perturbed problem
//! `u + H(x, D_x u, D_xx u) + (1/eps) L(y, D_y u, D_yy u) + f(x, y) = 0`
//! on a product grid.
//!
//! Each sweep visits the slow nodes in turn (alternating direction) and
//! solves the whole fast line at that node implicitly, with the control
//! choice settled by policy iteration on the line. Values on the other lines
//! are frozen at their latest iterate. Because the zeroth-order coefficient
//! is one and the scheme is monotone, the sup-norm of the residual bounds the
//! distance to the discrete solution.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::effective::SolveOptions;
use crate::grid::{assemble_discrete_l, AxisRole, BoundaryMode, DiscreteField, DiscreteHamiltonian, GridSpec};
use crate::problem::ProblemInstance;
use crate::sparse::{solve_tridiagonal, SparseOperator};
use crate::{Error, Result};

/// Policy-iteration cap per line visit. Hitting it is harmless: the line is
/// revisited on the next sweep.
const HOWARD_CAP: usize = 50;

#[derive(Clone, Debug)]
pub struct TwoScaleSolution {
    pub epsilon: f64,
    pub u: DiscreteField,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Serialize)]
struct Summary {
    epsilon: f64,
    residual: f64,
    iters: usize,
    sup_norm: f64,
}

impl TwoScaleSolution {
    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&Summary {
            epsilon: self.epsilon,
            residual: self.residual,
            iters: self.iterations,
            sup_norm: self.u.sup_norm(),
        })?)
    }

    /// Writes `<stem>.csv` and `<stem>.json`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.u.write_csv_file(&dir.join(format!("{stem}.csv")))?;
        std::fs::write(dir.join(format!("{stem}.json")), self.summary_json()?)?;
        Ok(())
    }

    /// Values on the fast line of slow node `i`.
    pub fn line(&self, i: usize) -> &[f64] {
        let ny = self.u.values.len() / self.u.grid.restrict(AxisRole::Slow).map(|g| g.len()).unwrap_or(1);
        &self.u.values[i * ny..(i + 1) * ny]
    }
}

/// How the fast truncation radius depends on `eps`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RadiusGrowth {
    #[default]
    Fixed,
    /// `R(eps) = R0 * max(1, sqrt(|log eps| / log 8))`, at fixed spacing.
    SqrtLog,
}

/// Fast grid to use at `eps` under the given growth mode.
pub fn fast_grid_for(base: &GridSpec, eps: f64, mode: RadiusGrowth) -> Result<GridSpec> {
    match mode {
        RadiusGrowth::Fixed => Ok(base.clone()),
        RadiusGrowth::SqrtLog => {
            let scale = (eps.ln().abs() / 8f64.ln()).sqrt().max(1.0);
            let axes = base
                .axes
                .iter()
                .map(|a| {
                    let h = a.spacing();
                    let half = ((a.radius * scale / h).ceil() as usize).max((a.nodes - 1) / 2);
                    crate::grid::Axis {
                        radius: h * half as f64,
                        nodes: 2 * half + 1,
                        ..*a
                    }
                })
                .collect();
            GridSpec::new(axes)
        }
    }
}

enum LineSystem {
    /// `(lower, main, upper)` of the fast operator.
    Tri(Vec<f64>, Vec<f64>, Vec<f64>),
    General(SparseOperator),
}

struct Problem<'a> {
    eps: f64,
    ny: usize,
    ham: DiscreteHamiltonian,
    fast: &'a SparseOperator,
    system: LineSystem,
    f: Vec<f64>,
}

impl Problem<'_> {
    /// `(1/eps) (A v)_j`
    fn fast_apply(&self, v: &[f64], j: usize) -> f64 {
        self.fast.apply_row(j, v) / self.eps
    }

    /// Sup-norm of the full discrete residual.
    fn residual(&self, u: &[f64]) -> f64 {
        let ny = self.ny;
        let mut r: f64 = 0.0;
        for (i, groups) in self.ham.nodes.iter().enumerate() {
            let line = &u[i * ny..(i + 1) * ny];
            for j in 0..ny {
                let k = i * ny + j;
                let h = groups[0]
                    .branches
                    .iter()
                    .map(|b| b.diag * u[k] - b.pull_strided(u, ny, j))
                    .fold(f64::INFINITY, f64::min);
                r = r.max((u[k] + h + self.fast_apply(line, j) + self.f[k]).abs());
            }
        }
        r
    }

    /// Solves the fast line at slow node `i` with the other lines frozen.
    fn solve_line(&self, i: usize, u: &mut [f64], policy: &mut [u8], ws: &mut Workspace) -> Result<()> {
        let ny = self.ny;
        let branches = &self.ham.nodes[i][0].branches;
        ws.pulls.clear();
        for b in branches {
            ws.pulls.extend((0..ny).map(|j| b.pull_strided(u, ny, j)));
        }
        let pol = &mut policy[i * ny..(i + 1) * ny];
        for _ in 0..HOWARD_CAP {
            for j in 0..ny {
                let b = pol[j] as usize;
                ws.shift[j] = 1.0 + branches[b].diag;
                ws.rhs[j] = ws.pulls[b * ny + j] - self.f[i * ny + j];
            }
            match &self.system {
                LineSystem::Tri(lo, main, up) => {
                    for j in 0..ny {
                        ws.main[j] = ws.shift[j] + main[j] / self.eps;
                        ws.lo[j] = lo[j] / self.eps;
                        ws.up[j] = up[j] / self.eps;
                    }
                    solve_tridiagonal(&ws.lo, &ws.main, &ws.up, &mut ws.rhs, &mut ws.scratch);
                }
                LineSystem::General(a) => {
                    let lu = a.to_banded(&ws.shift).factor()?;
                    lu.solve_in_place(&mut ws.rhs);
                }
            }
            let mut changed = false;
            for j in 0..ny {
                let v = ws.rhs[j];
                let cur = pol[j] as usize;
                let mut best = branches[cur].diag * v - ws.pulls[cur * ny + j];
                for (b, br) in branches.iter().enumerate() {
                    let val = br.diag * v - ws.pulls[b * ny + j];
                    // strict improvement only, so ties cannot cycle
                    if val < best - 1e-14 * (1.0 + best.abs()) {
                        best = val;
                        pol[j] = b as u8;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        u[i * ny..(i + 1) * ny].copy_from_slice(&ws.rhs);
        Ok(())
    }
}

#[derive(Default)]
struct Workspace {
    pulls: Vec<f64>,
    shift: Vec<f64>,
    rhs: Vec<f64>,
    lo: Vec<f64>,
    main: Vec<f64>,
    up: Vec<f64>,
    scratch: Vec<f64>,
}

fn check_product(instance: &ProblemInstance, grid: &GridSpec) -> Result<(GridSpec, GridSpec)> {
    let n = grid.role_count(AxisRole::Slow);
    let m = grid.role_count(AxisRole::Fast);
    if n != instance.slow_dim() || m != instance.fast_dim() {
        return Err(Error::config(format!(
            "grid: product grid has {n} slow and {m} fast axes, instance needs {} and {}",
            instance.slow_dim(),
            instance.fast_dim()
        )));
    }
    if grid.axes[..n].iter().any(|a| a.role != AxisRole::Slow) {
        return Err(Error::config("grid: slow axes must come first in a product grid"));
    }
    if let Some(k) = grid.axes[..n].iter().position(|a| a.boundary != BoundaryMode::Periodic) {
        return Err(Error::config(format!("grid.axes[{k}]: slow axes must be periodic")));
    }
    Ok((grid.restrict(AxisRole::Slow)?, grid.restrict(AxisRole::Fast)?))
}

/// Solves the two-scale problem from a zero initial guess.
pub fn solve_two_scale(instance: &ProblemInstance, eps: f64, grid: &GridSpec, opts: &SolveOptions) -> Result<TwoScaleSolution> {
    solve_two_scale_from(instance, eps, grid, opts, None)
}

/// Same as [`solve_two_scale`] starting from `initial` (product-grid values).
pub fn solve_two_scale_from(
    instance: &ProblemInstance,
    eps: f64,
    grid: &GridSpec,
    opts: &SolveOptions,
    initial: Option<&[f64]>,
) -> Result<TwoScaleSolution> {
    instance.validate()?;
    opts.validate()?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::config("epsilon must be positive"));
    }
    let (slow, fast) = check_product(instance, grid)?;
    let a = assemble_discrete_l(&instance.fast, &fast)?;
    let ny = fast.len();
    let system = if fast.dim() == 1 {
        let (mut lo, mut main, mut up) = (vec![0.0; ny], vec![0.0; ny], vec![0.0; ny]);
        for j in 0..ny {
            for (c, v) in a.row(j) {
                match c as isize - j as isize {
                    -1 => lo[j] += v,
                    0 => main[j] += v,
                    1 => up[j] += v,
                    _ => return Err(Error::Internal("1D fast operator is not tridiagonal".into())),
                }
            }
        }
        LineSystem::Tri(lo, main, up)
    } else {
        LineSystem::General(a.clone())
    };
    let ham = DiscreteHamiltonian::plain(&instance.hamiltonian, &slow)?;
    let mut f = Vec::with_capacity(grid.len());
    for i in 0..slow.len() {
        let x = slow.point(i);
        for j in 0..ny {
            let y = fast.point(j);
            let v = instance.source.eval(&x, &y);
            if !v.is_finite() {
                return Err(Error::Evaluation {
                    what: "f".into(),
                    point: [x.as_slice(), y.as_slice()].concat(),
                });
            }
            f.push(v);
        }
    }
    let prob = Problem {
        eps,
        ny,
        ham,
        fast: &a,
        system,
        f,
    };

    let mut u = match initial {
        Some(v) if v.len() == grid.len() => v.to_vec(),
        Some(v) => {
            return Err(Error::Dimension {
                what: "initial guess",
                expected: grid.len(),
                got: v.len(),
            })
        }
        None => vec![0.0; grid.len()],
    };
    let mut policy = vec![0u8; grid.len()];
    let mut ws = Workspace {
        shift: vec![0.0; ny],
        rhs: vec![0.0; ny],
        lo: vec![0.0; ny],
        main: vec![0.0; ny],
        up: vec![0.0; ny],
        ..Workspace::default()
    };
    let nx = slow.len();
    let mut history = Vec::new();
    let mut r = prob.residual(&u);
    for it in 1..=opts.max_iter {
        if it % 2 == 1 {
            for i in 0..nx {
                prob.solve_line(i, &mut u, &mut policy, &mut ws)?;
            }
        } else {
            for i in (0..nx).rev() {
                prob.solve_line(i, &mut u, &mut policy, &mut ws)?;
            }
        }
        r = prob.residual(&u);
        if !r.is_finite() {
            break;
        }
        if r <= opts.tol {
            return Ok(TwoScaleSolution {
                epsilon: eps,
                u: DiscreteField::new(grid.clone(), u)?,
                iterations: it,
                residual: r,
            });
        }
        if it % 50 == 0 {
            history.push(r);
        }
    }
    Err(Error::NonConvergence {
        solver: "two-scale",
        iterations: opts.max_iter,
        residual: r,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{fixture, ControlHamiltonian, Func, SeparatedTerm};

    fn grid(nx: usize, ny: usize, r: f64) -> GridSpec {
        GridSpec::product(
            &GridSpec::slow_periodic_1d(nx).unwrap(),
            &GridSpec::fast_1d(r, ny).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_hamiltonian_cos_source() {
        let mut p = fixture("ou-cos").unwrap();
        p.hamiltonian = ControlHamiltonian::zero(1);
        let g = grid(4, 201, 8.0);
        let o = SolveOptions::default();
        let s = solve_two_scale(&p, 1e-3, &g, &o).unwrap();
        assert!(s.residual <= o.tol);
        // near y = 0 the solution is close to -lambda
        let j0 = 100;
        assert!((s.line(0)[j0] + (-0.5f64).exp()).abs() < 1.5e-2, "{}", s.line(0)[j0]);
    }

    #[test]
    fn bounded_by_source() {
        let p = fixture("separated-c2").unwrap();
        let g = grid(32, 81, 8.0);
        for eps in [0.5, 0.05] {
            let s = solve_two_scale(&p, eps, &g, &SolveOptions::default()).unwrap();
            // H(x, 0, 0) = 0, so the sup norm cannot exceed that of f
            assert!(s.u.sup_norm() <= p.source.c1 + 1e-8);
        }
    }

    #[test]
    fn comparison_in_source() {
        let p = fixture("separated-c2").unwrap();
        let bumped = p.with_source(
            "bumped",
            crate::problem::SourceTerm {
                terms: [
                    p.source.terms.clone(),
                    vec![SeparatedTerm {
                        h: Func::constant(0.1),
                        g: Func::Sum {
                            terms: vec![
                                Func::constant(1.0),
                                Func::Tanh {
                                    axis: 0,
                                    amp: 1.0,
                                    scale: 1.0,
                                },
                            ],
                        },
                    }],
                ]
                .concat(),
                ..p.source.clone()
            },
        );
        let g = grid(24, 61, 6.0);
        let o = SolveOptions::default();
        let a = solve_two_scale(&p, 0.1, &g, &o).unwrap();
        let b = solve_two_scale(&bumped, 0.1, &g, &o).unwrap();
        for k in 0..g.len() {
            assert!(b.u.values[k] <= a.u.values[k] + 2.0 * o.tol);
        }
    }

    #[test]
    fn warm_start_and_cap() {
        let p = fixture("separated-c2").unwrap();
        let g = grid(24, 61, 6.0);
        let o = SolveOptions::default();
        let cold = solve_two_scale(&p, 0.1, &g, &o).unwrap();
        let warm = solve_two_scale_from(&p, 0.1, &g, &o, Some(&cold.u.values)).unwrap();
        assert!(warm.iterations <= 2);
        let e = solve_two_scale(&p, 0.1, &g, &SolveOptions { tol: 1e-12, max_iter: 2 }).unwrap_err();
        match e {
            Error::NonConvergence { iterations, .. } => assert_eq!(iterations, 2),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn rejects_bad_grids() {
        let p = fixture("ou-cos").unwrap();
        let fast = GridSpec::fast_1d(8.0, 21).unwrap();
        assert!(solve_two_scale(&p, 0.1, &fast, &SolveOptions::default()).is_err());
        assert!(solve_two_scale(&p, 0.0, &grid(8, 21, 8.0), &SolveOptions::default()).is_err());
    }

    #[test]
    fn radius_growth() {
        let base = GridSpec::fast_1d(8.0, 161).unwrap();
        let same = fast_grid_for(&base, 2f64.powi(-3), RadiusGrowth::SqrtLog).unwrap();
        assert_eq!(same, base);
        let big = fast_grid_for(&base, 2f64.powi(-12), RadiusGrowth::SqrtLog).unwrap();
        assert!(big.axes[0].radius > 8.0);
        assert!((big.axes[0].spacing() - base.axes[0].spacing()).abs() < 1e-12);
        assert_eq!(fast_grid_for(&base, 1e-6, RadiusGrowth::Fixed).unwrap(), base);
    }
}
