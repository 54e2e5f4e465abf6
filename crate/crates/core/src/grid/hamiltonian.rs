//! Monotone discretisation of control-form Hamiltonians on a slow grid,
//! optionally with the coefficients "shaken" over a ball of nearby nodes.

use super::{monotone_stencil, BoundaryMode, GridSpec, Offset};
use crate::problem::ControlHamiltonian;
use crate::{Error, Result};

/// How the per-node groups are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outer {
    Min,
    Max,
}

/// One control frozen at one node: `diag * u_i - sum w u_nbr`.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub nbrs: Vec<(usize, f64)>,
    pub diag: f64,
}

impl Branch {
    #[inline]
    pub fn pull(&self, u: &[f64]) -> f64 {
        self.nbrs.iter().map(|&(n, w)| w * u[n]).sum()
    }

    /// Same as [`Branch::pull`] for a field stored in blocks of `stride`
    /// values per slow node, reading entry `j` of each block.
    #[inline]
    pub fn pull_strided(&self, u: &[f64], stride: usize, j: usize) -> f64 {
        self.nbrs.iter().map(|&(n, w)| w * u[n * stride + j]).sum()
    }

    #[inline]
    pub fn value(&self, ui: f64, u: &[f64]) -> f64 {
        self.diag * ui - self.pull(u)
    }
}

/// Controls evaluated at one point `xi` of the ball, plus an additive shift
/// (the ergodic constant at `xi`, or zero).
#[derive(Clone, Debug, PartialEq)]
pub struct Group {
    pub shift: f64,
    pub branches: Vec<Branch>,
}

/// `H_i(u) = outer_g [ shift_g + min_b branch_b(u) ]` at every slow node `i`.
#[derive(Clone, Debug)]
pub struct DiscreteHamiltonian {
    pub grid: GridSpec,
    pub outer: Outer,
    pub nodes: Vec<Vec<Group>>,
}

impl DiscreteHamiltonian {
    /// The Hamiltonian alone (no shift).
    pub fn plain(ham: &ControlHamiltonian, grid: &GridSpec) -> Result<Self> {
        Self::shaken(ham, grid, &vec![0.0; grid.len()], 0.0, Outer::Min)
    }

    /// `H(x, p, X) + lambda(x)`.
    pub fn with_shift(ham: &ControlHamiltonian, grid: &GridSpec, lambda: &[f64]) -> Result<Self> {
        Self::shaken(ham, grid, lambda, 0.0, Outer::Min)
    }

    /// `min` (or `max`) over nodes `xi` within `rho` of `x` of
    /// `H(xi, p, X) + lambda(xi)`, with derivatives taken at `x`.
    pub fn shaken(
        ham: &ControlHamiltonian,
        grid: &GridSpec,
        lambda: &[f64],
        rho: f64,
        outer: Outer,
    ) -> Result<Self> {
        ham.validate()?;
        if grid.dim() != ham.dim {
            return Err(Error::Dimension {
                what: "slow grid",
                expected: ham.dim,
                got: grid.dim(),
            });
        }
        if lambda.len() != grid.len() {
            return Err(Error::Dimension {
                what: "lambda field",
                expected: grid.len(),
                got: lambda.len(),
            });
        }
        if !(rho >= 0.0) {
            return Err(Error::config("shaken hamiltonian: rho must be nonnegative"));
        }
        let h = grid.spacings();
        let stencils: Vec<Vec<Vec<(Offset, f64)>>> = (0..grid.len())
            .map(|k| {
                let x = grid.point(k);
                (0..ham.controls.len())
                    .map(|c| {
                        let a = ham.diffusion_at(c, &x);
                        let drift: Vec<f64> = ham.phi_at(c, &x).iter().map(|v| -v).collect();
                        monotone_stencil(&a, &drift, &h)
                            .map_err(|e| Error::config(format!("hamiltonian control {c}: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;

        let d = grid.dim();
        let nodes = (0..grid.len())
            .map(|i| {
                ball(grid, i, rho)
                    .into_iter()
                    .map(|xi| Group {
                        shift: lambda[xi],
                        branches: stencils[xi]
                            .iter()
                            .map(|st| {
                                let mut nbrs = Vec::with_capacity(st.len());
                                let mut diag = 0.0;
                                for (o, w) in st {
                                    diag += w;
                                    nbrs.push((grid.neighbor(i, &o[..d]), *w));
                                }
                                Branch { nbrs, diag }
                            })
                            .collect(),
                    })
                    .collect()
            })
            .collect();
        Ok(DiscreteHamiltonian {
            grid: grid.clone(),
            outer,
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Largest total off-diagonal weight; the fixed-point sweeps contract
    /// by at least `max_diag / (1 + max_diag)`.
    pub fn max_diag(&self) -> f64 {
        self.nodes
            .iter()
            .flatten()
            .flat_map(|g| g.branches.iter().map(|b| b.diag))
            .fold(0.0, f64::max)
    }

    pub fn eval(&self, i: usize, u: &[f64]) -> f64 {
        let inner = |g: &Group| {
            g.shift
                + g.branches
                    .iter()
                    .map(|b| b.value(u[i], u))
                    .fold(f64::INFINITY, f64::min)
        };
        let groups = self.nodes[i].iter().map(inner);
        match self.outer {
            Outer::Min => groups.fold(f64::INFINITY, f64::min),
            Outer::Max => groups.fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Value of `u_i` solving `u_i + H_i(u) + source = 0` with the
    /// neighbouring values of `u` frozen.
    pub fn node_root(&self, i: usize, u: &[f64], source: f64) -> f64 {
        let group_root = |g: &Group| {
            g.branches
                .iter()
                .map(|b| (b.pull(u) - g.shift - source) / (1.0 + b.diag))
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let roots = self.nodes[i].iter().map(group_root);
        match self.outer {
            Outer::Min => roots.fold(f64::NEG_INFINITY, f64::max),
            Outer::Max => roots.fold(f64::INFINITY, f64::min),
        }
    }
}

/// Nodes within distance `rho` of node `i` (always including `i`).
fn ball(grid: &GridSpec, i: usize, rho: f64) -> Vec<usize> {
    let centre = grid.point(i);
    let idx = grid.index(i);
    let reach: Vec<i64> = grid
        .axes
        .iter()
        .map(|a| {
            let r = (rho / a.spacing() + 1e-9).floor() as i64;
            match a.boundary {
                BoundaryMode::Periodic => r.min(a.nodes as i64 / 2),
                BoundaryMode::InwardDrift => r,
            }
        })
        .collect();
    let mut out = vec![i];
    let mut cur = vec![0usize; grid.dim()];
    let mut offs = reach.iter().map(|r| -r).collect::<Vec<i64>>();
    'outer: loop {
        let mut ok = true;
        for (k, a) in grid.axes.iter().enumerate() {
            let j = idx[k] as i64 + offs[k];
            let n = a.nodes as i64;
            cur[k] = match a.boundary {
                BoundaryMode::Periodic => j.rem_euclid(n) as usize,
                BoundaryMode::InwardDrift => {
                    if j < 0 || j >= n {
                        ok = false;
                        0
                    } else {
                        j as usize
                    }
                }
            };
        }
        if ok {
            let flat = grid.ravel(&cur);
            if grid.distance(&centre, &grid.point(flat)) <= rho * (1.0 + 1e-12) {
                out.push(flat);
            }
        }
        for k in 0..offs.len() {
            if offs[k] < reach[k] {
                offs[k] += 1;
                continue 'outer;
            }
            offs[k] = -reach[k];
        }
        break;
    }
    out.sort_unstable();
    out.dedup();
    out
}
