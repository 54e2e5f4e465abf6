use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{AxisRole, GridSpec};
use crate::problem::FastOperatorSpec;
use crate::sparse::SparseOperator;
use crate::{Error, Result};

/// Neighbour offset in node steps; unused trailing entries are zero.
pub type Offset = [i32; 2];

/// Weights `w_k >= 0` such that
///
/// ```text
/// sum_k w_k (u(z) - u(z + offset_k))  ~  -tr(a D^2 u) + drift . Du
/// ```
///
/// Second derivatives use centred differences (with the Kushner diagonal
/// stencil for a cross term in 2D); first derivatives are upwinded so every
/// weight is nonnegative.
pub fn monotone_stencil(a: &DMatrix<f64>, drift: &[f64], h: &[f64]) -> std::result::Result<Vec<(Offset, f64)>, String> {
    let d = h.len();
    let mut out: Vec<(Offset, f64)> = Vec::with_capacity(9);
    let mut push = |o: Offset, w: f64| {
        if w != 0.0 {
            out.push((o, w));
        }
    };
    let unit = |k: usize, s: i32| {
        let mut o = [0; 2];
        o[k] = s;
        o
    };
    match d {
        1 => {
            let w = a[(0, 0)] / (h[0] * h[0]);
            push([1, 0], w);
            push([-1, 0], w);
        }
        2 => {
            let a12 = 0.5 * (a[(0, 1)] + a[(1, 0)]);
            let cross = a12.abs() / (h[0] * h[1]);
            for k in 0..2 {
                let w = a[(k, k)] / (h[k] * h[k]) - cross;
                if w < -1e-12 * (a[(k, k)] / (h[k] * h[k])).abs().max(1.0) {
                    return Err(format!(
                        "diffusion not diagonally dominant on this grid (a{k}{k}/h^2 = {}, |a12|/(h1 h2) = {cross})",
                        a[(k, k)] / (h[k] * h[k])
                    ));
                }
                push(unit(k, 1), w.max(0.0));
                push(unit(k, -1), w.max(0.0));
            }
            if a12 > 0.0 {
                push([1, 1], cross);
                push([-1, -1], cross);
            } else if a12 < 0.0 {
                push([1, -1], cross);
                push([-1, 1], cross);
            }
        }
        _ => return Err(format!("unsupported stencil dimension {d}")),
    }
    for (k, &c) in drift.iter().enumerate() {
        if c > 0.0 {
            push(unit(k, -1), c / h[k]);
        } else if c < 0.0 {
            push(unit(k, 1), -c / h[k]);
        }
    }
    if let Some(&(_, w)) = out.iter().find(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
        return Err(format!("invalid stencil weight {w}"));
    }
    Ok(out)
}

/// Assembles the monotone discretisation `A` of `L` on a fast grid, so that
/// `(A u)(y) ~ L(y, Du, D^2u)` with nonpositive off-diagonals and zero row sums.
pub fn assemble_discrete_l(spec: &FastOperatorSpec, grid: &GridSpec) -> Result<SparseOperator> {
    if grid.axes.iter().any(|a| a.role != AxisRole::Fast) {
        return Err(Error::config("grid: fast operator needs a grid of fast axes only"));
    }
    if grid.dim() != spec.dim {
        return Err(Error::Dimension {
            what: "fast grid",
            expected: spec.dim,
            got: grid.dim(),
        });
    }
    grid.check_inward_drift(spec)?;
    let h = grid.spacings();
    let rows: Vec<Result<Vec<(usize, f64)>>> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let y = grid.point(k);
            let a = spec.diffusion_at(&y);
            let c = spec.drift_at(&y);
            let st = monotone_stencil(&a, &c, &h).map_err(|e| Error::config(format!("fast grid: {e}")))?;
            let mut row = Vec::with_capacity(st.len() + 1);
            let mut diag = 0.0;
            for (o, w) in st {
                let nb = grid.neighbor(k, &o[..grid.dim()]);
                diag += w;
                row.push((nb, -w));
            }
            row.push((k, diag));
            Ok(row)
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(SparseOperator::from_rows(rows))
}
