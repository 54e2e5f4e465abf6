use super::DiscreteField;
use crate::{Error, Result};

/// Largest value over distinct node pairs of
///
/// ```text
/// |u(y1) - u(y2)| / ( |y1 - y2|^gamma [ log(1+|y1|^2) + log(1+|y2|^2) + k2 ] )
/// ```
///
/// The scan is quadratic in the node count.
pub fn weighted_holder_quotient(u: &DiscreteField, gamma: f64, k2: f64) -> Result<f64> {
    let n = u.grid.len();
    if n < 2 {
        return Err(Error::config("holder quotient needs at least two nodes"));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::config("holder quotient: gamma must lie in (0, 1]"));
    }
    if !(k2 > 0.0) {
        return Err(Error::config("holder quotient: K2 must be positive"));
    }
    let pts = u.grid.points();
    let logs: Vec<f64> = pts
        .iter()
        .map(|p| (1.0 + p.iter().map(|v| v * v).sum::<f64>()).ln())
        .collect();
    let mut best: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = u.grid.distance(&pts[i], &pts[j]);
            let q = (u.values[i] - u.values[j]).abs() / (d.powf(gamma) * (logs[i] + logs[j] + k2));
            best = best.max(q);
        }
    }
    Ok(best)
}
