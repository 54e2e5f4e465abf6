//! Tensor grids, discrete fields, and monotone finite-difference assembly.

mod hamiltonian;
mod holder;
mod stencil;

pub use hamiltonian::{Branch, DiscreteHamiltonian, Group, Outer};
pub use holder::weighted_holder_quotient;
pub use stencil::{assemble_discrete_l, monotone_stencil, Offset};

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::problem::FastOperatorSpec;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AxisRole {
    Slow,
    Fast,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMode {
    /// `N` distinct nodes on `[-R, R)`, spacing `2R / N`.
    Periodic,
    /// `N` nodes on `[-R, R]`, spacing `2R / (N - 1)`; the outward neighbour of a
    /// boundary node is its mirror image.
    InwardDrift,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub radius: f64,
    pub nodes: usize,
    pub role: AxisRole,
    pub boundary: BoundaryMode,
}

impl Axis {
    pub fn slow_periodic(nodes: usize) -> Self {
        Axis {
            radius: std::f64::consts::PI,
            nodes,
            role: AxisRole::Slow,
            boundary: BoundaryMode::Periodic,
        }
    }

    pub fn fast(radius: f64, nodes: usize) -> Self {
        Axis {
            radius,
            nodes,
            role: AxisRole::Fast,
            boundary: BoundaryMode::InwardDrift,
        }
    }

    pub fn spacing(&self) -> f64 {
        match self.boundary {
            BoundaryMode::Periodic => 2.0 * self.radius / self.nodes as f64,
            BoundaryMode::InwardDrift => 2.0 * self.radius / (self.nodes - 1) as f64,
        }
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.radius + i as f64 * self.spacing()
    }

    /// Index reached from `i` by a step of `offset` nodes.
    #[inline]
    pub fn step(&self, i: usize, offset: i32) -> usize {
        let n = self.nodes as i64;
        let j = i as i64 + offset as i64;
        let j = match self.boundary {
            BoundaryMode::Periodic => j.rem_euclid(n),
            BoundaryMode::InwardDrift => {
                if j < 0 {
                    -j
                } else if j > n - 1 {
                    2 * (n - 1) - j
                } else {
                    j
                }
            }
        };
        j as usize
    }

    /// Distance between two coordinates, measured around the circle for periodic axes.
    pub fn distance(&self, a: f64, b: f64) -> f64 {
        let d = (a - b).abs();
        match self.boundary {
            BoundaryMode::Periodic => {
                let period = 2.0 * self.radius;
                let d = d.rem_euclid(period);
                d.min(period - d)
            }
            BoundaryMode::InwardDrift => d,
        }
    }

    fn nearest(&self, c: f64) -> usize {
        let h = self.spacing();
        match self.boundary {
            BoundaryMode::Periodic => {
                let period = 2.0 * self.radius;
                let t = (c + self.radius).rem_euclid(period);
                ((t / h).round() as usize) % self.nodes
            }
            BoundaryMode::InwardDrift => {
                (((c + self.radius) / h).round().max(0.0) as usize).min(self.nodes - 1)
            }
        }
    }
}

/// Tensor grid; flat indices are row-major with the last axis fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<Axis>,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        let g = GridSpec { axes };
        g.validate()?;
        Ok(g)
    }

    /// One-dimensional fast grid on `[-radius, radius]`.
    pub fn fast_1d(radius: f64, nodes: usize) -> Result<Self> {
        Self::new(vec![Axis::fast(radius, nodes)])
    }

    /// One-dimensional periodic slow grid on `[-pi, pi)`.
    pub fn slow_periodic_1d(nodes: usize) -> Result<Self> {
        Self::new(vec![Axis::slow_periodic(nodes)])
    }

    /// Slow axes followed by fast axes, so each slow node owns a contiguous
    /// block of `fast.len()` values.
    pub fn product(slow: &GridSpec, fast: &GridSpec) -> Result<Self> {
        if slow.axes.iter().any(|a| a.role != AxisRole::Slow) {
            return Err(Error::config("grid: product expects slow axes first"));
        }
        if fast.axes.iter().any(|a| a.role != AxisRole::Fast) {
            return Err(Error::config("grid: product expects fast axes second"));
        }
        Self::new(slow.axes.iter().chain(&fast.axes).copied().collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() || self.axes.len() > 4 {
            return Err(Error::config("grid: between 1 and 4 axes required"));
        }
        for (k, a) in self.axes.iter().enumerate() {
            if a.nodes < 3 {
                return Err(Error::config(format!("grid.axes[{k}].nodes must be at least 3")));
            }
            if !(a.radius > 0.0 && a.radius.is_finite()) {
                return Err(Error::config(format!("grid.axes[{k}].radius must be positive")));
            }
            if a.role == AxisRole::Fast && a.boundary == BoundaryMode::Periodic {
                return Err(Error::config(format!(
                    "grid.axes[{k}]: fast axes require inward-drift boundary mode"
                )));
            }
        }
        let slow = self.axes.iter().filter(|a| a.role == AxisRole::Slow).count();
        if slow > 2 || self.axes.len() - slow > 2 {
            return Err(Error::config("grid: at most two slow and two fast axes"));
        }
        Ok(())
    }

    /// Inward-drift condition `alpha R > b_sup` on every fast axis.
    pub fn check_inward_drift(&self, spec: &FastOperatorSpec) -> Result<()> {
        for (k, a) in self.axes.iter().enumerate() {
            if a.role == AxisRole::Fast && !(spec.alpha * a.radius > spec.b_sup) {
                return Err(Error::config(format!(
                    "grid.axes[{k}]: inward-drift condition alpha*R = {} <= b_sup = {}",
                    spec.alpha * a.radius,
                    spec.b_sup
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.nodes).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.nodes).collect()
    }

    pub fn spacings(&self) -> Vec<f64> {
        self.axes.iter().map(Axis::spacing).collect()
    }

    pub fn role_count(&self, role: AxisRole) -> usize {
        self.axes.iter().filter(|a| a.role == role).count()
    }

    /// Sub-grid made of the axes with the given role.
    pub fn restrict(&self, role: AxisRole) -> Result<GridSpec> {
        GridSpec::new(self.axes.iter().filter(|a| a.role == role).copied().collect())
    }

    pub fn unravel(&self, mut flat: usize, out: &mut [usize]) {
        for k in (0..self.axes.len()).rev() {
            let n = self.axes[k].nodes;
            out[k] = flat % n;
            flat /= n;
        }
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, a)| acc * a.nodes + i)
    }

    pub fn index(&self, flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.axes.len()];
        self.unravel(flat, &mut out);
        out
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.index(flat)
            .iter()
            .zip(&self.axes)
            .map(|(&i, a)| a.coord(i))
            .collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|k| self.point(k)).collect()
    }

    /// Flat index of the node `offset` steps away from `flat`.
    pub fn neighbor(&self, flat: usize, offset: &[i32]) -> usize {
        let mut idx = self.index(flat);
        for (k, (&o, a)) in offset.iter().zip(&self.axes).enumerate() {
            idx[k] = a.step(idx[k], o);
        }
        self.ravel(&idx)
    }

    pub fn nearest_node(&self, point: &[f64]) -> usize {
        let idx: Vec<usize> = self
            .axes
            .iter()
            .zip(point)
            .map(|(a, &c)| a.nearest(c))
            .collect();
        self.ravel(&idx)
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.axes
            .iter()
            .zip(a.iter().zip(b))
            .map(|(ax, (&p, &q))| {
                let d = ax.distance(p, q);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    pub(crate) fn axis_names(&self) -> Vec<String> {
        let count = |role| self.role_count(role);
        let mut seen = [0usize; 2];
        self.axes
            .iter()
            .map(|a| {
                let (base, slot) = match a.role {
                    AxisRole::Slow => ("x", 0),
                    AxisRole::Fast => ("y", 1),
                };
                seen[slot] += 1;
                if count(a.role) > 1 {
                    format!("{base}{}", seen[slot])
                } else {
                    base.to_string()
                }
            })
            .collect()
    }
}

/// Scalar values on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl DiscreteField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension {
                what: "field values",
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Evaluation {
                what: "field value".into(),
                point: grid.point(k),
            });
        }
        Ok(DiscreteField { grid, values })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|k| f(&grid.point(k))).collect();
        Self::new(grid, values)
    }

    pub fn zeros(grid: GridSpec) -> Self {
        let n = grid.len();
        DiscreteField {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sup_distance(&self, other: &DiscreteField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn at_point(&self, point: &[f64]) -> f64 {
        self.values[self.grid.nearest_node(point)]
    }

    /// CSV with header: one index column per axis, one coordinate column per
    /// axis, then `value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let names = self.grid.axis_names();
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = names.iter().map(|n| format!("i{n}")).collect();
        header.extend(names.iter().cloned());
        header.push("value".into());
        wtr.write_record(&header)?;
        let mut idx = vec![0; self.grid.dim()];
        for (k, v) in self.values.iter().enumerate() {
            self.grid.unravel(k, &mut idx);
            let mut rec: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
            rec.extend(
                idx.iter()
                    .zip(&self.grid.axes)
                    .map(|(&i, a)| format!("{:.17e}", a.coord(i))),
            );
            rec.push(format!("{v:.17e}"));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &std::path::Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads a field written by [`DiscreteField::write_csv`] onto a known grid.
    pub fn read_csv<R: Read>(grid: GridSpec, r: R) -> Result<Self> {
        let d = grid.dim();
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        if header.len() != 2 * d + 1 || &header[2 * d] != "value" {
            return Err(Error::config(format!(
                "field csv: expected {} columns ending in 'value'",
                2 * d + 1
            )));
        }
        let mut values = vec![f64::NAN; grid.len()];
        let mut idx = vec![0usize; d];
        for rec in rdr.records() {
            let rec = rec?;
            for (k, slot) in idx.iter_mut().enumerate() {
                *slot = rec[k]
                    .parse()
                    .map_err(|_| Error::config(format!("field csv: bad index in column {}", &header[k])))?;
                if *slot >= grid.axes[k].nodes {
                    return Err(Error::config(format!("field csv: index out of range in column {}", &header[k])));
                }
            }
            values[grid.ravel(&idx)] = rec[2 * d]
                .parse()
                .map_err(|_| Error::config("field csv: bad value"))?;
        }
        Self::new(grid, values)
    }
}
