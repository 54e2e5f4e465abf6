//! Small closed family of scalar coefficient functions that can be written
//! down in a configuration file.

use serde::{Deserialize, Serialize};

fn one() -> f64 {
    1.0
}

/// A scalar function of a point. Each leaf reads a single coordinate `axis`
/// of its argument.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Func {
    Const {
        value: f64,
    },
    /// `amp * cos(freq * z[axis] + phase)`
    Cos {
        #[serde(default)]
        axis: usize,
        #[serde(default = "one")]
        amp: f64,
        #[serde(default = "one")]
        freq: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `amp * sin(freq * z[axis] + phase)`
    Sin {
        #[serde(default)]
        axis: usize,
        #[serde(default = "one")]
        amp: f64,
        #[serde(default = "one")]
        freq: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `amp * |sin(freq * z[axis])|^power`; Hölder with exponent `power` when `power < 1`.
    AbsSinPow {
        #[serde(default)]
        axis: usize,
        #[serde(default = "one")]
        amp: f64,
        #[serde(default = "one")]
        freq: f64,
        power: f64,
    },
    /// `amp * tanh(z[axis] / scale)`
    Tanh {
        #[serde(default)]
        axis: usize,
        #[serde(default = "one")]
        amp: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    Sum {
        terms: Vec<Func>,
    },
    Product {
        factors: Vec<Func>,
    },
}

impl Func {
    pub fn constant(value: f64) -> Self {
        Func::Const { value }
    }

    pub fn cos(axis: usize, amp: f64) -> Self {
        Func::Cos {
            axis,
            amp,
            freq: 1.0,
            phase: 0.0,
        }
    }

    pub fn sin(axis: usize, amp: f64) -> Self {
        Func::Sin {
            axis,
            amp,
            freq: 1.0,
            phase: 0.0,
        }
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            Func::Const { value } => *value,
            Func::Cos {
                axis,
                amp,
                freq,
                phase,
            } => amp * (freq * z[*axis] + phase).cos(),
            Func::Sin {
                axis,
                amp,
                freq,
                phase,
            } => amp * (freq * z[*axis] + phase).sin(),
            Func::AbsSinPow {
                axis,
                amp,
                freq,
                power,
            } => amp * (freq * z[*axis]).sin().abs().powf(*power),
            Func::Tanh { axis, amp, scale } => amp * (z[*axis] / scale).tanh(),
            Func::Sum { terms } => terms.iter().map(|t| t.eval(z)).sum(),
            Func::Product { factors } => factors.iter().map(|t| t.eval(z)).product(),
        }
    }

    /// Largest coordinate index read by this function, if any.
    pub fn max_axis(&self) -> Option<usize> {
        match self {
            Func::Const { .. } => None,
            Func::Cos { axis, .. }
            | Func::Sin { axis, .. }
            | Func::AbsSinPow { axis, .. }
            | Func::Tanh { axis, .. } => Some(*axis),
            Func::Sum { terms } => terms.iter().filter_map(Func::max_axis).max(),
            Func::Product { factors } => factors.iter().filter_map(Func::max_axis).max(),
        }
    }

    /// True when the function ignores its argument.
    pub fn is_constant(&self) -> bool {
        self.max_axis().is_none()
    }

    pub(crate) fn check_arity(&self, dim: usize, what: &str) -> crate::Result<()> {
        match self.max_axis() {
            Some(a) if a >= dim => Err(crate::Error::config(format!(
                "{what}: axis {a} out of range for dimension {dim}"
            ))),
            _ => Ok(()),
        }
    }
}

impl Default for Func {
    fn default() -> Self {
        Func::constant(0.0)
    }
}
