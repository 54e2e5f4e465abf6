//! Problem instances: the fast Ornstein-Uhlenbeck-type operator `L`, the
//! control-form Hamiltonian `H`, and the source term `f(x, y)`.
//!
//! Sign conventions:
//!
//! ```text
//! L(y, q, Y) = -tr(tau(y) tau(y)^T Y) + alpha y.q + b(y).q
//! H(x, p, X) = min_{u in U} { -phi(x,u).p - tr(sigma sigma^T(x,u) X) }
//! ```

mod assumptions;
mod fixtures;
mod func;

pub use assumptions::{check_assumptions, Assumption, AssumptionCheck, AssumptionReport, Violation};
pub use fixtures::{fixture, fixture_names};
pub use func::Func;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Linear fast operator of Ornstein-Uhlenbeck type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FastOperatorSpec {
    pub dim: usize,
    /// `tau(y)` row-major, `dim * dim` entries.
    pub tau: Vec<Func>,
    /// Bounded perturbation `b(y)` of the linear drift, `dim` entries.
    pub drift: Vec<Func>,
    pub alpha: f64,
    pub lip_tau: f64,
    pub lip_b: f64,
    /// Ellipticity lower bound for `tau tau^T`.
    pub theta: f64,
    pub tau_sup: f64,
    pub b_sup: f64,
}

impl FastOperatorSpec {
    /// Constant-coefficient operator `-tau^2 tr(Y) + alpha y.q` in dimension `dim`.
    pub fn ornstein_uhlenbeck(dim: usize, alpha: f64, tau: f64) -> Self {
        let mut entries = vec![Func::constant(0.0); dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = Func::constant(tau);
        }
        FastOperatorSpec {
            dim,
            tau: entries,
            drift: vec![Func::constant(0.0); dim],
            alpha,
            lip_tau: 0.0,
            lip_b: 0.0,
            theta: tau * tau,
            tau_sup: tau.abs() * (dim as f64).sqrt(),
            b_sup: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > 2 {
            return Err(Error::config(format!(
                "fast.dim: {} not supported (1 or 2)",
                self.dim
            )));
        }
        if self.tau.len() != self.dim * self.dim {
            return Err(Error::Dimension {
                what: "fast.tau",
                expected: self.dim * self.dim,
                got: self.tau.len(),
            });
        }
        if self.drift.len() != self.dim {
            return Err(Error::Dimension {
                what: "fast.drift",
                expected: self.dim,
                got: self.drift.len(),
            });
        }
        for f in self.tau.iter().chain(&self.drift) {
            f.check_arity(self.dim, "fast operator coefficient")?;
        }
        if !(self.alpha > 0.0) {
            return Err(Error::config("fast.alpha must be positive"));
        }
        if !(self.theta > 0.0) {
            return Err(Error::config("fast.theta must be positive"));
        }
        for (name, v) in [
            ("fast.lip_tau", self.lip_tau),
            ("fast.lip_b", self.lip_b),
            ("fast.tau_sup", self.tau_sup),
            ("fast.b_sup", self.b_sup),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and nonnegative")));
            }
        }
        Ok(())
    }

    pub fn tau_at(&self, y: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.tau[i * self.dim + j].eval(y))
    }

    /// `tau(y) tau(y)^T`
    pub fn diffusion_at(&self, y: &[f64]) -> DMatrix<f64> {
        let t = self.tau_at(y);
        &t * t.transpose()
    }

    pub fn b_at(&self, y: &[f64]) -> Vec<f64> {
        self.drift.iter().map(|f| f.eval(y)).collect()
    }

    /// Full first-order coefficient `alpha y + b(y)` of `L`.
    pub fn drift_at(&self, y: &[f64]) -> Vec<f64> {
        self.drift
            .iter()
            .zip(y)
            .map(|(b, &yk)| self.alpha * yk + b.eval(y))
            .collect()
    }

    /// `L(y, q, Y) = -tr(tau tau^T Y) + alpha y.q + b(y).q`
    pub fn eval_l(&self, y: &[f64], q: &[f64], hess: &DMatrix<f64>) -> Result<f64> {
        let m = self.dim;
        check_len("y", m, y.len())?;
        check_len("q", m, q.len())?;
        if hess.nrows() != m || hess.ncols() != m {
            return Err(Error::Dimension {
                what: "Y",
                expected: m,
                got: hess.nrows().max(hess.ncols()),
            });
        }
        let a = self.diffusion_at(y);
        let trace = (&a * hess).trace();
        let first: f64 = self
            .drift_at(y)
            .iter()
            .zip(q)
            .map(|(c, qk)| c * qk)
            .sum();
        let v = -trace + first;
        if !v.is_finite() {
            return Err(Error::Evaluation {
                what: "L".into(),
                point: y.to_vec(),
            });
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Control {
    #[serde(default)]
    pub label: String,
    /// Drift `phi(x, u)`, `dim` entries, functions of `x`.
    pub phi: Vec<Func>,
    /// Diffusion `sigma(x, u)` row-major, `dim * dim` entries.
    pub sigma: Vec<Func>,
}

/// `H(x,p,X) = min over a finite control list of -phi.p - tr(sigma sigma^T X)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlHamiltonian {
    pub dim: usize,
    pub controls: Vec<Control>,
    /// The constant `C` bounding `H(x,0,0)` and the Lipschitz moduli of `H`.
    pub constant: f64,
}

impl ControlHamiltonian {
    /// One-dimensional Hamiltonian `min(-|p|, -s(x)^2 X)`: move left or right at
    /// unit speed, or stay put and diffuse with `s(x) = sigma0 (1 + 0.5 cos x)`.
    pub fn drift_or_diffuse(sigma0: f64) -> Self {
        let zero = Func::constant(0.0);
        ControlHamiltonian {
            dim: 1,
            controls: vec![
                Control {
                    label: "right".into(),
                    phi: vec![Func::constant(1.0)],
                    sigma: vec![zero.clone()],
                },
                Control {
                    label: "left".into(),
                    phi: vec![Func::constant(-1.0)],
                    sigma: vec![zero.clone()],
                },
                Control {
                    label: "diffuse".into(),
                    phi: vec![zero],
                    sigma: vec![Func::Sum {
                        terms: vec![Func::constant(sigma0), Func::cos(0, 0.5 * sigma0)],
                    }],
                },
            ],
            constant: 1.0,
        }
    }

    /// `H == 0`.
    pub fn zero(dim: usize) -> Self {
        ControlHamiltonian {
            dim,
            controls: vec![Control {
                label: "null".into(),
                phi: vec![Func::constant(0.0); dim],
                sigma: vec![Func::constant(0.0); dim * dim],
            }],
            constant: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > 2 {
            return Err(Error::config(format!(
                "hamiltonian.dim: {} not supported (1 or 2)",
                self.dim
            )));
        }
        if self.controls.is_empty() {
            return Err(Error::EmptyControlSet);
        }
        for c in &self.controls {
            check_len("hamiltonian.controls.phi", self.dim, c.phi.len())?;
            check_len("hamiltonian.controls.sigma", self.dim * self.dim, c.sigma.len())?;
            for f in c.phi.iter().chain(&c.sigma) {
                f.check_arity(self.dim, "control coefficient")?;
            }
        }
        if !(self.constant > 0.0) {
            return Err(Error::config("hamiltonian.constant must be positive"));
        }
        Ok(())
    }

    pub fn phi_at(&self, control: usize, x: &[f64]) -> Vec<f64> {
        self.controls[control].phi.iter().map(|f| f.eval(x)).collect()
    }

    /// `sigma sigma^T (x, u)`
    pub fn diffusion_at(&self, control: usize, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim;
        let c = &self.controls[control];
        let s = DMatrix::from_fn(n, n, |i, j| c.sigma[i * n + j].eval(x));
        &s * s.transpose()
    }

    /// Payoff of a single control: `-phi.p - tr(sigma sigma^T X)`.
    pub fn control_value(&self, control: usize, x: &[f64], p: &[f64], hess: &DMatrix<f64>) -> f64 {
        let first: f64 = self
            .phi_at(control, x)
            .iter()
            .zip(p)
            .map(|(a, b)| a * b)
            .sum();
        -first - (self.diffusion_at(control, x) * hess).trace()
    }

    pub fn eval_h(&self, x: &[f64], p: &[f64], hess: &DMatrix<f64>) -> Result<f64> {
        if self.controls.is_empty() {
            return Err(Error::EmptyControlSet);
        }
        check_len("x", self.dim, x.len())?;
        check_len("p", self.dim, p.len())?;
        if hess.nrows() != self.dim || hess.ncols() != self.dim {
            return Err(Error::Dimension {
                what: "X",
                expected: self.dim,
                got: hess.nrows().max(hess.ncols()),
            });
        }
        let v = (0..self.controls.len())
            .map(|c| self.control_value(c, x, p, hess))
            .fold(f64::INFINITY, f64::min);
        if !v.is_finite() {
            return Err(Error::Evaluation {
                what: "H".into(),
                point: x.to_vec(),
            });
        }
        Ok(v)
    }
}

/// One product `h(x) g(y)` of a source term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparatedTerm {
    pub h: Func,
    pub g: Func,
}

/// `f(x, y) = sum_k h_k(x) g_k(y)` together with the constants of the
/// boundedness and Hölder hypotheses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceTerm {
    pub terms: Vec<SeparatedTerm>,
    /// `||f||_inf <= c1`
    pub c1: f64,
    /// Hölder exponent in `y`.
    pub gamma: f64,
    pub c2: f64,
    /// Hölder exponent in `x`.
    pub beta: f64,
    pub c3: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lip_h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2_norm_h: Option<f64>,
}

impl SourceTerm {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.h.eval(x) * t.g.eval(y)).sum()
    }

    /// `(h, g)` when the source is a single product.
    pub fn separated(&self) -> Option<&SeparatedTerm> {
        match self.terms.as_slice() {
            [t] => Some(t),
            _ => None,
        }
    }

    /// True when no term depends on `y`.
    pub fn is_y_independent(&self) -> bool {
        self.terms.iter().all(|t| t.g.is_constant())
    }

    /// `f(x, y) - f(xbar, y)`
    pub fn difference(&self, x: &[f64], xbar: &[f64], y: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| (t.h.eval(x) - t.h.eval(xbar)) * t.g.eval(y))
            .sum()
    }

    fn validate(&self, n: usize, m: usize) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::config("source.terms must not be empty"));
        }
        for t in &self.terms {
            t.h.check_arity(n, "source h")?;
            t.g.check_arity(m, "source g")?;
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("source.gamma must lie in (0, 1]"));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::config("source.beta must lie in (0, 1]"));
        }
        if !(self.c1 >= 0.0 && self.c2 >= 0.0 && self.c3 >= 0.0) {
            return Err(Error::config("source constants must be nonnegative"));
        }
        Ok(())
    }
}

/// Box used by the sampled assumption checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleBox {
    pub x_radius: f64,
    pub y_radius: f64,
}

impl Default for SampleBox {
    fn default() -> Self {
        SampleBox {
            x_radius: std::f64::consts::PI,
            y_radius: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub name: String,
    pub fast: FastOperatorSpec,
    pub hamiltonian: ControlHamiltonian,
    pub source: SourceTerm,
    #[serde(default)]
    pub sample_box: SampleBox,
}

impl ProblemInstance {
    pub fn slow_dim(&self) -> usize {
        self.hamiltonian.dim
    }

    pub fn fast_dim(&self) -> usize {
        self.fast.dim
    }

    pub fn validate(&self) -> Result<()> {
        self.fast.validate()?;
        self.hamiltonian.validate()?;
        self.source.validate(self.slow_dim(), self.fast_dim())
    }

    /// The waiver of the `alpha` compatibility condition applies to sources
    /// with separated variables and Lipschitz `h`.
    pub fn separated_lipschitz(&self) -> bool {
        self.source.separated().is_some() && self.source.lip_h.is_some()
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let p: ProblemInstance =
            toml::from_str(s).map_err(|e| Error::config(format!("problem: {e}")))?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("problem: {e}")))
    }

    /// Same operator and Hamiltonian with a different source.
    pub fn with_source(&self, name: &str, source: SourceTerm) -> Self {
        ProblemInstance {
            name: name.to_string(),
            source,
            ..self.clone()
        }
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
