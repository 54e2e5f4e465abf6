//! Sampled (and, for the `alpha` compatibility condition, exact) checks of
//! the standing hypotheses.
//!
//! Sampling can only falsify a supremum bound, so every sampled check is
//! advisory: a violation is reported with the offending points.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::ProblemInstance;
use crate::{Error, Result};

const SAMPLE_SEED: u64 = 0x5eed_a55e;
/// Relative slack for floating-point comparisons against the stored constants.
const SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Assumption {
    /// Structure, ellipticity and Lipschitz bounds of the fast operator.
    L,
    /// Bound, monotonicity and Lipschitz modulus of the Hamiltonian.
    H,
    /// Boundedness of the source.
    F,
    /// Log-weighted Hölder continuity of the source in `y`.
    H1,
    /// `alpha > L_b + L_tau^2 (m + 2 - gamma)`.
    H2,
    /// Cross Hölder continuity in `(x, y)`.
    H3,
    /// Hölder continuity in `x` in sup norm.
    H4,
}

impl Assumption {
    pub const ALL: [Assumption; 7] = [
        Assumption::L,
        Assumption::H,
        Assumption::F,
        Assumption::H1,
        Assumption::H2,
        Assumption::H3,
        Assumption::H4,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Assumption::L => "(L)",
            Assumption::H => "(H)",
            Assumption::F => "(F)",
            Assumption::H1 => "(H1)",
            Assumption::H2 => "(H2)",
            Assumption::H3 => "(H3)",
            Assumption::H4 => "(H4)",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    pub detail: String,
    pub points: Vec<Vec<f64>>,
    pub observed: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionCheck {
    pub assumption: Assumption,
    pub label: &'static str,
    pub holds: bool,
    /// Decided exactly from stored constants (otherwise sampled).
    pub exact: bool,
    pub samples: usize,
    pub violation: Option<Violation>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionReport {
    pub instance: String,
    pub checks: Vec<AssumptionCheck>,
    /// Separated source with Lipschitz `h`: the `alpha` condition may be dropped.
    pub h2_waivable: bool,
}

impl AssumptionReport {
    pub fn get(&self, a: Assumption) -> &AssumptionCheck {
        self.checks
            .iter()
            .find(|c| c.assumption == a)
            .expect("every assumption is checked")
    }

    pub fn holds(&self, a: Assumption) -> bool {
        self.get(a).holds
    }

    /// Acceptable for the solvers: `(H2)` holds or is waived.
    pub fn h2_ok(&self) -> bool {
        self.holds(Assumption::H2) || self.h2_waivable
    }
}

/// Tracks the worst sampled ratio `observed / bound` for one assumption.
struct Probe {
    assumption: Assumption,
    samples: usize,
    violation: Option<Violation>,
}

impl Probe {
    fn new(assumption: Assumption) -> Self {
        Probe {
            assumption,
            samples: 0,
            violation: None,
        }
    }

    fn record(&mut self, observed: f64, bound: f64, detail: &str, points: &[&[f64]]) {
        self.samples += 1;
        if observed > bound + SLACK * (1.0 + bound.abs()) {
            let worse = match &self.violation {
                Some(v) => observed - bound > v.observed - v.bound,
                None => true,
            };
            if worse {
                self.violation = Some(Violation {
                    detail: detail.to_string(),
                    points: points.iter().map(|p| p.to_vec()).collect(),
                    observed,
                    bound,
                });
            }
        }
    }

    fn finish(self) -> AssumptionCheck {
        AssumptionCheck {
            assumption: self.assumption,
            label: self.assumption.label(),
            holds: self.violation.is_none(),
            exact: false,
            samples: self.samples,
            violation: self.violation,
        }
    }
}

struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    fn point(&mut self, dim: usize, radius: f64) -> Vec<f64> {
        (0..dim)
            .map(|_| self.rng.random_range(-radius..=radius))
            .collect()
    }

    /// A second point, half the time very close to `base`.
    fn partner(&mut self, base: &[f64], radius: f64) -> Vec<f64> {
        if self.rng.random_bool(0.5) {
            let scale = 10f64.powf(-self.rng.random_range(1.0..5.0));
            base.iter()
                .map(|b| b + scale * self.rng.random_range(-1.0..=1.0))
                .collect()
        } else {
            self.point(base.len(), radius)
        }
    }

    fn vector(&mut self, dim: usize, scale: f64) -> Vec<f64> {
        (0..dim).map(|_| self.rng.random_range(-scale..=scale)).collect()
    }

    fn unit(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let v = self.vector(dim, 1.0);
            let n = norm(&v);
            if n > 1e-3 {
                return v.iter().map(|x| x / n).collect();
            }
        }
    }

    fn symmetric(&mut self, dim: usize, scale: f64) -> DMatrix<f64> {
        let a = DMatrix::from_fn(dim, dim, |_, _| self.rng.random_range(-scale..=scale));
        (&a + a.transpose()) * 0.5
    }

    fn psd(&mut self, dim: usize, scale: f64) -> DMatrix<f64> {
        let b = DMatrix::from_fn(dim, dim, |_, _| self.rng.random_range(-scale..=scale));
        &b * b.transpose()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn log_weight(y1: &[f64], y2: &[f64]) -> f64 {
    let l = |y: &[f64]| (1.0 + y.iter().map(|v| v * v).sum::<f64>()).ln();
    l(y1) + l(y2) + 1.0
}

fn finite(v: f64, what: &str, point: &[f64]) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Evaluation {
            what: what.to_string(),
            point: point.to_vec(),
        })
    }
}

/// Runs every check with `sample_budget` samples per sampled assumption.
pub fn check_assumptions(instance: &ProblemInstance, sample_budget: usize) -> Result<AssumptionReport> {
    if sample_budget == 0 {
        return Err(Error::config("sample_budget must be at least 1"));
    }
    instance.validate()?;
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(SAMPLE_SEED),
    };
    let fast = &instance.fast;
    let ham = &instance.hamiltonian;
    let src = &instance.source;
    let (n, m) = (instance.slow_dim(), instance.fast_dim());
    let rx = instance.sample_box.x_radius;
    let ry = instance.sample_box.y_radius;

    // (L)
    let mut l = Probe::new(Assumption::L);
    for _ in 0..sample_budget {
        let y1 = s.point(m, ry);
        let y2 = s.partner(&y1, ry);
        let xi = s.unit(m);
        let a = fast.diffusion_at(&y1);
        let quad = finite(
            (a.clone() * nalgebra::DVector::from_column_slice(&xi)).dot(&nalgebra::DVector::from_column_slice(&xi)),
            "tau tau^T",
            &y1,
        )?;
        // ellipticity: record theta - quad <= 0
        l.record(fast.theta - quad, 0.0, "ellipticity xi^T tau tau^T xi >= theta", &[&y1, &xi]);
        let t1 = fast.tau_at(&y1);
        let t2 = fast.tau_at(&y2);
        l.record(t1.norm(), fast.tau_sup, "|tau| <= tau_sup", &[&y1]);
        let b1 = fast.b_at(&y1);
        let b2 = fast.b_at(&y2);
        finite(norm(&b1), "b", &y1)?;
        l.record(norm(&b1), fast.b_sup, "|b| <= b_sup", &[&y1]);
        let d = dist(&y1, &y2);
        if d > 0.0 {
            l.record((t1 - t2).norm() / d, fast.lip_tau, "Lipschitz quotient of tau", &[&y1, &y2]);
            let db: Vec<f64> = b1.iter().zip(&b2).map(|(a, b)| a - b).collect();
            l.record(norm(&db) / d, fast.lip_b, "Lipschitz quotient of b", &[&y1, &y2]);
        }
    }
    let mut l = l.finish();
    if !(fast.alpha > 0.0 && fast.theta > 0.0) {
        l.holds = false;
    }

    // (H)
    let mut h = Probe::new(Assumption::H);
    let c = ham.constant;
    for _ in 0..sample_budget {
        let x1 = s.point(n, rx);
        let x2 = s.partner(&x1, rx);
        let zero = DMatrix::zeros(n, n);
        let h0 = finite(ham.eval_h(&x1, &vec![0.0; n], &zero)?, "H(x,0,0)", &x1)?;
        h.record(h0.abs(), c, "|H(x,0,0)| <= C", &[&x1]);

        let p = s.vector(n, 5.0);
        let ylow = s.symmetric(n, 5.0);
        let xhigh = &ylow + s.psd(n, 2.0);
        let hx = ham.eval_h(&x1, &p, &xhigh)?;
        let hy = ham.eval_h(&x1, &p, &ylow)?;
        h.record(hx, hy, "degenerate ellipticity H(x,p,X) <= H(x,p,Y) for X >= Y", &[&x1, &p]);

        let q = s.vector(n, 5.0);
        let other = s.symmetric(n, 5.0);
        let lhs = (hy - ham.eval_h(&x2, &q, &other)?).abs();
        let dp = dist(&p, &q);
        let dx = dist(&x1, &x2);
        let rhs = c * (dp + (&ylow - &other).norm()) + c * dx * (1.0 + norm(&p) + ylow.norm());
        h.record(lhs, rhs, "Lipschitz modulus of H", &[&x1, &x2, &p, &q]);
    }
    let h = h.finish();

    // (F), (H1), (H3), (H4)
    let mut f = Probe::new(Assumption::F);
    let mut h1 = Probe::new(Assumption::H1);
    let mut h3 = Probe::new(Assumption::H3);
    let mut h4 = Probe::new(Assumption::H4);
    for _ in 0..sample_budget {
        let x1 = s.point(n, rx);
        let x2 = s.partner(&x1, rx);
        let y1 = s.point(m, ry);
        let y2 = s.partner(&y1, ry);
        let f11 = finite(src.eval(&x1, &y1), "f", &[x1.as_slice(), y1.as_slice()].concat())?;
        let f12 = finite(src.eval(&x1, &y2), "f", &[x1.as_slice(), y2.as_slice()].concat())?;
        f.record(f11.abs(), src.c1, "|f| <= C1", &[&x1, &y1]);

        let dy = dist(&y1, &y2);
        let dx = dist(&x1, &x2);
        let w = log_weight(&y1, &y2);
        if dy > 0.0 {
            h1.record((f11 - f12).abs(), src.c2 * dy.powf(src.gamma) * w, "Hölder quotient in y", &[&x1, &y1, &y2]);
            let big1 = src.difference(&x1, &x2, &y1);
            let big2 = src.difference(&x1, &x2, &y2);
            h3.record(
                (big1 - big2).abs(),
                dy.powf(src.gamma) * src.c3 * dx.powf(src.beta) * w,
                "cross Hölder quotient",
                &[&x1, &x2, &y1, &y2],
            );
        }
        let big = src.difference(&x1, &x2, &y1);
        h4.record(big.abs(), src.c3 * dx.powf(src.beta), "|f(x,.) - f(xbar,.)| <= C3 |x - xbar|^beta", &[&x1, &x2, &y1]);
    }

    // (H2), exact
    let threshold = fast.lip_b + fast.lip_tau * fast.lip_tau * (m as f64 + 2.0 - src.gamma);
    let h2_holds = fast.alpha > threshold;
    let h2 = AssumptionCheck {
        assumption: Assumption::H2,
        label: Assumption::H2.label(),
        holds: h2_holds,
        exact: true,
        samples: 0,
        violation: (!h2_holds).then(|| Violation {
            detail: "alpha > L_b + L_tau^2 (m + 2 - gamma)".into(),
            points: vec![],
            observed: threshold,
            bound: fast.alpha,
        }),
    };

    Ok(AssumptionReport {
        instance: instance.name.clone(),
        checks: vec![l, h, f.finish(), h1.finish(), h2, h3.finish(), h4.finish()],
        h2_waivable: instance.separated_lipschitz(),
    })
}
