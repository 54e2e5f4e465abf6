//! Epsilon sweeps: distance between the two-scale and effective solutions on
//! a compact set of fast values, fitted rates, and the frozen-constant
//! pointwise bound.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cell::DeltaSchedule;
use crate::effective::{build_lambda_field, solve_shaken, CellSettings, LambdaField, LambdaMethod, ShakeMode, SolveOptions};
use crate::grid::{AxisRole, DiscreteField, GridSpec};
use crate::problem::ProblemInstance;
use crate::twoscale::{fast_grid_for, solve_two_scale_from, RadiusGrowth, TwoScaleSolution};
use crate::{Error, Result};

/// Errors at or below this multiple of the solver tolerance carry no rate information.
pub const AT_TOLERANCE_FACTOR: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TheoremTag {
    #[serde(rename = "general-beta/2")]
    GeneralBetaHalf,
    #[serde(rename = "lipschitz-1/2")]
    LipschitzHalf,
    #[serde(rename = "smooth-1")]
    Smooth,
}

impl TheoremTag {
    pub fn label(self) -> &'static str {
        match self {
            TheoremTag::GeneralBetaHalf => "general-beta/2",
            TheoremTag::LipschitzHalf => "lipschitz-1/2",
            TheoremTag::Smooth => "smooth-1",
        }
    }

    /// Exponent `p` of `(eps |log eps|)^p`.
    pub fn exponent(self, beta: f64) -> f64 {
        match self {
            TheoremTag::GeneralBetaHalf => beta / 2.0,
            TheoremTag::LipschitzHalf => 0.5,
            TheoremTag::Smooth => 1.0,
        }
    }

    /// Smallest acceptable fitted slope.
    pub fn min_slope(self, beta: f64) -> f64 {
        match self {
            TheoremTag::GeneralBetaHalf => beta / 2.0 - 0.1,
            TheoremTag::LipschitzHalf => 0.4,
            TheoremTag::Smooth => 0.85,
        }
    }

    /// Strongest tag whose hypotheses the instance claims.
    pub fn for_instance(instance: &ProblemInstance) -> Self {
        let s = &instance.source;
        match (s.separated(), s.c2_norm_h, s.lip_h) {
            (Some(_), Some(_), _) => TheoremTag::Smooth,
            (Some(_), None, Some(_)) => TheoremTag::LipschitzHalf,
            _ => TheoremTag::GeneralBetaHalf,
        }
    }
}

impl std::str::FromStr for TheoremTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "general-beta/2" => Ok(TheoremTag::GeneralBetaHalf),
            "lipschitz-1/2" => Ok(TheoremTag::LipschitzHalf),
            "smooth-1" => Ok(TheoremTag::Smooth),
            _ => Err(Error::config(format!(
                "rate.theorem '{s}' (expected general-beta/2, lipschitz-1/2 or smooth-1)"
            ))),
        }
    }
}

/// `eps |log eps|`
pub fn eps_log_eps(eps: f64) -> f64 {
    eps * eps.ln().abs()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    pub eps: Vec<f64>,
    pub slow_nodes: usize,
    pub fast_nodes: usize,
    pub fast_radius: f64,
    /// The compact set is every slow node times `|y| <= compact_y`.
    pub compact_y: f64,
    /// Defaults to the strongest tag the instance supports.
    #[serde(default)]
    pub theorem: Option<TheoremTag>,
    pub lambda_method: LambdaMethod,
    pub tol: f64,
    pub max_iter: usize,
    #[serde(default)]
    pub radius_growth: RadiusGrowth,
    /// Shaking radius of the reference solution in the pointwise bound.
    pub shake_radius: f64,
    pub pointwise_bound: bool,
}

impl Default for RateConfig {
    fn default() -> Self {
        RateConfig {
            eps: (3..=9).map(|k| 2f64.powi(-k)).collect(),
            slow_nodes: 201,
            fast_nodes: 201,
            fast_radius: 8.0,
            compact_y: 2.0,
            theorem: None,
            lambda_method: LambdaMethod::Discount,
            tol: 1e-8,
            max_iter: 100_000,
            radius_growth: RadiusGrowth::Fixed,
            shake_radius: 0.0,
            pointwise_bound: false,
        }
    }
}

impl RateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eps.is_empty() {
            return Err(Error::config("rate.eps must not be empty"));
        }
        if let Some(e) = self.eps.iter().find(|&&e| !(e > 0.0 && e < (-1f64).exp())) {
            return Err(Error::config(format!("rate.eps: {e} is outside (0, 1/e)")));
        }
        if self.eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::config("rate.eps must be strictly decreasing"));
        }
        if !(self.compact_y >= 0.0 && self.compact_y <= self.fast_radius) {
            return Err(Error::config("rate.compact_y must lie within the fast truncation radius"));
        }
        if !(self.shake_radius >= 0.0) {
            return Err(Error::config("rate.shake_radius must be nonnegative"));
        }
        self.solve_options().validate()
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub epsilon: f64,
    pub eps_logeps: f64,
    pub sup_error: f64,
    pub q_normalized: f64,
    pub at_tolerance: bool,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square of the log-log residuals.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    /// Fitted at the coarsest epsilon, then frozen.
    pub k: f64,
    pub slack: f64,
    /// `(epsilon, largest excess over the bound, passed)` for each finer epsilon.
    pub finer: Vec<(f64, f64, bool)>,
}

impl BoundCheck {
    pub fn passed(&self) -> bool {
        self.finer.iter().all(|(_, _, ok)| *ok)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub instance: String,
    pub theorem: TheoremTag,
    pub exponent: f64,
    pub compact_y: f64,
    pub tol: f64,
    pub points: Vec<RatePoint>,
    pub fit: Option<Fit>,
    /// Auxiliary slope against plain `eps`.
    pub plain_eps_slope: Option<f64>,
    /// `max q / min q` over points above tolerance.
    pub q_ratio: Option<f64>,
    pub bound: Option<BoundCheck>,
    pub criteria: Vec<Criterion>,
}

impl RateReport {
    pub fn all_at_tolerance(&self) -> bool {
        self.points.iter().all(|p| p.at_tolerance)
    }

    pub fn criterion(&self, name: &str) -> Option<&Criterion> {
        self.criteria.iter().find(|c| c.name == name)
    }

    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    /// Columns `epsilon, eps_logeps, sup_error, q_normalized`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["epsilon", "eps_logeps", "sup_error", "q_normalized"])?;
        for p in &self.points {
            wtr.write_record([
                format!("{:.17e}", p.epsilon),
                format!("{:.17e}", p.eps_logeps),
                format!("{:.17e}", p.sup_error),
                format!("{:.17e}", p.q_normalized),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        let v = serde_json::json!({
            "instance": self.instance,
            "theorem_tag": self.theorem.label(),
            "exponent": self.exponent,
            "compact_y": self.compact_y,
            "tol": self.tol,
            "fitted_slope": self.fit.map(|f| f.slope),
            "intercept": self.fit.map(|f| f.intercept),
            "fit_residual": self.fit.map(|f| f.residual),
            "plain_eps_slope": self.plain_eps_slope,
            "q_ratio": self.q_ratio,
            "at_tolerance": self.points.iter().map(|p| p.at_tolerance).collect::<Vec<_>>(),
            "bound_constant": self.bound.as_ref().map(|b| b.k),
            "pass": self.criteria.iter().map(|c| (c.name.clone(), c.passed)).collect::<std::collections::BTreeMap<_, _>>(),
            "criteria": self.criteria,
        });
        Ok(serde_json::to_string_pretty(&v)?)
    }

    /// Writes `<stem>.csv` and `<stem>.json`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join(format!("{stem}.csv")))?)?;
        std::fs::write(dir.join(format!("{stem}.json")), self.summary_json()?)?;
        Ok(())
    }
}

/// Least squares of `log err` against `log(eps |log eps|)`, skipping errors at
/// or below `10 * tol`.
pub fn fit_exponent(eps: &[f64], err: &[f64], tol: f64) -> Result<Fit> {
    if eps.len() != err.len() {
        return Err(Error::FitDegenerate("epsilon and error lists differ in length".into()));
    }
    let pts: Vec<(f64, f64)> = eps
        .iter()
        .zip(err)
        .filter(|(_, &e)| e > AT_TOLERANCE_FACTOR * tol && e.is_finite())
        .map(|(&e, &r)| (eps_log_eps(e).ln(), r.ln()))
        .collect();
    ols(&pts)
}

fn ols(pts: &[(f64, f64)]) -> Result<Fit> {
    if pts.len() < 3 {
        return Err(Error::FitDegenerate(format!(
            "{} usable points, at least 3 required",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::FitDegenerate("abscissae coincide".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    Ok(Fit {
        slope,
        intercept,
        residual: (rss / n).sqrt(),
    })
}

/// Right-hand side shape `(eps (1 + |log eps|))^{beta/2} + eps log(1+|y|^2) + eps^2 |y|^2`.
pub fn pointwise_envelope(eps: f64, beta: f64, y: &[f64]) -> f64 {
    let r2: f64 = y.iter().map(|v| v * v).sum();
    (eps * (1.0 + eps.ln().abs())).powf(beta / 2.0) + eps * (1.0 + r2).ln() + eps * eps * r2
}

/// Fits `K` so that `u^eps - u_rho <= K * envelope` at the first (coarsest)
/// solution, then checks the frozen bound at every later one.
pub fn check_pointwise_bound(
    solutions: &[TwoScaleSolution],
    reference: &DiscreteField,
    beta: f64,
    slack: f64,
) -> Result<BoundCheck> {
    let (first, rest) = solutions
        .split_first()
        .ok_or_else(|| Error::FitDegenerate("pointwise bound needs at least one solution".into()))?;
    let excess = |s: &TwoScaleSolution, k: f64| -> Result<(f64, f64)> {
        let grid = &s.u.grid;
        let n = grid.role_count(AxisRole::Slow);
        if reference.grid.dim() != n {
            return Err(Error::Dimension {
                what: "reference field",
                expected: n,
                got: reference.grid.dim(),
            });
        }
        let mut worst_ratio: f64 = 0.0;
        let mut worst_excess = f64::NEG_INFINITY;
        for (idx, &v) in s.u.values.iter().enumerate() {
            let p = grid.point(idx);
            let diff = v - reference.at_point(&p[..n]);
            let env = pointwise_envelope(s.epsilon, beta, &p[n..]);
            worst_ratio = worst_ratio.max(diff / env);
            worst_excess = worst_excess.max(diff - k * env);
        }
        Ok((worst_ratio, worst_excess))
    };
    let (k, _) = excess(first, 0.0)?;
    let finer = rest
        .iter()
        .map(|s| {
            let (_, e) = excess(s, k)?;
            Ok((s.epsilon, e, e <= slack))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundCheck { k, slack, finer })
}

/// `max |u^eps(x, y) - u(x)|` over slow nodes and fast nodes with `|y| <= compact_y`.
pub fn compact_error(sol: &DiscreteField, effective: &DiscreteField, compact_y: f64) -> f64 {
    let grid = &sol.grid;
    let n = grid.role_count(AxisRole::Slow);
    let mut e: f64 = 0.0;
    for (idx, &v) in sol.values.iter().enumerate() {
        let p = grid.point(idx);
        let r = p[n..].iter().map(|c| c * c).sum::<f64>().sqrt();
        if r <= compact_y * (1.0 + 1e-12) {
            e = e.max((v - effective.at_point(&p[..n])).abs());
        }
    }
    e
}

/// Lambda field computed on the same fast grid the two-scale solve uses, so
/// that discretisation errors in the ergodic constant do not masquerade as a rate.
fn lambda_for(instance: &ProblemInstance, slow: &GridSpec, fast: &GridSpec, method: LambdaMethod) -> Result<LambdaField> {
    let settings = CellSettings {
        fast_grid: fast.clone(),
        schedule: DeltaSchedule::default(),
        mc: Default::default(),
    };
    build_lambda_field(instance, slow, method, &settings)
}

pub fn run_rate_sweep(instance: &ProblemInstance, config: &RateConfig) -> Result<RateReport> {
    config.validate()?;
    instance.validate()?;
    if instance.slow_dim() != 1 || instance.fast_dim() != 1 {
        return Err(Error::config("rate: sweeps are implemented for one slow and one fast dimension"));
    }
    let tag = config.theorem.unwrap_or_else(|| TheoremTag::for_instance(instance));
    let beta = instance.source.beta;
    let p = tag.exponent(beta);
    let opts = config.solve_options();
    let slow = GridSpec::slow_periodic_1d(config.slow_nodes)?;
    let base_fast = GridSpec::fast_1d(config.fast_radius, config.fast_nodes)?;

    let mut cache: Option<(GridSpec, DiscreteField, DiscreteField)> = None;
    let mut points = Vec::with_capacity(config.eps.len());
    let mut kept = Vec::new();
    let mut prev: Option<TwoScaleSolution> = None;
    for &eps in &config.eps {
        let fast = fast_grid_for(&base_fast, eps, config.radius_growth)?;
        if cache.as_ref().map(|c| &c.0) != Some(&fast) {
            let lam = lambda_for(instance, &slow, &fast, config.lambda_method)?;
            let eff = solve_shaken(instance, &lam, 0.0, ShakeMode::Lower, &opts)?.u;
            let reference = if config.shake_radius > 0.0 {
                solve_shaken(instance, &lam, config.shake_radius, ShakeMode::Lower, &opts)?.u
            } else {
                eff.clone()
            };
            cache = Some((fast.clone(), eff, reference));
        }
        let (_, eff, _) = cache.as_ref().expect("filled above");
        let grid = GridSpec::product(&slow, &fast)?;
        let start: Vec<f64> = match &prev {
            Some(s) if s.u.grid == grid => s.u.values.clone(),
            _ => {
                let ny = fast.len();
                eff.values.iter().flat_map(|&v| std::iter::repeat_n(v, ny)).collect()
            }
        };
        let sol = solve_two_scale_from(instance, eps, &grid, &opts, Some(&start))?;
        let e = compact_error(&sol.u, eff, config.compact_y);
        points.push(RatePoint {
            epsilon: eps,
            eps_logeps: eps_log_eps(eps),
            sup_error: e,
            q_normalized: e / eps_log_eps(eps).powf(p),
            at_tolerance: e <= AT_TOLERANCE_FACTOR * opts.tol,
            iterations: sol.iterations,
            residual: sol.residual,
        });
        if config.pointwise_bound {
            kept.push(sol.clone());
        }
        prev = Some(sol);
    }

    let eps: Vec<f64> = points.iter().map(|p| p.epsilon).collect();
    let errs: Vec<f64> = points.iter().map(|p| p.sup_error).collect();
    let fit = fit_exponent(&eps, &errs, opts.tol).ok();
    let plain_eps_slope = ols(
        &points
            .iter()
            .filter(|p| !p.at_tolerance)
            .map(|p| (p.epsilon.ln(), p.sup_error.ln()))
            .collect::<Vec<_>>(),
    )
    .ok()
    .map(|f| f.slope);
    let qs: Vec<f64> = points.iter().filter(|p| !p.at_tolerance).map(|p| p.q_normalized).collect();
    let q_ratio = if qs.len() >= 2 {
        let (lo, hi) = qs.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &q| (a.min(q), b.max(q)));
        Some(hi / lo)
    } else {
        None
    };

    let bound = if config.pointwise_bound {
        let (_, _, reference) = cache.as_ref().expect("at least one epsilon");
        Some(check_pointwise_bound(&kept, reference, beta, 2.0 * opts.tol)?)
    } else {
        None
    };

    let mut criteria = Vec::new();
    if points.iter().all(|p| p.at_tolerance) {
        criteria.push(Criterion {
            name: "at-tolerance".into(),
            passed: true,
            detail: format!("every error is at most {AT_TOLERANCE_FACTOR} x tol"),
        });
    } else {
        let min_slope = tag.min_slope(beta);
        criteria.push(match fit {
            Some(f) => Criterion {
                name: "slope".into(),
                passed: f.slope >= min_slope,
                detail: format!("fitted slope {:.4} (need >= {min_slope:.4})", f.slope),
            },
            None => Criterion {
                name: "slope".into(),
                passed: false,
                detail: "fewer than three points above tolerance".into(),
            },
        });
        criteria.push(Criterion {
            name: "q-ratio".into(),
            passed: q_ratio.is_some_and(|r| r <= 5.0),
            detail: format!("max/min of q with p = {p} is {q_ratio:?} (need <= 5)"),
        });
        let q0 = points[0].q_normalized;
        let worst = points.iter().map(|p| p.q_normalized).fold(0.0, f64::max);
        criteria.push(Criterion {
            name: "one-sided".into(),
            passed: worst <= 5.0 * q0,
            detail: format!("max q {worst:.4e} vs 5 x coarsest q {:.4e}", 5.0 * q0),
        });
    }
    if let Some(b) = &bound {
        criteria.push(Criterion {
            name: "pointwise-bound".into(),
            passed: b.passed(),
            detail: format!("K = {:.4e} frozen at the coarsest epsilon", b.k),
        });
    }

    Ok(RateReport {
        instance: instance.name.clone(),
        theorem: tag,
        exponent: p,
        compact_y: config.compact_y,
        tol: opts.tol,
        points,
        fit,
        plain_eps_slope,
        q_ratio,
        bound,
        criteria,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::fixture;

    #[test]
    fn exact_power_laws() {
        let eps: Vec<f64> = (3..=9).map(|k| 2f64.powi(-k)).collect();
        let e: Vec<f64> = eps.iter().map(|&x| eps_log_eps(x).sqrt()).collect();
        let f = fit_exponent(&eps, &e, 1e-8).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-12 && f.residual < 1e-12);
        let e: Vec<f64> = eps.iter().map(|&x| 3.0 * eps_log_eps(x)).collect();
        let f = fit_exponent(&eps, &e, 1e-8).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn fit_needs_three_points_above_tolerance() {
        let eps = [0.1, 0.05, 0.025, 0.0125];
        let e = [1e-3, 1e-4, 5e-8, 1e-9];
        assert!(matches!(fit_exponent(&eps, &e, 1e-8), Err(Error::FitDegenerate(_))));
    }

    #[test]
    fn envelope_largest_at_edge() {
        let eps = 0.125;
        let ys: Vec<f64> = (0..=160).map(|i| -8.0 + 0.1 * i as f64).collect();
        let vals: Vec<f64> = ys.iter().map(|&y| pointwise_envelope(eps, 0.5, &[y])).collect();
        let imax = vals
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!(ys[imax].abs() > 7.99);
        // the quadratic term is the largest of the three there
        assert!(eps * eps * 64.0 > eps * 65f64.ln());
    }

    #[test]
    fn tags() {
        assert_eq!(TheoremTag::for_instance(&fixture("separated-c2").unwrap()), TheoremTag::Smooth);
        assert_eq!(TheoremTag::for_instance(&fixture("separated-lip").unwrap()), TheoremTag::LipschitzHalf);
        assert_eq!(TheoremTag::for_instance(&fixture("holder-beta").unwrap()), TheoremTag::GeneralBetaHalf);
        assert_eq!(TheoremTag::GeneralBetaHalf.min_slope(0.5), 0.15);
        assert_eq!("smooth-1".parse::<TheoremTag>().unwrap(), TheoremTag::Smooth);
    }

    #[test]
    fn config_validation() {
        let c = RateConfig::default();
        assert!(c.validate().is_ok());
        assert!(RateConfig { eps: vec![0.5], ..c.clone() }.validate().is_err());
        assert!(RateConfig { eps: vec![0.1, 0.2], ..c.clone() }.validate().is_err());
        assert!(RateConfig { compact_y: 9.0, ..c }.validate().is_err());
    }

    #[test]
    fn slow_only_is_at_tolerance() {
        let p = fixture("slow-only").unwrap();
        let c = RateConfig {
            eps: vec![0.125, 0.0625, 0.03125],
            slow_nodes: 32,
            fast_nodes: 41,
            ..RateConfig::default()
        };
        let r = run_rate_sweep(&p, &c).unwrap();
        assert!(r.all_at_tolerance());
        assert!(r.passed());
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next().unwrap(), "epsilon,eps_logeps,sup_error,q_normalized");
    }

    #[test]
    fn constant_source_bound_has_zero_constant() {
        let p = fixture("slow-only").unwrap();
        let p = p.with_source(
            "const",
            crate::problem::SourceTerm {
                terms: vec![crate::problem::SeparatedTerm {
                    h: crate::problem::Func::constant(0.3),
                    g: crate::problem::Func::constant(1.0),
                }],
                ..p.source.clone()
            },
        );
        let c = RateConfig {
            eps: vec![0.125, 0.0625],
            slow_nodes: 16,
            fast_nodes: 31,
            pointwise_bound: true,
            ..RateConfig::default()
        };
        let r = run_rate_sweep(&p, &c).unwrap();
        let b = r.bound.unwrap();
        assert!(b.k <= 1e-7 && b.passed());
    }
}
