//! Ergodic averages of the fast diffusion `dY = -(alpha Y + b(Y)) dt + sqrt(2) tau(Y) dW`,
//! whose generator is `-L`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::problem::{FastOperatorSpec, ProblemInstance};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub dt: f64,
    pub burn_in: usize,
    pub sample_steps: usize,
    pub chains: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            dt: 1e-3,
            burn_in: 100_000,
            sample_steps: 4_000_000,
            chains: 16,
            seed: 20_240_901,
        }
    }
}

pub const MIN_SAMPLE_STEPS: usize = 10_000;

impl McConfig {
    pub fn validate(&self, alpha: f64) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("mc.dt must be positive"));
        }
        if !(self.dt * alpha < 1.0) {
            return Err(Error::config(format!(
                "mc.dt: explicit step needs dt * alpha < 1 (got {})",
                self.dt * alpha
            )));
        }
        if self.sample_steps < MIN_SAMPLE_STEPS {
            return Err(Error::config(format!("mc.sample_steps must be at least {MIN_SAMPLE_STEPS}")));
        }
        if self.chains < 2 {
            return Err(Error::config("mc.chains: at least two chains are needed for a standard error"));
        }
        Ok(())
    }
}

/// Mean over chains with the between-chain standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathSummary {
    pub chains: usize,
    pub steps: usize,
    /// Per axis.
    pub mean: Vec<Estimate>,
    /// `E Y_k^2` per axis.
    pub second_moment: Vec<Estimate>,
    pub functional: Estimate,
}

/// Running mean and variance.
#[derive(Clone, Copy, Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    #[inline]
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn estimate(&self) -> Estimate {
        let var = if self.n > 1 { self.m2 / (self.n - 1) as f64 } else { 0.0 };
        Estimate {
            value: self.mean,
            stderr: (var.max(0.0) / self.n as f64).sqrt(),
        }
    }
}

struct ChainResult {
    mean: Vec<Welford>,
    sq: Vec<Welford>,
    fun: Welford,
}

fn run_chain<G>(spec: &FastOperatorSpec, cfg: &McConfig, y0: &[f64], chain: usize, g: &G) -> Result<ChainResult>
where
    G: Fn(&[f64]) -> f64,
{
    let m = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64);
    let mut y = y0.to_vec();
    let mut next = vec![0.0; m];
    let mut xi = vec![0.0; m];
    let noise = (2.0 * cfg.dt).sqrt();
    let mut out = ChainResult {
        mean: vec![Welford::default(); m],
        sq: vec![Welford::default(); m],
        fun: Welford::default(),
    };
    for step in 0..cfg.burn_in + cfg.sample_steps {
        for v in xi.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        for i in 0..m {
            let drift = spec.alpha * y[i] + spec.drift[i].eval(&y);
            let mut diff = 0.0;
            for j in 0..m {
                diff += spec.tau[i * m + j].eval(&y) * xi[j];
            }
            next[i] = y[i] - drift * cfg.dt + noise * diff;
        }
        std::mem::swap(&mut y, &mut next);
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::Simulation { chain, step });
        }
        if step >= cfg.burn_in {
            for i in 0..m {
                out.mean[i].push(y[i]);
                out.sq[i].push(y[i] * y[i]);
            }
            out.fun.push(g(&y));
        }
    }
    Ok(out)
}

/// Across-chain reduction of per-chain means, in chain order.
fn between(chain_means: impl Iterator<Item = f64>) -> Estimate {
    let mut w = Welford::default();
    for v in chain_means {
        w.push(v);
    }
    w.estimate()
}

/// Simulates `config.chains` independent Euler paths from `y0` and returns
/// post-burn-in moments together with the ergodic average of `functional`.
pub fn simulate_path<G>(spec: &FastOperatorSpec, config: &McConfig, y0: &[f64], functional: G) -> Result<PathSummary>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    spec.validate()?;
    config.validate(spec.alpha)?;
    if y0.len() != spec.dim {
        return Err(Error::Dimension {
            what: "initial state",
            expected: spec.dim,
            got: y0.len(),
        });
    }
    let results = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(spec, config, y0, c, &functional))
        .collect::<Result<Vec<_>>>()?;
    let m = spec.dim;
    Ok(PathSummary {
        chains: config.chains,
        steps: config.sample_steps,
        mean: (0..m).map(|i| between(results.iter().map(|r| r.mean[i].mean))).collect(),
        second_moment: (0..m).map(|i| between(results.iter().map(|r| r.sq[i].mean))).collect(),
        functional: between(results.iter().map(|r| r.fun.mean)),
    })
}

/// Ergodic average of `f(x, .)` along the fast diffusion started at the origin.
pub fn lambda_mc(instance: &ProblemInstance, x: &[f64], config: &McConfig) -> Result<Estimate> {
    instance.validate()?;
    if x.len() != instance.slow_dim() {
        return Err(Error::Dimension {
            what: "slow point",
            expected: instance.slow_dim(),
            got: x.len(),
        });
    }
    let y0 = vec![0.0; instance.fast_dim()];
    let s = simulate_path(&instance.fast, config, &y0, |y| instance.source.eval(x, y))?;
    if !(s.functional.value.is_finite() && s.functional.stderr.is_finite()) {
        return Err(Error::Evaluation {
            what: "f along the simulated path".into(),
            point: x.to_vec(),
        });
    }
    Ok(s.functional)
}

#[derive(Serialize)]
struct McReport<'a> {
    x: &'a [f64],
    lambda: f64,
    stderr: f64,
    chains: usize,
    steps: usize,
    seed: u64,
}

/// JSON record `{lambda, stderr, chains, steps, seed}` (plus the slow point).
pub fn report_json(x: &[f64], est: &Estimate, config: &McConfig) -> Result<String> {
    Ok(serde_json::to_string_pretty(&McReport {
        x,
        lambda: est.value,
        stderr: est.stderr,
        chains: config.chains,
        steps: config.sample_steps,
        seed: config.seed,
    })?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{fixture, Func, SeparatedTerm};

    fn quick() -> McConfig {
        McConfig {
            burn_in: 5_000,
            sample_steps: 200_000,
            chains: 8,
            ..McConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        let ok = McConfig::default();
        assert!(ok.validate(1.0).is_ok());
        assert!(McConfig { dt: 0.5, ..ok.clone() }.validate(2.0).is_err());
        assert!(McConfig { sample_steps: 9_999, ..ok.clone() }.validate(1.0).is_err());
        assert!(McConfig { chains: 1, ..ok }.validate(1.0).is_err());
    }

    #[test]
    fn constant_functional_is_exact() {
        let mut p = fixture("ou-cos").unwrap();
        p.source.terms = vec![SeparatedTerm {
            h: Func::constant(1.0),
            g: Func::constant(0.3),
        }];
        let e = lambda_mc(&p, &[0.0], &quick()).unwrap();
        assert_eq!(e.value, 0.3);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn seed_determinism() {
        let p = fixture("ou-cos").unwrap();
        let a = lambda_mc(&p, &[0.0], &quick()).unwrap();
        let b = lambda_mc(&p, &[0.0], &quick()).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        let c = lambda_mc(&p, &[0.0], &McConfig { seed: 7, ..quick() }).unwrap();
        assert_ne!(a.value, c.value);
    }

    #[test]
    fn shifted_mean() {
        let spec = FastOperatorSpec {
            drift: vec![Func::constant(1.0)],
            b_sup: 1.0,
            ..FastOperatorSpec::ornstein_uhlenbeck(1, 1.0, 1.0)
        };
        let s = simulate_path(&spec, &quick(), &[0.0], |_| 0.0).unwrap();
        let m = s.mean[0];
        assert!((m.value + 1.0).abs() <= 3.0 * m.stderr + 1e-3, "{m:?}");
    }

    #[test]
    fn blow_up_is_reported() {
        let spec = FastOperatorSpec {
            tau: vec![Func::constant(1e308)],
            tau_sup: 1e308,
            ..FastOperatorSpec::ornstein_uhlenbeck(1, 1.0, 1.0)
        };
        let e = simulate_path(&spec, &quick(), &[0.0], |_| 0.0).unwrap_err();
        assert!(matches!(e, Error::Simulation { .. }), "{e}");
    }

    #[test]
    fn json_fields() {
        let est = Estimate { value: 0.6, stderr: 0.001 };
        let v: serde_json::Value = serde_json::from_str(&report_json(&[0.0], &est, &quick()).unwrap()).unwrap();
        for k in ["lambda", "stderr", "chains", "steps", "seed"] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }
}
