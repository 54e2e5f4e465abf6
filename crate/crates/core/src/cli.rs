//! Command-line entry point and run configuration.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::cell::{solve_cell, DeltaSchedule};
use crate::effective::{build_lambda_field, solve_shaken, CellSettings, LambdaMethod, ShakeMode};
use crate::ergodic_mc::{lambda_mc, report_json, McConfig};
use crate::grid::GridSpec;
use crate::harness::{run_rate_sweep, RateConfig, TheoremTag};
use crate::problem::{check_assumptions, fixture, ProblemInstance};
use crate::twoscale::{fast_grid_for, solve_two_scale, RadiusGrowth};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NONCONVERGENCE: i32 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    /// Name of a built-in instance; ignored when `inline` is present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inline: Option<ProblemInstance>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub slow_nodes: usize,
    pub fast_nodes: usize,
    pub fast_radius: f64,
    pub radius_growth: RadiusGrowth,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            slow_nodes: 201,
            fast_nodes: 201,
            fast_radius: 8.0,
            radius_growth: RadiusGrowth::Fixed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscountSection {
    pub start: f64,
    pub factor: f64,
    pub floor: f64,
    pub cauchy_tol: f64,
}

impl Default for DiscountSection {
    fn default() -> Self {
        DiscountSection {
            start: 1e-1,
            factor: 0.5,
            floor: 1e-4,
            cauchy_tol: 1e-4,
        }
    }
}

impl DiscountSection {
    pub fn schedule(&self) -> Result<DeltaSchedule> {
        let mut s = DeltaSchedule::geometric(self.start, self.factor, self.floor)?;
        s.cauchy_tol = self.cauchy_tol;
        s.validate()?;
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub dt: f64,
    pub burn_in: usize,
    pub sample_steps: usize,
    pub chains: usize,
}

impl Default for McSection {
    fn default() -> Self {
        let d = McConfig::default();
        McSection {
            dt: d.dt,
            burn_in: d.burn_in,
            sample_steps: d.sample_steps,
            chains: d.chains,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateSection {
    pub eps: Vec<f64>,
    pub compact_y: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theorem: Option<TheoremTag>,
    pub lambda_method: LambdaMethod,
    pub tol: f64,
    pub max_iter: usize,
    pub shake_radius: f64,
    pub pointwise_bound: bool,
}

impl Default for RateSection {
    fn default() -> Self {
        let d = RateConfig::default();
        RateSection {
            eps: d.eps,
            compact_y: d.compact_y,
            theorem: d.theorem,
            lambda_method: d.lambda_method,
            tol: d.tol,
            max_iter: d.max_iter,
            shake_radius: d.shake_radius,
            pointwise_bound: d.pointwise_bound,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub problem: ProblemSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub discount: DiscountSection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub rate: RateSection,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_seed() -> u64 {
    McConfig::default().seed
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output: default_output(),
            seed: default_seed(),
            problem: ProblemSection {
                fixture: Some("ou-cos".into()),
                inline: None,
            },
            grid: GridSection::default(),
            discount: DiscountSection::default(),
            mc: McSection::default(),
            rate: RateSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(s).map_err(|e| Error::config(format!("config: {}", e.message())))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("config: cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn instance(&self) -> Result<ProblemInstance> {
        match (&self.problem.inline, &self.problem.fixture) {
            (Some(p), _) => {
                p.validate()?;
                Ok(p.clone())
            }
            (None, Some(name)) => fixture(name),
            (None, None) => Err(Error::config("problem: set either problem.fixture or problem.inline")),
        }
    }

    pub fn slow_grid(&self) -> Result<GridSpec> {
        GridSpec::slow_periodic_1d(self.grid.slow_nodes)
            .map_err(|e| Error::config(format!("grid.slow_nodes: {e}")))
    }

    pub fn fast_grid(&self) -> Result<GridSpec> {
        GridSpec::fast_1d(self.grid.fast_radius, self.grid.fast_nodes)
            .map_err(|e| Error::config(format!("grid.fast_nodes/fast_radius: {e}")))
    }

    pub fn mc_config(&self) -> McConfig {
        McConfig {
            dt: self.mc.dt,
            burn_in: self.mc.burn_in,
            sample_steps: self.mc.sample_steps,
            chains: self.mc.chains,
            seed: self.seed,
        }
    }

    pub fn rate_config(&self) -> RateConfig {
        RateConfig {
            eps: self.rate.eps.clone(),
            slow_nodes: self.grid.slow_nodes,
            fast_nodes: self.grid.fast_nodes,
            fast_radius: self.grid.fast_radius,
            compact_y: self.rate.compact_y,
            theorem: self.rate.theorem,
            lambda_method: self.rate.lambda_method,
            tol: self.rate.tol,
            max_iter: self.rate.max_iter,
            radius_growth: self.grid.radius_growth,
            shake_radius: self.rate.shake_radius,
            pointwise_bound: self.rate.pointwise_bound,
        }
    }

    pub fn cell_settings(&self) -> Result<CellSettings> {
        Ok(CellSettings {
            fast_grid: self.fast_grid()?,
            schedule: self.discount.schedule()?,
            mc: self.mc_config(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.instance()?;
        self.slow_grid()?;
        self.fast_grid()?.check_inward_drift(&p.fast)?;
        self.discount.schedule()?;
        self.mc_config().validate(p.fast.alpha)?;
        self.rate_config().validate()
    }
}

/// Parses `start:ratio:count` (ratio may be written `2^-1`) or a comma list.
pub fn parse_eps(s: &str) -> Result<Vec<f64>> {
    let num = |t: &str| -> Result<f64> {
        let t = t.trim();
        if let Some((b, e)) = t.split_once('^') {
            let b: f64 = b.parse().map_err(|_| Error::config(format!("--eps: bad base '{b}'")))?;
            let e: f64 = e.parse().map_err(|_| Error::config(format!("--eps: bad exponent '{e}'")))?;
            return Ok(b.powf(e));
        }
        t.parse().map_err(|_| Error::config(format!("--eps: bad number '{t}'")))
    };
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [start, ratio, count] => {
            let (start, ratio) = (num(start)?, num(ratio)?);
            let count: usize = count
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("--eps: bad count '{count}'")))?;
            if !(ratio > 0.0 && ratio < 1.0) || count == 0 {
                return Err(Error::config("--eps: ratio must lie in (0, 1) and count be positive"));
            }
            Ok((0..count).map(|k| start * ratio.powi(k as i32)).collect())
        }
        [list] => list.split(',').map(num).collect(),
        _ => Err(Error::config("--eps: expected start:ratio:count or a comma list")),
    }
}

#[derive(Parser, Debug)]
#[command(name = "ouhjb", version, about = "Two-scale HJB equations with an Ornstein-Uhlenbeck fast variable")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in problem instance (overrides the configuration).
    #[arg(long)]
    fixture: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    slow_nodes: Option<usize>,
    #[arg(long)]
    fast_nodes: Option<usize>,
    #[arg(long)]
    fast_radius: Option<f64>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Report which standing assumptions hold.
    Check {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
    },
    /// Corrector and ergodic constant at one slow point.
    Cell {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "0")]
        x: String,
    },
    /// Ergodic constant by simulation.
    LambdaMc {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "0")]
        x: String,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Two-scale solve at one epsilon.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        eps: f64,
    },
    /// Lambda field, effective solution and shaken solutions.
    Effective {
        #[command(flatten)]
        common: Common,
        /// Shaking radii; both modes are solved for each.
        #[arg(long, value_delimiter = ',', default_value = "0.2,0.1,0.05")]
        rho: Vec<f64>,
        #[arg(long)]
        method: Option<String>,
    },
    /// Epsilon sweep and rate fit.
    Rate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        eps: Option<String>,
        #[arg(long)]
        theorem: Option<String>,
        #[arg(long)]
        pointwise_bound: bool,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Check { common, .. }
            | Command::Cell { common, .. }
            | Command::LambdaMc { common, .. }
            | Command::Solve { common, .. }
            | Command::Effective { common, .. }
            | Command::Rate { common, .. } => common,
        }
    }
}

fn build_config(cmd: &Command) -> Result<RunConfig> {
    let c = cmd.common();
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(f) = &c.fixture {
        cfg.problem = ProblemSection {
            fixture: Some(f.clone()),
            inline: None,
        };
    }
    if let Some(o) = &c.out {
        cfg.output = o.clone();
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(n) = c.slow_nodes {
        cfg.grid.slow_nodes = n;
    }
    if let Some(n) = c.fast_nodes {
        cfg.grid.fast_nodes = n;
    }
    if let Some(r) = c.fast_radius {
        cfg.grid.fast_radius = r;
    }
    match cmd {
        Command::LambdaMc { chains, steps, .. } => {
            if let Some(n) = chains {
                cfg.mc.chains = *n;
            }
            if let Some(n) = steps {
                cfg.mc.sample_steps = *n;
            }
        }
        Command::Effective { method: Some(m), .. } => cfg.rate.lambda_method = m.parse()?,
        Command::Rate {
            eps,
            theorem,
            pointwise_bound,
            ..
        } => {
            if let Some(e) = eps {
                cfg.rate.eps = parse_eps(e)?;
            }
            if let Some(t) = theorem {
                cfg.rate.theorem = Some(t.parse()?);
            }
            if *pointwise_bound {
                cfg.rate.pointwise_bound = true;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_point(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::config(format!("--x: bad coordinate '{t}'")))
        })
        .collect()
}

fn run(cmd: Command, out: &mut dyn std::io::Write) -> Result<i32> {
    let cfg = build_config(&cmd)?;
    if cmd.common().dump_config {
        write!(out, "{}", cfg.to_toml_string()?)?;
        return Ok(EXIT_OK);
    }
    let instance = cfg.instance()?;
    let dir = cfg.output.clone();
    match cmd {
        Command::Check { samples, .. } => {
            let report = check_assumptions(&instance, samples)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            Ok(if report.h2_ok() { EXIT_OK } else { EXIT_CONFIG })
        }
        Command::Cell { x, .. } => {
            let x = parse_point(&x)?;
            let sol = solve_cell(&instance, &x, &cfg.fast_grid()?, &cfg.discount.schedule()?)?;
            sol.write(&dir, "cell")?;
            writeln!(out, "{}", sol.sidecar_json()?)?;
            Ok(EXIT_OK)
        }
        Command::LambdaMc { x, .. } => {
            let x = parse_point(&x)?;
            let mc = cfg.mc_config();
            let est = lambda_mc(&instance, &x, &mc)?;
            let json = report_json(&x, &est, &mc)?;
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("lambda_mc.json"), &json)?;
            writeln!(out, "{json}")?;
            Ok(EXIT_OK)
        }
        Command::Solve { eps, .. } => {
            let fast = fast_grid_for(&cfg.fast_grid()?, eps, cfg.grid.radius_growth)?;
            let grid = GridSpec::product(&cfg.slow_grid()?, &fast)?;
            let sol = solve_two_scale(&instance, eps, &grid, &cfg.rate_config().solve_options())?;
            sol.write(&dir, "twoscale")?;
            writeln!(out, "{}", sol.summary_json()?)?;
            Ok(EXIT_OK)
        }
        Command::Effective { rho, .. } => {
            let opts = cfg.rate_config().solve_options();
            let lam = build_lambda_field(&instance, &cfg.slow_grid()?, cfg.rate.lambda_method, &cfg.cell_settings()?)?;
            std::fs::create_dir_all(&dir)?;
            lam.write_csv_file(&dir.join("lambda.csv"))?;
            let plain = solve_shaken(&instance, &lam, 0.0, ShakeMode::Lower, &opts)?;
            plain.u.write_csv_file(&dir.join("effective.csv"))?;
            let mut gaps = Vec::new();
            for r in rho {
                let lo = solve_shaken(&instance, &lam, r, ShakeMode::Lower, &opts)?;
                let up = solve_shaken(&instance, &lam, r, ShakeMode::Upper, &opts)?;
                lo.u.write_csv_file(&dir.join(format!("shaken_lower_{r}.csv")))?;
                up.u.write_csv_file(&dir.join(format!("shaken_upper_{r}.csv")))?;
                gaps.push(serde_json::json!({"rho": r, "gap": lo.u.sup_distance(&up.u)}));
            }
            let summary = serde_json::json!({
                "method": cfg.rate.lambda_method.label(),
                "lambda_sup": lam.sup_norm(),
                "residual": plain.residual,
                "iters": plain.iterations,
                "shaken": gaps,
            });
            let s = serde_json::to_string_pretty(&summary)?;
            std::fs::write(dir.join("effective.json"), &s)?;
            writeln!(out, "{s}")?;
            Ok(EXIT_OK)
        }
        Command::Rate { .. } => {
            let report = run_rate_sweep(&instance, &cfg.rate_config())?;
            report.write(&dir, "rate")?;
            writeln!(out, "{}", report.summary_json()?)?;
            Ok(EXIT_OK)
        }
    }
}

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    dispatch_to(args, &mut std::io::stdout())
}

pub fn dispatch_to<I, T>(args: I, out: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(cli.cmd, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_non_convergence() {
                EXIT_NONCONVERGENCE
            } else {
                EXIT_CONFIG
            }
        }
    }
}
