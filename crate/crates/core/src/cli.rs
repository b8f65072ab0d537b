//! The `gnormal` command line.
//!
//! Settings are resolved in three layers: built-in defaults, an optional JSON
//! [`RunConfig`] (`--config`), then command-line flags. The resolved configuration
//! is validated in full before any computation starts.
//!
//! Exit codes: 0 pass, 1 verification failure, 2 usage or configuration error,
//! 3 numerical-contract violation (CFL, unbounded data, leakage, overflow).
//!
//! All randomness comes from `--seed`: Monte Carlo path `j` draws from ChaCha8
//! stream `j` of that seed.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::Error;
use crate::gcore::{self, GParams, Grid, Measure};
use crate::gheat::{self, SolveConfig};
use crate::oracle::{self, LatticeConfig};
use crate::realize::{self, McOptions, RealizeOptions};
use crate::stein::{self, SteinReport};
use crate::testfns::{self, EigenSign, Parity, PhiBeta, Table, TestFunction};

/// Version of every JSON document written by the CLI.
pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SEED: u64 = 20240601;
/// Monte Carlo paths used by `selftest` when none are configured.
pub const SELFTEST_MC_PATHS: usize = 100_000;
/// Spacing used by `selftest` when none is configured.
pub const SELFTEST_DX: f64 = 0.02;

#[derive(Debug, Parser)]
#[command(name = "gnormal", version, about = "G-normal expectations, realizations and Stein-type checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print N_G[phi].
    Expectation(Common),
    /// Solve the G-heat equation and optionally dump the field.
    Solve(Common),
    /// Compute the realization measure of phi.
    Realize(RealizeArgs),
    /// Run the Stein-identity checks on one function or the whole battery.
    SteinCheck(SteinArgs),
    /// Integrate an eigen-ODE and tabulate the solution.
    Eigen(EigenArgs),
    /// Compare the lattice recursion with the PDE value.
    Oracle(OracleArgs),
    /// Run every verification suite at reduced resolution.
    Selftest(Common),
    /// Bundle earlier outputs with plotting tables.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Volatility band.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub sigma: Option<Vec<f64>>,
    /// Battery name, `const:<c>`, or `@file.csv` with columns x,f,df,d2f.
    #[arg(long)]
    pub phi: Option<String>,
    #[arg(long)]
    pub dx: Option<f64>,
    /// Explicit time step (checked against the CFL bound).
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long = "t-max")]
    pub t_max: Option<f64>,
    /// Half width of the spatial domain.
    #[arg(long)]
    pub xmax: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "mc-paths", visible_alias = "mc")]
    pub mc_paths: Option<usize>,
    /// Write the machine-readable result here.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long = "dump-grid")]
    pub dump_grid: Option<PathBuf>,
    /// Keep every K-th stored level in the field dump.
    #[arg(long)]
    pub stride: Option<usize>,
    /// JSON run configuration; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the resolved configuration in canonical form.
    #[arg(long = "save-config")]
    pub save_config: Option<PathBuf>,
    /// Record wall-clock fields as 0 so that outputs are byte-reproducible.
    #[arg(long)]
    pub reproducible: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RealizeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Measure CSV (point, weight).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SteinArgs {
    #[command(flatten)]
    pub common: Common,
    /// Check every battery member.
    #[arg(long, conflicts_with = "phi")]
    pub all: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SignArg {
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ParityArg {
    Even,
    Odd,
}

#[derive(Debug, Clone, Args)]
pub struct EigenArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub rho: f64,
    #[arg(long, value_enum, default_value = "minus")]
    pub sign: SignArg,
    #[arg(long, value_enum, default_value = "even")]
    pub parity: ParityArg,
    /// Number of RK4 steps across the interval.
    #[arg(long, default_value_t = 4000)]
    pub n: usize,
    /// Table CSV (x, f, df, d2f).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 400)]
    pub steps: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: Common,
    /// Earlier outputs: JSON documents and CSV dumps.
    #[arg(long = "from", num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    /// Bundle directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridOverrides {
    pub dx: Option<f64>,
    pub dt: Option<f64>,
    pub t_max: Option<f64>,
    pub x_max: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    pub json: Option<PathBuf>,
    pub dump_grid: Option<PathBuf>,
    pub stride: Option<usize>,
}

/// Everything a run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    #[serde(default)]
    pub grid: GridOverrides,
    /// Test functions to run; empty selects the standard battery (or `phi_beta`
    /// for single-function commands).
    #[serde(default)]
    pub battery: Vec<String>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub mc_paths: Option<usize>,
    #[serde(default)]
    pub outputs: Outputs,
    /// Multiplies the grid-derived verification tolerances.
    #[serde(default = "unit")]
    pub tolerance_scale: f64,
    #[serde(default)]
    pub reproducible: bool,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn unit() -> f64 {
    1.0
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            sigma_lo: 1.0,
            sigma_hi: 2.0,
            grid: GridOverrides::default(),
            battery: Vec::new(),
            seed: DEFAULT_SEED,
            mc_paths: None,
            outputs: Outputs::default(),
            tolerance_scale: 1.0,
            reproducible: false,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| CliError::Usage(format!("config: {e}")))?;
        if cfg.schema != SCHEMA_VERSION {
            return Err(CliError::Usage(format!(
                "config schema {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema
            )));
        }
        Ok(cfg)
    }

    /// Pretty JSON with a fixed field order and a trailing newline.
    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Applies command-line flags on top of this configuration.
    pub fn merge(mut self, c: &Common) -> Result<Self, CliError> {
        if let Some(s) = &c.sigma {
            self.sigma_lo = s[0];
            self.sigma_hi = s[1];
        }
        if let Some(phi) = &c.phi {
            self.battery = vec![phi.clone()];
        }
        let g = &mut self.grid;
        g.dx = c.dx.or(g.dx);
        g.dt = c.dt.or(g.dt);
        g.t_max = c.t_max.or(g.t_max);
        g.x_max = c.xmax.or(g.x_max);
        self.seed = c.seed.unwrap_or(self.seed);
        self.mc_paths = c.mc_paths.or(self.mc_paths);
        let o = &mut self.outputs;
        o.json = c.json.clone().or(o.json.take());
        o.dump_grid = c.dump_grid.clone().or(o.dump_grid.take());
        o.stride = c.stride.or(o.stride);
        self.reproducible |= c.reproducible;
        Ok(self)
    }

    pub fn params(&self) -> Result<GParams, CliError> {
        Ok(GParams::new(self.sigma_lo, self.sigma_hi)?)
    }

    /// The solver configuration, with `default_dx` used when no spacing is set.
    pub fn solve_config(&self, default_dx: f64) -> Result<SolveConfig, CliError> {
        let p = self.params()?;
        let g = &self.grid;
        let half = g.x_max.unwrap_or_else(|| gcore::default_half_width(&p));
        let mut grid = Grid::symmetric(
            &p,
            half,
            g.dx.unwrap_or(default_dx),
            g.t_max.unwrap_or(gcore::DEFAULT_T_MAX),
            gcore::DEFAULT_CFL_SAFETY,
        )?;
        if let Some(dt) = g.dt {
            grid.dt = dt;
        }
        let cfg = SolveConfig::from_grid(grid);
        cfg.validate(&p)?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if !(self.tolerance_scale > 0.0) || !self.tolerance_scale.is_finite() {
            return Err(CliError::Usage(format!(
                "tolerance_scale must be positive, got {}",
                self.tolerance_scale
            )));
        }
        if self.mc_paths == Some(0) {
            return Err(CliError::Usage("mc_paths must be at least 1".into()));
        }
        if self.outputs.stride == Some(0) {
            return Err(CliError::Usage("stride must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Numerics(#[from] Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Numerics(e) if e.is_numerical_contract() => 3,
            _ => 2,
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: &Command) -> Result<(), CliError> {
    match cmd {
        Command::Expectation(c) => cmd_expectation(c),
        Command::Solve(c) => cmd_solve(c),
        Command::Realize(a) => cmd_realize(a),
        Command::SteinCheck(a) => cmd_stein_check(a),
        Command::Eigen(a) => cmd_eigen(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Selftest(c) => cmd_selftest(c),
        Command::Report(a) => cmd_report(a),
    }
}

/// Loads `--config` (if any), merges the flags and validates the result.
pub fn resolve(c: &Common) -> Result<RunConfig, CliError> {
    let base = match &c.config {
        Some(path) => RunConfig::from_json(&read_text(path)?)?,
        None => RunConfig::default(),
    };
    let cfg = base.merge(c)?;
    cfg.validate()?;
    cfg.params()?;
    if let Some(path) = &c.save_config {
        fs::write(path, cfg.to_canonical_json())?;
    }
    Ok(cfg)
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Resolves a `--phi` argument.
pub fn resolve_phi(arg: &str, p: &GParams) -> Result<TestFunction, CliError> {
    match arg.strip_prefix('@') {
        Some(path) => {
            let path = Path::new(path);
            let file = fs::File::open(path)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let table = Table::read_csv(file)?;
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "tabulated".into());
            Ok(TestFunction::tabulated(name, table))
        }
        None => Ok(testfns::by_name(arg, p)?),
    }
}

fn single_phi(cfg: &RunConfig, p: &GParams) -> Result<TestFunction, CliError> {
    match cfg.battery.as_slice() {
        [] => Ok(TestFunction::phi_beta(p)?),
        [one] => resolve_phi(one, p),
        _ => Err(CliError::Usage("this command takes a single --phi".into())),
    }
}

fn battery(cfg: &RunConfig, p: &GParams) -> Result<Vec<TestFunction>, CliError> {
    if cfg.battery.is_empty() {
        return Ok(testfns::standard_battery(p)?);
    }
    cfg.battery.iter().map(|s| resolve_phi(s, p)).collect()
}

fn write_json(path: &Path, v: &Value) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(v).expect("json serializes");
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn grid_json(grid: &Grid) -> Value {
    serde_json::to_value(grid).expect("grid serializes")
}

fn cmd_expectation(c: &Common) -> Result<(), CliError> {
    let cfg = resolve(c)?;
    let p = cfg.params()?;
    let solve = cfg.solve_config(gcore::DEFAULT_DX)?;
    let phi = single_phi(&cfg, &p)?;
    let start = Instant::now();
    let value = gheat::g_normal_expectation(&phi, &p, &solve)?;
    let runtime_ms = if cfg.reproducible { 0 } else { start.elapsed().as_millis() as u64 };
    println!("N_G[{}] = {value}", phi.name());
    if let Some(path) = &cfg.outputs.json {
        write_json(
            path,
            &json!({
                "schema": SCHEMA_VERSION,
                "phi": phi.name(),
                "sigma_lo": p.sigma_lo(),
                "sigma_hi": p.sigma_hi(),
                "value": value,
                "grid": grid_json(&solve.grid),
                "runtime_ms": runtime_ms,
            }),
        )?;
    }
    Ok(())
}

fn cmd_solve(c: &Common) -> Result<(), CliError> {
    let cfg = resolve(c)?;
    let p = cfg.params()?;
    let solve = cfg.solve_config(gcore::DEFAULT_DX)?;
    let phi = single_phi(&cfg, &p)?;
    let field = gheat::solve_g_heat(&phi, &p, &solve)?;
    let t = solve.grid.t_max.min(1.0);
    let value = field.at(t, 0.0)?;
    println!("u({t}, 0) = {value} ({} stored levels)", field.n_levels());
    if let Some(path) = &cfg.outputs.dump_grid {
        let file = fs::File::create(path)?;
        field.write_csv(std::io::BufWriter::new(file), cfg.outputs.stride.unwrap_or(1))?;
    }
    if let Some(path) = &cfg.outputs.json {
        write_json(
            path,
            &json!({
                "schema": SCHEMA_VERSION,
                "phi": phi.name(),
                "sigma_lo": p.sigma_lo(),
                "sigma_hi": p.sigma_hi(),
                "t": t,
                "value": value,
                "levels": field.n_levels(),
                "grid": grid_json(&solve.grid),
            }),
        )?;
    }
    Ok(())
}

fn cmd_realize(a: &RealizeArgs) -> Result<(), CliError> {
    let cfg = resolve(&a.common)?;
    let p = cfg.params()?;
    let solve = cfg.solve_config(gcore::DEFAULT_DX)?;
    let phi = single_phi(&cfg, &p)?;
    let opts = RealizeOptions {
        mc: cfg.mc_paths.map(|n| McOptions::new(n, cfg.seed)),
        ..Default::default()
    };
    let r = realize::realize_with(&phi, &p, &solve, &opts)?;
    println!("N_G[{}] = {}", phi.name(), r.n_g);
    println!("mu[phi] = {}  gap = {:e}", r.mu_phi, r.gap);
    if let Some(g) = r.mc_gap {
        println!("Monte Carlo gap = {g:e}");
    }
    if let Some(path) = &a.out {
        r.measure.write_csv(fs::File::create(path)?)?;
    }
    if let Some(path) = &cfg.outputs.json {
        write_json(
            path,
            &json!({
                "schema": SCHEMA_VERSION,
                "phi": phi.name(),
                "sigma_lo": p.sigma_lo(),
                "sigma_hi": p.sigma_hi(),
                "n_g": r.n_g,
                "mu_phi": r.mu_phi,
                "gap": r.gap,
                "leaked": r.leaked,
                "mass_drift": r.mass_drift,
                "mean": r.measure.mean(),
                "variance": r.measure.variance(),
                "mc_paths": cfg.mc_paths,
                "seed": cfg.seed,
                "mc_gap": r.mc_gap,
                "grid": grid_json(&solve.grid),
            }),
        )?;
    }
    Ok(())
}

fn scaled_report(mut r: SteinReport, scale: f64) -> SteinReport {
    for (k, v) in r.tolerances_used.iter_mut() {
        if k != "shw_reference_gaussians" {
            *v *= scale;
        }
    }
    r
}

fn cmd_stein_check(a: &SteinArgs) -> Result<(), CliError> {
    let cfg = resolve(&a.common)?;
    let p = cfg.params()?;
    let solve = cfg.solve_config(gcore::DEFAULT_DX)?;
    let phis = if a.all {
        testfns::standard_battery(&p)?
    } else {
        vec![single_phi(&cfg, &p)?]
    };
    let mut reports = Vec::with_capacity(phis.len());
    for phi in &phis {
        let r = stein::verify_proposition_main(phi, &p, &solve)?;
        let r = scaled_report(r, cfg.tolerance_scale);
        println!(
            "{:<22} {} residual {:+.3e}  dt_u {:+.6}  drift {:+.6}  g {:+.6}  conjecture {:+.3e}",
            r.phi_name,
            if r.passes() { "pass" } else { "FAIL" },
            r.residual,
            r.dt_u,
            r.drift_term,
            r.g_term,
            r.conjecture_gap
        );
        reports.push(r);
    }
    if let Some(path) = &cfg.outputs.json {
        write_json(
            path,
            &json!({
                "schema": SCHEMA_VERSION,
                "sigma_lo": p.sigma_lo(),
                "sigma_hi": p.sigma_hi(),
                "grid": grid_json(&solve.grid),
                "reports": reports,
            }),
        )?;
    }
    match reports.iter().find(|r| !r.passes()) {
        Some(r) => Err(CliError::Verification(format!("stein check for {}", r.phi_name))),
        None => Ok(()),
    }
}

fn cmd_eigen(a: &EigenArgs) -> Result<(), CliError> {
    let cfg = resolve(&a.common)?;
    let p = cfg.params()?;
    let sign = match a.sign {
        SignArg::Plus => EigenSign::Plus,
        SignArg::Minus => EigenSign::Minus,
    };
    let parity = match a.parity {
        ParityArg::Even => Parity::Even,
        ParityArg::Odd => Parity::Odd,
    };
    let x_max = cfg.grid.x_max.unwrap_or(6.0);
    let f = testfns::eigen_solve(a.rho, sign, &p, parity, x_max, a.n)?;
    let testfns::Kind::Tabulated { table } = f.kind() else {
        unreachable!("eigen_solve returns a table")
    };
    let s = if sign == EigenSign::Plus { 1.0 } else { -1.0 };
    let residual = table
        .xs()
        .iter()
        .zip(table.values())
        .zip(table.first_derivatives().iter().zip(table.second_derivatives()))
        .map(|((x, v), (d1, d2))| (0.5 * x * d1 + s * p.g(*d2) - a.rho * v).abs())
        .fold(0.0, f64::max);
    println!("{}: sup |f| = {:e}, max eigen residual = {:e}", f.name(), f.sup_norm(), residual);
    if let Some(path) = &a.out {
        table.write_csv(fs::File::create(path)?)?;
    }
    if let Some(path) = &cfg.outputs.json {
        write_json(
            path,
            &json!({
                "schema": SCHEMA_VERSION,
                "name": f.name(),
                "rho": a.rho,
                "sigma_lo": p.sigma_lo(),
                "sigma_hi": p.sigma_hi(),
                "x_max": x_max,
                "n": a.n,
                "sup_norm": f.sup_norm(),
                "max_residual": residual,
            }),
        )?;
    }
    Ok(())
}

fn cmd_oracle(a: &OracleArgs) -> Result<(), CliError> {
    let cfg = resolve(&a.common)?;
    let p = cfg.params()?;
    let solve = cfg.solve_config(gcore::DEFAULT_DX)?;
    let phi = single_phi(&cfg, &p)?;
    let lattice = LatticeConfig::default_for(&p, a.steps)?;
    lattice.validate(&p)?;
    let tree = oracle::tree_expectation(&phi, &p, &lattice)?;
    let pde = gheat::g_normal_expectation(&phi, &p, &solve)?;
    println!("tree {tree}  pde {pde}  deviation {:e}", tree - pde);
    if let Some(path) = &cfg.outputs.json {
        write_json(
            path,
            &json!({
                "schema": SCHEMA_VERSION,
                "phi": phi.name(),
                "sigma_lo": p.sigma_lo(),
                "sigma_hi": p.sigma_hi(),
                "n_steps": a.steps,
                "tree": tree,
                "pde": pde,
                "deviation": tree - pde,
            }),
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: String,
    /// `pass`, `fail` or `skipped`.
    pub status: String,
    /// The deciding statistic and the bound it was held to.
    pub value: f64,
    pub bound: f64,
    pub detail: String,
}

impl SuiteResult {
    fn at_most(name: &str, value: f64, bound: f64, detail: impl Into<String>) -> Self {
        Self::new(name, value <= bound, value, bound, detail)
    }

    fn new(name: &str, ok: bool, value: f64, bound: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status: if ok { "pass" } else { "fail" }.into(),
            value,
            bound,
            detail: detail.into(),
        }
    }

    fn skipped(name: &str, detail: &str) -> Self {
        Self {
            name: name.into(),
            status: "skipped".into(),
            value: 0.0,
            bound: 0.0,
            detail: detail.into(),
        }
    }

    pub fn failed(&self) -> bool {
        self.status == "fail"
    }
}

/// Every verification suite on the battery at the resolved grid.
pub fn run_suites(cfg: &RunConfig) -> Result<Vec<SuiteResult>, CliError> {
    let p = cfg.params()?;
    let solve = cfg.solve_config(SELFTEST_DX)?;
    let phis = battery(cfg, &p)?;
    let classical = p.is_classical();
    let scale = cfg.tolerance_scale;
    let mut tol = stein::grid_tolerance(&solve.grid) * scale;
    if classical {
        tol = tol.min(1e-3 * scale);
    }
    let mut out = Vec::new();

    let mut worst_gauss = if classical { 0.0 } else { f64::NEG_INFINITY };
    for s in [p.sigma_lo(), p.sigma_mid(), p.sigma_hi()] {
        if s == 0.0 {
            continue;
        }
        let m = Measure::reference_gaussian(s)?;
        for phi in &phis {
            let r = stein::stein_residual(&m, phi, &p);
            // under a band Gaussian residuals are <= 0; classical ones vanish
            worst_gauss = worst_gauss.max(if classical { r.abs() } else { r });
        }
    }
    out.push(SuiteResult::at_most(
        "gaussian_stein",
        worst_gauss,
        if classical { 1e-6 } else { 1e-7 },
        "largest Stein residual under reference Gaussians",
    ));

    let closed = TestFunction::phi_beta(&p)?;
    let sigma = p.sigma_mid();
    let exact = (-0.5 * sigma * sigma).exp() * PhiBeta::new(&p)?.jet(0.0).0;
    let pde = gheat::g_normal_expectation(&closed, &p, &solve)?;
    out.push(SuiteResult::at_most(
        "closed_form",
        (pde - exact).abs(),
        2e-3 * scale,
        format!("N_G[phi_beta] = {pde}, closed form {exact}"),
    ));

    let mut gap = 0.0f64;
    let mut tail = 0.0f64;
    let mut drift = 0.0f64;
    let mut residual = 0.0f64;
    let mut spread = 0.0f64;
    let mut conj_min = f64::INFINITY;
    let mut conj_max = f64::NEG_INFINITY;
    let mut conj_abs = 0.0f64;
    for phi in &phis {
        let r = realize::realize(phi, &p, &solve)?;
        gap = gap.max(r.gap);
        tail = tail.max(r.measure.mass_outside(-6.0 * p.sigma_hi(), 6.0 * p.sigma_hi()));
        drift = drift.max(r.mass_drift);
        let rep = stein::build_report(phi, &p, &solve, &r, &[])?;
        residual = residual.max(rep.residual.abs());
        spread = spread.max(rep.identity_spread());
        conj_min = conj_min.min(rep.conjecture_gap);
        conj_max = conj_max.max(rep.conjecture_gap);
        conj_abs = conj_abs.max(rep.conjecture_gap.abs());
    }
    out.push(SuiteResult::new(
        "realization",
        gap <= stein::REALIZATION_GAP_TOL * scale && drift <= 1e-10 && tail <= 1e-6,
        gap,
        stein::REALIZATION_GAP_TOL * scale,
        format!("max gap {gap:e}, mass drift {drift:e}, tail mass {tail:e}"),
    ));
    out.push(SuiteResult::at_most("stein_residual", residual, tol, "max |residual| at realizations"));
    out.push(SuiteResult::at_most(
        "derivative_identities",
        spread,
        tol,
        "max spread of dt_u, drift term and G term",
    ));
    if classical {
        out.push(SuiteResult::at_most(
            "conjecture",
            conj_abs,
            2e-3 * scale,
            "max |N[L_G phi]| under a linear expectation",
        ));
    } else {
        out.push(SuiteResult::new(
            "conjecture",
            conj_min >= stein::CONJECTURE_FLOOR * scale && conj_max >= 0.01,
            conj_max,
            0.01,
            format!("N[L_G phi] ranges over [{conj_min:e}, {conj_max:e}]"),
        ));
    }

    let w = stein::interpolation_check(&closed, &p, &solve, &stein::DEFAULT_S_LIST)?;
    let w_spread = w.iter().map(|(_, v)| (v - w[0].1).abs()).fold(0.0, f64::max);
    out.push(SuiteResult::at_most(
        "interpolation",
        w_spread,
        stein::W_CONSTANCY_TOL * scale,
        "max |w(s) - w(0)| for phi_beta",
    ));

    if classical {
        out.push(SuiteResult::skipped("negative_control", "needs sigma_lo < sigma_hi"));
    } else {
        // the impostor is probed on the full battery whatever was selected
        let worst = testfns::standard_battery(&p)?
            .iter()
            .map(|phi| stein::negative_control(phi, &p))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        out.push(SuiteResult::new(
            "negative_control",
            worst <= -0.05,
            worst,
            -0.05,
            "most negative two-Gaussian residual",
        ));
    }

    if p.sigma_lo() == 0.0 {
        out.push(SuiteResult::skipped("oracle", "lattice spacing needs sigma_lo > 0"));
    } else {
        let lattice = LatticeConfig::default_for(&p, 100)?;
        let mut dev = 0.0f64;
        for phi in [&closed, &TestFunction::cosine()] {
            let tree = oracle::tree_expectation(phi, &p, &lattice)?;
            dev = dev.max((tree - gheat::g_normal_expectation(phi, &p, &solve)?).abs());
        }
        out.push(SuiteResult::at_most("oracle", dev, 1e-2 * scale, "lattice (100 steps) vs PDE"));
    }

    let opts = RealizeOptions {
        mc: Some(McOptions::new(cfg.mc_paths.unwrap_or(SELFTEST_MC_PATHS), cfg.seed)),
        ..Default::default()
    };
    let r = realize::realize_with(&closed, &p, &solve, &opts)?;
    out.push(SuiteResult::at_most(
        "monte_carlo",
        r.mc_gap.unwrap_or(f64::INFINITY),
        1e-2 * scale,
        "|mu_mc[phi_beta] - mu[phi_beta]|",
    ));
    Ok(out)
}

fn cmd_selftest(c: &Common) -> Result<(), CliError> {
    let cfg = resolve(c)?;
    // validate everything up front
    let p = cfg.params()?;
    let solve = cfg.solve_config(SELFTEST_DX)?;
    battery(&cfg, &p)?;
    let suites = run_suites(&cfg)?;
    for s in &suites {
        println!("{:<22} {:<7} {:e} (bound {:e}) {}", s.name, s.status, s.value, s.bound, s.detail);
    }
    let first_fail = suites.iter().find(|s| s.failed());
    if let Some(path) = &cfg.outputs.json {
        write_json(
            path,
            &json!({
                "schema": SCHEMA_VERSION,
                "sigma_lo": p.sigma_lo(),
                "sigma_hi": p.sigma_hi(),
                "grid": grid_json(&solve.grid),
                "passed": first_fail.is_none(),
                "suites": suites,
            }),
        )?;
    }
    match first_fail {
        Some(s) => Err(CliError::Verification(format!("suite {}", s.name))),
        None => Ok(()),
    }
}

/// Points per period in the `phi_beta` plotting table.
const PHI_BETA_SAMPLES: usize = 1000;

fn cmd_report(a: &ReportArgs) -> Result<(), CliError> {
    let cfg = resolve(&a.common)?;
    let p = cfg.params()?;
    let solve = cfg.solve_config(gcore::DEFAULT_DX)?;
    for input in &a.inputs {
        if !input.is_file() {
            return Err(CliError::Usage(format!("missing input {}", input.display())));
        }
    }
    let phi_beta = PhiBeta::new(&p)?;

    fs::create_dir_all(a.out.join("inputs"))?;
    let mut inputs = Vec::new();
    let mut reports: Vec<Value> = Vec::new();
    for input in &a.inputs {
        let name = input
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        if input.extension().is_some_and(|e| e == "json") {
            let doc: Value = serde_json::from_str(&read_text(input)?)
                .map_err(|e| CliError::Usage(format!("{}: {e}", input.display())))?;
            if doc.get("schema").and_then(Value::as_u64) != Some(SCHEMA_VERSION as u64) {
                return Err(CliError::Usage(format!(
                    "{}: unsupported or missing schema version",
                    input.display()
                )));
            }
            if let Some(rs) = doc.get("reports").and_then(Value::as_array) {
                reports.extend(rs.iter().cloned());
            }
        }
        fs::copy(input, a.out.join("inputs").join(&name))?;
        inputs.push(name);
    }

    let mut w = csv::Writer::from_path(a.out.join("phi_beta.csv")).map_err(csv_err)?;
    w.write_record(["x", "phi", "dphi", "d2phi"]).map_err(csv_err)?;
    let x0 = phi_beta.cell_start();
    for k in 0..=PHI_BETA_SAMPLES {
        let x = x0 + 2.0 * std::f64::consts::PI * k as f64 / PHI_BETA_SAMPLES as f64;
        let (f, d1, d2) = phi_beta.jet(x);
        w.write_record([x, f, d1, d2].map(|v| v.to_string())).map_err(csv_err)?;
    }
    w.flush()?;

    let phi = TestFunction::phi_beta(&p)?;
    let w_values = stein::interpolation_check(&phi, &p, &solve, &stein::DEFAULT_S_LIST)?;
    let mut w = csv::Writer::from_path(a.out.join("w_table.csv")).map_err(csv_err)?;
    w.write_record(["s", "w"]).map_err(csv_err)?;
    for (s, v) in &w_values {
        w.write_record([s.to_string(), v.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;

    write_json(
        &a.out.join("bundle.json"),
        &json!({
            "schema": SCHEMA_VERSION,
            "sigma_lo": p.sigma_lo(),
            "sigma_hi": p.sigma_hi(),
            "grid": grid_json(&solve.grid),
            "inputs": inputs,
            "reports": reports,
            "w_values": w_values,
            "files": ["bundle.json", "phi_beta.csv", "w_table.csv"],
        }),
    )?;
    println!("wrote bundle to {}", a.out.display());
    Ok(())
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e))
}
