//! Optimal volatility and the realization measure it induces.
//!
//! The backward update `u^{n+1} = u^n + dt G(D^2 u^n)` equals `A_n u^n` where `A_n` is
//! the linear scheme with volatility `sigma*` chosen by the sign of `D^2 u^n`. The
//! forward update here is the transpose of `A_n` with absorbing boundary nodes, so
//! pushing a point mass at 0 through `A_{N-1}^T ... A_0^T` gives a measure whose
//! integral of `phi` reproduces `u^N(0)` up to rounding and the tie tolerance.

use bitvec::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gcore::{GParams, Grid, Measure};
use crate::gheat::{self, ScalarField, SolveConfig};
use crate::testfns::TestFunction;

/// Largest mass the forward solve may lose through the boundary.
pub const MAX_LEAKAGE: f64 = 1e-8;
/// Default number of Monte Carlo steps per unit time.
pub const DEFAULT_MC_STEPS_PER_UNIT: usize = 400;

/// Default tie tolerance for the curvature sign test: `1e-9 sigma_hi^2 / dx^2`.
pub fn default_tie_tol(p: &GParams, grid: &Grid) -> f64 {
    let dx = grid.dx();
    1e-9 * p.sigma_hi() * p.sigma_hi() / (dx * dx)
}

/// Bang-bang volatility on the solver grid, one row per explicit step.
///
/// Row `n` is the control used by the backward step `u^n -> u^{n+1}`, i.e. at
/// time to go `n dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolatilityPolicy {
    grid: Grid,
    params: GParams,
    n_levels: usize,
    hi: BitVec<u64, Lsb0>,
}

impl VolatilityPolicy {
    /// The same volatility everywhere; `sigma` must be one of the band ends.
    pub fn constant(grid: Grid, p: &GParams, sigma: f64, n_levels: usize) -> Result<Self> {
        let hi = if sigma == p.sigma_hi() {
            true
        } else if sigma == p.sigma_lo() {
            false
        } else {
            return Err(Error::InvalidArgument(format!(
                "constant volatility {sigma} is not an end of [{}, {}]",
                p.sigma_lo(),
                p.sigma_hi()
            )));
        };
        Ok(Self {
            grid,
            params: *p,
            n_levels,
            hi: BitVec::repeat(hi, n_levels * grid.n_nodes()),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn params(&self) -> &GParams {
        &self.params
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    /// Time span covered by the policy.
    pub fn horizon(&self) -> f64 {
        self.n_levels as f64 * self.grid.dt
    }

    pub fn is_hi(&self, n: usize, i: usize) -> bool {
        self.hi[n * self.grid.n_nodes() + i]
    }

    pub fn sigma(&self, n: usize, i: usize) -> f64 {
        if self.is_hi(n, i) {
            self.params.sigma_hi()
        } else {
            self.params.sigma_lo()
        }
    }

    /// Volatility at the node nearest to `x`.
    pub fn sigma_at(&self, n: usize, x: f64) -> f64 {
        self.sigma(n, self.nearest_node(x))
    }

    fn nearest_node(&self, x: f64) -> usize {
        let r = ((x - self.grid.x_min) / self.grid.dx()).round();
        r.clamp(0.0, self.grid.nx as f64) as usize
    }

    /// Row `n` as volatilities.
    pub fn row(&self, n: usize) -> Vec<f64> {
        (0..self.grid.n_nodes()).map(|i| self.sigma(n, i)).collect()
    }
}

/// Bang-bang control over every step of the field.
pub fn optimal_policy(field: &ScalarField, p: &GParams, tie_tol: f64) -> VolatilityPolicy {
    optimal_policy_until(field, p, tie_tol, field.t_end())
}

/// Bang-bang control over the steps reaching `t_end`: `sigma_hi` where
/// `D^2 u >= -tie_tol`, `sigma_lo` elsewhere. Boundary nodes carry `sigma_hi`.
pub fn optimal_policy_until(
    field: &ScalarField,
    p: &GParams,
    tie_tol: f64,
    t_end: f64,
) -> VolatilityPolicy {
    let grid = *field.grid();
    let n = grid.n_nodes();
    let n_levels = grid.steps_to(t_end.min(field.t_end())).min(field.steps());
    let mut hi: BitVec<u64, Lsb0> = BitVec::repeat(true, n_levels * n);
    let blocks = n_levels.div_ceil(field.stride());
    for k in 0..blocks {
        field.replay(k, |step, _, i, d2| {
            if step < n_levels && d2 < -tie_tol {
                hi.set(step * n + i, false);
            }
        });
    }
    VolatilityPolicy {
        grid,
        params: *p,
        n_levels,
        hi,
    }
}

/// Outcome of a forward solve before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutcome {
    pub measure: Measure,
    /// Mass absorbed at the two boundary nodes.
    pub leaked: f64,
    /// `|1 - total mass|` before normalization.
    pub mass_drift: f64,
}

/// Law at `t_target` of the diffusion `dX = sigma*(t, X) dW`, `X_0 = 0`.
///
/// See [`forward_measure_detailed`] for the leakage and conservation diagnostics.
pub fn forward_measure(policy: &VolatilityPolicy, t_target: f64) -> Result<Measure> {
    forward_measure_detailed(policy, t_target).map(|o| o.measure)
}

pub fn forward_measure_detailed(policy: &VolatilityPolicy, t_target: f64) -> Result<ForwardOutcome> {
    let grid = policy.grid;
    grid.check_cfl(&policy.params)?;
    let steps = forward_steps(policy, t_target)?;
    let n = grid.n_nodes();
    let dx = grid.dx();
    let c = grid.dt / (2.0 * dx * dx);

    let mut rho = vec![0.0; n];
    rho[origin_index(&grid)] = 1.0;
    let mut flux = vec![0.0; n];
    for k in 0..steps {
        let level = policy.n_levels - 1 - k;
        for i in 1..n - 1 {
            let s = policy.sigma(level, i);
            flux[i] = s * s * rho[i];
        }
        // boundary nodes absorb: zero volatility, flux stays 0
        rho[0] += c * flux[1];
        rho[n - 1] += c * flux[n - 2];
        for i in 1..n - 1 {
            rho[i] += c * ((flux[i + 1] + flux[i - 1]) - 2.0 * flux[i]);
        }
    }

    let leaked = rho[0] + rho[n - 1];
    if leaked > MAX_LEAKAGE {
        return Err(Error::MassLeakage { leaked });
    }
    let total: f64 = rho.iter().sum();
    let measure = Measure::from_masses(grid.nodes(), rho)?;
    Ok(ForwardOutcome {
        measure,
        leaked,
        mass_drift: (1.0 - total).abs(),
    })
}

fn forward_steps(policy: &VolatilityPolicy, t_target: f64) -> Result<usize> {
    if !(t_target >= 0.0) {
        return Err(Error::InvalidArgument(format!("target time {t_target}")));
    }
    let steps = policy.grid.steps_to(t_target);
    if steps > policy.n_levels {
        return Err(Error::OutOfDomain { t: t_target, x: 0.0 });
    }
    Ok(steps)
}

fn origin_index(grid: &Grid) -> usize {
    grid.zero_index()
        .unwrap_or_else(|| ((-grid.x_min / grid.dx()).round() as usize).min(grid.nx))
}

/// Monte Carlo settings. Path `j` draws from the ChaCha8 stream `j` of `seed`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions {
    pub n_paths: usize,
    pub seed: u64,
    pub steps_per_unit_time: usize,
}

impl McOptions {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        Self {
            n_paths,
            seed,
            steps_per_unit_time: DEFAULT_MC_STEPS_PER_UNIT,
        }
    }
}

/// Euler-Maruyama estimate of the law at `t_target`, binned to the nearest grid node.
///
/// Each Monte Carlo step spans a whole number of grid steps and uses the policy
/// row at its start. Paths touching the boundary stop there.
pub fn mc_forward_measure(
    policy: &VolatilityPolicy,
    t_target: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Measure> {
    mc_forward_measure_with(policy, t_target, &McOptions::new(n_paths, seed))
}

pub fn mc_forward_measure_with(
    policy: &VolatilityPolicy,
    t_target: f64,
    opts: &McOptions,
) -> Result<Measure> {
    if opts.n_paths == 0 || opts.steps_per_unit_time == 0 {
        return Err(Error::InvalidArgument(
            "Monte Carlo needs at least one path and one step".into(),
        ));
    }
    let grid = policy.grid;
    let steps = forward_steps(policy, t_target)?;
    if steps == 0 {
        return Ok(Measure::point_mass(grid.x(origin_index(&grid))));
    }
    let mc_steps = ((t_target * opts.steps_per_unit_time as f64).round() as usize).clamp(1, steps);
    // grid step at which each Monte Carlo step starts, plus the end
    let starts: Vec<usize> = (0..=mc_steps).map(|k| k * steps / mc_steps).collect();
    // one packed bit row per Monte Carlo step keeps the lookups in cache
    let n = grid.n_nodes();
    let words = n.div_ceil(64);
    let mut bits = vec![0u64; mc_steps * words];
    let mut sqrt_h = Vec::with_capacity(mc_steps);
    for (k, w) in starts.windows(2).enumerate() {
        let level = policy.n_levels - 1 - w[0];
        for i in (0..n).filter(|&i| policy.is_hi(level, i)) {
            bits[k * words + i / 64] |= 1 << (i % 64);
        }
        sqrt_h.push(((w[1] - w[0]) as f64 * grid.dt).sqrt());
    }
    let (lo, hi) = (policy.params.sigma_lo(), policy.params.sigma_hi());
    let inv_dx = 1.0 / grid.dx();
    let node = |x: f64| (((x - grid.x_min) * inv_dx + 0.5) as usize).min(grid.nx);

    let base = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut counts = vec![0.0; grid.n_nodes()];
    for path in 0..opts.n_paths {
        let mut rng = base.clone();
        rng.set_stream(path as u64);
        let mut x = 0.0;
        for (k, h) in sqrt_h.iter().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            let i = node(x);
            let s = if bits[k * words + i / 64] >> (i % 64) & 1 == 1 { hi } else { lo };
            x += s * h * z;
            if x <= grid.x_min || x >= grid.x_max {
                x = x.clamp(grid.x_min, grid.x_max);
                break;
            }
        }
        counts[node(x)] += 1.0;
    }
    Measure::from_masses(grid.nodes(), counts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealizeOptions {
    /// Target time of the realization (1 for `N_G`).
    pub t_target: f64,
    /// Defaults to [`default_tie_tol`].
    pub tie_tol: Option<f64>,
    pub mc: Option<McOptions>,
}

impl Default for RealizeOptions {
    fn default() -> Self {
        Self {
            t_target: 1.0,
            tie_tol: None,
            mc: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RealizationResult {
    pub measure: Measure,
    pub policy: VolatilityPolicy,
    /// `N_G[phi]` read off the field at `(t_target, 0)`.
    pub n_g: f64,
    /// `mu[phi]`.
    pub mu_phi: f64,
    /// `|mu[phi] - N_G[phi]|`.
    pub gap: f64,
    pub leaked: f64,
    pub mass_drift: f64,
    pub mc_measure: Option<Measure>,
    /// `|mu_mc[phi] - mu[phi]|`.
    pub mc_gap: Option<f64>,
    pub field: ScalarField,
}

/// Solve, extract the policy and push the point mass at 0 forward.
pub fn realize(phi: &TestFunction, p: &GParams, cfg: &SolveConfig) -> Result<RealizationResult> {
    realize_with(phi, p, cfg, &RealizeOptions::default())
}

pub fn realize_with(
    phi: &TestFunction,
    p: &GParams,
    cfg: &SolveConfig,
    opts: &RealizeOptions,
) -> Result<RealizationResult> {
    let tie_tol = opts.tie_tol.unwrap_or_else(|| default_tie_tol(p, &cfg.grid));
    if !(tie_tol >= 0.0) || !tie_tol.is_finite() {
        return Err(Error::InvalidArgument(format!("tie tolerance {tie_tol}")));
    }
    if !(opts.t_target > 0.0) || opts.t_target > cfg.grid.t_max {
        return Err(Error::OutOfDomain { t: opts.t_target, x: 0.0 });
    }
    let field = gheat::solve_g_heat(phi, p, cfg)?;
    let policy = optimal_policy_until(&field, p, tie_tol, opts.t_target);
    let fwd = forward_measure_detailed(&policy, opts.t_target)?;
    let n_g = field.at(opts.t_target, 0.0)?;
    let mu_phi = fwd.measure.expectation(|x| phi.value(x));

    let (mc_measure, mc_gap) = match &opts.mc {
        Some(mc) => {
            let m = mc_forward_measure_with(&policy, opts.t_target, mc)?;
            let gap = (m.expectation(|x| phi.value(x)) - mu_phi).abs();
            (Some(m), Some(gap))
        }
        None => (None, None),
    };

    Ok(RealizationResult {
        measure: fwd.measure,
        policy,
        n_g,
        mu_phi,
        gap: (mu_phi - n_g).abs(),
        leaked: fwd.leaked,
        mass_drift: fwd.mass_drift,
        mc_measure,
        mc_gap,
        field,
    })
}
