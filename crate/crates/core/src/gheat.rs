//! Explicit monotone solver for the G-heat equation `u_t = G(u_xx)`, `u(0, .) = phi`.
//!
//! The update `u^{n+1}_i = u^n_i + dt G(D^2 u^n_i)` is nondecreasing in every stencil
//! value when `dt sigma_hi^2 / dx^2 <= 1`, which gives the discrete maximum
//! principle and convergence to the viscosity solution. Only every
//! `stride`-th time level is kept; the intermediate levels can be regenerated
//! bit-for-bit with [`ScalarField::replay`].

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcore::{self, GParams, Grid};
use crate::testfns::TestFunction;

/// Default sup-norm cap on initial data.
pub const DEFAULT_SUP_CAP: f64 = 1e6;
/// Default time spacing between stored levels.
pub const DEFAULT_STORE_INTERVAL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// `u = phi` at the two boundary nodes for all times.
    #[default]
    Freeze,
    /// Boundary nodes follow the linear extrapolation of the two nearest interior nodes.
    LinearExtrapolate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub grid: Grid,
    pub boundary: Boundary,
    pub cfl_safety: f64,
    /// Time spacing of the stored levels (rounded to a whole number of steps).
    pub store_interval: f64,
    /// Initial data with a larger sup-norm on the grid is rejected.
    pub sup_cap: f64,
}

impl SolveConfig {
    /// Default configuration: see [`Grid::default_for`].
    pub fn default_for(p: &GParams) -> Self {
        Self::from_grid(Grid::default_for(p))
    }

    pub fn from_grid(grid: Grid) -> Self {
        Self {
            grid,
            boundary: Boundary::Freeze,
            cfl_safety: gcore::DEFAULT_CFL_SAFETY,
            store_interval: DEFAULT_STORE_INTERVAL,
            sup_cap: DEFAULT_SUP_CAP,
        }
    }

    /// Symmetric grid of half width `half_width` and spacing `dx` with a CFL-derived step.
    pub fn with_resolution(
        p: &GParams,
        half_width: f64,
        dx: f64,
        t_max: f64,
    ) -> Result<Self> {
        let grid = Grid::symmetric(p, half_width, dx, t_max, gcore::DEFAULT_CFL_SAFETY)?;
        Ok(Self::from_grid(grid))
    }

    /// Same domain and final time, spacing `dx` (time step re-derived from the CFL bound).
    pub fn refined(&self, p: &GParams, dx: f64) -> Result<Self> {
        let grid = Grid::symmetric(
            p,
            0.5 * (self.grid.x_max - self.grid.x_min),
            dx,
            self.grid.t_max,
            self.cfl_safety,
        )?;
        Ok(Self { grid, ..*self })
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn with_t_max(mut self, t_max: f64) -> Self {
        self.grid.t_max = t_max;
        self
    }

    /// Effective `dt = cfl_safety dx^2 / sigma_hi^2` would satisfy the CFL bound; an
    /// explicitly chosen `dt` is checked by [`SolveConfig::validate`].
    pub fn validate(&self, p: &GParams) -> Result<()> {
        let g = self.grid;
        Grid::new(g.x_min, g.x_max, g.nx, g.t_max, g.dt)?;
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::InvalidGrid(format!(
                "cfl_safety must lie in (0, 1], got {}",
                self.cfl_safety
            )));
        }
        if !(self.store_interval > 0.0) || !(self.sup_cap > 0.0) {
            return Err(Error::InvalidGrid(
                "store_interval and sup_cap must be positive".into(),
            ));
        }
        g.check_cfl(p)
    }

    fn stride(&self) -> usize {
        ((self.store_interval / self.grid.dt).round() as usize).max(1)
    }
}

/// Solution of the G-heat equation on a space-time grid.
///
/// `values[[k, i]]` is `u(k * stride * dt, x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    params: GParams,
    boundary: Boundary,
    stride: usize,
    steps: usize,
    values: Array2<f64>,
}

/// Computes `u^{n+1}` from `u^n`, reporting each interior `D^2 u^n_i` to `on_curvature`.
///
/// The solver and the replay share this function so that both produce identical bits.
#[inline]
pub(crate) fn advance<F: FnMut(usize, f64)>(
    cur: &[f64],
    next: &mut [f64],
    dt: f64,
    inv_dx2: f64,
    p: &GParams,
    boundary: Boundary,
    mut on_curvature: F,
) {
    let n = cur.len();
    for i in 1..n - 1 {
        // (a + c) - 2b is exactly mirror symmetric, unlike (a - 2b) + c
        let d2 = ((cur[i + 1] + cur[i - 1]) - 2.0 * cur[i]) * inv_dx2;
        on_curvature(i, d2);
        next[i] = cur[i] + dt * p.g(d2);
    }
    match boundary {
        Boundary::Freeze => {
            next[0] = cur[0];
            next[n - 1] = cur[n - 1];
        }
        Boundary::LinearExtrapolate => {
            next[0] = 2.0 * next[1] - next[2];
            next[n - 1] = 2.0 * next[n - 2] - next[n - 3];
        }
    }
}

/// Solves the G-heat equation with initial data `phi`.
pub fn solve_g_heat(phi: &TestFunction, p: &GParams, cfg: &SolveConfig) -> Result<ScalarField> {
    solve_g_heat_with(|x| phi.value(x), p, cfg)
}

/// Solves the G-heat equation with initial data given by an arbitrary function.
pub fn solve_g_heat_with<F: Fn(f64) -> f64>(
    initial: F,
    p: &GParams,
    cfg: &SolveConfig,
) -> Result<ScalarField> {
    let values: Vec<f64> = cfg.grid.nodes().into_iter().map(initial).collect();
    solve_g_heat_from_values(values, p, cfg)
}

/// Solves the G-heat equation from initial node values.
pub fn solve_g_heat_from_values(
    initial: Vec<f64>,
    p: &GParams,
    cfg: &SolveConfig,
) -> Result<ScalarField> {
    cfg.validate(p)?;
    let grid = cfg.grid;
    let n = grid.n_nodes();
    if initial.len() != n {
        return Err(Error::InvalidArgument(format!(
            "expected {n} initial values, got {}",
            initial.len()
        )));
    }
    let sup = initial
        .iter()
        .fold(0.0f64, |m, v| if v.is_finite() { m.max(v.abs()) } else { f64::INFINITY });
    if !(sup <= cfg.sup_cap) {
        return Err(Error::Unbounded {
            sup,
            cap: cfg.sup_cap,
        });
    }

    let stride = cfg.stride();
    let steps = grid.steps_to(grid.t_max).div_ceil(stride) * stride;
    let levels = steps / stride + 1;
    let mut values = Array2::<f64>::zeros((levels, n));
    values.row_mut(0).assign(&ndarray::ArrayView1::from(&initial));

    let dx = grid.dx();
    let inv_dx2 = 1.0 / (dx * dx);
    let mut cur = initial;
    let mut next = vec![0.0; n];
    for step in 0..steps {
        advance(&cur, &mut next, grid.dt, inv_dx2, p, cfg.boundary, |_, _| {});
        std::mem::swap(&mut cur, &mut next);
        if (step + 1) % stride == 0 {
            values
                .row_mut((step + 1) / stride)
                .assign(&ndarray::ArrayView1::from(&cur));
        }
    }

    Ok(ScalarField {
        grid,
        params: *p,
        boundary: cfg.boundary,
        stride,
        steps,
        values,
    })
}

impl ScalarField {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn params(&self) -> &GParams {
        &self.params
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Number of explicit steps between stored levels.
    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Total number of explicit steps taken.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn n_levels(&self) -> usize {
        self.values.nrows()
    }

    /// Time between stored levels.
    pub fn level_dt(&self) -> f64 {
        self.stride as f64 * self.grid.dt
    }

    pub fn level_time(&self, k: usize) -> f64 {
        (k * self.stride) as f64 * self.grid.dt
    }

    /// Final time actually reached (at least `grid.t_max`).
    pub fn t_end(&self) -> f64 {
        self.steps as f64 * self.grid.dt
    }

    pub fn level(&self, k: usize) -> ndarray::ArrayView1<'_, f64> {
        self.values.row(k)
    }

    /// Regenerates the explicit steps `k*stride .. (k+1)*stride` starting from stored
    /// level `k`, calling `visit(step, u^step, d2)` with the curvature of every
    /// interior node before each step.
    pub fn replay<F: FnMut(usize, &[f64], usize, f64)>(&self, k: usize, mut visit: F) {
        let n = self.grid.n_nodes();
        let dx = self.grid.dx();
        let inv_dx2 = 1.0 / (dx * dx);
        let mut cur = self.values.row(k).to_vec();
        let mut next = vec![0.0; n];
        for j in 0..self.stride {
            let step = k * self.stride + j;
            let snapshot = cur.clone();
            advance(
                &cur,
                &mut next,
                self.grid.dt,
                inv_dx2,
                &self.params,
                self.boundary,
                |i, d2| visit(step, &snapshot, i, d2),
            );
            std::mem::swap(&mut cur, &mut next);
        }
    }

    fn locate_x(&self, x: f64) -> Option<(usize, f64)> {
        let g = &self.grid;
        let r = (x - g.x_min) / g.dx();
        if !(r >= -1e-9 && r <= g.nx as f64 + 1e-9) {
            return None;
        }
        let r = r.clamp(0.0, g.nx as f64);
        let i = (r.floor() as usize).min(g.nx - 1);
        Some((i, r - i as f64))
    }

    fn locate_t(&self, t: f64) -> Option<(usize, f64)> {
        let r = t / self.level_dt();
        let last = self.n_levels() - 1;
        if !(r >= -1e-9 && r <= last as f64 + 1e-9) {
            return None;
        }
        let r = r.clamp(0.0, last as f64);
        let k = (r.floor() as usize).min(last.saturating_sub(1));
        Some((k, r - k as f64))
    }

    /// Linear interpolation in `x` at stored level `k`.
    fn at_level(&self, k: usize, x: f64) -> Option<f64> {
        let (i, w) = self.locate_x(x)?;
        let row = self.values.row(k);
        Some(if w == 0.0 {
            row[i]
        } else {
            (1.0 - w) * row[i] + w * row[i + 1]
        })
    }

    /// Bilinear interpolation of the stored field.
    pub fn at(&self, t: f64, x: f64) -> Result<f64> {
        let out = || Error::OutOfDomain { t, x };
        let (k, wt) = self.locate_t(t).ok_or_else(out)?;
        let a = self.at_level(k, x).ok_or_else(out)?;
        if wt == 0.0 || self.n_levels() == 1 {
            return Ok(a);
        }
        let b = self.at_level(k + 1, x).ok_or_else(out)?;
        Ok((1.0 - wt) * a + wt * b)
    }

    /// The spatial profile `u(t, .)` on the grid nodes (interpolated in time).
    pub fn profile(&self, t: f64) -> Result<Vec<f64>> {
        let (k, wt) = self
            .locate_t(t)
            .ok_or(Error::OutOfDomain { t, x: 0.0 })?;
        let a = self.values.row(k);
        if wt == 0.0 || self.n_levels() == 1 {
            return Ok(a.to_vec());
        }
        let b = self.values.row(k + 1);
        Ok(a.iter().zip(b.iter()).map(|(u, v)| (1.0 - wt) * u + wt * v).collect())
    }

    /// Writes every `stride`-th stored level as CSV: a header of `t` and the x nodes,
    /// then one row per level.
    pub fn write_csv<W: Write>(&self, out: W, stride: usize) -> std::io::Result<()> {
        let stride = stride.max(1);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(self.grid.nodes().iter().map(|x| x.to_string()));
        w.write_record(&header)?;
        for k in (0..self.n_levels()).step_by(stride) {
            let mut row = vec![self.level_time(k).to_string()];
            row.extend(self.values.row(k).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()
    }
}

/// `u(t, x) = E[phi(x + sqrt(t) xi)]` under the G-normal law; `N_G[phi]` is `t = 1, x = 0`.
pub fn g_expectation(
    phi: &TestFunction,
    t: f64,
    x: f64,
    p: &GParams,
    cfg: &SolveConfig,
) -> Result<f64> {
    if t > cfg.grid.t_max + 1e-12 || t < 0.0 {
        return Err(Error::OutOfDomain { t, x });
    }
    let cfg = cfg.with_t_max(t.max(cfg.grid.dt));
    let field = solve_g_heat(phi, p, &cfg)?;
    field.at(t, x)
}

/// `N_G[phi] = u(1, 0)`.
pub fn g_normal_expectation(phi: &TestFunction, p: &GParams, cfg: &SolveConfig) -> Result<f64> {
    g_expectation(phi, 1.0, 0.0, p, cfg)
}

fn probe_guard(field: &ScalarField, t: f64, x: f64, ht: f64, hx: f64) -> Result<()> {
    let g = field.grid();
    if t - ht < -1e-12 || t + ht > field.t_end() + 1e-12 || x - hx < g.x_min || x + hx > g.x_max {
        return Err(Error::BoundaryProximity { t, x });
    }
    Ok(())
}

/// Centered difference in time with the stored-level spacing.
pub fn time_derivative(field: &ScalarField, t: f64, x: f64) -> Result<f64> {
    let h = field.level_dt();
    probe_guard(field, t, x, h, field.grid().dx())?;
    Ok((field.at(t + h, x)? - field.at(t - h, x)?) / (2.0 * h))
}

/// Centered first difference in space.
pub fn space_derivative(field: &ScalarField, t: f64, x: f64) -> Result<f64> {
    let h = field.grid().dx();
    probe_guard(field, t, x, 0.0, h)?;
    Ok((field.at(t, x + h)? - field.at(t, x - h)?) / (2.0 * h))
}

/// Centered second difference in space.
pub fn second_space_derivative(field: &ScalarField, t: f64, x: f64) -> Result<f64> {
    let h = field.grid().dx();
    probe_guard(field, t, x, 0.0, h)?;
    let (a, b, c) = (field.at(t, x - h)?, field.at(t, x)?, field.at(t, x + h)?);
    Ok(((a + c) - 2.0 * b) / (h * h))
}
