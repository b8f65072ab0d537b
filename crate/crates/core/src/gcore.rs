//! Volatility band, the generator `G`, grids and discrete probability measures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default spatial step of the solver grids.
pub const DEFAULT_DX: f64 = 0.01;
/// Default final time of a solve; leaves room for centered time derivatives at `t = 1`.
pub const DEFAULT_T_MAX: f64 = 1.5;
/// Default fraction of the CFL-limited time step.
pub const DEFAULT_CFL_SAFETY: f64 = 0.9;

/// The ellipticity band `[sigma_lo, sigma_hi]` that defines `G`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GParams {
    sigma_lo: f64,
    sigma_hi: f64,
}

impl GParams {
    pub fn new(sigma_lo: f64, sigma_hi: f64) -> Result<Self> {
        if !sigma_lo.is_finite() || !sigma_hi.is_finite() {
            return Err(Error::InvalidParams(format!(
                "non-finite bounds ({sigma_lo}, {sigma_hi})"
            )));
        }
        if sigma_lo < 0.0 || sigma_lo > sigma_hi {
            return Err(Error::InvalidParams(format!(
                "need 0 <= sigma_lo <= sigma_hi, got ({sigma_lo}, {sigma_hi})"
            )));
        }
        Ok(Self { sigma_lo, sigma_hi })
    }

    /// The linear case `sigma_lo = sigma_hi = sigma`.
    pub fn classical(sigma: f64) -> Result<Self> {
        Self::new(sigma, sigma)
    }

    pub fn sigma_lo(&self) -> f64 {
        self.sigma_lo
    }

    pub fn sigma_hi(&self) -> f64 {
        self.sigma_hi
    }

    pub fn sigma_mid(&self) -> f64 {
        0.5 * (self.sigma_lo + self.sigma_hi)
    }

    /// `sigma_hi / sigma_lo`; undefined for a band touching zero.
    pub fn beta(&self) -> Result<f64> {
        self.require_nondegenerate("beta = sigma_hi / sigma_lo")?;
        Ok(self.sigma_hi / self.sigma_lo)
    }

    pub fn is_classical(&self) -> bool {
        self.sigma_lo == self.sigma_hi
    }

    pub(crate) fn require_nondegenerate(&self, what: &'static str) -> Result<()> {
        if self.sigma_lo > 0.0 {
            Ok(())
        } else {
            Err(Error::DegenerateBand(what))
        }
    }

    /// `G(a) = (sigma_hi^2 a^+ - sigma_lo^2 a^-) / 2`.
    #[inline]
    pub fn g(&self, a: f64) -> f64 {
        0.5 * (self.sigma_hi * self.sigma_hi * a.max(0.0)
            - self.sigma_lo * self.sigma_lo * (-a).max(0.0))
    }

    /// The unique `a` with `G(a) = c`.
    pub fn g_inverse(&self, c: f64) -> Result<f64> {
        if c >= 0.0 {
            if c == 0.0 {
                return Ok(0.0);
            }
            if self.sigma_hi == 0.0 {
                return Err(Error::DegenerateBand("G is identically zero"));
            }
            Ok(2.0 * c / (self.sigma_hi * self.sigma_hi))
        } else {
            self.require_nondegenerate("G is not invertible on negative values")?;
            Ok(2.0 * c / (self.sigma_lo * self.sigma_lo))
        }
    }
}

/// Free-function form of [`GParams::g`].
pub fn g_eval(a: f64, p: &GParams) -> f64 {
    p.g(a)
}

/// Free-function form of [`GParams::g_inverse`].
pub fn g_inverse(c: f64, p: &GParams) -> Result<f64> {
    p.g_inverse(c)
}

/// Number of time steps per unit time for an explicit scheme on spacing `dx`.
///
/// Rounded up to a multiple of 100 so that every multiple of `0.01` is a time level.
pub fn steps_per_unit_time(p: &GParams, dx: f64, cfl_safety: f64) -> usize {
    let raw = p.sigma_hi * p.sigma_hi / (cfl_safety * dx * dx);
    let m = (raw / 100.0).ceil().max(1.0) as usize;
    m * 100
}

/// Space-time grid shared by the backward (G-heat) and forward solves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    /// Number of cells; there are `nx + 1` nodes.
    pub nx: usize,
    pub t_max: f64,
    pub dt: f64,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, nx: usize, t_max: f64, dt: f64) -> Result<Self> {
        let all_finite = [x_min, x_max, t_max, dt].iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidGrid("non-finite grid parameter".into()));
        }
        if !(x_min < 0.0 && 0.0 < x_max) {
            return Err(Error::InvalidGrid(format!(
                "need x_min < 0 < x_max, got [{x_min}, {x_max}]"
            )));
        }
        if nx < 4 {
            return Err(Error::InvalidGrid(format!("need at least 4 cells, got {nx}")));
        }
        if !(t_max > 0.0) || !(dt > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "need t_max > 0 and dt > 0, got t_max = {t_max}, dt = {dt}"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            nx,
            t_max,
            dt,
        })
    }

    /// Symmetric grid `[-half_width, half_width]` with spacing `dx` and a CFL-derived
    /// time step.
    pub fn symmetric(
        p: &GParams,
        half_width: f64,
        dx: f64,
        t_max: f64,
        cfl_safety: f64,
    ) -> Result<Self> {
        if !(dx > 0.0) || !(half_width > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "need dx > 0 and half width > 0, got dx = {dx}, half width = {half_width}"
            )));
        }
        if !(cfl_safety > 0.0 && cfl_safety <= 1.0) {
            return Err(Error::InvalidGrid(format!(
                "cfl_safety must lie in (0, 1], got {cfl_safety}"
            )));
        }
        let half_cells = (half_width / dx).round().max(2.0) as usize;
        let half = half_cells as f64 * dx;
        let dt = 1.0 / steps_per_unit_time(p, dx, cfl_safety) as f64;
        Self::new(-half, half, 2 * half_cells, t_max, dt)
    }

    /// Default grid: `dx = 0.01`, `t_max = 1.5`, half width `max(10, 6.5 sigma_hi)`.
    pub fn default_for(p: &GParams) -> Self {
        Self::symmetric(
            p,
            default_half_width(p),
            DEFAULT_DX,
            DEFAULT_T_MAX,
            DEFAULT_CFL_SAFETY,
        )
        .expect("default grid parameters are valid")
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.nx as f64
    }

    pub fn n_nodes(&self) -> usize {
        self.nx + 1
    }

    /// Node `i`; exactly antisymmetric (`x(nx - i) == -x(i)`) on symmetric grids.
    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        let n = self.nx as f64;
        (self.x_min * (self.nx - i) as f64 + self.x_max * i as f64) / n
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.x(i)).collect()
    }

    /// Index of the node at `x = 0`, if there is one.
    pub fn zero_index(&self) -> Option<usize> {
        let r = -self.x_min / self.dx();
        let i = r.round();
        ((r - i).abs() < 1e-9).then_some(i as usize)
    }

    pub fn is_symmetric(&self) -> bool {
        self.x_min == -self.x_max && self.nx % 2 == 0
    }

    /// Number of explicit steps needed to reach `t`.
    pub fn steps_to(&self, t: f64) -> usize {
        (t / self.dt - 1e-9).ceil().max(0.0) as usize
    }

    /// `dt * sigma_hi^2 / dx^2`; the explicit schemes are monotone iff this is `<= 1`.
    pub fn cfl_ratio(&self, p: &GParams) -> f64 {
        let dx = self.dx();
        self.dt * p.sigma_hi() * p.sigma_hi() / (dx * dx)
    }

    pub fn check_cfl(&self, p: &GParams) -> Result<()> {
        let ratio = self.cfl_ratio(p);
        if ratio > 1.0 + 1e-12 {
            Err(Error::CflViolation { ratio })
        } else {
            Ok(())
        }
    }
}

pub fn default_half_width(p: &GParams) -> f64 {
    (6.5 * p.sigma_hi()).max(10.0).ceil()
}

/// A discrete probability measure: sorted support points with nonnegative weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measure {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl Measure {
    pub fn new(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} points vs {} weights",
                points.len(),
                weights.len()
            )));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite support point".into()));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidMeasure(
                "support points must be strictly increasing".into(),
            ));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidMeasure(format!("invalid weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMeasure(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(Self { points, weights })
    }

    /// Normalizes nonnegative masses into a probability measure.
    pub fn from_masses(points: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidMeasure(format!("total mass {total}")));
        }
        let weights = masses.into_iter().map(|m| m / total).collect();
        Self::new(points, weights)
    }

    pub fn point_mass(x: f64) -> Self {
        Self {
            points: vec![x],
            weights: vec![1.0],
        }
    }

    /// `N(0, sigma^2)` by the midpoint rule on `[-half_width_sd * sigma, half_width_sd * sigma]`,
    /// renormalized.
    pub fn gaussian(sigma: f64, n_nodes: usize, half_width_sd: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("gaussian sigma {sigma}")));
        }
        if sigma == 0.0 {
            return Ok(Self::point_mass(0.0));
        }
        if n_nodes == 0 {
            return Err(Error::InvalidArgument("gaussian needs at least one node".into()));
        }
        let a = half_width_sd * sigma;
        let h = 2.0 * a / n_nodes as f64;
        let points: Vec<f64> = (0..n_nodes)
            .map(|i| -a + (i as f64 + 0.5) * h)
            .collect();
        let masses = points
            .iter()
            .map(|x| (-0.5 * (x / sigma) * (x / sigma)).exp())
            .collect();
        Self::from_masses(points, masses)
    }

    /// The reference discretization used by the verification suites: 4001 nodes on `±8 sigma`.
    pub fn reference_gaussian(sigma: f64) -> Result<Self> {
        Self::gaussian(sigma, 4001, 8.0)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn expectation<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| if w == 0.0 { 0.0 } else { w * f(x) })
            .sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.expectation(|x| x)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.expectation(|x| (x - m) * (x - m))
    }

    /// Mass strictly outside `[lo, hi]`.
    pub fn mass_outside(&self, lo: f64, hi: f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .filter(|(&x, _)| x < lo || x > hi)
            .map(|(_, &w)| w)
            .sum()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["point", "weight"])?;
        for (x, p) in self.points.iter().zip(&self.weights) {
            w.write_record([x.to_string(), p.to_string()])?;
        }
        w.flush()
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::InvalidMeasure(e.to_string()))?;
            let parse = |k: usize| -> Result<f64> {
                rec.get(k)
                    .ok_or_else(|| Error::InvalidMeasure("short CSV row".into()))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidMeasure(e.to_string()))
            };
            points.push(parse(0)?);
            weights.push(parse(1)?);
        }
        Self::new(points, weights)
    }
}

/// Free-function form of [`Measure::expectation`].
pub fn measure_expectation<F: Fn(f64) -> f64>(m: &Measure, f: F) -> f64 {
    m.expectation(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn band() -> GParams {
        GParams::new(1.0, 2.0).unwrap()
    }

    #[test]
    fn g_examples() {
        let p = band();
        assert_eq!(g_eval(1.0, &p), 2.0);
        assert_eq!(g_eval(-1.0, &p), -0.5);
        assert_eq!(g_eval(0.0, &p), 0.0);
        assert_eq!(g_eval(0.0, &GParams::new(0.0, 3.0).unwrap()), 0.0);
    }

    #[test]
    fn g_inverse_examples() {
        let p = band();
        assert_eq!(g_inverse(2.0, &p).unwrap(), 1.0);
        assert_eq!(g_inverse(-0.5, &p).unwrap(), -1.0);
        assert_eq!(g_inverse(0.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn g_inverse_degenerate_band() {
        let p = GParams::new(0.0, 1.0).unwrap();
        assert!(matches!(g_inverse(-1.0, &p), Err(Error::DegenerateBand(_))));
        assert_eq!(g_inverse(0.5, &p).unwrap(), 1.0);
        assert!(p.beta().is_err());
    }

    #[test]
    fn params_validation() {
        assert!(GParams::new(-0.1, 1.0).is_err());
        assert!(GParams::new(2.0, 1.0).is_err());
        assert!(GParams::new(0.0, f64::INFINITY).is_err());
        assert!(GParams::new(f64::NAN, 1.0).is_err());
        let p = GParams::new(0.5, 1.5).unwrap();
        assert_eq!(p.sigma_mid(), 1.0);
        assert_eq!(p.beta().unwrap(), 3.0);
    }

    #[test]
    fn classical_band_is_linear() {
        let p = GParams::classical(1.7).unwrap();
        for a in [-3.0, -0.25, 0.0, 0.5, 4.0] {
            assert_eq!(p.g(a), 0.5 * 1.7 * 1.7 * a);
        }
    }

    #[test]
    fn expectation_examples() {
        let m = Measure::new(vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap();
        assert_eq!(measure_expectation(&m, |x| x * x), 1.0);
        assert_eq!(measure_expectation(&m, |_| 1.0), 1.0);
        let g = Measure::gaussian(1.0, 2001, 8.0).unwrap();
        assert!((g.expectation(|x| x * x) - 1.0).abs() < 1e-6);
        assert!((g.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn measure_rejects_bad_input() {
        assert!(Measure::new(vec![0.0, 1.0], vec![1.5, -0.5]).is_err());
        assert!(Measure::new(vec![0.0, 1.0], vec![0.5, 0.4]).is_err());
        assert!(Measure::new(vec![1.0, 0.0], vec![0.5, 0.5]).is_err());
        assert!(Measure::new(vec![0.0], vec![0.5, 0.5]).is_err());
        assert!(Measure::new(vec![], vec![]).is_err());
    }

    #[test]
    fn measure_csv_roundtrip() {
        let m = Measure::gaussian(0.7, 31, 6.0).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(Measure::read_csv(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn default_grid_shape() {
        let g = Grid::default_for(&band());
        assert_eq!(g.x_max, 13.0);
        assert!(g.is_symmetric());
        assert_eq!(g.zero_index(), Some(g.nx / 2));
        assert!(g.cfl_ratio(&band()) <= 0.9);
        // every hundredth of a time unit is a time level
        let m = (1.0 / g.dt).round();
        assert_eq!(m as usize % 100, 0);
        for i in 0..=g.nx {
            assert_eq!(g.x(g.nx - i), -g.x(i));
        }
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(0.0, 1.0, 10, 1.0, 0.1).is_err());
        assert!(Grid::new(-1.0, 1.0, 2, 1.0, 0.1).is_err());
        assert!(Grid::new(-1.0, 1.0, 10, 1.0, 0.0).is_err());
        let g = Grid::new(-1.0, 1.0, 10, 1.0, 1.0).unwrap();
        assert!(matches!(g.check_cfl(&band()), Err(Error::CflViolation { .. })));
    }

    proptest! {
        #[test]
        fn g_is_monotone_subadditive_homogeneous(
            a in -50.0f64..50.0, b in -50.0f64..50.0, lam in 0.0f64..20.0,
            lo in 0.0f64..2.0, spread in 0.0f64..2.0,
        ) {
            let p = GParams::new(lo, lo + spread).unwrap();
            let (hi_arg, lo_arg) = if a >= b { (a, b) } else { (b, a) };
            prop_assert!(p.g(hi_arg) >= p.g(lo_arg));
            prop_assert!(p.g(a + b) <= p.g(a) + p.g(b) + 1e-12 * (1.0 + a.abs() + b.abs()));
            prop_assert!((p.g(lam * a) - lam * p.g(a)).abs() <= 1e-12 * (1.0 + (lam * a).abs()) * 8.0);
        }

        #[test]
        fn g_inverse_is_two_sided_inverse(
            a in -100.0f64..100.0, lo in 0.05f64..3.0, spread in 0.0f64..3.0,
        ) {
            let p = GParams::new(lo, lo + spread).unwrap();
            let back = p.g_inverse(p.g(a)).unwrap();
            prop_assert!((back - a).abs() <= 1e-12 * (1.0 + a.abs()));
            let c = a;
            let fwd = p.g(p.g_inverse(c).unwrap());
            prop_assert!((fwd - c).abs() <= 1e-12 * (1.0 + c.abs()));
        }
    }
}
