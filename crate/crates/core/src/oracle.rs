//! Lattice dynamic program for `N_G[phi]`, independent of the PDE stencil.
//!
//! `u_k(x) = max over sigma in {sigma_lo, sigma_hi} of (u_{k+1}(x + sigma sqrt(dt)) +
//! u_{k+1}(x - sigma sqrt(dt))) / 2` with `u_n = phi`. Values between lattice nodes
//! are interpolated linearly and held flat beyond the ends, which keeps every step
//! monotone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcore::{self, GParams};
use crate::testfns::TestFunction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeConfig {
    pub n_steps: usize,
    pub x_min: f64,
    pub x_max: f64,
    /// Number of cells; there are `nx + 1` nodes.
    pub nx: usize,
}

impl LatticeConfig {
    /// Spacing `sigma_lo sqrt(1/n_steps) / 5` on the default half width.
    pub fn default_for(p: &GParams, n_steps: usize) -> Result<Self> {
        p.require_nondegenerate("the lattice spacing is tied to sigma_lo")?;
        if n_steps == 0 {
            return Err(Error::InvalidArgument("lattice needs at least one step".into()));
        }
        let h = p.sigma_lo() / (5.0 * (n_steps as f64).sqrt());
        let half_cells = (gcore::default_half_width(p) / h).ceil() as usize;
        let half = half_cells as f64 * h;
        Ok(Self {
            n_steps,
            x_min: -half,
            x_max: half,
            nx: 2 * half_cells,
        })
    }

    pub fn spacing(&self) -> f64 {
        (self.x_max - self.x_min) / self.nx as f64
    }

    fn x(&self, i: usize) -> f64 {
        (self.x_min * (self.nx - i) as f64 + self.x_max * i as f64) / self.nx as f64
    }

    pub fn validate(&self, p: &GParams) -> Result<()> {
        if self.n_steps == 0 || self.nx < 2 || !(self.x_min < 0.0 && 0.0 < self.x_max) {
            return Err(Error::InvalidArgument(format!("bad lattice {self:?}")));
        }
        let limit = p.sigma_lo() / (self.n_steps as f64).sqrt();
        let spacing = self.spacing();
        if spacing > limit * (1.0 + 1e-12) {
            return Err(Error::LatticeTooCoarse { spacing, limit });
        }
        Ok(())
    }
}

/// `u_0(0)` of the lattice recursion.
pub fn tree_expectation(phi: &TestFunction, p: &GParams, cfg: &LatticeConfig) -> Result<f64> {
    cfg.validate(p)?;
    let mut sigmas = vec![p.sigma_lo(), p.sigma_hi()];
    sigmas.dedup();
    let u = backward(phi, &sigmas, cfg);
    Ok(interpolate(&u, -cfg.x_min / cfg.spacing()))
}

fn backward(phi: &TestFunction, sigmas: &[f64], cfg: &LatticeConfig) -> Vec<f64> {
    let n = cfg.nx + 1;
    let dt = 1.0 / cfg.n_steps as f64;
    let h = cfg.spacing();
    let shifts: Vec<f64> = sigmas.iter().map(|s| snap(s * dt.sqrt() / h)).collect();
    let mut u: Vec<f64> = (0..n).map(|i| phi.value(cfg.x(i))).collect();
    let mut next = vec![0.0; n];
    for _ in 0..cfg.n_steps {
        for (i, out) in next.iter_mut().enumerate() {
            *out = shifts
                .iter()
                .map(|&r| 0.5 * (interpolate(&u, i as f64 + r) + interpolate(&u, i as f64 - r)))
                .fold(f64::NEG_INFINITY, f64::max);
        }
        std::mem::swap(&mut u, &mut next);
    }
    u
}

/// Rounds shifts that are whole numbers of cells up to rounding error.
fn snap(r: f64) -> f64 {
    let k = r.round();
    if (r - k).abs() < 1e-9 {
        k
    } else {
        r
    }
}

/// Linear interpolation at fractional index `r`, flat beyond the ends.
fn interpolate(u: &[f64], r: f64) -> f64 {
    let last = u.len() - 1;
    if r <= 0.0 {
        return u[0];
    }
    if r >= last as f64 {
        return u[last];
    }
    let i = r.floor() as usize;
    let w = r - i as f64;
    if w == 0.0 {
        u[i]
    } else {
        (1.0 - w) * u[i] + w * u[i + 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_convex_picks_sigma_hi() {
        let p = GParams::new(1.0, 2.0).unwrap();
        let phi = TestFunction::clipped_quadratic(11.0, 1.0).unwrap();
        let cfg = LatticeConfig::default_for(&p, 1).unwrap();
        let v = tree_expectation(&phi, &p, &cfg).unwrap();
        assert!((v - 0.5 * (phi.value(2.0) + phi.value(-2.0))).abs() < 1e-12, "{v}");
    }

    #[test]
    fn classical_cosine() {
        let p = GParams::classical(1.0).unwrap();
        let cfg = LatticeConfig::default_for(&p, 400).unwrap();
        let v = tree_expectation(&TestFunction::cosine(), &p, &cfg).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 3e-3, "{v}");
    }

    #[test]
    fn phi_beta_closed_form() {
        let p = GParams::new(1.0, 2.0).unwrap();
        let cfg = LatticeConfig::default_for(&p, 400).unwrap();
        let v = tree_expectation(&TestFunction::phi_beta(&p).unwrap(), &p, &cfg).unwrap();
        assert!((v - (-1.125f64).exp() * 2.0 / 3.0).abs() < 5e-3, "{v}");
    }

    #[test]
    fn dominates_fixed_volatility() {
        let p = GParams::new(0.5, 1.5).unwrap();
        let cfg = LatticeConfig::default_for(&p, 50).unwrap();
        for phi in crate::testfns::standard_battery(&p).unwrap() {
            let sup = backward(&phi, &[0.5, 1.5], &cfg);
            for s in [0.5, 1.5] {
                let fixed = backward(&phi, &[s], &cfg);
                assert!(sup.iter().zip(&fixed).all(|(a, b)| a >= b), "{}", phi.name());
            }
        }
    }

    #[test]
    fn monotone_in_data() {
        let p = GParams::new(1.0, 2.0).unwrap();
        let cfg = LatticeConfig::default_for(&p, 50).unwrap();
        // the clip never exceeds the identity, so a wider clip gives larger data
        let narrow = TestFunction::clipped_quadratic(2.0, 2.0).unwrap();
        let wide = TestFunction::clipped_quadratic(3.0, 2.0).unwrap();
        let sigmas = [1.0, 2.0];
        let (lo, hi) = (backward(&narrow, &sigmas, &cfg), backward(&wide, &sigmas, &cfg));
        assert!(lo.iter().zip(&hi).all(|(a, b)| a <= b));
    }

    #[test]
    fn coarse_lattice_is_rejected() {
        let p = GParams::new(1.0, 2.0).unwrap();
        let cfg = LatticeConfig {
            n_steps: 400,
            x_min: -10.0,
            x_max: 10.0,
            nx: 100,
        };
        assert!(matches!(
            tree_expectation(&TestFunction::cosine(), &p, &cfg),
            Err(Error::LatticeTooCoarse { .. })
        ));
        assert!(LatticeConfig::default_for(&GParams::new(0.0, 1.0).unwrap(), 10).is_err());
    }
}
