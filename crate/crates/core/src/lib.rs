//! Numerics for one-dimensional G-normal sublinear expectations.
//!
//! * [`gcore`]: the volatility band, the generator `G`, grids and discrete measures.
//! * [`testfns`]: C² test functions with exact derivatives and the verification battery.
//! * [`gheat`]: explicit monotone solver for `u_t = G(u_xx)` and derivative probes.
//! * [`realize`]: optimal bang-bang volatility and the realization measure it induces.
//! * [`stein`]: Stein-type residuals and the verification suites built on them.
//! * [`oracle`]: an independent lattice dynamic program for `N_G[phi]`.
//! * [`cli`]: the `gnormal` command-line front end.

pub mod cli;
pub mod error;
pub mod gcore;
pub mod gheat;
pub mod oracle;
pub mod realize;
pub mod stein;
pub mod testfns;

pub use error::{Error, Result};
pub use gcore::{g_eval, g_inverse, measure_expectation, GParams, Grid, Measure};
pub use testfns::{TestFunction, standard_battery};
