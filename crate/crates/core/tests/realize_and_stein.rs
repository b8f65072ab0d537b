use approx::assert_abs_diff_eq;
use gnormal::gheat::SolveConfig;
use gnormal::realize::{self, McOptions, RealizeOptions, VolatilityPolicy};
use gnormal::stein;
use gnormal::testfns::TestFunction;
use gnormal::{GParams, Measure};

fn band() -> GParams {
    GParams::new(1.0, 2.0).unwrap()
}

#[test]
fn monte_carlo_constant_policy_variance() {
    let p = band();
    let cfg = SolveConfig::default_for(&p);
    let policy = VolatilityPolicy::constant(cfg.grid, &p, 1.0, cfg.grid.steps_to(1.0)).unwrap();
    let m = realize::mc_forward_measure(&policy, 1.0, 1_000_000, 11).unwrap();
    assert_abs_diff_eq!(m.mean(), 0.0, epsilon = 5e-3);
    assert_abs_diff_eq!(m.variance(), 1.0, epsilon = 5e-3);
    let again = realize::mc_forward_measure(&policy, 1.0, 1_000_000, 11).unwrap();
    assert_eq!(m, again);
}

#[test]
fn classical_realization_is_standard_normal() {
    let p = GParams::classical(1.0).unwrap();
    let r = realize::realize(&TestFunction::cosine(), &p, &SolveConfig::default_for(&p)).unwrap();
    assert_abs_diff_eq!(r.mu_phi, 0.606531, epsilon = 2e-3);
    assert_abs_diff_eq!(r.measure.variance(), 1.0, epsilon = 1e-3);
    assert_abs_diff_eq!(r.measure.total_mass(), 1.0, epsilon = 1e-10);
}

#[test]
fn phi_beta_identities() {
    let p = band();
    let rep = stein::verify_proposition_main(&TestFunction::phi_beta(&p).unwrap(), &p, &SolveConfig::default_for(&p)).unwrap();
    for v in [rep.dt_u, rep.drift_term, rep.g_term] {
        assert_abs_diff_eq!(v, -0.243489, epsilon = 7e-3);
    }
    assert_abs_diff_eq!(rep.residual, 0.0, epsilon = 7e-3);
    for (_, w) in &rep.w_values {
        assert_abs_diff_eq!(*w, 0.216435, epsilon = 8e-3);
    }
    assert!(rep.passes(), "{rep:?}");
}

#[test]
fn classical_cosine_identities() {
    let p = GParams::classical(1.0).unwrap();
    let rep = stein::verify_proposition_with(&TestFunction::cosine(), &p, &SolveConfig::default_for(&p), &[]).unwrap();
    for v in [rep.dt_u, rep.drift_term, rep.g_term] {
        assert_abs_diff_eq!(v, -0.303265, epsilon = 3e-3);
    }
    assert_abs_diff_eq!(rep.conjecture_gap, 0.0, epsilon = 2e-3);
}

#[test]
fn convex_quadratic_grows_at_sigma_hi() {
    let p = band();
    let phi = TestFunction::clipped_quadratic(16.0, 1.0).unwrap();
    let cfg = SolveConfig::with_resolution(&p, 24.0, 0.02, 1.5).unwrap();
    let rep = stein::verify_proposition_with(&phi, &p, &cfg, &[]).unwrap();
    assert_abs_diff_eq!(rep.dt_u, 4.0, epsilon = 1e-2);
    assert_abs_diff_eq!(rep.g_term, p.g(2.0), epsilon = 1e-2);
}

#[test]
fn gaussian_bump_conjecture_gap_is_positive() {
    let p = band();
    let gap = stein::conjecture_gap(&TestFunction::gaussian_bump(), &p, &SolveConfig::default_for(&p)).unwrap();
    // frozen from the default grid
    assert_abs_diff_eq!(gap, 0.02556, epsilon = 2e-4);
    assert!(gap >= 0.01);
}

#[test]
fn mc_cross_check_on_phi_beta() {
    let p = band();
    let opts = RealizeOptions {
        mc: Some(McOptions::new(200_000, 3)),
        ..Default::default()
    };
    let r = realize::realize_with(&TestFunction::phi_beta(&p).unwrap(), &p, &SolveConfig::default_for(&p), &opts).unwrap();
    assert!(r.mc_gap.unwrap() <= 1e-2);
    assert!(r.gap <= 5e-3);
}

#[test]
fn point_mass_residual() {
    let p = band();
    let phi = TestFunction::gaussian_bump();
    let r = stein::stein_residual(&Measure::point_mass(0.0), &TestFunction::cosine(), &p);
    assert_abs_diff_eq!(r, -p.g(-1.0), epsilon = 1e-15);
    assert!(stein::stein_residual(&Measure::point_mass(0.0), &phi, &p) > 0.0);
}

#[test]
fn realization_beats_reference_gaussians() {
    for p in [band(), GParams::new(0.5, 1.5).unwrap()] {
        let cfg = SolveConfig::default_for(&p).refined(&p, 0.02).unwrap();
        for phi in gnormal::standard_battery(&p).unwrap() {
            let r = realize::realize(&phi, &p, &cfg).unwrap();
            for s in [p.sigma_lo(), p.sigma_mid(), p.sigma_hi()] {
                let g = Measure::reference_gaussian(s).unwrap().expectation(|x| phi.value(x));
                assert!(r.mu_phi >= g - 2e-3, "{} at sigma {s}: {} < {g}", phi.name(), r.mu_phi);
            }
        }
    }
}
