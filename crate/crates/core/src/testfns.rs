//! C² test functions with exact first and second derivatives.
//!
//! Every function is evaluated through its *jet* `(f, f', f'')`. The closed-form
//! kinds differentiate analytically; the tabulated kind carries its own
//! derivative tables and interpolates them with cubic Hermite splines, so the
//! second derivative is never obtained by differentiating an interpolant.

use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcore::GParams;

/// Sup-norm above which an eigenfunction integration is aborted.
pub const EIGEN_OVERFLOW_CAP: f64 = 1e12;

/// The periodic piecewise-cosine eigenfunction of `G` with `beta = sigma_hi / sigma_lo`.
///
/// On the fundamental cell `[-pi/(1+beta), (2 beta + 1) pi/(1+beta))` it is
/// `2/(1+beta) cos((1+beta) x / 2)` on the first branch and
/// `2 beta/(1+beta) cos((1+beta) x / (2 beta) + (beta-1) pi / (2 beta))` on the second,
/// extended `2 pi`-periodically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiBeta {
    beta: f64,
}

impl PhiBeta {
    pub fn new(p: &GParams) -> Result<Self> {
        Ok(Self { beta: p.beta()? })
    }

    pub fn with_beta(beta: f64) -> Result<Self> {
        if !(beta >= 1.0) || !beta.is_finite() {
            return Err(Error::InvalidArgument(format!("beta must be >= 1, got {beta}")));
        }
        Ok(Self { beta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Left end of the fundamental cell.
    pub fn cell_start(&self) -> f64 {
        -PI / (1.0 + self.beta)
    }

    /// The junction between the two branches inside the fundamental cell.
    pub fn junction(&self) -> f64 {
        PI / (1.0 + self.beta)
    }

    /// Maps `x` into the fundamental cell by floor division.
    pub fn reduce(&self, x: f64) -> f64 {
        let a = self.cell_start();
        x - 2.0 * PI * ((x - a) / (2.0 * PI)).floor()
    }

    /// True if the reduced `x` lies on the first (cosine of amplitude `2/(1+beta)`) branch.
    pub fn on_first_branch(&self, x: f64) -> bool {
        self.reduce(x) < self.junction()
    }

    pub fn jet(&self, x: f64) -> (f64, f64, f64) {
        let b = self.beta;
        let y = self.reduce(x);
        if y < self.junction() {
            let k = 0.5 * (1.0 + b);
            let amp = 2.0 / (1.0 + b);
            let (s, c) = (k * y).sin_cos();
            (amp * c, -amp * k * s, -amp * k * k * c)
        } else {
            let k = (1.0 + b) / (2.0 * b);
            let amp = 2.0 * b / (1.0 + b);
            let phase = (b - 1.0) * PI / (2.0 * b);
            let (s, c) = (k * y + phase).sin_cos();
            (amp * c, -amp * k * s, -amp * k * k * c)
        }
    }

    pub fn sup_norm(&self) -> f64 {
        2.0 * self.beta.max(1.0) / (1.0 + self.beta)
    }
}

pub fn phi_beta(x: f64, p: &GParams) -> Result<f64> {
    Ok(PhiBeta::new(p)?.jet(x).0)
}

pub fn phi_beta_d1(x: f64, p: &GParams) -> Result<f64> {
    Ok(PhiBeta::new(p)?.jet(x).1)
}

pub fn phi_beta_d2(x: f64, p: &GParams) -> Result<f64> {
    Ok(PhiBeta::new(p)?.jet(x).2)
}

/// An odd, C³ map equal to the identity on `[-inner, inner]` that flattens to the
/// constant `±(inner + band/2)` across a transition band of width `band`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothClip {
    pub inner: f64,
    pub band: f64,
}

impl SmoothClip {
    pub fn new(inner: f64, band: f64) -> Result<Self> {
        if !(inner > 0.0 && band > 0.0) || !inner.is_finite() || !band.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "smooth clip needs inner > 0 and band > 0, got ({inner}, {band})"
            )));
        }
        Ok(Self { inner, band })
    }

    /// Largest value of `|s(x)|`.
    pub fn plateau(&self) -> f64 {
        self.inner + 0.5 * self.band
    }

    pub fn jet(&self, x: f64) -> (f64, f64, f64) {
        let ax = x.abs();
        let sign = if x < 0.0 { -1.0 } else { 1.0 };
        if ax <= self.inner {
            return (x, 1.0, 0.0);
        }
        let tau = (ax - self.inner) / self.band;
        if tau >= 1.0 {
            return (sign * self.plateau(), 0.0, 0.0);
        }
        // s' = 1 - smootherstep(tau): s'' and s''' vanish at both band edges
        let t2 = tau * tau;
        let t3 = t2 * tau;
        let s = self.inner + self.band * (tau - t2 * t2 * (2.5 - 3.0 * tau + t2));
        let ds = 1.0 - t3 * (10.0 - 15.0 * tau + 6.0 * t2);
        let d2s = -30.0 * t2 * (1.0 - tau) * (1.0 - tau) / self.band;
        (sign * s, ds, sign * d2s)
    }
}

/// Uniform or nonuniform table of `(x, f, f', f'')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    xs: Vec<f64>,
    f: Vec<f64>,
    df: Vec<f64>,
    d2f: Vec<f64>,
}

impl Table {
    pub fn new(xs: Vec<f64>, f: Vec<f64>, df: Vec<f64>, d2f: Vec<f64>) -> Result<Self> {
        let n = xs.len();
        if n < 2 || f.len() != n || df.len() != n || d2f.len() != n {
            return Err(Error::InvalidArgument(format!(
                "table columns must have equal length >= 2 (x: {n}, f: {}, f': {}, f'': {})",
                f.len(),
                df.len(),
                d2f.len()
            )));
        }
        if xs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "table abscissae must be strictly increasing".into(),
            ));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !(finite(&xs) && finite(&f) && finite(&df) && finite(&d2f)) {
            return Err(Error::InvalidArgument("non-finite table entry".into()));
        }
        Ok(Self { xs, f, df, d2f })
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn values(&self) -> &[f64] {
        &self.f
    }

    pub fn first_derivatives(&self) -> &[f64] {
        &self.df
    }

    pub fn second_derivatives(&self) -> &[f64] {
        &self.d2f
    }

    /// Outside the table the function is clamped to its end value, with zero derivatives.
    pub fn jet(&self, x: f64) -> (f64, f64, f64) {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return (self.f[0], 0.0, 0.0);
        }
        if x >= self.xs[n - 1] {
            return (self.f[n - 1], 0.0, 0.0);
        }
        let j = self.xs.partition_point(|&v| v <= x) - 1;
        let h = self.xs[j + 1] - self.xs[j];
        let t = (x - self.xs[j]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let hermite = |y: &[f64], dy: &[f64]| {
            h00 * y[j] + h10 * h * dy[j] + h01 * y[j + 1] + h11 * h * dy[j + 1]
        };
        let f = hermite(&self.f, &self.df);
        let df = hermite(&self.df, &self.d2f);
        let d2f = (1.0 - t) * self.d2f[j] + t * self.d2f[j + 1];
        (f, df, d2f)
    }

    pub fn sup_norm(&self) -> f64 {
        self.f.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// CSV with header `x,f,df,d2f`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "f", "df", "d2f"])?;
        for i in 0..self.xs.len() {
            w.write_record([
                self.xs[i].to_string(),
                self.f[i].to_string(),
                self.df[i].to_string(),
                self.d2f[i].to_string(),
            ])?;
        }
        w.flush()
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut cols: [Vec<f64>; 4] = Default::default();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::InvalidArgument(format!("table CSV: {e}")))?;
            if rec.len() < 4 {
                return Err(Error::InvalidArgument(
                    "table CSV rows need columns x,f,df,d2f".into(),
                ));
            }
            for (k, col) in cols.iter_mut().enumerate() {
                let v = rec[k]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("table CSV: {e}")))?;
                col.push(v);
            }
        }
        let [xs, f, df, d2f] = cols;
        Self::new(xs, f, df, d2f)
    }
}

/// The closed-form or tabulated shape behind a [`TestFunction`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kind {
    /// `phi_beta(scale * (x - shift))`.
    PhiBeta { phi: PhiBeta, scale: f64, shift: f64 },
    Cosine,
    /// `exp(-x^2 / 2)`.
    GaussianBump,
    /// `e * exp(-1 / (1 - (x/r)^2))` on `|x| < r`, zero outside.
    CompactBump { radius: f64 },
    /// `tanh(x)`.
    SmoothStep,
    Constant { value: f64 },
    /// Polynomial `sum c_k x^k` (unbounded; only useful under a clip).
    Polynomial { coeffs: Vec<f64> },
    /// `inner(s(x))` for the smooth clip map `s`.
    Clipped { inner: Box<Kind>, clip: SmoothClip },
    Tabulated { table: Table },
}

impl Kind {
    pub fn jet(&self, x: f64) -> (f64, f64, f64) {
        match self {
            Kind::PhiBeta { phi, scale, shift } => {
                let (f, d1, d2) = phi.jet(scale * (x - shift));
                (f, scale * d1, scale * scale * d2)
            }
            Kind::Cosine => {
                let (s, c) = x.sin_cos();
                (c, -s, -c)
            }
            Kind::GaussianBump => {
                let e = (-0.5 * x * x).exp();
                (e, -x * e, (x * x - 1.0) * e)
            }
            Kind::CompactBump { radius } => {
                let y = x / radius;
                let q = 1.0 - y * y;
                // exp(-1/q) is below 1e-430 here
                if q < 1e-3 {
                    return (0.0, 0.0, 0.0);
                }
                let f = E * (-1.0 / q).exp();
                let g1 = -2.0 * y / (q * q);
                let g2 = -2.0 / (q * q) - 8.0 * y * y / (q * q * q);
                (f, f * g1 / radius, f * (g1 * g1 + g2) / (radius * radius))
            }
            Kind::SmoothStep => {
                let t = x.tanh();
                let s2 = 1.0 - t * t;
                (t, s2, -2.0 * t * s2)
            }
            Kind::Constant { value } => (*value, 0.0, 0.0),
            Kind::Polynomial { coeffs } => {
                let (mut f, mut d1, mut d2) = (0.0, 0.0, 0.0);
                for &c in coeffs.iter().rev() {
                    d2 = d2 * x + 2.0 * d1;
                    d1 = d1 * x + f;
                    f = f * x + c;
                }
                (f, d1, d2)
            }
            Kind::Clipped { inner, clip } => {
                let (s, ds, d2s) = clip.jet(x);
                let (f, d1, d2) = inner.jet(s);
                (f, d1 * ds, d2 * ds * ds + d1 * d2s)
            }
            Kind::Tabulated { table } => table.jet(x),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Kind::PhiBeta { .. } => "phi_beta",
            Kind::Cosine => "cosine",
            Kind::GaussianBump => "gaussian_bump",
            Kind::CompactBump { .. } => "compact_bump",
            Kind::SmoothStep => "smooth_step",
            Kind::Constant { .. } => "constant",
            Kind::Polynomial { .. } => "polynomial",
            Kind::Clipped { inner, .. } => match **inner {
                Kind::Polynomial { .. } => "smooth_clip_poly",
                _ => "clipped",
            },
            Kind::Tabulated { .. } => "tabulated",
        }
    }

    fn sup_norm(&self) -> f64 {
        match self {
            Kind::PhiBeta { phi, .. } => phi.sup_norm(),
            Kind::Cosine | Kind::GaussianBump | Kind::CompactBump { .. } | Kind::SmoothStep => 1.0,
            Kind::Constant { value } => value.abs(),
            Kind::Polynomial { .. } => f64::INFINITY,
            Kind::Clipped { inner, clip } => {
                let a = clip.plateau();
                let n = 20_000;
                (0..=n)
                    .map(|k| inner.jet(-a + 2.0 * a * k as f64 / n as f64).0.abs())
                    .fold(0.0, f64::max)
            }
            Kind::Tabulated { table } => table.sup_norm(),
        }
    }
}

/// A named C² test function with exact derivative evaluators and a recorded sup-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    name: String,
    kind: Kind,
    sup_norm: f64,
}

impl TestFunction {
    pub fn new(name: impl Into<String>, kind: Kind) -> Self {
        let sup_norm = kind.sup_norm();
        Self {
            name: name.into(),
            kind,
            sup_norm,
        }
    }

    pub fn phi_beta(p: &GParams) -> Result<Self> {
        Self::phi_beta_variant(p, 1.0, 0.0)
    }

    /// `phi_beta(scale * (x - shift))`.
    pub fn phi_beta_variant(p: &GParams, scale: f64, shift: f64) -> Result<Self> {
        let phi = PhiBeta::new(p)?;
        let name = match (scale == 1.0, shift == 0.0) {
            (true, true) => "phi_beta".to_string(),
            (true, false) => format!("phi_beta_shift_{shift}"),
            (false, true) => format!("phi_beta_scale_{scale}"),
            (false, false) => format!("phi_beta_scale_{scale}_shift_{shift}"),
        };
        Ok(Self::new(name, Kind::PhiBeta { phi, scale, shift }))
    }

    pub fn cosine() -> Self {
        Self::new("cos", Kind::Cosine)
    }

    pub fn gaussian_bump() -> Self {
        Self::new("gaussian_bump", Kind::GaussianBump)
    }

    pub fn compact_bump(radius: f64) -> Self {
        Self::new("compact_bump", Kind::CompactBump { radius })
    }

    pub fn smooth_step() -> Self {
        Self::new("smooth_step", Kind::SmoothStep)
    }

    pub fn constant(value: f64) -> Self {
        Self::new(format!("const:{value}"), Kind::Constant { value })
    }

    /// A polynomial composed with the smooth clip map.
    pub fn smooth_clip_poly(coeffs: Vec<f64>, inner: f64, band: f64) -> Result<Self> {
        let clip = SmoothClip::new(inner, band)?;
        Ok(Self::new(
            "smooth_clip_poly",
            Kind::Clipped {
                inner: Box::new(Kind::Polynomial { coeffs }),
                clip,
            },
        ))
    }

    /// Equals `x^2` on `[-inner, inner]`, constant beyond `inner + band`.
    pub fn clipped_quadratic(inner: f64, band: f64) -> Result<Self> {
        Ok(Self::smooth_clip_poly(vec![0.0, 0.0, 1.0], inner, band)?.with_name("clipped_quadratic"))
    }

    pub fn tabulated(name: impl Into<String>, table: Table) -> Self {
        Self::new(name, Kind::Tabulated { table })
    }

    /// Composes this function with the smooth clip map.
    pub fn clipped(self, inner: f64, band: f64) -> Result<Self> {
        let clip = SmoothClip::new(inner, band)?;
        let name = format!("{}_clipped", self.name);
        Ok(Self::new(
            name,
            Kind::Clipped {
                inner: Box::new(self.kind),
                clip,
            },
        ))
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &Kind {
        &self.kind
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    #[inline]
    pub fn jet(&self, x: f64) -> (f64, f64, f64) {
        self.kind.jet(x)
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        self.kind.jet(x).0
    }

    #[inline]
    pub fn d1(&self, x: f64) -> f64 {
        self.kind.jet(x).1
    }

    #[inline]
    pub fn d2(&self, x: f64) -> f64 {
        self.kind.jet(x).2
    }

    /// Samples the jet on `xs` into a table.
    pub fn to_table(&self, xs: &[f64]) -> Result<Table> {
        let (mut f, mut df, mut d2f) = (
            Vec::with_capacity(xs.len()),
            Vec::with_capacity(xs.len()),
            Vec::with_capacity(xs.len()),
        );
        for &x in xs {
            let (a, b, c) = self.jet(x);
            f.push(a);
            df.push(b);
            d2f.push(c);
        }
        Table::new(xs.to_vec(), f, df, d2f)
    }

    /// Largest deviation of `f'` (resp. `f''`) from centered differences of `f` (resp. `f'`)
    /// with step `h`, over the sample points.
    pub fn finite_difference_defect(&self, xs: &[f64], h: f64) -> (f64, f64) {
        xs.iter().fold((0.0f64, 0.0f64), |(e1, e2), &x| {
            let (_, d1, d2) = self.jet(x);
            let fd1 = (self.value(x + h) - self.value(x - h)) / (2.0 * h);
            let fd2 = (self.d1(x + h) - self.d1(x - h)) / (2.0 * h);
            (e1.max((fd1 - d1).abs()), e2.max((fd2 - d2).abs()))
        })
    }
}

/// Which of the two eigen-ODEs to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenSign {
    /// `x/2 phi' + G(phi'') = rho phi` (self-similar G-heat solutions).
    Plus,
    /// `x/2 H' - G(H'') = rho H` (functions with vanishing G-normal expectation).
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    /// `(phi(0), phi'(0)) = (1, 0)`.
    Even,
    /// `(phi(0), phi'(0)) = (0, 1)`.
    Odd,
}

/// Integrates an eigen-ODE outward from `x = 0` with classical RK4 and step
/// `2 x_max / n`, returning the tabulated solution on `[-x_max, x_max]`.
pub fn eigen_solve(
    rho: f64,
    sign: EigenSign,
    p: &GParams,
    parity: Parity,
    x_max: f64,
    n: usize,
) -> Result<TestFunction> {
    p.require_nondegenerate("eigen-ODE needs an invertible G")?;
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::InvalidArgument(format!("rho must be >= 0, got {rho}")));
    }
    if !(x_max > 0.0) || !x_max.is_finite() {
        return Err(Error::InvalidArgument(format!("x_max must be > 0, got {x_max}")));
    }
    if n < 2 || n % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "n must be even and >= 2 so that x = 0 is a node, got {n}"
        )));
    }
    let s = match sign {
        EigenSign::Plus => 1.0,
        EigenSign::Minus => -1.0,
    };
    // phi'' = G^{-1}(s (rho phi - x/2 phi'))
    let accel = |x: f64, y0: f64, y1: f64| p.g_inverse(s * (rho * y0 - 0.5 * x * y1));
    let rhs = |x: f64, y: [f64; 2]| -> Result<[f64; 2]> { Ok([y[1], accel(x, y[0], y[1])?]) };

    let half = n / 2;
    let h = 2.0 * x_max / n as f64;
    let init = match parity {
        Parity::Even => [1.0, 0.0],
        Parity::Odd => [0.0, 1.0],
    };
    let mut f = vec![0.0; n + 1];
    let mut df = vec![0.0; n + 1];
    f[half] = init[0];
    df[half] = init[1];

    for dir in [1.0f64, -1.0] {
        let step = dir * h;
        let mut y = init;
        for k in 0..half {
            let x = dir * k as f64 * h;
            let k1 = rhs(x, y)?;
            let k2 = rhs(
                x + 0.5 * step,
                [y[0] + 0.5 * step * k1[0], y[1] + 0.5 * step * k1[1]],
            )?;
            let k3 = rhs(
                x + 0.5 * step,
                [y[0] + 0.5 * step * k2[0], y[1] + 0.5 * step * k2[1]],
            )?;
            let k4 = rhs(x + step, [y[0] + step * k3[0], y[1] + step * k3[1]])?;
            for c in 0..2 {
                y[c] += step / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
            }
            let x_next = dir * (k + 1) as f64 * h;
            if !y[0].is_finite() || y[0].abs() > EIGEN_OVERFLOW_CAP || !y[1].is_finite() {
                return Err(Error::Overflow {
                    x: x_next,
                    value: y[0].abs(),
                });
            }
            let idx = if dir > 0.0 { half + k + 1 } else { half - k - 1 };
            f[idx] = y[0];
            df[idx] = y[1];
        }
    }

    let xs: Vec<f64> = (0..=n)
        .map(|j| (j as f64 - half as f64) * h)
        .collect();
    let d2f = xs
        .iter()
        .zip(f.iter().zip(&df))
        .map(|(&x, (&a, &b))| accel(x, a, b))
        .collect::<Result<Vec<_>>>()?;
    let sign_name = match sign {
        EigenSign::Plus => "plus",
        EigenSign::Minus => "minus",
    };
    let parity_name = match parity {
        Parity::Even => "even",
        Parity::Odd => "odd",
    };
    Ok(TestFunction::tabulated(
        format!("eigen_{sign_name}_{parity_name}_rho{rho}"),
        Table::new(xs, f, df, d2f)?,
    ))
}

/// Shifts applied to `phi_beta` in the battery (the unshifted one included).
pub const BATTERY_SHIFTS: [f64; 3] = [0.0, 0.5, 2.0];
/// Scales applied to `phi_beta` in the battery.
pub const BATTERY_SCALES: [f64; 2] = [0.5, 2.0];

/// The fixed ten-member verification battery.
///
/// Five members are `phi_beta` variants, so the band must have `sigma_lo > 0`.
pub fn standard_battery(p: &GParams) -> Result<Vec<TestFunction>> {
    let mut out = Vec::with_capacity(10);
    for shift in BATTERY_SHIFTS {
        out.push(TestFunction::phi_beta_variant(p, 1.0, shift)?);
    }
    for scale in BATTERY_SCALES {
        out.push(TestFunction::phi_beta_variant(p, scale, 0.0)?);
    }
    out.extend(band_free_members());
    Ok(out)
}

/// The battery members that do not depend on the band.
fn band_free_members() -> Vec<TestFunction> {
    vec![
        TestFunction::cosine(),
        TestFunction::gaussian_bump(),
        TestFunction::compact_bump(3.0),
        TestFunction::clipped_quadratic(2.0, 2.0).expect("valid clip"),
        TestFunction::smooth_step(),
    ]
}

/// Looks up a battery member or a `const:<value>` function by name.
pub fn by_name(name: &str, p: &GParams) -> Result<TestFunction> {
    if let Some(v) = name.strip_prefix("const:") {
        let value = v
            .parse::<f64>()
            .map_err(|_| Error::InvalidArgument(format!("bad constant in '{name}'")))?;
        return Ok(TestFunction::constant(value));
    }
    if let Some(f) = band_free_members().into_iter().find(|f| f.name() == name) {
        return Ok(f);
    }
    standard_battery(p)?
        .into_iter()
        .find(|f| f.name() == name)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown test function '{name}'")))
}

pub fn battery_names(p: &GParams) -> Result<Vec<String>> {
    Ok(standard_battery(p)?
        .iter()
        .map(|f| f.name().to_string())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn band() -> GParams {
        GParams::new(1.0, 2.0).unwrap()
    }

    #[test]
    fn phi_beta_examples() {
        let p = band();
        assert!((phi_beta(0.0, &p).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        for beta in [1.0, 1.5, 2.0, 3.0, 7.0] {
            let phi = PhiBeta::with_beta(beta).unwrap();
            assert!(phi.jet(PI / (1.0 + beta)).0.abs() < 1e-14);
        }
        assert!(phi_beta(0.0, &GParams::new(0.0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn phi_beta_is_c1_at_junctions() {
        for beta in [1.0, 2.0, 3.0, 5.5] {
            let phi = PhiBeta::with_beta(beta).unwrap();
            let b = beta;
            let xj = PI / (1.0 + b);
            // evaluate each closed-form branch directly at the junction
            let k1 = 0.5 * (1.0 + b);
            let a1 = 2.0 / (1.0 + b);
            let k2 = (1.0 + b) / (2.0 * b);
            let a2 = 2.0 * b / (1.0 + b);
            let ph = (b - 1.0) * PI / (2.0 * b);
            let (v1, s1) = (a1 * (k1 * xj).cos(), -a1 * k1 * (k1 * xj).sin());
            let (v2, s2) = (a2 * (k2 * xj + ph).cos(), -a2 * k2 * (k2 * xj + ph).sin());
            assert!(v1.abs() < 1e-12 && v2.abs() < 1e-12);
            assert!((s1 + 1.0).abs() < 1e-12 && (s2 + 1.0).abs() < 1e-12);
            // and the cell wrap-around junction
            let xe = (2.0 * b + 1.0) * PI / (1.0 + b);
            let v3 = a2 * (k2 * xe + ph).cos();
            let s3 = -a2 * k2 * (k2 * xe + ph).sin();
            let xs = -PI / (1.0 + b);
            let (v0, s0) = (a1 * (k1 * xs).cos(), -a1 * k1 * (k1 * xs).sin());
            assert!((v3 - v0).abs() < 1e-12 && (s3 - s0).abs() < 1e-12);
            assert!((phi.jet(xj - 1e-13).1 + 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn phi_beta_sign_structure() {
        let phi = PhiBeta::with_beta(2.0).unwrap();
        for k in 0..2000 {
            let x = -10.0 + 20.0 * k as f64 / 2000.0;
            let (f, _, d2) = phi.jet(x);
            if phi.on_first_branch(x) {
                assert!(f >= -1e-15 && d2 <= 1e-15, "x={x}");
            } else {
                assert!(f <= 1e-15 && d2 >= -1e-15, "x={x}");
            }
        }
    }

    #[test]
    fn gaussian_bump_curvature_at_zero() {
        assert_eq!(TestFunction::gaussian_bump().d2(0.0), -1.0);
    }

    #[test]
    fn battery_has_ten_members_with_consistent_derivatives() {
        for p in [band(), GParams::new(0.5, 1.5).unwrap(), GParams::classical(1.0).unwrap()] {
            let battery = standard_battery(&p).unwrap();
            assert_eq!(battery.len(), 10);
            let xs: Vec<f64> = (0..997).map(|k| -9.0 + 18.0 * (k as f64 + 0.37) / 997.0).collect();
            let h = 1e-4;
            for f in &battery {
                assert!(f.sup_norm().is_finite() && f.sup_norm() > 0.0, "{}", f.name());
                let (e1, e2) = f.finite_difference_defect(&xs, h);
                // O(h^2) with generous constants; phi_beta'' has a kink at junctions
                assert!(e1 < 1e-6, "{} f' defect {e1}", f.name());
                assert!(e2 < 1e-6, "{} f'' defect {e2}", f.name());
                for &x in &xs {
                    assert!(f.value(x).abs() <= f.sup_norm() + 1e-12, "{}", f.name());
                }
            }
        }
    }

    #[test]
    fn battery_needs_positive_lower_volatility() {
        assert!(standard_battery(&GParams::new(0.0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn clipped_quadratic_shape() {
        let f = TestFunction::clipped_quadratic(3.0, 2.0).unwrap();
        assert_eq!(f.jet(1.5), (2.25, 3.0, 2.0));
        assert_eq!(f.value(10.0), 16.0);
        assert_eq!(f.value(-10.0), 16.0);
        assert_eq!(f.sup_norm(), 16.0);
        let (_, e2) = f.finite_difference_defect(&[2.9, 3.0, 3.1, 3.5, 4.0, 4.5, 5.0, 5.1], 1e-5);
        assert!(e2 < 1e-6);
    }

    #[test]
    fn registry_lookup() {
        let p = band();
        assert_eq!(by_name("cos", &p).unwrap().value(0.0), 1.0);
        assert_eq!(by_name("const:3", &p).unwrap().value(-4.0), 3.0);
        assert!(by_name("nope", &p).is_err());
        assert!(by_name("const:x", &p).is_err());
        let degenerate = GParams::new(0.0, 1.0).unwrap();
        assert!(by_name("cos", &degenerate).is_ok());
        assert!(by_name("phi_beta", &degenerate).is_err());
        assert_eq!(battery_names(&p).unwrap().len(), 10);
    }

    #[test]
    fn eigen_plus_quadratic() {
        let p = band();
        let f = eigen_solve(1.0, EigenSign::Plus, &p, Parity::Even, 6.0, 1200).unwrap();
        for k in 0..=240 {
            let x = -6.0 + 12.0 * k as f64 / 240.0;
            let exact = (x * x + 4.0) / 4.0;
            assert!((f.value(x) - exact).abs() < 1e-6, "x={x}");
        }
    }

    #[test]
    fn eigen_minus_quadratic_uses_lower_volatility() {
        // Normalizing x^2 - sigma_lo^2 by its (negative) value at 0 keeps it a solution,
        // because flipping the sign exchanges the roles of sigma_hi and sigma_lo in G.
        let p = band();
        let f = eigen_solve(1.0, EigenSign::Minus, &p, Parity::Even, 5.0, 1000).unwrap();
        for k in 0..=200 {
            let x = -5.0 + 10.0 * k as f64 / 200.0;
            assert!((f.value(x) - (1.0 - x * x)).abs() < 1e-6, "x={x}");
        }
        // x^2 - sigma_hi^2 itself solves the ODE
        let h = TestFunction::smooth_clip_poly(vec![-4.0, 0.0, 1.0], 50.0, 1.0).unwrap();
        for x in [-3.0, -0.5, 0.0, 1.25, 4.0] {
            let (v, d1, d2) = h.jet(x);
            assert!((0.5 * x * d1 - p.g(d2) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn eigen_minus_linear() {
        let p = band();
        let f = eigen_solve(0.5, EigenSign::Minus, &p, Parity::Odd, 4.0, 400).unwrap();
        for k in 0..=100 {
            let x = -4.0 + 8.0 * k as f64 / 100.0;
            assert!((f.value(x) - x).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn eigen_ode_residual_on_table() {
        let p = GParams::new(0.5, 1.5).unwrap();
        for (rho, sign, parity) in [
            (0.7, EigenSign::Plus, Parity::Even),
            (1.3, EigenSign::Plus, Parity::Odd),
            (0.4, EigenSign::Minus, Parity::Even),
            (2.0, EigenSign::Minus, Parity::Odd),
        ] {
            let f = eigen_solve(rho, sign, &p, parity, 2.0, 20_000).unwrap();
            let Kind::Tabulated { table } = f.kind() else { unreachable!() };
            let (xs, v, d1) = (table.xs(), table.values(), table.first_derivatives());
            let dd = table.second_derivatives();
            let h = xs[1] - xs[0];
            let s = if sign == EigenSign::Plus { 1.0 } else { -1.0 };
            for j in 1..xs.len() - 1 {
                let res = 0.5 * xs[j] * d1[j] + s * p.g(dd[j]) - rho * v[j];
                assert!(res.abs() <= 1e-6 * (1.0 + v[j].abs()), "rho={rho} x={}", xs[j]);
                // phi''' jumps where phi'' changes sign; the stencil is only O(h) there
                if dd[j - 1].signum() != dd[j + 1].signum() || dd[j] == 0.0 {
                    continue;
                }
                // independent of the stored phi'': difference the slope table
                let d2 = (d1[j + 1] - d1[j - 1]) / (2.0 * h);
                let gd2 = p.g(d2);
                let res = 0.5 * xs[j] * d1[j] + s * gd2 - rho * v[j];
                let scale = 1.0 + v[j].abs() + (xs[j] * d1[j]).abs() + gd2.abs();
                assert!(res.abs() <= 1e-6 * scale, "rho={rho} x={} res={res}", xs[j]);
            }
        }
    }

    #[test]
    fn eigen_rejects_bad_input() {
        let p = band();
        assert!(eigen_solve(-1.0, EigenSign::Plus, &p, Parity::Even, 1.0, 10).is_err());
        assert!(eigen_solve(1.0, EigenSign::Plus, &p, Parity::Even, 1.0, 7).is_err());
        let degenerate = GParams::new(0.0, 1.0).unwrap();
        assert!(matches!(
            eigen_solve(1.0, EigenSign::Plus, &degenerate, Parity::Even, 1.0, 10),
            Err(Error::DegenerateBand(_))
        ));
        assert!(matches!(
            eigen_solve(30.0, EigenSign::Plus, &p, Parity::Even, 60.0, 2000),
            Err(Error::Overflow { .. })
        ));
    }

    #[test]
    fn table_csv_roundtrip_and_interpolation() {
        let f = TestFunction::gaussian_bump();
        let xs: Vec<f64> = (0..=400).map(|k| -8.0 + 0.04 * k as f64).collect();
        let t = f.to_table(&xs).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = Table::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        let tab = TestFunction::tabulated("g", back);
        for x in [-3.3, -0.01, 0.5, 2.77] {
            let (a, b, c) = tab.jet(x);
            let (ea, eb, ec) = f.jet(x);
            assert!((a - ea).abs() < 1e-6 && (b - eb).abs() < 1e-5 && (c - ec).abs() < 1e-3);
        }
        assert_eq!(tab.value(100.0), f.value(8.0));
    }

    proptest! {
        #[test]
        fn phi_beta_is_periodic(x in -200.0f64..200.0, lo in 0.2f64..2.0, ratio in 1.0f64..6.0) {
            let p = GParams::new(lo, lo * ratio).unwrap();
            let a = phi_beta(x, &p).unwrap();
            let b = phi_beta(x + 2.0 * PI, &p).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn phi_beta_eigenrelation(x in -50.0f64..50.0, lo in 0.2f64..2.0, ratio in 1.0f64..6.0) {
            let p = GParams::new(lo, lo * ratio).unwrap();
            let sigma = p.sigma_mid();
            let (f, _, d2) = PhiBeta::new(&p).unwrap().jet(x);
            prop_assert!((p.g(d2) + 0.5 * sigma * sigma * f).abs() <= 1e-10);
        }
    }
}
