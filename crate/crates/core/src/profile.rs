//! Far-field energy profiles `F0` and their extensions to negative energies.
//!
//! A [`BoundaryProfile`] is the distribution `F0(e)` of the plasma at infinity
//! as a function of kinetic energy `e = |v|^2 / 2 >= 0`. The stationary states
//! built in this crate need `F` on the whole real line, because trapped
//! particles sit at negative total energy; [`ExtensionProfile`] continues `F0`
//! with the family
//!
//! ```text
//! F(e) = c e^2 / <e>^(beta + 2) + exp(-e^2) (F0(0) + F0'(0) e),   e < 0,
//! ```
//!
//! where `<e> = sqrt(1 + e^2)`. The continuation is C^1 at zero and decays like
//! `c |e|^(-beta)` as `e -> -inf`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gtransform;
use crate::quad::{self, QuadTol};

/// `4 pi sqrt(2)`: velocity-space measure in energy variables.
pub const FOUR_PI_SQRT2: f64 = 4.0 * std::f64::consts::PI * std::f64::consts::SQRT_2;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The profile `F0` on `[0, inf)` together with its derivative and decay data.
#[derive(Clone)]
pub struct BoundaryProfile {
    name: String,
    f: ScalarFn,
    df: ScalarFn,
    decay_constant: f64,
    tail_cutoff: f64,
}

impl fmt::Debug for BoundaryProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundaryProfile")
            .field("name", &self.name)
            .field("decay_constant", &self.decay_constant)
            .field("tail_cutoff", &self.tail_cutoff)
            .finish()
    }
}

impl BoundaryProfile {
    /// Builds a profile from closures. `decay_constant` is the `C` in
    /// `|F0| + |F0'| <= C / (1 + e^3)`; pass `None` to fit it from samples.
    pub fn new<F, D>(
        name: impl Into<String>,
        f: F,
        df: D,
        decay_constant: Option<f64>,
        tail_cutoff: f64,
    ) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(tail_cutoff > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tail_cutoff must be positive, got {tail_cutoff}"
            )));
        }
        let f: ScalarFn = Arc::new(f);
        let df: ScalarFn = Arc::new(df);
        let decay_constant = match decay_constant {
            Some(c) => c,
            // Samples are discrete; pad the fitted maximum.
            None => 1.05 * fit_decay_constant(&*f, &*df),
        };
        if !(decay_constant > 0.0) || !decay_constant.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "decay constant must be positive and finite, got {decay_constant}"
            )));
        }
        Ok(Self {
            name: name.into(),
            f,
            df,
            decay_constant,
            tail_cutoff,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, e: f64) -> f64 {
        (self.f)(e)
    }

    pub fn eval_deriv(&self, e: f64) -> f64 {
        (self.df)(e)
    }

    pub fn decay_constant(&self) -> f64 {
        self.decay_constant
    }

    pub fn tail_cutoff(&self) -> f64 {
        self.tail_cutoff
    }

    /// `k * F0`, used to probe the normalization check.
    pub fn scaled(&self, k: f64) -> Self {
        let f = self.f.clone();
        let df = self.df.clone();
        Self {
            name: format!("{}*{}", k, self.name),
            f: Arc::new(move |e| k * f(e)),
            df: Arc::new(move |e| k * df(e)),
            decay_constant: self.decay_constant * k.abs(),
            tail_cutoff: self.tail_cutoff,
        }
    }
}

/// `F0(e) = (2 pi)^(-3/2) exp(-e)`, the normalized Maxwellian in energy form.
pub fn make_maxwellian() -> BoundaryProfile {
    let a = (2.0 * std::f64::consts::PI).powf(-1.5);
    BoundaryProfile::new(
        "maxwellian",
        move |e: f64| a * (-e).exp(),
        move |e: f64| -a * (-e).exp(),
        None,
        700.0,
    )
    .expect("maxwellian parameters are valid")
}

/// Log-spaced sample grid on (0, 1e6] plus the origin.
fn decay_grid() -> Vec<f64> {
    let n = 2401;
    let (lo, hi) = (-6.0_f64, 6.0_f64);
    let mut g = vec![0.0];
    g.extend((0..n).map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (n - 1) as f64)));
    g
}

fn fit_decay_constant(f: &dyn Fn(f64) -> f64, df: &dyn Fn(f64) -> f64) -> f64 {
    decay_grid()
        .into_iter()
        .map(|e| (f(e).abs() + df(e).abs()) * (1.0 + e * e * e))
        .fold(0.0, f64::max)
}

/// Result of checking the far-field assumptions on a sampled profile.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub normalization: f64,
    pub normalization_ok: bool,
    pub fitted_decay_constant: f64,
    pub decay_ok: bool,
    pub monotone_ok: bool,
    /// First sample where `F0' >= 0`, if any.
    pub monotone_violation: Option<f64>,
    pub positive_ok: bool,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.normalization_ok && self.decay_ok && self.monotone_ok && self.positive_ok
    }
}

/// Checks normalization `4 pi sqrt2 int sqrt(e) F0(e) de = 1`, the cubic decay
/// bound and strict monotonicity on a log-spaced sample grid.
pub fn validate_profile(p: &BoundaryProfile, tol: f64) -> Result<ValidationReport> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {tol}")));
    }
    let normalization = normalization_integral(p)?;

    let grid = decay_grid();
    let weighted: Vec<f64> = grid
        .iter()
        .map(|&e| (p.eval(e).abs() + p.eval_deriv(e).abs()) * (1.0 + e * e * e))
        .collect();
    let fitted = weighted.iter().copied().fold(0.0, f64::max);
    // The bound must stop growing over the last decade of samples.
    let last = weighted[weighted.len() - 1];
    let decade_start = weighted[weighted.len() - 1 - (weighted.len() - 1) / 12];
    let decay_ok = fitted.is_finite() && last <= decade_start * (1.0 + 1e-9) + f64::MIN_POSITIVE;

    let sampled: Vec<f64> = grid.into_iter().filter(|&e| e <= p.tail_cutoff()).collect();
    let monotone_violation = sampled.iter().copied().find(|&e| !(p.eval_deriv(e) < 0.0));
    let positive_ok = sampled.iter().all(|&e| p.eval(e) > 0.0);

    Ok(ValidationReport {
        normalization,
        normalization_ok: (normalization - 1.0).abs() <= tol,
        fitted_decay_constant: fitted,
        decay_ok,
        monotone_ok: monotone_violation.is_none(),
        monotone_violation,
        positive_ok,
    })
}

fn normalization_integral(p: &BoundaryProfile) -> Result<f64> {
    let cutoff = gtransform::energy_cutoff(p.decay_constant(), p.tail_cutoff(), 0.0)?;
    let breaks = quad::geometric_breaks(0.0, cutoff.sqrt(), &[]);
    let r = quad::integrate(
        |t: f64| 2.0 * FOUR_PI_SQRT2 * t * t * p.eval(t * t),
        &breaks,
        QuadTol::default(),
    )?;
    Ok(r.value)
}

/// `F0` continued to negative energies by the (beta, c_beta) family.
#[derive(Debug, Clone)]
pub struct ExtensionProfile {
    base: BoundaryProfile,
    beta: f64,
    c_beta: f64,
    f0_at_zero: f64,
    df0_at_zero: f64,
}

/// Builds the C^1 extension of `p` with decay exponent `beta` in (0, 1/2)
/// and trapped-particle amplitude `c_beta > 0`.
pub fn extend(p: &BoundaryProfile, beta: f64, c_beta: f64) -> Result<ExtensionProfile> {
    check_beta(beta)?;
    if !(c_beta > 0.0) || !c_beta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "c_beta must be positive and finite, got {c_beta}"
        )));
    }
    Ok(ExtensionProfile::raw(p, beta, c_beta))
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "beta must lie in (0, 1/2), got {beta}"
        )));
    }
    Ok(())
}

impl ExtensionProfile {
    fn raw(p: &BoundaryProfile, beta: f64, c_beta: f64) -> Self {
        Self {
            base: p.clone(),
            beta,
            c_beta,
            f0_at_zero: p.eval(0.0),
            df0_at_zero: p.eval_deriv(0.0),
        }
    }

    /// The extension with the trapped term switched off (`c_beta = 0`).
    /// Not an admissible extension in general; used for diagnostics and for
    /// splitting `g` into its `c_beta`-independent and linear parts.
    pub fn without_trapped_term(p: &BoundaryProfile, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(Self::raw(p, beta, 0.0))
    }

    pub fn base(&self) -> &BoundaryProfile {
        &self.base
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn c_beta(&self) -> f64 {
        self.c_beta
    }

    /// Growth exponent `alpha = 3/2 - beta` of the induced transform.
    pub fn alpha(&self) -> f64 {
        1.5 - self.beta
    }

    pub fn eval(&self, e: f64) -> f64 {
        if e >= 0.0 {
            self.base.eval(e)
        } else {
            self.c_beta * trapped_shape(e, self.beta)
                + (-e * e).exp() * (self.f0_at_zero + self.df0_at_zero * e)
        }
    }

    pub fn eval_deriv(&self, e: f64) -> f64 {
        if e >= 0.0 {
            self.base.eval_deriv(e)
        } else {
            let q = 1.0 + e * e;
            let shape_d = 2.0 * e * q.powf(-(self.beta + 2.0) / 2.0)
                - (self.beta + 2.0) * e * e * e * q.powf(-(self.beta + 4.0) / 2.0);
            let lin = self.f0_at_zero + self.df0_at_zero * e;
            self.c_beta * shape_d + (-e * e).exp() * (self.df0_at_zero - 2.0 * e * lin)
        }
    }

    /// Bound on `|F|` over the whole line, from the base decay constant and the
    /// extension's closed form.
    pub fn sup_bound(&self) -> f64 {
        // e^2 / <e>^(beta+2) <= 1; exp(-e^2)(F0(0) + F0'(0) e) <= F0(0) + |F0'(0)| / sqrt(2e).
        self.base.decay_constant().max(
            self.c_beta
                + self.f0_at_zero
                + self.df0_at_zero.abs() / (2.0 * std::f64::consts::E).sqrt(),
        )
    }
}

/// `e^2 / <e>^(beta + 2)`.
pub(crate) fn trapped_shape(e: f64, beta: f64) -> f64 {
    e * e * (1.0 + e * e).powf(-(beta + 2.0) / 2.0)
}

/// Probe energies used by [`calibrate_c_beta`].
const PROBE_POINTS: usize = 600;
/// Far spot checks of the sub-differential condition in the asymptotic regime.
pub const ASYMPTOTIC_SPOTS: [f64; 2] = [-1.0e2, -1.0e3];
/// Slack for the sub-differential check; quadrature noise sits well below it.
pub const SUBDIFF_SLACK: f64 = 1e-10;
const C_BETA_CAP: f64 = 1e8;

/// Smallest `c_beta` (to relative width 1e-3, then inflated by `1 + margin`)
/// for which `g(e) >= g(0) + g'(0) e` holds on a dense sample of
/// `[r_probe, 0]` and at the far spot checks.
///
/// `g` is affine in `c_beta`, `g = g_{beta,0} + c_beta * I_beta`, so both parts
/// are integrated once and the bisection runs on the cached samples.
pub fn calibrate_c_beta(p: &BoundaryProfile, beta: f64, r_probe: f64, margin: f64) -> Result<f64> {
    check_beta(beta)?;
    if !(r_probe < 0.0) {
        return Err(Error::InvalidParameter(format!(
            "r_probe must be negative, got {r_probe}"
        )));
    }
    if !(margin >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "margin must be non-negative, got {margin}"
        )));
    }
    let base = ExtensionProfile::without_trapped_term(p, beta)?;
    let g0 = gtransform::g_value(&base, 0.0)?;
    let slope0 = gtransform::g_deriv(&base, 0.0)?;

    let mut probes = gtransform::clustered_nodes(r_probe, 0.0, PROBE_POINTS, 0.05);
    probes.pop(); // e = 0 holds with equality
    probes.extend(ASYMPTOTIC_SPOTS.iter().copied().filter(|&e| e < r_probe));

    let samples: Vec<(f64, f64)> = probes
        .iter()
        .map(|&e| {
            // Deficit of the c-free part and the trapped integral, both at e.
            let deficit = gtransform::g_value(&base, e)? - g0 - slope0 * e;
            let trapped = gtransform::trapped_integral(e, beta)?;
            Ok((deficit, trapped))
        })
        .collect::<Result<_>>()?;

    let passes = |c: f64| {
        samples
            .iter()
            .all(|&(deficit, trapped)| deficit + c * trapped >= -SUBDIFF_SLACK)
    };

    if passes(0.0) {
        // Condition already holds without trapped particles; any positive
        // amplitude is admissible.
        return Ok(f64::EPSILON * (1.0 + margin));
    }
    let mut hi = 1.0;
    while !passes(hi) {
        hi *= 2.0;
        if hi > C_BETA_CAP {
            return Err(Error::Calibration(format!(
                "no c_beta below {C_BETA_CAP:e} satisfies the sub-differential condition on [{r_probe}, 0]"
            )));
        }
    }
    let mut lo = 0.0;
    while (hi - lo) > 1e-3 * hi {
        let mid = 0.5 * (lo + hi);
        if passes(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi * (1.0 + margin))
}
