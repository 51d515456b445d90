//! The velocity-integrated profile
//!
//! ```text
//! g(r) = 4 pi sqrt2 int_0^inf sqrt(s) F(r + s) ds,
//! ```
//!
//! i.e. the electron density produced by a potential value `r`, together with
//! `sigma = -g'(0)`, the shifted nonlinearity `B[P] = g(P) - g(0) + sigma P`,
//! and the checks that make the fixed-point construction valid:
//!
//! * normalization `g(0) = 1`,
//! * strict monotonicity `g' < 0`,
//! * the sub-differential bound `g(r) >= g(0) + g'(0) r`,
//! * growth bounds `g(r) - g(0) - g'(0) r <= C1 |r|^alpha` and
//!   `|g'(r) - g'(0)| <= C2 |r|^(alpha - 1)` with `alpha = 3/2 - beta`.
//!
//! Integrals are evaluated after `s = t^2`, which removes the square-root
//! weight (`g = 8 pi sqrt2 int t^2 F(r + t^2) dt`). The PDE solver uses a
//! tabulated copy interpolated by monotone cubics.

use std::io::{BufWriter, Write};
use std::sync::atomic::{AtomicUsize, Ordering};

use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::interp::MonotoneCubic;
use crate::profile::{trapped_shape, ExtensionProfile, ASYMPTOTIC_SPOTS, FOUR_PI_SQRT2, SUBDIFF_SLACK};
use crate::quad::{self, QuadTol};

/// Neglected improper tail of every g-type integral.
pub const TAIL_TOL: f64 = 1e-12;
/// Tolerance on `|g(0) - 1|`.
pub const NORMALIZATION_TOL: f64 = 1e-8;
/// Negative values of `B` below this are treated as failures.
pub const B_NEGATIVE_TOL: f64 = 1e-12;
const C0_SAFETY: f64 = 1.1;

fn quad_tol() -> QuadTol {
    QuadTol {
        abs: 1e-13,
        rel: 1e-13,
        max_intervals: 4000,
    }
}

/// Energy beyond which the decay bound `|F| <= C / (1 + u^3)` closes the
/// integral for argument `r` to within [`TAIL_TOL`].
pub fn energy_cutoff(decay_constant: f64, tail_cutoff: f64, r: f64) -> Result<f64> {
    let neg = (-r).max(0.0);
    let bound = |u: f64| {
        FOUR_PI_SQRT2
            * decay_constant
            * ((2.0 / 3.0) * u.powf(-1.5) + 0.5 * neg.sqrt() * u.powi(-2) + 0.4 * 2f64.sqrt() * u.powf(-2.5))
    };
    let mut u = (2.0 * r.abs()).max(1.0).max(tail_cutoff.min(1e3));
    while bound(u) > TAIL_TOL {
        u *= 2.0;
        if u > 1e30 {
            return Err(Error::InsufficientDecay {
                bound: bound(u),
                tol: TAIL_TOL,
            });
        }
    }
    Ok(u)
}

fn t_breaks(f: &ExtensionProfile, r: f64) -> Result<Vec<f64>> {
    let base = f.base();
    let u = energy_cutoff(base.decay_constant(), base.tail_cutoff(), r)?;
    let t_max = (u - r).sqrt();
    let kink = if r < 0.0 { vec![(-r).sqrt()] } else { vec![] };
    Ok(quad::geometric_breaks(0.0, t_max, &kink))
}

/// `g(r)` by adaptive quadrature.
pub fn g_value(f: &ExtensionProfile, r: f64) -> Result<f64> {
    let breaks = t_breaks(f, r)?;
    let res = quad::integrate(|t| t * t * f.eval(r + t * t), &breaks, quad_tol())?;
    Ok(2.0 * FOUR_PI_SQRT2 * res.value)
}

/// `g'(y) = -2 pi sqrt2 int_0^inf F(y + s) / sqrt(s) ds`, obtained by
/// differentiating under the integral and integrating by parts.
pub fn g_deriv(f: &ExtensionProfile, y: f64) -> Result<f64> {
    let breaks = t_breaks(f, y)?;
    let res = quad::integrate(|t| f.eval(y + t * t), &breaks, quad_tol())?;
    Ok(-FOUR_PI_SQRT2 * res.value)
}

/// `I_beta(r) = 4 pi sqrt2 int_0^{|r|} sqrt(s) (r+s)^2 / <r+s>^(beta+2) ds`,
/// the part of `g` proportional to `c_beta`; zero for `r >= 0`.
pub fn trapped_integral(r: f64, beta: f64) -> Result<f64> {
    if r >= 0.0 {
        return Ok(0.0);
    }
    let t_end = (-r).sqrt();
    let breaks = quad::geometric_breaks(0.0, t_end, &[]);
    let res = quad::integrate(|t| t * t * trapped_shape(r + t * t, beta), &breaks, quad_tol())?;
    Ok(2.0 * FOUR_PI_SQRT2 * res.value)
}

/// `n` nodes on `[a, b]` (with `a <= 0 <= b`) clustered near zero by a sinh
/// map: spacing ~ `scale * dxi` near zero, geometric growth away from it.
/// Zero is always a node when `a < 0 < b`.
pub fn clustered_nodes(a: f64, b: f64, n: usize, scale: f64) -> Vec<f64> {
    assert!(a <= 0.0 && b >= 0.0 && a < b && n >= 3);
    let xa = (-a / scale).asinh();
    let xb = (b / scale).asinh();
    let intervals = n - 1;
    let mut na = ((intervals as f64) * xa / (xa + xb)).round() as usize;
    if a < 0.0 {
        na = na.max(1);
    }
    if b > 0.0 {
        na = na.min(intervals - 1);
    }
    let nb = intervals - na;
    let mut nodes = Vec::with_capacity(n);
    for i in 0..=na {
        let v = if na == 0 { 0.0 } else { -scale * (xa * (na - i) as f64 / na as f64).sinh() };
        nodes.push(v);
    }
    for j in 1..=nb {
        nodes.push(scale * (xb * j as f64 / nb as f64).sinh());
    }
    nodes[0] = a;
    nodes[n - 1] = b;
    if na > 0 && nb > 0 {
        nodes[na] = 0.0;
    }
    nodes
}

/// Fitted constants of the growth and boundedness conditions.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GrowthConstants {
    /// `max (g - g(0) - g'(0) r) / |r|^alpha` over table nodes with `|r| >= 1`.
    pub c1: f64,
    /// `max |g' - g'(0)| / |r|^(alpha-1)` over nodes with `|r| >= 1`.
    pub c2: f64,
    /// Local branch: `max (g - g(0) - g'(0) r) / r^2` over `0 < |r| < 1`.
    pub c1_local: f64,
    /// Local branch: `max |g' - g'(0)| / |r|` over `0 < |r| < 1`.
    pub c2_local: f64,
}

/// Tabulated `g`, `g'` with the derived constants.
#[derive(Debug)]
pub struct GTransform {
    profile: ExtensionProfile,
    interp: MonotoneCubic,
    zero_index: usize,
    g0: f64,
    sigma: f64,
    alpha: f64,
    growth: GrowthConstants,
    b_constant: f64,
    clamp_events: AtomicUsize,
}

impl Clone for GTransform {
    fn clone(&self) -> Self {
        Self {
            profile: self.profile.clone(),
            interp: self.interp.clone(),
            zero_index: self.zero_index,
            g0: self.g0,
            sigma: self.sigma,
            alpha: self.alpha,
            growth: self.growth,
            b_constant: self.b_constant,
            clamp_events: AtomicUsize::new(self.clamp_events.load(Ordering::Relaxed)),
        }
    }
}

/// Default table size used by the solvers.
pub const DEFAULT_TABLE_NODES: usize = 4001;

/// Tabulates `g` and `g'` on `[r_min, r_max]` (clustered near zero), sets
/// `sigma = -g'(0)` and `alpha = 3/2 - beta`, and fits the growth constants and
/// the constant `C0` of `0 <= B[P] <= C0 min(|P|^alpha, P^2)`.
pub fn build_gtransform(f: &ExtensionProfile, r_min: f64, r_max: f64, n: usize) -> Result<GTransform> {
    if !(r_min < 0.0 && r_max > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "table range must straddle zero, got [{r_min}, {r_max}]"
        )));
    }
    if n < 64 {
        return Err(Error::InvalidParameter(format!("table needs at least 64 nodes, got {n}")));
    }
    let nodes = clustered_nodes(r_min, r_max, n, 0.05);
    let zero_index = nodes.iter().position(|&r| r == 0.0).expect("zero node");
    let mut g = Vec::with_capacity(n);
    let mut dg = Vec::with_capacity(n);
    for &r in &nodes {
        g.push(g_value(f, r)?);
        dg.push(g_deriv(f, r)?);
    }
    let g0 = g[zero_index];
    let sigma = -dg[zero_index];
    let alpha = f.alpha();

    let mut growth = GrowthConstants {
        c1: 0.0,
        c2: 0.0,
        c1_local: 0.0,
        c2_local: 0.0,
    };
    let mut c0: f64 = 0.0;
    for i in 0..n {
        let r = nodes[i];
        if r == 0.0 {
            continue;
        }
        let a = r.abs();
        let excess = g[i] - g0 + sigma * r;
        let dexcess = (dg[i] + sigma).abs();
        if a >= 1.0 {
            growth.c1 = growth.c1.max(excess / a.powf(alpha));
            growth.c2 = growth.c2.max(dexcess / a.powf(alpha - 1.0));
        } else {
            growth.c1_local = growth.c1_local.max(excess / (a * a));
            growth.c2_local = growth.c2_local.max(dexcess / a);
        }
        c0 = c0.max(excess / a.powf(alpha).min(a * a));
    }

    let interp = MonotoneCubic::new(nodes, g, dg);
    if interp.limited_count() > 0 {
        warn!(
            "monotone limiter adjusted {} slopes in the g table",
            interp.limited_count()
        );
    }
    Ok(GTransform {
        profile: f.clone(),
        interp,
        zero_index,
        g0,
        sigma,
        alpha,
        growth,
        b_constant: C0_SAFETY * c0,
        clamp_events: AtomicUsize::new(0),
    })
}

impl GTransform {
    pub fn profile(&self) -> &ExtensionProfile {
        &self.profile
    }

    pub fn nodes(&self) -> &[f64] {
        self.interp.nodes()
    }

    pub fn table_values(&self) -> &[f64] {
        self.interp.values()
    }

    pub fn table_derivs(&self) -> &[f64] {
        self.interp.slopes()
    }

    pub fn r_min(&self) -> f64 {
        self.interp.x_min()
    }

    pub fn r_max(&self) -> f64 {
        self.interp.x_max()
    }

    /// Tabulated `g(0)`; equals 1 to quadrature accuracy and serves as the
    /// background density of the discrete problem.
    pub fn g0(&self) -> f64 {
        self.g0
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn growth(&self) -> GrowthConstants {
        self.growth
    }

    /// `C0` in `B[P] <= C0 min(|P|^alpha, P^2)`.
    pub fn b_constant(&self) -> f64 {
        self.b_constant
    }

    /// Constant `L` with `|B'(p)| <= L |p|^(alpha - 1)` for all `p`.
    pub fn lipschitz_constant(&self) -> f64 {
        self.growth.c2.max(self.growth.c2_local)
    }

    /// Number of evaluations above `r_max` that were clamped since the last reset.
    pub fn take_clamp_events(&self) -> usize {
        self.clamp_events.swap(0, Ordering::Relaxed)
    }

    fn check_range(&self, r: f64) -> Result<()> {
        if r < self.r_min() || r.is_nan() {
            return Err(Error::BelowTable {
                value: r,
                r_min: self.r_min(),
                cell: None,
            });
        }
        Ok(())
    }

    /// Interpolated `g(r)`. Above the table the end value (~0) is used; below
    /// it the call fails rather than extrapolating into the deep well.
    pub fn g(&self, r: f64) -> Result<f64> {
        self.check_range(r)?;
        if r > self.r_max() {
            self.clamp_events.fetch_add(1, Ordering::Relaxed);
        }
        Ok(self.interp.eval(r))
    }

    /// Interpolated `g'(r)`.
    pub fn g_prime(&self, r: f64) -> Result<f64> {
        self.check_range(r)?;
        if r >= self.r_max() {
            return Ok(0.0);
        }
        Ok(self.interp.eval_deriv(r))
    }

    /// `B[p] = g(p) - g(0) + sigma p`. In the two cells adjacent to zero the
    /// value comes from the Taylor form of the cell cubic, which avoids the
    /// cancellation of `g(p) - g(0)` for tiny `p`.
    pub fn b(&self, p: f64) -> Result<f64> {
        self.check_range(p)?;
        if p >= self.r_max() {
            if p > self.r_max() {
                self.clamp_events.fetch_add(1, Ordering::Relaxed);
            }
            return Ok(self.interp.values()[self.interp.nodes().len() - 1] - self.g0 + self.sigma * p);
        }
        let k = self.interp.locate(p);
        let z = self.zero_index;
        if k == z || k + 1 == z {
            let (c2, c3) = self.interp.taylor_about(k, z);
            let m0 = self.interp.slopes()[z];
            return Ok((m0 + self.sigma) * p + (c2 + c3 * p) * p * p);
        }
        Ok(self.interp.eval_in_cell(k, p) - self.g0 + self.sigma * p)
    }

    /// Pointwise `B[P]` over a field. Fails on arguments below the table and
    /// on negative outputs beyond [`B_NEGATIVE_TOL`].
    pub fn b_apply(&self, p: &ScalarField) -> Result<ScalarField> {
        let mut out = Vec::with_capacity(p.values.len());
        for (idx, &v) in p.values.iter().enumerate() {
            let b = self.b(v).map_err(|e| with_cell(e, p, idx))?;
            if b < -B_NEGATIVE_TOL {
                return Err(Error::NegativeB {
                    value: b,
                    cell: p.grid.unindex(idx),
                });
            }
            out.push(b);
        }
        let clamped = self.take_clamp_events();
        if clamped > 0 {
            warn!("{clamped} arguments above the g-table maximum were clamped");
        }
        Ok(ScalarField {
            grid: p.grid,
            values: out,
        })
    }

    /// Writes the table as CSV with columns `r,g,gprime`.
    pub fn write_table_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        writeln!(w, "r,g,gprime")?;
        for ((r, g), d) in self
            .interp
            .nodes()
            .iter()
            .zip(self.interp.values())
            .zip(self.interp.slopes())
        {
            writeln!(w, "{r:e},{g:e},{d:e}")?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn with_cell(e: Error, p: &ScalarField, idx: usize) -> Error {
    match e {
        Error::BelowTable { value, r_min, .. } => Error::BelowTable {
            value,
            r_min,
            cell: Some(p.grid.unindex(idx)),
        },
        other => other,
    }
}

/// One condition of the check suite.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Where the worst (least favourable) value occurred.
    pub worst_location: Option<f64>,
    pub worst_value: f64,
    pub detail: String,
}

/// Radii of the asymptotic growth probes. The ratios approach their limit
/// like `|r|^(1 - alpha)`, which only becomes monotone past the Gaussian core.
pub const DECADE_PROBES: [f64; 3] = [1e3, 1e4, 1e5];

/// Ratio samples of the growth bounds at [`DECADE_PROBES`] on one side.
#[derive(Debug, Clone, Serialize)]
pub struct DecadeProbe {
    pub side: &'static str,
    pub quantity: &'static str,
    pub ratios: [f64; 3],
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub beta: f64,
    pub c_beta: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub g0: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub nodes: usize,
    pub growth: GrowthConstants,
    /// Growth constants including the asymptotic extrapolation from the decade probes.
    pub c1_extrapolated: f64,
    pub c2_extrapolated: f64,
    pub b_constant: f64,
    pub normalization: ConditionCheck,
    pub monotonicity: ConditionCheck,
    pub subdifferential: ConditionCheck,
    pub growth_condition: ConditionCheck,
    pub decade_probes: Vec<DecadeProbe>,
}

impl ConditionReport {
    pub fn all_passed(&self) -> bool {
        self.normalization.passed
            && self.monotonicity.passed
            && self.subdifferential.passed
            && self.growth_condition.passed
    }

    pub fn checks(&self) -> [&ConditionCheck; 4] {
        [
            &self.normalization,
            &self.monotonicity,
            &self.subdifferential,
            &self.growth_condition,
        ]
    }
}

/// Ratios grow without bound iff their decade increments fail to shrink.
fn decade_ratios_settle(r: [f64; 3]) -> bool {
    let d1 = r[1] - r[0];
    let d2 = r[2] - r[1];
    r.iter().all(|v| v.is_finite()) && (d2 <= 0.0 || (d1 > 0.0 && d2 < d1))
}

/// Geometric extrapolation of a settling ratio sequence.
fn extrapolated_limit(r: [f64; 3]) -> f64 {
    let d1 = r[1] - r[0];
    let d2 = r[2] - r[1];
    if d2 > 0.0 && d1 > d2 {
        let q = d2 / d1;
        r[2] + d2 * q / (1.0 - q)
    } else {
        r.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Runs the four condition checks on the table, with direct-quadrature
/// probes at [`DECADE_PROBES`] for the asymptotic growth regime and the
/// far sub-differential spot checks.
pub fn verify_conditions(gt: &GTransform) -> ConditionReport {
    let nodes = gt.nodes();
    let g = gt.table_values();
    let dg = gt.table_derivs();
    let sigma = gt.sigma;
    let alpha = gt.alpha;

    let norm_dev = (gt.g0 - 1.0).abs();
    let normalization = ConditionCheck {
        name: "normalization",
        passed: norm_dev <= NORMALIZATION_TOL,
        worst_location: Some(0.0),
        worst_value: gt.g0,
        detail: format!("|g(0) - 1| = {norm_dev:.3e} (tol {NORMALIZATION_TOL:e})"),
    };

    let (imax, dmax) = dg
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let monotonicity = ConditionCheck {
        name: "monotonicity",
        passed: dmax < 0.0 && g.iter().all(|v| v.is_finite()),
        worst_location: Some(nodes[imax]),
        worst_value: dmax,
        detail: format!("max g' = {dmax:.3e} at r = {:.4}", nodes[imax]),
    };

    let mut worst = (None, f64::INFINITY);
    for (i, &r) in nodes.iter().enumerate() {
        let excess = g[i] - gt.g0 + sigma * r;
        if excess < worst.1 {
            worst = (Some(r), excess);
        }
    }
    let mut spot_detail = String::new();
    for &r in ASYMPTOTIC_SPOTS.iter().filter(|&&r| r < gt.r_min()) {
        match g_value(&gt.profile, r) {
            Ok(v) => {
                let excess = v - gt.g0 + sigma * r;
                spot_detail.push_str(&format!("; spot r={r}: {excess:.3e}"));
                if excess < worst.1 {
                    worst = (Some(r), excess);
                }
            }
            Err(e) => {
                spot_detail.push_str(&format!("; spot r={r}: {e}"));
                worst = (Some(r), f64::NAN);
            }
        }
    }
    let subdifferential = ConditionCheck {
        name: "subdifferential",
        passed: worst.1 >= -SUBDIFF_SLACK,
        worst_location: worst.0,
        worst_value: worst.1,
        detail: format!("min g(r) - g(0) - g'(0) r = {:.3e}{}", worst.1, spot_detail),
    };

    let mut probes = Vec::new();
    let mut c1x = gt.growth.c1;
    let mut c2x = gt.growth.c2;
    for (side, sign) in [("negative", -1.0), ("positive", 1.0)] {
        let mut e_ratio = [f64::NAN; 3];
        let mut d_ratio = [f64::NAN; 3];
        for (slot, a) in DECADE_PROBES.into_iter().enumerate() {
            let r = sign * a;
            if let (Ok(v), Ok(d)) = (g_value(&gt.profile, r), g_deriv(&gt.profile, r)) {
                e_ratio[slot] = (v - gt.g0 + sigma * r) / a.powf(alpha);
                d_ratio[slot] = (d + sigma).abs() / a.powf(alpha - 1.0);
            }
        }
        let e_ok = decade_ratios_settle(e_ratio);
        let d_ok = decade_ratios_settle(d_ratio);
        if e_ok {
            c1x = c1x.max(extrapolated_limit(e_ratio));
        }
        if d_ok {
            c2x = c2x.max(extrapolated_limit(d_ratio));
        }
        probes.push(DecadeProbe {
            side,
            quantity: "g - g(0) - g'(0) r",
            ratios: e_ratio,
            passed: e_ok,
        });
        probes.push(DecadeProbe {
            side,
            quantity: "|g' - g'(0)|",
            ratios: d_ratio,
            passed: d_ok,
        });
    }
    let constants_finite = [gt.growth.c1, gt.growth.c2, gt.growth.c1_local, gt.growth.c2_local]
        .iter()
        .all(|c| c.is_finite());
    let alpha_ok = alpha > 1.0 && alpha < 1.5;
    let failing: Vec<String> = probes
        .iter()
        .filter(|p| !p.passed)
        .map(|p| format!("{} side {}", p.side, p.quantity))
        .collect();
    let growth_condition = ConditionCheck {
        name: "growth",
        passed: constants_finite && alpha_ok && failing.is_empty(),
        worst_location: None,
        worst_value: c1x.max(c2x),
        detail: if failing.is_empty() {
            format!("alpha = {alpha}, C1 ~ {c1x:.4}, C2 ~ {c2x:.4}")
        } else {
            format!("ratios keep growing: {}", failing.join(", "))
        },
    };

    ConditionReport {
        beta: gt.profile.beta(),
        c_beta: gt.profile.c_beta(),
        alpha,
        sigma,
        g0: gt.g0,
        r_min: gt.r_min(),
        r_max: gt.r_max(),
        nodes: nodes.len(),
        growth: gt.growth,
        c1_extrapolated: c1x,
        c2_extrapolated: c2x,
        b_constant: gt.b_constant,
        normalization,
        monotonicity,
        subdifferential,
        growth_condition,
        decade_probes: probes,
    }
}
