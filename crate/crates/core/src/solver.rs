//! Damped Picard iteration for `R = Phi_sigma * (B[R + S] min H)` on the
//! periodic grid and on a radial mesh, plus the post-convergence checks.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::EllipticSolver;
use crate::field::{Grid, RadialField, ScalarField};
use crate::gtransform::GTransform;
use crate::sources::{build_h1_h, build_s, yukawa_radial, Auxiliary, ChargeMeasure, SourceField};

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// Slack of the comparison bound `R <= H1`.
pub const COMPARISON_SLACK: f64 = 1e-8;
/// Largest admissible spacing in screening lengths.
pub const MAX_SPACING: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CapPolicy {
    Warn,
    Error,
}

/// What to do when the grid spacing exceeds [`MAX_SPACING`]`/sqrt(sigma)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResolutionPolicy {
    Enforce,
    Warn,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Sup-norm tolerance on `K(R) - R`.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial relaxation factor; halved whenever the update grows.
    pub damping: f64,
    pub damping_floor: f64,
    pub cap_policy: CapPolicy,
    pub resolution: ResolutionPolicy,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 500,
            damping: 1.0,
            damping_floor: 0.125,
            cap_policy: CapPolicy::Warn,
            resolution: ResolutionPolicy::Enforce,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidParameter(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if !(self.damping_floor > 0.0 && self.damping_floor <= self.damping) {
            return Err(Error::InvalidParameter(format!(
                "damping floor must lie in (0, damping], got {}",
                self.damping_floor
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Checks `h <= 0.2 / sqrt(sigma)`.
pub fn check_resolution(grid: Grid, sigma: f64, policy: ResolutionPolicy) -> Result<()> {
    let limit = MAX_SPACING / sigma.sqrt();
    let spacing = grid.spacing();
    if spacing > limit {
        match policy {
            ResolutionPolicy::Enforce => return Err(Error::Resolution { spacing, limit }),
            ResolutionPolicy::Warn => warn!("grid spacing {spacing:.4} exceeds {limit:.4}"),
        }
    }
    Ok(())
}

/// Output of one application of `K`.
#[derive(Debug, Clone)]
pub struct KOutput {
    pub field: ScalarField,
    /// Most negative value removed by the clamp at zero (0 if none).
    pub ringing: f64,
}

/// `K(R) = (sigma - Delta_h)^{-1} (B[R + S] min H)`.
pub fn apply_k(
    gt: &GTransform,
    solver: &EllipticSolver,
    s: &ScalarField,
    h: &ScalarField,
    r: &ScalarField,
) -> Result<KOutput> {
    let w = capped_source(gt, s, h, r)?.0;
    let mut field = solver.solve_screened(gt.sigma(), &w)?;
    let ringing = clamp_negative(&mut field.values);
    Ok(KOutput { field, ringing })
}

/// `(B[R+S] min H, number of cells where the cap binds)`.
fn capped_source(gt: &GTransform, s: &ScalarField, h: &ScalarField, r: &ScalarField) -> Result<(ScalarField, usize)> {
    let p = r.zip_map(s, |a, b| a + b);
    let b = gt.b_apply(&p)?;
    let active = b
        .values
        .iter()
        .zip(&h.values)
        .filter(|(bv, hv)| **bv > **hv * (1.0 + 1e-12))
        .count();
    Ok((b.zip_map(h, f64::min), active))
}

fn clamp_negative(values: &mut [f64]) -> f64 {
    let mut worst = 0.0_f64;
    for v in values.iter_mut() {
        if *v < 0.0 {
            worst = worst.min(*v);
            *v = 0.0;
        }
    }
    worst
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

struct PicardOutcome {
    r: Vec<f64>,
    iterations: usize,
    update: f64,
    history: Vec<f64>,
    damping: f64,
    ringing: f64,
}

/// Damped Picard loop from `R0 = 0`, stopping at the first iterate `R` with
/// `|K(R) - R|_inf <= tol`. `K(R)` is then certified as well and returned in
/// its place when it passes; its PDE residual is smaller by the factor the
/// stencil would otherwise amplify `K(R) - R` with. `iterations` counts
/// applications of `K`.
fn picard<K>(cfg: &SolverConfig, n: usize, mut k: K) -> Result<PicardOutcome>
where
    K: FnMut(&[f64]) -> Result<(Vec<f64>, f64)>,
{
    cfg.validate()?;
    let mut r = vec![0.0; n];
    let mut omega = cfg.damping;
    let mut history: Vec<f64> = Vec::new();
    let (mut kr, mut ringing) = k(&r)?;
    let mut applications = 1;
    loop {
        let update = sup_diff(&kr, &r);
        debug!("picard step {applications}: update {update:.3e}, damping {omega}");
        if let Some(&prev) = history.last() {
            if update > prev && omega > cfg.damping_floor {
                omega = (omega * 0.5).max(cfg.damping_floor);
            }
        }
        history.push(update);
        if !update.is_finite() {
            break;
        }
        if update <= cfg.tol {
            if update > 0.0 && applications < cfg.max_iter {
                let (kkr, ring) = k(&kr)?;
                applications += 1;
                let cert = sup_diff(&kkr, &kr);
                if cert <= cfg.tol {
                    history.push(cert);
                    return Ok(PicardOutcome {
                        r: kr,
                        iterations: applications,
                        update: cert,
                        history,
                        damping: omega,
                        ringing: ringing.min(ring),
                    });
                }
            }
            return Ok(PicardOutcome {
                r,
                iterations: applications,
                update,
                history,
                damping: omega,
                ringing,
            });
        }
        if applications >= cfg.max_iter {
            break;
        }
        for (ri, ki) in r.iter_mut().zip(&kr) {
            *ri += omega * (ki - *ri);
        }
        let (next, ring) = k(&r)?;
        kr = next;
        ringing = ringing.min(ring);
        applications += 1;
    }
    Err(Error::NonConvergence {
        iterations: applications,
        last: history.last().copied().unwrap_or(f64::NAN),
        damping: omega,
        history,
    })
}

/// A converged grid solution with its verification data.
#[derive(Debug, Clone)]
pub struct Solution {
    pub q: ScalarField,
    pub r: ScalarField,
    pub s: SourceField,
    pub aux: Auxiliary,
    pub sigma: f64,
    pub theta: f64,
    pub iterations: usize,
    /// `|K(R) - R|_inf` of the returned `R`.
    pub final_update_norm: f64,
    pub history: Vec<f64>,
    pub final_damping: f64,
    /// Most negative value clamped by `K` over the whole iteration.
    pub ringing: f64,
    /// `|(sigma - Delta_h) R - (B[Q] min H)|_2 / |B[Q] min H|_2`.
    pub pde_residual: f64,
    pub cap_was_active: bool,
    pub cap_active_cells: usize,
    /// `max(R - H1)`; must stay below [`COMPARISON_SLACK`].
    pub comparison_excess: f64,
}

impl Solution {
    pub fn grid(&self) -> Grid {
        self.q.grid
    }
}

/// Runs the fixed-point iteration for prepared `S`, `H`.
pub fn solve_fixed_point(cfg: &SolverConfig, gt: &GTransform, s: &SourceField, aux: &Auxiliary, theta: f64) -> Result<Solution> {
    let grid = s.grid();
    let solver = EllipticSolver::new(grid);
    let outcome = picard(cfg, grid.len(), |r| {
        let rf = ScalarField {
            grid,
            values: r.to_vec(),
        };
        let k = apply_k(gt, &solver, &s.total, &aux.h, &rf)?;
        Ok((k.field.values, k.ringing))
    })?;
    if outcome.ringing < 0.0 {
        warn!("K produced negative values down to {:.3e}; clamped", outcome.ringing);
    }
    let r = ScalarField {
        grid,
        values: outcome.r,
    };
    let q = r.zip_map(&s.total, |a, b| a + b);
    let mut sol = Solution {
        q,
        r,
        s: s.clone(),
        aux: aux.clone(),
        sigma: gt.sigma(),
        theta,
        iterations: outcome.iterations,
        final_update_norm: outcome.update,
        history: outcome.history,
        final_damping: outcome.damping,
        ringing: outcome.ringing,
        pde_residual: 0.0,
        cap_was_active: false,
        cap_active_cells: 0,
        comparison_excess: f64::NEG_INFINITY,
    };
    assemble_and_verify(cfg, gt, &mut sol)?;
    Ok(sol)
}

/// Fills the residual, cap and comparison diagnostics of `sol`. Fails on an
/// active cap under [`CapPolicy::Error`] and on a residual above `100 tol`.
pub fn assemble_and_verify(cfg: &SolverConfig, gt: &GTransform, sol: &mut Solution) -> Result<f64> {
    let (w, active) = capped_source(gt, &sol.s.total, &sol.aux.h, &sol.r)?;
    let lhs = sol.r.apply_screened_stencil(gt.sigma());
    let norm = w.l2_norm();
    let diff = lhs.zip_map(&w, |a, b| a - b).l2_norm();
    sol.pde_residual = if norm > 0.0 { diff / norm } else { diff };
    sol.cap_active_cells = active;
    sol.cap_was_active = active > 0;
    sol.comparison_excess = sol
        .r
        .values
        .iter()
        .zip(&sol.aux.h1.values)
        .fold(f64::NEG_INFINITY, |m, (r, h1)| m.max(r - h1));
    if sol.cap_was_active {
        match cfg.cap_policy {
            CapPolicy::Warn => warn!("cap B[Q] <= H binds at {active} cells after convergence"),
            CapPolicy::Error => return Err(Error::CapActive { cells: active }),
        }
    }
    if sol.comparison_excess > COMPARISON_SLACK {
        warn!("R exceeds H1 by {:.3e}", sol.comparison_excess);
    }
    if sol.pde_residual > 100.0 * cfg.tol {
        return Err(Error::Inconsistent(format!(
            "relative PDE residual {:.3e} exceeds 100 x tol",
            sol.pde_residual
        )));
    }
    Ok(sol.pde_residual)
}

/// Full grid pipeline: resolution check, `S`, `H1`, `H`, fixed point.
pub fn solve_3d(cfg: &SolverConfig, gt: &GTransform, mu: &ChargeMeasure, grid: Grid) -> Result<Solution> {
    cfg.validate()?;
    check_resolution(grid, gt.sigma(), cfg.resolution)?;
    let s = build_s(mu, gt.sigma(), grid)?;
    let aux = build_h1_h(gt, &s, mu.total_variation())?;
    solve_fixed_point(cfg, gt, &s, &aux, mu.theta())
}

/// `|int_box (g(Q) - g(0)) dx + theta|`.
///
/// The nodal rule cannot integrate the point-charge singularity of `Q`, so
/// `sigma S_point` is added inside the sum and its exact integral `theta_point`
/// is subtracted outside.
pub fn charge_neutrality(gt: &GTransform, sol: &Solution) -> Result<f64> {
    let grid = sol.grid();
    let theta_point: f64 = sol.s.points.iter().map(|p| p.charge).sum();
    let mut acc = 0.0;
    for (i, &q) in sol.q.values.iter().enumerate() {
        acc += gt.g(q)? - gt.g0() + gt.sigma() * sol.s.point_part.values[i];
    }
    let integral = acc * grid.cell_volume() - theta_point;
    Ok((integral + sol.theta).abs())
}

/// Converged radial solution for `mu = theta delta_0`.
#[derive(Debug, Clone)]
pub struct RadialSolution {
    pub q: RadialField,
    pub r: RadialField,
    pub s: Vec<f64>,
    pub h1: Vec<f64>,
    pub h: Vec<f64>,
    pub theta: f64,
    pub sigma: f64,
    pub iterations: usize,
    pub final_update_norm: f64,
    pub history: Vec<f64>,
    pub pde_residual: f64,
    pub cap_was_active: bool,
    pub comparison_excess: f64,
}

/// Solves `(sigma - d^2/dr^2) u = r w`, `u(0) = u(r_max) = 0` for `R = u / r` on
/// nodes `r_i = i h`, `i = 1..n` (`R_n = 0`).
fn radial_screened(sigma: f64, h: f64, nodes: &[f64], w: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let m = n - 1; // interior unknowns u_1..u_{n-1}
    let off = -1.0 / (h * h);
    let diag = sigma + 2.0 / (h * h);
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    for i in 0..m {
        let rhs = nodes[i] * w[i];
        if i == 0 {
            c[i] = off / diag;
            d[i] = rhs / diag;
        } else {
            let den = diag - off * c[i - 1];
            c[i] = off / den;
            d[i] = (rhs - off * d[i - 1]) / den;
        }
    }
    let mut u = vec![0.0; m];
    for i in (0..m).rev() {
        u[i] = if i == m - 1 { d[i] } else { d[i] - c[i] * u[i + 1] };
    }
    let mut out: Vec<f64> = u.iter().zip(nodes).map(|(ui, r)| ui / r).collect();
    out.push(0.0);
    out
}

/// `(sigma - Delta) R` for radial `R` via `u = r R`, with `u(0) = 0`.
fn radial_stencil(sigma: f64, h: f64, nodes: &[f64], r: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let u: Vec<f64> = r.iter().zip(nodes).map(|(a, b)| a * b).collect();
    (0..n - 1)
        .map(|i| {
            let um = if i == 0 { 0.0 } else { u[i - 1] };
            (sigma * u[i] - (u[i + 1] - 2.0 * u[i] + um) / (h * h)) / nodes[i]
        })
        .collect()
}

/// Free-space Coulomb potential of a radial density sampled on `nodes`:
/// `(1/r) int_0^r s^2 b ds + int_r^rmax s b ds` by the trapezoid rule.
fn radial_coulomb(nodes: &[f64], b: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let h = nodes[1] - nodes[0];
    let mut inner = vec![0.0; n];
    // First segment: s^2 b grows at least linearly from zero.
    inner[0] = 0.5 * h * nodes[0] * nodes[0] * b[0];
    for i in 1..n {
        inner[i] = inner[i - 1] + 0.5 * h * (nodes[i - 1].powi(2) * b[i - 1] + nodes[i].powi(2) * b[i]);
    }
    let mut outer = vec![0.0; n];
    for i in (0..n - 1).rev() {
        outer[i] = outer[i + 1] + 0.5 * h * (nodes[i] * b[i] + nodes[i + 1] * b[i + 1]);
    }
    (0..n).map(|i| inner[i] / nodes[i] + outer[i]).collect()
}

/// Radial analogue of [`solve_3d`] for a point charge `theta` at the origin.
pub fn radial_solve(cfg: &SolverConfig, gt: &GTransform, theta: f64, r_max: f64, n: usize) -> Result<RadialSolution> {
    cfg.validate()?;
    if theta == 0.0 || !theta.is_finite() {
        return Err(Error::InvalidParameter(format!("theta must be nonzero and finite, got {theta}")));
    }
    if !(r_max > 0.0) || n < 8 {
        return Err(Error::InvalidParameter(format!("need r_max > 0 and n >= 8, got {r_max}, {n}")));
    }
    let sigma = gt.sigma();
    let nodes = RadialField::uniform_nodes(r_max, n);
    let h = r_max / n as f64;
    let s: Vec<f64> = nodes.iter().map(|&r| theta * yukawa_radial(sigma, r)).collect();
    let b_s = s.iter().map(|&v| gt.b(v)).collect::<Result<Vec<_>>>()?;
    let h1 = radial_coulomb(&nodes, &b_s);
    let c0 = gt.b_constant();
    let alpha = gt.alpha();
    let cap: Vec<f64> = s
        .iter()
        .zip(&h1)
        .map(|(sv, hv)| {
            let a = sv.abs() + hv.abs();
            c0 * a.powf(alpha).min(a * a)
        })
        .collect();

    let capped = |r: &[f64]| -> Result<(Vec<f64>, usize)> {
        let mut active = 0;
        let w = r
            .iter()
            .zip(&s)
            .zip(&cap)
            .map(|((rv, sv), hv)| {
                let b = gt.b(rv + sv)?;
                if b > hv * (1.0 + 1e-12) {
                    active += 1;
                }
                Ok(b.min(*hv))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((w, active))
    };

    let outcome = picard(cfg, n, |r| {
        let (w, _) = capped(r)?;
        let mut kr = radial_screened(sigma, h, &nodes, &w);
        let ring = clamp_negative(&mut kr);
        Ok((kr, ring))
    })?;

    let r = outcome.r;
    let (w, active) = capped(&r)?;
    let lhs = radial_stencil(sigma, h, &nodes, &r);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n - 1 {
        let wt = nodes[i] * nodes[i];
        num += wt * (lhs[i] - w[i]).powi(2);
        den += wt * w[i] * w[i];
    }
    let pde_residual = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
    if active > 0 {
        match cfg.cap_policy {
            CapPolicy::Warn => warn!("cap binds at {active} radial nodes after convergence"),
            CapPolicy::Error => return Err(Error::CapActive { cells: active }),
        }
    }
    let comparison_excess = r.iter().zip(&h1).fold(f64::NEG_INFINITY, |m, (a, b)| m.max(a - b));
    let q: Vec<f64> = r.iter().zip(&s).map(|(a, b)| a + b).collect();
    Ok(RadialSolution {
        q: RadialField {
            r_max,
            nodes: nodes.clone(),
            values: q,
        },
        r: RadialField {
            r_max,
            nodes,
            values: r,
        },
        s,
        h1,
        h: cap,
        theta,
        sigma,
        iterations: outcome.iterations,
        final_update_norm: outcome.update,
        history: outcome.history,
        pde_residual,
        cap_was_active: active > 0,
        comparison_excess,
    })
}

/// Radial version of [`charge_neutrality`] over the ball of radius `r_max`.
/// The singular part `sigma S` is integrated exactly:
/// `int_{|x|<a} sigma theta Phi_sigma = theta (1 - e^{-k a}(1 + k a))`, `k = sqrt(sigma)`.
pub fn radial_charge_neutrality(gt: &GTransform, sol: &RadialSolution) -> Result<f64> {
    let h = sol.q.spacing();
    let mut acc = 0.0;
    for ((&r, &q), &s) in sol.q.nodes.iter().zip(&sol.q.values).zip(&sol.s) {
        acc += FOUR_PI * r * r * h * (gt.g(q)? - gt.g0() + sol.sigma * s);
    }
    let ka = sol.sigma.sqrt() * sol.q.r_max;
    let integral = acc - sol.theta * (1.0 - (-ka).exp() * (1.0 + ka));
    Ok((integral + sol.theta).abs())
}
