//! Two extensions of the same boundary profile, two stationary states for the
//! same attractive background charge. This module runs both solves and
//! measures how far apart the states are.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{Grid, ScalarField};
use crate::gtransform::{build_gtransform, energy_cutoff, GTransform, DEFAULT_TABLE_NODES};
use crate::profile::{calibrate_c_beta, extend, BoundaryProfile, ExtensionProfile, FOUR_PI_SQRT2};
use crate::quad::{self, QuadTol};
use crate::solver::{charge_neutrality, solve_3d, Solution, SolverConfig};
use crate::sources::ChargeMeasure;

/// Tolerance on `sigma_1 = sigma_2`.
pub const SIGMA_MATCH_TOL: f64 = 1e-10;
/// The g-ordering premise is checked on table nodes `r <= -ORDERING_CUTOFF`.
pub const ORDERING_CUTOFF: f64 = 0.05;

/// Volume fraction of cells with `Q < -eps`.
pub fn negative_set(sol: &Solution, eps: f64) -> f64 {
    let n = sol.q.values.iter().filter(|&&q| q < -eps).count();
    n as f64 / sol.q.values.len() as f64
}

fn j_tol() -> QuadTol {
    QuadTol {
        abs: 1e-14,
        rel: 1e-10,
        max_intervals: 4000,
    }
}

/// `J(y, r) = int_{R^3} |F1(|v|^2/2 + y) - F2(|v|^2/2 + r)| dv`.
pub fn velocity_l1_distance(f1: &ExtensionProfile, f2: &ExtensionProfile, y: f64, r: f64) -> Result<f64> {
    let c = f1.base().decay_constant().max(f2.base().decay_constant());
    let tail = f1.base().tail_cutoff().max(f2.base().tail_cutoff());
    let lo = y.min(r);
    // Both integrands are below the decay envelope past the cutoff of the deeper argument.
    let u = energy_cutoff(2.0 * c, tail, lo)?;
    let t_max = (u - lo).sqrt();
    let kinks: Vec<f64> = [y, r].iter().filter(|&&a| a < 0.0).map(|a| (-a).sqrt()).collect();
    let breaks = quad::geometric_breaks(0.0, t_max, &kinks);
    let res = quad::integrate(
        |t| t * t * (f1.eval(y + t * t) - f2.eval(r + t * t)).abs(),
        &breaks,
        j_tol(),
    )?;
    Ok(2.0 * FOUR_PI_SQRT2 * res.value)
}

/// Minimizer of `r -> J(y, r)` and the interval it was searched in.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Infimum {
    pub y: f64,
    pub value: f64,
    pub argmin: f64,
    pub bracket: (f64, f64),
}

/// Interval certain to contain every minimizer of `J(y, .)`.
///
/// `J(y, r) >= |g1(y) - g2(r)|`, so any `r` that beats `J(y, y)` satisfies
/// `|g1(y) - g2(r)| <= J(y, y)`; `g2` is decreasing, which turns that into an
/// interval in `r`.
pub fn infimum_bracket(f1: &ExtensionProfile, f2: &ExtensionProfile, g1: &GTransform, g2: &GTransform, y: f64) -> Result<(f64, f64)> {
    let j0 = velocity_l1_distance(f1, f2, y, y)?;
    // Slack for the table interpolation error of g1 and g2.
    let slack = 1e-8;
    let target = g1.g(y)?;
    let lo = inverse_g(g2, target + j0 + slack)?;
    let hi = inverse_g(g2, target - j0 - slack)?;
    Ok((lo.min(y), hi.max(y)))
}

fn inverse_g(gt: &GTransform, value: f64) -> Result<f64> {
    let vals = gt.table_values();
    if value > vals[0] {
        return Err(Error::Bracket(format!(
            "g value {value} lies above the table maximum {} (r_min too large)",
            vals[0]
        )));
    }
    if value <= vals[vals.len() - 1] {
        return Ok(gt.r_max());
    }
    // Bisection on the interpolant, which is monotone.
    let (mut lo, mut hi) = (gt.r_min(), gt.r_max());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gt.g(mid)? > value {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

const SCAN_POINTS: usize = 33;
const GOLDEN_ITER: usize = 80;

/// `inf_r J(y, r)`: a coarse scan of the bracket followed by golden-section
/// refinement around the best scan point.
pub fn inner_infimum(f1: &ExtensionProfile, f2: &ExtensionProfile, g1: &GTransform, g2: &GTransform, y: f64) -> Result<Infimum> {
    let (a, b) = infimum_bracket(f1, f2, g1, g2, y)?;
    let j = |r: f64| velocity_l1_distance(f1, f2, y, r);
    if b - a <= 0.0 {
        return Ok(Infimum {
            y,
            value: j(a)?,
            argmin: a,
            bracket: (a, b),
        });
    }
    let step = (b - a) / (SCAN_POINTS - 1) as f64;
    let mut best = (y, j(y)?);
    let mut best_i = (((y - a) / step).round() as usize).min(SCAN_POINTS - 1);
    for i in 0..SCAN_POINTS {
        let r = a + step * i as f64;
        let v = j(r)?;
        if v < best.1 {
            best = (r, v);
            best_i = i;
        }
    }
    let mut lo = a + step * best_i.saturating_sub(1) as f64;
    let mut hi = (a + step * (best_i + 1) as f64).min(b);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1v = j(x1)?;
    let mut f2v = j(x2)?;
    for _ in 0..GOLDEN_ITER {
        if hi - lo <= 1e-13 * (1.0 + y.abs()) {
            break;
        }
        if f1v <= f2v {
            hi = x2;
            x2 = x1;
            f2v = f1v;
            x1 = hi - phi * (hi - lo);
            f1v = j(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1v = f2v;
            x2 = lo + phi * (hi - lo);
            f2v = j(x2)?;
        }
    }
    for (r, v) in [(x1, f1v), (x2, f2v)] {
        if v < best.1 {
            best = (r, v);
        }
    }
    if !best.1.is_finite() {
        return Err(Error::Bracket(format!("no finite J value in [{a}, {b}] for y = {y}")));
    }
    Ok(Infimum {
        y,
        value: best.1,
        argmin: best.0,
        bracket: (a, b),
    })
}

/// Minimum of `J(y, .)` over `n` equispaced points of `bracket`.
pub fn brute_force_infimum(f1: &ExtensionProfile, f2: &ExtensionProfile, y: f64, bracket: (f64, f64), n: usize) -> Result<(f64, f64)> {
    let (a, b) = bracket;
    let mut best = (a, f64::INFINITY);
    for i in 0..n {
        let r = if n == 1 { a } else { a + (b - a) * i as f64 / (n - 1) as f64 };
        let v = velocity_l1_distance(f1, f2, y, r)?;
        if v < best.1 {
            best = (r, v);
        }
    }
    Ok((best.1, best.0))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FDifferenceBound {
    /// `h^3 sum_{Q1 < -depth} inf_r J(Q1(x), r)`.
    pub value: f64,
    pub cells: usize,
    pub min_depth: f64,
}

/// Lower bound for `|f1 - f2|_{L^1}` from cells of depth `Q1 < -min_depth`.
/// Leaving shallower cells out only lowers the bound.
pub fn f_difference_lower_bound(
    f1: &ExtensionProfile,
    f2: &ExtensionProfile,
    g1: &GTransform,
    g2: &GTransform,
    q1: &ScalarField,
    min_depth: f64,
) -> Result<FDifferenceBound> {
    let mut value = 0.0;
    let mut cells = 0;
    for &y in q1.values.iter().filter(|&&y| y < -min_depth) {
        value += inner_infimum(f1, f2, g1, g2, y)?.value;
        cells += 1;
    }
    Ok(FDifferenceBound {
        value: value * q1.grid.cell_volume(),
        cells,
        min_depth,
    })
}

/// Settings of one comparison run.
#[derive(Debug, Clone, Serialize)]
pub struct CompareConfig {
    pub beta1: f64,
    pub beta2: f64,
    /// Shared amplitude; `None` takes the larger calibrated value.
    pub c_beta: Option<f64>,
    pub margin: f64,
    pub r_probe: f64,
    pub table_r_min: f64,
    pub table_r_max: f64,
    pub table_nodes: usize,
    pub grid: Grid,
    pub solver: SolverConfig,
    /// Negative-set threshold; `None` means 10 x solver tolerance.
    pub neg_eps: Option<f64>,
    /// Depth cut of the f-difference bound.
    pub min_depth: f64,
}

impl CompareConfig {
    pub fn new(beta1: f64, beta2: f64, grid: Grid) -> Self {
        Self {
            beta1,
            beta2,
            c_beta: None,
            margin: 0.1,
            r_probe: -50.0,
            table_r_min: -50.0,
            table_r_max: 50.0,
            table_nodes: DEFAULT_TABLE_NODES,
            grid,
            solver: SolverConfig::default(),
            neg_eps: None,
            min_depth: 0.05,
        }
    }
}

/// Summary of a two-extension comparison.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub theta: f64,
    pub beta_pair: (f64, f64),
    pub c_beta: f64,
    pub sigma: f64,
    pub neg_eps: f64,
    pub neg_volume_fraction: (f64, f64),
    pub min_q: (f64, f64),
    pub q_diff_l2: f64,
    /// `10 (tol1 + tol2) sqrt(volume)`.
    pub q_diff_threshold: f64,
    pub f_diff_lower_bound: f64,
    pub f_diff_cells: usize,
    pub charge_neutrality_defect: (f64, f64),
    /// Smallest `g1(r) - g2(r)` over table nodes `r <= -0.05`.
    pub g_ordering_gap: f64,
    pub g_ordering_ok: bool,
    pub iterations: (usize, usize),
    pub final_update_norm: (f64, f64),
    pub pde_residual: (f64, f64),
    pub cap_was_active: (bool, bool),
    /// The two extensions coincide.
    pub degenerate: bool,
    /// `q_diff_l2` above threshold and a positive f-difference bound.
    pub distinct: bool,
}

/// Report plus the two solutions it was computed from.
#[derive(Debug)]
pub struct Comparison {
    pub report: ComparisonReport,
    pub extensions: (ExtensionProfile, ExtensionProfile),
    pub tables: (GTransform, GTransform),
    pub solutions: (Solution, Solution),
}

impl Comparison {
    pub fn difference(&self) -> ScalarField {
        self.solutions.0.q.zip_map(&self.solutions.1.q, |a, b| a - b)
    }
}

/// Smallest `g1 - g2` over the common table nodes with `r <= -cutoff`.
pub fn g_ordering_gap(g1: &GTransform, g2: &GTransform, cutoff: f64) -> Result<f64> {
    if g1.nodes() != g2.nodes() {
        return Err(Error::Inconsistent("tables are on different nodes".into()));
    }
    Ok(g1
        .nodes()
        .iter()
        .zip(g1.table_values().iter().zip(g2.table_values()))
        .filter(|(r, _)| **r <= -cutoff)
        .map(|(_, (a, b))| a - b)
        .fold(f64::INFINITY, f64::min))
}

/// Solves for `mu` with both extensions of `p` and compares the states.
pub fn compare(p: &BoundaryProfile, mu: &ChargeMeasure, cfg: &CompareConfig) -> Result<Comparison> {
    let theta = mu.theta();
    if !(theta < 0.0) {
        return Err(Error::InvalidParameter(format!(
            "comparison needs a net attractive charge (theta < 0), got theta = {theta}; \
             for repulsive charges Q >= 0 and the negative-energy extension is never probed"
        )));
    }
    if cfg.beta1 > cfg.beta2 {
        return Err(Error::InvalidParameter(format!(
            "expected beta1 <= beta2, got ({}, {})",
            cfg.beta1, cfg.beta2
        )));
    }
    let c_beta = match cfg.c_beta {
        Some(c) => c,
        None => calibrate_c_beta(p, cfg.beta1, cfg.r_probe, cfg.margin)?
            .max(calibrate_c_beta(p, cfg.beta2, cfg.r_probe, cfg.margin)?),
    };
    let f1 = extend(p, cfg.beta1, c_beta)?;
    let f2 = extend(p, cfg.beta2, c_beta)?;
    let g1 = build_gtransform(&f1, cfg.table_r_min, cfg.table_r_max, cfg.table_nodes)?;
    let g2 = build_gtransform(&f2, cfg.table_r_min, cfg.table_r_max, cfg.table_nodes)?;
    if (g1.sigma() - g2.sigma()).abs() > SIGMA_MATCH_TOL {
        return Err(Error::Inconsistent(format!(
            "sigma differs between extensions: {} vs {}",
            g1.sigma(),
            g2.sigma()
        )));
    }
    let degenerate = cfg.beta1 == cfg.beta2;
    let gap = g_ordering_gap(&g1, &g2, ORDERING_CUTOFF)?;
    let g_ordering_ok = degenerate || gap > 0.0;
    if !g_ordering_ok {
        return Err(Error::Inconsistent(format!(
            "g_beta1 > g_beta2 fails on r <= -{ORDERING_CUTOFF} (min gap {gap:.3e})"
        )));
    }

    let (s1, s2) = std::thread::scope(|scope| {
        let a = scope.spawn(|| solve_3d(&cfg.solver, &g1, mu, cfg.grid));
        let b = scope.spawn(|| solve_3d(&cfg.solver, &g2, mu, cfg.grid));
        (a.join(), b.join())
    });
    let s1 = s1.map_err(|_| Error::Inconsistent("solver thread panicked".into()))??;
    let s2 = s2.map_err(|_| Error::Inconsistent("solver thread panicked".into()))??;

    let neg_eps = cfg.neg_eps.unwrap_or(10.0 * cfg.solver.tol);
    let neg = (negative_set(&s1, neg_eps), negative_set(&s2, neg_eps));
    if neg.0 == 0.0 || neg.1 == 0.0 {
        return Err(Error::UnderResolved(format!(
            "no cell with Q < -{neg_eps:e} (fractions {:?}); refine the grid",
            neg
        )));
    }
    let diff = s1.q.zip_map(&s2.q, |a, b| a - b);
    let q_diff_l2 = diff.l2_norm();
    let q_diff_threshold = 10.0 * (2.0 * cfg.solver.tol) * cfg.grid.volume().sqrt();
    let fdb = f_difference_lower_bound(&f1, &f2, &g1, &g2, &s1.q, cfg.min_depth)?;
    let neutrality = (charge_neutrality(&g1, &s1)?, charge_neutrality(&g2, &s2)?);

    let report = ComparisonReport {
        theta,
        beta_pair: (cfg.beta1, cfg.beta2),
        c_beta,
        sigma: g1.sigma(),
        neg_eps,
        neg_volume_fraction: neg,
        min_q: (s1.q.min(), s2.q.min()),
        q_diff_l2,
        q_diff_threshold,
        f_diff_lower_bound: fdb.value,
        f_diff_cells: fdb.cells,
        charge_neutrality_defect: neutrality,
        g_ordering_gap: gap,
        g_ordering_ok,
        iterations: (s1.iterations, s2.iterations),
        final_update_norm: (s1.final_update_norm, s2.final_update_norm),
        pde_residual: (s1.pde_residual, s2.pde_residual),
        cap_was_active: (s1.cap_was_active, s2.cap_was_active),
        degenerate,
        distinct: !degenerate && q_diff_l2 > q_diff_threshold && fdb.value > 0.0,
    };
    Ok(Comparison {
        report,
        extensions: (f1, f2),
        tables: (g1, g2),
        solutions: (s1, s2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::make_maxwellian;
    use crate::solver::ResolutionPolicy;
    use std::sync::OnceLock;

    struct Pair {
        f1: ExtensionProfile,
        f2: ExtensionProfile,
        g1: GTransform,
        g2: GTransform,
    }

    fn pair() -> &'static Pair {
        static P: OnceLock<Pair> = OnceLock::new();
        P.get_or_init(|| {
            let p = make_maxwellian();
            let c = calibrate_c_beta(&p, 0.1, -50.0, 0.1)
                .unwrap()
                .max(calibrate_c_beta(&p, 0.4, -50.0, 0.1).unwrap());
            let f1 = extend(&p, 0.1, c).unwrap();
            let f2 = extend(&p, 0.4, c).unwrap();
            let g1 = build_gtransform(&f1, -50.0, 50.0, 1024).unwrap();
            let g2 = build_gtransform(&f2, -50.0, 50.0, 1024).unwrap();
            Pair { f1, f2, g1, g2 }
        })
    }

    #[test]
    fn identical_extensions_have_zero_infimum() {
        let p = pair();
        let m = inner_infimum(&p.f1, &p.f1, &p.g1, &p.g1, -0.5).unwrap();
        assert_eq!(velocity_l1_distance(&p.f1, &p.f1, -0.5, -0.5).unwrap(), 0.0);
        assert!(m.value <= 1e-14);
    }

    #[test]
    fn distinct_extensions_have_positive_infimum() {
        let p = pair();
        for y in [-2.0, -0.5, -0.1] {
            let m = inner_infimum(&p.f1, &p.f2, &p.g1, &p.g2, y).unwrap();
            assert!(m.value > 0.0, "y={y}");
            assert!(m.value <= velocity_l1_distance(&p.f1, &p.f2, y, y).unwrap());
            // Lower bound by the density difference at the minimizer.
            let gap = (p.g1.g(y).unwrap() - p.g2.g(m.argmin).unwrap()).abs();
            assert!(m.value + 1e-8 >= gap);
        }
    }

    #[test]
    fn golden_section_matches_brute_force() {
        let p = pair();
        let y = -0.5;
        let m = inner_infimum(&p.f1, &p.f2, &p.g1, &p.g2, y).unwrap();
        let (v, _) = brute_force_infimum(&p.f1, &p.f2, y, m.bracket, 10_000).unwrap();
        assert!((m.value - v).abs() <= 1e-6);
        assert!(m.value <= v + 1e-12);
    }

    #[test]
    fn j_oracle_for_maxwellian_shift() {
        // Positive arguments only: J = |g(y) - g(r)| because one integrand
        // dominates the other pointwise.
        let p = pair();
        let j = velocity_l1_distance(&p.f1, &p.f2, 0.3, 1.1).unwrap();
        assert!((j - ((-0.3f64).exp() - (-1.1f64).exp())).abs() < 1e-10);
    }

    #[test]
    fn g_ordering_premise_holds() {
        let p = pair();
        assert!(g_ordering_gap(&p.g1, &p.g2, ORDERING_CUTOFF).unwrap() > 0.0);
        assert!(p.g1.g(-1.0).unwrap() > p.g2.g(-1.0).unwrap());
    }

    #[test]
    fn compare_refuses_repulsive_charge() {
        let grid = Grid::new(25.0, 16).unwrap();
        let cfg = CompareConfig::new(0.1, 0.4, grid);
        let err = compare(&make_maxwellian(), &ChargeMeasure::point([0.0; 3], 1.0), &cfg).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter(_)));
    }

    #[test]
    fn coarse_comparison_runs_and_degenerate_flag() {
        let grid = Grid::new(20.0, 32).unwrap();
        let mut cfg = CompareConfig::new(0.1, 0.1, grid);
        cfg.table_nodes = 512;
        cfg.solver.resolution = ResolutionPolicy::Warn;
        let mu = ChargeMeasure::point([0.0; 3], -1.0);
        let c = compare(&make_maxwellian(), &mu, &cfg).unwrap();
        assert!(c.report.degenerate);
        assert!(!c.report.distinct);
        assert_eq!(c.report.q_diff_l2, 0.0);
        assert!(c.report.neg_volume_fraction.0 > 0.0);
    }
}
