//! Background charge `mu`, the Yukawa and Coulomb kernels, and the auxiliary
//! fields `S = Phi_sigma * mu`, `H1 = phi * B[S]` and the cap `H`.

use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fft::EllipticSolver;
use crate::field::{Grid, ScalarField};
use crate::gtransform::GTransform;

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// Tolerated fraction of the total variation carried by the mean of `B[S]`.
pub const GAUGE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointCharge {
    pub position: [f64; 3],
    pub charge: f64,
}

/// Finite signed measure: point charges plus an optional grid density.
#[derive(Debug, Clone, Default)]
pub struct ChargeMeasure {
    pub points: Vec<PointCharge>,
    pub smooth: Option<ScalarField>,
}

impl ChargeMeasure {
    pub fn new(points: Vec<PointCharge>, smooth: Option<ScalarField>) -> Result<Self> {
        for p in &points {
            if !p.charge.is_finite() || p.position.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidParameter(format!("non-finite point charge {p:?}")));
            }
        }
        if let Some(s) = &smooth {
            if s.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("density contains non-finite values".into()));
            }
        }
        Ok(Self { points, smooth })
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn point(position: [f64; 3], charge: f64) -> Self {
        Self {
            points: vec![PointCharge { position, charge }],
            smooth: None,
        }
    }

    pub fn density(smooth: ScalarField) -> Self {
        Self {
            points: Vec::new(),
            smooth: Some(smooth),
        }
    }

    /// `sum |q_i| + int |rho|`.
    pub fn total_variation(&self) -> f64 {
        let pts: f64 = self.points.iter().map(|p| p.charge.abs()).sum();
        pts + self.smooth.as_ref().map_or(0.0, |s| s.map(f64::abs).integral())
    }

    /// Total charge `sum q_i + int rho`.
    pub fn theta(&self) -> f64 {
        let pts: f64 = self.points.iter().map(|p| p.charge).sum();
        pts + self.smooth.as_ref().map_or(0.0, |s| s.integral())
    }

    pub fn is_zero(&self) -> bool {
        self.points.iter().all(|p| p.charge == 0.0)
            && self.smooth.as_ref().is_none_or(|s| s.values.iter().all(|&v| v == 0.0))
    }

    /// Sum of two measures (smooth parts must live on the same grid).
    pub fn sum(&self, other: &ChargeMeasure) -> Result<ChargeMeasure> {
        let smooth = match (&self.smooth, &other.smooth) {
            (Some(a), Some(b)) => {
                if a.grid != b.grid {
                    return Err(Error::InvalidParameter("densities live on different grids".into()));
                }
                Some(a.zip_map(b, |x, y| x + y))
            }
            (Some(a), None) => Some(a.clone()),
            (None, Some(b)) => Some(b.clone()),
            (None, None) => None,
        };
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        Ok(ChargeMeasure { points, smooth })
    }
}

/// Gaussian density of standard deviation `width` centred at `center`,
/// scaled so its nodal integral is exactly `charge`.
pub fn gaussian_blob(grid: Grid, center: [f64; 3], width: f64, charge: f64) -> Result<ScalarField> {
    if !(width > 0.0) {
        return Err(Error::InvalidParameter(format!("blob width must be positive, got {width}")));
    }
    let raw = ScalarField::from_fn(grid, |x| {
        let d = grid.min_image(x, center);
        (-(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) / (2.0 * width * width)).exp()
    });
    let total = raw.integral();
    Ok(raw.map(|v| v * charge / total))
}

/// `Phi_sigma(x) = exp(-sqrt(sigma) |x|) / (4 pi |x|)`.
pub fn yukawa(sigma: f64, x: [f64; 3]) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    if r == 0.0 {
        return Err(Error::Singular("Yukawa kernel evaluated at the origin".into()));
    }
    Ok(yukawa_radial(sigma, r))
}

/// Radial profile of the Yukawa kernel; `r > 0` is the caller's responsibility.
pub fn yukawa_radial(sigma: f64, r: f64) -> f64 {
    (-sigma.sqrt() * r).exp() / (FOUR_PI * r)
}

/// Newtonian kernel `1 / (4 pi |x|)`.
pub fn coulomb(x: [f64; 3]) -> Result<f64> {
    let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    if r == 0.0 {
        return Err(Error::Singular("Coulomb kernel evaluated at the origin".into()));
    }
    Ok(1.0 / (FOUR_PI * r))
}

/// `S = Phi_sigma * mu` on a grid, split into the analytic point-charge part
/// and the grid solution for the smooth density.
#[derive(Debug, Clone)]
pub struct SourceField {
    pub sigma: f64,
    pub points: Vec<PointCharge>,
    /// Point-charge part sampled at the nodes (analytic, 27 periodic images).
    pub point_part: ScalarField,
    /// Solution of `(sigma - Delta_h) S_smooth = rho`.
    pub smooth_part: ScalarField,
    /// `point_part + smooth_part`.
    pub total: ScalarField,
}

impl SourceField {
    pub fn grid(&self) -> Grid {
        self.total.grid
    }

    /// Point-charge part of `S` evaluated anywhere off the charges.
    pub fn eval_point_part(&self, x: [f64; 3]) -> Result<f64> {
        periodic_point_sum(self.total.grid, self.sigma, &self.points, x)
    }
}

fn periodic_point_sum(grid: Grid, sigma: f64, points: &[PointCharge], x: [f64; 3]) -> Result<f64> {
    let l = grid.length;
    let mut acc = 0.0;
    for p in points {
        let d = grid.min_image(x, p.position);
        for a in -1..=1 {
            for b in -1..=1 {
                for c in -1..=1 {
                    let y = [d[0] + a as f64 * l, d[1] + b as f64 * l, d[2] + c as f64 * l];
                    acc += p.charge * yukawa(sigma, y)?;
                }
            }
        }
    }
    Ok(acc)
}

/// Builds `S` for `mu` on `grid`. Point charges sitting exactly on a node are
/// rejected; everything else is evaluated analytically, never sampled as a
/// grid delta.
pub fn build_s(mu: &ChargeMeasure, sigma: f64, grid: Grid) -> Result<SourceField> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    let mut point_part = ScalarField::zeros(grid);
    if !mu.points.is_empty() {
        for (idx, v) in point_part.values.iter_mut().enumerate() {
            *v = periodic_point_sum(grid, sigma, &mu.points, grid.position(idx)).map_err(|_| {
                Error::Singular(format!("point charge coincides with grid node {:?}", grid.unindex(idx)))
            })?;
        }
    }
    let smooth_part = match &mu.smooth {
        Some(rho) => {
            if rho.grid != grid {
                return Err(Error::InvalidParameter(format!(
                    "density grid (L={}, n={}) differs from solver grid (L={}, n={})",
                    rho.grid.length, rho.grid.n, grid.length, grid.n
                )));
            }
            EllipticSolver::new(grid).solve_screened(sigma, rho)?
        }
        None => ScalarField::zeros(grid),
    };
    let total = point_part.zip_map(&smooth_part, |a, b| a + b);
    Ok(SourceField {
        sigma,
        points: mu.points.clone(),
        point_part,
        smooth_part,
        total,
    })
}

/// `H1`, the cap `H`, and the diagnostics of the Coulomb solve.
#[derive(Debug, Clone)]
pub struct Auxiliary {
    pub b_s: ScalarField,
    pub h1: ScalarField,
    pub h: ScalarField,
    /// `int B[S]`, carried by the analytic compensating Gaussian.
    pub monopole: f64,
    /// Mean removed by the periodic solve after compensation (rounding level).
    pub residual_mean: f64,
    /// `mean(B[S]) L^3 <= GAUGE_FRACTION * TV(mu)`.
    pub gauge_ok: bool,
}

/// `H1 = phi * B[S]` and `H = C0 min((|S|+|H1|)^alpha, (|S|+|H1|)^2)`.
///
/// The periodic Poisson problem has no zero mode, so the monopole of `B[S]`
/// is moved into a Gaussian `m G` whose free-space potential
/// `m erf(r / (sqrt2 w)) / (4 pi r)` is added analytically; the neutral
/// remainder is solved on the grid in the zero-mean gauge.
pub fn build_h1_h(gt: &GTransform, s: &SourceField, total_variation: f64) -> Result<Auxiliary> {
    let grid = s.grid();
    let b_s = gt.b_apply(&s.total)?;
    let monopole = b_s.integral();
    let gauge_ok = monopole <= GAUGE_FRACTION * total_variation + 1e-300;
    if !gauge_ok {
        warn!(
            "int B[S] = {monopole:.3e} exceeds {GAUGE_FRACTION} of the total variation {total_variation:.3e}"
        );
    }

    let (h1, residual_mean) = if monopole == 0.0 {
        (ScalarField::zeros(grid), 0.0)
    } else {
        coulomb_with_compensation(grid, gt.sigma(), &b_s, monopole)?
    };

    let c0 = gt.b_constant();
    let alpha = gt.alpha();
    let h = s.total.zip_map(&h1, |sv, hv| {
        let a = sv.abs() + hv.abs();
        c0 * a.powf(alpha).min(a * a)
    });
    Ok(Auxiliary {
        b_s,
        h1,
        h,
        monopole,
        residual_mean,
        gauge_ok,
    })
}

fn coulomb_with_compensation(grid: Grid, sigma: f64, b_s: &ScalarField, m: f64) -> Result<(ScalarField, f64)> {
    // Centroid relative to the peak, so periodic wrap-around does not bias it.
    let (peak, _) = b_s
        .values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let anchor = grid.position(peak);
    let mut c = [0.0; 3];
    let mut wsum = 0.0;
    for (idx, &v) in b_s.values.iter().enumerate() {
        let d = grid.min_image(grid.position(idx), anchor);
        for a in 0..3 {
            c[a] += v * d[a];
        }
        wsum += v;
    }
    let center = [anchor[0] + c[0] / wsum, anchor[1] + c[1] / wsum, anchor[2] + c[2] / wsum];
    let w = (1.0 / sigma.sqrt()).max(2.0 * grid.spacing());
    let g = gaussian_blob(grid, center, w, 1.0)?;
    let neutral = b_s.zip_map(&g, |b, gv| b - m * gv);
    let (mut h1, residual_mean) = EllipticSolver::new(grid).solve_poisson_zero_mean(&neutral)?;
    for (idx, v) in h1.values.iter_mut().enumerate() {
        let d = grid.min_image(grid.position(idx), center);
        *v += m * gaussian_potential(w, (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt());
    }
    Ok((h1, residual_mean))
}

/// Free-space potential of a unit Gaussian of standard deviation `w`.
pub fn gaussian_potential(w: f64, r: f64) -> f64 {
    let s = std::f64::consts::SQRT_2 * w;
    if r < 1e-8 * w {
        return 2.0 / (s * std::f64::consts::PI.sqrt() * FOUR_PI);
    }
    libm::erf(r / s) / (FOUR_PI * r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gtransform::{build_gtransform, DEFAULT_TABLE_NODES};
    use crate::profile::{calibrate_c_beta, extend, make_maxwellian};
    use std::sync::OnceLock;

    fn table() -> &'static GTransform {
        static T: OnceLock<GTransform> = OnceLock::new();
        T.get_or_init(|| {
            let p = make_maxwellian();
            let c = calibrate_c_beta(&p, 0.25, -50.0, 0.1).unwrap();
            build_gtransform(&extend(&p, 0.25, c).unwrap(), -50.0, 50.0, DEFAULT_TABLE_NODES).unwrap()
        })
    }

    /// Free-space `Phi_sigma * (Gaussian of std w, unit mass)` at radius `r`.
    fn yukawa_of_gaussian(sigma: f64, w: f64, r: f64) -> f64 {
        let k = sigma.sqrt();
        let s = std::f64::consts::SQRT_2 * w;
        (0.5 * sigma * w * w).exp() / (8.0 * std::f64::consts::PI * r)
            * ((-k * r).exp() * libm::erfc((k * w * w - r) / s)
                - (k * r).exp() * libm::erfc((k * w * w + r) / s))
    }

    #[test]
    fn yukawa_values() {
        let v = yukawa(1.0, [1.0, 0.0, 0.0]).unwrap();
        assert!((v - (-1f64).exp() / FOUR_PI).abs() < 1e-15);
        assert!((v - 0.0292668).abs() < 1e-5);
        for r in [0.3, 1.0, 4.0] {
            let a = yukawa(4.0, [0.0, r, 0.0]).unwrap();
            assert!((a - (-2.0 * r).exp() / (FOUR_PI * r)).abs() < 1e-15);
        }
        assert!(yukawa(1.0, [0.0, 0.0, 40.0]).unwrap() < 1e-18);
        assert!(matches!(yukawa(1.0, [0.0; 3]), Err(Error::Singular(_))));
        assert!(yukawa(0.0, [1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_measure_gives_zero_fields() {
        let grid = Grid::new(20.0, 16).unwrap();
        let s = build_s(&ChargeMeasure::zero(), 1.0, grid).unwrap();
        assert!(s.total.values.iter().all(|&v| v == 0.0));
        let aux = build_h1_h(table(), &s, 0.0).unwrap();
        assert!(aux.h1.values.iter().all(|&v| v == 0.0));
        assert!(aux.h.values.iter().all(|&v| v == 0.0));
        assert_eq!(aux.monopole, 0.0);
    }

    #[test]
    fn point_charge_matches_kernel() {
        let grid = Grid::new(24.0, 16).unwrap();
        let s = build_s(&ChargeMeasure::point([0.0; 3], 0.7), 1.0, grid).unwrap();
        // Images sit at least L/2 away from any node.
        let image_bound = 26.0 * 0.7 * yukawa_radial(1.0, 12.0);
        for idx in [0, 100, 2000, grid.index(8, 8, 8), grid.index(5, 9, 7)] {
            let d = grid.min_image(grid.position(idx), [0.0; 3]);
            let direct = 0.7 * yukawa(1.0, d).unwrap();
            assert!((s.total.values[idx] - direct).abs() <= 1e-14 * direct + image_bound);
        }
        let near = grid.index(8, 8, 8);
        let d = grid.min_image(grid.position(near), [0.0; 3]);
        assert!((s.total.values[near] / (0.7 * yukawa(1.0, d).unwrap()) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn charge_on_node_is_rejected() {
        let grid = Grid::new(8.0, 8).unwrap();
        let node = grid.position(grid.index(2, 3, 4));
        let err = build_s(&ChargeMeasure::point(node, 1.0), 1.0, grid).unwrap_err();
        assert!(matches!(err, Error::Singular(_)));
    }

    #[test]
    fn smooth_part_reproduces_density() {
        let grid = Grid::new(12.0, 48).unwrap();
        let rho = gaussian_blob(grid, [0.3, 0.0, -0.2], 0.8, 1.5).unwrap();
        let s = build_s(&ChargeMeasure::density(rho.clone()), 1.3, grid).unwrap();
        let back = s.smooth_part.apply_screened_stencil(1.3);
        let rel = back.zip_map(&rho, |a, b| a - b).l2_norm() / rho.l2_norm();
        assert!(rel < 1e-8, "{rel}");
    }

    #[test]
    fn blob_far_field_matches_point_kernel() {
        let grid = Grid::new(8.0, 128).unwrap();
        let w = 0.1;
        let theta = 0.8;
        let rho = gaussian_blob(grid, [0.0; 3], w, theta).unwrap();
        let s = build_s(&ChargeMeasure::density(rho), 1.0, grid).unwrap();
        let mut checked = 0;
        for (idx, &v) in s.total.values.iter().enumerate() {
            let x = grid.position(idx);
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            if (5.0 * w..=1.5).contains(&r) {
                let far = theta * yukawa_radial(1.0, r);
                let exact = theta * yukawa_of_gaussian(1.0, w, r);
                assert!((v / far - 1.0).abs() < 0.01, "r={r}: {v} vs {far}");
                assert!((v / exact - 1.0).abs() < 0.01, "r={r}: {v} vs {exact}");
                checked += 1;
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn build_s_is_linear() {
        let grid = Grid::new(10.0, 16).unwrap();
        let a = ChargeMeasure::new(
            vec![PointCharge { position: [0.1, 0.2, 0.0], charge: 0.5 }],
            Some(gaussian_blob(grid, [1.0, 0.0, 0.0], 0.7, -0.3).unwrap()),
        )
        .unwrap();
        let b = ChargeMeasure::new(
            vec![PointCharge { position: [-1.0, 0.0, 0.7], charge: -0.2 }],
            Some(gaussian_blob(grid, [0.0, 1.0, 0.0], 0.9, 0.4).unwrap()),
        )
        .unwrap();
        let sa = build_s(&a, 1.0, grid).unwrap();
        let sb = build_s(&b, 1.0, grid).unwrap();
        let sab = build_s(&a.sum(&b).unwrap(), 1.0, grid).unwrap();
        for i in 0..grid.len() {
            let lin = sa.total.values[i] + sb.total.values[i];
            assert!((sab.total.values[i] - lin).abs() <= 1e-14 * lin.abs().max(1.0));
        }
        assert!((a.sum(&b).unwrap().theta() - (a.theta() + b.theta())).abs() < 1e-14);
    }

    #[test]
    fn measure_totals() {
        let grid = Grid::new(10.0, 16).unwrap();
        let mu = ChargeMeasure::new(
            vec![
                PointCharge { position: [0.1, 0.0, 0.0], charge: 1.0 },
                PointCharge { position: [-0.1, 0.0, 0.0], charge: -2.0 },
            ],
            Some(gaussian_blob(grid, [0.0; 3], 1.0, 0.5).unwrap()),
        )
        .unwrap();
        assert!((mu.theta() - (-0.5)).abs() < 1e-13);
        assert!((mu.total_variation() - 3.5).abs() < 1e-13);
    }

    #[test]
    fn h1_for_repulsive_charge_is_radially_decreasing() {
        let grid = Grid::new(25.0, 64).unwrap();
        let gt = table();
        let mu = ChargeMeasure::point([0.0; 3], 1.0);
        let s = build_s(&mu, gt.sigma(), grid).unwrap();
        let aux = build_h1_h(gt, &s, mu.total_variation()).unwrap();
        assert!(aux.gauge_ok, "monopole {}", aux.monopole);
        assert!(aux.b_s.min() >= 0.0);
        // Along the x-axis through the first cell centre.
        let j = grid.n / 2;
        let vals: Vec<f64> = (grid.n / 2..grid.n - 8).map(|i| aux.h1.values[grid.index(i, j, j)]).collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]), "{vals:?}");
        for (i, &hv) in aux.h.values.iter().enumerate() {
            let a = s.total.values[i].abs() + aux.h1.values[i].abs();
            assert!(hv >= 0.0);
            assert!(hv <= gt.b_constant() * a * a * (1.0 + 1e-12));
            assert!(aux.b_s.values[i] <= hv * (1.0 + 1e-12) + 1e-300);
        }
    }

    #[test]
    fn h1_matches_radial_oracle_for_smooth_charge() {
        let grid = Grid::new(25.0, 96).unwrap();
        let gt = table();
        let (theta, w) = (2.0, 0.8);
        let mu = ChargeMeasure::density(gaussian_blob(grid, [0.0; 3], w, theta).unwrap());
        let s = build_s(&mu, gt.sigma(), grid).unwrap();
        let aux = build_h1_h(gt, &s, mu.total_variation()).unwrap();
        // H1(r) = (1/r) int_0^r q^2 B dq + int_r^inf q B dq, B = B[S(q)] on a fine mesh.
        let dq = 1e-3;
        let radii: Vec<f64> = (1..=20_000).map(|i| (i as f64 - 0.5) * dq).collect();
        let b: Vec<f64> = radii
            .iter()
            .map(|&q| gt.b(theta * yukawa_of_gaussian(gt.sigma(), w, q)).unwrap())
            .collect();
        let oracle = |r: f64| {
            let (mut inner, mut outer) = (0.0, 0.0);
            for (&q, &bv) in radii.iter().zip(&b) {
                if q < r {
                    inner += q * q * bv * dq;
                } else {
                    outer += q * bv * dq;
                }
            }
            inner / r + outer
        };
        let j = grid.n / 2;
        for i in [j + 1, j + 4, j + 8, j + 14] {
            let idx = grid.index(i, j, j);
            let x = grid.position(idx);
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            let o = oracle(r);
            assert!((aux.h1.values[idx] / o - 1.0).abs() < 0.02, "r={r}: {} vs {o}", aux.h1.values[idx]);
        }
    }

    #[test]
    fn gaussian_potential_limits() {
        let w = 0.5;
        assert!((gaussian_potential(w, 0.0) - gaussian_potential(w, 1e-6)).abs() < 1e-9);
        assert!((gaussian_potential(w, 10.0) - 1.0 / (FOUR_PI * 10.0)).abs() < 1e-15);
    }
}
