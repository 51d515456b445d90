//! The phase-space density `f(x, v) = F(|v|^2/2 + Q(x))`, evaluated on demand
//! from a potential field, with the identities it must satisfy: the density
//! `rho[f] = g(Q)`, the stationary Vlasov equation, and `f(., v) - f0(v)` in L^2.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::gtransform::{energy_cutoff, GTransform};
use crate::profile::ExtensionProfile;
use crate::quad::gauss_legendre;

/// Agreement required between the velocity quadrature and the g table.
pub const DENSITY_TOL: f64 = 1e-8;
const GL_POINTS: usize = 24;
const PANEL_SPLITS: usize = 2;

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Closure over `Q` and `F`; nothing is stored on a 6D grid.
#[derive(Debug)]
pub struct PhaseSpaceSampler<'a> {
    q: &'a ScalarField,
    f: &'a ExtensionProfile,
    gt: &'a GTransform,
    gl: (Vec<f64>, Vec<f64>),
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DensityCheck {
    pub q: f64,
    pub density: f64,
    pub g_table: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct VlasovResidual {
    /// Largest `|v . grad_x f - grad_x Q . grad_v f|` over the samples.
    pub max: f64,
    /// Discrete L^2 norm over the samples, `(h^3 sum r^2)^(1/2)`.
    pub l2: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundaryDeviation {
    pub speed: f64,
    /// `|f(., v) - f0(v)|_{L^2(box)}`.
    pub deviation: f64,
    /// `sup |F'| |Q|_{L^2(box)}` with the sup over the attained energies.
    pub bound: f64,
    pub sup_f_prime: f64,
}

impl<'a> PhaseSpaceSampler<'a> {
    pub fn new(q: &'a ScalarField, f: &'a ExtensionProfile, gt: &'a GTransform) -> Self {
        Self {
            q,
            f,
            gt,
            gl: gauss_legendre(GL_POINTS),
        }
    }

    fn energy(&self, q: f64, v: [f64; 3]) -> Result<f64> {
        let e = 0.5 * dot(v, v) + q;
        if e < self.gt.r_min() || e.is_nan() {
            return Err(Error::BelowTable {
                value: e,
                r_min: self.gt.r_min(),
                cell: None,
            });
        }
        Ok(e)
    }

    /// `f(x, v)` with `Q` interpolated trilinearly at `x`.
    pub fn eval_f(&self, x: [f64; 3], v: [f64; 3]) -> Result<f64> {
        Ok(self.f.eval(self.energy(self.q.interpolate(x), v)?))
    }

    /// `f` at grid node `idx`.
    pub fn eval_f_at_node(&self, idx: usize, v: [f64; 3]) -> Result<f64> {
        Ok(self.f.eval(self.energy(self.q.values[idx], v)?))
    }

    /// `4 pi int_0^inf w^2 F(w^2/2 + q) dw` by composite Gauss-Legendre on
    /// geometric panels, split where the energy crosses zero.
    pub fn density_at(&self, q: f64) -> Result<f64> {
        let base = self.f.base();
        let u = energy_cutoff(base.decay_constant(), base.tail_cutoff(), q)?;
        let w_max = (2.0 * (u - q)).sqrt();
        let mut breaks = vec![0.0];
        let mut w = 0.5;
        while w < w_max {
            breaks.push(w);
            w *= 2.0;
        }
        breaks.push(w_max);
        if q < 0.0 {
            breaks.push((-2.0 * q).sqrt());
            breaks.sort_by(f64::total_cmp);
            breaks.dedup();
        }
        let (x, wts) = &self.gl;
        let mut acc = 0.0;
        for pair in breaks.windows(2) {
            let step = (pair[1] - pair[0]) / PANEL_SPLITS as f64;
            for s in 0..PANEL_SPLITS {
                let a = pair[0] + s as f64 * step;
                let half = 0.5 * step;
                let mid = a + half;
                for (xi, wi) in x.iter().zip(wts) {
                    let w = mid + half * xi;
                    acc += wi * half * w * w * self.f.eval(0.5 * w * w + q);
                }
            }
        }
        Ok(4.0 * std::f64::consts::PI * acc)
    }

    /// Density at `x` checked against `g(Q(x))` from the table.
    pub fn density(&self, x: [f64; 3]) -> Result<DensityCheck> {
        self.check_density(self.q.interpolate(x))
    }

    /// Density at grid node `idx`, checked against the table.
    pub fn density_at_node(&self, idx: usize) -> Result<DensityCheck> {
        self.check_density(self.q.values[idx])
    }

    fn check_density(&self, q: f64) -> Result<DensityCheck> {
        let density = self.density_at(q)?;
        let g_table = self.gt.g(q)?;
        let deviation = (density - g_table).abs();
        if deviation > DENSITY_TOL {
            return Err(Error::Inconsistent(format!(
                "velocity quadrature {density} and g table {g_table} differ by {deviation:.3e} at Q = {q}"
            )));
        }
        Ok(DensityCheck {
            q,
            density,
            g_table,
            deviation,
        })
    }

    /// Chain-rule form of the Vlasov residual at nodes: both terms equal
    /// `F'(e) (v . grad Q)`, evaluated in the same order so they cancel exactly.
    pub fn vlasov_residual_analytic(&self, samples: &[(usize, [f64; 3])]) -> Result<VlasovResidual> {
        let mut max = 0.0_f64;
        let mut sum = 0.0;
        for &(idx, v) in samples {
            let grad = self.q.gradient_at(idx);
            let fp = self.f.eval_deriv(self.energy(self.q.values[idx], v)?);
            // v . (F' grad Q) and grad Q . (F' v), factored through F'.
            let term1 = fp * (v[0] * grad[0] + v[1] * grad[1] + v[2] * grad[2]);
            let term2 = fp * (grad[0] * v[0] + grad[1] * v[1] + grad[2] * v[2]);
            let r = term1 - term2;
            max = max.max(r.abs());
            sum += r * r;
        }
        Ok(VlasovResidual {
            max,
            l2: (sum * self.q.grid.cell_volume()).sqrt(),
        })
    }

    /// Finite-difference form: `grad_x f` from neighbouring nodes, `grad_v f`
    /// from velocity steps of the grid spacing, `grad_x Q` by central differences.
    pub fn vlasov_residual_fd(&self, samples: &[(usize, [f64; 3])]) -> Result<VlasovResidual> {
        let grid = self.q.grid;
        let h = grid.spacing();
        let mut max = 0.0_f64;
        let mut sum = 0.0;
        for &(idx, v) in samples {
            let grad_q = self.q.gradient_at(idx);
            let mut term1 = 0.0;
            let mut term2 = 0.0;
            for a in 0..3 {
                let fp = self.eval_f_at_node(grid.neighbour(idx, a, true), v)?;
                let fm = self.eval_f_at_node(grid.neighbour(idx, a, false), v)?;
                term1 += v[a] * (fp - fm) / (2.0 * h);
                let mut vp = v;
                let mut vm = v;
                vp[a] += h;
                vm[a] -= h;
                let dfv = (self.eval_f_at_node(idx, vp)? - self.eval_f_at_node(idx, vm)?) / (2.0 * h);
                term2 += grad_q[a] * dfv;
            }
            let r = term1 - term2;
            max = max.max(r.abs());
            sum += r * r;
        }
        Ok(VlasovResidual {
            max,
            l2: (sum * grid.cell_volume()).sqrt(),
        })
    }

    /// `|f(., v) - f0(v)|_{L^2(box)}` against the Lipschitz bound.
    pub fn boundary_deviation(&self, v: [f64; 3]) -> Result<BoundaryDeviation> {
        let e0 = 0.5 * dot(v, v);
        let f0 = self.f.eval(e0);
        let mut sum = 0.0;
        for &q in &self.q.values {
            let d = self.f.eval(self.energy(q, v)?) - f0;
            sum += d * d;
        }
        let deviation = (sum * self.q.grid.cell_volume()).sqrt();
        let sup_f_prime = self.sup_f_prime(e0 + self.q.min().min(0.0), e0 + self.q.max().max(0.0));
        Ok(BoundaryDeviation {
            speed: dot(v, v).sqrt(),
            deviation,
            bound: sup_f_prime * self.q.l2_norm(),
            sup_f_prime,
        })
    }

    /// Sampled `sup |F'|` on `[a, b]`, padded against sampling gaps.
    fn sup_f_prime(&self, a: f64, b: f64) -> f64 {
        let pad = 1e-3 * (b - a).max(1e-3);
        let (lo, hi) = (a - pad, b + pad);
        let n = 4000;
        let mut sup = 0.0_f64;
        for i in 0..=n {
            let e = lo + (hi - lo) * i as f64 / n as f64;
            sup = sup.max(self.f.eval_deriv(e).abs());
        }
        1.01 * sup
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use crate::gtransform::{build_gtransform, DEFAULT_TABLE_NODES};
    use crate::profile::{calibrate_c_beta, extend, make_maxwellian};
    use std::sync::OnceLock;

    fn setup() -> &'static (ExtensionProfile, GTransform) {
        static T: OnceLock<(ExtensionProfile, GTransform)> = OnceLock::new();
        T.get_or_init(|| {
            let p = make_maxwellian();
            let c = calibrate_c_beta(&p, 0.25, -50.0, 0.1).unwrap();
            let f = extend(&p, 0.25, c).unwrap();
            let gt = build_gtransform(&f, -50.0, 50.0, DEFAULT_TABLE_NODES).unwrap();
            (f, gt)
        })
    }

    fn bump(grid: Grid, amp: f64) -> ScalarField {
        ScalarField::from_fn(grid, |x| amp * (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 2.0).exp())
    }

    #[test]
    fn zero_potential_gives_boundary_profile() {
        let (f, gt) = setup();
        let q = ScalarField::zeros(Grid::new(10.0, 8).unwrap());
        let s = PhaseSpaceSampler::new(&q, f, gt);
        for v in [[0.0; 3], [1.0, 0.5, -2.0]] {
            let e = 0.5 * dot(v, v);
            assert_eq!(s.eval_f([0.3, 0.1, 0.2], v).unwrap(), f.base().eval(e));
            assert_eq!(s.boundary_deviation(v).unwrap().deviation, 0.0);
        }
        let d = s.density([0.0; 3]).unwrap();
        assert!((d.density - 1.0).abs() < 1e-10);
    }

    #[test]
    fn repulsive_potential_lowers_f() {
        let (f, gt) = setup();
        let grid = Grid::new(10.0, 16).unwrap();
        let q = bump(grid, 0.3);
        let s = PhaseSpaceSampler::new(&q, f, gt);
        for v in [[0.0; 3], [0.2, 0.0, 0.0], [1.0, 2.0, 0.1]] {
            let e = 0.5 * dot(v, v);
            assert!(s.eval_f([0.1, 0.1, 0.1], v).unwrap() < f.base().eval(e));
        }
    }

    #[test]
    fn attractive_well_uses_extension_branch() {
        let p = make_maxwellian();
        let f1 = extend(&p, 0.1, 0.05).unwrap();
        let f2 = extend(&p, 0.4, 0.05).unwrap();
        let gt = build_gtransform(&f1, -10.0, 10.0, 256).unwrap();
        let grid = Grid::new(10.0, 16).unwrap();
        let q = bump(grid, -0.8);
        let s1 = PhaseSpaceSampler::new(&q, &f1, &gt);
        let s2 = PhaseSpaceSampler::new(&q, &f2, &gt);
        let x = grid.position(grid.index(8, 8, 8));
        let a = s1.eval_f(x, [0.0; 3]).unwrap();
        let b = s2.eval_f(x, [0.0; 3]).unwrap();
        let qx = q.interpolate(x);
        assert!(qx < 0.0);
        assert_eq!(a, f1.eval(qx));
        assert!(a != b);
    }

    #[test]
    fn density_matches_table() {
        let (f, gt) = setup();
        let grid = Grid::new(10.0, 16).unwrap();
        let q = bump(grid, -0.6);
        let s = PhaseSpaceSampler::new(&q, f, gt);
        for qv in [-20.0, -3.0, -0.6, -1e-3, 0.0, 0.4, 7.0] {
            let d = s.density_at(qv).unwrap();
            assert!((d - gt.g(qv).unwrap()).abs() < 1e-9, "q={qv}");
        }
        for idx in [0, 17, grid.index(8, 8, 8)] {
            assert!(s.density_at_node(idx).unwrap().deviation <= DENSITY_TOL);
        }
    }

    #[test]
    fn below_table_is_rejected() {
        let (f, gt) = setup();
        let grid = Grid::new(10.0, 8).unwrap();
        let q = ScalarField::from_fn(grid, |_| -80.0);
        let s = PhaseSpaceSampler::new(&q, f, gt);
        assert!(matches!(s.eval_f([0.0; 3], [0.0; 3]), Err(Error::BelowTable { .. })));
    }

    #[test]
    fn analytic_residual_vanishes() {
        let (f, gt) = setup();
        let grid = Grid::new(10.0, 16).unwrap();
        let q = bump(grid, 0.4);
        let s = PhaseSpaceSampler::new(&q, f, gt);
        let samples: Vec<_> = (0..grid.len())
            .step_by(7)
            .map(|i| (i, [0.3 * (i % 5) as f64, -1.1, 0.7]))
            .collect();
        let r = s.vlasov_residual_analytic(&samples).unwrap();
        assert_eq!(r.max, 0.0);
        let zero_v: Vec<_> = (0..grid.len()).step_by(11).map(|i| (i, [0.0; 3])).collect();
        assert_eq!(s.vlasov_residual_fd(&zero_v).unwrap().max, 0.0);
    }

    #[test]
    fn fd_residual_is_second_order() {
        let (f, gt) = setup();
        let res = |n: usize| {
            let grid = Grid::new(10.0, n).unwrap();
            let q = bump(grid, 0.4);
            let s = PhaseSpaceSampler::new(&q, f, gt);
            let samples: Vec<_> = (0..grid.len()).map(|i| (i, [1.0, -0.5, 0.8])).collect();
            s.vlasov_residual_fd(&samples).unwrap().l2
        };
        let order = (res(32) / res(64)).log2();
        assert!(order > 1.8, "order {order}");
    }

    #[test]
    fn boundary_deviation_bounded_and_tail_small() {
        let (f, gt) = setup();
        let grid = Grid::new(10.0, 16).unwrap();
        let q = bump(grid, -0.5);
        let s = PhaseSpaceSampler::new(&q, f, gt);
        for v in [[0.0; 3], [0.5, 0.5, 0.0], [2.0, 0.0, 1.0]] {
            let b = s.boundary_deviation(v).unwrap();
            assert!(b.deviation.is_finite() && b.bound.is_finite());
            assert!(b.deviation <= b.bound);
        }
        let far = s.boundary_deviation([11.0, 0.0, 0.0]).unwrap();
        assert!(far.deviation <= 1e-10);
    }
}
