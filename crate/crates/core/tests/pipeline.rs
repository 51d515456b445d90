use std::sync::OnceLock;

use vlasov_steady::fft::EllipticSolver;
use vlasov_steady::profile::calibrate_c_beta;
use vlasov_steady::reconstruct::PhaseSpaceSampler;
use vlasov_steady::solver::{apply_k, charge_neutrality, solve_3d, ResolutionPolicy, Solution, SolverConfig, COMPARISON_SLACK};
use vlasov_steady::sources::gaussian_blob;
use vlasov_steady::{build_gtransform, extend, make_maxwellian, ChargeMeasure, ExtensionProfile, GTransform, Grid};

struct Setup {
    f: ExtensionProfile,
    gt: GTransform,
}

fn setup() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| {
        let p = make_maxwellian();
        let c = calibrate_c_beta(&p, 0.25, -50.0, 0.1).unwrap();
        let f = extend(&p, 0.25, c).unwrap();
        let gt = build_gtransform(&f, -50.0, 50.0, 2048).unwrap();
        Setup { f, gt }
    })
}

fn cfg() -> SolverConfig {
    SolverConfig {
        resolution: ResolutionPolicy::Warn,
        ..SolverConfig::default()
    }
}

fn check_invariants(sol: &Solution, cfg: &SolverConfig) {
    let gt = &setup().gt;
    let grid = sol.grid();
    let solver = EllipticSolver::new(grid);
    let k = apply_k(gt, &solver, &sol.s.total, &sol.aux.h, &sol.r).unwrap().field;
    let cert = k.zip_map(&sol.r, |a, b| a - b).sup_norm();
    assert!(cert <= cfg.tol, "certificate {cert}");
    assert!(sol.r.min() >= -1e-12);
    for i in 0..grid.len() {
        assert!(sol.r.values[i] <= sol.aux.h1.values[i] + COMPARISON_SLACK);
    }
    let p = sol.r.zip_map(&sol.s.total, |a, b| a + b);
    let b = gt.b_apply(&p).unwrap();
    for i in 0..grid.len() {
        assert!(b.values[i] <= sol.aux.h.values[i] * (1.0 + 1e-12));
    }
    let defect = charge_neutrality(gt, sol).unwrap();
    assert!(defect <= (1e-4 * sol.theta.abs()).max(1e-6), "neutrality {defect}");
}

#[test]
fn repulsive_point_charge_invariants() {
    let cfg = cfg();
    let grid = Grid::new(20.0, 48).unwrap();
    let mu = ChargeMeasure::point([0.05, -0.1, 0.0], 1.0);
    let sol = solve_3d(&cfg, &setup().gt, &mu, grid).unwrap();
    check_invariants(&sol, &cfg);
    assert!(sol.q.min() >= -1e-10);
}

#[test]
fn attractive_blob_invariants() {
    let cfg = cfg();
    let grid = Grid::new(20.0, 48).unwrap();
    let mu = ChargeMeasure::density(gaussian_blob(grid, [0.0; 3], 1.0, -1.0).unwrap());
    let sol = solve_3d(&cfg, &setup().gt, &mu, grid).unwrap();
    check_invariants(&sol, &cfg);
    assert!(sol.q.min() < 0.0);
}

#[test]
fn mixed_charges_invariants() {
    let cfg = cfg();
    let grid = Grid::new(20.0, 48).unwrap();
    let blob = gaussian_blob(grid, [2.0, 0.0, 0.0], 0.8, 0.5).unwrap();
    let mu = ChargeMeasure::point([-2.1, 0.3, 0.2], -0.8)
        .sum(&ChargeMeasure::density(blob))
        .unwrap();
    let sol = solve_3d(&cfg, &setup().gt, &mu, grid).unwrap();
    check_invariants(&sol, &cfg);
}

#[test]
fn phase_space_density_is_nonnegative() {
    let grid = Grid::new(20.0, 32).unwrap();
    let mu = ChargeMeasure::point([0.1, 0.1, 0.1], -1.0);
    let s = setup();
    let sol = solve_3d(&cfg(), &s.gt, &mu, grid).unwrap();
    let sampler = PhaseSpaceSampler::new(&sol.q, &s.f, &s.gt);
    for idx in (0..grid.len()).step_by(37) {
        for v in [[0.0; 3], [0.3, -0.2, 0.1], [2.0, 0.0, -1.0], [0.0, 6.0, 0.0]] {
            assert!(sampler.eval_f_at_node(idx, v).unwrap() >= 0.0);
        }
    }
}

#[test]
fn refinement_is_second_order() {
    // Successive differences of |Q|_2 for a smooth source at n = 32, 64, 128.
    let cfg = cfg();
    let norms: Vec<f64> = [32usize, 64, 128]
        .iter()
        .map(|&n| {
            let grid = Grid::new(20.0, n).unwrap();
            let mu = ChargeMeasure::density(gaussian_blob(grid, [0.0; 3], 1.5, 1.0).unwrap());
            solve_3d(&cfg, &setup().gt, &mu, grid).unwrap().q.l2_norm()
        })
        .collect();
    let order = ((norms[0] - norms[1]) / (norms[1] - norms[2])).abs().log2();
    assert!(order >= 1.8, "order {order} from {norms:?}");
}
