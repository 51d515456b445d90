//! One-dimensional quadrature: adaptive Gauss–Kronrod (G10/K21) over a set of
//! breakpoints, and Gauss–Legendre rules for fixed composite integration.

use std::collections::BinaryHeap;

use crate::error::{Error, Result};

// Kronrod 21-point abscissae; odd entries (1, 3, ..., 9) are the Gauss 10-point nodes.
const XGK: [f64; 11] = [
    0.995_657_163_025_808_1,
    0.973_906_528_517_171_7,
    0.930_157_491_355_708_2,
    0.865_063_366_688_984_5,
    0.780_817_726_586_416_9,
    0.679_409_568_299_024_4,
    0.562_757_134_668_604_7,
    0.433_395_394_129_247_2,
    0.294_392_862_701_460_2,
    0.148_874_338_981_631_22,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874,
    0.032_558_162_307_964_725,
    0.054_755_896_574_351_995,
    0.075_039_674_810_919_96,
    0.093_125_454_583_697_6,
    0.109_387_158_802_297_64,
    0.123_491_976_262_065_84,
    0.134_709_217_311_473_34,
    0.142_775_938_577_060_09,
    0.147_739_104_901_338_49,
    0.149_445_554_002_916_9,
];

const WG: [f64; 5] = [
    0.066_671_344_308_688_14,
    0.149_451_349_150_580_6,
    0.219_086_362_515_982_04,
    0.269_266_719_309_996_35,
    0.295_524_224_714_752_87,
];

/// Tolerances for [`integrate`]. Refinement stops once the summed error
/// estimate is below `max(abs, rel * |I|)`.
#[derive(Debug, Clone, Copy)]
pub struct QuadTol {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for QuadTol {
    fn default() -> Self {
        Self {
            abs: 1e-12,
            rel: 1e-12,
            max_intervals: 4000,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evals: usize,
}

/// Single K21 panel with the embedded G10 estimate.
fn gk21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[10];
    let mut g = 0.0;
    for j in 0..10 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    let k = k * h;
    let g = g * h;
    (k, (k - g).abs())
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Adaptive integration of `f` over the consecutive intervals defined by
/// `breaks` (sorted, at least two entries). Each interval is seeded as its own
/// panel, so integrands concentrated away from the panel nodes are not missed
/// as long as the breakpoints resolve them.
pub fn integrate<F: Fn(f64) -> f64>(f: F, breaks: &[f64], tol: QuadTol) -> Result<QuadResult> {
    if breaks.len() < 2 {
        return Err(Error::InvalidParameter(
            "quadrature needs at least two breakpoints".into(),
        ));
    }
    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut err = 0.0;
    let mut evals = 0;
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let (value, error) = gk21(&f, a, b);
        evals += 21;
        total += value;
        err += error;
        heap.push(Panel { a, b, value, error });
    }
    while err > tol.abs.max(tol.rel * total.abs()) {
        if heap.len() >= tol.max_intervals {
            return Err(Error::Quadrature {
                a: breaks[0],
                b: breaks[breaks.len() - 1],
                error: err,
                evals,
            });
        }
        let worst = match heap.pop() {
            Some(p) => p,
            None => break,
        };
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval cannot be split further in floating point.
            heap.push(worst);
            return Err(Error::Quadrature {
                a: breaks[0],
                b: breaks[breaks.len() - 1],
                error: err,
                evals,
            });
        }
        let (v1, e1) = gk21(&f, worst.a, mid);
        let (v2, e2) = gk21(&f, mid, worst.b);
        evals += 42;
        total += v1 + v2 - worst.value;
        err += e1 + e2 - worst.error;
        heap.push(Panel {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Panel {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        });
    }
    // Re-sum to shed the drift of the running updates.
    let (value, error) = heap
        .iter()
        .fold((0.0, 0.0), |(v, e), p| (v + p.value, e + p.error));
    Ok(QuadResult {
        value,
        error,
        evals,
    })
}

/// Breakpoints `start, start+1, start+2, start+4, ...` growing geometrically
/// until `end`, with the extra points in `extra` merged in.
pub fn geometric_breaks(start: f64, end: f64, extra: &[f64]) -> Vec<f64> {
    let mut pts = vec![start];
    let mut step = 1.0_f64;
    let mut x = start + step;
    while x < end {
        pts.push(x);
        step *= 2.0;
        x = start + step;
    }
    pts.push(end);
    for &e in extra {
        if e > start && e < end {
            pts.push(e);
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * b.abs().max(1.0));
    pts
}

/// Gauss–Legendre nodes and weights on [-1, 1] by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronrod_weights_sum_to_two() {
        let s: f64 = 2.0 * WGK[..10].iter().sum::<f64>() + WGK[10];
        assert!((s - 2.0).abs() < 1e-14);
        let g: f64 = 2.0 * WG.iter().sum::<f64>();
        assert!((g - 2.0).abs() < 1e-14);
    }

    #[test]
    fn gk21_exact_for_high_degree_polynomials() {
        // K21 integrates degree 31 exactly; G10 degree 19.
        for deg in [0_i32, 5, 19, 31] {
            let (k, _) = gk21(&|x: f64| x.powi(deg), 0.0, 1.0);
            let exact = 1.0 / (deg as f64 + 1.0);
            assert!((k - exact).abs() < 1e-14, "deg {deg}: {k} vs {exact}");
        }
    }

    #[test]
    fn adaptive_handles_sqrt_weight() {
        let r = integrate(|x: f64| x.sqrt(), &[0.0, 1.0], QuadTol::default()).unwrap();
        assert!((r.value - 2.0 / 3.0).abs() < 1e-11);
    }

    #[test]
    fn adaptive_with_geometric_breaks_finds_narrow_mass() {
        let br = geometric_breaks(0.0, 1e4, &[]);
        let r = integrate(|t: f64| (-t * t).exp(), &br, QuadTol::default()).unwrap();
        assert!((r.value - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(20);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(38)).sum();
        assert!((s - 2.0 / 39.0).abs() < 1e-14);
    }

    #[test]
    fn non_convergence_is_reported() {
        let tol = QuadTol {
            abs: 1e-15,
            rel: 0.0,
            max_intervals: 4,
        };
        let err = integrate(|x: f64| (1.0 / x).sin(), &[1e-6, 1.0], tol).unwrap_err();
        assert!(matches!(err, Error::Quadrature { .. }));
    }
}
