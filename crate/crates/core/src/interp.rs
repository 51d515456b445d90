//! Piecewise monotone cubic Hermite interpolation of tabulated data.

/// Cubic Hermite interpolant through `(x_i, y_i)` with supplied slopes,
/// limited with the Fritsch–Carlson condition so that monotone data yield a
/// monotone interpolant.
#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
    limited: usize,
}

impl MonotoneCubic {
    /// `x` must be strictly increasing; `slopes` are exact derivatives where
    /// available (pass secant estimates otherwise).
    pub fn new(x: Vec<f64>, y: Vec<f64>, slopes: Vec<f64>) -> Self {
        assert!(x.len() >= 2 && x.len() == y.len() && y.len() == slopes.len());
        debug_assert!(x.windows(2).all(|w| w[1] > w[0]));
        let mut m = slopes;
        let mut limited = 0;
        for k in 0..x.len() - 1 {
            let d = (y[k + 1] - y[k]) / (x[k + 1] - x[k]);
            if d == 0.0 {
                if m[k] != 0.0 || m[k + 1] != 0.0 {
                    limited += 1;
                }
                m[k] = 0.0;
                m[k + 1] = 0.0;
                continue;
            }
            let mut a = m[k] / d;
            let mut b = m[k + 1] / d;
            if a < 0.0 {
                m[k] = 0.0;
                a = 0.0;
                limited += 1;
            }
            if b < 0.0 {
                m[k + 1] = 0.0;
                b = 0.0;
                limited += 1;
            }
            let s = a * a + b * b;
            if s > 9.0 {
                let tau = 3.0 / s.sqrt();
                m[k] = tau * a * d;
                m[k + 1] = tau * b * d;
                limited += 1;
            }
        }
        Self { x, y, m, limited }
    }

    /// Same as [`MonotoneCubic::new`] with slopes from centred secants.
    pub fn from_values(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        let m = (0..n)
            .map(|i| {
                let (a, b) = if i == 0 {
                    (0, 1)
                } else if i == n - 1 {
                    (n - 2, n - 1)
                } else {
                    (i - 1, i + 1)
                };
                (y[b] - y[a]) / (x[b] - x[a])
            })
            .collect();
        Self::new(x, y, m)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn slopes(&self) -> &[f64] {
        &self.m
    }

    /// Number of slope adjustments made by the limiter.
    pub fn limited_count(&self) -> usize {
        self.limited
    }

    pub fn x_min(&self) -> f64 {
        self.x[0]
    }

    pub fn x_max(&self) -> f64 {
        self.x[self.x.len() - 1]
    }

    /// Index `k` of the cell `[x_k, x_{k+1}]` containing `t` (clamped to the table).
    pub fn locate(&self, t: f64) -> usize {
        let n = self.x.len();
        let p = self.x.partition_point(|&v| v <= t);
        p.clamp(1, n - 1) - 1
    }

    /// Interpolated value; `t` outside the table is clamped to the end values.
    pub fn eval(&self, t: f64) -> f64 {
        if t <= self.x[0] {
            return self.y[0];
        }
        if t >= self.x_max() {
            return self.y[self.y.len() - 1];
        }
        let k = self.locate(t);
        self.eval_in_cell(k, t)
    }

    pub fn eval_in_cell(&self, k: usize, t: f64) -> f64 {
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[k] + h10 * h * self.m[k] + h01 * self.y[k + 1] + h11 * h * self.m[k + 1]
    }

    /// Derivative of the interpolant.
    pub fn eval_deriv(&self, t: f64) -> f64 {
        if t <= self.x[0] || t >= self.x_max() {
            return 0.0;
        }
        let k = self.locate(t);
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let s2 = s * s;
        let d00 = (6.0 * s2 - 6.0 * s) / h;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = (-6.0 * s2 + 6.0 * s) / h;
        let d11 = 3.0 * s2 - 2.0 * s;
        d00 * self.y[k] + d10 * self.m[k] + d01 * self.y[k + 1] + d11 * self.m[k + 1]
    }

    /// Quadratic and cubic Taylor coefficients `(c2, c3)` of the cell-`k`
    /// polynomial expanded about its endpoint `node` (either `k` or `k + 1`).
    /// The value and slope at that node are `y[node]`, `m[node]`.
    pub fn taylor_about(&self, k: usize, node: usize) -> (f64, f64) {
        debug_assert!(node == k || node == k + 1);
        let h = self.x[k + 1] - self.x[k];
        let d = (self.y[k + 1] - self.y[k]) / h;
        if node == k {
            let c2 = (3.0 * d - 2.0 * self.m[k] - self.m[k + 1]) / h;
            let c3 = (self.m[k] + self.m[k + 1] - 2.0 * d) / (h * h);
            (c2, c3)
        } else {
            // Reflect: expand in u = t - x_{k+1} (u in [-h, 0]).
            let c2 = (2.0 * self.m[k + 1] + self.m[k] - 3.0 * d) / h;
            let c3 = (self.m[k] + self.m[k + 1] - 2.0 * d) / (h * h);
            (c2, c3)
        }
    }

    /// Inverse of a strictly decreasing interpolant: the `t` with `eval(t) = v`,
    /// clamped to the table ends.
    pub fn invert_decreasing(&self, v: f64) -> f64 {
        let n = self.y.len();
        if v >= self.y[0] {
            return self.x[0];
        }
        if v <= self.y[n - 1] {
            return self.x[n - 1];
        }
        let p = self.y.partition_point(|&yy| yy > v);
        let k = p.clamp(1, n - 1) - 1;
        let (mut lo, mut hi) = (self.x[k], self.x[k + 1]);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.eval_in_cell(k, mid) > v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reproduces_cubic_with_exact_slopes() {
        let x: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        let f = |t: f64| 1.0 - t + 0.3 * t * t - 0.05 * t * t * t;
        let df = |t: f64| -1.0 + 0.6 * t - 0.15 * t * t;
        let y = x.iter().map(|&t| f(t)).collect();
        let m = x.iter().map(|&t| df(t)).collect();
        let ip = MonotoneCubic::new(x, y, m);
        assert_eq!(ip.limited_count(), 0);
        for t in [0.05, 0.33, 0.77, 0.999] {
            assert!((ip.eval(t) - f(t)).abs() < 1e-14);
            assert!((ip.eval_deriv(t) - df(t)).abs() < 1e-13);
        }
    }

    #[test]
    fn taylor_coefficients_match_cell_polynomial() {
        let x = vec![-0.5, 0.0, 0.4];
        let y = vec![1.7, 1.0, 0.69];
        let m = vec![-1.6, -1.0, -0.65];
        let ip = MonotoneCubic::new(x, y, m);
        for (k, node, t) in [(1usize, 1usize, 0.13), (0, 1, -0.21)] {
            let (c2, c3) = ip.taylor_about(k, node);
            let u = t - ip.nodes()[node];
            let direct = ip.eval_in_cell(k, t);
            let series = ip.values()[node] + ip.slopes()[node] * u + c2 * u * u + c3 * u * u * u;
            assert!((direct - series).abs() < 1e-14, "{direct} vs {series}");
        }
    }

    #[test]
    fn inversion_round_trips() {
        let x: Vec<f64> = (0..50).map(|i| -5.0 + i as f64 * 0.2).collect();
        let y: Vec<f64> = x.iter().map(|&t| (-t).exp()).collect();
        let ip = MonotoneCubic::from_values(x, y);
        for t in [-4.3, -0.1, 2.2, 4.6] {
            let v = ip.eval(t);
            assert!((ip.invert_decreasing(v) - t).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn monotone_data_give_monotone_interpolant(
            steps in proptest::collection::vec(0.0f64..3.0, 3..20),
            probes in proptest::collection::vec(0.0f64..1.0, 1..40),
        ) {
            let n = steps.len() + 1;
            let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let mut y = vec![0.0];
            for s in &steps {
                let last = *y.last().unwrap();
                y.push(last - s);
            }
            let ip = MonotoneCubic::from_values(x, y);
            let mut ts: Vec<f64> = probes.iter().map(|p| p * (n - 1) as f64).collect();
            ts.sort_by(f64::total_cmp);
            for w in ts.windows(2) {
                prop_assert!(ip.eval(w[1]) <= ip.eval(w[0]) + 1e-12);
            }
        }
    }
}
