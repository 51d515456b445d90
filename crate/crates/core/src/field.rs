//! Discretization carriers: cell-centred periodic 3D grids and radial meshes.

use std::io::{BufRead, BufWriter, Write};

use serde::Serialize;

use crate::error::{Error, Result};

/// Periodic cube `[-L/2, L/2)^3` with `n` cell-centred nodes per axis at
/// `x_i = -L/2 + (i + 1/2) h`, `h = L / n`. The origin is a cell corner, so a
/// point charge placed there never coincides with a node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    pub length: f64,
    pub n: usize,
}

impl Grid {
    pub fn new(length: f64, n: usize) -> Result<Self> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::InvalidParameter(format!("box length must be positive, got {length}")));
        }
        if n < 4 {
            return Err(Error::InvalidParameter(format!("need at least 4 nodes per axis, got {n}")));
        }
        Ok(Self { length, n })
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(3)
    }

    pub fn volume(&self) -> f64 {
        self.length.powi(3)
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn coord(&self, i: usize) -> f64 {
        -0.5 * self.length + (i as f64 + 0.5) * self.spacing()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    pub fn unindex(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        [idx / (n * n), (idx / n) % n, idx % n]
    }

    pub fn position(&self, idx: usize) -> [f64; 3] {
        let [i, j, k] = self.unindex(idx);
        [self.coord(i), self.coord(j), self.coord(k)]
    }

    /// Minimum-image displacement `x - y` on the periodic box.
    pub fn min_image(&self, x: [f64; 3], y: [f64; 3]) -> [f64; 3] {
        let l = self.length;
        let mut d = [0.0; 3];
        for a in 0..3 {
            let mut v = x[a] - y[a];
            v -= l * (v / l).round();
            d[a] = v;
        }
        d
    }

    /// Neighbour index along `axis` with periodic wrap; `forward` selects +1.
    pub fn neighbour(&self, idx: usize, axis: usize, forward: bool) -> usize {
        let mut c = self.unindex(idx);
        c[axis] = if forward {
            (c[axis] + 1) % self.n
        } else {
            (c[axis] + self.n - 1) % self.n
        };
        self.index(c[0], c[1], c[2])
    }
}

/// Nodal values on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.len()).map(|idx| f(grid.position(idx))).collect();
        Self { grid, values }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Format(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.grid, other.grid, "field shapes differ");
        Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Box integral by the nodal rule.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// `(int |u|^p dx)^(1/p)` by the nodal rule.
    pub fn lp_norm(&self, p: f64) -> f64 {
        let s: f64 = self.values.iter().map(|v| v.abs().powf(p)).sum();
        (s * self.grid.cell_volume()).powf(1.0 / p)
    }

    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.values.iter().map(|v| v * v).sum();
        (s * self.grid.cell_volume()).sqrt()
    }

    /// Trilinear interpolation at an arbitrary point (periodic).
    pub fn interpolate(&self, x: [f64; 3]) -> f64 {
        let g = self.grid;
        let h = g.spacing();
        let n = g.n as isize;
        let mut base = [0isize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let s = (x[a] + 0.5 * g.length) / h - 0.5;
            let f = s.floor();
            base[a] = f as isize;
            frac[a] = s - f;
        }
        let wrap = |v: isize| v.rem_euclid(n) as usize;
        let mut acc = 0.0;
        for di in 0..2 {
            for dj in 0..2 {
                for dk in 0..2 {
                    let w = (if di == 1 { frac[0] } else { 1.0 - frac[0] })
                        * (if dj == 1 { frac[1] } else { 1.0 - frac[1] })
                        * (if dk == 1 { frac[2] } else { 1.0 - frac[2] });
                    let idx = g.index(
                        wrap(base[0] + di),
                        wrap(base[1] + dj),
                        wrap(base[2] + dk),
                    );
                    acc += w * self.values[idx];
                }
            }
        }
        acc
    }

    /// Central-difference gradient at node `idx`.
    pub fn gradient_at(&self, idx: usize) -> [f64; 3] {
        let h = self.grid.spacing();
        let mut d = [0.0; 3];
        for (a, slot) in d.iter_mut().enumerate() {
            let p = self.values[self.grid.neighbour(idx, a, true)];
            let m = self.values[self.grid.neighbour(idx, a, false)];
            *slot = (p - m) / (2.0 * h);
        }
        d
    }

    /// `(sigma - Delta_h) u` with the 7-point stencil, applied in real space.
    pub fn apply_screened_stencil(&self, sigma: f64) -> ScalarField {
        let g = self.grid;
        let inv_h2 = 1.0 / (g.spacing() * g.spacing());
        let values = (0..g.len())
            .map(|idx| {
                let mut lap = -6.0 * self.values[idx];
                for a in 0..3 {
                    lap += self.values[g.neighbour(idx, a, true)];
                    lap += self.values[g.neighbour(idx, a, false)];
                }
                sigma * self.values[idx] - lap * inv_h2
            })
            .collect();
        ScalarField { grid: g, values }
    }

    /// Writes `# L=..,n=..` then `i,j,k,x,y,z,value` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        writeln!(w, "# L={},n={}", self.grid.length, self.grid.n)?;
        writeln!(w, "i,j,k,x,y,z,value")?;
        for idx in 0..self.grid.len() {
            let [i, j, k] = self.grid.unindex(idx);
            let [x, y, z] = self.grid.position(idx);
            writeln!(w, "{i},{j},{k},{x},{y},{z},{:e}", self.values[idx])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format produced by [`ScalarField::write_csv`]. Only the
    /// `i,j,k` and `value` columns are used.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty field file".into()))??;
        let (length, n) = parse_header(&header)?;
        let grid = Grid::new(length, n)?;
        let mut values = vec![f64::NAN; grid.len()];
        let mut seen = 0usize;
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with('i') {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 7 && cols.len() != 4 {
                return Err(Error::Format(format!("line {}: expected 7 or 4 columns", lineno + 2)));
            }
            let parse_idx = |s: &str| {
                s.parse::<usize>()
                    .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 2)))
            };
            let (i, j, k) = (parse_idx(cols[0])?, parse_idx(cols[1])?, parse_idx(cols[2])?);
            if i >= n || j >= n || k >= n {
                return Err(Error::Format(format!("line {}: index out of range", lineno + 2)));
            }
            let v: f64 = cols[cols.len() - 1]
                .parse()
                .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 2)))?;
            let idx = grid.index(i, j, k);
            if values[idx].is_nan() {
                seen += 1;
            }
            values[idx] = v;
        }
        if seen != grid.len() {
            return Err(Error::Format(format!(
                "field file covers {seen} of {} nodes",
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }
}

fn parse_header(line: &str) -> Result<(f64, usize)> {
    let body = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| Error::Format("missing '# L=..,n=..' header".into()))?;
    let mut length = None;
    let mut n = None;
    for part in body.split(',') {
        let mut kv = part.trim().splitn(2, '=');
        match (kv.next(), kv.next()) {
            (Some("L"), Some(v)) => length = v.trim().parse().ok(),
            (Some("n"), Some(v)) => n = v.trim().parse().ok(),
            _ => {}
        }
    }
    match (length, n) {
        (Some(l), Some(n)) => Ok((l, n)),
        _ => Err(Error::Format(format!("bad header: {line}"))),
    }
}

/// Values on radial nodes `r_i = i * r_max / n`, `i = 1..=n` (the origin is excluded).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadialField {
    pub r_max: f64,
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
}

impl RadialField {
    pub fn uniform_nodes(r_max: f64, n: usize) -> Vec<f64> {
        let h = r_max / n as f64;
        (1..=n).map(|i| i as f64 * h).collect()
    }

    pub fn spacing(&self) -> f64 {
        self.r_max / self.nodes.len() as f64
    }

    /// Linear interpolation; zero beyond `r_max`, constant below the first node.
    pub fn interpolate(&self, r: f64) -> f64 {
        let h = self.spacing();
        if r >= self.r_max {
            return if r == self.r_max { self.values[self.values.len() - 1] } else { 0.0 };
        }
        if r <= self.nodes[0] {
            return self.values[0];
        }
        let s = r / h - 1.0;
        let i = (s.floor() as usize).min(self.nodes.len() - 2);
        let t = s - i as f64;
        (1.0 - t) * self.values[i] + t * self.values[i + 1]
    }

    /// `(int 4 pi r^2 u^2 dr)^(1/2)` over nodes with `r >= r_from`.
    pub fn l2_norm_from(&self, r_from: f64) -> f64 {
        let h = self.spacing();
        let s: f64 = self
            .nodes
            .iter()
            .zip(&self.values)
            .filter(|(r, _)| **r >= r_from)
            .map(|(r, v)| 4.0 * std::f64::consts::PI * r * r * v * v * h)
            .sum();
        s.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_geometry() {
        let g = Grid::new(10.0, 8).unwrap();
        assert_eq!(g.spacing(), 1.25);
        assert_eq!(g.coord(0), -4.375);
        assert_eq!(g.coord(4), 0.625);
        let idx = g.index(3, 5, 7);
        assert_eq!(g.unindex(idx), [3, 5, 7]);
        assert_eq!(g.neighbour(g.index(7, 0, 0), 0, true), g.index(0, 0, 0));
        let d = g.min_image([4.9, 0.0, 0.0], [-4.9, 0.0, 0.0]);
        assert!((d[0] + 0.2).abs() < 1e-12);
    }

    #[test]
    fn trilinear_reproduces_nodes_and_linear_functions() {
        let g = Grid::new(4.0, 8).unwrap();
        let f = ScalarField::from_fn(g, |x| 1.0 + 0.5 * x[0] - 0.25 * x[1] + 0.125 * x[2]);
        assert_eq!(f.interpolate(g.position(g.index(2, 3, 4))), f.values[g.index(2, 3, 4)]);
        let x = [0.1, -0.3, 0.7];
        let exact = 1.0 + 0.05 + 0.075 + 0.0875;
        assert!((f.interpolate(x) - exact).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let g = Grid::new(3.0, 4).unwrap();
        let f = ScalarField::from_fn(g, |x| x[0] * x[1] - x[2]);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = ScalarField::read_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.grid, g);
        for (a, b) in f.values.iter().zip(&back.values) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
    }

    #[test]
    fn csv_rejects_incomplete_files() {
        let text = "# L=2,n=4\ni,j,k,x,y,z,value\n0,0,0,0,0,0,1.0\n";
        assert!(ScalarField::read_csv(std::io::Cursor::new(text)).is_err());
        assert!(ScalarField::read_csv(std::io::Cursor::new("no header\n")).is_err());
    }

    #[test]
    fn radial_interpolation() {
        let nodes = RadialField::uniform_nodes(2.0, 4);
        let values = nodes.iter().map(|r| 3.0 * r).collect();
        let f = RadialField { r_max: 2.0, nodes, values };
        assert!((f.interpolate(1.25) - 3.75).abs() < 1e-12);
        assert_eq!(f.interpolate(2.5), 0.0);
    }
}
