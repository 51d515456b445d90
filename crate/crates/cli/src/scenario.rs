//! Scenario files: one TOML document describing profile, table, charges,
//! domain, solver settings and output directory.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vlasov_steady::gtransform::DEFAULT_TABLE_NODES;
use vlasov_steady::profile::calibrate_c_beta;
use vlasov_steady::solver::SolverConfig;
use vlasov_steady::sources::{gaussian_blob, PointCharge};
use vlasov_steady::{extend, make_maxwellian, BoundaryProfile, ChargeMeasure, ExtensionProfile, Grid, ScalarField};

use crate::error::CliError;

/// Smallest admissible box length in screening lengths.
pub const MIN_BOX_SCREENING_LENGTHS: f64 = 20.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub profile: ProfileSpec,
    #[serde(default)]
    pub table: TableSpec,
    #[serde(default)]
    pub charges: ChargeSpec,
    pub grid: Option<GridSpec>,
    pub radial: Option<RadialSpec>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputSpec,
    pub compare: Option<CompareSpec>,
    #[serde(default)]
    pub sample: SampleSpec,
}

/// A number, or the string `"auto"` for calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CBeta {
    Value(f64),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl Default for CBeta {
    fn default() -> Self {
        CBeta::Auto(AutoTag::Auto)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    pub name: String,
    pub beta: f64,
    #[serde(default)]
    pub c_beta: CBeta,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_probe")]
    pub r_probe: f64,
}

fn default_margin() -> f64 {
    0.1
}

fn default_probe() -> f64 {
    -50.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSpec {
    pub r_min: f64,
    pub r_max: f64,
    pub nodes: usize,
}

impl Default for TableSpec {
    fn default() -> Self {
        Self {
            r_min: -50.0,
            r_max: 50.0,
            nodes: DEFAULT_TABLE_NODES,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChargeSpec {
    #[serde(default)]
    pub points: Vec<PointSpec>,
    #[serde(default)]
    pub gaussians: Vec<GaussianSpec>,
    /// Field CSV (as written by `solve`) holding a charge density.
    pub density_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointSpec {
    pub position: [f64; 3],
    pub charge: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub center: [f64; 3],
    pub width: f64,
    pub charge: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub length: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadialSpec {
    pub r_max: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSpec {
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    /// Shared amplitude; defaults to the larger calibrated value.
    pub c_beta: Option<f64>,
    #[serde(default = "default_min_depth")]
    pub min_depth: f64,
    pub neg_eps: Option<f64>,
}

fn default_min_depth() -> f64 {
    0.05
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    #[serde(default = "default_velocities")]
    pub velocities: Vec<[f64; 3]>,
    #[serde(default)]
    pub points: Vec<[f64; 3]>,
    /// Every `stride`-th node enters the density check.
    #[serde(default = "default_stride")]
    pub density_stride: usize,
}

fn default_velocities() -> Vec<[f64; 3]> {
    vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.5, -0.5], [-2.0, 1.0, 1.0]]
}

fn default_stride() -> usize {
    1
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            velocities: default_velocities(),
            points: Vec::new(),
            density_stride: default_stride(),
        }
    }
}

/// Parsed scenario plus the directory relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub base_dir: PathBuf,
}

impl LoadedScenario {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let scenario: Scenario =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        scenario.validate()?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { scenario, base_dir })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self, over: Option<&Path>) -> PathBuf {
        match over {
            Some(p) => p.to_path_buf(),
            None => self.resolve(&self.scenario.output.dir),
        }
    }

    pub fn grid(&self) -> Result<Grid, CliError> {
        let g = self
            .scenario
            .grid
            .ok_or_else(|| CliError::Usage("scenario has no [grid] section".into()))?;
        Ok(Grid::new(g.length, g.n)?)
    }

    pub fn radial(&self) -> Result<RadialSpec, CliError> {
        self.scenario
            .radial
            .ok_or_else(|| CliError::Usage("scenario has no [radial] section".into()))
    }

    /// The background measure on `grid`.
    pub fn charges(&self, grid: Grid) -> Result<ChargeMeasure, CliError> {
        let c = &self.scenario.charges;
        let points = c
            .points
            .iter()
            .map(|p| PointCharge {
                position: p.position,
                charge: p.charge,
            })
            .collect();
        let mut smooth: Option<ScalarField> = None;
        let mut add = |f: ScalarField| {
            smooth = Some(match smooth.take() {
                Some(s) => s.zip_map(&f, |a, b| a + b),
                None => f,
            });
        };
        for g in &c.gaussians {
            add(gaussian_blob(grid, g.center, g.width, g.charge)?);
        }
        if let Some(file) = &c.density_file {
            let path = self.resolve(file);
            let f = fs::File::open(&path).map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))?;
            let field = ScalarField::read_csv(BufReader::new(f))?;
            if field.grid != grid {
                return Err(CliError::Usage(format!(
                    "density file {} is on L={}, n={}; scenario grid is L={}, n={}",
                    path.display(),
                    field.grid.length,
                    field.grid.n,
                    grid.length,
                    grid.n
                )));
            }
            add(field);
        }
        Ok(ChargeMeasure::new(points, smooth)?)
    }

    /// Net charge of a point charge at the origin, the only source the
    /// radial solver accepts.
    pub fn radial_theta(&self) -> Result<f64, CliError> {
        let c = &self.scenario.charges;
        if !c.gaussians.is_empty() || c.density_file.is_some() {
            return Err(CliError::Usage("radial solves accept point charges only".into()));
        }
        if c.points.iter().any(|p| p.position != [0.0; 3]) {
            return Err(CliError::Usage("radial solves need every point charge at the origin".into()));
        }
        Ok(c.points.iter().map(|p| p.charge).sum())
    }
}

impl Scenario {
    fn validate(&self) -> Result<(), CliError> {
        if self.profile.name != "maxwellian" {
            return Err(CliError::Usage(format!(
                "unknown profile '{}'; available: maxwellian",
                self.profile.name
            )));
        }
        if let CBeta::Value(c) = self.profile.c_beta {
            if !(c > 0.0) {
                return Err(CliError::Usage(format!("c_beta must be positive, got {c}")));
            }
        }
        if self.sample.density_stride == 0 {
            return Err(CliError::Usage("density_stride must be at least 1".into()));
        }
        if let Some(r) = self.radial {
            if !(r.r_max > 0.0) || r.n < 8 {
                return Err(CliError::Usage(format!("radial needs r_max > 0 and n >= 8, got {}, {}", r.r_max, r.n)));
            }
        }
        Ok(self.solver.validate()?)
    }

    pub fn base_profile(&self) -> BoundaryProfile {
        make_maxwellian()
    }

    pub fn c_beta_for(&self, p: &BoundaryProfile, beta: f64) -> Result<f64, CliError> {
        Ok(match self.profile.c_beta {
            CBeta::Value(c) => c,
            CBeta::Auto(_) => calibrate_c_beta(p, beta, self.profile.r_probe, self.profile.margin)?,
        })
    }

    pub fn extension(&self) -> Result<ExtensionProfile, CliError> {
        let p = self.base_profile();
        let c = self.c_beta_for(&p, self.profile.beta)?;
        Ok(extend(&p, self.profile.beta, c)?)
    }
}

/// `L >= 20 / sqrt(sigma)`.
pub fn check_box_length(grid: Grid, sigma: f64) -> Result<(), CliError> {
    let min = MIN_BOX_SCREENING_LENGTHS / sigma.sqrt();
    if grid.length < min {
        return Err(CliError::Usage(format!(
            "box length {} is below {MIN_BOX_SCREENING_LENGTHS} screening lengths ({min:.4})",
            grid.length
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[profile]
name = "maxwellian"
beta = 0.25
"#;

    #[test]
    fn defaults_fill_in() {
        let s: Scenario = toml::from_str(MINIMAL).unwrap();
        assert_eq!(s.profile.c_beta, CBeta::default());
        assert_eq!(s.table.nodes, DEFAULT_TABLE_NODES);
        assert_eq!(s.output.dir, PathBuf::from("out"));
        assert!(s.grid.is_none());
        s.validate().unwrap();
    }

    #[test]
    fn c_beta_accepts_number_or_auto() {
        let s: Scenario = toml::from_str(&format!("{MINIMAL}c_beta = 0.02\n")).unwrap();
        assert_eq!(s.profile.c_beta, CBeta::Value(0.02));
        let s: Scenario = toml::from_str(&format!("{MINIMAL}c_beta = \"auto\"\n")).unwrap();
        assert_eq!(s.profile.c_beta, CBeta::Auto(AutoTag::Auto));
        assert!(toml::from_str::<Scenario>(&format!("{MINIMAL}c_beta = \"big\"\n")).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<Scenario>(&format!("{MINIMAL}colour = 1\n")).is_err());
    }

    #[test]
    fn box_length_rule() {
        let g = Grid::new(19.0, 16).unwrap();
        assert!(check_box_length(g, 1.0).is_err());
        assert!(check_box_length(g, 4.0).is_ok());
    }
}
