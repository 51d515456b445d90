use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;
use vlasov_steady::gtransform::{g_deriv, ConditionReport, GTransform};
use vlasov_steady::nonuniqueness::{compare, CompareConfig, ComparisonReport};
use vlasov_steady::reconstruct::{BoundaryDeviation, PhaseSpaceSampler, VlasovResidual, DENSITY_TOL};
use vlasov_steady::solver::{charge_neutrality, radial_charge_neutrality, radial_solve, solve_3d, SolverConfig};
use vlasov_steady::{build_gtransform, verify_conditions, Error, ExtensionProfile, Grid, ScalarField};

use crate::error::CliError;
use crate::scenario::{check_box_length, CBeta, LoadedScenario, Scenario, TableSpec};

#[derive(Debug, Serialize)]
pub struct ConditionSummary {
    pub name: &'static str,
    pub passed: bool,
}

/// Written into every JSON report.
#[derive(Debug, Serialize)]
pub struct Provenance<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub core_version: &'static str,
    pub command: &'a str,
    pub scenario: &'a Scenario,
    pub table: &'a TableSpec,
    pub solver: &'a SolverConfig,
    pub grid: Option<Grid>,
    pub sigma: Option<f64>,
    pub conditions: Vec<ConditionSummary>,
}

impl<'a> Provenance<'a> {
    fn new(command: &'a str, ls: &'a LoadedScenario) -> Self {
        Self {
            tool: "vlasov-steady",
            version: env!("CARGO_PKG_VERSION"),
            core_version: vlasov_steady::VERSION,
            command,
            scenario: &ls.scenario,
            table: &ls.scenario.table,
            solver: &ls.scenario.solver,
            grid: None,
            sigma: None,
            conditions: Vec::new(),
        }
    }

    fn with_conditions(mut self, report: &ConditionReport) -> Self {
        self.sigma = Some(report.sigma);
        self.conditions.extend(report.checks().iter().map(|c| ConditionSummary {
            name: c.name,
            passed: c.passed,
        }));
        self
    }
}

pub struct Context<'a> {
    pub command: &'a str,
    pub scenario: &'a LoadedScenario,
    pub out_dir: PathBuf,
}

impl Context<'_> {
    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        fs::create_dir_all(&self.out_dir)?;
        Ok(BufWriter::new(File::create(self.out_dir.join(name))?))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        info!("wrote {}", self.out_dir.join(name).display());
        Ok(())
    }

    fn write_field(&self, name: &str, f: &ScalarField) -> Result<(), CliError> {
        f.write_csv(self.create(name)?)?;
        Ok(())
    }

    fn provenance(&self) -> Provenance<'_> {
        Provenance::new(self.command, self.scenario)
    }
}

/// Extension, its table and the condition report.
struct Prepared {
    ext: ExtensionProfile,
    gt: GTransform,
    conditions: ConditionReport,
}

fn prepare(ctx: &Context<'_>) -> Result<Prepared, CliError> {
    let s = &ctx.scenario.scenario;
    let ext = s.extension()?;
    let gt = build_gtransform(&ext, s.table.r_min, s.table.r_max, s.table.nodes)?;
    let conditions = verify_conditions(&gt);
    Ok(Prepared { ext, gt, conditions })
}

#[derive(Serialize)]
struct GcheckOutput<'a> {
    provenance: Provenance<'a>,
    passed: bool,
    report: &'a ConditionReport,
}

fn write_conditions(ctx: &Context<'_>, p: &Prepared) -> Result<(), CliError> {
    ctx.write_json(
        "conditions.json",
        &GcheckOutput {
            provenance: ctx.provenance().with_conditions(&p.conditions),
            passed: p.conditions.all_passed(),
            report: &p.conditions,
        },
    )?;
    p.gt.write_table_csv(ctx.create("g_table.csv")?)?;
    Ok(())
}

fn failed_conditions(report: &ConditionReport) -> CliError {
    let names: Vec<String> = report
        .checks()
        .iter()
        .filter(|c| !c.passed)
        .map(|c| match c.worst_location {
            Some(r) => format!("{} (worst at r = {r:.4}: {})", c.name, c.detail),
            None => format!("{} ({})", c.name, c.detail),
        })
        .collect();
    CliError::Failed(format!("conditions failed: {}", names.join("; ")))
}

pub fn gcheck(ctx: &Context<'_>) -> Result<(), CliError> {
    let p = prepare(ctx)?;
    write_conditions(ctx, &p)?;
    if p.conditions.all_passed() {
        Ok(())
    } else {
        Err(failed_conditions(&p.conditions))
    }
}

/// Runs gcheck and stops on failure.
fn prepare_checked(ctx: &Context<'_>) -> Result<Prepared, CliError> {
    let p = prepare(ctx)?;
    write_conditions(ctx, &p)?;
    if !p.conditions.all_passed() {
        return Err(failed_conditions(&p.conditions));
    }
    Ok(p)
}

fn write_history(ctx: &Context<'_>, history: &[f64]) -> Result<(), CliError> {
    let mut w = ctx.create("residual_history.csv")?;
    writeln!(w, "iteration,update_norm")?;
    for (i, h) in history.iter().enumerate() {
        writeln!(w, "{},{:e}", i + 1, h)?;
    }
    w.flush()?;
    Ok(())
}

/// Records the residual history before passing a non-convergence error on.
fn on_nonconvergence<T>(ctx: &Context<'_>, r: Result<T, Error>) -> Result<T, CliError> {
    match r {
        Err(Error::NonConvergence {
            iterations,
            last,
            damping,
            history,
        }) => {
            write_history(ctx, &history)?;
            Err(CliError::Core(Error::NonConvergence {
                iterations,
                last,
                damping,
                history,
            }))
        }
        other => Ok(other?),
    }
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    provenance: Provenance<'a>,
    sigma: f64,
    theta: f64,
    total_variation: f64,
    iterations: usize,
    final_update_norm: f64,
    final_damping: f64,
    pde_residual: f64,
    min_q: f64,
    max_q: f64,
    cap_was_active: bool,
    cap_active_cells: usize,
    comparison_excess: f64,
    charge_neutrality_defect: f64,
    gauge_ok: bool,
    ringing: f64,
    history: &'a [f64],
}

pub fn solve(ctx: &Context<'_>) -> Result<(), CliError> {
    let p = prepare_checked(ctx)?;
    let grid = ctx.scenario.grid()?;
    check_box_length(grid, p.gt.sigma())?;
    let mu = ctx.scenario.charges(grid)?;
    let cfg = &ctx.scenario.scenario.solver;
    let sol = on_nonconvergence(ctx, solve_3d(cfg, &p.gt, &mu, grid))?;
    ctx.write_field("Q.csv", &sol.q)?;
    ctx.write_field("R.csv", &sol.r)?;
    let mut prov = ctx.provenance().with_conditions(&p.conditions);
    prov.grid = Some(grid);
    ctx.write_json(
        "solution.json",
        &SolveOutput {
            provenance: prov,
            sigma: sol.sigma,
            theta: sol.theta,
            total_variation: mu.total_variation(),
            iterations: sol.iterations,
            final_update_norm: sol.final_update_norm,
            final_damping: sol.final_damping,
            pde_residual: sol.pde_residual,
            min_q: sol.q.min(),
            max_q: sol.q.max(),
            cap_was_active: sol.cap_was_active,
            cap_active_cells: sol.cap_active_cells,
            comparison_excess: sol.comparison_excess,
            charge_neutrality_defect: charge_neutrality(&p.gt, &sol)?,
            gauge_ok: sol.aux.gauge_ok,
            ringing: sol.ringing,
            history: &sol.history,
        },
    )
}

#[derive(Serialize)]
struct RadialOutput<'a> {
    provenance: Provenance<'a>,
    sigma: f64,
    theta: f64,
    r_max: f64,
    n: usize,
    iterations: usize,
    final_update_norm: f64,
    pde_residual: f64,
    min_q: f64,
    max_q: f64,
    cap_was_active: bool,
    comparison_excess: f64,
    charge_neutrality_defect: f64,
    history: &'a [f64],
}

pub fn radial(ctx: &Context<'_>) -> Result<(), CliError> {
    let p = prepare_checked(ctx)?;
    let spec = ctx.scenario.radial()?;
    let theta = ctx.scenario.radial_theta()?;
    let cfg = &ctx.scenario.scenario.solver;
    let sol = on_nonconvergence(ctx, radial_solve(cfg, &p.gt, theta, spec.r_max, spec.n))?;
    let mut w = ctx.create("radial.csv")?;
    writeln!(w, "r,Q,R,S,H1,H")?;
    for i in 0..sol.q.nodes.len() {
        writeln!(
            w,
            "{},{:e},{:e},{:e},{:e},{:e}",
            sol.q.nodes[i], sol.q.values[i], sol.r.values[i], sol.s[i], sol.h1[i], sol.h[i]
        )?;
    }
    w.flush()?;
    let (min_q, max_q) = sol
        .q
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    ctx.write_json(
        "radial.json",
        &RadialOutput {
            provenance: ctx.provenance().with_conditions(&p.conditions),
            sigma: sol.sigma,
            theta,
            r_max: spec.r_max,
            n: spec.n,
            iterations: sol.iterations,
            final_update_norm: sol.final_update_norm,
            pde_residual: sol.pde_residual,
            min_q,
            max_q,
            cap_was_active: sol.cap_was_active,
            comparison_excess: sol.comparison_excess,
            charge_neutrality_defect: radial_charge_neutrality(&p.gt, &sol)?,
            history: &sol.history,
        },
    )
}

/// `Q` from a previous `solve` output, or a fresh solve.
fn obtain_q(ctx: &Context<'_>, p: &Prepared, q_file: Option<&Path>) -> Result<ScalarField, CliError> {
    let grid = ctx.scenario.grid()?;
    check_box_length(grid, p.gt.sigma())?;
    if let Some(path) = q_file {
        let f = File::open(path).map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))?;
        let q = ScalarField::read_csv(BufReader::new(f))?;
        if q.grid != grid {
            return Err(CliError::Usage(format!(
                "{} is on L={}, n={}; scenario grid is L={}, n={}",
                path.display(),
                q.grid.length,
                q.grid.n,
                grid.length,
                grid.n
            )));
        }
        return Ok(q);
    }
    let mu = ctx.scenario.charges(grid)?;
    let sol = on_nonconvergence(ctx, solve_3d(&ctx.scenario.scenario.solver, &p.gt, &mu, grid))?;
    ctx.write_field("Q.csv", &sol.q)?;
    Ok(sol.q)
}

#[derive(Serialize)]
struct SampleOutput<'a> {
    provenance: Provenance<'a>,
    boundary: Vec<BoundaryDeviation>,
    boundary_ok: bool,
    vlasov_analytic: VlasovResidual,
    vlasov_fd: VlasovResidual,
}

pub fn sample(ctx: &Context<'_>, q_file: Option<&Path>) -> Result<(), CliError> {
    let p = prepare_checked(ctx)?;
    let q = obtain_q(ctx, &p, q_file)?;
    let spec = &ctx.scenario.scenario.sample;
    let sampler = PhaseSpaceSampler::new(&q, &p.ext, &p.gt);

    let mut w = ctx.create("samples.csv")?;
    writeln!(w, "x,y,z,vx,vy,vz,Q,f")?;
    for &x in &spec.points {
        let qx = q.interpolate(x);
        for &v in &spec.velocities {
            let f = sampler.eval_f(x, v)?;
            writeln!(w, "{},{},{},{},{},{},{:e},{:e}", x[0], x[1], x[2], v[0], v[1], v[2], qx, f)?;
        }
    }
    w.flush()?;

    let boundary = spec
        .velocities
        .iter()
        .map(|&v| sampler.boundary_deviation(v))
        .collect::<Result<Vec<_>, _>>()?;
    let boundary_ok = boundary.iter().all(|b| b.deviation.is_finite() && b.deviation <= b.bound);
    let nodes: Vec<(usize, [f64; 3])> = (0..q.grid.len())
        .flat_map(|i| spec.velocities.iter().map(move |&v| (i, v)))
        .collect();
    let vlasov_analytic = sampler.vlasov_residual_analytic(&nodes)?;
    let vlasov_fd = sampler.vlasov_residual_fd(&nodes)?;
    let mut prov = ctx.provenance().with_conditions(&p.conditions);
    prov.grid = Some(q.grid);
    ctx.write_json(
        "sample.json",
        &SampleOutput {
            provenance: prov,
            boundary,
            boundary_ok,
            vlasov_analytic,
            vlasov_fd,
        },
    )?;
    if !boundary_ok {
        return Err(CliError::Failed("boundary deviation exceeds sup|F'| |Q|_2".into()));
    }
    if vlasov_analytic.max != 0.0 {
        return Err(CliError::Failed(format!(
            "analytic Vlasov residual is {:e}, expected 0",
            vlasov_analytic.max
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct DensityOutput<'a> {
    provenance: Provenance<'a>,
    nodes_checked: usize,
    max_deviation: f64,
    worst_q: f64,
    tolerance: f64,
    passed: bool,
}

pub fn density(ctx: &Context<'_>, q_file: Option<&Path>) -> Result<(), CliError> {
    let p = prepare_checked(ctx)?;
    let q = obtain_q(ctx, &p, q_file)?;
    let stride = ctx.scenario.scenario.sample.density_stride;
    let sampler = PhaseSpaceSampler::new(&q, &p.ext, &p.gt);
    let mut w = ctx.create("density.csv")?;
    writeln!(w, "index,Q,density,g_table,deviation")?;
    let (mut worst, mut worst_q, mut count) = (0.0_f64, 0.0, 0);
    for idx in (0..q.grid.len()).step_by(stride) {
        let qv = q.values[idx];
        let rho = sampler.density_at(qv)?;
        let g = p.gt.g(qv)?;
        let dev = (rho - g).abs();
        writeln!(w, "{idx},{qv:e},{rho:e},{g:e},{dev:e}")?;
        if dev > worst {
            worst = dev;
            worst_q = qv;
        }
        count += 1;
    }
    w.flush()?;
    let passed = worst <= DENSITY_TOL;
    let mut prov = ctx.provenance().with_conditions(&p.conditions);
    prov.grid = Some(q.grid);
    ctx.write_json(
        "density.json",
        &DensityOutput {
            provenance: prov,
            nodes_checked: count,
            max_deviation: worst,
            worst_q,
            tolerance: DENSITY_TOL,
            passed,
        },
    )?;
    if passed {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "velocity quadrature deviates from the g table by {worst:e} at Q = {worst_q}"
        )))
    }
}

#[derive(Serialize)]
struct CompareOutput<'a> {
    provenance: Provenance<'a>,
    conditions: (&'a ConditionReport, &'a ConditionReport),
    report: &'a ComparisonReport,
}

pub fn compare_cmd(ctx: &Context<'_>, beta1: Option<f64>, beta2: Option<f64>) -> Result<(), CliError> {
    let s = &ctx.scenario.scenario;
    let spec = s.compare.clone();
    let pick = |cli: Option<f64>, file: Option<f64>, name: &str| {
        cli.or(file)
            .ok_or_else(|| CliError::Usage(format!("{name} missing: pass --{name} or set it under [compare]")))
    };
    let beta1 = pick(beta1, spec.as_ref().and_then(|c| c.beta1), "beta1")?;
    let beta2 = pick(beta2, spec.as_ref().and_then(|c| c.beta2), "beta2")?;
    let grid = ctx.scenario.grid()?;
    let mu = ctx.scenario.charges(grid)?;
    if !(mu.theta() < 0.0) {
        return Err(CliError::Usage(format!(
            "compare needs a net attractive charge (theta < 0), got theta = {}. \
             For repulsive or neutral backgrounds Q stays nonnegative, the \
             negative-energy extension is never sampled, and every extension \
             gives the same state, so there is nothing to compare",
            mu.theta()
        )));
    }
    let mut cfg = CompareConfig::new(beta1, beta2, grid);
    cfg.margin = s.profile.margin;
    cfg.r_probe = s.profile.r_probe;
    cfg.table_r_min = s.table.r_min;
    cfg.table_r_max = s.table.r_max;
    cfg.table_nodes = s.table.nodes;
    cfg.solver = s.solver;
    cfg.c_beta = match spec.as_ref().and_then(|c| c.c_beta) {
        Some(c) => Some(c),
        None => match s.profile.c_beta {
            CBeta::Value(c) => Some(c),
            CBeta::Auto(_) => None,
        },
    };
    if let Some(c) = &spec {
        cfg.min_depth = c.min_depth;
        cfg.neg_eps = c.neg_eps;
    }
    let p = s.base_profile();
    // sigma only sees the nonnegative energies, which both extensions share.
    let sigma = -g_deriv(&ExtensionProfile::without_trapped_term(&p, beta1)?, 0.0)?;
    check_box_length(grid, sigma)?;
    let cmp = on_nonconvergence(ctx, compare(&p, &mu, &cfg))?;
    let c1 = verify_conditions(&cmp.tables.0);
    let c2 = verify_conditions(&cmp.tables.1);
    ctx.write_field("Q1.csv", &cmp.solutions.0.q)?;
    ctx.write_field("Q2.csv", &cmp.solutions.1.q)?;
    ctx.write_field("Q_diff.csv", &cmp.difference())?;
    let mut prov = ctx.provenance().with_conditions(&c1);
    prov.conditions.extend(c2.checks().iter().map(|c| ConditionSummary {
        name: c.name,
        passed: c.passed,
    }));
    prov.grid = Some(grid);
    ctx.write_json(
        "comparison.json",
        &CompareOutput {
            provenance: prov,
            conditions: (&c1, &c2),
            report: &cmp.report,
        },
    )?;
    if !(c1.all_passed() && c2.all_passed()) {
        return Err(CliError::Failed("conditions failed for one of the extensions".into()));
    }
    if cmp.report.degenerate || cmp.report.distinct {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "states not distinguished: |Q1 - Q2|_2 = {:e} vs threshold {:e}, f-difference bound {:e}",
            cmp.report.q_diff_l2, cmp.report.q_diff_threshold, cmp.report.f_diff_lower_bound
        )))
    }
}

#[derive(Serialize)]
struct Failure<'a> {
    command: &'a str,
    exit_code: i32,
    kind: &'a str,
    message: String,
}

/// Best effort: the error itself is what the caller reports.
pub fn write_failure(ctx: &Context<'_>, err: &CliError) {
    let f = Failure {
        command: ctx.command,
        exit_code: err.exit_kind().code(),
        kind: err.kind_tag(),
        message: err.to_string(),
    };
    if let Err(e) = ctx.write_json("failure.json", &f) {
        warn!("could not write failure report: {e}");
    }
}
