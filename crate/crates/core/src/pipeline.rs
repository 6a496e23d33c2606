//! End-to-end runs: integrate, sample diagnostics and tracers, evaluate
//! criteria and write artifacts.
//!
//! Layout of an output directory:
//!
//! ```text
//! manifest.json          config echo, run id, seed, flags, file checksums
//! report.json            criteria, monitors, verdicts, solver and tracer summaries
//! series.csv             per-sample sup norms and conserved quantities
//! tracers/tracer_NNNN.csv
//! snapshots/<role>_sNNNNNN.{bin,json}
//! ```
//!
//! Nothing time- or host-dependent is written, so identical configs give
//! identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::criteria::{
    bkm_integral, criterion_functional, type_one_monitor, CriterionKind, CriterionReport, Weight,
    BOUSSINESQ_TYPE_I_THRESHOLD, DEFAULT_WINDOW_FRACTION, EULER_TYPE_I_THRESHOLD,
};
use crate::diagnostics::{diag_field, DEFAULT_EPS_FACTOR};
use crate::engine::{solve_pressure, Region};
use crate::error::{Error, Result};
use crate::field::{Field, ScalarField, VectorField};
use crate::io::{fmt_f64, sha256_file, sha256_hex, to_json, write_snapshot};
use crate::solver::{initial_condition, theta_l2, FlowState, Integrator, System, UNDER_RESOLVED_THRESHOLD};
use crate::tracers::{
    advect_tracers, dynamical_residuals, growth_bound_check, sample_tracers, summarize_bounds, summarize_residuals,
    tracer_csv, BoundMargins, BoundSummary, BoundVariant, ResidualKind, ResidualSummary, TracerHistory,
};

/// Sup norms over one region at one sample.
#[derive(Clone, Debug, Default, Serialize)]
pub struct RegionSample {
    pub align_minus: f64,
    pub stretch_plus: f64,
    pub pressure_along_xi: f64,
    pub vector: f64,
    pub stretched_vector: f64,
    pub velocity: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FlowSample {
    pub step: usize,
    pub time: f64,
    pub energy: f64,
    pub theta_l2: Option<f64>,
    pub max_divergence: f64,
    pub tail_fraction: f64,
    /// `max |u(t) - u(0)|` over the grid.
    pub velocity_deviation: f64,
    pub regions: Vec<RegionSample>,
}

struct NamedRegion {
    name: String,
    region: Region,
    indices: Vec<usize>,
}

fn region_max(values: &[f64], indices: &[usize]) -> f64 {
    indices.iter().fold(0.0_f64, |m, &i| m.max(values[i]))
}

fn sample_flow(
    state: &FlowState,
    u0: &VectorField,
    regions: &[NamedRegion],
    positions: &[[f64; 3]],
    history: &mut TracerHistory,
) -> Result<FlowSample> {
    let u = state.velocity();
    let p = solve_pressure(u, state.theta())?;
    let diag = diag_field(u, &p, state.theta(), DEFAULT_EPS_FACTOR)?;
    let align_minus = diag.align_minus();
    let stretch_plus = diag.stretch_plus();
    let pxi = diag.pressure_along_xi();
    let vector = diag.vector_magnitude();
    let stretched = diag.stretched_magnitude();
    let g = *state.grid();
    let speed: Vec<f64> = (0..g.npoints())
        .map(|i| {
            let v = u.at(i);
            (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
        })
        .collect();
    let deviation = (0..g.npoints())
        .map(|i| {
            let (a, b) = (u.at(i), u0.at(i));
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
        })
        .fold(0.0_f64, f64::max);
    let field_max = vector.iter().fold(0.0_f64, |m, &v| m.max(v));
    history.push(sample_tracers(state, &p, positions)?, field_max);
    Ok(FlowSample {
        step: state.step(),
        time: state.time(),
        energy: state.kinetic_energy(),
        theta_l2: state.theta().map(theta_l2),
        max_divergence: state.max_divergence()?,
        tail_fraction: state.tail_fraction(),
        velocity_deviation: deviation,
        regions: regions
            .iter()
            .map(|r| RegionSample {
                align_minus: region_max(&align_minus, &r.indices),
                stretch_plus: region_max(&stretch_plus, &r.indices),
                pressure_along_xi: region_max(&pxi, &r.indices),
                vector: region_max(&vector, &r.indices),
                stretched_vector: region_max(&stretched, &r.indices),
                velocity: region_max(&speed, &r.indices),
            })
            .collect(),
    })
}

fn write_state_snapshot(dir: &Path, state: &FlowState, files: &mut Vec<PathBuf>) -> Result<()> {
    let step = state.step();
    let t = state.time();
    files.extend(write_snapshot(
        dir,
        &format!("velocity_s{step:06}"),
        "velocity",
        t,
        state.velocity().data(),
    )?);
    if let Some(th) = state.theta() {
        files.extend(write_snapshot(dir, &format!("theta_s{step:06}"), "theta", t, th.data())?);
    }
    Ok(())
}

fn write_diag_snapshot(dir: &Path, state: &FlowState, files: &mut Vec<PathBuf>) -> Result<()> {
    let g = *state.grid();
    let p = solve_pressure(state.velocity(), state.theta())?;
    let diag = diag_field(state.velocity(), &p, state.theta(), DEFAULT_EPS_FACTOR)?;
    let step = state.step();
    for (role, values) in [
        ("alpha", diag.alpha()),
        ("rho", diag.rho()),
        ("align", diag.align()),
        ("stretch_balance", diag.stretch_balance()),
    ] {
        let f = ScalarField::new(g, values)?;
        files.extend(write_snapshot(dir, &format!("{role}_s{step:06}"), role, state.time(), f.data())?);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// report

#[derive(Clone, Debug, Serialize)]
pub struct RegionReport {
    pub name: String,
    pub region: Region,
}

#[derive(Clone, Debug, Serialize)]
pub struct BkmReport {
    pub region_name: String,
    pub weight: Weight,
    /// `int w ||v||` over the run.
    pub value: f64,
}

/// The integrated growth estimate `int w ||v|| <= (||v0|| + ||M0 v0|| t_end) int w exp(int int ||[zeta.P xi]_-||)`
/// evaluated on the sampled global sup norms.
#[derive(Clone, Debug, Serialize)]
pub struct IntegratedBoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolverReport {
    pub steps: usize,
    pub energy_initial: f64,
    pub energy_final: f64,
    pub energy_max_relative_drift: f64,
    pub theta_l2_initial: Option<f64>,
    pub theta_l2_max_relative_drift: Option<f64>,
    pub max_divergence: f64,
    pub max_tail_fraction: f64,
    pub under_resolved: bool,
    pub max_velocity_deviation: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TracerReport {
    pub count: usize,
    pub accuracy: usize,
    pub mask_factor: f64,
    pub field_max: f64,
    pub residuals: Vec<ResidualSummary>,
    pub bounds: Vec<BoundSummary>,
    pub bound_violations: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub run_id: String,
    pub system: System,
    pub initial: String,
    pub seed: u64,
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    pub candidate_t: f64,
    pub type_one_threshold: f64,
    pub weight: Weight,
    pub regions: Vec<RegionReport>,
    pub criteria: Vec<CriterionReport>,
    pub bkm: Vec<BkmReport>,
    /// `int ||u||_{L^inf(region)}` for the local regions.
    pub velocity_integrals: Vec<BkmReport>,
    pub integrated_bound: IntegratedBoundReport,
    pub solver: SolverReport,
    pub tracers: Option<TracerReport>,
    pub verification_passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub run_id: String,
    pub seed: u64,
    pub config: String,
    pub under_resolved: bool,
    pub under_resolved_threshold: f64,
    pub max_tail_fraction: f64,
    pub files: Vec<FileEntry>,
}

pub struct RunOutcome {
    pub dir: PathBuf,
    pub report: RunReport,
    pub manifest: Manifest,
    pub samples: Vec<FlowSample>,
    pub history: TracerHistory,
}

/// Short content hash of the canonical config.
pub fn run_id(config: &RunConfig) -> String {
    sha256_hex(config.canonical().as_bytes())[..16].to_string()
}

fn criteria_for_region(
    system: System,
    name: &str,
    region: &Region,
    times: &[f64],
    series: &[&RegionSample],
    candidate_t: f64,
) -> Result<Vec<CriterionReport>> {
    let (weight, threshold) = match system {
        System::Euler3d => (Weight::None, EULER_TYPE_I_THRESHOLD),
        System::Boussinesq2d => (Weight::Linear { candidate_t }, BOUSSINESQ_TYPE_I_THRESHOLD),
    };
    // the monitor needs t < T; the final sample is dropped when T = t_end
    let before = times.iter().take_while(|&&t| t < candidate_t).count();
    let mut out = Vec::new();
    let mut kinds = vec![CriterionKind::AlignMinus, CriterionKind::StretchPlus];
    if system == System::Euler3d {
        kinds.push(CriterionKind::PressureAlongXi);
    }
    for kind in kinds {
        let m: Vec<f64> = series
            .iter()
            .map(|s| match kind {
                CriterionKind::AlignMinus => s.align_minus,
                CriterionKind::StretchPlus => s.stretch_plus,
                CriterionKind::PressureAlongXi => 2.0 * s.pressure_along_xi,
            })
            .collect();
        let c = criterion_functional(times, &m, weight)?;
        let weaker = kind == CriterionKind::PressureAlongXi;
        let monitor = if weaker || before == 0 {
            None
        } else {
            Some(type_one_monitor(
                &times[..before],
                &m[..before],
                candidate_t,
                threshold,
                DEFAULT_WINDOW_FRACTION,
            )?)
        };
        out.push(CriterionReport {
            kind,
            region_name: name.to_string(),
            region: region.clone(),
            value: c.value,
            finite: c.finite,
            final_double_integral: c.double.last().copied().unwrap_or(0.0),
            weaker,
            monitor,
        });
    }
    Ok(out)
}

fn relative_drift(values: impl Iterator<Item = f64>, reference: f64) -> f64 {
    values.map(|v| ((v - reference) / reference).abs()).fold(0.0, f64::max)
}

fn series_csv(samples: &[FlowSample], regions: &[NamedRegion]) -> String {
    let mut out = String::from("step,time,energy,theta_l2,max_divergence,tail_fraction,velocity_deviation");
    for r in regions {
        for q in ["align_minus", "stretch_plus", "pressure_along_xi", "vector", "stretched_vector", "velocity"] {
            let _ = write!(out, ",{}_{q}", r.name);
        }
    }
    out.push('\n');
    for s in samples {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{}",
            s.step,
            fmt_f64(s.time),
            fmt_f64(s.energy),
            s.theta_l2.map(fmt_f64).unwrap_or_default(),
            fmt_f64(s.max_divergence),
            fmt_f64(s.tail_fraction),
            fmt_f64(s.velocity_deviation)
        );
        for r in &s.regions {
            for v in [
                r.align_minus,
                r.stretch_plus,
                r.pressure_along_xi,
                r.vector,
                r.stretched_vector,
                r.velocity,
            ] {
                let _ = write!(out, ",{}", fmt_f64(v));
            }
        }
        out.push('\n');
    }
    out
}

/// Runs `config`, writing artifacts under `out_dir`.
pub fn execute(config: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    config.validate()?;
    let grid = config.grid()?;
    let system = config.system()?;
    let initial = initial_condition(&config.run.initial, &grid, config.run.seed)?;
    if initial.system() != system {
        return Err(Error::Config(format!(
            "initial condition `{}` on a {}D grid gives {}, not {}",
            config.run.initial,
            grid.dim,
            initial.system().name(),
            system.name()
        )));
    }
    let mut integrator = Integrator::new(&initial, config.stepper()?)?;
    let mut regions = vec![NamedRegion {
        name: "global".into(),
        region: Region::Global,
        indices: (0..grid.npoints()).collect(),
    }];
    for (name, region) in config.regions()? {
        let indices = region.indices(&grid)?;
        regions.push(NamedRegion { name, region, indices });
    }
    let starts = config.tracer_starts()?;
    let mut positions = starts.clone();
    let mut history = TracerHistory::new(system, &starts);

    fs::create_dir_all(out_dir)?;
    let snap_dir = out_dir.join("snapshots");
    let mut files: Vec<PathBuf> = Vec::new();

    let steps = config.steps();
    let every = config.run.snapshot_every;
    let state0 = integrator.state();
    let u0 = state0.velocity().clone();
    let mut samples = vec![sample_flow(&state0, &u0, &regions, &positions, &mut history)?];
    write_state_snapshot(&snap_dir, &state0, &mut files)?;
    for step in 1..=steps {
        let stages = integrator.step()?;
        advect_tracers(&grid, &mut positions, &stages)?;
        let state = integrator.state();
        samples.push(sample_flow(&state, &u0, &regions, &positions, &mut history)?);
        if step == steps || (every > 0 && step % every == 0) {
            write_state_snapshot(&snap_dir, &state, &mut files)?;
        }
    }
    write_diag_snapshot(&snap_dir, &integrator.state(), &mut files)?;

    let times: Vec<f64> = samples.iter().map(|s| s.time).collect();
    let candidate_t = config.candidate_t();
    let mut criteria = Vec::new();
    let mut bkm = Vec::new();
    let mut velocity_integrals = Vec::new();
    let weight = match system {
        System::Euler3d => Weight::None,
        System::Boussinesq2d => Weight::Linear { candidate_t },
    };
    for (ri, r) in regions.iter().enumerate() {
        let series: Vec<&RegionSample> = samples.iter().map(|s| &s.regions[ri]).collect();
        criteria.extend(criteria_for_region(system, &r.name, &r.region, &times, &series, candidate_t)?);
        let vec_norm: Vec<f64> = series.iter().map(|s| s.vector).collect();
        bkm.push(BkmReport {
            region_name: r.name.clone(),
            weight,
            value: bkm_integral(&times, &vec_norm, weight)?,
        });
        if ri > 0 {
            let speed: Vec<f64> = series.iter().map(|s| s.velocity).collect();
            velocity_integrals.push(BkmReport {
                region_name: r.name.clone(),
                weight: Weight::None,
                value: bkm_integral(&times, &speed, Weight::None)?,
            });
        }
    }
    let integrated_bound = {
        let g0 = &samples[0].regions[0];
        let am: Vec<f64> = samples.iter().map(|s| s.regions[0].align_minus).collect();
        let c = criterion_functional(&times, &am, weight)?;
        let span = times.last().copied().unwrap_or(0.0) - times[0];
        let rhs = (g0.vector + g0.stretched_vector * span) * c.value;
        let lhs = bkm[0].value;
        IntegratedBoundReport {
            lhs,
            rhs,
            holds: lhs <= rhs * (1.0 + 1e-6) + 1e-12,
        }
    };

    let e0 = samples[0].energy;
    let th0 = samples[0].theta_l2;
    let max_tail = samples.iter().map(|s| s.tail_fraction).fold(0.0, f64::max);
    let solver = SolverReport {
        steps,
        energy_initial: e0,
        energy_final: samples.last().map(|s| s.energy).unwrap_or(e0),
        energy_max_relative_drift: if e0 > 0.0 {
            relative_drift(samples.iter().map(|s| s.energy), e0)
        } else {
            0.0
        },
        theta_l2_initial: th0,
        theta_l2_max_relative_drift: th0
            .filter(|t| *t > 0.0)
            .map(|t0| relative_drift(samples.iter().filter_map(|s| s.theta_l2), t0)),
        max_divergence: samples.iter().map(|s| s.max_divergence).fold(0.0, f64::max),
        max_tail_fraction: max_tail,
        under_resolved: max_tail > UNDER_RESOLVED_THRESHOLD,
        max_velocity_deviation: samples.iter().map(|s| s.velocity_deviation).fold(0.0, f64::max),
    };

    let tracers = if starts.is_empty() {
        None
    } else {
        let opts = config.residual_options();
        let tracer_dir = out_dir.join("tracers");
        fs::create_dir_all(&tracer_dir)?;
        let variants = BoundVariant::for_system(system);
        let mut residuals = Vec::new();
        let mut bounds: Vec<Vec<BoundMargins>> = Vec::new();
        for record in &history.records {
            let res = dynamical_residuals(record, &history.field_max, &opts)?;
            let b = variants
                .iter()
                .map(|v| growth_bound_check(record, &history.field_max, *v, system))
                .collect::<Result<Vec<_>>>()?;
            let path = tracer_dir.join(format!("tracer_{:04}.csv", record.label));
            fs::write(&path, tracer_csv(record, &history.field_max, &res, &b))?;
            files.push(path);
            residuals.push(res);
            bounds.push(b);
        }
        let field_max = history.overall_field_max();
        let summaries = summarize_bounds(&bounds, field_max);
        Some(TracerReport {
            count: starts.len(),
            accuracy: opts.accuracy,
            mask_factor: opts.mask_factor,
            field_max,
            residuals: summarize_residuals(&residuals),
            bound_violations: summaries.iter().filter(|s| s.asserted).map(|s| s.violations).sum(),
            bounds: summaries,
        })
    };

    let residuals_finite = tracers
        .as_ref()
        .map(|t| t.residuals.iter().all(|r| r.max_abs.is_finite()))
        .unwrap_or(true);
    let verification_passed = residuals_finite
        && tracers.as_ref().map(|t| t.bound_violations == 0).unwrap_or(true)
        && integrated_bound.holds;

    let id = run_id(config);
    let report = RunReport {
        run_id: id.clone(),
        system,
        initial: config.run.initial.clone(),
        seed: config.run.seed,
        n: grid.n,
        dt: config.run.dt,
        t_end: config.run.t_end,
        candidate_t,
        type_one_threshold: match system {
            System::Euler3d => EULER_TYPE_I_THRESHOLD,
            System::Boussinesq2d => BOUSSINESQ_TYPE_I_THRESHOLD,
        },
        weight,
        regions: regions
            .iter()
            .map(|r| RegionReport {
                name: r.name.clone(),
                region: r.region.clone(),
            })
            .collect(),
        criteria,
        bkm,
        velocity_integrals,
        integrated_bound,
        solver,
        tracers,
        verification_passed,
    };

    let series_path = out_dir.join("series.csv");
    fs::write(&series_path, series_csv(&samples, &regions))?;
    files.push(series_path);
    let report_path = out_dir.join("report.json");
    fs::write(&report_path, to_json(&report)?)?;
    files.push(report_path);

    let mut entries = Vec::new();
    for f in &files {
        entries.push(FileEntry {
            path: f
                .strip_prefix(out_dir)
                .unwrap_or(f)
                .to_string_lossy()
                .replace('\\', "/"),
            bytes: fs::metadata(f)?.len(),
            sha256: sha256_file(f)?,
        });
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        run_id: id,
        seed: config.run.seed,
        config: config.canonical(),
        under_resolved: report.solver.under_resolved,
        under_resolved_threshold: UNDER_RESOLVED_THRESHOLD,
        max_tail_fraction: report.solver.max_tail_fraction,
        files: entries,
    };
    fs::write(out_dir.join("manifest.json"), to_json(&manifest)?)?;

    Ok(RunOutcome {
        dir: out_dir.to_path_buf(),
        report,
        manifest,
        samples,
        history,
    })
}

/// Residual kinds checked for each system.
pub fn residual_kinds(system: System) -> &'static [ResidualKind] {
    match system {
        System::Euler3d => &[
            ResidualKind::MagnitudeRate,
            ResidualKind::StretchedMagnitudeRate,
            ResidualKind::LogMagnitudeAcceleration,
            ResidualKind::VectorAcceleration,
        ],
        System::Boussinesq2d => &[
            ResidualKind::MagnitudeRate,
            ResidualKind::StretchedMagnitudeRate,
            ResidualKind::LogMagnitudeAcceleration,
            ResidualKind::VectorRate,
            ResidualKind::VectorAcceleration,
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(extra: &str) -> RunConfig {
        RunConfig::parse(&format!(
            "[run]\nsystem = \"boussinesq2d\"\ninitial = \"boussinesq-taylor-green\"\nn = 16\ndt = 0.05\nt_end = 0.5\ncandidate_t = 1.0\nsnapshot_every = 5\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn writes_all_artifacts_with_checksums() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config("[tracers]\ncount = 4\nseed = 3\n[[regions]]\nname = \"ball\"\ncenter = [3.0, 3.0]\nradius = 1.5\n");
        let out = execute(&cfg, dir.path()).unwrap();
        assert_eq!(out.samples.len(), 11);
        assert_eq!(out.report.criteria.len(), 4);
        assert!(out.report.criteria.iter().all(|c| c.monitor.is_some()));
        assert_eq!(out.report.velocity_integrals.len(), 1);
        for f in &out.manifest.files {
            let p = dir.path().join(&f.path);
            assert_eq!(sha256_file(&p).unwrap(), f.sha256, "{}", f.path);
        }
        assert!(out.manifest.files.iter().any(|f| f.path == "tracers/tracer_0003.csv"));
        assert!(out.manifest.files.iter().any(|f| f.path == "snapshots/theta_s000005.json"));
        let t = out.report.tracers.as_ref().unwrap();
        assert!(t.residuals.iter().all(|r| r.max_abs.is_finite()));
        assert!(dir.path().join("manifest.json").exists());
    }

    #[test]
    fn mismatched_initial_condition_is_a_config_error() {
        let mut cfg = config("");
        cfg.run.initial = "taylor-green-3d".into();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(execute(&cfg, dir.path()), Err(Error::Config(_)) | Err(Error::UnsupportedDimension { .. }) | Err(Error::InvalidGrid(_))));
    }
}
