//! `kinelab`: runs, identity suites, Gronwall checks and report rendering.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration error.
//! `KINELAB_THREADS` sets the worker thread count.

mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use kinelab_core::config::{GronwallSpec, RunConfig};
use kinelab_core::gronwall::{
    domination_batch, gronwall_bound, gronwall_oracle, saturation_study, BoundSeries, DominationBatch,
    GronwallProblem, Profile, SaturationStudy, Variant,
};
use kinelab_core::identity::{describe_sample, run_batch, BatchReport, SampleOptions};
use kinelab_core::io::to_json;
use kinelab_core::Error;

const EXIT_OK: u8 = 0;
const EXIT_VERIFICATION: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "kinelab", version, about = "Kinematic blow-up diagnostics for Euler and Boussinesq flows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a configured flow and write manifest, snapshots, tracer CSVs and report.
    Run {
        config: PathBuf,
        /// Overrides `[run] output`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check the pointwise identities and inequalities on random samples.
    CheckIdentities {
        #[arg(long, default_value_t = 100_000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        dim: usize,
        /// Make every k-th sample degenerate (v = 0).
        #[arg(long)]
        degenerate_every: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        magnitude: f64,
        /// Print the full JSON report.
        #[arg(long)]
        json: bool,
    },
    /// Evaluate a Gronwall problem or random batch from a spec file.
    Gronwall {
        spec: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Re-render a run's report.json.
    Report {
        report: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
}

enum Failure {
    Verification(String),
    Config(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Verification(e.to_string())
        }
    }
}

type Outcome = Result<bool, Failure>;

fn configure_threads() -> Result<(), Failure> {
    if let Ok(v) = std::env::var("KINELAB_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Failure::Config(format!("KINELAB_THREADS must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(Failure::Config("KINELAB_THREADS must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    Ok(())
}

fn cmd_run(config: PathBuf, output: Option<PathBuf>) -> Outcome {
    let cfg = RunConfig::load(&config)?;
    let dir = output.unwrap_or_else(|| cfg.output_dir());
    let out = kinelab_core::execute(&cfg, &dir)?;
    let r = &out.report;
    println!("run {} -> {}", r.run_id, out.dir.display());
    println!(
        "{} {} N={} dt={} t_end={} candidate T={}",
        r.system.name(),
        r.initial,
        r.n,
        r.dt,
        r.t_end,
        r.candidate_t
    );
    if r.solver.under_resolved {
        println!(
            "warning: under-resolved (spectral tail fraction {:.3e})",
            r.solver.max_tail_fraction
        );
    }
    print!("{}", render::table(&serde_json::to_value(r).map_err(Error::from)?));
    if r.verification_passed {
        Ok(true)
    } else {
        println!("verification FAILED");
        Ok(false)
    }
}

fn cmd_check_identities(
    count: usize,
    seed: u64,
    dim: usize,
    degenerate_every: Option<usize>,
    magnitude: f64,
    json: bool,
) -> Outcome {
    if count == 0 {
        return Err(Failure::Config("count must be at least 1".into()));
    }
    if dim != 2 && dim != 3 {
        return Err(Failure::Config(format!("dim must be 2 or 3, got {dim}")));
    }
    if degenerate_every == Some(0) {
        return Err(Failure::Config("degenerate-every must be at least 1".into()));
    }
    if !(magnitude.is_finite() && magnitude > 0.0) {
        return Err(Failure::Config(format!("magnitude must be positive, got {magnitude}")));
    }
    let opts = SampleOptions {
        magnitude,
        degenerate_every,
    };
    let report: BatchReport = run_batch(dim, count, seed, &opts);
    if json {
        println!("{}", to_json(&report)?);
    } else {
        println!(
            "identity suite: dim={} count={} seed={} tolerance={:e} inequality tolerance={:e}",
            report.dim, report.count, report.seed, report.tolerance, report.inequality_tolerance
        );
        for s in &report.identities {
            println!(
                "  {:<26} max residual {:>10.3e}  evaluated {:>7}  skipped {:>7}  {}",
                s.identity.name(),
                s.max_residual,
                s.evaluated,
                s.skipped,
                if s.passed { "pass" } else { "FAIL" }
            );
        }
        for s in &report.inequalities {
            println!(
                "  {:<26} max lhs/rhs  {:>10.6}  evaluated {:>7}  violations {:>4}  {}",
                s.inequality.name(),
                s.max_ratio,
                s.evaluated,
                s.violations,
                if s.violations == 0 { "pass" } else { "FAIL" }
            );
        }
        for s in &report.skipped_samples {
            println!("  skipped {:>7}: {}", s.count, s.description);
        }
        println!("{}", if report.passed { "PASS" } else { "FAIL" });
    }
    if !report.passed {
        let worst = report
            .identities
            .iter()
            .filter(|s| !s.passed)
            .filter_map(|s| s.worst_sample)
            .chain(report.inequalities.iter().filter(|s| s.violations > 0).filter_map(|s| s.worst_sample))
            .next();
        if let Some(index) = worst {
            eprintln!("worst sample #{index}: {}", describe_sample(dim, seed, index, &opts));
        }
    }
    Ok(report.passed)
}

#[derive(Serialize)]
struct ProblemReport {
    variant: Variant,
    samples: usize,
    refine: usize,
    bound: BoundSeries,
    oracle: Vec<f64>,
    /// Max `|oracle - bound| / bound`.
    max_relative_gap: f64,
    saturation: Option<SaturationStudy>,
    saturation_slope_ok: Option<bool>,
}

#[derive(Serialize)]
struct GronwallReport {
    problem: Option<ProblemReport>,
    batch: Option<DominationBatch>,
    passed: bool,
}

/// Required decay of the bound/oracle gap under refinement.
const SATURATION_SLOPE: f64 = 2.0;

fn cmd_gronwall(spec: PathBuf, json: bool) -> Outcome {
    let spec = GronwallSpec::load(&spec)?;
    let mut passed = true;
    let problem = match &spec.problem {
        None => None,
        Some(p) => {
            let variant = Variant::parse(&p.variant)?;
            let alpha = Profile::parse(&p.alpha)?;
            let beta = Profile::parse(&p.beta)?;
            let base = GronwallProblem::from_profiles(variant, p.a, p.b, p.samples, &alpha, &beta)?;
            let y = match &p.y {
                Some(y) => Some(Profile::parse(y)?.sample(&base.times)?),
                None => None,
            };
            let problem = GronwallProblem::new(variant, base.times, base.alpha, base.beta, y)?;
            let bound = gronwall_bound(&problem)?;
            let oracle = gronwall_oracle(&problem, p.refine)?;
            let max_relative_gap = oracle
                .iter()
                .zip(&bound.bound)
                .map(|(o, b)| if *b != 0.0 { ((o - b) / b).abs() } else { o.abs() })
                .fold(0.0, f64::max);
            let saturation = if p.levels > 0 {
                Some(saturation_study(variant, p.a, p.b, &alpha, &beta, p.samples, p.levels)?)
            } else {
                None
            };
            // only the single variant with constant alpha is an equality case
            let equality_case = variant == Variant::Single && matches!(alpha, Profile::Constant(_));
            let saturation_slope_ok = saturation
                .as_ref()
                .filter(|_| equality_case)
                .map(|s| s.slope >= SATURATION_SLOPE);
            if let Some(c) = &bound.y_check {
                passed &= c.dominated;
            }
            passed &= saturation_slope_ok.unwrap_or(true);
            Some(ProblemReport {
                variant,
                samples: p.samples,
                refine: p.refine,
                bound,
                oracle,
                max_relative_gap,
                saturation,
                saturation_slope_ok,
            })
        }
    };
    let batch = match &spec.batch {
        None => None,
        Some(b) => {
            let r = domination_batch(b.count, b.seed, Variant::parse(&b.variant)?, b.samples, b.refine)?;
            passed &= r.passed();
            Some(r)
        }
    };
    let report = GronwallReport { problem, batch, passed };
    if json {
        println!("{}", to_json(&report)?);
    } else {
        if let Some(p) = &report.problem {
            println!(
                "problem: {:?} variant, {} samples, oracle refine {}",
                p.variant, p.samples, p.refine
            );
            println!(
                "  final bound {:.10e}  oracle {:.10e}  max relative gap {:.3e}",
                p.bound.bound.last().copied().unwrap_or(f64::NAN),
                p.oracle.last().copied().unwrap_or(f64::NAN),
                p.max_relative_gap
            );
            if let Some(c) = &p.bound.y_check {
                println!(
                    "  y: hypothesis {} (excess {:.3e}), bound excess {:.3e}, {}",
                    if c.hypothesis_holds { "holds" } else { "violated" },
                    c.hypothesis_excess,
                    c.bound_excess,
                    if c.dominated { "dominated" } else { "NOT dominated" }
                );
            }
            if let Some(s) = &p.saturation {
                for (h, g) in s.steps.iter().zip(&s.gaps) {
                    println!("  h = {h:.4e}  gap {g:.4e}");
                }
                match p.saturation_slope_ok {
                    Some(_) => println!("  saturation slope {:.4} (need >= {SATURATION_SLOPE})", s.slope),
                    None => println!("  saturation slope {:.4} (not an equality case, reported only)", s.slope),
                }
            }
        }
        if let Some(b) = &report.batch {
            println!(
                "batch: {}/{} dominated ({:?}, seed {}, worst excess {:.3e} at #{})",
                b.dominated, b.count, b.variant, b.seed, b.worst_excess, b.worst_instance
            );
        }
        println!("{}", if report.passed { "PASS" } else { "FAIL" });
    }
    Ok(report.passed)
}

fn cmd_report(path: PathBuf, format: Format) -> Outcome {
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    if value.get("criteria").is_none() {
        return Err(Failure::Config(format!("{} is not a run report", path.display())));
    }
    match format {
        Format::Table => print!("{}", render::table(&value)),
        Format::Csv => print!("{}", render::csv(&value)),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = configure_threads().and_then(|_| match cli.command {
        Command::Run { config, output } => cmd_run(config, output),
        Command::CheckIdentities {
            count,
            seed,
            dim,
            degenerate_every,
            magnitude,
            json,
        } => cmd_check_identities(count, seed, dim, degenerate_every, magnitude, json),
        Command::Gronwall { spec, json } => cmd_gronwall(spec, json),
        Command::Report { report, format } => cmd_report(report, format),
    });
    match outcome {
        Ok(true) => ExitCode::from(EXIT_OK),
        Ok(false) => ExitCode::from(EXIT_VERIFICATION),
        Err(Failure::Verification(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_VERIFICATION)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
