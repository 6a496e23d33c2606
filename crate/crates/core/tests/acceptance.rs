//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::path::Path;
use std::time::Instant;

use kinelab_core::criteria::{
    criterion_functional, type_one_monitor, Weight, BOUSSINESQ_TYPE_I_THRESHOLD, EULER_TYPE_I_THRESHOLD,
};
use kinelab_core::engine::{gradient, hessian, pressure_source, solve_pressure};
use kinelab_core::gronwall::{domination_batch, saturation_study, Profile, Variant};
use kinelab_core::identity::{run_batch, BatchReport, SampleOptions};
use kinelab_core::pipeline::residual_kinds;
use kinelab_core::solver::{initial_condition, theta_l2};
use kinelab_core::tracers::BoundVariant;
use kinelab_core::{
    execute, GridSpec, Integrator, RunConfig, RunReport, ScalarField, StepperConfig, System, VectorField,
};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn run(config: &str, dir: &Path) -> RunReport {
    let cfg = RunConfig::parse(config).expect("config");
    execute(&cfg, dir).expect("run").report
}

fn flow_config(system: &str, initial: &str, dt: f64, tracers: usize) -> String {
    format!(
        "[run]\nsystem = \"{system}\"\ninitial = \"{initial}\"\nn = 64\ndt = {dt}\nt_end = 0.48\n\
         candidate_t = 1.0\nsnapshot_every = 0\n\n[tracers]\ncount = {tracers}\nseed = 11\n"
    )
}

/// Resolved N = 64 runs at dt and dt/2, shared by the convergence and bound
/// criteria.
struct TracerRuns {
    euler: [RunReport; 2],
    boussinesq: [RunReport; 2],
}

const COARSE_DT: f64 = 0.04;
const TRACERS: usize = 100;

fn tracer_runs() -> TracerRuns {
    let dir = tempfile::tempdir().unwrap();
    let go = |system: &str, initial: &str, dt: f64| {
        run(
            &flow_config(system, initial, dt, TRACERS),
            &dir.path().join(format!("{system}-{dt}")),
        )
    };
    TracerRuns {
        euler: [
            go("euler3d", "taylor-green-3d", COARSE_DT),
            go("euler3d", "taylor-green-3d", COARSE_DT / 2.0),
        ],
        boussinesq: [
            go("boussinesq2d", "boussinesq-taylor-green", COARSE_DT),
            go("boussinesq2d", "boussinesq-taylor-green", COARSE_DT / 2.0),
        ],
    }
}

fn identity_reports() -> (Vec<BatchReport>, f64) {
    let start = Instant::now();
    let opts = SampleOptions::default();
    let reports = vec![run_batch(2, 100_000, 2024, &opts), run_batch(3, 100_000, 2024, &opts)];
    (reports, start.elapsed().as_secs_f64())
}

fn identities(reports: &[BatchReport], seconds: f64) -> Verdict {
    let worst = reports
        .iter()
        .flat_map(|r| r.identities.iter())
        .map(|s| s.max_residual)
        .fold(0.0, f64::max);
    let all = reports.iter().all(|r| r.identities.iter().all(|s| s.passed && s.evaluated == r.count));
    verdict(
        all && worst <= 1e-10 && seconds <= 30.0,
        format!("2D+3D, 1e5 samples each: max relative residual {worst:.2e}, {seconds:.1} s"),
    )
}

fn inequalities(reports: &[BatchReport]) -> Verdict {
    let violations: usize = reports.iter().flat_map(|r| r.inequalities.iter()).map(|s| s.violations).sum();
    let evaluated: usize = reports.iter().flat_map(|r| r.inequalities.iter()).map(|s| s.evaluated).sum();
    let ratio = reports
        .iter()
        .flat_map(|r| r.inequalities.iter())
        .map(|s| s.max_ratio)
        .fold(0.0, f64::max);
    verdict(
        violations == 0 && evaluated > 0,
        format!("{violations} violations in {evaluated} checks, max lhs/rhs {ratio:.6}"),
    )
}

fn max_diff(a: &[f64], b: impl Fn(usize) -> f64) -> f64 {
    a.iter().enumerate().map(|(i, v)| (v - b(i)).abs()).fold(0.0, f64::max)
}

fn spectral_engine() -> Verdict {
    let g3 = GridSpec::new(3, 16).unwrap();
    let f = ScalarField::from_fn(g3, |x| {
        x[0].sin() * (2.0 * x[1]).cos() + (3.0 * x[2]).cos() * x[0].sin() + 0.5 * (2.0 * x[1] + x[2]).sin()
    });
    let pos = |i| g3.position(i);
    let grad = gradient(&f).unwrap();
    let hess = hessian(&f).unwrap();
    let mut deriv: f64 = 0.0;
    deriv = deriv.max(max_diff(grad.component(0), |i| {
        let x = pos(i);
        x[0].cos() * (2.0 * x[1]).cos() + (3.0 * x[2]).cos() * x[0].cos()
    }));
    deriv = deriv.max(max_diff(grad.component(1), |i| {
        let x = pos(i);
        -2.0 * x[0].sin() * (2.0 * x[1]).sin() + (2.0 * x[1] + x[2]).cos()
    }));
    deriv = deriv.max(max_diff(grad.component(2), |i| {
        let x = pos(i);
        -3.0 * (3.0 * x[2]).sin() * x[0].sin() + 0.5 * (2.0 * x[1] + x[2]).cos()
    }));
    deriv = deriv.max(max_diff(hess.component(0, 0), |i| {
        let x = pos(i);
        -x[0].sin() * (2.0 * x[1]).cos() - (3.0 * x[2]).cos() * x[0].sin()
    }));
    deriv = deriv.max(max_diff(hess.component(1, 2), |i| {
        let x = pos(i);
        -(2.0 * x[1] + x[2]).sin()
    }));
    deriv = deriv.max(max_diff(hess.component(2, 2), |i| {
        let x = pos(i);
        -9.0 * (3.0 * x[2]).cos() * x[0].sin() - 0.5 * (2.0 * x[1] + x[2]).sin()
    }));

    let g2 = GridSpec::new(2, 64).unwrap();
    let tg = VectorField::from_fn(g2, |x| [x[0].cos() * x[1].sin(), -x[0].sin() * x[1].cos(), 0.0]);
    let p = solve_pressure(&tg, None).unwrap();
    let pressure = max_diff(p.values(), |i| {
        let x = g2.position(i);
        -((2.0 * x[0]).cos() + (2.0 * x[1]).cos()) / 4.0
    });

    let mut trace: f64 = 0.0;
    let cases = [
        ("taylor-green-3d", GridSpec::new(3, 32).unwrap()),
        ("random-band-limited", GridSpec::new(3, 32).unwrap()),
        ("boussinesq-taylor-green", GridSpec::new(2, 64).unwrap()),
        ("random-band-limited", GridSpec::new(2, 64).unwrap()),
    ];
    for (name, grid) in cases {
        let s = initial_condition(name, &grid, 5).unwrap();
        let p = solve_pressure(s.velocity(), s.theta()).unwrap();
        let tr = hessian(&p).unwrap().trace();
        let src = pressure_source(s.velocity(), s.theta()).unwrap();
        trace = trace.max(max_diff(tr.values(), |i| src.values()[i]));
    }
    verdict(
        deriv <= 1e-12 && pressure <= 1e-10 && trace <= 1e-10,
        format!("derivatives {deriv:.2e}, 2D TG pressure {pressure:.2e}, tr P - lap p {trace:.2e}"),
    )
}

fn conservation() -> Verdict {
    let start = Instant::now();

    let g3 = GridSpec::new(3, 32).unwrap();
    let s = initial_condition("taylor-green-3d", &g3, 0).unwrap();
    let e0 = s.kinetic_energy();
    let mut it = Integrator::new(&s, StepperConfig::new(0.01).unwrap()).unwrap();
    let mut energy: f64 = 0.0;
    while it.steps_taken() < 50 {
        it.step().unwrap();
        energy = energy.max((it.state().kinetic_energy() - e0).abs() / e0);
    }

    let g2 = GridSpec::new(2, 64).unwrap();
    let s = initial_condition("boussinesq-taylor-green", &g2, 0).unwrap();
    let th0 = theta_l2(s.theta().unwrap());
    let mut it = Integrator::new(&s, StepperConfig::new(0.01).unwrap()).unwrap();
    let mut theta: f64 = 0.0;
    while it.steps_taken() < 100 {
        it.step().unwrap();
        theta = theta.max((theta_l2(it.state().theta().unwrap()) - th0).abs() / th0);
    }

    let s = initial_condition("taylor-green-2d", &g2, 0).unwrap();
    let mut it = Integrator::new(&s, StepperConfig::new(0.01).unwrap()).unwrap();
    it.advance_to(1.0).unwrap();
    let end = it.state();
    let mut deviation: f64 = 0.0;
    for c in 0..2 {
        deviation = deviation.max(max_diff(end.velocity().component(c), |i| s.velocity().component(c)[i]));
    }
    let seconds = start.elapsed().as_secs_f64();
    verdict(
        energy <= 1e-6 && theta <= 1e-6 && deviation <= 1e-6 && seconds <= 300.0,
        format!(
            "3D TG energy drift {energy:.2e}, theta L2 drift {theta:.2e}, steady TG deviation {deviation:.2e} at t = {:.2}, {seconds:.1} s",
            end.time()
        ),
    )
}

fn convergence(runs: &TracerRuns) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for (system, pair) in [(System::Euler3d, &runs.euler), (System::Boussinesq2d, &runs.boussinesq)] {
        let [coarse, fine] = pair;
        let (Some(c), Some(f)) = (&coarse.tracers, &fine.tracers) else {
            return verdict(false, "tracer report missing");
        };
        for kind in residual_kinds(system) {
            let get = |r: &kinelab_core::pipeline::TracerReport| {
                r.residuals.iter().find(|s| s.kind == *kind).map(|s| s.max_abs).unwrap_or(f64::NAN)
            };
            let ratio = get(c) / get(f);
            ok &= ratio >= 4.0;
            parts.push(format!("{}/{} {ratio:.1}", system.name(), kind.name()));
        }
        ok &= !coarse.solver.under_resolved && !fine.solver.under_resolved;
    }
    verdict(ok, format!("residual ratio at dt/2: {}", parts.join(", ")))
}

fn growth_bounds(runs: &TracerRuns) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for (system, report) in [(System::Euler3d, &runs.euler[1]), (System::Boussinesq2d, &runs.boussinesq[1])] {
        let Some(t) = &report.tracers else {
            return verdict(false, "tracer report missing");
        };
        ok &= t.count >= 100;
        for variant in BoundVariant::for_system(system) {
            let Some(b) = t.bounds.iter().find(|b| b.variant == *variant) else {
                return verdict(false, format!("{} bound missing", variant.name()));
            };
            if b.asserted {
                ok &= b.violations == 0;
                parts.push(format!("{}/{} {} violations", system.name(), variant.name(), b.violations));
            }
        }
    }
    verdict(ok, format!("{TRACERS} tracers each: {}", parts.join(", ")))
}

fn gronwall() -> Verdict {
    let mut ok = true;
    let mut slopes = Vec::new();
    for beta in [Profile::Constant(1.5), Profile::Linear(0.2, 2.0)] {
        let s = saturation_study(Variant::Single, 0.0, 1.0, &Profile::Constant(1.0), &beta, 21, 5).unwrap();
        ok &= s.slope >= 2.0;
        slopes.push(format!("{:.4}", s.slope));
    }
    let mut batches = Vec::new();
    for (variant, seed) in [(Variant::Single, 17), (Variant::Double, 18)] {
        let b = domination_batch(1000, seed, variant, 201, 32).unwrap();
        ok &= b.passed();
        batches.push(format!("{:?} {}/{} (worst excess {:.1e})", variant, b.dominated, b.count, b.worst_excess));
    }
    verdict(
        ok,
        format!("saturation slopes {}; dominated {}", slopes.join(", "), batches.join(", ")),
    )
}

fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|k| f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(a) + inner + f(b)) * h / 3.0
}

fn criterion_functionals() -> Verdict {
    let mut err: f64 = 0.0;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    let grid = |b: f64, n: usize| -> Vec<f64> { (0..=n).map(|k| b * k as f64 / n as f64).collect() };

    // zero input: the weight's own integral
    let t = grid(1.5, 30);
    let zero = vec![0.0; t.len()];
    err = err.max(rel(criterion_functional(&t, &zero, Weight::None).unwrap().value, 1.5));
    let lin = criterion_functional(&t, &zero, Weight::Linear { candidate_t: 1.5 }).unwrap();
    err = err.max(rel(lin.value, 1.5 * 1.5 / 2.0));

    // constant m: g = c t, G = c t^2 / 2
    let c = 0.8;
    let t = grid(1.0, 100_000);
    let m = vec![c; t.len()];
    for weight in [Weight::None, Weight::Linear { candidate_t: 1.0 }] {
        let s = criterion_functional(&t, &m, weight).unwrap();
        for (k, &tk) in t.iter().enumerate() {
            err = err.max(rel(s.inner[k], c * tk)).max(rel(s.double[k], c * tk * tk / 2.0));
        }
        let exact = simpson(0.0, 1.0, 20_000, |x| weight.at(x) * (c * x * x / 2.0).exp());
        err = err.max(rel(s.value, exact));
    }

    // m = c / (T - t)^2 up to b < T
    let (cap_t, b, c) = (1.0, 0.5, 1.5);
    let t = grid(b, 100_000);
    let m: Vec<f64> = t.iter().map(|x| c / (cap_t - x).powi(2)).collect();
    let inner = |x: f64| c * (1.0 / (cap_t - x) - 1.0 / cap_t);
    let double = |x: f64| c * ((cap_t / (cap_t - x)).ln() - x / cap_t);
    let s = criterion_functional(&t, &m, Weight::Linear { candidate_t: cap_t }).unwrap();
    for (k, &tk) in t.iter().enumerate() {
        err = err.max(rel(s.inner[k], inner(tk))).max(rel(s.double[k], double(tk)));
    }
    err = err.max(rel(s.value, simpson(0.0, b, 20_000, |x| (cap_t - x) * double(x).exp())));

    // the type-I product (T - t)^2 m is exactly c; thresholds 1 and 2
    let mut verdicts_ok = true;
    for (c, euler, boussinesq) in [(0.5, true, true), (1.0, false, true), (1.5, false, true), (2.0, false, false), (2.5, false, false)] {
        let m: Vec<f64> = t.iter().map(|x| c / (cap_t - x).powi(2)).collect();
        let e = type_one_monitor(&t, &m, cap_t, EULER_TYPE_I_THRESHOLD, 0.25).unwrap();
        let q = type_one_monitor(&t, &m, cap_t, BOUSSINESQ_TYPE_I_THRESHOLD, 0.25).unwrap();
        err = err.max(rel(e.limsup, c)).max(rel(q.limsup, c));
        verdicts_ok &= e.satisfied == euler && q.satisfied == boussinesq;
    }
    verdict(
        err <= 1e-8 && verdicts_ok,
        format!("max relative error {err:.2e}, threshold 1 vs 2 verdicts {}", if verdicts_ok { "match" } else { "differ" }),
    )
}

fn determinism() -> Verdict {
    let configs = [
        "[run]\nsystem = \"euler3d\"\ninitial = \"random-band-limited\"\nseed = 42\nn = 16\ndt = 0.01\nt_end = 0.1\n\
         snapshot_every = 5\n\n[tracers]\ncount = 12\nseed = 4\n\n[[regions]]\nname = \"ball\"\ncenter = [2.0, 3.0, 4.0]\nradius = 1.2\n",
        "[run]\nsystem = \"boussinesq2d\"\ninitial = \"boussinesq-bubble\"\nn = 32\ndt = 0.02\nt_end = 0.2\n\
         candidate_t = 0.4\nsnapshot_every = 5\n\n[tracers]\ncount = 12\nseed = 4\n",
    ];
    let mut compared = 0;
    for config in configs {
        let cfg = RunConfig::parse(config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = execute(&cfg, &dir.path().join("a")).unwrap();
        let b = execute(&cfg, &dir.path().join("b")).unwrap();
        let mut paths: Vec<String> = a.manifest.files.iter().map(|f| f.path.clone()).collect();
        paths.push("manifest.json".into());
        for p in paths {
            let x = std::fs::read(a.dir.join(&p)).unwrap();
            let y = std::fs::read(b.dir.join(&p)).unwrap();
            if x != y {
                return verdict(false, format!("{p} differs"));
            }
            compared += 1;
        }
    }
    verdict(true, format!("{compared} artifact files byte-identical across repeated runs"))
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(&str, Verdict)> = Vec::new();
    let (reports, seconds) = identity_reports();
    results.push(("1 algebraic identities", identities(&reports, seconds)));
    results.push(("2 inequalities", inequalities(&reports)));
    results.push(("3 spectral engine", spectral_engine()));
    results.push(("4 solver conservation", conservation()));
    let runs = tracer_runs();
    results.push(("5 dynamical identity convergence", convergence(&runs)));
    results.push(("6 growth bounds along tracers", growth_bounds(&runs)));
    results.push(("7 gronwall", gronwall()));
    results.push(("8 criterion functionals", criterion_functionals()));
    results.push(("9 determinism", determinism()));

    let failed = results.iter().filter(|(_, v)| !v.passed).count();
    println!();
    for (name, v) in &results {
        println!("criterion {name}: {} ({})", if v.passed { "PASS" } else { "FAIL" }, v.detail);
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.0} s",
        results.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
