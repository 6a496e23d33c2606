//! Run and Gronwall-problem configuration files (TOML).
//!
//! A run file:
//!
//! ```toml
//! [run]
//! system = "euler3d"
//! initial = "taylor-green-3d"
//! seed = 0
//! n = 32
//! dt = 0.01
//! t_end = 0.5
//! candidate_t = 0.6      # defaults to t_end
//! output = "out"
//! snapshot_every = 10    # steps; 0 writes only the initial and final states
//!
//! [tracers]
//! count = 100
//! seed = 1
//!
//! [[regions]]
//! name = "core"
//! center = [3.14, 3.14, 3.14]
//! radius = 1.0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::Region;
use crate::error::{Error, Result};
use crate::gronwall::{Profile, Variant};
use crate::grid::GridSpec;
use crate::solver::{StepperConfig, System, INITIAL_CONDITIONS};
use crate::tracers::ResidualOptions;

fn default_dealias() -> f64 {
    2.0 / 3.0
}

fn default_accuracy() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub system: String,
    pub initial: String,
    #[serde(default)]
    pub seed: u64,
    pub n: usize,
    #[serde(default = "default_dealias")]
    pub dealias: f64,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub candidate_t: Option<f64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub snapshot_every: usize,
    #[serde(default)]
    pub cfl_guard: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TracerSection {
    #[serde(default)]
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
    /// Stencil accuracy of the material derivatives.
    #[serde(default = "default_accuracy")]
    pub accuracy: usize,
    #[serde(default)]
    pub mask_factor: Option<f64>,
}

impl Default for TracerSection {
    fn default() -> Self {
        TracerSection {
            count: 0,
            seed: 0,
            points: Vec::new(),
            accuracy: default_accuracy(),
            mask_factor: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSection {
    pub name: String,
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    #[serde(default)]
    pub tracers: TracerSection,
    #[serde(default)]
    pub regions: Vec<RegionSection>,
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn system(&self) -> Result<System> {
        System::parse(&self.run.system)
    }

    pub fn grid(&self) -> Result<GridSpec> {
        let dim = self.system()?.dim();
        GridSpec::with_options(dim, self.run.n, 2.0 * std::f64::consts::PI, self.run.dealias)
    }

    pub fn stepper(&self) -> Result<StepperConfig> {
        let mut s = StepperConfig::new(self.run.dt)?;
        s.cfl_guard = self.run.cfl_guard;
        s.validate()?;
        Ok(s)
    }

    pub fn steps(&self) -> usize {
        (self.run.t_end / self.run.dt).round() as usize
    }

    pub fn candidate_t(&self) -> f64 {
        self.run.candidate_t.unwrap_or(self.run.t_end)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.run.output.clone().unwrap_or_else(|| PathBuf::from("kinelab-out"))
    }

    /// User regions, each validated against the grid.
    pub fn regions(&self) -> Result<Vec<(String, Region)>> {
        let g = self.grid()?;
        self.regions
            .iter()
            .map(|r| {
                let region = Region::Ball {
                    center: r.center.clone(),
                    radius: r.radius,
                };
                region.indices(&g)?;
                Ok((r.name.clone(), region))
            })
            .collect()
    }

    /// Tracer start points: explicit points followed by `count` random ones.
    pub fn tracer_starts(&self) -> Result<Vec<[f64; 3]>> {
        let g = self.grid()?;
        let mut out = Vec::new();
        for p in &self.tracers.points {
            if p.len() != g.dim {
                return Err(Error::Config(format!(
                    "tracer point {p:?} does not have {} components",
                    g.dim
                )));
            }
            let mut x = [0.0; 3];
            x[..g.dim].copy_from_slice(p);
            out.push(x);
        }
        out.extend(crate::tracers::seed_points(&g, self.tracers.count, self.tracers.seed));
        Ok(out)
    }

    pub fn residual_options(&self) -> ResidualOptions {
        let mut o = ResidualOptions {
            accuracy: self.tracers.accuracy,
            ..ResidualOptions::default()
        };
        if let Some(m) = self.tracers.mask_factor {
            o.mask_factor = m;
        }
        o
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.run;
        self.system()?;
        if !INITIAL_CONDITIONS.contains(&r.initial.as_str()) {
            return Err(Error::UnknownInitialCondition(r.initial.clone()));
        }
        self.grid()?;
        self.stepper()?;
        if !(r.t_end > 0.0) {
            return Err(Error::Config(format!("t_end must be positive, got {}", r.t_end)));
        }
        let steps = r.t_end / r.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::Config(format!("t_end = {} is not a whole number of steps of {}", r.t_end, r.dt)));
        }
        if let Some(t) = r.candidate_t {
            if !(t >= r.t_end) {
                return Err(Error::Config(format!("candidate_t = {t} precedes t_end = {}", r.t_end)));
            }
        }
        if self.tracers.accuracy < 2 || self.tracers.accuracy % 2 != 0 {
            return Err(Error::Config(format!(
                "tracer accuracy must be even and at least 2, got {}",
                self.tracers.accuracy
            )));
        }
        if let Some(m) = self.tracers.mask_factor {
            if !(m >= 0.0 && m < 1.0) {
                return Err(Error::Config(format!("mask_factor must lie in [0, 1), got {m}")));
            }
        }
        let mut names: Vec<&str> = self.regions.iter().map(|r| r.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) || names.contains(&"global") {
            return Err(Error::Config("region names must be unique and not `global`".into()));
        }
        self.regions()?;
        self.tracer_starts()?;
        Ok(())
    }

    /// Canonical TOML echo, used in the manifest and for the run id.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

// ---------------------------------------------------------------------------
// Gronwall problem files

fn default_samples() -> usize {
    201
}

fn default_refine() -> usize {
    32
}

/// A single problem: profiles as `const:<c>`, `linear:<c0>,<c1>` or
/// `values:<v0>,...`; `y` optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    #[serde(default = "default_variant")]
    pub variant: String,
    #[serde(default)]
    pub a: f64,
    pub b: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    pub alpha: String,
    pub beta: String,
    #[serde(default)]
    pub y: Option<String>,
    #[serde(default = "default_refine")]
    pub refine: usize,
    /// Halvings in the saturation study; 0 skips it.
    #[serde(default)]
    pub levels: usize,
}

fn default_variant() -> String {
    "single".into()
}

fn default_count() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSection {
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_variant")]
    pub variant: String,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_refine")]
    pub refine: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GronwallSpec {
    #[serde(default)]
    pub problem: Option<ProblemSection>,
    #[serde(default)]
    pub batch: Option<BatchSection>,
}

impl GronwallSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let spec: GronwallSpec = toml::from_str(text).map_err(config_err)?;
        if spec.problem.is_none() && spec.batch.is_none() {
            return Err(Error::Config("spec needs a [problem] or [batch] section".into()));
        }
        if let Some(p) = &spec.problem {
            Variant::parse(&p.variant)?;
            Profile::parse(&p.alpha)?;
            Profile::parse(&p.beta)?;
            if let Some(y) = &p.y {
                Profile::parse(y)?;
            }
            if p.refine == 0 {
                return Err(Error::Config("refine must be at least 1".into()));
            }
        }
        if let Some(b) = &spec.batch {
            Variant::parse(&b.variant)?;
            if b.count == 0 || b.refine == 0 {
                return Err(Error::Config("batch count and refine must be positive".into()));
            }
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}
