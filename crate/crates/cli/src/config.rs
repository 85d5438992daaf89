//! Run configuration: a TOML file with one section per concern, then flag
//! overrides. The resolved result is what gets echoed to the output
//! directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use qflow_core::bench::DEFAULT_OFFSETS;
use qflow_core::model::TrainConfig;
use qflow_core::solvers::{ScheduledVelocity, SolverConfig};

pub const OUT_ROOT_ENV: &str = "QFLOW_OUT_ROOT";
const DEFAULT_OUT_ROOT: &str = "qflow-runs";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 0, out: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub steps: usize,
    pub gamma: f64,
    pub scheduler: bool,
    pub t_min: f64,
    pub scheduled_velocity: ScheduledVelocity,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            steps: s.steps,
            gamma: s.gamma,
            scheduler: s.scheduler_enabled,
            t_min: s.t_min,
            scheduled_velocity: s.scheduled_velocity,
        }
    }
}

impl SolverSection {
    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            steps: self.steps,
            gamma: self.gamma,
            scheduler_enabled: self.scheduler,
            t_min: self.t_min,
            scheduled_velocity: self.scheduled_velocity,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Frame dataset CSV; the built-in four-mode toy task when absent.
    pub path: Option<PathBuf>,
    pub toy_size: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: None,
            toy_size: 512,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub offsets: Vec<f64>,
    pub trials: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            offsets: DEFAULT_OFFSETS.to_vec(),
            trials: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub count: usize,
    /// Also write the samples, in order, as one realized backbone chain.
    pub realize_chain: bool,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            count: 10,
            realize_chain: false,
        }
    }
}

/// Rectification settings. Unset training fields fall back to `[train]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RectifySection {
    pub pairs: usize,
    pub filter: String,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub lr_decay: Option<f64>,
    pub draws_per_item: Option<usize>,
}

impl Default for RectifySection {
    fn default() -> Self {
        Self {
            pairs: 1000,
            filter: "none".into(),
            epochs: None,
            learning_rate: None,
            lr_decay: None,
            draws_per_item: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub samples: usize,
    pub time_grid: Vec<f64>,
    /// Unscheduled Euler steps used for the path-marginal comparison and
    /// for pair generation inside `verify`.
    pub ks_steps: usize,
    pub ks_threshold: f64,
    pub scheduler_gamma: f64,
    /// Near-zero `γ` whose cost is reported but not gated.
    pub limit_gamma: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            samples: 1000,
            time_grid: vec![0.25, 0.5, 0.75, 1.0],
            ks_steps: 100,
            ks_threshold: 0.1,
            scheduler_gamma: 10.0,
            limit_gamma: 0.01,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub solver: SolverSection,
    pub train: TrainConfig,
    pub data: DataSection,
    pub bench: BenchSection,
    pub sample: SampleSection,
    pub rectify: RectifySection,
    pub verify: VerifySection,
}

/// Flag values that override the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub gamma: Option<f64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = overrides.seed {
            cfg.run.seed = seed;
        }
        if let Some(steps) = overrides.steps {
            cfg.solver.steps = steps;
        }
        if let Some(gamma) = overrides.gamma {
            cfg.solver.gamma = gamma;
        }
        if let Some(out) = &overrides.out {
            cfg.run.out = Some(out.clone());
        }
        // one master seed
        cfg.train.seed = cfg.run.seed;
        Ok(cfg)
    }

    /// Output directory: `--out`, then `[run] out`, then
    /// `$QFLOW_OUT_ROOT/<command>`, then `./qflow-runs/<command>`.
    pub fn resolve_out(&mut self, command: &str) -> PathBuf {
        let out = match &self.run.out {
            Some(p) => p.clone(),
            None => {
                let root = std::env::var_os(OUT_ROOT_ENV)
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT));
                root.join(command)
            }
        };
        self.run.out = Some(out.clone());
        out
    }

    pub fn validate_solver(&self) -> Result<()> {
        self.solver.solver().validate().context("invalid [solver] section")
    }

    pub fn validate_train(&self) -> Result<()> {
        self.train.validate().context("invalid [train] section")?;
        if self.data.path.is_none() && self.data.toy_size == 0 {
            bail!("invalid [data] section: toy_size must be at least 1");
        }
        if let Some(p) = &self.data.path {
            if !p.is_file() {
                bail!("dataset file {} does not exist", p.display());
            }
        }
        Ok(())
    }

    /// `[train]` with the `[rectify]` overrides applied.
    pub fn rectify_train(&self) -> TrainConfig {
        let mut t = self.train.clone();
        let r = &self.rectify;
        if let Some(e) = r.epochs {
            t.epochs = e;
        }
        if let Some(lr) = r.learning_rate {
            t.learning_rate = lr;
        }
        if let Some(d) = r.lr_decay {
            t.lr_decay = d;
        }
        if let Some(d) = r.draws_per_item {
            t.draws_per_item = d;
        }
        t
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing resolved config")
    }
}
