//! Experiment configuration (TOML on disk).

use std::path::{Path, PathBuf};

use rectflow::cloud::Coupling;
use rectflow::distributions::DistributionSpec;
use rectflow::metrics::DEFAULT_ASSIGNMENT_CAP;
use rectflow::pipeline::DEFAULT_MAX_ROUNDS;
use rectflow::velocity::neural::TrainConfig;
use rectflow::{Backend, Method, MetricsOptions, Schedule, SolverSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub seed: u64,
    pub source: DistributionSpec,
    pub target: DistributionSpec,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    pub backend: BackendConfig,
    pub solver: SolverSpec,
    #[serde(default = "one")]
    pub reflow_k: usize,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
    /// Pairs used for fitting.
    pub n_train: usize,
    /// Held-out pairs used for every reported metric.
    pub n_eval: usize,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    /// Distil the last round into a one-step map.
    #[serde(default)]
    pub distill: Option<TrainConfig>,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_schedule() -> Schedule {
    Schedule::Linear
}

fn one() -> usize {
    1
}

fn default_max_rounds() -> usize {
    DEFAULT_MAX_ROUNDS
}

/// `exact` picks the closed form that matches the source and target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendConfig {
    Exact,
    Knn { bandwidth: f64, neighbors: usize },
    Mlp(TrainConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub crossing_time_samples: usize,
    pub crossing_t_max: f64,
    pub relative_cost_n: usize,
    pub marginals: bool,
    pub marginal_n: usize,
    pub burgers_probes: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        let m = MetricsOptions::default();
        Self {
            crossing_time_samples: m.crossing_time_samples,
            crossing_t_max: m.crossing_t_max,
            relative_cost_n: m.relative_cost_n,
            marginals: m.marginals,
            marginal_n: m.marginal_n,
            burgers_probes: m.burgers_probes,
        }
    }
}

impl MetricsConfig {
    pub fn options(&self) -> MetricsOptions {
        MetricsOptions {
            crossing_time_samples: self.crossing_time_samples,
            crossing_t_max: self.crossing_t_max,
            relative_cost_n: self.relative_cost_n,
            marginals: self.marginals,
            marginal_n: self.marginal_n,
            burgers_probes: self.burgers_probes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory; `--out` takes precedence.
    pub dir: Option<PathBuf>,
    /// Particles written to trajectories.csv per round.
    pub trajectory_particles: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            trajectory_particles: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub schedules: Vec<Schedule>,
    pub steps: Vec<usize>,
    pub lambdas: Vec<f64>,
    /// Permutations of the endpoint two-sample test.
    pub permutations: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            schedules: vec![Schedule::Linear, Schedule::vp(), Schedule::sub_vp()],
            steps: vec![1, 2, 5, 100],
            lambdas: vec![0.0, 1e-3, 1e-2, 1e-1],
            permutations: 99,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Checks everything that can be checked without drawing samples.
    pub fn validate(&self) -> CliResult<()> {
        self.source.validate()?;
        self.target.validate()?;
        if self.source.dim() != self.target.dim() {
            return Err(CliError::Config(format!(
                "source has dimension {} but target has {}",
                self.source.dim(),
                self.target.dim()
            )));
        }
        self.schedule.validate()?;
        self.solver.validate()?;
        match &self.backend {
            BackendConfig::Exact => {
                self.exact_kind()?;
            }
            BackendConfig::Knn { bandwidth, neighbors } => Backend::Knn {
                bandwidth: *bandwidth,
                neighbors: *neighbors,
            }
            .validate()?,
            BackendConfig::Mlp(cfg) => cfg.validate()?,
        }
        if self.reflow_k == 0 || self.reflow_k > self.max_rounds {
            return Err(CliError::Config(format!(
                "reflow_k must be in 1..={} (got {})",
                self.max_rounds, self.reflow_k
            )));
        }
        if self.reflow_k > 1 && matches!(self.backend, BackendConfig::Exact) {
            return Err(CliError::Config("the exact backend supports a single round only".into()));
        }
        if self.n_train == 0 || self.n_eval < 2 {
            return Err(CliError::Config("need n_train >= 1 and n_eval >= 2".into()));
        }
        if self.metrics.relative_cost_n > DEFAULT_ASSIGNMENT_CAP {
            return Err(CliError::Config(format!(
                "metrics.relative_cost_n exceeds the assignment cap of {DEFAULT_ASSIGNMENT_CAP}"
            )));
        }
        if !(self.metrics.crossing_t_max > 0.0 && self.metrics.crossing_t_max <= 1.0) {
            return Err(CliError::Config("metrics.crossing_t_max must lie in (0, 1]".into()));
        }
        if self.metrics.marginals {
            match self.solver.method {
                Method::Euler { steps } if steps % 4 == 0 => {}
                _ => return Err(CliError::Config("marginals need an Euler grid divisible by 4".into())),
            }
        }
        for s in &self.sweep.schedules {
            s.validate()?;
        }
        if self.sweep.steps.iter().any(|n| *n == 0) {
            return Err(CliError::Config("sweep.steps entries must be >= 1".into()));
        }
        if self.sweep.lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(CliError::Config("sweep.lambdas must be finite and >= 0".into()));
        }
        if let Some(d) = &self.distill {
            d.validate()?;
        }
        Ok(())
    }

    fn exact_kind(&self) -> CliResult<ExactKind> {
        match (&self.source, &self.target) {
            (DistributionSpec::Gaussian(_), DistributionSpec::Gaussian(_)) => Ok(ExactKind::Gaussian),
            (DistributionSpec::Gaussian(g), _) if g.centered_isotropic_stddev().is_some() => Ok(ExactKind::Atoms),
            _ => Err(CliError::Config(
                "the exact backend needs a Gaussian source (centred and isotropic unless the target is Gaussian too)".into(),
            )),
        }
    }

    /// The velocity backend for a training coupling. An exact backend on a
    /// non-Gaussian target uses the declared atoms of an empirical target, or
    /// the training targets otherwise.
    pub fn resolve_backend(&self, train: &Coupling) -> CliResult<Backend> {
        Ok(match &self.backend {
            BackendConfig::Exact => match (self.exact_kind()?, &self.source, &self.target) {
                (ExactKind::Gaussian, DistributionSpec::Gaussian(s), DistributionSpec::Gaussian(t)) => Backend::ExactGaussian {
                    source: s.clone(),
                    target: t.clone(),
                },
                (_, DistributionSpec::Gaussian(s), target) => Backend::ExactAtoms {
                    targets: match target {
                        DistributionSpec::Empirical { points } => points.clone(),
                        _ => train.right().clone(),
                    },
                    source_stddev: s.centered_isotropic_stddev().expect("checked by exact_kind"),
                },
                _ => unreachable!("exact_kind accepts Gaussian sources only"),
            },
            BackendConfig::Knn { bandwidth, neighbors } => Backend::Knn {
                bandwidth: *bandwidth,
                neighbors: *neighbors,
            },
            BackendConfig::Mlp(cfg) => Backend::Mlp(cfg.clone()),
        })
    }

    /// SHA-256 of the canonical JSON form, excluding the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output.dir = None;
        let json = serde_json::to_string(&c).expect("config serialises");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }

    pub fn euler_steps(&self) -> Option<usize> {
        match self.solver.method {
            Method::Euler { steps } => Some(steps),
            Method::Rk45 { .. } => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ExactKind {
    Gaussian,
    Atoms,
}
