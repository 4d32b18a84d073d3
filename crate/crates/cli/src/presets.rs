//! Named toy experiments.
//!
//! The geometry of every preset (mode positions, spreads, sample sizes) and
//! the network/training defaults are our own choices, picked so the pictures
//! resemble the classic rectified-flow toys; they are not published values.

use rectflow::cloud::PointCloud;
use rectflow::distributions::{DiagonalGaussian, DistributionSpec};
use rectflow::velocity::neural::{Activation, TrainConfig};
use rectflow::{Schedule, SolverSpec};

use crate::config::{BackendConfig, ExperimentConfig, MetricsConfig, OutputConfig, SweepConfig};
use crate::error::{CliError, CliResult};

pub const PRESETS: &[&str] = &[
    "gauss-1d",
    "two-dots",
    "six-modes",
    "gauss-to-mixture",
    "gauss-to-mixture-N1",
    "l2-penalty",
];

pub fn preset(name: &str) -> CliResult<ExperimentConfig> {
    Ok(match name {
        "gauss-1d" => gauss_1d(),
        "two-dots" => two_dots(),
        "six-modes" => six_modes(),
        "gauss-to-mixture" => gauss_to_mixture(),
        "gauss-to-mixture-N1" => gauss_to_mixture_n1(),
        "l2-penalty" => l2_penalty(),
        other => {
            return Err(CliError::Config(format!(
                "unknown preset {other:?}; known presets: {}",
                PRESETS.join(", ")
            )))
        }
    })
}

fn gaussian(mean: Vec<f64>, stddev: Vec<f64>) -> DistributionSpec {
    DistributionSpec::gaussian(mean, stddev).expect("valid preset")
}

fn standard_2d() -> DistributionSpec {
    gaussian(vec![0.0, 0.0], vec![1.0, 1.0])
}

/// Equal-weight mixture of isotropic blobs.
fn blobs(centres: &[[f64; 2]], sd: f64) -> DistributionSpec {
    let comps = centres
        .iter()
        .map(|c| DiagonalGaussian::new(c.to_vec(), vec![sd, sd]).expect("valid preset"))
        .collect();
    DistributionSpec::equal_mixture(comps).expect("valid preset")
}

fn base(name: &str, source: DistributionSpec, target: DistributionSpec, backend: BackendConfig, steps: usize) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        seed: 0,
        source,
        target,
        schedule: Schedule::Linear,
        backend,
        solver: SolverSpec::euler(steps),
        reflow_k: 1,
        max_rounds: rectflow::pipeline::DEFAULT_MAX_ROUNDS,
        n_train: 2000,
        n_eval: 2000,
        metrics: MetricsConfig::default(),
        output: OutputConfig::default(),
        sweep: SweepConfig::default(),
        distill: None,
    }
}

/// `N(0, 1) → N(3, 1)` with the closed-form Gaussian field.
fn gauss_1d() -> ExperimentConfig {
    base(
        "gauss-1d",
        gaussian(vec![0.0], vec![1.0]),
        gaussian(vec![3.0], vec![1.0]),
        BackendConfig::Exact,
        100,
    )
}

/// Two tight blobs on the left, two on the right; the independent coupling
/// sends half the mass along crossing diagonals.
fn two_dots() -> ExperimentConfig {
    ExperimentConfig {
        reflow_k: 2,
        n_train: 1000,
        n_eval: 1000,
        ..base(
            "two-dots",
            blobs(&[[0.0, 2.0], [0.0, -2.0]], 0.1),
            blobs(&[[4.0, 2.0], [4.0, -2.0]], 0.1),
            BackendConfig::Knn {
                bandwidth: 0.3,
                neighbors: 100,
            },
            50,
        )
    }
}

/// Standard Gaussian to six blobs on a circle of radius 4, kernel bandwidth 0.1.
fn six_modes() -> ExperimentConfig {
    let centres: Vec<[f64; 2]> = (0..6)
        .map(|k| {
            let a = std::f64::consts::PI / 3.0 * k as f64;
            [4.0 * a.cos(), 4.0 * a.sin()]
        })
        .collect();
    ExperimentConfig {
        reflow_k: 3,
        ..base(
            "six-modes",
            standard_2d(),
            blobs(&centres, 0.15),
            BackendConfig::Knn {
                bandwidth: 0.1,
                neighbors: 100,
            },
            50,
        )
    }
}

/// Standard Gaussian to a low-variance two-blob mixture off the origin; the
/// exact field uses the training targets as atoms.
fn gauss_to_mixture() -> ExperimentConfig {
    ExperimentConfig {
        n_train: 1000,
        n_eval: 500,
        ..base(
            "gauss-to-mixture",
            standard_2d(),
            blobs(&[[5.0, 2.0], [5.0, -2.0]], 0.2),
            BackendConfig::Exact,
            100,
        )
    }
}

/// Standard Gaussian to the two atoms `(4, ±3)`, simulated with one Euler step.
fn gauss_to_mixture_n1() -> ExperimentConfig {
    let atoms = PointCloud::from_rows(&[[4.0, 3.0], [4.0, -3.0]]).expect("valid preset");
    ExperimentConfig {
        n_train: 1000,
        n_eval: 1000,
        ..base(
            "gauss-to-mixture-N1",
            standard_2d(),
            DistributionSpec::empirical(atoms),
            BackendConfig::Exact,
            1,
        )
    }
}

/// Two-dots geometry with a small tanh network, for the L2-penalty sweep.
fn l2_penalty() -> ExperimentConfig {
    let train = TrainConfig {
        hidden: vec![32, 32],
        activation: Activation::Tanh,
        iterations: 1500,
        batch_size: 128,
        learning_rate: 3e-3,
        ..Default::default()
    };
    ExperimentConfig {
        n_train: 1000,
        n_eval: 500,
        ..base(
            "l2-penalty",
            blobs(&[[0.0, 2.0], [0.0, -2.0]], 0.3),
            blobs(&[[4.0, 2.0], [4.0, -2.0]], 0.3),
            BackendConfig::Mlp(train),
            50,
        )
    }
}
