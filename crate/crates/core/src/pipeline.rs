//! Rectify, reflow and distill.

use crate::cloud::{Coupling, PointCloud};
use crate::distributions::{DiagonalGaussian, DistributionSpec};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsReport};
use crate::ode::{integrate, SolverSpec, TrajectoryEnsemble};
use crate::rng::RngState;
use crate::schedules::Schedule;
use crate::velocity::kernel::KernelVelocity;
use crate::velocity::neural::{distill_one_step, train_velocity, CurvePoint, Mlp, OneStepMap, TrainConfig};
use crate::velocity::{ExactVelocity, GaussianVelocity, VelocityField};

/// Default number of reflow rounds allowed by configs.
pub const DEFAULT_MAX_ROUNDS: usize = 5;

/// How the velocity field is obtained from a coupling.
#[derive(Clone, Debug)]
pub enum Backend {
    /// Closed form for `N(0, σ₀² I)` independent of uniform atoms. Only valid
    /// for the independent coupling, i.e. the first round.
    ExactAtoms { targets: PointCloud, source_stddev: f64 },
    /// Closed form for two independent diagonal Gaussians (first round only).
    ExactGaussian { source: DiagonalGaussian, target: DiagonalGaussian },
    /// Kernel estimator; `neighbors` is clamped to the number of pairs.
    Knn { bandwidth: f64, neighbors: usize },
    Mlp(TrainConfig),
}

impl Backend {
    pub fn is_exact(&self) -> bool {
        matches!(self, Backend::ExactAtoms { .. } | Backend::ExactGaussian { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Backend::ExactAtoms { .. } | Backend::ExactGaussian { .. } => "exact",
            Backend::Knn { .. } => "knn",
            Backend::Mlp(_) => "mlp",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Backend::ExactAtoms { source_stddev, .. } if !(*source_stddev > 0.0) => {
                Err(Error::invalid("source stddev must be > 0"))
            }
            Backend::ExactGaussian { source, target } => {
                source.validate()?;
                target.validate()
            }
            Backend::Knn { bandwidth, neighbors } => {
                if !(*bandwidth > 0.0) || !bandwidth.is_finite() {
                    Err(Error::invalid(format!("bandwidth must be > 0 (got {bandwidth})")))
                } else if *neighbors == 0 {
                    Err(Error::invalid("knn neighbours must be >= 1"))
                } else {
                    Ok(())
                }
            }
            Backend::Mlp(cfg) => cfg.validate(),
            _ => Ok(()),
        }
    }
}

/// A fitted velocity field.
#[derive(Clone, Debug)]
pub enum VelocityModel {
    ExactAtoms(ExactVelocity),
    ExactGaussian(GaussianVelocity),
    Knn(KernelVelocity),
    Mlp(Mlp),
}

impl VelocityModel {
    fn inner(&self) -> &dyn VelocityField {
        match self {
            VelocityModel::ExactAtoms(v) => v,
            VelocityModel::ExactGaussian(v) => v,
            VelocityModel::Knn(v) => v,
            VelocityModel::Mlp(v) => v,
        }
    }
}

impl VelocityField for VelocityModel {
    fn dim(&self) -> usize {
        self.inner().dim()
    }

    fn velocity_into(&self, z: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        self.inner().velocity_into(z, t, out)
    }

    fn singular_at_terminal(&self) -> bool {
        self.inner().singular_at_terminal()
    }
}

/// Which metrics to compute and with how much effort.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsOptions {
    /// Uniform times per pair for the crossing measure; 0 skips it.
    pub crossing_time_samples: usize,
    /// Upper end of the crossing measure's time integral.
    pub crossing_t_max: f64,
    /// Pairs fed to the assignment solver for the relative cost; 0 skips it.
    pub relative_cost_n: usize,
    /// Energy distances between simulated and interpolated marginals at
    /// t = 0.25, 0.5, 0.75; needs an Euler grid divisible by 4.
    pub marginals: bool,
    pub marginal_n: usize,
    /// Probe points for the Burgers residual; 0 skips it.
    pub burgers_probes: usize,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        Self {
            crossing_time_samples: 4,
            crossing_t_max: 0.99,
            relative_cost_n: 1000,
            marginals: false,
            marginal_n: 500,
            burgers_probes: 16,
        }
    }
}

/// Everything `rectify` needs besides the data.
#[derive(Clone, Debug)]
pub struct Rectifier {
    pub backend: Backend,
    pub schedule: Schedule,
    pub solver: SolverSpec,
    pub metrics: MetricsOptions,
}

#[derive(Clone, Debug)]
pub struct RectifyResult {
    pub velocity: VelocityModel,
    /// `(Z0, Z1)` of the simulated particles.
    pub coupling: Coupling,
    pub trajectories: TrajectoryEnsemble,
    pub metrics: MetricsReport,
    /// Per-pair crossing estimates of the round's input coupling (empty when skipped).
    pub crossing_samples: Vec<f64>,
    /// Per-particle straightness of the simulated paths.
    pub straightness_samples: Vec<f64>,
    pub training_curve: Vec<CurvePoint>,
}

/// Where reflow rounds draw their data from.
#[derive(Clone, Copy, Debug, Default)]
pub struct ReflowPlan<'a> {
    /// Fresh source draws for the next round's training coupling. Without a
    /// source the training pairs' own left side is re-simulated.
    pub source: Option<&'a DistributionSpec>,
    /// Held-out coupling (never used for fitting) on which each round's
    /// flow is simulated and measured. Defaults to the training coupling.
    pub heldout: Option<&'a Coupling>,
}

impl Rectifier {
    pub fn validate(&self) -> Result<()> {
        self.backend.validate()?;
        self.schedule.validate()?;
        self.solver.validate()
    }

    /// Constructs or trains the velocity field of `pairs`.
    pub fn fit(&self, pairs: &Coupling, rng: &mut RngState) -> Result<(VelocityModel, Vec<CurvePoint>)> {
        let s = self.schedule.clone();
        Ok(match &self.backend {
            Backend::ExactAtoms { targets, source_stddev } => {
                crate::linalg::check_dim(targets.dim(), pairs.dim())?;
                let v = ExactVelocity::with_schedule(targets.clone(), *source_stddev, s)?;
                (VelocityModel::ExactAtoms(v), Vec::new())
            }
            Backend::ExactGaussian { source, target } => {
                crate::linalg::check_dim(source.dim(), pairs.dim())?;
                let v = GaussianVelocity::with_schedule(source.clone(), target.clone(), s)?;
                (VelocityModel::ExactGaussian(v), Vec::new())
            }
            Backend::Knn { bandwidth, neighbors } => {
                let m = (*neighbors).min(pairs.n());
                let v = KernelVelocity::with_schedule(pairs.clone(), *bandwidth, m, s)?;
                (VelocityModel::Knn(v), Vec::new())
            }
            Backend::Mlp(cfg) => {
                let trained = train_velocity(pairs, &self.schedule, cfg, rng, None)?;
                (VelocityModel::Mlp(trained.net), trained.curve)
            }
        })
    }

    /// Fits on `pairs` and simulates `pairs.left` through the fitted flow.
    pub fn rectify_once(&self, pairs: &Coupling, rng: &mut RngState) -> Result<RectifyResult> {
        self.validate()?;
        let (velocity, curve) = self.fit(pairs, rng)?;
        self.measure(velocity, curve, pairs, rng)
    }

    /// Simulates `input.left` with `velocity` and computes the round's metrics;
    /// the crossing measure refers to `input` itself.
    fn measure(
        &self,
        velocity: VelocityModel,
        training_curve: Vec<CurvePoint>,
        input: &Coupling,
        rng: &mut RngState,
    ) -> Result<RectifyResult> {
        let opts = &self.metrics;
        let solver = self.recording_solver();
        let trajectories = integrate(&velocity, input.left(), &solver)?;
        let coupling = Coupling::new(trajectories.first().clone(), trajectories.last().clone())?;

        let straightness_samples = metrics::straightness_per_particle(&trajectories)?;
        let mut report = MetricsReport {
            straightness: Some(metrics::mean_se(&straightness_samples).0),
            ..Default::default()
        }
        .with_costs(&coupling);

        let crossing_samples = if opts.crossing_time_samples > 0 {
            let mut r = rng.fork();
            metrics::crossing_v_on(
                input,
                &velocity,
                &self.schedule,
                opts.crossing_time_samples,
                opts.crossing_t_max,
                &mut r,
            )?
        } else {
            Vec::new()
        };
        if !crossing_samples.is_empty() {
            report.crossing_v = Some(metrics::mean_se(&crossing_samples).0);
        }
        if opts.relative_cost_n > 0 {
            let sub = coupling.head(opts.relative_cost_n);
            report.relative_l2_cost = Some(metrics::relative_l2_cost(&sub, sub.n())?);
        }
        if opts.marginals {
            let [a, b, c] = self.marginal_distances(&trajectories, input)?;
            report.marginal_t025 = Some(a);
            report.marginal_t05 = Some(b);
            report.marginal_t075 = Some(c);
        }
        if opts.burgers_probes > 0 {
            let probes = input.left().head(opts.burgers_probes);
            report.burgers_residual = Some(metrics::burgers_residual(&velocity, &probes, &[0.25, 0.5, 0.75])?);
        }
        if coupling.dim() == 1 {
            report.monotone_violations = Some(metrics::monotone_violations(&coupling)?);
        }
        report.check()?;
        Ok(RectifyResult {
            velocity,
            coupling,
            trajectories,
            metrics: report,
            crossing_samples,
            straightness_samples,
            training_curve,
        })
    }

    /// Solver whose recorded grid includes the quarter times when marginals
    /// are requested. Straightness needs interior states, so an endpoints-only
    /// spec records every step instead.
    fn recording_solver(&self) -> SolverSpec {
        let mut spec = self.solver;
        if spec.record_every == 0 {
            spec.record_every = 1;
        }
        if self.metrics.marginals {
            if let crate::ode::Method::Euler { steps } = spec.method {
                if steps % 4 == 0 && (spec.record_every == 0 || (steps / 4) % spec.record_every != 0) {
                    spec.record_every = steps / 4;
                }
            }
        }
        spec
    }

    fn marginal_distances(&self, traj: &TrajectoryEnsemble, input: &Coupling) -> Result<[f64; 3]> {
        let mut out = [0.0; 3];
        let n = self.metrics.marginal_n.min(input.n());
        for (slot, t) in out.iter_mut().zip([0.25, 0.5, 0.75]) {
            let j = traj
                .times
                .iter()
                .position(|s| (s - t).abs() < 1e-9)
                .ok_or_else(|| Error::invalid(format!("t = {t} is not on the recorded grid")))?;
            let simulated = traj.states[j].head(n);
            let mut interp = Vec::with_capacity(n * input.dim());
            for i in 0..n {
                let (x0, x1) = input.pair(i);
                interp.extend(self.schedule.interpolate(x1, x0, t)?.0);
            }
            let interp = PointCloud::new(n, input.dim(), interp)?;
            *slot = metrics::marginal_distance(&simulated, &interp)?;
        }
        Ok(out)
    }

    /// `k` rounds of rectification. Round `r` fits on its training coupling,
    /// is measured on the held-out coupling, and produces the next training
    /// coupling by pushing fresh source draws through its flow.
    pub fn reflow(&self, pairs: &Coupling, k: usize, plan: ReflowPlan<'_>, rng: &mut RngState) -> Result<Vec<RectifyResult>> {
        self.validate()?;
        if k == 0 {
            return Err(Error::invalid("reflow needs K >= 1"));
        }
        if k > 1 && self.backend.is_exact() {
            return Err(Error::invalid(
                "the exact backend only describes the independent coupling; use knn or mlp for K > 1",
            ));
        }
        let mut train = pairs.clone();
        let mut eval = plan.heldout.cloned();
        let mut rounds: Vec<RectifyResult> = Vec::with_capacity(k);
        for round in 0..k {
            let (velocity, curve) = self.fit(&train, rng)?;
            let result = match &eval {
                Some(h) => self.measure(velocity, curve, h, rng)?,
                None => self.measure(velocity, curve, &train, rng)?,
            };
            if round + 1 < k {
                let left = match plan.source {
                    Some(src) => src.sample(train.n(), rng)?,
                    None => train.left().clone(),
                };
                let end = integrate(&result.velocity, &left, &self.solver)?;
                train = Coupling::new(left, end.last().clone())?;
                if let Some(h) = eval.as_mut() {
                    *h = Coupling::new(h.left().clone(), result.coupling.right().clone())?;
                }
            }
            rounds.push(result);
        }
        Ok(rounds)
    }
}

/// One-step map fitted to the endpoint coupling of `result`.
pub fn distill(result: &RectifyResult, cfg: &TrainConfig, rng: &mut RngState) -> Result<(OneStepMap, Vec<CurvePoint>)> {
    distill_one_step(&result.coupling, cfg, rng)
}
