//! Experiments computed fully in memory; `output` writes them to disk.

use rectflow::cloud::{Coupling, PointCloud};
use rectflow::metrics::{self, energy_permutation_test, marginal_distance, mean_se, wasserstein2, MetricsReport};
use rectflow::ode::integrate;
use rectflow::rng::{seeded_rng, RngState};
use rectflow::velocity::neural::{CurvePoint, TrainConfig};
use rectflow::{distill, Backend, Rectifier, RectifyResult, ReflowPlan, SolverSpec};
use serde::Serialize;

use crate::config::{BackendConfig, ExperimentConfig};
use crate::error::{CliError, CliResult};

/// Training and held-out couplings, both independent draws.
pub struct Data {
    pub train: Coupling,
    pub heldout: Coupling,
}

pub fn draw_data(cfg: &ExperimentConfig, rng: &mut RngState) -> CliResult<Data> {
    let train = Coupling::new(cfg.source.sample(cfg.n_train, rng)?, cfg.target.sample(cfg.n_train, rng)?)?;
    let heldout = Coupling::new(cfg.source.sample(cfg.n_eval, rng)?, cfg.target.sample(cfg.n_eval, rng)?)?;
    Ok(Data { train, heldout })
}

fn rectifier(cfg: &ExperimentConfig, backend: Backend) -> Rectifier {
    Rectifier {
        backend,
        schedule: cfg.schedule.clone(),
        solver: cfg.solver,
        metrics: cfg.metrics.options(),
    }
}

/// Metrics of coupling `k` (`k = 0` is the independent held-out coupling).
///
/// `straightness`, `marginal_*` and `burgers_residual` describe the flow that
/// produced coupling `k`; `crossing_v` is the crossing measure of coupling
/// `k` itself, estimated with the field fitted on it in the next round.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundMetrics {
    pub round: usize,
    #[serde(flatten)]
    pub metrics: MetricsReport,
    pub straightness_se: Option<f64>,
    pub crossing_v_se: Option<f64>,
    /// Straightness over the first round's value.
    pub straightness_normalized: Option<f64>,
    /// Relative L2 cost over the round-0 value.
    pub relative_l2_cost_normalized: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistillSummary {
    /// Endpoint W2 to held-out targets of the one-step map.
    pub w2_one_step_map: f64,
    /// Same for a single Euler step of the last round's field.
    pub w2_single_euler_step: f64,
    pub pairs: usize,
}

pub struct RunOutcome {
    pub config: ExperimentConfig,
    pub hash: String,
    pub data: Data,
    pub rounds: Vec<RectifyResult>,
    pub metrics: Vec<RoundMetrics>,
    pub distill: Option<(DistillSummary, Vec<CurvePoint>)>,
}

impl RunOutcome {
    /// Coupling `k`; 0 is the held-out input.
    pub fn coupling(&self, k: usize) -> &Coupling {
        if k == 0 {
            &self.data.heldout
        } else {
            &self.rounds[k - 1].coupling
        }
    }
}

pub fn run(cfg: &ExperimentConfig) -> CliResult<RunOutcome> {
    cfg.validate()?;
    let mut rng = seeded_rng(cfg.seed);
    let data = draw_data(cfg, &mut rng)?;
    let backend = cfg.resolve_backend(&data.train)?;
    let plan = ReflowPlan {
        source: Some(&cfg.source),
        heldout: Some(&data.heldout),
    };
    let rounds = rectifier(cfg, backend).reflow(&data.train, cfg.reflow_k, plan, &mut rng)?;
    let metrics = round_metrics(cfg, &data.heldout, &rounds)?;
    let distill = match &cfg.distill {
        Some(tc) => Some(distill_summary(cfg, tc, &data.heldout, rounds.last().expect("K >= 1"), &mut rng)?),
        None => None,
    };
    Ok(RunOutcome {
        config: cfg.clone(),
        hash: cfg.hash(),
        data,
        rounds,
        metrics,
        distill,
    })
}

/// Costs, relative cost and monotonicity of an arbitrary coupling.
pub fn coupling_metrics(pairs: &Coupling, relative_cost_n: usize) -> CliResult<MetricsReport> {
    let mut m = MetricsReport::default().with_costs(pairs);
    if relative_cost_n > 0 {
        let sub = pairs.head(relative_cost_n);
        m.relative_l2_cost = Some(metrics::relative_l2_cost(&sub, sub.n())?);
    }
    if pairs.dim() == 1 {
        m.monotone_violations = Some(metrics::monotone_violations(pairs)?);
    }
    Ok(m)
}

fn round_metrics(cfg: &ExperimentConfig, heldout: &Coupling, rounds: &[RectifyResult]) -> CliResult<Vec<RoundMetrics>> {
    let se = |s: &[f64]| (!s.is_empty()).then(|| mean_se(s).1);
    let mut out = Vec::with_capacity(rounds.len() + 1);
    for k in 0..=rounds.len() {
        let (mut metrics, straightness_se) = if k == 0 {
            (coupling_metrics(heldout, cfg.metrics.relative_cost_n)?, None)
        } else {
            let r = &rounds[k - 1];
            (r.metrics.clone(), se(&r.straightness_samples))
        };
        let next = rounds.get(k);
        metrics.crossing_v = next.and_then(|r| r.metrics.crossing_v);
        out.push(RoundMetrics {
            round: k,
            metrics,
            straightness_se,
            crossing_v_se: next.and_then(|r| se(&r.crossing_samples)),
            straightness_normalized: None,
            relative_l2_cost_normalized: None,
        });
    }
    let ratio = |v: Option<f64>, d: Option<f64>| match (v, d) {
        (Some(v), Some(d)) if d > 0.0 => Some(v / d),
        _ => None,
    };
    let s1 = out.get(1).and_then(|r| r.metrics.straightness);
    let r0 = out[0].metrics.relative_l2_cost;
    for r in &mut out {
        r.straightness_normalized = ratio(r.metrics.straightness, s1);
        r.relative_l2_cost_normalized = ratio(r.metrics.relative_l2_cost, r0);
    }
    Ok(out)
}

fn distill_summary(
    cfg: &ExperimentConfig,
    tc: &TrainConfig,
    heldout: &Coupling,
    last: &RectifyResult,
    rng: &mut RngState,
) -> CliResult<(DistillSummary, Vec<CurvePoint>)> {
    let (map, curve) = distill(last, tc, rng)?;
    let n = heldout.n().min(cfg.metrics.relative_cost_n.max(2)).min(metrics::DEFAULT_ASSIGNMENT_CAP);
    let sub = heldout.head(n);
    let mapped = map.apply_cloud(sub.left())?;
    let euler = integrate(&last.velocity, sub.left(), &SolverSpec::euler(1))?;
    let cap = metrics::DEFAULT_ASSIGNMENT_CAP;
    let summary = DistillSummary {
        w2_one_step_map: wasserstein2(&mapped, sub.right(), cap)?,
        w2_single_euler_step: wasserstein2(euler.last(), sub.right(), cap)?,
        pairs: n,
    };
    Ok((summary, curve))
}

/// One row of a schedule sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScheduleRow {
    pub schedule: String,
    pub steps: usize,
    /// Energy distance between simulated endpoints and held-out targets.
    pub energy_distance: f64,
    pub null_threshold_95: f64,
    pub p_value: f64,
    pub straightness: f64,
}

/// For every schedule, fits the field for that schedule's interpolation and
/// simulates the held-out sources with each Euler grid of the sweep.
pub fn compare_schedules(cfg: &ExperimentConfig) -> CliResult<Vec<ScheduleRow>> {
    cfg.validate()?;
    if cfg.sweep.schedules.is_empty() || cfg.sweep.steps.is_empty() {
        return Err(CliError::Config("sweep.schedules and sweep.steps must be non-empty".into()));
    }
    let mut rng = seeded_rng(cfg.seed);
    let data = draw_data(cfg, &mut rng)?;
    let mut rows = Vec::new();
    for schedule in &cfg.sweep.schedules {
        let mut r = rng.fork();
        let sub = ExperimentConfig {
            schedule: schedule.clone(),
            ..cfg.clone()
        };
        let rect = rectifier(&sub, sub.resolve_backend(&data.train)?);
        let (velocity, _) = rect.fit(&data.train, &mut r)?;
        for &n in &cfg.sweep.steps {
            let traj = integrate(&velocity, data.heldout.left(), &SolverSpec::euler(n).recording(1))?;
            let test = energy_permutation_test(traj.last(), data.heldout.right(), cfg.sweep.permutations, &mut r)?;
            rows.push(ScheduleRow {
                schedule: schedule.name().into(),
                steps: n,
                energy_distance: test.statistic,
                null_threshold_95: test.threshold_95,
                p_value: test.p_value,
                straightness: metrics::straightness(&traj)?,
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PenaltyRow {
    pub lambda: f64,
    pub straightness: f64,
    pub cost_l2sq: f64,
    /// Energy distance between simulated endpoints and held-out targets.
    pub endpoint_energy_distance: f64,
}

/// One trained flow per L2 penalty, all from the same data and seed.
pub fn l2_penalty_sweep(cfg: &ExperimentConfig) -> CliResult<Vec<PenaltyRow>> {
    cfg.validate()?;
    let BackendConfig::Mlp(train_cfg) = &cfg.backend else {
        return Err(CliError::Config("l2-sweep needs the mlp backend".into()));
    };
    if cfg.sweep.lambdas.is_empty() {
        return Err(CliError::Config("sweep.lambdas must be non-empty".into()));
    }
    let mut rng = seeded_rng(cfg.seed);
    let data = draw_data(cfg, &mut rng)?;
    let train_seed = rng.next_u64();
    let mut rows = Vec::new();
    for &lambda in &cfg.sweep.lambdas {
        let tc = TrainConfig {
            l2_penalty: lambda,
            ..train_cfg.clone()
        };
        let rect = rectifier(cfg, Backend::Mlp(tc));
        let (velocity, _) = rect.fit(&data.train, &mut seeded_rng(train_seed))?;
        let solver = SolverSpec {
            record_every: cfg.solver.record_every.max(1),
            ..cfg.solver
        };
        let traj = integrate(&velocity, data.heldout.left(), &solver)?;
        let pairs = Coupling::new(traj.first().clone(), traj.last().clone())?;
        rows.push(PenaltyRow {
            lambda,
            straightness: metrics::straightness(&traj)?,
            cost_l2sq: metrics::transport_cost(&pairs, rectflow::ConvexCost::L2Sq),
            endpoint_energy_distance: marginal_distance(traj.last(), data.heldout.right())?,
        });
    }
    Ok(rows)
}

/// Couplings read back from a `couplings.csv`, by round.
pub fn read_couplings(path: &std::path::Path) -> CliResult<Vec<(usize, Coupling)>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let headers = reader.headers()?.clone();
    let d0 = headers.iter().filter(|h| h.starts_with("z0_")).count();
    let d1 = headers.iter().filter(|h| h.starts_with("z1_")).count();
    if headers.get(0) != Some("round") || d0 == 0 || d0 != d1 || headers.len() != 2 + 2 * d0 {
        return Err(CliError::Config(format!("{}: not a couplings file", path.display())));
    }
    let mut by_round: Vec<(usize, Vec<f64>, Vec<f64>)> = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| CliError::Config(format!("{}: bad number {s:?}: {e}", path.display())))
        };
        let round: usize = rec[0]
            .parse()
            .map_err(|e| CliError::Config(format!("{}: bad round {:?}: {e}", path.display(), &rec[0])))?;
        if by_round.last().map(|r| r.0) != Some(round) {
            by_round.push((round, Vec::new(), Vec::new()));
        }
        let entry = by_round.last_mut().expect("just pushed");
        for k in 0..d0 {
            entry.1.push(parse(&rec[2 + k])?);
            entry.2.push(parse(&rec[2 + d0 + k])?);
        }
    }
    by_round
        .into_iter()
        .map(|(round, l, r)| {
            let n = l.len() / d0;
            Ok((round, Coupling::new(PointCloud::new(n, d0, l)?, PointCloud::new(n, d0, r)?)?))
        })
        .collect()
}
