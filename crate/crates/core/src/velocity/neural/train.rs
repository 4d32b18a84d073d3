use serde::{Deserialize, Serialize};

use crate::cloud::Coupling;
use crate::error::{Error, Result};
use crate::linalg::{check_dim, Matrix};
use crate::rng::RngState;
use crate::schedules::Schedule;
use crate::velocity::neural::adam::{adam_step, AdamConfig, AdamState};
use crate::velocity::neural::mlp::{Activation, Mlp, Tape};

/// Losses above this are treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

/// Positive per-time weight `w_t` of the regression loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TimeWeight {
    Constant { value: f64 },
    /// `start + (end − start) t`
    Linear { start: f64, end: f64 },
}

impl Default for TimeWeight {
    fn default() -> Self {
        TimeWeight::Constant { value: 1.0 }
    }
}

impl TimeWeight {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            TimeWeight::Constant { value } => value,
            TimeWeight::Linear { start, end } => start + (end - start) * t,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            TimeWeight::Constant { value } => value > 0.0,
            TimeWeight::Linear { start, end } => start > 0.0 && end > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("time weights must be positive"))
        }
    }
}

/// How the training time of each example is drawn.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TimeSampling {
    /// `t ~ U[0, 1)`
    #[default]
    Uniform,
    /// `t` uniform on `{0, 1/k, …, (k−1)/k}`
    Grid { k: usize },
    Fixed { t: f64 },
}

impl TimeSampling {
    fn draw(&self, rng: &mut RngState) -> f64 {
        match *self {
            TimeSampling::Uniform => rng.uniform(),
            TimeSampling::Grid { k } => rng.index(k) as f64 / k as f64,
            TimeSampling::Fixed { t } => t,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// λ in `λ‖θ‖²`
    pub l2_penalty: f64,
    pub time_weight: TimeWeight,
    pub time_sampling: TimeSampling,
    pub ema_decay: Option<f64>,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            iterations: 2000,
            batch_size: 256,
            learning_rate: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            l2_penalty: 0.0,
            time_weight: TimeWeight::default(),
            time_sampling: TimeSampling::Uniform,
            ema_decay: None,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be > 0"));
        }
        if !(self.l2_penalty >= 0.0) || !self.l2_penalty.is_finite() {
            return Err(Error::invalid("L2 penalty must be >= 0"));
        }
        if self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::invalid("batch size and log interval must be >= 1"));
        }
        if self.hidden.iter().any(|w| *w == 0) {
            return Err(Error::invalid("hidden widths must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::invalid("Adam betas must lie in [0, 1) and eps > 0"));
        }
        if let Some(d) = self.ema_decay {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::invalid("EMA decay must lie in [0, 1)"));
            }
        }
        match self.time_sampling {
            TimeSampling::Grid { k: 0 } => return Err(Error::invalid("time grid needs k >= 1")),
            TimeSampling::Fixed { t } if !(0.0..=1.0).contains(&t) => {
                return Err(Error::invalid("fixed training time must lie in [0, 1]"))
            }
            _ => {}
        }
        self.time_weight.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Linear feature map `H` (`k × d`): the loss penalises `H·(target − v)`
/// instead of the raw residual.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    matrix: Matrix,
}

impl FeatureMap {
    pub fn new(matrix: Matrix) -> Result<Self> {
        if matrix.rows() == 0 || !crate::linalg::all_finite(matrix.as_slice()) {
            return Err(Error::invalid("feature map needs k >= 1 finite rows"));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedVelocity {
    pub net: Mlp,
    pub curve: Vec<CurvePoint>,
}

/// Mean weighted squared residual plus `λ‖θ‖²`, and its exact gradient.
///
/// The residual of example `i` is `ẋ_t − v(x_t, t)` for the schedule's
/// interpolation of pair `i` at `times[i]` (for the linear schedule,
/// `x1 − x0 − v`), mapped through `feature` when one is given.
pub fn loss_and_grad(
    net: &Mlp,
    batch: &Coupling,
    times: &[f64],
    schedule: &Schedule,
    cfg: &TrainConfig,
    feature: Option<&FeatureMap>,
) -> Result<(f64, Vec<f64>)> {
    check_dim(batch.n(), times.len())?;
    check_dim(net.state_dim(), batch.dim())?;
    if let Some(f) = feature {
        check_dim(batch.dim(), f.matrix.cols())?;
    }
    let scale = 1.0 / batch.n() as f64;
    let mut grads = vec![0.0; net.n_params()];
    let mut tape = Tape::default();
    let mut loss = 0.0;
    for (i, &t) in times.iter().enumerate() {
        let (x0, x1) = batch.pair(i);
        let (xt, target) = schedule.interpolate(x1, x0, t)?;
        let out = net.forward_taped(&xt, t, &mut tape);
        let resid: Vec<f64> = target.iter().zip(out).map(|(a, b)| a - b).collect();
        let w = cfg.time_weight.at(t);
        let grad_out = match feature {
            None => {
                loss += w * crate::linalg::norm_sq(&resid);
                resid.iter().map(|r| -2.0 * w * scale * r).collect::<Vec<_>>()
            }
            Some(f) => {
                let hr = f.matrix.mul_vec(&resid);
                loss += w * crate::linalg::norm_sq(&hr);
                let mut g = f.matrix.tr_mul_vec(&hr);
                crate::linalg::scale(&mut g, -2.0 * w * scale);
                g
            }
        };
        net.backward(&tape, &grad_out, &mut grads);
    }
    loss *= scale;
    if cfg.l2_penalty > 0.0 {
        loss += cfg.l2_penalty * net.param_norm_sq();
        crate::linalg::axpy(2.0 * cfg.l2_penalty, net.params(), &mut grads);
    }
    Ok((loss, grads))
}

/// Minibatch Adam on [`loss_and_grad`]. Pairs are resampled with replacement
/// each iteration and every example gets a fresh time from `cfg.time_sampling`.
pub fn train_velocity(
    pairs: &Coupling,
    schedule: &Schedule,
    cfg: &TrainConfig,
    rng: &mut RngState,
    feature: Option<&FeatureMap>,
) -> Result<TrainedVelocity> {
    cfg.validate()?;
    schedule.validate()?;
    let mut net = Mlp::random(pairs.dim(), &cfg.hidden, cfg.activation, rng)?;
    let adam = cfg.adam();
    let mut state = AdamState::new(net.n_params());
    let mut ema = cfg.ema_decay.map(|_| net.params().to_vec());
    let mut curve = Vec::new();
    for it in 0..cfg.iterations {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.index(pairs.n())).collect();
        let batch = pairs.select(&idx)?;
        let times: Vec<f64> = (0..cfg.batch_size).map(|_| cfg.time_sampling.draw(rng)).collect();
        let (loss, grads) = loss_and_grad(&net, &batch, &times, schedule, cfg, feature)?;
        if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
            return Err(Error::Divergence { iteration: it, loss });
        }
        if it % cfg.log_every == 0 || it + 1 == cfg.iterations {
            curve.push(CurvePoint { iteration: it, loss });
        }
        adam_step(&mut net, &grads, &mut state, &adam)?;
        if !crate::linalg::all_finite(net.params()) {
            return Err(Error::Divergence { iteration: it, loss: f64::NAN });
        }
        if let (Some(avg), Some(decay)) = (ema.as_mut(), cfg.ema_decay) {
            for (a, p) in avg.iter_mut().zip(net.params()) {
                *a = decay * *a + (1.0 - decay) * p;
            }
        }
    }
    if let Some(avg) = ema {
        net.params_mut().copy_from_slice(&avg);
    }
    Ok(TrainedVelocity { net, curve })
}

/// One-step map `T(z) = z + v(z, 0)`.
#[derive(Clone, Debug)]
pub struct OneStepMap {
    pub net: Mlp,
}

impl OneStepMap {
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        let v = self.net.forward(z, 0.0);
        z.iter().zip(v).map(|(a, b)| a + b).collect()
    }

    pub fn apply_cloud(&self, cloud: &crate::cloud::PointCloud) -> Result<crate::cloud::PointCloud> {
        let data = cloud.rows().flat_map(|r| self.apply(r)).collect();
        crate::cloud::PointCloud::new(cloud.n(), cloud.dim(), data)
    }
}

/// Fits `v(·, 0)` to the displacement `z1 − z0` of a flow's endpoint coupling.
pub fn distill_one_step(
    flow_pairs: &Coupling,
    cfg: &TrainConfig,
    rng: &mut RngState,
) -> Result<(OneStepMap, Vec<CurvePoint>)> {
    let cfg = TrainConfig {
        time_sampling: TimeSampling::Fixed { t: 0.0 },
        ..cfg.clone()
    };
    let trained = train_velocity(flow_pairs, &Schedule::Linear, &cfg, rng, None)?;
    Ok((OneStepMap { net: trained.net }, trained.curve))
}
