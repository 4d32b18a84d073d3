//! Closed-form conditional-expectation velocity for a Gaussian source and a
//! finite set of target atoms.
//!
//! With `X0 ~ N(0, σ₀² I)` independent of `X1 ~ Uniform{x1ⁱ}` and
//! `X_t = α_t X1 + β_t X0`, conditioning on `X_t = z` puts posterior weight
//! `wᵢ ∝ ρ((z − α_t x1ⁱ)/β_t)` on atom `i` (ρ the source density), so
//!
//! ```text
//! v(z, t) = α̇_t x̄ + (β̇_t/β_t)(z − α_t x̄),    x̄ = Σ wᵢ x1ⁱ
//! ```
//!
//! For the linear schedule this is `Σ wᵢ (x1ⁱ − z)/(1 − t)`. Weights are formed
//! in log space; near `t = 1` the raw densities underflow long before the
//! softmax does.

use crate::cloud::PointCloud;
use crate::distributions::DiagonalGaussian;
use crate::error::{Error, Result};
use crate::linalg::{self, check_dim, Matrix};
use crate::ode::{integrate, SolverSpec};
use crate::rng::RngState;
use crate::schedules::{Schedule, ScheduleValues};
use crate::velocity::{softmax_in_place, VelocityField};

#[derive(Clone, Debug)]
pub struct ExactVelocity {
    targets: PointCloud,
    source_stddev: f64,
    schedule: Schedule,
}

struct Posterior {
    sv: ScheduleValues,
    weights: Vec<f64>,
    mean: Vec<f64>,
}

impl ExactVelocity {
    /// Field of the linear interpolation.
    pub fn new(targets: PointCloud, source_stddev: f64) -> Result<Self> {
        Self::with_schedule(targets, source_stddev, Schedule::Linear)
    }

    pub fn with_schedule(targets: PointCloud, source_stddev: f64, schedule: Schedule) -> Result<Self> {
        if !(source_stddev > 0.0) || !source_stddev.is_finite() {
            return Err(Error::invalid(format!(
                "source stddev must be > 0 (got {source_stddev})"
            )));
        }
        schedule.validate()?;
        Ok(Self {
            targets,
            source_stddev,
            schedule,
        })
    }

    pub fn targets(&self) -> &PointCloud {
        &self.targets
    }

    pub fn source_stddev(&self) -> f64 {
        self.source_stddev
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    fn posterior(&self, z: &[f64], t: f64) -> Result<Posterior> {
        check_dim(self.targets.dim(), z.len())?;
        if !(0.0..1.0).contains(&t) {
            return Err(Error::TimeDomain { t, domain: "[0, 1)" });
        }
        let sv = self.schedule.eval(t)?;
        if !(sv.beta > 0.0) {
            return Err(Error::Singular(format!("beta vanishes at t = {t}")));
        }
        let inv = 1.0 / (2.0 * (sv.beta * self.source_stddev).powi(2));
        let mut weights: Vec<f64> = self
            .targets
            .rows()
            .map(|x1| {
                let d: f64 = x1
                    .iter()
                    .zip(z)
                    .map(|(a, zi)| (zi - sv.alpha * a).powi(2))
                    .sum();
                -d * inv
            })
            .collect();
        softmax_in_place(&mut weights);
        let mut mean = vec![0.0; z.len()];
        for (w, x1) in weights.iter().zip(self.targets.rows()) {
            linalg::axpy(*w, x1, &mut mean);
        }
        Ok(Posterior { sv, weights, mean })
    }

    /// Softmax posterior weights over the target atoms at `(z, t)`.
    pub fn weights(&self, z: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok(self.posterior(z, t)?.weights)
    }

    /// Analytic `∂v/∂z`.
    pub fn jacobian(&self, z: &[f64], t: f64) -> Result<Matrix> {
        let Posterior { sv, weights, mean } = self.posterior(z, t)?;
        let d = z.len();
        let ratio = sv.beta_dot / sv.beta;
        // ∂x̄/∂z = α/(β²σ₀²) · Cov_w(x1)
        let gain = (sv.alpha_dot - sv.alpha * ratio) * sv.alpha
            / (sv.beta * self.source_stddev).powi(2);
        let mut jac = Matrix::zeros(d, d);
        for (w, x1) in weights.iter().zip(self.targets.rows()) {
            if *w == 0.0 {
                continue;
            }
            for a in 0..d {
                let da = x1[a] - mean[a];
                for b in 0..d {
                    jac[(a, b)] += gain * w * da * (x1[b] - mean[b]);
                }
            }
        }
        for a in 0..d {
            jac[(a, a)] += ratio;
        }
        Ok(jac)
    }

    /// Pushes `n` fresh source draws through the flow with `steps` Euler steps
    /// (the last step lands exactly on the locally dominant atom) and returns
    /// the largest distance from an endpoint to its nearest atom.
    pub fn data_recovery_check(&self, n: usize, steps: usize, rng: &mut RngState) -> Result<f64> {
        let d = self.targets.dim();
        let start = DiagonalGaussian::isotropic(d, self.source_stddev)
            .map(crate::distributions::DistributionSpec::Gaussian)?
            .sample(n, rng)?;
        let traj = integrate(self, &start, &SolverSpec::euler(steps))?;
        let end = traj.last();
        Ok(end
            .rows()
            .map(|z| {
                self.targets
                    .rows()
                    .map(|x| linalg::dist_sq(x, z))
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .fold(0.0, f64::max))
    }
}

impl VelocityField for ExactVelocity {
    fn dim(&self) -> usize {
        self.targets.dim()
    }

    fn velocity_into(&self, z: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let Posterior { sv, mean, .. } = self.posterior(z, t)?;
        let ratio = sv.beta_dot / sv.beta;
        for ((o, m), zi) in out.iter_mut().zip(&mean).zip(z) {
            *o = sv.alpha_dot * m + ratio * (zi - sv.alpha * m);
        }
        Ok(())
    }

    fn singular_at_terminal(&self) -> bool {
        true
    }
}
