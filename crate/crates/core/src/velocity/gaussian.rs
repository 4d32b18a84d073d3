//! Closed-form conditional-expectation velocity between two independent
//! diagonal Gaussians.
//!
//! `X_t = α_t X1 + β_t X0` is Gaussian, so per coordinate
//!
//! ```text
//! v(z, t) = E[Ẋ_t] + Cov(Ẋ_t, X_t)/Var(X_t) · (z − E[X_t])
//! ```
//!
//! For the linear schedule this field is defined on all of `[0, 1]` and its
//! flow is the monotone map `μ1 + (σ1/σ0)(z − μ0)`.

use crate::distributions::DiagonalGaussian;
use crate::error::{Error, Result};
use crate::linalg::check_dim;
use crate::schedules::Schedule;
use crate::velocity::VelocityField;

#[derive(Clone, Debug)]
pub struct GaussianVelocity {
    source: DiagonalGaussian,
    target: DiagonalGaussian,
    schedule: Schedule,
    singular: bool,
}

impl GaussianVelocity {
    pub fn new(source: DiagonalGaussian, target: DiagonalGaussian) -> Result<Self> {
        Self::with_schedule(source, target, Schedule::Linear)
    }

    pub fn with_schedule(source: DiagonalGaussian, target: DiagonalGaussian, schedule: Schedule) -> Result<Self> {
        source.validate()?;
        target.validate()?;
        check_dim(source.dim(), target.dim())?;
        schedule.validate()?;
        let singular = match schedule.eval(1.0) {
            Ok(sv) => !(sv.alpha_dot.is_finite() && sv.beta_dot.is_finite()),
            Err(_) => true,
        };
        Ok(Self {
            source,
            target,
            schedule,
            singular,
        })
    }

    /// The monotone (and optimal) map between the two marginals.
    pub fn monotone_map(&self, z: &[f64]) -> Vec<f64> {
        let (m0, s0) = (self.source.mean.as_slice(), self.source.stddev.as_slice());
        let (m1, s1) = (self.target.mean.as_slice(), self.target.stddev.as_slice());
        (0..z.len()).map(|k| m1[k] + s1[k] / s0[k] * (z[k] - m0[k])).collect()
    }
}

impl VelocityField for GaussianVelocity {
    fn dim(&self) -> usize {
        self.source.dim()
    }

    fn velocity_into(&self, z: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        check_dim(self.dim(), z.len())?;
        let sv = self.schedule.eval(t)?;
        let (m0, s0) = (self.source.mean.as_slice(), self.source.stddev.as_slice());
        let (m1, s1) = (self.target.mean.as_slice(), self.target.stddev.as_slice());
        for k in 0..z.len() {
            let (v0, v1) = (s0[k] * s0[k], s1[k] * s1[k]);
            let var = sv.alpha * sv.alpha * v1 + sv.beta * sv.beta * v0;
            if !(var > 0.0) {
                return Err(Error::Singular(format!("degenerate interpolation at t = {t}")));
            }
            let cov = sv.alpha * sv.alpha_dot * v1 + sv.beta * sv.beta_dot * v0;
            let mean_t = sv.alpha * m1[k] + sv.beta * m0[k];
            out[k] = sv.alpha_dot * m1[k] + sv.beta_dot * m0[k] + cov / var * (z[k] - mean_t);
        }
        if !crate::linalg::all_finite(out) {
            return Err(Error::NonFinite(format!("gaussian velocity at t = {t}")));
        }
        Ok(())
    }

    fn singular_at_terminal(&self) -> bool {
        self.singular
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::PointCloud;
    use crate::ode::{integrate, SolverSpec};

    fn g(m: f64, s: f64) -> DiagonalGaussian {
        DiagonalGaussian::new(vec![m], vec![s]).unwrap()
    }

    #[test]
    fn independent_standard_gaussians() {
        // E[X1 − X0 | X_t = z] = (2t − 1)/(t² + (1 − t)²) z
        let v = GaussianVelocity::new(g(0.0, 1.0), g(0.0, 1.0)).unwrap();
        for t in [0.0, 0.2, 0.5, 0.9, 1.0] {
            let want = (2.0 * t - 1.0) / (t * t + (1.0 - t) * (1.0 - t)) * 1.3;
            assert!((v.velocity(&[1.3], t).unwrap()[0] - want).abs() < 1e-14);
        }
        assert!(!v.singular_at_terminal());
    }

    #[test]
    fn flow_is_the_monotone_map() {
        let v = GaussianVelocity::new(g(0.0, 1.0), g(3.0, 0.5)).unwrap();
        let start = PointCloud::from_scalars(&[-2.0, 0.0, 1.5]).unwrap();
        let end = integrate(&v, &start, &SolverSpec::rk45(1e-10, 1e-10)).unwrap();
        for (z0, z1) in start.rows().zip(end.last().rows()) {
            assert!((z1[0] - v.monotone_map(z0)[0]).abs() < 1e-7);
        }
    }

    #[test]
    fn vp_schedule_is_singular_at_one() {
        let v = GaussianVelocity::with_schedule(g(0.0, 1.0), g(1.0, 1.0), Schedule::vp()).unwrap();
        assert!(v.singular_at_terminal());
    }
}
