//! Interpolation schedules `X_t = α_t X1 + β_t X0` with closed-form derivatives.
//!
//! The second argument of an interpolation is either the source sample `X0` or,
//! for the diffusion-derived schedules, a standard Gaussian `ξ`; the algebra is
//! the same. [`EtaSigma`] re-expresses a schedule through the drift/diffusion
//! pair of the equivalent Ornstein–Uhlenbeck noising process, which is how the
//! diffusion literature parameterises the probability-flow ODE target.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::check_dim;

/// Interior margin used when a caller opts into clamping near singular endpoints.
pub const INTERIOR_EPS: f64 = 1e-5;

fn default_a() -> f64 {
    19.9
}

fn default_b() -> f64 {
    0.1
}

fn default_sigma_min() -> f64 {
    0.01
}

/// Monotone curve `α: [0,1] → [0,1]` with `α(1) = 1`, used to time-change a straight path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AlphaCurve {
    /// The exponential α of the VP family.
    Vp {
        #[serde(default = "default_a")]
        a: f64,
        #[serde(default = "default_b")]
        b: f64,
    },
    /// `α(t) = t^p`
    Power { p: f64 },
}

impl AlphaCurve {
    fn eval(&self, t: f64) -> (f64, f64) {
        match *self {
            AlphaCurve::Vp { a, b } => vp_alpha(a, b, t),
            AlphaCurve::Power { p } => (t.powf(p), p * t.powf(p - 1.0)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Schedule {
    /// `α = t`, `β = 1 − t`
    Linear,
    /// Variance preserving: exponential α, `β = √(1 − α²)`.
    Vp {
        #[serde(default = "default_a")]
        a: f64,
        #[serde(default = "default_b")]
        b: f64,
    },
    /// Sub-variance preserving: exponential α, `β = 1 − α²`.
    SubVp {
        #[serde(default = "default_a")]
        a: f64,
        #[serde(default = "default_b")]
        b: f64,
    },
    /// Variance exploding: `α = 1`, `β = σ_min √(r^{2(1−t)} − 1)`, `r = σ_max/σ_min`.
    Ve {
        #[serde(default = "default_sigma_min")]
        sigma_min: f64,
        sigma_max: f64,
    },
    /// VP with its exponential α replaced by `α = t`: `β = √(1 − t²)`.
    ConstSpeedVp,
    /// `β = 1 − α` for an arbitrary α curve: straight paths, non-uniform speed.
    StraightReparam { alpha: AlphaCurve },
}

/// `(α, β, α̇, β̇)` at one time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleValues {
    pub alpha: f64,
    pub beta: f64,
    pub alpha_dot: f64,
    pub beta_dot: f64,
}

/// How to treat times where the schedule is singular.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SingularityPolicy {
    /// Fail with [`Error::Singular`].
    #[default]
    Strict,
    /// Clamp `t` into `[INTERIOR_EPS, 1 − INTERIOR_EPS]` first.
    ClampInterior,
}

fn vp_alpha(a: f64, b: f64, t: f64) -> (f64, f64) {
    let s = 1.0 - t;
    let alpha = (-0.25 * a * s * s - 0.5 * b * s).exp();
    (alpha, alpha * (0.5 * a * s + 0.5 * b))
}

/// `1 − α²` for the VP α, accurate near `t = 1`.
fn vp_one_minus_alpha_sq(a: f64, b: f64, t: f64) -> f64 {
    let s = 1.0 - t;
    -(2.0 * (-0.25 * a * s * s - 0.5 * b * s)).exp_m1()
}

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::TimeDomain {
            t,
            domain: "[0, 1]",
        })
    }
}

impl Schedule {
    pub fn vp() -> Self {
        Schedule::Vp {
            a: default_a(),
            b: default_b(),
        }
    }

    pub fn sub_vp() -> Self {
        Schedule::SubVp {
            a: default_a(),
            b: default_b(),
        }
    }

    /// Name used in configuration files and reports.
    pub fn name(&self) -> &'static str {
        match self {
            Schedule::Linear => "linear",
            Schedule::Vp { .. } => "vp",
            Schedule::SubVp { .. } => "sub-vp",
            Schedule::Ve { .. } => "ve",
            Schedule::ConstSpeedVp => "const-speed-vp",
            Schedule::StraightReparam { .. } => "straight-reparam",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Schedule::Linear | Schedule::ConstSpeedVp => true,
            Schedule::Vp { a, b } | Schedule::SubVp { a, b } => {
                *a >= 0.0 && *b >= 0.0 && a + b > 0.0 && a.is_finite() && b.is_finite()
            }
            Schedule::Ve {
                sigma_min,
                sigma_max,
            } => *sigma_min > 0.0 && sigma_max > sigma_min && sigma_max.is_finite(),
            Schedule::StraightReparam { alpha } => match alpha {
                AlphaCurve::Vp { a, b } => *a >= 0.0 && *b >= 0.0 && a + b > 0.0,
                AlphaCurve::Power { p } => *p >= 1.0 && p.is_finite(),
            },
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid schedule parameters: {self:?}")))
        }
    }

    /// `(α, β, α̇, β̇)` in closed form. Derivatives that blow up at `t = 1`
    /// (VP, VE, const-speed VP) are reported there as `-∞`.
    pub fn eval(&self, t: f64) -> Result<ScheduleValues> {
        check_time(t)?;
        let v = match *self {
            Schedule::Linear => ScheduleValues {
                alpha: t,
                beta: 1.0 - t,
                alpha_dot: 1.0,
                beta_dot: -1.0,
            },
            Schedule::Vp { a, b } => {
                let (alpha, alpha_dot) = vp_alpha(a, b, t);
                let beta = vp_one_minus_alpha_sq(a, b, t).sqrt();
                let beta_dot = if beta > 0.0 {
                    -alpha * alpha_dot / beta
                } else {
                    f64::NEG_INFINITY
                };
                ScheduleValues {
                    alpha,
                    beta,
                    alpha_dot,
                    beta_dot,
                }
            }
            Schedule::SubVp { a, b } => {
                let (alpha, alpha_dot) = vp_alpha(a, b, t);
                ScheduleValues {
                    alpha,
                    beta: vp_one_minus_alpha_sq(a, b, t),
                    alpha_dot,
                    beta_dot: -2.0 * alpha * alpha_dot,
                }
            }
            Schedule::Ve {
                sigma_min,
                sigma_max,
            } => {
                let log_r = (sigma_max / sigma_min).ln();
                let q = 2.0 * (1.0 - t) * log_r;
                let root = q.exp_m1().sqrt();
                let beta_dot = if root > 0.0 {
                    -sigma_min * log_r * q.exp() / root
                } else {
                    f64::NEG_INFINITY
                };
                ScheduleValues {
                    alpha: 1.0,
                    beta: sigma_min * root,
                    alpha_dot: 0.0,
                    beta_dot,
                }
            }
            Schedule::ConstSpeedVp => {
                let beta = ((1.0 - t) * (1.0 + t)).sqrt();
                ScheduleValues {
                    alpha: t,
                    beta,
                    alpha_dot: 1.0,
                    beta_dot: if beta > 0.0 { -t / beta } else { f64::NEG_INFINITY },
                }
            }
            Schedule::StraightReparam { ref alpha } => {
                let (a, a_dot) = alpha.eval(t);
                ScheduleValues {
                    alpha: a,
                    beta: 1.0 - a,
                    alpha_dot: a_dot,
                    beta_dot: -a_dot,
                }
            }
        };
        Ok(v)
    }

    /// `x_t = α x1 + β x0` and `ẋ_t = α̇ x1 + β̇ x0`.
    pub fn interpolate(&self, x1: &[f64], x0: &[f64], t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim(x1.len(), x0.len())?;
        let v = self.eval(t)?;
        let xt = x1
            .iter()
            .zip(x0)
            .map(|(a, b)| v.alpha * a + v.beta * b)
            .collect();
        let xdot = x1
            .iter()
            .zip(x0)
            .map(|(a, b)| v.alpha_dot * a + v.beta_dot * b)
            .collect();
        Ok((xt, xdot))
    }

    /// The `(η, σ²)` parameterisation of this schedule. Fails when α or β
    /// vanishes somewhere inside `(0, 1)`.
    pub fn eta_sigma(&self) -> Result<EtaSigma> {
        self.validate()?;
        for k in 1..1000 {
            let t = k as f64 / 1000.0;
            let v = self.eval(t)?;
            if !(v.alpha > 0.0 && v.beta > 0.0) {
                return Err(Error::Singular(format!(
                    "{} has alpha = {} and beta = {} at t = {t}",
                    self.name(),
                    v.alpha,
                    v.beta
                )));
            }
        }
        Ok(EtaSigma {
            schedule: self.clone(),
        })
    }

    /// Probability-flow regression target `Ỹ_t = −η_t x_t − σ_t²/(2β_t) ξ`,
    /// computed through `(η, σ²)` rather than from `(α̇, β̇)` directly.
    pub fn pfode_target(
        &self,
        x1: &[f64],
        xi: &[f64],
        t: f64,
        policy: SingularityPolicy,
    ) -> Result<Vec<f64>> {
        check_dim(x1.len(), xi.len())?;
        let es = self.eta_sigma()?;
        let t = match policy {
            SingularityPolicy::Strict => t,
            SingularityPolicy::ClampInterior => t.clamp(INTERIOR_EPS, 1.0 - INTERIOR_EPS),
        };
        let v = self.eval(t)?;
        let eta = es.eta(t)?;
        let sigma_sq = es.sigma_sq(t)?;
        let c = sigma_sq / (2.0 * v.beta);
        Ok(x1
            .iter()
            .zip(xi)
            .map(|(a, e)| {
                let xt = v.alpha * a + v.beta * e;
                -eta * xt - c * e
            })
            .collect())
    }
}

/// `η_t = −α̇_t/α_t` and `σ_t² = 2β_t²(α̇_t/α_t − β̇_t/β_t)` for a schedule whose α and β
/// stay positive on `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EtaSigma {
    schedule: Schedule,
}

impl EtaSigma {
    fn values(&self, t: f64) -> Result<ScheduleValues> {
        let v = self.schedule.eval(t)?;
        if !(v.alpha > 0.0 && v.beta > 0.0) || !v.beta_dot.is_finite() {
            return Err(Error::Singular(format!(
                "{}: eta/sigma undefined at t = {t}",
                self.schedule.name()
            )));
        }
        Ok(v)
    }

    pub fn eta(&self, t: f64) -> Result<f64> {
        let v = self.values(t)?;
        Ok(-v.alpha_dot / v.alpha)
    }

    pub fn sigma_sq(&self, t: f64) -> Result<f64> {
        let v = self.values(t)?;
        Ok(2.0 * v.beta * (v.beta * v.alpha_dot / v.alpha - v.beta_dot))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_schedules() -> Vec<Schedule> {
        vec![
            Schedule::Linear,
            Schedule::vp(),
            Schedule::sub_vp(),
            Schedule::Ve {
                sigma_min: 0.01,
                sigma_max: 20.0,
            },
            Schedule::ConstSpeedVp,
            Schedule::StraightReparam {
                alpha: AlphaCurve::Vp { a: 19.9, b: 0.1 },
            },
            Schedule::StraightReparam {
                alpha: AlphaCurve::Power { p: 2.0 },
            },
        ]
    }

    #[test]
    fn linear_midpoint() {
        let v = Schedule::Linear.eval(0.5).unwrap();
        assert_eq!((v.alpha, v.beta, v.alpha_dot, v.beta_dot), (0.5, 0.5, 1.0, -1.0));
        let v = Schedule::Linear.eval(0.0).unwrap();
        assert_eq!((v.alpha, v.beta), (0.0, 1.0));
    }

    #[test]
    fn vp_endpoints() {
        let v = Schedule::vp().eval(1.0).unwrap();
        assert_eq!((v.alpha, v.beta), (1.0, 0.0));
        let v = Schedule::vp().eval(0.0).unwrap();
        // exp(-19.9/4 - 0.1/2) = exp(-5.025)
        // (40-digit reference values)
        assert!((v.alpha - 0.006_571_586_494_929_615).abs() < 1e-15);
        assert!((v.beta - 0.999_978_406_892_338_7).abs() < 1e-15);
    }

    #[test]
    fn rejects_times_outside_unit_interval() {
        for s in all_schedules() {
            assert!(matches!(s.eval(-0.1), Err(Error::TimeDomain { .. })));
            assert!(matches!(s.eval(1.5), Err(Error::TimeDomain { .. })));
            assert!(s.eval(f64::NAN).is_err());
        }
    }

    #[test]
    fn boundary_values() {
        for s in [Schedule::Linear, Schedule::vp(), Schedule::sub_vp()] {
            let v = s.eval(1.0).unwrap();
            assert!((v.alpha - 1.0).abs() < 1e-15 && v.beta.abs() < 1e-15, "{s:?}");
        }
        let ve = Schedule::Ve {
            sigma_min: 0.01,
            sigma_max: 20.0,
        };
        assert_eq!(ve.eval(1.0).unwrap().beta, 0.0);
        assert_eq!(ve.eval(0.3).unwrap().alpha, 1.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for s in all_schedules() {
            for k in 0..50 {
                let t = 0.01 + 0.98 * (k as f64 + 0.5) / 50.0;
                let v = s.eval(t).unwrap();
                let p = s.eval(t + h).unwrap();
                let m = s.eval(t - h).unwrap();
                let fd_a = (p.alpha - m.alpha) / (2.0 * h);
                let fd_b = (p.beta - m.beta) / (2.0 * h);
                let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-3);
                assert!(rel(v.alpha_dot, fd_a) < 1e-5, "{s:?} alpha_dot t={t}");
                assert!(rel(v.beta_dot, fd_b) < 1e-5, "{s:?} beta_dot t={t}");
            }
        }
    }

    #[test]
    fn interpolation_examples() {
        let (xt, xd) = Schedule::Linear
            .interpolate(&[1.0, 0.0], &[0.0, 1.0], 0.25)
            .unwrap();
        assert_eq!(xt, vec![0.25, 0.75]);
        assert_eq!(xd, vec![1.0, -1.0]);

        for t in [0.0, 0.3, 0.9, 1.0] {
            let (xt, _) = Schedule::Linear.interpolate(&[2.0, -1.0], &[2.0, -1.0], t).unwrap();
            assert!((xt[0] - 2.0).abs() < 1e-15 && (xt[1] + 1.0).abs() < 1e-15);
        }

        let ve = Schedule::Ve {
            sigma_min: 0.01,
            sigma_max: 20.0,
        };
        let (xt, xd) = ve.interpolate(&[1.0], &[1.0], 0.5).unwrap();
        // r = 2000: beta(0.5) = 0.01·√1999, beta_dot(0.5) = −0.01·ln(2000)·2000/√1999
        let beta = 0.01 * 1999f64.sqrt();
        let beta_dot = -0.01 * 2000f64.ln() * 2000.0 / 1999f64.sqrt();
        assert!((xt[0] - (1.0 + beta)).abs() < 1e-12);
        assert!((xd[0] - beta_dot).abs() < 1e-10);

        assert!(Schedule::Linear.interpolate(&[1.0], &[1.0, 2.0], 0.5).is_err());
    }

    #[test]
    fn eta_sigma_closed_forms() {
        let es = Schedule::Linear.eta_sigma().unwrap();
        for t in [0.1, 0.37, 0.5, 0.93] {
            let expected = 2.0 * (1.0 - t) / t;
            assert!((es.sigma_sq(t).unwrap() - expected).abs() < 1e-12);
            assert!((es.eta(t).unwrap() + 1.0 / t).abs() < 1e-12);
        }

        let ve = Schedule::Ve {
            sigma_min: 0.01,
            sigma_max: 50.0,
        };
        assert_eq!(ve.eta_sigma().unwrap().eta(0.4).unwrap(), 0.0);

        // η = −d/dt log α, checked by differencing log α.
        let vp = Schedule::vp();
        let es = vp.eta_sigma().unwrap();
        let h = 1e-6;
        for t in [0.05, 0.3, 0.6, 0.95] {
            let la = |t: f64| vp.eval(t).unwrap().alpha.ln();
            let fd = -(la(t + h) - la(t - h)) / (2.0 * h);
            assert!((es.eta(t).unwrap() - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn eta_sigma_rejects_vanishing_alpha() {
        let s = Schedule::StraightReparam {
            alpha: AlphaCurve::Power { p: 1.0 },
        };
        // α = t is positive on (0,1): accepted.
        assert!(s.eta_sigma().is_ok());
        assert!(Schedule::Linear.eta_sigma().unwrap().eta(0.0).is_err());
        assert!(Schedule::Linear
            .pfode_target(&[1.0], &[1.0], 1.0, SingularityPolicy::Strict)
            .is_err());
        assert!(Schedule::Linear
            .pfode_target(&[1.0], &[1.0], 1.0, SingularityPolicy::ClampInterior)
            .is_ok());
    }

    #[test]
    fn pfode_target_examples() {
        let y = Schedule::Linear
            .pfode_target(&[2.0], &[1.0], 0.5, SingularityPolicy::Strict)
            .unwrap();
        assert!((y[0] - 1.0).abs() < 1e-12);

        let ve = Schedule::Ve {
            sigma_min: 0.01,
            sigma_max: 20.0,
        };
        let y = ve
            .pfode_target(&[3.0, -1.0], &[0.0, 0.0], 0.4, SingularityPolicy::Strict)
            .unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn straight_reparam_paths_are_collinear() {
        let s = Schedule::StraightReparam {
            alpha: AlphaCurve::Vp { a: 19.9, b: 0.1 },
        };
        let x0 = [1.0, -2.0, 0.5];
        let x1 = [-3.0, 4.0, 2.0];
        for k in 0..=20 {
            let t = k as f64 / 20.0;
            let (xt, _) = s.interpolate(&x1, &x0, t).unwrap();
            // xt - x0 must be parallel to x1 - x0
            let d: Vec<f64> = x1.iter().zip(&x0).map(|(a, b)| a - b).collect();
            let r: Vec<f64> = xt.iter().zip(&x0).map(|(a, b)| a - b).collect();
            let lam = crate::linalg::dot(&r, &d) / crate::linalg::dot(&d, &d);
            let resid: f64 = r.iter().zip(&d).map(|(ri, di)| (ri - lam * di).abs()).sum();
            assert!(resid <= 1e-12, "t={t} resid={resid}");
            assert!((-1e-12..=1.0 + 1e-12).contains(&lam));
        }
    }

    #[test]
    fn config_names() {
        let s: Schedule = serde_json::from_str(r#"{"name":"sub-vp"}"#).unwrap();
        assert_eq!(s, Schedule::sub_vp());
        let s: Schedule = serde_json::from_str(r#"{"name":"const-speed-vp"}"#).unwrap();
        assert_eq!(s, Schedule::ConstSpeedVp);
        let s: Schedule = serde_json::from_str(r#"{"name":"ve","sigma_max":5.0}"#).unwrap();
        assert_eq!(
            s,
            Schedule::Ve {
                sigma_min: 0.01,
                sigma_max: 5.0
            }
        );
    }
}
