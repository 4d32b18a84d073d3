//! Quantitative evaluation of couplings, flows and velocity fields.

mod assignment;
mod two_sample;

use serde::{Deserialize, Serialize};

pub use assignment::{hungarian_assignment, relative_l2_cost, wasserstein2, DEFAULT_ASSIGNMENT_CAP};
pub use two_sample::{energy_permutation_test, ks_statistic, marginal_distance, PermutationTest};

use crate::cloud::{Coupling, PointCloud};
use crate::error::{Error, Result};
use crate::linalg;
use crate::ode::TrajectoryEnsemble;
use crate::rng::RngState;
use crate::schedules::Schedule;
use crate::velocity::VelocityField;

/// Step used by the central differences of [`burgers_residual`].
pub const FD_STEP: f64 = 1e-4;

/// Sample mean and its standard error.
pub fn mean_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    if samples.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `∫ E‖(Z1 − Z0) − Ż_t‖² dt` from the recorded states, with `Ż_t` taken as
/// the finite difference over each recorded interval.
pub fn straightness(traj: &TrajectoryEnsemble) -> Result<f64> {
    Ok(straightness_per_particle(traj)?.iter().sum::<f64>() / traj.first().n() as f64)
}

pub fn straightness_per_particle(traj: &TrajectoryEnsemble) -> Result<Vec<f64>> {
    if traj.len() < 2 {
        return Err(Error::invalid("straightness needs at least 2 recorded times"));
    }
    let (z0, z1) = (traj.first(), traj.last());
    let span = traj.times[traj.len() - 1] - traj.times[0];
    let mut out = vec![0.0; z0.n()];
    for (p, acc) in out.iter_mut().enumerate() {
        let chord: Vec<f64> = linalg::sub(z1.row(p), z0.row(p))
            .into_iter()
            .map(|c| c / span)
            .collect();
        for j in 0..traj.len() - 1 {
            let dt = traj.times[j + 1] - traj.times[j];
            let (a, b) = (traj.states[j].row(p), traj.states[j + 1].row(p));
            let dev: f64 = chord
                .iter()
                .zip(a.iter().zip(b))
                .map(|(c, (x, y))| (c - (y - x) / dt).powi(2))
                .sum();
            *acc += dt * dev;
        }
    }
    Ok(out)
}

/// Monte-Carlo estimate of `∫ E‖Ẋ_t − v(X_t, t)‖² dt` over the pairs, with
/// `time_samples` uniform times per pair. Returns the per-pair averages.
pub fn crossing_v_per_pair<V: VelocityField + ?Sized>(
    pairs: &Coupling,
    v: &V,
    schedule: &Schedule,
    time_samples: usize,
    rng: &mut RngState,
) -> Result<Vec<f64>> {
    crossing_v_on(pairs, v, schedule, time_samples, 1.0, rng)
}

/// As [`crossing_v_per_pair`] but integrating over `[0, t_max]` only.
///
/// With an estimated field the residual carries the estimation error divided
/// by `1 − t`, whose square is not integrable at `t = 1`; stopping short of
/// the endpoint keeps the estimator's variance finite. The integrand is a
/// conditional variance bounded by `E‖Ẋ_t‖²`, so the truncated value is
/// smaller by at most `(1 − t_max)` times that.
pub fn crossing_v_on<V: VelocityField + ?Sized>(
    pairs: &Coupling,
    v: &V,
    schedule: &Schedule,
    time_samples: usize,
    t_max: f64,
    rng: &mut RngState,
) -> Result<Vec<f64>> {
    linalg::check_dim(v.dim(), pairs.dim())?;
    if time_samples == 0 {
        return Err(Error::invalid("crossing measure needs >= 1 time sample"));
    }
    if !(t_max > 0.0 && t_max <= 1.0) {
        return Err(Error::invalid(format!("crossing horizon must lie in (0, 1] (got {t_max})")));
    }
    let mut vel = vec![0.0; pairs.dim()];
    (0..pairs.n())
        .map(|i| {
            let (x0, x1) = pairs.pair(i);
            let mut acc = 0.0;
            for _ in 0..time_samples {
                let t = t_max * rng.uniform();
                let (xt, target) = schedule.interpolate(x1, x0, t)?;
                v.velocity_into(&xt, t, &mut vel)?;
                acc += linalg::dist_sq(&target, &vel);
            }
            Ok(t_max * acc / time_samples as f64)
        })
        .collect()
}

pub fn crossing_v<V: VelocityField + ?Sized>(
    pairs: &Coupling,
    v: &V,
    schedule: &Schedule,
    time_samples: usize,
    rng: &mut RngState,
) -> Result<f64> {
    Ok(mean_se(&crossing_v_per_pair(pairs, v, schedule, time_samples, rng)?).0)
}

/// Convex cost `c(u)` of a displacement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ConvexCost {
    /// `‖u‖`
    L1Norm,
    /// `‖u‖²`
    L2Sq,
    /// `‖u‖^p`, `p ≥ 1`
    Lp { p: f64 },
}

impl ConvexCost {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ConvexCost::Lp { p } if !(p >= 1.0) || !p.is_finite() => {
                Err(Error::invalid(format!("cost exponent must be >= 1 (got {p})")))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        match *self {
            ConvexCost::L1Norm => linalg::norm(u),
            ConvexCost::L2Sq => linalg::norm_sq(u),
            ConvexCost::Lp { p } => linalg::norm(u).powf(p),
        }
    }
}

/// `c(right_i − left_i)` for every pair.
pub fn cost_samples(pairs: &Coupling, c: ConvexCost) -> Vec<f64> {
    (0..pairs.n())
        .map(|i| {
            let (x0, x1) = pairs.pair(i);
            c.eval(&linalg::sub(x1, x0))
        })
        .collect()
}

pub fn transport_cost(pairs: &Coupling, c: ConvexCost) -> f64 {
    mean_se(&cost_samples(pairs, c)).0
}

/// Mean of `‖∂_t v + (∂_z v) v‖` over probes × times, by central differences.
/// Times within one step of an end of `[0, 1]` use a one-sided difference.
pub fn burgers_residual<V: VelocityField + ?Sized>(v: &V, probes: &PointCloud, times: &[f64]) -> Result<f64> {
    linalg::check_dim(v.dim(), probes.dim())?;
    if times.is_empty() {
        return Err(Error::invalid("burgers residual needs at least one time"));
    }
    let d = probes.dim();
    let h = FD_STEP;
    let mut total = 0.0;
    let mut plus = vec![0.0; d];
    let mut minus = vec![0.0; d];
    for z in probes.rows() {
        for &t in times {
            let vz = v.velocity(z, t)?;
            let mut res = time_derivative(v, z, t, h)?;
            let mut zp = z.to_vec();
            for k in 0..d {
                zp[k] = z[k] + h;
                v.velocity_into(&zp, t, &mut plus)?;
                zp[k] = z[k] - h;
                v.velocity_into(&zp, t, &mut minus)?;
                zp[k] = z[k];
                for (r, (p, m)) in res.iter_mut().zip(plus.iter().zip(&minus)) {
                    *r += (p - m) / (2.0 * h) * vz[k];
                }
            }
            total += linalg::norm(&res);
        }
    }
    Ok(total / (probes.n() * times.len()) as f64)
}

/// `∂_t v(z, t)`: central where both neighbours are usable, otherwise the
/// second-order one-sided stencil.
fn time_derivative<V: VelocityField + ?Sized>(v: &V, z: &[f64], t: f64, h: f64) -> Result<Vec<f64>> {
    let top_ok = if v.singular_at_terminal() { t + h < 1.0 } else { t + h <= 1.0 };
    let combine = |pts: &[(f64, f64)]| -> Result<Vec<f64>> {
        let mut out = vec![0.0; z.len()];
        for &(dt, w) in pts {
            linalg::axpy(w / h, &v.velocity(z, t + dt)?, &mut out);
        }
        Ok(out)
    };
    if t - h >= 0.0 && top_ok {
        combine(&[(h, 0.5), (-h, -0.5)])
    } else if t - h < 0.0 {
        combine(&[(0.0, -1.5), (h, 2.0), (2.0 * h, -0.5)])
    } else {
        combine(&[(0.0, 1.5), (-h, -2.0), (-2.0 * h, 0.5)])
    }
}

/// Number of pairs `(i, j)` with `left_i < left_j` and `right_i > right_j` (1D).
pub fn monotone_violations(coupling: &Coupling) -> Result<u64> {
    if coupling.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: coupling.dim(),
        });
    }
    let (l, r) = (coupling.left().as_slice(), coupling.right().as_slice());
    let mut order: Vec<usize> = (0..coupling.n()).collect();
    order.sort_by(|&i, &j| l[i].total_cmp(&l[j]).then(r[i].total_cmp(&r[j])));
    let mut seq: Vec<f64> = order.iter().map(|&i| r[i]).collect();
    let mut buf = seq.clone();
    Ok(count_inversions(&mut seq, &mut buf))
}

/// Strict inversions `i < j, a_i > a_j`; sorts `a` as a side effect.
fn count_inversions(a: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = a.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = {
        let (lo, hi) = a.split_at_mut(mid);
        let (blo, bhi) = buf.split_at_mut(mid);
        count_inversions(lo, blo) + count_inversions(hi, bhi)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if a[i] <= a[j] {
            buf[k] = a[i];
            i += 1;
        } else {
            buf[k] = a[j];
            count += (mid - i) as u64;
            j += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&a[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&a[j..n]);
    a.copy_from_slice(&buf[..n]);
    count
}

/// Metrics of one round. Keys are fixed; metrics that were not computed
/// serialise as `null`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub straightness: Option<f64>,
    pub crossing_v: Option<f64>,
    pub cost_l2sq: Option<f64>,
    pub cost_l1: Option<f64>,
    pub cost_p15: Option<f64>,
    pub relative_l2_cost: Option<f64>,
    pub marginal_t025: Option<f64>,
    pub marginal_t05: Option<f64>,
    pub marginal_t075: Option<f64>,
    pub burgers_residual: Option<f64>,
    pub monotone_violations: Option<u64>,
}

impl MetricsReport {
    /// The three transport costs of `pairs`.
    pub fn with_costs(mut self, pairs: &Coupling) -> Self {
        self.cost_l1 = Some(transport_cost(pairs, ConvexCost::L1Norm));
        self.cost_l2sq = Some(transport_cost(pairs, ConvexCost::L2Sq));
        self.cost_p15 = Some(transport_cost(pairs, ConvexCost::Lp { p: 1.5 }));
        self
    }

    pub fn check(&self) -> Result<()> {
        let vals = [
            self.straightness,
            self.crossing_v,
            self.cost_l2sq,
            self.cost_l1,
            self.cost_p15,
            self.marginal_t025,
            self.marginal_t05,
            self.marginal_t075,
            self.burgers_residual,
        ];
        if vals.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite("metrics report entry".into()));
        }
        match self.relative_l2_cost {
            Some(r) if !r.is_finite() => Err(Error::NonFinite("relative_l2_cost".into())),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::velocity::FnField;

    fn coupling1(l: &[f64], r: &[f64]) -> Coupling {
        Coupling::new(PointCloud::from_scalars(l).unwrap(), PointCloud::from_scalars(r).unwrap()).unwrap()
    }

    #[test]
    fn straight_paths_have_zero_straightness() {
        let z0 = PointCloud::from_rows(&[[0.0, 1.0], [2.0, -3.0]]).unwrap();
        let z1 = PointCloud::from_rows(&[[4.0, 4.0], [-1.0, 0.5]]).unwrap();
        let times: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let states = times
            .iter()
            .map(|&t| {
                let data = z0
                    .as_slice()
                    .iter()
                    .zip(z1.as_slice())
                    .map(|(a, b)| t * b + (1.0 - t) * a)
                    .collect();
                PointCloud::new(2, 2, data).unwrap()
            })
            .collect();
        let tr = TrajectoryEnsemble {
            times,
            states,
            evals_used: 0,
        };
        assert!(straightness(&tr).unwrap() < 1e-12);
    }

    #[test]
    fn costs() {
        let c = Coupling::new(
            PointCloud::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap(),
            PointCloud::from_rows(&[[3.0, 4.0], [4.0, 5.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(transport_cost(&c, ConvexCost::L1Norm), 5.0);
        assert_eq!(transport_cost(&c, ConvexCost::L2Sq), 25.0);
        let id = coupling1(&[1.0, 2.0], &[1.0, 2.0]);
        assert_eq!(transport_cost(&id, ConvexCost::Lp { p: 1.5 }), 0.0);
        assert!(ConvexCost::Lp { p: 0.5 }.validate().is_err());
    }

    #[test]
    fn monotone_examples() {
        assert_eq!(monotone_violations(&coupling1(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0])).unwrap(), 0);
        assert_eq!(
            monotone_violations(&coupling1(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0])).unwrap(),
            6
        );
        // unsorted left side
        assert_eq!(monotone_violations(&coupling1(&[3.0, 1.0, 2.0], &[0.0, 5.0, 6.0])).unwrap(), 2);
        let c2 = Coupling::new(
            PointCloud::from_rows(&[[0.0, 0.0]]).unwrap(),
            PointCloud::from_rows(&[[0.0, 0.0]]).unwrap(),
        )
        .unwrap();
        assert!(monotone_violations(&c2).is_err());
    }

    #[test]
    fn burgers_examples() {
        let c = FnField::new(1, |_, _, o: &mut [f64]| o[0] = 2.0);
        let probes = PointCloud::from_scalars(&[-1.0, 0.5, 3.0]).unwrap();
        assert!(burgers_residual(&c, &probes, &[0.2, 0.7]).unwrap() < 1e-12);
        let s = FnField::new(1, |z, t, o: &mut [f64]| o[0] = z[0] / (1.0 + t));
        assert!(burgers_residual(&s, &probes, &[0.0, 0.3, 0.9]).unwrap() < 1e-6);
    }

    #[test]
    fn report_keys_are_stable() {
        let json = serde_json::to_string(&MetricsReport::default()).unwrap();
        assert_eq!(
            json,
            "{\"straightness\":null,\"crossing_v\":null,\"cost_l2sq\":null,\"cost_l1\":null,\
             \"cost_p15\":null,\"relative_l2_cost\":null,\"marginal_t025\":null,\"marginal_t05\":null,\
             \"marginal_t075\":null,\"burgers_residual\":null,\"monotone_violations\":null}"
        );
    }

    #[test]
    fn mean_and_standard_error() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }
}
