//! Nadaraya–Watson estimate of the rectified velocity from paired samples,
//! restricted to the `m` nearest interpolated points.
//!
//! For pairs `(x0ⁱ, x1ⁱ)` and `x_tⁱ = α_t x1ⁱ + β_t x0ⁱ`,
//!
//! ```text
//! v(z, t) = Σ_{i ∈ knn(z, m)} ωᵢ [α̇_t x1ⁱ + (β̇_t/β_t)(z − α_t x1ⁱ)]
//! ωᵢ ∝ exp(−‖x_tⁱ − z‖² / 2h²)
//! ```
//!
//! which for the linear schedule is the familiar `Σ ωᵢ (x1ⁱ − z)/(1 − t)`.
//! Normalisation runs over the neighbour set only; `m = n` gives the full
//! kernel average.

use std::cmp::Ordering;

use crate::cloud::{Coupling, PointCloud};
use crate::error::{Error, Result};
use crate::linalg::{self, check_dim};
use crate::schedules::Schedule;
use crate::velocity::{softmax_in_place, VelocityField};

pub const DEFAULT_BANDWIDTH: f64 = 1.0;
pub const DEFAULT_NEIGHBORS: usize = 100;

#[derive(Clone, Debug)]
pub struct KernelVelocity {
    pairs: Coupling,
    bandwidth: f64,
    knn_m: usize,
    schedule: Schedule,
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Keeps the `m` smallest `(distance, index)` entries, sorted; ties go to the lower index.
fn nearest(mut scored: Vec<(f64, usize)>, m: usize) -> Vec<(f64, usize)> {
    if m < scored.len() {
        scored.select_nth_unstable_by(m - 1, by_distance_then_index);
        scored.truncate(m);
    }
    scored.sort_unstable_by(by_distance_then_index);
    scored
}

/// Indices of the `m` rows of `cloud` closest to `z` in Euclidean distance,
/// nearest first; ties are broken by the lower index.
pub fn knn_indices(cloud: &PointCloud, z: &[f64], m: usize) -> Result<Vec<usize>> {
    check_dim(cloud.dim(), z.len())?;
    if m == 0 || m > cloud.n() {
        return Err(Error::invalid(format!(
            "cannot take {m} neighbours from {} points",
            cloud.n()
        )));
    }
    let scored = cloud
        .rows()
        .enumerate()
        .map(|(i, r)| (linalg::dist_sq(r, z), i))
        .collect();
    Ok(nearest(scored, m).into_iter().map(|(_, i)| i).collect())
}

impl KernelVelocity {
    /// Estimator for the linear schedule.
    pub fn new(pairs: Coupling, bandwidth: f64, knn_m: usize) -> Result<Self> {
        Self::with_schedule(pairs, bandwidth, knn_m, Schedule::Linear)
    }

    pub fn with_schedule(
        pairs: Coupling,
        bandwidth: f64,
        knn_m: usize,
        schedule: Schedule,
    ) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::invalid(format!("bandwidth must be > 0 (got {bandwidth})")));
        }
        if knn_m == 0 || knn_m > pairs.n() {
            return Err(Error::invalid(format!(
                "knn m = {knn_m} must lie in 1..={}",
                pairs.n()
            )));
        }
        schedule.validate()?;
        Ok(Self {
            pairs,
            bandwidth,
            knn_m,
            schedule,
        })
    }

    pub fn pairs(&self) -> &Coupling {
        &self.pairs
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn knn_m(&self) -> usize {
        self.knn_m
    }

    /// Neighbour indices and their normalised weights at `(z, t)`.
    pub fn neighbor_weights(&self, z: &[f64], t: f64) -> Result<Vec<(usize, f64)>> {
        check_dim(self.pairs.dim(), z.len())?;
        if !(0.0..1.0).contains(&t) {
            return Err(Error::TimeDomain { t, domain: "[0, 1)" });
        }
        let sv = self.schedule.eval(t)?;
        let (left, right) = (self.pairs.left(), self.pairs.right());
        let scored = left
            .rows()
            .zip(right.rows())
            .enumerate()
            .map(|(i, (x0, x1))| {
                let d: f64 = x0
                    .iter()
                    .zip(x1)
                    .zip(z)
                    .map(|((a, b), zi)| (sv.alpha * b + sv.beta * a - zi).powi(2))
                    .sum();
                (d, i)
            })
            .collect();
        let near = nearest(scored, self.knn_m);
        let inv = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        let mut logw: Vec<f64> = near.iter().map(|(d, _)| -d * inv).collect();
        softmax_in_place(&mut logw);
        Ok(near.into_iter().map(|(_, i)| i).zip(logw).collect())
    }
}

impl VelocityField for KernelVelocity {
    fn dim(&self) -> usize {
        self.pairs.dim()
    }

    fn velocity_into(&self, z: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let weights = self.neighbor_weights(z, t)?;
        let sv = self.schedule.eval(t)?;
        if !(sv.beta > 0.0) {
            return Err(Error::Singular(format!("beta vanishes at t = {t}")));
        }
        let mut mean = vec![0.0; z.len()];
        for (i, w) in weights {
            linalg::axpy(w, self.pairs.right().row(i), &mut mean);
        }
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
