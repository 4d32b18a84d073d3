//! Two-sample statistics: energy distance with a permutation null, and KS.

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::RngState;

/// Energy distance `2E‖X − Y‖ − E‖X − X'‖ − E‖Y − Y'‖` between the empirical
/// laws of `a` and `b` (V-statistic, so identical samples give exactly 0).
pub fn marginal_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    linalg::check_dim(a.dim(), b.dim())?;
    let mean_dist = |x: &PointCloud, y: &PointCloud| {
        let mut s = 0.0;
        for p in x.rows() {
            for q in y.rows() {
                s += linalg::dist(p, q);
            }
        }
        s / (x.n() * y.n()) as f64
    };
    let e = 2.0 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b);
    Ok(e.max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationTest {
    pub statistic: f64,
    /// `(1 + #{null ≥ statistic}) / (1 + permutations)`
    pub p_value: f64,
    /// Empirical 95th percentile of the null.
    pub threshold_95: f64,
}

impl PermutationTest {
    pub fn rejects_at(&self, level: f64) -> bool {
        self.p_value <= level
    }
}

/// Energy-distance permutation test on the pooled sample.
pub fn energy_permutation_test(
    a: &PointCloud,
    b: &PointCloud,
    permutations: usize,
    rng: &mut RngState,
) -> Result<PermutationTest> {
    linalg::check_dim(a.dim(), b.dim())?;
    if permutations == 0 {
        return Err(Error::invalid("permutation test needs >= 1 permutation"));
    }
    let (na, nb) = (a.n(), b.n());
    let n = na + nb;
    let pooled: Vec<&[f64]> = a.rows().chain(b.rows()).collect();
    // Upper triangle, row-major.
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = linalg::dist(pooled[i], pooled[j]);
            total += d;
            dists.push(d);
        }
    }
    // With S_aa, S_bb the within-group sums over unordered pairs and
    // S_ab = total − S_aa − S_bb, the V-statistic is
    // 2 S_ab/(na nb) − 2 S_aa/na² − 2 S_bb/nb².
    let stat = |in_a: &[bool]| {
        let (mut saa, mut sbb) = (0.0, 0.0);
        let mut k = 0;
        for i in 0..n {
            let ai = in_a[i];
            let row = &dists[k..k + (n - i - 1)];
            k += n - i - 1;
            for (off, d) in row.iter().enumerate() {
                let aj = in_a[i + 1 + off];
                if ai && aj {
                    saa += d;
                } else if !ai && !aj {
                    sbb += d;
                }
            }
        }
        let sab = total - saa - sbb;
        2.0 * sab / (na * nb) as f64 - 2.0 * saa / (na * na) as f64 - 2.0 * sbb / (nb * nb) as f64
    };
    let mut labels: Vec<bool> = (0..n).map(|i| i < na).collect();
    let observed = stat(&labels);
    let mut null = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        for i in (1..n).rev() {
            let j = rng.index(i + 1);
            labels.swap(i, j);
        }
        null.push(stat(&labels));
    }
    let exceed = null.iter().filter(|s| **s >= observed).count();
    null.sort_by(f64::total_cmp);
    let q = ((0.95 * permutations as f64).ceil() as usize).clamp(1, permutations) - 1;
    Ok(PermutationTest {
        statistic: observed.max(0.0),
        p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
        threshold_95: null[q],
    })
}

/// Kolmogorov–Smirnov statistic `sup |F_a − F_b|` for 1D samples.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (mut i, mut j) = (0, 0);
    let mut best = 0.0f64;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        best = best.max((i as f64 / x.len() as f64 - j as f64 / y.len() as f64).abs());
    }
    best
}
