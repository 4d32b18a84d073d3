//! Exact linear assignment (Hungarian method with potentials, `O(n³)`).

use crate::cloud::{Coupling, PointCloud};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Largest coupling accepted by [`relative_l2_cost`] by default.
pub const DEFAULT_ASSIGNMENT_CAP: usize = 2048;

/// Minimum-cost perfect matching of a square cost matrix.
///
/// Returns `assignment` with row `i` matched to column `assignment[i]`, and
/// the total cost.
pub fn hungarian_assignment(cost: &Matrix) -> Result<(Vec<usize>, f64)> {
    let n = cost.rows();
    if cost.cols() != n {
        return Err(Error::invalid(format!(
            "assignment needs a square matrix, got {}×{}",
            n,
            cost.cols()
        )));
    }
    if !linalg::all_finite(cost.as_slice()) {
        return Err(Error::NonFinite("assignment cost matrix".into()));
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    // 1-based potentials u (rows), v (columns); p[j] = row matched to column j.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            let row = cost.row(i0 - 1);
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    let total = assignment.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
    Ok((assignment, total))
}

fn squared_distance_matrix(a: &PointCloud, b: &PointCloud) -> Matrix {
    let mut m = Matrix::zeros(a.n(), b.n());
    for (i, x) in a.rows().enumerate() {
        for (j, y) in b.rows().enumerate() {
            m[(i, j)] = linalg::dist_sq(x, y);
        }
    }
    m
}

/// Mean squared displacement of the coupling minus that of the optimal
/// re-pairing of the same endpoints.
pub fn relative_l2_cost(coupling: &Coupling, cap: usize) -> Result<f64> {
    let n = coupling.n();
    if n > cap {
        return Err(Error::SizeCap { n, cap });
    }
    let m = squared_distance_matrix(coupling.left(), coupling.right());
    let current: f64 = (0..n).map(|i| m[(i, i)]).sum();
    let (_, best) = hungarian_assignment(&m)?;
    Ok((current - best) / n as f64)
}

/// Empirical 2-Wasserstein distance between two equal-size clouds.
pub fn wasserstein2(a: &PointCloud, b: &PointCloud, cap: usize) -> Result<f64> {
    linalg::check_dim(a.dim(), b.dim())?;
    if a.n() != b.n() {
        return Err(Error::invalid("W2 assignment needs equal sample sizes"));
    }
    if a.n() > cap {
        return Err(Error::SizeCap { n: a.n(), cap });
    }
    let (_, best) = hungarian_assignment(&squared_distance_matrix(a, b))?;
    Ok((best / a.n() as f64).max(0.0).sqrt())
}
