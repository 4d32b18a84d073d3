//! Point, point cloud and coupling value types.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, check_dim};

/// A finite point in ℝ^d.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("a point needs at least one coordinate"));
        }
        if !linalg::all_finite(&coords) {
            return Err(Error::NonFinite("point".into()));
        }
        Ok(Self(coords))
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d.max(1)])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for Point {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Point::new(v)
    }
}

impl From<Point> for Vec<f64> {
    fn from(p: Point) -> Self {
        p.0
    }
}

impl AsRef<[f64]> for Point {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// `n` points of dimension `d`, stored row-major. Every entry is finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct PointCloud {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl PointCloud {
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::invalid(format!(
                "point cloud needs n >= 1 and d >= 1 (got n = {n}, d = {d})"
            )));
        }
        check_dim(n * d, data.len())?;
        if !linalg::all_finite(&data) {
            return Err(Error::NonFinite("point cloud".into()));
        }
        Ok(Self { n, d, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            check_dim(d, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), d, data)
    }

    /// One-dimensional cloud from scalar samples.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Sub-cloud made of the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            if i >= self.n {
                return Err(Error::invalid(format!("row {i} out of range ({})", self.n)));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.d, data)
    }

    /// The first `k` rows (all of them when `k >= n`).
    pub fn head(&self, k: usize) -> Self {
        let k = k.clamp(1, self.n);
        Self {
            n: k,
            d: self.d,
            data: self.data[..k * self.d].to_vec(),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for r in self.rows() {
            linalg::axpy(1.0, r, &mut m);
        }
        linalg::scale(&mut m, 1.0 / self.n as f64);
        m
    }

    /// Largest Euclidean distance between two rows; the usual choice of `sigma_max`
    /// for a variance-exploding schedule.
    pub fn max_pairwise_distance(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..self.n {
            for j in i + 1..self.n {
                best = best.max(linalg::dist_sq(self.row(i), self.row(j)));
            }
        }
        best.sqrt()
    }

    /// Coordinate `k` of every row.
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.rows().map(|r| r[k]).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for PointCloud {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        PointCloud::from_rows(&rows)
    }
}

impl From<PointCloud> for Vec<Vec<f64>> {
    fn from(c: PointCloud) -> Self {
        c.rows().map(<[f64]>::to_vec).collect()
    }
}

/// Paired endpoint samples: row `i` of `left` is coupled with row `i` of `right`.
#[derive(Clone, Debug, PartialEq)]
pub struct Coupling {
    left: PointCloud,
    right: PointCloud,
}

impl Coupling {
    pub fn new(left: PointCloud, right: PointCloud) -> Result<Self> {
        if left.n() != right.n() {
            return Err(Error::invalid(format!(
                "coupling sides differ in size ({} vs {})",
                left.n(),
                right.n()
            )));
        }
        check_dim(left.dim(), right.dim())?;
        Ok(Self { left, right })
    }

    pub fn left(&self) -> &PointCloud {
        &self.left
    }

    pub fn right(&self) -> &PointCloud {
        &self.right
    }

    pub fn n(&self) -> usize {
        self.left.n()
    }

    pub fn dim(&self) -> usize {
        self.left.dim()
    }

    pub fn pair(&self, i: usize) -> (&[f64], &[f64]) {
        (self.left.row(i), self.right.row(i))
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(self.left.select(indices)?, self.right.select(indices)?)
    }

    pub fn head(&self, k: usize) -> Self {
        Self {
            left: self.left.head(k),
            right: self.right.head(k),
        }
    }

    /// The same pairs with the two sides exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            left: self.right.clone(),
            right: self.left.clone(),
        }
    }

    pub fn into_parts(self) -> (PointCloud, PointCloud) {
        (self.left, self.right)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_clouds() {
        assert!(PointCloud::new(0, 2, vec![]).is_err());
        assert!(PointCloud::new(1, 2, vec![1.0]).is_err());
        assert!(matches!(
            PointCloud::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(PointCloud::from_rows(&[vec![1.0, 2.0], vec![1.0]]).is_err());
        assert!(Point::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn coupling_requires_matching_sides() {
        let a = PointCloud::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let b = PointCloud::from_rows(&[[0.0, 0.0]]).unwrap();
        let c = PointCloud::from_scalars(&[0.0, 1.0]).unwrap();
        assert!(Coupling::new(a.clone(), b).is_err());
        assert!(Coupling::new(a.clone(), c).is_err());
        assert!(Coupling::new(a.clone(), a).is_ok());
    }

    #[test]
    fn cloud_helpers() {
        let c = PointCloud::from_rows(&[[0.0, 0.0], [3.0, 4.0], [1.0, 0.0]]).unwrap();
        assert_eq!(c.mean(), vec![4.0 / 3.0, 4.0 / 3.0]);
        assert_eq!(c.max_pairwise_distance(), 5.0);
        assert_eq!(c.select(&[2, 0]).unwrap().row(0), &[1.0, 0.0]);
        assert_eq!(c.head(10).n(), 3);
        assert_eq!(c.column(1), vec![0.0, 4.0, 0.0]);
    }

    #[test]
    fn serde_shape() {
        let c: PointCloud = serde_json::from_str("[[0.0, 1.0], [2.0, 3.0]]").unwrap();
        assert_eq!(c.n(), 2);
        assert!(serde_json::from_str::<PointCloud>("[[0.0], [2.0, 3.0]]").is_err());
    }
}
