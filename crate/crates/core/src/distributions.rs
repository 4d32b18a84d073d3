//! Source and target distributions for the toy experiments.

use serde::{Deserialize, Serialize};

use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};
use crate::linalg::{check_dim, Matrix};
use crate::rng::RngState;

/// Independent Gaussian coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalGaussian {
    pub mean: Point,
    pub stddev: Point,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, stddev: Vec<f64>) -> Result<Self> {
        let g = Self {
            mean: Point::new(mean)?,
            stddev: Point::new(stddev)?,
        };
        g.validate()?;
        Ok(g)
    }

    /// `N(0, sigma² I_d)`
    pub fn isotropic(d: usize, sigma: f64) -> Result<Self> {
        Self::new(vec![0.0; d], vec![sigma; d])
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.mean.dim(), self.stddev.dim())?;
        if self.stddev.as_slice().iter().any(|s| *s <= 0.0) {
            return Err(Error::invalid("Gaussian stddev entries must be positive"));
        }
        Ok(())
    }

    fn draw_into(&self, rng: &mut RngState, out: &mut Vec<f64>) {
        for (m, s) in self.mean.as_slice().iter().zip(self.stddev.as_slice()) {
            out.push(m + s * rng.standard_normal());
        }
    }

    /// The common stddev when the Gaussian is centred and isotropic.
    pub fn centered_isotropic_stddev(&self) -> Option<f64> {
        let s = self.stddev.as_slice();
        let centered = self.mean.as_slice().iter().all(|m| *m == 0.0);
        (centered && s.iter().all(|x| *x == s[0])).then_some(s[0])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DistributionSpec {
    Gaussian(DiagonalGaussian),
    Mixture {
        weights: Vec<f64>,
        components: Vec<DiagonalGaussian>,
    },
    Empirical {
        points: PointCloud,
    },
    Uniform {
        lo: Point,
        hi: Point,
    },
}

impl DistributionSpec {
    pub fn gaussian(mean: Vec<f64>, stddev: Vec<f64>) -> Result<Self> {
        Ok(Self::Gaussian(DiagonalGaussian::new(mean, stddev)?))
    }

    pub fn mixture(weights: Vec<f64>, components: Vec<DiagonalGaussian>) -> Result<Self> {
        let s = Self::Mixture {
            weights,
            components,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn equal_mixture(components: Vec<DiagonalGaussian>) -> Result<Self> {
        let k = components.len().max(1);
        Self::mixture(vec![1.0 / k as f64; components.len()], components)
    }

    pub fn empirical(points: PointCloud) -> Self {
        Self::Empirical { points }
    }

    pub fn uniform(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let s = Self::Uniform {
            lo: Point::new(lo)?,
            hi: Point::new(hi)?,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian(g) => g.dim(),
            Self::Mixture { components, .. } => components.first().map_or(0, |c| c.dim()),
            Self::Empirical { points } => points.dim(),
            Self::Uniform { lo, .. } => lo.dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Gaussian(g) => g.validate(),
            Self::Mixture {
                weights,
                components,
            } => {
                if components.is_empty() || weights.len() != components.len() {
                    return Err(Error::invalid(
                        "mixture needs one weight per component and at least one component",
                    ));
                }
                if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
                    return Err(Error::invalid("mixture weights must be positive"));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::invalid(format!(
                        "mixture weights sum to {total}, not 1"
                    )));
                }
                let d = components[0].dim();
                for c in components {
                    c.validate()?;
                    check_dim(d, c.dim())?;
                }
                Ok(())
            }
            Self::Empirical { .. } => Ok(()),
            Self::Uniform { lo, hi } => {
                check_dim(lo.dim(), hi.dim())?;
                if lo.as_slice().iter().zip(hi.as_slice()).any(|(l, h)| l >= h) {
                    return Err(Error::invalid("uniform bounds need lo < hi per coordinate"));
                }
                Ok(())
            }
        }
    }

    /// `n` i.i.d. draws. Empirical distributions are resampled with replacement.
    pub fn sample(&self, n: usize, rng: &mut RngState) -> Result<PointCloud> {
        self.validate()?;
        let d = self.dim();
        let mut data = Vec::with_capacity(n * d);
        match self {
            Self::Gaussian(g) => {
                for _ in 0..n {
                    g.draw_into(rng, &mut data);
                }
            }
            Self::Mixture {
                weights,
                components,
            } => {
                let mut cumulative = Vec::with_capacity(weights.len());
                let mut acc = 0.0;
                for w in weights {
                    acc += w;
                    cumulative.push(acc);
                }
                for _ in 0..n {
                    let u = rng.uniform() * acc;
                    let k = cumulative
                        .iter()
                        .position(|c| u < *c)
                        .unwrap_or(components.len() - 1);
                    components[k].draw_into(rng, &mut data);
                }
            }
            Self::Empirical { points } => {
                for _ in 0..n {
                    data.extend_from_slice(points.row(rng.index(points.n())));
                }
            }
            Self::Uniform { lo, hi } => {
                for _ in 0..n {
                    for (l, h) in lo.as_slice().iter().zip(hi.as_slice()) {
                        data.push(l + (h - l) * rng.uniform());
                    }
                }
            }
        }
        PointCloud::new(n, d, data)
    }

    /// Analytic mean and covariance; the population (1/n) moments for empirical
    /// distributions.
    pub fn mean_and_cov(&self) -> Result<(Point, Matrix)> {
        self.validate()?;
        let d = self.dim();
        let mut cov = Matrix::zeros(d, d);
        let mean = match self {
            Self::Gaussian(g) => {
                for (k, s) in g.stddev.as_slice().iter().enumerate() {
                    cov[(k, k)] = s * s;
                }
                g.mean.as_slice().to_vec()
            }
            Self::Mixture {
                weights,
                components,
            } => {
                let mut mean = vec![0.0; d];
                for (w, c) in weights.iter().zip(components) {
                    let mu = c.mean.as_slice();
                    for i in 0..d {
                        mean[i] += w * mu[i];
                        cov[(i, i)] += w * c.stddev.as_slice()[i].powi(2);
                        for j in 0..d {
                            cov[(i, j)] += w * mu[i] * mu[j];
                        }
                    }
                }
                for i in 0..d {
                    for j in 0..d {
                        cov[(i, j)] -= mean[i] * mean[j];
                    }
                }
                mean
            }
            Self::Empirical { points } => {
                let mean = points.mean();
                for r in points.rows() {
                    for i in 0..d {
                        for j in 0..d {
                            cov[(i, j)] += (r[i] - mean[i]) * (r[j] - mean[j]);
                        }
                    }
                }
                let n = points.n() as f64;
                for i in 0..d {
                    for j in 0..d {
                        cov[(i, j)] /= n;
                    }
                }
                mean
            }
            Self::Uniform { lo, hi } => {
                let mut mean = vec![0.0; d];
                for (k, (l, h)) in lo.as_slice().iter().zip(hi.as_slice()).enumerate() {
                    mean[k] = 0.5 * (l + h);
                    cov[(k, k)] = (h - l).powi(2) / 12.0;
                }
                mean
            }
        };
        Ok((Point::new(mean)?, cov))
    }
}

/// Adds `sigma · ξ`, `ξ ~ N(0, I)`, to every row. Used to give a degenerate
/// (atomic) source a density.
pub fn smooth_source(cloud: &PointCloud, sigma: f64, rng: &mut RngState) -> Result<PointCloud> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("smoothing sigma must be > 0 (got {sigma})")));
    }
    let data = cloud
        .as_slice()
        .iter()
        .map(|x| x + sigma * rng.standard_normal())
        .collect();
    PointCloud::new(cloud.n(), cloud.dim(), data)
}
