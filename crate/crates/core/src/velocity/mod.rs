//! Velocity fields `v(z, t)`: closed-form conditional expectations, the
//! kernel estimator and the neural network.

pub mod exact;
pub mod gaussian;
pub mod kernel;
pub mod neural;

use crate::error::Result;

pub use exact::ExactVelocity;
pub use gaussian::GaussianVelocity;
pub use kernel::{knn_indices, KernelVelocity};
pub use neural::Mlp;

/// Anything evaluable as `v(z, t) ∈ ℝ^d`. Implementations are immutable and
/// safe to evaluate from several threads.
pub trait VelocityField: Send + Sync {
    fn dim(&self) -> usize;

    fn velocity_into(&self, z: &[f64], t: f64, out: &mut [f64]) -> Result<()>;

    fn velocity(&self, z: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.velocity_into(z, t, &mut out)?;
        Ok(out)
    }

    /// True when the field is undefined at `t = 1` (estimators carrying a
    /// `1/(1 − t)` or `1/β_t` factor). Solvers never evaluate such fields there.
    fn singular_at_terminal(&self) -> bool {
        false
    }
}

impl<V: VelocityField + ?Sized> VelocityField for &V {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn velocity_into(&self, z: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        (**self).velocity_into(z, t, out)
    }

    fn singular_at_terminal(&self) -> bool {
        (**self).singular_at_terminal()
    }
}

impl<V: VelocityField + ?Sized> VelocityField for Box<V> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn velocity_into(&self, z: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        (**self).velocity_into(z, t, out)
    }

    fn singular_at_terminal(&self) -> bool {
        (**self).singular_at_terminal()
    }
}

/// A velocity field given by a closure `(z, t, out)`.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&[f64], f64, &mut [f64]) + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> VelocityField for FnField<F>
where
    F: Fn(&[f64], f64, &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity_into(&self, z: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        crate::linalg::check_dim(self.dim, z.len())?;
        (self.f)(z, t, out);
        Ok(())
    }
}

/// Normalises log-weights in place into softmax weights (max-subtracted).
pub(crate) fn softmax_in_place(logw: &mut [f64]) {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for w in logw.iter_mut() {
        *w = (*w - max).exp();
        total += *w;
    }
    for w in logw.iter_mut() {
        *w /= total;
    }
}
