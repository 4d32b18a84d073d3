//! Rectified flow: learn an ODE `dZ_t = v(Z_t, t) dt` that transports one
//! sampled distribution to another along paths that are as straight as the
//! data allows, and iterate the construction to straighten them further.
//!
//! The crate is organised bottom-up:
//!
//! * [`cloud`], [`linalg`], [`rng`]: points, couplings, small dense algebra
//!   and seeded random streams.
//! * [`distributions`] and [`schedules`]: the endpoint laws and the
//!   interpolation family `X_t = α_t X1 + β_t X0`.
//! * [`velocity`]: closed-form, kernel and neural velocity fields.
//! * [`ode`]: Euler and Dormand–Prince integration of particle ensembles.
//! * [`metrics`]: straightness, crossing measure, transport costs, exact
//!   assignment and two-sample statistics.
//! * [`pipeline`]: rectify, reflow and distill.

pub mod cloud;
pub mod distributions;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod ode;
pub mod pipeline;
pub mod rng;
pub mod schedules;
pub mod velocity;

pub use cloud::{Coupling, Point, PointCloud};
pub use distributions::{DiagonalGaussian, DistributionSpec};
pub use error::{Error, Result};
pub use metrics::{ConvexCost, MetricsReport};
pub use ode::{integrate, roundtrip, Direction, Method, SolverSpec, TrajectoryEnsemble};
pub use pipeline::{distill, Backend, MetricsOptions, Rectifier, RectifyResult, ReflowPlan, VelocityModel};
pub use rng::{seeded_rng, RngState};
pub use schedules::Schedule;
pub use velocity::VelocityField;
