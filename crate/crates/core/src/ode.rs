//! Ensemble ODE integration: fixed-step Euler and adaptive Dormand–Prince 5(4).

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::linalg;
use crate::velocity::VelocityField;

/// Fields singular at `t = 1` are integrated adaptively up to `1 − TERMINAL_GAP`
/// and finished with one explicit step.
pub const TERMINAL_GAP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Method {
    Euler {
        steps: usize,
    },
    Rk45 {
        #[serde(default = "default_tol")]
        rtol: f64,
        #[serde(default = "default_tol")]
        atol: f64,
        #[serde(default = "default_max_evals")]
        max_evals: usize,
    },
}

fn default_tol() -> f64 {
    1e-5
}

fn default_max_evals() -> usize {
    100_000
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    #[default]
    Forward,
    Backward,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub method: Method,
    #[serde(default)]
    pub direction: Direction,
    /// Record every k-th step; 0 keeps the endpoints only.
    #[serde(default)]
    pub record_every: usize,
}

impl SolverSpec {
    pub fn euler(steps: usize) -> Self {
        Self {
            method: Method::Euler { steps },
            direction: Direction::Forward,
            record_every: 0,
        }
    }

    pub fn rk45(rtol: f64, atol: f64) -> Self {
        Self {
            method: Method::Rk45 {
                rtol,
                atol,
                max_evals: default_max_evals(),
            },
            direction: Direction::Forward,
            record_every: 0,
        }
    }

    pub fn backward(self) -> Self {
        Self {
            direction: Direction::Backward,
            ..self
        }
    }

    pub fn recording(self, every: usize) -> Self {
        Self {
            record_every: every,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.method {
            Method::Euler { steps } if steps == 0 => Err(Error::invalid("Euler needs N >= 1 steps")),
            Method::Rk45 { rtol, atol, max_evals } => {
                if !(rtol > 0.0) || !(atol > 0.0) {
                    Err(Error::invalid("rtol and atol must be > 0"))
                } else if max_evals == 0 {
                    Err(Error::invalid("max_evals must be >= 1"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Recorded states of the whole ensemble.
///
/// `times` run over the solver's clock, which starts at 0. For backward runs
/// that clock is reflected: solver time `s` corresponds to flow time `1 − s`,
/// so `first()` is the starting cloud and `last()` the reconstructed source.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryEnsemble {
    pub times: Vec<f64>,
    pub states: Vec<PointCloud>,
    /// Velocity evaluations per particle.
    pub evals_used: usize,
}

impl TrajectoryEnsemble {
    pub fn first(&self) -> &PointCloud {
        &self.states[0]
    }

    pub fn last(&self) -> &PointCloud {
        &self.states[self.states.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Long-format CSV: `particle_id,step_index,t,x_0,…,x_{d−1}`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let d = self.first().dim();
        write!(w, "particle_id,step_index,t")?;
        for k in 0..d {
            write!(w, ",x_{k}")?;
        }
        writeln!(w)?;
        for p in 0..self.first().n() {
            for (j, (t, cloud)) in self.times.iter().zip(&self.states).enumerate() {
                write!(w, "{p},{j},{t}")?;
                for x in cloud.row(p) {
                    write!(w, ",{x}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// The field seen by the solver: forward as is, backward reflected in time.
struct Oriented<'a, V: ?Sized> {
    v: &'a V,
    backward: bool,
    /// Extra lag of the reflected evaluation time (one Euler step, so the
    /// backward grid reuses the forward grid points and never touches t = 1).
    lag: f64,
}

impl<V: VelocityField + ?Sized> Oriented<'_, V> {
    fn eval(&self, y: &[f64], s: f64, out: &mut [f64]) -> Result<()> {
        if self.backward {
            let t = (1.0 - s - self.lag).clamp(0.0, 1.0);
            self.v.velocity_into(y, t, out)?;
            linalg::scale(out, -1.0);
            Ok(())
        } else {
            self.v.velocity_into(y, s, out)
        }
    }

    fn eval_cloud(&self, ys: &[f64], d: usize, s: f64, out: &mut [f64]) -> Result<()> {
        for (y, o) in ys.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            self.eval(y, s, o)?;
        }
        Ok(())
    }
}

fn finite_cloud(n: usize, d: usize, data: Vec<f64>, t: f64) -> Result<PointCloud> {
    if !linalg::all_finite(&data) {
        return Err(Error::NonFinite(format!("ensemble state at t = {t}")));
    }
    PointCloud::new(n, d, data)
}

/// Integrates every particle of `start` over the unit time interval.
pub fn integrate<V: VelocityField + ?Sized>(
    v: &V,
    start: &PointCloud,
    spec: &SolverSpec,
) -> Result<TrajectoryEnsemble> {
    spec.validate()?;
    linalg::check_dim(v.dim(), start.dim())?;
    match spec.method {
        Method::Euler { steps } => euler(v, start, steps, spec),
        Method::Rk45 { rtol, atol, max_evals } => rk45(v, start, rtol, atol, max_evals, spec),
    }
}

fn euler<V: VelocityField + ?Sized>(
    v: &V,
    start: &PointCloud,
    steps: usize,
    spec: &SolverSpec,
) -> Result<TrajectoryEnsemble> {
    let (n, d) = (start.n(), start.dim());
    let h = 1.0 / steps as f64;
    let field = Oriented {
        v,
        backward: spec.direction == Direction::Backward,
        lag: h,
    };
    let mut y = start.as_slice().to_vec();
    let mut k = vec![0.0; y.len()];
    let mut times = vec![0.0];
    let mut states = vec![start.clone()];
    for step in 0..steps {
        let s = step as f64 * h;
        field.eval_cloud(&y, d, s, &mut k)?;
        linalg::axpy(h, &k, &mut y);
        let done = step + 1 == steps;
        let keep = spec.record_every > 0 && (step + 1) % spec.record_every == 0;
        if done || keep {
            let t = if done { 1.0 } else { (step + 1) as f64 * h };
            times.push(t);
            states.push(finite_cloud(n, d, y.clone(), t)?);
        } else if !linalg::all_finite(&y) {
            return Err(Error::NonFinite(format!("ensemble state at t = {}", s + h)));
        }
    }
    Ok(TrajectoryEnsemble {
        times,
        states,
        evals_used: steps,
    })
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights minus the embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn rk45<V: VelocityField + ?Sized>(
    v: &V,
    start: &PointCloud,
    rtol: f64,
    atol: f64,
    max_evals: usize,
    spec: &SolverSpec,
) -> Result<TrajectoryEnsemble> {
    let (n, d) = (start.n(), start.dim());
    let backward = spec.direction == Direction::Backward;
    let field = Oriented { v, backward, lag: 0.0 };
    // A singular field can be neither evaluated at the end of a forward run
    // nor at the start of a backward one.
    let gap = if v.singular_at_terminal() { TERMINAL_GAP } else { 0.0 };
    let (s_start, s_end) = if backward { (gap, 1.0) } else { (0.0, 1.0 - gap) };

    let len = n * d;
    let mut y = start.as_slice().to_vec();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; len]; 7];
    let mut stage = vec![0.0; len];
    let mut y_new = vec![0.0; len];
    let mut s = s_start;
    let mut evals = 0usize;
    let mut times = vec![0.0];
    let mut states = vec![start.clone()];

    field.eval_cloud(&y, d, s, &mut k[0])?;
    evals += 1;
    let mut h = initial_step(&y, &k[0], rtol, atol, s_end - s);
    let mut accepted = 0usize;

    while s < s_end {
        if s + h > s_end || s_end - (s + h) < 1e-12 {
            h = s_end - s;
        }
        for i in 1..7 {
            stage.copy_from_slice(&y);
            for (j, a) in A[i].iter().enumerate().take(i) {
                if *a != 0.0 {
                    linalg::axpy(h * a, &k[j], &mut stage);
                }
            }
            if i == 6 {
                y_new.copy_from_slice(&stage);
            }
            field.eval_cloud(&stage, d, s + C[i] * h, &mut k[i])?;
        }
        evals += 6;

        let mut err = 0.0f64;
        for p in 0..n {
            let mut acc = 0.0;
            for c in p * d..(p + 1) * d {
                let e: f64 = h * (0..7).map(|i| E[i] * k[i][c]).sum::<f64>();
                let sc = atol + rtol * y[c].abs().max(y_new[c].abs());
                acc += (e / sc).powi(2);
            }
            err = err.max((acc / d as f64).sqrt());
        }
        if !err.is_finite() {
            return Err(Error::NonFinite(format!("error estimate at t = {s}")));
        }

        if err <= 1.0 {
            s += h;
            if s_end - s < 1e-12 {
                s = s_end;
            }
            std::mem::swap(&mut y, &mut y_new);
            k.swap(0, 6);
            accepted += 1;
            let keep = spec.record_every > 0 && accepted % spec.record_every == 0;
            if keep && s < s_end {
                times.push(s);
                states.push(finite_cloud(n, d, y.clone(), s)?);
            }
            let factor = if err == 0.0 { 10.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 10.0) };
            h *= factor;
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
        }
        if s < s_end {
            if evals + 6 > max_evals {
                return Err(Error::StepFailure {
                    t: s,
                    reason: format!("tolerance not met within {max_evals} evaluations"),
                });
            }
            if h < 1e-14 {
                return Err(Error::StepFailure {
                    t: s,
                    reason: "step size underflow".into(),
                });
            }
        }
    }

    if !backward && gap > 0.0 {
        // closing explicit step over the last `gap`
        let mut vel = vec![0.0; len];
        field.eval_cloud(&y, d, s_end, &mut vel)?;
        evals += 1;
        linalg::axpy(gap, &vel, &mut y);
    }
    times.push(1.0);
    states.push(finite_cloud(n, d, y, 1.0)?);
    Ok(TrajectoryEnsemble {
        times,
        states,
        evals_used: evals,
    })
}

fn initial_step(y: &[f64], f0: &[f64], rtol: f64, atol: f64, span: f64) -> f64 {
    let scaled = |v: &[f64]| {
        let s: f64 = v
            .iter()
            .zip(y)
            .map(|(a, b)| (a / (atol + rtol * b.abs())).powi(2))
            .sum();
        (s / v.len() as f64).sqrt()
    };
    let (d0, d1) = (scaled(y), scaled(f0));
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h.min(span).max(1e-10_f64.min(span))
}

/// Forward then backward with the same solver; returns the largest
/// distance between a particle and its reconstruction.
pub fn roundtrip<V: VelocityField + ?Sized>(v: &V, start: &PointCloud, spec: &SolverSpec) -> Result<f64> {
    let fwd = SolverSpec {
        direction: Direction::Forward,
        ..*spec
    };
    let end = integrate(v, start, &fwd)?;
    let back = integrate(v, end.last(), &fwd.backward())?;
    Ok(start
        .rows()
        .zip(back.last().rows())
        .map(|(a, b)| linalg::dist(a, b))
        .fold(0.0, f64::max))
}
