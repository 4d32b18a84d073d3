//! Acceptance suite: one PASS/FAIL line per criterion. Runs as a plain
//! binary so the report is always printed; exits non-zero on any failure.

use std::collections::HashMap;
use std::fs;
use std::process::Command;
use std::time::{Duration, Instant};

use rectflow::cloud::{Coupling, PointCloud};
use rectflow::distributions::DistributionSpec;
use rectflow::linalg::Matrix;
use rectflow::metrics::{
    cost_samples, energy_permutation_test, hungarian_assignment, marginal_distance, mean_se, ConvexCost,
};
use rectflow::ode::integrate;
use rectflow::rng::{seeded_rng, standard_normal_batch};
use rectflow::schedules::SingularityPolicy;
use rectflow::velocity::neural::{loss_and_grad, Activation, Mlp, TrainConfig};
use rectflow::velocity::{ExactVelocity, FnField};
use rectflow::{Schedule, SolverSpec};
use rectflow_cli::experiment::RunOutcome;
use rectflow_cli::{compare_schedules, preset, run, ExperimentConfig};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Preset runs shared between criteria.
#[derive(Default)]
struct Runs {
    cache: HashMap<&'static str, RunOutcome>,
}

impl Runs {
    fn get(&mut self, key: &'static str) -> Result<&RunOutcome, String> {
        if !self.cache.contains_key(key) {
            let cfg = match key {
                // held-out sample size of the cost criterion
                "two-dots" => ExperimentConfig {
                    n_eval: 2000,
                    ..preset("two-dots").map_err(err)?
                },
                other => preset(other).map_err(err)?,
            };
            let out = run(&cfg).map_err(err)?;
            self.cache.insert(key, out);
        }
        Ok(&self.cache[key])
    }
}

/// `E c(Z1 − Z0) ≤ E c(X1 − X0) + 2·SE` for the three convex costs.
fn pareto(name: &str, out: &RunOutcome) -> Result<String, String> {
    let x = out.coupling(0);
    let z = out.coupling(1);
    ensure(x.n() >= 2000, || format!("{name}: only {} held-out pairs", x.n()))?;
    let mut notes = Vec::new();
    for (label, c) in [("l1", ConvexCost::L1Norm), ("l2sq", ConvexCost::L2Sq), ("p1.5", ConvexCost::Lp { p: 1.5 })] {
        let (mx, sx) = mean_se(&cost_samples(x, c));
        let (mz, sz) = mean_se(&cost_samples(z, c));
        let se = (sx * sx + sz * sz).sqrt();
        ensure(mz <= mx + 2.0 * se, || format!("{name} {label}: {mz:.4} > {mx:.4} + 2·{se:.4}"))?;
        notes.push(format!("{label} {mx:.2}->{mz:.2}"));
    }
    Ok(format!("{name}: {}", notes.join(", ")))
}

fn c1(runs: &mut Runs) -> Check {
    let mut lines = Vec::new();
    for name in ["gauss-1d", "two-dots", "six-modes"] {
        let start = Instant::now();
        lines.push(pareto(name, runs.get(name)?)?);
        ensure(start.elapsed() < Duration::from_secs(60), || format!("{name} took {:?}", start.elapsed()))?;
    }
    Ok(lines.join("; "))
}

fn c2(runs: &mut Runs) -> Check {
    let out = runs.get("six-modes")?;
    let m = &out.metrics;
    ensure(m.len() == 4, || format!("expected K = 3 rounds, got {}", m.len() - 1))?;
    let (cost0, cost_se) = mean_se(&cost_samples(out.coupling(0), ConvexCost::L2Sq));
    let mut total = 0.0;
    let mut var = cost_se * cost_se;
    for k in 0..3 {
        let s = m[k + 1].metrics.straightness.ok_or("missing straightness")?;
        let v = m[k].metrics.crossing_v.ok_or("missing crossing_v")?;
        let (ss, vs) = (m[k + 1].straightness_se.unwrap_or(0.0), m[k].crossing_v_se.unwrap_or(0.0));
        total += s + v;
        var += ss * ss + vs * vs;
    }
    let se = var.sqrt();
    ensure(total <= cost0 + 3.0 * se, || format!("Σ(S + V) = {total:.4} > {cost0:.4} + 3·{se:.4}"))?;
    let s: Vec<f64> = (1..=3).map(|k| m[k].metrics.straightness.unwrap()).collect();
    ensure(s[0] >= s[1] && s[1] >= s[2], || format!("straightness not non-increasing: {s:?}"))?;
    Ok(format!("Σ(S + V) = {total:.3} ≤ E‖X1 − X0‖² = {cost0:.3} (+3·{se:.3}); S = {s:.4?}"))
}

fn two_atoms() -> PointCloud {
    PointCloud::from_rows(&[[4.0, 3.0], [4.0, -3.0]]).unwrap()
}

fn c3() -> Check {
    let n = 2000;
    let v = ExactVelocity::new(two_atoms(), 1.0).map_err(err)?;
    let mut rng = seeded_rng(31);
    let z0 = standard_normal_batch(&mut rng, n, 2).map_err(err)?;
    let traj = integrate(&v, &z0, &SolverSpec::euler(1000).recording(250)).map_err(err)?;
    // interpolations of an independent draw of the coupling
    let atoms = DistributionSpec::empirical(two_atoms());
    let x0 = standard_normal_batch(&mut rng, n, 2).map_err(err)?;
    let x1 = atoms.sample(n, &mut rng).map_err(err)?;
    let mut notes = Vec::new();
    for (j, t) in [(1, 0.25), (2, 0.5), (3, 0.75)] {
        ensure((traj.times[j] - t).abs() < 1e-12, || format!("grid mismatch at {t}"))?;
        let mut xt = Vec::with_capacity(2 * n);
        for i in 0..n {
            xt.extend(Schedule::Linear.interpolate(x1.row(i), x0.row(i), t).map_err(err)?.0);
        }
        let xt = PointCloud::new(n, 2, xt).map_err(err)?;
        let test = energy_permutation_test(&traj.states[j], &xt, 99, &mut rng).map_err(err)?;
        ensure(!test.rejects_at(0.05), || format!("t = {t}: rejected, {test:?}"))?;
        notes.push(format!("t={t} p={:.2}", test.p_value));
    }
    Ok(notes.join(", "))
}

fn c4() -> Check {
    let mut cfg = preset("gauss-1d").map_err(err)?;
    cfg.target = DistributionSpec::gaussian(vec![3.0], vec![0.5]).map_err(err)?;
    cfg.n_train = 500;
    cfg.n_eval = 500;
    let out = run(&cfg).map_err(err)?;
    let z = out.coupling(1);
    let violations = out.metrics[1].metrics.monotone_violations.ok_or("no monotonicity count")?;
    ensure(violations == 0, || format!("{violations} violations"))?;
    let worst = z
        .left()
        .as_slice()
        .iter()
        .zip(z.right().as_slice())
        .map(|(x0, x1)| (x1 - (3.0 + 0.5 * x0)).abs())
        .fold(0.0, f64::max);
    ensure(worst <= 5e-2, || format!("max |Z1 − T(Z0)| = {worst}"))?;
    Ok(format!("0 violations / {} samples, max |Z1 − T(Z0)| = {worst:.2e}", z.n()))
}

fn c5() -> Check {
    let mut rng = seeded_rng(5);
    let schedules = [
        Schedule::vp(),
        Schedule::sub_vp(),
        Schedule::Ve {
            sigma_min: 0.01,
            sigma_max: 50.0,
        },
        Schedule::Linear,
    ];
    let mut worst = 0.0f64;
    for s in &schedules {
        for _ in 0..1000 {
            let x1 = [3.0 * rng.standard_normal(), 3.0 * rng.standard_normal()];
            let xi = [rng.standard_normal(), rng.standard_normal()];
            let t = 0.01 + 0.98 * rng.uniform();
            let y = s.pfode_target(&x1, &xi, t, SingularityPolicy::Strict).map_err(err)?;
            let (_, xdot) = s.interpolate(&x1, &xi, t).map_err(err)?;
            let e = y.iter().zip(&xdot).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(e);
        }
    }
    ensure(worst <= 1e-6, || format!("max deviation {worst:e}"))?;
    Ok(format!("max ‖Ỹ − Ẋ‖ = {worst:.1e} over 4 × 1000 draws"))
}

fn c6(runs: &mut Runs) -> Check {
    let one = runs.get("gauss-to-mixture-N1")?;
    let atoms = two_atoms();
    let mean = atoms.mean();
    let end1 = one.coupling(1).right().clone();
    let worst = end1
        .rows()
        .map(|z| z.iter().zip(&mean).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    ensure(worst <= 1e-8, || format!("endpoint off the mean by {worst:e}"))?;

    let mut cfg = one.config.clone();
    cfg.solver = SolverSpec::euler(2);
    let two = run(&cfg).map_err(err)?;
    let reference = DistributionSpec::empirical(atoms).sample(end1.n(), &mut seeded_rng(6)).map_err(err)?;
    let d1 = marginal_distance(&end1, &reference).map_err(err)?;
    let d2 = marginal_distance(two.coupling(1).right(), &reference).map_err(err)?;
    ensure(d2 * 10.0 <= d1, || format!("N=2 distance {d2:.4} not 10x below N=1 {d1:.4}"))?;
    Ok(format!("N=1 max offset {worst:.1e}; energy distance N=1 {d1:.3}, N=2 {d2:.4}"))
}

fn c7() -> Check {
    let cfg = preset("gauss-to-mixture").map_err(err)?;
    let rows = compare_schedules(&cfg).map_err(err)?;
    let get = |s: &str, n: usize| {
        rows.iter()
            .find(|r| r.schedule == s && r.steps == n)
            .ok_or_else(|| format!("missing row {s} N={n}"))
    };
    let mut notes = Vec::new();
    for n in [1, 2, 5] {
        let (l, v) = (get("linear", n)?, get("vp", n)?);
        ensure(l.energy_distance < v.energy_distance, || {
            format!("N={n}: linear {} >= vp {}", l.energy_distance, v.energy_distance)
        })?;
        notes.push(format!("N={n} {:.3}<{:.3}", l.energy_distance, v.energy_distance));
    }
    for r in rows.iter().filter(|r| r.steps == 100) {
        ensure(r.p_value > 0.05, || format!("{} at N=100 rejected (p = {})", r.schedule, r.p_value))?;
    }
    Ok(format!("{}; N=100 all p > 0.05", notes.join(", ")))
}

fn c8() -> Check {
    let mut rng = seeded_rng(8);
    let net = Mlp::random(2, &[64, 64], Activation::Tanh, &mut rng).map_err(err)?;
    let cfg = TrainConfig::default();
    let g = DistributionSpec::gaussian(vec![0.0; 2], vec![1.0; 2]).map_err(err)?;
    let h = 1e-3;
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let batch = Coupling::new(g.sample(8, &mut rng).map_err(err)?, g.sample(8, &mut rng).map_err(err)?).map_err(err)?;
        let times: Vec<f64> = (0..8).map(|_| rng.uniform()).collect();
        // forward-only loss, written out independently of the training code
        let mut examples = Vec::new();
        for (i, &t) in times.iter().enumerate() {
            let (x0, x1) = batch.pair(i);
            let (xt, target) = Schedule::Linear.interpolate(x1, x0, t).map_err(err)?;
            examples.push((xt, target, t, cfg.time_weight.at(t)));
        }
        let loss = |p: &Mlp| {
            examples
                .iter()
                .map(|(xt, target, t, w)| {
                    w * p.forward(xt, *t).iter().zip(target).map(|(o, y)| (y - o).powi(2)).sum::<f64>()
                })
                .sum::<f64>()
                / examples.len() as f64
        };
        let (l0, grad) = loss_and_grad(&net, &batch, &times, &Schedule::Linear, &cfg, None).map_err(err)?;
        ensure((l0 - loss(&net)).abs() <= 1e-12 * l0.max(1.0), || format!("loss {l0} vs {}", loss(&net)))?;
        let mut probe = net.clone();
        for (i, a) in grad.iter().enumerate() {
            let base = net.params()[i];
            let mut at = |dx: f64| {
                probe.params_mut()[i] = base + dx;
                let l = loss(&probe);
                probe.params_mut()[i] = base;
                l
            };
            let fd = (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
            let rel = (a - fd).abs() / (fd.abs() + 1e-8);
            ensure(rel <= 1e-4, || format!("param {i}: analytic {a}, fd {fd}"))?;
            worst = worst.max(rel);
        }
    }
    Ok(format!("{} params × 5 batches, worst relative error {worst:.1e}", net.n_params()))
}

fn brute_force_min(m: &Matrix) -> f64 {
    fn go(m: &Matrix, row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if row == m.rows() {
            *best = best.min(acc);
            return;
        }
        for j in 0..m.cols() {
            if !used[j] {
                used[j] = true;
                go(m, row + 1, used, acc + m[(row, j)], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(m, 0, &mut vec![false; m.cols()], 0.0, &mut best);
    best
}

fn c9(runs: &mut Runs) -> Check {
    let mut rng = seeded_rng(9);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let rows: Vec<Vec<f64>> = (0..8).map(|_| (0..8).map(|_| 10.0 * rng.uniform()).collect()).collect();
        let m = Matrix::from_rows(&rows).map_err(err)?;
        let (_, cost) = hungarian_assignment(&m).map_err(err)?;
        worst = worst.max((cost - brute_force_min(&m)).abs());
    }
    ensure(worst < 1e-9, || format!("Hungarian off brute force by {worst:e}"))?;
    let mut min_rel = f64::INFINITY;
    for name in rectflow_cli::PRESETS {
        for r in &runs.get(name)?.metrics {
            if let Some(v) = r.metrics.relative_l2_cost {
                min_rel = min_rel.min(v);
            }
        }
    }
    ensure(min_rel >= -1e-9, || format!("relative_l2_cost {min_rel} < -1e-9"))?;
    Ok(format!("1000 instances exact (max gap {worst:.0e}); min relative_l2_cost over presets {min_rel:.2e}"))
}

fn c10() -> Check {
    let v = FnField::new(2, |z: &[f64], t: f64, o: &mut [f64]| {
        o[0] = -z[1] + 0.3 * (t * 3.0).sin() * z[0].cos();
        o[1] = z[0] - 0.2 * z[1] * z[1].tanh();
    });
    let start = PointCloud::from_rows(&[[1.0, 0.0], [-0.5, 0.7], [0.2, -1.3]]).map_err(err)?;
    let diff = |a: &PointCloud, b: &PointCloud| {
        a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    };
    let fine = integrate(&v, &start, &SolverSpec::euler(10_000)).map_err(err)?;
    let rk = integrate(&v, &start, &SolverSpec::rk45(1e-8, 1e-8)).map_err(err)?;
    let gap = diff(fine.last(), rk.last());
    ensure(gap <= 1e-3, || format!("Euler 1e4 vs RK45 gap {gap}"))?;
    let reference = integrate(&v, &start, &SolverSpec::rk45(1e-11, 1e-11)).map_err(err)?;
    let mut ratios = Vec::new();
    for n in [50, 100, 200, 400] {
        let e = |n| integrate(&v, &start, &SolverSpec::euler(n)).map(|t| diff(t.last(), reference.last()));
        let r = e(n).map_err(err)? / e(2 * n).map_err(err)?;
        ensure((r - 2.0).abs() <= 0.4, || format!("N = {n}: error ratio {r}"))?;
        ratios.push(r);
    }
    Ok(format!("gap {gap:.1e}; halving ratios {ratios:.3?}"))
}

fn c11() -> Check {
    let mut rng = seeded_rng(11);
    let atoms: Vec<[f64; 2]> = (0..8).map(|_| [4.0 * rng.standard_normal(), 4.0 * rng.standard_normal()]).collect();
    let atoms = PointCloud::from_rows(&atoms).map_err(err)?;
    let mut cfg = preset("gauss-to-mixture-N1").map_err(err)?;
    cfg.target = DistributionSpec::empirical(atoms.clone());
    cfg.solver = SolverSpec::euler(1000);
    cfg.metrics.crossing_time_samples = 0;
    cfg.metrics.burgers_probes = 0;
    let out = run(&cfg).map_err(err)?;
    let mut worst = 0.0f64;
    for z in out.coupling(1).right().rows() {
        let near = atoms
            .rows()
            .map(|a| ((a[0] - z[0]).powi(2) + (a[1] - z[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(near);
    }
    ensure(worst <= 1e-3, || format!("a particle ends {worst} from every atom"))?;
    Ok(format!("{} particles, max distance to nearest atom {worst:.1e}", out.coupling(1).n()))
}

fn c12() -> Check {
    let tmp = std::env::temp_dir().join(format!("rectflow-acceptance-{}", std::process::id()));
    let run_once = |dir: &str| -> Result<Vec<u8>, String> {
        let out = tmp.join(dir);
        let status = Command::new(env!("CARGO_BIN_EXE_rectflow"))
            .args(["run", "--preset", "two-dots", "--seed", "12", "--out", out.to_str().unwrap()])
            .output()
            .map_err(err)?;
        ensure(status.status.success(), || String::from_utf8_lossy(&status.stderr).into_owned())?;
        fs::read(out.join("metrics.json")).map_err(err)
    };
    let a = run_once("a");
    let b = run_once("b");
    let _ = fs::remove_dir_all(&tmp);
    let (a, b) = (a?, b?);
    ensure(a == b, || "metrics.json differs between runs".into())?;
    Ok(format!("metrics.json identical ({} bytes)", a.len()))
}

fn main() {
    let mut runs = Runs::default();
    let criteria: Vec<(u32, &str, u64, Box<dyn FnMut(&mut Runs) -> Check>)> = vec![
        (1, "convex-cost Pareto descent", 180, Box::new(c1)),
        (2, "telescoping straightening bound", 300, Box::new(c2)),
        (3, "marginal preservation", 60, Box::new(|_| c3())),
        (4, "1D monotone coupling", 30, Box::new(|_| c4())),
        (5, "PF-ODE target identity", 1, Box::new(|_| c5())),
        (6, "single-step mean collapse", 10, Box::new(c6)),
        (7, "schedule ordering", 300, Box::new(|_| c7())),
        (8, "gradient exactness", 10, Box::new(|_| c8())),
        (9, "assignment exactness", 30, Box::new(c9)),
        (10, "solver consistency", 60, Box::new(|_| c10())),
        (11, "data recovery", 30, Box::new(|_| c11())),
        (12, "determinism", u64::MAX, Box::new(|_| c12())),
    ];
    let mut failed = 0;
    for (id, title, budget, mut check) in criteria {
        let start = Instant::now();
        let result = check(&mut runs);
        let took = start.elapsed();
        let result = result.and_then(|detail| {
            if took > Duration::from_secs(budget) {
                Err(format!("{detail}; over the {budget} s budget"))
            } else {
                Ok(detail)
            }
        });
        let (tag, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(e) => {
                failed += 1;
                ("FAIL", e)
            }
        };
        println!("criterion {id:>2} {tag} {title} ({:.1} s): {detail}", took.as_secs_f64());
    }
    println!("acceptance: {} of 12 criteria passed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
