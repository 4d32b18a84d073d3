use rectflow::cloud::Coupling;
use rectflow::distributions::{DiagonalGaussian, DistributionSpec};
use rectflow::metrics::{transport_cost, wasserstein2};
use rectflow::ode::integrate;
use rectflow::rng::seeded_rng;
use rectflow::velocity::neural::TrainConfig;
use rectflow::{distill, Backend, ConvexCost, MetricsOptions, Rectifier, ReflowPlan, Schedule, SolverSpec};

fn dots(centres: &[[f64; 2]]) -> DistributionSpec {
    DistributionSpec::equal_mixture(centres.iter().map(|c| DiagonalGaussian::new(c.to_vec(), vec![0.1, 0.1]).unwrap()).collect())
        .unwrap()
}

fn independent(src: &DistributionSpec, tgt: &DistributionSpec, n: usize, seed: u64) -> Coupling {
    let mut rng = seeded_rng(seed);
    Coupling::new(src.sample(n, &mut rng).unwrap(), tgt.sample(n, &mut rng).unwrap()).unwrap()
}

fn knn(bandwidth: f64, steps: usize) -> Rectifier {
    Rectifier {
        backend: Backend::Knn {
            bandwidth,
            neighbors: 100,
        },
        schedule: Schedule::Linear,
        solver: SolverSpec::euler(steps),
        metrics: MetricsOptions::default(),
    }
}

#[test]
fn two_dots_rewire_to_shorter_paths() {
    let src = dots(&[[0.0, 2.0], [0.0, -2.0]]);
    let tgt = dots(&[[4.0, 2.0], [4.0, -2.0]]);
    let pairs = independent(&src, &tgt, 600, 1);
    let res = knn(0.3, 50).rectify_once(&pairs, &mut seeded_rng(2)).unwrap();
    let before = transport_cost(&pairs, ConvexCost::L1Norm);
    let after = transport_cost(&res.coupling, ConvexCost::L1Norm);
    assert!(after < before, "{after} vs {before}");
    // almost every particle keeps its vertical side
    let kept = res.coupling.left().rows().zip(res.coupling.right().rows()).filter(|(a, b)| a[1] * b[1] > 0.0).count();
    assert!(kept as f64 > 0.95 * 600.0, "{kept}");
}

#[test]
fn identical_gaussians_cost_collapses() {
    let g = DistributionSpec::gaussian(vec![0.0], vec![1.0]).unwrap();
    let pairs = independent(&g, &g, 2000, 3);
    assert!((transport_cost(&pairs, ConvexCost::L2Sq) - 2.0).abs() < 0.2);

    let exact = Rectifier {
        backend: Backend::ExactGaussian {
            source: DiagonalGaussian::new(vec![0.0], vec![1.0]).unwrap(),
            target: DiagonalGaussian::new(vec![0.0], vec![1.0]).unwrap(),
        },
        ..knn(0.3, 200)
    };
    let res = exact.rectify_once(&pairs, &mut seeded_rng(4)).unwrap();
    assert!(res.metrics.cost_l2sq.unwrap() < 1e-3, "{:?}", res.metrics);
    assert_eq!(res.metrics.monotone_violations, Some(0));

    let res = knn(0.3, 100).rectify_once(&pairs, &mut seeded_rng(4)).unwrap();
    assert!(res.metrics.cost_l2sq.unwrap() < 0.5, "{:?}", res.metrics);
}

#[test]
fn reflow_is_reproducible_from_seed() {
    let src = DistributionSpec::gaussian(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
    let tgt = dots(&[[3.0, 1.0], [3.0, -1.0]]);
    let pairs = independent(&src, &tgt, 300, 5);
    let heldout = independent(&src, &tgt, 200, 6);
    let plan = ReflowPlan {
        source: Some(&src),
        heldout: Some(&heldout),
    };
    let r = knn(0.2, 20);
    let a = r.reflow(&pairs, 2, plan, &mut seeded_rng(7)).unwrap();
    let b = r.reflow(&pairs, 2, plan, &mut seeded_rng(7)).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.metrics, y.metrics);
        assert_eq!(x.coupling, y.coupling);
    }
    // the second round starts from the first round's endpoints on the held-out set
    assert_eq!(a[1].coupling.left(), heldout.left());
    assert_eq!(a.len(), 2);
}

#[test]
fn distilled_map_beats_single_euler_step() {
    let src = DistributionSpec::gaussian(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
    let tgt = dots(&[[3.0, 1.5], [3.0, -1.5]]);
    let pairs = independent(&src, &tgt, 1000, 8);
    let mlp = TrainConfig {
        hidden: vec![32, 32],
        iterations: 4000,
        batch_size: 128,
        ema_decay: Some(0.99),
        ..Default::default()
    };
    let r = knn(0.3, 50);
    let plan = ReflowPlan {
        source: Some(&src),
        heldout: None,
    };
    let mut rng = seeded_rng(9);
    let rounds = r.reflow(&pairs, 2, plan, &mut rng).unwrap();
    let second = &rounds[1];
    let (map, curve) = distill(second, &mlp, &mut rng).unwrap();
    assert!(!curve.is_empty());

    let probe = src.sample(300, &mut rng).unwrap();
    let reference = tgt.sample(300, &mut rng).unwrap();
    let distilled = map.apply_cloud(&probe).unwrap();
    let one_step = integrate(&second.velocity, &probe, &SolverSpec::euler(1)).unwrap();
    let w_distilled = wasserstein2(&distilled, &reference, 2048).unwrap();
    let w_euler = wasserstein2(one_step.last(), &reference, 2048).unwrap();
    assert!(w_distilled <= w_euler, "distilled {w_distilled} vs one Euler step {w_euler}");
}
