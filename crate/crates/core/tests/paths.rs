use std::sync::Arc;

use quasipot::path::{
    divergence_integral, exit_point_on_boundary, integrate_mpp, saddle_seed, Baseline, LineSegment, PathOptions,
    PathResult, PathStatus,
};
use quasipot::{AnalyticBenchmark, PotentialField};

fn setup() -> (AnalyticBenchmark, PotentialField) {
    let b = AnalyticBenchmark::standard();
    let f = PotentialField::analytic(Arc::new(b.clone()));
    (b, f)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn check_structure(p: &PathResult, xbar: &[f64], opts: &PathOptions) {
    assert_eq!(p.status, PathStatus::Converged);
    assert!(dist(p.stable_end(), xbar) <= opts.delta2);
    for w in p.points.windows(2) {
        let d = dist(&w[0], &w[1]);
        assert!((d - opts.sigma_step).abs() <= 0.01 * opts.sigma_step, "spacing {d}");
    }
    for w in p.sigma.windows(2) {
        assert!((w[1] - w[0] - opts.sigma_step).abs() < 1e-15);
    }
    assert!(
        p.speed_range.0 >= 0.98 && p.speed_range.1 <= 1.02,
        "{:?}",
        p.speed_range
    );
}

#[test]
fn case_a_path() {
    let (b, f) = setup();
    let line = LineSegment::vertical(-0.5, -0.8, 0.8);
    let exit = exit_point_on_boundary(&f, &line).unwrap();
    assert!(dist(&exit.point, &[-0.5, 0.0]) < 1e-7);
    let opts = PathOptions::default();
    let p = integrate_mpp(b.system(), &f, &exit.point, &b.xbar(), &opts).unwrap();
    check_structure(&p, &b.xbar(), &opts);
    assert_eq!(p.exit_end(), exit.point.as_slice());
}

#[test]
fn case_b_path() {
    let (b, f) = setup();
    let opts = PathOptions::default();
    let seed = saddle_seed(b.system(), b.saddle(), opts.delta1, &b.xbar()).unwrap();
    assert!(dist(&seed.point, &[-0.05, 0.0]) < 1e-14);
    let p = integrate_mpp(b.system(), &f, &seed.point, &b.xbar(), &opts).unwrap();
    check_structure(&p, &b.xbar(), &opts);
}

#[test]
fn rk4_refinement_ratio() {
    let (b, f) = setup();
    let at = |h: f64| {
        let opts = PathOptions {
            sigma_step: h,
            max_length: 1.0,
            ..PathOptions::default()
        };
        let p = integrate_mpp(b.system(), &f, &[-0.5, 0.0], &b.xbar(), &opts).unwrap();
        assert_eq!(p.status, PathStatus::MaxLength);
        p.stable_end().to_vec()
    };
    let (p1, p2, p3) = (at(0.04), at(0.02), at(0.01));
    let ratio = dist(&p1, &p2) / dist(&p2, &p3);
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn divergence_integral_is_additive() {
    let (b, f) = setup();
    let opts = PathOptions::default();
    let p = integrate_mpp(b.system(), &f, &[-0.5, 0.0], &b.xbar(), &opts).unwrap();
    let mid = p.points.len() / 2;
    let split = |lo: usize, hi: usize| PathResult {
        points: p.points[lo..hi].to_vec(),
        sigma: p.sigma[lo..hi].to_vec(),
        ..p.clone()
    };
    let whole = divergence_integral(b.system(), &f, &p, &Baseline::None).unwrap();
    let parts = divergence_integral(b.system(), &f, &split(0, mid + 1), &Baseline::None).unwrap()
        + divergence_integral(b.system(), &f, &split(mid, p.points.len()), &Baseline::None).unwrap();
    assert!((whole - parts).abs() < 1e-12);
    // zero at both fixed points of the exact field
    let based = divergence_integral(
        b.system(),
        &f,
        &p,
        &Baseline::StableAndSaddle {
            xbar: b.xbar(),
            saddle: vec![0.0, 0.0],
        },
    )
    .unwrap();
    assert_eq!(whole, based);
}

#[test]
fn step_halving_preserves_the_integral() {
    let (b, f) = setup();
    let run = |h: f64| {
        let opts = PathOptions {
            sigma_step: h,
            ..PathOptions::default()
        };
        let p = integrate_mpp(b.system(), &f, &[-0.05, 0.0], &b.xbar(), &opts).unwrap();
        divergence_integral(b.system(), &f, &p, &Baseline::None).unwrap()
    };
    let (i1, i2) = (run(1e-3), run(5e-4));
    assert!((i1 - i2).abs() < 1e-4, "{i1} vs {i2}");
}
