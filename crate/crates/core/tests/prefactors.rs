use std::f64::consts::PI;
use std::sync::Arc;

use quasipot::field::{hessian_fd, DEFAULT_HESSIAN_STEP};
use quasipot::pipeline::{Context, RunConfig};
use quasipot::prefactor::{case_a_coefficient, case_b_coefficient, mean_exit_time, Case, PrefactorSettings};
use quasipot::systems::Decomposition;
use quasipot::{AnalyticBenchmark, PotentialField};

#[test]
fn formula_plug_ins() {
    let s = PrefactorSettings::default();
    assert!((case_a_coefficient(1.0, 1.0, 1.0, 0.0, &s) - (2.0 * PI).sqrt()).abs() < 1e-15);
    assert!((case_b_coefficient(1.0, -2.0, 4.0, 0.0, &s) - PI / 2f64.sqrt()).abs() < 1e-15);
    let printed = PrefactorSettings {
        printed_exponent_sign: true,
        ..s.clone()
    };
    let i = -0.7;
    let ratio = case_a_coefficient(1.0, 1.0, 1.0, i, &s) / case_a_coefficient(1.0, 1.0, 1.0, i, &printed);
    assert!((ratio - (2.0 * i).exp()).abs() < 1e-14);
}

#[test]
fn benchmark_reports() {
    let ctx = Context::new(RunConfig::default(), None).unwrap();
    let (_, a) = ctx.prefactor(Case::A).unwrap();
    assert!((a.mu_star.unwrap() - 0.375).abs() < 1e-8);
    assert!((a.det_h_star.unwrap() - 1.0).abs() < 1e-8);
    assert!((a.h_bar.determinant() - 4.0).abs() < 1e-6);
    assert!(a.warnings.is_empty(), "{:?}", a.warnings);
    for (e, l) in a.epsilons.iter().zip(&a.prefactors) {
        assert!((l / e.sqrt() - a.l_coefficient).abs() <= 1e-12 * a.l_coefficient);
    }
    let (_, b) = ctx.prefactor(Case::B).unwrap();
    assert_eq!(b.lambda_star, Some(1.0));
    assert!((b.l_coefficient - PI * 0.5f64.sqrt() * b.div_integral.exp()).abs() < 1e-6);
    assert!((b.v_star - 0.5).abs() < 1e-15);
    for r in [&a, &b] {
        let mut prev = f64::INFINITY;
        for k in 0..=25 {
            let eps = 0.05 + 0.01 * k as f64;
            let m = mean_exit_time(r, eps).unwrap();
            assert!(m < prev);
            prev = m;
        }
    }
}

#[test]
fn paper_convention_only_moves_case_a() {
    let ctx = Context::new(RunConfig::default(), None).unwrap();
    let mut cfg = RunConfig::default();
    cfg.prefactor.riccati_paper_convention = true;
    let printed = Context::new(cfg, None).unwrap();
    let (_, a) = ctx.prefactor(Case::A).unwrap();
    let (_, ap) = printed.prefactor(Case::A).unwrap();
    assert!((ap.h_bar.determinant() - 1.0).abs() < 1e-10);
    assert!((ap.l_coefficient / a.l_coefficient - 2.0).abs() < 1e-5);
    let (_, b) = ctx.prefactor(Case::B).unwrap();
    let (_, bp) = printed.prefactor(Case::B).unwrap();
    assert!((bp.l_coefficient / b.l_coefficient - 1.0).abs() < 1e-5);
}

#[derive(Debug)]
struct Scaled(AnalyticBenchmark, f64);

impl Decomposition for Scaled {
    fn dim(&self) -> usize {
        2
    }
    fn potential(&self, x: &[f64]) -> f64 {
        self.1 * self.0.potential(x)
    }
    fn potential_gradient(&self, x: &[f64], out: &mut [f64]) {
        self.0.potential_gradient(x, out);
        out.iter_mut().for_each(|v| *v *= self.1);
    }
    fn rotational(&self, x: &[f64], out: &mut [f64]) {
        self.0.rotational(x, out)
    }
    fn rotational_divergence(&self, x: &[f64]) -> f64 {
        self.0.rotational_divergence(x)
    }
}

#[test]
fn determinant_ratio_is_scale_invariant() {
    let bench = AnalyticBenchmark::standard();
    let ratio = |c: f64| {
        let f = PotentialField::analytic(Arc::new(Scaled(bench.clone(), c)));
        let hs = hessian_fd(&f, &[0.0, 0.0], DEFAULT_HESSIAN_STEP).unwrap().determinant();
        let hb = hessian_fd(&f, &bench.xbar(), DEFAULT_HESSIAN_STEP)
            .unwrap()
            .determinant();
        hs.abs() / hb
    };
    let r1 = ratio(1.0);
    assert!((r1 - 0.5).abs() < 1e-8);
    for c in [0.3, 2.0, 7.5] {
        assert!((ratio(c) - r1).abs() < 1e-8 * r1);
    }
}
