//! End-to-end acceptance run on the rotational double-well benchmark. Prints
//! one PASS/FAIL line per criterion and exits non-zero if any fails.

use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use quasipot::field::{hessian_fd, lyapunov_hessian, riccati_newton, DEFAULT_HESSIAN_STEP, RICCATI_TOL};
use quasipot::linalg::Matrix;
use quasipot::mc::{compare_with_formula, exit_time_stats, Comparison, ExitTimeStats};
use quasipot::path::{arclength_deviation, PathResult};
use quasipot::pipeline::{cmd_train, Context, RunConfig, RunDir};
use quasipot::prefactor::{Case, PrefactorReport};
use quasipot::train::{loss_components, loss_gradient, train, Grid, TrainConfig};
use quasipot::{
    init_network, AnalyticBenchmark, Architecture, NetworkParams, PotentialField, Result, RiccatiConvention,
};

struct Ledger {
    failures: usize,
}

impl Ledger {
    fn record(&mut self, id: &str, name: &str, outcome: Result<(bool, String)>) -> bool {
        let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        if !pass {
            self.failures += 1;
        }
        println!("[{}] {id} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        pass
    }

    fn info(&self, name: &str, detail: &str) {
        println!("[INFO] {name}: {detail}");
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn random_params(rng: &mut ChaCha8Rng, arch: &Architecture) -> NetworkParams {
    let base = init_network(arch, rng.random());
    let scale = rng.random_range(0.5..3.0);
    let values = base
        .values()
        .iter()
        .map(|v| scale * v + rng.random_range(-0.1..0.1))
        .collect();
    NetworkParams::from_values(arch.clone(), base.seed(), values).unwrap()
}

fn differentiation() -> Result<(bool, String)> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_jac = 0.0_f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=3);
        let hidden = (0..rng.random_range(1..=3)).map(|_| rng.random_range(1..=8)).collect();
        let arch = Architecture::new(n, hidden)?;
        let p = random_params(&mut rng, &arch);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
        let eval = p.forward_with_input_jacobian(&x)?;
        let h = 1e-5;
        let mut diff = vec![0.0; eval.input_jacobian.len()];
        for j in 0..n {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[j] += h;
            xm[j] -= h;
            let (yp, ym) = (p.forward(&xp)?, p.forward(&xm)?);
            for i in 0..=n {
                diff[i * n + j] = eval.input_jacobian[i * n + j] - (yp[i] - ym[i]) / (2.0 * h);
            }
        }
        worst_jac = worst_jac.max(inf_norm(&diff) / inf_norm(&eval.input_jacobian).max(1e-8));
    }

    let bench = AnalyticBenchmark::standard();
    let arch = Architecture::new(2, vec![4])?;
    let mut worst_grad = 0.0_f64;
    for _ in 0..20 {
        let p = random_params(&mut rng, &arch);
        let points: Vec<Vec<f64>> = (0..8)
            .map(|_| vec![rng.random_range(-1.5..0.0), rng.random_range(-0.8..0.8)])
            .collect();
        let cfg = TrainConfig {
            gamma1: rng.random_range(0.0..2.0),
            gamma2: rng.random_range(0.0..1.0),
            ..TrainConfig::default()
        };
        let (_, grad) = loss_gradient(&p, bench.system(), &points, &cfg)?;
        let floor = 1e-4 * inf_norm(&grad) + 1e-9;
        let h = 1e-6;
        for k in 0..grad.len() {
            let (mut vp, mut vm) = (p.values().to_vec(), p.values().to_vec());
            vp[k] += h;
            vm[k] -= h;
            let lp = loss_components(
                &NetworkParams::from_values(arch.clone(), 0, vp)?,
                bench.system(),
                &points,
                &cfg,
            )?;
            let lm = loss_components(
                &NetworkParams::from_values(arch.clone(), 0, vm)?,
                bench.system(),
                &points,
                &cfg,
            )?;
            let fd = (lp.total - lm.total) / (2.0 * h);
            worst_grad = worst_grad.max((grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(floor));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    Ok((
        worst_jac <= 1e-6 && worst_grad <= 1e-5 && secs < 60.0,
        format!(
            "input Jacobian rel err {worst_jac:.2e} (<= 1e-6), parameter gradient rel err {worst_grad:.2e} (<= 1e-5), {secs:.1} s"
        ),
    ))
}

fn diag(a: f64, b: f64) -> Matrix {
    Matrix::from_row_slice(2, 2, &[a, 0.0, 0.0, b])
}

fn analytic_oracles(bench: &AnalyticBenchmark, field: &PotentialField) -> Result<(bool, String)> {
    let (mut res, mut orth) = (0.0_f64, 0.0_f64);
    for x in Grid::evaluation_default().points() {
        let s = field.eval(&x)?;
        let b = bench.system().drift(&x)?;
        for ((bk, gk), lk) in b.iter().zip(&s.grad_v).zip(&s.l) {
            res = res.max((bk + 0.5 * gk - lk).abs());
        }
        orth = orth.max((s.grad_v[0] * s.l[0] + s.grad_v[1] * s.l[1]).abs());
    }
    let sys = bench.system();
    let (xbar, saddle) = (bench.xbar(), bench.saddle().location.clone());
    let fd_bar = hessian_fd(field, &xbar, DEFAULT_HESSIAN_STEP)?.matrix();
    let fd_star = hessian_fd(field, &saddle, DEFAULT_HESSIAN_STEP)?.matrix();
    let ly = lyapunov_hessian(&-sys.jacobian(&xbar)?, RiccatiConvention::Linearized)?;
    let nw = riccati_newton(&-sys.jacobian(&saddle)?, &fd_star, RiccatiConvention::Linearized)?;
    let errs = [
        (fd_bar - diag(4.0, 1.0)).amax(),
        (&fd_star - diag(-2.0, 1.0)).amax(),
        (ly.matrix() - diag(4.0, 1.0)).amax(),
        (nw.matrix() - diag(-2.0, 1.0)).amax(),
    ];
    let hess = errs.iter().copied().fold(0.0, f64::max);
    let ric = ly.riccati_residual.unwrap().max(nw.riccati_residual.unwrap());
    Ok((
        res <= 1e-10 && orth <= 1e-10 && hess <= 1e-5 && ric <= RICCATI_TOL,
        format!(
            "residual {res:.1e}, orthogonality {orth:.1e} (<= 1e-10); Hessian error {hess:.1e} (<= 1e-5); Riccati residual {ric:.1e} (<= 1e-10)"
        ),
    ))
}

fn path_pair(learned: &Context, exact: &Context, case: Case) -> Result<(PathResult, PathResult)> {
    Ok((learned.solve_path(case)?.path, exact.solve_path(case)?.path))
}

fn mc_rows(cmp: &Comparison) -> String {
    cmp.rows
        .iter()
        .map(|r| {
            format!(
                "eps {}: MC {:.3} +- {:.3}, formula {:.3}, err {:.1}%",
                r.epsilon,
                r.met_mc,
                r.stderr.unwrap_or(f64::NAN),
                r.met_formula,
                100.0 * r.error_relative_to_mc()
            )
        })
        .collect::<Vec<_>>()
        .join("; ")
}

fn within(cmp: &Comparison, tol: f64) -> bool {
    cmp.rows.iter().all(|r| r.error_relative_to_mc() <= tol)
}

fn with_threads<T: Send>(k: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(k)
        .build()
        .unwrap()
        .install(f)
}

fn reproducibility(exact: &Context, learned: Option<&Context>) -> Result<(bool, String)> {
    let bench = AnalyticBenchmark::standard();
    let cfg = TrainConfig {
        samples: 200,
        epochs: 300,
        seed: 7,
        ..TrainConfig::default()
    };
    let arch = Architecture::standard(2);
    let runs: Vec<_> = [1, 1, 4]
        .into_iter()
        .map(|k| with_threads(k, || train(bench.system(), &arch, &cfg)))
        .collect::<Result<_>>()?;
    let training = runs
        .windows(2)
        .all(|w| w[0].0 == w[1].0 && w[0].1.records == w[1].1.records);

    let ctx = learned.unwrap_or(exact);
    let mut reports: Vec<(PathResult, PrefactorReport)> = Vec::new();
    for k in [1, 4] {
        let (cp, r) = with_threads(k, || ctx.prefactor(Case::A))?;
        reports.push((cp.path, r));
    }
    let prefactor = reports[0] == reports[1] && reports[0].1.to_json()? == reports[1].1.to_json()?;

    let mut c = exact.clone();
    c.config.mc.trajectories = 200;
    c.config.case_b.epsilons = vec![0.2];
    let setup = c.mc_setup(Case::B)?;
    let tables: Vec<ExitTimeStats> = [1, 4, 16, 1]
        .into_iter()
        .map(|k| with_threads(k, || exit_time_stats(&setup)))
        .collect::<Result<_>>()?;
    let mc = tables.windows(2).all(|w| w[0] == w[1]);
    Ok((
        training && prefactor && mc,
        format!(
            "training {} (runs and 1/4 workers), path and prefactor report {} ({} field), MC table {} (1/4/16 workers)",
            same(training),
            same(prefactor),
            ctx.field.backing(),
            same(mc)
        ),
    ))
}

fn owned<T: Clone>(r: &Result<T>) -> Result<T> {
    r.as_ref()
        .cloned()
        .map_err(|e| quasipot::Error::numerical(e.to_string()))
}

fn same(b: bool) -> &'static str {
    if b {
        "bit-identical"
    } else {
        "DIFFERS"
    }
}

fn main() {
    let mut ledger = Ledger { failures: 0 };
    let bench = AnalyticBenchmark::standard();
    let analytic_field = PotentialField::analytic(std::sync::Arc::new(bench.clone()));

    ledger.record("1", "differentiation", differentiation());
    ledger.record("2", "analytic oracles", analytic_oracles(&bench, &analytic_field));

    // 3: training at the acceptance schedule
    let work = tempfile::tempdir().expect("temporary directory");
    let mut cfg = RunConfig::default();
    cfg.train.samples = 1000;
    cfg.train.epochs = 20_000;
    let started = Instant::now();
    let trained = RunDir::create(work.path().join("train")).and_then(|dir| cmd_train(&cfg, None, &dir, None));
    let secs = started.elapsed().as_secs_f64();
    let checkpoint = trained.as_ref().ok().map(|s| s.checkpoint.clone());
    ledger.record(
        "3",
        "training reproduction",
        trained.map(|s| {
            let m = s.metrics.expect("benchmark metrics");
            (
                m.e_v <= 0.02 && m.e_l <= 0.02 && secs <= 1800.0,
                format!(
                    "N = 1000, 20000 epochs: grid e_V = {:.4}%, e_l = {:.4}% (<= 2%); training points e_V = {:.4}%, e_l = {:.4}%; final loss {:.3e}, {:.0} s",
                    100.0 * m.e_v,
                    100.0 * m.e_l,
                    100.0 * m.e_v_training,
                    100.0 * m.e_l_training,
                    s.final_loss.unwrap_or(f64::NAN),
                    secs
                ),
            )
        }),
    );

    ledger.record(
        "inv",
        "training loss falls three orders of magnitude",
        (|| {
            let csv = std::fs::read_to_string(work.path().join("train").join("history.csv"))?;
            let totals: Vec<f64> = csv
                .lines()
                .skip(1)
                .filter_map(|l| l.rsplit(',').next()?.parse().ok())
                .collect();
            let (first, last) = (totals[0], *totals.last().unwrap());
            Ok((
                first / last >= 1e3,
                format!(
                    "epoch 1 total {first:.3e}, epoch {} total {last:.3e}, ratio {:.1e}",
                    totals.len(),
                    first / last
                ),
            ))
        })(),
    );

    let exact = Context::new(cfg.clone(), None).expect("analytic context");
    let learned = checkpoint
        .as_deref()
        .map(|p: &Path| Context::new(cfg.clone(), Some(p)))
        .transpose();
    let learned = match learned {
        Ok(l) => l,
        Err(e) => {
            ledger.info("learned field", &format!("unavailable: {e}"));
            None
        }
    };

    // 4: exit point and paths
    ledger.record(
        "4",
        "exit point and paths",
        (|| {
            let l = learned.as_ref().ok_or_else(|| quasipot::Error::usage("no trained field"))?;
            let (la, ea) = path_pair(l, &exact, Case::A)?;
            let (lb, eb) = path_pair(l, &exact, Case::B)?;
            let x_star = la.exit_end().to_vec();
            let d_exit = ((x_star[0] + 0.5).powi(2) + x_star[1].powi(2)).sqrt();
            let (da, db) = (arclength_deviation(&la, &ea), arclength_deviation(&lb, &eb));
            Ok((
                d_exit <= 0.05 && da <= 0.05 && db <= 0.05,
                format!(
                    "learned x* = ({:.4}, {:.4}), distance {d_exit:.4} (<= 0.05); path deviation A {da:.4}, B {db:.4} (<= 0.05)",
                    x_star[0], x_star[1]
                ),
            ))
        })(),
    );

    // 5: prefactors
    let exact_a = exact.prefactor(Case::A).map(|r| r.1);
    let exact_b = exact.prefactor(Case::B).map(|r| r.1);
    ledger.record(
        "5",
        "prefactors",
        (|| {
            let (ea, eb) = (owned(&exact_a)?, owned(&exact_b)?);
            let closed = PI * 0.5f64.sqrt() * eb.div_integral.exp();
            let b_ok = (eb.l_coefficient - closed).abs() <= 1e-6 * closed;
            let l = learned.as_ref().ok_or_else(|| quasipot::Error::usage("no trained field"))?;
            let (_, la) = l.prefactor(Case::A)?;
            let (_, lb) = l.prefactor(Case::B)?;
            let ra = (la.l_coefficient - ea.l_coefficient).abs() / ea.l_coefficient;
            let rb = (lb.l_coefficient - eb.l_coefficient).abs() / eb.l_coefficient;
            Ok((
                b_ok && ra <= 0.15 && rb <= 0.15,
                format!(
                    "analytic B: {:.4} vs pi sqrt(0.5) exp(I_B) = {closed:.4} (I_B = {:.4}); A: learned {:.4} vs analytic {:.4} ({:.1}%); B: learned {:.4} vs analytic {:.4} ({:.1}%) (<= 15%)",
                    eb.l_coefficient,
                    eb.div_integral,
                    la.l_coefficient,
                    ea.l_coefficient,
                    100.0 * ra,
                    lb.l_coefficient,
                    eb.l_coefficient,
                    100.0 * rb
                ),
            ))
        })(),
    );

    // 6: Monte Carlo arbitration
    let mut mc_ctx = exact.clone();
    mc_ctx.config.case_a.epsilons = vec![0.08, 0.1, 0.14];
    mc_ctx.config.case_b.epsilons = vec![0.12, 0.15, 0.2];
    let mut printed_ctx = mc_ctx.clone();
    printed_ctx.config.prefactor.riccati_paper_convention = true;
    let started = Instant::now();
    let stats_a = mc_ctx.mc_setup(Case::A).and_then(|s| exit_time_stats(&s));
    let stats_b = mc_ctx.mc_setup(Case::B).and_then(|s| exit_time_stats(&s));
    let mc_secs = started.elapsed().as_secs_f64();
    let compare = |ctx: &Context, stats: &Result<ExitTimeStats>, case: Case| -> Result<Comparison> {
        let s = stats.as_ref().map_err(|e| quasipot::Error::numerical(e.to_string()))?;
        compare_with_formula(s, &ctx.prefactor(case)?.1)
    };
    let adopted_a = compare(&mc_ctx, &stats_a, Case::A);
    let adopted_b = compare(&mc_ctx, &stats_b, Case::B);
    let printed_a = compare(&printed_ctx, &stats_a, Case::A);
    ledger.record(
        "6",
        "Monte Carlo arbitration",
        (|| {
            let (a, b, p) = (owned(&adopted_a)?, owned(&adopted_b)?, owned(&printed_a)?);
            let (ok_a, ok_b, paper_fails) = (within(&a, 0.25), within(&b, 0.25), !within(&p, 0.25));
            Ok((
                ok_a && ok_b && paper_fails,
                format!(
                    "adopted case A {} [{}]; adopted case B {} [{}]; printed-convention case A {} [{}]; M = 2000, dt = 1e-3, {mc_secs:.0} s",
                    if ok_a { "within 25%" } else { "outside 25%" },
                    mc_rows(&a),
                    if ok_b { "within 25%" } else { "outside 25%" },
                    mc_rows(&b),
                    if paper_fails { "fails as required" } else { "passes (should fail)" },
                    mc_rows(&p)
                ),
            ))
        })(),
    );
    let mut sign_ctx = mc_ctx.clone();
    sign_ctx.config.prefactor.printed_exponent_sign = true;
    for (case, stats) in [(Case::A, &stats_a), (Case::B, &stats_b)] {
        if let Ok(c) = compare(&sign_ctx, stats, case) {
            ledger.info(&format!("exp(-I) variant, case {case:?}"), &mc_rows(&c));
        }
    }

    ledger.record("7", "reproducibility", reproducibility(&exact, learned.as_ref()));

    // properties of the simulation and of the convention choice
    ledger.record(
        "inv",
        "simulation step refinement",
        (|| {
            let mut c = exact.clone();
            c.config.case_a.epsilons = vec![0.1];
            let coarse = exit_time_stats(&c.mc_setup(Case::A)?)?;
            c.config.mc.dt /= 2.0;
            let fine = exit_time_stats(&c.mc_setup(Case::A)?)?;
            let (a, b) = (&coarse.records[0], &fine.records[0]);
            let se = a.stderr.unwrap_or(f64::NAN);
            Ok((
                (a.mean - b.mean).abs() < se,
                format!(
                    "case A eps 0.1: dt 1e-3 mean {:.4}, dt 5e-4 mean {:.4}, change {:.4} vs stderr {:.4}",
                    a.mean,
                    b.mean,
                    (a.mean - b.mean).abs(),
                    se
                ),
            ))
        })(),
    );
    ledger.record(
        "inv",
        "simulated exit time decreases with eps",
        Ok((
            [&stats_a, &stats_b].iter().all(|s| {
                s.as_ref()
                    .map(|s| s.records.windows(2).all(|w| w[0].mean > w[1].mean))
                    .unwrap_or(false)
            }),
            "case A and case B sweeps".into(),
        )),
    );
    ledger.record(
        "inv",
        "exactly one convention within 25% at eps 0.1",
        (|| {
            let pick = |c: &Result<Comparison>| -> Result<bool> {
                let c = c.as_ref().map_err(|e| quasipot::Error::numerical(e.to_string()))?;
                let row = c.rows.iter().find(|r| r.epsilon == 0.1).expect("eps 0.1 in the sweep");
                Ok(row.error_relative_to_mc() <= 0.25)
            };
            let (adopted, printed) = (pick(&adopted_a)?, pick(&printed_a)?);
            Ok((
                adopted != printed,
                format!("adopted within: {adopted}, printed convention within: {printed}"),
            ))
        })(),
    );

    if ledger.failures > 0 {
        println!("{} acceptance line(s) failed", ledger.failures);
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
