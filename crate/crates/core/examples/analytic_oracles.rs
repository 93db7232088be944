//! Checks the exact decomposition of the double-well benchmark: orthogonality
//! on the evaluation grid, fixed points, and the Hessians at the stable point
//! and the saddle by finite differences, Lyapunov and Riccati-Newton.
//!
//! cargo run --release --example analytic_oracles

use std::sync::Arc;

use quasipot::field::{hessian_fd, lyapunov_hessian, riccati_newton, DEFAULT_HESSIAN_STEP};
use quasipot::train::Grid;
use quasipot::{AnalyticBenchmark, PotentialField, Result, RiccatiConvention};

fn main() -> Result<()> {
    let bench = AnalyticBenchmark::standard();
    let field = PotentialField::analytic(Arc::new(bench.clone()));
    let sys = bench.system();

    let (mut residual, mut orth) = (0.0_f64, 0.0_f64);
    let grid = Grid::evaluation_default();
    for x in grid.points() {
        let s = field.eval(&x)?;
        let b = sys.drift(&x)?;
        for ((bk, gk), lk) in b.iter().zip(&s.grad_v).zip(&s.l) {
            residual = residual.max((bk + 0.5 * gk - lk).abs());
        }
        orth = orth.max((s.grad_v[0] * s.l[0] + s.grad_v[1] * s.l[1]).abs());
    }
    println!(
        "grid of {} points: max |b + grad V/2 - l| = {residual:.2e}, max |grad V . l| = {orth:.2e}",
        grid.len()
    );

    for fp in sys.fixed_points() {
        println!("fixed point {:?}: {}", fp.location, fp.kind);
    }

    let xbar = bench.xbar();
    let saddle = bench.saddle().location.clone();
    for conv in [RiccatiConvention::Linearized, RiccatiConvention::from_flag(true)] {
        let q_bar = -sys.jacobian(&xbar)?;
        let q_star = -sys.jacobian(&saddle)?;
        let fd_star = hessian_fd(&field, &saddle, DEFAULT_HESSIAN_STEP)?.matrix();
        let seed = fd_star / conv.coefficient();
        let h_bar = lyapunov_hessian(&q_bar, conv)?;
        let h_star = riccati_newton(&q_star, &seed, conv)?;
        println!(
            "{conv:?}: H_bar = {:?} (residual {:.1e}), H* = {:?} (residual {:.1e})",
            rows(&h_bar.matrix()),
            h_bar.riccati_residual.unwrap_or(0.0),
            rows(&h_star.matrix()),
            h_star.riccati_residual.unwrap_or(0.0)
        );
    }
    println!(
        "finite differences: H_bar = {:?}, H* = {:?}",
        rows(&hessian_fd(&field, &xbar, DEFAULT_HESSIAN_STEP)?.matrix()),
        rows(&hessian_fd(&field, &saddle, DEFAULT_HESSIAN_STEP)?.matrix())
    );
    Ok(())
}

fn rows(m: &quasipot::linalg::Matrix) -> Vec<Vec<f64>> {
    quasipot::linalg::Rows::from(m)
        .0
        .iter()
        .map(|r| r.iter().map(|v| (v * 1e6).round() / 1e6).collect())
        .collect()
}
