//! Most probable exit paths of the benchmark for a straight boundary
//! (through the minimum of V on it) and for exit through the saddle, using
//! the exact decomposition. Writes both paths as CSV to the temp directory.
//!
//! cargo run --release --example most_probable_path

use std::sync::Arc;

use quasipot::path::{
    divergence_integral, exit_point_on_boundary, integrate_mpp, path_csv, saddle_seed, Baseline, LineSegment,
    PathOptions,
};
use quasipot::{AnalyticBenchmark, PotentialField, Result};

fn main() -> Result<()> {
    let bench = AnalyticBenchmark::standard();
    let field = PotentialField::analytic(Arc::new(bench.clone()));
    let sys = bench.system();
    let xbar = bench.xbar();
    let opts = PathOptions::default();

    let boundary = LineSegment::vertical(-0.5, -0.8, 0.8);
    let exit = exit_point_on_boundary(&field, &boundary)?;
    let path_a = integrate_mpp(sys, &field, &exit.point, &xbar, &opts)?;
    let int_a = divergence_integral(sys, &field, &path_a, &Baseline::Stable { xbar: xbar.clone() })?;

    let saddle = bench.saddle().clone();
    let seed = saddle_seed(sys, &saddle, opts.delta1, &xbar)?;
    let path_b = integrate_mpp(sys, &field, &seed.point, &xbar, &opts)?;
    let int_b = divergence_integral(
        sys,
        &field,
        &path_b,
        &Baseline::StableAndSaddle {
            xbar: xbar.clone(),
            saddle: saddle.location.clone(),
        },
    )?;

    for (name, path, integral) in [("A", &path_a, int_a), ("B", &path_b, int_b)] {
        let x2: Vec<f64> = path.points.iter().map(|p| p[1]).collect();
        let (lo, hi) = x2
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        println!(
            "case {name}: {:?}, {} nodes, length {:.4}, x2 in [{lo:.3}, {hi:.3}], speed in [{:.6}, {:.6}], integral of div l {integral:.5}",
            path.status,
            path.points.len(),
            path.length(),
            path.speed_range.0,
            path.speed_range.1
        );
        let file = std::env::temp_dir().join(format!("quasipot_path_{name}.csv"));
        std::fs::write(&file, path_csv(sys, &field, path)?)?;
        println!("  written to {}", file.display());
    }
    println!("exit point on x1 = -0.5: {:?}, V* = {:.4}", exit.point, exit.potential);
    Ok(())
}
