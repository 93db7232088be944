//! Trains the decomposition network on the benchmark and reports the
//! relative errors of the learned V and l on the evaluation grid.
//!
//! cargo run --release --example train_decomposition -- [epochs] [seed]

use quasipot::train::{approximation_errors, train, Grid, TrainConfig};
use quasipot::{AnalyticBenchmark, Architecture, Result};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args
        .next()
        .map_or(Ok(3000), |s| s.parse())
        .expect("epochs must be an integer");
    let seed = args
        .next()
        .map_or(Ok(0), |s| s.parse())
        .expect("seed must be an integer");

    let bench = AnalyticBenchmark::standard();
    let cfg = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let (params, history) = train(bench.system(), &Architecture::standard(2), &cfg)?;
    for r in history.records.iter().filter(|r| r.epoch % (epochs / 10).max(1) == 0) {
        println!(
            "epoch {:>6}  total {:.4e}  dynamics {:.4e}  orthogonality {:.4e}",
            r.epoch, r.loss.total, r.loss.dynamics, r.loss.orthogonality
        );
    }
    let m = approximation_errors(&params, &cfg.xbar, &bench, &Grid::evaluation_default())?;
    println!(
        "{epochs} epochs in {:.1} s: e_V = {:.2}%, e_l = {:.2}%",
        history.wall_seconds,
        100.0 * m.e_v,
        100.0 * m.e_l
    );
    Ok(())
}
