//! Euler-Maruyama exit times through the saddle compared with the formula.
//!
//! cargo run --release --example monte_carlo_exit -- [trajectories]

use quasipot::mc::{compare_with_formula, exit_time_stats};
use quasipot::pipeline::{Context, RunConfig};
use quasipot::prefactor::Case;
use quasipot::Result;

fn main() -> Result<()> {
    let trajectories = std::env::args()
        .nth(1)
        .map_or(Ok(500), |s| s.parse())
        .expect("trajectories must be an integer");
    let mut cfg = RunConfig::default();
    cfg.mc.trajectories = trajectories;
    cfg.case_b.epsilons = vec![0.15, 0.2];
    let ctx = Context::new(cfg, None)?;
    let stats = exit_time_stats(&ctx.mc_setup(Case::B)?)?;
    let (_, report) = ctx.prefactor(Case::B)?;
    let cmp = compare_with_formula(&stats, &report)?;
    for row in &cmp.rows {
        println!(
            "eps {:.2}: simulated {:.3} +- {:.3} ({} trajectories), formula {:.3}, relative error {:+.1}%",
            row.epsilon,
            row.met_mc,
            row.stderr.unwrap_or(f64::NAN),
            row.n_effective,
            row.met_formula,
            100.0 * row.rel_err
        );
    }
    Ok(())
}
