//! Every subcommand of the binary in sequence on one run directory: train a
//! short network, then path, prefactor, exit time table and simulation from
//! the learned field, and the summary report.
//!
//! cargo run --release --example full_pipeline -- [epochs]

use quasipot::pipeline::{
    cmd_mc, cmd_met, cmd_mpp, cmd_prefactor, cmd_report, cmd_surface, cmd_train, Context, RunConfig, RunDir,
};
use quasipot::prefactor::Case;
use quasipot::train::Grid;
use quasipot::Result;

fn main() -> Result<()> {
    let epochs = std::env::args()
        .nth(1)
        .map_or(Ok(4000), |s| s.parse())
        .expect("epochs must be an integer");
    let mut cfg = RunConfig::default();
    cfg.train.epochs = epochs;
    cfg.mc.trajectories = 200;
    cfg.case_b.epsilons = vec![0.2];
    let out = RunDir::create(std::env::temp_dir().join("quasipot_full_pipeline"))?;

    let trained = cmd_train(&cfg, None, &out, None)?;
    println!("trained {} epochs, final loss {:?}", trained.epochs, trained.final_loss);
    let ctx = Context::new(cfg, Some(&trained.checkpoint))?;
    cmd_surface(&ctx, &Grid::evaluation_default(), &out)?;
    for case in [Case::A, Case::B] {
        match cmd_mpp(&ctx, case, &out).and_then(|_| cmd_prefactor(&ctx, case, &out)) {
            Ok(r) => println!("case {case:?}: L = {:.4}, V* = {:.4}", r.l_coefficient, r.v_star),
            Err(e) => println!("case {case:?}: {e}"),
        }
    }
    cmd_met(&ctx, Case::B, &out)?;
    cmd_mc(&ctx, Case::B, &out)?;
    let report = cmd_report(out.path())?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    println!("outputs in {}", out.path().display());
    Ok(())
}
