//! Prefactor reports for both boundary cases under each Hessian convention,
//! and the resulting mean exit time table.
//!
//! cargo run --release --example prefactors

use quasipot::pipeline::{Context, RunConfig};
use quasipot::prefactor::{met_csv, Case};
use quasipot::Result;

fn main() -> Result<()> {
    for printed in [false, true] {
        let mut cfg = RunConfig::default();
        cfg.prefactor.riccati_paper_convention = printed;
        let ctx = Context::new(cfg, None)?;
        println!("riccati_paper_convention = {printed}");
        for case in [Case::A, Case::B] {
            let (_, r) = ctx.prefactor(case)?;
            println!(
                "  case {case:?}: x* = ({:.4}, {:.4}), V* = {:.4}, integral {:.4}, L = {:.4} eps^{}",
                r.x_star[0], r.x_star[1], r.v_star, r.div_integral, r.l_coefficient, r.epsilon_power
            );
            for w in &r.warnings {
                println!("    warning: {w}");
            }
        }
    }
    let ctx = Context::new(RunConfig::default(), None)?;
    let (_, r) = ctx.prefactor(Case::B)?;
    let eps: Vec<f64> = (1..=6).map(|k| 0.05 * k as f64).collect();
    print!("{}", met_csv(&r, &eps)?);
    Ok(())
}
