//! Brings a new system to the library: a rotating Ornstein-Uhlenbeck process
//! `b = -x + beta J x` whose exact split is `V = |x|^2`, `l = beta J x`.
//! Computes the prefactor for exit across `x1 = 1` and checks it by simulation.
//!
//! cargo run --release --example custom_system

use std::sync::Arc;

use quasipot::mc::{compare_with_formula, exit_time_stats, ExitRegion, McParams, McSetup};
use quasipot::path::{exit_point_on_boundary, integrate_mpp, LineSegment, PathOptions};
use quasipot::prefactor::{prefactor_case_a, PrefactorSettings};
use quasipot::systems::{Decomposition, VectorField};
use quasipot::{DriftSystem, PotentialField, Result};

struct RotatingOu {
    beta: f64,
}

impl VectorField for RotatingOu {
    fn dim(&self) -> usize {
        2
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = -x[0] - self.beta * x[1];
        out[1] = -x[1] + self.beta * x[0];
    }

    fn jacobian_into(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&[-1.0, -self.beta, self.beta, -1.0]);
    }
}

impl Decomposition for RotatingOu {
    fn dim(&self) -> usize {
        2
    }

    fn potential(&self, x: &[f64]) -> f64 {
        x[0] * x[0] + x[1] * x[1]
    }

    fn potential_gradient(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 2.0 * x[0];
        out[1] = 2.0 * x[1];
    }

    fn rotational(&self, x: &[f64], out: &mut [f64]) {
        out[0] = -self.beta * x[1];
        out[1] = self.beta * x[0];
    }

    fn rotational_divergence(&self, _x: &[f64]) -> f64 {
        0.0
    }
}

fn main() -> Result<()> {
    let beta = 1.0;
    let model = Arc::new(RotatingOu { beta });
    let system = DriftSystem::new("rotating-ou", model.clone()).with_fixed_points(&[vec![0.0, 0.0]])?;
    let field = PotentialField::analytic(model);
    let xbar = vec![0.0, 0.0];
    println!("fixed point: {:?}", system.fixed_points()[0]);

    let boundary = LineSegment::vertical(1.0, -2.0, 2.0);
    let exit = exit_point_on_boundary(&field, &boundary)?;
    let path = integrate_mpp(&system, &field, &exit.point, &xbar, &PathOptions::default())?;
    let eps = vec![0.2, 0.25];
    let report = prefactor_case_a(
        &system,
        &field,
        &xbar,
        &boundary,
        &exit,
        &path,
        &eps,
        &PrefactorSettings::default(),
    )?;
    println!(
        "exit point {:?}, V* = {:.4}, path length {:.4}, L = {:.4} eps^{}",
        exit.point,
        report.v_star,
        path.length(),
        report.l_coefficient,
        report.epsilon_power
    );

    let setup = McSetup::new(
        system,
        xbar,
        ExitRegion::HalfSpace {
            normal: vec![1.0, 0.0],
            offset: 1.0,
        },
        eps,
        McParams {
            trajectories: 400,
            ..McParams::default()
        },
    )?;
    let cmp = compare_with_formula(&exit_time_stats(&setup)?, &report)?;
    print!("{}", cmp.to_csv());
    Ok(())
}
