//! Learned orthogonal decompositions of drift fields and the large-deviation
//! machinery built on them.
//!
//! For a diffusion `dx = b(x) dt + sqrt(eps) dB` the drift is split as
//! `b = -grad V / 2 + l` with `grad V . l = 0`, where `V` is the
//! quasipotential of a stable point. A small tanh network learns `(V, l)`;
//! from the learned (or an exact) field the crate computes most probable exit
//! paths, the prefactor `L` of the mean exit time `E tau = L exp(V*/eps)`
//! for non-characteristic and characteristic boundaries, and checks the
//! result against direct Euler-Maruyama simulation.
//!
//! Modules, bottom up:
//!
//! - [`systems`]: drift fields, fixed points, the rotational double-well benchmark
//! - [`net`]: the network with exact input Jacobians and nested parameter gradients
//! - [`train`]: loss, sampling, Adam, error metrics
//! - [`field`]: evaluation over learned or analytic fields, Hessians, Lyapunov/Riccati
//! - [`path`]: most probable paths and the divergence line integral
//! - [`prefactor`]: mean exit time prefactors
//! - [`mc`]: Monte Carlo exit times
//! - [`pipeline`]: run configuration and the subcommands of the `quasipot` binary

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the component formulas in the numeric kernels.
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod field;
pub mod linalg;
pub mod mc;
pub mod net;
pub mod path;
pub mod pipeline;
pub mod prefactor;
pub mod systems;
pub mod train;

pub use error::{Error, Result};
pub use field::{FieldSample, HessianResult, LearnedField, PotentialField, RiccatiConvention};
pub use net::{init_network, Architecture, NetworkParams};
pub use systems::{AnalyticBenchmark, DriftSystem, FixedKind, FixedPoint, SystemRegistry};

/// Text form used in every CSV: 17 significant digits, `.` decimal point.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
