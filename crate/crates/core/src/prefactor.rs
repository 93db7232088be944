//! Prefactors `L` of the mean exit time `E tau = L exp(V*/eps)` for a
//! non-characteristic boundary (case A, `L ~ sqrt(eps)`) and for exit
//! through a saddle on a characteristic boundary (case B, `L ~ 1`).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::field::{
    hessian_fd, lyapunov_hessian, riccati_newton, HessianResult, PotentialField, RiccatiConvention,
    DEFAULT_HESSIAN_STEP,
};
use crate::linalg::{self, Matrix};
use crate::path::{divergence_integral, Baseline, BoundaryCurve, ExitPoint, PathResult, PathStatus, SaddleSeed};
use crate::systems::{norm, DriftSystem, FixedPoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrefactorSettings {
    /// Take `H_bar` (and `H*`) from the `2H^2 = Q^T H + H Q` convention
    /// instead of the field's own Hessian.
    pub riccati_paper_convention: bool,
    /// Use `exp(-I)` instead of `exp(+I)` for the divergence factor of `L`.
    pub printed_exponent_sign: bool,
    /// Subtract `div l` at the fixed points before integrating.
    pub subtract_baseline: bool,
    pub hessian_step: f64,
    /// Relative discrepancy between Hessian routes that triggers a warning.
    pub crosscheck_tolerance: f64,
    /// Half-width, in curve parameter, of the window around `x*` in which
    /// `<b, n> < 0` is checked.
    pub transversality_window: f64,
}

impl Default for PrefactorSettings {
    fn default() -> Self {
        PrefactorSettings {
            riccati_paper_convention: false,
            printed_exponent_sign: false,
            subtract_baseline: true,
            hessian_step: DEFAULT_HESSIAN_STEP,
            crosscheck_tolerance: 0.2,
            transversality_window: 0.2,
        }
    }
}

impl PrefactorSettings {
    fn convention(&self) -> RiccatiConvention {
        RiccatiConvention::from_flag(self.riccati_paper_convention)
    }

    fn divergence_factor(&self, integral: f64) -> f64 {
        if self.printed_exponent_sign {
            (-integral).exp()
        } else {
            integral.exp()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Case {
    A,
    B,
}

impl std::str::FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Case::A),
            "B" | "b" => Ok(Case::B),
            other => Err(Error::usage(format!("unknown case '{other}', expected A or B"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub backing: String,
    pub settings: PrefactorSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefactorReport {
    pub case: Case,
    /// Exit point (case A) or saddle (case B).
    pub x_star: Vec<f64>,
    pub v_star: f64,
    pub mu_star: Option<f64>,
    pub det_h_star: Option<f64>,
    pub lambda_star: Option<f64>,
    pub h_bar: HessianResult,
    /// The other route to `H_bar`, kept for comparison.
    pub h_bar_crosscheck: Option<HessianResult>,
    /// Full Hessian at `x*` (case A) or at the saddle (case B).
    pub h_star: HessianResult,
    pub h_star_crosscheck: Option<HessianResult>,
    pub div_integral: f64,
    /// `L / eps^epsilon_power`.
    pub l_coefficient: f64,
    pub epsilon_power: f64,
    pub epsilons: Vec<f64>,
    pub prefactors: Vec<f64>,
    pub warnings: Vec<String>,
    pub provenance: Provenance,
}

impl PrefactorReport {
    pub fn prefactor(&self, eps: f64) -> f64 {
        self.l_coefficient * eps.powf(self.epsilon_power)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// CSV `epsilon,L,V_star,met_formula` over the report's epsilons.
    pub fn met_csv(&self) -> Result<String> {
        met_csv(self, &self.epsilons)
    }
}

pub fn met_csv(report: &PrefactorReport, eps: &[f64]) -> Result<String> {
    let mut s = String::from("epsilon,L,V_star,met_formula\n");
    for &e in eps {
        let met = mean_exit_time(report, e)?;
        s.push_str(&format!(
            "{},{},{},{}\n",
            crate::fmt_f64(e),
            crate::fmt_f64(report.prefactor(e)),
            crate::fmt_f64(report.v_star),
            crate::fmt_f64(met)
        ));
    }
    Ok(s)
}

pub const MAX_EXPONENT: f64 = 700.0;

/// `L exp(V*/eps)`.
pub fn mean_exit_time(report: &PrefactorReport, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::usage("epsilon must be positive"));
    }
    let exponent = report.v_star / eps;
    if exponent > MAX_EXPONENT {
        return Err(Error::numerical(format!(
            "V*/eps = {exponent:.1} overflows; use a larger epsilon"
        )));
    }
    Ok(report.prefactor(eps) * exponent.exp())
}

/// `<grad V / 2 + l, n>` at `x`.
pub fn mu_star(field: &PotentialField, x: &[f64], normal: &[f64]) -> Result<f64> {
    check_dim(field.dim(), x.len())?;
    check_dim(field.dim(), normal.len())?;
    if (norm(normal) - 1.0).abs() > 1e-12 {
        return Err(Error::usage("normal must have unit norm"));
    }
    let s = field.eval(x)?;
    let mu: f64 = s
        .grad_v
        .iter()
        .zip(&s.l)
        .zip(normal)
        .map(|((g, l), n)| (0.5 * g + l) * n)
        .sum();
    if !(mu > 0.0) {
        return Err(Error::Assumption {
            assumption: "A3",
            detail: format!("mu* = {mu} at {x:?} is not positive"),
        });
    }
    Ok(mu)
}

/// `det(B^T H B)` with `B` an orthonormal basis of the tangent hyperplane.
pub fn restricted_determinant(hessian: &Matrix, normal: &[f64]) -> Result<f64> {
    let b = linalg::complement_basis(normal);
    let restricted = b.transpose() * hessian * &b;
    let vals = linalg::symmetric_eigenvalues(&restricted);
    if vals.iter().any(|&v| v <= 0.0) {
        return Err(Error::Assumption {
            assumption: "A3",
            detail: format!("tangential Hessian has non-positive eigenvalues {vals:?}"),
        });
    }
    Ok(restricted.determinant())
}

/// Determinant of the Hessian of `V` at `x` restricted to `normal`'s
/// orthogonal complement, with the full Hessian used.
pub fn tangential_hessian_det(
    field: &PotentialField,
    x: &[f64],
    normal: &[f64],
    step: f64,
) -> Result<(f64, HessianResult)> {
    check_dim(field.dim(), normal.len())?;
    let h = hessian_fd(field, x, step)?;
    Ok((restricted_determinant(&h.matrix(), normal)?, h))
}

fn relative_gap(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}

struct Routes {
    used: HessianResult,
    other: Option<HessianResult>,
}

fn crosscheck(
    routes: Routes,
    label: &str,
    settings: &PrefactorSettings,
    warnings: &mut Vec<String>,
) -> (HessianResult, Option<HessianResult>) {
    if let Some(other) = &routes.other {
        let gap = relative_gap(&routes.used.matrix(), &other.matrix());
        if gap > settings.crosscheck_tolerance {
            warnings.push(format!(
                "{label}: {:?} and {:?} routes differ by {:.1}%",
                routes.used.method,
                other.method,
                100.0 * gap
            ));
        }
    }
    (routes.used, routes.other)
}

/// `H_bar` from the field (default) or from the Lyapunov equation of the
/// drift linearization (printed convention), the other route kept as a check.
fn stable_hessian(
    system: &DriftSystem,
    field: &PotentialField,
    xbar: &[f64],
    settings: &PrefactorSettings,
) -> Result<Routes> {
    let fd = hessian_fd(field, xbar, settings.hessian_step)?;
    let q = -system.jacobian(xbar)?;
    let ly = lyapunov_hessian(&q, settings.convention());
    Ok(if settings.riccati_paper_convention {
        Routes {
            used: ly?,
            other: Some(fd),
        }
    } else {
        Routes {
            used: fd,
            other: ly.ok(),
        }
    })
}

fn saddle_hessian(
    system: &DriftSystem,
    field: &PotentialField,
    saddle: &[f64],
    settings: &PrefactorSettings,
) -> Result<Routes> {
    let fd = hessian_fd(field, saddle, settings.hessian_step)?;
    let q = -system.jacobian(saddle)?;
    let conv = settings.convention();
    let seed = fd.matrix() / conv.coefficient();
    let newton = riccati_newton(&q, &seed, conv);
    Ok(if settings.riccati_paper_convention {
        Routes {
            used: newton?,
            other: Some(fd),
        }
    } else {
        Routes {
            used: fd,
            other: newton.ok(),
        }
    })
}

fn require_converged(path: &PathResult) -> Result<()> {
    if path.status != PathStatus::Converged {
        return Err(Error::numerical(format!(
            "most probable path did not converge (status {:?}, stalled at {:?})",
            path.status, path.stalled_at
        )));
    }
    Ok(())
}

fn check_positive_definite(h: &HessianResult, label: &str, assumption: &'static str) -> Result<()> {
    let n = h.matrix.0.len();
    if h.signature != (n, 0) {
        return Err(Error::Assumption {
            assumption,
            detail: format!("{label} has signature {:?}, expected ({n}, 0)", h.signature),
        });
    }
    Ok(())
}

/// `(1/mu*) sqrt(2 pi det h* / det H_bar) exp(I)`, the case A prefactor
/// over `sqrt(eps)`.
pub fn case_a_coefficient(
    mu_star: f64,
    det_h_star: f64,
    det_h_bar: f64,
    integral: f64,
    settings: &PrefactorSettings,
) -> f64 {
    (2.0 * PI * det_h_star / det_h_bar).sqrt() / mu_star * settings.divergence_factor(integral)
}

/// `(pi / lambda*) sqrt(|det H*| / det H_bar) exp(I)`.
pub fn case_b_coefficient(
    lambda_star: f64,
    det_h_star: f64,
    det_h_bar: f64,
    integral: f64,
    settings: &PrefactorSettings,
) -> f64 {
    PI / lambda_star * (det_h_star.abs() / det_h_bar).sqrt() * settings.divergence_factor(integral)
}

/// Case A: `L = (1/mu*) sqrt(2 pi eps det h* / det H_bar) exp(I)` with
/// `I` the time integral of `div l` along the most probable path.
#[allow(clippy::too_many_arguments)]
pub fn prefactor_case_a(
    system: &DriftSystem,
    field: &PotentialField,
    xbar: &[f64],
    curve: &dyn BoundaryCurve,
    exit: &ExitPoint,
    path: &PathResult,
    epsilons: &[f64],
    settings: &PrefactorSettings,
) -> Result<PrefactorReport> {
    require_converged(path)?;
    let mut warnings = Vec::new();
    if exit.at_endpoint {
        warnings.push("exit point sits on an end of the boundary interval".into());
    }
    let x = &exit.point;
    let normal = &exit.normal;
    let mu = mu_star(field, x, normal)?;
    let (det_h, h_star) = tangential_hessian_det(field, x, normal, settings.hessian_step)?;
    let routes = stable_hessian(system, field, xbar, settings)?;
    let (h_bar, h_bar_check) = crosscheck(routes, "H_bar", settings, &mut warnings);
    check_positive_definite(&h_bar, "H_bar", "A1")?;
    warnings.extend(transversality_warnings(
        system,
        curve,
        exit,
        settings.transversality_window,
    )?);

    let baseline = if settings.subtract_baseline {
        Baseline::Stable { xbar: xbar.to_vec() }
    } else {
        Baseline::None
    };
    let integral = divergence_integral(system, field, path, &baseline)?;
    let coef = case_a_coefficient(mu, det_h, h_bar.determinant(), integral, settings);
    finish(PrefactorReport {
        case: Case::A,
        x_star: x.clone(),
        v_star: field.potential(x)?,
        mu_star: Some(mu),
        det_h_star: Some(det_h),
        lambda_star: None,
        h_bar,
        h_bar_crosscheck: h_bar_check,
        h_star,
        h_star_crosscheck: None,
        div_integral: integral,
        l_coefficient: coef,
        epsilon_power: 0.5,
        epsilons: epsilons.to_vec(),
        prefactors: Vec::new(),
        warnings,
        provenance: Provenance {
            backing: field.backing().into(),
            settings: settings.clone(),
        },
    })
}

/// Case B: `L = (pi / lambda*) sqrt(|det H*| / det H_bar) exp(I)`.
#[allow(clippy::too_many_arguments)]
pub fn prefactor_case_b(
    system: &DriftSystem,
    field: &PotentialField,
    xbar: &[f64],
    saddle: &FixedPoint,
    seed: &SaddleSeed,
    path: &PathResult,
    epsilons: &[f64],
    settings: &PrefactorSettings,
) -> Result<PrefactorReport> {
    require_converged(path)?;
    let mut warnings = Vec::new();
    if seed.degenerate {
        warnings.push("path seeded at the saddle itself".into());
    }
    let lambda = seed.lambda;
    if !(lambda > 0.0) {
        return Err(Error::Assumption {
            assumption: "B1",
            detail: format!("lambda* = {lambda} is not positive"),
        });
    }
    let n = system.dim();
    let routes = saddle_hessian(system, field, &saddle.location, settings)?;
    let (h_star, h_star_check) = crosscheck(routes, "H*", settings, &mut warnings);
    if h_star.signature != (n - 1, 1) {
        return Err(Error::Assumption {
            assumption: "B4",
            detail: format!("H* has signature {:?}, expected ({}, 1)", h_star.signature, n - 1),
        });
    }
    let routes = stable_hessian(system, field, xbar, settings)?;
    let (h_bar, h_bar_check) = crosscheck(routes, "H_bar", settings, &mut warnings);
    check_positive_definite(&h_bar, "H_bar", "B4")?;

    let baseline = if settings.subtract_baseline {
        Baseline::StableAndSaddle {
            xbar: xbar.to_vec(),
            saddle: saddle.location.clone(),
        }
    } else {
        Baseline::None
    };
    let integral = divergence_integral(system, field, path, &baseline)?;
    let coef = case_b_coefficient(lambda, h_star.determinant(), h_bar.determinant(), integral, settings);
    finish(PrefactorReport {
        case: Case::B,
        x_star: saddle.location.clone(),
        v_star: field.potential(&saddle.location)?,
        mu_star: None,
        det_h_star: None,
        lambda_star: Some(lambda),
        h_bar,
        h_bar_crosscheck: h_bar_check,
        h_star,
        h_star_crosscheck: h_star_check,
        div_integral: integral,
        l_coefficient: coef,
        epsilon_power: 0.0,
        epsilons: epsilons.to_vec(),
        prefactors: Vec::new(),
        warnings,
        provenance: Provenance {
            backing: field.backing().into(),
            settings: settings.clone(),
        },
    })
}

fn finish(mut report: PrefactorReport) -> Result<PrefactorReport> {
    if !report.l_coefficient.is_finite() || report.l_coefficient <= 0.0 {
        return Err(Error::numerical(format!(
            "prefactor {} is not a positive number",
            report.l_coefficient
        )));
    }
    if report.epsilons.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::usage("epsilons must be positive"));
    }
    report.prefactors = report.epsilons.iter().map(|&e| report.prefactor(e)).collect();
    Ok(report)
}

const TRANSVERSALITY_SAMPLES: usize = 41;

/// Boundary points within `window` of the exit parameter where the drift
/// fails to point strictly into the domain.
fn transversality_warnings(
    system: &DriftSystem,
    curve: &dyn BoundaryCurve,
    exit: &ExitPoint,
    window: f64,
) -> Result<Vec<String>> {
    let (a, b) = curve.interval();
    let lo = (exit.parameter - window).max(a);
    let hi = (exit.parameter + window).min(b);
    let mut bad = Vec::new();
    for k in 0..TRANSVERSALITY_SAMPLES {
        let s = lo + (hi - lo) * k as f64 / (TRANSVERSALITY_SAMPLES - 1) as f64;
        let p = curve.point(s);
        let bn: f64 = system.drift(&p)?.iter().zip(curve.normal(s)).map(|(b, n)| b * n).sum();
        if bn >= 0.0 {
            bad.push(s);
        }
    }
    Ok(if bad.is_empty() {
        Vec::new()
    } else {
        vec![format!(
            "<b, n> >= 0 at {} of {} boundary samples in [{lo}, {hi}] (first at s = {})",
            bad.len(),
            TRANSVERSALITY_SAMPLES,
            bad[0]
        )]
    })
}

/// `C(x) = sqrt(det H_bar / (2 pi eps)^n) exp(-I)` along a path from `xbar`
/// to `x`.
pub fn wkb_prefactor(
    system: &DriftSystem,
    field: &PotentialField,
    xbar: &[f64],
    path: &PathResult,
    eps: f64,
    settings: &PrefactorSettings,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::usage("epsilon must be positive"));
    }
    require_converged(path)?;
    let h_bar = stable_hessian(system, field, xbar, settings)?.used;
    let baseline = if settings.subtract_baseline {
        Baseline::Stable { xbar: xbar.to_vec() }
    } else {
        Baseline::None
    };
    let integral = divergence_integral(system, field, path, &baseline)?;
    let n = system.dim() as i32;
    Ok((h_bar.determinant() / (2.0 * PI * eps).powi(n)).sqrt() * (-integral).exp())
}
