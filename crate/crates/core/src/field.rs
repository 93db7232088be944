//! One evaluation surface over a quasipotential field, learned or analytic:
//! `V`, `grad V`, `l`, `div l`, Hessians of `V`, and the fixed-point
//! Lyapunov/Riccati characterizations of those Hessians.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, Matrix, Rows};
use crate::net::NetworkParams;
use crate::systems::Decomposition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub v: f64,
    pub grad_v: Vec<f64>,
    pub l: Vec<f64>,
    pub div_l: f64,
}

/// Network-backed field, `V = V_hat + |x - xbar|^2`.
#[derive(Debug, Clone)]
pub struct LearnedField {
    params: Arc<NetworkParams>,
    xbar: Vec<f64>,
}

impl LearnedField {
    /// Fails when `|V(xbar)| > tol`.
    pub fn new(params: Arc<NetworkParams>, xbar: Vec<f64>, tol: f64) -> Result<Self> {
        check_dim(params.input_dim(), xbar.len())?;
        let me = LearnedField { params, xbar };
        let v0 = me.potential(&me.xbar)?;
        if v0.abs() > tol {
            return Err(Error::usage(format!(
                "learned quasipotential at the stable point is {v0:e}, above tolerance {tol:e}"
            )));
        }
        Ok(me)
    }

    /// Skips the anchoring check (used while training).
    pub fn unchecked(params: Arc<NetworkParams>, xbar: Vec<f64>) -> Self {
        LearnedField { params, xbar }
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn xbar(&self) -> &[f64] {
        &self.xbar
    }

    pub fn potential(&self, x: &[f64]) -> Result<f64> {
        let y = self.params.forward(x)?;
        let r2: f64 = x.iter().zip(&self.xbar).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(y[0] + r2)
    }

    pub fn rotational(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.params.forward(x)?[1..].to_vec())
    }

    pub fn sample(&self, x: &[f64]) -> Result<FieldSample> {
        let n = x.len();
        let e = self.params.forward_with_input_jacobian(x)?;
        let mut r2 = 0.0;
        let mut grad_v = vec![0.0; n];
        for j in 0..n {
            let d = x[j] - self.xbar[j];
            r2 += d * d;
            grad_v[j] = e.input_jacobian[j] + 2.0 * d;
        }
        let div_l = (0..n).map(|k| e.input_jacobian[(1 + k) * n + k]).sum();
        Ok(FieldSample {
            v: e.outputs[0] + r2,
            grad_v,
            l: e.outputs[1..].to_vec(),
            div_l,
        })
    }
}

#[derive(Clone)]
pub enum PotentialField {
    Learned(LearnedField),
    Analytic(Arc<dyn Decomposition>),
}

impl std::fmt::Debug for PotentialField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PotentialField::Learned(l) => f.debug_tuple("Learned").field(&l.xbar).finish(),
            PotentialField::Analytic(a) => f.debug_tuple("Analytic").field(&a.dim()).finish(),
        }
    }
}

impl PotentialField {
    pub fn analytic(d: Arc<dyn Decomposition>) -> Self {
        PotentialField::Analytic(d)
    }

    pub fn dim(&self) -> usize {
        match self {
            PotentialField::Learned(l) => l.params.input_dim(),
            PotentialField::Analytic(a) => a.dim(),
        }
    }

    pub fn backing(&self) -> &'static str {
        match self {
            PotentialField::Learned(_) => "learned",
            PotentialField::Analytic(_) => "analytic",
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<FieldSample> {
        check_dim(self.dim(), x.len())?;
        match self {
            PotentialField::Learned(l) => l.sample(x),
            PotentialField::Analytic(a) => {
                let n = a.dim();
                let mut grad_v = vec![0.0; n];
                let mut l = vec![0.0; n];
                a.potential_gradient(x, &mut grad_v);
                a.rotational(x, &mut l);
                Ok(FieldSample {
                    v: a.potential(x),
                    grad_v,
                    l,
                    div_l: a.rotational_divergence(x),
                })
            }
        }
    }

    pub fn potential(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        match self {
            PotentialField::Learned(l) => l.potential(x),
            PotentialField::Analytic(a) => Ok(a.potential(x)),
        }
    }

    pub fn rotational(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        match self {
            PotentialField::Learned(l) => l.rotational(x),
            PotentialField::Analytic(a) => {
                let mut out = vec![0.0; a.dim()];
                a.rotational(x, &mut out);
                Ok(out)
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval(x)?.grad_v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMethod {
    FiniteDifference,
    Lyapunov,
    RiccatiNewton,
}

/// Which algebraic Riccati equation characterizes the Hessian at a fixed
/// point `x0` with `Q = -grad b(x0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiccatiConvention {
    /// `H^2 = Q^T H + H Q`, the linearized Hamilton-Jacobi equation.
    #[default]
    Linearized,
    /// `2 H^2 = Q^T H + H Q`; its solutions are half the linearized ones.
    Printed,
}

impl RiccatiConvention {
    pub fn coefficient(self) -> f64 {
        match self {
            RiccatiConvention::Linearized => 1.0,
            RiccatiConvention::Printed => 2.0,
        }
    }

    pub fn from_flag(paper_printed: bool) -> Self {
        if paper_printed {
            RiccatiConvention::Printed
        } else {
            RiccatiConvention::Linearized
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianResult {
    pub matrix: Rows,
    pub method: HessianMethod,
    /// Riccati residual (Frobenius norm) for the Lyapunov and Newton routes.
    pub riccati_residual: Option<f64>,
    /// `|H(h) - H(h/2)|_max` for finite differences.
    pub error_estimate: Option<f64>,
    pub iterations: Option<usize>,
    /// Number of positive and negative eigenvalues.
    pub signature: (usize, usize),
}

impl HessianResult {
    fn build(m: &Matrix, method: HessianMethod) -> Self {
        HessianResult {
            matrix: Rows::from(m),
            method,
            riccati_residual: None,
            error_estimate: None,
            iterations: None,
            signature: linalg::signature(m),
        }
    }

    pub fn matrix(&self) -> Matrix {
        self.matrix.to_matrix()
    }

    pub fn determinant(&self) -> f64 {
        self.matrix().determinant()
    }
}

pub const DEFAULT_HESSIAN_STEP: f64 = 1e-3;

fn central_hessian(field: &PotentialField, x: &[f64], h: f64) -> Result<Matrix> {
    let n = x.len();
    let mut m = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        xp[j] = x[j] + h;
        let gp = field.gradient(&xp)?;
        xp[j] = x[j] - h;
        let gm = field.gradient(&xp)?;
        xp[j] = x[j];
        for i in 0..n {
            m[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    Ok(linalg::symmetrize(&m))
}

/// Symmetrized central differences of `grad V` at steps `h` and `h/2`,
/// Richardson-combined. The step-to-step difference is the error estimate.
pub fn hessian_fd(field: &PotentialField, x: &[f64], h: f64) -> Result<HessianResult> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::usage("finite-difference step must be positive"));
    }
    check_dim(field.dim(), x.len())?;
    let coarse = central_hessian(field, x, h)?;
    let fine = central_hessian(field, x, h / 2.0)?;
    let refined = (&fine * 4.0 - &coarse) / 3.0;
    let mut out = HessianResult::build(&refined, HessianMethod::FiniteDifference);
    out.error_estimate = Some((&fine - &coarse).amax());
    Ok(out)
}

fn riccati_residual(h: &Matrix, q: &Matrix, conv: RiccatiConvention) -> Matrix {
    h * h * conv.coefficient() - (q.transpose() * h + h * q)
}

/// Hessian at a stable point from `Q Sigma + Sigma Q^T = I`, `H = Sigma^-1`
/// (halved under the printed convention).
pub fn lyapunov_hessian(q: &Matrix, conv: RiccatiConvention) -> Result<HessianResult> {
    let n = q.nrows();
    if q.ncols() != n {
        return Err(Error::usage("Q must be square"));
    }
    let eigs = linalg::eigenvalues(q);
    if let Some(e) = eigs.iter().find(|e| e.re <= 0.0) {
        return Err(Error::usage(format!(
            "-Q has an eigenvalue with real part {} >= 0; the point is not stable, use riccati_newton",
            -e.re
        )));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let sigma = linalg::symmetrize(&linalg::solve_sylvester(q, &q.transpose(), &eye)?);
    let inv = sigma
        .try_inverse()
        .ok_or_else(|| Error::numerical("singular Lyapunov solution"))?;
    let h = linalg::symmetrize(&inv) / conv.coefficient();
    let mut out = HessianResult::build(&h, HessianMethod::Lyapunov);
    out.riccati_residual = Some(riccati_residual(&h, q, conv).norm());
    Ok(out)
}

pub const RICCATI_TOL: f64 = 1e-10;
const RICCATI_MAX_ITER: usize = 50;

/// Newton iteration on `R(H) = c H^2 - (Q^T H + H Q)` from a symmetric
/// seed. Each step solves the Sylvester equation
/// `(cH - Q^T) E + E (cH - Q) = -R` and symmetrizes.
pub fn riccati_newton(q: &Matrix, seed: &Matrix, conv: RiccatiConvention) -> Result<HessianResult> {
    let n = q.nrows();
    if q.ncols() != n || seed.nrows() != n || seed.ncols() != n {
        return Err(Error::usage("Q and the seed must be square of equal size"));
    }
    if linalg::asymmetry(seed) > 1e-8 * seed.amax().max(1.0) {
        return Err(Error::usage("Riccati seed must be symmetric"));
    }
    let c = conv.coefficient();
    let mut h = linalg::symmetrize(seed);
    let mut res = f64::INFINITY;
    for it in 1..=RICCATI_MAX_ITER {
        let r = riccati_residual(&h, q, conv);
        res = r.norm();
        if !res.is_finite() {
            break;
        }
        if res <= RICCATI_TOL {
            let mut out = HessianResult::build(&h, HessianMethod::RiccatiNewton);
            out.riccati_residual = Some(res);
            out.iterations = Some(it);
            return Ok(out);
        }
        let a = &h * c - q.transpose();
        let b = &h * c - q;
        let e = linalg::solve_sylvester(&a, &b, &(-r))?;
        h = linalg::symmetrize(&(h + e));
    }
    Err(Error::NoConvergence {
        what: "Riccati Newton",
        iterations: RICCATI_MAX_ITER,
        residual: res,
    })
}
