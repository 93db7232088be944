//! Drift fields, their fixed points, and the rotational double-well
//! benchmark with closed-form quasipotential.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, Matrix};

/// A smooth vector field `b: R^n -> R^n` with an analytic Jacobian.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval_into(&self, x: &[f64], out: &mut [f64]);
    /// Row-major `dim x dim`, `out[i * dim + j] = d b_i / d x_j`.
    fn jacobian_into(&self, x: &[f64], out: &mut [f64]);
}

/// A closed-form orthogonal decomposition `b = -grad V / 2 + l`.
pub trait Decomposition: Send + Sync {
    fn dim(&self) -> usize;
    fn potential(&self, x: &[f64]) -> f64;
    fn potential_gradient(&self, x: &[f64], out: &mut [f64]);
    fn rotational(&self, x: &[f64], out: &mut [f64]);
    fn rotational_divergence(&self, x: &[f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedKind {
    Stable,
    Saddle,
    Unstable,
}

impl fmt::Display for FixedKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FixedKind::Stable => "stable",
            FixedKind::Saddle => "saddle",
            FixedKind::Unstable => "unstable",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub location: Vec<f64>,
    pub kind: FixedKind,
    /// Eigenvalues of the drift Jacobian, descending real part.
    pub eigenvalues: Vec<Eigenvalue>,
}

impl FixedPoint {
    /// Real parts > 0; exactly one for a saddle.
    pub fn unstable_eigenvalues(&self) -> Vec<f64> {
        self.eigenvalues.iter().filter(|e| e.re > 0.0).map(|e| e.re).collect()
    }
}

fn classify(eigs: &[Eigenvalue]) -> FixedKind {
    let positive = eigs.iter().filter(|e| e.re > 0.0).count();
    if eigs.iter().all(|e| e.re < 0.0) {
        FixedKind::Stable
    } else if positive == 1 {
        FixedKind::Saddle
    } else {
        FixedKind::Unstable
    }
}

/// A drift field together with its catalog of classified fixed points.
#[derive(Clone)]
pub struct DriftSystem {
    name: String,
    field: Arc<dyn VectorField>,
    fixed_points: Vec<FixedPoint>,
}

impl fmt::Debug for DriftSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriftSystem")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("fixed_points", &self.fixed_points)
            .finish()
    }
}

pub const FIXED_POINT_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 100;

impl DriftSystem {
    pub fn new(name: impl Into<String>, field: Arc<dyn VectorField>) -> Self {
        DriftSystem {
            name: name.into(),
            field,
            fixed_points: Vec::new(),
        }
    }

    /// Registers known fixed point locations, classifying each.
    /// Locations with `|b| > 1e-8` are rejected.
    pub fn with_fixed_points(mut self, locations: &[Vec<f64>]) -> Result<Self> {
        for loc in locations {
            check_dim(self.dim(), loc.len())?;
            let r = norm(&self.drift(loc)?);
            if r > 1e-8 {
                return Err(Error::usage(format!("registered fixed point {loc:?} has |b| = {r:e}")));
            }
            let fp = self.classify_at(loc)?;
            self.fixed_points.push(fp);
        }
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn fixed_points(&self) -> &[FixedPoint] {
        &self.fixed_points
    }

    pub fn drift(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let mut out = vec![0.0; self.dim()];
        self.field.eval_into(x, &mut out);
        Ok(out)
    }

    /// Unchecked hot-path evaluation.
    #[inline]
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        self.field.eval_into(x, out);
    }

    pub fn jacobian(&self, x: &[f64]) -> Result<Matrix> {
        check_dim(self.dim(), x.len())?;
        let n = self.dim();
        let mut out = vec![0.0; n * n];
        self.field.jacobian_into(x, &mut out);
        Ok(linalg::from_row_slice(n, &out))
    }

    pub fn classify_at(&self, x: &[f64]) -> Result<FixedPoint> {
        let eigs = linalg::eigenvalues(&self.jacobian(x)?)
            .into_iter()
            .map(|c| Eigenvalue { re: c.re, im: c.im })
            .collect::<Vec<_>>();
        Ok(FixedPoint {
            location: x.to_vec(),
            kind: classify(&eigs),
            eigenvalues: eigs,
        })
    }

    /// Re-derives eigenvalues and kinds of all registered fixed points.
    pub fn classify_fixed_points(&self) -> Result<Vec<FixedPoint>> {
        self.fixed_points
            .iter()
            .map(|fp| self.classify_at(&fp.location))
            .collect()
    }

    /// Registered fixed point nearest to `x` of the given kind.
    pub fn nearest_fixed_point(&self, x: &[f64], kind: FixedKind) -> Option<&FixedPoint> {
        self.fixed_points
            .iter()
            .filter(|fp| fp.kind == kind)
            .min_by(|a, b| distance(&a.location, x).total_cmp(&distance(&b.location, x)))
    }

    pub fn is_near_fixed_point(&self, x: &[f64], radius: f64) -> bool {
        self.fixed_points.iter().any(|fp| distance(&fp.location, x) <= radius)
    }

    /// Damped Newton iteration from each seed. One outcome per seed;
    /// failures do not abort the remaining seeds.
    pub fn find_fixed_points(&self, seeds: &[Vec<f64>]) -> Vec<Result<FixedPoint>> {
        seeds.iter().map(|s| self.newton(s)).collect()
    }

    /// Runs [`Self::find_fixed_points`] and registers every distinct
    /// converged point. Returns the per-seed outcomes.
    pub fn register_found(&mut self, seeds: &[Vec<f64>]) -> Vec<Result<FixedPoint>> {
        let outcomes = self.find_fixed_points(seeds);
        for fp in outcomes.iter().flatten() {
            if !self.is_near_fixed_point(&fp.location, 1e-8) {
                self.fixed_points.push(fp.clone());
            }
        }
        outcomes
    }

    fn newton(&self, seed: &[f64]) -> Result<FixedPoint> {
        check_dim(self.dim(), seed.len())?;
        let mut x = DVector::from_column_slice(seed);
        let mut r = DVector::from_vec(self.drift(x.as_slice())?);
        for _ in 0..NEWTON_MAX_ITER {
            let rn = r.norm();
            if !rn.is_finite() {
                break;
            }
            if rn <= FIXED_POINT_TOL {
                return self.classify_at(x.as_slice());
            }
            let j = self.jacobian(x.as_slice())?;
            let Some(step) = j.lu().solve(&(-&r)) else {
                break;
            };
            let mut damping = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let trial = &x + &step * damping;
                let tr = DVector::from_vec(self.drift(trial.as_slice())?);
                if tr.norm() < rn {
                    x = trial;
                    r = tr;
                    accepted = true;
                    break;
                }
                damping *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Err(Error::NoConvergence {
            what: "fixed-point Newton",
            iterations: NEWTON_MAX_ITER,
            residual: r.norm(),
        })
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Drift of the rotational double well:
/// `b = -grad V / 2 + l`, `V = x1^4/2 - x1^2 + alpha x2^2`,
/// `l = beta x1 (-v2'(x2), v1'(x1))`.
#[derive(Debug, Clone, Copy)]
pub struct DoubleWellDrift {
    pub alpha: f64,
    pub beta: f64,
}

impl VectorField for DoubleWellDrift {
    fn dim(&self) -> usize {
        2
    }

    #[inline]
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let (x1, x2) = (x[0], x[1]);
        let dv1 = 2.0 * x1 * x1 * x1 - 2.0 * x1;
        let dv2 = 2.0 * self.alpha * x2;
        out[0] = -0.5 * dv1 - self.beta * x1 * dv2;
        out[1] = -0.5 * dv2 + self.beta * x1 * dv1;
    }

    fn jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        let (x1, x2) = (x[0], x[1]);
        let dv1 = 2.0 * x1 * x1 * x1 - 2.0 * x1;
        let ddv1 = 6.0 * x1 * x1 - 2.0;
        let dv2 = 2.0 * self.alpha * x2;
        out[0] = -0.5 * ddv1 - self.beta * dv2;
        out[1] = -2.0 * self.alpha * self.beta * x1;
        out[2] = self.beta * (dv1 + x1 * ddv1);
        out[3] = -self.alpha;
    }
}

/// The double-well benchmark with its exact quasipotential (shifted to
/// vanish at the left stable point) and rotational component.
#[derive(Debug, Clone)]
pub struct AnalyticBenchmark {
    pub alpha: f64,
    pub beta: f64,
    xbar: [f64; 2],
    shift: f64,
    system: DriftSystem,
}

pub const BENCHMARK_KEY: &str = "doublewell-rot";

impl AnalyticBenchmark {
    pub fn new(alpha: f64, beta: f64) -> Self {
        let drift = Arc::new(DoubleWellDrift { alpha, beta });
        let system = DriftSystem::new(BENCHMARK_KEY, drift)
            .with_fixed_points(&[vec![-1.0, 0.0], vec![1.0, 0.0], vec![0.0, 0.0]])
            .expect("benchmark fixed points are exact");
        let xbar = [-1.0, 0.0];
        let mut me = AnalyticBenchmark {
            alpha,
            beta,
            xbar,
            shift: 0.0,
            system,
        };
        me.shift = me.raw_potential(&xbar);
        me
    }

    /// `alpha = 0.5, beta = 3`.
    pub fn standard() -> Self {
        Self::new(0.5, 3.0)
    }

    pub fn system(&self) -> &DriftSystem {
        &self.system
    }

    /// Left stable point `(-1, 0)`, the start of every exit problem.
    pub fn xbar(&self) -> Vec<f64> {
        self.xbar.to_vec()
    }

    pub fn saddle(&self) -> &FixedPoint {
        self.system
            .nearest_fixed_point(&[0.0, 0.0], FixedKind::Saddle)
            .expect("benchmark has a saddle")
    }

    fn raw_potential(&self, x: &[f64]) -> f64 {
        let (x1, x2) = (x[0], x[1]);
        0.5 * x1.powi(4) - x1 * x1 + self.alpha * x2 * x2
    }

    pub fn true_quasipotential(&self, x: &[f64]) -> f64 {
        self.raw_potential(x) - self.shift
    }

    pub fn true_rotational(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; 2];
        self.rotational(x, &mut out);
        out
    }

    /// Exact Hessian of V, `diag(v1'', v2'')`.
    pub fn true_hessian(&self, x: &[f64]) -> Matrix {
        Matrix::from_diagonal(&DVector::from_vec(vec![6.0 * x[0] * x[0] - 2.0, 2.0 * self.alpha]))
    }
}

impl Decomposition for AnalyticBenchmark {
    fn dim(&self) -> usize {
        2
    }

    fn potential(&self, x: &[f64]) -> f64 {
        self.true_quasipotential(x)
    }

    fn potential_gradient(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 2.0 * x[0].powi(3) - 2.0 * x[0];
        out[1] = 2.0 * self.alpha * x[1];
    }

    fn rotational(&self, x: &[f64], out: &mut [f64]) {
        let c = self.beta * x[0];
        out[0] = -c * 2.0 * self.alpha * x[1];
        out[1] = c * (2.0 * x[0].powi(3) - 2.0 * x[0]);
    }

    fn rotational_divergence(&self, x: &[f64]) -> f64 {
        -2.0 * self.alpha * self.beta * x[1]
    }
}

/// A registry entry: a drift system, plus its exact decomposition when one
/// is known.
#[derive(Debug, Clone)]
pub struct Registered {
    pub system: DriftSystem,
    pub benchmark: Option<Arc<AnalyticBenchmark>>,
}

pub type SystemFactory = fn() -> Registered;

/// Named drift systems selectable from configuration files.
#[derive(Debug, Clone)]
pub struct SystemRegistry {
    entries: BTreeMap<String, SystemFactory>,
}

fn builtin_doublewell() -> Registered {
    let bench = Arc::new(AnalyticBenchmark::standard());
    Registered {
        system: bench.system().clone(),
        benchmark: Some(bench),
    }
}

impl Default for SystemRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl SystemRegistry {
    pub fn builtin() -> Self {
        let mut reg = SystemRegistry {
            entries: BTreeMap::new(),
        };
        reg.register(BENCHMARK_KEY, builtin_doublewell);
        reg
    }

    pub fn register(&mut self, key: impl Into<String>, factory: SystemFactory) {
        self.entries.insert(key.into(), factory);
    }

    pub fn get(&self, key: &str) -> Result<Registered> {
        self.entries.get(key).map(|f| f()).ok_or_else(|| {
            Error::usage(format!(
                "unknown system '{key}' (known: {})",
                self.keys().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bench() -> AnalyticBenchmark {
        AnalyticBenchmark::standard()
    }

    #[test]
    fn drift_at_fixed_points_and_sample() {
        let b = bench();
        let s = b.system();
        assert_eq!(s.drift(&[-1.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(s.drift(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let v = s.drift(&[-0.5, 0.0]).unwrap();
        assert!((v[0] + 0.375).abs() < 1e-15);
        assert!((v[1] + 1.125).abs() < 1e-15);
    }

    #[test]
    fn drift_rejects_wrong_dimension() {
        let err = bench().system().drift(&[0.0, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Dimension { expected: 2, got: 3 }));
        assert_eq!(err.exit_code(), 64);
    }

    #[test]
    fn jacobian_at_stable_point() {
        let j = bench().system().jacobian(&[-1.0, 0.0]).unwrap();
        let expect = [-2.0, 3.0, -12.0, -0.5];
        for (i, e) in expect.iter().enumerate() {
            assert!((j[(i / 2, i % 2)] - e).abs() < 1e-14, "{j}");
        }
    }

    #[test]
    fn eigenvalues_match_closed_forms() {
        let b = bench();
        for x in [[-1.0, 0.0], [1.0, 0.0]] {
            let fp = b.system().classify_at(&x).unwrap();
            assert_eq!(fp.kind, FixedKind::Stable);
            let im = 9.0 * 7f64.sqrt() / 4.0;
            assert!((fp.eigenvalues[0].re + 1.25).abs() < 1e-12);
            assert!((fp.eigenvalues[0].im - im).abs() < 1e-12);
            assert!((fp.eigenvalues[1].im + im).abs() < 1e-12);
        }
        let sad = b.system().classify_at(&[0.0, 0.0]).unwrap();
        assert_eq!(sad.kind, FixedKind::Saddle);
        assert_eq!(sad.eigenvalues[0], Eigenvalue { re: 1.0, im: 0.0 });
        assert_eq!(sad.eigenvalues[1], Eigenvalue { re: -0.5, im: 0.0 });
    }

    #[test]
    fn registered_classification() {
        let b = bench();
        let fps = b.system().classify_fixed_points().unwrap();
        let kinds: Vec<_> = fps.iter().map(|f| (f.location.clone(), f.kind)).collect();
        assert_eq!(
            kinds,
            vec![
                (vec![-1.0, 0.0], FixedKind::Stable),
                (vec![1.0, 0.0], FixedKind::Stable),
                (vec![0.0, 0.0], FixedKind::Saddle),
            ]
        );
    }

    #[test]
    fn saddle_eigenvectors() {
        let b = bench();
        let j = b.system().jacobian(&[0.0, 0.0]).unwrap();
        let eu = linalg::real_eigenvector(&j, 1.0);
        assert!((eu[0].abs() - 1.0).abs() < 1e-12 && eu[1].abs() < 1e-12);
        let es = linalg::real_eigenvector(&j, -0.5);
        assert!(es[0].abs() < 1e-12 && (es[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn newton_finds_benchmark_points_and_reports_failures() {
        let b = bench();
        let mut sys = DriftSystem::new("copy", Arc::new(DoubleWellDrift { alpha: 0.5, beta: 3.0 }));
        let seeds = vec![
            vec![-0.9, 0.1],
            vec![0.95, -0.05],
            vec![0.05, 0.02],
            vec![f64::NAN, 0.0],
        ];
        let out = sys.register_found(&seeds);
        assert!(out[3].is_err());
        assert_eq!(sys.fixed_points().len(), 3);
        for fp in sys.fixed_points() {
            let reg = b.system().nearest_fixed_point(&fp.location, fp.kind).unwrap();
            assert!(distance(&reg.location, &fp.location) < 1e-9);
        }
    }

    #[test]
    fn quasipotential_values() {
        let b = bench();
        assert_eq!(b.true_quasipotential(&[-1.0, 0.0]), 0.0);
        assert!((b.true_quasipotential(&[0.0, 0.0]) - 0.5).abs() < 1e-15);
        assert!((b.true_quasipotential(&[-0.5, 0.0]) - 0.28125).abs() < 1e-15);
    }

    #[test]
    fn rotational_values() {
        let b = bench();
        assert_eq!(b.true_rotational(&[-1.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(b.true_rotational(&[0.0, 0.0]), vec![0.0, 0.0]);
        let l = b.true_rotational(&[-0.5, 0.0]);
        assert!(l[0].abs() < 1e-15 && (l[1] + 1.125).abs() < 1e-15);
    }

    #[test]
    fn registry_lookup() {
        let reg = SystemRegistry::builtin();
        assert!(reg.get(BENCHMARK_KEY).unwrap().benchmark.is_some());
        assert_eq!(reg.get("nope").unwrap_err().exit_code(), 64);
    }
}
