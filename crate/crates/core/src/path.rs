//! Most probable exit paths by reverse arc-length integration of
//! `d phi / d sigma = (b + grad V) / |b|`, and the line integral of
//! `div l / |b|` along them.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::field::PotentialField;
use crate::linalg;
use crate::systems::{distance, norm, DriftSystem, FixedPoint};

/// A parametrized boundary curve `s -> point` with exterior unit normal.
pub trait BoundaryCurve: Send + Sync + fmt::Debug {
    fn interval(&self) -> (f64, f64);
    fn point(&self, s: f64) -> Vec<f64>;
    fn normal(&self, s: f64) -> Vec<f64>;
}

/// The segment `origin + s * direction`, `s in [s_min, s_max]`, with a
/// constant exterior normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSegment {
    pub origin: Vec<f64>,
    pub direction: Vec<f64>,
    pub normal: Vec<f64>,
    pub s_min: f64,
    pub s_max: f64,
}

impl LineSegment {
    pub fn new(origin: Vec<f64>, direction: Vec<f64>, normal: Vec<f64>, s_min: f64, s_max: f64) -> Result<Self> {
        let seg = LineSegment {
            origin,
            direction,
            normal,
            s_min,
            s_max,
        };
        seg.validate()?;
        Ok(seg)
    }

    /// `{x1 = c, lo <= x2 <= hi}` with normal `+e1`.
    pub fn vertical(c: f64, lo: f64, hi: f64) -> Self {
        LineSegment {
            origin: vec![c, 0.0],
            direction: vec![0.0, 1.0],
            normal: vec![1.0, 0.0],
            s_min: lo,
            s_max: hi,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.origin.len(), self.direction.len())?;
        check_dim(self.origin.len(), self.normal.len())?;
        if (norm(&self.normal) - 1.0).abs() > 1e-12 {
            return Err(Error::usage("boundary normal must have unit norm"));
        }
        if !(self.s_min < self.s_max) {
            return Err(Error::usage("boundary parameter interval is empty"));
        }
        Ok(())
    }
}

impl BoundaryCurve for LineSegment {
    fn interval(&self) -> (f64, f64) {
        (self.s_min, self.s_max)
    }

    fn point(&self, s: f64) -> Vec<f64> {
        self.origin
            .iter()
            .zip(&self.direction)
            .map(|(o, d)| o + s * d)
            .collect()
    }

    fn normal(&self, _s: f64) -> Vec<f64> {
        self.normal.clone()
    }
}

#[derive(Debug, Clone)]
pub enum BoundarySpec {
    NonCharacteristic(Arc<dyn BoundaryCurve>),
    Characteristic { saddle: FixedPoint },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitPoint {
    pub point: Vec<f64>,
    pub parameter: f64,
    pub potential: f64,
    pub normal: Vec<f64>,
    /// Minimum sits on an interval end; the domain may be misspecified.
    pub at_endpoint: bool,
}

const SCAN_SAMPLES: usize = 201;
const GOLDEN_TOL: f64 = 1e-8;

/// Minimizer of `V` along the curve: 201-sample scan, then golden-section
/// refinement in the bracketing pair of scan cells. Among tied scan minima
/// the smallest parameter wins; if every sample ties the midpoint is
/// returned unrefined.
pub fn exit_point_on_boundary(field: &PotentialField, curve: &dyn BoundaryCurve) -> Result<ExitPoint> {
    let (a, b) = curve.interval();
    let param = |k: usize| a + (b - a) * k as f64 / (SCAN_SAMPLES - 1) as f64;
    let vals = (0..SCAN_SAMPLES)
        .map(|k| field.potential(&curve.point(param(k))))
        .collect::<Result<Vec<_>>>()?;
    let best = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let s = if vals.iter().all(|&v| v == best) {
        param(SCAN_SAMPLES / 2)
    } else {
        let k = vals.iter().position(|&v| v == best).expect("minimum exists");
        let lo = param(k.saturating_sub(1));
        let hi = param((k + 1).min(SCAN_SAMPLES - 1));
        golden_section(|s| field.potential(&curve.point(s)), lo, hi, GOLDEN_TOL)?
    };
    let point = curve.point(s);
    Ok(ExitPoint {
        potential: field.potential(&point)?,
        normal: curve.normal(s),
        at_endpoint: (s - a).abs() <= GOLDEN_TOL || (b - s).abs() <= GOLDEN_TOL,
        parameter: s,
        point,
    })
}

fn golden_section<F: FnMut(f64) -> Result<f64>>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - ratio * (hi - lo);
    let mut d = lo + ratio * (hi - lo);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while hi - lo > tol {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - ratio * (hi - lo);
            fc = f(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + ratio * (hi - lo);
            fd = f(d)?;
        }
    }
    let mid = 0.5 * (lo + hi);
    // the bracket ends may beat the interior when the minimum sits on them
    let candidates = [(lo, f(lo)?), (mid, f(mid)?), (hi, f(hi)?)];
    Ok(candidates
        .iter()
        .fold(candidates[1], |best, &c| if c.1 < best.1 { c } else { best })
        .0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleSeed {
    pub point: Vec<f64>,
    /// Unit unstable eigenvector, oriented toward the stable point.
    pub direction: Vec<f64>,
    /// The single positive eigenvalue of the drift Jacobian.
    pub lambda: f64,
    /// `delta1 == 0`: the seed is the saddle itself.
    pub degenerate: bool,
}

/// `x_sad + delta1 e_u` on the side of `xbar`.
pub fn saddle_seed(system: &DriftSystem, saddle: &FixedPoint, delta1: f64, xbar: &[f64]) -> Result<SaddleSeed> {
    check_dim(system.dim(), xbar.len())?;
    let positive: Vec<_> = saddle.eigenvalues.iter().filter(|e| e.re > 0.0).collect();
    if positive.len() != 1 {
        return Err(Error::Assumption {
            assumption: "B1",
            detail: format!(
                "drift Jacobian at {:?} has {} eigenvalues with positive real part, need exactly one",
                saddle.location,
                positive.len()
            ),
        });
    }
    if positive[0].im != 0.0 {
        return Err(Error::Assumption {
            assumption: "B1",
            detail: "unstable eigenvalue is not real".into(),
        });
    }
    let lambda = positive[0].re;
    let j = system.jacobian(&saddle.location)?;
    let mut e = linalg::real_eigenvector(&j, lambda);
    let toward: f64 = e
        .iter()
        .zip(xbar.iter().zip(&saddle.location))
        .map(|(e, (a, s))| e * (a - s))
        .sum();
    if toward < 0.0 {
        e.iter_mut().for_each(|v| *v = -*v);
    }
    Ok(SaddleSeed {
        point: saddle.location.iter().zip(&e).map(|(s, e)| s + delta1 * e).collect(),
        direction: e,
        lambda,
        degenerate: delta1 == 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathOptions {
    /// Offset of the Case B seed from the saddle.
    pub delta1: f64,
    /// Radius of the stable-point ball that ends the integration.
    pub delta2: f64,
    pub sigma_step: f64,
    pub max_length: f64,
}

impl Default for PathOptions {
    fn default() -> Self {
        PathOptions {
            delta1: 0.05,
            delta2: 0.01,
            sigma_step: 1e-3,
            max_length: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathStatus {
    Converged,
    MaxLength,
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    /// Nodes from the stable-point end to the exit end.
    pub points: Vec<Vec<f64>>,
    /// Arc length of each node, from the stable-point end.
    pub sigma: Vec<f64>,
    pub status: PathStatus,
    /// Range of `|b + grad V| / |b|` over the nodes; 1 for an exactly
    /// orthogonal field.
    pub speed_range: (f64, f64),
    pub stalled_at: Option<Vec<f64>>,
}

impl PathResult {
    pub fn length(&self) -> f64 {
        self.sigma.last().copied().unwrap_or(0.0)
    }

    pub fn exit_end(&self) -> &[f64] {
        self.points.last().expect("paths have at least one node")
    }

    pub fn stable_end(&self) -> &[f64] {
        &self.points[0]
    }
}

const STALL_DRIFT: f64 = 1e-12;

fn reverse_rhs(system: &DriftSystem, field: &PotentialField, x: &[f64]) -> Result<Option<(Vec<f64>, f64)>> {
    let b = system.drift(x)?;
    let nb = norm(&b);
    if nb < STALL_DRIFT || !nb.is_finite() {
        return Ok(None);
    }
    let g = field.gradient(x)?;
    let v: Vec<f64> = b.iter().zip(&g).map(|(b, g)| -(b + g) / nb).collect();
    let speed = norm(&v);
    Ok(Some((v, speed)))
}

fn axpy(x: &[f64], a: f64, v: &[f64]) -> Vec<f64> {
    x.iter().zip(v).map(|(x, v)| x + a * v).collect()
}

/// Classic RK4 on the negated path field from `x_star` until the
/// `delta2`-ball around `xbar` is reached, the arc length exceeds
/// `max_length`, or `|b|` vanishes along the way.
pub fn integrate_mpp(
    system: &DriftSystem,
    field: &PotentialField,
    x_star: &[f64],
    xbar: &[f64],
    opts: &PathOptions,
) -> Result<PathResult> {
    check_dim(system.dim(), x_star.len())?;
    check_dim(system.dim(), xbar.len())?;
    if !(opts.sigma_step > 0.0 && opts.delta2 > 0.0 && opts.max_length > 0.0) {
        return Err(Error::usage("sigma_step, delta2 and max_length must be positive"));
    }
    if x_star == xbar {
        return Err(Error::usage("path start coincides with the stable point"));
    }
    let h = opts.sigma_step;
    let mut nodes = vec![x_star.to_vec()];
    let mut speed_lo = f64::INFINITY;
    let mut speed_hi = 0.0_f64;
    let mut status = PathStatus::MaxLength;
    let mut stalled_at = None;
    let max_steps = (opts.max_length / h).ceil() as usize;
    if distance(x_star, xbar) <= opts.delta2 {
        status = PathStatus::Converged;
    } else {
        let mut x = x_star.to_vec();
        'march: for _ in 0..max_steps {
            let mut stages: Vec<Vec<f64>> = Vec::with_capacity(4);
            for (i, coef) in [0.0, 0.5, 0.5, 1.0].into_iter().enumerate() {
                let at = if i == 0 {
                    x.clone()
                } else {
                    axpy(&x, coef * h, &stages[i - 1])
                };
                match reverse_rhs(system, field, &at)? {
                    Some((v, speed)) => {
                        if i == 0 {
                            speed_lo = speed_lo.min(speed);
                            speed_hi = speed_hi.max(speed);
                        }
                        stages.push(v);
                    }
                    None => {
                        status = PathStatus::Stalled;
                        stalled_at = Some(at);
                        break 'march;
                    }
                }
            }
            x = x
                .iter()
                .enumerate()
                .map(|(k, xk)| xk + h / 6.0 * (stages[0][k] + 2.0 * stages[1][k] + 2.0 * stages[2][k] + stages[3][k]))
                .collect();
            nodes.push(x.clone());
            if distance(&x, xbar) <= opts.delta2 {
                status = PathStatus::Converged;
                break;
            }
        }
    }
    nodes.reverse();
    let sigma = (0..nodes.len()).map(|i| i as f64 * h).collect();
    if speed_lo > speed_hi {
        speed_lo = 1.0;
        speed_hi = 1.0;
    }
    Ok(PathResult {
        points: nodes,
        sigma,
        status,
        speed_range: (speed_lo, speed_hi),
        stalled_at,
    })
}

/// What to subtract from `div l` before dividing by `|b|`.
#[derive(Debug, Clone, PartialEq)]
pub enum Baseline {
    None,
    /// `div l(xbar)` everywhere.
    Stable {
        xbar: Vec<f64>,
    },
    /// `div l(xbar)` on nodes closer to `xbar`, `div l(saddle)` on nodes
    /// closer to the saddle.
    StableAndSaddle {
        xbar: Vec<f64>,
        saddle: Vec<f64>,
    },
}

pub const MAX_INTEGRAND: f64 = 1e6;

/// Integrand `(div l - baseline) / |b|` at every node.
pub fn divergence_integrand(
    system: &DriftSystem,
    field: &PotentialField,
    path: &PathResult,
    baseline: &Baseline,
) -> Result<Vec<f64>> {
    let (base_stable, base_saddle) = match baseline {
        Baseline::None => (None, None),
        Baseline::Stable { xbar } => (Some((xbar, field.eval(xbar)?.div_l)), None),
        Baseline::StableAndSaddle { xbar, saddle } => (
            Some((xbar, field.eval(xbar)?.div_l)),
            Some((saddle, field.eval(saddle)?.div_l)),
        ),
    };
    path.points
        .iter()
        .map(|x| {
            let div = field.eval(x)?.div_l;
            let base = match (base_stable, base_saddle) {
                (Some((_, s)), None) => s,
                (Some((xb, s)), Some((xs, d))) => {
                    if distance(x, xs) < distance(x, xb) {
                        d
                    } else {
                        s
                    }
                }
                _ => 0.0,
            };
            let f = (div - base) / norm(&system.drift(x)?);
            if !f.is_finite() || f.abs() > MAX_INTEGRAND {
                return Err(Error::numerical(format!(
                    "divergence integrand {f:e} at {x:?}: singular near a fixed point where the div l baseline is not zero"
                )));
            }
            Ok(f)
        })
        .collect()
}

/// Trapezoidal quadrature of `(div l - baseline) / |b|` in arc length,
/// i.e. the time integral of `div l` along the path.
pub fn divergence_integral(
    system: &DriftSystem,
    field: &PotentialField,
    path: &PathResult,
    baseline: &Baseline,
) -> Result<f64> {
    if path.points.is_empty() {
        return Err(Error::usage("empty path"));
    }
    if path.points.len() == 1 {
        return Ok(0.0);
    }
    let f = divergence_integrand(system, field, path, baseline)?;
    Ok(trapezoid(&path.sigma, &f))
}

pub(crate) fn trapezoid(x: &[f64], f: &[f64]) -> f64 {
    x.windows(2)
        .zip(f.windows(2))
        .map(|(x, f)| 0.5 * (x[1] - x[0]) * (f[0] + f[1]))
        .sum()
}

/// CSV with columns `sigma,x1..xn,V,divl,|b|`.
pub fn path_csv(system: &DriftSystem, field: &PotentialField, path: &PathResult) -> Result<String> {
    let n = system.dim();
    let mut s = String::from("sigma");
    for k in 1..=n {
        s.push_str(&format!(",x{k}"));
    }
    s.push_str(",V,divl,|b|\n");
    for (x, sig) in path.points.iter().zip(&path.sigma) {
        let f = field.eval(x)?;
        let b = norm(&system.drift(x)?);
        s.push_str(&crate::fmt_f64(*sig));
        for v in x {
            s.push(',');
            s.push_str(&crate::fmt_f64(*v));
        }
        for v in [f.v, f.div_l, b] {
            s.push(',');
            s.push_str(&crate::fmt_f64(v));
        }
        s.push('\n');
    }
    Ok(s)
}

/// Polyline as (cumulative Euclidean length from the exit end, point).
fn from_exit_end(path: &PathResult) -> (Vec<f64>, Vec<&[f64]>) {
    let pts: Vec<&[f64]> = path.points.iter().rev().map(Vec::as_slice).collect();
    let mut s = vec![0.0];
    for w in pts.windows(2) {
        s.push(s.last().unwrap() + distance(w[0], w[1]));
    }
    (s, pts)
}

fn interpolate(s: &[f64], pts: &[&[f64]], at: f64) -> Vec<f64> {
    let k = s.partition_point(|&v| v <= at).clamp(1, s.len() - 1);
    let (s0, s1) = (s[k - 1], s[k]);
    let t = if s1 > s0 {
        ((at - s0) / (s1 - s0)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    pts[k - 1].iter().zip(pts[k]).map(|(a, b)| a + t * (b - a)).collect()
}

/// Largest distance between two paths whose points are matched by arc length
/// measured from their exit ends, over the common length.
pub fn arclength_deviation(a: &PathResult, b: &PathResult) -> f64 {
    let (sa, pa) = from_exit_end(a);
    let (sb, pb) = from_exit_end(b);
    if pa.len() < 2 || pb.len() < 2 {
        return distance(a.exit_end(), b.exit_end());
    }
    let common = sa.last().unwrap().min(*sb.last().unwrap());
    let mut worst = 0.0_f64;
    for (s, p) in [(&sa, &pa), (&sb, &pb)] {
        let (so, po) = if std::ptr::eq(s, &sa) { (&sb, &pb) } else { (&sa, &pa) };
        for (sv, x) in s.iter().zip(p.iter()) {
            if *sv > common {
                break;
            }
            worst = worst.max(distance(x, &interpolate(so, po, *sv)));
        }
    }
    worst
}

/// Symmetric Hausdorff distance between the node sets of two paths.
pub fn hausdorff_distance(a: &PathResult, b: &PathResult) -> f64 {
    let one_way = |p: &PathResult, q: &PathResult| {
        p.points
            .iter()
            .map(|x| q.points.iter().map(|y| distance(x, y)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    one_way(a, b).max(one_way(b, a))
}
