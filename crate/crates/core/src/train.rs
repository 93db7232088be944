//! Fitting the network decomposition `b = -grad V / 2 + l` on a fixed
//! random sample of the region, with full-batch Adam.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::field::LearnedField;
use crate::net::{
    self, init_network, parameter_gradient, save_checkpoint, Architecture, CheckpointMeta, Cotangent, NetworkParams,
    SampleLoss, SampleView,
};
use crate::systems::{AnalyticBenchmark, Decomposition, DriftSystem};

/// Axis-aligned box `[lower_i, upper_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Region {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let r = Region { lower, upper };
        r.validate()?;
        Ok(r)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.lower.len(), self.upper.len())?;
        if self
            .lower
            .iter()
            .zip(&self.upper)
            .any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite())
        {
            return Err(Error::usage(
                "region must have finite lower < upper in every coordinate",
            ));
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (a, b))| *a <= *v && *v <= *b)
    }
}

impl Default for Region {
    /// `[-1.5, 0] x [-0.8, 0.8]`.
    fn default() -> Self {
        Region {
            lower: vec![-1.5, -0.8],
            upper: vec![0.0, 0.8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub region: Region,
    pub samples: usize,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Guard in the orthogonality denominator.
    pub delta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub xbar: Vec<f64>,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    /// Abort when the total loss exceeds this.
    pub divergence_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            region: Region::default(),
            samples: 1000,
            gamma1: 1.0,
            gamma2: 0.1,
            delta: 1e-3,
            learning_rate: 2e-3,
            epochs: 100_000,
            seed: 0,
            xbar: vec![-1.0, 0.0],
            checkpoint_every: 5000,
            divergence_threshold: 1e6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.region.validate()?;
        check_dim(self.region.dim(), self.xbar.len())?;
        if !(self.gamma1 >= 0.0 && self.gamma2 >= 0.0) {
            return Err(Error::usage("gamma1 and gamma2 must be >= 0"));
        }
        if !(self.delta > 0.0) {
            return Err(Error::usage("delta must be > 0"));
        }
        if self.samples == 0 {
            return Err(Error::usage("need at least one training sample"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::usage("learning rate must be > 0"));
        }
        Ok(())
    }
}

/// `samples` i.i.d. uniform points of the region. Uses a generator stream
/// separate from weight initialization.
pub fn sample_training_set(cfg: &TrainConfig) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    (0..cfg.samples)
        .map(|_| {
            cfg.region
                .lower
                .iter()
                .zip(&cfg.region.upper)
                .map(|(&a, &b)| a + (b - a) * rng.random::<f64>())
                .collect()
        })
        .collect()
}

/// Loss terms, unweighted. `total = dynamics + gamma1 orthogonality + gamma2 anchor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub dynamics: f64,
    pub orthogonality: f64,
    pub anchor: f64,
    pub total: f64,
}

/// Per-point terms of the decomposition loss given `grad V`, `l` and `b`.
/// Returns `(|r|^2, q)` with `r = b + grad V / 2 - l` and
/// `q = <grad V, l>^2 / (|grad V|^2 |l|^2 + delta)`.
pub fn pointwise_terms(b: &[f64], grad_v: &[f64], l: &[f64], delta: f64) -> (f64, f64) {
    let mut r2 = 0.0;
    let (mut p, mut a, mut bb) = (0.0, 0.0, 0.0);
    for k in 0..b.len() {
        let r = b[k] + 0.5 * grad_v[k] - l[k];
        r2 += r * r;
        p += grad_v[k] * l[k];
        a += grad_v[k] * grad_v[k];
        bb += l[k] * l[k];
    }
    (r2, p * p / (a * bb + delta))
}

/// The training loss as a [`SampleLoss`]: indices `0..N` are the training
/// points, index `N` is the stable point carrying the anchor term.
struct DecompositionLoss<'a> {
    drift: Vec<Vec<f64>>,
    xbar: &'a [f64],
    gamma1: f64,
    gamma2: f64,
    delta: f64,
}

impl SampleLoss for DecompositionLoss<'_> {
    fn term_count(&self) -> usize {
        3
    }

    fn sample(&self, v: &SampleView<'_>, cot: &mut Cotangent<'_>, terms: &mut [f64]) {
        let n = self.xbar.len();
        let count = self.drift.len();
        if v.index == count {
            let vt = v.outputs[0];
            terms[2] += self.gamma2 * vt * vt;
            cot.outputs[0] = 2.0 * self.gamma2 * vt;
            return;
        }
        let inv_n = 1.0 / count as f64;
        let b = &self.drift[v.index];
        let mut grad_v = [0.0; 8];
        let mut p = 0.0;
        let mut a = 0.0;
        let mut bb = 0.0;
        let mut r2 = 0.0;
        for j in 0..n {
            grad_v[j] = v.jacobian[j] + 2.0 * (v.x[j] - self.xbar[j]);
        }
        for k in 0..n {
            let l = v.outputs[1 + k];
            let r = b[k] + 0.5 * grad_v[k] - l;
            r2 += r * r;
            p += grad_v[k] * l;
            a += grad_v[k] * grad_v[k];
            bb += l * l;
            // d|r|^2 / d grad V = r, d|r|^2 / d l = -2 r
            cot.jacobian[k] = r * inv_n;
            cot.outputs[1 + k] = -2.0 * r * inv_n;
        }
        let d = a * bb + self.delta;
        let q = p * p / d;
        let w = self.gamma1 * inv_n;
        for k in 0..n {
            let l = v.outputs[1 + k];
            let dq_dg = 2.0 * p * l / d - p * p * 2.0 * grad_v[k] * bb / (d * d);
            let dq_dl = 2.0 * p * grad_v[k] / d - p * p * 2.0 * l * a / (d * d);
            cot.jacobian[k] += w * dq_dg;
            cot.outputs[1 + k] += w * dq_dl;
        }
        terms[0] += r2 * inv_n;
        terms[1] += self.gamma1 * q * inv_n;
    }
}

impl<'a> DecompositionLoss<'a> {
    fn new(system: &DriftSystem, points: &[Vec<f64>], cfg: &'a TrainConfig) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::usage("loss needs at least one point"));
        }
        if system.dim() > 8 {
            return Err(Error::usage("the trainer supports dimension <= 8"));
        }
        let drift = points.iter().map(|x| system.drift(x)).collect::<Result<_>>()?;
        Ok(DecompositionLoss {
            drift,
            xbar: &cfg.xbar,
            gamma1: cfg.gamma1,
            gamma2: cfg.gamma2,
            delta: cfg.delta,
        })
    }

    fn components(&self, terms: &[f64]) -> LossComponents {
        let unweight = |v: f64, g: f64| if g > 0.0 { v / g } else { 0.0 };
        LossComponents {
            dynamics: terms[0],
            orthogonality: unweight(terms[1], self.gamma1),
            anchor: unweight(terms[2], self.gamma2),
            total: terms.iter().sum(),
        }
    }
}

fn with_anchor(points: &[Vec<f64>], xbar: &[f64]) -> Vec<Vec<f64>> {
    let mut batch = points.to_vec();
    batch.push(xbar.to_vec());
    batch
}

/// The loss components and their gradient with respect to the flattened
/// network parameters, as used by each training epoch.
pub fn loss_gradient(
    params: &NetworkParams,
    system: &DriftSystem,
    points: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<(LossComponents, Vec<f64>)> {
    check_dim(system.dim(), cfg.xbar.len())?;
    let loss = DecompositionLoss::new(system, points, cfg)?;
    let bg = parameter_gradient(params, &with_anchor(points, &cfg.xbar), &loss)?;
    Ok((loss.components(&bg.terms), bg.gradient))
}

/// Evaluates the three loss components without differentiating.
pub fn loss_components(
    params: &NetworkParams,
    system: &DriftSystem,
    points: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<LossComponents> {
    if points.is_empty() {
        return Err(Error::usage("loss needs at least one point"));
    }
    let field = LearnedField::unchecked(Arc::new(params.clone()), cfg.xbar.clone());
    let mut dynamics = 0.0;
    let mut orth = 0.0;
    for (i, x) in points.iter().enumerate() {
        let s = field.sample(x).map_err(|_| Error::NonFiniteSample {
            index: i,
            what: "forward pass",
        })?;
        let (r2, q) = pointwise_terms(&system.drift(x)?, &s.grad_v, &s.l, cfg.delta);
        if !(r2.is_finite() && q.is_finite()) {
            return Err(Error::NonFiniteSample {
                index: i,
                what: "loss term",
            });
        }
        dynamics += r2;
        orth += q;
    }
    let n = points.len() as f64;
    let v0 = field.potential(&cfg.xbar)?;
    let (dynamics, orthogonality, anchor) = (dynamics / n, orth / n, v0 * v0);
    Ok(LossComponents {
        dynamics,
        orthogonality,
        anchor,
        total: dynamics + cfg.gamma1 * orthogonality + cfg.gamma2 * anchor,
    })
}

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        check_dim(self.m.len(), grad.len())?;
        check_dim(self.m.len(), params.len())?;
        self.t += 1;
        let c1 = 1.0 - self.beta1.powf(self.t as f64);
        let c2 = 1.0 - self.beta2.powf(self.t as f64);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(flatten)]
    pub loss: LossComponents,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub wall_seconds: f64,
    pub final_metrics: Option<ErrorMetrics>,
}

impl TrainHistory {
    /// CSV with header `epoch,L_dyn,L_orth,L0,total`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,L_dyn,L_orth,L0,total\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch,
                crate::fmt_f64(r.loss.dynamics),
                crate::fmt_f64(r.loss.orthogonality),
                crate::fmt_f64(r.loss.anchor),
                crate::fmt_f64(r.loss.total)
            ));
        }
        s
    }
}

/// Optional knobs of [`train_with`].
#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Continue from these parameters; epochs are counted from
    /// `start_epoch`. Adam moments restart.
    pub resume: Option<(NetworkParams, usize)>,
    pub checkpoint_dir: Option<PathBuf>,
    pub system_key: String,
    pub progress: Option<&'a mut dyn FnMut(&EpochRecord)>,
}

pub struct TrainOutcome {
    pub params: NetworkParams,
    pub history: TrainHistory,
    pub checkpoints: Vec<PathBuf>,
}

pub fn train(system: &DriftSystem, arch: &Architecture, cfg: &TrainConfig) -> Result<(NetworkParams, TrainHistory)> {
    let out = train_with(system, arch, cfg, TrainOptions::default())?;
    Ok((out.params, out.history))
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:07}.qpn")
}

/// Full-batch training. Epoch `e` records the loss of the parameters before
/// the `e`-th update; `cfg.epochs` is the total epoch count including any
/// resumed ones.
pub fn train_with(
    system: &DriftSystem,
    arch: &Architecture,
    cfg: &TrainConfig,
    mut opts: TrainOptions<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dim(system.dim(), arch.input_dim)?;
    check_dim(system.dim(), cfg.xbar.len())?;
    let started = Instant::now();
    let points = sample_training_set(cfg);
    let loss = DecompositionLoss::new(system, &points, cfg)?;
    let batch = with_anchor(&points, &cfg.xbar);

    let (mut params, start) = match opts.resume.take() {
        Some((p, e)) => {
            if p.architecture() != arch {
                return Err(Error::usage("resumed checkpoint architecture does not match"));
            }
            (p, e)
        }
        None => (init_network(arch, cfg.seed), 0),
    };
    let mut adam = Adam::new(params.len());
    let mut history = TrainHistory::default();
    let mut checkpoints = Vec::new();
    let mut last_good = params.clone();
    let meta = |epochs: usize, loss: Option<f64>| CheckpointMeta {
        system: opts.system_key.clone(),
        xbar: cfg.xbar.clone(),
        epochs,
        final_loss: loss,
    };
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }

    for epoch in start..cfg.epochs {
        let bg = match parameter_gradient(&params, &batch, &loss) {
            Ok(bg) => bg,
            Err(Error::NonFiniteSample { .. }) => {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    loss: f64::NAN,
                    last_good_epoch: epoch.saturating_sub(1).max(start),
                    last_good: Box::new(last_good),
                })
            }
            Err(e) => return Err(e),
        };
        let comps = loss.components(&bg.terms);
        if !comps.total.is_finite() || comps.total > cfg.divergence_threshold {
            if let Some(dir) = &opts.checkpoint_dir {
                let path = dir.join("last_good.qpn");
                save_checkpoint(&last_good, &meta(epoch, None), &path)?;
            }
            return Err(Error::Diverged {
                epoch: epoch + 1,
                loss: comps.total,
                last_good_epoch: epoch.saturating_sub(1).max(start),
                last_good: Box::new(last_good),
            });
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            loss: comps,
        };
        if let Some(cb) = opts.progress.as_mut() {
            cb(&record);
        }
        history.records.push(record);
        last_good.values_mut().copy_from_slice(params.values());
        adam.step(params.values_mut(), &bg.gradient, cfg.learning_rate)?;
        let done = epoch + 1;
        if let Some(dir) = &opts.checkpoint_dir {
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
                let path = dir.join(checkpoint_name(done));
                save_checkpoint(&params, &meta(done, Some(comps.total)), &path)?;
                checkpoints.push(path);
            }
        }
    }
    history.wall_seconds = started.elapsed().as_secs_f64();
    if let Some(dir) = &opts.checkpoint_dir {
        let path = dir.join("final.qpn");
        let last = history.records.last().map(|r| r.loss.total);
        save_checkpoint(&params, &meta(cfg.epochs.max(start), last), &path)?;
        checkpoints.push(path);
    }
    Ok(TrainOutcome {
        params,
        history,
        checkpoints,
    })
}

/// Tensor-product lattice over a box, `counts[i]` nodes along axis `i`
/// including both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub region: Region,
    pub counts: Vec<usize>,
}

impl Grid {
    /// 101 x 81 over the default training region.
    pub fn evaluation_default() -> Self {
        Grid {
            region: Region::default(),
            counts: vec![101, 81],
        }
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Points in row-major order, first coordinate slowest.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let d = self.counts.len();
        let total = self.len();
        let mut out = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut p = vec![0.0; d];
            for i in (0..d).rev() {
                let c = self.counts[i];
                let k = rem % c;
                rem /= c;
                let (a, b) = (self.region.lower[i], self.region.upper[i]);
                p[i] = if c == 1 {
                    a
                } else {
                    a + (b - a) * k as f64 / (c - 1) as f64
                };
            }
            out.push(p);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub e_v: f64,
    pub e_l: f64,
    pub grid: Grid,
}

/// Max-ratio errors over the points:
/// `e_V = max|V_theta - V|^2 / max|V|^2`, `e_l = max|l_theta - l|^2 / max|l|^2`.
pub fn approximation_errors_at<F>(truth: &dyn Decomposition, points: &[Vec<f64>], mut learned: F) -> Result<(f64, f64)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = truth.dim();
    let mut l_true = vec![0.0; n];
    let (mut dv, mut vmax, mut dl, mut lmax) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for x in points {
        let (v, l) = learned(x)?;
        let vt = truth.potential(x);
        truth.rotational(x, &mut l_true);
        dv = dv.max((v - vt) * (v - vt));
        vmax = vmax.max(vt * vt);
        dl = dl.max(l.iter().zip(&l_true).map(|(a, b)| (a - b) * (a - b)).sum());
        lmax = lmax.max(l_true.iter().map(|a| a * a).sum());
    }
    if vmax == 0.0 || lmax == 0.0 {
        return Err(Error::usage("true field vanishes identically on the grid"));
    }
    Ok((dv / vmax, dl / lmax))
}

pub fn approximation_errors(
    params: &NetworkParams,
    xbar: &[f64],
    bench: &AnalyticBenchmark,
    grid: &Grid,
) -> Result<ErrorMetrics> {
    let field = LearnedField::unchecked(Arc::new(params.clone()), xbar.to_vec());
    let (e_v, e_l) = approximation_errors_at(bench, &grid.points(), |x| {
        let y = params.forward(x)?;
        let r2: f64 = x.iter().zip(field.xbar()).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok((y[0] + r2, y[1..].to_vec()))
    })?;
    Ok(ErrorMetrics {
        e_v,
        e_l,
        grid: grid.clone(),
    })
}

pub fn load_trained(path: &Path) -> Result<(NetworkParams, CheckpointMeta)> {
    net::load_checkpoint(path)
}
