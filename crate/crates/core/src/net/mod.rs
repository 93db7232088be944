//! Feed-forward tanh network producing `(V_hat, l)` from `x`, together with
//! its exact input Jacobian and gradients of any per-sample loss of
//! `(outputs, input Jacobian)` with respect to the weights.
//!
//! The input Jacobian is carried forward as one tangent vector per input
//! coordinate. Parameter gradients run a reverse sweep through both the
//! value and the tangent computation, so losses built from `grad V` are
//! differentiated exactly.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Layer widths of the network. The output always has `input_dim + 1`
/// channels: one for `V_hat`, then the rotational components.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>) -> Result<Self> {
        if input_dim == 0 || hidden.contains(&0) {
            return Err(Error::usage("layer widths must be >= 1"));
        }
        Ok(Architecture { input_dim, hidden })
    }

    /// Six hidden layers of twenty neurons.
    pub fn standard(input_dim: usize) -> Self {
        Architecture {
            input_dim,
            hidden: vec![20; 6],
        }
    }

    pub fn output_dim(&self) -> usize {
        self.input_dim + 1
    }

    /// `(rows, cols)` of each weight matrix, input side first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &w in &self.hidden {
            shapes.push((w, prev));
            prev = w;
        }
        shapes.push((self.output_dim(), prev));
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|(r, c)| r * c + r).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Slot {
    rows: usize,
    cols: usize,
    w: usize,
    b: usize,
}

/// Weights and biases stored in one flat vector, layer by layer, each layer
/// as a row-major weight matrix followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    arch: Architecture,
    seed: u64,
    slots: Vec<Slot>,
    values: Vec<f64>,
}

fn layout(arch: &Architecture) -> Vec<Slot> {
    let mut off = 0;
    arch.layer_shapes()
        .into_iter()
        .map(|(rows, cols)| {
            let s = Slot {
                rows,
                cols,
                w: off,
                b: off + rows * cols,
            };
            off += rows * cols + rows;
            s
        })
        .collect()
}

/// Weights `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero biases.
pub fn init_network(arch: &Architecture, seed: u64) -> NetworkParams {
    let slots = layout(arch);
    let mut values = vec![0.0; arch.parameter_count()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in &slots {
        let bound = 1.0 / (s.cols as f64).sqrt();
        for v in &mut values[s.w..s.b] {
            *v = rng.random_range(-bound..bound);
        }
    }
    NetworkParams {
        arch: arch.clone(),
        seed,
        slots,
        values,
    }
}

impl NetworkParams {
    /// Builds parameters from a flat vector in the layout of [`Self::values`].
    pub fn from_values(arch: Architecture, seed: u64, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.parameter_count() {
            return Err(Error::usage(format!(
                "parameter vector has {} entries, architecture needs {}",
                values.len(),
                arch.parameter_count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::usage("parameter vector contains non-finite entries"));
        }
        Ok(NetworkParams {
            slots: layout(&arch),
            arch,
            seed,
            values,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_layers(&self) -> usize {
        self.slots.len()
    }

    pub fn weight(&self, layer: usize) -> &[f64] {
        let s = self.slots[layer];
        &self.values[s.w..s.b]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let s = self.slots[layer];
        &self.values[s.b..s.b + s.rows]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut [f64] {
        let s = self.slots[layer];
        &mut self.values[s.w..s.b]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let s = self.slots[layer];
        &mut self.values[s.b..s.b + s.rows]
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.arch.output_dim()
    }

    pub fn expect_input_dim(self, dim: usize) -> Result<Self> {
        check_dim(dim, self.arch.input_dim)?;
        Ok(self)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        let mut cur = x.to_vec();
        let last = self.num_layers() - 1;
        for (k, s) in self.slots.iter().enumerate() {
            let w = &self.values[s.w..s.b];
            let b = &self.values[s.b..s.b + s.rows];
            let mut next = vec![0.0; s.rows];
            for r in 0..s.rows {
                let z = b[r] + dot(&w[r * s.cols..(r + 1) * s.cols], &cur);
                next[r] = if k == last { z } else { z.tanh() };
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLayer { layer: k });
            }
            cur = next;
        }
        Ok(cur)
    }

    pub fn forward_with_input_jacobian(&self, x: &[f64]) -> Result<EvalWithJacobian> {
        check_dim(self.input_dim(), x.len())?;
        let mut ws = Workspace::new(self);
        ws.forward(self, x)?;
        Ok(EvalWithJacobian {
            outputs: ws.outputs().to_vec(),
            input_jacobian: ws.jacobian(self),
        })
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Network outputs with `input_jacobian[k * n + j] = d out_k / d x_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalWithJacobian {
    pub outputs: Vec<f64>,
    pub input_jacobian: Vec<f64>,
}

/// Read-only view handed to a [`SampleLoss`].
pub struct SampleView<'a> {
    pub index: usize,
    pub x: &'a [f64],
    pub outputs: &'a [f64],
    /// Row-major `(n + 1) x n`.
    pub jacobian: &'a [f64],
}

/// Cotangent buffers for one sample, zeroed before each call.
pub struct Cotangent<'a> {
    pub outputs: &'a mut [f64],
    pub jacobian: &'a mut [f64],
}

/// A scalar loss that is a sum of per-sample contributions, each a
/// differentiable function of the network outputs and input Jacobian at that
/// sample. A contribution may be split into several reported terms; the loss
/// is their sum.
pub trait SampleLoss: Sync {
    fn term_count(&self) -> usize {
        1
    }

    /// Adds the sample's contribution into `terms` and writes the partial
    /// derivatives of its sum into `cot`.
    fn sample(&self, view: &SampleView<'_>, cot: &mut Cotangent<'_>, terms: &mut [f64]);
}

/// Summed loss terms and the parameter gradient of their total.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    pub terms: Vec<f64>,
    pub gradient: Vec<f64>,
}

impl BatchGradient {
    pub fn loss(&self) -> f64 {
        self.terms.iter().sum()
    }
}

/// Scratch state for one forward/backward pass.
///
/// Per layer `k`: `act[k]` the post-activation values, `ztan[k]` the
/// pre-activation tangents (`n` blocks of `rows`), `atan[k]` the
/// post-activation tangents. For the output layer the activation is the
/// identity and `act`/`atan` are the outputs and their tangents.
pub(crate) struct Workspace {
    n: usize,
    act: Vec<Vec<f64>>,
    ztan: Vec<Vec<f64>>,
    atan: Vec<Vec<f64>>,
    x: Vec<f64>,
    g_act: Vec<f64>,
    g_tan: Vec<f64>,
    g_act_prev: Vec<f64>,
    g_tan_prev: Vec<f64>,
    g_z: Vec<f64>,
    g_ztan: Vec<f64>,
    jac: Vec<f64>,
    d_jac: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(params: &NetworkParams) -> Self {
        let n = params.input_dim();
        let widest = params.slots.iter().map(|s| s.rows.max(s.cols)).max().unwrap_or(1);
        let act = params.slots.iter().map(|s| vec![0.0; s.rows]).collect();
        let ztan = params.slots.iter().map(|s| vec![0.0; n * s.rows]).collect::<Vec<_>>();
        let atan = ztan.clone();
        let m = params.output_dim();
        Workspace {
            n,
            act,
            ztan,
            atan,
            x: vec![0.0; n],
            g_act: vec![0.0; widest],
            g_tan: vec![0.0; n * widest],
            g_act_prev: vec![0.0; widest],
            g_tan_prev: vec![0.0; n * widest],
            g_z: vec![0.0; widest],
            g_ztan: vec![0.0; n * widest],
            jac: vec![0.0; m * n],
            d_jac: vec![0.0; m * n],
        }
    }

    pub(crate) fn outputs(&self) -> &[f64] {
        self.act.last().expect("at least one layer")
    }

    /// Row-major `(n+1) x n` copy of the output tangents.
    pub(crate) fn jacobian(&self, params: &NetworkParams) -> Vec<f64> {
        let mut j = vec![0.0; params.output_dim() * self.n];
        self.fill_jacobian(&mut j);
        j
    }

    fn fill_jacobian(&self, out: &mut [f64]) {
        let n = self.n;
        let t = self.atan.last().expect("at least one layer");
        let m = t.len() / n;
        for k in 0..m {
            for j in 0..n {
                out[k * n + j] = t[j * m + k];
            }
        }
    }

    pub(crate) fn forward(&mut self, params: &NetworkParams, x: &[f64]) -> Result<()> {
        let n = self.n;
        self.x.copy_from_slice(x);
        let last = params.slots.len() - 1;
        for (k, s) in params.slots.iter().enumerate() {
            let w = &params.values[s.w..s.b];
            let b = &params.values[s.b..s.b + s.rows];
            let (done, rest) = self.act.split_at_mut(k);
            let (tdone, trest) = self.atan.split_at_mut(k);
            let out = &mut rest[0];
            let zt = &mut self.ztan[k];
            let rows = s.rows;
            let cols = s.cols;
            if k == 0 {
                for r in 0..rows {
                    let wr = &w[r * cols..(r + 1) * cols];
                    out[r] = b[r] + dot(wr, &self.x);
                    for j in 0..n {
                        zt[j * rows + r] = wr[j];
                    }
                }
            } else {
                let prev = &done[k - 1];
                let tprev = &tdone[k - 1];
                for r in 0..rows {
                    let wr = &w[r * cols..(r + 1) * cols];
                    out[r] = b[r] + dot(wr, prev);
                    for j in 0..n {
                        zt[j * rows + r] = dot(wr, &tprev[j * cols..(j + 1) * cols]);
                    }
                }
            }
            let at = &mut trest[0];
            if k == last {
                at.copy_from_slice(zt);
            } else {
                for r in 0..rows {
                    let a = out[r].tanh();
                    out[r] = a;
                    let s = 1.0 - a * a;
                    for j in 0..n {
                        at[j * rows + r] = s * zt[j * rows + r];
                    }
                }
            }
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLayer { layer: k });
            }
        }
        Ok(())
    }

    /// Accumulates into `grad` the parameter gradient given cotangents of the
    /// outputs (`d_out`) and of the output tangents, laid out like `atan`.
    fn backward(&mut self, params: &NetworkParams, d_out: &[f64], grad: &mut [f64]) {
        let n = self.n;
        let m = params.output_dim();
        // output tangent cotangents from the row-major Jacobian cotangent
        for k in 0..m {
            self.g_act[k] = d_out[k];
            for j in 0..n {
                self.g_tan[j * m + k] = self.d_jac[k * n + j];
            }
        }
        let last = params.slots.len() - 1;
        for k in (0..params.slots.len()).rev() {
            let s = params.slots[k];
            let (rows, cols) = (s.rows, s.cols);
            let w = &params.values[s.w..s.b];
            let g_z = &mut self.g_z[..rows];
            let g_zt = &mut self.g_ztan[..n * rows];
            if k == last {
                g_z.copy_from_slice(&self.g_act[..rows]);
                g_zt.copy_from_slice(&self.g_tan[..n * rows]);
            } else {
                let a = &self.act[k];
                let zt = &self.ztan[k];
                for r in 0..rows {
                    let s = 1.0 - a[r] * a[r];
                    let ds = -2.0 * a[r] * s;
                    let mut gz = s * self.g_act[r];
                    for j in 0..n {
                        let gt = self.g_tan[j * rows + r];
                        g_zt[j * rows + r] = s * gt;
                        gz += gt * zt[j * rows + r] * ds;
                    }
                    g_z[r] = gz;
                }
            }
            let (gw, gb) = grad[s.w..s.b + rows].split_at_mut(rows * cols);
            for r in 0..rows {
                gb[r] += g_z[r];
            }
            if k == 0 {
                for r in 0..rows {
                    let gwr = &mut gw[r * cols..(r + 1) * cols];
                    for c in 0..cols {
                        gwr[c] += g_z[r] * self.x[c] + g_zt[c * rows + r];
                    }
                }
                break;
            }
            let prev = &self.act[k - 1];
            let tprev = &self.atan[k - 1];
            let gap = &mut self.g_act_prev[..cols];
            let gtp = &mut self.g_tan_prev[..n * cols];
            gap.fill(0.0);
            gtp.fill(0.0);
            for r in 0..rows {
                let wr = &w[r * cols..(r + 1) * cols];
                let gwr = &mut gw[r * cols..(r + 1) * cols];
                let gzr = g_z[r];
                for c in 0..cols {
                    gwr[c] += gzr * prev[c];
                    gap[c] += wr[c] * gzr;
                }
                for j in 0..n {
                    let gztj = g_zt[j * rows + r];
                    let tp = &tprev[j * cols..(j + 1) * cols];
                    let gt = &mut gtp[j * cols..(j + 1) * cols];
                    for c in 0..cols {
                        gwr[c] += gztj * tp[c];
                        gt[c] += wr[c] * gztj;
                    }
                }
            }
            std::mem::swap(&mut self.g_act, &mut self.g_act_prev);
            std::mem::swap(&mut self.g_tan, &mut self.g_tan_prev);
        }
    }
}

/// Samples per shard; shard results are summed in index order, so the
/// gradient does not depend on the number of worker threads.
const SHARD: usize = 32;

/// Total loss and its exact gradient with respect to every parameter, in
/// the layout of [`NetworkParams::values`].
pub fn parameter_gradient<L: SampleLoss + ?Sized>(
    params: &NetworkParams,
    batch: &[Vec<f64>],
    loss: &L,
) -> Result<BatchGradient> {
    let n = params.input_dim();
    if let Some(bad) = batch.iter().find(|x| x.len() != n) {
        return Err(Error::Dimension {
            expected: n,
            got: bad.len(),
        });
    }
    let shards: Vec<Result<BatchGradient>> = batch
        .par_chunks(SHARD)
        .enumerate()
        .map(|(si, chunk)| shard_gradient(params, chunk, si * SHARD, loss))
        .collect();
    let mut out = BatchGradient {
        terms: vec![0.0; loss.term_count()],
        gradient: vec![0.0; params.len()],
    };
    for shard in shards {
        let shard = shard?;
        for (a, b) in out.terms.iter_mut().zip(&shard.terms) {
            *a += b;
        }
        for (a, b) in out.gradient.iter_mut().zip(&shard.gradient) {
            *a += b;
        }
    }
    Ok(out)
}

fn shard_gradient<L: SampleLoss + ?Sized>(
    params: &NetworkParams,
    chunk: &[Vec<f64>],
    offset: usize,
    loss: &L,
) -> Result<BatchGradient> {
    let mut ws = Workspace::new(params);
    let mut grad = vec![0.0; params.len()];
    let mut d_out = vec![0.0; params.output_dim()];
    let mut terms = vec![0.0; loss.term_count()];
    let mut sample_terms = vec![0.0; loss.term_count()];
    for (i, x) in chunk.iter().enumerate() {
        let index = offset + i;
        ws.forward(params, x).map_err(|_| Error::NonFiniteSample {
            index,
            what: "forward pass",
        })?;
        let mut jac = std::mem::take(&mut ws.jac);
        ws.fill_jacobian(&mut jac);
        d_out.fill(0.0);
        let mut d_jac = std::mem::take(&mut ws.d_jac);
        d_jac.fill(0.0);
        sample_terms.fill(0.0);
        loss.sample(
            &SampleView {
                index,
                x,
                outputs: ws.outputs(),
                jacobian: &jac,
            },
            &mut Cotangent {
                outputs: &mut d_out,
                jacobian: &mut d_jac,
            },
            &mut sample_terms,
        );
        ws.jac = jac;
        ws.d_jac = d_jac;
        if sample_terms.iter().any(|v| !v.is_finite())
            || d_out.iter().any(|v| !v.is_finite())
            || ws.d_jac.iter().any(|v| !v.is_finite())
        {
            return Err(Error::NonFiniteSample {
                index,
                what: "loss or its derivative",
            });
        }
        for (a, b) in terms.iter_mut().zip(&sample_terms) {
            *a += b;
        }
        ws.backward(params, &d_out, &mut grad);
    }
    if grad.iter().any(|g| !g.is_finite()) {
        // isolate the offending sample
        for (i, x) in chunk.iter().enumerate() {
            let g = shard_gradient(params, std::slice::from_ref(x), offset + i, loss)?.gradient;
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteSample {
                    index: offset + i,
                    what: "parameter gradient",
                });
            }
        }
        return Err(Error::NonFiniteSample {
            index: offset,
            what: "accumulated parameter gradient",
        });
    }
    Ok(BatchGradient { terms, gradient: grad })
}
