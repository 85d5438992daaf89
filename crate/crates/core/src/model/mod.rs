//! Per-frame endpoint predictor: a tanh MLP mapping `(x_t, q_t, t)` to a
//! predicted `x1` and a raw 4-vector normalized into `q1`.

mod checkpoint;
mod loss;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use loss::{flow_loss, loss_gradient, ChainContext, LossBreakdown, LossConfig};
pub use train::{
    filter_pairs, generate_pairs, pairs_from_noise, rectify, train_qflow, CouplingPair, CouplingSource, FilterReport,
    OptimizerConfig, OptimizerState, TrainConfig, TrainOutcome, Trainer,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::FrameTransform;
use crate::quat::{Quaternion, UnitQuaternion, Vec3};
use crate::so3_stats::RngState;
use crate::solvers::EndpointModel;

pub const INPUT_WIDTH: usize = 8;
pub const OUTPUT_WIDTH: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: Activation,
    /// Adds `(x_t, q_t)` to the first seven outputs, so the network learns
    /// the displacement to the endpoint rather than the endpoint itself.
    #[serde(default)]
    pub skip: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Self::with_hidden(vec![64, 64])
    }
}

impl Architecture {
    pub fn with_hidden(hidden: Vec<usize>) -> Self {
        Self {
            input: INPUT_WIDTH,
            hidden,
            output: OUTPUT_WIDTH,
            activation: Activation::Tanh,
            skip: false,
        }
    }

    pub fn with_skip(mut self, skip: bool) -> Self {
        self.skip = skip;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input != INPUT_WIDTH || self.output != OUTPUT_WIDTH {
            return Err(Error::Architecture(format!(
                "expected input width {INPUT_WIDTH} and output width {OUTPUT_WIDTH}, got {} and {}",
                self.input, self.output
            )));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::Architecture("hidden widths must be positive".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each affine layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input];
        widths.extend(&self.hidden);
        widths.push(self.output);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Weights and biases stored flat: for each layer, the `out × in` weight
/// matrix row-major, then the `out` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let n = arch.param_count();
        Ok(Self {
            arch,
            values: vec![0.0; n],
        })
    }

    /// Weights `N(0, 1/fan_in)`, biases zero.
    pub fn init(arch: Architecture, rng: &mut RngState) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        let mut offset = 0;
        for (fan_in, fan_out) in p.arch.layer_shapes() {
            let scale = (1.0 / fan_in as f64).sqrt();
            for w in &mut p.values[offset..offset + fan_in * fan_out] {
                *w = rng.normal() * scale;
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(p)
    }

    pub fn from_values(arch: Architecture, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if values.len() != arch.param_count() {
            return Err(Error::Architecture(format!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                values.len()
            )));
        }
        Ok(Self { arch, values })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
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

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check(&self) -> Result<()> {
        if self.values.len() != self.arch.param_count() {
            return Err(Error::Architecture(format!(
                "parameter vector has {} entries, architecture needs {}",
                self.values.len(),
                self.arch.param_count()
            )));
        }
        Ok(())
    }
}

pub(crate) fn features(x_t: &Vec3, q_t: &UnitQuaternion, t: f64) -> [f64; INPUT_WIDTH] {
    let q = q_t.quaternion();
    [x_t.x, x_t.y, x_t.z, q.s, q.u.x, q.u.y, q.u.z, t]
}

/// Layer activations kept for the backward pass. `acts[0]` is the input,
/// `acts[l + 1]` the output of layer `l` (linear for the last layer).
pub(crate) struct ForwardCache {
    pub acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("at least one layer")
    }
}

pub(crate) fn forward_cached(params: &ModelParams, input: &[f64]) -> ForwardCache {
    let shapes = params.arch.layer_shapes();
    let last = shapes.len() - 1;
    let mut acts = Vec::with_capacity(shapes.len() + 1);
    acts.push(input.to_vec());
    let mut offset = 0;
    for (l, &(fan_in, fan_out)) in shapes.iter().enumerate() {
        let w = &params.values[offset..offset + fan_in * fan_out];
        let b = &params.values[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        let prev = &acts[l];
        let mut out = Vec::with_capacity(fan_out);
        for o in 0..fan_out {
            let row = &w[o * fan_in..(o + 1) * fan_in];
            let z = b[o] + row.iter().zip(prev).map(|(a, b)| a * b).sum::<f64>();
            out.push(if l == last { z } else { z.tanh() });
        }
        if l == last && params.arch.skip {
            for (o, i) in out.iter_mut().zip(input) {
                *o += i;
            }
        }
        acts.push(out);
        offset += fan_in * fan_out + fan_out;
    }
    ForwardCache { acts }
}

/// Accumulates `d loss / d params` into `grad` given `d loss / d output`.
pub(crate) fn backward(params: &ModelParams, cache: &ForwardCache, d_out: &[f64], grad: &mut [f64]) {
    let shapes = params.arch.layer_shapes();
    let last = shapes.len() - 1;
    let mut offsets = Vec::with_capacity(shapes.len());
    let mut offset = 0;
    for &(fan_in, fan_out) in &shapes {
        offsets.push(offset);
        offset += fan_in * fan_out + fan_out;
    }
    let mut delta = d_out.to_vec();
    for l in (0..shapes.len()).rev() {
        let (fan_in, fan_out) = shapes[l];
        if l != last {
            // tanh' = 1 - a²
            for (d, a) in delta.iter_mut().zip(&cache.acts[l + 1]) {
                *d *= 1.0 - a * a;
            }
        }
        let off = offsets[l];
        let prev = &cache.acts[l];
        for o in 0..fan_out {
            let d = delta[o];
            if d == 0.0 {
                continue;
            }
            let row = &mut grad[off + o * fan_in..off + (o + 1) * fan_in];
            for (g, a) in row.iter_mut().zip(prev) {
                *g += d * a;
            }
            grad[off + fan_in * fan_out + o] += d;
        }
        if l > 0 {
            let w = &params.values[off..off + fan_in * fan_out];
            let mut next = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (n, wi) in next.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                    *n += d * wi;
                }
            }
            delta = next;
        }
    }
}

/// Splits the raw output into the translation and the unnormalized
/// quaternion.
pub(crate) fn split_output(out: &[f64]) -> (Vec3, Quaternion) {
    (
        Vec3::new(out[0], out[1], out[2]),
        Quaternion::new(out[3], out[4], out[5], out[6]),
    )
}

/// Normalized quaternion head; the zero vector maps to the identity.
pub(crate) fn quaternion_head(raw: &Quaternion) -> UnitQuaternion {
    UnitQuaternion::normalize(*raw).unwrap_or_else(UnitQuaternion::identity)
}

pub fn model_forward(
    params: &ModelParams,
    x_t: &Vec3,
    q_t: &UnitQuaternion,
    t: f64,
) -> Result<(Vec3, UnitQuaternion)> {
    params.check()?;
    let cache = forward_cached(params, &features(x_t, q_t, t));
    let (x1, raw) = split_output(cache.output());
    Ok((x1, quaternion_head(&raw)))
}

impl EndpointModel for ModelParams {
    fn predict(&self, frame: &FrameTransform, t: f64) -> Result<FrameTransform> {
        let (x, q) = model_forward(self, &frame.x, &frame.q, t)?;
        Ok(FrameTransform::new(x, q))
    }
}
