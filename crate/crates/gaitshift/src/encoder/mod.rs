//! Set encoder: per-frame band features, order-invariant max pooling over
//! frames, then a horizontal pyramid of strip-wise affine maps whose
//! concatenation is L2-normalized into the sequence embedding.
//!
//! Gradients are hand-written. A forward pass can keep a [`SequenceTrace`]
//! so the backward pass does not need to re-encode.

mod checkpoint;
mod params;
mod silhouette;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use params::{init_params, EncoderParams, HyperShape, Layout, ParamGrads, Slot};
pub use silhouette::{Condition, SilhouetteFrame, SilhouetteSequence};

use rayon::prelude::*;

use crate::error::{GaitError, Result};
use crate::numerics::{dot, l2_normalize, norm, MIN_NORM};

/// `bands x channels` grid of non-negative features, row-major by band.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub bands: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn get(&self, band: usize, channel: usize) -> f64 {
        self.data[band * self.channels + channel]
    }

    pub fn band(&self, band: usize) -> &[f64] {
        &self.data[band * self.channels..(band + 1) * self.channels]
    }
}

/// Unit-norm sequence embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    vector: Vec<f64>,
    pub sample: Option<usize>,
}

impl Embedding {
    /// Normalizes `raw`; fails on a zero vector.
    pub fn from_raw(raw: &[f64]) -> Result<Self> {
        Ok(Self {
            vector: l2_normalize(raw)?,
            sample: None,
        })
    }

    /// Wraps a vector that must already have unit norm (within 1e-9).
    pub fn from_unit(vector: Vec<f64>) -> Result<Self> {
        let n = norm(&vector);
        if (n - 1.0).abs() > 1e-9 {
            return Err(GaitError::param(format!("embedding norm {n} is not 1")));
        }
        Ok(Self {
            vector,
            sample: None,
        })
    }

    pub fn with_sample(mut self, sample: usize) -> Self {
        self.sample = Some(sample);
        self
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.vector
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.vector
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Pre- and post-activation values of both frame layers, `bands x channels`.
#[derive(Debug, Clone)]
struct FrameActs {
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
}

fn check_frame(frame: &SilhouetteFrame, shape: &HyperShape) -> Result<()> {
    if frame.height() != shape.height || frame.width() != shape.width {
        return Err(GaitError::param(format!(
            "frame is {}x{}, encoder expects {}x{}",
            frame.height(),
            frame.width(),
            shape.height,
            shape.width
        )));
    }
    Ok(())
}

fn frame_forward(frame: &SilhouetteFrame, params: &EncoderParams) -> Result<FrameActs> {
    let shape = params.shape();
    check_frame(frame, shape)?;
    let (b, c, p) = (shape.bands, shape.channels, shape.band_pixels());
    let lay = params.layout();
    let v = params.values();
    let w1 = &v[lay.w1..lay.w1 + c * p];
    let b1 = &v[lay.b1..lay.b1 + c];
    let w2 = &v[lay.w2..lay.w2 + c * c];
    let b2 = &v[lay.b2..lay.b2 + c];

    let mut acts = FrameActs {
        z1: vec![0.0; b * c],
        a1: vec![0.0; b * c],
        z2: vec![0.0; b * c],
        a2: vec![0.0; b * c],
    };
    let pixels = frame.pixels();
    for band in 0..b {
        let x = &pixels[band * p..(band + 1) * p];
        for ch in 0..c {
            let z = dot(&w1[ch * p..(ch + 1) * p], x) + b1[ch];
            acts.z1[band * c + ch] = z;
            acts.a1[band * c + ch] = relu(z);
        }
        let a1 = &acts.a1[band * c..(band + 1) * c];
        for ch in 0..c {
            let z = dot(&w2[ch * c..(ch + 1) * c], a1) + b2[ch];
            acts.z2[band * c + ch] = z;
            acts.a2[band * c + ch] = relu(z);
        }
    }
    Ok(acts)
}

/// Frame-level features: each horizontal band goes through a shared affine
/// map to `channels` with ReLU, then a shared channel-mixing affine map with
/// ReLU.
pub fn encode_frame(frame: &SilhouetteFrame, params: &EncoderParams) -> Result<FeatureMap> {
    let acts = frame_forward(frame, params)?;
    Ok(FeatureMap {
        bands: params.shape().bands,
        channels: params.shape().channels,
        data: acts.a2,
    })
}

/// Element-wise max over frames, plus the winning frame per cell (lowest
/// index on ties).
fn pool_with_argmax(maps: &[&[f64]]) -> (Vec<f64>, Vec<usize>) {
    let cells = maps[0].len();
    let mut pooled = maps[0].to_vec();
    let mut arg = vec![0usize; cells];
    for (k, m) in maps.iter().enumerate().skip(1) {
        for cell in 0..cells {
            if m[cell] > pooled[cell] {
                pooled[cell] = m[cell];
                arg[cell] = k;
            }
        }
    }
    (pooled, arg)
}

/// Order-invariant set pooling: element-wise maximum over frames.
pub fn set_pool(maps: &[FeatureMap]) -> Result<FeatureMap> {
    let first = maps
        .first()
        .ok_or_else(|| GaitError::param("set pooling over zero feature maps"))?;
    if maps
        .iter()
        .any(|m| m.bands != first.bands || m.channels != first.channels)
    {
        return Err(GaitError::param(
            "set pooling over feature maps of different shapes",
        ));
    }
    let slices: Vec<&[f64]> = maps.iter().map(|m| m.data.as_slice()).collect();
    let (data, _) = pool_with_argmax(&slices);
    Ok(FeatureMap {
        bands: first.bands,
        channels: first.channels,
        data,
    })
}

/// Strip means and the unnormalized concatenated strip outputs.
fn pyramid_forward(map: &FeatureMap, params: &EncoderParams) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let shape = params.shape();
    if map.bands != shape.bands || map.channels != shape.channels {
        return Err(GaitError::param(format!(
            "feature map is {}x{}, pyramid expects {}x{}",
            map.bands, map.channels, shape.bands, shape.channels
        )));
    }
    let finest = 1usize << (shape.scales - 1);
    if !map.bands.is_multiple_of(finest) {
        return Err(GaitError::param(format!(
            "{} bands cannot be split into {finest} strips",
            map.bands
        )));
    }
    let (c, q) = (shape.channels, shape.strip_dim());
    let lay = params.layout();
    let v = params.values();
    let mut means = Vec::with_capacity(shape.strips());
    let mut out = Vec::with_capacity(shape.dim);
    for ((start, count), &(w_off, b_off)) in shape.strip_bands().into_iter().zip(&lay.strips) {
        let mut mean = vec![0.0; c];
        for band in start..start + count {
            for (m, x) in mean.iter_mut().zip(map.band(band)) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        let w = &v[w_off..w_off + q * c];
        let b = &v[b_off..b_off + q];
        for r in 0..q {
            out.push(dot(&w[r * c..(r + 1) * c], &mean) + b[r]);
        }
        means.push(mean);
    }
    Ok((means, out))
}

/// Horizontal pyramid mapping of a pooled feature map into a unit-norm
/// embedding.
pub fn pyramid_map(map: &FeatureMap, params: &EncoderParams) -> Result<Embedding> {
    let (_, raw) = pyramid_forward(map, params)?;
    Embedding::from_raw(&raw)
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct SequenceTrace {
    frames: Vec<FrameActs>,
    argmax: Vec<usize>,
    means: Vec<Vec<f64>>,
    raw_norm: f64,
    embedding: Embedding,
}

impl SequenceTrace {
    pub fn embedding(&self) -> &Embedding {
        &self.embedding
    }

    pub fn into_embedding(self) -> Embedding {
        self.embedding
    }
}

pub fn trace_sequence(seq: &SilhouetteSequence, params: &EncoderParams) -> Result<SequenceTrace> {
    seq.validate()?;
    let frames = seq
        .frames
        .iter()
        .map(|f| frame_forward(f, params))
        .collect::<Result<Vec<_>>>()?;
    let slices: Vec<&[f64]> = frames.iter().map(|a| a.a2.as_slice()).collect();
    let (pooled, argmax) = pool_with_argmax(&slices);
    let map = FeatureMap {
        bands: params.shape().bands,
        channels: params.shape().channels,
        data: pooled,
    };
    let (means, raw) = pyramid_forward(&map, params)?;
    let raw_norm = norm(&raw);
    if raw_norm <= MIN_NORM {
        return Err(GaitError::Degenerate(format!(
            "sequence {} encodes to a zero vector",
            seq.id
        )));
    }
    let embedding = Embedding::from_raw(&raw)?;
    Ok(SequenceTrace {
        frames,
        argmax,
        means,
        raw_norm,
        embedding,
    })
}

/// `F(X) = pyramid_map(set_pool({encode_frame(x_k)}))`.
pub fn encode_sequence(seq: &SilhouetteSequence, params: &EncoderParams) -> Result<Embedding> {
    trace_sequence(seq, params).map(SequenceTrace::into_embedding)
}

/// Encodes many sequences in parallel; output order follows input order.
pub fn encode_batch(seqs: &[SilhouetteSequence], params: &EncoderParams) -> Result<Vec<Embedding>> {
    seqs.par_iter()
        .enumerate()
        .map(|(i, s)| {
            encode_sequence(s, params)
                .map(|e| e.with_sample(i))
                .map_err(|e| with_sample_id(e, &s.id))
        })
        .collect()
}

pub fn trace_batch<'a, I>(seqs: I, params: &EncoderParams) -> Result<Vec<SequenceTrace>>
where
    I: IntoParallelIterator<Item = &'a SilhouetteSequence>,
{
    seqs.into_par_iter()
        .map(|s| trace_sequence(s, params).map_err(|e| with_sample_id(e, &s.id)))
        .collect()
}

fn with_sample_id(err: GaitError, id: &str) -> GaitError {
    match err {
        GaitError::Degenerate(m) => GaitError::Degenerate(format!("{m} (sample {id})")),
        GaitError::Parameter(m) => GaitError::Parameter(format!("{m} (sample {id})")),
        other => other,
    }
}

/// Accumulates `d<grad, F(X)>/d theta` for one traced sequence into `out`.
///
/// `trace` must come from [`trace_sequence`] on the same `seq` and `params`.
pub fn backward_trace(
    seq: &SilhouetteSequence,
    trace: &SequenceTrace,
    grad: &[f64],
    params: &EncoderParams,
    out: &mut ParamGrads,
) -> Result<()> {
    let shape = params.shape();
    if grad.len() != shape.dim {
        return Err(GaitError::param(format!(
            "embedding gradient has dim {}, expected {}",
            grad.len(),
            shape.dim
        )));
    }
    if seq.frames.len() != trace.frames.len() {
        return Err(GaitError::param(format!(
            "trace of {} frames does not belong to sequence {}",
            trace.frames.len(),
            seq.id
        )));
    }
    if out.values.len() != params.len() {
        return Err(GaitError::param(
            "gradient buffer does not match parameters",
        ));
    }
    if grad.iter().all(|&g| g == 0.0) {
        return Ok(());
    }
    let (b, c, p, q) = (
        shape.bands,
        shape.channels,
        shape.band_pixels(),
        shape.strip_dim(),
    );
    let lay = params.layout();
    let v = params.values();
    let g = &mut out.values;

    // normalization: e = v / |v|
    let e = trace.embedding.as_slice();
    let eg = dot(e, grad);
    let draw: Vec<f64> = grad
        .iter()
        .zip(e)
        .map(|(gi, ei)| (gi - ei * eg) / trace.raw_norm)
        .collect();

    // pyramid strips
    let mut dpool = vec![0.0; b * c];
    for (t, ((start, count), &(w_off, b_off))) in
        shape.strip_bands().into_iter().zip(&lay.strips).enumerate()
    {
        let dout = &draw[t * q..(t + 1) * q];
        let mean = &trace.means[t];
        let mut dmean = vec![0.0; c];
        for r in 0..q {
            let d = dout[r];
            if d == 0.0 {
                continue;
            }
            g[b_off + r] += d;
            for ch in 0..c {
                g[w_off + r * c + ch] += d * mean[ch];
                dmean[ch] += d * v[w_off + r * c + ch];
            }
        }
        let share = 1.0 / count as f64;
        for band in start..start + count {
            for ch in 0..c {
                dpool[band * c + ch] += dmean[ch] * share;
            }
        }
    }

    // max pooling routes each cell to its winning frame
    let mut da2: Vec<Option<Vec<f64>>> = vec![None; trace.frames.len()];
    for (cell, &k) in trace.argmax.iter().enumerate() {
        if dpool[cell] != 0.0 {
            da2[k].get_or_insert_with(|| vec![0.0; b * c])[cell] += dpool[cell];
        }
    }

    // frame layers, fixed frame order
    for (k, d) in da2.iter().enumerate() {
        let Some(da2) = d else { continue };
        let acts = &trace.frames[k];
        let frame_pixels = seq.frames[k].pixels();
        for band in 0..b {
            let mut da1 = vec![0.0; c];
            for ch in 0..c {
                let cell = band * c + ch;
                if acts.z2[cell] <= 0.0 || da2[cell] == 0.0 {
                    continue;
                }
                let dz = da2[cell];
                g[lay.b2 + ch] += dz;
                for j in 0..c {
                    g[lay.w2 + ch * c + j] += dz * acts.a1[band * c + j];
                    da1[j] += dz * v[lay.w2 + ch * c + j];
                }
            }
            let x = &frame_pixels[band * p..(band + 1) * p];
            for ch in 0..c {
                let cell = band * c + ch;
                if acts.z1[cell] <= 0.0 || da1[ch] == 0.0 {
                    continue;
                }
                let dz = da1[ch];
                g[lay.b1 + ch] += dz;
                let row = &mut g[lay.w1 + ch * p..lay.w1 + (ch + 1) * p];
                for (gw, xi) in row.iter_mut().zip(x) {
                    if *xi != 0.0 {
                        *gw += dz * xi;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Gradient of `sum_i <grads_i, F(X_i)>` with respect to every parameter.
/// Forward activations are recomputed; accumulation runs in input order.
pub fn encode_backward(
    seqs: &[SilhouetteSequence],
    params: &EncoderParams,
    grad_embeddings: &[Vec<f64>],
) -> Result<ParamGrads> {
    if seqs.len() != grad_embeddings.len() {
        return Err(GaitError::param(format!(
            "{} sequences but {} embedding gradients",
            seqs.len(),
            grad_embeddings.len()
        )));
    }
    let traces = trace_batch(seqs, params)?;
    let mut out = ParamGrads::zeros_like(params);
    for ((seq, trace), grad) in seqs.iter().zip(&traces).zip(grad_embeddings) {
        backward_trace(seq, trace, grad, params, &mut out)?;
    }
    Ok(out)
}
