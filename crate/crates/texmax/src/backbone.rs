//! Layered feature extractor with designated tap layers.
//!
//! The backbone is a fixed (never trained) stack of conv and pool layers;
//! descriptors are read off at the tap layers and gradients from all taps
//! accumulate back through the shared trunk to the input image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::{
    conv2d_backward_from_preact, conv2d_forward_cached, maxpool2_backward, maxpool2_forward,
    Activation, ConvLayerSpec, PoolRecord,
};
use crate::tensor::Tensor3;

mod io;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvLayerSpec),
    Pool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneSpec {
    pub layers: Vec<Layer>,
    /// Indices into `layers`; each must name a relu conv layer.
    pub taps: Vec<usize>,
    pub input_channels: usize,
    /// Per-channel input normalization: (value - mean) / scale.
    pub norm_mean: Vec<f64>,
    pub norm_scale: Vec<f64>,
}

/// Per-tap activations plus the cached forward records needed to run the
/// backward pass without recomputing the trunk.
pub struct FeatureStack {
    pub taps: Vec<Tensor3>,
    records: Vec<LayerRecord>,
    input_shape: (usize, usize, usize),
}

enum LayerRecord {
    Conv { preact: Tensor3, in_h: usize, in_w: usize },
    Pool(PoolRecord),
}

impl BackboneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config("backbone has no layers"));
        }
        if self.taps.is_empty() {
            return Err(Error::config("backbone has no tap layers"));
        }
        if self.norm_mean.len() != self.input_channels || self.norm_scale.len() != self.input_channels
        {
            return Err(Error::config("normalization length does not match input channels"));
        }
        if self.norm_scale.iter().any(|&s| s == 0.0 || !s.is_finite()) {
            return Err(Error::config("normalization scale must be finite and nonzero"));
        }
        match self.layers.first() {
            Some(Layer::Conv(_)) => {}
            _ => return Err(Error::config("first backbone layer must be a conv layer")),
        }
        let mut ch = self.input_channels;
        for (i, layer) in self.layers.iter().enumerate() {
            if let Layer::Conv(c) = layer {
                c.validate()?;
                if c.in_channels != ch {
                    return Err(Error::config(format!(
                        "layer {i} expects {} input channels but receives {ch}",
                        c.in_channels
                    )));
                }
                ch = c.out_channels;
            }
        }
        for pair in self.taps.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::config("tap indices must be strictly increasing"));
            }
        }
        for &t in &self.taps {
            match self.layers.get(t) {
                Some(Layer::Conv(c)) if c.activation == Activation::Relu => {}
                Some(_) => {
                    return Err(Error::config(format!(
                        "tap {t} does not refer to a relu conv layer"
                    )))
                }
                None => return Err(Error::config(format!("tap index {t} out of range"))),
            }
        }
        Ok(())
    }

    /// Channel count at each tap, in tap order.
    pub fn tap_channels(&self) -> Vec<usize> {
        self.taps
            .iter()
            .map(|&t| match &self.layers[t] {
                Layer::Conv(c) => c.out_channels,
                Layer::Pool => unreachable!("taps are validated to be conv layers"),
            })
            .collect()
    }
}

pub fn forward_taps(image: &Tensor3, spec: &BackboneSpec) -> Result<FeatureStack> {
    spec.validate()?;
    if image.channels() != spec.input_channels {
        return Err(Error::config(format!(
            "image has {} channels, backbone expects {}",
            image.channels(),
            spec.input_channels
        )));
    }
    let mut x = image.clone();
    for r in 0..x.height() {
        for c in 0..x.width() {
            for ch in 0..x.channels() {
                let v = (x.get(r, c, ch) - spec.norm_mean[ch]) / spec.norm_scale[ch];
                x.set(r, c, ch, v);
            }
        }
    }

    let mut records = Vec::with_capacity(spec.layers.len());
    let mut taps = Vec::with_capacity(spec.taps.len());
    for (i, layer) in spec.layers.iter().enumerate() {
        match layer {
            Layer::Conv(c) => {
                let (in_h, in_w) = (x.height(), x.width());
                let (out, preact) = conv2d_forward_cached(&x, c)?;
                records.push(LayerRecord::Conv { preact, in_h, in_w });
                x = out;
            }
            Layer::Pool => {
                let (out, rec) = maxpool2_forward(&x)?;
                records.push(LayerRecord::Pool(rec));
                x = out;
            }
        }
        if spec.taps.contains(&i) {
            taps.push(x.clone());
        }
    }
    Ok(FeatureStack {
        taps,
        records,
        input_shape: image.shape(),
    })
}

/// Accumulates cotangents injected at every tap back to the input image.
pub fn backward_to_image(
    stack: &FeatureStack,
    spec: &BackboneSpec,
    tap_grads: &[Tensor3],
) -> Result<Tensor3> {
    if tap_grads.len() != spec.taps.len() {
        return Err(Error::config(format!(
            "{} tap gradients supplied for {} taps",
            tap_grads.len(),
            spec.taps.len()
        )));
    }
    for (g, t) in tap_grads.iter().zip(&stack.taps) {
        if !g.same_shape(t) {
            return Err(Error::config(format!(
                "tap gradient shape {:?} does not match activation {:?}",
                g.shape(),
                t.shape()
            )));
        }
    }
    let last_tap = *spec.taps.last().expect("validated non-empty");

    let mut carried: Option<Tensor3> = None;
    for li in (0..=last_tap).rev() {
        if let Some(pos) = spec.taps.iter().position(|&t| t == li) {
            match &mut carried {
                Some(g) => g.add_assign(&tap_grads[pos])?,
                None => carried = Some(tap_grads[pos].clone()),
            }
        }
        let g = carried.take().expect("cotangent present at or below last tap");
        let g_in = match (&stack.records[li], &spec.layers[li]) {
            (LayerRecord::Conv { preact, in_h, in_w }, Layer::Conv(c)) => {
                conv2d_backward_from_preact(c, preact, &g, *in_h, *in_w)?
            }
            (LayerRecord::Pool(rec), Layer::Pool) => maxpool2_backward(rec, &g)?,
            _ => return Err(Error::internal("forward record does not match layer kind")),
        };
        carried = Some(g_in);
    }

    let mut grad = carried.expect("at least one layer traversed");
    if grad.shape() != stack.input_shape {
        return Err(Error::internal("input gradient shape mismatch"));
    }
    // Chain through the input normalization.
    for r in 0..grad.height() {
        for c in 0..grad.width() {
            for ch in 0..grad.channels() {
                let v = grad.get(r, c, ch) / spec.norm_scale[ch];
                grad.set(r, c, ch, v);
            }
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterBankKind {
    Gabor,
    RandomOrthogonal,
}

/// Structural shape of a generated backbone: blocks of conv layers with a
/// 2x2 pool between blocks and a tap after each block's last layer.
#[derive(Debug, Clone)]
pub struct FilterBankShape {
    pub input_channels: usize,
    /// Output channel count per block.
    pub block_channels: Vec<usize>,
    pub layers_per_block: usize,
}

impl Default for FilterBankShape {
    fn default() -> Self {
        FilterBankShape {
            input_channels: 3,
            block_channels: vec![8, 16, 16, 32],
            layers_per_block: 2,
        }
    }
}

pub fn make_filter_bank(kind: FilterBankKind, shape: &FilterBankShape, seed: u64) -> Result<BackboneSpec> {
    if shape.block_channels.is_empty() || shape.layers_per_block == 0 || shape.input_channels == 0 {
        return Err(Error::config("filter bank shape must be non-empty"));
    }
    let (kernel, padding) = match kind {
        FilterBankKind::Gabor => (5usize, 2usize),
        FilterBankKind::RandomOrthogonal => (3usize, 1usize),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut taps = Vec::new();
    let mut in_ch = shape.input_channels;
    for (bi, &out_ch) in shape.block_channels.iter().enumerate() {
        if bi > 0 {
            layers.push(Layer::Pool);
        }
        for _ in 0..shape.layers_per_block {
            let weights = match kind {
                FilterBankKind::Gabor => gabor_weights(in_ch, out_ch, kernel),
                FilterBankKind::RandomOrthogonal => {
                    orthogonal_weights(in_ch, out_ch, kernel, &mut rng)?
                }
            };
            layers.push(Layer::Conv(ConvLayerSpec {
                in_channels: in_ch,
                out_channels: out_ch,
                kernel_h: kernel,
                kernel_w: kernel,
                stride: 1,
                padding,
                weights,
                bias: vec![0.0; out_ch],
                activation: Activation::Relu,
            }));
            in_ch = out_ch;
        }
        taps.push(layers.len() - 1);
    }

    let mut spec = BackboneSpec {
        layers,
        taps,
        input_channels: shape.input_channels,
        norm_mean: vec![0.5; shape.input_channels],
        norm_scale: vec![0.5; shape.input_channels],
    };
    spec.validate()?;
    calibrate_gains(&mut spec, kind, seed)?;
    Ok(spec)
}

/// Oriented Gabor kernels: 8 orientations crossed with as many scales as the
/// channel count requires. Each kernel is mean-subtracted (DC-free) and unit
/// L2 norm; the per-in-channel weight averages over input channels.
fn gabor_weights(in_ch: usize, out_ch: usize, kernel: usize) -> Vec<f64> {
    let n_orient = 8usize;
    let half = (kernel / 2) as f64;
    let mut weights = vec![0.0; out_ch * in_ch * kernel * kernel];
    for oc in 0..out_ch {
        let orient = oc % n_orient;
        let scale_idx = oc / n_orient;
        let theta = orient as f64 * std::f64::consts::PI / n_orient as f64;
        let wavelength = 2.5 + 1.5 * scale_idx as f64;
        let sigma = 0.56 * wavelength;
        // Alternate even/odd phase across scale rows for quadrature coverage.
        let psi = if scale_idx % 2 == 0 { 0.0 } else { std::f64::consts::FRAC_PI_2 };
        let gamma = 0.5;

        let mut kern = vec![0.0; kernel * kernel];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let y = ky as f64 - half;
                let x = kx as f64 - half;
                let xr = x * theta.cos() + y * theta.sin();
                let yr = -x * theta.sin() + y * theta.cos();
                let envelope = (-(xr * xr + gamma * gamma * yr * yr) / (2.0 * sigma * sigma)).exp();
                let carrier = (2.0 * std::f64::consts::PI * xr / wavelength + psi).cos();
                kern[ky * kernel + kx] = envelope * carrier;
            }
        }
        let mean = kern.iter().sum::<f64>() / kern.len() as f64;
        for v in &mut kern {
            *v -= mean;
        }
        let norm = kern.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in &mut kern {
            *v /= norm;
        }
        for ic in 0..in_ch {
            for k in 0..kernel * kernel {
                weights[(oc * in_ch + ic) * kernel * kernel + k] = kern[k] / in_ch as f64;
            }
        }
    }
    weights
}

/// Gaussian rows orthonormalized by Gram-Schmidt over the flattened kernel.
fn orthogonal_weights(
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let cols = in_ch * kernel * kernel;
    if out_ch > cols {
        return Err(Error::config(format!(
            "cannot orthonormalize {out_ch} rows of length {cols}"
        )));
    }
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(out_ch);
    while rows.len() < out_ch {
        let mut row: Vec<f64> = (0..cols).map(|_| rng.sample(StandardNormal)).collect();
        for prev in &rows {
            let dot: f64 = row.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (r, p) in row.iter_mut().zip(prev) {
                *r -= dot * p;
            }
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue; // degenerate draw, redraw
        }
        for r in &mut row {
            *r /= norm;
        }
        rows.push(row);
    }
    Ok(rows.into_iter().flatten().collect())
}

/// Rescales each conv layer so post-relu activation RMS is 1 on a probe
/// input, keeping signal magnitude roughly constant with depth. Random
/// orthogonal banks probe with a constant-1 image; Gabor banks are DC-free
/// so they probe with seeded noise.
fn calibrate_gains(spec: &mut BackboneSpec, kind: FilterBankKind, seed: u64) -> Result<()> {
    let probe_size = 32usize;
    let mut x = match kind {
        FilterBankKind::RandomOrthogonal => Tensor3::filled(probe_size, probe_size, spec.input_channels, 1.0),
        FilterBankKind::Gabor => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
            let n = probe_size * probe_size * spec.input_channels;
            Tensor3::new(
                probe_size,
                probe_size,
                spec.input_channels,
                (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
            )?
        }
    };
    for r in 0..x.height() {
        for c in 0..x.width() {
            for ch in 0..x.channels() {
                let v = (x.get(r, c, ch) - spec.norm_mean[ch]) / spec.norm_scale[ch];
                x.set(r, c, ch, v);
            }
        }
    }
    for layer in &mut spec.layers {
        match layer {
            Layer::Pool => {
                let (out, _) = maxpool2_forward(&x)?;
                x = out;
            }
            Layer::Conv(c) => {
                let (out, _) = conv2d_forward_cached(&x, c)?;
                let rms =
                    (out.values().iter().map(|v| v * v).sum::<f64>() / out.len() as f64).sqrt();
                if rms < 1e-9 {
                    return Err(Error::numeric(
                        "filter bank calibration probe produced a dead layer",
                    ));
                }
                let gain = 1.0 / rms;
                for w in &mut c.weights {
                    *w *= gain;
                }
                // bias is zero, relu is positively homogeneous
                let mut scaled = out;
                scaled.scale(gain);
                x = scaled;
            }
        }
    }
    Ok(())
}

pub use io::{load_backbone, save_backbone};
