//! TXBB backbone weight file.
//!
//! Layout, all integers little-endian:
//!   magic "TXBB" | version u32 | layer_count u32
//!   per layer: type u8 (0=conv, 1=pool)
//!     conv: in,out,kh,kw,stride,pad u32 | activation u8 (0=linear,1=relu)
//!           | f32 weights (out-major) | f32 bias
//!   tap_count u32 | tap indices u32
//!   per input channel: f32 mean | f32 scale
//!
//! Weights are stored as f32; a save/load round trip is bitwise stable on
//! the serialized values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Activation, ConvLayerSpec};

use super::{BackboneSpec, Layer};

const MAGIC: &[u8; 4] = b"TXBB";
const VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(
                self.pos,
                format!("file truncated while reading {what}"),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32_vec(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let b = self.take(4 * n, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }
}

pub fn backbone_to_bytes(spec: &BackboneSpec) -> Result<Vec<u8>> {
    spec.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.layers.len() as u32).to_le_bytes());
    for layer in &spec.layers {
        match layer {
            Layer::Pool => out.push(1u8),
            Layer::Conv(c) => {
                out.push(0u8);
                for v in [c.in_channels, c.out_channels, c.kernel_h, c.kernel_w, c.stride, c.padding]
                {
                    out.extend_from_slice(&(v as u32).to_le_bytes());
                }
                out.push(match c.activation {
                    Activation::Linear => 0u8,
                    Activation::Relu => 1u8,
                });
                for &w in &c.weights {
                    out.extend_from_slice(&(w as f32).to_le_bytes());
                }
                for &b in &c.bias {
                    out.extend_from_slice(&(b as f32).to_le_bytes());
                }
            }
        }
    }
    out.extend_from_slice(&(spec.taps.len() as u32).to_le_bytes());
    for &t in &spec.taps {
        out.extend_from_slice(&(t as u32).to_le_bytes());
    }
    for ch in 0..spec.input_channels {
        out.extend_from_slice(&(spec.norm_mean[ch] as f32).to_le_bytes());
        out.extend_from_slice(&(spec.norm_scale[ch] as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn backbone_from_bytes(buf: &[u8]) -> Result<BackboneSpec> {
    let mut r = Reader::new(buf);
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected \"TXBB\"")));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let layer_count = r.u32("layer count")? as usize;
    if layer_count > 10_000 {
        return Err(Error::format(8, format!("implausible layer count {layer_count}")));
    }
    let mut layers = Vec::with_capacity(layer_count);
    for li in 0..layer_count {
        let kind = r.u8(&format!("layer {li} type"))?;
        match kind {
            1 => layers.push(Layer::Pool),
            0 => {
                let ctx = format!("layer {li} header");
                let in_channels = r.u32(&ctx)? as usize;
                let out_channels = r.u32(&ctx)? as usize;
                let kernel_h = r.u32(&ctx)? as usize;
                let kernel_w = r.u32(&ctx)? as usize;
                let stride = r.u32(&ctx)? as usize;
                let padding = r.u32(&ctx)? as usize;
                let activation = match r.u8(&ctx)? {
                    0 => Activation::Linear,
                    1 => Activation::Relu,
                    other => {
                        return Err(Error::format(
                            r.pos - 1,
                            format!("layer {li}: unknown activation code {other}"),
                        ))
                    }
                };
                let n_weights = out_channels
                    .checked_mul(in_channels)
                    .and_then(|v| v.checked_mul(kernel_h))
                    .and_then(|v| v.checked_mul(kernel_w))
                    .ok_or_else(|| Error::format(r.pos, format!("layer {li}: weight count overflow")))?;
                let weights = r.f32_vec(n_weights, &format!("layer {li} weights"))?;
                let bias = r.f32_vec(out_channels, &format!("layer {li} bias"))?;
                layers.push(Layer::Conv(ConvLayerSpec {
                    in_channels,
                    out_channels,
                    kernel_h,
                    kernel_w,
                    stride,
                    padding,
                    weights,
                    bias,
                    activation,
                }));
            }
            other => {
                return Err(Error::format(
                    r.pos - 1,
                    format!("layer {li}: unknown layer type {other}"),
                ))
            }
        }
    }
    let tap_count = r.u32("tap count")? as usize;
    let mut taps = Vec::with_capacity(tap_count);
    for i in 0..tap_count {
        taps.push(r.u32(&format!("tap index {i}"))? as usize);
    }
    let input_channels = match layers.first() {
        Some(Layer::Conv(c)) => c.in_channels,
        _ => return Err(Error::format(12, "first layer must be a conv layer".to_string())),
    };
    let mut norm_mean = Vec::with_capacity(input_channels);
    let mut norm_scale = Vec::with_capacity(input_channels);
    for ch in 0..input_channels {
        norm_mean.push(r.f32(&format!("channel {ch} mean"))? as f64);
        norm_scale.push(r.f32(&format!("channel {ch} scale"))? as f64);
    }
    if r.pos != buf.len() {
        return Err(Error::format(
            r.pos,
            format!("{} trailing bytes after backbone payload", buf.len() - r.pos),
        ));
    }
    let spec = BackboneSpec {
        layers,
        taps,
        input_channels,
        norm_mean,
        norm_scale,
    };
    spec.validate()
        .map_err(|e| Error::format(r.pos, format!("decoded backbone invalid: {e}")))?;
    Ok(spec)
}

pub fn save_backbone(spec: &BackboneSpec, path: &Path) -> Result<()> {
    let bytes = backbone_to_bytes(spec)?;
    crate::data::write_atomic(path, &bytes)
}

pub fn load_backbone(path: &Path) -> Result<BackboneSpec> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    backbone_from_bytes(&bytes)
}
