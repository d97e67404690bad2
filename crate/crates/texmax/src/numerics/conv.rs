use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Linear,
    Relu,
}

/// One convolution layer: cross-correlation with zero padding, optional relu.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    /// Row-major [out_channels][in_channels][kernel_h][kernel_w].
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl ConvLayerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.stride == 0 {
            return Err(Error::config("conv dims and stride must be positive"));
        }
        if self.kernel_h % 2 == 0 || self.kernel_w % 2 == 0 || self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::config(format!(
                "kernel dims must be positive odd, got {}x{}",
                self.kernel_h, self.kernel_w
            )));
        }
        let want = self.out_channels * self.in_channels * self.kernel_h * self.kernel_w;
        if self.weights.len() != want {
            return Err(Error::config(format!(
                "weight count {} does not match {} expected",
                self.weights.len(),
                want
            )));
        }
        if self.bias.len() != self.out_channels {
            return Err(Error::config("bias length does not match out_channels"));
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite conv weight or bias"));
        }
        Ok(())
    }

    pub fn output_dims(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        let span_h = in_h + 2 * self.padding;
        let span_w = in_w + 2 * self.padding;
        if span_h < self.kernel_h || span_w < self.kernel_w {
            return Err(Error::config(format!(
                "input {in_h}x{in_w} too small for kernel {}x{} with padding {}",
                self.kernel_h, self.kernel_w, self.padding
            )));
        }
        Ok((
            (span_h - self.kernel_h) / self.stride + 1,
            (span_w - self.kernel_w) / self.stride + 1,
        ))
    }

    #[inline]
    fn weight(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((oc * self.in_channels + ic) * self.kernel_h + ky) * self.kernel_w + kx]
    }
}

/// Forward pass returning both the activated output and the pre-activation
/// map (needed by the relu gate on the backward pass).
pub fn conv2d_forward_cached(input: &Tensor3, layer: &ConvLayerSpec) -> Result<(Tensor3, Tensor3)> {
    layer.validate()?;
    input.check_finite()?;
    if input.channels() != layer.in_channels {
        return Err(Error::config(format!(
            "input has {} channels, layer expects {}",
            input.channels(),
            layer.in_channels
        )));
    }
    let (out_h, out_w) = layer.output_dims(input.height(), input.width())?;
    let mut preact = Tensor3::zeros(out_h, out_w, layer.out_channels);

    let in_h = input.height() as isize;
    let in_w = input.width() as isize;
    let pad = layer.padding as isize;
    let oc_n = layer.out_channels;
    // rows of the output are independent, so this parallelizes without
    // changing any per-element accumulation order (bit-reproducible)
    preact
        .values_mut()
        .par_chunks_mut(out_w * oc_n)
        .enumerate()
        .for_each(|(oy, out_row)| {
            for ox in 0..out_w {
                let base_y = (oy * layer.stride) as isize - pad;
                let base_x = (ox * layer.stride) as isize - pad;
                for oc in 0..oc_n {
                    let mut acc = layer.bias[oc];
                    for ky in 0..layer.kernel_h {
                        let iy = base_y + ky as isize;
                        if iy < 0 || iy >= in_h {
                            continue;
                        }
                        for kx in 0..layer.kernel_w {
                            let ix = base_x + kx as isize;
                            if ix < 0 || ix >= in_w {
                                continue;
                            }
                            let in_base = input.idx(iy as usize, ix as usize, 0);
                            let vals = &input.values()[in_base..in_base + layer.in_channels];
                            for (ic, v) in vals.iter().enumerate() {
                                acc += layer.weight(oc, ic, ky, kx) * v;
                            }
                        }
                    }
                    out_row[ox * oc_n + oc] = acc;
                }
            }
        });

    let output = match layer.activation {
        Activation::Linear => preact.clone(),
        Activation::Relu => {
            let mut out = preact.clone();
            for v in out.values_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            out
        }
    };
    Ok((output, preact))
}

pub fn conv2d_forward(input: &Tensor3, layer: &ConvLayerSpec) -> Result<Tensor3> {
    conv2d_forward_cached(input, layer).map(|(out, _)| out)
}

/// Gradient of `sum(grad_output ⊙ output)` w.r.t. the layer input, using a
/// cached pre-activation map. Relu subgradient at exactly 0 is 0.
pub fn conv2d_backward_from_preact(
    layer: &ConvLayerSpec,
    preact: &Tensor3,
    grad_output: &Tensor3,
    in_h: usize,
    in_w: usize,
) -> Result<Tensor3> {
    if !grad_output.same_shape(preact) {
        return Err(Error::config(format!(
            "grad_output shape {:?} does not match forward output {:?}",
            grad_output.shape(),
            preact.shape()
        )));
    }
    let mut grad_input = Tensor3::zeros(in_h, in_w, layer.in_channels);
    let pad = layer.padding as isize;
    let stride = layer.stride as isize;
    let kh = layer.kernel_h as isize;
    let out_h = preact.height() as isize;
    let out_w = preact.width();
    let in_ch = layer.in_channels;
    // each thread owns one input row; for a given (iy, oy) pair exactly one
    // kernel row ky = iy + pad - oy*stride contributes
    grad_input
        .values_mut()
        .par_chunks_mut(in_w * in_ch)
        .enumerate()
        .for_each(|(iy, grad_row)| {
            let iy = iy as isize;
            let lo = (iy + pad - kh + 1 + stride - 1).div_euclid(stride).max(0);
            let hi = (iy + pad).div_euclid(stride).min(out_h - 1);
            for oy in lo..=hi {
                let ky = (iy + pad - oy * stride) as usize;
                for ox in 0..out_w {
                    let base_x = (ox as isize * stride) - pad;
                    for oc in 0..layer.out_channels {
                        let mut g = grad_output.get(oy as usize, ox, oc);
                        if layer.activation == Activation::Relu
                            && preact.get(oy as usize, ox, oc) <= 0.0
                        {
                            g = 0.0;
                        }
                        if g == 0.0 {
                            continue;
                        }
                        for kx in 0..layer.kernel_w {
                            let ix = base_x + kx as isize;
                            if ix < 0 || ix >= in_w as isize {
                                continue;
                            }
                            let gi_base = ix as usize * in_ch;
                            for ic in 0..in_ch {
                                grad_row[gi_base + ic] += g * layer.weight(oc, ic, ky, kx);
                            }
                        }
                    }
                }
            }
        });
    Ok(grad_input)
}

pub fn conv2d_backward(
    input: &Tensor3,
    layer: &ConvLayerSpec,
    grad_output: &Tensor3,
) -> Result<Tensor3> {
    let (_, preact) = conv2d_forward_cached(input, layer)?;
    conv2d_backward_from_preact(layer, &preact, grad_output, input.height(), input.width())
}
