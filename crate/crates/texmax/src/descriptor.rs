//! Second-order texture descriptors: per-tap outer-product pooling followed
//! by element-wise signed square root and l2 normalization, with the exact
//! VJP of the whole chain.

use crate::backbone::FeatureStack;
use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Derivative guard for the signed square root near zero.
pub const EPS_SIGNED_SQRT: f64 = 1e-4;
/// Below this norm a descriptor is treated as exactly zero.
pub const EPS_NORM: f64 = 1e-12;

/// One tap's descriptor together with the intermediates the backward pass
/// reuses.
#[derive(Debug, Clone)]
pub struct TapDescriptor {
    /// Channel count D; the vector has length D².
    pub dim: usize,
    /// l2-normalized signed-sqrt second-order statistic, or all zeros.
    pub vector: Vec<f64>,
    /// Set when the pooled statistic had (near-)zero norm.
    pub zero: bool,
    pooled: Vec<f64>,
    sqrt_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TextureDescriptor {
    pub taps: Vec<TapDescriptor>,
}

impl TextureDescriptor {
    /// Concatenation of all per-tap vectors, the input space of the phrase
    /// classifiers.
    pub fn concat(&self) -> Vec<f64> {
        self.taps.iter().flat_map(|t| t.vector.iter().copied()).collect()
    }

    pub fn concat_len(&self) -> usize {
        self.taps.iter().map(|t| t.vector.len()).sum()
    }
}

/// Uncentered second moment A = (1/N) Σₙ φₙφₙᵀ over spatial positions,
/// returned row-major D×D.
pub fn pool_second_order(feat: &Tensor3) -> Vec<f64> {
    pool_second_order_with(feat, false)
}

/// Second-order pooling with an optional mean-centering switch (true
/// covariance instead of the second moment).
pub fn pool_second_order_with(feat: &Tensor3, center: bool) -> Vec<f64> {
    let d = feat.channels();
    let n = feat.height() * feat.width();
    let mut mat = vec![0.0; d * d];
    let vals = feat.values();
    for pos in 0..n {
        let phi = &vals[pos * d..(pos + 1) * d];
        for i in 0..d {
            let pi = phi[i];
            if pi == 0.0 {
                continue;
            }
            let row = &mut mat[i * d..(i + 1) * d];
            for (r, &pj) in row.iter_mut().zip(phi) {
                *r += pi * pj;
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    for v in &mut mat {
        *v *= inv_n;
    }
    if center {
        let mut mean = vec![0.0; d];
        for pos in 0..n {
            for (m, &v) in mean.iter_mut().zip(&vals[pos * d..(pos + 1) * d]) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m *= inv_n;
        }
        for i in 0..d {
            for j in 0..d {
                mat[i * d + j] -= mean[i] * mean[j];
            }
        }
    }
    mat
}

/// Element-wise y = sign(v)·√|v|.
pub fn signed_sqrt(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.signum() * x.abs().sqrt()).collect()
}

/// l2 normalization; near-zero vectors come back as exact zeros with the
/// flag set instead of blowing up.
pub fn l2_normalize(v: &[f64]) -> (Vec<f64>, bool) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > EPS_NORM {
        (v.iter().map(|x| x / norm).collect(), false)
    } else {
        (vec![0.0; v.len()], true)
    }
}

fn tap_descriptor(feat: &Tensor3, center: bool) -> TapDescriptor {
    let pooled = pool_second_order_with(feat, center);
    let sqrt = signed_sqrt(&pooled);
    let norm = sqrt.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (vector, zero) = l2_normalize(&sqrt);
    TapDescriptor {
        dim: feat.channels(),
        vector,
        zero,
        pooled,
        sqrt_norm: norm,
    }
}

pub fn descriptor_forward(stack: &FeatureStack) -> TextureDescriptor {
    descriptor_forward_with(stack, false)
}

pub fn descriptor_forward_with(stack: &FeatureStack, center: bool) -> TextureDescriptor {
    descriptor_forward_taps(&stack.taps, center)
}

pub fn descriptor_forward_taps(taps: &[Tensor3], center: bool) -> TextureDescriptor {
    TextureDescriptor {
        taps: taps.iter().map(|t| tap_descriptor(t, center)).collect(),
    }
}

/// VJP of [`descriptor_forward`]: per-tap gradients w.r.t. the tap feature
/// maps, given cotangents on the descriptor vectors.
pub fn descriptor_backward(
    stack: &FeatureStack,
    desc: &TextureDescriptor,
    grad_desc: &[Vec<f64>],
    center: bool,
) -> Result<Vec<Tensor3>> {
    descriptor_backward_taps(&stack.taps, desc, grad_desc, center)
}

pub fn descriptor_backward_taps(
    taps: &[Tensor3],
    desc: &TextureDescriptor,
    grad_desc: &[Vec<f64>],
    center: bool,
) -> Result<Vec<Tensor3>> {
    if grad_desc.len() != desc.taps.len() || taps.len() != desc.taps.len() {
        return Err(Error::internal("descriptor cotangent count mismatch"));
    }
    let mut out = Vec::with_capacity(taps.len());
    for idx in 0..taps.len() {
        let (feat, tap, g_d) = (&taps[idx], &desc.taps[idx], &grad_desc[idx]);
        let d = tap.dim;
        if g_d.len() != d * d {
            return Err(Error::internal(format!(
                "descriptor cotangent length {} expected {}",
                g_d.len(),
                d * d
            )));
        }
        let (h, w, _) = feat.shape();
        if tap.zero {
            out.push(Tensor3::zeros(h, w, d));
            continue;
        }
        // through l2 normalization: g_s = (g - d̂⟨d̂,g⟩)/‖s‖
        let proj: f64 = tap.vector.iter().zip(g_d).map(|(a, b)| a * b).sum();
        let g_s: Vec<f64> = tap
            .vector
            .iter()
            .zip(g_d)
            .map(|(v, g)| (g - v * proj) / tap.sqrt_norm)
            .collect();
        // through signed sqrt with guarded slope
        let g_v: Vec<f64> = g_s
            .iter()
            .zip(&tap.pooled)
            .map(|(g, p)| g / (2.0 * p.abs().sqrt().max(EPS_SIGNED_SQRT)))
            .collect();
        // through pooling: g_φ = (1/N)(G + Gᵀ)(φ - center·μ)
        let n = h * w;
        let inv_n = 1.0 / n as f64;
        let mut sym = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                sym[i * d + j] = (g_v[i * d + j] + g_v[j * d + i]) * inv_n;
            }
        }
        let mut mean = vec![0.0; d];
        if center {
            for pos in 0..n {
                for (m, &v) in mean.iter_mut().zip(&feat.values()[pos * d..(pos + 1) * d]) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m *= inv_n;
            }
        }
        let mut g_feat = Tensor3::zeros(h, w, d);
        for pos in 0..n {
            let phi = &feat.values()[pos * d..(pos + 1) * d];
            let out_slice = &mut g_feat.values_mut()[pos * d..(pos + 1) * d];
            for i in 0..d {
                let row = &sym[i * d..(i + 1) * d];
                let mut acc = 0.0;
                for j in 0..d {
                    acc += row[j] * (phi[j] - mean[j]);
                }
                out_slice[i] = acc;
            }
        }
        out.push(g_feat);
    }
    Ok(out)
}
