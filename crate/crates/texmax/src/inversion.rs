//! Maximal-image synthesis: minimize the summed per-tap softmax loss for a
//! target class plus a total-variation smoothness prior, by projected
//! gradient descent over the pixels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{backward_to_image, forward_taps, BackboneSpec};
use crate::descriptor::{descriptor_backward, descriptor_forward_with};
use crate::error::{Error, Result};
use crate::heads::{cross_entropy_from_logits, SoftmaxHead};
use crate::tensor::Tensor3;

/// Smoothing term inside the TV kernel so the β/2 power stays differentiable
/// at zero difference.
pub const EPS_TV: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform noise in [0.45, 0.55]; near-gray keeps relu units live.
    UniformNoise,
    MidGray,
}

#[derive(Debug, Clone)]
pub struct InversionConfig {
    /// TV weight γ.
    pub gamma: f64,
    /// TV exponent β ≥ 1.
    pub tv_beta: f64,
    /// Initial (and maximum) line-search step.
    pub step_size: f64,
    pub max_iters: usize,
    pub init: Init,
    pub seed: u64,
    /// Relative objective-decrease threshold over a 10-iteration window.
    pub ftol: f64,
    pub target_class: usize,
    /// Square canvas edge in pixels.
    pub size: usize,
    /// Mean-centered second-order pooling (matches the descriptor switch).
    pub center: bool,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            gamma: 0.01,
            tv_beta: 2.0,
            step_size: 1.0,
            max_iters: 500,
            init: Init::UniformNoise,
            seed: 0,
            ftol: 1e-6,
            target_class: 0,
            size: 64,
            center: false,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::config("gamma must be finite and nonnegative"));
        }
        if !self.tv_beta.is_finite() || self.tv_beta < 1.0 {
            return Err(Error::config("tv_beta must be >= 1"));
        }
        if !(self.step_size > 0.0) || self.max_iters == 0 || self.size == 0 {
            return Err(Error::config("step size, iterations and size must be positive"));
        }
        if !self.ftol.is_finite() || self.ftol < 0.0 {
            return Err(Error::config("ftol must be finite and nonnegative"));
        }
        if self.target_class >= num_classes {
            return Err(Error::config(format!(
                "target class {} out of range for {num_classes} classes",
                self.target_class
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub objective: f64,
    pub sum_loss: f64,
    pub tv_term: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct InversionTrace {
    pub records: Vec<TraceRecord>,
    /// Line search could not find a decreasing step; result is best-so-far.
    pub stalled: bool,
    /// Relative-decrease stop fired before max_iters.
    pub converged: bool,
}

impl InversionTrace {
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("iteration,objective,sum_loss,tv_term,step\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                r.iteration, r.objective, r.sum_loss, r.tv_term, r.step
            ));
        }
        s
    }
}

/// TV norm Γ(x) = Σ ((Δx)² + (Δy)² + ε)^{β/2} with forward differences and
/// zero boundary differences, plus its analytic gradient.
pub fn tv_norm(x: &Tensor3, beta: f64) -> Result<(f64, Tensor3)> {
    if !(beta >= 1.0) {
        return Err(Error::config("tv beta must be >= 1"));
    }
    let (h, w, ch) = x.shape();
    let idx = |r: usize, c: usize, k: usize| (r * w + c) * ch + k;
    let mut total = 0.0;
    let mut grad = Tensor3::zeros(h, w, ch);
    for r in 0..h {
        for c in 0..w {
            for k in 0..ch {
                let v = x.get(r, c, k);
                let dx = if c + 1 < w { x.get(r, c + 1, k) - v } else { 0.0 };
                let dy = if r + 1 < h { x.get(r + 1, c, k) - v } else { 0.0 };
                let q = dx * dx + dy * dy + EPS_TV;
                total += q.powf(beta / 2.0);
                let slope = beta * q.powf(beta / 2.0 - 1.0);
                if c + 1 < w {
                    let g = slope * dx;
                    grad.values_mut()[idx(r, c + 1, k)] += g;
                    grad.values_mut()[idx(r, c, k)] -= g;
                }
                if r + 1 < h {
                    let g = slope * dy;
                    grad.values_mut()[idx(r + 1, c, k)] += g;
                    grad.values_mut()[idx(r, c, k)] -= g;
                }
            }
        }
    }
    Ok((total, grad))
}

fn per_tap_losses_and_grads(
    x: &Tensor3,
    head: &SoftmaxHead,
    backbone: &BackboneSpec,
    cfg: &InversionConfig,
    want_grad: bool,
) -> Result<(f64, Vec<f64>, Option<Tensor3>)> {
    let stack = forward_taps(x, backbone)?;
    let desc = descriptor_forward_with(&stack, cfg.center);
    if desc.taps.len() != head.taps.len() {
        return Err(Error::config("head tap count does not match backbone"));
    }
    let mut losses = Vec::with_capacity(head.taps.len());
    let mut desc_grads: Vec<Vec<f64>> = Vec::with_capacity(head.taps.len());
    for (tap_head, tap_desc) in head.taps.iter().zip(&desc.taps) {
        if tap_head.dim != tap_desc.vector.len() {
            return Err(Error::config("head dim does not match descriptor"));
        }
        let k = tap_head.bias.len();
        let mut logits = tap_head.bias.clone();
        for (c, z) in logits.iter_mut().enumerate() {
            *z += tap_head.weights[c * tap_head.dim..(c + 1) * tap_head.dim]
                .iter()
                .zip(&tap_desc.vector)
                .map(|(w, d)| w * d)
                .sum::<f64>();
        }
        let (loss, g_logits) = cross_entropy_from_logits(&logits, cfg.target_class)?;
        losses.push(loss);
        if want_grad {
            let mut g_desc = vec![0.0; tap_head.dim];
            for c in 0..k {
                let gc = g_logits[c];
                if gc == 0.0 {
                    continue;
                }
                let row = &tap_head.weights[c * tap_head.dim..(c + 1) * tap_head.dim];
                for (gd, &w) in g_desc.iter_mut().zip(row) {
                    *gd += gc * w;
                }
            }
            desc_grads.push(g_desc);
        }
    }
    let sum_loss = losses.iter().sum();
    if !want_grad {
        return Ok((sum_loss, losses, None));
    }
    let tap_grads = descriptor_backward(&stack, &desc, &desc_grads, cfg.center)?;
    let grad = backward_to_image(&stack, backbone, &tap_grads)?;
    Ok((sum_loss, losses, Some(grad)))
}

/// Full inversion objective Σᵢ L(Cᵢ, target) + γΓ(x) with its gradient and
/// the per-tap loss breakdown.
pub fn objective(
    x: &Tensor3,
    head: &SoftmaxHead,
    backbone: &BackboneSpec,
    cfg: &InversionConfig,
) -> Result<(f64, Tensor3, Vec<f64>)> {
    let (sum_loss, losses, grad) = per_tap_losses_and_grads(x, head, backbone, cfg, true)?;
    let mut grad = grad.expect("gradient requested");
    let (tv, tv_grad) = tv_norm(x, cfg.tv_beta)?;
    for (g, tg) in grad.values_mut().iter_mut().zip(tv_grad.values()) {
        *g += cfg.gamma * tg;
    }
    let total = sum_loss + cfg.gamma * tv;
    if !total.is_finite() {
        return Err(Error::numeric("non-finite inversion objective"));
    }
    grad.check_finite()?;
    Ok((total, grad, losses))
}

/// Objective value without the backward pass, for line-search trials.
fn objective_value(
    x: &Tensor3,
    head: &SoftmaxHead,
    backbone: &BackboneSpec,
    cfg: &InversionConfig,
) -> Result<(f64, f64, f64)> {
    let (sum_loss, _, _) = per_tap_losses_and_grads(x, head, backbone, cfg, false)?;
    let (tv, _) = tv_norm(x, cfg.tv_beta)?;
    Ok((sum_loss + cfg.gamma * tv, sum_loss, tv))
}

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 20;
const STALL_WINDOW: usize = 10;

pub fn initial_image(cfg: &InversionConfig, channels: usize) -> Tensor3 {
    match cfg.init {
        Init::MidGray => Tensor3::filled(cfg.size, cfg.size, channels, 0.5),
        Init::UniformNoise => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let n = cfg.size * cfg.size * channels;
            let vals = (0..n).map(|_| rng.gen_range(0.45..0.55)).collect();
            Tensor3::new(cfg.size, cfg.size, channels, vals).expect("finite by construction")
        }
    }
}

/// Projected gradient descent with Armijo backtracking; every accepted step
/// is clamped to [0,1] and decreases the objective.
pub fn synthesize_maximal_image(
    cfg: &InversionConfig,
    head: &SoftmaxHead,
    backbone: &BackboneSpec,
) -> Result<(Tensor3, InversionTrace)> {
    head.validate()?;
    cfg.validate(head.num_classes())?;
    let mut x = initial_image(cfg, backbone.input_channels);
    let mut records = Vec::with_capacity(cfg.max_iters + 1);
    let mut stalled = false;
    let mut converged = false;

    let (mut f, mut grad, _) = objective(&x, head, backbone, cfg)?;
    {
        let (_, sum_loss, tv) = objective_value(&x, head, backbone, cfg)?;
        records.push(TraceRecord {
            iteration: 0,
            objective: f,
            sum_loss,
            tv_term: cfg.gamma * tv,
            step: 0.0,
        });
    }

    let mut step = cfg.step_size;
    for iter in 1..=cfg.max_iters {
        let mut t = step;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let mut candidate = x.clone();
            for (v, g) in candidate.values_mut().iter_mut().zip(grad.values()) {
                *v = (*v - t * g).clamp(0.0, 1.0);
            }
            let mut directional = 0.0;
            for ((c, xv), g) in candidate.values().iter().zip(x.values()).zip(grad.values()) {
                directional += g * (c - xv);
            }
            let (f_new, sum_loss, tv) = objective_value(&candidate, head, backbone, cfg)?;
            if f_new <= f + ARMIJO_C * directional {
                accepted = Some((candidate, f_new, sum_loss, tv, t));
                break;
            }
            t *= 0.5;
        }
        let Some((candidate, f_new, sum_loss, tv, used)) = accepted else {
            stalled = true;
            break;
        };
        x = candidate;
        f = f_new;
        records.push(TraceRecord {
            iteration: iter,
            objective: f,
            sum_loss,
            tv_term: cfg.gamma * tv,
            step: used,
        });
        step = (used * 4.0).min(cfg.step_size);

        if records.len() > STALL_WINDOW {
            let prev = records[records.len() - 1 - STALL_WINDOW].objective;
            let rel = (prev - f) / prev.abs().max(1e-12);
            if rel < cfg.ftol {
                converged = true;
                break;
            }
        }
        if iter < cfg.max_iters {
            let (_, g, _) = objective(&x, head, backbone, cfg)?;
            grad = g;
        }
    }

    x.clamp(0.0, 1.0);
    Ok((
        x,
        InversionTrace {
            records,
            stalled,
            converged,
        },
    ))
}

/// Ratio of horizontal-direction to vertical-direction squared-difference
/// energy of the channel-mean image. Vertical stripes (variation along x)
/// score far above 1, horizontal stripes far below.
pub fn oriented_energy_ratio(x: &Tensor3) -> f64 {
    let (h, w, ch) = x.shape();
    let gray = |r: usize, c: usize| -> f64 {
        (0..ch).map(|k| x.get(r, c, k)).sum::<f64>() / ch as f64
    };
    let mut across_cols = 0.0; // differences between horizontally adjacent pixels
    let mut across_rows = 0.0;
    for r in 0..h {
        for c in 0..w {
            let v = gray(r, c);
            if c + 1 < w {
                let d = gray(r, c + 1) - v;
                across_cols += d * d;
            }
            if r + 1 < h {
                let d = gray(r + 1, c) - v;
                across_rows += d * d;
            }
        }
    }
    across_cols / (across_rows + 1e-12)
}
