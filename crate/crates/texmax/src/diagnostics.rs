//! Gradient-integrity suite: central-difference checks for every op with a
//! hand-derived backward, runnable from the CLI and the acceptance tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{make_filter_bank, FilterBankKind, FilterBankShape};
use crate::descriptor::{descriptor_backward_taps, descriptor_forward_taps};
use crate::error::Result;
use crate::heads::{SoftmaxHead, TapHead};
use crate::inversion::{objective, tv_norm, InversionConfig};
use crate::numerics::{conv2d_backward, conv2d_forward, gradcheck, maxpool2_backward, maxpool2_forward, Activation, ConvLayerSpec};
use crate::tensor::Tensor3;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRADCHECK_TOLERANCE
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize, lo: f64, hi: f64) -> Tensor3 {
    Tensor3::new(h, w, c, (0..h * w * c).map(|_| rng.gen_range(lo..hi)).collect())
        .expect("finite by construction")
}

fn check_conv(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = ConvLayerSpec {
        in_channels: 2,
        out_channels: 3,
        kernel_h: 3,
        kernel_w: 3,
        stride: 1,
        padding: 1,
        weights: (0..3 * 2 * 9).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        bias: (0..3).map(|_| rng.gen_range(-0.2..0.2)).collect(),
        activation: Activation::Relu,
    };
    let x = rand_tensor(&mut rng, 4, 4, 2, -1.0, 1.0);
    let cot = rand_tensor(&mut rng, 4, 4, 3, -1.0, 1.0);
    let analytic = conv2d_backward(&x, &layer, &cot)?;
    gradcheck(
        |t| Ok(conv2d_forward(t, &layer)?.dot(&cot)),
        &x,
        &analytic,
        STEP,
        seed,
    )
}

fn check_pool(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x706f6f6c);
    let x = rand_tensor(&mut rng, 8, 8, 2, -1.0, 1.0);
    let cot = rand_tensor(&mut rng, 4, 4, 2, -1.0, 1.0);
    let (_, rec) = maxpool2_forward(&x)?;
    let analytic = maxpool2_backward(&rec, &cot)?;
    gradcheck(
        |t| {
            let (y, _) = maxpool2_forward(t)?;
            Ok(y.dot(&cot))
        },
        &x,
        &analytic,
        STEP,
        seed,
    )
}

fn check_descriptor(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x64657363);
    // values bounded away from zero keep pooled entries off the sqrt kink
    let feat = rand_tensor(&mut rng, 4, 4, 4, 0.3, 1.0);
    let g: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let taps = vec![feat.clone()];
    let desc = descriptor_forward_taps(&taps, false);
    let analytic = descriptor_backward_taps(&taps, &desc, std::slice::from_ref(&g), false)?;
    gradcheck(
        |t| {
            let d = descriptor_forward_taps(std::slice::from_ref(t), false);
            Ok(d.taps[0].vector.iter().zip(&g).map(|(a, b)| a * b).sum())
        },
        &feat,
        &analytic[0],
        STEP,
        seed,
    )
}

fn check_tv(seed: u64, beta: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7476);
    let x = rand_tensor(&mut rng, 8, 8, 3, 0.0, 1.0);
    let (_, analytic) = tv_norm(&x, beta)?;
    gradcheck(|t| Ok(tv_norm(t, beta)?.0), &x, &analytic, STEP, seed)
}

fn check_cross_entropy(seed: u64) -> Result<f64> {
    use crate::heads::cross_entropy_from_logits;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6365);
    // a 1x1xK tensor so the generic checker applies to the logit vector
    let logits = rand_tensor(&mut rng, 1, 1, 6, -2.0, 2.0);
    let target = rng.gen_range(0..6);
    let (_, g) = cross_entropy_from_logits(logits.values(), target)?;
    let analytic = Tensor3::new(1, 1, 6, g)?;
    gradcheck(
        |t| Ok(cross_entropy_from_logits(t.values(), target)?.0),
        &logits,
        &analytic,
        STEP,
        seed,
    )
}

fn check_objective(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6f626a);
    let backbone = make_filter_bank(
        FilterBankKind::RandomOrthogonal,
        &FilterBankShape::default(),
        seed,
    )?;
    let tap_channels = backbone.tap_channels();
    let k = 4;
    let taps: Vec<TapHead> = tap_channels
        .iter()
        .map(|&d| {
            let dim = d * d;
            TapHead {
                dim,
                weights: (0..k * dim).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                bias: (0..k).map(|_| rng.gen_range(-0.1..0.1)).collect(),
            }
        })
        .collect();
    let head = SoftmaxHead {
        class_names: (0..k).map(|i| format!("class{i}")).collect(),
        taps,
    };
    let cfg = InversionConfig {
        size: 16,
        seed,
        target_class: seed as usize % k,
        ..InversionConfig::default()
    };
    // full-range random pixels keep relu preactivations away from their kinks
    let x = rand_tensor(&mut rng, 16, 16, 3, 0.0, 1.0);
    let (_, analytic, _) = objective(&x, &head, &backbone, &cfg)?;
    gradcheck(
        |t| objective(t, &head, &backbone, &cfg).map(|(f, _, _)| f),
        &x,
        &analytic,
        STEP,
        seed,
    )
}

/// Runs every gradient check over `seeds` seeds and reports the worst
/// relative error per op.
pub fn run_gradcheck_suite(base_seed: u64, seeds: usize) -> Result<Vec<CheckResult>> {
    let checks: Vec<(&str, fn(u64) -> Result<f64>)> = vec![
        ("conv2d", check_conv),
        ("maxpool2", check_pool),
        ("descriptor_chain", check_descriptor),
        ("tv_norm_beta_1.5", |s| check_tv(s, 1.5)),
        ("tv_norm_beta_2.0", |s| check_tv(s, 2.0)),
        ("cross_entropy", check_cross_entropy),
        ("inversion_objective", check_objective),
    ];
    let mut results = Vec::with_capacity(checks.len());
    for (name, f) in checks {
        let mut worst = 0.0f64;
        for s in 0..seeds as u64 {
            let err = f(base_seed.wrapping_add(s))?;
            if err > worst {
                worst = err;
            }
        }
        results.push(CheckResult {
            name: name.to_string(),
            max_rel_error: worst,
        });
    }
    Ok(results)
}
