use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use texmax::backbone::{make_filter_bank, FilterBankKind, FilterBankShape};
use texmax::descriptor::{descriptor_backward_taps, descriptor_forward_taps};
use texmax::heads::{SoftmaxHead, TapHead};
use texmax::inversion::{objective, tv_norm, InversionConfig};
use texmax::numerics::{conv2d_backward, conv2d_forward, Activation, ConvLayerSpec};
use texmax::Tensor3;

fn rand_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Tensor3 {
    Tensor3::new(h, w, c, (0..h * w * c).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

fn conv_layer(rng: &mut ChaCha8Rng, ic: usize, oc: usize) -> ConvLayerSpec {
    ConvLayerSpec {
        in_channels: ic,
        out_channels: oc,
        kernel_h: 3,
        kernel_w: 3,
        stride: 1,
        padding: 1,
        weights: (0..oc * ic * 9).map(|_| rng.gen_range(-0.3..0.3)).collect(),
        bias: vec![0.0; oc],
        activation: Activation::Relu,
    }
}

fn bench_conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let layer = conv_layer(&mut rng, 8, 16);
    let x = rand_tensor(&mut rng, 64, 64, 8);
    let cot = rand_tensor(&mut rng, 64, 64, 16);
    c.bench_function("conv2d_forward_64x64_8to16", |b| {
        b.iter(|| conv2d_forward(&x, &layer).unwrap())
    });
    c.bench_function("conv2d_backward_64x64_8to16", |b| {
        b.iter(|| conv2d_backward(&x, &layer, &cot).unwrap())
    });
}

fn bench_descriptor(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let feat = rand_tensor(&mut rng, 16, 16, 32);
    let taps = vec![feat];
    let desc = descriptor_forward_taps(&taps, false);
    let g: Vec<f64> = (0..32 * 32).map(|_| rng.gen_range(-1.0..1.0)).collect();
    c.bench_function("descriptor_forward_16x16x32", |b| {
        b.iter(|| descriptor_forward_taps(&taps, false))
    });
    c.bench_function("descriptor_backward_16x16x32", |b| {
        b.iter(|| descriptor_backward_taps(&taps, &desc, std::slice::from_ref(&g), false).unwrap())
    });
}

fn bench_tv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, 64, 64, 3);
    c.bench_function("tv_norm_64x64", |b| b.iter(|| tv_norm(&x, 2.0).unwrap()));
}

fn bench_objective(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let backbone =
        make_filter_bank(FilterBankKind::RandomOrthogonal, &FilterBankShape::default(), 4).unwrap();
    let k = 4;
    let taps: Vec<TapHead> = backbone
        .tap_channels()
        .iter()
        .map(|&ch| {
            let dim = ch * ch;
            TapHead {
                dim,
                weights: (0..k * dim).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                bias: vec![0.0; k],
            }
        })
        .collect();
    let head = SoftmaxHead {
        class_names: (0..k).map(|i| format!("class{i}")).collect(),
        taps,
    };
    let cfg = InversionConfig { size: 64, ..InversionConfig::default() };
    let x = rand_tensor(&mut rng, 64, 64, 3);
    c.bench_function("inversion_objective_64x64", |b| {
        b.iter(|| objective(&x, &head, &backbone, &cfg).unwrap())
    });
}

criterion_group!(benches, bench_conv, bench_descriptor, bench_tv, bench_objective);
criterion_main!(benches);
