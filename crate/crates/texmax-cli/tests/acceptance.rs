//! End-to-end acceptance gate. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion does. Run with `--nocapture` to watch.
//!
//! Expensive artifacts (synthetic dataset, trained heads, maximal images)
//! are built once and shared across criteria.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use texmax::backbone::{forward_taps, make_filter_bank, BackboneSpec, FilterBankKind, FilterBankShape};
use texmax::cloud::{layout_cloud, render_cloud, DEFAULT_K, FONT_MAX};
use texmax::data::{encode_ppm, make_synthetic, split_manifest, DatasetManifest, SyntheticKind};
use texmax::descriptor::{descriptor_forward_taps, pool_second_order, TextureDescriptor};
use texmax::diagnostics::run_gradcheck_suite;
use texmax::heads::{
    average_precision, evaluate_accuracy, predict_proba, score_phrases, train_phrases,
    train_softmax, PhraseModel, SoftmaxHead, TrainConfig,
};
use texmax::inversion::{
    oriented_energy_ratio, synthesize_maximal_image, tv_norm, InversionConfig, InversionTrace,
};
use texmax::Tensor3;

const DATA_SEED: u64 = 42;
const BANK_SEED: u64 = 7;
const TRAIN_SEED: u64 = 0;
const INVERT_SEED: u64 = 11;

struct Artifacts {
    backbone: BackboneSpec,
    head: SoftmaxHead,
    phrases: PhraseModel,
    test_set: DatasetManifest,
    test_desc: Vec<TextureDescriptor>,
    per_tap_acc: Vec<f64>,
    ensemble_acc: f64,
    train_secs: f64,
}

fn featurize(set: &DatasetManifest, backbone: &BackboneSpec) -> Vec<TextureDescriptor> {
    set.records
        .iter()
        .map(|r| {
            let img = set.load_image(r).expect("dataset image loads");
            let stack = forward_taps(&img, backbone).expect("forward");
            descriptor_forward_taps(&stack.taps, false)
        })
        .collect()
}

fn build_artifacts(dir: &Path) -> Artifacts {
    let manifest = make_synthetic(&SyntheticKind::ALL, 125, 64, 0.05, DATA_SEED, dir)
        .expect("synthetic dataset");
    let (train_set, test_set) = split_manifest(&manifest, 0.2, TRAIN_SEED).expect("split");
    assert_eq!(train_set.records.len(), 400);
    assert_eq!(test_set.records.len(), 100);

    let backbone = make_filter_bank(FilterBankKind::Gabor, &FilterBankShape::default(), BANK_SEED)
        .expect("filter bank");

    let t0 = Instant::now();
    let train_desc = featurize(&train_set, &backbone);
    let test_desc = featurize(&test_set, &backbone);
    let cfg = TrainConfig {
        learning_rate: 0.5,
        epochs: 200,
        seed: TRAIN_SEED,
        ..TrainConfig::default()
    };
    let (head, _) = train_softmax(
        &train_desc,
        &train_set.labels_as_indices(),
        &train_set.class_table,
        &cfg,
    )
    .expect("softmax training");
    let annotations: Vec<Vec<String>> = train_set
        .records
        .iter()
        .map(|r| train_set.phrases_for(&r.path))
        .collect();
    let phrases = train_phrases(&train_desc, &annotations, &cfg).expect("phrase training");
    let train_secs = t0.elapsed().as_secs_f64();

    let (per_tap_acc, ensemble_acc) =
        evaluate_accuracy(&head, &test_desc, &test_set.labels_as_indices()).expect("evaluation");

    Artifacts {
        backbone,
        head,
        phrases,
        test_set,
        test_desc,
        per_tap_acc,
        ensemble_acc,
        train_secs,
    }
}

fn invert(art: &Artifacts, class: &str, gamma: f64, iters: usize) -> (Tensor3, InversionTrace) {
    let target_class = art
        .head
        .class_names
        .iter()
        .position(|n| n == class)
        .expect("known class");
    let cfg = InversionConfig {
        gamma,
        max_iters: iters,
        seed: INVERT_SEED,
        target_class,
        ..InversionConfig::default()
    };
    synthesize_maximal_image(&cfg, &art.head, &art.backbone).expect("inversion")
}

struct Gate {
    failures: Vec<String>,
}

impl Gate {
    fn report(&mut self, criterion: usize, ok: bool, detail: String) {
        let verdict = if ok { "PASS" } else { "FAIL" };
        println!("criterion {criterion} {verdict} — {detail}");
        if !ok {
            self.failures.push(format!("criterion {criterion}: {detail}"));
        }
    }
}

fn criterion_1(gate: &mut Gate) {
    let t0 = Instant::now();
    let results = run_gradcheck_suite(0, 10).expect("gradcheck suite");
    let secs = t0.elapsed().as_secs_f64();
    let worst = results
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .unwrap();
    let ok = results.iter().all(|r| r.passed()) && secs < 60.0;
    gate.report(
        1,
        ok,
        format!(
            "gradient integrity: worst {} = {:.3e} over 10 seeds in {:.1}s",
            worst.name, worst.max_rel_error, secs
        ),
    );
}

fn criterion_2(gate: &mut Gate) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let h = rng.gen_range(1..=8);
        let w = rng.gen_range(1..=8);
        let d = rng.gen_range(1..=8);
        let feat = Tensor3::new(
            h,
            w,
            d,
            (0..h * w * d).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let got = pool_second_order(&feat);
        // independent double-loop oracle
        let mut want = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for r in 0..h {
                    for c in 0..w {
                        acc += feat.get(r, c, i) * feat.get(r, c, j);
                    }
                }
                want[i * d + j] = acc / (h * w) as f64;
            }
        }
        for (g, e) in got.iter().zip(&want) {
            worst = worst.max((g - e).abs());
        }
    }
    gate.report(
        2,
        worst < 1e-12,
        format!("pooling oracle: max abs deviation {worst:.3e} on 200 random maps"),
    );
}

fn criterion_3(gate: &mut Gate, art: &Artifacts) {
    let best_tap = art.per_tap_acc.iter().cloned().fold(0.0, f64::max);
    let ok = best_tap >= 0.9 && art.ensemble_acc >= 0.9 && art.train_secs < 300.0;
    gate.report(
        3,
        ok,
        format!(
            "classification: best tap {:.2}, ensemble {:.2}, train {:.0}s",
            best_tap, art.ensemble_acc, art.train_secs
        ),
    );
}

fn trace_monotone(trace: &InversionTrace) -> bool {
    trace
        .records
        .windows(2)
        .all(|w| w[1].objective <= w[0].objective)
}

fn criterion_4(gate: &mut Gate, art: &Artifacts) -> Tensor3 {
    let (sv_img, sv_trace) = invert(art, "stripes_v", 0.01, 500);
    let (sh_img, sh_trace) = invert(art, "stripes_h", 0.01, 500);

    let sv_class = art.head.class_names.iter().position(|n| n == "stripes_v").unwrap();
    let stack = forward_taps(&sv_img, &art.backbone).expect("forward");
    let desc = descriptor_forward_taps(&stack.taps, false);
    let per_tap = predict_proba(&desc, &art.head).expect("probabilities");
    let mean_prob =
        per_tap.iter().map(|p| p[sv_class]).sum::<f64>() / per_tap.len() as f64;

    let sv_ratio = oriented_energy_ratio(&sv_img);
    let sh_ratio = oriented_energy_ratio(&sh_img);
    let ok = mean_prob >= 0.9
        && sv_ratio > 2.0
        && sh_ratio < 0.5
        && trace_monotone(&sv_trace)
        && trace_monotone(&sh_trace);
    gate.report(
        4,
        ok,
        format!(
            "maximal images: stripes_v mean tap prob {mean_prob:.3}, ratio {sv_ratio:.2}; stripes_h ratio {sh_ratio:.3}; traces monotone {}",
            trace_monotone(&sv_trace) && trace_monotone(&sh_trace)
        ),
    );
    sv_img
}

fn criterion_5(gate: &mut Gate, art: &Artifacts) {
    let mut ok = true;
    let mut details = Vec::new();
    for class in &art.head.class_names {
        let (with_tv, _) = invert(art, class, 0.01, 60);
        let (without_tv, _) = invert(art, class, 0.0, 60);
        let (tv_a, _) = tv_norm(&with_tv, 2.0).unwrap();
        let (tv_b, _) = tv_norm(&without_tv, 2.0).unwrap();
        ok &= tv_a < tv_b;
        details.push(format!("{class} {tv_a:.1}<{tv_b:.1}"));
    }
    gate.report(5, ok, format!("TV prior lowers TV: {}", details.join(", ")));
}

fn criterion_6(gate: &mut Gate, art: &Artifacts, sv_img: &Tensor3) {
    let stack = forward_taps(sv_img, &art.backbone).expect("forward");
    let desc = descriptor_forward_taps(&stack.taps, false);
    let scored = score_phrases(&desc, &art.phrases).expect("phrase scores");
    let top3: Vec<&str> = scored.iter().take(3).map(|(p, _)| p.as_str()).collect();
    let in_top3 = top3.contains(&"vertical lines");

    // held-out mean AP: rank test images per phrase, AP against annotations
    let concat: Vec<Vec<f64>> = art.test_desc.iter().map(|d| d.concat()).collect();
    let mut aps = Vec::new();
    for (pi, phrase) in art.phrases.phrases.iter().enumerate() {
        let relevant: Vec<bool> = art
            .test_set
            .records
            .iter()
            .map(|r| art.test_set.phrases_for(&r.path).iter().any(|p| p == phrase))
            .collect();
        if !relevant.iter().any(|&r| r) {
            continue;
        }
        let dim = art.phrases.dim;
        let row = &art.phrases.weights[pi * dim..(pi + 1) * dim];
        let scores: Vec<f64> = concat
            .iter()
            .map(|x| art.phrases.bias[pi] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        aps.push(average_precision(&scores, &relevant));
    }
    let mean_ap = aps.iter().sum::<f64>() / aps.len() as f64;

    gate.report(
        6,
        in_top3 && mean_ap > 0.9,
        format!("phrases: top3 {top3:?} contains \"vertical lines\" = {in_top3}, held-out mean AP {mean_ap:.3}"),
    );
}

fn criterion_7(gate: &mut Gate) {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut ok = true;
    let mut note = String::new();
    for trial in 0..5 {
        let n = rng.gen_range(1..30usize);
        let scores: Vec<(String, f64)> = (0..n)
            .map(|i| (format!("phrase {trial} {i}"), rng.gen_range(0.0..1.0)))
            .collect();
        let layout = layout_cloud(&scores, DEFAULT_K, 256, 256, 5).expect("layout");
        // no pairwise bounding-box overlaps
        for (i, a) in layout.items.iter().enumerate() {
            for b in &layout.items[i + 1..] {
                let disjoint = a.x + a.w <= b.x || b.x + b.w <= a.x || a.y + a.h <= b.y || b.y + b.h <= a.y;
                if !disjoint {
                    ok = false;
                    note = format!("overlap between {:?} and {:?}", a.phrase, b.phrase);
                }
            }
        }
        // fonts monotone in probability
        let mut placed = layout.items.clone();
        placed.sort_by(|a, b| b.probability.total_cmp(&a.probability));
        if !placed.windows(2).all(|w| w[0].font >= w[1].font) {
            ok = false;
            note = "font sizes not monotone".into();
        }
        if layout.items.len() + layout.dropped.len() != n.min(DEFAULT_K) {
            ok = false;
            note = "placed+dropped != k".into();
        }
        // byte-identical rerun
        let again = layout_cloud(&scores, DEFAULT_K, 256, 256, 5).expect("layout");
        let a = encode_ppm(&render_cloud(&layout)).unwrap();
        let b = encode_ppm(&render_cloud(&again)).unwrap();
        if a != b {
            ok = false;
            note = "render not reproducible".into();
        }
    }
    // single-score degenerate case still uses the max font
    let one = layout_cloud(&[("solo".into(), 0.4)], DEFAULT_K, 256, 256, 0).unwrap();
    if one.items[0].font != FONT_MAX {
        ok = false;
        note = "degenerate font sizing".into();
    }
    if ok {
        note = format!("default k = {DEFAULT_K}, no overlaps, monotone fonts, reproducible renders");
    }
    gate.report(7, ok, format!("cloud contract: {note}"));
}

fn run_pipeline(bin: &str, dir: &Path) {
    let run = |args: &[&str]| {
        let out = Command::new(bin)
            .args(args)
            .current_dir(dir)
            .output()
            .expect("spawn texmax");
        assert!(
            out.status.success(),
            "step {:?} failed: {}",
            args[0],
            String::from_utf8_lossy(&out.stderr)
        );
    };
    run(&["make-synthetic", "--count", "8", "--size", "32", "--seed", "5", "--out", "data"]);
    run(&["make-backbone", "--kind", "gabor", "--seed", "7", "--out", "bank.txbb"]);
    run(&[
        "train", "--data", "data", "--backbone", "bank.txbb", "--out", "run",
        "--epochs", "25", "--learning-rate", "0.5", "--seed", "1",
    ]);
    run(&[
        "invert", "--heads", "run/heads.txhd", "--backbone", "bank.txbb", "--class", "stripes_v",
        "--iters", "12", "--size", "32", "--seed", "3", "--out", "max.ppm",
    ]);
    run(&[
        "describe", "--phrases-model", "run/phrases.txhd", "--image", "max.ppm",
        "--backbone", "bank.txbb", "--out", "scores.json",
    ]);
    run(&[
        "cloud", "--scores", "scores.json", "--canvas", "192x128", "--seed", "2",
        "--out", "cloud.ppm", "--layout", "layout.json",
    ]);
}

fn criterion_8(gate: &mut Gate) {
    let bin = env!("CARGO_BIN_EXE_texmax");
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    run_pipeline(bin, dir_a.path());
    run_pipeline(bin, dir_b.path());

    let mut compared = 0;
    let mut mismatches = Vec::new();
    let mut stack = vec![std::path::PathBuf::new()];
    while let Some(rel) = stack.pop() {
        for entry in std::fs::read_dir(dir_a.path().join(&rel)).unwrap() {
            let entry = entry.unwrap();
            let rel_path = rel.join(entry.file_name());
            if entry.file_type().unwrap().is_dir() {
                stack.push(rel_path);
            } else {
                let a = std::fs::read(dir_a.path().join(&rel_path)).unwrap();
                let b = std::fs::read(dir_b.path().join(&rel_path)).unwrap_or_default();
                if a != b {
                    mismatches.push(rel_path.display().to_string());
                }
                compared += 1;
            }
        }
    }
    let ok = mismatches.is_empty() && compared > 0;
    gate.report(
        8,
        ok,
        if ok {
            format!("reproducibility: {compared} artifacts byte-identical across two pipeline runs")
        } else {
            format!("reproducibility: differing artifacts {mismatches:?}")
        },
    );
}

#[test]
fn acceptance() {
    texmax::init_thread_pool_from_env();
    let mut gate = Gate { failures: Vec::new() };

    criterion_1(&mut gate);
    criterion_2(&mut gate);

    let data_dir = tempfile::tempdir().unwrap();
    let art = build_artifacts(data_dir.path());
    criterion_3(&mut gate, &art);
    let sv_img = criterion_4(&mut gate, &art);
    criterion_5(&mut gate, &art);
    criterion_6(&mut gate, &art, &sv_img);
    criterion_7(&mut gate);
    criterion_8(&mut gate);

    assert!(
        gate.failures.is_empty(),
        "acceptance failures:\n{}",
        gate.failures.join("\n")
    );
}
