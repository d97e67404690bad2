//! `texmax`: train texture heads on a frozen filter bank, synthesize maximal
//! images per class, and describe them as phrase clouds.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use texmax::backbone::{
    forward_taps, load_backbone, make_filter_bank, save_backbone, BackboneSpec, FilterBankKind,
    FilterBankShape,
};
use texmax::data::{
    load_manifest, load_ppm, save_ppm, split_manifest, subsample, write_atomic, DatasetManifest,
    SyntheticKind,
};
use texmax::descriptor::{descriptor_forward_taps, TextureDescriptor};
use texmax::diagnostics::{run_gradcheck_suite, GRADCHECK_TOLERANCE};
use texmax::heads::{
    average_precision, evaluate_accuracy, load_heads, load_phrases, save_heads, save_phrases,
    score_phrases, score_phrases_concat, train_phrases, train_softmax, TrainConfig,
};
use texmax::inversion::{synthesize_maximal_image, InversionConfig};
use texmax::{cloud, Error, Result};

#[derive(Parser)]
#[command(name = "texmax", version, about = "texture-descriptor classifiers, maximal images, phrase clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a frozen convolutional filter bank and write it as a TXBB file
    MakeBackbone(MakeBackboneArgs),
    /// Generate a labeled synthetic texture dataset with phrase annotations
    MakeSynthetic(MakeSyntheticArgs),
    /// Train per-tap softmax heads (and a phrase model) on a dataset
    Train(TrainArgs),
    /// Synthesize the maximal image for a class
    Invert(InvertArgs),
    /// Rank phrases for an image or a saved descriptor
    Describe(DescribeArgs),
    /// Render a phrase cloud from a score list
    Cloud(CloudArgs),
    /// Check every analytic gradient against central differences
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BankKind {
    Gabor,
    RandomOrthogonal,
}

#[derive(Args)]
struct MakeBackboneArgs {
    /// Filter family for the frozen bank
    #[arg(long, value_enum, default_value = "gabor")]
    kind: BankKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output TXBB path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MakeSyntheticArgs {
    /// Comma-separated kinds (stripes_h,stripes_v,checker,dots) or "all"
    #[arg(long, default_value = "all")]
    kind_set: String,
    /// Images per kind
    #[arg(long)]
    count: usize,
    /// Square image edge in pixels
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Gaussian pixel noise sigma
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (images + labels.csv + phrases.csv)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory containing labels.csv (and optionally phrases.csv)
    #[arg(long)]
    data: PathBuf,
    /// TXBB backbone path
    #[arg(long)]
    backbone: PathBuf,
    /// Output directory (heads.txhd, phrases.txhd, report.json)
    #[arg(long)]
    out: PathBuf,
    /// Cap on images per class (defaults to all)
    #[arg(long)]
    per_class: Option<usize>,
    /// Keep only the N most populous classes (defaults to all)
    #[arg(long)]
    top_classes: Option<usize>,
    /// Held-out fraction of each class for the accuracy report
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct InvertArgs {
    /// TXHD softmax heads path
    #[arg(long)]
    heads: PathBuf,
    /// TXBB backbone path
    #[arg(long)]
    backbone: PathBuf,
    /// Target class name or numeric index
    #[arg(long)]
    class: String,
    /// TV prior weight
    #[arg(long, default_value_t = 0.01)]
    gamma: f64,
    /// TV exponent
    #[arg(long, default_value_t = 2.0)]
    beta: f64,
    #[arg(long, default_value_t = 500)]
    iters: usize,
    /// Square canvas edge in pixels
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output PPM path; the trace CSV lands next to it unless --trace is given
    #[arg(long)]
    out: PathBuf,
    /// Trace CSV path
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct DescribeArgs {
    /// TXHD phrase model path
    #[arg(long)]
    phrases_model: PathBuf,
    /// Input PPM image (requires --backbone)
    #[arg(long, conflicts_with = "descriptor")]
    image: Option<PathBuf>,
    /// TXBB backbone used to featurize --image
    #[arg(long, requires = "image")]
    backbone: Option<PathBuf>,
    /// JSON file holding a concatenated descriptor vector
    #[arg(long)]
    descriptor: Option<PathBuf>,
    /// How many top phrases to report
    #[arg(long, default_value_t = cloud::DEFAULT_K)]
    k: usize,
    /// Write the ranked JSON here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CloudArgs {
    /// Ranked score JSON, as emitted by `describe`
    #[arg(long)]
    scores: PathBuf,
    /// How many top phrases to place
    #[arg(long, default_value_t = cloud::DEFAULT_K)]
    k: usize,
    /// Canvas size as WIDTHxHEIGHT
    #[arg(long, default_value = "256x256")]
    canvas: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output PPM path
    #[arg(long)]
    out: PathBuf,
    /// Also write the placed-box layout as JSON
    #[arg(long)]
    layout: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of seeds per op
    #[arg(long, default_value_t = 10)]
    seeds: usize,
}

#[derive(Serialize, Deserialize)]
struct ScoreEntry {
    phrase: String,
    probability: f64,
}

#[derive(Serialize)]
struct TrainReport {
    classes: Vec<String>,
    train_size: usize,
    test_size: usize,
    per_tap_accuracy: Vec<f64>,
    ensemble_accuracy: f64,
    final_train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    phrase_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    phrase_mean_ap: Option<f64>,
}

fn main() -> ExitCode {
    texmax::init_thread_pool_from_env();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::MakeBackbone(a) => cmd_make_backbone(a),
        Command::MakeSynthetic(a) => cmd_make_synthetic(a),
        Command::Train(a) => cmd_train(a),
        Command::Invert(a) => cmd_invert(a),
        Command::Describe(a) => cmd_describe(a),
        Command::Cloud(a) => cmd_cloud(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("texmax: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn cmd_make_backbone(a: MakeBackboneArgs) -> Result<()> {
    let kind = match a.kind {
        BankKind::Gabor => FilterBankKind::Gabor,
        BankKind::RandomOrthogonal => FilterBankKind::RandomOrthogonal,
    };
    let spec = make_filter_bank(kind, &FilterBankShape::default(), a.seed)?;
    save_backbone(&spec, &a.out)?;
    println!(
        "wrote {} ({} layers, taps at {:?})",
        a.out.display(),
        spec.layers.len(),
        spec.taps
    );
    Ok(())
}

fn parse_kind_set(s: &str) -> Result<Vec<SyntheticKind>> {
    if s == "all" {
        return Ok(SyntheticKind::ALL.to_vec());
    }
    s.split(',').map(|name| SyntheticKind::from_name(name.trim())).collect()
}

fn cmd_make_synthetic(a: MakeSyntheticArgs) -> Result<()> {
    let kinds = parse_kind_set(&a.kind_set)?;
    let manifest = texmax::data::make_synthetic(&kinds, a.count, a.size, a.noise, a.seed, &a.out)?;
    println!(
        "wrote {} images over {} classes to {}",
        manifest.records.len(),
        manifest.class_table.len(),
        a.out.display()
    );
    Ok(())
}

/// Featurizes every image in a manifest; order matches `manifest.records`.
fn compute_descriptors(
    manifest: &DatasetManifest,
    backbone: &BackboneSpec,
) -> Result<Vec<TextureDescriptor>> {
    manifest
        .records
        .par_iter()
        .map(|rec| {
            let img = manifest.load_image(rec)?;
            let stack = forward_taps(&img, backbone)?;
            Ok(descriptor_forward_taps(&stack.taps, false))
        })
        .collect()
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let backbone = load_backbone(&a.backbone)?;
    let phrases_csv = a.data.join("phrases.csv");
    let mut manifest = load_manifest(
        &a.data.join("labels.csv"),
        phrases_csv.is_file().then_some(phrases_csv.as_path()),
        &a.data,
    )?;
    if a.per_class.is_some() || a.top_classes.is_some() {
        let per_class = a.per_class.unwrap_or(usize::MAX);
        let top = a.top_classes.unwrap_or(manifest.class_table.len());
        manifest = subsample(&manifest, per_class, top, a.seed)?;
    }
    let (train_set, test_set) = split_manifest(&manifest, a.test_fraction, a.seed)?;
    if train_set.records.is_empty() {
        return Err(Error::data("training split is empty"));
    }

    let cfg = TrainConfig {
        learning_rate: a.learning_rate,
        epochs: a.epochs,
        batch_size: a.batch_size,
        weight_decay: a.weight_decay,
        seed: a.seed,
    };
    let train_desc = compute_descriptors(&train_set, &backbone)?;
    let test_desc = compute_descriptors(&test_set, &backbone)?;
    let train_labels = train_set.labels_as_indices();
    let test_labels = test_set.labels_as_indices();

    let (head, trace) = train_softmax(&train_desc, &train_labels, &train_set.class_table, &cfg)?;
    let (per_tap_acc, ensemble_acc) = if test_desc.is_empty() {
        (vec![f64::NAN; head.taps.len()], f64::NAN)
    } else {
        evaluate_accuracy(&head, &test_desc, &test_labels)?
    };

    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    save_heads(&head, &a.out.join("heads.txhd"))?;

    let mut phrase_count = None;
    let mut phrase_mean_ap = None;
    if !train_set.phrases.is_empty() {
        let annotations: Vec<Vec<String>> = train_set
            .records
            .iter()
            .map(|r| train_set.phrases_for(&r.path))
            .collect();
        let model = train_phrases(&train_desc, &annotations, &cfg)?;
        save_phrases(&model, &a.out.join("phrases.txhd"))?;
        phrase_count = Some(model.phrases.len());
        if !test_desc.is_empty() {
            phrase_mean_ap = Some(phrase_test_map(&model, &test_set, &test_desc)?);
        }
    }

    let report = TrainReport {
        classes: train_set.class_table.clone(),
        train_size: train_desc.len(),
        test_size: test_desc.len(),
        per_tap_accuracy: per_tap_acc,
        ensemble_accuracy: ensemble_acc,
        final_train_loss: trace.last().copied().unwrap_or(f64::NAN),
        phrase_count,
        phrase_mean_ap,
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::internal(format!("report serialization failed: {e}")))?;
    write_atomic(&a.out.join("report.json"), json.as_bytes())?;
    println!("{json}");
    Ok(())
}

/// Mean average precision of the phrase model over a held-out set: for each
/// phrase, rank the test images by score and measure AP against the
/// annotations.
fn phrase_test_map(
    model: &texmax::heads::PhraseModel,
    test_set: &DatasetManifest,
    test_desc: &[TextureDescriptor],
) -> Result<f64> {
    let concat: Vec<Vec<f64>> = test_desc.iter().map(|d| d.concat()).collect();
    let mut aps = Vec::new();
    for (pi, phrase) in model.phrases.iter().enumerate() {
        let relevant: Vec<bool> = test_set
            .records
            .iter()
            .map(|r| test_set.phrases_for(&r.path).iter().any(|p| p == phrase))
            .collect();
        if !relevant.iter().any(|&r| r) {
            continue; // phrase absent from the held-out set: AP undefined
        }
        let row = &model.weights[pi * model.dim..(pi + 1) * model.dim];
        let scores: Vec<f64> = concat
            .iter()
            .map(|x| model.bias[pi] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        aps.push(average_precision(&scores, &relevant));
    }
    if aps.is_empty() {
        return Err(Error::data("no test phrase overlaps the trained lexicon"));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

fn cmd_invert(a: InvertArgs) -> Result<()> {
    let head = load_heads(&a.heads)?;
    let backbone = load_backbone(&a.backbone)?;
    let target_class = match head.class_names.iter().position(|n| n == &a.class) {
        Some(i) => i,
        None => a.class.parse::<usize>().map_err(|_| {
            Error::config(format!(
                "unknown class {:?}; choices: {:?}",
                a.class, head.class_names
            ))
        })?,
    };
    let cfg = InversionConfig {
        gamma: a.gamma,
        tv_beta: a.beta,
        max_iters: a.iters,
        seed: a.seed,
        target_class,
        size: a.size,
        ..InversionConfig::default()
    };
    let (image, trace) = synthesize_maximal_image(&cfg, &head, &backbone)?;
    save_ppm(&image, &a.out)?;
    let trace_path = a
        .trace
        .unwrap_or_else(|| a.out.with_extension("trace.csv"));
    write_atomic(&trace_path, trace.to_csv_string().as_bytes())?;
    let last = trace.records.last().expect("trace has the initial record");
    println!(
        "wrote {} and {} (objective {:.6}, {} iterations{}{})",
        a.out.display(),
        trace_path.display(),
        last.objective,
        last.iteration,
        if trace.converged { ", converged" } else { "" },
        if trace.stalled { ", stalled" } else { "" },
    );
    Ok(())
}

fn cmd_describe(a: DescribeArgs) -> Result<()> {
    let model = load_phrases(&a.phrases_model)?;
    let scored = match (&a.image, &a.descriptor) {
        (Some(image), None) => {
            let backbone_path = a.backbone.as_ref().ok_or_else(|| {
                Error::config("--image requires --backbone to featurize it")
            })?;
            let backbone = load_backbone(backbone_path)?;
            let img = load_ppm(image)?;
            let stack = forward_taps(&img, &backbone)?;
            score_phrases(&descriptor_forward_taps(&stack.taps, false), &model)?
        }
        (None, Some(desc_path)) => {
            let bytes = std::fs::read(desc_path).map_err(|e| Error::io(desc_path, e))?;
            let x: Vec<f64> = serde_json::from_slice(&bytes).map_err(|e| {
                Error::data(format!("{}: not a JSON number array: {e}", desc_path.display()))
            })?;
            score_phrases_concat(&x, &model)?
        }
        _ => return Err(Error::config("exactly one of --image or --descriptor is required")),
    };
    let top: Vec<ScoreEntry> = scored
        .into_iter()
        .take(a.k)
        .map(|(phrase, probability)| ScoreEntry { phrase, probability })
        .collect();
    let json = serde_json::to_string_pretty(&top)
        .map_err(|e| Error::internal(format!("score serialization failed: {e}")))?;
    match &a.out {
        Some(path) => write_atomic(path, json.as_bytes())?,
        None => println!("{json}"),
    }
    Ok(())
}

fn parse_canvas(s: &str) -> Result<(usize, usize)> {
    let err = || Error::config(format!("canvas must look like 256x256, got {s:?}"));
    let (w, h) = s.split_once('x').ok_or_else(err)?;
    Ok((w.parse().map_err(|_| err())?, h.parse().map_err(|_| err())?))
}

fn cmd_cloud(a: CloudArgs) -> Result<()> {
    let bytes = std::fs::read(&a.scores).map_err(|e| Error::io(&a.scores, e))?;
    let entries: Vec<ScoreEntry> = serde_json::from_slice(&bytes).map_err(|e| {
        Error::data(format!("{}: not a score JSON list: {e}", a.scores.display()))
    })?;
    let scores: Vec<(String, f64)> =
        entries.into_iter().map(|e| (e.phrase, e.probability)).collect();
    let (w, h) = parse_canvas(&a.canvas)?;
    let layout = cloud::layout_cloud(&scores, a.k, w, h, a.seed)?;
    save_ppm(&cloud::render_cloud(&layout), &a.out)?;
    if let Some(path) = &a.layout {
        write_atomic(path, layout.to_json()?.as_bytes())?;
    }
    println!(
        "wrote {} ({} placed, {} dropped)",
        a.out.display(),
        layout.items.len(),
        layout.dropped.len()
    );
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    let results = run_gradcheck_suite(a.seed, a.seeds)?;
    println!("{:<24} {:>14}  status", "op", "max_rel_error");
    let mut failures = 0;
    for r in &results {
        println!(
            "{:<24} {:>14.3e}  {}",
            r.name,
            r.max_rel_error,
            if r.passed() { "ok" } else { "FAIL" }
        );
        if !r.passed() {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(Error::numeric(format!(
            "{failures} gradient check(s) at or above {GRADCHECK_TOLERANCE:e}"
        )));
    }
    Ok(())
}
