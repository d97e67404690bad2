//! Procedural texture families with known oriented-energy signatures, plus
//! auto-emitted phrase annotations. Class identity is purely textural, so
//! inversion quality is machine-checkable.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

use super::{write_atomic, DatasetManifest, ManifestRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    StripesH,
    StripesV,
    Checker,
    Dots,
}

impl SyntheticKind {
    pub const ALL: [SyntheticKind; 4] = [
        SyntheticKind::StripesH,
        SyntheticKind::StripesV,
        SyntheticKind::Checker,
        SyntheticKind::Dots,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SyntheticKind::StripesH => "stripes_h",
            SyntheticKind::StripesV => "stripes_v",
            SyntheticKind::Checker => "checker",
            SyntheticKind::Dots => "dots",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::config(format!("unknown synthetic kind {name:?}")))
    }
}

/// Per-class phrase annotations. Stripe classes share generic phrases so the
/// phrase task is not a relabeling of the class task.
pub fn phrases_for_kind(kind: SyntheticKind) -> Vec<&'static str> {
    match kind {
        SyntheticKind::StripesV => vec!["vertical lines", "striped", "parallel lines"],
        SyntheticKind::StripesH => vec!["horizontal lines", "striped", "parallel lines"],
        SyntheticKind::Checker => vec!["checkered", "squares", "grid"],
        SyntheticKind::Dots => vec!["dotted", "polka dots", "round spots"],
    }
}

/// One procedural sample: random period in [4,12] px and random phase, with
/// Gaussian pixel noise, grayscale replicated to 3 channels, clamped to [0,1].
pub fn synth_image(kind: SyntheticKind, size: usize, noise: f64, rng: &mut ChaCha8Rng) -> Tensor3 {
    let period = rng.gen_range(4..=12usize);
    let phase_r = rng.gen_range(0..period);
    let phase_c = rng.gen_range(0..period);
    let half = (period / 2).max(1);
    let radius = (period as f64 / 4.0).max(1.0);

    let mut img = Tensor3::zeros(size, size, 3);
    for r in 0..size {
        for c in 0..size {
            let v = match kind {
                SyntheticKind::StripesV => {
                    if (c + phase_c) % period < half {
                        1.0
                    } else {
                        0.0
                    }
                }
                SyntheticKind::StripesH => {
                    if (r + phase_r) % period < half {
                        1.0
                    } else {
                        0.0
                    }
                }
                SyntheticKind::Checker => {
                    if ((r + phase_r) / half + (c + phase_c) / half) % 2 == 0 {
                        1.0
                    } else {
                        0.0
                    }
                }
                SyntheticKind::Dots => {
                    let dr = (r + phase_r) % period;
                    let dc = (c + phase_c) % period;
                    let dy = (dr as f64).min((period - dr) as f64);
                    let dx = (dc as f64).min((period - dc) as f64);
                    if dy * dy + dx * dx <= radius * radius {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            for k in 0..3 {
                let noisy = if noise > 0.0 {
                    v + noise * rng.sample::<f64, _>(rand_distr::StandardNormal)
                } else {
                    v
                };
                img.set(r, c, k, noisy.clamp(0.0, 1.0));
            }
        }
    }
    img
}

/// Writes `count` images per kind under `out_dir` along with `labels.csv`
/// and `phrases.csv`, and returns the corresponding manifest.
pub fn make_synthetic(
    kinds: &[SyntheticKind],
    count: usize,
    size: usize,
    noise: f64,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if size < 16 {
        return Err(Error::config("synthetic image size must be at least 16"));
    }
    if kinds.is_empty() || count == 0 {
        return Err(Error::config("need at least one kind and one image"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut phrases = Vec::new();
    for &kind in kinds {
        for i in 0..count {
            let img = synth_image(kind, size, noise, &mut rng);
            let name = format!("{}_{i:04}.ppm", kind.name());
            write_atomic(&out_dir.join(&name), &super::encode_ppm(&img)?)?;
            for phrase in phrases_for_kind(kind) {
                phrases.push((name.clone(), phrase.to_string()));
            }
            records.push(ManifestRecord {
                path: name,
                label: kind.name().to_string(),
            });
        }
    }
    let mut manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        records,
        phrases,
        class_table: Vec::new(),
    };
    manifest.rebuild_class_table();
    super::save_manifest_csvs(&manifest, out_dir)?;
    Ok(manifest)
}
