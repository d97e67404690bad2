//! Deterministic phrase-cloud layout and rasterization.
//!
//! Phrases are placed largest-first along an Archimedean spiral from the
//! canvas center; font size is an affine min-max map of probability so the
//! smallest phrase stays legible. Rendering uses an embedded 8x8 bitmap
//! font scaled by nearest neighbor, so output bytes are identical across
//! machines.

use font8x8::{UnicodeFonts, BASIC_FONTS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

pub const FONT_MIN: usize = 10;
pub const FONT_MAX: usize = 36;
/// Default phrase count, the "top 20" presentation.
pub const DEFAULT_K: usize = 20;

#[derive(Debug, Clone, Serialize)]
pub struct PlacedPhrase {
    pub phrase: String,
    pub probability: f64,
    pub font: usize,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

#[derive(Debug, Clone)]
pub struct PhraseCloudLayout {
    pub canvas_w: usize,
    pub canvas_h: usize,
    pub items: Vec<PlacedPhrase>,
    /// Phrases that fit nowhere on the spiral.
    pub dropped: Vec<String>,
}

impl PhraseCloudLayout {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.items)
            .map_err(|e| Error::internal(format!("layout serialization failed: {e}")))
    }
}

/// Bounding box of a phrase at a font size: fixed-metric glyphs with a 0.6
/// width-to-height ratio and 2px padding.
pub fn measure_text(phrase: &str, font: usize) -> (usize, usize) {
    let glyphs = phrase.chars().count();
    (glyphs * glyph_advance(font) + 2, font + 2)
}

fn glyph_advance(font: usize) -> usize {
    (0.6 * font as f64).round() as usize
}

fn font_for(p: f64, p_min: f64, p_max: f64) -> usize {
    if p_max - p_min <= 1e-12 {
        return FONT_MAX;
    }
    let t = (p - p_min) / (p_max - p_min + 1e-12);
    (FONT_MIN as f64 + (FONT_MAX - FONT_MIN) as f64 * t).round() as usize
}

fn overlaps(a: &PlacedPhrase, x: usize, y: usize, w: usize, h: usize) -> bool {
    a.x < x + w && x < a.x + a.w && a.y < y + h && y < a.y + a.h
}

/// Greedy spiral placement of the top-k phrases, descending probability.
pub fn layout_cloud(
    scores: &[(String, f64)],
    k: usize,
    canvas_w: usize,
    canvas_h: usize,
    seed: u64,
) -> Result<PhraseCloudLayout> {
    if canvas_w < 64 || canvas_h < 64 {
        return Err(Error::config(format!(
            "canvas must be at least 64x64, got {canvas_w}x{canvas_h}"
        )));
    }
    for (phrase, p) in scores {
        if !(0.0..=1.0).contains(p) {
            return Err(Error::config(format!("probability {p} for {phrase:?} outside [0,1]")));
        }
        if phrase.trim().is_empty() {
            return Err(Error::config("empty phrase in score list"));
        }
    }
    let mut top: Vec<(String, f64)> = scores.to_vec();
    top.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite probabilities"));
    top.truncate(k);

    let mut layout = PhraseCloudLayout {
        canvas_w,
        canvas_h,
        items: Vec::new(),
        dropped: Vec::new(),
    };
    if top.is_empty() {
        return Ok(layout);
    }
    let p_max = top.first().map(|x| x.1).unwrap();
    let p_min = top.last().map(|x| x.1).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta0: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let cx = canvas_w as f64 / 2.0;
    let cy = canvas_h as f64 / 2.0;
    let max_radius = (canvas_w.max(canvas_h)) as f64;

    for (phrase, p) in top {
        let font = font_for(p, p_min, p_max);
        let (w, h) = measure_text(&phrase, font);
        if w > canvas_w || h > canvas_h {
            layout.dropped.push(phrase);
            continue;
        }
        // radius grows ~3px per turn
        let mut placed = false;
        let mut t = 0.0f64;
        while t * 0.5 <= max_radius {
            let radius = 0.5 * t;
            let angle = theta0 + t * 0.35;
            let px = cx + radius * angle.cos() - w as f64 / 2.0;
            let py = cy + radius * angle.sin() - h as f64 / 2.0;
            t += 1.0;
            if px < 0.0 || py < 0.0 {
                continue;
            }
            let (x, y) = (px.round() as usize, py.round() as usize);
            if x + w > canvas_w || y + h > canvas_h {
                continue;
            }
            if layout.items.iter().any(|it| overlaps(it, x, y, w, h)) {
                continue;
            }
            layout.items.push(PlacedPhrase {
                phrase: phrase.clone(),
                probability: p,
                font,
                x,
                y,
                w,
                h,
            });
            placed = true;
            break;
        }
        if !placed {
            layout.dropped.push(phrase);
        }
    }
    Ok(layout)
}

fn glyph_rows(ch: char) -> [u8; 8] {
    BASIC_FONTS
        .get(ch)
        .or_else(|| BASIC_FONTS.get('?'))
        .unwrap_or([0u8; 8])
}

/// White canvas, black glyphs; every ink pixel lands inside its phrase's
/// bounding box.
pub fn render_cloud(layout: &PhraseCloudLayout) -> Tensor3 {
    let mut img = Tensor3::filled(layout.canvas_h, layout.canvas_w, 3, 1.0);
    for item in &layout.items {
        let adv = glyph_advance(item.font);
        for (ci, ch) in item.phrase.chars().enumerate() {
            let rows = glyph_rows(ch);
            let origin_x = item.x + 1 + ci * adv;
            let origin_y = item.y + 1;
            for py in 0..item.font {
                let sy = py * 8 / item.font;
                let row = rows[sy];
                for px in 0..adv {
                    let sx = px * 8 / adv;
                    if (row >> sx) & 1 == 1 {
                        let (r, c) = (origin_y + py, origin_x + px);
                        if r < layout.canvas_h && c < layout.canvas_w {
                            for k in 0..3 {
                                img.set(r, c, k, 0.0);
                            }
                        }
                    }
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(n: usize) -> Vec<(String, f64)> {
        (0..n)
            .map(|i| (format!("phrase {i}"), 1.0 - i as f64 * 0.02))
            .collect()
    }

    #[test]
    fn measure_matches_metric() {
        assert_eq!(measure_text("ab", 10), (2 * 6 + 2, 12));
        let (w1, _) = measure_text("word", 12);
        let (w2, _) = measure_text("word", 24);
        // doubling font doubles the advance, modulo rounding
        assert!((w2 as isize - 2 * (w1 as isize - 2) - 2).abs() <= 4);
    }

    #[test]
    fn single_phrase_is_centered_at_max_font() {
        let layout = layout_cloud(&[("alone".into(), 0.4)], 20, 256, 256, 1).unwrap();
        assert_eq!(layout.items.len(), 1);
        let it = &layout.items[0];
        assert_eq!(it.font, FONT_MAX);
        let (cx, cy) = (it.x + it.w / 2, it.y + it.h / 2);
        assert!((cx as isize - 128).abs() <= 1, "cx {cx}");
        assert!((cy as isize - 128).abs() <= 1, "cy {cy}");
    }

    #[test]
    fn equal_probabilities_all_max_font() {
        let s: Vec<(String, f64)> = (0..5).map(|i| (format!("p{i}"), 0.5)).collect();
        let layout = layout_cloud(&s, 20, 512, 512, 2).unwrap();
        assert!(layout.items.iter().all(|it| it.font == FONT_MAX));
    }

    #[test]
    fn no_bounding_box_overlaps() {
        let layout = layout_cloud(&scores(20), 20, 640, 480, 3).unwrap();
        for i in 0..layout.items.len() {
            for j in 0..i {
                let a = &layout.items[i];
                let b = &layout.items[j];
                assert!(
                    !overlaps(a, b.x, b.y, b.w, b.h),
                    "{:?} overlaps {:?}",
                    a.phrase,
                    b.phrase
                );
            }
        }
    }

    #[test]
    fn font_sizes_monotone_in_probability() {
        let layout = layout_cloud(&scores(20), 20, 800, 800, 4).unwrap();
        for i in 0..layout.items.len() {
            for j in 0..layout.items.len() {
                if layout.items[i].probability > layout.items[j].probability {
                    assert!(layout.items[i].font >= layout.items[j].font);
                }
            }
        }
    }

    #[test]
    fn takes_at_most_k() {
        let layout = layout_cloud(&scores(30), 20, 1024, 1024, 5).unwrap();
        assert!(layout.items.len() + layout.dropped.len() == 20);
    }

    #[test]
    fn deterministic_layout_and_raster() {
        let a = layout_cloud(&scores(12), 20, 320, 320, 9).unwrap();
        let b = layout_cloud(&scores(12), 20, 320, 320, 9).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(render_cloud(&a).values(), render_cloud(&b).values());
    }

    #[test]
    fn empty_layout_renders_white() {
        let layout = layout_cloud(&[], 20, 64, 64, 0).unwrap();
        let img = render_cloud(&layout);
        assert!(img.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn ink_stays_inside_boxes() {
        let layout = layout_cloud(&scores(8), 20, 400, 400, 11).unwrap();
        assert!(!layout.items.is_empty());
        let img = render_cloud(&layout);
        for r in 0..400 {
            for c in 0..400 {
                if img.get(r, c, 0) == 0.0 {
                    let inside = layout
                        .items
                        .iter()
                        .any(|it| r >= it.y && r < it.y + it.h && c >= it.x && c < it.x + it.w);
                    assert!(inside, "ink at ({r},{c}) outside all boxes");
                }
            }
        }
    }

    #[test]
    fn tiny_canvas_rejected() {
        assert!(layout_cloud(&scores(1), 20, 32, 64, 0).is_err());
    }
}
