//! Placeholder corpus generator.
//!
//! Produces innocuous procedural images (rings, stripes, checkerboards)
//! carrying the same category x realism distribution as the reference
//! moderation dataset, so that pipelines and tallies can be exercised without
//! redistributing objectionable content.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Category, Corpus, CorpusError, ImageRecord, Realism, MANIFEST_FILE};
use crate::raster::RasterImage;

/// Records per (category, realism) cell.
pub const REFERENCE_DISTRIBUTION: [(Category, Realism, usize); 6] = [
    (Category::SexNudity, Realism::Realistic, 152),
    (Category::SexNudity, Realism::Synthetic, 148),
    (Category::Graphic, Realism::Realistic, 123),
    (Category::Graphic, Realism::Synthetic, 116),
    (Category::Safe, Realism::Realistic, 108),
    (Category::Safe, Realism::Synthetic, 138),
];

fn id_prefix(category: Category, realism: Realism) -> &'static str {
    match (category, realism) {
        (Category::SexNudity, Realism::Realistic) => "sn-r",
        (Category::SexNudity, Realism::Synthetic) => "sn-s",
        (Category::Graphic, Realism::Realistic) => "gr-r",
        (Category::Graphic, Realism::Synthetic) => "gr-s",
        (Category::Safe, Realism::Realistic) => "sf-r",
        (Category::Safe, Realism::Synthetic) => "sf-s",
    }
}

/// Renders one placeholder image. Deterministic in its arguments.
pub fn placeholder_image(category: Category, realism: Realism, ordinal: usize) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(
        (category.index() as u64) << 40 | (realism.index() as u64) << 32 | ordinal as u64,
    );
    let width = 40 + 8 * (ordinal % 5) as u32;
    let height = 40 + 8 * (ordinal % 4) as u32;
    let base: [f64; 3] = [rng.random_range(40.0..200.0), rng.random_range(40.0..200.0), rng.random_range(40.0..200.0)];
    let accent: [f64; 3] = [rng.random_range(0.0..255.0), rng.random_range(0.0..255.0), rng.random_range(0.0..255.0)];
    let period = rng.random_range(5.0..12.0);
    let cx = rng.random_range(0.0..width as f64);
    let cy = rng.random_range(0.0..height as f64);

    let mut pixels = Vec::with_capacity((width * height * 3) as usize);
    for y in 0..height {
        for x in 0..width {
            let (fx, fy) = (x as f64, y as f64);
            let t = match category {
                Category::SexNudity => ((fx - cx).hypot(fy - cy) / period).fract(),
                Category::Graphic => ((fx + fy) / period).fract(),
                Category::Safe => {
                    let cell = ((fx / period) as i64 + (fy / period) as i64) & 1;
                    cell as f64
                }
            };
            let t = match realism {
                // Hard edges and a flat palette.
                Realism::Synthetic => {
                    if t < 0.5 {
                        0.0
                    } else {
                        1.0
                    }
                }
                // Smooth shading with a vertical light falloff.
                Realism::Realistic => 0.5 - 0.5 * (t * std::f64::consts::TAU).cos() * (1.0 - 0.4 * fy / height as f64),
            };
            for c in 0..3 {
                pixels.push((base[c] * (1.0 - t) + accent[c] * t).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RasterImage::from_raw_unchecked(width, height, 3, pixels)
}

/// Writes the full placeholder corpus (PNG images plus `manifest.csv`) into `out`.
pub fn write_reference_corpus(out: &Path) -> Result<Corpus, CorpusError> {
    write_corpus(out, &REFERENCE_DISTRIBUTION)
}

/// Writes a placeholder corpus with `count` images per (category, realism) cell.
pub fn write_corpus(out: &Path, distribution: &[(Category, Realism, usize)]) -> Result<Corpus, CorpusError> {
    let images = out.join("images");
    std::fs::create_dir_all(&images).map_err(|source| CorpusError::Io {
        path: images.clone(),
        source,
    })?;
    let mut records = Vec::new();
    for &(category, realism, count) in distribution {
        for ordinal in 1..=count {
            let id = format!("{}-{ordinal:03}", id_prefix(category, realism));
            let img = placeholder_image(category, realism, ordinal);
            let rel = format!("images/{id}.png");
            let bytes = img.encode_png().map_err(|e| CorpusError::Image {
                id: id.clone(),
                reason: e.to_string(),
            })?;
            let path = out.join(&rel);
            std::fs::write(&path, bytes).map_err(|source| CorpusError::Io { path, source })?;
            records.push(ImageRecord {
                id,
                file_path: rel,
                category,
                realism,
                width: img.width(),
                height: img.height(),
            });
        }
    }
    let corpus = Corpus::from_records(out, records)?;
    corpus.export_manifest(&out.join(MANIFEST_FILE))?;
    Ok(corpus)
}
