//! On-disk cache of blurred JPEG renditions keyed by image id and sigma.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use veilmod_core::blur::blur_image;
use veilmod_core::corpus::{Corpus, ImageRecord};
use veilmod_core::stage::sigma_key;

use crate::ServerError;

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone)]
pub struct RenditionCache {
    dir: PathBuf,
    quality: u8,
}

impl RenditionCache {
    pub fn new(dir: impl Into<PathBuf>, quality: u8) -> Self {
        Self {
            dir: dir.into(),
            quality,
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, image_id: &str, sigma: f64) -> PathBuf {
        self.dir
            .join(file_stem(image_id))
            .join(format!("sigma-{}.jpg", sigma_key(sigma)))
    }

    /// Returns the cached rendition, rendering and storing it first if
    /// absent. The flag is true when this call did the rendering.
    pub fn get_or_render(
        &self,
        corpus: &Corpus,
        record: &ImageRecord,
        sigma: f64,
    ) -> Result<(Vec<u8>, bool), ServerError> {
        let path = self.path_for(&record.id, sigma);
        match std::fs::read(&path) {
            Ok(bytes) => return Ok((bytes, false)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(source) => return Err(ServerError::Io { path, source }),
        }
        let bytes = render(corpus, record, sigma, self.quality)?;
        self.store(&path, &bytes)?;
        Ok((bytes, true))
    }

    /// Writes via a temporary sibling and rename so readers never see a
    /// partial file.
    fn store(&self, path: &Path, bytes: &[u8]) -> Result<(), ServerError> {
        let parent = path.parent().expect("cache paths have a parent");
        let io = |source| ServerError::Io {
            path: path.to_path_buf(),
            source,
        };
        std::fs::create_dir_all(parent).map_err(io)?;
        let tmp = parent.join(format!(
            ".tmp-{}-{}",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        std::fs::write(&tmp, bytes).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }
}

/// Blurs and JPEG-encodes one image.
pub fn render(corpus: &Corpus, record: &ImageRecord, sigma: f64, quality: u8) -> Result<Vec<u8>, ServerError> {
    let original = corpus.load_image(record)?;
    let blurred = blur_image(&original, sigma).map_err(|e| ServerError::Render(e.to_string()))?;
    blurred
        .encode_jpeg(quality)
        .map_err(|e| ServerError::Render(e.to_string()))
}

/// Ids made of `[A-Za-z0-9._-]` (and not starting with a dot) are used as
/// directory names directly; anything else is hex encoded.
fn file_stem(id: &str) -> String {
    let plain = !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if plain {
        id.to_string()
    } else {
        format!("x-{}", hex::encode(id))
    }
}
