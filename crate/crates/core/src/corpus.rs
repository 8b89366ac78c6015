//! Labelled image corpus: manifest ingestion, export, tallies and task sampling.
//!
//! A manifest is a UTF-8 CSV file with the header `id,path,category,realism`.
//! Paths are relative to the manifest's directory. Image dimensions are read
//! from the decoded files, so they never appear in the manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::RasterImage;

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("image {id}: {reason}")]
    Image { id: String, reason: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Gold content category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    SexNudity,
    Graphic,
    Safe,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::SexNudity, Category::Graphic, Category::Safe];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::SexNudity => "sex_nudity",
            Category::Graphic => "graphic",
            Category::Safe => "safe",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sex_nudity" => Ok(Category::SexNudity),
            "graphic" => Ok(Category::Graphic),
            "safe" => Ok(Category::Safe),
            other => Err(format!("unknown category {other:?}")),
        }
    }
}

/// Realistic (photographic) versus synthetic (drawn, rendered) imagery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Realism {
    Realistic,
    Synthetic,
}

impl Realism {
    pub const ALL: [Realism; 2] = [Realism::Realistic, Realism::Synthetic];

    pub fn as_str(&self) -> &'static str {
        match self {
            Realism::Realistic => "realistic",
            Realism::Synthetic => "synthetic",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }

    pub fn is_realistic(&self) -> bool {
        matches!(self, Realism::Realistic)
    }
}

impl fmt::Display for Realism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Realism {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "realistic" => Ok(Realism::Realistic),
            "synthetic" => Ok(Realism::Synthetic),
            other => Err(format!("unknown realism {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub file_path: String,
    pub category: Category,
    pub realism: Realism,
    pub width: u32,
    pub height: u32,
}

/// Category x realism tally.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountTable {
    pub cells: [[usize; 2]; 3],
}

impl CountTable {
    pub fn tally<'a>(records: impl IntoIterator<Item = &'a ImageRecord>) -> Self {
        let mut table = CountTable::default();
        for r in records {
            table.cells[r.category.index()][r.realism.index()] += 1;
        }
        table
    }

    pub fn get(&self, category: Category, realism: Realism) -> usize {
        self.cells[category.index()][realism.index()]
    }

    pub fn category_total(&self, category: Category) -> usize {
        self.cells[category.index()].iter().sum()
    }

    pub fn realism_total(&self, realism: Realism) -> usize {
        self.cells.iter().map(|row| row[realism.index()]).sum()
    }

    pub fn total(&self) -> usize {
        self.cells.iter().flatten().sum()
    }

    pub fn add(&self, other: &CountTable) -> CountTable {
        let mut out = *self;
        for (c, row) in out.cells.iter_mut().enumerate() {
            for (r, cell) in row.iter_mut().enumerate() {
                *cell += other.cells[c][r];
            }
        }
        out
    }
}

impl fmt::Display for CountTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>10} {:>10} {:>7}", "category", "realistic", "synthetic", "total")?;
        for c in Category::ALL {
            writeln!(
                f,
                "{:<12} {:>10} {:>10} {:>7}",
                c.as_str(),
                self.get(c, Realism::Realistic),
                self.get(c, Realism::Synthetic),
                self.category_total(c)
            )?;
        }
        writeln!(
            f,
            "{:<12} {:>10} {:>10} {:>7}",
            "total",
            self.realism_total(Realism::Realistic),
            self.realism_total(Realism::Synthetic),
            self.total()
        )
    }
}

/// Lookup of gold labels by image id.
pub trait GoldLabels {
    fn gold(&self, image_id: &str) -> Option<(Category, Realism)>;
}

impl GoldLabels for BTreeMap<String, (Category, Realism)> {
    fn gold(&self, image_id: &str) -> Option<(Category, Realism)> {
        self.get(image_id).copied()
    }
}

/// Validated, immutable set of labelled images.
#[derive(Debug, Clone)]
pub struct Corpus {
    root: PathBuf,
    records: Vec<ImageRecord>,
    index: BTreeMap<String, usize>,
    counts: CountTable,
}

/// Equality covers the records and tallies, not where the files live.
impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records && self.counts == other.counts
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct ManifestRow {
    id: String,
    path: String,
    category: String,
    realism: String,
}

impl Corpus {
    /// Builds a corpus from already-known records, enforcing id uniqueness.
    pub fn from_records(root: impl Into<PathBuf>, records: Vec<ImageRecord>) -> Result<Self, CorpusError> {
        if records.is_empty() {
            return Err(CorpusError::Schema("empty corpus".into()));
        }
        let mut index = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if r.id.trim().is_empty() {
                return Err(CorpusError::Schema(format!("record {} has an empty id", i + 1)));
            }
            if index.insert(r.id.clone(), i).is_some() {
                return Err(CorpusError::Schema(format!("duplicate id {:?}", r.id)));
            }
        }
        let counts = CountTable::tally(&records);
        Ok(Self {
            root: root.into(),
            records,
            index,
            counts,
        })
    }

    /// Reads and validates a manifest, decoding every referenced image.
    pub fn ingest_manifest(manifest_path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(manifest_path)
            .map_err(|e| CorpusError::io(manifest_path, e))?;
        let root = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut records = Vec::new();
        let mut seen = BTreeSet::new();
        for (line, row) in reader.deserialize::<ManifestRow>().enumerate() {
            let row = row.map_err(|e| CorpusError::Schema(format!("manifest row {}: {e}", line + 1)))?;
            let category = row
                .category
                .parse::<Category>()
                .map_err(|e| CorpusError::Schema(format!("record {:?}: {e}", row.id)))?;
            let realism = row
                .realism
                .parse::<Realism>()
                .map_err(|e| CorpusError::Schema(format!("record {:?}: {e}", row.id)))?;
            if !seen.insert(row.id.clone()) {
                return Err(CorpusError::Schema(format!("duplicate id {:?}", row.id)));
            }
            let file = root.join(&row.path);
            let bytes = std::fs::read(&file).map_err(|e| CorpusError::io(&file, e))?;
            let image = RasterImage::decode(&bytes).map_err(|e| CorpusError::Image {
                id: row.id.clone(),
                reason: e.to_string(),
            })?;
            records.push(ImageRecord {
                id: row.id,
                file_path: row.path,
                category,
                realism,
                width: image.width(),
                height: image.height(),
            });
        }
        Self::from_records(root, records)
    }

    /// Concatenates two corpora; ids must stay unique.
    pub fn concat(&self, other: &Corpus) -> Result<Corpus, CorpusError> {
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned());
        Corpus::from_records(self.root.clone(), records)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn image_path(&self, record: &ImageRecord) -> PathBuf {
        self.root.join(&record.file_path)
    }

    pub fn load_image(&self, record: &ImageRecord) -> Result<RasterImage, CorpusError> {
        let path = self.image_path(record);
        let bytes = std::fs::read(&path).map_err(|e| CorpusError::io(&path, e))?;
        RasterImage::decode(&bytes).map_err(|e| CorpusError::Image {
            id: record.id.clone(),
            reason: e.to_string(),
        })
    }

    pub fn category_counts(&self) -> CountTable {
        self.counts
    }

    /// Manifest text for the records in their current order.
    pub fn manifest_text(&self) -> String {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        for r in &self.records {
            writer
                .serialize(ManifestRow {
                    id: r.id.clone(),
                    path: r.file_path.clone(),
                    category: r.category.as_str().to_string(),
                    realism: r.realism.as_str().to_string(),
                })
                .expect("in-memory csv write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory csv flush")).expect("utf-8 fields")
    }

    pub fn export_manifest(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.manifest_text()).map_err(|e| CorpusError::io(path, e))
    }

    /// Copies every image into `out` and writes `out/manifest.csv`. Paths that
    /// are not plain relative paths are rewritten to `images/<id>.<ext>`.
    pub fn write_dir(&self, out: &Path) -> Result<Corpus, CorpusError> {
        std::fs::create_dir_all(out).map_err(|e| CorpusError::io(out, e))?;
        let mut records = Vec::with_capacity(self.records.len());
        for r in &self.records {
            let rel = Path::new(&r.file_path);
            let plain = rel.components().all(|c| matches!(c, Component::Normal(_)));
            let rel_out = if plain {
                r.file_path.clone()
            } else {
                let ext = rel.extension().and_then(|e| e.to_str()).unwrap_or("png");
                format!("images/{}.{ext}", r.id)
            };
            let dest = out.join(&rel_out);
            if let Some(parent) = dest.parent() {
                std::fs::create_dir_all(parent).map_err(|e| CorpusError::io(parent, e))?;
            }
            let src = self.image_path(r);
            if src != dest {
                std::fs::copy(&src, &dest).map_err(|e| CorpusError::io(&src, e))?;
            }
            records.push(ImageRecord {
                file_path: rel_out,
                ..r.clone()
            });
        }
        let corpus = Corpus::from_records(out, records)?;
        corpus.export_manifest(&out.join(MANIFEST_FILE))?;
        Ok(corpus)
    }

    /// Deterministic sample of `n` records, shuffled by a generator seeded with
    /// `seed`. With `balance`, per-category counts differ by at most one.
    pub fn sample_task_set(&self, n: usize, seed: u64, balance: bool) -> Result<Vec<ImageRecord>, CorpusError> {
        if n == 0 || n > self.records.len() {
            return Err(CorpusError::InvalidParameter(format!(
                "task count must be in 1..={}, got {n}",
                self.records.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<&ImageRecord> = if balance {
            let mut order = Category::ALL;
            order.shuffle(&mut rng);
            let base = n / 3;
            let extra = n % 3;
            let mut out = Vec::with_capacity(n);
            for (rank, category) in order.iter().enumerate() {
                let want = base + usize::from(rank < extra);
                let mut pool: Vec<&ImageRecord> =
                    self.records.iter().filter(|r| r.category == *category).collect();
                if pool.len() < want {
                    return Err(CorpusError::InvalidParameter(format!(
                        "cannot draw a balanced set of {n}: only {} {category} records",
                        pool.len()
                    )));
                }
                pool.shuffle(&mut rng);
                out.extend(pool.into_iter().take(want));
            }
            out
        } else {
            let mut all: Vec<&ImageRecord> = self.records.iter().collect();
            all.shuffle(&mut rng);
            all.truncate(n);
            all
        };
        picked.shuffle(&mut rng);
        Ok(picked.into_iter().cloned().collect())
    }
}

impl GoldLabels for Corpus {
    fn gold(&self, image_id: &str) -> Option<(Category, Realism)> {
        self.get(image_id).map(|r| (r.category, r.realism))
    }
}
