//! Dataset layout on disk and the loaders that turn it into core types.
//!
//! A dataset root holds `rgb/`, `depth/`, optionally `pseudo/` and `gt/`, and
//! optionally `split.csv` (`id,split` with split `train` or `eval`). Files
//! pair up by stem. Ground-truth paths are kept apart from the entries and
//! are only reachable through [`GroundTruth`], whose reads are logged as
//! [`Purpose::Eval`]; every training-side read is logged as
//! [`Purpose::Train`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dsu_core::field::resize_bilinear;
use dsu_core::trainer::TrainSample;
use dsu_core::ScalarField;

use crate::config::Config;
use crate::error::{CliError, Result};
use crate::image_io::{read_gray, read_rgb, Purpose, IMAGE_EXTENSIONS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Eval,
}

impl SplitTag {
    pub fn name(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub id: String,
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub pseudo: Option<PathBuf>,
    /// `None` when the dataset has no split file.
    pub split: Option<SplitTag>,
}

#[derive(Debug, Clone, Default)]
pub struct DatasetManifest {
    entries: Vec<Entry>,
    gt: BTreeMap<String, PathBuf>,
}

/// Image files of a directory by stem. A missing directory is empty.
fn scan(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let Ok(read) = fs::read_dir(dir) else {
        return Ok(out);
    };
    for item in read {
        let path = item.map_err(|e| CliError::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()).map(String::from) else {
            continue;
        };
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            return Err(CliError::Data(format!(
                "{stem}: two files share the stem ({} and {})",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

fn read_split(root: &Path) -> Result<Option<BTreeMap<String, SplitTag>>> {
    let path = root.join("split.csv");
    if !path.exists() {
        return Ok(None);
    }
    let mut reader = csv::Reader::from_path(&path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let (Some(id), Some(tag)) = (row.get(0), row.get(1)) else {
            return Err(CliError::Data(format!(
                "{}: expected id,split rows",
                path.display()
            )));
        };
        let tag = match tag {
            "train" => SplitTag::Train,
            "eval" => SplitTag::Eval,
            other => {
                return Err(CliError::Data(format!(
                    "{}: unknown split {other:?} for {id}",
                    path.display()
                )))
            }
        };
        out.insert(id.to_string(), tag);
    }
    Ok(Some(out))
}

/// Pairs up `rgb/`, `depth/`, `pseudo/` and `gt/` by stem, in lexicographic
/// order of the stems.
pub fn ingest(root: &Path) -> Result<DatasetManifest> {
    let rgb = scan(&root.join("rgb"))?;
    let depth = scan(&root.join("depth"))?;
    let pseudo = scan(&root.join("pseudo"))?;
    let gt = scan(&root.join("gt"))?;
    if let Some(stem) = depth.keys().find(|k| !rgb.contains_key(*k)) {
        return Err(CliError::Data(format!(
            "{stem}: depth map has no rgb counterpart"
        )));
    }
    if rgb.is_empty() {
        log::warn!("{}: no images found; the manifest is empty", root.display());
        return Ok(DatasetManifest::default());
    }
    let split = read_split(root)?;
    let mut entries = Vec::with_capacity(rgb.len());
    for (id, rgb_path) in rgb {
        let depth_path = depth
            .get(&id)
            .ok_or_else(|| CliError::Data(format!("{id}: rgb image has no depth counterpart")))?;
        let tag = match &split {
            None => None,
            Some(map) => Some(
                *map.get(&id)
                    .ok_or_else(|| CliError::Data(format!("{id}: missing from split.csv")))?,
            ),
        };
        entries.push(Entry {
            pseudo: pseudo.get(&id).cloned(),
            depth: depth_path.clone(),
            rgb: rgb_path,
            split: tag,
            id,
        });
    }
    Ok(DatasetManifest { entries, gt })
}

impl DatasetManifest {
    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries of one split; all entries when there is no split file.
    pub fn split(&self, tag: SplitTag) -> Vec<&Entry> {
        self.entries
            .iter()
            .filter(|e| e.split.is_none_or(|t| t == tag))
            .collect()
    }

    /// Evaluation-only access to the ground truth.
    pub fn ground_truth(&self) -> GroundTruth<'_> {
        GroundTruth { paths: &self.gt }
    }
}

pub struct GroundTruth<'a> {
    paths: &'a BTreeMap<String, PathBuf>,
}

impl GroundTruth<'_> {
    pub fn has(&self, id: &str) -> bool {
        self.paths.contains_key(id)
    }

    pub fn is_complete<'e>(&self, entries: impl IntoIterator<Item = &'e Entry>) -> bool {
        entries.into_iter().all(|e| self.has(&e.id))
    }

    /// Mask at source resolution, thresholded at 0.5.
    pub fn load(&self, id: &str) -> Result<ScalarField> {
        let path = self
            .paths
            .get(id)
            .ok_or_else(|| CliError::Data(format!("{id}: no ground truth")))?;
        Ok(read_gray(path, Purpose::Eval)?.binarize(0.5))
    }
}

/// Image and depth of one entry at the configured input size, plus the
/// source dimensions.
pub fn load_sample(entry: &Entry, cfg: &Config) -> Result<(TrainSample, (usize, usize))> {
    let rgb = read_rgb(&entry.rgb, Purpose::Train)?;
    let depth = read_gray(&entry.depth, Purpose::Train)?;
    if depth.dims() != rgb.dims() {
        return Err(CliError::Data(format!(
            "{}: depth is {:?} but rgb is {:?}",
            entry.id,
            depth.dims(),
            rgb.dims()
        )));
    }
    let n = cfg.input_size;
    let mut depth = resize_bilinear(&depth, n, n)?;
    if cfg.depth_invert {
        depth = depth.complement();
    }
    let sample = TrainSample {
        id: entry.id.clone(),
        rgb: rgb.resize_bilinear(n, n)?,
        depth,
    };
    Ok((sample, rgb.dims()))
}

/// Label image `dir/{id}.*` resized to `size × size`.
pub fn load_label(dir: &Path, id: &str, size: usize) -> Result<ScalarField> {
    let path = IMAGE_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{id}.{ext}")))
        .find(|p| p.exists())
        .ok_or_else(|| CliError::Data(format!("{id}: no label in {}", dir.display())))?;
    let label = read_gray(&path, Purpose::Train)?;
    Ok(resize_bilinear(&label, size, size)?)
}
