//! Category-labelled image collections, region annotations and fold plans.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::concepts::ConceptGrid;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const ANNOTATION_SUFFIX: &str = ".regions.txt";
pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "pgm"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub image_id: String,
    pub path: PathBuf,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ImageEntry>,
    pub categories: Vec<String>,
}

impl DatasetManifest {
    /// Validates and orders entries by (category, image_id).
    pub fn new(root: PathBuf, mut entries: Vec<ImageEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::NoCategories(root.clone()));
        }
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.image_id.clone()) {
                return Err(Error::DuplicateImageId(e.image_id.clone()));
            }
        }
        entries.sort_by(|a, b| a.category.cmp(&b.category).then_with(|| a.image_id.cmp(&b.image_id)));
        let categories: Vec<String> = entries
            .iter()
            .map(|e| e.category.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if categories.len() < 2 {
            return Err(Error::TooFewCategories(categories.len()));
        }
        Ok(DatasetManifest {
            root,
            entries,
            categories,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn category_count(&self) -> usize {
        self.categories.len()
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.binary_search_by(|c| c.as_str().cmp(name)).ok()
    }

    pub fn entry(&self, image_id: &str) -> Option<&ImageEntry> {
        self.entries.iter().find(|e| e.image_id == image_id)
    }

    /// Image ids of one category, ascending.
    pub fn images_in(&self, category: &str) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.category == category)
            .map(|e| e.image_id.as_str())
            .collect()
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Reads `root/manifest.tsv` if present, otherwise one sub-directory per category.
pub fn load_manifest(root: &Path) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::MissingRoot(root.to_path_buf()));
    }
    let manifest = root.join(MANIFEST_FILE);
    if manifest.is_file() {
        let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        return parse_manifest(root, &text);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|d| d.ok().map(|d| d.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::NoCategories(root.to_path_buf()));
    }
    let mut entries = Vec::new();
    for dir in dirs {
        let category = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut images: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|d| d.ok().map(|d| d.path()))
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        if images.is_empty() {
            return Err(Error::EmptyCategory(category));
        }
        images.sort();
        for path in images {
            entries.push(ImageEntry {
                image_id: file_stem(&path),
                path,
                category: category.clone(),
            });
        }
    }
    DatasetManifest::new(root.to_path_buf(), entries)
}

/// Parses tab-separated `image_id  path  category` lines; relative paths resolve against `root`.
pub fn parse_manifest(root: &Path, text: &str) -> Result<DatasetManifest> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Manifest {
                line: i + 1,
                reason: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let path = Path::new(fields[1]);
        entries.push(ImageEntry {
            image_id: fields[0].to_string(),
            path: if path.is_absolute() {
                path.to_path_buf()
            } else {
                root.join(path)
            },
            category: fields[2].to_string(),
        });
    }
    DatasetManifest::new(root.to_path_buf(), entries)
}

pub type RegionAnnotationMap = BTreeMap<String, ConceptGrid>;

/// Loads every `<image_id>.regions.txt` below `path` (or the single file `path`).
pub fn load_region_annotations(path: &Path, rows: usize, cols: usize) -> Result<RegionAnnotationMap> {
    let mut map = RegionAnnotationMap::new();
    if !path.exists() {
        return Err(Error::MissingRoot(path.to_path_buf()));
    }
    for entry in WalkDir::new(path).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Annotation(e.to_string()))?;
        let name = entry.file_name().to_string_lossy();
        let Some(image_id) = name.strip_suffix(ANNOTATION_SUFFIX) else {
            continue;
        };
        if !entry.file_type().is_file() {
            continue;
        }
        let text = fs::read_to_string(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
        let grid = ConceptGrid::parse(&text, rows, cols)
            .map_err(|e| Error::Annotation(format!("{}: {e}", entry.path().display())))?;
        if map.insert(image_id.to_string(), grid).is_some() {
            return Err(Error::DuplicateImageId(image_id.to_string()));
        }
    }
    Ok(map)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    /// Query image ids per category, in manifest category order.
    pub queries: Vec<Vec<String>>,
    pub database: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub categories: Vec<String>,
    pub folds: Vec<FoldSplit>,
}

pub const DEFAULT_FOLDS: usize = 10;

/// Sizes of `n` near-equal parts of `len`, remainder to the earliest parts.
pub fn fold_sizes(len: usize, n: usize) -> Vec<usize> {
    (0..n).map(|i| len / n + usize::from(i < len % n)).collect()
}

pub fn split_folds(manifest: &DatasetManifest, n_folds: usize, seed: u64) -> Result<FoldPlan> {
    if n_folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {n_folds}")));
    }
    let mut parts_per_cat = Vec::with_capacity(manifest.categories.len());
    for (ci, category) in manifest.categories.iter().enumerate() {
        let mut ids: Vec<String> = manifest.images_in(category).into_iter().map(String::from).collect();
        if ids.len() < n_folds {
            return Err(Error::CategoryTooSmall {
                category: category.clone(),
                count: ids.len(),
                folds: n_folds,
            });
        }
        let mut rng = stream_rng(seed, Stream::Folds, ci as u64);
        ids.shuffle(&mut rng);
        let mut parts = Vec::with_capacity(n_folds);
        let mut start = 0;
        for size in fold_sizes(ids.len(), n_folds) {
            let mut part = ids[start..start + size].to_vec();
            part.sort();
            parts.push(part);
            start += size;
        }
        parts_per_cat.push(parts);
    }
    let folds = (0..n_folds)
        .map(|f| {
            let mut queries = Vec::new();
            let mut database = Vec::new();
            for parts in &parts_per_cat {
                queries.push(parts[f].clone());
                let mut db: Vec<String> = parts
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != f)
                    .flat_map(|(_, p)| p.iter().cloned())
                    .collect();
                db.sort();
                database.push(db);
            }
            FoldSplit { queries, database }
        })
        .collect();
    Ok(FoldPlan {
        seed,
        categories: manifest.categories.clone(),
        folds,
    })
}

impl FoldPlan {
    /// Fold index in which `image_id` is a query.
    pub fn query_fold(&self, image_id: &str) -> Option<usize> {
        self.folds
            .iter()
            .position(|f| f.queries.iter().any(|q| q.iter().any(|id| id == image_id)))
    }

    /// Lines of `fold  category  role  image_id`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# seed {}", self.seed);
        for (f, fold) in self.folds.iter().enumerate() {
            for (role, sets) in [("query", &fold.queries), ("db", &fold.database)] {
                for (category, ids) in self.categories.iter().zip(sets) {
                    for id in ids {
                        let _ = writeln!(out, "{f}\t{category}\t{role}\t{id}");
                    }
                }
            }
        }
        out
    }
}
