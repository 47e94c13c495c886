//! Dataset-level orchestration: cached local features, vocabulary
//! building, batch encoding and cross-validated region annotation.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use log::{debug, warn};
use rayon::prelude::*;

use crate::bow::{assign_words, compose_representation, pyramid_bow, Approach, FeatureVector, Part, WordMap};
use crate::concepts::{
    annotate_image, cov_from_annotations, region_exemplars, train_annotator, AnnotatorKind, Concept, ConceptGrid,
    RegionApproach, RegionVocabularies, DEFAULT_NEIGHBOURS, N_CONCEPTS,
};
use crate::dataset::{DatasetManifest, FoldPlan, ImageEntry, RegionAnnotationMap, ANNOTATION_SUFFIX};
use crate::error::{Error, Result};
use crate::evaluation::{file_token, FeatureSet};
use crate::global_features::{
    color_histogram, color_moments, dwt_texture, pyramidal_color_moments, FeatureBlock, FeatureKind,
};
use crate::imaging::{half_of_position, image_dimensions, load_image, FeatureImage, Half, Image};
use crate::keypoints::{extract, DetectorParams, LocalFeatures, DESCRIPTOR_LEN};
use crate::store::{load_descriptors, save_descriptors, write_atomic, FeatureStore, COV_TAG};
use crate::vocabulary::{
    build_half_vocabularies, build_integrated_vocabulary, build_universal_vocabulary, HalfDescriptors, PointSet,
    Vocabulary, VocabularyKind, VocabularyOptions,
};

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Short stable fingerprint of detector settings, used to key descriptor caches.
pub fn params_fingerprint(params: &DetectorParams) -> String {
    let text = serde_json::to_string(params).expect("params serialise");
    format!("{:016x}", fnv1a(text.as_bytes()))
}

/// Local features per image, optionally cached on disk.
#[derive(Debug, Clone)]
pub struct LocalFeatureCache {
    dir: Option<PathBuf>,
    params: DetectorParams,
}

impl LocalFeatureCache {
    pub fn uncached(params: DetectorParams) -> Self {
        LocalFeatureCache { dir: None, params }
    }

    /// Cache under `root/descriptors/<fingerprint>`.
    pub fn in_dir(root: &Path, params: DetectorParams) -> Self {
        LocalFeatureCache {
            dir: Some(root.join("descriptors").join(params_fingerprint(&params))),
            params,
        }
    }

    pub fn params(&self) -> &DetectorParams {
        &self.params
    }

    fn path(&self, image_id: &str) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(format!("{}.desc", file_token(image_id))))
    }

    /// Cached features for `entry`, or features extracted from `image`
    /// (decoded from disk when not supplied).
    pub fn get(&self, entry: &ImageEntry, image: Option<&Image>) -> Result<LocalFeatures> {
        let path = self.path(&entry.image_id);
        if let Some(p) = path.as_ref().filter(|p| p.is_file()) {
            match load_descriptors(p) {
                Ok((id, f)) if id == entry.image_id => return Ok(f),
                Ok(_) | Err(_) => debug!("ignoring stale descriptor cache {}", p.display()),
            }
        }
        let features = match image {
            Some(img) => extract(img, &self.params),
            None => extract(&load_image(&entry.path)?, &self.params),
        };
        if let Some(p) = path {
            save_descriptors(&p, &entry.image_id, &features)?;
        }
        Ok(features)
    }
}

/// Descriptors grouped by category, and by half when requested.
#[derive(Debug, Clone, Default)]
pub struct DescriptorPools {
    pub per_category: BTreeMap<String, PointSet>,
    pub halves: BTreeMap<String, HalfDescriptors>,
}

impl DescriptorPools {
    pub fn pooled(&self) -> PointSet {
        let mut all = PointSet::new(DESCRIPTOR_LEN);
        for set in self.per_category.values() {
            for row in set.rows() {
                all.push(row).expect("descriptor length");
            }
        }
        all
    }
}

/// Collects descriptors from every image. Undecodable images are skipped with a warning.
pub fn gather_descriptors(
    manifest: &DatasetManifest,
    cache: &LocalFeatureCache,
    with_halves: bool,
) -> Result<DescriptorPools> {
    let results: Vec<Result<(LocalFeatures, usize)>> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let features = cache.get(e, None)?;
            let height = if with_halves { image_dimensions(&e.path)?.1 } else { 0 };
            Ok((features, height))
        })
        .collect();
    let mut pools = DescriptorPools::default();
    for c in &manifest.categories {
        pools.per_category.insert(c.clone(), PointSet::new(DESCRIPTOR_LEN));
        let halves = HalfDescriptors {
            upper: PointSet::new(DESCRIPTOR_LEN),
            lower: PointSet::new(DESCRIPTOR_LEN),
        };
        pools.halves.insert(c.clone(), halves);
    }
    let mut ok = 0;
    for (entry, result) in manifest.entries.iter().zip(results) {
        let (features, height) = match result {
            Ok(r) => r,
            Err(e) => {
                warn!("skipping {}: {e}", entry.image_id);
                continue;
            }
        };
        ok += 1;
        let all = pools.per_category.get_mut(&entry.category).expect("category listed");
        for d in &features.descriptors {
            all.push(d.as_slice())?;
        }
        if with_halves {
            let halves = pools.halves.get_mut(&entry.category).expect("category listed");
            for (k, d) in features.keypoints.iter().zip(&features.descriptors) {
                match half_of_position(f64::from(k.y), height) {
                    Half::Upper => halves.upper.push(d.as_slice())?,
                    Half::Lower => halves.lower.push(d.as_slice())?,
                }
            }
        }
    }
    if ok == 0 {
        return Err(Error::Empty("no decodable images"));
    }
    Ok(pools)
}

pub const VOCAB_DIR: &str = "vocab";

pub fn vocabulary_file_name(kind: VocabularyKind) -> &'static str {
    match kind {
        VocabularyKind::Universal => "universal.vocab",
        VocabularyKind::Integrated => "integrated.vocab",
        VocabularyKind::UpperIntegrated => "upper.vocab",
        VocabularyKind::LowerIntegrated => "lower.vocab",
    }
}

pub const ALL_VOCABULARY_KINDS: [VocabularyKind; 4] = [
    VocabularyKind::Universal,
    VocabularyKind::Integrated,
    VocabularyKind::UpperIntegrated,
    VocabularyKind::LowerIntegrated,
];

#[derive(Debug, Clone, Default)]
pub struct Vocabularies {
    pub universal: Option<Vocabulary>,
    pub integrated: Option<Vocabulary>,
    pub upper: Option<Vocabulary>,
    pub lower: Option<Vocabulary>,
}

impl Vocabularies {
    pub fn get(&self, kind: VocabularyKind) -> Option<&Vocabulary> {
        match kind {
            VocabularyKind::Universal => self.universal.as_ref(),
            VocabularyKind::Integrated => self.integrated.as_ref(),
            VocabularyKind::UpperIntegrated => self.upper.as_ref(),
            VocabularyKind::LowerIntegrated => self.lower.as_ref(),
        }
    }

    fn slot(&mut self, kind: VocabularyKind) -> &mut Option<Vocabulary> {
        match kind {
            VocabularyKind::Universal => &mut self.universal,
            VocabularyKind::Integrated => &mut self.integrated,
            VocabularyKind::UpperIntegrated => &mut self.upper,
            VocabularyKind::LowerIntegrated => &mut self.lower,
        }
    }

    pub fn region(&self) -> RegionVocabularies<'_> {
        RegionVocabularies {
            universal: self.universal.as_ref(),
            upper: self.upper.as_ref(),
            lower: self.lower.as_ref(),
        }
    }

    /// Loads whichever vocabulary files exist in `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let mut v = Vocabularies::default();
        for kind in ALL_VOCABULARY_KINDS {
            let path = dir.join(vocabulary_file_name(kind));
            if path.is_file() {
                let vocab = crate::store::load_vocabulary(&path)?;
                if vocab.kind() != kind {
                    return Err(Error::Format(format!(
                        "{} holds a {:?} vocabulary",
                        path.display(),
                        vocab.kind()
                    )));
                }
                *v.slot(kind) = Some(vocab);
            }
        }
        Ok(v)
    }

    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for kind in ALL_VOCABULARY_KINDS {
            if let Some(vocab) = self.get(kind) {
                let path = dir.join(vocabulary_file_name(kind));
                crate::store::save_vocabulary(&path, vocab)?;
                written.push(path);
            }
        }
        Ok(written)
    }
}

/// Builds the requested kinds; upper and lower are always built together.
pub fn build_vocabularies(
    pools: &DescriptorPools,
    kinds: &[VocabularyKind],
    words: usize,
    seed: u64,
    opts: &VocabularyOptions,
) -> Result<Vocabularies> {
    let mut v = Vocabularies::default();
    if kinds.contains(&VocabularyKind::Universal) {
        v.universal = Some(build_universal_vocabulary(&pools.pooled(), words, seed, opts)?);
    }
    if kinds.contains(&VocabularyKind::Integrated) {
        v.integrated = Some(build_integrated_vocabulary(&pools.per_category, words, seed, opts)?);
    }
    if kinds.contains(&VocabularyKind::UpperIntegrated) || kinds.contains(&VocabularyKind::LowerIntegrated) {
        let (upper, lower) = build_half_vocabularies(&pools.halves, words, seed, opts)?;
        v.upper = Some(upper);
        v.lower = Some(lower);
    }
    Ok(v)
}

/// Encodes one image under several approaches, quantising descriptors and
/// extracting each colour block once.
pub fn encode_features(
    image: &FeatureImage,
    local: &LocalFeatures,
    approaches: &[Approach],
    vocabs: &Vocabularies,
    pyramid_weights: &[f64],
) -> Result<Vec<FeatureVector>> {
    let mut words: HashMap<VocabularyKind, WordMap> = HashMap::new();
    let mut blocks: Vec<FeatureBlock> = Vec::new();
    let full = image.full_bounds();
    let mut out = Vec::with_capacity(approaches.len());
    for &approach in approaches {
        let recipe = approach.recipe();
        let mut parts = Vec::with_capacity(2);
        if let Some((kind, level)) = recipe.bow {
            if let std::collections::hash_map::Entry::Vacant(e) = words.entry(kind) {
                let vocab = vocabs.get(kind).ok_or(match kind {
                    VocabularyKind::Universal => Error::MissingVocabulary("universal"),
                    _ => Error::MissingVocabulary("integrated"),
                })?;
                e.insert(assign_words(local, vocab)?);
            }
            parts.push(Part::Bow(pyramid_bow(
                &words[&kind],
                image.width(),
                image.height(),
                level,
            )?));
        }
        for kind in recipe.colour {
            let raw_kind = match kind {
                FeatureKind::WPColMom { level } => FeatureKind::PColMom { level },
                k => k,
            };
            let block = match blocks.iter().find(|b| b.kind == raw_kind) {
                Some(b) => b.clone(),
                None => {
                    let b = match raw_kind {
                        FeatureKind::ColHist => color_histogram(image, &full)?,
                        FeatureKind::ColMom => color_moments(image, &full)?,
                        FeatureKind::Dwt => dwt_texture(image, &full)?,
                        FeatureKind::PColMom { level } | FeatureKind::WPColMom { level } => {
                            pyramidal_color_moments(image, level as usize)?
                        }
                    };
                    blocks.push(b.clone());
                    b
                }
            };
            parts.push(Part::Block(block));
        }
        out.push(compose_representation(approach, &parts, pyramid_weights)?);
    }
    Ok(out)
}

fn needs_local_features(approaches: &[Approach]) -> bool {
    approaches.iter().any(|a| a.needs_vocabulary().is_some())
}

/// Encodes a decoded query image.
pub fn encode_query(
    image: &Image,
    approach: Approach,
    vocabs: &Vocabularies,
    pyramid_weights: &[f64],
    params: &DetectorParams,
) -> Result<FeatureVector> {
    let local = if approach.needs_vocabulary().is_some() {
        extract(image, params)
    } else {
        LocalFeatures::default()
    };
    let fi = FeatureImage::from_image(image);
    let mut v = encode_features(&fi, &local, &[approach], vocabs, pyramid_weights)?;
    Ok(v.remove(0))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EncodeSummary {
    pub encoded: usize,
    pub skipped: usize,
    pub failed: Vec<(String, String)>,
}

/// Adds a vector for every image missing from any requested store.
pub fn encode_dataset(
    manifest: &DatasetManifest,
    approaches: &[Approach],
    vocabs: &Vocabularies,
    pyramid_weights: &[f64],
    cache: &LocalFeatureCache,
    stores: &mut BTreeMap<Approach, FeatureStore>,
) -> Result<EncodeSummary> {
    if approaches.is_empty() {
        return Err(Error::Empty("approach list"));
    }
    for a in approaches {
        if let Some(kind) = a.needs_vocabulary() {
            if vocabs.get(kind).is_none() {
                return Err(Error::MissingVocabulary(if kind == VocabularyKind::Universal {
                    "universal"
                } else {
                    "integrated"
                }));
            }
        }
    }
    let pending: Vec<&ImageEntry> = manifest
        .entries
        .iter()
        .filter(|e| {
            approaches
                .iter()
                .any(|a| !stores.get(a).is_some_and(|s| s.contains(&e.image_id)))
        })
        .collect();
    let mut summary = EncodeSummary {
        skipped: manifest.len() - pending.len(),
        ..EncodeSummary::default()
    };
    let with_local = needs_local_features(approaches);
    let results: Vec<Result<Vec<FeatureVector>>> = pending
        .par_iter()
        .map(|e| {
            let img = load_image(&e.path)?;
            let local = if with_local {
                cache.get(e, Some(&img))?
            } else {
                LocalFeatures::default()
            };
            encode_features(
                &FeatureImage::from_image(&img),
                &local,
                approaches,
                vocabs,
                pyramid_weights,
            )
        })
        .collect();
    for (entry, result) in pending.iter().zip(results) {
        match result {
            Ok(vectors) => {
                for v in vectors {
                    let store = stores
                        .entry(v.approach)
                        .or_insert_with(|| FeatureStore::new(v.approach.tag(), v.dim()));
                    if !store.contains(&entry.image_id) {
                        store.insert(entry.image_id.clone(), &v.values)?;
                    }
                }
                summary.encoded += 1;
            }
            Err(e) => {
                warn!("failed to encode {}: {e}", entry.image_id);
                summary.failed.push((entry.image_id.clone(), e.to_string()));
            }
        }
    }
    if !pending.is_empty() && summary.encoded == 0 {
        return Err(Error::Decode(format!("all {} pending images failed", pending.len())));
    }
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnotationConfig {
    pub approach: RegionApproach,
    pub k: usize,
    pub kind: AnnotatorKind,
    pub rows: usize,
    pub cols: usize,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        AnnotationConfig {
            approach: RegionApproach::IbowColHist,
            k: DEFAULT_NEIGHBOURS,
            kind: AnnotatorKind::Knn,
            rows: 10,
            cols: 10,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationOutcome {
    pub grids: BTreeMap<String, ConceptGrid>,
    /// Concepts absent from a fold's training data, per (fold, half).
    pub missing_concepts: Vec<(usize, Half, Vec<Concept>)>,
}

type Exemplars = Vec<(Vec<f64>, Concept)>;

fn load_for_regions(
    entry: &ImageEntry,
    approach: RegionApproach,
    cache: &LocalFeatureCache,
) -> Result<(FeatureImage, LocalFeatures)> {
    let img = load_image(&entry.path)?;
    let local = if approach.uses_vocabulary() {
        cache.get(entry, Some(&img))?
    } else {
        LocalFeatures::default()
    };
    Ok((FeatureImage::from_image(&img), local))
}

/// Annotates every image with half-specific models trained only on the
/// annotated images outside the image's query fold.
pub fn cross_annotate(
    manifest: &DatasetManifest,
    annotations: &RegionAnnotationMap,
    plan: &FoldPlan,
    config: &AnnotationConfig,
    vocabs: &Vocabularies,
    cache: &LocalFeatureCache,
) -> Result<AnnotationOutcome> {
    let region_vocabs = vocabs.region();
    let fold_of: HashMap<&str, usize> = plan
        .folds
        .iter()
        .enumerate()
        .flat_map(|(f, fold)| fold.queries.iter().flatten().map(move |id| (id.as_str(), f)))
        .collect();
    let annotated: Vec<&ImageEntry> = manifest
        .entries
        .iter()
        .filter(|e| annotations.contains_key(&e.image_id))
        .collect();
    if annotated.is_empty() {
        return Err(Error::Annotation(
            "no ground-truth annotations match the dataset".into(),
        ));
    }
    let exemplars: Vec<(usize, Exemplars, Exemplars)> = annotated
        .par_iter()
        .map(|e| {
            let (fi, local) = load_for_regions(e, config.approach, cache)?;
            let grid = &annotations[&e.image_id];
            if (grid.rows, grid.cols) != (config.rows, config.cols) {
                return Err(Error::Annotation(format!(
                    "{}: {}x{} grid, expected {}x{}",
                    e.image_id, grid.rows, grid.cols, config.rows, config.cols
                )));
            }
            let (upper, lower) = region_exemplars(&fi, &local, grid, config.approach, &region_vocabs)?;
            let fold = fold_of.get(e.image_id.as_str()).copied().unwrap_or(usize::MAX);
            Ok((fold, upper, lower))
        })
        .collect::<Result<Vec<_>>>()?;

    let space = FeatureImage::from_image(&load_image(&annotated[0].path)?).space();
    let mut outcome = AnnotationOutcome::default();
    for (f, fold) in plan.folds.iter().enumerate() {
        let mut training = (Vec::new(), Vec::new());
        for (fold_id, upper, lower) in &exemplars {
            if *fold_id != f {
                training.0.extend(upper.iter().cloned());
                training.1.extend(lower.iter().cloned());
            }
        }
        let upper = train_annotator(training.0, Half::Upper, config.approach, space, config.k, config.kind)?;
        let lower = train_annotator(training.1, Half::Lower, config.approach, space, config.k, config.kind)?;
        for model in [&upper, &lower] {
            let known = model.known_concepts();
            let missing: Vec<Concept> = Concept::ALL.into_iter().filter(|c| !known.contains(c)).collect();
            if !missing.is_empty() {
                let names: Vec<&str> = missing.iter().map(|c| c.name()).collect();
                warn!("fold {f} {:?} training set lacks: {}", model.half, names.join(", "));
                outcome.missing_concepts.push((f, model.half, missing));
            }
        }
        let queries: Vec<&ImageEntry> = fold
            .queries
            .iter()
            .flatten()
            .filter_map(|id| manifest.entry(id))
            .collect();
        let grids = queries
            .par_iter()
            .map(|e| {
                let (fi, local) = load_for_regions(e, config.approach, cache)?;
                annotate_image(&fi, &local, (&upper, &lower), &region_vocabs, config.rows, config.cols)
            })
            .collect::<Result<Vec<_>>>()?;
        for (e, g) in queries.iter().zip(grids) {
            outcome.grids.insert(e.image_id.clone(), g);
        }
    }
    Ok(outcome)
}

/// COVs of the given grids as a feature store.
pub fn cov_store(grids: &BTreeMap<String, ConceptGrid>) -> Result<FeatureStore> {
    let mut store = FeatureStore::new(COV_TAG, N_CONCEPTS);
    for (id, grid) in grids {
        store.insert(id.clone(), &cov_from_annotations(grid).to_vec())?;
    }
    Ok(store)
}

/// COV export lines for the given grids, in image_id order.
pub fn cov_export(grids: &BTreeMap<String, ConceptGrid>) -> String {
    grids
        .iter()
        .map(|(id, g)| cov_from_annotations(g).export_line(id) + "\n")
        .collect()
}

/// Writes `<image_id>.regions.txt` files; returns how many changed.
pub fn write_annotations(dir: &Path, grids: &BTreeMap<String, ConceptGrid>) -> Result<usize> {
    let mut changed = 0;
    for (id, grid) in grids {
        let path = dir.join(format!("{id}{ANNOTATION_SUFFIX}"));
        changed += usize::from(write_atomic(&path, grid.to_text().as_bytes())?);
    }
    Ok(changed)
}

/// Benchmark input from a store.
pub fn feature_set(name: &str, store: &FeatureStore) -> FeatureSet {
    FeatureSet {
        name: name.to_string(),
        tag: store.tag,
        vectors: store.to_map(),
    }
}
