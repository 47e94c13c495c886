use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use scenecbir_core::bow::Approach;
use scenecbir_core::concepts::{AnnotatorKind, RegionApproach};
use scenecbir_core::dataset::{load_manifest, load_region_annotations, split_folds, DatasetManifest, FoldPlan};
use scenecbir_core::evaluation::{export_pr_curves, export_report, run_benchmark, EvalReport, REPORT_JSON_FILE};
use scenecbir_core::imaging::load_image;
use scenecbir_core::pipeline::{
    build_vocabularies, cov_export, cov_store, cross_annotate, encode_dataset, encode_query, feature_set,
    gather_descriptors, params_fingerprint, write_annotations, AnnotationConfig, LocalFeatureCache, Vocabularies,
    VOCAB_DIR,
};
use scenecbir_core::retrieval::{build_index, IndexEntry, RetrievalIndex};
use scenecbir_core::store::{at_storage_precision, write_atomic, FeatureStore};
use scenecbir_core::vocabulary::VocabularyKind;

use crate::config::RunConfig;
use crate::representation::Representation;
use crate::{Command, CommonArgs, KindArg};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(scenecbir_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Data(e) => write!(f, "{e}"),
        }
    }
}

impl From<scenecbir_core::Error> for CliError {
    fn from(e: scenecbir_core::Error) -> Self {
        CliError::Data(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn load_config(common: &CommonArgs) -> CliResult<RunConfig> {
    let mut config = match &common.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            RunConfig::from_text(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(d) = &common.dataset {
        config.dataset = Some(d.clone());
    }
    if let Some(s) = common.seed {
        config.seed = s;
    }
    if let Some(t) = common.threads {
        config.threads = t;
    }
    if let Some(o) = &common.out {
        config.out = o.clone();
    }
    Ok(config)
}

fn dataset_root(config: &RunConfig) -> CliResult<&Path> {
    let root = config
        .dataset
        .as_deref()
        .ok_or_else(|| usage("--dataset is required (or `dataset` in the config file)"))?;
    if !root.is_dir() {
        return Err(usage(format!("dataset root {} does not exist", root.display())));
    }
    Ok(root)
}

fn manifest(config: &RunConfig) -> CliResult<DatasetManifest> {
    Ok(load_manifest(dataset_root(config)?)?)
}

fn fold_plan(config: &RunConfig, manifest: &DatasetManifest) -> CliResult<FoldPlan> {
    let plan = split_folds(manifest, config.folds, config.seed)?;
    write_atomic(&config.out.join("folds.txt"), plan.to_text().as_bytes())?;
    Ok(plan)
}

fn feature_cache(config: &RunConfig) -> LocalFeatureCache {
    LocalFeatureCache::in_dir(&config.out, config.detector)
}

fn load_store(config: &RunConfig, rep: Representation) -> CliResult<FeatureStore> {
    let path = rep.store_path(&config.out);
    if !path.is_file() {
        return Err(CliError::Data(scenecbir_core::Error::MissingFeature(format!(
            "no feature store for {rep} at {}",
            path.display()
        ))));
    }
    Ok(FeatureStore::load(&path)?)
}

fn index_from_store(manifest: &DatasetManifest, store: &FeatureStore) -> CliResult<RetrievalIndex> {
    let entries = manifest
        .entries
        .iter()
        .filter_map(|e| {
            store.get(&e.image_id).map(|vector| IndexEntry {
                image_id: e.image_id.clone(),
                category: e.category.clone(),
                vector,
            })
        })
        .collect();
    Ok(build_index(entries, store.tag)?)
}

pub fn run(common: &CommonArgs, command: &Command) -> CliResult<()> {
    let config = load_config(common)?;
    if config.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build_global()
            .map_err(|e| usage(format!("cannot configure {} threads: {e}", config.threads)))?;
    }
    match command {
        Command::BuildVocab { kinds, k } => build_vocab(config, kinds, *k),
        Command::Encode { approaches } => encode(config, approaches),
        Command::Annotate {
            approach,
            use_ground_truth,
            annotations,
            k,
            annotator,
            folds,
        } => {
            let mut config = config;
            if let Some(a) = approach {
                config.region_approach = a.parse::<RegionApproach>().map_err(|e| usage(e.to_string()))?;
            }
            if let Some(k) = k {
                config.neighbours = *k;
            }
            if let Some(a) = annotator {
                config.annotator = a.parse::<AnnotatorKind>().map_err(|e| usage(e.to_string()))?;
            }
            if let Some(f) = folds {
                config.folds = *f;
            }
            if let Some(a) = annotations {
                config.annotations = Some(a.clone());
            }
            annotate(config, *use_ground_truth)
        }
        Command::Index { approaches } => index(config, approaches),
        Command::Query { image, approach, top } => query(config, image, *approach, *top),
        Command::Evaluate { approaches, folds } => {
            let mut config = config;
            if let Some(f) = folds {
                config.folds = *f;
            }
            evaluate(config, approaches)
        }
        Command::ExportPr { report, dest } => export_pr(config, report.as_deref(), dest.as_deref()),
    }
}

fn record_config(config: &RunConfig) -> CliResult<()> {
    write_atomic(&config.out.join("config.txt"), config.to_text().as_bytes())?;
    Ok(())
}

fn build_vocab(mut config: RunConfig, kinds: &[KindArg], k: Option<usize>) -> CliResult<()> {
    if let Some(k) = k {
        config.words = k;
    }
    if config.words == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let manifest = manifest(&config)?;
    record_config(&config)?;
    let mut wanted = Vec::new();
    for kind in kinds {
        match kind {
            KindArg::Universal => wanted.push(VocabularyKind::Universal),
            KindArg::Integrated => wanted.push(VocabularyKind::Integrated),
            KindArg::Halves => wanted.extend([VocabularyKind::UpperIntegrated, VocabularyKind::LowerIntegrated]),
            KindArg::All => wanted.extend(scenecbir_core::pipeline::ALL_VOCABULARY_KINDS),
        }
    }
    let halves = wanted
        .iter()
        .any(|k| matches!(k, VocabularyKind::UpperIntegrated | VocabularyKind::LowerIntegrated));
    let pools = gather_descriptors(&manifest, &feature_cache(&config), halves)?;
    let vocabs = build_vocabularies(&pools, &wanted, config.words, config.seed, &config.vocabulary_options())?;
    for path in vocabs.save(&config.out.join(VOCAB_DIR))? {
        let v = scenecbir_core::store::load_vocabulary(&path)?;
        println!("{}\t{} words", path.display(), v.n_words());
    }
    Ok(())
}

fn approaches_or_default(config: &RunConfig, given: &[Representation]) -> Vec<Representation> {
    if given.is_empty() {
        config.approaches.clone()
    } else {
        given.to_vec()
    }
}

fn encode(config: RunConfig, given: &[Representation]) -> CliResult<()> {
    let reps = approaches_or_default(&config, given);
    let mut approaches: Vec<Approach> = Vec::new();
    for r in &reps {
        match r {
            Representation::Approach(a) => approaches.push(*a),
            Representation::Cov(_) => {
                return Err(usage(format!("{r} vectors are produced by `annotate`, not `encode`")))
            }
        }
    }
    let manifest = manifest(&config)?;
    record_config(&config)?;
    let vocabs = Vocabularies::load(&config.out.join(VOCAB_DIR))?;
    let mut stores = BTreeMap::new();
    for &a in &approaches {
        let path = Representation::Approach(a).store_path(&config.out);
        if path.is_file() {
            stores.insert(a, FeatureStore::load(&path)?);
        }
    }
    let summary = encode_dataset(
        &manifest,
        &approaches,
        &vocabs,
        &config.pyramid_weights,
        &feature_cache(&config),
        &mut stores,
    )?;
    for (a, store) in &stores {
        let path = Representation::Approach(*a).store_path(&config.out);
        let written = store.save(&path)?;
        info!("{} {}", path.display(), if written { "written" } else { "unchanged" });
        println!("{a}\t{} vectors\tdim {}", store.len(), store.dim);
    }
    println!(
        "encoded {}, already present {}, failed {}",
        summary.encoded,
        summary.skipped,
        summary.failed.len()
    );
    if let Some((id, why)) = summary.failed.first() {
        return Err(CliError::Data(scenecbir_core::Error::Decode(format!(
            "{} image(s) failed, first {id}: {why}",
            summary.failed.len()
        ))));
    }
    Ok(())
}

fn annotate(config: RunConfig, use_ground_truth: bool) -> CliResult<()> {
    let manifest = manifest(&config)?;
    record_config(&config)?;
    let source = config.annotations.clone().unwrap_or_else(|| manifest.root.clone());
    let annotations = load_region_annotations(&source, config.grid_rows, config.grid_cols)?;
    let (rep, grids) = if use_ground_truth {
        let grids: BTreeMap<_, _> = annotations
            .into_iter()
            .filter(|(id, _)| manifest.entry(id).is_some())
            .collect();
        if grids.is_empty() {
            return Err(CliError::Data(scenecbir_core::Error::Annotation(format!(
                "no annotations for dataset images under {}",
                source.display()
            ))));
        }
        (Representation::Cov(None), grids)
    } else {
        let plan = fold_plan(&config, &manifest)?;
        let vocabs = Vocabularies::load(&config.out.join(VOCAB_DIR))?;
        let ann = AnnotationConfig {
            approach: config.region_approach,
            k: config.neighbours,
            kind: config.annotator,
            rows: config.grid_rows,
            cols: config.grid_cols,
        };
        let outcome = cross_annotate(&manifest, &annotations, &plan, &ann, &vocabs, &feature_cache(&config))?;
        let dir = config
            .out
            .join("annotations")
            .join(scenecbir_core::evaluation::file_token(config.region_approach.name()));
        write_annotations(&dir, &outcome.grids)?;
        (Representation::Cov(Some(config.region_approach)), outcome.grids)
    };
    let store = cov_store(&grids)?;
    let path = rep.store_path(&config.out);
    store.save(&path)?;
    let export = path.with_extension("txt");
    write_atomic(&export, cov_export(&grids).as_bytes())?;
    println!("{rep}\t{} vectors\t{}", store.len(), export.display());
    Ok(())
}

fn index(config: RunConfig, given: &[Representation]) -> CliResult<()> {
    let manifest = manifest(&config)?;
    for rep in approaches_or_default(&config, given) {
        let store = load_store(&config, rep)?;
        let index = index_from_store(&manifest, &store)?;
        println!("{rep}\t{} entries\tdim {}", index.len(), index.dim());
    }
    Ok(())
}

fn query(config: RunConfig, image: &Path, rep: Representation, top: Option<usize>) -> CliResult<()> {
    let Representation::Approach(approach) = rep else {
        return Err(usage(
            "COV queries need an annotated query image; query with an image approach",
        ));
    };
    let manifest = manifest(&config)?;
    let store = load_store(&config, rep)?;
    if store.tag != approach.tag() {
        return Err(usage(format!("store holds tag {}, not {approach}", store.tag)));
    }
    let img = load_image(image)?;
    let vocabs = Vocabularies::load(&config.out.join(VOCAB_DIR))?;
    let v = encode_query(&img, approach, &vocabs, &config.pyramid_weights, &config.detector)?;
    let index = index_from_store(&manifest, &store)?;
    let q = at_storage_precision(&v.values, store.tag);
    let ranked = index.query(&q, top)?;
    print!("{}", ranked.to_text());
    Ok(())
}

fn evaluate(config: RunConfig, given: &[Representation]) -> CliResult<()> {
    let manifest = manifest(&config)?;
    record_config(&config)?;
    let plan = fold_plan(&config, &manifest)?;
    let reps = approaches_or_default(&config, given);
    let mut sets = Vec::with_capacity(reps.len());
    for rep in &reps {
        let store = load_store(&config, *rep)?;
        sets.push(feature_set(&rep.to_string(), &store));
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("seed".to_string(), config.seed.to_string());
    metadata.insert("folds".to_string(), config.folds.to_string());
    metadata.insert("words_per_vocabulary".to_string(), config.words.to_string());
    metadata.insert("categories".to_string(), manifest.category_count().to_string());
    metadata.insert("images".to_string(), manifest.len().to_string());
    metadata.insert("annotator".to_string(), config.annotator.to_string());
    metadata.insert("neighbours".to_string(), config.neighbours.to_string());
    metadata.insert("detector".to_string(), params_fingerprint(&config.detector));
    let report = run_benchmark(&plan, &sets, metadata)?;
    export_report(&report, &config.out.join("report"))?;
    for a in &report.approaches {
        println!("{}\t{:.4}", a.name, a.accuracy);
    }
    Ok(())
}

fn export_pr(config: RunConfig, report: Option<&Path>, dest: Option<&Path>) -> CliResult<()> {
    let report_path: PathBuf = report
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.out.join("report").join(REPORT_JSON_FILE));
    let text = fs::read_to_string(&report_path).map_err(|e| {
        CliError::Data(scenecbir_core::Error::Io {
            path: report_path.clone(),
            source: e,
        })
    })?;
    let report: EvalReport = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(scenecbir_core::Error::Format(format!("{}: {e}", report_path.display()))))?;
    let dest = dest
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.out.join("report").join("pr"));
    let written = export_pr_curves(&report, &dest)?;
    println!("{} curve files in {}", written.len(), dest.display());
    Ok(())
}
