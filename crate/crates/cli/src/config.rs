//! Run configuration stored as flat `key = value` text.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use scenecbir_core::concepts::{AnnotatorKind, RegionApproach, DEFAULT_NEIGHBOURS};
use scenecbir_core::global_features::DEFAULT_PYRAMID_WEIGHTS;
use scenecbir_core::keypoints::DetectorParams;
use scenecbir_core::vocabulary::{KMeansConfig, VocabularyOptions, DEFAULT_WORDS};

use crate::representation::Representation;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub out: PathBuf,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub words: usize,
    pub pyramid_weights: Vec<f64>,
    pub detector: DetectorParams,
    pub neighbours: usize,
    pub annotator: AnnotatorKind,
    pub region_approach: RegionApproach,
    pub seed: u64,
    pub folds: usize,
    pub approaches: Vec<Representation>,
    pub max_descriptors: usize,
    pub kmeans_max_iter: usize,
    pub kmeans_tolerance: f64,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let km = KMeansConfig::default();
        RunConfig {
            dataset: None,
            annotations: None,
            out: PathBuf::from("scenecbir-out"),
            grid_rows: 10,
            grid_cols: 10,
            words: DEFAULT_WORDS,
            pyramid_weights: DEFAULT_PYRAMID_WEIGHTS.to_vec(),
            detector: DetectorParams::default(),
            neighbours: DEFAULT_NEIGHBOURS,
            annotator: AnnotatorKind::Knn,
            region_approach: RegionApproach::IbowColHist,
            seed: 1,
            folds: 10,
            approaches: Representation::all_approaches(),
            max_descriptors: VocabularyOptions::default().max_descriptors,
            kmeans_max_iter: km.max_iter,
            kmeans_tolerance: km.rel_tol,
            threads: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| format!("{key}: cannot parse `{value}`: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got `{value}`")),
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn split_list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

impl RunConfig {
    pub fn vocabulary_options(&self) -> VocabularyOptions {
        VocabularyOptions {
            kmeans: KMeansConfig {
                max_iter: self.kmeans_max_iter,
                rel_tol: self.kmeans_tolerance,
            },
            max_descriptors: self.max_descriptors,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let path = |v: &str| if v.is_empty() { None } else { Some(PathBuf::from(v)) };
        match key {
            "dataset" => self.dataset = path(value),
            "annotations" => self.annotations = path(value),
            "out" => self.out = PathBuf::from(value),
            "grid_rows" => self.grid_rows = parse(key, value)?,
            "grid_cols" => self.grid_cols = parse(key, value)?,
            "words" => self.words = parse(key, value)?,
            "pyramid_weights" => {
                self.pyramid_weights = split_list(value).map(|v| parse(key, v)).collect::<Result<_, _>>()?
            }
            "detector.intervals" => self.detector.intervals = parse(key, value)?,
            "detector.sigma" => self.detector.sigma = parse(key, value)?,
            "detector.contrast_threshold" => self.detector.contrast_threshold = parse(key, value)?,
            "detector.edge_ratio" => self.detector.edge_ratio = parse(key, value)?,
            "detector.double_image" => self.detector.double_image = parse_bool(key, value)?,
            "detector.max_refine_steps" => self.detector.max_refine_steps = parse(key, value)?,
            "detector.assumed_blur" => self.detector.assumed_blur = parse(key, value)?,
            "detector.border" => self.detector.border = parse(key, value)?,
            "neighbours" => self.neighbours = parse(key, value)?,
            "annotator" => self.annotator = parse(key, value)?,
            "region_approach" => self.region_approach = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "folds" => self.folds = parse(key, value)?,
            "approaches" => self.approaches = split_list(value).map(|v| parse(key, v)).collect::<Result<_, _>>()?,
            "max_descriptors" => self.max_descriptors = parse(key, value)?,
            "kmeans.max_iter" => self.kmeans_max_iter = parse(key, value)?,
            "kmeans.tolerance" => self.kmeans_tolerance = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            other => return Err(format!("unknown config key `{other}`")),
        }
        Ok(())
    }

    /// Applies `key = value` lines over the current values; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| format!("line {}: {e}", i + 1))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, String> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let d = &self.detector;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("dataset", path(&self.dataset));
        kv("annotations", path(&self.annotations));
        kv("out", self.out.display().to_string());
        kv("grid_rows", self.grid_rows.to_string());
        kv("grid_cols", self.grid_cols.to_string());
        kv("words", self.words.to_string());
        kv("pyramid_weights", join(&self.pyramid_weights));
        kv("detector.intervals", d.intervals.to_string());
        kv("detector.sigma", d.sigma.to_string());
        kv("detector.contrast_threshold", d.contrast_threshold.to_string());
        kv("detector.edge_ratio", d.edge_ratio.to_string());
        kv("detector.double_image", d.double_image.to_string());
        kv("detector.max_refine_steps", d.max_refine_steps.to_string());
        kv("detector.assumed_blur", d.assumed_blur.to_string());
        kv("detector.border", d.border.to_string());
        kv("neighbours", self.neighbours.to_string());
        kv("annotator", self.annotator.to_string());
        kv("region_approach", self.region_approach.to_string());
        kv("seed", self.seed.to_string());
        kv("folds", self.folds.to_string());
        kv("approaches", join(&self.approaches));
        kv("max_descriptors", self.max_descriptors.to_string());
        kv("kmeans.max_iter", self.kmeans_max_iter.to_string());
        kv("kmeans.tolerance", self.kmeans_tolerance.to_string());
        kv("threads", self.threads.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn edited_config_round_trips() {
        let mut c = RunConfig::default();
        c.dataset = Some(PathBuf::from("/data/scenes"));
        c.pyramid_weights = vec![0.1, 0.2, 0.7];
        c.detector.contrast_threshold = 0.04;
        c.detector.double_image = true;
        c.kmeans_tolerance = 1e-6;
        c.annotator = AnnotatorKind::NearestCentroid;
        c.approaches = vec![
            "UBOW".parse().unwrap(),
            "cov".parse().unwrap(),
            "cov:dwt".parse().unwrap(),
        ];
        let back = RunConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), c.to_text());
    }

    #[test]
    fn rejects_unknown_keys_and_values() {
        assert!(RunConfig::from_text("colour = red").is_err());
        assert!(RunConfig::from_text("words = many").is_err());
        assert!(RunConfig::from_text("words").is_err());
        let c = RunConfig::from_text("# comment\nwords = 50 # trailing\n").unwrap();
        assert_eq!(c.words, 50);
    }
}
