//! Precision, recall, average precision and the cross-validated benchmark.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::FoldPlan;
use crate::error::{Error, Result};
use crate::retrieval::{build_index, IndexEntry};
use crate::store::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecallPoint {
    /// Retrieved count `Y`.
    pub rank: usize,
    /// Relevant retrieved `Z`.
    pub relevant: usize,
    /// Relevant in the database `X`.
    pub total_relevant: usize,
    pub precision: f64,
    pub recall: f64,
}

fn check_relevance(ranked: &[bool], total_relevant: usize) -> Result<()> {
    if total_relevant == 0 {
        return Err(Error::InvalidArgument("no relevant items (X = 0)".into()));
    }
    let found = ranked.iter().filter(|&&r| r).count();
    if found > total_relevant {
        return Err(Error::InvalidArgument(format!(
            "{found} relevant flags exceed X = {total_relevant}"
        )));
    }
    Ok(())
}

/// One point per rank of the list.
pub fn precision_recall_curve(ranked: &[bool], total_relevant: usize) -> Result<Vec<PrecisionRecallPoint>> {
    check_relevance(ranked, total_relevant)?;
    let mut z = 0;
    Ok(ranked
        .iter()
        .enumerate()
        .map(|(i, &rel)| {
            z += usize::from(rel);
            let y = i + 1;
            PrecisionRecallPoint {
                rank: y,
                relevant: z,
                total_relevant,
                precision: z as f64 / y as f64,
                recall: z as f64 / total_relevant as f64,
            }
        })
        .collect())
}

/// Mean of the precisions at each relevant rank, divided by `X`.
pub fn average_precision(ranked: &[bool], total_relevant: usize) -> Result<f64> {
    check_relevance(ranked, total_relevant)?;
    let mut z = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in ranked.iter().enumerate() {
        if rel {
            z += 1;
            sum += z as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / total_relevant as f64)
}

/// Vectors of one representation keyed by image id.
#[derive(Debug, Clone, Default)]
pub struct FeatureSet {
    pub name: String,
    pub tag: u8,
    pub vectors: HashMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
}

impl PrCurve {
    /// Per-rank mean over curves, truncated to the shortest.
    pub fn average<'a>(curves: impl IntoIterator<Item = &'a PrCurve>) -> PrCurve {
        let curves: Vec<&PrCurve> = curves.into_iter().collect();
        let Some(len) = curves.iter().map(|c| c.recall.len()).min() else {
            return PrCurve::default();
        };
        let n = curves.len() as f64;
        let mean = |pick: fn(&PrCurve) -> &Vec<f64>| -> Vec<f64> {
            (0..len)
                .map(|i| curves.iter().map(|c| pick(c)[i]).sum::<f64>() / n)
                .collect()
        };
        PrCurve {
            recall: mean(|c| &c.recall),
            precision: mean(|c| &c.precision),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("recall\tprecision\n");
        for (r, p) in self.recall.iter().zip(&self.precision) {
            let _ = writeln!(out, "{r:.9}\t{p:.9}");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproachResult {
    pub name: String,
    /// `[fold][category]` MAP over that fold's queries.
    pub fold_maps: Vec<Vec<f64>>,
    /// Per category, mean AP pooled over all folds' queries.
    pub category_maps: Vec<f64>,
    pub accuracy: f64,
    pub curves: Vec<PrCurve>,
    pub mean_curve: PrCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub categories: Vec<String>,
    pub metadata: BTreeMap<String, String>,
    pub approaches: Vec<ApproachResult>,
}

struct QueryOutcome {
    category: usize,
    fold: usize,
    ap: f64,
    curve: PrCurve,
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn evaluate_set(plan: &FoldPlan, set: &FeatureSet) -> Result<ApproachResult> {
    let lookup = |id: &str| -> Result<&Vec<f64>> {
        set.vectors
            .get(id)
            .ok_or_else(|| Error::MissingFeature(format!("{id} ({})", set.name)))
    };
    let n_cat = plan.categories.len();
    let mut outcomes: Vec<QueryOutcome> = Vec::new();
    for (f, fold) in plan.folds.iter().enumerate() {
        let mut entries = Vec::new();
        for (c, ids) in fold.database.iter().enumerate() {
            for id in ids {
                entries.push(IndexEntry {
                    image_id: id.clone(),
                    category: plan.categories[c].clone(),
                    vector: lookup(id)?.clone(),
                });
            }
        }
        if entries.is_empty() || fold.queries.iter().all(Vec::is_empty) {
            return Err(Error::Empty("fold"));
        }
        let index = build_index(entries, set.tag)?;
        let queries: Vec<(usize, &String)> = fold
            .queries
            .iter()
            .enumerate()
            .flat_map(|(c, ids)| ids.iter().map(move |id| (c, id)))
            .collect();
        let results: Vec<Result<QueryOutcome>> = queries
            .par_iter()
            .map(|&(c, id)| {
                let ranked = index.query(lookup(id)?, None)?;
                let relevance: Vec<bool> = ranked.items.iter().map(|i| i.category == plan.categories[c]).collect();
                let x = fold.database[c].len();
                let points = precision_recall_curve(&relevance, x)?;
                Ok(QueryOutcome {
                    category: c,
                    fold: f,
                    ap: average_precision(&relevance, x)?,
                    curve: PrCurve {
                        recall: points.iter().map(|p| p.recall).collect(),
                        precision: points.iter().map(|p| p.precision).collect(),
                    },
                })
            })
            .collect();
        for r in results {
            outcomes.push(r?);
        }
    }
    let n_folds = plan.folds.len();
    let mut fold_maps = vec![vec![0.0; n_cat]; n_folds];
    for (f, row) in fold_maps.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            let aps: Vec<f64> = outcomes
                .iter()
                .filter(|o| o.fold == f && o.category == c)
                .map(|o| o.ap)
                .collect();
            *cell = mean(&aps);
        }
    }
    let category_maps: Vec<f64> = (0..n_cat)
        .map(|c| {
            mean(
                &outcomes
                    .iter()
                    .filter(|o| o.category == c)
                    .map(|o| o.ap)
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    let curves = (0..n_cat)
        .map(|c| PrCurve::average(outcomes.iter().filter(|o| o.category == c).map(|o| &o.curve)))
        .collect();
    Ok(ApproachResult {
        name: set.name.clone(),
        fold_maps,
        accuracy: mean(&category_maps),
        category_maps,
        curves,
        mean_curve: PrCurve::average(outcomes.iter().map(|o| &o.curve)),
    })
}

/// Runs every fold for every feature set.
pub fn run_benchmark(plan: &FoldPlan, sets: &[FeatureSet], metadata: BTreeMap<String, String>) -> Result<EvalReport> {
    if sets.is_empty() {
        return Err(Error::Empty("approach list"));
    }
    if plan.folds.is_empty() {
        return Err(Error::Empty("fold plan"));
    }
    let approaches = sets.iter().map(|s| evaluate_set(plan, s)).collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        seed: plan.seed,
        categories: plan.categories.clone(),
        metadata,
        approaches,
    })
}

pub const MAP_TABLE_FILE: &str = "map_table.tsv";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const PR_DIR: &str = "pr";

impl EvalReport {
    /// `approach  <categories…>  accuracy`, four decimals.
    pub fn map_table(&self) -> String {
        let mut out = String::from("approach");
        for c in &self.categories {
            out.push('\t');
            out.push_str(c);
        }
        out.push_str("\taccuracy\n");
        for a in &self.approaches {
            out.push_str(&a.name);
            for m in &a.category_maps {
                let _ = write!(out, "\t{m:.4}");
            }
            let _ = writeln!(out, "\t{:.4}", a.accuracy);
        }
        out
    }

    pub fn approach(&self, name: &str) -> Option<&ApproachResult> {
        self.approaches.iter().find(|a| a.name == name)
    }
}

/// File-name-safe form of an approach or category name.
pub fn file_token(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes the MAP table, the JSON report and PR curves; returns the files written.
pub fn export_report(report: &EvalReport, out: &Path) -> Result<Vec<PathBuf>> {
    if report.approaches.is_empty() {
        return Err(Error::Empty("approach list"));
    }
    let mut written = Vec::new();
    let table = out.join(MAP_TABLE_FILE);
    write_atomic(&table, report.map_table().as_bytes())?;
    written.push(table);
    let json = out.join(REPORT_JSON_FILE);
    let body = serde_json::to_string_pretty(report).map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(&json, body.as_bytes())?;
    written.push(json);
    written.extend(export_pr_curves(report, &out.join(PR_DIR))?);
    Ok(written)
}

/// `<dir>/<approach>/<category>.tsv` plus `<dir>/<approach>/mean.tsv`.
pub fn export_pr_curves(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for a in &report.approaches {
        let sub = dir.join(file_token(&a.name));
        for (category, curve) in report.categories.iter().zip(&a.curves) {
            let path = sub.join(format!("{}.tsv", file_token(category)));
            write_atomic(&path, curve.to_text().as_bytes())?;
            written.push(path);
        }
        let path = sub.join("mean.tsv");
        write_atomic(&path, a.mean_curve.to_text().as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        let rel = [true, false, true, false];
        let pts = precision_recall_curve(&rel, 2).unwrap();
        let p: Vec<f64> = pts.iter().map(|p| p.precision).collect();
        let r: Vec<f64> = pts.iter().map(|p| p.recall).collect();
        assert_eq!(p, vec![1.0, 0.5, 2.0 / 3.0, 0.5]);
        assert_eq!(r, vec![0.5, 0.5, 1.0, 1.0]);
        assert!((average_precision(&rel, 2).unwrap() - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn edge_cases() {
        assert!(average_precision(&[true], 0).is_err());
        assert!(precision_recall_curve(&[true, true], 1).is_err());
        assert_eq!(average_precision(&[true; 5], 5).unwrap(), 1.0);
        let mut last = vec![false; 9];
        last.push(true);
        assert!((average_precision(&last, 1).unwrap() - 0.1).abs() < 1e-15);
        let mut ten = vec![true; 5];
        ten.extend([false; 5]);
        let pt = precision_recall_curve(&ten, 20).unwrap()[9];
        assert_eq!((pt.precision, pt.recall), (0.5, 0.25));
    }

    #[test]
    fn curve_average_truncates() {
        let a = PrCurve {
            recall: vec![0.5, 1.0, 1.0],
            precision: vec![1.0, 1.0, 0.5],
        };
        let b = PrCurve {
            recall: vec![0.0, 1.0],
            precision: vec![0.0, 0.5],
        };
        let m = PrCurve::average([&a, &b]);
        assert_eq!(m.recall, vec![0.25, 1.0]);
        assert_eq!(m.precision, vec![0.5, 0.75]);
    }

    proptest! {
        #[test]
        fn curve_and_ap_agree(rel in proptest::collection::vec(any::<bool>(), 1..40)) {
            let x = rel.iter().filter(|&&r| r).count();
            prop_assume!(x > 0);
            let pts = precision_recall_curve(&rel, x).unwrap();
            let from_curve: f64 = pts.iter().zip(&rel).filter(|(_, &r)| r).map(|(p, _)| p.precision).sum::<f64>() / x as f64;
            let ap = average_precision(&rel, x).unwrap();
            prop_assert_eq!(from_curve, ap);
            prop_assert!(ap > 0.0 && ap <= 1.0);
            prop_assert!(pts.windows(2).all(|w| w[0].recall <= w[1].recall));
            for p in &pts {
                prop_assert_eq!(p.precision, p.relevant as f64 / p.rank as f64);
                prop_assert_eq!(p.recall, p.relevant as f64 / x as f64);
            }
        }
    }
}
