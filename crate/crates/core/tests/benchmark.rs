use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use scenecbir_core::bow::Approach;
use scenecbir_core::dataset::{split_folds, DatasetManifest, FoldPlan, ImageEntry};
use scenecbir_core::evaluation::{run_benchmark, FeatureSet};

fn manifest(sizes: &[usize]) -> DatasetManifest {
    let mut entries = Vec::new();
    for (c, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            let id = format!("c{c}_{i:03}");
            entries.push(ImageEntry {
                path: PathBuf::from(format!("{id}.png")),
                image_id: id,
                category: format!("cat{c}"),
            });
        }
    }
    DatasetManifest::new(PathBuf::from("."), entries).unwrap()
}

fn set(m: &DatasetManifest, f: impl Fn(&ImageEntry) -> Vec<f64>) -> FeatureSet {
    FeatureSet {
        name: "test".into(),
        tag: Approach::ColHist.tag(),
        vectors: m
            .entries
            .iter()
            .map(|e| (e.image_id.clone(), f(e)))
            .collect::<HashMap<_, _>>(),
    }
}

// Prefix precision at every relevant position, summed and divided by X.
fn ap_oracle(relevance: &[bool], x: usize) -> f64 {
    let mut total = 0.0;
    for (i, _) in relevance.iter().enumerate().filter(|(_, &r)| r) {
        let hits = relevance[..=i].iter().filter(|&&r| r).count();
        total += hits as f64 / (i + 1) as f64;
    }
    total / x as f64
}

fn tie_accuracy(plan: &FoldPlan) -> f64 {
    let mut per_cat: Vec<Vec<f64>> = vec![Vec::new(); plan.categories.len()];
    for fold in &plan.folds {
        let mut db: Vec<(String, usize)> = fold
            .database
            .iter()
            .enumerate()
            .flat_map(|(c, ids)| ids.iter().map(move |id| (id.clone(), c)))
            .collect();
        db.sort();
        for (c, queries) in fold.queries.iter().enumerate() {
            let relevance: Vec<bool> = db.iter().map(|(_, dc)| *dc == c).collect();
            for _ in queries {
                per_cat[c].push(ap_oracle(&relevance, fold.database[c].len()));
            }
        }
    }
    let maps: Vec<f64> = per_cat.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    maps.iter().sum::<f64>() / maps.len() as f64
}

#[test]
fn identical_vectors_rank_by_image_id() {
    let m = manifest(&[23, 17, 31]);
    let plan = split_folds(&m, 10, 7).unwrap();
    let report = run_benchmark(&plan, &[set(&m, |_| vec![1.0, 0.0, 0.0])], BTreeMap::new()).unwrap();
    let expected = tie_accuracy(&plan);
    let got = report.approaches[0].accuracy;
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
}

#[test]
fn separated_categories_score_one() {
    let m = manifest(&[20, 20, 20]);
    let plan = split_folds(&m, 10, 3).unwrap();
    let onehot = |e: &ImageEntry| {
        let mut v = vec![0.0; 3];
        v[m.category_index(&e.category).unwrap()] = 1.0;
        v
    };
    let report = run_benchmark(&plan, &[set(&m, onehot)], BTreeMap::new()).unwrap();
    let r = &report.approaches[0];
    assert_eq!(r.accuracy, 1.0);
    assert!(r.category_maps.iter().all(|&v| v == 1.0));
    assert!(r.fold_maps.iter().flatten().all(|&v| v == 1.0));
    assert_eq!(r.mean_curve.recall.len(), 54);
}

#[test]
fn every_image_is_queried_once() {
    let m = manifest(&[13, 10, 27]);
    let plan = split_folds(&m, 10, 11).unwrap();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for fold in &plan.folds {
        for (q, db) in fold.queries.iter().zip(&fold.database) {
            assert!(q.iter().all(|id| !db.contains(id)));
            for id in q {
                *counts.entry(id.clone()).or_default() += 1;
            }
        }
    }
    assert_eq!(counts.len(), m.len());
    assert!(counts.values().all(|&c| c == 1));
    assert_eq!(plan, split_folds(&m, 10, 11).unwrap());
}

#[test]
fn report_survives_json() {
    let m = manifest(&[10, 12]);
    let plan = split_folds(&m, 10, 1).unwrap();
    let report = run_benchmark(
        &plan,
        &[set(&m, |e| vec![e.image_id.len() as f64, 1.0])],
        BTreeMap::new(),
    )
    .unwrap();
    let back: scenecbir_core::evaluation::EvalReport =
        serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(back, report);
}
