//! Acceptance suite: one PASS/FAIL line per criterion, then a single verdict.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scenecbir_core::bow::{assign_words, Approach};
use scenecbir_core::concepts::{
    annotate_image, cov_from_annotations, region_exemplars, train_annotator, AnnotatorKind, CellLabel, Concept,
    ConceptGrid, RegionApproach, RegionVocabularies, N_CONCEPTS,
};
use scenecbir_core::evaluation::{average_precision, precision_recall_curve, EvalReport};
use scenecbir_core::imaging::{pyramid_cells, FeatureImage, Half, Image};
use scenecbir_core::keypoints::{describe, detect_keypoints, extract, DetectorParams, LocalFeatures, DESCRIPTOR_LEN};
use scenecbir_core::pipeline::{encode_features, Vocabularies};
use scenecbir_core::retrieval::{build_index, IndexEntry};
use scenecbir_core::store::FeatureStore;
use scenecbir_core::vocabulary::{
    build_integrated_vocabulary, build_universal_vocabulary, kmeans, KMeansConfig, PointSet, Vocabulary,
    VocabularyKind, VocabularyOptions,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:.1?}, limit {limit:?}"))
}

fn blob_image(rng: &mut ChaCha8Rng, w: usize, h: usize, blobs: usize) -> Image {
    let spots: Vec<(f64, f64, f64, [f64; 3])> = (0..blobs)
        .map(|_| {
            (
                rng.random_range(0.0..w as f64),
                rng.random_range(0.0..h as f64),
                rng.random_range(1.5..5.0),
                [
                    rng.random_range(-0.4..0.4),
                    rng.random_range(-0.4..0.4),
                    rng.random_range(-0.4..0.4),
                ],
            )
        })
        .collect();
    let base = [
        rng.random_range(0.3..0.7),
        rng.random_range(0.3..0.7),
        rng.random_range(0.3..0.7),
    ];
    Image::rgb_from_fn(w, h, |x, y| {
        let mut px = base;
        for &(cx, cy, s, amp) in &spots {
            let g = (-((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)) / (2.0 * s * s)).exp();
            for c in 0..3 {
                px[c] += amp[c] * g;
            }
        }
        px.map(|v| v.clamp(0.0, 1.0))
    })
    .unwrap()
}

fn point_set(features: &[LocalFeatures]) -> PointSet {
    PointSet::from_rows(
        DESCRIPTOR_LEN,
        features.iter().flat_map(|f| f.descriptors.iter().map(|d| d.0)),
    )
    .unwrap()
}

fn random_vocabulary(rng: &mut ChaCha8Rng, words: usize) -> Vocabulary {
    let centroids = (0..words * DESCRIPTOR_LEN)
        .map(|_| rng.random_range(0.0..0.3))
        .collect();
    Vocabulary::new(VocabularyKind::Universal, words, Vec::new(), DESCRIPTOR_LEN, centroids).unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = DetectorParams::default();
    let mut per_category = BTreeMap::new();
    let mut samples = Vec::new();
    for c in 0..6 {
        let images: Vec<Image> = (0..5).map(|_| blob_image(&mut rng, 192, 160, 80)).collect();
        let feats: Vec<LocalFeatures> = images.iter().map(|i| extract(i, &params)).collect();
        per_category.insert(format!("cat{c}"), point_set(&feats));
        samples.push((images[0].clone(), feats[0].clone()));
    }
    let pooled = point_set(&samples.iter().map(|s| s.1.clone()).collect::<Vec<_>>());
    let all = PointSet::from_rows(
        DESCRIPTOR_LEN,
        per_category.values().flat_map(|p| p.rows().map(|r| r.to_vec())),
    )
    .unwrap();
    let opts = VocabularyOptions {
        kmeans: KMeansConfig {
            max_iter: 10,
            rel_tol: 1e-3,
        },
        ..VocabularyOptions::default()
    };
    let vocabs = Vocabularies {
        universal: Some(build_universal_vocabulary(&all, 200, 1, &opts).map_err(|e| e.to_string())?),
        integrated: Some(build_integrated_vocabulary(&per_category, 200, 1, &opts).map_err(|e| e.to_string())?),
        ..Vocabularies::default()
    };
    ensure(!pooled.is_empty(), || "no descriptors".into())?;
    let expected = [
        84, 6, 18, 102, 126, 200, 1200, 1000, 4200, 4326, 6000, 25200, 25326, 25326,
    ];
    for (image, feats) in &samples {
        let fi = FeatureImage::from_image(image);
        let vectors =
            encode_features(&fi, feats, &Approach::ALL, &vocabs, &[0.25, 0.25, 0.5]).map_err(|e| e.to_string())?;
        for ((a, v), &want) in Approach::ALL.iter().zip(&vectors).zip(&expected) {
            ensure(v.dim() == want, || format!("{a}: dim {} != {want}", v.dim()))?;
            ensure(a.dim(3, 200, 1200) == want, || {
                format!("{a}: declared dim {}", a.dim(3, 200, 1200))
            })?;
        }
    }
    let cov = cov_from_annotations(&ConceptGrid::uniform(10, 10, Concept::Sky));
    ensure(cov.to_vec().len() == 9 && N_CONCEPTS == 9, || "COV is not 9-D".into())?;
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!("14 approaches + COV, {:.1?}", start.elapsed()))
}

// Rational prefix precisions summed exactly, then divided by X.
fn ap_by_enumeration(ranked: &[bool], x: usize) -> f64 {
    let n = ranked.len();
    let lcm = (1..=n.max(1) as u64).fold(1u64, |a, b| a / gcd(a, b) * b);
    let mut numerator = 0u64;
    for y in 1..=n {
        if ranked[y - 1] {
            let z = ranked[..y].iter().filter(|&&r| r).count() as u64;
            numerator += z * (lcm / y as u64);
        }
    }
    numerator as f64 / lcm as f64 / x as f64
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..2000 {
        let len = rng.random_range(0..=12);
        let ranked: Vec<bool> = (0..len).map(|_| rng.random_bool(0.4)).collect();
        let z = ranked.iter().filter(|&&r| r).count();
        let x = (z + rng.random_range(0..4)).max(1);
        let ap = average_precision(&ranked, x).map_err(|e| e.to_string())?;
        worst = worst.max((ap - ap_by_enumeration(&ranked, x)).abs());
        let points = precision_recall_curve(&ranked, x).map_err(|e| e.to_string())?;
        for (i, p) in points.iter().enumerate() {
            let zz = ranked[..=i].iter().filter(|&&r| r).count();
            ensure(
                p.precision == zz as f64 / (i + 1) as f64 && p.recall == zz as f64 / x as f64,
                || format!("point {i} of {ranked:?} with X = {x}"),
            )?;
        }
    }
    ensure(worst <= 1e-12, || format!("max AP error {worst:e}"))?;
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("2000 lists, max AP error {worst:e}"))
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_scenecbir"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn save_solid(path: &Path, w: u32, h: u32, rgb: [u8; 3]) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    image::RgbImage::from_pixel(w, h, image::Rgb(rgb)).save(path).unwrap();
}

fn read_report(out: &Path) -> Result<EvalReport, String> {
    let text = std::fs::read_to_string(out.join("report").join("report.json")).map_err(|e| e.to_string())?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (data, out) = (dir.path().join("data"), dir.path().join("out"));
    let colours = [
        ("beach", [220, 40, 40]),
        ("forest", [40, 200, 60]),
        ("lake", [50, 60, 210]),
    ];
    for (cat, rgb) in colours {
        for i in 0..20 {
            save_solid(
                &data.join(cat).join(format!("{cat}_{i:02}.png")),
                40 + i,
                30 + i % 5,
                rgb,
            );
        }
    }
    let (d, o) = (data.to_str().unwrap(), out.to_str().unwrap());
    run_cli(&["--dataset", d, "--out", o, "encode", "--approach", "ColHist"])?;
    run_cli(&[
        "--dataset",
        d,
        "--out",
        o,
        "evaluate",
        "--approach",
        "ColHist",
        "--folds",
        "10",
    ])?;
    let report = read_report(&out)?;
    let acc = report.approaches[0].accuracy;
    ensure(acc == 1.0, || format!("ColHist accuracy {acc}"))?;
    ensure(report.approaches[0].fold_maps.len() == 10, || "not 10 folds".into())?;
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!("60 images, accuracy {acc}, {:.1?}", start.elapsed()))
}

fn mixture_grid(a: Concept, b: Concept, rows_a: usize, splits: usize) -> ConceptGrid {
    let mut cells = Vec::with_capacity(100);
    for r in 0..10 {
        for c in 0..10 {
            cells.push(if r < rows_a {
                CellLabel::Single(a)
            } else if r == rows_a && c < splits {
                CellLabel::Split(a, b)
            } else {
                CellLabel::Single(b)
            });
        }
    }
    ConceptGrid::new(10, 10, cells).unwrap()
}

fn figure_grid() -> ConceptGrid {
    let mut cells = vec![CellLabel::Single(Concept::Water); 100];
    for cell in cells.iter_mut().take(47) {
        *cell = CellLabel::Single(Concept::Sky);
    }
    cells[47] = CellLabel::Split(Concept::Sky, Concept::Water);
    ConceptGrid::new(10, 10, cells).unwrap()
}

fn criterion_4() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (data, out) = (dir.path().join("data"), dir.path().join("out"));
    let categories = [
        ("coast", Concept::Sky, Concept::Water, [90, 140, 220]),
        ("meadow", Concept::Grass, Concept::Trunks, [90, 180, 70]),
        ("canyon", Concept::Foliage, Concept::Rocks, [160, 110, 80]),
    ];
    for (cat, a, b, rgb) in categories {
        for i in 0..20 {
            let id = format!("{cat}_{i:02}");
            let grid = if cat == "coast" && i == 0 {
                figure_grid()
            } else {
                mixture_grid(a, b, 3 + i % 5, (i % 3) * 2)
            };
            save_solid(&data.join(cat).join(format!("{id}.png")), 50, 40, rgb);
            std::fs::write(data.join(cat).join(format!("{id}.regions.txt")), grid.to_text()).unwrap();
        }
    }
    let (d, o) = (data.to_str().unwrap(), out.to_str().unwrap());
    run_cli(&["--dataset", d, "--out", o, "annotate", "--use-ground-truth"])?;
    run_cli(&["--dataset", d, "--out", o, "evaluate", "--approach", "cov"])?;
    let acc = read_report(&out)?.approaches[0].accuracy;
    ensure(acc == 1.0, || format!("COV accuracy {acc}"))?;
    let parsed = ConceptGrid::parse(
        &std::fs::read_to_string(data.join("coast").join("coast_00.regions.txt")).unwrap(),
        10,
        10,
    )
    .map_err(|e| e.to_string())?;
    let sky = cov_from_annotations(&parsed).get(Concept::Sky);
    ensure((sky - 0.475).abs() <= 1e-12, || format!("sky component {sky}"))?;
    let export = std::fs::read_to_string(out.join("features").join("cov.txt")).map_err(|e| e.to_string())?;
    let line = export
        .lines()
        .find(|l| l.starts_with("coast_00\t"))
        .ok_or("coast_00 not exported")?;
    let exported: f64 = line.split('\t').nth(1).unwrap().parse().unwrap();
    ensure((exported - 0.475).abs() <= 1e-12, || format!("exported sky {exported}"))?;
    Ok(format!("accuracy {acc}, sky {sky}"))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = DetectorParams::default();
    let vocab = random_vocabulary(&mut rng, 16);
    let mut keypoints = 0;
    for _ in 0..100 {
        let (w, h) = (rng.random_range(40..=120), rng.random_range(40..=120));
        let img = blob_image(&mut rng, w, h, 25);
        let words = assign_words(&extract(&img, &params), &vocab).map_err(|e| e.to_string())?;
        keypoints += words.words.len();
        let cells = pyramid_cells(w, h, 2).map_err(|e| e.to_string())?;
        let whole = words.histogram(&cells[0]).counts;
        for level in 1..=2u8 {
            let mut sum = vec![0u32; vocab.n_words()];
            for cell in cells.iter().filter(|c| c.level == level) {
                for (s, c) in sum.iter_mut().zip(words.histogram(cell).counts) {
                    *s += c;
                }
            }
            ensure(sum == whole, || format!("{w}x{h} level {level}: {sum:?} != {whole:?}"))?;
        }
    }
    ensure(keypoints > 0, || "no keypoints in any image".into())?;
    Ok(format!("100 images, {keypoints} keypoints"))
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> PointSet {
    let rows: Vec<Vec<f32>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    PointSet::from_rows(dim, rows).unwrap()
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let config = KMeansConfig {
        max_iter: 100,
        rel_tol: 0.0,
    };
    for t in 0..50 {
        let (n, dim) = (rng.random_range(20..200), rng.random_range(2..16));
        let k = rng.random_range(2..10);
        let points = random_points(&mut rng, n, dim);
        let r = kmeans(&points, k, t, 0, &config).map_err(|e| e.to_string())?;
        for pair in r.history.windows(2) {
            ensure(pair[1] <= pair[0], || {
                format!("instance {t}: distortion rose {} -> {}", pair[0], pair[1])
            })?;
        }
        let again = kmeans(&points, k, t, 0, &config).map_err(|e| e.to_string())?;
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        ensure(bits(&r.centroids) == bits(&again.centroids), || {
            format!("instance {t}: centroids differ")
        })?;
    }
    for t in 0..50 {
        let (distinct, dim) = (rng.random_range(2..12), rng.random_range(1..8));
        let base = random_points(&mut rng, distinct, dim);
        let mut rows = Vec::new();
        for row in base.rows() {
            for _ in 0..rng.random_range(1..5) {
                rows.push(row.to_vec());
            }
        }
        let points = PointSet::from_rows(dim, rows).unwrap();
        let r = kmeans(&points, distinct, t, 1, &config).map_err(|e| e.to_string())?;
        ensure(r.distortion == 0.0, || {
            format!("instance {t}: distortion {} at k = #distinct", r.distortion)
        })?;
    }
    Ok("50 monotone, 50 exact, repeated runs bit-identical".into())
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = DetectorParams::default();
    let vocabs = Vocabularies {
        universal: Some(random_vocabulary(&mut rng, 20)),
        integrated: Some(
            Vocabulary::new(
                VocabularyKind::Integrated,
                10,
                vec!["a".into(), "b".into()],
                DESCRIPTOR_LEN,
                (0..20 * DESCRIPTOR_LEN).map(|_| rng.random_range(0.0..0.3)).collect(),
            )
            .unwrap(),
        ),
        ..Vocabularies::default()
    };
    let mut stores: Vec<FeatureStore> = Approach::ALL
        .iter()
        .map(|a| FeatureStore::new(a.tag(), a.dim(3, 20, 20)))
        .collect();
    for i in 0..12 {
        let img = blob_image(&mut rng, 96, 72, 30);
        let fi = FeatureImage::from_image(&img);
        let vectors = encode_features(
            &fi,
            &extract(&img, &params),
            &Approach::ALL,
            &vocabs,
            &[0.25, 0.25, 0.5],
        )
        .map_err(|e| e.to_string())?;
        for (store, v) in stores.iter_mut().zip(vectors) {
            store
                .insert(format!("img{i:02}"), &v.values)
                .map_err(|e| e.to_string())?;
        }
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut checked = 0;
    for (a, store) in Approach::ALL.iter().zip(&stores) {
        let path = dir.path().join(format!("{}.fstr", a.tag()));
        store.save(&path).map_err(|e| e.to_string())?;
        let loaded = FeatureStore::load(&path).map_err(|e| e.to_string())?;
        for id in loaded.ids() {
            let v = loaded.get(id).unwrap();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                ensure((norm - 1.0).abs() <= 1e-9, || format!("{a} {id}: norm {norm}"))?;
                checked += 1;
            }
        }
    }
    for t in 0..50 {
        let (n, dim) = (rng.random_range(5..80), rng.random_range(2..40));
        let unit = |rng: &mut ChaCha8Rng| {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            v
        };
        let entries: Vec<IndexEntry> = (0..n)
            .map(|i| IndexEntry {
                image_id: format!("id{i:03}"),
                category: "c".into(),
                vector: unit(&mut rng),
            })
            .collect();
        let q = unit(&mut rng);
        let mut by_cosine: Vec<(f64, String)> = entries
            .iter()
            .map(|e| {
                (
                    e.vector.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>(),
                    e.image_id.clone(),
                )
            })
            .collect();
        by_cosine.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        let index = build_index(entries, Approach::ColHist.tag()).map_err(|e| e.to_string())?;
        let ranked: Vec<String> = index
            .query(&q, None)
            .map_err(|e| e.to_string())?
            .items
            .into_iter()
            .map(|i| i.image_id)
            .collect();
        let cosine: Vec<String> = by_cosine.into_iter().map(|c| c.1).collect();
        ensure(ranked == cosine, || {
            format!("index {t}: euclidean and cosine orders differ")
        })?;
        let mut sorted = ranked.clone();
        sorted.sort();
        sorted.dedup();
        ensure(sorted.len() == n, || format!("index {t}: ranking is not a permutation"))?;
    }
    Ok(format!("{checked} stored vectors, 50 indexes"))
}

fn knn_oracle(exemplars: &[(Vec<f64>, Concept)], k: usize, q: &[f64]) -> Concept {
    let mut all: Vec<(f64, usize)> = exemplars
        .iter()
        .enumerate()
        .map(|(i, (e, _))| (e.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum(), i))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let nearest = &all[..k];
    let votes = |c: Concept| nearest.iter().filter(|(_, i)| exemplars[*i].1 == c).count();
    let top = Concept::ALL.iter().map(|&c| votes(c)).max().unwrap();
    nearest
        .iter()
        .map(|(_, i)| exemplars[*i].1)
        .find(|&c| votes(c) == top)
        .unwrap()
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (w, h) = (100, 80);
    let upper = [Concept::Sky, Concept::Foliage, Concept::Rocks];
    let lower = [Concept::Grass, Concept::Water, Concept::Sand, Concept::Field];
    let mut training_upper = Vec::new();
    let mut training_lower = Vec::new();
    let mut target = None;
    for n in 0..3 {
        let colours: Vec<[f64; 3]> = (0..100)
            .map(|_| {
                [
                    rng.random_range(0.05..0.95),
                    rng.random_range(0.05..0.95),
                    rng.random_range(0.05..0.95),
                ]
            })
            .collect();
        let noise: Vec<f64> = (0..w * h).map(|_| rng.random_range(-0.04..0.04)).collect();
        let img = Image::rgb_from_fn(w, h, |x, y| {
            let base = colours[(y / 8) * 10 + x / 10];
            base.map(|v| (v + noise[y * w + x]).clamp(0.0, 1.0))
        })
        .unwrap();
        let cells: Vec<CellLabel> = (0..100)
            .map(|i| {
                let pool: &[Concept] = if i < 50 { &upper } else { &lower };
                CellLabel::Single(pool[rng.random_range(0..pool.len())])
            })
            .collect();
        let grid = ConceptGrid::new(10, 10, cells).unwrap();
        let fi = FeatureImage::from_image(&img);
        let empty = LocalFeatures::default();
        let (u, l) = region_exemplars(
            &fi,
            &empty,
            &grid,
            RegionApproach::ColMom,
            &RegionVocabularies::default(),
        )
        .map_err(|e| e.to_string())?;
        training_upper.extend(u);
        training_lower.extend(l);
        if n == 1 {
            target = Some((fi, grid));
        }
    }
    let (fi, truth) = target.unwrap();
    let space = fi.space();
    let model = |ex, half| train_annotator(ex, half, RegionApproach::ColMom, space, 1, AnnotatorKind::Knn);
    let mu = model(training_upper, Half::Upper).map_err(|e| e.to_string())?;
    let ml = model(training_lower, Half::Lower).map_err(|e| e.to_string())?;
    let predicted = annotate_image(
        &fi,
        &LocalFeatures::default(),
        (&mu, &ml),
        &RegionVocabularies::default(),
        10,
        10,
    )
    .map_err(|e| e.to_string())?;
    let agree = predicted.cells.iter().zip(&truth.cells).filter(|(a, b)| a == b).count();
    ensure(agree == 100, || format!("{agree}/100 cells reproduced"))?;

    let mut queries = 0;
    for t in 0..60 {
        let n = rng.random_range(1..=200);
        let dim = rng.random_range(1..6);
        let exemplars: Vec<(Vec<f64>, Concept)> = (0..n)
            .map(|_| {
                let v = (0..dim).map(|_| f64::from(rng.random_range(0..4u8))).collect();
                (v, Concept::ALL[rng.random_range(0..N_CONCEPTS)])
            })
            .collect();
        let k = rng.random_range(1..=n.min(15));
        let m = train_annotator(
            exemplars.clone(),
            Half::Upper,
            RegionApproach::ColMom,
            space,
            k,
            AnnotatorKind::Knn,
        )
        .map_err(|e| e.to_string())?;
        for _ in 0..20 {
            let q: Vec<f64> = (0..dim)
                .map(|_| f64::from(rng.random_range(0..4u8)) + 0.5 * f64::from(rng.random_range(0..2u8)))
                .collect();
            let got = m.predict(&q).map_err(|e| e.to_string())?;
            let want = knn_oracle(&exemplars, k, &q);
            ensure(got == want, || format!("model {t}: predicted {got}, oracle {want}"))?;
            queries += 1;
        }
    }
    Ok(format!("{agree}/100 cells, {queries} KNN queries match"))
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let params = DetectorParams::default();
    let mut count = 0;
    let mut worst_scale = 0.0f32;
    for _ in 0..10 {
        let img = blob_image(&mut rng, 128, 96, 40);
        let feats = extract(&img, &params);
        for d in &feats.descriptors {
            ensure(d.0.len() == DESCRIPTOR_LEN, || "descriptor length".into())?;
            ensure(d.norm() <= 1.0 + 1e-9, || format!("norm {}", d.norm()))?;
            count += 1;
        }
        let factor = rng.random_range(0.3..0.9);
        let planes: Vec<Vec<f64>> = (0..img.channels())
            .map(|c| img.plane(c).iter().map(|v| v * factor).collect())
            .collect();
        let scaled = Image::from_planes(img.width(), img.height(), planes).unwrap();
        for kp in feats.keypoints.iter().take(5) {
            let a = describe(&img, kp, &params).map_err(|e| format!("{e:?}"))?;
            let b = describe(&scaled, kp, &params).map_err(|e| format!("{e:?}"))?;
            for (x, y) in a.0.iter().zip(&b.0) {
                worst_scale = worst_scale.max((x - y).abs());
            }
        }
    }
    ensure(count > 0, || "no descriptors".into())?;
    ensure(worst_scale <= 1e-6, || {
        format!("scaling changed a descriptor by {worst_scale:e}")
    })?;
    for value in [0.0, 0.3, 1.0] {
        for size in [16, 33, 64, 150] {
            let img = Image::grey(size, size + 7, vec![value; size * (size + 7)]).unwrap();
            let n = detect_keypoints(&img, &params).len();
            ensure(n == 0, || format!("constant {value} image {size}: {n} keypoints"))?;
        }
    }
    Ok(format!("{count} descriptors, scaling error {worst_scale:e}"))
}

fn criterion_10() -> Outcome {
    let readme = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md");
    let text = std::fs::read_to_string(&readme).map_err(|e| format!("{}: {e}", readme.display()))?;
    ensure(text.contains("## Full-scale run"), || {
        "README has no full-scale runbook".into()
    })?;
    Ok("runbook documented, not run".into())
}

#[test]
fn primary_criteria() {
    let criteria: [Criterion; 10] = [
        ("dimensionality audit", criterion_1),
        ("AP oracle equivalence", criterion_2),
        ("perfect-separation benchmark", criterion_3),
        ("COV benchmark path", criterion_4),
        ("pyramid consistency", criterion_5),
        ("k-means properties", criterion_6),
        ("normalisation and ranking", criterion_7),
        ("annotator sanity", criterion_8),
        ("descriptor properties", criterion_9),
        ("full-scale runbook", criterion_10),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let line = match &outcome {
            Ok(detail) => format!("acceptance {:>2} PASS {name}: {detail}\n", i + 1),
            Err(why) => format!("acceptance {:>2} FAIL {name}: {why}\n", i + 1),
        };
        let _ = std::io::stderr().write_all(line.as_bytes());
        if outcome.is_err() {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
