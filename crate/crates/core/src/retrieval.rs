//! Exhaustive Euclidean query-by-example.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Dimension above which distances use compensated summation.
pub const COMPENSATED_DIM: usize = 10_000;

fn sq_plain(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Neumaier summation of squared differences.
fn sq_compensated(a: &[f64], b: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let term = (x - y) * (x - y);
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    if a.len() > COMPENSATED_DIM {
        sq_compensated(a, b)
    } else {
        sq_plain(a, b)
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(squared_distance(a, b).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub image_id: String,
    pub category: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    entries: Vec<IndexEntry>,
    dim: usize,
    tag: u8,
}

pub fn build_index(entries: Vec<IndexEntry>, tag: u8) -> Result<RetrievalIndex> {
    let first = entries.first().ok_or(Error::Empty("retrieval index"))?;
    let dim = first.vector.len();
    let mut ids = BTreeSet::new();
    for e in &entries {
        if e.vector.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: e.vector.len(),
            });
        }
        if !ids.insert(e.image_id.as_str()) {
            return Err(Error::DuplicateImageId(e.image_id.clone()));
        }
    }
    Ok(RetrievalIndex { entries, dim, tag })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedItem {
    pub image_id: String,
    pub category: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: Option<String>,
    pub items: Vec<RankedItem>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `rank  image_id  category  distance` lines, ranks from 1.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, item) in self.items.iter().enumerate() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.9}",
                i + 1,
                item.image_id,
                item.category,
                item.distance
            );
        }
        out
    }
}

impl RetrievalIndex {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tag(&self) -> u8 {
        self.tag
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    /// Ascending distance, ties by image_id; truncated to `top` when given.
    pub fn query(&self, q: &[f64], top: Option<usize>) -> Result<RankedList> {
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: q.len(),
            });
        }
        let mut scored: Vec<(f64, usize)> = self
            .entries
            .par_iter()
            .enumerate()
            .map(|(i, e)| (squared_distance(&e.vector, q), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            a.0.total_cmp(&b.0)
                .then_with(|| self.entries[a.1].image_id.cmp(&self.entries[b.1].image_id))
        };
        let keep = top.unwrap_or(scored.len()).min(scored.len());
        if keep < scored.len() && keep > 0 {
            scored.select_nth_unstable_by(keep - 1, cmp);
            scored.truncate(keep);
        } else {
            scored.truncate(keep);
        }
        scored.sort_by(cmp);
        let items = scored
            .into_iter()
            .map(|(d, i)| RankedItem {
                image_id: self.entries[i].image_id.clone(),
                category: self.entries[i].category.clone(),
                distance: d.sqrt(),
            })
            .collect();
        Ok(RankedList { query_id: None, items })
    }
}
