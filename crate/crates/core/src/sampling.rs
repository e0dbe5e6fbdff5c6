//! Dataset rebalancing and seed-based example mining.

use std::collections::BTreeMap;

use crate::error::{Result, VpgError};
use crate::index::{HnswIndex, ObjectKey};
use crate::stats::percentile_linear;
use crate::store::FeatureStore;
use crate::types::{Category, ImageSignature};

/// Category frequency table with `t` pinned at the 75th percentile of the
/// count distribution (linear interpolation), recomputed on every change.
#[derive(Clone, Debug)]
pub struct ClassHistogram {
    counts: BTreeMap<Category, u64>,
    t: f64,
}

impl ClassHistogram {
    pub fn from_counts(counts: BTreeMap<Category, u64>) -> Self {
        let t = if counts.is_empty() {
            0.0
        } else {
            let values: Vec<f64> = counts.values().map(|&c| c as f64).collect();
            percentile_linear(&values, 0.75)
        };
        ClassHistogram { counts, t }
    }

    pub fn from_items<'a>(items: impl IntoIterator<Item = &'a Category>) -> Self {
        let mut counts: BTreeMap<Category, u64> = BTreeMap::new();
        for cat in items {
            *counts.entry(cat.clone()).or_insert(0) += 1;
        }
        Self::from_counts(counts)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn count(&self, cat: &Category) -> Option<u64> {
        self.counts.get(cat).copied()
    }

    pub fn record(&mut self, cat: Category) {
        *self.counts.entry(cat).or_insert(0) += 1;
        *self = Self::from_counts(std::mem::take(&mut self.counts));
    }
}

/// Which reading of the rebalancing factor to apply.
///
/// The stated intent is boosting rare classes, which wants `sqrt(t / f_c)`;
/// the literal formula `sqrt(f_c / t)` is kept selectable for comparison
/// runs (it yields factors below 1 for rare classes, i.e. no oversampling).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OversampleFormula {
    #[default]
    InverseRatio,
    Literal,
}

/// Replication factor for a class of frequency `f_c`:
/// `max(1, round(sqrt(ratio)))` under the chosen formula.
pub fn replication_factor(f_c: u64, t: f64, formula: OversampleFormula) -> u64 {
    if f_c == 0 || t <= 0.0 {
        return 1;
    }
    let ratio = match formula {
        OversampleFormula::InverseRatio => t / f_c as f64,
        OversampleFormula::Literal => f_c as f64 / t,
    };
    (ratio.sqrt().round() as u64).max(1)
}

/// Replicate each item `replication_factor(f_c, t)` times, replicas adjacent,
/// original order preserved. Never removes anything.
pub fn oversample<T: Clone>(
    dataset: &[(T, Category)],
    hist: &ClassHistogram,
    formula: OversampleFormula,
) -> Result<Vec<(T, Category)>> {
    let mut out = Vec::with_capacity(dataset.len());
    for (item, cat) in dataset {
        let f_c = hist.count(cat).ok_or_else(|| {
            VpgError::UnknownEntity(format!("category {} missing from histogram", cat.id()))
        })?;
        let r = replication_factor(f_c, hist.t(), formula);
        for _ in 0..r {
            out.push((item.clone(), cat.clone()));
        }
    }
    Ok(out)
}

/// Expand seed images into visually similar corpus scenes: union of each
/// seed's top-k object-index neighbors by parent scene, deduplicated, seeds
/// excluded, ordered by best distance (ties by signature).
pub fn mine_similar_examples(
    seeds: &[ImageSignature],
    store: &FeatureStore,
    index: &HnswIndex<ObjectKey>,
    k: usize,
    ef_search: usize,
) -> Result<Vec<ImageSignature>> {
    let mut best: BTreeMap<ImageSignature, f64> = BTreeMap::new();
    for seed in seeds {
        let entry = store
            .peek(seed)
            .ok_or_else(|| VpgError::UnknownEntity(format!("seed {seed} not in feature store")))?;
        if k == 0 {
            continue;
        }
        for (key, dist) in index.query(&entry.full_embedding, k, ef_search)? {
            let slot = best.entry(key.parent).or_insert(f64::INFINITY);
            if dist < *slot {
                *slot = dist;
            }
        }
    }
    for seed in seeds {
        best.remove(seed);
    }
    let mut ranked: Vec<(f64, ImageSignature)> = best.into_iter().map(|(s, d)| (d, s)).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    Ok(ranked.into_iter().map(|(_, s)| s).collect())
}
