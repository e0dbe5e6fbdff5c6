//! Scene-to-products serving path.
//!
//! Decompose a scene into its top objects by detector confidence, retrieve
//! visually similar trustworthy products per object in one batched index
//! pass, filter out unsafe or cross-domain candidates, interleave the
//! survivors round-robin, and cache the merged list under
//! (scene, user context) with a TTL.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::cache::{CacheStats, Clock, TtlLruCache};
use crate::config::ForwardSettings;
use crate::error::{Result, VpgError};
use crate::index::{HnswIndex, HnswParams};
use crate::reverse::Extractor;
use crate::store::FeatureStore;
use crate::types::{Category, DetectedObject, Embedding, ImageSignature, Taxonomy};

/// A shoppable catalog item. Only trustworthy products — in stock, from a
/// legitimate site, and safe — are ever indexed.
#[derive(Clone, Debug)]
pub struct ProductEntry {
    pub signature: ImageSignature,
    pub embedding: Embedding,
    pub category: Category,
    pub in_stock: bool,
    pub legitimate_domain: bool,
    pub safe: bool,
}

impl ProductEntry {
    pub fn trustworthy(&self) -> bool {
        self.in_stock && self.legitimate_domain && self.safe
    }
}

/// The product corpus, keyed by signature. Appends overwrite.
#[derive(Default)]
pub struct ProductCatalog {
    products: BTreeMap<ImageSignature, Arc<ProductEntry>>,
}

impl ProductCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, mut entry: ProductEntry) {
        // catalog values carry the same precision as their JSONL form
        entry.embedding = entry.embedding.quantize_f16();
        self.products.insert(entry.signature, Arc::new(entry));
    }

    pub fn get(&self, sig: &ImageSignature) -> Option<Arc<ProductEntry>> {
        self.products.get(sig).cloned()
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<ProductEntry>> {
        self.products.values()
    }

    /// Index over the trustworthy subset, signature order.
    pub fn build_index(&self, dim: usize, params: HnswParams) -> Result<HnswIndex<ImageSignature>> {
        HnswIndex::build(
            dim,
            params,
            self.products
                .values()
                .filter(|p| p.trustworthy())
                .map(|p| (p.signature, p.embedding.clone())),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Female,
    Male,
    Unspecified,
}

impl FromStr for Gender {
    type Err = VpgError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f" | "female" => Ok(Gender::Female),
            "m" | "male" => Ok(Gender::Male),
            "" | "unspecified" | "u" => Ok(Gender::Unspecified),
            other => Err(VpgError::InvalidArgument(format!(
                "unknown gender {other:?}"
            ))),
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gender::Female => f.write_str("female"),
            Gender::Male => f.write_str("male"),
            Gender::Unspecified => f.write_str("unspecified"),
        }
    }
}

/// User details that shape cache identity (never ranking).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UserContext {
    pub gender: Gender,
    /// ISO-3166 alpha-2, uppercased; "ZZ" when unspecified.
    pub country: String,
}

impl UserContext {
    pub fn new(gender: Gender, country: &str) -> Self {
        let country = if country.is_empty() {
            "ZZ".to_string()
        } else {
            country.to_ascii_uppercase()
        };
        UserContext { gender, country }
    }

    pub fn unspecified() -> Self {
        UserContext::new(Gender::Unspecified, "ZZ")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub scene: ImageSignature,
    pub ctx: UserContext,
}

/// Ranked product reference list, what forward lookups return and cache.
pub type RankedProducts = Vec<Arc<ProductEntry>>;

pub struct ForwardPipeline {
    store: Arc<FeatureStore>,
    product_index: Arc<HnswIndex<ImageSignature>>,
    catalog: Arc<ProductCatalog>,
    cache: TtlLruCache<CacheKey, RankedProducts>,
    extractor: Extractor,
    settings: ForwardSettings,
    ef_search: usize,
    executions: AtomicU64,
}

impl ForwardPipeline {
    pub fn new(
        store: Arc<FeatureStore>,
        product_index: Arc<HnswIndex<ImageSignature>>,
        catalog: Arc<ProductCatalog>,
        extractor: Extractor,
        settings: ForwardSettings,
        ef_search: usize,
        clock: Arc<dyn Clock>,
    ) -> Self {
        let cache = TtlLruCache::new(settings.cache_capacity, settings.ttl_seconds * 1000, clock);
        ForwardPipeline {
            store,
            product_index,
            catalog,
            cache,
            extractor,
            settings,
            ef_search,
            executions: AtomicU64::new(0),
        }
    }

    /// Pipeline executions that actually ran (cache misses).
    pub fn executions(&self) -> u64 {
        self.executions.load(Ordering::Relaxed)
    }

    pub fn cache_stats(&self) -> CacheStats {
        self.cache.stats()
    }

    pub fn settings(&self) -> &ForwardSettings {
        &self.settings
    }

    /// The scene's top objects by detector confidence (at most
    /// `max_objects`), ties broken by object order.
    pub fn decompose_scene(&self, scene: &ImageSignature) -> Result<Vec<DetectedObject>> {
        let (entry, _) = self.store.get_or_extract(scene, |s| (self.extractor)(s))?;
        let mut indexed: Vec<(usize, &DetectedObject)> = entry.objects.iter().enumerate().collect();
        indexed.sort_by(|(ia, a), (ib, b)| {
            b.confidence
                .partial_cmp(&a.confidence)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| ia.cmp(ib))
        });
        Ok(indexed
            .into_iter()
            .take(self.settings.max_objects)
            .map(|(_, o)| o.clone())
            .collect())
    }

    /// Per-object product candidates from one batched index pass; results
    /// identical to querying object by object.
    pub fn retrieve_products(
        &self,
        objects: &[DetectedObject],
    ) -> Result<Vec<Vec<(ImageSignature, f64)>>> {
        if objects.is_empty() {
            return Ok(Vec::new());
        }
        let queries: Vec<Embedding> = objects.iter().map(|o| o.embedding.clone()).collect();
        self.product_index
            .query_batch(&queries, self.settings.per_object_k, self.ef_search)
    }

    /// Resolve candidates against the catalog and drop unsafe products and
    /// domain mismatches; relative order preserved.
    pub fn filter_candidates(
        &self,
        objects: &[DetectedObject],
        candidates: &[Vec<(ImageSignature, f64)>],
    ) -> Vec<Vec<Arc<ProductEntry>>> {
        objects
            .iter()
            .zip(candidates)
            .map(|(obj, cands)| {
                cands
                    .iter()
                    .filter_map(|(sig, _)| self.catalog.get(sig))
                    .filter(|p| p.safe && p.category.domain() == obj.category.domain())
                    .collect()
            })
            .collect()
    }

    fn compute(&self, scene: &ImageSignature, _ctx: &UserContext) -> Result<RankedProducts> {
        self.executions.fetch_add(1, Ordering::Relaxed);
        let objects = self.decompose_scene(scene)?;
        let raw = self.retrieve_products(&objects)?;
        let filtered = self.filter_candidates(&objects, &raw);
        Ok(round_robin_merge(&filtered, self.settings.n_out))
    }

    /// Cached scene lookup. Returns the ranked products and whether they
    /// came from a fresh cache entry.
    pub fn forward_lookup(
        &self,
        scene: &ImageSignature,
        ctx: &UserContext,
    ) -> Result<(RankedProducts, bool)> {
        let key = CacheKey {
            scene: *scene,
            ctx: ctx.clone(),
        };
        self.cache.get_or_compute(key, || self.compute(scene, ctx))
    }

    /// Batched lookup for the reverse path's top scenes (at most 5).
    /// Non-cached scenes are computed with bounded parallelism; per-scene
    /// failures land in the map without failing the batch.
    pub fn forward_batch(
        &self,
        scenes: &[ImageSignature],
        ctx: &UserContext,
    ) -> Result<BTreeMap<ImageSignature, Result<(RankedProducts, bool)>>> {
        if scenes.len() > 5 {
            return Err(VpgError::InvalidArgument(format!(
                "forward_batch takes at most 5 scenes, got {}",
                scenes.len()
            )));
        }
        let results: Mutex<BTreeMap<ImageSignature, Result<(RankedProducts, bool)>>> =
            Mutex::new(BTreeMap::new());
        let workers = self.settings.parallelism.max(1).min(scenes.len().max(1));
        let chunk = scenes.len().div_ceil(workers).max(1);
        std::thread::scope(|s| {
            for group in scenes.chunks(chunk) {
                let results = &results;
                s.spawn(move || {
                    for scene in group {
                        let outcome = self.forward_lookup(scene, ctx);
                        results.lock().unwrap().insert(*scene, outcome);
                    }
                });
            }
        });
        Ok(results.into_inner().unwrap())
    }
}

/// Interleave per-object candidate lists one rank at a time, objects in
/// confidence order. A candidate already emitted (same product) is skipped
/// and that object's cursor advances within the round. Truncates at `n_out`.
pub fn round_robin_merge(lists: &[Vec<Arc<ProductEntry>>], n_out: usize) -> RankedProducts {
    let mut cursors = vec![0usize; lists.len()];
    let mut emitted: Vec<Arc<ProductEntry>> = Vec::with_capacity(n_out);
    let mut seen: std::collections::BTreeSet<ImageSignature> = Default::default();
    loop {
        let mut progressed = false;
        for (list, cursor) in lists.iter().zip(cursors.iter_mut()) {
            if emitted.len() >= n_out {
                return emitted;
            }
            while *cursor < list.len() && seen.contains(&list[*cursor].signature) {
                *cursor += 1;
            }
            if *cursor < list.len() {
                let item = Arc::clone(&list[*cursor]);
                *cursor += 1;
                seen.insert(item.signature);
                emitted.push(item);
                progressed = true;
            }
        }
        if !progressed || emitted.len() >= n_out {
            return emitted;
        }
    }
}

/// JSONL-facing product record.
#[derive(Serialize, Deserialize)]
pub struct ProductRecordJson {
    pub signature: String,
    pub embedding: String,
    pub category: String,
    pub in_stock: bool,
    pub legitimate_domain: bool,
    pub safe: bool,
}

impl ProductRecordJson {
    pub fn from_entry(entry: &ProductEntry) -> Self {
        ProductRecordJson {
            signature: entry.signature.to_hex(),
            embedding: entry.embedding.to_base64(),
            category: entry.category.id().to_string(),
            in_stock: entry.in_stock,
            legitimate_domain: entry.legitimate_domain,
            safe: entry.safe,
        }
    }

    pub fn into_entry(self, taxonomy: &Taxonomy) -> Result<ProductEntry> {
        Ok(ProductEntry {
            signature: ImageSignature::from_hex(&self.signature)?,
            embedding: Embedding::from_base64(&self.embedding)?,
            category: taxonomy.resolve(&self.category)?,
            in_stock: self.in_stock,
            legitimate_domain: self.legitimate_domain,
            safe: self.safe,
        })
    }
}

/// Load a catalog from JSONL, appending onto `catalog`.
pub fn load_catalog_jsonl(
    path: impl AsRef<Path>,
    taxonomy: &Taxonomy,
    catalog: &mut ProductCatalog,
) -> Result<u64> {
    let mut count = 0;
    for item in crate::jsonl::read_jsonl::<ProductRecordJson>(path)? {
        let (_, record) = item?;
        catalog.insert(record.into_entry(taxonomy)?);
        count += 1;
    }
    Ok(count)
}
