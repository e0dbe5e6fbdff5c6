//! The engine: one object owning the store, catalog, indexes, calibration,
//! and both serving pipelines. The CLI, the HTTP service, and the Python
//! bindings all drive this type, which is what keeps their answers
//! identical for identical queries.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::cache::{CacheStats, Clock, SystemClock};
use crate::config::EngineConfig;
use crate::error::{Result, VpgError};
use crate::eval::{precision_at_k, DetectionEvalCase, PrecisionReport, RatedQuery, RelevanceLevel};
use crate::forward::{
    load_catalog_jsonl, ForwardPipeline, ProductCatalog, ProductRecordJson, RankedProducts,
    UserContext,
};
use crate::index::{
    build_object_index, filter_corpus, pivot_to_objects, CorpusRecord, FilterConfig, FilterReport,
    HnswIndex, ObjectKey,
};
use crate::jsonl::{
    read_jsonl, JsonlWriter, PredictionRecordJson, SceneRecordJson, TruthRecordJson,
};
use crate::reverse::{
    no_extractor, Extractor, RelevanceCalibration, ReverseConfig, ReversePipeline, ReverseResult,
};
use crate::store::{FeatureStore, SceneEntry, StoreMetrics};
use crate::synth::{GeneratedWorld, WorldConfig};
use crate::types::{BoundingBox, ImageSignature, NearDupHasher, Taxonomy, DEFAULT_NEAR_DUP_SEED};

#[derive(Debug, Clone, Serialize)]
pub struct BuildReport {
    pub filter: FilterReport,
    /// Store entries with no objects and no metadata (catalog embeddings),
    /// not part of the scene corpus.
    pub skipped_objectless: u64,
    pub objects_indexed: usize,
    pub products_indexed: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsSnapshot {
    pub store: StoreMetrics,
    pub store_hit_rate: f64,
    pub store_entries: usize,
    pub cache: Option<CacheStats>,
    pub cache_hit_rate: Option<f64>,
    pub object_index_queries: Option<u64>,
    pub product_index_queries: Option<u64>,
    pub forward_executions: Option<u64>,
}

pub struct Engine {
    pub config: EngineConfig,
    taxonomy: Taxonomy,
    store: Arc<FeatureStore>,
    catalog: Arc<ProductCatalog>,
    world: Option<Arc<GeneratedWorld>>,
    clock: Arc<dyn Clock>,
    object_index: Option<Arc<HnswIndex<ObjectKey>>>,
    product_index: Option<Arc<HnswIndex<ImageSignature>>>,
    calibration: Option<RelevanceCalibration>,
    reverse: Option<ReversePipeline>,
    forward: Option<ForwardPipeline>,
}

impl Engine {
    pub fn open(config: EngineConfig) -> Result<Self> {
        Self::open_with_clock(config, Arc::new(SystemClock))
    }

    pub fn open_with_clock(config: EngineConfig, clock: Arc<dyn Clock>) -> Result<Self> {
        config.validate()?;
        let taxonomy = Taxonomy::default_taxonomy();
        let store = Arc::new(FeatureStore::open(&config.store_dir)?);

        let mut catalog = ProductCatalog::new();
        if config.catalog_path().exists() {
            load_catalog_jsonl(config.catalog_path(), &taxonomy, &mut catalog)?;
        }

        let world = match &config.world {
            Some(w) => Some(Arc::new(GeneratedWorld::generate(
                w.clone(),
                taxonomy.clone(),
            )?)),
            None => None,
        };

        let object_index = if config.object_index_path().exists() {
            Some(Arc::new(HnswIndex::load(config.object_index_path())?))
        } else {
            None
        };
        let product_index = if config.product_index_path().exists() {
            Some(Arc::new(HnswIndex::load(config.product_index_path())?))
        } else {
            None
        };
        let calibration = if config.calibration_path().exists() {
            Some(RelevanceCalibration::load(config.calibration_path())?)
        } else {
            None
        };

        let mut engine = Engine {
            config,
            taxonomy,
            store,
            catalog: Arc::new(catalog),
            world,
            clock,
            object_index,
            product_index,
            calibration,
            reverse: None,
            forward: None,
        };
        engine.rebuild_pipelines();
        Ok(engine)
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn store(&self) -> &Arc<FeatureStore> {
        &self.store
    }

    pub fn catalog(&self) -> &Arc<ProductCatalog> {
        &self.catalog
    }

    pub fn world(&self) -> Option<&Arc<GeneratedWorld>> {
        self.world.as_ref()
    }

    pub fn object_index(&self) -> Option<&Arc<HnswIndex<ObjectKey>>> {
        self.object_index.as_ref()
    }

    pub fn product_index(&self) -> Option<&Arc<HnswIndex<ImageSignature>>> {
        self.product_index.as_ref()
    }

    pub fn calibration(&self) -> Option<RelevanceCalibration> {
        self.calibration
    }

    pub fn ready_to_serve(&self) -> bool {
        self.reverse.is_some() && self.forward.is_some()
    }

    fn extractor(&self) -> Extractor {
        match &self.world {
            Some(world) => {
                let world = Arc::clone(world);
                Arc::new(move |sig: &ImageSignature| world.extract_entry(sig))
            }
            None => no_extractor(),
        }
    }

    fn rebuild_pipelines(&mut self) {
        self.reverse = self.object_index.as_ref().map(|index| {
            ReversePipeline::new(
                Arc::clone(&self.store),
                Arc::clone(index),
                Arc::new(NearDupHasher::new(index.dim(), DEFAULT_NEAR_DUP_SEED)),
                self.extractor(),
                ReverseConfig::from_settings(
                    self.config.reverse,
                    self.config.relevance,
                    self.config.dedup,
                    self.config.rerank,
                    self.config.hnsw.ef_search,
                ),
            )
        });
        self.forward = self.product_index.as_ref().map(|index| {
            ForwardPipeline::new(
                Arc::clone(&self.store),
                Arc::clone(index),
                Arc::clone(&self.catalog),
                self.extractor(),
                self.config.forward,
                self.config.hnsw.ef_search,
                Arc::clone(&self.clock),
            )
        });
    }

    /// Bulk-ingest scene records from JSONL.
    pub fn backfill_file(&self, path: impl AsRef<Path>) -> Result<u64> {
        let mut entries = Vec::new();
        for item in read_jsonl::<SceneRecordJson>(path)? {
            let (line, record) = item?;
            let entry = record
                .into_entry(&self.taxonomy)
                .map_err(|e| VpgError::Format {
                    line,
                    message: e.to_string(),
                })?;
            entries.push(entry);
        }
        self.store.backfill(entries)
    }

    /// Apply one streamed update from a parsed record.
    pub fn apply_update(&self, entry: SceneEntry) -> Result<()> {
        self.store.apply_update(entry)
    }

    /// Append products: extend the on-disk catalog, register them in memory,
    /// and backfill their image embeddings into the feature store. Indexes
    /// pick them up on the next `index build`.
    pub fn append_products_file(&mut self, path: impl AsRef<Path>) -> Result<u64> {
        let mut incoming = Vec::new();
        for item in read_jsonl::<ProductRecordJson>(&path)? {
            let (line, record) = item?;
            let entry = record
                .into_entry(&self.taxonomy)
                .map_err(|e| VpgError::Format {
                    line,
                    message: e.to_string(),
                })?;
            incoming.push(entry);
        }

        let mut writer = JsonlWriter::append(self.config.catalog_path())?;
        let mut catalog = ProductCatalog::new();
        for existing in self.catalog.iter() {
            catalog.insert((**existing).clone());
        }
        let mut pseudo_entries = Vec::new();
        for entry in &incoming {
            writer.write(&ProductRecordJson::from_entry(entry))?;
            pseudo_entries.push(SceneEntry {
                signature: entry.signature,
                full_embedding: entry.embedding.clone(),
                objects: vec![],
                ingested_at: 0,
                source: crate::store::EntrySource::Backfill,
                metadata: None,
            });
            catalog.insert(entry.clone());
        }
        writer.finish()?;
        self.store.backfill(pseudo_entries)?;
        let count = incoming.len() as u64;
        self.catalog = Arc::new(catalog);
        self.rebuild_pipelines();
        Ok(count)
    }

    /// Build both ANN indexes from the store and catalog, persist them, and
    /// swap them into the serving pipelines.
    pub fn build_indexes(&mut self, filter_config: &FilterConfig) -> Result<BuildReport> {
        let mut skipped = 0u64;
        let mut records = Vec::new();
        for entry in self.store.scan_all() {
            if entry.objects.is_empty() && entry.metadata.is_none() {
                skipped += 1;
                continue;
            }
            records.push(CorpusRecord::from_entry((*entry).clone()));
        }
        let (kept, filter_report) = filter_corpus(records, filter_config);
        let entries = pivot_to_objects(kept.into_iter().map(|r| r.scene))?;
        let dim = entries
            .first()
            .map(|e| e.embedding.dim())
            .or_else(|| self.catalog.iter().next().map(|p| p.embedding.dim()))
            .or_else(|| self.config.world.as_ref().map(|w| w.dimension))
            .unwrap_or(256);

        let objects_indexed = entries.len();
        let object_index = build_object_index(entries, dim, self.config.hnsw.params())?;
        let product_index = self.catalog.build_index(dim, self.config.hnsw.params())?;
        let products_indexed = product_index.len();

        std::fs::create_dir_all(&self.config.index_dir)?;
        object_index.save(self.config.object_index_path())?;
        product_index.save(self.config.product_index_path())?;

        self.object_index = Some(Arc::new(object_index));
        self.product_index = Some(Arc::new(product_index));
        self.rebuild_pipelines();
        Ok(BuildReport {
            filter: filter_report,
            skipped_objectless: skipped,
            objects_indexed,
            products_indexed,
        })
    }

    fn reverse_pipeline(&self) -> Result<&ReversePipeline> {
        self.reverse
            .as_ref()
            .ok_or_else(|| VpgError::Store("object index not built".into()))
    }

    fn forward_pipeline(&self) -> Result<&ForwardPipeline> {
        self.forward
            .as_ref()
            .ok_or_else(|| VpgError::Store("product index not built".into()))
    }

    /// Calibrate the relevance threshold over a sample of catalog products
    /// and persist it next to the indexes.
    pub fn calibrate(&mut self) -> Result<RelevanceCalibration> {
        let sample: Vec<ImageSignature> = self
            .catalog
            .iter()
            .take(self.config.relevance.calibration_size)
            .map(|p| p.signature)
            .collect();
        let cal = self
            .reverse_pipeline()?
            .calibrate(&sample, self.config.relevance.percentile)?;
        std::fs::create_dir_all(&self.config.index_dir)?;
        cal.save(self.config.calibration_path())?;
        self.calibration = Some(cal);
        Ok(cal)
    }

    /// Pin an externally chosen relevance threshold (e.g. one derived from a
    /// known corpus separation, or loaded from another calibration file)
    /// for this engine instance; `calibrate` is what persists thresholds.
    pub fn set_calibration(&mut self, cal: RelevanceCalibration) {
        self.calibration = Some(cal);
    }

    fn calibration_or_open(&self) -> RelevanceCalibration {
        // an uncalibrated engine filters nothing: threshold below any score
        self.calibration.unwrap_or(RelevanceCalibration {
            threshold: f64::NEG_INFINITY,
            calibration_size: 0,
            percentile: self.config.relevance.percentile,
        })
    }

    pub fn reverse_query(&self, product: &ImageSignature) -> Result<ReverseResult> {
        self.reverse_pipeline()?
            .query(product, &self.calibration_or_open())
    }

    pub fn forward_query(
        &self,
        scene: &ImageSignature,
        ctx: &UserContext,
    ) -> Result<(RankedProducts, bool)> {
        self.forward_pipeline()?.forward_lookup(scene, ctx)
    }

    pub fn forward_batch(
        &self,
        scenes: &[ImageSignature],
        ctx: &UserContext,
    ) -> Result<BTreeMap<ImageSignature, Result<(RankedProducts, bool)>>> {
        self.forward_pipeline()?.forward_batch(scenes, ctx)
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        let store = self.store.metrics();
        let store_hit_rate = store.hit_rate();
        let cache = self.forward.as_ref().map(|f| f.cache_stats());
        MetricsSnapshot {
            store_hit_rate,
            store_entries: self.store.len(),
            cache_hit_rate: cache.as_ref().map(|c| c.hit_rate()),
            cache,
            object_index_queries: self.object_index.as_ref().map(|i| i.queries_executed()),
            product_index_queries: self.product_index.as_ref().map(|i| i.queries_executed()),
            forward_executions: self.forward.as_ref().map(|f| f.executions()),
            store,
        }
    }
}

/// Generate a synthetic corpus to JSONL: ingestion records, the product
/// catalog, and the ground-truth sidecar used by retrieval evaluation.
pub fn generate_world_files(
    config: WorldConfig,
    scenes_path: impl AsRef<Path>,
    products_path: impl AsRef<Path>,
    truth_path: Option<&Path>,
) -> Result<(u64, u64)> {
    let world = GeneratedWorld::generate(config, Taxonomy::default_taxonomy())?;

    let mut scenes_out = JsonlWriter::create(scenes_path)?;
    for spec in world.scenes() {
        let entry = world.scene_entry(spec)?;
        scenes_out.write(&SceneRecordJson::from_entry(&entry))?;
    }
    scenes_out.finish()?;

    let mut products_out = JsonlWriter::create(products_path)?;
    for product in world.world().products() {
        let entry = world.product_entry(product.id)?;
        products_out.write(&ProductRecordJson::from_entry(&entry))?;
    }
    products_out.finish()?;

    if let Some(path) = truth_path {
        let mut truth_out = JsonlWriter::create(path)?;
        for spec in world.scenes() {
            truth_out.write(&TruthRecordJson {
                signature: spec.signature.to_hex(),
                kind: "scene".to_string(),
                product_ids: spec.objects.iter().map(|o| o.product_id).collect(),
                categories: spec
                    .objects
                    .iter()
                    .map(|o| o.category.id().to_string())
                    .collect(),
            })?;
        }
        for product in world.world().products() {
            truth_out.write(&TruthRecordJson {
                signature: product.signature.to_hex(),
                kind: "product".to_string(),
                product_ids: vec![product.id],
                categories: vec![product.category.id().to_string()],
            })?;
        }
        truth_out.finish()?;
    }
    Ok((
        world.scenes().len() as u64,
        world.world().products().len() as u64,
    ))
}

/// File-based retrieval evaluation: predictions against the ground-truth
/// sidecar. Extremely similar = the result scene contains the query product;
/// similar = it contains a same-category object (the category proxy stands
/// in for latent distances, which files do not carry).
pub fn evaluate_retrieval_files(
    pred_path: impl AsRef<Path>,
    truth_path: impl AsRef<Path>,
    ks: &[usize],
) -> Result<BTreeMap<String, PrecisionReport>> {
    struct Truth {
        product_ids: Vec<u32>,
        categories: Vec<String>,
    }
    let mut truth: BTreeMap<ImageSignature, Truth> = BTreeMap::new();
    for item in read_jsonl::<TruthRecordJson>(truth_path)? {
        let (_, record) = item?;
        truth.insert(
            ImageSignature::from_hex(&record.signature)?,
            Truth {
                product_ids: record.product_ids,
                categories: record.categories,
            },
        );
    }

    let mut rated: Vec<RatedQuery> = Vec::new();
    for item in read_jsonl::<PredictionRecordJson>(pred_path)? {
        let (_, record) = item?;
        let query = ImageSignature::from_hex(&record.query)?;
        // queries with no results (or no truth) cannot be rated
        if record.results.is_empty() {
            continue;
        }
        let Some(q_truth) = truth.get(&query) else {
            continue;
        };
        let ratings = record
            .results
            .iter()
            .map(|hex| -> Result<RelevanceLevel> {
                let sig = ImageSignature::from_hex(hex)?;
                Ok(match truth.get(&sig) {
                    None => RelevanceLevel::DidNotLoad,
                    Some(r_truth) => {
                        if q_truth
                            .product_ids
                            .iter()
                            .any(|p| r_truth.product_ids.contains(p))
                        {
                            RelevanceLevel::ExtremelySimilar
                        } else if q_truth
                            .categories
                            .iter()
                            .any(|c| r_truth.categories.contains(c))
                        {
                            RelevanceLevel::Similar
                        } else {
                            RelevanceLevel::NotSimilar
                        }
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rated.push(RatedQuery { query, ratings });
    }

    let mut out = BTreeMap::new();
    for &k in ks {
        out.insert(
            format!("extremely_similar@{k}"),
            precision_at_k(&rated, k, RelevanceLevel::ExtremelySimilar)?,
        );
        out.insert(
            format!("similar@{k}"),
            precision_at_k(&rated, k, RelevanceLevel::Similar)?,
        );
    }
    Ok(out)
}

/// JSONL schema for detection evaluation cases.
#[derive(Debug, serde::Deserialize, Serialize)]
pub struct DetectionCaseJson {
    pub ground_truth: Vec<GtJson>,
    pub predictions: Vec<PredJson>,
}

#[derive(Debug, serde::Deserialize, Serialize)]
pub struct GtJson {
    #[serde(rename = "box")]
    pub bbox: [u32; 4],
    pub category: String,
}

#[derive(Debug, serde::Deserialize, Serialize)]
pub struct PredJson {
    #[serde(rename = "box")]
    pub bbox: [u32; 4],
    pub category: String,
    pub confidence: f32,
}

pub fn read_detection_cases(
    path: impl AsRef<Path>,
    taxonomy: &Taxonomy,
) -> Result<Vec<DetectionEvalCase>> {
    let mut cases = Vec::new();
    for item in read_jsonl::<DetectionCaseJson>(path)? {
        let (line, record) = item?;
        let mk = |b: [u32; 4]| BoundingBox::new(b[0], b[1], b[2], b[3]);
        let mut case = DetectionEvalCase::default();
        for gt in record.ground_truth {
            case.ground_truth.push((
                mk(gt.bbox).map_err(|e| VpgError::Format {
                    line,
                    message: e.to_string(),
                })?,
                taxonomy.resolve(&gt.category)?,
            ));
        }
        for p in record.predictions {
            case.predictions.push((
                mk(p.bbox).map_err(|e| VpgError::Format {
                    line,
                    message: e.to_string(),
                })?,
                taxonomy.resolve(&p.category)?,
                p.confidence,
            ));
        }
        cases.push(case);
    }
    Ok(cases)
}

/// Write ranked reverse results as a prediction row (for `eval retrieval`).
pub fn prediction_from_result(result: &ReverseResult) -> PredictionRecordJson {
    PredictionRecordJson {
        query: result.product.to_hex(),
        results: result.candidates.iter().map(|c| c.scene.to_hex()).collect(),
    }
}

/// Reverse result in the CLI/service JSON shape.
pub fn reverse_result_to_json(result: &ReverseResult) -> serde_json::Value {
    serde_json::json!({
        "product": result.product.to_hex(),
        "results": result.candidates.iter().map(|c| serde_json::json!({
            "scene": c.scene.to_hex(),
            "score": c.score,
            "distance": -c.score,
            "box": [c.best_object.bbox.x, c.best_object.bbox.y,
                    c.best_object.bbox.w, c.best_object.bbox.h],
            "object_ordinal": c.best_object.key.ordinal,
            "category": c.best_object.category.id(),
        })).collect::<Vec<_>>(),
        "trace": {
            "raw_candidates": result.trace.raw_candidates,
            "after_relevance": result.trace.after_relevance,
            "after_dedup": result.trace.after_dedup,
            "returned": result.trace.returned,
        },
    })
}

/// Forward result in the CLI/service JSON shape.
pub fn forward_result_to_json(
    scene: &ImageSignature,
    ctx: &UserContext,
    products: &RankedProducts,
    served_from_cache: bool,
) -> serde_json::Value {
    serde_json::json!({
        "scene": scene.to_hex(),
        "ctx": { "gender": ctx.gender.to_string(), "country": ctx.country },
        "served_from_cache": served_from_cache,
        "products": products.iter().map(|p| serde_json::json!({
            "signature": p.signature.to_hex(),
            "category": p.category.id(),
        })).collect::<Vec<_>>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::ManualClock;
    use crate::forward::Gender;

    fn world_config() -> WorldConfig {
        WorldConfig {
            seed: 31,
            dimension: 64,
            product_count: 120,
            scene_count: 150,
            noise_sigma: 0.0,
            ..WorldConfig::default()
        }
    }

    struct Ctx {
        dir: tempfile::TempDir,
        config: EngineConfig,
    }

    fn ctx() -> Ctx {
        let dir = tempfile::tempdir().unwrap();
        let config = EngineConfig {
            store_dir: dir.path().join("store"),
            index_dir: dir.path().join("index"),
            world: Some(world_config()),
            relevance: crate::config::RelevanceSettings {
                percentile: 0.75,
                calibration_size: 100,
            },
            ..EngineConfig::default()
        };
        Ctx { dir, config }
    }

    fn populated_engine(c: &Ctx) -> Engine {
        let scenes = c.dir.path().join("scenes.jsonl");
        let products = c.dir.path().join("products.jsonl");
        let truth = c.dir.path().join("truth.jsonl");
        generate_world_files(world_config(), &scenes, &products, Some(&truth)).unwrap();

        let mut engine = Engine::open_with_clock(
            c.config.clone(),
            Arc::new(ManualClock::new(1_700_000_000_000)),
        )
        .unwrap();
        engine.backfill_file(&scenes).unwrap();
        engine.append_products_file(&products).unwrap();
        engine.build_indexes(&FilterConfig::default()).unwrap();
        engine.calibrate().unwrap();
        engine
    }

    #[test]
    fn full_flow_reverse_hits_ground_truth() {
        let c = ctx();
        let engine = populated_engine(&c);
        let world = engine.world().unwrap().clone();
        // the corpus filters legitimately drop some scenes (low-confidence
        // objects), so condition on products that still have an indexed scene
        let indexed: std::collections::BTreeSet<ImageSignature> = engine
            .object_index()
            .unwrap()
            .keys()
            .iter()
            .map(|k| k.parent)
            .collect();
        let mut checked = 0;
        for product in world.world().products().iter().take(40) {
            let has_indexed_scene = world
                .scenes_of_product(product.id)
                .iter()
                .any(|s| indexed.contains(s));
            if !has_indexed_scene {
                continue;
            }
            let result = engine.reverse_query(&product.signature).unwrap();
            assert!(!result.candidates.is_empty(), "product {}", product.id);
            let top = &result.candidates[0];
            assert!(
                world.scene_contains_product(&top.scene, product.id),
                "top scene must contain the query product"
            );
            assert_eq!(top.score, 0.0, "noiseless exact match");
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn full_flow_forward_returns_scene_products() {
        let c = ctx();
        let engine = populated_engine(&c);
        let world = engine.world().unwrap().clone();
        let ctx_user = UserContext::new(Gender::Female, "US");
        let spec = &world.scenes()[0];
        let (products, cached) = engine.forward_query(&spec.signature, &ctx_user).unwrap();
        assert!(!cached);
        let truth: std::collections::BTreeSet<ImageSignature> = spec
            .objects
            .iter()
            .map(|o| world.world().product(o.product_id).unwrap().signature)
            .collect();
        for p in &products {
            assert!(truth.contains(&p.signature));
        }
        let (_, cached) = engine.forward_query(&spec.signature, &ctx_user).unwrap();
        assert!(cached);
    }

    #[test]
    fn engine_reloads_persisted_state() {
        let c = ctx();
        let (sig, before) = {
            let engine = populated_engine(&c);
            let world = engine.world().unwrap();
            let product = world
                .world()
                .products()
                .iter()
                .find(|p| !world.scenes_of_product(p.id).is_empty())
                .unwrap();
            let result = engine.reverse_query(&product.signature).unwrap();
            (
                product.signature,
                serde_json::to_string(&reverse_result_to_json(&result)).unwrap(),
            )
        };
        // fresh engine from disk answers identically
        let engine = Engine::open_with_clock(
            c.config.clone(),
            Arc::new(ManualClock::new(1_700_000_000_000)),
        )
        .unwrap();
        assert!(engine.ready_to_serve());
        assert!(engine.calibration().is_some());
        let result = engine.reverse_query(&sig).unwrap();
        let after = serde_json::to_string(&reverse_result_to_json(&result)).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn build_on_empty_store_yields_empty_index() {
        let dir = tempfile::tempdir().unwrap();
        let config = EngineConfig {
            store_dir: dir.path().join("store"),
            index_dir: dir.path().join("index"),
            ..EngineConfig::default()
        };
        let mut engine = Engine::open(config).unwrap();
        let report = engine.build_indexes(&FilterConfig::default()).unwrap();
        assert_eq!(report.objects_indexed, 0);
        assert_eq!(report.filter.input_count, 0);
        assert!(engine.object_index().unwrap().is_empty());
    }

    #[test]
    fn eval_retrieval_files_end_to_end() {
        let c = ctx();
        let engine = populated_engine(&c);
        let world = engine.world().unwrap().clone();

        let pred_path = c.dir.path().join("pred.jsonl");
        let mut w = JsonlWriter::create(&pred_path).unwrap();
        let mut queries = 0;
        for product in world.world().products() {
            if world.scenes_of_product(product.id).is_empty() {
                continue;
            }
            let result = engine.reverse_query(&product.signature).unwrap();
            if result.candidates.is_empty() {
                continue;
            }
            w.write(&prediction_from_result(&result)).unwrap();
            queries += 1;
        }
        w.finish().unwrap();
        assert!(queries > 0);

        let truth_path = c.dir.path().join("truth.jsonl");
        let metrics = evaluate_retrieval_files(&pred_path, &truth_path, &[1, 5]).unwrap();
        let es1 = metrics["extremely_similar@1"];
        assert_eq!(es1.value, 1.0, "noiseless world is exact at the top slot");
        assert!(metrics.contains_key("similar@5"));
    }

    #[test]
    fn metrics_snapshot_shapes_up() {
        let c = ctx();
        let engine = populated_engine(&c);
        let m = engine.metrics();
        assert!(m.store_entries > 0);
        assert!(m.object_index_queries.is_some());
        let json = serde_json::to_value(&m).unwrap();
        assert!(json.get("store_hit_rate").is_some());
    }
}
