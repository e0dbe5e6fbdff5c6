//! Object index construction: corpus filtering, the image-to-object pivot,
//! and HNSW index building over object and product embeddings.

pub mod hnsw;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Result, VpgError};
use crate::store::SceneEntry;
use crate::types::{
    BoundingBox, Category, CorpusMetadata, Embedding, ImageSignature, Taxonomy, SIGNATURE_LEN,
};

pub use hnsw::{HnswIndex, HnswParams, IndexKey, DEFAULT_HNSW_SEED, INDEX_MAGIC};

/// A scene as the corpus filters see it: the stored entry plus its declared
/// quality metadata.
#[derive(Clone, Debug)]
pub struct CorpusRecord {
    pub scene: SceneEntry,
    pub metadata: CorpusMetadata,
}

impl CorpusRecord {
    /// Entries that declared no metadata are treated permissively; the edge
    /// signals simply never fire for them.
    pub fn from_entry(scene: SceneEntry) -> Self {
        let metadata = scene
            .metadata
            .unwrap_or_else(|| CorpusMetadata::permissive(1000, 1000));
        CorpusRecord { scene, metadata }
    }
}

#[derive(Clone, Debug)]
pub struct FilterConfig {
    pub min_width: u32,
    pub min_height: u32,
    pub max_blur_score: f32,
    pub min_object_confidence: f32,
    /// Object area as a fraction of image area.
    pub min_object_area_fraction: f64,
    /// None = whole taxonomy is allowed.
    pub allowed_categories: Option<BTreeSet<String>>,
    pub min_distinct_categories: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_width: 300,
            min_height: 300,
            max_blur_score: 0.6,
            min_object_confidence: 0.6,
            min_object_area_fraction: 0.005,
            allowed_categories: None,
            min_distinct_categories: 3,
        }
    }
}

pub const FILTER_INSPIRATIONAL: &str = "inspirational";
pub const FILTER_IMAGE_QUALITY: &str = "image_quality";
pub const FILTER_SHOPPABILITY: &str = "shoppability";

#[derive(Clone, Debug, Default, Serialize)]
pub struct FilterReport {
    pub input_count: u64,
    pub kept_count: u64,
    pub rejects: BTreeMap<String, u64>,
}

impl FilterReport {
    /// input = kept + sum(rejects); every record is attributed exactly once.
    pub fn conserves(&self) -> bool {
        self.input_count == self.kept_count + self.rejects.values().sum::<u64>()
    }
}

enum Verdict {
    Keep(CorpusRecord),
    Reject(&'static str),
}

/// Per-record verdict, independent of anything else in the stream. Filters
/// run in a fixed tier order — inspirational, image quality, shoppability —
/// and the first failing tier gets the reject. Surviving records come back
/// with their failing objects dropped.
fn judge(mut record: CorpusRecord, config: &FilterConfig) -> Verdict {
    let m = &record.metadata;
    if !m.is_inspirational {
        return Verdict::Reject(FILTER_INSPIRATIONAL);
    }
    if m.is_grayscale
        || m.is_collage_or_screenshot
        || m.width < config.min_width
        || m.height < config.min_height
        || m.blur_score > config.max_blur_score
    {
        return Verdict::Reject(FILTER_IMAGE_QUALITY);
    }
    let image_area = (m.width as f64) * (m.height as f64);
    record.scene.objects.retain(|obj| {
        if obj.confidence < config.min_object_confidence {
            return false;
        }
        if (obj.bbox.area() as f64) < config.min_object_area_fraction * image_area {
            return false;
        }
        match &config.allowed_categories {
            Some(allowed) => allowed.contains(obj.category.id()),
            None => true,
        }
    });
    let distinct: BTreeSet<&str> = record
        .scene
        .objects
        .iter()
        .map(|o| o.category.id())
        .collect();
    if distinct.len() < config.min_distinct_categories {
        return Verdict::Reject(FILTER_SHOPPABILITY);
    }
    Verdict::Keep(record)
}

pub fn filter_corpus(
    records: impl IntoIterator<Item = CorpusRecord>,
    config: &FilterConfig,
) -> (Vec<CorpusRecord>, FilterReport) {
    let mut report = FilterReport::default();
    let mut kept = Vec::new();
    for record in records {
        report.input_count += 1;
        match judge(record, config) {
            Verdict::Keep(r) => {
                report.kept_count += 1;
                kept.push(r);
            }
            Verdict::Reject(filter) => {
                *report.rejects.entry(filter.to_string()).or_insert(0) += 1;
            }
        }
    }
    debug_assert!(report.conserves());
    (kept, report)
}

/// Key of one indexed object: parent scene plus the object's ordinal within
/// it.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize)]
pub struct ObjectKey {
    pub parent: ImageSignature,
    pub ordinal: u32,
}

impl IndexKey for ObjectKey {
    const KIND: u8 = 2;
    const ENCODED_LEN: usize = SIGNATURE_LEN + 4;

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(self.parent.as_bytes());
        out.extend_from_slice(&self.ordinal.to_le_bytes());
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != Self::ENCODED_LEN {
            return Err(VpgError::Store("truncated object key".into()));
        }
        Ok(ObjectKey {
            parent: ImageSignature::from_bytes(bytes[..SIGNATURE_LEN].try_into().unwrap()),
            ordinal: u32::from_le_bytes(bytes[SIGNATURE_LEN..].try_into().unwrap()),
        })
    }
}

/// One object pivoted out of its scene, ready for indexing.
#[derive(Clone, Debug)]
pub struct ObjectIndexEntry {
    pub key: ObjectKey,
    pub bbox: BoundingBox,
    pub category: Category,
    pub confidence: f32,
    pub embedding: Embedding,
}

/// Reformat image-keyed entries into object-keyed ones. Ordinals follow each
/// scene's object order; the parent back-reference is the scene signature.
pub fn pivot_to_objects(
    scenes: impl IntoIterator<Item = SceneEntry>,
) -> Result<Vec<ObjectIndexEntry>> {
    let mut seen: BTreeSet<ImageSignature> = BTreeSet::new();
    let mut out = Vec::new();
    for scene in scenes {
        if !seen.insert(scene.signature) {
            return Err(VpgError::DuplicateKey(scene.signature.to_hex()));
        }
        for (ordinal, obj) in scene.objects.into_iter().enumerate() {
            out.push(ObjectIndexEntry {
                key: ObjectKey {
                    parent: scene.signature,
                    ordinal: ordinal as u32,
                },
                bbox: obj.bbox,
                category: obj.category,
                confidence: obj.confidence,
                embedding: obj.embedding,
            });
        }
    }
    Ok(out)
}

pub fn build_object_index(
    entries: Vec<ObjectIndexEntry>,
    dim: usize,
    params: HnswParams,
) -> Result<HnswIndex<ObjectKey>> {
    HnswIndex::build(
        dim,
        params,
        entries.into_iter().map(|e| (e.key, e.embedding)),
    )
}

/// Resolve an object key back to its entry fields via the store.
pub fn object_lookup(
    store: &crate::store::FeatureStore,
    key: &ObjectKey,
) -> Option<ObjectIndexEntry> {
    let entry = store.peek(&key.parent)?;
    let obj = entry.objects.get(key.ordinal as usize)?;
    Some(ObjectIndexEntry {
        key: *key,
        bbox: obj.bbox,
        category: obj.category.clone(),
        confidence: obj.confidence,
        embedding: obj.embedding.clone(),
    })
}

/// Parse a filter config from key-value text (see `config` module grammar).
pub fn filter_config_from_kv(
    kv: &crate::config::KvConfig,
    taxonomy: &Taxonomy,
) -> Result<FilterConfig> {
    let d = FilterConfig::default();
    let allowed = match kv.get_str("allowed_categories")? {
        None => None,
        Some(list) => {
            let mut set = BTreeSet::new();
            for id in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                if !taxonomy.contains(id) {
                    return Err(VpgError::Config(vec![format!(
                        "allowed_categories: {id:?} not in taxonomy"
                    )]));
                }
                set.insert(id.to_string());
            }
            Some(set)
        }
    };
    let cfg = FilterConfig {
        min_width: kv.get_u32("min_width")?.unwrap_or(d.min_width),
        min_height: kv.get_u32("min_height")?.unwrap_or(d.min_height),
        max_blur_score: kv
            .get_f64("max_blur_score")?
            .unwrap_or(d.max_blur_score as f64) as f32,
        min_object_confidence: kv
            .get_f64("min_object_confidence")?
            .unwrap_or(d.min_object_confidence as f64) as f32,
        min_object_area_fraction: kv
            .get_f64("min_object_area_fraction")?
            .unwrap_or(d.min_object_area_fraction),
        allowed_categories: allowed,
        min_distinct_categories: kv
            .get_u32("min_distinct_categories")?
            .map(|v| v as usize)
            .unwrap_or(d.min_distinct_categories),
    };
    kv.reject_unknown()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::EntrySource;
    use crate::types::{DetectedObject, Taxonomy};

    fn tax() -> Taxonomy {
        Taxonomy::default_taxonomy()
    }

    fn obj(cat: &str, conf: f32, area_px: u32) -> DetectedObject {
        DetectedObject {
            bbox: BoundingBox::new(0, 0, area_px, area_px).unwrap(),
            category: tax().resolve(cat).unwrap(),
            confidence: conf,
            embedding: Embedding::new(vec![1.0, 0.0]).unwrap(),
        }
    }

    fn record(tag: u64, cats: &[&str]) -> CorpusRecord {
        CorpusRecord {
            scene: SceneEntry {
                signature: ImageSignature::digest(&tag.to_le_bytes()),
                full_embedding: Embedding::new(vec![0.5, 0.5]).unwrap(),
                objects: cats.iter().map(|c| obj(c, 0.9, 200)).collect(),
                ingested_at: 0,
                source: EntrySource::Backfill,
                metadata: None,
            },
            metadata: CorpusMetadata::permissive(1000, 1000),
        }
    }

    #[test]
    fn two_categories_rejected_by_shoppability() {
        let (kept, report) = filter_corpus(
            vec![record(1, &["tops", "shoes"])],
            &FilterConfig::default(),
        );
        assert!(kept.is_empty());
        assert_eq!(report.rejects.get(FILTER_SHOPPABILITY), Some(&1));
        assert!(report.conserves());
    }

    #[test]
    fn grayscale_rejected_by_image_quality() {
        let mut r = record(2, &["tops", "shoes", "bags"]);
        r.metadata.is_grayscale = true;
        let (kept, report) = filter_corpus(vec![r], &FilterConfig::default());
        assert!(kept.is_empty());
        assert_eq!(report.rejects.get(FILTER_IMAGE_QUALITY), Some(&1));
    }

    #[test]
    fn non_inspirational_attributed_to_first_tier() {
        let mut r = record(3, &["tops", "shoes", "bags"]);
        r.metadata.is_inspirational = false;
        r.metadata.is_grayscale = true; // would also fail quality
        let (_, report) = filter_corpus(vec![r], &FilterConfig::default());
        assert_eq!(report.rejects.get(FILTER_INSPIRATIONAL), Some(&1));
        assert_eq!(report.rejects.get(FILTER_IMAGE_QUALITY), None);
    }

    #[test]
    fn low_confidence_object_pruned_but_record_kept() {
        let mut r = record(4, &["tops", "shoes", "bags"]);
        r.scene.objects.push(obj("hats", 0.2, 200));
        let (kept, report) = filter_corpus(vec![r], &FilterConfig::default());
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].scene.objects.len(), 3);
        assert!(report.rejects.is_empty());
    }

    #[test]
    fn tiny_objects_and_disallowed_categories_pruned() {
        let cfg = FilterConfig {
            allowed_categories: Some(
                ["tops", "shoes", "bags", "hats"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
            ),
            ..FilterConfig::default()
        };
        let mut r = record(5, &["tops", "shoes", "bags"]);
        r.scene.objects.push(obj("hats", 0.9, 10)); // 100px of 1M: too small
        r.scene.objects.push(obj("rugs", 0.9, 200)); // not allowed
        let (kept, _) = filter_corpus(vec![r], &cfg);
        assert_eq!(kept[0].scene.objects.len(), 3);
    }

    #[test]
    fn verdicts_are_order_insensitive() {
        let mut records: Vec<CorpusRecord> = Vec::new();
        for i in 0..30 {
            let mut r = record(i, &["tops", "shoes", "bags"]);
            if i % 3 == 0 {
                r.metadata.is_inspirational = false;
            }
            if i % 5 == 0 {
                r.metadata.blur_score = 0.9;
            }
            records.push(r);
        }
        let cfg = FilterConfig::default();
        let (kept_fwd, report_fwd) = filter_corpus(records.clone(), &cfg);
        records.reverse();
        let (kept_rev, report_rev) = filter_corpus(records, &cfg);
        let fwd: BTreeSet<_> = kept_fwd.iter().map(|r| r.scene.signature).collect();
        let rev: BTreeSet<_> = kept_rev.iter().map(|r| r.scene.signature).collect();
        assert_eq!(fwd, rev);
        assert_eq!(report_fwd.kept_count, report_rev.kept_count);
        assert_eq!(report_fwd.rejects, report_rev.rejects);
    }

    #[test]
    fn pivot_empty_scene_yields_nothing() {
        let out = pivot_to_objects(vec![record(1, &[]).scene]).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn pivot_counts_and_backrefs() {
        // 100 scenes alternating 4 and 5 objects: 450 entries
        let mut scenes = Vec::new();
        for i in 0..100u64 {
            let cats: &[&str] = if i % 2 == 0 {
                &["tops", "shoes", "bags", "hats"]
            } else {
                &["tops", "shoes", "bags", "hats", "dresses"]
            };
            scenes.push(record(i, cats).scene);
        }
        let by_sig: BTreeMap<ImageSignature, usize> = scenes
            .iter()
            .map(|s| (s.signature, s.objects.len()))
            .collect();
        let out = pivot_to_objects(scenes).unwrap();
        assert_eq!(out.len(), 450);
        // every entry's parent resolves, ordinal in range, round-trip multiset
        let mut grouped: BTreeMap<ImageSignature, Vec<u32>> = BTreeMap::new();
        for e in &out {
            assert!(by_sig.contains_key(&e.key.parent));
            grouped.entry(e.key.parent).or_default().push(e.key.ordinal);
        }
        for (sig, ordinals) in grouped {
            let expected: Vec<u32> = (0..by_sig[&sig] as u32).collect();
            assert_eq!(ordinals, expected, "ordinals for {sig}");
        }
    }

    #[test]
    fn pivot_rejects_duplicate_scene_signature() {
        let s = record(9, &["tops", "shoes", "bags"]).scene;
        let err = pivot_to_objects(vec![s.clone(), s]).unwrap_err();
        assert!(matches!(err, VpgError::DuplicateKey(_)));
    }
}
