//! Product-to-scenes serving path.
//!
//! Look up the query product's embedding, retrieve candidate scenes through
//! the object index, then refine: relevance filter against a calibrated
//! score threshold, exact/near-duplicate removal, and a diversity re-rank
//! that never moves the top result.
//!
//! Scores are negated euclidean distances, so "below threshold" means
//! farther than the calibrated distance; the monotone transform changes no
//! decision.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::{DedupSettings, RelevanceSettings, RerankSettings, ReverseSettings};
use crate::error::{Result, VpgError};
use crate::index::{HnswIndex, ObjectIndexEntry, ObjectKey};
use crate::stats::percentile_linear;
use crate::store::{FeatureStore, SceneEntry};
use crate::types::{Embedding, ImageSignature, NearDupHasher, NearDupSignature};

/// Minimum calibration sample size.
pub const MIN_CALIBRATION_QUERIES: usize = 100;

/// One candidate scene after per-scene aggregation: the best-scoring object
/// wins and carries the scene.
#[derive(Clone, Debug)]
pub struct SceneCandidate {
    pub scene: ImageSignature,
    pub best_object: ObjectIndexEntry,
    /// Similarity = negated euclidean distance; higher is better.
    pub score: f64,
    pub near_dup: NearDupSignature,
    /// Full-image embedding, the basis for near-dup codes and the diversity
    /// term in re-ranking.
    pub scene_embedding: Embedding,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RelevanceCalibration {
    pub threshold: f64,
    pub calibration_size: usize,
    pub percentile: f64,
}

impl RelevanceCalibration {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(
            &std::fs::read(path.as_ref()).map_err(|e| {
                VpgError::Store(format!("read calibration {}: {e}", path.as_ref().display()))
            })?,
        )?)
    }
}

/// Pool the per-query top-5 candidate scores and take one global percentile
/// (linear interpolation between order statistics).
pub fn calibrate_from_scores(
    pooled_top5: &[f64],
    n_queries: usize,
    percentile: f64,
) -> Result<RelevanceCalibration> {
    if n_queries < MIN_CALIBRATION_QUERIES {
        return Err(VpgError::InsufficientCalibrationData {
            required: MIN_CALIBRATION_QUERIES,
            got: n_queries,
        });
    }
    if pooled_top5.is_empty() {
        return Err(VpgError::InsufficientCalibrationData {
            required: 1,
            got: 0,
        });
    }
    if !(0.0..=1.0).contains(&percentile) {
        return Err(VpgError::InvalidArgument(format!(
            "percentile {percentile} outside [0,1]"
        )));
    }
    Ok(RelevanceCalibration {
        threshold: percentile_linear(pooled_top5, percentile),
        calibration_size: n_queries,
        percentile,
    })
}

/// Keep exactly the candidates scoring at or above the threshold; order
/// preserved. Idempotent.
pub fn relevance_filter(
    cands: Vec<SceneCandidate>,
    cal: &RelevanceCalibration,
) -> Vec<SceneCandidate> {
    cands
        .into_iter()
        .filter(|c| c.score >= cal.threshold)
        .collect()
}

/// Greedy front-to-back de-duplication over a descending-score list: drop any
/// candidate whose scene signature equals, or whose near-dup code lands
/// within `hamming_max` of, an already-kept candidate.
pub fn dedup(cands: Vec<SceneCandidate>, hamming_max: u32) -> Vec<SceneCandidate> {
    let mut kept: Vec<SceneCandidate> = Vec::with_capacity(cands.len());
    for cand in cands {
        let duplicate = kept.iter().any(|k| {
            k.scene == cand.scene || k.near_dup.hamming_distance(&cand.near_dup) <= hamming_max
        });
        if !duplicate {
            kept.push(cand);
        }
    }
    kept
}

/// Diversity re-rank. Slot 0 is always the input's top candidate; remaining
/// slots are filled greedily by maximal marginal relevance:
/// `score - lambda * max_similarity_to_picked`, similarity being negated
/// distance between scene embeddings. Truncates to `n_out`.
pub fn rerank(
    cands: Vec<SceneCandidate>,
    lambda: f64,
    n_out: usize,
) -> Result<Vec<SceneCandidate>> {
    if cands.is_empty() || n_out == 0 {
        return Ok(Vec::new());
    }
    let mut remaining: Vec<SceneCandidate> = cands;
    let mut picked: Vec<SceneCandidate> = Vec::with_capacity(n_out.min(remaining.len()));
    picked.push(remaining.remove(0));

    while picked.len() < n_out && !remaining.is_empty() {
        let mut best_idx = 0usize;
        let mut best_mmr = f64::NEG_INFINITY;
        for (i, cand) in remaining.iter().enumerate() {
            let mut max_sim = f64::NEG_INFINITY;
            for p in &picked {
                let sim = -cand
                    .scene_embedding
                    .euclidean_distance(&p.scene_embedding)?;
                if sim > max_sim {
                    max_sim = sim;
                }
            }
            let mmr = cand.score - lambda * max_sim;
            let better =
                mmr > best_mmr || (mmr == best_mmr && cand.scene < remaining[best_idx].scene);
            if better {
                best_mmr = mmr;
                best_idx = i;
            }
        }
        picked.push(remaining.remove(best_idx));
    }
    Ok(picked)
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct ReverseTrace {
    pub raw_candidates: usize,
    pub after_relevance: usize,
    pub after_dedup: usize,
    pub returned: usize,
}

#[derive(Debug)]
pub struct ReverseResult {
    pub product: ImageSignature,
    pub candidates: Vec<SceneCandidate>,
    pub trace: ReverseTrace,
}

pub type Extractor = Arc<dyn Fn(&ImageSignature) -> Result<SceneEntry> + Send + Sync>;

/// Extractor for engines with no embedding model attached: misses stay
/// misses.
pub fn no_extractor() -> Extractor {
    Arc::new(|sig| {
        Err(VpgError::UnknownEntity(format!(
            "no embedding available for {sig}"
        )))
    })
}

#[derive(Clone, Copy, Debug)]
pub struct ReverseConfig {
    pub k_raw: usize,
    pub ef_search: usize,
    pub hamming_max: u32,
    pub lambda: f64,
    pub n_out: usize,
    pub percentile: f64,
}

impl ReverseConfig {
    pub fn from_settings(
        reverse: ReverseSettings,
        relevance: RelevanceSettings,
        dedup: DedupSettings,
        rerank: RerankSettings,
        ef_search: usize,
    ) -> Self {
        ReverseConfig {
            k_raw: reverse.k_raw,
            ef_search,
            hamming_max: dedup.hamming_max,
            lambda: rerank.lambda,
            n_out: rerank.n_out,
            percentile: relevance.percentile,
        }
    }
}

impl Default for ReverseConfig {
    fn default() -> Self {
        ReverseConfig {
            k_raw: 150,
            ef_search: 128,
            hamming_max: 8,
            lambda: 0.5,
            n_out: 10,
            percentile: 0.75,
        }
    }
}

/// Stateless serving pipeline over an immutable index + store; any number of
/// concurrent queries.
pub struct ReversePipeline {
    store: Arc<FeatureStore>,
    index: Arc<HnswIndex<ObjectKey>>,
    hasher: Arc<NearDupHasher>,
    extractor: Extractor,
    pub config: ReverseConfig,
}

impl ReversePipeline {
    pub fn new(
        store: Arc<FeatureStore>,
        index: Arc<HnswIndex<ObjectKey>>,
        hasher: Arc<NearDupHasher>,
        extractor: Extractor,
        config: ReverseConfig,
    ) -> Self {
        ReversePipeline {
            store,
            index,
            hasher,
            extractor,
            config,
        }
    }

    /// ANN retrieval aggregated by parent scene (best object per scene),
    /// sorted by descending score, ties by ascending signature.
    pub fn retrieve_scenes(
        &self,
        product: &ImageSignature,
        k_raw: usize,
    ) -> Result<Vec<SceneCandidate>> {
        let (entry, _hit) = self
            .store
            .get_or_extract(product, |sig| (self.extractor)(sig))?;
        let hits = self.index.query(
            &entry.full_embedding,
            k_raw,
            self.config.ef_search.max(k_raw),
        )?;

        // best object per scene; results arrive distance-ascending so the
        // first sighting of a scene is its best
        let mut order: Vec<ImageSignature> = Vec::new();
        let mut best: std::collections::HashMap<ImageSignature, (ObjectKey, f64)> =
            std::collections::HashMap::new();
        for (key, dist) in hits {
            best.entry(key.parent).or_insert_with(|| {
                order.push(key.parent);
                (key, dist)
            });
        }

        let mut candidates = Vec::with_capacity(order.len());
        for scene_sig in order {
            let (key, dist) = best[&scene_sig];
            let Some(scene) = self.store.get(&scene_sig) else {
                continue; // index ahead of store; skip stale hit
            };
            let Some(obj) = scene.objects.get(key.ordinal as usize) else {
                continue;
            };
            let near_dup = self.hasher.signature(&scene.full_embedding)?;
            candidates.push(SceneCandidate {
                scene: scene_sig,
                best_object: ObjectIndexEntry {
                    key,
                    bbox: obj.bbox,
                    category: obj.category.clone(),
                    confidence: obj.confidence,
                    embedding: obj.embedding.clone(),
                },
                score: -dist,
                near_dup,
                scene_embedding: scene.full_embedding.clone(),
            });
        }
        candidates.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.scene.cmp(&b.scene))
        });
        Ok(candidates)
    }

    /// Pool top-5 scores over a calibration sample and fix the global
    /// relevance threshold.
    pub fn calibrate(
        &self,
        queries: &[ImageSignature],
        percentile: f64,
    ) -> Result<RelevanceCalibration> {
        if queries.len() < MIN_CALIBRATION_QUERIES {
            return Err(VpgError::InsufficientCalibrationData {
                required: MIN_CALIBRATION_QUERIES,
                got: queries.len(),
            });
        }
        let mut pool = Vec::with_capacity(queries.len() * 5);
        for q in queries {
            let cands = self.retrieve_scenes(q, self.config.k_raw)?;
            pool.extend(cands.iter().take(5).map(|c| c.score));
        }
        calibrate_from_scores(&pool, queries.len(), percentile)
    }

    /// Full serving path: retrieve, relevance-filter, dedup, re-rank.
    pub fn query(
        &self,
        product: &ImageSignature,
        cal: &RelevanceCalibration,
    ) -> Result<ReverseResult> {
        let raw = self.retrieve_scenes(product, self.config.k_raw)?;
        let mut trace = ReverseTrace {
            raw_candidates: raw.len(),
            ..ReverseTrace::default()
        };
        let relevant = relevance_filter(raw, cal);
        trace.after_relevance = relevant.len();
        let unique = dedup(relevant, self.config.hamming_max);
        trace.after_dedup = unique.len();
        let ranked = rerank(unique, self.config.lambda, self.config.n_out)?;
        trace.returned = ranked.len();
        Ok(ReverseResult {
            product: *product,
            candidates: ranked,
            trace,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{BoundingBox, Taxonomy, DEFAULT_NEAR_DUP_SEED};

    fn cand(tag: u64, score: f64, emb: Vec<f32>, near_dup: u64) -> SceneCandidate {
        let tax = Taxonomy::default_taxonomy();
        let sig = ImageSignature::digest(&tag.to_le_bytes());
        SceneCandidate {
            scene: sig,
            best_object: ObjectIndexEntry {
                key: ObjectKey {
                    parent: sig,
                    ordinal: 0,
                },
                bbox: BoundingBox::new(0, 0, 10, 10).unwrap(),
                category: tax.resolve("tops").unwrap(),
                confidence: 0.9,
                embedding: Embedding::new(emb.clone()).unwrap(),
            },
            score,
            near_dup: NearDupSignature(near_dup),
            scene_embedding: Embedding::new(emb).unwrap(),
        }
    }

    #[test]
    fn calibration_percentile_examples() {
        let pool: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let cal = calibrate_from_scores(&pool, 100, 0.75).unwrap();
        assert_eq!(cal.threshold, 75.25);
        let cal = calibrate_from_scores(&pool, 100, 0.0).unwrap();
        assert_eq!(cal.threshold, 1.0);
        let cal = calibrate_from_scores(&[4.25; 500], 100, 0.75).unwrap();
        assert_eq!(cal.threshold, 4.25);
    }

    #[test]
    fn calibration_needs_enough_queries() {
        let err = calibrate_from_scores(&[1.0], 99, 0.75).unwrap_err();
        assert!(matches!(err, VpgError::InsufficientCalibrationData { .. }));
    }

    fn cal(threshold: f64) -> RelevanceCalibration {
        RelevanceCalibration {
            threshold,
            calibration_size: 100,
            percentile: 0.75,
        }
    }

    #[test]
    fn relevance_filter_keeps_at_or_above_threshold_in_order() {
        let cands = vec![
            cand(1, 0.9, vec![1.0, 0.0], 0),
            cand(2, 0.7, vec![0.0, 1.0], 1),
            cand(3, 0.4, vec![1.0, 1.0], 2),
        ];
        let out = relevance_filter(cands.clone(), &cal(0.6));
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].scene, cands[0].scene);
        assert_eq!(out[1].scene, cands[1].scene);

        // idempotent
        let again = relevance_filter(out.clone(), &cal(0.6));
        assert_eq!(again.len(), out.len());

        // all below: empty
        assert!(relevance_filter(cands, &cal(2.0)).is_empty());
    }

    #[test]
    fn dedup_drops_exact_and_near_duplicates() {
        let a = cand(1, 0.9, vec![1.0, 0.0], 0b0);
        let mut a_again = cand(1, 0.8, vec![1.0, 0.0], 0xffff_ffff_ffff_ffff);
        a_again.scene = a.scene; // identical scene signature
        let near = cand(2, 0.7, vec![0.9, 0.1], 0b111111); // hamming 6 from a
        let far = cand(3, 0.6, vec![0.0, 1.0], !0b111u64 << 8);

        let out = dedup(vec![a.clone(), a_again, near, far.clone()], 8);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].scene, a.scene);
        assert_eq!(out[0].score, 0.9); // higher-scored copy survives
        assert_eq!(out[1].scene, far.scene);
    }

    #[test]
    fn dedup_leaves_distinct_candidates_alone() {
        let cands = vec![
            cand(1, 0.9, vec![1.0, 0.0], 0x0f0f),
            cand(2, 0.8, vec![0.0, 1.0], 0xf0f0_0000),
            cand(3, 0.7, vec![1.0, 1.0], 0xffff_0000_ffff_0000),
        ];
        let out = dedup(cands.clone(), 8);
        assert_eq!(out.len(), 3);
        // no surviving pair violates the predicates
        for i in 0..out.len() {
            for j in i + 1..out.len() {
                assert_ne!(out[i].scene, out[j].scene);
                assert!(out[i].near_dup.hamming_distance(&out[j].near_dup) > 8);
            }
        }
    }

    #[test]
    fn rerank_single_candidate_is_itself() {
        let c = cand(1, 0.9, vec![1.0, 0.0], 0);
        let out = rerank(vec![c.clone()], 0.5, 10).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].scene, c.scene);
    }

    #[test]
    fn rerank_lambda_zero_preserves_score_order() {
        let cands = vec![
            cand(1, 0.9, vec![1.0, 0.0, 0.0], 0),
            cand(2, 0.8, vec![1.0, 0.1, 0.0], 1),
            cand(3, 0.7, vec![0.0, 1.0, 0.0], 2),
            cand(4, 0.6, vec![0.0, 0.0, 1.0], 3),
        ];
        let out = rerank(cands.clone(), 0.0, 10).unwrap();
        let scenes: Vec<_> = out.iter().map(|c| c.scene).collect();
        let expect: Vec<_> = cands.iter().map(|c| c.scene).collect();
        assert_eq!(scenes, expect);
    }

    // independent greedy-MMR oracle over (score, embedding) pairs
    fn mmr_oracle(cands: &[SceneCandidate], lambda: f64, n_out: usize) -> Vec<ImageSignature> {
        let mut picked: Vec<usize> = vec![0];
        let mut rest: Vec<usize> = (1..cands.len()).collect();
        while picked.len() < n_out && !rest.is_empty() {
            let mut best = (f64::NEG_INFINITY, usize::MAX, 0usize);
            for (pos, &i) in rest.iter().enumerate() {
                let max_sim = picked
                    .iter()
                    .map(|&p| {
                        -cands[i]
                            .scene_embedding
                            .euclidean_distance(&cands[p].scene_embedding)
                            .unwrap()
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                let mmr = cands[i].score - lambda * max_sim;
                if mmr > best.0 {
                    best = (mmr, i, pos);
                }
            }
            picked.push(best.1);
            rest.remove(best.2);
        }
        picked.into_iter().map(|i| cands[i].scene).collect()
    }

    #[test]
    fn rerank_demotes_near_duplicate_of_pinned_top() {
        // hand-set 3-d embeddings: c1 sits on top of c0, c2 is orthogonal
        let cands = vec![
            cand(10, 1.00, vec![1.0, 0.0, 0.0], 0),
            cand(11, 0.95, vec![1.0, 0.05, 0.0], 1),
            cand(12, 0.90, vec![0.0, 1.0, 0.0], 2),
            cand(13, 0.50, vec![0.0, 0.9, 0.4], 3),
            cand(14, 0.40, vec![0.5, 0.5, 0.7], 4),
        ];
        let out = rerank(cands.clone(), 1.0, 5).unwrap();
        let scenes: Vec<_> = out.iter().map(|c| c.scene).collect();
        // top pinned; duplicate falls below the distinct third candidate
        assert_eq!(scenes[0], cands[0].scene);
        let pos_dup = scenes.iter().position(|s| *s == cands[1].scene).unwrap();
        let pos_distinct = scenes.iter().position(|s| *s == cands[2].scene).unwrap();
        assert!(pos_distinct < pos_dup, "{scenes:?}");
        // and the whole order matches the independent oracle
        assert_eq!(scenes, mmr_oracle(&cands, 1.0, 5));
    }

    #[test]
    fn rerank_is_prefix_selection_with_pinned_top() {
        let cands: Vec<SceneCandidate> = (0..8)
            .map(|i| {
                cand(
                    i,
                    1.0 - i as f64 * 0.07,
                    vec![(i % 3) as f32, (i % 5) as f32, 1.0],
                    i * 37,
                )
            })
            .collect();
        for lambda in [0.0, 0.3, 1.0, 5.0] {
            let out = rerank(cands.clone(), lambda, 4).unwrap();
            assert_eq!(out.len(), 4);
            assert_eq!(
                out[0].scene, cands[0].scene,
                "top pinned at lambda {lambda}"
            );
            // output is a subset of the input without repeats
            let in_set: std::collections::BTreeSet<_> = cands.iter().map(|c| c.scene).collect();
            let mut seen = std::collections::BTreeSet::new();
            for c in &out {
                assert!(in_set.contains(&c.scene));
                assert!(seen.insert(c.scene), "duplicate emitted");
            }
            assert_eq!(
                out.iter().map(|c| c.scene).collect::<Vec<_>>(),
                mmr_oracle(&cands, lambda, 4)
            );
        }
    }

    #[test]
    fn near_dup_hasher_integration_sanity() {
        // same embedding -> same code; orthogonal -> far code
        let h = NearDupHasher::new(3, DEFAULT_NEAR_DUP_SEED);
        let a = Embedding::new(vec![1.0, 0.0, 0.0]).unwrap();
        let b = Embedding::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(h.signature(&a).unwrap(), h.signature(&b).unwrap());
    }
}
