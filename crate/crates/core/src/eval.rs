//! Offline metrics: rated-retrieval precision, detection mAP and
//! recall-at-precision, ANN recall against an exhaustive oracle, and the
//! module tap rate.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Result, VpgError};
use crate::index::{HnswIndex, IndexKey};
use crate::synth::GeneratedWorld;
use crate::types::{BoundingBox, Category, Embedding, ImageSignature};

/// Human-rating scale for retrieval results, best to worst. `DidNotLoad`
/// marks results that could not be judged at all.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceLevel {
    ExtremelySimilar,
    Similar,
    MarginallySimilar,
    NotSimilar,
    DidNotLoad,
}

impl RelevanceLevel {
    fn quality(self) -> Option<u8> {
        match self {
            RelevanceLevel::ExtremelySimilar => Some(4),
            RelevanceLevel::Similar => Some(3),
            RelevanceLevel::MarginallySimilar => Some(2),
            RelevanceLevel::NotSimilar => Some(1),
            RelevanceLevel::DidNotLoad => None,
        }
    }

    pub fn at_or_above(self, threshold: RelevanceLevel) -> bool {
        match (self.quality(), threshold.quality()) {
            (Some(q), Some(t)) => q >= t,
            _ => false,
        }
    }
}

/// One query with its ranked result ratings.
#[derive(Clone, Debug)]
pub struct RatedQuery {
    pub query: ImageSignature,
    pub ratings: Vec<RelevanceLevel>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct PrecisionReport {
    pub value: f64,
    pub evaluated: usize,
    /// Queries dropped because a top-k result did not load.
    pub excluded: usize,
}

/// Mean over queries of (top-k results rated at or above `threshold`) /
/// min(k, results). Queries whose top-k contains a `DidNotLoad` rating are
/// excluded from the mean and reported.
pub fn precision_at_k(
    queries: &[RatedQuery],
    k: usize,
    threshold: RelevanceLevel,
) -> Result<PrecisionReport> {
    if k == 0 {
        return Err(VpgError::InvalidArgument("k must be positive".into()));
    }
    let mut total = 0.0;
    let mut evaluated = 0usize;
    let mut excluded = 0usize;
    for q in queries {
        if q.ratings.is_empty() {
            return Err(VpgError::EmptyEvaluation);
        }
        let top = &q.ratings[..k.min(q.ratings.len())];
        if top.contains(&RelevanceLevel::DidNotLoad) {
            excluded += 1;
            continue;
        }
        let hits = top.iter().filter(|r| r.at_or_above(threshold)).count();
        total += hits as f64 / top.len() as f64;
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(VpgError::EmptyEvaluation);
    }
    Ok(PrecisionReport {
        value: total / evaluated as f64,
        evaluated,
        excluded,
    })
}

/// One detection evaluation image: ground truth and scored predictions.
#[derive(Clone, Debug, Default)]
pub struct DetectionEvalCase {
    pub ground_truth: Vec<(BoundingBox, Category)>,
    pub predictions: Vec<(BoundingBox, Category, f32)>,
}

struct PooledPrediction {
    confidence: f32,
    case: usize,
    bbox: BoundingBox,
}

fn greedy_matches(
    cases: &[DetectionEvalCase],
    category: &Category,
    preds: &[PooledPrediction],
    iou_threshold: f64,
) -> Vec<bool> {
    // matched flags per (case, gt index) for this category
    let mut matched: Vec<Vec<bool>> = cases
        .iter()
        .map(|c| vec![false; c.ground_truth.len()])
        .collect();
    let mut is_tp = Vec::with_capacity(preds.len());
    for pred in preds {
        let gts = &cases[pred.case].ground_truth;
        let mut best: Option<(f64, usize)> = None;
        for (gi, (gbox, gcat)) in gts.iter().enumerate() {
            if gcat != category || matched[pred.case][gi] {
                continue;
            }
            let iou = pred.bbox.iou(gbox);
            if iou >= iou_threshold && best.map(|(b, _)| iou > b).unwrap_or(true) {
                best = Some((iou, gi));
            }
        }
        match best {
            Some((_, gi)) => {
                matched[pred.case][gi] = true;
                is_tp.push(true);
            }
            None => is_tp.push(false),
        }
    }
    is_tp
}

/// Per-category average precision (all-point interpolation over the PR
/// curve, predictions greedily matched by descending confidence at the IoU
/// threshold), averaged over the categories present in ground truth.
/// Duplicate predictions on one ground-truth box count as false positives.
pub fn mean_average_precision(cases: &[DetectionEvalCase], iou_threshold: f64) -> f64 {
    let mut categories: BTreeMap<Category, usize> = BTreeMap::new();
    for case in cases {
        for (_, cat) in &case.ground_truth {
            *categories.entry(cat.clone()).or_insert(0) += 1;
        }
    }
    if categories.is_empty() {
        return 0.0;
    }

    let mut ap_sum = 0.0;
    for (category, n_gt) in &categories {
        let mut preds: Vec<PooledPrediction> = Vec::new();
        for (ci, case) in cases.iter().enumerate() {
            for (bbox, cat, conf) in &case.predictions {
                if cat == category {
                    preds.push(PooledPrediction {
                        confidence: *conf,
                        case: ci,
                        bbox: *bbox,
                    });
                }
            }
        }
        preds.sort_by(|a, b| {
            b.confidence
                .partial_cmp(&a.confidence)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.case.cmp(&b.case))
                .then_with(|| a.bbox.cmp(&b.bbox))
        });
        let is_tp = greedy_matches(cases, category, &preds, iou_threshold);

        let mut recalls = Vec::with_capacity(preds.len());
        let mut precisions = Vec::with_capacity(preds.len());
        let mut tp = 0usize;
        for (i, &hit) in is_tp.iter().enumerate() {
            if hit {
                tp += 1;
            }
            recalls.push(tp as f64 / *n_gt as f64);
            precisions.push(tp as f64 / (i + 1) as f64);
        }
        // monotone precision envelope from the right
        let mut envelope = precisions.clone();
        for i in (0..envelope.len().saturating_sub(1)).rev() {
            envelope[i] = envelope[i].max(envelope[i + 1]);
        }
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for i in 0..recalls.len() {
            if recalls[i] > prev_recall {
                ap += (recalls[i] - prev_recall) * envelope[i];
                prev_recall = recalls[i];
            }
        }
        ap_sum += ap;
    }
    ap_sum / categories.len() as f64
}

/// Sweep confidence thresholds and return the best recall among operating
/// points with pooled precision at or above the floor; 0 when none
/// qualifies.
pub fn recall_at_precision(cases: &[DetectionEvalCase], precision_floor: f64) -> f64 {
    let total_gt: usize = cases.iter().map(|c| c.ground_truth.len()).sum();
    if total_gt == 0 {
        return 0.0;
    }
    let mut thresholds: Vec<f32> = cases
        .iter()
        .flat_map(|c| c.predictions.iter().map(|(_, _, conf)| *conf))
        .collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    thresholds.dedup();

    let categories: std::collections::BTreeSet<Category> = cases
        .iter()
        .flat_map(|c| c.ground_truth.iter().map(|(_, cat)| cat.clone()))
        .chain(
            cases
                .iter()
                .flat_map(|c| c.predictions.iter().map(|(_, cat, _)| cat.clone())),
        )
        .collect();

    let mut best_recall = 0.0f64;
    for theta in thresholds {
        let mut tp = 0usize;
        let mut n_pred = 0usize;
        for category in &categories {
            let mut preds: Vec<PooledPrediction> = Vec::new();
            for (ci, case) in cases.iter().enumerate() {
                for (bbox, cat, conf) in &case.predictions {
                    if cat == category && *conf >= theta {
                        preds.push(PooledPrediction {
                            confidence: *conf,
                            case: ci,
                            bbox: *bbox,
                        });
                    }
                }
            }
            preds.sort_by(|a, b| {
                b.confidence
                    .partial_cmp(&a.confidence)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| a.case.cmp(&b.case))
                    .then_with(|| a.bbox.cmp(&b.bbox))
            });
            n_pred += preds.len();
            tp += greedy_matches(cases, category, &preds, 0.5)
                .iter()
                .filter(|&&t| t)
                .count();
        }
        if n_pred == 0 {
            continue;
        }
        let precision = tp as f64 / n_pred as f64;
        let recall = tp as f64 / total_gt as f64;
        if precision >= precision_floor {
            best_recall = best_recall.max(recall);
        }
    }
    best_recall
}

/// Exhaustive k-nearest oracle: scalar loops, ties by ascending key.
pub fn exact_top_k<K: Clone + Ord>(
    corpus: &[(K, Embedding)],
    query: &Embedding,
    k: usize,
) -> Vec<(K, f64)> {
    let mut scored: Vec<(f64, K)> = corpus
        .iter()
        .map(|(key, e)| {
            let mut acc = 0.0f64;
            for (a, b) in e.values().iter().zip(query.values()) {
                let d = (*a - *b) as f64;
                acc += d * d;
            }
            (acc.sqrt(), key.clone())
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    scored
        .into_iter()
        .take(k)
        .map(|(d, key)| (key, d))
        .collect()
}

/// Mean over queries of |ANN top-k ∩ exact top-k| / k.
pub fn ann_recall<K: IndexKey>(
    index: &HnswIndex<K>,
    corpus: &[(K, Embedding)],
    queries: &[Embedding],
    k: usize,
    ef_search: usize,
) -> Result<f64> {
    if queries.is_empty() || k == 0 {
        return Err(VpgError::EmptyEvaluation);
    }
    let mut total = 0.0;
    for q in queries {
        let exact: std::collections::BTreeSet<K> = exact_top_k(corpus, q, k)
            .into_iter()
            .map(|(key, _)| key)
            .collect();
        let approx = index.query(q, k, ef_search)?;
        let hits = approx.iter().filter(|(key, _)| exact.contains(key)).count();
        total += hits as f64 / k as f64;
    }
    Ok(total / queries.len() as f64)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TapRate {
    pub rate: f64,
    /// More close-ups than impressions: only possible with broken logging.
    pub anomalous: bool,
}

/// Module close-up volume over module impression volume.
pub fn module_tap_rate(closeups: u64, impressions: u64) -> Result<TapRate> {
    if impressions == 0 {
        return Err(VpgError::DivisionByZero(
            "module_tap_rate with zero impressions".into(),
        ));
    }
    let rate = closeups as f64 / impressions as f64;
    Ok(TapRate {
        rate,
        anomalous: rate > 1.0,
    })
}

/// Ground-truth rater over the synthetic world, replacing human judgment:
/// a scene is extremely similar to a product query iff it contains that
/// exact product; similar iff it has a same-category object within latent
/// distance `tau`; marginally similar iff same category only.
pub struct SyntheticRater<'w> {
    world: &'w GeneratedWorld,
    pub tau: f64,
}

impl<'w> SyntheticRater<'w> {
    pub fn new(world: &'w GeneratedWorld, tau: f64) -> Self {
        SyntheticRater { world, tau }
    }

    pub fn rate_scene_for_product(
        &self,
        product_id: u32,
        scene: &ImageSignature,
    ) -> RelevanceLevel {
        let Some(scene_spec) = self.world.scene_by_signature(scene) else {
            return RelevanceLevel::DidNotLoad;
        };
        let Some(product) = self.world.world().product(product_id) else {
            return RelevanceLevel::DidNotLoad;
        };
        if scene_spec
            .objects
            .iter()
            .any(|o| o.product_id == product_id)
        {
            return RelevanceLevel::ExtremelySimilar;
        }
        let mut best = RelevanceLevel::NotSimilar;
        for obj in &scene_spec.objects {
            if obj.category != product.category {
                continue;
            }
            let other = self.world.world().product(obj.product_id).unwrap();
            let d = product
                .latent
                .euclidean_distance(&other.latent)
                .unwrap_or(f64::INFINITY);
            if d <= self.tau {
                return RelevanceLevel::Similar;
            }
            best = RelevanceLevel::MarginallySimilar;
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Taxonomy;

    fn sig(i: u64) -> ImageSignature {
        ImageSignature::digest(&i.to_le_bytes())
    }

    fn cat(id: &str) -> Category {
        Taxonomy::default_taxonomy().resolve(id).unwrap()
    }

    fn bx(x: u32, y: u32, w: u32, h: u32) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    use RelevanceLevel::*;

    fn rated(levels: &[RelevanceLevel]) -> Vec<RatedQuery> {
        levels
            .iter()
            .enumerate()
            .map(|(i, l)| RatedQuery {
                query: sig(i as u64),
                ratings: vec![*l],
            })
            .collect()
    }

    #[test]
    fn precision_at_1_hand_count() {
        // hand count: 3 of 5 top-1 ratings are extremely similar
        let qs = rated(&[
            ExtremelySimilar,
            Similar,
            ExtremelySimilar,
            NotSimilar,
            ExtremelySimilar,
        ]);
        let report = precision_at_k(&qs, 1, ExtremelySimilar).unwrap();
        assert_eq!(report.value, 0.6);
        assert_eq!(report.evaluated, 5);
        assert_eq!(report.excluded, 0);
    }

    #[test]
    fn similar_threshold_counts_both_levels() {
        let qs = rated(&[
            ExtremelySimilar,
            Similar,
            ExtremelySimilar,
            NotSimilar,
            ExtremelySimilar,
        ]);
        let report = precision_at_k(&qs, 1, Similar).unwrap();
        assert_eq!(report.value, 0.8);
    }

    #[test]
    fn all_extremely_similar_scores_one() {
        let qs = vec![RatedQuery {
            query: sig(0),
            ratings: vec![ExtremelySimilar; 5],
        }];
        assert_eq!(precision_at_k(&qs, 5, ExtremelySimilar).unwrap().value, 1.0);
    }

    #[test]
    fn not_similar_threshold_is_always_one_on_loadable_results() {
        let qs = rated(&[ExtremelySimilar, Similar, MarginallySimilar, NotSimilar]);
        assert_eq!(precision_at_k(&qs, 1, NotSimilar).unwrap().value, 1.0);
    }

    #[test]
    fn did_not_load_excludes_query_with_report() {
        let mut qs = rated(&[ExtremelySimilar, ExtremelySimilar]);
        qs.push(RatedQuery {
            query: sig(9),
            ratings: vec![DidNotLoad],
        });
        let report = precision_at_k(&qs, 1, ExtremelySimilar).unwrap();
        assert_eq!(report.value, 1.0);
        assert_eq!(report.evaluated, 2);
        assert_eq!(report.excluded, 1);
    }

    #[test]
    fn empty_evaluation_is_an_error() {
        assert!(matches!(
            precision_at_k(&[], 1, Similar),
            Err(VpgError::EmptyEvaluation)
        ));
    }

    #[test]
    fn map_single_true_positive_is_one() {
        let case = DetectionEvalCase {
            ground_truth: vec![(bx(0, 0, 10, 10), cat("tops"))],
            // IoU vs GT: overlap 8*10=80, union 120 -> 2/3, above threshold 0.5
            predictions: vec![(bx(2, 0, 10, 10), cat("tops"), 0.9)],
        };
        assert!((case.predictions[0].0.iou(&case.ground_truth[0].0) - 2.0 / 3.0).abs() < 1e-9);
        assert_eq!(mean_average_precision(&[case], 0.5), 1.0);
    }

    #[test]
    fn map_low_iou_is_zero() {
        let case = DetectionEvalCase {
            ground_truth: vec![(bx(0, 0, 10, 10), cat("tops"))],
            predictions: vec![(bx(8, 0, 10, 10), cat("tops"), 0.9)], // IoU ~0.11
        };
        assert_eq!(mean_average_precision(&[case], 0.5), 0.0);
    }

    #[test]
    fn map_duplicate_prediction_counts_as_false_positive() {
        // frozen micro-case: two GT; the duplicate sits between the recall
        // steps, so AP = 0.5*1 + 0.5*(2/3) = 5/6
        let case = DetectionEvalCase {
            ground_truth: vec![
                (bx(0, 0, 10, 10), cat("tops")),
                (bx(100, 0, 10, 10), cat("tops")),
            ],
            predictions: vec![
                (bx(0, 0, 10, 10), cat("tops"), 0.9),   // TP on GT1
                (bx(1, 0, 10, 10), cat("tops"), 0.8),   // duplicate on GT1 -> FP
                (bx(100, 0, 10, 10), cat("tops"), 0.7), // TP on GT2
            ],
        };
        let expected = 0.5 + 0.5 * (2.0 / 3.0);
        let got = mean_average_precision(&[case], 0.5);
        assert!((got - expected).abs() < 1e-9, "got {got}, want {expected}");
        assert!(got < 1.0);
    }

    #[test]
    fn map_is_invariant_under_uniform_confidence_scaling() {
        let mut r = crate::rng::seeded(&[b"map-scale"]);
        let cats = ["tops", "shoes", "rugs"];
        let mut cases = Vec::new();
        for _ in 0..5 {
            let mut case = DetectionEvalCase::default();
            for g in 0..4u32 {
                case.ground_truth
                    .push((bx(g * 40, 0, 20, 20), cat(cats[(g % 3) as usize])));
            }
            for p in 0..6u32 {
                let conf = 0.3 + 0.6 * crate::rng::uniform01(&mut r) as f32;
                case.predictions.push((
                    bx(p * 40 % 160, (p % 2) * 4, 20, 20),
                    cat(cats[(p % 3) as usize]),
                    conf,
                ));
            }
            cases.push(case);
        }
        let base = mean_average_precision(&cases, 0.5);
        for scale in [0.1f32, 0.5, 0.9] {
            let scaled: Vec<DetectionEvalCase> = cases
                .iter()
                .map(|c| DetectionEvalCase {
                    ground_truth: c.ground_truth.clone(),
                    predictions: c
                        .predictions
                        .iter()
                        .map(|(b, cat, conf)| (*b, cat.clone(), conf * scale))
                        .collect(),
                })
                .collect();
            let got = mean_average_precision(&scaled, 0.5);
            assert!((got - base).abs() < 1e-12, "scale {scale}: {got} vs {base}");
        }
    }

    fn rp_case() -> Vec<DetectionEvalCase> {
        // 10 GT; 9 true positives at conf >= 0.70 plus false positives at
        // 0.68 and 0.66
        let mut case = DetectionEvalCase::default();
        for i in 0..10u32 {
            case.ground_truth.push((bx(i * 50, 0, 10, 10), cat("tops")));
        }
        let confs = [0.95, 0.93, 0.91, 0.89, 0.87, 0.85, 0.80, 0.75, 0.70];
        for (i, conf) in confs.iter().enumerate() {
            case.predictions
                .push((bx(i as u32 * 50, 0, 10, 10), cat("tops"), *conf));
        }
        case.predictions
            .push((bx(0, 500, 10, 10), cat("tops"), 0.68));
        case.predictions
            .push((bx(50, 500, 10, 10), cat("tops"), 0.66));
        vec![case]
    }

    #[test]
    fn recall_at_precision_hand_case() {
        // frozen by exhaustive threshold sweep: max recall with precision
        // >= 0.9 is 9/10
        assert_eq!(recall_at_precision(&rp_case(), 0.90), 0.9);
    }

    #[test]
    fn recall_at_precision_perfect_detector() {
        let case = DetectionEvalCase {
            ground_truth: vec![
                (bx(0, 0, 10, 10), cat("tops")),
                (bx(50, 0, 10, 10), cat("shoes")),
            ],
            predictions: vec![
                (bx(0, 0, 10, 10), cat("tops"), 0.9),
                (bx(50, 0, 10, 10), cat("shoes"), 0.8),
            ],
        };
        assert_eq!(recall_at_precision(&[case], 0.90), 1.0);
    }

    #[test]
    fn recall_at_precision_all_wrong_is_zero() {
        let case = DetectionEvalCase {
            ground_truth: vec![(bx(0, 0, 10, 10), cat("tops"))],
            predictions: vec![(bx(500, 500, 10, 10), cat("shoes"), 0.99)],
        };
        assert_eq!(recall_at_precision(&[case], 0.90), 0.0);
    }

    #[test]
    fn recall_at_floor_zero_is_overall_recall() {
        assert_eq!(recall_at_precision(&rp_case(), 0.0), 0.9);
    }

    #[test]
    fn tap_rate_cases() {
        let t = module_tap_rate(6, 100).unwrap();
        assert_eq!(t.rate, 0.06);
        assert!(!t.anomalous);
        assert_eq!(module_tap_rate(0, 50).unwrap().rate, 0.0);
        let t = module_tap_rate(101, 100).unwrap();
        assert_eq!(t.rate, 1.01);
        assert!(t.anomalous);
        assert!(matches!(
            module_tap_rate(5, 0),
            Err(VpgError::DivisionByZero(_))
        ));
    }

    #[test]
    fn ann_recall_exhaustive_ef_is_one() {
        let mut r = crate::rng::seeded(&[b"ann-recall"]);
        let corpus: Vec<(ImageSignature, Embedding)> = (0..300u64)
            .map(|i| {
                let values: Vec<f32> = (0..16)
                    .map(|_| crate::rng::standard_normal(&mut r) as f32)
                    .collect();
                (sig(i), Embedding::new(values).unwrap())
            })
            .collect();
        let index =
            HnswIndex::build(16, crate::index::HnswParams::default(), corpus.clone()).unwrap();
        let queries: Vec<Embedding> = corpus.iter().take(20).map(|(_, e)| e.clone()).collect();
        let recall = ann_recall(&index, &corpus, &queries, 10, corpus.len()).unwrap();
        assert_eq!(recall, 1.0);
    }

    #[test]
    fn metrics_are_order_insensitive() {
        let mut cases = rp_case();
        let base_map = mean_average_precision(&cases, 0.5);
        let base_rp = recall_at_precision(&cases, 0.9);
        cases[0].predictions.reverse();
        cases[0].ground_truth.reverse();
        assert_eq!(mean_average_precision(&cases, 0.5), base_map);
        assert_eq!(recall_at_precision(&cases, 0.9), base_rp);
    }
}
