//! Class-agnostic non-maximum suppression.
//!
//! Detectors emit duplicate boxes for one physical object, often under
//! different class labels. Suppressing across all classes jointly removes
//! those duplicates; survivors keep their argmax-class category.

use std::collections::BTreeMap;

use crate::error::{Result, VpgError};
use crate::types::{BoundingBox, Category, DetectedObject, Embedding};

/// Pre-NMS detector output: a box with per-class scores and the final
/// confidence used for suppression ordering.
#[derive(Clone, Debug)]
pub struct RawDetection {
    pub bbox: BoundingBox,
    pub scores: BTreeMap<Category, f32>,
    pub confidence: f32,
    pub embedding: Embedding,
}

impl RawDetection {
    pub fn from_object(obj: &DetectedObject) -> Self {
        let mut scores = BTreeMap::new();
        scores.insert(obj.category.clone(), obj.confidence);
        RawDetection {
            bbox: obj.bbox,
            scores,
            confidence: obj.confidence,
            embedding: obj.embedding.clone(),
        }
    }

    fn argmax_category(&self) -> Result<Category> {
        self.scores
            .iter()
            .max_by(|(ca, sa), (cb, sb)| {
                sa.partial_cmp(sb)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    // equal scores: category order keeps this deterministic
                    .then_with(|| cb.cmp(ca))
            })
            .map(|(c, _)| c.clone())
            .ok_or_else(|| VpgError::InvalidArgument("detection with no class scores".into()))
    }
}

/// Greedy suppression by descending confidence, ignoring class labels: any
/// pair of survivors has IoU below `iou_threshold`. Ties on confidence prefer
/// the larger box, then lexicographic box coordinates.
pub fn class_agnostic_nms(
    detections: &[RawDetection],
    iou_threshold: f64,
) -> Result<Vec<DetectedObject>> {
    if !(0.0..1.0).contains(&iou_threshold) || iou_threshold == 0.0 {
        return Err(VpgError::InvalidArgument(format!(
            "iou_threshold {iou_threshold} outside (0,1)"
        )));
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        let da = &detections[a];
        let db = &detections[b];
        db.confidence
            .partial_cmp(&da.confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| db.bbox.area().cmp(&da.bbox.area()))
            .then_with(|| da.bbox.cmp(&db.bbox))
    });

    let mut kept: Vec<usize> = Vec::new();
    for idx in order {
        let candidate = &detections[idx].bbox;
        let suppressed = kept
            .iter()
            .any(|&k| detections[k].bbox.iou(candidate) >= iou_threshold);
        if !suppressed {
            kept.push(idx);
        }
    }

    kept.into_iter()
        .map(|i| {
            let det = &detections[i];
            DetectedObject::new(
                det.bbox,
                det.argmax_category()?,
                det.confidence.clamp(0.0, 1.0),
                det.embedding.clone(),
            )
        })
        .collect()
}
