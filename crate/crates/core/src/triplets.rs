//! Hard-triplet dataset generation from engagement logs.
//!
//! Pipeline: mine candidate triplets from close-up counts (every ordered
//! candidate pair of one query where the positive out-engaged the negative),
//! keep the ones the embedding model currently gets wrong, label them with a
//! pluggable oracle standing in for human raters, then assemble a dataset
//! mixing hard and random triplets.
//!
//! The mining comparator follows the prose definition of a hard triplet —
//! the model places the negative closer than the positive (`d_pos > d_neg`);
//! the opposite comparator is selectable for comparison runs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VpgError};
use crate::rng;
use crate::synth::GeneratedWorld;
use crate::types::{BoundingBox, Category, Embedding, ImageSignature, Taxonomy};

/// Calendar day as days since the Unix epoch; parses `YYYY-MM-DD`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Day(pub i64);

impl Day {
    pub fn from_ymd(y: i64, m: u32, d: u32) -> Self {
        // Howard Hinnant's days_from_civil
        let y = if m <= 2 { y - 1 } else { y };
        let era = if y >= 0 { y } else { y - 399 } / 400;
        let yoe = y - era * 400;
        let mp = if m > 2 { m - 3 } else { m + 9 } as i64;
        let doy = (153 * mp + 2) / 5 + d as i64 - 1;
        let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
        Day(era * 146097 + doe - 719468)
    }

    fn to_ymd(self) -> (i64, u32, u32) {
        let z = self.0 + 719468;
        let era = if z >= 0 { z } else { z - 146096 } / 146097;
        let doe = z - era * 146097;
        let yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
        let y = yoe + era * 400;
        let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
        let mp = (5 * doy + 2) / 153;
        let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
        let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
        (if m <= 2 { y + 1 } else { y }, m, d)
    }
}

impl fmt::Display for Day {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (y, m, d) = self.to_ymd();
        write!(f, "{y:04}-{m:02}-{d:02}")
    }
}

impl fmt::Debug for Day {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl FromStr for Day {
    type Err = VpgError;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('-').collect();
        let bad = || VpgError::InvalidArgument(format!("bad date {s:?}, want YYYY-MM-DD"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let y: i64 = parts[0].parse().map_err(|_| bad())?;
        let m: u32 = parts[1].parse().map_err(|_| bad())?;
        let d: u32 = parts[2].parse().map_err(|_| bad())?;
        if !(1..=12).contains(&m) || !(1..=31).contains(&d) {
            return Err(bad());
        }
        Ok(Day::from_ymd(y, m, d))
    }
}

impl Serialize for Day {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Day {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One interaction row: a user clicked into `candidate_signature` shown at
/// `candidate_slot` for an object query.
#[derive(Clone, Debug)]
pub struct EngagementLog {
    pub query_signature: ImageSignature,
    pub query_box: BoundingBox,
    pub query_category: Category,
    pub candidate_signature: ImageSignature,
    pub candidate_slot: u32,
    pub closeup_count: u64,
    pub day: Day,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchLabel {
    Match,
    NoMatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripletKind {
    Hard,
    Random,
}

/// A (query, positive, negative) triple with its provenance. Distances,
/// labels and kind fill in as the triplet moves through the pipeline.
#[derive(Clone, Debug)]
pub struct TripletRecord {
    pub query: ImageSignature,
    pub positive: ImageSignature,
    pub negative: ImageSignature,
    pub engagement_pos: u64,
    pub engagement_neg: u64,
    pub d_pos: Option<f64>,
    pub d_neg: Option<f64>,
    pub label_pos: Option<MatchLabel>,
    pub label_neg: Option<MatchLabel>,
    pub kind: Option<TripletKind>,
}

/// Which comparator decides "hard" at inference time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum HardnessRule {
    /// Hard when the model ranks the negative closer: `d_pos > d_neg`.
    #[default]
    NegativeCloser,
    /// The literal pseudocode comparator (`d_pos < d_neg`), selectable for
    /// comparison only.
    LiteralComparator,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
struct QueryKey {
    signature: ImageSignature,
    bbox: BoundingBox,
    category: Category,
}

/// Candidate triplets from a log window: for every query with at least two
/// candidates, all ordered pairs where the positive's summed close-ups
/// strictly exceed the negative's. Output order is deterministic and
/// independent of log order.
pub fn mine_candidate_triplets(logs: &[EngagementLog], window_days: u32) -> Vec<TripletRecord> {
    let Some(max_day) = logs.iter().map(|l| l.day).max() else {
        return Vec::new();
    };
    let cutoff = Day(max_day.0 - window_days as i64 + 1);

    let mut groups: BTreeMap<QueryKey, BTreeMap<ImageSignature, u64>> = BTreeMap::new();
    for log in logs {
        if log.day < cutoff {
            continue;
        }
        let key = QueryKey {
            signature: log.query_signature,
            bbox: log.query_box,
            category: log.query_category.clone(),
        };
        *groups
            .entry(key)
            .or_default()
            .entry(log.candidate_signature)
            .or_insert(0) += log.closeup_count;
    }

    let mut out = Vec::new();
    for (key, candidates) in groups {
        if candidates.len() < 2 {
            continue;
        }
        let ranked: Vec<(&ImageSignature, &u64)> = candidates.iter().collect();
        for (pos_sig, pos_eng) in &ranked {
            for (neg_sig, neg_eng) in &ranked {
                if pos_eng > neg_eng {
                    out.push(TripletRecord {
                        query: key.signature,
                        positive: **pos_sig,
                        negative: **neg_sig,
                        engagement_pos: **pos_eng,
                        engagement_neg: **neg_eng,
                        d_pos: None,
                        d_neg: None,
                        label_pos: None,
                        label_neg: None,
                        kind: None,
                    });
                }
            }
        }
    }
    out
}

/// Run the embedder over (query, positive, negative), record both distances,
/// and mark the triplet hard per the chosen rule.
pub fn hardness_check<F>(
    mut triplet: TripletRecord,
    embedder: F,
    rule: HardnessRule,
) -> Result<TripletRecord>
where
    F: Fn(&ImageSignature) -> Result<Embedding>,
{
    let q = embedder(&triplet.query)?;
    let d_pos = q.euclidean_distance(&embedder(&triplet.positive)?)?;
    let d_neg = q.euclidean_distance(&embedder(&triplet.negative)?)?;
    let hard = match rule {
        HardnessRule::NegativeCloser => d_pos > d_neg,
        HardnessRule::LiteralComparator => d_pos < d_neg,
    };
    triplet.d_pos = Some(d_pos);
    triplet.d_neg = Some(d_neg);
    triplet.kind = Some(if hard {
        TripletKind::Hard
    } else {
        TripletKind::Random
    });
    Ok(triplet)
}

/// Hard-flagged subset of candidates under the given rule.
pub fn filter_hard<F>(
    candidates: Vec<TripletRecord>,
    embedder: F,
    rule: HardnessRule,
) -> Result<Vec<TripletRecord>>
where
    F: Fn(&ImageSignature) -> Result<Embedding>,
{
    let mut out = Vec::new();
    for t in candidates {
        let t = hardness_check(t, &embedder, rule)?;
        if t.kind == Some(TripletKind::Hard) {
            out.push(t);
        }
    }
    Ok(out)
}

#[derive(Debug, Default, Clone, Copy, Serialize)]
pub struct LabelingStats {
    pub labeled: u64,
    pub dropped: u64,
    pub errors: u64,
}

/// Label triplets with the oracle and keep only those where the positive is
/// a match and the negative is not. Oracle failures skip the triplet and
/// count as errors.
pub fn label_triplets<F>(
    candidates: Vec<TripletRecord>,
    oracle: F,
) -> (Vec<TripletRecord>, LabelingStats)
where
    F: Fn(&ImageSignature, &ImageSignature) -> Result<MatchLabel>,
{
    let mut stats = LabelingStats::default();
    let mut kept = Vec::new();
    for mut t in candidates {
        let pos = match oracle(&t.query, &t.positive) {
            Ok(l) => l,
            Err(_) => {
                stats.errors += 1;
                continue;
            }
        };
        let neg = match oracle(&t.query, &t.negative) {
            Ok(l) => l,
            Err(_) => {
                stats.errors += 1;
                continue;
            }
        };
        stats.labeled += 1;
        t.label_pos = Some(pos);
        t.label_neg = Some(neg);
        if pos == MatchLabel::Match && neg == MatchLabel::NoMatch {
            kept.push(t);
        } else {
            stats.dropped += 1;
        }
    }
    (kept, stats)
}

/// Ground-truth pools for random-triplet construction: same-product scene
/// pairs and the full membership list for negatives.
pub struct RandomPool {
    /// (query scene, positive scene, product id) with query != positive.
    pub match_pairs: Vec<(ImageSignature, ImageSignature, u32)>,
    /// (scene, one product it contains).
    pub members: Vec<(ImageSignature, u32)>,
}

impl RandomPool {
    pub fn from_world(world: &GeneratedWorld) -> Self {
        let mut match_pairs = Vec::new();
        let mut members = Vec::new();
        for spec in world.scenes() {
            for obj in &spec.objects {
                members.push((spec.signature, obj.product_id));
            }
        }
        for product in world.world().products() {
            let scenes = world.scenes_of_product(product.id);
            for pair in scenes.windows(2) {
                if pair[0] != pair[1] {
                    match_pairs.push((pair[0], pair[1], product.id));
                }
            }
        }
        RandomPool {
            match_pairs,
            members,
        }
    }
}

/// Assemble the final dataset: `hard_fraction` of `target_size` hard
/// triplets (taken in deterministic key order) topped up with random
/// triplets drawn from ground-truth match pairs against uniformly sampled
/// non-matching negatives. Fashion and home-decor mix in one dataset.
pub fn assemble_dataset(
    mut hard: Vec<TripletRecord>,
    pool: &RandomPool,
    target_size: usize,
    hard_fraction: f64,
    seed: u64,
) -> Result<Vec<TripletRecord>> {
    if !(0.0..=1.0).contains(&hard_fraction) {
        return Err(VpgError::InvalidArgument(format!(
            "hard_fraction {hard_fraction} outside [0,1]"
        )));
    }
    let n_hard = (target_size as f64 * hard_fraction).round() as usize;
    if hard.len() < n_hard {
        return Err(VpgError::InsufficientTriplets {
            needed: n_hard,
            available: hard.len(),
        });
    }
    let n_random = target_size - n_hard;
    if n_random > 0 && (pool.match_pairs.is_empty() || pool.members.is_empty()) {
        return Err(VpgError::InsufficientTriplets {
            needed: n_random,
            available: 0,
        });
    }

    hard.sort_by_key(|a| (a.query, a.positive, a.negative));
    hard.truncate(n_hard);
    for t in &mut hard {
        t.kind = Some(TripletKind::Hard);
    }

    let mut r = rng::seeded(&[b"assemble-dataset", &seed.to_le_bytes()]);
    let mut out = hard;
    for _ in 0..n_random {
        let (query, positive, product) =
            pool.match_pairs[rng::uniform_below(&mut r, pool.match_pairs.len() as u64) as usize];
        // uniform non-matching negative; membership of a different product
        let negative = loop {
            let (scene, neg_product) =
                pool.members[rng::uniform_below(&mut r, pool.members.len() as u64) as usize];
            if neg_product != product && scene != query && scene != positive {
                break scene;
            }
        };
        out.push(TripletRecord {
            query,
            positive,
            negative,
            engagement_pos: 0,
            engagement_neg: 0,
            d_pos: None,
            d_neg: None,
            label_pos: Some(MatchLabel::Match),
            label_neg: Some(MatchLabel::NoMatch),
            kind: Some(TripletKind::Random),
        });
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EngagementLogJson {
    pub query_signature: String,
    #[serde(rename = "query_box")]
    pub query_box: [u32; 4],
    pub query_category: String,
    pub candidate_signature: String,
    pub candidate_slot: u32,
    pub closeup_count: u64,
    pub day: Day,
}

impl EngagementLogJson {
    pub fn from_log(log: &EngagementLog) -> Self {
        EngagementLogJson {
            query_signature: log.query_signature.to_hex(),
            query_box: [
                log.query_box.x,
                log.query_box.y,
                log.query_box.w,
                log.query_box.h,
            ],
            query_category: log.query_category.id().to_string(),
            candidate_signature: log.candidate_signature.to_hex(),
            candidate_slot: log.candidate_slot,
            closeup_count: log.closeup_count,
            day: log.day,
        }
    }

    pub fn into_log(self, taxonomy: &Taxonomy) -> Result<EngagementLog> {
        Ok(EngagementLog {
            query_signature: ImageSignature::from_hex(&self.query_signature)?,
            query_box: BoundingBox::new(
                self.query_box[0],
                self.query_box[1],
                self.query_box[2],
                self.query_box[3],
            )?,
            query_category: taxonomy.resolve(&self.query_category)?,
            candidate_signature: ImageSignature::from_hex(&self.candidate_signature)?,
            candidate_slot: self.candidate_slot,
            closeup_count: self.closeup_count,
            day: self.day,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TripletRecordJson {
    pub query: String,
    pub positive: String,
    pub negative: String,
    pub engagement_pos: u64,
    pub engagement_neg: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_pos: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_neg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_pos: Option<MatchLabel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_neg: Option<MatchLabel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<TripletKind>,
}

impl TripletRecordJson {
    pub fn from_record(t: &TripletRecord) -> Self {
        TripletRecordJson {
            query: t.query.to_hex(),
            positive: t.positive.to_hex(),
            negative: t.negative.to_hex(),
            engagement_pos: t.engagement_pos,
            engagement_neg: t.engagement_neg,
            d_pos: t.d_pos,
            d_neg: t.d_neg,
            label_pos: t.label_pos,
            label_neg: t.label_neg,
            kind: t.kind,
        }
    }
}

/// Default labeling oracle over synthetic ground truth: match iff the
/// candidate scene contains any of the query scene's products.
pub fn ground_truth_oracle(
    world: &GeneratedWorld,
) -> impl Fn(&ImageSignature, &ImageSignature) -> Result<MatchLabel> + '_ {
    move |query, candidate| {
        let q_products = world
            .products_of_scene(query)
            .ok_or_else(|| VpgError::Labeling(format!("unknown query scene {query}")))?;
        let c_products = world
            .products_of_scene(candidate)
            .ok_or_else(|| VpgError::Labeling(format!("unknown candidate scene {candidate}")))?;
        let shares = q_products.iter().any(|p| c_products.contains(p));
        Ok(if shares {
            MatchLabel::Match
        } else {
            MatchLabel::NoMatch
        })
    }
}
