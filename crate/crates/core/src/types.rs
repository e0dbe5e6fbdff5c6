//! Shared domain types: signatures, embeddings, boxes, categories, objects.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use half::f16;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VpgError};

pub const SIGNATURE_LEN: usize = 16;

/// 16-byte content digest identifying an image.
///
/// Equality is bytewise; the lexicographic order on the raw bytes is the
/// tie-break order used everywhere results compare equal, so replays are
/// deterministic.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ImageSignature([u8; SIGNATURE_LEN]);

impl ImageSignature {
    pub fn from_bytes(bytes: [u8; SIGNATURE_LEN]) -> Self {
        ImageSignature(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; SIGNATURE_LEN] {
        &self.0
    }

    /// Deterministic digest of arbitrary content (FNV-1a, 128-bit).
    pub fn digest(data: &[u8]) -> Self {
        ImageSignature(fnv1a_128(data).to_be_bytes())
    }

    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(SIGNATURE_LEN * 2);
        for b in &self.0 {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }

    pub fn from_hex(hex: &str) -> Result<Self> {
        if hex.len() != SIGNATURE_LEN * 2 {
            return Err(VpgError::InvalidArgument(format!(
                "signature hex must be {} chars, got {}",
                SIGNATURE_LEN * 2,
                hex.len()
            )));
        }
        let mut bytes = [0u8; SIGNATURE_LEN];
        for (i, chunk) in hex.as_bytes().chunks(2).enumerate() {
            let s = std::str::from_utf8(chunk)
                .map_err(|_| VpgError::InvalidArgument("non-utf8 signature hex".into()))?;
            bytes[i] = u8::from_str_radix(s, 16)
                .map_err(|_| VpgError::InvalidArgument(format!("bad hex byte {s:?}")))?;
        }
        Ok(ImageSignature(bytes))
    }
}

impl fmt::Display for ImageSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for ImageSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sig:{}", self.to_hex())
    }
}

impl FromStr for ImageSignature {
    type Err = VpgError;
    fn from_str(s: &str) -> Result<Self> {
        ImageSignature::from_hex(s)
    }
}

impl Serialize for ImageSignature {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ImageSignature {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ImageSignature::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

fn fnv1a_128(data: &[u8]) -> u128 {
    const BASIS: u128 = 0x6c62272e07bb014262b821756295c58d;
    const PRIME: u128 = 0x0000000001000000000000000000013b;
    let mut hash = BASIS;
    for &b in data {
        hash ^= b as u128;
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

/// Fixed-dimension float embedding. Full precision in memory, half precision
/// (little-endian f16) on disk and in base-64 text fields.
#[derive(Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    /// Rejects NaN/Inf components; dimension is whatever the caller supplies
    /// and is checked at every pairwise use.
    pub fn new(values: Vec<f32>) -> Result<Self> {
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(VpgError::NonFiniteValue { position: i });
            }
        }
        Ok(Embedding(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn euclidean_distance(&self, other: &Embedding) -> Result<f64> {
        Ok(self.squared_distance(other)?.sqrt())
    }

    pub fn squared_distance(&self, other: &Embedding) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(VpgError::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        let mut acc = 0.0f64;
        for (a, b) in self.0.iter().zip(other.0.iter()) {
            let d = (*a - *b) as f64;
            acc += d * d;
        }
        Ok(acc)
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|v| (*v as f64) * (*v as f64))
            .sum::<f64>()
            .sqrt()
    }

    /// Little-endian f16 encoding, the on-disk representation.
    pub fn to_f16_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.0.len() * 2);
        for v in &self.0 {
            out.extend_from_slice(&f16::from_f32(*v).to_le_bytes());
        }
        out
    }

    pub fn from_f16_bytes(bytes: &[u8]) -> Result<Self> {
        if !bytes.len().is_multiple_of(2) {
            return Err(VpgError::InvalidArgument(
                "f16 embedding byte length must be even".into(),
            ));
        }
        let mut values = Vec::with_capacity(bytes.len() / 2);
        for pair in bytes.chunks_exact(2) {
            values.push(f16::from_le_bytes([pair[0], pair[1]]).to_f32());
        }
        Embedding::new(values)
    }

    /// Round every component to its half-precision representative. Storage
    /// layers apply this at write time so what you read back in memory is
    /// exactly what a reopen would read from disk.
    pub fn quantize_f16(&self) -> Embedding {
        Embedding(self.0.iter().map(|v| f16::from_f32(*v).to_f32()).collect())
    }

    pub fn to_base64(&self) -> String {
        BASE64.encode(self.to_f16_bytes())
    }

    pub fn from_base64(text: &str) -> Result<Self> {
        let bytes = BASE64
            .decode(text)
            .map_err(|e| VpgError::InvalidArgument(format!("bad base64 embedding: {e}")))?;
        Embedding::from_f16_bytes(&bytes)
    }
}

impl fmt::Debug for Embedding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Embedding(d={})", self.dim())
    }
}

pub const BINARY_EMBEDDING_BITS: usize = 1024;
const BINARY_WORDS: usize = BINARY_EMBEDDING_BITS / 64;

/// Legacy 1024-bit binary code, kept for float-vs-binary comparisons.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct BinaryEmbedding([u64; BINARY_WORDS]);

impl BinaryEmbedding {
    pub fn from_words(words: [u64; BINARY_WORDS]) -> Self {
        BinaryEmbedding(words)
    }

    pub fn words(&self) -> &[u64; BINARY_WORDS] {
        &self.0
    }

    pub fn bit(&self, i: usize) -> bool {
        debug_assert!(i < BINARY_EMBEDDING_BITS);
        self.0[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set_bit(&mut self, i: usize, on: bool) {
        debug_assert!(i < BINARY_EMBEDDING_BITS);
        if on {
            self.0[i / 64] |= 1 << (i % 64);
        } else {
            self.0[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn hamming_distance(&self, other: &BinaryEmbedding) -> u32 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    pub fn complement(&self) -> BinaryEmbedding {
        let mut words = [0u64; BINARY_WORDS];
        for (i, w) in self.0.iter().enumerate() {
            words[i] = !w;
        }
        BinaryEmbedding(words)
    }
}

impl Default for BinaryEmbedding {
    fn default() -> Self {
        BinaryEmbedding([0; BINARY_WORDS])
    }
}

impl fmt::Debug for BinaryEmbedding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BinaryEmbedding({} bits)", BINARY_EMBEDDING_BITS)
    }
}

/// Threshold binarization onto the legacy 1024-bit code: bit i is set iff
/// `values[i] > thresholds[i]` (strictly).
pub fn binarize(e: &Embedding, thresholds: &[f32]) -> Result<BinaryEmbedding> {
    if e.dim() != BINARY_EMBEDDING_BITS {
        return Err(VpgError::DimensionMismatch {
            expected: BINARY_EMBEDDING_BITS,
            actual: e.dim(),
        });
    }
    if thresholds.len() != e.dim() {
        return Err(VpgError::DimensionMismatch {
            expected: e.dim(),
            actual: thresholds.len(),
        });
    }
    let mut out = BinaryEmbedding::default();
    for (i, (v, t)) in e.values().iter().zip(thresholds.iter()).enumerate() {
        out.set_bit(i, v > t);
    }
    Ok(out)
}

/// Axis-aligned box in pixel coordinates, XYWH with positive extents.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "[u32; 4]", try_from = "[u32; 4]")]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(VpgError::InvalidArgument(format!("degenerate box {w}x{h}")));
        }
        Ok(BoundingBox { x, y, w, h })
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.x.saturating_add(self.w) <= width && self.y.saturating_add(self.h) <= height
    }

    /// Intersection over union; disjoint boxes score 0.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let x1 = self.x.max(other.x) as u64;
        let y1 = self.y.max(other.y) as u64;
        let x2 = (self.x as u64 + self.w as u64).min(other.x as u64 + other.w as u64);
        let y2 = (self.y as u64 + self.h as u64).min(other.y as u64 + other.h as u64);
        if x2 <= x1 || y2 <= y1 {
            return 0.0;
        }
        let inter = (x2 - x1) * (y2 - y1);
        let union = self.area() + other.area() - inter;
        inter as f64 / union as f64
    }
}

impl From<BoundingBox> for [u32; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl TryFrom<[u32; 4]> for BoundingBox {
    type Error = VpgError;
    fn try_from(v: [u32; 4]) -> Result<Self> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl fmt::Debug for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{},{},{}]", self.x, self.y, self.w, self.h)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Fashion,
    HomeDecor,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Fashion => f.write_str("fashion"),
            Domain::HomeDecor => f.write_str("home_decor"),
        }
    }
}

/// A shopping category resolved against a [`Taxonomy`].
///
/// Serialized as its bare id string; deserialization goes through
/// [`Taxonomy::resolve`] so that ids outside the configured taxonomy are
/// rejected at the boundary.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Category {
    id: String,
    domain: Domain,
}

impl Category {
    /// Trusted constructor for paths that already validated the id
    /// (segment replay, synthetic generation).
    pub(crate) fn from_parts(id: String, domain: Domain) -> Self {
        Category { id, domain }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }
}

impl fmt::Debug for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.domain, self.id)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id)
    }
}

/// The fixed, configured set of shopping categories and their domains.
#[derive(Clone, Debug)]
pub struct Taxonomy {
    categories: BTreeMap<String, Domain>,
}

pub const DEFAULT_FASHION_CATEGORIES: &[&str] = &[
    "tops",
    "dresses",
    "pants",
    "shoes",
    "bags",
    "hats",
    "outerwear",
    "jewelry",
];
pub const DEFAULT_HOME_DECOR_CATEGORIES: &[&str] = &[
    "sofas", "rugs", "lamps", "tables", "wall_art", "pillows", "curtains", "vases",
];

impl Taxonomy {
    pub fn new(entries: impl IntoIterator<Item = (String, Domain)>) -> Self {
        Taxonomy {
            categories: entries.into_iter().collect(),
        }
    }

    pub fn default_taxonomy() -> Self {
        let mut categories = BTreeMap::new();
        for c in DEFAULT_FASHION_CATEGORIES {
            categories.insert((*c).to_string(), Domain::Fashion);
        }
        for c in DEFAULT_HOME_DECOR_CATEGORIES {
            categories.insert((*c).to_string(), Domain::HomeDecor);
        }
        Taxonomy { categories }
    }

    pub fn resolve(&self, id: &str) -> Result<Category> {
        match self.categories.get(id) {
            Some(domain) => Ok(Category {
                id: id.to_string(),
                domain: *domain,
            }),
            None => Err(VpgError::UnknownEntity(format!(
                "category {id:?} not in taxonomy"
            ))),
        }
    }

    pub fn contains(&self, id: &str) -> bool {
        self.categories.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.categories.keys().map(String::as_str)
    }

    pub fn ids_in_domain(&self, domain: Domain) -> Vec<&str> {
        self.categories
            .iter()
            .filter(|(_, d)| **d == domain)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }
}

/// One detected object: where it is, what it is, how sure the detector was,
/// and its visual embedding.
#[derive(Clone, Debug)]
pub struct DetectedObject {
    pub bbox: BoundingBox,
    pub category: Category,
    pub confidence: f32,
    pub embedding: Embedding,
}

impl DetectedObject {
    pub fn new(
        bbox: BoundingBox,
        category: Category,
        confidence: f32,
        embedding: Embedding,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(VpgError::InvalidArgument(format!(
                "confidence {confidence} outside [0,1]"
            )));
        }
        Ok(DetectedObject {
            bbox,
            category,
            confidence,
            embedding,
        })
    }
}

/// Declared image-quality signals attached to ingestion records. Stands in
/// for upstream classifier outputs; the corpus filters consume these as-is.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusMetadata {
    pub is_inspirational: bool,
    pub is_grayscale: bool,
    pub is_collage_or_screenshot: bool,
    pub width: u32,
    pub height: u32,
    pub blur_score: f32,
}

impl CorpusMetadata {
    /// Metadata that passes every quality filter, used when an ingestion
    /// record declared none.
    pub fn permissive(width: u32, height: u32) -> Self {
        CorpusMetadata {
            is_inspirational: true,
            is_grayscale: false,
            is_collage_or_screenshot: false,
            width,
            height,
            blur_score: 0.0,
        }
    }
}

pub const NEAR_DUP_BITS: usize = 64;

/// Default seed for the near-duplicate signature family. Global and fixed so
/// that signatures computed anywhere in the system are comparable.
pub const DEFAULT_NEAR_DUP_SEED: u64 = 0x5650_4731_4e44_5347;

/// 64-bit locality-sensitive code: the sign bits of 64 random-projection dot
/// products. Hamming distance between codes tracks embedding similarity.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NearDupSignature(pub u64);

impl NearDupSignature {
    pub fn hamming_distance(&self, other: &NearDupSignature) -> u32 {
        (self.0 ^ other.0).count_ones()
    }
}

impl fmt::Debug for NearDupSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "neardup:{:016x}", self.0)
    }
}

/// Precomputed projection bank for near-duplicate signatures. Projections are
/// a pure function of (seed, dimension), so two hashers with the same
/// parameters always agree.
pub struct NearDupHasher {
    dim: usize,
    projections: Vec<f32>,
}

impl NearDupHasher {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = crate::rng::seeded(&[
            b"neardup-projections",
            &seed.to_le_bytes(),
            &(dim as u64).to_le_bytes(),
        ]);
        let mut projections = Vec::with_capacity(NEAR_DUP_BITS * dim);
        for _ in 0..NEAR_DUP_BITS * dim {
            projections.push(crate::rng::standard_normal(&mut rng) as f32);
        }
        NearDupHasher { dim, projections }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn signature(&self, e: &Embedding) -> Result<NearDupSignature> {
        if e.dim() != self.dim {
            return Err(VpgError::DimensionMismatch {
                expected: self.dim,
                actual: e.dim(),
            });
        }
        let mut bits = 0u64;
        for bit in 0..NEAR_DUP_BITS {
            let row = &self.projections[bit * self.dim..(bit + 1) * self.dim];
            let mut dot = 0.0f64;
            for (p, v) in row.iter().zip(e.values()) {
                dot += *p as f64 * *v as f64;
            }
            if dot > 0.0 {
                bits |= 1 << bit;
            }
        }
        Ok(NearDupSignature(bits))
    }
}

/// One-shot near-duplicate signature. Builds a projection bank per call;
/// serving paths keep a [`NearDupHasher`] around instead.
pub fn near_dup_signature(e: &Embedding, seed: u64) -> Result<NearDupSignature> {
    NearDupHasher::new(e.dim(), seed).signature(e)
}
