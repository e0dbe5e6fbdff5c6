//! Deterministic synthetic world: the in-repo detector and embedder.
//!
//! Real detection and embedding models are pluggable interfaces; this module
//! provides the only in-repo implementations, generated from a seed so that
//! every downstream claim (retrieval quality, filter behavior, NMS counts)
//! can be checked against known ground truth. Products get unit-norm latent
//! vectors; object and scene embeddings are those latents plus optional
//! Gaussian noise, renormalized.
//!
//! `noise_sigma` is the expected norm of the whole noise vector (per
//! coordinate the scale is `noise_sigma / sqrt(d)`), so its magnitude is
//! directly comparable to inter-product latent distances.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Result, VpgError};
use crate::nms::RawDetection;
use crate::rng;
use crate::store::{EntrySource, SceneEntry};
use crate::types::{
    BoundingBox, Category, CorpusMetadata, DetectedObject, Domain, Embedding, ImageSignature,
    Taxonomy,
};

#[derive(Clone, Debug)]
pub struct WorldConfig {
    pub seed: u64,
    pub dimension: usize,
    pub product_count: u32,
    pub scene_count: u32,
    pub noise_sigma: f64,
    pub min_objects: u32,
    pub max_objects: u32,
    /// Generation fails if any product pair lands closer than this.
    pub min_separation: f64,
    pub image_width: u32,
    pub image_height: u32,
    /// Detector corruption applied when emitting ingestion records.
    pub duplicate_rate: f64,
    pub false_positive_rate: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 7,
            dimension: 256,
            product_count: 1000,
            scene_count: 10_000,
            noise_sigma: 0.0,
            min_objects: 3,
            max_objects: 3,
            min_separation: 0.5,
            image_width: 800,
            image_height: 1200,
            duplicate_rate: 0.0,
            false_positive_rate: 0.0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.dimension == 0 {
            problems.push("dimension must be positive".to_string());
        }
        if self.product_count == 0 {
            problems.push("product_count must be positive".to_string());
        }
        if self.noise_sigma < 0.0 {
            problems.push("noise_sigma must be >= 0".to_string());
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            problems.push(format!(
                "object range [{}, {}] invalid",
                self.min_objects, self.max_objects
            ));
        }
        if self.image_width == 0 || self.image_height == 0 {
            problems.push("image dimensions must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(VpgError::Config(problems))
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProductSpec {
    pub id: u32,
    pub signature: ImageSignature,
    pub category: Category,
    pub latent: Embedding,
}

#[derive(Clone, Debug)]
pub struct GroundTruthObject {
    pub product_id: u32,
    pub bbox: BoundingBox,
    pub category: Category,
}

#[derive(Clone, Debug)]
pub struct SceneSpec {
    pub signature: ImageSignature,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<GroundTruthObject>,
    pub metadata: CorpusMetadata,
}

/// What an embedding request points at.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum EmbedKey {
    Image(ImageSignature),
    Crop(ImageSignature, BoundingBox),
}

/// Detector corruption knobs for NMS and filter testing.
#[derive(Clone, Copy, Debug, Default)]
pub struct Corruption {
    /// Chance each true object is emitted a second time with a jittered box
    /// (IoU >= 0.7 with the original) and slightly lower confidence.
    pub duplicate_rate: f64,
    /// Chance per true object of an extra spurious detection elsewhere.
    pub false_positive_rate: f64,
}

impl Corruption {
    pub const NONE: Corruption = Corruption {
        duplicate_rate: 0.0,
        false_positive_rate: 0.0,
    };
}

/// The synthetic ground truth: products, their latents, and the derived
/// detector/embedder. Same `(seed, product id)` always yields the same
/// latent, independent of anything else in the config.
pub struct SyntheticWorld {
    pub config: WorldConfig,
    taxonomy: Taxonomy,
    products: Vec<ProductSpec>,
    product_by_sig: HashMap<ImageSignature, u32>,
    by_category: BTreeMap<Category, Vec<u32>>,
}

fn product_latent(seed: u64, id: u32, dim: usize) -> Embedding {
    let mut r = rng::seeded(&[b"product-latent", &seed.to_le_bytes(), &id.to_le_bytes()]);
    let mut values: Vec<f64> = (0..dim).map(|_| rng::standard_normal(&mut r)).collect();
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    for v in &mut values {
        *v /= norm;
    }
    Embedding::new(values.into_iter().map(|v| v as f32).collect()).expect("finite latent")
}

fn product_signature(seed: u64, id: u32) -> ImageSignature {
    ImageSignature::digest(format!("product:{seed}:{id}").as_bytes())
}

fn scene_signature(seed: u64, idx: u32) -> ImageSignature {
    ImageSignature::digest(format!("scene:{seed}:{idx}").as_bytes())
}

impl SyntheticWorld {
    pub fn generate(config: WorldConfig, taxonomy: Taxonomy) -> Result<Self> {
        config.validate()?;
        let fashion: Vec<Category> = taxonomy
            .ids_in_domain(Domain::Fashion)
            .iter()
            .map(|id| taxonomy.resolve(id))
            .collect::<Result<_>>()?;
        let home: Vec<Category> = taxonomy
            .ids_in_domain(Domain::HomeDecor)
            .iter()
            .map(|id| taxonomy.resolve(id))
            .collect::<Result<_>>()?;
        if fashion.is_empty() || home.is_empty() {
            return Err(VpgError::Config(vec![
                "taxonomy needs categories in both domains".to_string(),
            ]));
        }

        let mut products = Vec::with_capacity(config.product_count as usize);
        let mut product_by_sig = HashMap::new();
        let mut by_category: BTreeMap<Category, Vec<u32>> = BTreeMap::new();
        for id in 0..config.product_count {
            // even ids are fashion, odd ids home decor
            let category = if id % 2 == 0 {
                fashion[(id as usize / 2) % fashion.len()].clone()
            } else {
                home[(id as usize / 2) % home.len()].clone()
            };
            let spec = ProductSpec {
                id,
                signature: product_signature(config.seed, id),
                category: category.clone(),
                latent: product_latent(config.seed, id, config.dimension),
            };
            product_by_sig.insert(spec.signature, id);
            by_category.entry(category).or_default().push(id);
            products.push(spec);
        }

        let world = SyntheticWorld {
            config,
            taxonomy,
            products,
            product_by_sig,
            by_category,
        };
        world.verify_separation()?;
        Ok(world)
    }

    /// Pairwise scan backing the generator's separation guarantee.
    fn verify_separation(&self) -> Result<()> {
        if self.config.min_separation <= 0.0 {
            return Ok(());
        }
        let mut min_seen = f64::INFINITY;
        for i in 0..self.products.len() {
            for j in i + 1..self.products.len() {
                let d = self.products[i]
                    .latent
                    .euclidean_distance(&self.products[j].latent)?;
                min_seen = min_seen.min(d);
                if d < self.config.min_separation {
                    return Err(VpgError::Config(vec![format!(
                        "products {} and {} are only {d:.4} apart (< min_separation {}); \
                         use a larger dimension or different seed",
                        self.products[i].id, self.products[j].id, self.config.min_separation
                    )]));
                }
            }
        }
        let _ = min_seen;
        Ok(())
    }

    /// Smallest pairwise latent distance, for documenting noise headroom.
    pub fn measured_min_separation(&self) -> Result<f64> {
        let mut min_seen = f64::INFINITY;
        for i in 0..self.products.len() {
            for j in i + 1..self.products.len() {
                min_seen = min_seen.min(
                    self.products[i]
                        .latent
                        .euclidean_distance(&self.products[j].latent)?,
                );
            }
        }
        Ok(min_seen)
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn products(&self) -> &[ProductSpec] {
        &self.products
    }

    pub fn product(&self, id: u32) -> Option<&ProductSpec> {
        self.products.get(id as usize)
    }

    pub fn product_id_by_signature(&self, sig: &ImageSignature) -> Option<u32> {
        self.product_by_sig.get(sig).copied()
    }

    fn noisy(&self, latent: &Embedding, key_material: &[u8]) -> Embedding {
        if self.config.noise_sigma == 0.0 {
            return latent.clone();
        }
        let mut r = rng::seeded(&[
            b"embed-noise",
            &self.config.seed.to_le_bytes(),
            key_material,
        ]);
        let per_coord = self.config.noise_sigma / (self.config.dimension as f64).sqrt();
        let mut values: Vec<f64> = latent
            .values()
            .iter()
            .map(|v| *v as f64 + per_coord * rng::standard_normal(&mut r))
            .collect();
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in &mut values {
            *v /= norm;
        }
        Embedding::new(values.into_iter().map(|v| v as f32).collect()).expect("finite embedding")
    }

    fn key_material(key: &EmbedKey) -> Vec<u8> {
        match key {
            EmbedKey::Image(sig) => sig.as_bytes().to_vec(),
            EmbedKey::Crop(sig, bbox) => {
                let mut m = sig.as_bytes().to_vec();
                for v in [bbox.x, bbox.y, bbox.w, bbox.h] {
                    m.extend_from_slice(&v.to_le_bytes());
                }
                m
            }
        }
    }
}

/// A fully generated corpus: the world plus its scenes and ground-truth
/// lookup tables. This is what the embedder/extractor closes over.
pub struct GeneratedWorld {
    world: SyntheticWorld,
    scenes: Vec<SceneSpec>,
    scene_by_sig: HashMap<ImageSignature, usize>,
    object_product: HashMap<(ImageSignature, BoundingBox), u32>,
    scenes_by_product: HashMap<u32, Vec<ImageSignature>>,
}

impl GeneratedWorld {
    pub fn generate(config: WorldConfig, taxonomy: Taxonomy) -> Result<Self> {
        let world = SyntheticWorld::generate(config, taxonomy)?;
        let cfg = &world.config;
        let mut scenes = Vec::with_capacity(cfg.scene_count as usize);
        let mut scene_by_sig = HashMap::new();
        let mut object_product = HashMap::new();
        let mut scenes_by_product: HashMap<u32, Vec<ImageSignature>> = HashMap::new();

        for idx in 0..cfg.scene_count {
            let spec = Self::make_scene(&world, idx)?;
            scene_by_sig.insert(spec.signature, scenes.len());
            for obj in &spec.objects {
                object_product.insert((spec.signature, obj.bbox), obj.product_id);
                scenes_by_product
                    .entry(obj.product_id)
                    .or_default()
                    .push(spec.signature);
            }
            scenes.push(spec);
        }
        Ok(GeneratedWorld {
            world,
            scenes,
            scene_by_sig,
            object_product,
            scenes_by_product,
        })
    }

    fn make_scene(world: &SyntheticWorld, idx: u32) -> Result<SceneSpec> {
        let cfg = &world.config;
        let sig = scene_signature(cfg.seed, idx);
        let mut r = rng::seeded(&[b"scene", &cfg.seed.to_le_bytes(), &idx.to_le_bytes()]);
        let domain = if idx.is_multiple_of(2) {
            Domain::Fashion
        } else {
            Domain::HomeDecor
        };
        // pick distinct categories first so every scene carries the breadth
        // the shoppability filter wants, then one product within each
        let mut domain_cats: Vec<&Category> = world
            .by_category
            .keys()
            .filter(|c| c.domain() == domain)
            .collect();
        let span = (cfg.max_objects - cfg.min_objects + 1) as u64;
        let want = cfg.min_objects as usize + rng::uniform_below(&mut r, span) as usize;
        let k = want.min(domain_cats.len());
        // Fisher-Yates prefix shuffle
        for i in 0..k {
            let j = i + rng::uniform_below(&mut r, (domain_cats.len() - i) as u64) as usize;
            domain_cats.swap(i, j);
        }

        let mut objects = Vec::with_capacity(k);
        let row_h = cfg.image_height / k.max(1) as u32;
        for (row, cat) in domain_cats[..k].iter().enumerate() {
            let pool = &world.by_category[*cat];
            let product_id = pool[rng::uniform_below(&mut r, pool.len() as u64) as usize];
            let w = cfg.image_width * 3 / 10
                + (rng::uniform_below(&mut r, 100) as u32) * cfg.image_width / 1000;
            let h = row_h * 6 / 10 + (rng::uniform_below(&mut r, 100) as u32) * row_h / 1000;
            let max_x = cfg.image_width.saturating_sub(w).max(1);
            let x = rng::uniform_below(&mut r, max_x as u64) as u32;
            let y =
                row as u32 * row_h + rng::uniform_below(&mut r, (row_h / 5).max(1) as u64) as u32;
            let bbox = BoundingBox::new(x, y, w.max(1), h.max(1))?;
            objects.push(GroundTruthObject {
                product_id,
                bbox,
                category: (*cat).clone(),
            });
        }
        let blur = rng::uniform_below(&mut r, 100) as f32 / 1000.0;
        let mut metadata = CorpusMetadata::permissive(cfg.image_width, cfg.image_height);
        metadata.blur_score = blur;
        Ok(SceneSpec {
            signature: sig,
            width: cfg.image_width,
            height: cfg.image_height,
            objects,
            metadata,
        })
    }

    pub fn world(&self) -> &SyntheticWorld {
        &self.world
    }

    pub fn scenes(&self) -> &[SceneSpec] {
        &self.scenes
    }

    pub fn scene_by_signature(&self, sig: &ImageSignature) -> Option<&SceneSpec> {
        self.scene_by_sig.get(sig).map(|&i| &self.scenes[i])
    }

    pub fn products_of_scene(&self, sig: &ImageSignature) -> Option<Vec<u32>> {
        self.scene_by_signature(sig)
            .map(|s| s.objects.iter().map(|o| o.product_id).collect())
    }

    pub fn scenes_of_product(&self, product_id: u32) -> &[ImageSignature] {
        self.scenes_by_product
            .get(&product_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn scene_contains_product(&self, scene: &ImageSignature, product_id: u32) -> bool {
        self.products_of_scene(scene)
            .map(|ids| ids.contains(&product_id))
            .unwrap_or(false)
    }

    /// Embedder over the synthetic ground truth.
    pub fn embed(&self, key: &EmbedKey) -> Result<Embedding> {
        let latent = match key {
            EmbedKey::Image(sig) => {
                if let Some(id) = self.world.product_by_sig.get(sig) {
                    self.world.products[*id as usize].latent.clone()
                } else if let Some(spec) = self.scene_by_signature(sig) {
                    self.scene_latent(spec)?
                } else {
                    return Err(VpgError::UnknownEntity(format!("image {sig}")));
                }
            }
            EmbedKey::Crop(sig, bbox) => {
                let id = self
                    .object_product
                    .get(&(*sig, *bbox))
                    .ok_or_else(|| VpgError::UnknownEntity(format!("crop {sig} {bbox:?}")))?;
                self.world.products[*id as usize].latent.clone()
            }
        };
        Ok(self
            .world
            .noisy(&latent, &SyntheticWorld::key_material(key)))
    }

    /// Full-image latent: normalized mean of the object latents, so scenes
    /// sharing products land near each other.
    fn scene_latent(&self, spec: &SceneSpec) -> Result<Embedding> {
        let d = self.world.config.dimension;
        let mut acc = vec![0.0f64; d];
        for obj in &spec.objects {
            let latent = &self.world.products[obj.product_id as usize].latent;
            for (a, v) in acc.iter_mut().zip(latent.values()) {
                *a += *v as f64;
            }
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        Embedding::new(acc.into_iter().map(|v| (v / norm) as f32).collect())
    }

    /// Detector over ground truth, optionally corrupted with duplicate boxes
    /// and false positives.
    pub fn detect_raw(
        &self,
        scene: &SceneSpec,
        corruption: &Corruption,
    ) -> Result<Vec<RawDetection>> {
        let cfg = &self.world.config;
        let mut r = rng::seeded(&[
            b"detect",
            &cfg.seed.to_le_bytes(),
            scene.signature.as_bytes(),
        ]);
        let mut out = Vec::with_capacity(scene.objects.len());
        let other_category = |cat: &Category| -> Category {
            self.world
                .by_category
                .keys()
                .find(|c| c.domain() == cat.domain() && *c != cat)
                .unwrap_or(cat)
                .clone()
        };
        for obj in &scene.objects {
            let confidence =
                0.5 + 0.5 * (rng::uniform_below(&mut r, 1 << 20) as f32 / (1 << 20) as f32);
            let embedding = self.embed(&EmbedKey::Crop(scene.signature, obj.bbox))?;
            let mut scores = BTreeMap::new();
            scores.insert(obj.category.clone(), confidence);
            scores.insert(other_category(&obj.category), confidence * 0.4);
            out.push(RawDetection {
                bbox: obj.bbox,
                scores: scores.clone(),
                confidence,
                embedding: embedding.clone(),
            });

            if corruption.duplicate_rate > 0.0
                && rng::uniform01(&mut r) <= corruption.duplicate_rate
            {
                // small shift keeps IoU with the original at 0.9+
                let dx = (obj.bbox.w / 20).max(1);
                let bbox = BoundingBox::new(
                    obj.bbox.x.saturating_add(dx),
                    obj.bbox.y,
                    obj.bbox.w,
                    obj.bbox.h,
                )?;
                let mut dup_scores = BTreeMap::new();
                for (c, s) in &scores {
                    dup_scores.insert(c.clone(), s * 0.9);
                }
                out.push(RawDetection {
                    bbox,
                    scores: dup_scores,
                    confidence: confidence * 0.9,
                    embedding,
                });
            }
            if corruption.false_positive_rate > 0.0
                && rng::uniform01(&mut r) <= corruption.false_positive_rate
            {
                let w = cfg.image_width / 10;
                let h = cfg.image_height / 10;
                let x = rng::uniform_below(&mut r, (cfg.image_width - w) as u64) as u32;
                let y = rng::uniform_below(&mut r, (cfg.image_height - h) as u64) as u32;
                let mut noise_rng = rng::seeded(&[
                    b"false-positive",
                    &cfg.seed.to_le_bytes(),
                    scene.signature.as_bytes(),
                    &(out.len() as u32).to_le_bytes(),
                ]);
                let mut values: Vec<f64> = (0..cfg.dimension)
                    .map(|_| rng::standard_normal(&mut noise_rng))
                    .collect();
                let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                for v in &mut values {
                    *v /= norm;
                }
                let fp_conf = 0.5 + 0.2 * rng::uniform01(&mut r) as f32;
                let mut fp_scores = BTreeMap::new();
                fp_scores.insert(other_category(&obj.category), fp_conf);
                out.push(RawDetection {
                    bbox: BoundingBox::new(x, y, w, h)?,
                    scores: fp_scores,
                    confidence: fp_conf,
                    embedding: Embedding::new(values.into_iter().map(|v| v as f32).collect())?,
                });
            }
        }
        Ok(out)
    }

    /// Detector output as finished objects (argmax class, no suppression).
    pub fn detect(
        &self,
        scene: &SceneSpec,
        corruption: &Corruption,
    ) -> Result<Vec<DetectedObject>> {
        self.detect_raw(scene, corruption)?
            .into_iter()
            .map(|det| {
                let category = det
                    .scores
                    .iter()
                    .max_by(|(ca, sa), (cb, sb)| {
                        sa.partial_cmp(sb)
                            .unwrap_or(std::cmp::Ordering::Equal)
                            .then_with(|| cb.cmp(ca))
                    })
                    .map(|(c, _)| c.clone())
                    .expect("detection has scores");
                DetectedObject::new(det.bbox, category, det.confidence.min(1.0), det.embedding)
            })
            .collect()
    }

    /// Ingestion record for one scene: detections under the configured
    /// corruption rates (clean by default) plus the declared quality
    /// metadata.
    pub fn scene_entry(&self, spec: &SceneSpec) -> Result<SceneEntry> {
        let corruption = Corruption {
            duplicate_rate: self.world.config.duplicate_rate,
            false_positive_rate: self.world.config.false_positive_rate,
        };
        Ok(SceneEntry {
            signature: spec.signature,
            full_embedding: self.embed(&EmbedKey::Image(spec.signature))?,
            objects: self.detect(spec, &corruption)?,
            ingested_at: 0,
            source: EntrySource::Backfill,
            metadata: Some(spec.metadata),
        })
    }

    /// Catalog entry for one product; synthetic products are always
    /// trustworthy, tests inject bad ones directly.
    pub fn product_entry(&self, id: u32) -> Result<crate::forward::ProductEntry> {
        let spec = self
            .world
            .product(id)
            .ok_or_else(|| VpgError::UnknownEntity(format!("product {id}")))?;
        Ok(crate::forward::ProductEntry {
            signature: spec.signature,
            embedding: self.embed(&EmbedKey::Image(spec.signature))?,
            category: spec.category.clone(),
            in_stock: true,
            legitimate_domain: true,
            safe: true,
        })
    }

    /// Online-fallback extractor over this world: scene signatures yield a
    /// full scene entry, product signatures an objectless one.
    pub fn extract_entry(&self, sig: &ImageSignature) -> Result<SceneEntry> {
        if let Some(spec) = self.scene_by_signature(sig) {
            return self.scene_entry(spec);
        }
        if self.world.product_by_sig.contains_key(sig) {
            return Ok(SceneEntry {
                signature: *sig,
                full_embedding: self.embed(&EmbedKey::Image(*sig))?,
                objects: vec![],
                ingested_at: 0,
                source: EntrySource::OnlineFallback,
                metadata: None,
            });
        }
        Err(VpgError::UnknownEntity(format!("image {sig}")))
    }
}
