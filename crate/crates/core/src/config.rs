//! Key-value configuration files and the engine configuration.
//!
//! One small grammar covers every `.cfg` the tools read (world configs,
//! filter configs, engine configs): `key = value` lines, `#` comments,
//! dotted keys for sections. Unknown keys are rejected so typos fail loudly,
//! and validation reports every violation rather than the first.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use crate::error::{Result, VpgError};
use crate::index::hnsw::DEFAULT_HNSW_SEED;
use crate::synth::WorldConfig;

/// Parsed `key = value` file with access tracking for unknown-key rejection.
#[derive(Debug)]
pub struct KvConfig {
    values: BTreeMap<String, String>,
    accessed: RefCell<BTreeSet<String>>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut problems = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('=') {
                Some((key, value)) => {
                    let key = key.trim().to_string();
                    if key.is_empty() {
                        problems.push(format!("line {}: empty key", lineno + 1));
                        continue;
                    }
                    if values
                        .insert(key.clone(), value.trim().to_string())
                        .is_some()
                    {
                        problems.push(format!("line {}: duplicate key {key:?}", lineno + 1));
                    }
                }
                None => problems.push(format!(
                    "line {}: expected `key = value`, got {line:?}",
                    lineno + 1
                )),
            }
        }
        if problems.is_empty() {
            Ok(KvConfig {
                values,
                accessed: RefCell::new(BTreeSet::new()),
            })
        } else {
            Err(VpgError::Config(problems))
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            VpgError::Config(vec![format!("read {}: {e}", path.as_ref().display())])
        })?;
        Self::parse(&text)
    }

    pub fn empty() -> Self {
        KvConfig {
            values: BTreeMap::new(),
            accessed: RefCell::new(BTreeSet::new()),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Result<Option<String>> {
        self.accessed.borrow_mut().insert(key.to_string());
        Ok(self.values.get(key).cloned())
    }

    fn get_parsed<T: std::str::FromStr>(&self, key: &str, kind: &str) -> Result<Option<T>> {
        self.accessed.borrow_mut().insert(key.to_string());
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                VpgError::Config(vec![format!("{key}: expected {kind}, got {raw:?}")])
            }),
        }
    }

    pub fn get_u32(&self, key: &str) -> Result<Option<u32>> {
        self.get_parsed(key, "an unsigned integer")
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.get_parsed(key, "an unsigned integer")
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.get_parsed(key, "an unsigned integer")
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.get_parsed(key, "a number")
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.get_parsed(key, "true or false")
    }

    /// Error listing every key that was present but never read.
    pub fn reject_unknown(&self) -> Result<()> {
        let accessed = self.accessed.borrow();
        let unknown: Vec<String> = self
            .values
            .keys()
            .filter(|k| !accessed.contains(*k))
            .map(|k| format!("unknown key {k:?}"))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(VpgError::Config(unknown))
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HnswSettings {
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
}

impl Default for HnswSettings {
    fn default() -> Self {
        HnswSettings {
            m: 16,
            ef_construction: 200,
            ef_search: 128,
        }
    }
}

impl HnswSettings {
    pub fn params(&self) -> crate::index::HnswParams {
        crate::index::HnswParams {
            m: self.m,
            ef_construction: self.ef_construction,
            seed: DEFAULT_HNSW_SEED,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RelevanceSettings {
    pub percentile: f64,
    pub calibration_size: usize,
}

impl Default for RelevanceSettings {
    fn default() -> Self {
        RelevanceSettings {
            percentile: 0.75,
            calibration_size: 200,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DedupSettings {
    pub hamming_max: u32,
}

impl Default for DedupSettings {
    fn default() -> Self {
        DedupSettings { hamming_max: 8 }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RerankSettings {
    pub lambda: f64,
    pub n_out: usize,
}

impl Default for RerankSettings {
    fn default() -> Self {
        RerankSettings {
            lambda: 0.5,
            n_out: 10,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ReverseSettings {
    pub k_raw: usize,
}

impl Default for ReverseSettings {
    fn default() -> Self {
        ReverseSettings { k_raw: 150 }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardSettings {
    pub max_objects: usize,
    pub per_object_k: usize,
    pub n_out: usize,
    pub ttl_seconds: u64,
    pub cache_capacity: usize,
    pub parallelism: usize,
}

impl Default for ForwardSettings {
    fn default() -> Self {
        ForwardSettings {
            max_objects: 4,
            per_object_k: 12,
            n_out: 3,
            ttl_seconds: 7200,
            cache_capacity: 10_000,
            parallelism: 4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ServerSettings {
    pub bind: String,
    pub port: u16,
}

impl Default for ServerSettings {
    fn default() -> Self {
        ServerSettings {
            bind: "127.0.0.1".to_string(),
            port: 8080,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EngineConfig {
    pub store_dir: PathBuf,
    pub index_dir: PathBuf,
    pub hnsw: HnswSettings,
    pub relevance: RelevanceSettings,
    pub dedup: DedupSettings,
    pub rerank: RerankSettings,
    pub reverse: ReverseSettings,
    pub forward: ForwardSettings,
    pub server: ServerSettings,
    pub world: Option<WorldConfig>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            store_dir: PathBuf::from("store"),
            index_dir: PathBuf::from("index"),
            hnsw: HnswSettings::default(),
            relevance: RelevanceSettings::default(),
            dedup: DedupSettings::default(),
            rerank: RerankSettings::default(),
            reverse: ReverseSettings::default(),
            forward: ForwardSettings::default(),
            server: ServerSettings::default(),
            world: None,
        }
    }
}

impl EngineConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let kv = KvConfig::from_file(path)?;
        Self::from_kv(&kv)
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = EngineConfig::default();
        let df = d.forward;
        let cfg = EngineConfig {
            store_dir: kv
                .get_str("store_dir")?
                .map(PathBuf::from)
                .unwrap_or(d.store_dir),
            index_dir: kv
                .get_str("index_dir")?
                .map(PathBuf::from)
                .unwrap_or(d.index_dir),
            hnsw: HnswSettings {
                m: kv.get_usize("hnsw.m")?.unwrap_or(d.hnsw.m),
                ef_construction: kv
                    .get_usize("hnsw.ef_construction")?
                    .unwrap_or(d.hnsw.ef_construction),
                ef_search: kv.get_usize("hnsw.ef_search")?.unwrap_or(d.hnsw.ef_search),
            },
            relevance: RelevanceSettings {
                percentile: kv
                    .get_f64("relevance.percentile")?
                    .unwrap_or(d.relevance.percentile),
                calibration_size: kv
                    .get_usize("relevance.calibration_size")?
                    .unwrap_or(d.relevance.calibration_size),
            },
            dedup: DedupSettings {
                hamming_max: kv
                    .get_u32("dedup.hamming_max")?
                    .unwrap_or(d.dedup.hamming_max),
            },
            rerank: RerankSettings {
                lambda: kv.get_f64("rerank.lambda")?.unwrap_or(d.rerank.lambda),
                n_out: kv.get_usize("rerank.n_out")?.unwrap_or(d.rerank.n_out),
            },
            reverse: ReverseSettings {
                k_raw: kv.get_usize("reverse.k_raw")?.unwrap_or(d.reverse.k_raw),
            },
            forward: ForwardSettings {
                max_objects: kv
                    .get_usize("forward.max_objects")?
                    .unwrap_or(df.max_objects),
                per_object_k: kv
                    .get_usize("forward.per_object_k")?
                    .unwrap_or(df.per_object_k),
                n_out: kv.get_usize("forward.n_out")?.unwrap_or(df.n_out),
                ttl_seconds: kv.get_u64("forward.ttl_seconds")?.unwrap_or(df.ttl_seconds),
                cache_capacity: kv
                    .get_usize("forward.cache_capacity")?
                    .unwrap_or(df.cache_capacity),
                parallelism: kv
                    .get_usize("forward.parallelism")?
                    .unwrap_or(df.parallelism),
            },
            server: ServerSettings {
                bind: kv.get_str("server.bind")?.unwrap_or(d.server.bind),
                port: kv
                    .get_u32("server.port")?
                    .map(|p| p as u16)
                    .unwrap_or(d.server.port),
            },
            world: world_from_kv(kv, "world.")?,
        };
        kv.reject_unknown()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// `key=value` overrides on top of a parsed config; flags win.
    pub fn apply_overrides(mut self, overrides: &[(String, String)]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self);
        }
        let mut kv = KvConfig::empty();
        self.write_into(&mut kv);
        for (k, v) in overrides {
            kv.set(k, v);
        }
        let world = self.world.take();
        let mut rebuilt = Self::from_kv(&kv)?;
        if rebuilt.world.is_none() {
            rebuilt.world = world;
        }
        Ok(rebuilt)
    }

    fn write_into(&self, kv: &mut KvConfig) {
        kv.set("store_dir", &self.store_dir.display().to_string());
        kv.set("index_dir", &self.index_dir.display().to_string());
        kv.set("hnsw.m", &self.hnsw.m.to_string());
        kv.set(
            "hnsw.ef_construction",
            &self.hnsw.ef_construction.to_string(),
        );
        kv.set("hnsw.ef_search", &self.hnsw.ef_search.to_string());
        kv.set(
            "relevance.percentile",
            &self.relevance.percentile.to_string(),
        );
        kv.set(
            "relevance.calibration_size",
            &self.relevance.calibration_size.to_string(),
        );
        kv.set("dedup.hamming_max", &self.dedup.hamming_max.to_string());
        kv.set("rerank.lambda", &self.rerank.lambda.to_string());
        kv.set("rerank.n_out", &self.rerank.n_out.to_string());
        kv.set("reverse.k_raw", &self.reverse.k_raw.to_string());
        kv.set("forward.max_objects", &self.forward.max_objects.to_string());
        kv.set(
            "forward.per_object_k",
            &self.forward.per_object_k.to_string(),
        );
        kv.set("forward.n_out", &self.forward.n_out.to_string());
        kv.set("forward.ttl_seconds", &self.forward.ttl_seconds.to_string());
        kv.set(
            "forward.cache_capacity",
            &self.forward.cache_capacity.to_string(),
        );
        kv.set("forward.parallelism", &self.forward.parallelism.to_string());
        kv.set("server.bind", &self.server.bind);
        kv.set("server.port", &self.server.port.to_string());
        if let Some(w) = &self.world {
            kv.set("world.seed", &w.seed.to_string());
            kv.set("world.dimension", &w.dimension.to_string());
            kv.set("world.products", &w.product_count.to_string());
            kv.set("world.scenes", &w.scene_count.to_string());
            kv.set("world.noise_sigma", &w.noise_sigma.to_string());
            kv.set("world.min_objects", &w.min_objects.to_string());
            kv.set("world.max_objects", &w.max_objects.to_string());
            kv.set("world.min_separation", &w.min_separation.to_string());
            kv.set("world.image_width", &w.image_width.to_string());
            kv.set("world.image_height", &w.image_height.to_string());
            kv.set("world.duplicate_rate", &w.duplicate_rate.to_string());
            kv.set(
                "world.false_positive_rate",
                &w.false_positive_rate.to_string(),
            );
        }
    }

    /// Collects every violation, not just the first.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.hnsw.m < 2 {
            problems.push(format!("hnsw.m must be >= 2, got {}", self.hnsw.m));
        }
        if self.hnsw.ef_construction == 0 || self.hnsw.ef_search == 0 {
            problems.push("hnsw ef parameters must be positive".to_string());
        }
        if !(0.0..=1.0).contains(&self.relevance.percentile) {
            problems.push(format!(
                "relevance.percentile must be in [0,1], got {}",
                self.relevance.percentile
            ));
        }
        if self.relevance.calibration_size == 0 {
            problems.push("relevance.calibration_size must be positive".to_string());
        }
        if self.dedup.hamming_max > 64 {
            problems.push(format!(
                "dedup.hamming_max must be <= 64, got {}",
                self.dedup.hamming_max
            ));
        }
        if self.rerank.lambda < 0.0 || !self.rerank.lambda.is_finite() {
            problems.push(format!(
                "rerank.lambda must be a finite non-negative number, got {}",
                self.rerank.lambda
            ));
        }
        if self.rerank.n_out == 0 {
            problems.push("rerank.n_out must be positive".to_string());
        }
        if self.reverse.k_raw == 0 {
            problems.push("reverse.k_raw must be positive".to_string());
        }
        if self.forward.max_objects == 0
            || self.forward.per_object_k == 0
            || self.forward.n_out == 0
        {
            problems.push("forward.max_objects/per_object_k/n_out must be positive".to_string());
        }
        if self.forward.ttl_seconds == 0 {
            problems.push("forward.ttl_seconds must be positive".to_string());
        }
        if self.forward.cache_capacity == 0 {
            problems.push("forward.cache_capacity must be positive".to_string());
        }
        if self.forward.parallelism == 0 {
            problems.push("forward.parallelism must be positive".to_string());
        }
        if let Some(w) = &self.world {
            if let Err(VpgError::Config(more)) = w.validate() {
                problems.extend(more);
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(VpgError::Config(problems))
        }
    }

    pub fn object_index_path(&self) -> PathBuf {
        self.index_dir.join("objects.vpga")
    }

    pub fn product_index_path(&self) -> PathBuf {
        self.index_dir.join("products.vpga")
    }

    pub fn calibration_path(&self) -> PathBuf {
        self.index_dir.join("calibration.json")
    }

    pub fn catalog_path(&self) -> PathBuf {
        self.store_dir.join("catalog.jsonl")
    }
}

/// World config from unprefixed keys (`seed = 7`, `products = 1000`, ...),
/// the format `synth generate --config` reads.
pub fn world_config_from_kv(kv: &KvConfig) -> Result<WorldConfig> {
    let w = world_from_kv(kv, "")?.expect("unprefixed world config always present");
    kv.reject_unknown()?;
    w.validate()?;
    Ok(w)
}

fn world_from_kv(kv: &KvConfig, prefix: &str) -> Result<Option<WorldConfig>> {
    let key = |name: &str| format!("{prefix}{name}");
    let d = WorldConfig::default();
    let seed = kv.get_u64(&key("seed"))?;
    let dimension = kv.get_usize(&key("dimension"))?;
    let products = kv.get_u32(&key("products"))?;
    let scenes = kv.get_u32(&key("scenes"))?;
    let noise = kv.get_f64(&key("noise_sigma"))?;
    let min_objects = kv.get_u32(&key("min_objects"))?;
    let max_objects = kv.get_u32(&key("max_objects"))?;
    let min_separation = kv.get_f64(&key("min_separation"))?;
    let image_width = kv.get_u32(&key("image_width"))?;
    let image_height = kv.get_u32(&key("image_height"))?;
    let duplicate_rate = kv.get_f64(&key("duplicate_rate"))?;
    let false_positive_rate = kv.get_f64(&key("false_positive_rate"))?;

    // prefixed world sections are optional as a whole
    if !prefix.is_empty()
        && [
            seed.is_none(),
            dimension.is_none(),
            products.is_none(),
            scenes.is_none(),
            noise.is_none(),
            min_objects.is_none(),
            max_objects.is_none(),
            min_separation.is_none(),
            image_width.is_none(),
            image_height.is_none(),
            duplicate_rate.is_none(),
            false_positive_rate.is_none(),
        ]
        .iter()
        .all(|absent| *absent)
    {
        return Ok(None);
    }

    Ok(Some(WorldConfig {
        seed: seed.unwrap_or(d.seed),
        dimension: dimension.unwrap_or(d.dimension),
        product_count: products.unwrap_or(d.product_count),
        scene_count: scenes.unwrap_or(d.scene_count),
        noise_sigma: noise.unwrap_or(d.noise_sigma),
        min_objects: min_objects.unwrap_or(d.min_objects),
        max_objects: max_objects.unwrap_or(d.max_objects),
        min_separation: min_separation.unwrap_or(d.min_separation),
        image_width: image_width.unwrap_or(d.image_width),
        image_height: image_height.unwrap_or(d.image_height),
        duplicate_rate: duplicate_rate.unwrap_or(d.duplicate_rate),
        false_positive_rate: false_positive_rate.unwrap_or(d.false_positive_rate),
    }))
}
