//! Python bindings for the visual product graph engine.
//!
//! Exposes the embedding distance primitives, synthetic corpus generation,
//! and the engine (backfill, catalog, index build, calibration, both query
//! paths, metrics) as the `vpg` extension module.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyFileNotFoundError, PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;

use vpg_core::config::{EngineConfig, KvConfig};
use vpg_core::engine::{
    evaluate_retrieval_files, forward_result_to_json, generate_world_files, reverse_result_to_json,
    Engine as CoreEngine,
};
use vpg_core::error::VpgError;
use vpg_core::forward::{Gender, UserContext};
use vpg_core::index::FilterConfig;
use vpg_core::types::{
    binarize as core_binarize, near_dup_signature as core_near_dup, BinaryEmbedding, Embedding,
    ImageSignature, DEFAULT_NEAR_DUP_SEED,
};

fn to_py_err(e: VpgError) -> PyErr {
    match &e {
        // online extraction failures are lookups of signatures the engine
        // cannot know; same category as a plain unknown entity
        VpgError::UnknownEntity(_) | VpgError::Extraction(_) => PyKeyError::new_err(e.to_string()),
        VpgError::InvalidArgument(_) | VpgError::DimensionMismatch { .. } | VpgError::Config(_) => {
            PyValueError::new_err(e.to_string())
        }
        VpgError::Io(_) => PyFileNotFoundError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn embedding(values: Vec<f32>) -> PyResult<Embedding> {
    Embedding::new(values).map_err(to_py_err)
}

fn json_to_py(py: Python<'_>, value: &serde_json::Value) -> PyResult<PyObject> {
    Ok(match value {
        serde_json::Value::Null => py.None(),
        serde_json::Value::Bool(b) => b.into_py_any(py)?,
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_py_any(py)?
            } else if let Some(u) = n.as_u64() {
                u.into_py_any(py)?
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_py_any(py)?
            }
        }
        serde_json::Value::String(s) => s.into_py_any(py)?,
        serde_json::Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_py_any(py)?
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, v) in map {
                dict.set_item(k, json_to_py(py, v)?)?;
            }
            dict.into_py_any(py)?
        }
    })
}

fn world_kv_from_dict(dict: &Bound<'_, PyDict>, prefix: &str) -> PyResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (key, value) in dict.iter() {
        let key: String = key.extract()?;
        let value: String = if let Ok(s) = value.extract::<String>() {
            s
        } else {
            value.str()?.to_string()
        };
        out.push((format!("{prefix}{key}"), value));
    }
    Ok(out)
}

/// Euclidean distance between two embeddings.
#[pyfunction]
fn euclidean_distance(a: Vec<f32>, b: Vec<f32>) -> PyResult<f64> {
    embedding(a)?
        .euclidean_distance(&embedding(b)?)
        .map_err(to_py_err)
}

/// Hamming distance between two 1024-bit binary codes given as 128 bytes.
#[pyfunction]
fn hamming_distance(a: Vec<u8>, b: Vec<u8>) -> PyResult<u32> {
    let to_code = |bytes: Vec<u8>| -> PyResult<BinaryEmbedding> {
        if bytes.len() != 128 {
            return Err(PyValueError::new_err(format!(
                "binary code must be 128 bytes, got {}",
                bytes.len()
            )));
        }
        let mut words = [0u64; 16];
        for (i, chunk) in bytes.chunks_exact(8).enumerate() {
            words[i] = u64::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(BinaryEmbedding::from_words(words))
    };
    Ok(to_code(a)?.hamming_distance(&to_code(b)?))
}

/// Threshold binarization of a 1024-d embedding onto the legacy binary code.
#[pyfunction]
fn binarize(values: Vec<f32>, thresholds: Vec<f32>) -> PyResult<Vec<u8>> {
    let code = core_binarize(&embedding(values)?, &thresholds).map_err(to_py_err)?;
    Ok(code.words().iter().flat_map(|w| w.to_le_bytes()).collect())
}

/// 64-bit near-duplicate signature of an embedding.
#[pyfunction]
#[pyo3(signature = (values, seed=None))]
fn near_dup_signature(values: Vec<f32>, seed: Option<u64>) -> PyResult<u64> {
    let sig = core_near_dup(&embedding(values)?, seed.unwrap_or(DEFAULT_NEAR_DUP_SEED))
        .map_err(to_py_err)?;
    Ok(sig.0)
}

/// Generate a synthetic corpus to JSONL files. `config` carries the world
/// keys (seed, dimension, products, scenes, noise_sigma, ...). Returns
/// (scene_count, product_count).
#[pyfunction]
#[pyo3(signature = (config, scenes_path, products_path, truth_path=None))]
fn generate_world(
    config: &Bound<'_, PyDict>,
    scenes_path: String,
    products_path: String,
    truth_path: Option<String>,
) -> PyResult<(u64, u64)> {
    let mut kv = KvConfig::empty();
    for (k, v) in world_kv_from_dict(config, "")? {
        kv.set(&k, &v);
    }
    let world = vpg_core::config::world_config_from_kv(&kv).map_err(to_py_err)?;
    let truth = truth_path.map(PathBuf::from);
    generate_world_files(world, scenes_path, products_path, truth.as_deref()).map_err(to_py_err)
}

/// Rated-retrieval evaluation over prediction and ground-truth JSONL files.
#[pyfunction]
#[pyo3(signature = (pred_path, truth_path, ks=vec![1, 5]))]
fn eval_retrieval(
    py: Python<'_>,
    pred_path: String,
    truth_path: String,
    ks: Vec<usize>,
) -> PyResult<PyObject> {
    let metrics = evaluate_retrieval_files(pred_path, truth_path, &ks).map_err(to_py_err)?;
    let json: BTreeMap<String, serde_json::Value> = metrics
        .into_iter()
        .map(|(name, r)| {
            (
                name,
                serde_json::json!({"value": r.value, "evaluated": r.evaluated, "excluded": r.excluded}),
            )
        })
        .collect();
    json_to_py(
        py,
        &serde_json::to_value(json).map_err(|e| PyRuntimeError::new_err(e.to_string()))?,
    )
}

/// The engine: a feature store, product catalog, ANN indexes, and both
/// serving pipelines rooted at `store_dir` / `index_dir`.
#[pyclass]
struct Engine {
    inner: CoreEngine,
}

#[pymethods]
impl Engine {
    /// `world` (optional dict) attaches synthetic-world parameters so cache
    /// misses can fall back to online extraction.
    #[new]
    #[pyo3(signature = (store_dir, index_dir, world=None))]
    fn new(
        store_dir: String,
        index_dir: String,
        world: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<Self> {
        let mut kv = KvConfig::empty();
        kv.set("store_dir", &store_dir);
        kv.set("index_dir", &index_dir);
        if let Some(world) = world {
            for (k, v) in world_kv_from_dict(world, "world.")? {
                kv.set(&k, &v);
            }
        }
        let config = EngineConfig::from_kv(&kv).map_err(to_py_err)?;
        Ok(Engine {
            inner: CoreEngine::open(config).map_err(to_py_err)?,
        })
    }

    fn backfill(&self, path: String) -> PyResult<u64> {
        self.inner.backfill_file(path).map_err(to_py_err)
    }

    fn append_products(&mut self, path: String) -> PyResult<u64> {
        self.inner.append_products_file(path).map_err(to_py_err)
    }

    fn build_indexes(&mut self, py: Python<'_>) -> PyResult<PyObject> {
        let report = self
            .inner
            .build_indexes(&FilterConfig::default())
            .map_err(to_py_err)?;
        json_to_py(
            py,
            &serde_json::to_value(report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?,
        )
    }

    fn calibrate(&mut self, py: Python<'_>) -> PyResult<PyObject> {
        let cal = self.inner.calibrate().map_err(to_py_err)?;
        json_to_py(
            py,
            &serde_json::to_value(cal).map_err(|e| PyRuntimeError::new_err(e.to_string()))?,
        )
    }

    /// Product-to-scenes retrieval; returns the ranked scenes with scores,
    /// matched boxes, and the filter/dedup trace.
    fn reverse(&self, py: Python<'_>, product: String) -> PyResult<PyObject> {
        let sig: ImageSignature = product.parse().map_err(to_py_err)?;
        let result = self.inner.reverse_query(&sig).map_err(to_py_err)?;
        json_to_py(py, &reverse_result_to_json(&result))
    }

    /// Scene-to-products retrieval under a user context.
    #[pyo3(signature = (scene, gender="", country=""))]
    fn forward(
        &self,
        py: Python<'_>,
        scene: String,
        gender: &str,
        country: &str,
    ) -> PyResult<PyObject> {
        let sig: ImageSignature = scene.parse().map_err(to_py_err)?;
        let gender: Gender = gender.parse().map_err(to_py_err)?;
        let ctx = UserContext::new(gender, country);
        let (products, cached) = self.inner.forward_query(&sig, &ctx).map_err(to_py_err)?;
        json_to_py(py, &forward_result_to_json(&sig, &ctx, &products, cached))
    }

    fn metrics(&self, py: Python<'_>) -> PyResult<PyObject> {
        json_to_py(
            py,
            &serde_json::to_value(self.inner.metrics())
                .map_err(|e| PyRuntimeError::new_err(e.to_string()))?,
        )
    }

    fn ready(&self) -> bool {
        self.inner.ready_to_serve()
    }

    fn store_len(&self) -> usize {
        self.inner.store().len()
    }

    fn catalog_len(&self) -> usize {
        self.inner.catalog().len()
    }
}

#[pymodule]
fn vpg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Engine>()?;
    m.add_function(wrap_pyfunction!(euclidean_distance, m)?)?;
    m.add_function(wrap_pyfunction!(hamming_distance, m)?)?;
    m.add_function(wrap_pyfunction!(binarize, m)?)?;
    m.add_function(wrap_pyfunction!(near_dup_signature, m)?)?;
    m.add_function(wrap_pyfunction!(generate_world, m)?)?;
    m.add_function(wrap_pyfunction!(eval_retrieval, m)?)?;
    m.add("DEFAULT_NEAR_DUP_SEED", DEFAULT_NEAR_DUP_SEED)?;
    Ok(())
}
