//! HNSW approximate-nearest-neighbor index over embeddings.
//!
//! Multi-layer navigable small-world graph searched greedily from the top
//! layer down, with heuristic neighbor selection during construction so
//! clustered corpora (many near-identical object embeddings) stay navigable.
//! Build is single-writer; after build the graph is immutable and queries
//! are lock-free from any number of threads.
//!
//! Persisted as a single `VPGA1` file: header (dimension, graph parameters,
//! count), per-node keys and adjacency lists, then all vectors in
//! little-endian half precision.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use half::f16;

use crate::error::{Result, VpgError};
use crate::rng;
use crate::types::{Embedding, ImageSignature, SIGNATURE_LEN};

pub const INDEX_MAGIC: &[u8; 5] = b"VPGA1";
pub const DEFAULT_HNSW_SEED: u64 = 0x5650_4741_u64;

/// Key stored alongside each vector. Fixed-width encoding keeps the index
/// file layout trivial.
pub trait IndexKey: Clone + Ord + Send + Sync {
    /// Discriminator byte in the index header.
    const KIND: u8;
    const ENCODED_LEN: usize;
    fn encode(&self, out: &mut Vec<u8>);
    fn decode(bytes: &[u8]) -> Result<Self>;
}

impl IndexKey for ImageSignature {
    const KIND: u8 = 1;
    const ENCODED_LEN: usize = SIGNATURE_LEN;

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(self.as_bytes());
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        Ok(ImageSignature::from_bytes(bytes.try_into().map_err(
            |_| VpgError::Store("truncated signature key".into()),
        )?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HnswParams {
    /// Max neighbors per node on upper layers (layer 0 allows 2M).
    pub m: usize,
    pub ef_construction: usize,
    /// Seed for level assignment; fixed so builds replay identically.
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams {
            m: 16,
            ef_construction: 200,
            seed: DEFAULT_HNSW_SEED,
        }
    }
}

/// f32 distance with a total order (ties broken by node id at use sites).
#[derive(Clone, Copy, PartialEq)]
struct Dist(f32);

impl Eq for Dist {}

impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dist {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

struct Node {
    /// levels[l] = neighbor ids at layer l; node participates in layers
    /// 0..levels.len()
    levels: Vec<Vec<u32>>,
}

pub struct HnswIndex<K> {
    dim: usize,
    params: HnswParams,
    keys: Vec<K>,
    vectors: Vec<f32>,
    nodes: Vec<Node>,
    entry: Option<u32>,
    max_level: usize,
    queries: AtomicU64,
}

impl<K: IndexKey> HnswIndex<K> {
    pub fn build(
        dim: usize,
        params: HnswParams,
        entries: impl IntoIterator<Item = (K, Embedding)>,
    ) -> Result<Self> {
        if params.m < 2 {
            return Err(VpgError::InvalidArgument(format!(
                "hnsw m must be >= 2, got {}",
                params.m
            )));
        }
        let mut index = HnswIndex {
            dim,
            params,
            keys: Vec::new(),
            vectors: Vec::new(),
            nodes: Vec::new(),
            entry: None,
            max_level: 0,
            queries: AtomicU64::new(0),
        };
        for (key, emb) in entries {
            index.insert(key, &emb)?;
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> HnswParams {
        self.params
    }

    pub fn keys(&self) -> &[K] {
        &self.keys
    }

    /// Queries answered since this index was built or loaded.
    pub fn queries_executed(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    fn vector(&self, id: u32) -> &[f32] {
        let start = id as usize * self.dim;
        &self.vectors[start..start + self.dim]
    }

    fn squared(&self, q: &[f32], id: u32) -> f32 {
        let v = self.vector(id);
        let mut acc = 0.0f32;
        for i in 0..self.dim {
            let d = q[i] - v[i];
            acc += d * d;
        }
        acc
    }

    fn sample_level(&self, id: usize) -> usize {
        let mut r = rng::seeded(&[
            b"hnsw-level",
            &self.params.seed.to_le_bytes(),
            &(id as u64).to_le_bytes(),
        ]);
        let ml = 1.0 / (self.params.m as f64).ln();
        let u = rng::uniform01(&mut r);
        ((-u.ln() * ml).floor() as usize).min(31)
    }

    fn insert(&mut self, key: K, emb: &Embedding) -> Result<()> {
        if emb.dim() != self.dim {
            return Err(VpgError::DimensionMismatch {
                expected: self.dim,
                actual: emb.dim(),
            });
        }
        let id = self.keys.len() as u32;
        let level = self.sample_level(id as usize);
        self.keys.push(key);
        self.vectors.extend_from_slice(emb.values());
        self.nodes.push(Node {
            levels: vec![Vec::new(); level + 1],
        });

        let Some(mut ep) = self.entry else {
            self.entry = Some(id);
            self.max_level = level;
            return Ok(());
        };

        let q: Vec<f32> = emb.values().to_vec();
        for l in (level + 1..=self.max_level).rev() {
            ep = self.greedy_closest(&q, ep, l);
        }

        let mut eps = vec![ep];
        for l in (0..=level.min(self.max_level)).rev() {
            let candidates = self.search_layer(&q, &eps, l, self.params.ef_construction);
            let neighbors = self.select_neighbors(&q, &candidates, self.params.m);
            for &(nd, n) in &neighbors {
                self.nodes[id as usize].levels[l].push(n);
                self.nodes[n as usize].levels[l].push(id);
                let cap = if l == 0 {
                    self.params.m * 2
                } else {
                    self.params.m
                };
                if self.nodes[n as usize].levels[l].len() > cap {
                    self.shrink_neighbors(n, l, cap);
                }
                let _ = nd;
            }
            eps = candidates.iter().map(|&(_, n)| n).collect();
        }

        if level > self.max_level {
            self.max_level = level;
            self.entry = Some(id);
        }
        Ok(())
    }

    fn shrink_neighbors(&mut self, node: u32, level: usize, cap: usize) {
        let v = self.vector(node).to_vec();
        let mut scored: Vec<(Dist, u32)> = self.nodes[node as usize].levels[level]
            .iter()
            .map(|&n| (Dist(self.squared(&v, n)), n))
            .collect();
        scored.sort();
        scored.dedup_by_key(|&mut (_, n)| n);
        let kept = self.select_neighbors(&v, &scored, cap);
        self.nodes[node as usize].levels[level] = kept.into_iter().map(|(_, n)| n).collect();
    }

    /// Heuristic neighbor selection: prefer candidates closer to the query
    /// than to anything already selected (keeps edges angularly diverse in
    /// clustered corpora), then backfill with the nearest pruned ones.
    fn select_neighbors(
        &self,
        q: &[f32],
        candidates: &[(Dist, u32)],
        m: usize,
    ) -> Vec<(Dist, u32)> {
        let mut result: Vec<(Dist, u32)> = Vec::with_capacity(m);
        let mut discarded: Vec<(Dist, u32)> = Vec::new();
        for &(d, c) in candidates {
            if result.len() >= m {
                break;
            }
            // a candidate sitting on top of a selected neighbor adds no
            // navigability, so exact co-location counts as dominated; that
            // keeps corpora full of identical vectors (many objects of one
            // product) from forming isolated cliques
            let dominated = result.iter().any(|&(_, r)| {
                let dr = self.squared_between(c, r);
                dr < d.0 || (dr == 0.0 && d.0 == 0.0)
            });
            if dominated {
                discarded.push((d, c));
            } else {
                result.push((d, c));
            }
        }
        for &(d, c) in &discarded {
            if result.len() >= m {
                break;
            }
            result.push((d, c));
        }
        let _ = q;
        result
    }

    fn squared_between(&self, a: u32, b: u32) -> f32 {
        let va = self.vector(a);
        let vb = self.vector(b);
        let mut acc = 0.0f32;
        for i in 0..self.dim {
            let d = va[i] - vb[i];
            acc += d * d;
        }
        acc
    }

    fn greedy_closest(&self, q: &[f32], start: u32, level: usize) -> u32 {
        let mut current = start;
        let mut best = Dist(self.squared(q, current));
        loop {
            let mut improved = false;
            for &n in &self.nodes[current as usize].levels[level] {
                let d = Dist(self.squared(q, n));
                if (d, n) < (best, current) {
                    best = d;
                    current = n;
                    improved = true;
                }
            }
            if !improved {
                return current;
            }
        }
    }

    /// Beam search on one layer. Returns candidates ascending by
    /// (distance, id).
    fn search_layer(&self, q: &[f32], eps: &[u32], level: usize, ef: usize) -> Vec<(Dist, u32)> {
        let ef = ef.max(1);
        let mut visited = vec![false; self.nodes.len()];
        // min-heap of frontier, max-heap of best ef results
        let mut frontier: BinaryHeap<Reverse<(Dist, u32)>> = BinaryHeap::new();
        let mut results: BinaryHeap<(Dist, u32)> = BinaryHeap::new();
        for &ep in eps {
            if visited[ep as usize] {
                continue;
            }
            visited[ep as usize] = true;
            let d = Dist(self.squared(q, ep));
            frontier.push(Reverse((d, ep)));
            results.push((d, ep));
        }
        while results.len() > ef {
            results.pop();
        }

        while let Some(Reverse((d, node))) = frontier.pop() {
            let worst = results
                .peek()
                .map(|&(w, _)| w)
                .unwrap_or(Dist(f32::INFINITY));
            if results.len() >= ef && d > worst {
                break;
            }
            for &n in &self.nodes[node as usize].levels[level] {
                if visited[n as usize] {
                    continue;
                }
                visited[n as usize] = true;
                let dn = Dist(self.squared(q, n));
                let worst = results
                    .peek()
                    .map(|&(w, _)| w)
                    .unwrap_or(Dist(f32::INFINITY));
                if results.len() < ef || dn < worst {
                    frontier.push(Reverse((dn, n)));
                    results.push((dn, n));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        let mut out: Vec<(Dist, u32)> = results.into_vec();
        out.sort();
        out
    }

    /// Approximate k-nearest by euclidean distance, ascending; ties broken
    /// by ascending key. Deterministic for a fixed index and `ef_search`.
    pub fn query(&self, q: &Embedding, k: usize, ef_search: usize) -> Result<Vec<(K, f64)>> {
        if q.dim() != self.dim {
            return Err(VpgError::DimensionMismatch {
                expected: self.dim,
                actual: q.dim(),
            });
        }
        self.queries.fetch_add(1, Ordering::Relaxed);
        let Some(mut ep) = self.entry else {
            return Ok(Vec::new());
        };
        if k == 0 {
            return Ok(Vec::new());
        }
        let qv = q.values();
        for l in (1..=self.max_level).rev() {
            ep = self.greedy_closest(qv, ep, l);
        }
        let found = self.search_layer(qv, &[ep], 0, ef_search.max(k));
        let mut out: Vec<(K, f64)> = found
            .into_iter()
            .take(k)
            .map(|(d, id)| (self.keys[id as usize].clone(), (d.0 as f64).sqrt()))
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        Ok(out)
    }

    /// One batched pass for several queries; per-query results identical to
    /// sequential `query` calls. Each query is counted.
    pub fn query_batch(
        &self,
        queries: &[Embedding],
        k: usize,
        ef_search: usize,
    ) -> Result<Vec<Vec<(K, f64)>>> {
        queries
            .iter()
            .map(|q| self.query(q, k, ef_search))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(INDEX_MAGIC)?;
        w.write_all(&[1u8, K::KIND])?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.params.m as u32).to_le_bytes())?;
        w.write_all(&(self.params.ef_construction as u32).to_le_bytes())?;
        w.write_all(&self.params.seed.to_le_bytes())?;
        w.write_all(&(self.keys.len() as u64).to_le_bytes())?;
        w.write_all(
            &self
                .entry
                .map(|e| e as u64)
                .unwrap_or(u64::MAX)
                .to_le_bytes(),
        )?;
        w.write_all(&(self.max_level as u32).to_le_bytes())?;
        let mut key_buf = Vec::with_capacity(K::ENCODED_LEN);
        for (key, node) in self.keys.iter().zip(&self.nodes) {
            key_buf.clear();
            key.encode(&mut key_buf);
            debug_assert_eq!(key_buf.len(), K::ENCODED_LEN);
            w.write_all(&key_buf)?;
            w.write_all(&(node.levels.len() as u32).to_le_bytes())?;
            for level in &node.levels {
                w.write_all(&(level.len() as u32).to_le_bytes())?;
                for &n in level {
                    w.write_all(&n.to_le_bytes())?;
                }
            }
        }
        for v in &self.vectors {
            w.write_all(&f16::from_f32(*v).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        File::open(path.as_ref())
            .map_err(|e| VpgError::Store(format!("open index {}: {e}", path.as_ref().display())))?
            .read_to_end(&mut buf)?;
        let mut r = ByteReader::new(&buf);
        let magic = r.take(5)?;
        if magic != INDEX_MAGIC {
            return Err(VpgError::Store("bad index magic".into()));
        }
        let version = r.u8()?;
        if version != 1 {
            return Err(VpgError::Store(format!("unknown index version {version}")));
        }
        let kind = r.u8()?;
        if kind != K::KIND {
            return Err(VpgError::Store(format!(
                "index key kind {kind} does not match expected {}",
                K::KIND
            )));
        }
        let dim = r.u32()? as usize;
        let m = r.u32()? as usize;
        let ef_construction = r.u32()? as usize;
        let seed = r.u64()?;
        let count = r.u64()? as usize;
        let entry_raw = r.u64()?;
        let max_level = r.u32()? as usize;

        let mut keys = Vec::with_capacity(count);
        let mut nodes = Vec::with_capacity(count);
        for _ in 0..count {
            keys.push(K::decode(r.take(K::ENCODED_LEN)?)?);
            let n_levels = r.u32()? as usize;
            let mut levels = Vec::with_capacity(n_levels);
            for _ in 0..n_levels {
                let n = r.u32()? as usize;
                let mut neighbors = Vec::with_capacity(n);
                for _ in 0..n {
                    neighbors.push(r.u32()?);
                }
                levels.push(neighbors);
            }
            nodes.push(Node { levels });
        }
        let mut vectors = Vec::with_capacity(count * dim);
        for _ in 0..count * dim {
            let b = r.take(2)?;
            vectors.push(f16::from_le_bytes([b[0], b[1]]).to_f32());
        }
        Ok(HnswIndex {
            dim,
            params: HnswParams {
                m,
                ef_construction,
                seed,
            },
            keys,
            vectors,
            nodes,
            entry: if entry_raw == u64::MAX {
                None
            } else {
                Some(entry_raw as u32)
            },
            max_level,
            queries: AtomicU64::new(0),
        })
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(VpgError::Store("index file truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(i: u64) -> ImageSignature {
        ImageSignature::digest(&i.to_le_bytes())
    }

    fn random_vectors(n: usize, dim: usize, tag: &[u8]) -> Vec<(ImageSignature, Embedding)> {
        let mut r = rng::seeded(&[b"hnsw-test", tag]);
        (0..n)
            .map(|i| {
                let values: Vec<f32> = (0..dim)
                    .map(|_| rng::standard_normal(&mut r) as f32)
                    .collect();
                (sig(i as u64), Embedding::new(values).unwrap())
            })
            .collect()
    }

    // independent scalar-loop oracle
    fn brute_force(
        entries: &[(ImageSignature, Embedding)],
        q: &Embedding,
        k: usize,
    ) -> Vec<ImageSignature> {
        let mut scored: Vec<(f64, ImageSignature)> = entries
            .iter()
            .map(|(key, e)| {
                let mut acc = 0.0f64;
                for (a, b) in e.values().iter().zip(q.values()) {
                    let d = (*a - *b) as f64;
                    acc += d * d;
                }
                (acc.sqrt(), *key)
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        scored.into_iter().take(k).map(|(_, k)| k).collect()
    }

    #[test]
    fn single_entry_always_returned() {
        let entries = random_vectors(1, 8, b"single");
        let index = HnswIndex::build(8, HnswParams::default(), entries.clone()).unwrap();
        let q = Embedding::new(vec![9.0; 8]).unwrap();
        let out = index.query(&q, 5, 16).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].0, entries[0].0);
    }

    #[test]
    fn k_larger_than_corpus_returns_everything_sorted() {
        let entries = random_vectors(20, 8, b"overshoot");
        let index = HnswIndex::build(8, HnswParams::default(), entries.clone()).unwrap();
        let q = entries[3].1.clone();
        let out = index.query(&q, 100, 200).unwrap();
        assert_eq!(out.len(), 20);
        for w in out.windows(2) {
            assert!(w[0].1 <= w[1].1);
        }
    }

    #[test]
    fn self_query_has_distance_zero_and_ranks_first() {
        let entries = random_vectors(200, 16, b"self");
        let index = HnswIndex::build(16, HnswParams::default(), entries.clone()).unwrap();
        for probe in [0usize, 17, 99, 199] {
            let out = index.query(&entries[probe].1, 3, 64).unwrap();
            assert_eq!(out[0].0, entries[probe].0);
            assert_eq!(out[0].1, 0.0);
        }
    }

    #[test]
    fn repeated_query_is_identical() {
        let entries = random_vectors(500, 16, b"determinism");
        let index = HnswIndex::build(16, HnswParams::default(), entries).unwrap();
        let q = Embedding::new(vec![0.1; 16]).unwrap();
        let a = index.query(&q, 10, 64).unwrap();
        for _ in 0..5 {
            let b = index.query(&q, 10, 64).unwrap();
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.0, y.0);
                assert_eq!(x.1, y.1);
            }
        }
    }

    #[test]
    fn recall_at_10_meets_floor_vs_brute_force() {
        let entries = random_vectors(2000, 32, b"recall");
        let index = HnswIndex::build(32, HnswParams::default(), entries.clone()).unwrap();
        let queries = random_vectors(50, 32, b"recall-queries");
        let mut hit = 0usize;
        let mut total = 0usize;
        for (_, q) in &queries {
            let exact: std::collections::BTreeSet<_> =
                brute_force(&entries, q, 10).into_iter().collect();
            let approx = index.query(q, 10, 128).unwrap();
            hit += approx.iter().filter(|(k, _)| exact.contains(k)).count();
            total += 10;
        }
        let recall = hit as f64 / total as f64;
        assert!(recall >= 0.95, "recall {recall}");
    }

    #[test]
    fn duplicate_heavy_corpus_still_finds_exact_matches() {
        // 50 distinct vectors, each repeated 40 times: the noiseless-world shape
        let base = random_vectors(50, 16, b"dups");
        let mut entries = Vec::new();
        for rep in 0..40u64 {
            for (i, (_, e)) in base.iter().enumerate() {
                entries.push((sig(rep * 1000 + i as u64), e.clone()));
            }
        }
        let index = HnswIndex::build(16, HnswParams::default(), entries).unwrap();
        for (_, q) in &base {
            let out = index.query(q, 5, 64).unwrap();
            assert_eq!(out[0].1, 0.0, "exact duplicate must be found");
        }
    }

    #[test]
    fn save_load_roundtrip_preserves_results() {
        let entries = random_vectors(300, 16, b"persist");
        // quantize inputs to f16 so persistence is lossless, as in the real
        // pipeline where vectors come off disk
        let entries: Vec<_> = entries
            .into_iter()
            .map(|(k, e)| (k, Embedding::from_f16_bytes(&e.to_f16_bytes()).unwrap()))
            .collect();
        let index = HnswIndex::build(16, HnswParams::default(), entries.clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("objects.vpga");
        index.save(&path).unwrap();
        let loaded: HnswIndex<ImageSignature> = HnswIndex::load(&path).unwrap();
        assert_eq!(loaded.len(), index.len());
        assert_eq!(loaded.dim(), index.dim());
        for (_, q) in entries.iter().take(20) {
            let a = index.query(q, 10, 64).unwrap();
            let b = loaded.query(q, 10, 64).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn load_rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.vpga");
        std::fs::write(&path, b"NOPE!rest").unwrap();
        let err = match HnswIndex::<ImageSignature>::load(&path) {
            Err(e) => e,
            Ok(_) => panic!("bogus file loaded"),
        };
        assert!(matches!(err, VpgError::Store(_)));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let entries = random_vectors(10, 8, b"dim");
        let index = HnswIndex::build(8, HnswParams::default(), entries).unwrap();
        let q = Embedding::new(vec![0.0; 9]).unwrap();
        assert!(matches!(
            index.query(&q, 5, 16),
            Err(VpgError::DimensionMismatch { .. })
        ));
        let bad = vec![(sig(0), Embedding::new(vec![0.0; 4]).unwrap())];
        assert!(HnswIndex::build(8, HnswParams::default(), bad).is_err());
    }

    #[test]
    fn batch_equals_sequential() {
        let entries = random_vectors(400, 16, b"batch");
        let index = HnswIndex::build(16, HnswParams::default(), entries).unwrap();
        let queries: Vec<Embedding> = random_vectors(7, 16, b"batch-queries")
            .into_iter()
            .map(|(_, e)| e)
            .collect();
        let batch = index.query_batch(&queries, 5, 64).unwrap();
        for (q, expected) in queries.iter().zip(&batch) {
            assert_eq!(&index.query(q, 5, 64).unwrap(), expected);
        }
        // 7 batch + 7 sequential
        assert_eq!(index.queries_executed(), 14);
    }

    #[test]
    fn query_counter_counts() {
        let entries = random_vectors(10, 8, b"counter");
        let index = HnswIndex::build(8, HnswParams::default(), entries.clone()).unwrap();
        assert_eq!(index.queries_executed(), 0);
        index.query(&entries[0].1, 1, 8).unwrap();
        index.query(&entries[1].1, 1, 8).unwrap();
        assert_eq!(index.queries_executed(), 2);
    }
}
