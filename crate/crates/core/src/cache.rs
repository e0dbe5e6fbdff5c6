//! TTL + LRU cache with per-key request coalescing.
//!
//! Time never comes from the ambient system inside the cache: a [`Clock`] is
//! injected, which is what makes TTL behavior testable to the second.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::Result;

pub trait Clock: Send + Sync {
    /// Milliseconds since the Unix epoch.
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Test clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        ManualClock(AtomicU64::new(start_ms))
    }

    pub fn advance_ms(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }

    pub fn advance_secs(&self, secs: u64) {
        self.advance_ms(secs * 1000);
    }

    pub fn set_ms(&self, ms: u64) {
        self.0.store(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Default, Clone, serde::Serialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub coalesced_waits: u64,
    pub evictions: u64,
    pub expirations: u64,
}

impl CacheStats {
    pub fn hit_rate(&self) -> f64 {
        let lookups = self.hits + self.misses;
        if lookups == 0 {
            0.0
        } else {
            self.hits as f64 / lookups as f64
        }
    }
}

struct Slot<V> {
    value: V,
    stored_at_ms: u64,
    ticket: u64,
}

struct Inner<K, V> {
    map: HashMap<K, Slot<V>>,
    // recency ticket -> key; lowest ticket is the LRU victim
    recency: BTreeMap<u64, K>,
    next_ticket: u64,
}

enum FlightState<V> {
    Pending,
    Done(V),
    Failed,
}

struct Flight<V> {
    state: Mutex<FlightState<V>>,
    cv: Condvar,
}

/// Bounded cache: entries expire `ttl_ms` after being stored and the least
/// recently used entry is evicted once `capacity` is exceeded. Concurrent
/// `get_or_compute` calls for one key run the computation exactly once; the
/// rest wait and share the produced value.
pub struct TtlLruCache<K, V> {
    inner: Mutex<Inner<K, V>>,
    inflight: Mutex<HashMap<K, Arc<Flight<V>>>>,
    clock: Arc<dyn Clock>,
    ttl_ms: u64,
    capacity: usize,
    hits: AtomicU64,
    misses: AtomicU64,
    coalesced: AtomicU64,
    evictions: AtomicU64,
    expirations: AtomicU64,
}

impl<K, V> TtlLruCache<K, V>
where
    K: Eq + Hash + Clone,
    V: Clone,
{
    pub fn new(capacity: usize, ttl_ms: u64, clock: Arc<dyn Clock>) -> Self {
        TtlLruCache {
            inner: Mutex::new(Inner {
                map: HashMap::new(),
                recency: BTreeMap::new(),
                next_ticket: 0,
            }),
            inflight: Mutex::new(HashMap::new()),
            clock,
            ttl_ms,
            capacity: capacity.max(1),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            coalesced: AtomicU64::new(0),
            evictions: AtomicU64::new(0),
            expirations: AtomicU64::new(0),
        }
    }

    pub fn ttl_ms(&self) -> u64 {
        self.ttl_ms
    }

    /// Fresh-entry lookup. Entries exactly `ttl_ms` old are still served;
    /// one tick past that they are dropped.
    pub fn get(&self, key: &K) -> Option<V> {
        let now = self.clock.now_ms();
        let mut inner = self.inner.lock().unwrap();
        match self.get_fresh(&mut inner, key, now) {
            Some(v) => {
                self.hits.fetch_add(1, Ordering::Relaxed);
                Some(v)
            }
            None => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                None
            }
        }
    }

    fn get_fresh(&self, inner: &mut Inner<K, V>, key: &K, now: u64) -> Option<V> {
        let expired = {
            let slot = inner.map.get(key)?;
            now.saturating_sub(slot.stored_at_ms) > self.ttl_ms
        };
        if expired {
            let slot = inner.map.remove(key).unwrap();
            inner.recency.remove(&slot.ticket);
            self.expirations.fetch_add(1, Ordering::Relaxed);
            return None;
        }
        let ticket = inner.next_ticket;
        inner.next_ticket += 1;
        let slot = inner.map.get_mut(key).unwrap();
        inner.recency.remove(&slot.ticket);
        slot.ticket = ticket;
        let value = slot.value.clone();
        inner.recency.insert(ticket, key.clone());
        Some(value)
    }

    pub fn insert(&self, key: K, value: V) {
        let now = self.clock.now_ms();
        let mut inner = self.inner.lock().unwrap();
        self.insert_locked(&mut inner, key, value, now);
    }

    fn insert_locked(&self, inner: &mut Inner<K, V>, key: K, value: V, now: u64) {
        if let Some(old) = inner.map.remove(&key) {
            inner.recency.remove(&old.ticket);
        }
        let ticket = inner.next_ticket;
        inner.next_ticket += 1;
        inner.recency.insert(ticket, key.clone());
        inner.map.insert(
            key,
            Slot {
                value,
                stored_at_ms: now,
                ticket,
            },
        );
        while inner.map.len() > self.capacity {
            let (&victim_ticket, _) = inner.recency.iter().next().unwrap();
            let victim = inner.recency.remove(&victim_ticket).unwrap();
            inner.map.remove(&victim);
            self.evictions.fetch_add(1, Ordering::Relaxed);
        }
    }

    /// Returns `(value, served_from_cache)`. On a miss, exactly one caller
    /// runs `compute`; concurrent callers for the same key block and receive
    /// the computed value. If the leader fails, one waiter retries.
    pub fn get_or_compute<F>(&self, key: K, compute: F) -> Result<(V, bool)>
    where
        F: Fn() -> Result<V>,
    {
        loop {
            {
                let now = self.clock.now_ms();
                let mut inner = self.inner.lock().unwrap();
                if let Some(v) = self.get_fresh(&mut inner, &key, now) {
                    self.hits.fetch_add(1, Ordering::Relaxed);
                    return Ok((v, true));
                }
            }

            enum Role<V> {
                Leader,
                Waiter(Arc<Flight<V>>),
            }
            let role = {
                let mut inflight = self.inflight.lock().unwrap();
                match inflight.get(&key) {
                    Some(flight) => Role::Waiter(Arc::clone(flight)),
                    None => {
                        inflight.insert(
                            key.clone(),
                            Arc::new(Flight {
                                state: Mutex::new(FlightState::Pending),
                                cv: Condvar::new(),
                            }),
                        );
                        Role::Leader
                    }
                }
            };

            match role {
                Role::Leader => {
                    self.misses.fetch_add(1, Ordering::Relaxed);
                    let outcome = compute();
                    let flight = {
                        let mut inflight = self.inflight.lock().unwrap();
                        inflight.remove(&key).expect("leader flight vanished")
                    };
                    match outcome {
                        Ok(value) => {
                            let now = self.clock.now_ms();
                            {
                                let mut inner = self.inner.lock().unwrap();
                                self.insert_locked(&mut inner, key.clone(), value.clone(), now);
                            }
                            *flight.state.lock().unwrap() = FlightState::Done(value.clone());
                            flight.cv.notify_all();
                            return Ok((value, false));
                        }
                        Err(e) => {
                            *flight.state.lock().unwrap() = FlightState::Failed;
                            flight.cv.notify_all();
                            return Err(e);
                        }
                    }
                }
                Role::Waiter(flight) => {
                    self.coalesced.fetch_add(1, Ordering::Relaxed);
                    let mut state = flight.state.lock().unwrap();
                    while matches!(*state, FlightState::Pending) {
                        state = flight.cv.wait(state).unwrap();
                    }
                    match &*state {
                        FlightState::Done(v) => return Ok((v.clone(), false)),
                        // leader failed: loop and try again (someone becomes
                        // the new leader), so transient failures don't fan out
                        FlightState::Failed => continue,
                        FlightState::Pending => unreachable!(),
                    }
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            coalesced_waits: self.coalesced.load(Ordering::Relaxed),
            evictions: self.evictions.load(Ordering::Relaxed),
            expirations: self.expirations.load(Ordering::Relaxed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::VpgError;
    use std::sync::atomic::AtomicUsize;

    fn cache(capacity: usize, ttl_ms: u64) -> (TtlLruCache<u32, String>, Arc<ManualClock>) {
        let clock = Arc::new(ManualClock::new(1_000_000));
        (TtlLruCache::new(capacity, ttl_ms, clock.clone()), clock)
    }

    #[test]
    fn serves_within_ttl_and_expires_after() {
        let (c, clock) = cache(10, 7_200_000);
        c.insert(1, "a".into());
        clock.advance_secs(7200);
        assert_eq!(c.get(&1), Some("a".into()));
        clock.advance_secs(1);
        assert_eq!(c.get(&1), None);
    }

    #[test]
    fn lru_evicts_least_recently_used() {
        let (c, _clock) = cache(2, 1_000_000);
        c.insert(1, "a".into());
        c.insert(2, "b".into());
        assert_eq!(c.get(&1), Some("a".into())); // 2 is now LRU
        c.insert(3, "c".into());
        assert_eq!(c.get(&2), None);
        assert_eq!(c.get(&1), Some("a".into()));
        assert_eq!(c.get(&3), Some("c".into()));
        assert_eq!(c.stats().evictions, 1);
    }

    #[test]
    fn coalesces_concurrent_computes_to_one() {
        let (c, _clock) = cache(10, 1_000_000);
        let c = Arc::new(c);
        let runs = Arc::new(AtomicUsize::new(0));
        std::thread::scope(|s| {
            for _ in 0..32 {
                let c = Arc::clone(&c);
                let runs = Arc::clone(&runs);
                s.spawn(move || {
                    let (v, _) = c
                        .get_or_compute(7, || {
                            runs.fetch_add(1, Ordering::SeqCst);
                            std::thread::sleep(std::time::Duration::from_millis(20));
                            Ok("shared".to_string())
                        })
                        .unwrap();
                    assert_eq!(v, "shared");
                });
            }
        });
        assert_eq!(runs.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn leader_failure_lets_a_waiter_retry() {
        let (c, _clock) = cache(10, 1_000_000);
        let c = Arc::new(c);
        let attempts = Arc::new(AtomicUsize::new(0));
        let mut oks = 0;
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..8)
                .map(|_| {
                    let c = Arc::clone(&c);
                    let attempts = Arc::clone(&attempts);
                    s.spawn(move || {
                        c.get_or_compute(3, || {
                            let n = attempts.fetch_add(1, Ordering::SeqCst);
                            std::thread::sleep(std::time::Duration::from_millis(5));
                            if n == 0 {
                                Err(VpgError::Extraction("flaky".into()))
                            } else {
                                Ok("ok".to_string())
                            }
                        })
                    })
                })
                .collect();
            for h in handles {
                if h.join().unwrap().is_ok() {
                    oks += 1;
                }
            }
        });
        // exactly one caller saw the failure; everyone else got the value
        assert_eq!(oks, 7);
        assert_eq!(attempts.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn stale_entry_recomputes() {
        let (c, clock) = cache(10, 1_000);
        let (_, hit) = c.get_or_compute(1, || Ok("v1".into())).unwrap();
        assert!(!hit);
        let (_, hit) = c.get_or_compute(1, || Ok("v2".into())).unwrap();
        assert!(hit);
        clock.advance_ms(1_001);
        let (v, hit) = c.get_or_compute(1, || Ok("v3".into())).unwrap();
        assert!(!hit);
        assert_eq!(v, "v3");
    }
}
