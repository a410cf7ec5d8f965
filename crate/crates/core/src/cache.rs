//! Privacy-aware caching of noisy answers.
//!
//! A client that reports the same true value repeatedly can reuse one noisy
//! answer instead of spending fresh budget every time. Entries expire after a
//! time-to-live, after which the next report of that value is perturbed (and
//! paid for) again.

use std::num::NonZeroUsize;
use std::sync::Arc;

use lru::LruCache;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ldp::{BudgetLedger, ClientReport, Payload, ProtocolSpec};
use crate::{Error, Result, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trust {
    Cached,
    Authoritative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Client,
    Shuffler,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    /// The true value the noisy answer was drawn for.
    pub key: u64,
    pub noisy_answer: Payload,
    pub created_at: Tick,
    pub ttl: Tick,
    pub trust: Trust,
    pub tier: Tier,
}

impl CacheEntry {
    pub fn is_live(&self, now: Tick) -> bool {
        now <= self.created_at.saturating_add(self.ttl)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eviction {
    #[default]
    Lru,
    /// Reserved; rejected at construction.
    PredictivePrefetch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CachePolicy {
    pub capacity: usize,
    pub eviction: Eviction,
    pub ttl_default: Tick,
}

impl Default for CachePolicy {
    fn default() -> Self {
        CachePolicy {
            capacity: 16,
            eviction: Eviction::Lru,
            ttl_default: 1_000,
        }
    }
}

impl CachePolicy {
    pub fn validate(&self) -> Result<NonZeroUsize> {
        if self.eviction == Eviction::PredictivePrefetch {
            return Err(Error::config("predictive pre-fetching is not implemented"));
        }
        NonZeroUsize::new(self.capacity).ok_or_else(|| Error::config("cache capacity must be at least 1"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    pub expirations: u64,
}

/// Per-client cache of noisy answers keyed by true value.
#[derive(Debug)]
pub struct ClientCache {
    policy: CachePolicy,
    entries: LruCache<u64, CacheEntry>,
    stats: CacheStats,
    evicted: Vec<u64>,
}

impl ClientCache {
    pub fn new(policy: CachePolicy) -> Result<Self> {
        let cap = policy.validate()?;
        Ok(ClientCache {
            policy,
            entries: LruCache::new(cap),
            stats: CacheStats::default(),
            evicted: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    /// Keys evicted for capacity so far, oldest first.
    pub fn evicted(&self) -> &[u64] {
        &self.evicted
    }

    pub fn contains(&self, key: u64) -> bool {
        self.entries.contains(&key)
    }

    /// Live entry for `key`, marking it most recently used.
    pub fn lookup(&mut self, key: u64, now: Tick) -> Option<&CacheEntry> {
        if self.entries.peek(&key).is_some_and(|e| !e.is_live(now)) {
            self.entries.pop(&key);
            self.stats.expirations += 1;
        }
        self.entries.get(&key)
    }

    /// Stores `entry`, evicting the least recently used entry when full.
    /// Returns the evicted entry, if any.
    pub fn insert(&mut self, entry: CacheEntry) -> Option<CacheEntry> {
        let key = entry.key;
        match self.entries.push(key, entry) {
            Some((old, e)) if old != key => {
                self.stats.evictions += 1;
                self.evicted.push(old);
                Some(e)
            }
            _ => None,
        }
    }

    /// Drops every entry with `now > created_at + ttl`; returns their keys.
    pub fn invalidate_ttl(&mut self, now: Tick) -> Vec<u64> {
        let expired: Vec<u64> = self
            .entries
            .iter()
            .filter(|(_, e)| !e.is_live(now))
            .map(|(&k, _)| k)
            .collect();
        for k in &expired {
            self.entries.pop(k);
        }
        self.stats.expirations += expired.len() as u64;
        expired
    }

    pub fn entries(&self) -> impl Iterator<Item = &CacheEntry> {
        self.entries.iter().map(|(_, e)| e)
    }
}

/// Produces `client`'s report of `true_item`, reusing a live cached answer
/// when one exists. Only fresh perturbations are charged to the ledger.
#[allow(clippy::too_many_arguments)]
pub fn cached_report<R: Rng + ?Sized>(
    cache: &mut ClientCache,
    client_id: u64,
    report_id: u64,
    true_item: u32,
    spec: &ProtocolSpec,
    ledger: BudgetLedger,
    now: Tick,
    rng: &mut R,
) -> Result<(ClientReport, BudgetLedger)> {
    let key = true_item as u64;
    if let Some(e) = cache.lookup(key, now) {
        let payload = e.noisy_answer.clone();
        cache.stats.hits += 1;
        return Ok((ClientReport::new(client_id, report_id, payload, now), ledger));
    }
    cache.stats.misses += 1;
    let payload = spec.perturb(true_item, rng)?;
    let ledger = ledger.compose(format!("client {client_id} value {true_item}"), spec.epsilon())?;
    cache.insert(CacheEntry {
        key,
        noisy_answer: payload.clone(),
        created_at: now,
        ttl: cache.policy.ttl_default,
        trust: Trust::Authoritative,
        tier: Tier::Client,
    });
    Ok((ClientReport::new(client_id, report_id, payload, now), ledger))
}

/// Picks one entry among conflicting answers for the same key: authoritative
/// beats cached, then newest wins, then the earliest listed.
pub fn resolve_conflict(entries: &[CacheEntry]) -> Result<&CacheEntry> {
    entries
        .iter()
        .rev()
        .max_by_key(|e| (e.trust, e.created_at))
        .ok_or_else(|| Error::EmptyInput("no cache entries to resolve".into()))
}

/// Shuffler-side cache of opaque reports keyed by a client-chosen token, for
/// retransmission. Contents are never inspected.
#[derive(Debug)]
pub struct ShufflerCache {
    ttl: Tick,
    entries: LruCache<u64, (Arc<ClientReport>, Tick)>,
    stats: CacheStats,
}

impl ShufflerCache {
    pub fn new(policy: CachePolicy) -> Result<Self> {
        let cap = policy.validate()?;
        Ok(ShufflerCache {
            ttl: policy.ttl_default,
            entries: LruCache::new(cap),
            stats: CacheStats::default(),
        })
    }

    pub fn store(&mut self, token: u64, report: Arc<ClientReport>, now: Tick) {
        if let Some((old, _)) = self.entries.push(token, (report, now)) {
            if old != token {
                self.stats.evictions += 1;
            }
        }
    }

    pub fn retransmit(&mut self, token: u64, now: Tick) -> Option<Arc<ClientReport>> {
        let ttl = self.ttl;
        if self.entries.peek(&token).is_some_and(|(_, t)| now > t.saturating_add(ttl)) {
            self.entries.pop(&token);
            self.stats.expirations += 1;
        }
        match self.entries.get(&token) {
            Some((r, _)) => {
                self.stats.hits += 1;
                Some(Arc::clone(r))
            }
            None => {
                self.stats.misses += 1;
                None
            }
        }
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }
}
