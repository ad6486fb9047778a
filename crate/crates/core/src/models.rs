//! Oracle and proxy embedding models with per-call accounting.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{perturb, DataObject};
use crate::error::{Error, Result};

/// Id used for query targets that are not members of the dataset.
pub const EXTERNAL_ID: usize = usize::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Oracle,
    Proxy,
}

impl ModelRole {
    pub fn name(self) -> &'static str {
        match self {
            ModelRole::Oracle => "oracle",
            ModelRole::Proxy => "proxy",
        }
    }
}

/// Where a model's vectors come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingSource {
    /// The embedding stored on the object for this model's role.
    Stored,
    /// The object's raw feature vector.
    Features,
    /// The stored oracle embedding (features when absent) plus per-object
    /// Gaussian noise of scale `noise_sigma`, seeded by `(seed, id)`.
    Simulated { noise_sigma: f64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub role: ModelRole,
    pub source: EmbeddingSource,
    pub cost_weight: f64,
}

impl EmbeddingModel {
    pub fn oracle() -> Self {
        EmbeddingModel {
            role: ModelRole::Oracle,
            source: EmbeddingSource::Stored,
            cost_weight: 2.0,
        }
    }

    pub fn proxy() -> Self {
        EmbeddingModel {
            role: ModelRole::Proxy,
            source: EmbeddingSource::Stored,
            cost_weight: 1.0,
        }
    }

    pub fn with_source(mut self, source: EmbeddingSource) -> Self {
        self.source = source;
        self
    }

    /// Computes the embedding without any accounting.
    pub fn compute(&self, obj: &DataObject) -> Result<Vec<f64>> {
        match &self.source {
            EmbeddingSource::Stored => {
                let stored = match self.role {
                    ModelRole::Oracle => obj.oracle_embedding.as_ref(),
                    ModelRole::Proxy => obj.proxy_embedding.as_ref(),
                };
                stored.cloned().ok_or(Error::MissingEmbedding {
                    id: obj.id,
                    role: self.role.name(),
                })
            }
            EmbeddingSource::Features => Ok(obj.features.clone()),
            EmbeddingSource::Simulated { noise_sigma, seed } => {
                let base = obj.oracle_embedding.as_deref().unwrap_or(&obj.features);
                Ok(perturb(base, *noise_sigma, *seed, obj.id))
            }
        }
    }
}

/// Oracle and proxy call counters. Counters only ever increase.
#[derive(Debug, Default)]
pub struct CallLedger {
    oracle: AtomicU64,
    proxy: AtomicU64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerCounts {
    pub oracle_calls: u64,
    pub proxy_calls: u64,
}

impl CallLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn charge(&self, role: ModelRole) {
        match role {
            ModelRole::Oracle => self.oracle.fetch_add(1, Ordering::Relaxed),
            ModelRole::Proxy => self.proxy.fetch_add(1, Ordering::Relaxed),
        };
    }

    pub fn oracle_calls(&self) -> u64 {
        self.oracle.load(Ordering::Relaxed)
    }

    pub fn proxy_calls(&self) -> u64 {
        self.proxy.load(Ordering::Relaxed)
    }

    pub fn counts(&self) -> LedgerCounts {
        LedgerCounts {
            oracle_calls: self.oracle_calls(),
            proxy_calls: self.proxy_calls(),
        }
    }
}

/// A per-run embedding cache. Each `(role, object)` pair is computed and
/// charged at most once.
#[derive(Debug, Default)]
pub struct EmbeddingSession {
    ledger: CallLedger,
    memo: HashMap<(ModelRole, usize), Arc<[f64]>>,
}

impl EmbeddingSession {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn embed(&mut self, model: &EmbeddingModel, obj: &DataObject) -> Result<Arc<[f64]>> {
        let key = (model.role, obj.id);
        if let Some(v) = self.memo.get(&key) {
            return Ok(Arc::clone(v));
        }
        let v: Arc<[f64]> = model.compute(obj)?.into();
        self.ledger.charge(model.role);
        self.memo.insert(key, Arc::clone(&v));
        Ok(v)
    }

    pub fn ledger(&self) -> &CallLedger {
        &self.ledger
    }

    pub fn counts(&self) -> LedgerCounts {
        self.ledger.counts()
    }
}

/// Brute-force embedding cost over SPRinT's cost under an oracle/proxy cost
/// ratio: `ratio·brute / (ratio·oracle + proxy)`.
pub fn speedup(brute_oracle_calls: u64, sprint_oracle_calls: u64, sprint_proxy_calls: u64, cost_ratio: f64) -> f64 {
    let brute = cost_ratio * brute_oracle_calls as f64;
    let ours = cost_ratio * sprint_oracle_calls as f64 + sprint_proxy_calls as f64;
    brute / ours
}
