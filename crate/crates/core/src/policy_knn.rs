//! Datastore that predicts the per-token interpolation weight from retrieval-quality features.
//!
//! Keys are built from a token retrieval result: the K neighbor distances followed by the
//! running count of distinct neighbor values, each re-weighted by a power of two. Values are
//! binary labels saying whether the token datastore beat the base model on the reference token.

use std::collections::HashSet;

use crate::dist::distance_weights;
use crate::error::{Error, Result};
use crate::index::{EntryId, NnIndex};
use crate::token_knn::TokenNeighborSet;

/// Re-weighted `[d_1..d_K ; c_1..c_K]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyFeature(pub Vec<f64>);

impl PolicyFeature {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Distance weights `[1/4, 1/8, .., 1/2^K, 1/2^K]` and their mirror image for the counts.
pub fn feature_weights(k: usize) -> (Vec<f64>, Vec<f64>) {
    let floor = k.max(2) as i32;
    let distance: Vec<f64> = (0..k)
        .map(|i| 0.5f64.powi((i as i32 + 2).min(floor)))
        .collect();
    let count = distance.iter().rev().copied().collect();
    (distance, count)
}

/// Builds the policy key from the first `k` neighbors.
///
/// Missing distance slots are padded with twice the largest observed distance; missing count
/// slots repeat the last count.
pub fn build_features(neighbors: &TokenNeighborSet, k: usize) -> Result<PolicyFeature> {
    if neighbors.is_empty() {
        return Err(Error::NoRetrievalSupport);
    }
    if k == 0 {
        return Err(Error::contract("k must be positive"));
    }
    let used = &neighbors.neighbors[..neighbors.len().min(k)];

    let mut distances: Vec<f64> = used.iter().map(|n| n.distance).collect();
    let mut seen = HashSet::new();
    let mut counts: Vec<f64> = used
        .iter()
        .map(|n| {
            seen.insert(n.value);
            seen.len() as f64
        })
        .collect();

    let pad = 2.0 * distances.iter().copied().fold(0.0, f64::max);
    let last_count = *counts.last().expect("non-empty");
    distances.resize(k, pad);
    counts.resize(k, last_count);

    let (wd, wc) = feature_weights(k);
    let mut values = Vec::with_capacity(2 * k);
    values.extend(distances.iter().zip(&wd).map(|(d, w)| d * w));
    values.extend(counts.iter().zip(&wc).map(|(c, w)| c * w));
    Ok(PolicyFeature(values))
}

/// Label for a policy entry: 1 iff the token datastore assigns the reference token strictly
/// more probability than the base model.
pub fn induce_value(p_knn_at_ref: f64, p_nmt_at_ref: f64) -> u8 {
    u8::from(p_knn_at_ref > p_nmt_at_ref)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyStore {
    index: NnIndex,
}

impl PolicyStore {
    /// A store for features built with `k` token neighbors (key dimension `2k`).
    pub fn new(k: usize) -> Self {
        PolicyStore {
            index: NnIndex::new(2 * k),
        }
    }

    pub fn from_index(index: NnIndex) -> Self {
        PolicyStore { index }
    }

    pub fn index(&self) -> &NnIndex {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn clear(&mut self) {
        self.index.clear();
    }

    pub fn add_entry(&mut self, s: &PolicyFeature, value: u8) -> Result<EntryId> {
        if value > 1 {
            return Err(Error::contract(format!(
                "policy value {value} is not binary"
            )));
        }
        self.index.add(s.as_slice(), value as u64)
    }

    /// Probability that the token datastore should be trusted: the softmax mass of retrieved
    /// entries labelled 1. Returns `fallback` when the store is empty.
    pub fn predict_lambda(
        &self,
        s: &PolicyFeature,
        k: usize,
        temperature: f64,
        fallback: f64,
    ) -> Result<f64> {
        if temperature.is_nan() || temperature <= 0.0 {
            return Err(Error::contract("temperature must be positive"));
        }
        let hits = self.index.query(s.as_slice(), k)?;
        if hits.is_empty() {
            return Ok(fallback);
        }
        // Unnormalized weights, so a store of one label gives exactly 0 or 1.
        let distances: Vec<f64> = hits.iter().map(|n| n.distance).collect();
        let weights = distance_weights(&distances, temperature);
        let total: f64 = weights.iter().sum();
        let positive: f64 = hits
            .iter()
            .zip(&weights)
            .filter(|(n, _)| n.payload == 1)
            .map(|(_, w)| w)
            .sum();
        let lambda = positive / total;
        Ok(lambda.clamp(0.0, 1.0))
    }
}
