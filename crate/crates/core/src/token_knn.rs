//! Datastore of (context vector, target token) pairs built from corrected sentences.

use crate::dist::{distance_weights, ContextVector, Distribution};
use crate::error::{Error, Result};
use crate::index::{EntryId, NnIndex};
use crate::model::ModelOutput;
use crate::vocab::{TokenId, EOS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TokenNeighbor {
    pub entry: EntryId,
    pub value: TokenId,
    pub distance: f64,
}

/// Retrieval result for one query, ascending by distance.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenNeighborSet {
    pub neighbors: Vec<TokenNeighbor>,
    pub query: ContextVector,
}

impl TokenNeighborSet {
    pub fn from_pairs(query: ContextVector, pairs: &[(TokenId, f64)]) -> Self {
        TokenNeighborSet {
            neighbors: pairs
                .iter()
                .enumerate()
                .map(|(entry, &(value, distance))| TokenNeighbor {
                    entry,
                    value,
                    distance,
                })
                .collect(),
            query,
        }
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.neighbors.iter().map(|n| n.distance).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenStore {
    index: NnIndex,
}

impl TokenStore {
    pub fn new(dim: usize) -> Self {
        TokenStore {
            index: NnIndex::new(dim),
        }
    }

    pub fn from_index(index: NnIndex) -> Self {
        TokenStore { index }
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

    pub fn add(&mut self, key: &ContextVector, value: TokenId) -> Result<EntryId> {
        self.index.add(key.as_slice(), value as u64)
    }

    pub fn retrieve(&self, h: &ContextVector, k: usize) -> Result<TokenNeighborSet> {
        let neighbors = self
            .index
            .query(h.as_slice(), k)?
            .into_iter()
            .map(|n| TokenNeighbor {
                entry: n.entry,
                value: n.payload as TokenId,
                distance: n.distance,
            })
            .collect();
        Ok(TokenNeighborSet {
            neighbors,
            query: h.clone(),
        })
    }

    /// Stores `(h_t, y_t)` for every target position plus `(h_final, EOS)`.
    pub fn add_sentence(&mut self, target: &[TokenId], states: &[ModelOutput]) -> Result<usize> {
        if states.len() != target.len() + 1 {
            return Err(Error::contract(format!(
                "{} states for a {}-token sentence",
                states.len(),
                target.len()
            )));
        }
        for (state, &value) in states.iter().zip(target.iter().chain([EOS].iter())) {
            self.add(&state.hidden, value)?;
        }
        Ok(states.len())
    }
}

/// Converts neighbors into a distribution: softmax over `-d_i / temperature`, summed per value.
pub fn p_knn(
    neighbors: &TokenNeighborSet,
    temperature: f64,
    vocab_size: usize,
) -> Result<Distribution> {
    if neighbors.is_empty() {
        return Err(Error::NoRetrievalSupport);
    }
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::contract("temperature must be positive"));
    }
    // Per-value sums of unnormalized weights, divided once, so no entry can round above 1.
    let weights = distance_weights(&neighbors.distances(), temperature);
    let total: f64 = weights.iter().sum();
    let mut probs = vec![0.0; vocab_size];
    for (n, w) in neighbors.neighbors.iter().zip(weights) {
        let slot = probs.get_mut(n.value as usize).ok_or_else(|| {
            Error::contract(format!("neighbor value {} outside vocabulary", n.value))
        })?;
        *slot += w;
    }
    for p in &mut probs {
        *p = (*p / total).min(1.0);
    }
    Ok(Distribution::from_normalized(probs))
}
