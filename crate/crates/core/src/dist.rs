//! Probability vectors over the vocabulary and the interpolation arithmetic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// Tolerance for the sum-to-one invariant.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// A probability distribution over token ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    /// Validates that `probs` is non-negative, finite and sums to one.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::contract("distribution must be non-empty"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::contract(
                "distribution has negative or non-finite entries",
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::contract(format!("distribution sums to {sum}")));
        }
        Ok(Distribution { probs })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(mut weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::contract("weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::contract("weights sum to zero"));
        }
        for w in &mut weights {
            *w /= total;
        }
        Ok(Distribution { probs: weights })
    }

    /// All mass on `id`.
    pub fn one_hot(len: usize, id: TokenId) -> Self {
        let mut probs = vec![0.0; len];
        probs[id as usize] = 1.0;
        Distribution { probs }
    }

    pub fn uniform(len: usize) -> Self {
        Distribution {
            probs: vec![1.0 / len as f64; len],
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.probs.get(id as usize).copied().unwrap_or(0.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Highest-probability entries, descending, ties by ascending id. Zero entries are skipped.
    pub fn top(&self, n: usize) -> Vec<(TokenId, f64)> {
        let mut idx: Vec<usize> = (0..self.probs.len())
            .filter(|&i| self.probs[i] > 0.0)
            .collect();
        idx.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]).then(a.cmp(&b)));
        idx.truncate(n);
        idx.into_iter()
            .map(|i| (i as TokenId, self.probs[i]))
            .collect()
    }

    /// Crate-internal constructor for vectors already known to be normalized.
    pub(crate) fn from_normalized(probs: Vec<f64>) -> Self {
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= NORM_TOLERANCE);
        Distribution { probs }
    }
}

/// Decoder hidden state used as a retrieval key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextVector(pub Vec<f64>);

impl ContextVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `lambda * p_knn + (1 - lambda) * p_nmt`.
pub fn interpolate(
    p_knn: &Distribution,
    p_nmt: &Distribution,
    lambda: f64,
) -> Result<Distribution> {
    if p_knn.len() != p_nmt.len() {
        return Err(Error::DimensionMismatch {
            expected: p_nmt.len(),
            got: p_knn.len(),
        });
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::contract(format!("lambda {lambda} outside [0, 1]")));
    }
    let probs = p_knn
        .probs
        .iter()
        .zip(&p_nmt.probs)
        .map(|(k, n)| lambda * k + (1.0 - lambda) * n)
        .collect();
    Ok(Distribution { probs })
}

/// Greedy pick; ties go to the lowest id.
pub fn argmax_token(p: &Distribution) -> TokenId {
    let mut best = 0;
    for (i, &v) in p.probs.iter().enumerate().skip(1) {
        if v > p.probs[best] {
            best = i;
        }
    }
    best as TokenId
}

/// `exp(-(d_i - d_min) / temperature)`: softmax numerators, shifted so the largest is 1.
pub(crate) fn distance_weights(distances: &[f64], temperature: f64) -> Vec<f64> {
    let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    distances
        .iter()
        .map(|d| (-(d - min) / temperature).exp())
        .collect()
}
