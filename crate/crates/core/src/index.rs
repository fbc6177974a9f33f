//! Exact, incremental k-nearest-neighbor search under Euclidean distance.
//!
//! Entries are stored in one flat buffer and scanned linearly. Results are sorted by
//! ascending distance with ties broken by ascending insertion order, so equal contents
//! and equal queries always give equal answers.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Position of an entry inside an index.
pub type EntryId = usize;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub entry: EntryId,
    pub payload: u64,
    pub insertion_order: u64,
    /// True Euclidean distance to the query.
    pub distance: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NnIndex {
    dim: usize,
    keys: Vec<f64>,
    payloads: Vec<u64>,
    orders: Vec<u64>,
    next_order: u64,
}

#[derive(PartialEq)]
struct Candidate {
    dist2: f64,
    order: u64,
    entry: EntryId,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.order.cmp(&other.order))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl NnIndex {
    pub fn new(dim: usize) -> Self {
        NnIndex {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.payloads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payloads.is_empty()
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::contract("vector has non-finite components"));
        }
        Ok(())
    }

    /// Appends an entry; it is visible to the next query.
    pub fn add(&mut self, key: &[f64], payload: u64) -> Result<EntryId> {
        let order = self.next_order;
        self.insert_with_order(key, payload, order)
    }

    /// Appends an entry with an explicit insertion order, which must exceed every existing one.
    pub fn insert_with_order(&mut self, key: &[f64], payload: u64, order: u64) -> Result<EntryId> {
        self.check(key)?;
        if order < self.next_order {
            return Err(Error::contract(format!(
                "insertion order {order} not above {}",
                self.next_order
            )));
        }
        self.keys.extend_from_slice(key);
        self.payloads.push(payload);
        self.orders.push(order);
        self.next_order = order + 1;
        Ok(self.payloads.len() - 1)
    }

    pub fn key(&self, entry: EntryId) -> &[f64] {
        &self.keys[entry * self.dim..(entry + 1) * self.dim]
    }

    pub fn payload(&self, entry: EntryId) -> u64 {
        self.payloads[entry]
    }

    pub fn insertion_order(&self, entry: EntryId) -> u64 {
        self.orders[entry]
    }

    /// Iterates `(key, payload, insertion_order)` in storage order.
    pub fn entries(&self) -> impl Iterator<Item = (&[f64], u64, u64)> + '_ {
        (0..self.len()).map(move |i| (self.key(i), self.payloads[i], self.orders[i]))
    }

    pub fn clear(&mut self) {
        self.keys.clear();
        self.payloads.clear();
        self.orders.clear();
        self.next_order = 0;
    }

    /// The `min(k, len)` nearest entries to `query`.
    pub fn query(&self, query: &[f64], k: usize) -> Result<Vec<Neighbor>> {
        self.check(query)?;
        if k == 0 {
            return Err(Error::contract("k must be positive"));
        }
        let k = k.min(self.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        for (entry, key) in self.keys.chunks_exact(self.dim).enumerate() {
            let dist2 = squared_distance(query, key);
            let cand = Candidate {
                dist2,
                order: self.orders[entry],
                entry,
            };
            if heap.len() < k {
                heap.push(cand);
            } else if cand < *heap.peek().expect("heap holds k items") {
                heap.pop();
                heap.push(cand);
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| Neighbor {
                entry: c.entry,
                payload: self.payloads[c.entry],
                insertion_order: c.order,
                distance: c.dist2.sqrt(),
            })
            .collect())
    }
}

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
