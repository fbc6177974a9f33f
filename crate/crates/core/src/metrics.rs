//! Corpus BLEU, TER without shifts, the occurrence-bucketed recall indicator, and the
//! interpolation-weight bucket analysis.
//!
//! All metrics work on whitespace tokens (surface strings), case-sensitively.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::session::AdaptRecord;
use crate::vocab::Sentence;

pub const MAX_ORDER: usize = 4;

/// Surface forms of a sentence.
pub fn words(s: &Sentence) -> Vec<&str> {
    s.surfaces().collect()
}

fn check_lengths(hyps: usize, refs: usize) -> Result<()> {
    if hyps != refs {
        return Err(Error::input(format!(
            "{hyps} hypotheses but {refs} references"
        )));
    }
    Ok(())
}

/// Sufficient statistics for corpus BLEU.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    pub fn sentence<H: AsRef<str>, R: AsRef<str>>(hyp: &[H], reference: &[R]) -> Self {
        let hyp: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
        let reference: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
        let mut stats = BleuStats {
            hyp_len: hyp.len() as u64,
            ref_len: reference.len() as u64,
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            let ref_counts = ngram_counts(&reference, n);
            let hyp_counts = ngram_counts(&hyp, n);
            stats.matches[n - 1] = hyp_counts
                .iter()
                .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum();
            stats.totals[n - 1] = hyp.len().saturating_sub(n - 1) as u64;
        }
        stats
    }

    pub fn add(&mut self, other: &BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// Clipped precision of order `n` (1-based).
    pub fn precision(&self, n: usize) -> f64 {
        let total = self.totals[n - 1];
        if total == 0 {
            0.0
        } else {
            self.matches[n - 1] as f64 / total as f64
        }
    }

    /// BLEU-4 in [0, 100], no smoothing.
    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 1..=MAX_ORDER {
            let p = self.precision(n);
            if p == 0.0 {
                return 0.0;
            }
            log_sum += p.ln();
        }
        let c = self.hyp_len as f64;
        let r = self.ref_len as f64;
        let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
        100.0 * bp * (log_sum / MAX_ORDER as f64).exp()
    }
}

fn ngram_counts<'a, 'b>(tokens: &'b [&'a str], n: usize) -> HashMap<&'b [&'a str], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

pub fn bleu_stats<H: AsRef<str>, R: AsRef<str>>(
    hyps: &[Vec<H>],
    refs: &[Vec<R>],
) -> Result<BleuStats> {
    check_lengths(hyps.len(), refs.len())?;
    let mut total = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total.add(&BleuStats::sentence(h, r));
    }
    Ok(total)
}

pub fn corpus_bleu<H: AsRef<str>, R: AsRef<str>>(hyps: &[Vec<H>], refs: &[Vec<R>]) -> Result<f64> {
    Ok(bleu_stats(hyps, refs)?.score())
}

/// Word-level Levenshtein distance with unit costs.
pub fn edit_distance<A: AsRef<str>, B: AsRef<str>>(a: &[A], b: &[B]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x.as_ref() != y.as_ref());
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Total edits and total reference length, for aggregation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerStats {
    pub edits: u64,
    pub ref_len: u64,
}

impl TerStats {
    pub fn add(&mut self, other: &TerStats) {
        self.edits += other.edits;
        self.ref_len += other.ref_len;
    }

    pub fn score(&self) -> Result<f64> {
        if self.ref_len == 0 {
            return Err(Error::input("references contain no tokens"));
        }
        Ok(self.edits as f64 / self.ref_len as f64)
    }
}

pub fn ter_stats<H: AsRef<str>, R: AsRef<str>>(
    hyps: &[Vec<H>],
    refs: &[Vec<R>],
) -> Result<TerStats> {
    check_lengths(hyps.len(), refs.len())?;
    let mut stats = TerStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        stats.edits += edit_distance(h, r) as u64;
        stats.ref_len += r.len() as u64;
    }
    Ok(stats)
}

/// Translation edit rate without phrase shifts: total word edits over total reference length.
pub fn ter_noshift<H: AsRef<str>, R: AsRef<str>>(hyps: &[Vec<H>], refs: &[Vec<R>]) -> Result<f64> {
    ter_stats(hyps, refs)?.score()
}

/// Hit and event counts for one occurrence index.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecallCount {
    pub numerator: u64,
    pub denominator: u64,
}

impl RecallCount {
    pub fn recall(&self) -> Option<f64> {
        (self.denominator > 0).then(|| self.numerator as f64 / self.denominator as f64)
    }
}

/// An inclusive range of previous-occurrence counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccurrenceBucket {
    pub label: String,
    pub min: usize,
    /// `None` means unbounded.
    pub max: Option<usize>,
}

impl OccurrenceBucket {
    pub fn new(label: &str, min: usize, max: Option<usize>) -> Self {
        OccurrenceBucket {
            label: label.to_string(),
            min,
            max,
        }
    }

    fn contains(&self, i: usize) -> bool {
        i >= self.min && self.max.is_none_or(|m| i <= m)
    }
}

/// `R_0`, `R_1`, `R_{2~5}` (2..=5), `R_{5~9}` (6..=9) and `R_{9+}` (10 and up).
///
/// The last two labels overlap in their names only; the ranges partition the counts.
pub fn default_occurrence_buckets() -> Vec<OccurrenceBucket> {
    vec![
        OccurrenceBucket::new("R_0", 0, Some(0)),
        OccurrenceBucket::new("R_1", 1, Some(1)),
        OccurrenceBucket::new("R_2~5", 2, Some(5)),
        OccurrenceBucket::new("R_5~9", 6, Some(9)),
        OccurrenceBucket::new("R_9+", 10, None),
    ]
}

/// Per occurrence index `i`: how many reference words were at their `(i+1)`-th occurrence
/// and how many of those the hypothesis contained.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RIndicatorCounts {
    pub by_occurrence: BTreeMap<usize, RecallCount>,
}

impl RIndicatorCounts {
    /// Counts one document. Occurrences are counted over references in document order, one per
    /// sentence containing the word, independently of the hypotheses.
    pub fn document<H: AsRef<str>, R: AsRef<str>>(
        hyps: &[Vec<H>],
        refs: &[Vec<R>],
    ) -> Result<Self> {
        check_lengths(hyps.len(), refs.len())?;
        let mut seen: HashMap<&str, usize> = HashMap::new();
        let mut counts = RIndicatorCounts::default();
        for (h, r) in hyps.iter().zip(refs) {
            let hyp_words: HashSet<&str> = h.iter().map(AsRef::as_ref).collect();
            let mut ref_words: Vec<&str> = r.iter().map(AsRef::as_ref).collect();
            ref_words.sort_unstable();
            ref_words.dedup();
            for w in ref_words {
                let occ = seen.entry(w).or_insert(0);
                let slot = counts.by_occurrence.entry(*occ).or_default();
                slot.denominator += 1;
                if hyp_words.contains(w) {
                    slot.numerator += 1;
                }
                *occ += 1;
            }
        }
        Ok(counts)
    }

    pub fn merge(&mut self, other: &RIndicatorCounts) {
        for (&i, c) in &other.by_occurrence {
            let slot = self.by_occurrence.entry(i).or_default();
            slot.numerator += c.numerator;
            slot.denominator += c.denominator;
        }
    }

    pub fn report(&self, buckets: &[OccurrenceBucket]) -> RIndicatorReport {
        let buckets = buckets
            .iter()
            .map(|b| {
                let mut count = RecallCount::default();
                for (_, c) in self.by_occurrence.iter().filter(|(i, _)| b.contains(**i)) {
                    count.numerator += c.numerator;
                    count.denominator += c.denominator;
                }
                RBucket {
                    label: b.label.clone(),
                    min: b.min,
                    max: b.max,
                    numerator: count.numerator,
                    denominator: count.denominator,
                    recall: count.recall(),
                }
            })
            .collect();
        RIndicatorReport {
            buckets,
            by_occurrence: self.by_occurrence.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RBucket {
    pub label: String,
    pub min: usize,
    pub max: Option<usize>,
    pub numerator: u64,
    pub denominator: u64,
    /// `None` when the bucket saw no events.
    pub recall: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RIndicatorReport {
    pub buckets: Vec<RBucket>,
    pub by_occurrence: BTreeMap<usize, RecallCount>,
}

impl RIndicatorReport {
    pub fn recall(&self, label: &str) -> Option<f64> {
        self.buckets
            .iter()
            .find(|b| b.label == label)
            .and_then(|b| b.recall)
    }
}

/// Micro-averaged recall of reference words bucketed by how often they occurred in earlier
/// references of the same document. Hits are reference words present in the hypothesis.
pub fn r_indicator<H: AsRef<str>, R: AsRef<str>>(
    hyps: &[Vec<H>],
    refs: &[Vec<R>],
    buckets: &[OccurrenceBucket],
) -> Result<RIndicatorReport> {
    Ok(RIndicatorCounts::document(hyps, refs)?.report(buckets))
}

/// Bucket edges for the reference-token probability of the token datastore.
pub const LAMBDA_BUCKET_EDGES: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaBucket {
    pub lower: f64,
    pub upper: f64,
    pub count: u64,
    /// `None` for empty buckets.
    pub mean_lambda: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaBucketReport {
    pub buckets: Vec<LambdaBucket>,
}

/// Mean predicted weight per range of the token datastore's probability for the reference
/// token: `[0, .2), [.2, .4), [.4, .6), [.6, .8), [.8, 1]`.
pub fn lambda_buckets(log: &[AdaptRecord]) -> LambdaBucketReport {
    let mut sums = [0.0f64; 5];
    let mut counts = [0u64; 5];
    for r in log {
        let b = LAMBDA_BUCKET_EDGES[1..5]
            .iter()
            .filter(|&&edge| r.p_knn_ref >= edge)
            .count();
        sums[b] += r.predicted_lambda;
        counts[b] += 1;
    }
    LambdaBucketReport {
        buckets: (0..5)
            .map(|b| LambdaBucket {
                lower: LAMBDA_BUCKET_EDGES[b],
                upper: LAMBDA_BUCKET_EDGES[b + 1],
                count: counts[b],
                mean_lambda: (counts[b] > 0).then(|| sums[b] / counts[b] as f64),
            })
            .collect(),
    }
}
