//! The base sequence model contract and a deterministic lexicon-driven stand-in.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dist::{ContextVector, Distribution};
use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary, BOS, EOS, UNK};

/// One decoding step of the base model: the context vector and the next-token distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput {
    pub hidden: ContextVector,
    pub dist: Distribution,
}

/// A pretrained sequence model. Implementations must be pure functions of their inputs.
pub trait BaseModel: Send + Sync {
    /// Dimension of the context vectors returned by [`BaseModel::forward`].
    fn dim(&self) -> usize;

    fn vocab(&self) -> &Vocabulary;

    /// Runs one step given the source ids and the target prefix (without BOS).
    fn forward(&self, source: &[TokenId], prefix: &[TokenId]) -> Result<ModelOutput>;

    /// Teacher-forced encoding of `(source, target)`: one output per target token plus
    /// the final state that should predict EOS. Element `t` equals `forward(source, &target[..t])`.
    fn teacher_forced_states(
        &self,
        source: &[TokenId],
        target: &[TokenId],
    ) -> Result<Vec<ModelOutput>> {
        if target.is_empty() {
            return Err(Error::input("empty target sentence"));
        }
        (0..=target.len())
            .map(|t| self.forward(source, &target[..t]))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StubConfig {
    /// Context vector dimension.
    pub dim: usize,
    /// Uniform smoothing mass added to every non-BOS token score.
    pub epsilon: f64,
    /// Key for the embedding hash.
    pub seed: u64,
    /// L2 norm of every context vector.
    ///
    /// Unit-norm keys give distances below 2, which the neighbor-count half of the policy
    /// features then outweighs. The default puts distances in the tens, comparable to decoder
    /// states of a trained translation model, so the default temperature of 10 applies.
    pub scale: f64,
}

impl Default for StubConfig {
    fn default() -> Self {
        StubConfig {
            dim: 64,
            epsilon: 1e-2,
            seed: 0,
            scale: DEFAULT_SCALE,
        }
    }
}

pub const DEFAULT_SCALE: f64 = 40.0;

// Mixing weights for the hidden state: aligned source word, previous target word, source bag.
const ALIGNED_WEIGHT: f64 = 0.6;
const PREV_WEIGHT: f64 = 0.3;
const BAG_WEIGHT: f64 = 0.1;
// Share of lexicon mass taken from the aligned source word; the rest comes from the whole source.
const FOCUS: f64 = 0.8;

/// Word-by-word translator driven by a weighted lexicon.
///
/// Step `t` aligns monotonically with source position `t`. The next-token scores are
/// `FOCUS * lex(x_t -> w) + (1 - FOCUS) * mean_i lex(x_i -> w) + epsilon`, with EOS boosted by
/// `max(0, t - |x| + 1)` so decoding stops near the source length. Source words without
/// lexicon entries translate to themselves. The hidden state mixes hashed embeddings of the
/// aligned source word, the previous target word and the source bag, rescaled to norm `scale`, so repeating a local context reproduces the hidden state exactly.
#[derive(Clone, Debug)]
pub struct LexiconStubModel {
    vocab: Vocabulary,
    lexicon: HashMap<TokenId, Vec<(TokenId, f64)>>,
    src_embed: Vec<Vec<f64>>,
    tgt_embed: Vec<Vec<f64>>,
    config: StubConfig,
}

/// One lexicon row.
#[derive(Clone, Debug, PartialEq)]
pub struct LexiconEntry {
    pub source: String,
    pub target: String,
    pub weight: f64,
}

impl LexiconStubModel {
    /// Builds the model; lexicon surfaces missing from `vocab` are added to it.
    pub fn new(
        mut vocab: Vocabulary,
        entries: &[LexiconEntry],
        config: StubConfig,
    ) -> Result<Self> {
        if config.dim == 0 {
            return Err(Error::contract("model dimension must be positive"));
        }
        if !(config.epsilon > 0.0 && config.epsilon.is_finite()) {
            return Err(Error::contract("epsilon must be positive"));
        }
        if !(config.scale > 0.0 && config.scale.is_finite()) {
            return Err(Error::contract("context vector scale must be positive"));
        }
        let mut lexicon: HashMap<TokenId, Vec<(TokenId, f64)>> = HashMap::new();
        for e in entries {
            if !(e.weight >= 0.0 && e.weight.is_finite()) {
                return Err(Error::input(format!(
                    "lexicon weight for {} -> {} must be finite and non-negative",
                    e.source, e.target
                )));
            }
            let s = vocab.insert(&e.source);
            let t = vocab.insert(&e.target);
            lexicon.entry(s).or_default().push((t, e.weight));
        }
        for (&s, row) in &lexicon {
            if row.iter().map(|(_, w)| w).sum::<f64>() <= 0.0 {
                return Err(Error::input(format!(
                    "lexicon weights for {:?} sum to zero",
                    vocab.surface(s).unwrap_or("?")
                )));
            }
        }
        let n = vocab.len();
        let src_embed = (0..n)
            .map(|i| {
                embed(
                    vocab.surface(i as TokenId).unwrap(),
                    "src",
                    config.seed,
                    config.dim,
                )
            })
            .collect();
        let tgt_embed = (0..n)
            .map(|i| {
                embed(
                    vocab.surface(i as TokenId).unwrap(),
                    "tgt",
                    config.seed,
                    config.dim,
                )
            })
            .collect();
        Ok(LexiconStubModel {
            vocab,
            lexicon,
            src_embed,
            tgt_embed,
            config,
        })
    }

    /// Loads a `source<TAB>target<TAB>weight` lexicon, optionally on top of a vocabulary file.
    pub fn from_files(lexicon: &Path, vocab: Option<&Path>, config: StubConfig) -> Result<Self> {
        let vocab = match vocab {
            Some(p) => Vocabulary::load(p)?,
            None => Vocabulary::new(),
        };
        let entries = load_lexicon(lexicon)?;
        LexiconStubModel::new(vocab, &entries, config)
    }

    pub fn config(&self) -> &StubConfig {
        &self.config
    }

    fn check_ids(&self, ids: &[TokenId]) -> Result<()> {
        match ids.iter().find(|&&id| id as usize >= self.vocab.len()) {
            Some(id) => Err(Error::contract(format!("token id {id} outside vocabulary"))),
            None => Ok(()),
        }
    }
}

impl BaseModel for LexiconStubModel {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn forward(&self, source: &[TokenId], prefix: &[TokenId]) -> Result<ModelOutput> {
        if source.is_empty() {
            return Err(Error::input("empty source sentence"));
        }
        self.check_ids(source)?;
        self.check_ids(prefix)?;

        let step = prefix.len();
        let aligned = source.get(step).copied();
        let prev = prefix.last().copied().unwrap_or(BOS);

        let dim = self.config.dim;
        let mut hidden = vec![0.0; dim];
        let aligned_emb = match aligned {
            Some(id) => &self.src_embed[id as usize],
            None => &self.src_embed[EOS as usize],
        };
        let prev_emb = &self.tgt_embed[prev as usize];
        let bag_scale = BAG_WEIGHT / source.len() as f64;
        for i in 0..dim {
            hidden[i] = ALIGNED_WEIGHT * aligned_emb[i] + PREV_WEIGHT * prev_emb[i];
        }
        // Summed in id order so the bag term does not depend on word order.
        let mut bag = source.to_vec();
        bag.sort_unstable();
        for s in bag {
            for (h, e) in hidden.iter_mut().zip(&self.src_embed[s as usize]) {
                *h += bag_scale * e;
            }
        }
        let norm = hidden.iter().map(|x| x * x).sum::<f64>().sqrt() / self.config.scale;
        for h in &mut hidden {
            *h /= norm;
        }

        let mut scores = vec![self.config.epsilon; self.vocab.len()];
        scores[BOS as usize] = 0.0;
        let bag_share = (1.0 - FOCUS) / source.len() as f64;
        for (pos, &s) in source.iter().enumerate() {
            let share = if pos == step {
                FOCUS + bag_share
            } else {
                bag_share
            };
            self.add_translation(&mut scores, s, share);
        }
        scores[EOS as usize] += (step as f64 - source.len() as f64 + 1.0).max(0.0);

        Ok(ModelOutput {
            hidden: ContextVector(hidden),
            dist: Distribution::from_weights(scores)?,
        })
    }
}

impl LexiconStubModel {
    fn add_translation(&self, scores: &mut [f64], source: TokenId, share: f64) {
        match self.lexicon.get(&source) {
            Some(row) => {
                let total: f64 = row.iter().map(|(_, w)| w).sum();
                // Rows are normalized so every source word carries the same mass.
                let scale = share / total.max(1.0);
                for &(t, w) in row {
                    scores[t as usize] += scale * w;
                }
            }
            None => {
                let copy = if source == BOS || source == EOS {
                    UNK
                } else {
                    source
                };
                scores[copy as usize] += share;
            }
        }
    }
}

/// Parses a lexicon TSV file.
pub fn load_lexicon(path: &Path) -> Result<Vec<LexiconEntry>> {
    let text = fs::read_to_string(path).map_err(Error::at(path))?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(parse_err(format!(
                "expected 3 columns, found {}",
                cols.len()
            )));
        }
        let weight: f64 = cols[2]
            .trim()
            .parse()
            .map_err(|e| parse_err(format!("bad weight {:?}: {e}", cols[2])))?;
        entries.push(LexiconEntry {
            source: cols[0].trim().to_string(),
            target: cols[1].trim().to_string(),
            weight,
        });
    }
    Ok(entries)
}

pub fn save_lexicon(path: &Path, entries: &[LexiconEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!("{}\t{}\t{}\n", e.source, e.target, e.weight));
    }
    fs::write(path, out)?;
    Ok(())
}

fn fnv1a(bytes: &[u8], mut hash: u64) -> u64 {
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic pseudo-random embedding with components in [-1, 1].
fn embed(surface: &str, role: &str, seed: u64, dim: usize) -> Vec<f64> {
    let mut state = fnv1a(role.as_bytes(), 0xcbf2_9ce4_8422_2325 ^ seed);
    state = fnv1a(&[0], state);
    state = fnv1a(surface.as_bytes(), state);
    (0..dim)
        .map(|_| {
            let bits = splitmix64(&mut state) >> 11;
            (bits as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}
