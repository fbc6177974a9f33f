#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use retrans_core::model::LexiconEntry;
use retrans_core::storage::{parse_corpus, Corpus};
use retrans_core::synth::{generate, SynthConfig};
use retrans_core::*;

pub fn entry(s: &str, t: &str, w: f64) -> LexiconEntry {
    LexiconEntry {
        source: s.into(),
        target: t.into(),
        weight: w,
    }
}

/// Stub that translates "hund" as "cat".
pub fn hund_model() -> Arc<LexiconStubModel> {
    let vocab = Vocabulary::from_words(["hund", "dog", "cat"]);
    Arc::new(
        LexiconStubModel::new(vocab, &[entry("hund", "cat", 0.9)], StubConfig::default()).unwrap(),
    )
}

/// Small stub over a handful of words, with "term" mistranslated.
pub fn phrase_model() -> Arc<LexiconStubModel> {
    let vocab = Vocabulary::from_words([
        "das", "ist", "ein", "term", "the", "is", "a", "wrong", "right",
    ]);
    let lexicon = [
        entry("das", "the", 1.0),
        entry("ist", "is", 1.0),
        entry("ein", "a", 1.0),
        entry("term", "wrong", 1.0),
        entry("term", "right", 0.1),
    ];
    Arc::new(LexiconStubModel::new(vocab, &lexicon, StubConfig::default()).unwrap())
}

pub fn sentence(model: &dyn BaseModel, text: &str) -> Sentence {
    model.vocab().sentence(text).unwrap()
}

pub fn synthetic(config: &SynthConfig) -> (Arc<LexiconStubModel>, Corpus) {
    let syn = generate(config).unwrap();
    let model =
        Arc::new(LexiconStubModel::new(syn.vocab(), &syn.lexicon, StubConfig::default()).unwrap());
    let corpus =
        parse_corpus(&syn.corpus_tsv(), model.vocab(), Path::new("synthetic.tsv")).unwrap();
    (model, corpus)
}

pub fn default_synthetic() -> (Arc<LexiconStubModel>, Corpus) {
    synthetic(&SynthConfig::default())
}

/// Independent fixed-weight retrieval translator: brute-force search over a plain list,
/// direct exponentials, no shared code with the engine beyond the model itself.
pub struct KnnMtOracle {
    pub model: Arc<dyn BaseModel>,
    pub keys: Vec<(Vec<f64>, TokenId)>,
    pub k: usize,
    pub temperature: f64,
    pub lambda: f64,
}

pub struct OracleStep {
    pub p: Vec<f64>,
    pub emitted: TokenId,
}

impl KnnMtOracle {
    pub fn new(model: Arc<dyn BaseModel>, k: usize, temperature: f64, lambda: f64) -> Self {
        KnnMtOracle {
            model,
            keys: Vec::new(),
            k,
            temperature,
            lambda,
        }
    }

    fn knn(&self, q: &[f64]) -> Vec<f64> {
        let mut scored: Vec<(f64, usize)> = self
            .keys
            .iter()
            .enumerate()
            .map(|(i, (key, _))| {
                let d = key
                    .iter()
                    .zip(q)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                (d, i)
            })
            .collect();
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        scored.truncate(self.k);
        let weights: Vec<f64> = scored
            .iter()
            .map(|(d, _)| (-d / self.temperature).exp())
            .collect();
        let z: f64 = weights.iter().sum();
        let mut p = vec![0.0; self.model.vocab().len()];
        for ((_, i), w) in scored.iter().zip(&weights) {
            p[self.keys[*i].1 as usize] += w / z;
        }
        p
    }

    pub fn translate(&self, x: &[TokenId]) -> Vec<OracleStep> {
        let mut prefix = Vec::new();
        let mut steps = Vec::new();
        for _ in 0..2 * x.len() + 5 {
            let out = self.model.forward(x, &prefix).unwrap();
            let p_nmt = out.dist.as_slice().to_vec();
            let p: Vec<f64> = if self.keys.is_empty() {
                p_nmt
            } else {
                let pk = self.knn(&out.hidden.0);
                pk.iter()
                    .zip(&p_nmt)
                    .map(|(a, b)| self.lambda * a + (1.0 - self.lambda) * b)
                    .collect()
            };
            let mut best = 0;
            for (i, v) in p.iter().enumerate() {
                if *v > p[best] {
                    best = i;
                }
            }
            let emitted = best as TokenId;
            steps.push(OracleStep { p, emitted });
            if emitted == EOS {
                break;
            }
            prefix.push(emitted);
        }
        steps
    }

    pub fn adapt(&mut self, x: &[TokenId], y: &[TokenId]) {
        for t in 0..=y.len() {
            let out = self.model.forward(x, &y[..t]).unwrap();
            let value = if t < y.len() { y[t] } else { EOS };
            self.keys.push((out.hidden.0, value));
        }
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
