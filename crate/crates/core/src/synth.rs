//! Generator for the synthetic repeat-term corpus.
//!
//! Sentences are word-for-word translations over a small vocabulary. A handful of source
//! terms are mistranslated by the generated lexicon (it prefers a decoy target word) while
//! the references always use the correct translation, and every term recurs many times in
//! each document. A base model built from the lexicon therefore repeats the same mistakes
//! and the references act as consistent human corrections.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{save_lexicon, LexiconEntry};
use crate::vocab::Vocabulary;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub documents: usize,
    pub sentences_per_document: usize,
    /// Source words the lexicon translates correctly.
    pub regular_words: usize,
    /// Source words the lexicon mistranslates.
    pub terms: usize,
    pub terms_per_sentence: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Lexicon weight of the correct translation of a term (the decoy has weight 1).
    pub term_hint_weight: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 13,
            documents: 4,
            sentences_per_document: 60,
            regular_words: 25,
            terms: 10,
            terms_per_sentence: 2,
            min_len: 5,
            max_len: 8,
            term_hint_weight: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    /// `(doc_id, source, reference)` rows in file order.
    pub rows: Vec<(String, String, String)>,
    pub lexicon: Vec<LexiconEntry>,
    pub vocabulary: Vec<String>,
    /// `(source term, correct translation, decoy)`.
    pub terms: Vec<(String, String, String)>,
}

fn src_word(i: usize) -> String {
    format!("sa{i:02}")
}
fn tgt_word(i: usize) -> String {
    format!("ta{i:02}")
}
fn src_term(i: usize) -> String {
    format!("sk{i:02}")
}
fn tgt_term(i: usize) -> String {
    format!("tk{i:02}")
}
fn decoy(i: usize) -> String {
    format!("td{i:02}")
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.documents == 0 || self.sentences_per_document == 0 {
            return Err(Error::input(
                "corpus needs at least one document and sentence",
            ));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::input(
                "sentence lengths must satisfy 0 < min_len <= max_len",
            ));
        }
        if self.terms_per_sentence > self.min_len {
            return Err(Error::input("terms_per_sentence exceeds min_len"));
        }
        if self.terms_per_sentence > 0 && self.terms == 0 {
            return Err(Error::input(
                "terms_per_sentence > 0 needs at least one term",
            ));
        }
        if self.regular_words == 0 && self.terms_per_sentence < self.max_len {
            return Err(Error::input("need regular words to fill sentences"));
        }
        Ok(())
    }
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut lexicon = Vec::new();
    let mut vocabulary = Vec::new();
    for i in 0..config.regular_words {
        lexicon.push(LexiconEntry {
            source: src_word(i),
            target: tgt_word(i),
            weight: 1.0,
        });
        vocabulary.extend([src_word(i), tgt_word(i)]);
    }
    let mut terms = Vec::new();
    for i in 0..config.terms {
        lexicon.push(LexiconEntry {
            source: src_term(i),
            target: decoy(i),
            weight: 1.0,
        });
        if config.term_hint_weight > 0.0 {
            lexicon.push(LexiconEntry {
                source: src_term(i),
                target: tgt_term(i),
                weight: config.term_hint_weight,
            });
        }
        vocabulary.extend([src_term(i), tgt_term(i), decoy(i)]);
        terms.push((src_term(i), tgt_term(i), decoy(i)));
    }

    let mut rows = Vec::new();
    for d in 0..config.documents {
        let doc_id = format!("doc{:03}", d + 1);
        // Cycle through shuffled terms so each recurs evenly within the document.
        let mut term_queue: Vec<usize> = Vec::new();
        for _ in 0..config.sentences_per_document {
            let len = rng.gen_range(config.min_len..=config.max_len);
            let mut src: Vec<String> = Vec::with_capacity(len);
            let mut tgt: Vec<String> = Vec::with_capacity(len);
            let mut slots: Vec<usize> = (0..len).collect();
            slots.shuffle(&mut rng);
            let term_slots = &slots[..config.terms_per_sentence];
            for pos in 0..len {
                if term_slots.contains(&pos) {
                    if term_queue.is_empty() {
                        term_queue = (0..config.terms).collect();
                        term_queue.shuffle(&mut rng);
                    }
                    let t = term_queue.pop().expect("refilled");
                    src.push(src_term(t));
                    tgt.push(tgt_term(t));
                } else {
                    let w = rng.gen_range(0..config.regular_words);
                    src.push(src_word(w));
                    tgt.push(tgt_word(w));
                }
            }
            rows.push((doc_id.clone(), src.join(" "), tgt.join(" ")));
        }
    }

    Ok(SynthCorpus {
        rows,
        lexicon,
        vocabulary,
        terms,
    })
}

impl SynthCorpus {
    pub fn corpus_tsv(&self) -> String {
        let mut out = String::new();
        for (d, s, r) in &self.rows {
            out.push_str(&format!("{d}\t{s}\t{r}\n"));
        }
        out
    }

    pub fn vocab(&self) -> Vocabulary {
        Vocabulary::from_words(&self.vocabulary)
    }

    /// Writes `corpus.tsv`, `lexicon.tsv` and `vocab.txt` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("corpus.tsv"), self.corpus_tsv())?;
        save_lexicon(&dir.join("lexicon.tsv"), &self.lexicon)?;
        self.vocab().save(&dir.join("vocab.txt"))?;
        Ok(())
    }
}
