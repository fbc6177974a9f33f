//! The online loop: greedy decoding under the interpolated distribution, and adaptation
//! from corrected sentences into both datastores.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dist::{argmax_token, interpolate, Distribution};
use crate::error::{Error, Result};
use crate::model::{BaseModel, ModelOutput};
use crate::policy_knn::{build_features, induce_value, PolicyFeature, PolicyStore};
use crate::token_knn::{p_knn, TokenNeighborSet, TokenStore};
use crate::vocab::{Sentence, Token, TokenId, EOS};

/// How the interpolation weight is chosen at each step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    /// Per-token weight predicted by the policy datastore.
    Adaptive,
    /// Fixed weight for every step.
    Constant(f64),
    /// Base model only; datastores are never written.
    BaseOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub mode: PolicyMode,
    /// Neighbors retrieved from the token datastore (and feature length / 2).
    pub k: usize,
    /// Neighbors retrieved from the policy datastore.
    pub policy_k: usize,
    /// Softmax temperature for token retrieval.
    pub temperature: f64,
    /// Softmax temperature for policy retrieval; defaults to `temperature`.
    pub policy_temperature: Option<f64>,
    /// Weight used while the policy datastore is empty.
    pub fallback_lambda: f64,
    /// Label the first correction against its own entries so one correction can already be
    /// trusted on an exact repeat. See [`Session::adapt`].
    pub cold_start_bootstrap: bool,
    /// Candidates kept per step in diagnostics (capped at `k`).
    pub top_n: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            mode: PolicyMode::Adaptive,
            k: 8,
            policy_k: 8,
            temperature: 10.0,
            policy_temperature: None,
            fallback_lambda: 0.0,
            cold_start_bootstrap: true,
            top_n: 5,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if let PolicyMode::Constant(l) = self.mode {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::input(format!("lambda {l} outside [0, 1]")));
            }
        }
        if self.k == 0 || self.policy_k == 0 {
            return Err(Error::input("k must be at least 1"));
        }
        if !(self.temperature > 0.0 && self.policy_temperature() > 0.0) {
            return Err(Error::input("temperatures must be positive"));
        }
        if !(0.0..=1.0).contains(&self.fallback_lambda) {
            return Err(Error::input("fallback lambda outside [0, 1]"));
        }
        Ok(())
    }

    pub fn policy_temperature(&self) -> f64 {
        self.policy_temperature.unwrap_or(self.temperature)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: TokenId,
    pub token: String,
    pub prob: f64,
}

/// What the decoder saw when it emitted one token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenDiagnostics {
    pub token: Token,
    pub lambda: f64,
    pub p_nmt_top: Vec<Candidate>,
    pub p_knn_top: Vec<Candidate>,
    pub neighbor_distances: Vec<f64>,
}

/// Full distributions of one decoding step, EOS step included.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    pub p_nmt: Distribution,
    pub p_knn: Option<Distribution>,
    pub lambda: f64,
    pub p: Distribution,
    pub emitted: TokenId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Translation {
    pub hypothesis: Sentence,
    pub diagnostics: Vec<TokenDiagnostics>,
    /// Filled only by [`Session::translate_traced`].
    pub steps: Vec<StepTrace>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptReport {
    pub token_entries_added: usize,
    pub policy_entries_added: usize,
}

/// One reference position seen during adaptation with retrieval support.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptRecord {
    pub reference: TokenId,
    pub p_knn_ref: f64,
    pub p_nmt_ref: f64,
    pub induced: u8,
    pub predicted_lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DocumentResult {
    pub hypotheses: Vec<Sentence>,
    pub diagnostics: Vec<Vec<TokenDiagnostics>>,
    /// Wall-clock time of each `translate` call.
    pub latencies: Vec<Duration>,
}

/// Decoding guard: `2 |x| + 5` tokens.
pub fn max_decode_len(source_len: usize) -> usize {
    2 * source_len + 5
}

pub struct Session {
    model: Arc<dyn BaseModel>,
    tokens: TokenStore,
    policy: PolicyStore,
    config: SessionConfig,
    log: Vec<AdaptRecord>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("tokens", &self.tokens.len())
            .field("policy", &self.policy.len())
            .field("config", &self.config)
            .finish()
    }
}

impl Session {
    pub fn new(model: Arc<dyn BaseModel>, config: SessionConfig) -> Result<Self> {
        config.validate()?;
        let tokens = TokenStore::new(model.dim());
        let policy = PolicyStore::new(config.k);
        Ok(Session {
            model,
            tokens,
            policy,
            config,
            log: Vec::new(),
        })
    }

    /// Starts from previously saved datastores.
    pub fn with_stores(
        model: Arc<dyn BaseModel>,
        config: SessionConfig,
        tokens: TokenStore,
        policy: PolicyStore,
    ) -> Result<Self> {
        if tokens.index().dim() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                got: tokens.index().dim(),
            });
        }
        if policy.index().dim() != 2 * config.k {
            return Err(Error::DimensionMismatch {
                expected: 2 * config.k,
                got: policy.index().dim(),
            });
        }
        let mut s = Session::new(model, config)?;
        s.tokens = tokens;
        s.policy = policy;
        Ok(s)
    }

    pub fn model(&self) -> &Arc<dyn BaseModel> {
        &self.model
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn token_store(&self) -> &TokenStore {
        &self.tokens
    }

    pub fn policy_store(&self) -> &PolicyStore {
        &self.policy
    }

    pub fn adaptation_log(&self) -> &[AdaptRecord] {
        &self.log
    }

    /// Empties both datastores; the adaptation log is kept.
    pub fn clear_datastores(&mut self) {
        self.tokens.clear();
        self.policy.clear();
    }

    pub fn translate(&self, source: &Sentence) -> Result<Translation> {
        self.decode(source, false)
    }

    /// Like [`Session::translate`] but also returns every step's full distributions.
    pub fn translate_traced(&self, source: &Sentence) -> Result<Translation> {
        self.decode(source, true)
    }

    fn lambda_for(&self, neighbors: &TokenNeighborSet) -> Result<f64> {
        match self.config.mode {
            PolicyMode::Constant(l) => Ok(l),
            PolicyMode::BaseOnly => Ok(0.0),
            PolicyMode::Adaptive => {
                let s = build_features(neighbors, self.config.k)?;
                self.predict(&s)
            }
        }
    }

    fn predict(&self, s: &PolicyFeature) -> Result<f64> {
        self.policy.predict_lambda(
            s,
            self.config.policy_k,
            self.config.policy_temperature(),
            self.config.fallback_lambda,
        )
    }

    fn decode(&self, source: &Sentence, trace: bool) -> Result<Translation> {
        if source.is_empty() {
            return Err(Error::input("empty source sentence"));
        }
        let x = source.ids();
        let vocab = self.model.vocab();
        let top_n = self.config.top_n.min(self.config.k);
        let use_knn = self.config.mode != PolicyMode::BaseOnly && !self.tokens.is_empty();

        let mut prefix: Vec<TokenId> = Vec::new();
        let mut diagnostics = Vec::new();
        let mut steps = Vec::new();
        let candidates = |d: &Distribution| -> Vec<Candidate> {
            d.top(top_n)
                .into_iter()
                .map(|(id, prob)| Candidate {
                    id,
                    token: vocab.token(id).surface,
                    prob,
                })
                .collect()
        };

        for _ in 0..max_decode_len(x.len()) {
            let out = self.model.forward(&x, &prefix)?;
            let (p, p_knn_dist, lambda, distances) = if use_knn {
                let neighbors = self.tokens.retrieve(&out.hidden, self.config.k)?;
                let pk = p_knn(&neighbors, self.config.temperature, out.dist.len())?;
                let lambda = self.lambda_for(&neighbors)?;
                let p = interpolate(&pk, &out.dist, lambda)?;
                (p, Some(pk), lambda, neighbors.distances())
            } else {
                (out.dist.clone(), None, 0.0, Vec::new())
            };
            let next = argmax_token(&p);
            if next != EOS {
                diagnostics.push(TokenDiagnostics {
                    token: vocab.token(next),
                    lambda,
                    p_nmt_top: candidates(&out.dist),
                    p_knn_top: p_knn_dist.as_ref().map(&candidates).unwrap_or_default(),
                    neighbor_distances: distances,
                });
            }
            if trace {
                steps.push(StepTrace {
                    p_nmt: out.dist,
                    p_knn: p_knn_dist,
                    lambda,
                    p,
                    emitted: next,
                });
            }
            if next == EOS {
                break;
            }
            prefix.push(next);
        }

        Ok(Translation {
            hypothesis: vocab.sentence_from_ids(&prefix),
            diagnostics,
            steps,
        })
    }

    /// Learns from a corrected translation.
    ///
    /// Every reference position (EOS included) is retrieved against the token datastore as
    /// it was before this call. In adaptive mode each supported position yields a policy
    /// entry labelled by comparing `p_knn` and `p_nmt` on the reference token. All policy
    /// entries are inserted first, then the token entries.
    ///
    /// When the token datastore starts empty and `cold_start_bootstrap` is set, the labels
    /// come from the sentence's own entries instead: once with the position's own entry
    /// (an exact repeat) and once without it (a novel context). Without this the policy
    /// store would stay empty after the first correction.
    pub fn adapt(&mut self, source: &Sentence, corrected: &Sentence) -> Result<AdaptReport> {
        if source.is_empty() || corrected.is_empty() {
            return Err(Error::input("empty sentence"));
        }
        if self.config.mode == PolicyMode::BaseOnly {
            return Ok(AdaptReport::default());
        }
        let x = source.ids();
        let y = corrected.ids();
        let states = self.model.teacher_forced_states(&x, &y)?;
        let references: Vec<TokenId> = y.iter().copied().chain([EOS]).collect();
        let adaptive = self.config.mode == PolicyMode::Adaptive;

        let mut staged: Vec<(PolicyFeature, u8)> = Vec::new();
        if self.tokens.is_empty() {
            if adaptive && self.config.cold_start_bootstrap {
                staged = self.bootstrap_labels(&y, &states, &references)?;
            }
        } else {
            for (state, &reference) in states.iter().zip(&references) {
                let neighbors = self.tokens.retrieve(&state.hidden, self.config.k)?;
                let pk = p_knn(&neighbors, self.config.temperature, state.dist.len())?;
                let p_knn_ref = pk.prob(reference);
                let p_nmt_ref = state.dist.prob(reference);
                let induced = induce_value(p_knn_ref, p_nmt_ref);
                let predicted_lambda = match self.config.mode {
                    PolicyMode::Adaptive => {
                        let s = build_features(&neighbors, self.config.k)?;
                        let predicted = self.predict(&s)?;
                        staged.push((s, induced));
                        predicted
                    }
                    PolicyMode::Constant(l) => l,
                    PolicyMode::BaseOnly => 0.0,
                };
                self.log.push(AdaptRecord {
                    reference,
                    p_knn_ref,
                    p_nmt_ref,
                    induced,
                    predicted_lambda,
                });
            }
        }

        for (s, v) in &staged {
            self.policy.add_entry(s, *v)?;
        }
        let added = self.tokens.add_sentence(&y, &states)?;
        Ok(AdaptReport {
            token_entries_added: added,
            policy_entries_added: staged.len(),
        })
    }

    fn bootstrap_labels(
        &self,
        y: &[TokenId],
        states: &[ModelOutput],
        references: &[TokenId],
    ) -> Result<Vec<(PolicyFeature, u8)>> {
        let k = self.config.k;
        let mut own = TokenStore::new(self.model.dim());
        own.add_sentence(y, states)?;
        let mut staged = Vec::new();
        for (pos, (state, &reference)) in states.iter().zip(references).enumerate() {
            let with_self = own.retrieve(&state.hidden, k)?;
            let mut without_self = own.retrieve(&state.hidden, k + 1)?;
            without_self.neighbors.retain(|n| n.entry != pos);
            without_self.neighbors.truncate(k);
            for neighbors in [with_self, without_self] {
                if neighbors.is_empty() {
                    continue;
                }
                let pk = p_knn(&neighbors, self.config.temperature, state.dist.len())?;
                let label = induce_value(pk.prob(reference), state.dist.prob(reference));
                staged.push((build_features(&neighbors, k)?, label));
            }
        }
        Ok(staged)
    }

    /// Translates each sentence with the state adapted on all earlier ones, then adapts on
    /// its reference.
    pub fn run_document(&mut self, doc: &[(Sentence, Sentence)]) -> Result<DocumentResult> {
        if doc.is_empty() {
            return Err(Error::input("empty document"));
        }
        let mut result = DocumentResult {
            hypotheses: Vec::with_capacity(doc.len()),
            diagnostics: Vec::with_capacity(doc.len()),
            latencies: Vec::with_capacity(doc.len()),
        };
        for (i, (x, y)) in doc.iter().enumerate() {
            let at = |e: Error| Error::AtSentence {
                sentence: i + 1,
                source: Box::new(e),
            };
            let start = Instant::now();
            let t = self.translate(x).map_err(at)?;
            result.latencies.push(start.elapsed());
            self.adapt(x, y).map_err(at)?;
            result.hypotheses.push(t.hypothesis);
            result.diagnostics.push(t.diagnostics);
        }
        Ok(result)
    }
}
