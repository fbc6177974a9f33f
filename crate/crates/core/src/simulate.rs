//! Batch simulation of the post-editing loop with references standing in for the human.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    bleu_stats, default_occurrence_buckets, lambda_buckets, ter_stats, words, BleuStats,
    LambdaBucketReport, RIndicatorCounts, RIndicatorReport, TerStats,
};
use crate::model::{BaseModel, LexiconStubModel, StubConfig};
use crate::session::{PolicyMode, Session, SessionConfig};
use crate::storage::{self, Corpus};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const TOKEN_SNAPSHOT: &str = "token.snap";
pub const POLICY_SNAPSHOT: &str = "policy.snap";

/// Which interpolation policy a simulation uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Learned per-token weight.
    #[serde(alias = "kok")]
    Adaptive,
    /// Constant weight `lambda`.
    #[serde(alias = "knnmt")]
    Fixed,
    /// Base model only.
    Base,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub corpus: PathBuf,
    pub lexicon: PathBuf,
    pub vocab: Option<PathBuf>,
    pub mode: Mode,
    /// Weight for [`Mode::Fixed`].
    pub lambda: f64,
    pub k: usize,
    pub policy_k: usize,
    pub temperature: f64,
    pub policy_temperature: Option<f64>,
    pub fallback_lambda: f64,
    pub cold_start_bootstrap: bool,
    /// Embedding seed of the stub model.
    pub seed: u64,
    /// Norm of the stub model's context vectors.
    pub scale: f64,
    pub dim: usize,
    pub epsilon: f64,
    pub clear_between_documents: bool,
    pub report: Option<PathBuf>,
    pub snapshot_in: Option<PathBuf>,
    pub snapshot_out: Option<PathBuf>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let s = SessionConfig::default();
        let m = StubConfig::default();
        SimulationConfig {
            corpus: PathBuf::new(),
            lexicon: PathBuf::new(),
            vocab: None,
            mode: Mode::Adaptive,
            lambda: 0.2,
            k: s.k,
            policy_k: s.policy_k,
            temperature: s.temperature,
            policy_temperature: s.policy_temperature,
            fallback_lambda: s.fallback_lambda,
            cold_start_bootstrap: s.cold_start_bootstrap,
            seed: m.seed,
            scale: m.scale,
            dim: m.dim,
            epsilon: m.epsilon,
            clear_between_documents: true,
            report: None,
            snapshot_in: None,
            snapshot_out: None,
        }
    }
}

impl SimulationConfig {
    pub fn session_config(&self) -> SessionConfig {
        SessionConfig {
            mode: match self.mode {
                Mode::Adaptive => PolicyMode::Adaptive,
                Mode::Fixed => PolicyMode::Constant(self.lambda),
                Mode::Base => PolicyMode::BaseOnly,
            },
            k: self.k,
            policy_k: self.policy_k,
            temperature: self.temperature,
            policy_temperature: self.policy_temperature,
            fallback_lambda: self.fallback_lambda,
            cold_start_bootstrap: self.cold_start_bootstrap,
            ..SessionConfig::default()
        }
    }

    pub fn stub_config(&self) -> StubConfig {
        StubConfig {
            dim: self.dim,
            epsilon: self.epsilon,
            seed: self.seed,
            scale: self.scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::input(format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        self.session_config().validate()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub mean_ms: f64,
    pub median_ms: f64,
}

impl LatencySummary {
    pub fn from_ms(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return LatencySummary::default();
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        LatencySummary {
            mean_ms: sorted.iter().sum::<f64>() / n as f64,
            median_ms: median,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatastoreSizes {
    pub token: usize,
    pub policy: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocumentReport {
    pub id: String,
    pub sentences: usize,
    pub bleu: f64,
    pub ter_noshift: f64,
    pub r_indicator: RIndicatorReport,
    pub hypotheses: Vec<String>,
    pub latency: LatencySummary,
    pub latency_per_sentence_ms: Vec<f64>,
    /// Sizes after the document's last adaptation.
    pub datastores: DatastoreSizes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub sentences: usize,
    pub bleu: f64,
    pub ter_noshift: f64,
    pub r_indicator: RIndicatorReport,
    pub lambda_buckets: LambdaBucketReport,
    pub latency: LatencySummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub os: String,
    pub arch: String,
    pub cpus: usize,
    pub debug_build: bool,
}

impl Environment {
    pub fn current() -> Self {
        Environment {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            debug_build: cfg!(debug_assertions),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub schema_version: u32,
    pub config: SimulationConfig,
    pub documents: Vec<DocumentReport>,
    pub aggregate: AggregateReport,
    /// Sizes at the end of the run.
    pub datastores: DatastoreSizes,
    pub unknown_words: BTreeMap<String, usize>,
    pub environment: Environment,
}

impl SimulationReport {
    /// Copy with every timing field zeroed; what remains is deterministic.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.aggregate.latency = LatencySummary::default();
        for d in &mut r.documents {
            d.latency = LatencySummary::default();
            d.latency_per_sentence_ms.iter_mut().for_each(|v| *v = 0.0);
        }
        r
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Runs the loop over an in-memory corpus with an already-built session.
pub fn run_corpus(
    session: &mut Session,
    corpus: &Corpus,
    config: &SimulationConfig,
) -> Result<SimulationReport> {
    let mut documents = Vec::with_capacity(corpus.documents.len());
    let mut bleu_total = BleuStats::default();
    let mut ter_total = TerStats::default();
    let mut r_total = RIndicatorCounts::default();
    let mut all_ms = Vec::new();
    let buckets = default_occurrence_buckets();

    for (i, doc) in corpus.documents.iter().enumerate() {
        if i > 0 && config.clear_between_documents {
            session.clear_datastores();
        }
        let result = session
            .run_document(&doc.pairs)
            .map_err(|e| Error::InDocument {
                document: doc.id.clone(),
                source: Box::new(e),
            })?;
        let hyps: Vec<Vec<&str>> = result.hypotheses.iter().map(words).collect();
        let refs: Vec<Vec<&str>> = doc.pairs.iter().map(|(_, r)| words(r)).collect();
        let bleu = bleu_stats(&hyps, &refs)?;
        let ter = ter_stats(&hyps, &refs)?;
        let r = RIndicatorCounts::document(&hyps, &refs)?;
        bleu_total.add(&bleu);
        ter_total.add(&ter);
        r_total.merge(&r);

        let per_sentence: Vec<f64> = result.latencies.iter().copied().map(ms).collect();
        all_ms.extend_from_slice(&per_sentence);
        documents.push(DocumentReport {
            id: doc.id.clone(),
            sentences: doc.pairs.len(),
            bleu: bleu.score(),
            ter_noshift: ter.score()?,
            r_indicator: r.report(&buckets),
            hypotheses: result.hypotheses.iter().map(|h| h.text()).collect(),
            latency: LatencySummary::from_ms(&per_sentence),
            latency_per_sentence_ms: per_sentence,
            datastores: sizes(session),
        });
    }

    Ok(SimulationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: config.clone(),
        documents,
        aggregate: AggregateReport {
            sentences: corpus.sentence_count(),
            bleu: bleu_total.score(),
            ter_noshift: ter_total.score()?,
            r_indicator: r_total.report(&buckets),
            lambda_buckets: lambda_buckets(session.adaptation_log()),
            latency: LatencySummary::from_ms(&all_ms),
        },
        datastores: sizes(session),
        unknown_words: corpus.unknown_words.clone(),
        environment: Environment::current(),
    })
}

fn sizes(session: &Session) -> DatastoreSizes {
    DatastoreSizes {
        token: session.token_store().len(),
        policy: session.policy_store().len(),
    }
}

/// Builds the stub model and session described by `config`, restoring snapshots if asked.
pub fn build_session(config: &SimulationConfig, model: Arc<dyn BaseModel>) -> Result<Session> {
    let session_config = config.session_config();
    match &config.snapshot_in {
        None => Session::new(model, session_config),
        Some(dir) => {
            let tokens = storage::load_token_store(&dir.join(TOKEN_SNAPSHOT), model.dim())?;
            let policy = storage::load_policy_store(&dir.join(POLICY_SNAPSHOT), config.k)?;
            Session::with_stores(model, session_config, tokens, policy)
        }
    }
}

pub fn load_model(config: &SimulationConfig) -> Result<Arc<LexiconStubModel>> {
    Ok(Arc::new(LexiconStubModel::from_files(
        &config.lexicon,
        config.vocab.as_deref(),
        config.stub_config(),
    )?))
}

pub fn save_snapshots(session: &Session, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let c = session.config();
    storage::save_token_store(
        &dir.join(TOKEN_SNAPSHOT),
        session.token_store(),
        c.k,
        c.temperature,
    )?;
    storage::save_policy_store(
        &dir.join(POLICY_SNAPSHOT),
        session.policy_store(),
        c.k,
        c.temperature,
    )?;
    Ok(())
}

/// Loads everything named in `config`, runs the simulation, writes the report and snapshots.
pub fn simulate(config: &SimulationConfig) -> Result<SimulationReport> {
    config.validate()?;
    let model = load_model(config)?;
    let corpus = storage::load_corpus(&config.corpus, model.vocab())?;
    let mut session = build_session(config, model)?;
    let report = run_corpus(&mut session, &corpus, config)?;
    if let Some(path) = &config.report {
        fs::write(path, report.to_json()?)?;
    }
    if let Some(dir) = &config.snapshot_out {
        save_snapshots(&session, dir)?;
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub bleu: f64,
}

/// One fixed-weight simulation per value of `lambdas`, over the same corpus.
pub fn sweep_lambda(config: &SimulationConfig, lambdas: &[f64]) -> Result<Vec<SweepPoint>> {
    let model = load_model(config)?;
    let corpus = storage::load_corpus(&config.corpus, model.vocab())?;
    sweep_lambda_on(config, model, &corpus, lambdas)
}

pub fn sweep_lambda_on(
    config: &SimulationConfig,
    model: Arc<dyn BaseModel>,
    corpus: &Corpus,
    lambdas: &[f64],
) -> Result<Vec<SweepPoint>> {
    lambdas
        .iter()
        .map(|&lambda| {
            let c = SimulationConfig {
                mode: Mode::Fixed,
                lambda,
                snapshot_in: None,
                ..config.clone()
            };
            c.validate()?;
            let mut session = Session::new(model.clone(), c.session_config())?;
            let report = run_corpus(&mut session, corpus, &c)?;
            Ok(SweepPoint {
                lambda,
                bleu: report.aggregate.bleu,
            })
        })
        .collect()
}
