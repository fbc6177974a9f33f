//! `retrans`: batch simulation, λ sweeps, snapshot tools and the session server.

use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand};
use retrans_core::simulate::{self, Mode, SimulationConfig, POLICY_SNAPSHOT, TOKEN_SNAPSHOT};
use retrans_core::storage::{self, StoreKind};
use retrans_core::synth::{self, SynthConfig};
use retrans_service::AppState;

#[derive(Parser)]
#[command(
    name = "retrans",
    version,
    about = "Translation that adapts to post-edits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a corpus with the references as corrections and write a JSON report.
    Simulate(SimulateArgs),
    /// Run the fixed-weight mode once per λ and print (λ, BLEU) pairs.
    SweepLambda(SweepArgs),
    /// Serve interactive sessions over HTTP.
    Serve(ServeArgs),
    /// Inspect datastore snapshots.
    Snapshot {
        #[command(subcommand)]
        command: SnapshotCommand,
    },
    /// Write a synthetic corpus, lexicon and vocabulary.
    GenCorpus(GenArgs),
}

#[derive(Subcommand)]
enum SnapshotCommand {
    /// Print a snapshot header as JSON.
    Info { path: PathBuf },
    /// Load both snapshots from a directory and print their sizes.
    Check {
        dir: PathBuf,
        #[arg(long, default_value_t = SimulationConfig::default().dim)]
        dim: usize,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Lexicon TSV: source, target, weight.
    #[arg(long)]
    lexicon: PathBuf,
    /// Vocabulary file, one word per line.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = SimulationConfig::default().seed)]
    seed: u64,
    #[arg(long, default_value_t = SimulationConfig::default().scale)]
    scale: f64,
    #[arg(long, default_value_t = SimulationConfig::default().dim)]
    dim: usize,
    #[arg(long, default_value_t = SimulationConfig::default().epsilon)]
    epsilon: f64,
}

#[derive(Args)]
struct RetrievalArgs {
    #[arg(long, default_value_t = SimulationConfig::default().k)]
    k: usize,
    #[arg(long, default_value_t = SimulationConfig::default().policy_k)]
    policy_k: usize,
    #[arg(long, default_value_t = SimulationConfig::default().temperature)]
    temperature: f64,
    /// Defaults to --temperature.
    #[arg(long)]
    policy_temperature: Option<f64>,
    /// Weight used while the policy datastore cannot answer.
    #[arg(long, default_value_t = SimulationConfig::default().fallback_lambda)]
    fallback_lambda: f64,
    #[arg(long, action = ArgAction::Set, default_value_t = SimulationConfig::default().cold_start_bootstrap)]
    cold_start_bootstrap: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    retrieval: RetrievalArgs,
    /// adaptive (alias kok), fixed (alias knnmt) or base.
    #[arg(long, default_value = "adaptive", value_parser = parse_mode)]
    mode: Mode,
    /// Weight for the fixed mode.
    #[arg(long, default_value_t = SimulationConfig::default().lambda)]
    lambda: f64,
    #[arg(long, action = ArgAction::Set, default_value_t = true)]
    clear_between_documents: bool,
    /// Report path; the report goes to stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    snapshot_in: Option<PathBuf>,
    #[arg(long)]
    snapshot_out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    retrieval: RetrievalArgs,
    /// Comma-separated weights in [0, 1).
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"
    )]
    lambdas: Vec<f64>,
    #[arg(long, action = ArgAction::Set, default_value_t = true)]
    clear_between_documents: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    retrieval: RetrievalArgs,
    /// Where sessions are saved on delete (when asked) and on shutdown.
    #[arg(long)]
    snapshot_dir: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = SynthConfig::default().seed)]
    seed: u64,
    #[arg(long, default_value_t = SynthConfig::default().documents)]
    documents: usize,
    #[arg(long, default_value_t = SynthConfig::default().sentences_per_document)]
    sentences_per_document: usize,
    #[arg(long, default_value_t = SynthConfig::default().regular_words)]
    regular_words: usize,
    #[arg(long, default_value_t = SynthConfig::default().terms)]
    terms: usize,
    #[arg(long, default_value_t = SynthConfig::default().terms_per_sentence)]
    terms_per_sentence: usize,
    #[arg(long, default_value_t = SynthConfig::default().min_len)]
    min_len: usize,
    #[arg(long, default_value_t = SynthConfig::default().max_len)]
    max_len: usize,
    #[arg(long, default_value_t = SynthConfig::default().term_hint_weight)]
    term_hint_weight: f64,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    serde_json::from_value(serde_json::Value::from(s)).map_err(|_| format!("unknown mode {s:?}"))
}

/// Invalid flag values caught after parsing; exits like a parse error.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn config_from(corpus: PathBuf, model: ModelArgs, r: RetrievalArgs) -> SimulationConfig {
    SimulationConfig {
        corpus,
        lexicon: model.lexicon,
        vocab: model.vocab,
        seed: model.seed,
        scale: model.scale,
        dim: model.dim,
        epsilon: model.epsilon,
        k: r.k,
        policy_k: r.policy_k,
        temperature: r.temperature,
        policy_temperature: r.policy_temperature,
        fallback_lambda: r.fallback_lambda,
        cold_start_bootstrap: r.cold_start_bootstrap,
        ..SimulationConfig::default()
    }
}

fn validated(config: SimulationConfig) -> Result<SimulationConfig> {
    config.validate().map_err(|e| Usage(e.to_string()))?;
    if !(config.scale.is_finite() && config.scale > 0.0) || config.dim == 0 {
        return Err(Usage("--scale must be positive and --dim at least 1".into()).into());
    }
    Ok(config)
}

/// Writes to stdout; a closed pipe is not an error.
fn out(text: &str) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match writeln!(stdout, "{text}").and_then(|()| stdout.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => {
            let config = validated(SimulationConfig {
                mode: a.mode,
                lambda: a.lambda,
                clear_between_documents: a.clear_between_documents,
                report: a.report.clone(),
                snapshot_in: a.snapshot_in,
                snapshot_out: a.snapshot_out,
                ..config_from(a.corpus, a.model, a.retrieval)
            })?;
            let report = simulate::simulate(&config)?;
            match a.report {
                Some(path) => eprintln!(
                    "BLEU {:.2}  TER {:.2}  {} sentences  report {}",
                    report.aggregate.bleu,
                    report.aggregate.ter_noshift,
                    report.aggregate.sentences,
                    path.display()
                ),
                None => out(&report.to_json()?)?,
            }
        }
        Command::SweepLambda(a) => {
            if let Some(l) = a.lambdas.iter().find(|l| !(0.0..1.0).contains(*l)) {
                return Err(Usage(format!("lambda {l} outside [0, 1)")).into());
            }
            let config = validated(SimulationConfig {
                clear_between_documents: a.clear_between_documents,
                ..config_from(a.corpus, a.model, a.retrieval)
            })?;
            let points = simulate::sweep_lambda(&config, &a.lambdas)?;
            out(&serde_json::to_string_pretty(&points)?)?;
        }
        Command::Serve(a) => {
            let config = validated(config_from(PathBuf::new(), a.model, a.retrieval))?;
            let model = simulate::load_model(&config)?;
            let mut defaults = config.session_config();
            defaults.mode = retrans_core::PolicyMode::Adaptive;
            let state = Arc::new(AppState::new(model, defaults, a.snapshot_dir));
            tracing_subscriber::fmt()
                .with_writer(std::io::stderr)
                .init();
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(retrans_service::serve(
                SocketAddr::new(a.host, a.port),
                state,
            ))
            .context("server failed")?;
        }
        Command::Snapshot { command } => match command {
            SnapshotCommand::Info { path } => {
                let header = storage::read_snapshot_header(&path)?;
                out(&serde_json::to_string_pretty(&header)?)?;
            }
            SnapshotCommand::Check { dir, dim } => {
                let token_path = dir.join(TOKEN_SNAPSHOT);
                let policy_path = dir.join(POLICY_SNAPSHOT);
                let header = storage::read_snapshot_header(&policy_path)?;
                let tokens = storage::load_token_store(&token_path, dim)?;
                let policy = storage::load_policy_store(&policy_path, header.dim / 2)?;
                let sizes = serde_json::json!({
                    StoreKind::Token.name(): tokens.len(),
                    StoreKind::Policy.name(): policy.len(),
                });
                out(&sizes.to_string())?;
            }
        },
        Command::GenCorpus(a) => {
            let config = SynthConfig {
                seed: a.seed,
                documents: a.documents,
                sentences_per_document: a.sentences_per_document,
                regular_words: a.regular_words,
                terms: a.terms,
                terms_per_sentence: a.terms_per_sentence,
                min_len: a.min_len,
                max_len: a.max_len,
                term_hint_weight: a.term_hint_weight,
            };
            let corpus = synth::generate(&config).map_err(|e| Usage(e.to_string()))?;
            corpus.write_to_dir(&a.out)?;
            eprintln!(
                "wrote {} sentence pairs to {}",
                corpus.rows.len(),
                a.out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
