//! The `cpm` command line. Exit codes: 0 success, 1 usage, 2 runtime.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use chrono::Utc;
use clap::{Args, Parser, Subcommand, ValueEnum};
use cpm_core::config::RoundConfig;
use cpm_core::corpus_io::{filter_corpus, label_aki, load_corpus, read_creatinine_csv, save_corpus, Predicate, SCHEMA_VERSION};
use cpm_core::llm::backend::RemoteHttpConfig;
use cpm_core::llm::BackendSpec;
use cpm_core::model::{Concept, SeedOutcome};
use cpm_core::rounds::{load_round, Lineage};
use cpm_core::synth::SynthSpec;
use cpm_core::CpmError;

use crate::error::{ServiceError, ServiceResult};
use crate::manifest::{execute_round, RunManifest};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "cpm", version, about = "Learn and review concept-based clinical prediction models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a run from a corpus and a round config, then run round 1.
    Run(RunArgs),
    /// Annotate a fixed concept list and report its validation metrics.
    EvalFixed(EvalFixedArgs),
    /// Label notes with the KDIGO creatinine rule from a CSV export.
    LabelAki(LabelAkiArgs),
    /// Apply exclusion predicates to a corpus.
    Filter(FilterArgs),
    /// Serve the review API over a run directory.
    Serve(ServeArgs),
    /// Print a human-readable report of a persisted round.
    Inspect(InspectArgs),
    /// Write a synthetic corpus with planted concepts and its oracle world.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Mock,
    Replay,
    Remote,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value = "mock")]
    pub backend: BackendKind,
    /// Oracle world file for the mock backend [default: world.json next to the corpus]
    #[arg(long)]
    pub world: Option<PathBuf>,
    /// Fraction of mock annotations flipped at random.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub oracle_seed: u64,
    /// Recorded transcript for the replay backend.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Base URL of a chat-completions endpoint for the remote backend.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Environment variable holding the remote bearer token.
    #[arg(long, default_value = "CPM_LLM_TOKEN")]
    pub token_env: String,
}

impl BackendArgs {
    fn spec(&self, corpus: &Path) -> ServiceResult<BackendSpec> {
        let absolute = |p: &Path| std::path::absolute(p).map_err(ServiceError::from);
        Ok(match self.backend {
            BackendKind::Mock => {
                let world = match &self.world {
                    Some(w) => w.clone(),
                    None => corpus.with_file_name("world.json"),
                };
                BackendSpec::OracleMock {
                    world: absolute(&world)?,
                    noise_rate: self.noise,
                    seed: self.oracle_seed,
                }
            }
            BackendKind::Replay => BackendSpec::Replay {
                transcript: absolute(
                    self.transcript
                        .as_deref()
                        .ok_or_else(|| ServiceError::Usage("--transcript is required with --backend replay".into()))?,
                )?,
                identity: cpm_core::llm::backend::Replay::DEFAULT_IDENTITY.to_string(),
            },
            BackendKind::Remote => {
                let need = |v: &Option<String>, flag: &str| {
                    v.clone()
                        .ok_or_else(|| ServiceError::Usage(format!("{flag} is required with --backend remote")))
                };
                BackendSpec::RemoteHttp(RemoteHttpConfig {
                    endpoint: need(&self.endpoint, "--endpoint")?,
                    path: "/v1/chat/completions".into(),
                    model: need(&self.model, "--model")?,
                    token_env: self.token_env.clone(),
                    timeout_secs: 120,
                })
            }
        })
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Round config JSON; omitted fields take their defaults.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "runs")]
    pub root: PathBuf,
    #[arg(long)]
    pub run_id: Option<String>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct EvalFixedArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// JSON list of concepts, or of plain question strings.
    #[arg(long)]
    pub concepts: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct LabelAkiArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = "kdigo-creatinine")]
    pub provenance: String,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// JSON list of predicates.
    #[arg(long)]
    pub predicates: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Where to write the exclusion report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "runs")]
    pub root: PathBuf,
    #[arg(long, default_value = crate::api::DEFAULT_BIND)]
    pub bind: SocketAddr,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long, default_value = "runs")]
    pub root: PathBuf,
    #[arg(long)]
    pub run_id: String,
    #[arg(long, default_value_t = 1)]
    pub round: u32,
    /// Seed to report [default: the best seed]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for corpus.jsonl, world.json and truth.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 400)]
    pub notes: usize,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 5)]
    pub distractors: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `argv` and runs the command, printing diagnostics to stderr.
pub fn main_with_args<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(ServiceError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> ServiceResult<T> {
    let body = std::fs::read_to_string(path).map_err(|e| CpmError::io(path, e))?;
    serde_json::from_str(&body)
        .map_err(|e| ServiceError::Usage(format!("{} is not valid: {e}", path.display())))
}

fn execute(command: Command) -> ServiceResult<()> {
    match command {
        Command::Run(args) => run(args),
        Command::EvalFixed(args) => eval_fixed(args),
        Command::LabelAki(args) => {
            let corpus = label_aki(read_creatinine_csv(&args.input)?, args.provenance)?;
            save_corpus(&corpus, &args.output)?;
            let positives = corpus.items().iter().filter(|i| i.label == 1).count();
            eprintln!("labelled {} notes, {positives} with AKI", corpus.len());
            Ok(())
        }
        Command::Filter(args) => {
            let corpus = load_corpus(&args.corpus, SCHEMA_VERSION)?;
            let predicates: Vec<Predicate> = read_json(&args.predicates)?;
            let (kept, report) = filter_corpus(&corpus, &predicates)?;
            save_corpus(&kept, &args.output)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            eprintln!("kept {} of {} notes", kept.len(), corpus.len());
            if let Some(path) = args.report {
                let body = serde_json::to_string_pretty(&report).map_err(CpmError::from)?;
                std::fs::write(&path, body + "\n").map_err(|e| CpmError::io(&path, e))?;
            }
            Ok(())
        }
        Command::Serve(args) => {
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(crate::api::serve(args.root, args.bind))?;
            Ok(())
        }
        Command::Inspect(args) => {
            let mut out = std::io::stdout().lock();
            inspect(&args, &mut out)
        }
        Command::Synth(args) => synth(args),
    }
}

fn run(args: RunArgs) -> ServiceResult<()> {
    let config: RoundConfig = read_json(&args.config)?;
    config.validate().map_err(|e| ServiceError::Usage(e.to_string()))?;
    let run_id = args
        .run_id
        .unwrap_or_else(|| format!("run-{}", Utc::now().format("%Y%m%dT%H%M%SZ")));
    let manifest = RunManifest {
        run_id: run_id.clone(),
        corpus: std::path::absolute(&args.corpus)?,
        backend: args.backend.spec(&args.corpus)?,
        cache: None,
        created_at: Utc::now(),
    };
    // Fail on a bad corpus before anything is written.
    manifest.corpus()?;
    std::fs::create_dir_all(&args.root)?;
    manifest.create(&args.root)?;
    Lineage::open(&args.root, &run_id)?.start(&config)?;
    let dir = execute_round(&args.root, &run_id, 1, Utc::now())?;
    let record = load_round(&args.root, &run_id, 1)?;
    println!("{}", dir.display());
    if let Some(best) = record.best() {
        eprintln!(
            "best seed {:?}: validation AUC {:.4} with {} concepts",
            record.best_seed,
            best.final_model.validation_metric,
            best.final_model.concepts.len()
        );
    }
    Ok(())
}

fn eval_fixed(args: EvalFixedArgs) -> ServiceResult<()> {
    let corpus = load_corpus(&args.corpus, SCHEMA_VERSION)?;
    let config: RoundConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => RoundConfig::default(),
    };
    let raw: Vec<serde_json::Value> = read_json(&args.concepts)?;
    let concepts = raw
        .into_iter()
        .map(|v| match v {
            serde_json::Value::String(q) => Ok(Concept::new(
                q,
                cpm_core::SignPrior::Unknown,
                cpm_core::ConceptOrigin::UserSupplied,
            )?),
            other => Ok(serde_json::from_value::<Concept>(other).map_err(CpmError::from)?),
        })
        .collect::<ServiceResult<Vec<_>>>()?;
    let manifest = RunManifest {
        run_id: "eval-fixed".into(),
        corpus: args.corpus.clone(),
        backend: args.backend.spec(&args.corpus)?,
        cache: None,
        created_at: Utc::now(),
    };
    let gateway = cpm_core::Gateway::new(
        manifest.backend.build()?,
        std::sync::Arc::new(cpm_core::ResponseCache::in_memory()),
    );
    let eval = cpm_core::evaluate_fixed_concepts(&corpus, &concepts, &config, &gateway, args.seed)?;
    let body = serde_json::to_string_pretty(&serde_json::json!({
        "model": eval.model,
        "report": eval.report,
    }))
    .map_err(CpmError::from)?;
    match args.out {
        Some(path) => std::fs::write(&path, body + "\n").map_err(|e| CpmError::io(&path, e))?,
        None => println!("{body}"),
    }
    Ok(())
}

fn synth(args: SynthArgs) -> ServiceResult<()> {
    let spec = SynthSpec::planted(args.notes, args.k, args.distractors, args.seed)
        .map_err(|e| ServiceError::Usage(e.to_string()))?;
    let synth = spec.generate()?;
    std::fs::create_dir_all(&args.out)?;
    save_corpus(&synth.corpus, args.out.join("corpus.jsonl"))?;
    synth.world.save(&args.out.join("world.json"))?;
    let truth = serde_json::json!({
        "bayes_auc": synth.bayes_auc,
        "informative": synth.informative,
        "spec": spec,
    });
    let path = args.out.join("truth.json");
    let body = serde_json::to_string_pretty(&truth).map_err(CpmError::from)?;
    std::fs::write(&path, body + "\n").map_err(|e| CpmError::io(&path, e))?;
    eprintln!("wrote {} notes to {}", synth.corpus.len(), args.out.display());
    Ok(())
}

/// Writes the round report: per-seed AUCs, then the chosen seed's concepts
/// sorted by coefficient, largest first.
pub fn inspect(args: &InspectArgs, out: &mut impl Write) -> ServiceResult<()> {
    let record = load_round(&args.root, &args.run_id, args.round)?;
    let w = |out: &mut dyn Write, line: String| writeln!(out, "{line}").map_err(ServiceError::from);
    w(out, format!("run {} round {} ({})", record.run_id, record.round_index, record.created_at.to_rfc3339()))?;
    w(out, format!("backend: {}", record.backend))?;
    for s in &record.per_seed {
        match &s.outcome {
            SeedOutcome::Completed(c) => w(
                out,
                format!(
                    "seed {:>4}: AUC {:.4} (initial {:.4}), {} sweeps{}",
                    s.seed,
                    c.final_model.validation_metric,
                    c.initial.validation_metric,
                    c.sweeps_run,
                    if c.converged { ", converged" } else { "" }
                ),
            )?,
            SeedOutcome::Failed { error } => w(out, format!("seed {:>4}: failed: {error}", s.seed))?,
        }
    }
    if let Some(j) = record.stability.mean_pairwise_jaccard {
        w(out, format!("mean pairwise Jaccard of concept sets: {j:.3}"))?;
    }
    let seed = args
        .seed
        .or(record.best_seed)
        .ok_or_else(|| CpmError::NotFound("no completed seed".into()))?;
    let (_, chosen) = record
        .completed()
        .find(|(s, _)| *s == seed)
        .ok_or_else(|| CpmError::NotFound(format!("completed seed {seed}")))?;
    let v = &chosen.metrics.validation;
    w(out, String::new())?;
    w(
        out,
        format!(
            "seed {seed}: validation AUC {:.4} (SE {:.4}, n = {}); sensitivity {:.3} / specificity {:.3}",
            v.auc, v.auc_se, v.n_eval, v.operating_point.sensitivity, v.operating_point.specificity
        ),
    )?;
    let groups: BTreeMap<&String, &f64> = v.per_group_auc.iter().collect();
    for (g, a) in groups.into_iter().filter(|(g, _)| !g.is_empty()) {
        w(out, format!("  group {g}: AUC {a:.4}"))?;
    }
    let mut rows: Vec<_> = chosen.metrics.concepts.iter().collect();
    rows.sort_by(|a, b| b.coefficient.total_cmp(&a.coefficient));
    w(out, format!("{:>9}  {:>22}  {:<10}  question", "coef", "prevalence (95% CI)", "prior"))?;
    for c in rows {
        w(
            out,
            format!(
                "{:>9.3}  {:>6.3} [{:.3}, {:.3}]  {:<10}  {}{}",
                c.coefficient,
                c.prevalence,
                c.ci_lower,
                c.ci_upper,
                format!("{:?}", c.sign_prior).to_lowercase(),
                c.question,
                if c.sign_ok { "" } else { "  (sign disagrees)" }
            ),
        )?;
    }
    Ok(())
}
