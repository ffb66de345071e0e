use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use clap::{Args, Parser, Subcommand, ValueEnum};

use mvground::pipeline::bench::{
    oracle_target, run_benchmark, run_sweep, BenchServices, JudgeFactory, QueryContext,
};
use mvground::pipeline::{
    ground, PipelineConfig, SerialEmbedder, SerialJudge, Services, EMBEDDING_TOKEN_VAR,
    JUDGE_TOKEN_VAR, PARSER_TOKEN_VAR,
};
use mvground::proposal::embedding::{EmbeddingProvider, HashEmbedder, RemoteEmbedder};
use mvground::proposal::parser::{GroundingQuery, HeuristicParser, QueryParser, RemoteParser};
use mvground::reasoning::judge::{
    JudgeClient, OracleJudge, RecordingJudge, RemoteJudge, ReplayJudge, Transcript,
};
use mvground::remote::Endpoint;
use mvground::scene::load_scene_bundle;
use mvground::synthetic::write_fixture_suite;
use mvground::{Error, Result};

#[derive(Parser)]
#[command(
    name = "mvground",
    version,
    about = "Zero-shot 3D visual grounding over posed RGB-D scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ground one query in one scene bundle and print the result as JSON.
    Ground {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        query: String,
        /// Skip parsing and use this target category.
        #[arg(long)]
        category: Option<String>,
        /// Instance the oracle judge should pick.
        #[arg(long)]
        target_instance: Option<u32>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run every line of a queries file and write predictions.jsonl and report.json.
    Bench {
        #[arg(long)]
        bundles: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Benchmark once per value of one parameter, e.g. `--sweep L=2,4,6,8`.
    Sweep {
        #[arg(long)]
        bundles: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        sweep: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Load a bundle and report whether it is well formed.
    ValidateBundle { dir: PathBuf },
    /// Write synthetic scene bundles and a matching queries file.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        scenes: usize,
        #[arg(long, default_value_t = 3)]
        queries_per_scene: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum JudgeKind {
    Oracle,
    Replay,
    Remote,
    Record,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbedderKind {
    Hash,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParserKind {
    Heuristic,
    Remote,
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with any subset of the configuration keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    export_sequences: Option<PathBuf>,
    #[arg(long)]
    export_projections: Option<PathBuf>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    n_frame: Option<usize>,
    #[arg(long)]
    interval: Option<usize>,
    #[arg(long = "batch-limit", short = 'L')]
    batch_limit: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum, default_value = "oracle")]
    judge: JudgeKind,
    /// Transcript read by `replay` and written by `record`.
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Issue remote judge and embedding requests one at a time.
    #[arg(long)]
    serial: bool,
    #[arg(long, value_enum, default_value = "hash")]
    embedder: EmbedderKind,
    #[arg(long, value_enum, default_value = "heuristic")]
    parser: ParserKind,
}

impl RunArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        c.confidence_threshold = self.theta.unwrap_or(c.confidence_threshold);
        c.visibility_threshold = self.tau.unwrap_or(c.visibility_threshold);
        c.expansion = self.alpha.unwrap_or(c.expansion);
        c.n_frame = self.n_frame.unwrap_or(c.n_frame);
        c.frame_interval = self.interval.unwrap_or(c.frame_interval);
        c.batch_limit = self.batch_limit.unwrap_or(c.batch_limit);
        c.workers = self.workers.unwrap_or(c.workers);
        if self.export_sequences.is_some() {
            c.export_sequences = self.export_sequences.clone();
        }
        if self.export_projections.is_some() {
            c.export_projections = self.export_projections.clone();
        }
        c.validate()?;
        Ok(c)
    }

    fn embedder(&self, c: &PipelineConfig) -> Result<Box<dyn EmbeddingProvider>> {
        Ok(match self.embedder {
            EmbedderKind::Hash => Box::new(HashEmbedder {
                dim: c.embedding_dim,
                seed: 0,
            }),
            EmbedderKind::Remote => {
                let e = endpoint(
                    &c.embedding_endpoint,
                    "embedding_endpoint",
                    EMBEDDING_TOKEN_VAR,
                )?;
                if self.serial {
                    Box::new(SerialEmbedder::new(RemoteEmbedder::new(e)))
                } else {
                    Box::new(RemoteEmbedder::new(e))
                }
            }
        })
    }

    fn parser(&self, c: &PipelineConfig) -> Result<Box<dyn QueryParser>> {
        Ok(match self.parser {
            ParserKind::Heuristic => Box::new(HeuristicParser),
            ParserKind::Remote => Box::new(RemoteParser::new(endpoint(
                &c.parser_endpoint,
                "parser_endpoint",
                PARSER_TOKEN_VAR,
            )?)),
        })
    }

    fn remote_judge(&self, c: &PipelineConfig) -> Result<Arc<dyn JudgeClient>> {
        let mut judge = RemoteJudge::new(endpoint(
            &c.judge_endpoint,
            "judge_endpoint",
            JUDGE_TOKEN_VAR,
        )?);
        judge.max_answer_tokens = c.max_answer_tokens;
        Ok(if self.serial {
            Arc::new(SerialJudge::new(judge))
        } else {
            Arc::new(judge)
        })
    }

    fn transcript_path(&self) -> Result<&Path> {
        self.transcript
            .as_deref()
            .ok_or_else(|| Error::Config("--transcript is required for this judge".into()))
    }
}

fn endpoint(url: &Option<String>, key: &str, token_var: &str) -> Result<Endpoint> {
    let url = url
        .as_ref()
        .ok_or_else(|| Error::Config(format!("`{key}` must be set in the config file")))?;
    Ok(Endpoint::new(url.clone()).with_token_from_env(token_var))
}

type SharedTranscript = Arc<Mutex<Transcript>>;

/// Builds the per-query judge for a benchmark, plus the transcript a
/// recording judge appends to.
fn judge_factory<'a>(
    run: &'a RunArgs,
    config: &PipelineConfig,
) -> Result<(Box<JudgeFactory<'a>>, Option<SharedTranscript>)> {
    Ok(match run.judge {
        JudgeKind::Oracle => (
            Box::new(|ctx: &QueryContext<'_>| -> Result<Arc<dyn JudgeClient>> {
                Ok(Arc::new(match oracle_target(ctx.table, &ctx.line.gt_box) {
                    Some(t) => OracleJudge::new(t),
                    None => OracleJudge::declining(),
                }))
            }),
            None,
        ),
        JudgeKind::Replay => {
            let judge: Arc<dyn JudgeClient> =
                Arc::new(ReplayJudge::from_file(run.transcript_path()?)?);
            (
                Box::new(move |_: &QueryContext<'_>| Ok(judge.clone())),
                None,
            )
        }
        JudgeKind::Remote => {
            let judge = run.remote_judge(config)?;
            (
                Box::new(move |_: &QueryContext<'_>| Ok(judge.clone())),
                None,
            )
        }
        JudgeKind::Record => {
            run.transcript_path()?;
            let log = Arc::new(Mutex::new(Transcript::default()));
            let judge: Arc<dyn JudgeClient> =
                Arc::new(RecordingJudge::new(run.remote_judge(config)?, log.clone()));
            (
                Box::new(move |_: &QueryContext<'_>| Ok(judge.clone())),
                Some(log),
            )
        }
    })
}

fn save_transcript(run: &RunArgs, log: Option<SharedTranscript>) -> Result<()> {
    if let Some(log) = log {
        let path = run.transcript_path()?;
        log.lock().unwrap().save(path)?;
        log::info!("transcript written to {}", path.display());
    }
    Ok(())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Ground {
            bundle,
            query,
            category,
            target_instance,
            run,
        } => {
            let config = run.config()?;
            let bundle = load_scene_bundle(&bundle)?;
            let mut query = GroundingQuery::new(query)?;
            if let Some(c) = category {
                query = query.with_category(c);
            }
            let mut log = None;
            let judge: Arc<dyn JudgeClient> = match run.judge {
                JudgeKind::Oracle => Arc::new(match target_instance {
                    Some(t) => OracleJudge::new(t),
                    None => OracleJudge::declining(),
                }),
                JudgeKind::Replay => Arc::new(ReplayJudge::from_file(run.transcript_path()?)?),
                JudgeKind::Remote => run.remote_judge(&config)?,
                JudgeKind::Record => {
                    run.transcript_path()?;
                    let t = Arc::new(Mutex::new(Transcript::default()));
                    log = Some(t.clone());
                    Arc::new(RecordingJudge::new(run.remote_judge(&config)?, t))
                }
            };
            let embedder = run.embedder(&config)?;
            let parser = run.parser(&config)?;
            let result = ground(
                &bundle,
                &query,
                &config,
                Services {
                    embedder: embedder.as_ref(),
                    parser: parser.as_ref(),
                    judge: judge.as_ref(),
                },
            )?;
            save_transcript(&run, log)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        Command::Bench {
            bundles,
            queries,
            out,
            run,
        } => {
            let config = run.config()?;
            let embedder = run.embedder(&config)?;
            let parser = run.parser(&config)?;
            let (judge, log) = judge_factory(&run, &config)?;
            let outcome = run_benchmark(
                &bundles,
                &queries,
                &config,
                &BenchServices {
                    embedder: embedder.as_ref(),
                    parser: parser.as_ref(),
                    judge: judge.as_ref(),
                },
            )?;
            outcome.write(&out, &config)?;
            save_transcript(&run, log)?;
            for e in &outcome.errors {
                eprintln!("line {}: {}", e.line, e.message);
            }
            match &outcome.report {
                Some(r) => println!("{}", serde_json::to_string_pretty(r)?),
                None => println!("no query completed"),
            }
        }
        Command::Sweep {
            bundles,
            queries,
            out,
            sweep,
            run,
        } => {
            let config = run.config()?;
            let embedder = run.embedder(&config)?;
            let parser = run.parser(&config)?;
            let (judge, log) = judge_factory(&run, &config)?;
            let points = run_sweep(
                &bundles,
                &queries,
                &out,
                &config,
                &sweep,
                &BenchServices {
                    embedder: embedder.as_ref(),
                    parser: parser.as_ref(),
                    judge: judge.as_ref(),
                },
            )?;
            save_transcript(&run, log)?;
            println!("{}", serde_json::to_string_pretty(&points)?);
        }
        Command::ValidateBundle { dir } => {
            let b = load_scene_bundle(&dir)?;
            println!(
                "ok: scene {} with {} points, {} masks, {} frames",
                b.scene_id,
                b.cloud.len(),
                b.masks.len(),
                b.frames.len()
            );
        }
        Command::Synth {
            out,
            scenes,
            queries_per_scene,
            seed,
        } => {
            let lines = write_fixture_suite(&out, scenes, queries_per_scene, seed)?;
            println!(
                "wrote {scenes} bundles and {} queries to {}",
                lines.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
