//! `pipeline`: command-line front end for the keyword/haptic-feature grounding pipeline.
//!
//! Exit status: 0 on success, 1 for invalid configuration or input, 2 when
//! a stage fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use haptic_grounding::corpus::{load_gold, load_transcripts};
use haptic_grounding::extraction::{
    apply_vocabulary, extract_transcripts, predictions_by_transcript, read_keyword_records, score_extraction,
    write_keyword_records, ExtractionMethod, ExtractionScore,
};
use haptic_grounding::pipeline::{
    ExtractionConfig, Pipeline, PipelineConfig, PipelineError, RunSummary, Stage, REPORT_TEXT_FILE,
};
use haptic_grounding::synthetic::{write_fixture, SyntheticOptions};

#[derive(Parser)]
#[command(
    name = "pipeline",
    version,
    about = "Ground free-form signal descriptions in haptic signal features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Pipeline configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override a configuration value, e.g. `clustering.positive.k=14`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage, skipping those whose inputs are unchanged.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Run only this stage (always executes).
        #[arg(long)]
        stage: Option<Stage>,
    },
    /// Extract keywords from a transcript file.
    Extract(ExtractArgs),
    /// Score predicted keywords against gold annotations.
    EvalExtraction {
        /// Keyword records written by `extract`.
        #[arg(long)]
        pred: PathBuf,
        /// Gold annotation records.
        #[arg(long)]
        gold: PathBuf,
        /// Row label; defaults to the extraction method in the records.
        #[arg(long)]
        label: Option<String>,
    },
    /// Split extracted keywords into positive and negative groups.
    Split(ConfigArgs),
    /// Cluster each sentiment group.
    Cluster(ConfigArgs),
    /// Extract and normalize signal features.
    Features(ConfigArgs),
    /// Build count matrices and correlations.
    Correlate(ConfigArgs),
    /// Write the largest-correlation report.
    Report(ConfigArgs),
    /// Write the synthetic fixture corpus and a matching config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        signals: usize,
        #[arg(long, default_value_t = 3)]
        participants: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

#[derive(Args)]
struct ExtractArgs {
    /// rule, pos or llm; required without --config.
    #[arg(long)]
    method: Option<ExtractionMethod>,
    /// Transcript records (one JSON object per line).
    #[arg(long = "in")]
    input: PathBuf,
    /// Destination keyword records.
    #[arg(long)]
    out: PathBuf,
    /// Take extraction settings from this pipeline configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration value; needs --config.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Rule pattern file for the rule method.
    #[arg(long)]
    patterns: Option<PathBuf>,
    /// Chat-completions URL for the llm method.
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name sent to the endpoint and used in cache keys.
    #[arg(long)]
    model: Option<String>,
    /// Response cache directory for the llm method.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

enum Failure {
    Validation(anyhow::Error),
    Stage(anyhow::Error),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Validation(_) => Failure::Validation(e.into()),
            PipelineError::Stage { .. } => Failure::Stage(e.into()),
        }
    }
}

fn validation(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Validation(e.into())
}

fn stage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Stage(e.into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
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
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { config, stage } => run_pipeline(&config, stage),
        Command::Extract(args) => extract(args),
        Command::EvalExtraction { pred, gold, label } => eval_extraction(&pred, &gold, label),
        Command::Split(c) => run_pipeline(&c, Some(Stage::Split)),
        Command::Cluster(c) => run_pipeline(&c, Some(Stage::Cluster)),
        Command::Features(c) => run_pipeline(&c, Some(Stage::Features)),
        Command::Correlate(c) => run_pipeline(&c, Some(Stage::Correlate)),
        Command::Report(c) => run_pipeline(&c, Some(Stage::Report)),
        Command::Synth {
            out,
            signals,
            participants,
            seed,
        } => {
            let options = SyntheticOptions {
                signals,
                participants,
                seed,
                ..SyntheticOptions::default()
            };
            let fixture = write_fixture(&out, &options).map_err(stage)?;
            println!("wrote fixture to {}", fixture.root.display());
            println!("run it with: pipeline run --config {}", fixture.config.display());
            Ok(())
        }
    }
}

fn run_pipeline(args: &ConfigArgs, only: Option<Stage>) -> Result<(), Failure> {
    let config = PipelineConfig::load(&args.config, &args.overrides)?;
    let mut pipeline = Pipeline::new(config);
    let summary = match only {
        Some(s) => pipeline.run_stage(s)?,
        None => pipeline.run()?,
    };
    print_summary(&summary);
    Ok(())
}

fn print_summary(summary: &RunSummary) {
    let names = |stages: &[Stage]| stages.iter().map(|s| s.name()).collect::<Vec<_>>().join(", ");
    if !summary.executed.is_empty() {
        println!("executed: {}", names(&summary.executed));
    }
    if !summary.skipped.is_empty() {
        println!("skipped (up to date): {}", names(&summary.skipped));
    }
    let report = summary.output_dir.join(REPORT_TEXT_FILE);
    if summary.executed.contains(&Stage::Report) {
        if let Ok(text) = std::fs::read_to_string(&report) {
            print!("\n{text}");
        }
    }
    println!("outputs: {}", summary.output_dir.display());
}

fn extract(args: ExtractArgs) -> Result<(), Failure> {
    let (mut extraction, base_dir) = match &args.config {
        Some(path) => {
            let config = PipelineConfig::load(path, &args.overrides)?;
            (config.extraction.clone(), config.base_dir.clone())
        }
        None if !args.overrides.is_empty() => {
            return Err(validation(anyhow!("--override requires --config")));
        }
        None => (ExtractionConfig::default(), PathBuf::new()),
    };
    // command-line paths are relative to the working directory
    let cwd = std::env::current_dir().map_err(validation)?;
    if let Some(m) = args.method {
        extraction.method = m;
    }
    if let Some(p) = args.patterns {
        extraction.patterns = Some(cwd.join(p));
    }
    if let Some(e) = args.endpoint {
        extraction.llm.endpoint = e;
    }
    if let Some(m) = args.model {
        extraction.llm.model = m;
    }
    if let Some(d) = args.cache_dir {
        extraction.llm.cache_dir = cwd.join(d);
    }
    if args.config.is_none() && args.method.is_none() {
        return Err(validation(anyhow!("--method is required without --config")));
    }

    let transcripts = load_transcripts(&args.input).map_err(validation)?;
    let extractor = extraction.build_extractor(&base_dir, None).map_err(validation)?;
    let mut records = extract_transcripts(&transcripts, &extractor).map_err(stage)?;
    if let Some(vocab) = extraction.lemma_vocabulary(&base_dir).map_err(validation)? {
        apply_vocabulary(&mut records, &vocab);
    }
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))
            .map_err(stage)?;
    }
    write_keyword_records(&args.out, &records)
        .with_context(|| format!("writing {}", args.out.display()))
        .map_err(stage)?;
    let total: usize = records.iter().map(|r| r.keywords.len()).sum();
    println!(
        "{}: {total} keyword(s) from {} transcript(s) -> {}",
        extraction.method.name(),
        records.len(),
        args.out.display()
    );
    Ok(())
}

fn eval_extraction(pred: &Path, gold: &Path, label: Option<String>) -> Result<(), Failure> {
    let records = read_keyword_records(pred).map_err(validation)?;
    let gold = load_gold(gold).map_err(validation)?;
    let score = score_extraction(&predictions_by_transcript(&records), &gold).map_err(stage)?;
    let label = label
        .or_else(|| records.first().map(|r| r.method.name().to_string()))
        .unwrap_or_else(|| "prediction".into());
    println!("{}", ExtractionScore::table_header());
    println!("{}", score.table_row(&label));
    Ok(())
}
