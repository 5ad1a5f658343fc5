//! Command-line surface.

use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use agescope_core::corpus::DEFAULT_MAX_DIMENSION;
use agescope_core::gateway::{DEFAULT_API_KEY_ENV, DEFAULT_ENDPOINT, DEFAULT_MODEL};
use agescope_core::{BackendConfig, Pricing, Tolerance};

use crate::classify::{run_classify, BackendKind, ClassifyOptions};
use crate::error::CliError;
use crate::evaluate::{run_evaluate, EvaluateOptions};
use crate::make_fixture::{run_make_fixture, MakeFixtureOptions};

#[derive(Debug, Parser)]
#[command(name = "agescope", version, about = "Zero-shot building age epoch classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Send every corpus image to a backend and record parsed predictions.
    Classify(ClassifyArgs),
    /// Score predictions against the manifest and write the report bundle.
    Evaluate(EvaluateArgs),
    /// Write a seeded synthetic corpus with predictions.
    MakeFixture(MakeFixtureArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Live,
    Mock,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = BackendArg::Live)]
    pub backend: BackendArg,
    /// Reply fixture for the mock backend.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    #[arg(long, default_value = DEFAULT_ENDPOINT)]
    pub endpoint: String,
    #[arg(long, default_value = DEFAULT_MODEL)]
    pub model: String,
    /// Environment variable holding the API key.
    #[arg(long, default_value = DEFAULT_API_KEY_ENV)]
    pub api_key_env: String,
    /// Sampling temperature; the backend default is 0.
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long, default_value_t = 500)]
    pub max_output_tokens: u32,
    #[arg(long, default_value_t = 120.0)]
    pub timeout_secs: f64,
    #[arg(long, default_value_t = 3)]
    pub max_retries: u32,
    #[arg(long, default_value_t = 1)]
    pub concurrency: usize,
    /// Minimum spacing between dispatches, in milliseconds.
    #[arg(long, default_value_t = 0)]
    pub min_interval_ms: u64,
    #[arg(long, default_value_t = 500)]
    pub retry_base_ms: u64,
    /// Price per 1000 input tokens.
    #[arg(long, default_value_t = 0.0)]
    pub price_input: f64,
    /// Price per 1000 output tokens.
    #[arg(long, default_value_t = 0.0)]
    pub price_output: f64,
    /// Longest side after resizing.
    #[arg(long, default_value_t = DEFAULT_MAX_DIMENSION, conflicts_with = "no_resize")]
    pub max_dimension: u32,
    /// Send images at their original size.
    #[arg(long)]
    pub no_resize: bool,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Re-send a request once when its reply cannot be parsed.
    #[arg(long)]
    pub retry_malformed: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub output_dir: PathBuf,
    /// Confusion-matrix tolerances to render.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2", value_parser = parse_tolerance)]
    pub tolerances: Vec<Tolerance>,
}

#[derive(Debug, Args)]
pub struct MakeFixtureArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short = 'n', long, default_value_t = 100)]
    pub count: usize,
    #[arg(long)]
    pub output_dir: PathBuf,
}

fn parse_tolerance(s: &str) -> Result<Tolerance, String> {
    let k: u8 = s.trim().parse().map_err(|e| format!("{s:?}: {e}"))?;
    Tolerance::new(k).map_err(|e| e.to_string())
}

fn seconds(value: f64, flag: &str) -> Result<Duration, CliError> {
    Duration::try_from_secs_f64(value).map_err(|_| CliError::Input(format!("{flag} must be a non-negative number")))
}

impl ClassifyArgs {
    pub fn options(&self) -> Result<ClassifyOptions, CliError> {
        let config = BackendConfig {
            endpoint_url: self.endpoint.clone(),
            model_name: self.model.clone(),
            api_key_env: self.api_key_env.clone(),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            request_timeout: seconds(self.timeout_secs, "--timeout-secs")?,
            max_retries: self.max_retries,
            max_concurrency: self.concurrency,
            min_request_interval: Duration::from_millis(self.min_interval_ms),
            retry_base_delay: Duration::from_millis(self.retry_base_ms),
            pricing: Pricing {
                input_per_1k: self.price_input,
                output_per_1k: self.price_output,
            },
        };
        Ok(ClassifyOptions {
            manifest: self.manifest.clone(),
            output_dir: self.output_dir.clone(),
            backend: match self.backend {
                BackendArg::Live => BackendKind::Live,
                BackendArg::Mock => BackendKind::Mock,
            },
            mock_fixture: self.fixture.clone(),
            config,
            max_dimension: (!self.no_resize).then_some(self.max_dimension),
            cache_dir: self.cache_dir.clone(),
            retry_malformed: self.retry_malformed,
        })
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Classify(args) => {
            let report = run_classify(&args.options()?)?;
            let o = report.meta.outcomes;
            println!(
                "classified {} items: {} valid, {} hallucination, {} malformed, {} refused; {} from cache",
                report.meta.items, o.valid, o.hallucination, o.malformed, o.refused, report.meta.cached_replies
            );
        }
        Command::Evaluate(args) => {
            let mut tolerances = args.tolerances.clone();
            tolerances.sort();
            tolerances.dedup();
            let evaluation = run_evaluate(&EvaluateOptions {
                predictions: args.predictions,
                manifest: args.manifest,
                output_dir: args.output_dir,
                tolerances,
            })?;
            let bundle = crate::report::ReportBundle::from_evaluation(&evaluation);
            print!("{}", bundle.to_csv());
        }
        Command::MakeFixture(args) => {
            let run = run_make_fixture(&MakeFixtureOptions {
                seed: args.seed,
                count: args.count,
                output_dir: args.output_dir.clone(),
            })?;
            println!("wrote {} items to {}", run.len(), args.output_dir.display());
        }
    }
    Ok(())
}
