//! `synoe`: generate, audit, review and evaluate synthetic-outlier datasets.
//!
//! Exit codes: 0 success, 1 usage or validation failure, 2 runtime error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use synoe_core::model::Variant;

#[derive(Debug)]
pub enum CliError {
    /// Bad input: malformed files, invariant violations, inconsistent config.
    Validation(String),
    /// Environment failures: I/O, network, services.
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "synoe", version, about = "Synthetic outlier generation, audit, review and evaluation")]
struct Cli {
    /// TOML config file (overrides $SYNOE_CONFIG).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Log filter, e.g. `info` or `synoe_core=debug`.
    #[arg(long, global = true, default_value = "info", value_name = "FILTER")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Produce an augmented dataset variant.
    Generate(GenerateArgs),
    /// Check inpainted labels against detector evidence.
    Audit(AuditArgs),
    /// Serve the review API over an audited manifest.
    Review(ReviewArgs),
    /// COCO-style evaluation of a detection dump.
    Eval(EvalArgs),
    /// Serve the deterministic mock inpainting and detection services.
    MockServices(MockServicesArgs),
    /// Load a manifest and check every invariant.
    Validate(ValidateArgs),
    /// Write a small synthetic street-scene dataset for demos and tests.
    Synth(SynthArgs),
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    match s.parse::<Variant>() {
        Ok(Variant::Original) | Err(_) => Err(format!("expected one of V1, V2, V3, V4, V5, got {s:?}")),
        Ok(v) => Ok(v),
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Input dataset manifest.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Output directory for manifest.json, report.json, evidence.json and images/.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    /// Fraction of images to augment, in [0, 1].
    #[arg(long)]
    pub proportion: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replacement prompt list, one prompt per line.
    #[arg(long, value_name = "FILE")]
    pub prompts: Option<PathBuf>,
    #[arg(long, value_name = "URL")]
    pub inpaint_url: Option<String>,
    #[arg(long, value_name = "URL")]
    pub detect_url: Option<String>,
    /// Use the built-in deterministic mock services.
    #[arg(long)]
    pub mock: bool,
    /// Scripted detector outputs for the mock, keyed by crop id and prompt.
    #[arg(long, value_name = "FILE")]
    pub detect_fixtures: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub box_threshold: Option<f64>,
    #[arg(long)]
    pub text_threshold: Option<f64>,
    /// Comma-separated classes dropped while loading the input.
    #[arg(long, value_delimiter = ',')]
    pub drop_classes: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub evidence: PathBuf,
    /// Audited manifest.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReviewArgs {
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Evidence file; defaults to evidence.json next to the manifest when present.
    #[arg(long, value_name = "FILE")]
    pub evidence: Option<PathBuf>,
    /// Append-only decision journal (NDJSON).
    #[arg(long, value_name = "FILE")]
    pub journal: PathBuf,
    /// Where POST /review/export writes the final manifest.
    #[arg(long, value_name = "FILE")]
    pub export: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth manifest.
    #[arg(long, value_name = "FILE")]
    pub gt: PathBuf,
    /// Detection dump: list of {image_id, bbox, category_id, score}.
    #[arg(long, value_name = "FILE")]
    pub dets: PathBuf,
    /// Collapse every class into one `object` class.
    #[arg(long)]
    pub class_agnostic: bool,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MockServicesArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8090)]
    pub port: u16,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "FILE")]
    pub detect_fixtures: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub drop_classes: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub images: usize,
    #[arg(long, default_value_t = 800)]
    pub width: u32,
    #[arg(long, default_value_t = 450)]
    pub height: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Skip writing road masks.
    #[arg(long)]
    pub no_road_masks: bool,
}

fn init_logging(filter: &str) {
    let filter = tracing_subscriber::EnvFilter::try_new(filter)
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .json()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_current_span(false)
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    init_logging(&cli.log);
    let result = config::FileConfig::resolve(cli.config.as_deref()).and_then(|(file, path)| {
        if let Some(p) = &path {
            tracing::info!(config = %p.display(), "config file loaded");
        }
        match cli.command {
            Command::Generate(a) => commands::generate(a, &file),
            Command::Audit(a) => commands::audit(a),
            Command::Review(a) => commands::review(a),
            Command::Eval(a) => commands::eval(a),
            Command::MockServices(a) => commands::mock_services(a, &file),
            Command::Validate(a) => commands::validate(a, &file),
            Command::Synth(a) => commands::synth(a),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            tracing::error!(exit_code = e.code(), "{}", e.message());
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
