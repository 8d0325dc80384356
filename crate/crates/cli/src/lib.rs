//! Command-line front end for the extraction engine:
//! ingest → extract → score, plus format conversion.

use std::ffi::OsString;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Result;
use clap::{Parser, Subcommand};

use extractor_core::tools::ExportFormat;
use extractor_core::vecindex::{EmbeddingProvider, HttpEmbeddingProvider, MockEmbeddingProvider};

pub mod config;
pub mod export;
pub mod extract;
pub mod ingest;
pub mod mock;
pub mod score;

use config::EmbedderConfig;
use extract::ExtractOptions;

#[derive(Parser)]
#[command(
    name = "extractor",
    version,
    about = "Turns scientific text corpora into schema-validated datasets"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Chunk and embed a corpus into a passage manifest and vector index
    Ingest {
        /// Run configuration (JSON)
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one extraction session per document and export merged records
    Extract {
        /// Run configuration (JSON)
        #[arg(long)]
        config: PathBuf,
        /// Re-check drafted records and drop the unsupported ones
        #[arg(long)]
        verify: bool,
        /// Skip invalid records instead of failing the whole document
        #[arg(long)]
        lenient: bool,
        /// Parallel document sessions
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Override the configured output format (csv or json)
        #[arg(long)]
        format: Option<ExportFormat>,
    },
    /// Score a prediction CSV against ground truth
    Score {
        /// Task id: host_dopant, mof_formula, or water_stability
        #[arg(long)]
        task: String,
        /// Prediction CSV
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth CSV
        #[arg(long)]
        truth: PathBuf,
        /// Write the JSON report here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a records file between CSV and JSON
    Export {
        /// Source records file (.csv or .json)
        #[arg(long)]
        input: PathBuf,
        /// Destination file
        #[arg(long)]
        output: PathBuf,
        /// Destination format (csv or json)
        #[arg(long)]
        format: ExportFormat,
    },
}

pub(crate) fn provider_for(cfg: &EmbedderConfig) -> Result<Arc<dyn EmbeddingProvider>> {
    Ok(match cfg {
        EmbedderConfig::Mock { seed } => Arc::new(MockEmbeddingProvider::new(*seed)),
        EmbedderConfig::Remote { model } => {
            Arc::new(HttpEmbeddingProvider::from_env(model.clone())?)
        }
    })
}

/// Parses and dispatches; the return value is the process exit code.
/// 0 = at least one document (or the whole command) succeeded,
/// 1 = every document failed, 2 = usage or configuration error.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Ingest { config } => ingest::cmd_ingest(&config),
        Command::Extract {
            config,
            verify,
            lenient,
            jobs,
            format,
        } => extract::cmd_extract(
            &config,
            &ExtractOptions {
                verify,
                lenient,
                jobs,
                format,
            },
        ),
        Command::Score {
            task,
            pred,
            truth,
            out,
        } => score::cmd_score(&task, &pred, &truth, out.as_deref()),
        Command::Export {
            input,
            output,
            format,
        } => export::cmd_export(&input, &output, format),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}
