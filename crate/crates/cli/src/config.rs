//! Run configuration: one JSON document describing a whole pipeline run.
//! Relative paths resolve against the config file's directory so a run
//! directory can be moved or checked in wholesale. Secrets never live here;
//! they come from EXTRACTOR_* environment variables.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use extractor_core::agent::AgentConfig;
use extractor_core::corpus::ChunkConfig;
use extractor_core::schema::TaskId;
use extractor_core::tools::{ExportFormat, StructureSource};
use extractor_core::vecindex::MmrConfig;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus_dir: PathBuf,
    pub index_path: PathBuf,
    #[serde(default)]
    pub manifest_path: Option<PathBuf>,
    #[serde(default)]
    pub transcripts_dir: Option<PathBuf>,
    pub task_id: TaskId,
    #[serde(default)]
    pub chunk: ChunkConfig,
    #[serde(default)]
    pub mmr: MmrConfig,
    #[serde(default)]
    pub agent: AgentConfig,
    pub backend: BackendConfig,
    pub embedder: EmbedderConfig,
    #[serde(default)]
    pub verification_template: Option<PathBuf>,
    #[serde(default)]
    pub datasets: Option<Vec<DatasetConfig>>,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    /// HTTP backend at EXTRACTOR_LLM_URL.
    Remote { model: String },
    /// Scripted backend replaying a session file; see [`crate::mock`].
    Mock { script: PathBuf },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderConfig {
    /// HTTP embedder at EXTRACTOR_EMBED_URL.
    Remote { model: String },
    /// Deterministic hash embedder; any seed gives a fixed model id.
    Mock { seed: u64 },
}

/// Reserved connector block. The bundled build always answers dataset
/// lookups from its offline fixture table; `base_url`/`api_key_env` are
/// accepted so operator configs stay forward-compatible with real
/// connectors.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: StructureSource,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub api_key_env: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub format: ExportFormat,
    pub path: PathBuf,
}

fn resolve(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        resolve(&base, &mut cfg.corpus_dir);
        resolve(&base, &mut cfg.index_path);
        if let Some(p) = &mut cfg.manifest_path {
            resolve(&base, p);
        }
        if let Some(p) = &mut cfg.transcripts_dir {
            resolve(&base, p);
        }
        if let BackendConfig::Mock { script } = &mut cfg.backend {
            resolve(&base, script);
        }
        if let Some(p) = &mut cfg.verification_template {
            resolve(&base, p);
        }
        resolve(&base, &mut cfg.output.path);
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        self.chunk
            .validate()
            .map_err(|e| anyhow::anyhow!("chunk config: {e}"))?;
        self.mmr
            .validate()
            .map_err(|e| anyhow::anyhow!("mmr config: {e}"))?;
        if self.agent.max_iterations == 0 {
            bail!("agent config: max_iterations must be at least 1");
        }
        if !self.agent.temperature.is_finite() || self.agent.temperature < 0.0 {
            bail!("agent config: temperature must be finite and non-negative");
        }
        Ok(())
    }

    /// Beside the index unless configured.
    pub fn manifest_path(&self) -> PathBuf {
        self.manifest_path.clone().unwrap_or_else(|| {
            self.index_path
                .parent()
                .unwrap_or(Path::new("."))
                .join("manifest.jsonl")
        })
    }

    /// Beside the index unless configured.
    pub fn transcripts_dir(&self) -> PathBuf {
        self.transcripts_dir.clone().unwrap_or_else(|| {
            self.index_path
                .parent()
                .unwrap_or(Path::new("."))
                .join("transcripts")
        })
    }

    /// Sources dataset lookups are allowed to query. Defaults to the
    /// fixture-backed ones.
    pub fn dataset_sources(&self) -> Vec<StructureSource> {
        match &self.datasets {
            Some(blocks) => {
                let mut sources: Vec<StructureSource> =
                    blocks.iter().map(|b| b.source).collect();
                sources.sort();
                sources.dedup();
                sources
            }
            None => vec![
                StructureSource::Cod,
                StructureSource::Csd,
                StructureSource::Qmof,
            ],
        }
    }
}
