//! `extract`: one agent session per corpus document. Each session gets the
//! document's slice of the vector index as its search space; drafted
//! records are parsed, optionally verified, merged in document order, and
//! exported once by a single writer.

use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};

use extractor_core::agent::{
    self, FixedClock, HttpBackend, LlmBackend, Outcome, ScriptedBackend, ToolRegistry,
};
use extractor_core::corpus::{self, PassageStore};
use extractor_core::schema::{
    parse_final_answer, parse_final_answer_lenient, ExtractionRecord, TaskDefinition,
};
use extractor_core::tools::{
    chain_of_verification, dataset_search_tool, doc_search_tool, export_records, fixture_clients,
    verify_records_tool, ExportFormat, StructureClient, StructureSource,
    DEFAULT_VERIFICATION_TEMPLATE,
};
use extractor_core::vecindex::{EmbeddingProvider, VectorIndex};

use crate::config::{BackendConfig, RunConfig};
use crate::mock::MockScript;
use crate::provider_for;

pub struct ExtractOptions {
    pub verify: bool,
    pub lenient: bool,
    pub jobs: usize,
    pub format: Option<ExportFormat>,
}

enum SessionBackend<'a> {
    Mock(&'a MockScript),
    Remote(Arc<HttpBackend>),
}

struct DocContext<'a> {
    cfg: &'a RunConfig,
    task: &'a TaskDefinition,
    index: &'a VectorIndex,
    store: Arc<PassageStore>,
    provider: Arc<dyn EmbeddingProvider>,
    verifier: Arc<dyn LlmBackend>,
    clients: Vec<Arc<dyn StructureClient>>,
    sources: Vec<StructureSource>,
    template: &'a str,
    transcripts_dir: &'a Path,
    opts: &'a ExtractOptions,
    backend: SessionBackend<'a>,
}

fn run_doc(ctx: &DocContext, stem: &str, doc_id: &str) -> Result<Vec<ExtractionRecord>, String> {
    let candidates = ctx.index.entries_for_doc(doc_id);
    if candidates.is_empty() {
        return Err("document is not in the index; re-run ingest".into());
    }

    let mut registry = ToolRegistry::new();
    let (spec, handler) = doc_search_tool(
        ctx.provider.clone(),
        candidates,
        ctx.store.clone(),
        ctx.cfg.mmr.clone(),
    );
    registry.register(spec, handler).map_err(|e| e.to_string())?;
    let (spec, handler) = verify_records_tool(
        ctx.task.clone(),
        ctx.verifier.clone(),
        ctx.template.to_string(),
    );
    registry.register(spec, handler).map_err(|e| e.to_string())?;
    let (spec, handler) = dataset_search_tool(ctx.clients.clone(), ctx.sources.clone());
    registry.register(spec, handler).map_err(|e| e.to_string())?;

    let prompt = format!("{}\n\nDocument id: {doc_id}", ctx.task.prompt_template);
    let transcript = match &ctx.backend {
        SessionBackend::Mock(script) => {
            let turns = script
                .session_turns(stem, doc_id)
                .ok_or_else(|| format!("no scripted session for '{stem}'"))?;
            let scripted = ScriptedBackend::new(turns);
            agent::run_with_clock(&prompt, &registry, &scripted, &ctx.cfg.agent, &FixedClock(0))
        }
        SessionBackend::Remote(http) => {
            agent::run(&prompt, &registry, http.as_ref(), &ctx.cfg.agent)
        }
    };

    let transcript_path = ctx.transcripts_dir.join(format!("{stem}.json"));
    let json = serde_json::to_string_pretty(&transcript).expect("transcripts always serialize");
    std::fs::write(&transcript_path, json + "\n")
        .map_err(|e| format!("cannot write {}: {e}", transcript_path.display()))?;

    let final_text = match transcript.outcome {
        Outcome::Answered => transcript.final_text.unwrap_or_default(),
        Outcome::IterationLimit => {
            return Err("iteration limit reached without a final answer".into())
        }
        Outcome::BackendError => {
            return Err(format!(
                "backend failure: {}",
                transcript.error.as_deref().unwrap_or("unknown")
            ))
        }
    };

    let records = if ctx.opts.lenient {
        let (records, skipped) = parse_final_answer_lenient(&final_text, ctx.task)
            .map_err(|e| format!("unparseable final answer: {e}"))?;
        for err in &skipped {
            eprintln!("warning: {stem}: skipping record: {err}");
        }
        records
    } else {
        parse_final_answer(&final_text, ctx.task)
            .map_err(|e| format!("invalid final answer: {e}"))?
    };

    if !ctx.opts.verify {
        return Ok(records);
    }
    let (kept, audit) = chain_of_verification(
        &records,
        &ctx.task.rules,
        ctx.verifier.as_ref(),
        ctx.template,
    )
    .map_err(|e| format!("verification failed: {e}"))?;
    let audit_path = ctx.transcripts_dir.join(format!("{stem}.cov.json"));
    let json = serde_json::to_string_pretty(&audit).expect("audits always serialize");
    std::fs::write(&audit_path, json + "\n")
        .map_err(|e| format!("cannot write {}: {e}", audit_path.display()))?;
    Ok(kept)
}

pub fn cmd_extract(config_path: &Path, opts: &ExtractOptions) -> Result<i32> {
    let cfg = RunConfig::load(config_path)?;
    let task = TaskDefinition::bundled(cfg.task_id);

    let manifest_path = cfg.manifest_path();
    let store = PassageStore::read_manifest(&manifest_path).with_context(|| {
        format!(
            "cannot read manifest {} (run ingest first)",
            manifest_path.display()
        )
    })?;
    let index = VectorIndex::load(&cfg.index_path).with_context(|| {
        format!(
            "cannot read index {} (run ingest first)",
            cfg.index_path.display()
        )
    })?;
    if store.is_empty() || index.is_empty() {
        eprintln!("error: index or manifest is empty; run ingest first");
        return Ok(2);
    }

    let provider = provider_for(&cfg.embedder)?;
    if let Some(model) = index.model_id() {
        let configured = provider.model_id();
        if model != configured {
            eprintln!(
                "error: index was built with embedding model {model:?} but the config \
                 selects {configured:?}; re-run ingest"
            );
            return Ok(2);
        }
    }

    let files = corpus::list_ingestible(&cfg.corpus_dir)?;
    if files.is_empty() {
        eprintln!(
            "error: no ingestible files (.txt/.xml) in {}",
            cfg.corpus_dir.display()
        );
        return Ok(2);
    }
    let docs: Vec<(String, Result<String, String>)> = files
        .iter()
        .map(|(path, format)| {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "doc".into());
            let id = corpus::ingest(path, *format)
                .map(|d| d.id)
                .map_err(|e| e.to_string());
            (stem, id)
        })
        .collect();

    let template = match &cfg.verification_template {
        Some(path) => std::fs::read_to_string(path)
            .with_context(|| format!("cannot read verification template {}", path.display()))?,
        None => DEFAULT_VERIFICATION_TEMPLATE.to_string(),
    };

    let transcripts_dir = cfg.transcripts_dir();
    std::fs::create_dir_all(&transcripts_dir)
        .with_context(|| format!("cannot create {}", transcripts_dir.display()))?;

    let mock_script = match &cfg.backend {
        BackendConfig::Mock { script } => Some(MockScript::load(script)?),
        BackendConfig::Remote { .. } => None,
    };
    let (backend, verifier): (SessionBackend, Arc<dyn LlmBackend>) =
        match (&cfg.backend, &mock_script) {
            (BackendConfig::Mock { .. }, Some(script)) => {
                (SessionBackend::Mock(script), Arc::new(script.verifier()))
            }
            (BackendConfig::Remote { model }, _) => {
                let http = Arc::new(HttpBackend::from_env(model.clone())?);
                (SessionBackend::Remote(http.clone()), http)
            }
            (BackendConfig::Mock { .. }, None) => unreachable!("script loaded above"),
        };

    let ctx = DocContext {
        cfg: &cfg,
        task: &task,
        index: &index,
        store: Arc::new(store),
        provider,
        verifier,
        clients: fixture_clients(),
        sources: cfg.dataset_sources(),
        template: &template,
        transcripts_dir: &transcripts_dir,
        opts,
        backend,
    };

    let jobs = opts.jobs.max(1);
    let results: Vec<(usize, Result<Vec<ExtractionRecord>, String>)> = if jobs == 1 {
        docs.iter()
            .enumerate()
            .map(|(i, (stem, id))| {
                let outcome = match id {
                    Ok(doc_id) => run_doc(&ctx, stem, doc_id),
                    Err(e) => Err(e.clone()),
                };
                (i, outcome)
            })
            .collect()
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..jobs)
                .map(|worker| {
                    let ctx = &ctx;
                    let docs = &docs;
                    scope.spawn(move || {
                        docs.iter()
                            .enumerate()
                            .filter(|(i, _)| i % jobs == worker)
                            .map(|(i, (stem, id))| {
                                let outcome = match id {
                                    Ok(doc_id) => run_doc(ctx, stem, doc_id),
                                    Err(e) => Err(e.clone()),
                                };
                                (i, outcome)
                            })
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            let mut all = Vec::new();
            for handle in handles {
                all.extend(handle.join().expect("extraction worker panicked"));
            }
            all.sort_by_key(|(i, _)| *i);
            all
        })
    };

    let mut merged = Vec::new();
    let mut succeeded = 0usize;
    for (i, outcome) in results {
        match outcome {
            Ok(mut records) => {
                succeeded += 1;
                merged.append(&mut records);
            }
            Err(e) => eprintln!("warning: {}: {e}", docs[i].0),
        }
    }
    let failed = docs.len() - succeeded;
    if succeeded == 0 {
        eprintln!("error: all {failed} documents failed");
        return Ok(1);
    }

    let format = opts.format.unwrap_or(cfg.output.format);
    if let Some(dir) = cfg.output.path.parent() {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let count = export_records(&merged, task.output_variant, format, &cfg.output.path)?;

    println!(
        "{}",
        serde_json::json!({
            "documents": docs.len(),
            "succeeded": succeeded,
            "failed": failed,
            "records": count,
            "output": cfg.output.path.display().to_string(),
        })
    );
    Ok(0)
}
