//! `ingest`: read every .txt/.xml under the corpus directory, chunk,
//! embed, and write the passage manifest plus the vector index.

use std::path::Path;

use anyhow::{Context, Result};

use extractor_core::corpus::{self, PassageStore};
use extractor_core::vecindex::{embed_validated, IndexEntry, VectorIndex};

use crate::config::RunConfig;
use crate::provider_for;

pub fn cmd_ingest(config_path: &Path) -> Result<i32> {
    let cfg = RunConfig::load(config_path)?;
    let files = corpus::list_ingestible(&cfg.corpus_dir)?;
    if files.is_empty() {
        eprintln!(
            "error: no ingestible files (.txt/.xml) in {}",
            cfg.corpus_dir.display()
        );
        return Ok(2);
    }

    let provider = provider_for(&cfg.embedder)?;
    let mut store = PassageStore::new();
    let mut index = VectorIndex::new();
    let mut docs = 0usize;
    let mut failed = 0usize;

    for (path, format) in &files {
        let result = (|| -> Result<()> {
            let doc = corpus::ingest(path, *format)?;
            let passages = corpus::chunk(&doc, &cfg.chunk)?;
            let texts: Vec<String> = passages.iter().map(|p| p.text.clone()).collect();
            let vectors = embed_validated(provider.as_ref(), &texts)?;
            for (passage, vector) in passages.into_iter().zip(vectors) {
                index.add(IndexEntry {
                    passage_ref: passage.passage_ref(),
                    vector,
                })?;
                store.insert(passage);
            }
            Ok(())
        })();
        match result {
            Ok(()) => docs += 1,
            Err(e) => {
                failed += 1;
                eprintln!("warning: skipping {}: {e:#}", path.display());
            }
        }
    }

    if docs == 0 {
        eprintln!("error: all {failed} documents failed to ingest");
        return Ok(1);
    }

    let manifest_path = cfg.manifest_path();
    if let Some(dir) = cfg.index_path.parent() {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create {}", dir.display()))?;
    }
    if let Some(dir) = manifest_path.parent() {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create {}", dir.display()))?;
    }
    store.write_manifest(&manifest_path)?;
    index.save(&cfg.index_path)?;

    println!(
        "{}",
        serde_json::json!({
            "docs": docs,
            "passages": store.len(),
            "vectors": index.len(),
            "failed": failed,
        })
    );
    Ok(0)
}
