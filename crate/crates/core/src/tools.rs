//! Tools the deliberation loop can call, plus the standalone verification
//! pass that re-checks drafted records in fresh contexts.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{ChatMessage, LlmBackend, ToolError, ToolHandler, ToolSpec};
use crate::corpus::{PassageRef, PassageStore};
use crate::schema::{
    parse_final_answer, parse_label, validate_record, DopantHostRecord, ExtractionRecord,
    MofFormulaRecord, RecordVariant, SchemaError, TaskDefinition, WaterStabilityRecord,
};
use crate::vecindex::{
    embed_validated, mmr_select, EmbeddingProvider, IndexEntry, MmrConfig, VecIndexError,
};

pub use crate::schema::VerificationRule;

#[derive(Debug, Error)]
pub enum ToolsError {
    #[error("vector index has no entries")]
    EmptyIndex,
    #[error("query text is empty")]
    EmptyQuery,
    #[error("index entry {0} has no passage in the store")]
    MissingPassage(PassageRef),
    #[error(transparent)]
    VecIndex(#[from] VecIndexError),
    #[error("verification template is missing the {{{0}}} placeholder")]
    TemplatePlaceholder(&'static str),
    #[error("records mix variants {0} and {1}")]
    MixedVariants(String, String),
    #[error("import failure at line {line}: {message}")]
    Import { line: usize, message: String },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv failure on {path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

/// Retrieves relevant, mutually diverse passages for a query. `candidates`
/// must all resolve in `store`; the selection budget uses the largest token
/// estimate among them.
pub fn doc_search(
    query: &str,
    provider: &dyn EmbeddingProvider,
    candidates: &[IndexEntry],
    store: &PassageStore,
    cfg: &MmrConfig,
) -> Result<String, ToolsError> {
    if query.trim().is_empty() {
        return Err(ToolsError::EmptyQuery);
    }
    if candidates.is_empty() {
        return Err(ToolsError::EmptyIndex);
    }
    let mut max_tokens = 0usize;
    for entry in candidates {
        let passage = store
            .get(&entry.passage_ref)
            .ok_or_else(|| ToolsError::MissingPassage(entry.passage_ref.clone()))?;
        max_tokens = max_tokens.max(passage.token_estimate);
    }
    let query_vector = embed_validated(provider, &[query.to_string()])?.remove(0);
    let selected = mmr_select(&query_vector, candidates, cfg, max_tokens)?;
    let blocks: Vec<String> = selected
        .iter()
        .map(|r| {
            let passage = store.get(r).expect("selected ref came from candidates");
            format!("[{}] {}", r, passage.text)
        })
        .collect();
    Ok(blocks.join("\n\n"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovVerdict {
    Keep,
    Drop,
    Revise,
}

impl fmt::Display for CovVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CovVerdict::Keep => "Keep",
            CovVerdict::Drop => "Drop",
            CovVerdict::Revise => "Revise",
        })
    }
}

/// Audit entry for one verified record, in draft order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovResult {
    pub record_index: usize,
    pub verdict: CovVerdict,
    pub verifier_answer: String,
    pub rule_ids_checked: Vec<String>,
}

pub const DEFAULT_VERIFICATION_TEMPLATE: &str = include_str!("../templates/verification.txt");

/// Substitutes `{name}` tokens in a single pass; substituted values are
/// never re-scanned, unknown tokens stay verbatim.
fn fill_template(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        rest = &rest[open..];
        if let Some(close) = rest.find('}') {
            let key = &rest[1..close];
            if let Some((_, value)) = vars.iter().find(|(k, _)| *k == key) {
                out.push_str(value);
                rest = &rest[close + 1..];
                continue;
            }
        }
        out.push('{');
        rest = &rest[1..];
    }
    out.push_str(rest);
    out
}

fn verdict_of(answer: &str) -> CovVerdict {
    let first = answer.lines().next().unwrap_or("").trim().to_lowercase();
    if first.starts_with("keep") {
        CovVerdict::Keep
    } else if first.starts_with("drop") {
        CovVerdict::Drop
    } else {
        CovVerdict::Revise
    }
}

/// Re-checks each draft in a fresh single-message context and filters the
/// drops. The template must contain `{justification}` and `{criteria}`;
/// `{material}` is optional. A backend failure marks that record Revise
/// with the error preserved, never silently kept as verified.
pub fn chain_of_verification(
    drafts: &[ExtractionRecord],
    rules: &[VerificationRule],
    backend: &dyn LlmBackend,
    template: &str,
) -> Result<(Vec<ExtractionRecord>, Vec<CovResult>), ToolsError> {
    if !template.contains("{justification}") {
        return Err(ToolsError::TemplatePlaceholder("justification"));
    }
    if !template.contains("{criteria}") {
        return Err(ToolsError::TemplatePlaceholder("criteria"));
    }
    let criteria_text = if rules.is_empty() {
        "- (no task-specific criteria; use general factual support)".to_string()
    } else {
        rules
            .iter()
            .map(|r| format!("- [{}] {}", r.id, r.criterion_text))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let rule_ids: Vec<String> = rules.iter().map(|r| r.id.clone()).collect();

    let mut kept = Vec::new();
    let mut audit = Vec::new();
    for (record_index, record) in drafts.iter().enumerate() {
        let query = fill_template(
            template,
            &[
                ("justification", record.evidence_text()),
                ("criteria", &criteria_text),
                ("material", &record.display_name()),
            ],
        );
        let (verdict, verifier_answer) =
            match backend.complete(0.0, &[ChatMessage::user(query)]) {
                Ok(answer) => (verdict_of(&answer), answer),
                Err(e) => (CovVerdict::Revise, format!("UNVERIFIED: {e}")),
            };
        if verdict != CovVerdict::Drop {
            kept.push(record.clone());
        }
        audit.push(CovResult {
            record_index,
            verdict,
            verifier_answer,
            rule_ids_checked: rule_ids.clone(),
        });
    }
    Ok((kept, audit))
}

/// Structure databases, in merge order.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum StructureSource {
    MaterialsProject,
    Cod,
    Csd,
    Qmof,
}

impl StructureSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            StructureSource::MaterialsProject => "materials_project",
            StructureSource::Cod => "cod",
            StructureSource::Csd => "csd",
            StructureSource::Qmof => "qmof",
        }
    }
}

impl fmt::Display for StructureSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureQuery {
    pub material_name: String,
    pub sources: Vec<StructureSource>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureHit {
    pub source: StructureSource,
    pub structure_id: String,
    pub formula: String,
}

/// One database connector. Lookup failures are reported as strings so the
/// caller can degrade them to warnings.
pub trait StructureClient: Send + Sync {
    fn source(&self) -> StructureSource;
    fn lookup(&self, material_name: &str) -> Result<Vec<StructureHit>, String>;
}

/// Canned lookup table keyed by case-insensitive material name.
pub struct FixtureStructureClient {
    source: StructureSource,
    rows: BTreeMap<String, Vec<StructureHit>>,
}

impl FixtureStructureClient {
    pub fn new<I, N, D, F>(source: StructureSource, rows: I) -> Self
    where
        I: IntoIterator<Item = (N, D, F)>,
        N: Into<String>,
        D: Into<String>,
        F: Into<String>,
    {
        let mut table: BTreeMap<String, Vec<StructureHit>> = BTreeMap::new();
        for (name, structure_id, formula) in rows {
            table
                .entry(name.into().to_lowercase())
                .or_default()
                .push(StructureHit {
                    source,
                    structure_id: structure_id.into(),
                    formula: formula.into(),
                });
        }
        FixtureStructureClient {
            source,
            rows: table,
        }
    }
}

impl StructureClient for FixtureStructureClient {
    fn source(&self) -> StructureSource {
        self.source
    }

    fn lookup(&self, material_name: &str) -> Result<Vec<StructureHit>, String> {
        Ok(self
            .rows
            .get(&material_name.to_lowercase())
            .cloned()
            .unwrap_or_default())
    }
}

/// Offline connectors with a few well-known frameworks, used when no real
/// database credentials are configured.
pub fn fixture_clients() -> Vec<Arc<dyn StructureClient>> {
    vec![
        Arc::new(FixtureStructureClient::new(
            StructureSource::Cod,
            [
                ("HKUST-1", "fixture-1", "Cu3(BTC)2"),
                ("MOF-5", "fixture-2", "Zn4O(BDC)3"),
            ],
        )),
        Arc::new(FixtureStructureClient::new(
            StructureSource::Csd,
            [("ZIF-8", "fixture-csd-1", "Zn(C4H5N2)2")],
        )),
        Arc::new(FixtureStructureClient::new(
            StructureSource::Qmof,
            [("ZIF-8", "fixture-qmof-1", "Zn(C4H5N2)2")],
        )),
    ]
}

/// Queries every requested source, merging hits in source order. A failing
/// or missing source becomes a warning instead of sinking the search.
pub fn dataset_search(
    query: &StructureQuery,
    clients: &[Arc<dyn StructureClient>],
) -> (Vec<StructureHit>, Vec<String>) {
    let mut hits = Vec::new();
    let mut warnings = Vec::new();
    if query.sources.is_empty() {
        warnings.push("no sources requested".to_string());
        return (hits, warnings);
    }
    let mut wanted = query.sources.clone();
    wanted.sort();
    wanted.dedup();
    for source in wanted {
        match clients.iter().find(|c| c.source() == source) {
            None => warnings.push(format!("{source}: no client configured")),
            Some(client) => match client.lookup(&query.material_name) {
                Ok(mut found) => hits.append(&mut found),
                Err(e) => warnings.push(format!("{source}: {e}")),
            },
        }
    }
    (hits, warnings)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().as_str() {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            other => Err(format!("unknown format {other:?} (expected csv or json)")),
        }
    }
}

fn join_list(items: &[String]) -> String {
    items.join("; ")
}

fn split_list(field: &str) -> Vec<String> {
    field
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

/// Writes records of one variant to CSV (lists `;`-joined) or a pretty JSON
/// array. An empty slice still produces a valid file (CSV keeps its
/// header). Returns the record count.
pub fn export_records(
    records: &[ExtractionRecord],
    variant: RecordVariant,
    format: ExportFormat,
    path: &Path,
) -> Result<u64, ToolsError> {
    for record in records {
        if record.variant() != variant {
            return Err(ToolsError::MixedVariants(
                format!("{variant:?}"),
                format!("{:?}", record.variant()),
            ));
        }
    }
    match format {
        ExportFormat::Csv => {
            let mut writer = csv::Writer::from_path(path).map_err(|e| ToolsError::Csv {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            let fail = |e: csv::Error| ToolsError::Csv {
                path: path.to_path_buf(),
                message: e.to_string(),
            };
            writer.write_record(variant.field_names()).map_err(fail)?;
            for record in records {
                let row: Vec<String> = match record {
                    ExtractionRecord::DopantHost(r) => vec![
                        join_list(&r.hosts),
                        join_list(&r.dopants),
                        r.source_sentence.clone(),
                    ],
                    ExtractionRecord::MofFormula(r) => vec![
                        r.mof_formula.clone(),
                        join_list(&r.guest_species),
                        r.source_passage_ref.clone(),
                    ],
                    ExtractionRecord::WaterStability(r) => vec![
                        r.mof_name.clone(),
                        r.label.as_str().to_string(),
                        r.justification.clone(),
                        r.doc_id.clone(),
                    ],
                };
                writer.write_record(&row).map_err(fail)?;
            }
            writer.flush().map_err(|e| ToolsError::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
        }
        ExportFormat::Json => {
            let text =
                serde_json::to_string_pretty(records).expect("records always serialize");
            std::fs::write(path, text + "\n").map_err(|e| ToolsError::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
        }
    }
    Ok(records.len() as u64)
}

/// Matches a CSV header against the pinned per-variant column sets.
pub fn variant_for_header(header: &[&str]) -> Option<RecordVariant> {
    [
        RecordVariant::DopantHost,
        RecordVariant::MofFormula,
        RecordVariant::WaterStability,
    ]
    .into_iter()
    .find(|v| v.field_names() == header)
}

/// Reads back a file written by [`export_records`], re-validating every
/// record.
pub fn import_records(path: &Path, format: ExportFormat) -> Result<Vec<ExtractionRecord>, ToolsError> {
    match format {
        ExportFormat::Csv => {
            let mut reader = csv::Reader::from_path(path).map_err(|e| ToolsError::Csv {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            let headers = reader
                .headers()
                .map_err(|e| ToolsError::Csv {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })?
                .clone();
            let header: Vec<&str> = headers.iter().collect();
            let variant = variant_for_header(&header).ok_or_else(|| ToolsError::Import {
                line: 1,
                message: format!("unrecognized header {header:?}"),
            })?;
            let mut records = Vec::new();
            for (i, row) in reader.records().enumerate() {
                let line = i + 2;
                let row = row.map_err(|e| ToolsError::Csv {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })?;
                let field = |j: usize| row.get(j).unwrap_or("").to_string();
                let record = match variant {
                    RecordVariant::DopantHost => ExtractionRecord::DopantHost(DopantHostRecord {
                        hosts: split_list(&field(0)),
                        dopants: split_list(&field(1)),
                        source_sentence: field(2),
                    }),
                    RecordVariant::MofFormula => ExtractionRecord::MofFormula(MofFormulaRecord {
                        mof_formula: field(0),
                        guest_species: split_list(&field(1)),
                        source_passage_ref: field(2),
                    }),
                    RecordVariant::WaterStability => {
                        let raw_label = field(1);
                        let label = parse_label(&raw_label).ok_or_else(|| ToolsError::Import {
                            line,
                            message: format!("unrecognized stability label {raw_label:?}"),
                        })?;
                        ExtractionRecord::WaterStability(WaterStabilityRecord {
                            mof_name: field(0),
                            label,
                            justification: field(2),
                            doc_id: field(3),
                        })
                    }
                };
                validate_record(&record, i)?;
                records.push(record);
            }
            Ok(records)
        }
        ExportFormat::Json => {
            let text = std::fs::read_to_string(path).map_err(|e| ToolsError::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
            let records: Vec<ExtractionRecord> =
                serde_json::from_str(&text).map_err(|e| ToolsError::Import {
                    line: e.line(),
                    message: e.to_string(),
                })?;
            for (i, record) in records.iter().enumerate() {
                validate_record(record, i)?;
                if record.variant() != records[0].variant() {
                    return Err(ToolsError::MixedVariants(
                        format!("{:?}", records[0].variant()),
                        format!("{:?}", record.variant()),
                    ));
                }
            }
            Ok(records)
        }
    }
}

/// Which variant a records file holds. CSV answers from the header even
/// when there are no rows; an empty JSON array has no variant.
pub fn stored_variant(
    path: &Path,
    format: ExportFormat,
) -> Result<Option<RecordVariant>, ToolsError> {
    match format {
        ExportFormat::Csv => {
            let mut reader = csv::Reader::from_path(path).map_err(|e| ToolsError::Csv {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            let headers = reader
                .headers()
                .map_err(|e| ToolsError::Csv {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })?
                .clone();
            let header: Vec<&str> = headers.iter().collect();
            variant_for_header(&header)
                .map(Some)
                .ok_or_else(|| ToolsError::Import {
                    line: 1,
                    message: format!("unrecognized header {header:?}"),
                })
        }
        ExportFormat::Json => {
            let records = import_records(path, format)?;
            Ok(records.first().map(ExtractionRecord::variant))
        }
    }
}

/// Ground-truth stability labels from CSV: either the two columns
/// `mof_name,label` or a full water-stability records file.
pub fn import_stability_truth(
    path: &Path,
) -> Result<Vec<(String, crate::schema::StabilityLabel)>, ToolsError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| ToolsError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| ToolsError::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .clone();
    let header: Vec<&str> = headers.iter().collect();
    if header == ["mof_name", "label"] {
        let mut rows = Vec::new();
        for (i, row) in reader.records().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| ToolsError::Csv {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            let name = row.get(0).unwrap_or("").trim().to_string();
            if name.is_empty() {
                return Err(ToolsError::Import {
                    line,
                    message: "empty mof_name".into(),
                });
            }
            let raw_label = row.get(1).unwrap_or("");
            let label = parse_label(raw_label).ok_or_else(|| ToolsError::Import {
                line,
                message: format!("unrecognized stability label {raw_label:?}"),
            })?;
            rows.push((name, label));
        }
        return Ok(rows);
    }
    if variant_for_header(&header) == Some(RecordVariant::WaterStability) {
        let records = import_records(path, ExportFormat::Csv)?;
        return Ok(records
            .into_iter()
            .map(|r| match r {
                ExtractionRecord::WaterStability(w) => (w.mof_name, w.label),
                _ => unreachable!("header pinned the variant"),
            })
            .collect());
    }
    Err(ToolsError::Import {
        line: 1,
        message: format!("unrecognized ground-truth header {header:?}"),
    })
}

/// Semantic passage retrieval as a registered tool.
pub fn doc_search_tool(
    provider: Arc<dyn EmbeddingProvider>,
    candidates: Vec<IndexEntry>,
    store: Arc<PassageStore>,
    cfg: MmrConfig,
) -> (ToolSpec, ToolHandler) {
    let spec = ToolSpec {
        name: "doc_search".into(),
        description:
            "searches the ingested document and returns the most relevant, mutually diverse passages"
                .into(),
        input_schema: "plain-text query".into(),
    };
    let handler: ToolHandler = Arc::new(move |input: &str| {
        doc_search(input, provider.as_ref(), &candidates, &store, &cfg)
            .map_err(|e| ToolError(e.to_string()))
    });
    (spec, handler)
}

/// Record verification as a registered tool: parses a draft record array,
/// re-checks each record, and reports per-record verdicts.
pub fn verify_records_tool(
    task: TaskDefinition,
    backend: Arc<dyn LlmBackend>,
    template: String,
) -> (ToolSpec, ToolHandler) {
    let spec = ToolSpec {
        name: "verify_records".into(),
        description:
            "re-checks each draft record against the task criteria and reports Keep/Drop/Revise verdicts"
                .into(),
        input_schema: "JSON array of draft records".into(),
    };
    let handler: ToolHandler = Arc::new(move |input: &str| {
        let records = parse_final_answer(input, &task)
            .map_err(|e| ToolError(format!("could not parse draft records: {e}")))?;
        let (kept, audit) =
            chain_of_verification(&records, &task.rules, backend.as_ref(), &template)
                .map_err(|e| ToolError(e.to_string()))?;
        let mut lines = Vec::new();
        for result in &audit {
            let record = &records[result.record_index];
            let first = result
                .verifier_answer
                .lines()
                .next()
                .unwrap_or("")
                .trim();
            lines.push(format!(
                "Record {} '{}': {} ({})",
                result.record_index,
                record.display_name(),
                result.verdict,
                first
            ));
        }
        lines.push(format!(
            "Verdict summary: kept {} of {} records.",
            kept.len(),
            records.len()
        ));
        Ok(lines.join("\n"))
    });
    (spec, handler)
}

/// Structure database lookup as a registered tool.
pub fn dataset_search_tool(
    clients: Vec<Arc<dyn StructureClient>>,
    sources: Vec<StructureSource>,
) -> (ToolSpec, ToolHandler) {
    let spec = ToolSpec {
        name: "dataset_search".into(),
        description: "looks a material name up in the configured structure databases".into(),
        input_schema: "material name".into(),
    };
    let handler: ToolHandler = Arc::new(move |input: &str| {
        let material_name = input.trim().to_string();
        if material_name.is_empty() {
            return Err(ToolError("material name is empty".into()));
        }
        let query = StructureQuery {
            material_name: material_name.clone(),
            sources: sources.clone(),
        };
        let (hits, warnings) = dataset_search(&query, &clients);
        let mut lines: Vec<String> = hits
            .iter()
            .map(|h| format!("[{}] {}: {}", h.source, h.structure_id, h.formula))
            .collect();
        lines.extend(warnings.iter().map(|w| format!("WARNING: {w}")));
        if hits.is_empty() {
            lines.push(format!("No structures found for '{material_name}'."));
        }
        Ok(lines.join("\n"))
    });
    (spec, handler)
}

/// File export as a registered tool. Available but not wired into
/// extraction sessions by default; the pipeline exports once after
/// verification instead of trusting the model to do it.
pub fn export_records_tool(
    task: TaskDefinition,
    format: ExportFormat,
    path: PathBuf,
) -> (ToolSpec, ToolHandler) {
    let spec = ToolSpec {
        name: "export_records".into(),
        description: "writes a JSON array of records to the configured output file".into(),
        input_schema: "JSON array of records".into(),
    };
    let handler: ToolHandler = Arc::new(move |input: &str| {
        let records = parse_final_answer(input, &task)
            .map_err(|e| ToolError(format!("could not parse records: {e}")))?;
        let count = export_records(&records, task.output_variant, format, &path)
            .map_err(|e| ToolError(e.to_string()))?;
        Ok(format!("Exported {count} records to {}", path.display()))
    });
    (spec, handler)
}
