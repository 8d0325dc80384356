//! Typed extraction records and the parser that turns an agent's final
//! answer into validated instances.
//!
//! The expected payload is a JSON array of objects (optionally wrapped in
//! code fences or a `{"records": [...]}` object). Validation is strict by
//! default: unknown fields and invariant violations are errors carrying the
//! record index and field name, so a run can be debugged from its logs.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("payload is not a JSON array of records (line {line}, column {column}): {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("record {index}, field {field:?}: {message}")]
    Validation {
        index: usize,
        field: String,
        message: String,
    },
    #[error("invalid task definition: {0}")]
    Task(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Ternary water-stability outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StabilityLabel {
    Stable,
    Unstable,
    NotProvided,
}

impl StabilityLabel {
    pub const ALL: [StabilityLabel; 3] = [
        StabilityLabel::Stable,
        StabilityLabel::Unstable,
        StabilityLabel::NotProvided,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            StabilityLabel::Stable => "Stable",
            StabilityLabel::Unstable => "Unstable",
            StabilityLabel::NotProvided => "Not provided",
        }
    }

    /// Position in [`StabilityLabel::ALL`]; indexes confusion matrices.
    pub fn index(&self) -> usize {
        match self {
            StabilityLabel::Stable => 0,
            StabilityLabel::Unstable => 1,
            StabilityLabel::NotProvided => 2,
        }
    }
}

impl fmt::Display for StabilityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for StabilityLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for StabilityLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        parse_label(&raw)
            .ok_or_else(|| D::Error::custom(format!("unrecognized stability label {raw:?}")))
    }
}

/// Maps free-form label text onto the ternary enum. Matching is
/// case-insensitive with hyphens/underscores folded to spaces, so
/// "water-stable", "Water Stable", and "stable" all land on `Stable`.
pub fn parse_label(raw: &str) -> Option<StabilityLabel> {
    let folded: String = raw
        .to_lowercase()
        .chars()
        .map(|c| if c == '-' || c == '_' { ' ' } else { c })
        .collect();
    let folded = folded.split_whitespace().collect::<Vec<_>>().join(" ");
    match folded.as_str() {
        "stable" | "yes" | "water stable" | "true" => Some(StabilityLabel::Stable),
        "unstable" | "no" | "water unstable" | "not stable" | "false" => {
            Some(StabilityLabel::Unstable)
        }
        "not provided" | "notprovided" | "n/a" | "na" | "unknown" | "not reported" | "none" => {
            Some(StabilityLabel::NotProvided)
        }
        _ => None,
    }
}

/// Host/dopant pairs found in one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DopantHostRecord {
    pub hosts: Vec<String>,
    pub dopants: Vec<String>,
    pub source_sentence: String,
}

/// A framework formula and the species it hosts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MofFormulaRecord {
    pub mof_formula: String,
    pub guest_species: Vec<String>,
    pub source_passage_ref: String,
}

/// A named framework with its water-stability verdict and the sentence
/// backing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaterStabilityRecord {
    pub mof_name: String,
    pub label: StabilityLabel,
    pub justification: String,
    pub doc_id: String,
}

/// Any extraction output. Field sets are disjoint, so untagged JSON
/// round-trips unambiguously.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExtractionRecord {
    DopantHost(DopantHostRecord),
    MofFormula(MofFormulaRecord),
    WaterStability(WaterStabilityRecord),
}

impl ExtractionRecord {
    pub fn variant(&self) -> RecordVariant {
        match self {
            ExtractionRecord::DopantHost(_) => RecordVariant::DopantHost,
            ExtractionRecord::MofFormula(_) => RecordVariant::MofFormula,
            ExtractionRecord::WaterStability(_) => RecordVariant::WaterStability,
        }
    }

    /// Human-readable name of the material(s) the record is about.
    pub fn display_name(&self) -> String {
        match self {
            ExtractionRecord::DopantHost(r) => {
                let mut names: Vec<&str> = r.hosts.iter().map(String::as_str).collect();
                names.extend(r.dopants.iter().map(String::as_str));
                names.join(", ")
            }
            ExtractionRecord::MofFormula(r) => r.mof_formula.clone(),
            ExtractionRecord::WaterStability(r) => r.mof_name.clone(),
        }
    }

    /// The source text (or reference) the record leans on.
    pub fn evidence_text(&self) -> &str {
        match self {
            ExtractionRecord::DopantHost(r) => &r.source_sentence,
            ExtractionRecord::MofFormula(r) => &r.source_passage_ref,
            ExtractionRecord::WaterStability(r) => &r.justification,
        }
    }
}

/// Which record shape a task produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordVariant {
    DopantHost,
    MofFormula,
    WaterStability,
}

impl RecordVariant {
    /// Field names in their pinned order; doubles as the CSV header.
    pub fn field_names(&self) -> &'static [&'static str] {
        match self {
            RecordVariant::DopantHost => &["hosts", "dopants", "source_sentence"],
            RecordVariant::MofFormula => &["mof_formula", "guest_species", "source_passage_ref"],
            RecordVariant::WaterStability => &["mof_name", "label", "justification", "doc_id"],
        }
    }
}

/// The three bundled extraction tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    HostDopant,
    MofFormula,
    WaterStability,
}

impl TaskId {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskId::HostDopant => "host_dopant",
            TaskId::MofFormula => "mof_formula",
            TaskId::WaterStability => "water_stability",
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "host_dopant" => Ok(TaskId::HostDopant),
            "mof_formula" => Ok(TaskId::MofFormula),
            "water_stability" => Ok(TaskId::WaterStability),
            other => Err(SchemaError::Task(format!(
                "unknown task id {other:?}; expected one of host_dopant, mof_formula, water_stability"
            ))),
        }
    }
}

/// One criterion a verifier checks a drafted record against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationRule {
    pub id: String,
    pub criterion_text: String,
    pub property: String,
}

/// A complete extraction task: the prompt the agent runs, the record shape
/// it must emit, and the criteria a verifier applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskDefinition {
    pub id: TaskId,
    pub prompt_template: String,
    pub output_variant: RecordVariant,
    #[serde(default)]
    pub rules: Vec<VerificationRule>,
}

impl TaskDefinition {
    /// The task definition shipped with the library.
    pub fn bundled(id: TaskId) -> TaskDefinition {
        let raw = match id {
            TaskId::HostDopant => include_str!("../tasks/host_dopant.json"),
            TaskId::MofFormula => include_str!("../tasks/mof_formula.json"),
            TaskId::WaterStability => include_str!("../tasks/water_stability.json"),
        };
        let def: TaskDefinition =
            serde_json::from_str(raw).expect("bundled task definitions parse");
        def.validate().expect("bundled task definitions are valid");
        def
    }

    pub fn load(path: &Path) -> Result<TaskDefinition, SchemaError> {
        let raw = std::fs::read_to_string(path).map_err(|source| SchemaError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let def: TaskDefinition =
            serde_json::from_str(&raw).map_err(|e| SchemaError::Task(e.to_string()))?;
        def.validate()?;
        Ok(def)
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        for field in self.output_variant.field_names() {
            if !self.prompt_template.contains(field) {
                return Err(SchemaError::Task(format!(
                    "prompt template must mention the output field {field:?}"
                )));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for rule in &self.rules {
            if rule.criterion_text.trim().is_empty() {
                return Err(SchemaError::Task(format!(
                    "rule {:?} has empty criterion text",
                    rule.id
                )));
            }
            if !seen.insert(&rule.id) {
                return Err(SchemaError::Task(format!("duplicate rule id {:?}", rule.id)));
            }
        }
        Ok(())
    }
}

/// Unicode NFC plus whitespace cleanup: trims and collapses internal runs
/// (any kind of whitespace) to single ASCII spaces. Case is preserved.
pub fn normalize_entity(raw: &str) -> String {
    let composed: String = raw.nfc().collect();
    composed.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn strip_code_fences(text: &str) -> &str {
    let trimmed = text.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let body = match rest.find('\n') {
        Some(i) => &rest[i + 1..],
        None => "",
    };
    let body = body.trim_end();
    body.strip_suffix("```").map(str::trim_end).unwrap_or(body)
}

fn payload_items(text: &str) -> Result<Vec<serde_json::Value>, SchemaError> {
    let stripped = strip_code_fences(text);
    let value: serde_json::Value =
        serde_json::from_str(stripped).map_err(|e| SchemaError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
    match value {
        serde_json::Value::Array(items) => Ok(items),
        serde_json::Value::Object(mut map) if map.len() == 1 && map.contains_key("records") => {
            match map.remove("records") {
                Some(serde_json::Value::Array(items)) => Ok(items),
                _ => Err(SchemaError::Parse {
                    line: 1,
                    column: 1,
                    message: "\"records\" key must hold an array".into(),
                }),
            }
        }
        _ => Err(SchemaError::Parse {
            line: 1,
            column: 1,
            message: "expected a JSON array of record objects".into(),
        }),
    }
}

fn validation(index: usize, field: &str, message: impl Into<String>) -> SchemaError {
    SchemaError::Validation {
        index,
        field: field.to_string(),
        message: message.into(),
    }
}

/// Missing and null fields read as empty; a present value must have the
/// right type.
fn string_field(
    obj: &serde_json::Map<String, serde_json::Value>,
    index: usize,
    field: &str,
) -> Result<String, SchemaError> {
    match obj.get(field) {
        None | Some(serde_json::Value::Null) => Ok(String::new()),
        Some(serde_json::Value::String(s)) => Ok(s.trim().to_string()),
        Some(_) => Err(validation(index, field, "expected a string")),
    }
}

fn list_field(
    obj: &serde_json::Map<String, serde_json::Value>,
    index: usize,
    field: &str,
) -> Result<Vec<String>, SchemaError> {
    match obj.get(field) {
        None | Some(serde_json::Value::Null) => Ok(Vec::new()),
        Some(serde_json::Value::Array(items)) => {
            let mut out = Vec::with_capacity(items.len());
            for item in items {
                match item {
                    serde_json::Value::String(s) => {
                        let trimmed = s.trim();
                        if !trimmed.is_empty() {
                            out.push(trimmed.to_string());
                        }
                    }
                    _ => return Err(validation(index, field, "expected an array of strings")),
                }
            }
            Ok(out)
        }
        Some(_) => Err(validation(index, field, "expected an array of strings")),
    }
}

fn record_from_value(
    value: &serde_json::Value,
    index: usize,
    variant: RecordVariant,
) -> Result<ExtractionRecord, SchemaError> {
    let obj = value
        .as_object()
        .ok_or_else(|| validation(index, "(record)", "expected a JSON object"))?;
    let allowed = variant.field_names();
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(validation(index, key, "unknown field"));
        }
    }
    match variant {
        RecordVariant::DopantHost => {
            let hosts = list_field(obj, index, "hosts")?;
            let dopants = list_field(obj, index, "dopants")?;
            let source_sentence = string_field(obj, index, "source_sentence")?;
            if hosts.is_empty() && dopants.is_empty() {
                return Err(validation(
                    index,
                    "hosts",
                    "hosts and dopants cannot both be empty",
                ));
            }
            if source_sentence.is_empty() {
                return Err(validation(index, "source_sentence", "must be non-empty"));
            }
            Ok(ExtractionRecord::DopantHost(DopantHostRecord {
                hosts,
                dopants,
                source_sentence,
            }))
        }
        RecordVariant::MofFormula => {
            let mof_formula = string_field(obj, index, "mof_formula")?;
            let guest_species = list_field(obj, index, "guest_species")?;
            let source_passage_ref = string_field(obj, index, "source_passage_ref")?;
            if mof_formula.is_empty() {
                return Err(validation(index, "mof_formula", "must be non-empty"));
            }
            Ok(ExtractionRecord::MofFormula(MofFormulaRecord {
                mof_formula,
                guest_species,
                source_passage_ref,
            }))
        }
        RecordVariant::WaterStability => {
            let mof_name = string_field(obj, index, "mof_name")?;
            let raw_label = match obj.get("label") {
                Some(serde_json::Value::String(s)) => s.clone(),
                Some(_) => return Err(validation(index, "label", "expected a string")),
                None => return Err(validation(index, "label", "missing field")),
            };
            let label = parse_label(&raw_label)
                .ok_or_else(|| validation(index, "label", format!("unrecognized label {raw_label:?}")))?;
            let justification = string_field(obj, index, "justification")?;
            let doc_id = string_field(obj, index, "doc_id")?;
            if mof_name.is_empty() {
                return Err(validation(index, "mof_name", "must be non-empty"));
            }
            if label != StabilityLabel::NotProvided && justification.is_empty() {
                return Err(validation(
                    index,
                    "justification",
                    "required for Stable and Unstable labels",
                ));
            }
            Ok(ExtractionRecord::WaterStability(WaterStabilityRecord {
                mof_name,
                label,
                justification,
                doc_id,
            }))
        }
    }
}

/// Validates an already-deserialized record against its variant invariants.
pub fn validate_record(record: &ExtractionRecord, index: usize) -> Result<(), SchemaError> {
    match record {
        ExtractionRecord::DopantHost(r) => {
            if r.hosts.iter().chain(&r.dopants).any(|e| e.trim().is_empty()) {
                return Err(validation(index, "hosts", "entity names must be non-empty"));
            }
            if r.hosts.is_empty() && r.dopants.is_empty() {
                return Err(validation(
                    index,
                    "hosts",
                    "hosts and dopants cannot both be empty",
                ));
            }
            if r.source_sentence.trim().is_empty() {
                return Err(validation(index, "source_sentence", "must be non-empty"));
            }
        }
        ExtractionRecord::MofFormula(r) => {
            if r.mof_formula.trim().is_empty() {
                return Err(validation(index, "mof_formula", "must be non-empty"));
            }
            if r.guest_species.iter().any(|e| e.trim().is_empty()) {
                return Err(validation(
                    index,
                    "guest_species",
                    "entity names must be non-empty",
                ));
            }
        }
        ExtractionRecord::WaterStability(r) => {
            if r.mof_name.trim().is_empty() {
                return Err(validation(index, "mof_name", "must be non-empty"));
            }
            if r.label != StabilityLabel::NotProvided && r.justification.trim().is_empty() {
                return Err(validation(
                    index,
                    "justification",
                    "required for Stable and Unstable labels",
                ));
            }
        }
    }
    Ok(())
}

/// Parses a final answer into validated records; any invalid record fails
/// the whole call.
pub fn parse_final_answer(
    final_text: &str,
    task: &TaskDefinition,
) -> Result<Vec<ExtractionRecord>, SchemaError> {
    let items = payload_items(final_text)?;
    items
        .iter()
        .enumerate()
        .map(|(i, v)| record_from_value(v, i, task.output_variant))
        .collect()
}

/// Like [`parse_final_answer`] but skips invalid records, returning them as
/// errors alongside the good ones. Payload-level failures still error.
pub fn parse_final_answer_lenient(
    final_text: &str,
    task: &TaskDefinition,
) -> Result<(Vec<ExtractionRecord>, Vec<SchemaError>), SchemaError> {
    let items = payload_items(final_text)?;
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (i, v) in items.iter().enumerate() {
        match record_from_value(v, i, task.output_variant) {
            Ok(r) => records.push(r),
            Err(e) => skipped.push(e),
        }
    }
    Ok((records, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn task(variant: RecordVariant) -> TaskDefinition {
        let id = match variant {
            RecordVariant::DopantHost => TaskId::HostDopant,
            RecordVariant::MofFormula => TaskId::MofFormula,
            RecordVariant::WaterStability => TaskId::WaterStability,
        };
        TaskDefinition::bundled(id)
    }

    #[test]
    fn empty_array_parses_to_no_records() {
        let t = task(RecordVariant::WaterStability);
        assert!(parse_final_answer("[]", &t).unwrap().is_empty());
    }

    #[test]
    fn label_case_is_normalized() {
        let t = task(RecordVariant::WaterStability);
        let records = parse_final_answer(
            r#"[{"mof_name":"bio-MOF-11","label":"stable","justification":"resists water","doc_id":"d1"}]"#,
            &t,
        )
        .unwrap();
        match &records[0] {
            ExtractionRecord::WaterStability(r) => {
                assert_eq!(r.label, StabilityLabel::Stable);
                assert_eq!(r.mof_name, "bio-MOF-11");
            }
            other => panic!("wrong variant: {other:?}"),
        }
    }

    #[test]
    fn records_wrapper_and_code_fences_accepted() {
        let t = task(RecordVariant::MofFormula);
        let payload = "```json\n{\"records\":[{\"mof_formula\":\"Cu3(BTC)2\",\"guest_species\":[],\"source_passage_ref\":\"d#0\"}]}\n```";
        let records = parse_final_answer(payload, &t).unwrap();
        assert_eq!(records.len(), 1);
    }

    #[test]
    fn unknown_field_is_rejected_with_location() {
        let t = task(RecordVariant::WaterStability);
        let err = parse_final_answer(
            r#"[{"mof_name":"x","label":"stable","justification":"y","doc_id":"d","extra":1}]"#,
            &t,
        )
        .unwrap_err();
        match err {
            SchemaError::Validation { index, field, .. } => {
                assert_eq!(index, 0);
                assert_eq!(field, "extra");
            }
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn non_array_payload_is_parse_error() {
        let t = task(RecordVariant::WaterStability);
        assert!(matches!(
            parse_final_answer("{\"answer\": 1}", &t),
            Err(SchemaError::Parse { .. })
        ));
        assert!(matches!(
            parse_final_answer("not json at all", &t),
            Err(SchemaError::Parse { .. })
        ));
    }

    #[test]
    fn dopant_host_invariants_enforced() {
        let t = task(RecordVariant::DopantHost);
        let empty_both = r#"[{"hosts":[],"dopants":[],"source_sentence":"s"}]"#;
        assert!(parse_final_answer(empty_both, &t).is_err());
        let one_side = r#"[{"hosts":[],"dopants":["Nb"],"source_sentence":"Nb-doped sample"}]"#;
        assert!(parse_final_answer(one_side, &t).is_ok());
        let no_sentence = r#"[{"hosts":["ZnO"],"dopants":[],"source_sentence":""}]"#;
        assert!(parse_final_answer(no_sentence, &t).is_err());
    }

    #[test]
    fn stability_justification_rules() {
        let t = task(RecordVariant::WaterStability);
        let stable_no_just =
            r#"[{"mof_name":"m","label":"Stable","justification":"","doc_id":"d"}]"#;
        assert!(parse_final_answer(stable_no_just, &t).is_err());
        let np_no_just =
            r#"[{"mof_name":"m","label":"Not provided","justification":"","doc_id":"d"}]"#;
        assert!(parse_final_answer(np_no_just, &t).is_ok());
        let np_missing_fields = r#"[{"mof_name":"m","label":"N/A"}]"#;
        let records = parse_final_answer(np_missing_fields, &t).unwrap();
        match &records[0] {
            ExtractionRecord::WaterStability(r) => {
                assert_eq!(r.label, StabilityLabel::NotProvided);
                assert_eq!(r.justification, "");
                assert_eq!(r.doc_id, "");
            }
            other => panic!("wrong variant: {other:?}"),
        }
    }

    #[test]
    fn lenient_mode_skips_bad_records() {
        let t = task(RecordVariant::WaterStability);
        let payload = r#"[
            {"mof_name":"good-1","label":"yes","justification":"holds up in water","doc_id":"d"},
            {"mof_name":"","label":"no","justification":"x","doc_id":"d"},
            {"mof_name":"good-2","label":"unknown","justification":"","doc_id":"d"}
        ]"#;
        let (records, skipped) = parse_final_answer_lenient(payload, &t).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(skipped.len(), 1);
        assert!(parse_final_answer(payload, &t).is_err());
    }

    #[test]
    fn list_entries_are_trimmed_and_empties_dropped() {
        let t = task(RecordVariant::DopantHost);
        let payload = r#"[{"hosts":["  ZnO ", ""],"dopants":["Al","  "],"source_sentence":"s"}]"#;
        let records = parse_final_answer(payload, &t).unwrap();
        match &records[0] {
            ExtractionRecord::DopantHost(r) => {
                assert_eq!(r.hosts, vec!["ZnO"]);
                assert_eq!(r.dopants, vec!["Al"]);
            }
            other => panic!("wrong variant: {other:?}"),
        }
    }

    #[test]
    fn label_synonyms_map_correctly() {
        let cases = [
            ("stable", Some(StabilityLabel::Stable)),
            ("YES", Some(StabilityLabel::Stable)),
            ("water-stable", Some(StabilityLabel::Stable)),
            ("Water Stable", Some(StabilityLabel::Stable)),
            ("unstable", Some(StabilityLabel::Unstable)),
            ("not stable", Some(StabilityLabel::Unstable)),
            ("water-unstable", Some(StabilityLabel::Unstable)),
            ("No", Some(StabilityLabel::Unstable)),
            ("Not Provided", Some(StabilityLabel::NotProvided)),
            ("not_provided", Some(StabilityLabel::NotProvided)),
            ("N/A", Some(StabilityLabel::NotProvided)),
            ("unknown", Some(StabilityLabel::NotProvided)),
            ("not reported", Some(StabilityLabel::NotProvided)),
            ("", None),
            ("probably", None),
        ];
        for (raw, expected) in cases {
            assert_eq!(parse_label(raw), expected, "label {raw:?}");
        }
    }

    #[test]
    fn label_serializes_to_display_form() {
        assert_eq!(
            serde_json::to_string(&StabilityLabel::NotProvided).unwrap(),
            "\"Not provided\""
        );
        assert_eq!(StabilityLabel::Stable.to_string(), "Stable");
        let parsed: StabilityLabel = serde_json::from_str("\"water-stable\"").unwrap();
        assert_eq!(parsed, StabilityLabel::Stable);
    }

    #[test]
    fn normalize_entity_cleans_whitespace_and_composes() {
        assert_eq!(
            normalize_entity("  ZnO2   nanoparticles "),
            "ZnO2 nanoparticles"
        );
        assert_eq!(normalize_entity(""), "");
        assert_eq!(normalize_entity("ZnO2\u{00a0}\u{3000}x\tfilm"), "ZnO2 x film");
        assert_eq!(normalize_entity("A\u{030a}ngstro\u{0308}m"), "\u{c5}ngstr\u{f6}m");
    }

    #[test]
    fn bundled_tasks_are_valid() {
        for id in [TaskId::HostDopant, TaskId::MofFormula, TaskId::WaterStability] {
            let def = TaskDefinition::bundled(id);
            assert_eq!(def.id, id);
            def.validate().unwrap();
        }
        let ws = TaskDefinition::bundled(TaskId::WaterStability);
        assert_eq!(ws.rules.len(), 5);
        assert_eq!(ws.output_variant, RecordVariant::WaterStability);
        let ids: std::collections::BTreeSet<_> = ws.rules.iter().map(|r| &r.id).collect();
        assert_eq!(ids.len(), 5);
        assert!(TaskDefinition::bundled(TaskId::HostDopant).rules.is_empty());
    }

    #[test]
    fn task_load_validates_template() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("task.json");
        std::fs::write(
            &path,
            r#"{"id":"water_stability","prompt_template":"no field names here","output_variant":"water_stability","rules":[]}"#,
        )
        .unwrap();
        assert!(matches!(
            TaskDefinition::load(&path),
            Err(SchemaError::Task(_))
        ));
    }

    #[test]
    fn csv_header_orders_are_pinned() {
        assert_eq!(
            RecordVariant::DopantHost.field_names(),
            ["hosts", "dopants", "source_sentence"]
        );
        assert_eq!(
            RecordVariant::MofFormula.field_names(),
            ["mof_formula", "guest_species", "source_passage_ref"]
        );
        assert_eq!(
            RecordVariant::WaterStability.field_names(),
            ["mof_name", "label", "justification", "doc_id"]
        );
    }

    #[test]
    fn untagged_enum_round_trips_each_variant() {
        let records = vec![
            ExtractionRecord::DopantHost(DopantHostRecord {
                hosts: vec!["ZnO".into()],
                dopants: vec!["Al".into()],
                source_sentence: "Al-doped ZnO films".into(),
            }),
            ExtractionRecord::MofFormula(MofFormulaRecord {
                mof_formula: "Cu3(BTC)2".into(),
                guest_species: vec!["H2O".into()],
                source_passage_ref: "d#2".into(),
            }),
            ExtractionRecord::WaterStability(WaterStabilityRecord {
                mof_name: "HKUST-1".into(),
                label: StabilityLabel::Unstable,
                justification: "framework collapses in water".into(),
                doc_id: "d1".into(),
            }),
        ];
        let json = serde_json::to_string(&records).unwrap();
        let back: Vec<ExtractionRecord> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, records);
    }

    fn entity_word() -> impl Strategy<Value = String> {
        proptest::string::string_regex("[A-Za-z0-9][A-Za-z0-9()\\[\\]-]{0,8}").unwrap()
    }

    fn entity() -> impl Strategy<Value = String> {
        proptest::collection::vec(entity_word(), 1..3).prop_map(|words| words.join(" "))
    }

    fn record_strategy() -> impl Strategy<Value = ExtractionRecord> {
        let dh = (
            proptest::collection::vec(entity(), 1..3),
            proptest::collection::vec(entity(), 0..3),
            entity(),
        )
            .prop_map(|(hosts, dopants, source_sentence)| {
                ExtractionRecord::DopantHost(DopantHostRecord {
                    hosts,
                    dopants,
                    source_sentence,
                })
            });
        let mf = (entity(), proptest::collection::vec(entity(), 0..3), entity())
            .prop_map(|(mof_formula, guest_species, source_passage_ref)| {
                ExtractionRecord::MofFormula(MofFormulaRecord {
                    mof_formula,
                    guest_species,
                    source_passage_ref,
                })
            });
        let ws = (
            entity(),
            prop_oneof![
                Just(StabilityLabel::Stable),
                Just(StabilityLabel::Unstable),
                Just(StabilityLabel::NotProvided)
            ],
            entity(),
            entity(),
        )
            .prop_map(|(mof_name, label, justification, doc_id)| {
                ExtractionRecord::WaterStability(WaterStabilityRecord {
                    mof_name,
                    label,
                    justification,
                    doc_id,
                })
            });
        prop_oneof![dh, mf, ws]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn generated_records_round_trip(record in record_strategy()) {
            let variant = record.variant();
            let json = serde_json::to_string(&vec![record.clone()]).unwrap();
            let def = task(variant);
            let parsed = parse_final_answer(&json, &def).unwrap();
            prop_assert_eq!(parsed, vec![record]);
        }

        #[test]
        fn parser_is_total_over_garbage(input in ".*") {
            let def = task(RecordVariant::WaterStability);
            let _ = parse_final_answer(&input, &def);
            let _ = parse_final_answer_lenient(&input, &def);
        }
    }
}
