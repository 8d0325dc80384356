//! `export`: convert a records file between CSV and JSON, re-validating
//! every record on the way through.

use std::path::Path;

use anyhow::{bail, Result};

use extractor_core::schema::RecordVariant;
use extractor_core::tools::{export_records, import_records, stored_variant, ExportFormat};

fn infer_format(path: &Path) -> Result<ExportFormat> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_lowercase())
        .as_deref()
    {
        Some("csv") => Ok(ExportFormat::Csv),
        Some("json") => Ok(ExportFormat::Json),
        other => bail!(
            "cannot infer the format of {} (extension {other:?}); use .csv or .json",
            path.display()
        ),
    }
}

pub fn cmd_export(input: &Path, output: &Path, format: ExportFormat) -> Result<i32> {
    let input_format = infer_format(input)?;
    let records = import_records(input, input_format)?;
    let variant = match stored_variant(input, input_format)? {
        Some(v) => v,
        None if format == ExportFormat::Json => RecordVariant::WaterStability,
        None => bail!(
            "cannot infer a CSV header from the empty input {}",
            input.display()
        ),
    };
    let count = export_records(&records, variant, format, output)?;
    println!(
        "{}",
        serde_json::json!({
            "records": count,
            "output": output.display().to_string(),
        })
    );
    Ok(0)
}
