//! `score`: compare a prediction CSV against ground truth and emit a
//! metrics report as JSON plus a human-readable table on stderr.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use extractor_core::eval::{score_field, score_ternary, FieldScore, MetricsReport};
use extractor_core::schema::{ExtractionRecord, TaskDefinition, TaskId, WaterStabilityRecord};
use extractor_core::tools::{import_records, import_stability_truth, ExportFormat};

fn scored_fields(task_id: TaskId) -> &'static [&'static str] {
    match task_id {
        TaskId::HostDopant => &["hosts", "dopants"],
        TaskId::MofFormula => &["mof_formula", "guest_species"],
        TaskId::WaterStability => &[],
    }
}

fn field_values(record: &ExtractionRecord, field: &str) -> Vec<String> {
    match (record, field) {
        (ExtractionRecord::DopantHost(r), "hosts") => r.hosts.clone(),
        (ExtractionRecord::DopantHost(r), "dopants") => r.dopants.clone(),
        (ExtractionRecord::MofFormula(r), "mof_formula") => {
            if r.mof_formula.is_empty() {
                Vec::new()
            } else {
                vec![r.mof_formula.clone()]
            }
        }
        (ExtractionRecord::MofFormula(r), "guest_species") => r.guest_species.clone(),
        _ => Vec::new(),
    }
}

fn render_table(report: &MetricsReport) -> String {
    let mut lines = Vec::new();
    if !report.per_field.is_empty() {
        lines.push(format!(
            "{:<14} {:>9} {:>9} {:>9} {:>6} {:>6} {:>6}",
            "field", "precision", "recall", "f1", "tp", "fp", "fn"
        ));
        for (field, fs) in &report.per_field {
            lines.push(format!(
                "{:<14} {:>9.4} {:>9.4} {:>9.4} {:>6} {:>6} {:>6}",
                field,
                fs.score.precision,
                fs.score.recall,
                fs.score.f1,
                fs.tally.true_positives,
                fs.tally.false_positives,
                fs.tally.false_negatives
            ));
        }
    }
    if let Some(t) = &report.ternary {
        lines.push(format!(
            "accuracy {:.4} ({} of {} matched)",
            t.accuracy,
            t.confusion.trace(),
            t.confusion.matched()
        ));
        lines.push(format!(
            "yield    {:.4} ({} of {} ground-truth entries)",
            t.yield_fraction,
            t.confusion.matched(),
            t.confusion.n_ground_truth
        ));
        lines.push("confusion (rows truth, cols prediction; S/U/NP):".to_string());
        for row in t.confusion.counts {
            lines.push(format!("  {:>5} {:>5} {:>5}", row[0], row[1], row[2]));
        }
        if !t.spurious_names.is_empty() {
            lines.push(format!("spurious: {}", t.spurious_names.join(", ")));
        }
    }
    lines.join("\n")
}

pub fn cmd_score(task: &str, pred_path: &Path, truth_path: &Path, out: Option<&Path>) -> Result<i32> {
    let task_id: TaskId = task.parse().map_err(|e| anyhow!("{e}"))?;
    let task_def = TaskDefinition::bundled(task_id);

    let preds = import_records(pred_path, ExportFormat::Csv)
        .with_context(|| format!("prediction file {}", pred_path.display()))?;
    if let Some(first) = preds.first() {
        if first.variant() != task_def.output_variant {
            bail!(
                "prediction file holds {:?} records but task {task_id} expects {:?}",
                first.variant(),
                task_def.output_variant
            );
        }
    }

    let mut report = MetricsReport::default();
    match task_id {
        TaskId::WaterStability => {
            let truth = import_stability_truth(truth_path)
                .with_context(|| format!("ground-truth file {}", truth_path.display()))?;
            let pred_ws: Vec<WaterStabilityRecord> = preds
                .into_iter()
                .map(|r| match r {
                    ExtractionRecord::WaterStability(w) => w,
                    _ => unreachable!("variant checked above"),
                })
                .collect();
            let ternary = score_ternary(&truth, &pred_ws).map_err(|e| anyhow!("{e}"))?;
            report.ternary = Some(ternary);
        }
        TaskId::HostDopant | TaskId::MofFormula => {
            let truths = import_records(truth_path, ExportFormat::Csv)
                .with_context(|| format!("ground-truth file {}", truth_path.display()))?;
            if let Some(first) = truths.first() {
                if first.variant() != task_def.output_variant {
                    bail!(
                        "ground-truth file holds {:?} records but task {task_id} expects {:?}",
                        first.variant(),
                        task_def.output_variant
                    );
                }
            }
            if truths.len() != preds.len() {
                bail!(
                    "{} prediction rows vs {} ground-truth rows; word scoring aligns row by row",
                    preds.len(),
                    truths.len()
                );
            }
            for field in scored_fields(task_id) {
                let t: Vec<Vec<String>> = truths.iter().map(|r| field_values(r, field)).collect();
                let p: Vec<Vec<String>> = preds.iter().map(|r| field_values(r, field)).collect();
                let (tally, score) = score_field(&t, &p, true).map_err(|e| anyhow!("{e}"))?;
                report
                    .per_field
                    .insert(field.to_string(), FieldScore { tally, score });
            }
        }
    }

    let json = serde_json::to_string_pretty(&report).expect("reports always serialize") + "\n";
    match out {
        Some(path) => {
            std::fs::write(path, &json)
                .with_context(|| format!("cannot write {}", path.display()))?;
            eprintln!("report written to {}", path.display());
        }
        None => print!("{json}"),
    }
    eprintln!("{}", render_table(&report));
    Ok(0)
}
