use std::fs;
use std::path::{Path, PathBuf};

use extractor_cli::run_cli;
use extractor_core::corpus::{self, ChunkConfig};
use extractor_core::schema::{parse_final_answer, RecordVariant, TaskDefinition, TaskId};
use extractor_core::tools::{export_records, ExportFormat};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn run(args: &[&str]) -> i32 {
    let mut full = vec!["extractor"];
    full.extend_from_slice(args);
    run_cli(full)
}

fn write_config(dir: &Path, corpus: &Path, script: &Path, seed: u64) -> PathBuf {
    let config = serde_json::json!({
        "corpus_dir": corpus,
        "index_path": dir.join("index.jsonl"),
        "task_id": "water_stability",
        "backend": {"kind": "mock", "script": script},
        "embedder": {"kind": "mock", "seed": seed},
        "output": {"format": "csv", "path": dir.join("records.csv")},
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn config_arg(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["--version"]), 0);
    assert_eq!(run(&["extract", "--help"]), 0);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["--no-such-flag"]), 2);
    assert_eq!(run(&["frobnicate"]), 2);
    assert_eq!(run(&["extract"]), 2);
}

#[test]
fn ingest_empty_dir_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    fs::create_dir(&corpus).unwrap();
    let config = write_config(dir.path(), &corpus, &fixture("water_script.json"), 7);
    assert_eq!(run(&["ingest", "--config", config_arg(&config)]), 2);
}

#[test]
fn ingest_with_only_broken_files_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    fs::create_dir(&corpus).unwrap();
    fs::write(corpus.join("broken.xml"), "<a><b>text</a>").unwrap();
    let config = write_config(dir.path(), &corpus, &fixture("water_script.json"), 7);
    assert_eq!(run(&["ingest", "--config", config_arg(&config)]), 1);
}

#[test]
fn ingest_is_idempotent_and_counts_match_standalone_chunking() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture("corpus_three");
    let config = write_config(dir.path(), &corpus, &fixture("three_doc_script.json"), 7);
    assert_eq!(run(&["ingest", "--config", config_arg(&config)]), 0);

    let index_path = dir.path().join("index.jsonl");
    let manifest_path = dir.path().join("manifest.jsonl");
    let index_bytes = fs::read(&index_path).unwrap();
    let manifest_bytes = fs::read(&manifest_path).unwrap();

    assert_eq!(run(&["ingest", "--config", config_arg(&config)]), 0);
    assert_eq!(fs::read(&index_path).unwrap(), index_bytes);
    assert_eq!(fs::read(&manifest_path).unwrap(), manifest_bytes);

    let mut expected_passages = 0;
    for (path, format) in corpus::list_ingestible(&corpus).unwrap() {
        let doc = corpus::ingest(&path, format).unwrap();
        expected_passages += corpus::chunk(&doc, &ChunkConfig::default()).unwrap().len();
    }
    let newlines = |bytes: &[u8]| bytes.iter().filter(|&&b| b == b'\n').count();
    assert_eq!(newlines(&manifest_bytes), expected_passages);
    assert_eq!(newlines(&index_bytes), expected_passages);
}

fn ingest_and_extract(dir: &Path, corpus: &Path, script: &Path, extra: &[&str]) -> i32 {
    let config = write_config(dir, corpus, script, 7);
    assert_eq!(run(&["ingest", "--config", config_arg(&config)]), 0);
    let mut args = vec!["extract", "--config", config.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn extract_with_verify_keeps_only_the_water_backed_record() {
    let dir = tempfile::tempdir().unwrap();
    let code = ingest_and_extract(
        dir.path(),
        &fixture("corpus_water"),
        &fixture("water_script.json"),
        &["--verify"],
    );
    assert_eq!(code, 0);

    let csv = fs::read_to_string(dir.path().join("records.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 2, "header plus exactly one record:\n{csv}");
    assert_eq!(rows[0], "mof_name,label,justification,doc_id");
    assert!(rows[1].starts_with("MOF-Alpha,Stable,"), "{}", rows[1]);

    let transcript_path = dir.path().join("transcripts/mofs_water.json");
    let transcript: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&transcript_path).unwrap()).unwrap();
    assert_eq!(transcript["outcome"], "answered");
    assert_eq!(transcript["steps"][1]["kind"], "action");
    assert_eq!(transcript["steps"][1]["tool_name"], "doc_search");
    assert_eq!(transcript["steps"][2]["kind"], "observation");

    let audit: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("transcripts/mofs_water.cov.json")).unwrap(),
    )
    .unwrap();
    let audit = audit.as_array().unwrap();
    assert_eq!(audit.len(), 2);
    assert_eq!(audit[0]["verdict"], "keep");
    assert_eq!(audit[1]["verdict"], "drop");
}

#[test]
fn extract_without_verify_keeps_both_drafts() {
    let dir = tempfile::tempdir().unwrap();
    let code = ingest_and_extract(
        dir.path(),
        &fixture("corpus_water"),
        &fixture("water_script.json"),
        &[],
    );
    assert_eq!(code, 0);
    let csv = fs::read_to_string(dir.path().join("records.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(!dir.path().join("transcripts/mofs_water.cov.json").exists());
}

#[test]
fn extract_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &fixture("corpus_water"),
        &fixture("water_script.json"),
        7,
    );
    assert_eq!(run(&["ingest", "--config", config_arg(&config)]), 0);
    let extract = ["extract", "--config", config.to_str().unwrap(), "--verify"];

    assert_eq!(run(&extract), 0);
    let records = fs::read(dir.path().join("records.csv")).unwrap();
    let transcript = fs::read(dir.path().join("transcripts/mofs_water.json")).unwrap();
    let audit = fs::read(dir.path().join("transcripts/mofs_water.cov.json")).unwrap();

    assert_eq!(run(&extract), 0);
    assert_eq!(fs::read(dir.path().join("records.csv")).unwrap(), records);
    assert_eq!(
        fs::read(dir.path().join("transcripts/mofs_water.json")).unwrap(),
        transcript
    );
    assert_eq!(
        fs::read(dir.path().join("transcripts/mofs_water.cov.json")).unwrap(),
        audit
    );
}

#[test]
fn extract_cautious_script_yields_only_not_provided_labels() {
    let dir = tempfile::tempdir().unwrap();
    let code = ingest_and_extract(
        dir.path(),
        &fixture("corpus_water"),
        &fixture("not_provided_script.json"),
        &[],
    );
    assert_eq!(code, 0);
    let csv = fs::read_to_string(dir.path().join("records.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        assert_eq!(row.split(',').nth(1), Some("Not provided"), "{row}");
    }
}

#[test]
fn extract_merges_documents_in_file_order() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture("corpus_three");
    let script_path = fixture("three_doc_script.json");
    let code = ingest_and_extract(dir.path(), &corpus, &script_path, &[]);
    assert_eq!(code, 0);

    let task = TaskDefinition::bundled(TaskId::WaterStability);
    let script: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&script_path).unwrap()).unwrap();
    let mut expected = Vec::new();
    for (path, format) in corpus::list_ingestible(&corpus).unwrap() {
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        let doc = corpus::ingest(&path, format).unwrap();
        let turn = script["sessions"][&stem][0]
            .as_str()
            .unwrap()
            .replace("{doc_id}", &doc.id);
        let final_text = turn.strip_prefix("Final Answer:").unwrap().trim();
        expected.extend(parse_final_answer(final_text, &task).unwrap());
    }
    let expected_path = dir.path().join("expected.csv");
    export_records(
        &expected,
        RecordVariant::WaterStability,
        ExportFormat::Csv,
        &expected_path,
    )
    .unwrap();

    assert_eq!(
        fs::read(dir.path().join("records.csv")).unwrap(),
        fs::read(&expected_path).unwrap()
    );
    for stem in ["mof_one", "mof_two", "mof_three"] {
        assert!(dir.path().join(format!("transcripts/{stem}.json")).exists());
    }
}

#[test]
fn extract_parallel_jobs_match_serial_output() {
    let serial = tempfile::tempdir().unwrap();
    let parallel = tempfile::tempdir().unwrap();
    let corpus = fixture("corpus_three");
    let script = fixture("three_doc_script.json");

    assert_eq!(ingest_and_extract(serial.path(), &corpus, &script, &[]), 0);
    assert_eq!(
        ingest_and_extract(parallel.path(), &corpus, &script, &["--jobs", "3"]),
        0
    );

    assert_eq!(
        fs::read(serial.path().join("records.csv")).unwrap(),
        fs::read(parallel.path().join("records.csv")).unwrap()
    );
    for stem in ["mof_one", "mof_two", "mof_three"] {
        assert_eq!(
            fs::read(serial.path().join(format!("transcripts/{stem}.json"))).unwrap(),
            fs::read(parallel.path().join(format!("transcripts/{stem}.json"))).unwrap()
        );
    }
}

#[test]
fn extract_strict_fails_on_invalid_record_but_lenient_skips_it() {
    let strict = tempfile::tempdir().unwrap();
    let code = ingest_and_extract(
        strict.path(),
        &fixture("corpus_water"),
        &fixture("bad_record_script.json"),
        &[],
    );
    assert_eq!(code, 1, "single document, invalid record, strict parse");
    assert!(!strict.path().join("records.csv").exists());
    assert!(strict.path().join("transcripts/mofs_water.json").exists());

    let lenient = tempfile::tempdir().unwrap();
    let code = ingest_and_extract(
        lenient.path(),
        &fixture("corpus_water"),
        &fixture("bad_record_script.json"),
        &["--lenient"],
    );
    assert_eq!(code, 0);
    let csv = fs::read_to_string(lenient.path().join("records.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("MOF-Good,Stable,"));
}

#[test]
fn extract_rejects_mismatched_embedding_model() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &fixture("corpus_water"),
        &fixture("water_script.json"),
        7,
    );
    assert_eq!(run(&["ingest", "--config", config_arg(&config)]), 0);
    let reseeded = write_config(
        dir.path(),
        &fixture("corpus_water"),
        &fixture("water_script.json"),
        8,
    );
    assert_eq!(run(&["extract", "--config", config_arg(&reseeded)]), 2);
}

#[test]
fn extract_missing_session_fails_every_document() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("empty_script.json");
    fs::write(&script, r#"{"sessions": {}}"#).unwrap();
    let code = ingest_and_extract(dir.path(), &fixture("corpus_water"), &script, &[]);
    assert_eq!(code, 1);
}

#[test]
fn score_reproduces_host_micro_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let report_path = dir.path().join("report.json");
    let code = run(&[
        "score",
        "--task",
        "host_dopant",
        "--pred",
        fixture("bi2te3_pred.csv").to_str().unwrap(),
        "--truth",
        fixture("bi2te3_truth.csv").to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    let hosts = &report["per_field"]["hosts"];
    assert_eq!(hosts["tally"]["true_positives"], 2);
    assert_eq!(hosts["tally"]["false_positives"], 1);
    assert_eq!(hosts["tally"]["false_negatives"], 1);
    assert_eq!(hosts["score"]["precision"].as_f64().unwrap(), 2.0 / 3.0);
    assert_eq!(hosts["score"]["recall"].as_f64().unwrap(), 2.0 / 3.0);
    assert!((hosts["score"]["f1"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    let dopants = &report["per_field"]["dopants"];
    assert_eq!(dopants["score"]["f1"].as_f64().unwrap(), 1.0);
}

#[test]
fn score_reproduces_ternary_thirty_row_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let report_path = dir.path().join("report.json");
    let code = run(&[
        "score",
        "--task",
        "water_stability",
        "--pred",
        fixture("ternary_pred.csv").to_str().unwrap(),
        "--truth",
        fixture("ternary_truth.csv").to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    let ternary = &report["ternary"];
    assert_eq!(
        ternary["confusion"]["counts"],
        serde_json::json!([[6, 1, 2], [1, 5, 1], [0, 1, 9]])
    );
    assert_eq!(ternary["accuracy"].as_f64().unwrap(), 20.0 / 26.0);
    assert_eq!(ternary["yield"].as_f64().unwrap(), 26.0 / 30.0);
    assert_eq!(
        ternary["spurious_names"],
        serde_json::json!(["GhostMOF-1", "GhostMOF-2"])
    );
}

#[test]
fn score_usage_errors_exit_two() {
    let unknown_task = run(&[
        "score",
        "--task",
        "no_such_task",
        "--pred",
        fixture("ternary_pred.csv").to_str().unwrap(),
        "--truth",
        fixture("ternary_truth.csv").to_str().unwrap(),
    ]);
    assert_eq!(unknown_task, 2);

    let dir = tempfile::tempdir().unwrap();
    let short = dir.path().join("short.csv");
    fs::write(
        &short,
        "hosts,dopants,source_sentence\nGaN,Mg,Mg-doped GaN.\nSi,B,B-doped Si.\n",
    )
    .unwrap();
    let mismatch = run(&[
        "score",
        "--task",
        "host_dopant",
        "--pred",
        short.to_str().unwrap(),
        "--truth",
        fixture("bi2te3_truth.csv").to_str().unwrap(),
    ]);
    assert_eq!(mismatch, 2);
}

#[test]
fn export_converts_between_formats_losslessly() {
    let dir = tempfile::tempdir().unwrap();
    let json_path = dir.path().join("records.json");
    let csv_path = dir.path().join("records.csv");

    let code = run(&[
        "export",
        "--input",
        fixture("bi2te3_pred.csv").to_str().unwrap(),
        "--output",
        json_path.to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert_eq!(code, 0);
    let code = run(&[
        "export",
        "--input",
        json_path.to_str().unwrap(),
        "--output",
        csv_path.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert_eq!(code, 0);
    assert_eq!(
        fs::read(&csv_path).unwrap(),
        fs::read(fixture("bi2te3_pred.csv")).unwrap()
    );
}
