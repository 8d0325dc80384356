//! Document ingestion and passage segmentation.
//!
//! Source files are UTF-8 plain text or XML. XML markup is stripped down to
//! element text in document order; whitespace runs are collapsed to single
//! spaces so spans stay stable and embeddings see clean text. Documents are
//! then cut into overlapping passages sized by an estimated token count of
//! four characters per token.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not valid UTF-8 (first invalid byte at offset {offset})")]
    Encoding { path: PathBuf, offset: usize },
    #[error("malformed xml in {path} near byte {offset}: {message}")]
    MalformedXml {
        path: PathBuf,
        offset: u64,
        message: String,
    },
    #[error("invalid chunk config: {0}")]
    InvalidConfig(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
}

/// How the bytes of a source file are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentFormat {
    PlainText,
    Xml,
}

impl DocumentFormat {
    /// Picks a format from the file extension: `.xml` parses as markup,
    /// everything else is read as plain text.
    pub fn from_path(path: &Path) -> DocumentFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("xml") => DocumentFormat::Xml,
            _ => DocumentFormat::PlainText,
        }
    }
}

/// A fully ingested source document with normalized text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    /// First 16 hex digits of sha256(file name, NUL, raw bytes); stable for
    /// a given file name and content regardless of where the file lives.
    pub id: String,
    pub source_path: PathBuf,
    pub format: DocumentFormat,
    /// Markup-free text with every whitespace run collapsed to one space.
    pub text: String,
    /// Length of `text` in Unicode scalar values.
    pub char_count: usize,
}

/// Identifies one passage of one document.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PassageRef {
    pub doc_id: String,
    pub ordinal: usize,
}

impl fmt::Display for PassageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.doc_id, self.ordinal)
    }
}

/// A chunk of a document, addressed by char offsets into `Document::text`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub doc_id: String,
    pub ordinal: usize,
    pub text: String,
    /// Half-open `(start, end)` char offsets into the parent document text.
    pub char_span: (usize, usize),
    /// ceil(char length / 4); a tokenizer-free size estimate.
    pub token_estimate: usize,
}

impl Passage {
    pub fn passage_ref(&self) -> PassageRef {
        PassageRef {
            doc_id: self.doc_id.clone(),
            ordinal: self.ordinal,
        }
    }
}

/// Chunking parameters, in estimated tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkConfig {
    pub target_tokens: usize,
    pub overlap_tokens: usize,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        ChunkConfig {
            target_tokens: 512,
            overlap_tokens: 64,
        }
    }
}

impl ChunkConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.target_tokens == 0 {
            return Err(CorpusError::InvalidConfig(
                "target_tokens must be positive".into(),
            ));
        }
        if self.overlap_tokens >= self.target_tokens {
            return Err(CorpusError::InvalidConfig(format!(
                "overlap_tokens ({}) must be smaller than target_tokens ({})",
                self.overlap_tokens, self.target_tokens
            )));
        }
        Ok(())
    }
}

/// Reads and normalizes one source file.
///
/// XML element content is concatenated in document order; tags, attributes,
/// comments, and processing instructions are dropped, and entities are
/// resolved. The resulting text is NFC-normalized with whitespace runs
/// collapsed to single spaces.
pub fn ingest(path: &Path, format: DocumentFormat) -> Result<Document, CorpusError> {
    let raw = fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let id = document_id(path, &raw);
    let decoded = String::from_utf8(raw).map_err(|e| CorpusError::Encoding {
        path: path.to_path_buf(),
        offset: e.utf8_error().valid_up_to(),
    })?;
    let content = match format {
        DocumentFormat::PlainText => decoded,
        DocumentFormat::Xml => {
            strip_xml(&decoded).map_err(|(offset, message)| CorpusError::MalformedXml {
                path: path.to_path_buf(),
                offset,
                message,
            })?
        }
    };
    let text = normalize_text(&content);
    let char_count = text.chars().count();
    Ok(Document {
        id,
        source_path: path.to_path_buf(),
        format,
        text,
        char_count,
    })
}

fn document_id(path: &Path, raw: &[u8]) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut hasher = Sha256::new();
    hasher.update(name.as_bytes());
    hasher.update([0u8]);
    hasher.update(raw);
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn normalize_text(raw: &str) -> String {
    let composed: String = raw.nfc().collect();
    composed.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn strip_xml(raw: &str) -> Result<String, (u64, String)> {
    use quick_xml::events::Event;

    let mut reader = quick_xml::Reader::from_str(raw);
    reader.config_mut().check_end_names = true;
    let mut out = String::new();
    loop {
        match reader.read_event() {
            Ok(Event::Text(t)) => match t.decode() {
                Ok(s) => out.push_str(&s),
                Err(e) => return Err((reader.error_position(), e.to_string())),
            },
            Ok(Event::CData(c)) => match c.decode() {
                Ok(s) => out.push_str(&s),
                Err(e) => return Err((reader.error_position(), e.to_string())),
            },
            Ok(Event::GeneralRef(r)) => {
                let pos = reader.error_position();
                match r.resolve_char_ref() {
                    Ok(Some(ch)) => out.push(ch),
                    Ok(None) => {
                        let name = r
                            .decode()
                            .map_err(|e| (pos, e.to_string()))?
                            .into_owned();
                        match name.as_str() {
                            "amp" => out.push('&'),
                            "lt" => out.push('<'),
                            "gt" => out.push('>'),
                            "apos" => out.push('\''),
                            "quot" => out.push('"'),
                            other => {
                                return Err((pos, format!("unknown entity &{other};")));
                            }
                        }
                    }
                    Err(e) => return Err((pos, e.to_string())),
                }
            }
            Ok(Event::Eof) => break,
            Ok(_) => {}
            Err(e) => return Err((reader.error_position(), e.to_string())),
        }
    }
    Ok(out)
}

/// Splits a document into overlapping passages.
///
/// Sizes are driven by char counts: a passage targets `target_tokens * 4`
/// chars and consecutive passages overlap by exactly `overlap_tokens * 4`
/// chars. A passage boundary prefers the last space inside its window so
/// words are not cut mid-run; when the window holds no space the passage is
/// cut at the hard limit.
pub fn chunk(doc: &Document, cfg: &ChunkConfig) -> Result<Vec<Passage>, CorpusError> {
    cfg.validate()?;
    let chars: Vec<char> = doc.text.chars().collect();
    let len = chars.len();
    let mut passages = Vec::new();
    if len == 0 {
        return Ok(passages);
    }
    let target = cfg.target_tokens * 4;
    let overlap = cfg.overlap_tokens * 4;
    let mut start = 0usize;
    let mut ordinal = 0usize;
    loop {
        let hard_end = usize::min(start + target, len);
        let end = if hard_end == len {
            len
        } else {
            // Look for a space strictly past the overlap region so the next
            // start always advances.
            let floor = start + overlap;
            let mut pick = hard_end;
            let mut probe = hard_end;
            while probe > floor {
                if chars[probe] == ' ' {
                    pick = probe;
                    break;
                }
                probe -= 1;
            }
            pick
        };
        let text: String = chars[start..end].iter().collect();
        passages.push(Passage {
            doc_id: doc.id.clone(),
            ordinal,
            text,
            char_span: (start, end),
            token_estimate: (end - start).div_ceil(4),
        });
        if end == len {
            break;
        }
        start = end - overlap;
        ordinal += 1;
    }
    Ok(passages)
}

/// Lists the ingestible files (`.txt`, `.xml`) directly inside a directory,
/// sorted by file name for reproducible corpus order.
pub fn list_ingestible(dir: &Path) -> Result<Vec<(PathBuf, DocumentFormat)>, CorpusError> {
    let entries = fs::read_dir(dir).map_err(|source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| CorpusError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let Some(ext) = path.extension().and_then(|e| e.to_str()) else {
            continue;
        };
        if ext.eq_ignore_ascii_case("txt") || ext.eq_ignore_ascii_case("xml") {
            files.push((path.clone(), DocumentFormat::from_path(&path)));
        }
    }
    files.sort_by(|a, b| a.0.file_name().cmp(&b.0.file_name()));
    Ok(files)
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLine {
    doc_id: String,
    ordinal: usize,
    start: usize,
    end: usize,
    text: String,
}

/// All passages of a corpus, addressable by [`PassageRef`].
#[derive(Debug, Default, Clone)]
pub struct PassageStore {
    passages: BTreeMap<PassageRef, Passage>,
}

impl PassageStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_passages<I: IntoIterator<Item = Passage>>(passages: I) -> Self {
        let mut store = Self::new();
        for p in passages {
            store.insert(p);
        }
        store
    }

    pub fn insert(&mut self, passage: Passage) {
        self.passages.insert(passage.passage_ref(), passage);
    }

    pub fn get(&self, passage_ref: &PassageRef) -> Option<&Passage> {
        self.passages.get(passage_ref)
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Passage> {
        self.passages.values()
    }

    /// Largest token estimate over all stored passages; 0 when empty.
    pub fn max_token_estimate(&self) -> usize {
        self.passages
            .values()
            .map(|p| p.token_estimate)
            .max()
            .unwrap_or(0)
    }

    /// Passages of one document in ordinal order.
    pub fn doc_passages(&self, doc_id: &str) -> Vec<&Passage> {
        self.passages
            .values()
            .filter(|p| p.doc_id == doc_id)
            .collect()
    }

    /// Writes one JSON line per passage, ordered by (doc_id, ordinal).
    pub fn write_manifest(&self, path: &Path) -> Result<(), CorpusError> {
        let io_err = |source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = Vec::new();
        for p in self.passages.values() {
            let line = ManifestLine {
                doc_id: p.doc_id.clone(),
                ordinal: p.ordinal,
                start: p.char_span.0,
                end: p.char_span.1,
                text: p.text.clone(),
            };
            serde_json::to_writer(&mut out, &line)
                .map_err(|e| io_err(std::io::Error::other(e)))?;
            out.push(b'\n');
        }
        let mut file = fs::File::create(path).map_err(io_err)?;
        file.write_all(&out).map_err(io_err)?;
        Ok(())
    }

    pub fn read_manifest(path: &Path) -> Result<Self, CorpusError> {
        let file = fs::File::open(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut store = Self::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| CorpusError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ManifestLine =
                serde_json::from_str(&line).map_err(|e| CorpusError::Manifest {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            let chars = parsed.text.chars().count();
            if parsed.end < parsed.start || parsed.end - parsed.start != chars {
                return Err(CorpusError::Manifest {
                    line: i + 1,
                    message: format!(
                        "span ({}, {}) does not cover {} chars of text",
                        parsed.start, parsed.end, chars
                    ),
                });
            }
            store.insert(Passage {
                doc_id: parsed.doc_id,
                ordinal: parsed.ordinal,
                text: parsed.text,
                char_span: (parsed.start, parsed.end),
                token_estimate: chars.div_ceil(4),
            });
        }
        Ok(store)
    }
}
