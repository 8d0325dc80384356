//! Core engine for turning unstructured scientific text into structured,
//! schema-validated datasets.

pub mod agent;
pub mod corpus;
pub mod eval;
pub mod schema;
pub mod tools;
pub mod vecindex;

pub use agent::{
    AgentConfig, AgentError, AgentStep, AgentTranscript, ChatMessage, Clock, FixedClock,
    HttpBackend, LlmBackend, Outcome, ScriptedBackend, StepKind, SystemClock, ToolError,
    ToolHandler, ToolRegistry, ToolSpec,
};
pub use corpus::{ChunkConfig, Document, DocumentFormat, Passage, PassageRef, PassageStore};
pub use eval::{FieldScore, MetricsReport, PrfScore, TernaryScore, WordTally};
pub use schema::{
    DopantHostRecord, ExtractionRecord, MofFormulaRecord, RecordVariant, StabilityLabel,
    TaskDefinition, TaskId, VerificationRule, WaterStabilityRecord,
};
pub use tools::{
    CovResult, CovVerdict, ExportFormat, StructureClient, StructureHit, StructureQuery,
    StructureSource, ToolsError, DEFAULT_VERIFICATION_TEMPLATE,
};
pub use vecindex::{
    EmbeddingProvider, EmbeddingVector, IndexEntry, MmrConfig, MockEmbeddingProvider, VectorIndex,
};
