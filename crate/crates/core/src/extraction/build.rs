use serde::Serialize;

use crate::corpus::CorpusDoc;
use crate::embedding::{Embedder, EmbedderSpec, EntityText};
use crate::error::{Error, ProviderError, Result};
use crate::exec::Exec;
use crate::kb::{ChunkId, KbBuilder, KnowledgeBase, RelationUpsert};
use crate::llm::LlmClient;
use crate::tokens::{TokenLedger, TokenUsage};

use super::{chunk_document, default_entity_types, extract_knowledge, ExtractionRecord, ParsedExtraction};

#[derive(Debug, Clone, Serialize)]
pub struct BuildConfig {
    pub window: usize,
    pub overlap: usize,
    pub entity_types: Vec<String>,
    pub language: String,
    pub entity_text: EntityText,
    /// Recorded in the KB settings so queries embed with the same provider.
    pub embedder: EmbedderSpec,
    /// Fraction of chunks whose extraction must succeed.
    pub min_success_ratio: f64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            window: super::DEFAULT_WINDOW,
            overlap: super::DEFAULT_OVERLAP,
            entity_types: default_entity_types(),
            language: "English".into(),
            entity_text: EntityText::default(),
            embedder: EmbedderSpec::default(),
            min_success_ratio: 0.9,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChunkFailure {
    pub chunk_id: ChunkId,
    pub reason: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct BuildReport {
    pub documents: usize,
    pub chunks_total: usize,
    pub failures: Vec<ChunkFailure>,
    pub diagnostics: Vec<String>,
    pub usage: TokenUsage,
}

#[derive(Debug)]
pub struct BuildOutput {
    pub kb: KnowledgeBase,
    pub report: BuildReport,
}

/// Text fed to the chunker: the title line (when present) followed by the
/// body.
pub fn document_body(doc: &CorpusDoc) -> String {
    if doc.title.trim().is_empty() {
        doc.text.clone()
    } else {
        format!("{}\n{}", doc.title, doc.text)
    }
}

fn apply_records(
    builder: &mut KbBuilder,
    chunk: &ChunkId,
    parsed: &ParsedExtraction,
    diagnostics: &mut Vec<String>,
) -> Result<()> {
    for rec in &parsed.records {
        let outcome = match rec {
            ExtractionRecord::Entity { name, category, desc } => {
                builder.upsert_entity(name, category, desc, chunk).map(|_| ())
            }
            ExtractionRecord::Relation { source, target, keywords, desc } => builder
                .upsert_relation(source, target, keywords, desc, chunk)
                .map(|r| {
                    if let RelationUpsert::SkippedSelfLoop(e) = r {
                        diagnostics.push(format!("{chunk}: skipped self-loop relation on `{e}`"));
                    }
                }),
        };
        match outcome {
            Ok(()) => {}
            // a name that normalizes to nothing is a bad record, not a bad build
            Err(Error::Invalid(msg)) => diagnostics.push(format!("{chunk}: {msg}")),
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

/// Chunks, extracts and embeds a corpus into a frozen knowledge base.
///
/// Extraction calls fan out according to `config.exec`; results are applied
/// to the builder in chunk order so the output is independent of scheduling.
/// Chunks whose extraction fails are listed in the report; the build itself
/// fails only when the success ratio falls below `min_success_ratio` or an
/// embedding cannot be computed.
pub fn build_kb(
    corpus: &[CorpusDoc],
    llm: &dyn LlmClient,
    embedder: &dyn Embedder,
    config: &BuildConfig,
) -> Result<BuildOutput> {
    if embedder.dim() != config.embedder.dim() {
        return Err(Error::Invalid(format!(
            "embedder dimension {} does not match configured {}",
            embedder.dim(),
            config.embedder.dim()
        )));
    }
    let ledger = TokenLedger::new();
    let mut builder = KbBuilder::new(embedder.dim());
    builder.set_settings(serde_json::json!({ "build": config }));
    let mut report = BuildReport { documents: corpus.len(), ..Default::default() };

    let mut work: Vec<(ChunkId, String)> = Vec::new();
    for doc in corpus {
        let body = document_body(doc);
        for span in chunk_document(&body, config.window, config.overlap)? {
            if span.text.trim().is_empty() {
                continue;
            }
            let id = builder.upsert_chunk(&doc.id, span.ordinal, &span.text)?;
            work.push((id, span.text));
        }
    }
    report.chunks_total = work.len();

    let results: Vec<Result<ParsedExtraction, ProviderError>> = config.exec.map(&work, |(_, text)| {
        extract_knowledge(llm, &ledger, text, &config.entity_types, &config.language)
    });

    for ((chunk, _), res) in work.iter().zip(results) {
        match res {
            Err(e) => report.failures.push(ChunkFailure {
                chunk_id: chunk.clone(),
                reason: e.to_string(),
            }),
            Ok(parsed) if parsed.is_garbage() => report.failures.push(ChunkFailure {
                chunk_id: chunk.clone(),
                reason: format!("no parseable records ({} malformed lines)", parsed.malformed_lines),
            }),
            Ok(parsed) => {
                report
                    .diagnostics
                    .extend(parsed.diagnostics.iter().map(|d| format!("{chunk}: {d}")));
                apply_records(&mut builder, chunk, &parsed, &mut report.diagnostics)?;
            }
        }
    }

    let succeeded = report.chunks_total - report.failures.len();
    if report.chunks_total > 0
        && (succeeded as f64) < config.min_success_ratio * report.chunks_total as f64
    {
        let first_failure = report
            .failures
            .first()
            .map(|f| format!("{}: {}", f.chunk_id, f.reason))
            .unwrap_or_default();
        return Err(Error::BuildFailed { succeeded, total: report.chunks_total, first_failure });
    }

    let chunk_vecs = config
        .exec
        .map(&work, |(_, text)| embedder.embed(text, &ledger));
    for ((id, _), v) in work.iter().zip(chunk_vecs) {
        builder.set_chunk_embedding(id, v?)?;
    }
    let entity_inputs: Vec<_> = builder
        .entities()
        .map(|e| (e.id.clone(), config.entity_text.render(e)))
        .collect();
    let entity_vecs = config
        .exec
        .map(&entity_inputs, |(_, text)| embedder.embed(text, &ledger));
    for ((id, _), v) in entity_inputs.iter().zip(entity_vecs) {
        builder.set_entity_embedding(id, v?)?;
    }

    report.usage = ledger.snapshot();
    let kb = builder.freeze()?;
    Ok(BuildOutput { kb, report })
}
