//! Three-stage grounded inference: entity prediction, attribute prediction,
//! knowledge lookup, then a knowledge-grounded response — or a plain
//! response when the lookup misses. Every response carries a full stage
//! trace; a response without its trace is considered malformed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{GenerationBackend, GenerationRequest, PromptTemplates, StageTag};
use crate::kb::KnowledgeBase;
use crate::text::normalize;

/// Version tag written into batch output records.
pub const RESPONSE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub entity: String,
    pub attribute: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub stage: StageTag,
    pub prompt: String,
}

/// Ordered record of what each stage saw and produced.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTrace {
    pub entity_raw: String,
    pub entity_norm: String,
    pub attr_raw: Option<String>,
    pub attr_resolved: Option<String>,
    pub lookup_hit: bool,
    /// Whether the raw (entity, attribute) pair matched without resolution;
    /// kept so pair-level accuracy can be scored against the resolved path.
    pub raw_pair_hit: bool,
    pub prompts: Vec<PromptRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundedResponse {
    pub schema_version: u32,
    pub query: String,
    pub response: String,
    pub provenance: Option<Provenance>,
    pub grounded: bool,
    pub trace: StageTrace,
}

/// One entry of a batch run; failures are inline, never batch-fatal.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum BatchOutcome {
    Ok(GroundedResponse),
    Error {
        query: String,
        stage: String,
        message: String,
        trace: StageTrace,
    },
}

impl BatchOutcome {
    pub fn response(&self) -> Option<&GroundedResponse> {
        match self {
            BatchOutcome::Ok(r) => Some(r),
            BatchOutcome::Error { .. } => None,
        }
    }
}

/// Options for one inference pass.
#[derive(Debug, Clone)]
pub struct InferOptions {
    /// Expose candidate attributes from the KB in the attribute prompt.
    /// Off by default; the baseline prompt names only the entity.
    pub attr_candidates: bool,
    pub response_temperature: f64,
    pub max_tokens: u32,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            attr_candidates: false,
            response_temperature: 0.0,
            max_tokens: 512,
        }
    }
}

fn first_line(text: &str) -> String {
    text.lines().next().unwrap_or("").trim().to_string()
}

fn stage_err(stage: StageTag, err: Error) -> Error {
    match err {
        Error::Backend { message, .. } => Error::Backend {
            stage: stage.as_str().to_string(),
            message,
        },
        e @ (Error::CacheMiss { .. } | Error::ScriptMiss { .. }) => Error::Backend {
            stage: stage.as_str().to_string(),
            message: e.to_string(),
        },
        other => other,
    }
}

/// Predict the entity named by a query: generate, keep the first line,
/// attach the normalized copy.
pub fn predict_entity(
    backend: &dyn GenerationBackend,
    templates: &PromptTemplates,
    query: &str,
) -> Result<(String, String)> {
    let prompt = templates.render_entity_prompt(query)?;
    let request = GenerationRequest::new(StageTag::Entity, prompt);
    let raw = backend
        .generate(&request)
        .map_err(|e| stage_err(StageTag::Entity, e))?;
    let entity = first_line(&raw);
    let norm = normalize(&entity);
    Ok((entity, norm))
}

/// Predict the attribute for a (query, entity) pair. Returns the raw
/// first-line prediction and its resolution against the KB's candidates
/// (empty when nothing resolves; a miss is not an error).
pub fn predict_attribute(
    backend: &dyn GenerationBackend,
    templates: &PromptTemplates,
    kb: &KnowledgeBase,
    query: &str,
    entity: &str,
    use_candidates: bool,
) -> Result<(String, Option<String>)> {
    let candidates = if use_candidates {
        Some(kb.attributes_of(entity))
    } else {
        None
    };
    let prompt = templates.render_attr_prompt(query, entity, candidates.as_deref())?;
    let request = GenerationRequest::new(StageTag::Attribute, prompt);
    let raw = backend
        .generate(&request)
        .map_err(|e| stage_err(StageTag::Attribute, e))?;
    let attr = first_line(&raw);
    let resolved = kb.resolve_attribute(entity, &attr);
    Ok((attr, resolved))
}

/// Run the full three-stage procedure for one query.
pub fn infer(
    backend: &dyn GenerationBackend,
    templates: &PromptTemplates,
    kb: &KnowledgeBase,
    query: &str,
    options: &InferOptions,
) -> Result<GroundedResponse> {
    let mut trace = StageTrace::default();
    infer_traced(backend, templates, kb, query, options, &mut trace)
}

/// Like [`infer`] but leaves the partial trace in `trace` when a stage
/// fails, so batch callers can attach it to inline error records.
pub fn infer_traced(
    backend: &dyn GenerationBackend,
    templates: &PromptTemplates,
    kb: &KnowledgeBase,
    query: &str,
    options: &InferOptions,
    trace: &mut StageTrace,
) -> Result<GroundedResponse> {
    if query.trim().is_empty() {
        return Err(Error::InvalidArgument("empty query".into()));
    }

    let entity_prompt = templates.render_entity_prompt(query)?;
    trace.prompts.push(PromptRecord {
        stage: StageTag::Entity,
        prompt: entity_prompt.clone(),
    });
    let raw_entity = backend
        .generate(&GenerationRequest::new(StageTag::Entity, entity_prompt))
        .map_err(|e| stage_err(StageTag::Entity, e))?;
    trace.entity_raw = first_line(&raw_entity);
    trace.entity_norm = normalize(&trace.entity_raw);

    let candidates = if options.attr_candidates {
        Some(kb.attributes_of(&trace.entity_raw))
    } else {
        None
    };
    let attr_prompt =
        templates.render_attr_prompt(query, &trace.entity_raw, candidates.as_deref())?;
    trace.prompts.push(PromptRecord {
        stage: StageTag::Attribute,
        prompt: attr_prompt.clone(),
    });
    let raw_attr = backend
        .generate(&GenerationRequest::new(StageTag::Attribute, attr_prompt))
        .map_err(|e| stage_err(StageTag::Attribute, e))?;
    let attr_raw = first_line(&raw_attr);
    trace.attr_raw = Some(attr_raw.clone());
    trace.raw_pair_hit = kb.contains_pair(&trace.entity_raw, &attr_raw);
    let resolved = kb.resolve_attribute(&trace.entity_raw, &attr_raw);
    trace.attr_resolved = resolved.clone();

    let hit = resolved
        .as_deref()
        .and_then(|attr| kb.lookup_instance(&trace.entity_raw, attr));

    match hit {
        Some(inst) => {
            trace.lookup_hit = true;
            let provenance = Provenance {
                entity: inst.entity.clone(),
                attribute: inst.attribute.clone(),
                content: inst.content.clone(),
            };
            let rk_prompt = templates.render_rk_prompt(query, &inst.content)?;
            trace.prompts.push(PromptRecord {
                stage: StageTag::ResponseK,
                prompt: rk_prompt.clone(),
            });
            let request = GenerationRequest::new(StageTag::ResponseK, rk_prompt)
                .with_temperature(options.response_temperature)
                .with_max_tokens(options.max_tokens);
            let response = backend
                .generate(&request)
                .map_err(|e| stage_err(StageTag::ResponseK, e))?;
            Ok(GroundedResponse {
                schema_version: RESPONSE_SCHEMA_VERSION,
                query: query.to_string(),
                response,
                provenance: Some(provenance),
                grounded: true,
                trace: trace.clone(),
            })
        }
        None => {
            trace.lookup_hit = false;
            let plain_prompt = templates.render_plain_prompt(query)?;
            trace.prompts.push(PromptRecord {
                stage: StageTag::ResponsePlain,
                prompt: plain_prompt.clone(),
            });
            let request = GenerationRequest::new(StageTag::ResponsePlain, plain_prompt)
                .with_temperature(options.response_temperature)
                .with_max_tokens(options.max_tokens);
            let response = backend
                .generate(&request)
                .map_err(|e| stage_err(StageTag::ResponsePlain, e))?;
            Ok(GroundedResponse {
                schema_version: RESPONSE_SCHEMA_VERSION,
                query: query.to_string(),
                response,
                provenance: None,
                grounded: false,
                trace: trace.clone(),
            })
        }
    }
}

/// Run inference over a batch with bounded concurrency. Results are
/// positionally aligned with the queries; per-query failures become inline
/// [`BatchOutcome::Error`] records.
pub fn infer_batch(
    backend: &dyn GenerationBackend,
    templates: &PromptTemplates,
    kb: &KnowledgeBase,
    queries: &[String],
    concurrency: usize,
    options: &InferOptions,
) -> Vec<BatchOutcome> {
    let concurrency = concurrency.max(1);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<std::sync::Mutex<Option<BatchOutcome>>> =
        queries.iter().map(|_| std::sync::Mutex::new(None)).collect();

    std::thread::scope(|scope| {
        for _ in 0..concurrency.min(queries.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= queries.len() {
                    break;
                }
                let query = &queries[i];
                let mut trace = StageTrace::default();
                let outcome =
                    match infer_traced(backend, templates, kb, query, options, &mut trace) {
                        Ok(resp) => BatchOutcome::Ok(resp),
                        Err(err) => {
                            let stage = match &err {
                                Error::Backend { stage, .. } => stage.clone(),
                                _ => "local".to_string(),
                            };
                            BatchOutcome::Error {
                                query: query.clone(),
                                stage,
                                message: err.to_string(),
                                trace,
                            }
                        }
                    };
                *results[i].lock().expect("result slot poisoned") = Some(outcome);
            });
        }
    });

    results
        .into_iter()
        .map(|slot| slot.into_inner().expect("result slot poisoned").expect("worker skipped a slot"))
        .collect()
}

/// Serialize batch outcomes as JSONL for downstream evaluation.
pub fn write_batch_jsonl<W: std::io::Write>(
    outcomes: &[BatchOutcome],
    mut writer: W,
) -> Result<()> {
    for outcome in outcomes {
        serde_json::to_writer(&mut writer, outcome)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Read batch outcomes back from JSONL.
pub fn read_batch_jsonl<R: std::io::Read>(reader: R) -> Result<Vec<BatchOutcome>> {
    use std::io::BufRead;
    let mut out = Vec::new();
    for (line0, line) in std::io::BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let outcome: BatchOutcome = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line0 + 1,
            message: e.to_string(),
        })?;
        out.push(outcome);
    }
    Ok(out)
}
