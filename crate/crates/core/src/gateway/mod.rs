//! Model gateway: prompt templates plus pluggable generation backends.
//!
//! Nothing outside this module performs network I/O.

mod backend;
mod http;
mod templates;

pub use backend::{
    BackendDescriptor, BoxedBackend, FnBackend, GenerationBackend, GenerationRequest,
    RecordBackend, ReplayBackend, ScriptedBackend, StageTag,
};
pub use http::HttpBackend;
pub use templates::{Locale, PromptTemplates};
