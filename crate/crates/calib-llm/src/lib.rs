//! Synthetic-text generation against a chat-completion endpoint.
//!
//! The flow is two-staged: `generate` asks the model to produce short
//! utterances at a target class-probability mix, anchored on exemplar texts
//! from a miscalibrated bin; `relabel` then asks the model to classify each
//! generated utterance so only texts of the intended class survive under the
//! strict policy.
//!
//! A deterministic mock backend implements the same pipeline surface so the
//! whole flow (and everything downstream of it) runs offline.

pub mod backend;
pub mod error;
pub mod pipeline;
pub mod prompt;
pub mod task;

pub use backend::{BackendConfig, BackendKind, ChatMessage, RetryPolicy};
pub use error::LlmError;
pub use pipeline::{
    generate, relabel, run_pipeline, spec_id, to_training_items, write_synthetic_jsonl,
    MismatchPolicy, SyntheticText,
};
pub use prompt::{build_generation_prompt, build_relabel_prompt, build_system_prompt, GenRequest};
pub use task::TaskSpec;

pub type Result<T> = std::result::Result<T, LlmError>;
