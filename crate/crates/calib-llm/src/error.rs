use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid task spec: {0}")]
    InvalidTask(String),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("backend misconfigured: {0}")]
    Config(String),

    #[error("transport failure: {0}")]
    Transport(String),

    #[error("endpoint returned status {0}")]
    BadStatus(u16),

    #[error("response did not match the chat-completion schema: {0}")]
    MalformedResponse(String),

    #[error("no utterances could be extracted from the reply: {raw:?}")]
    ParseFailure { raw: String },

    #[error("could not map the relabel reply to one class: {raw:?}")]
    UnparsableLabel { raw: String },

    #[error("exemplar {id} carries no text payload")]
    MissingText { id: String },

    #[error(transparent)]
    Core(#[from] calib_core::CalibError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
