//! Domain types and the protocol state machines for debate and the
//! consultancy variants.
//!
//! A protocol run takes a hidden story, a question with two candidate
//! answers, and a set of agents; it produces one or more judged transcripts
//! whose speeches carry verified quotes and whose generation contexts are
//! recorded in visibility manifests for auditing.

mod quotes;
mod run;
mod types;

/// Speech/judge primitives shared with the rollout builder.
pub(crate) mod run_support {
    pub(crate) use super::run::{generate_speech, judge_transcript, SpeechJob};
}

pub use quotes::{normalize_for_match, verify_quotes, QuoteError};
pub use run::{
    aggregate_ensembled, audit_visibility, consultant_side, judge_context_signature, run_protocol,
    ContextConsumer, ContextManifest, JudgeContext, JudgeStyle, JudgedTranscript, ProtocolAgents,
    ProtocolError, ProtocolOutcome, ProtocolSpec, SpeechContext, SpeechRef, VisibilityViolation,
};
pub use types::{
    assign_sides, Assignment, DebaterName, ProtocolConfig, ProtocolKind, Question,
    QuestionError, QuoteNormalization, QuoteSpan, Side, Speech, Transcript, TranscriptError,
    Verdict,
};
