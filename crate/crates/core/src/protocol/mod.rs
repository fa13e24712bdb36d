//! Wire protocol: checksummed envelopes with a closed set of payload kinds,
//! each validated against its body contract.

mod document;
mod envelope;
pub mod schema;

pub use document::{CanonicalizationError, Document};
pub use envelope::{
    canonicalize, compute_checksum, decode_envelope, envelope_checksum, AgentId, Codec, Envelope, Importance, LogCounter, LogId,
    MessageHeader, ParseError, Payload, PayloadKind, ProtocolError,
};
pub use schema::{validate_schema, Problem, SchemaViolation, Schemas, Violation};
