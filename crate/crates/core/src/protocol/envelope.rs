//! Envelope codec: header and payload types, CRC-32 checksum over the
//! canonical encoding, log id assignment and strict decoding.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, SecondsFormat, Utc};
use serde_json::Value;
use thiserror::Error;

use super::document::{CanonicalizationError, Document};
use super::schema::{validate_schema, SchemaViolation, Schemas};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("bad envelope structure: {0}")]
    Structure(String),
    #[error("unknown importance {0:?}")]
    UnknownImportance(String),
    #[error("unknown payload kind {0:?}")]
    UnknownKind(String),
    #[error("invalid timestamp {0:?}")]
    Timestamp(String),
    #[error("agent id must be non-empty")]
    EmptyAgentId,
    #[error("invalid log id {0:?}")]
    LogId(String),
    #[error("checksum field must be 8 lowercase hex characters, got {0:?}")]
    ChecksumFormat(String),
    #[error("wire bytes are not in canonical form")]
    NonCanonical,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("checksum mismatch: wire carries {found}, content hashes to {computed}")]
    ChecksumMismatch { found: String, computed: String },
    #[error(transparent)]
    Schema(#[from] SchemaViolation),
    #[error(transparent)]
    Canonicalization(#[from] CanonicalizationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Importance {
    High,
    Medium,
    Low,
}

impl Importance {
    /// Highest priority first.
    pub const ALL: [Importance; 3] = [Importance::High, Importance::Medium, Importance::Low];

    pub fn as_str(self) -> &'static str {
        match self {
            Importance::High => "HIGH",
            Importance::Medium => "MEDIUM",
            Importance::Low => "LOW",
        }
    }

    /// 0 for HIGH, 2 for LOW.
    pub fn rank(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Importance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Importance {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "HIGH" => Ok(Importance::High),
            "MEDIUM" => Ok(Importance::Medium),
            "LOW" => Ok(Importance::Low),
            other => Err(ParseError::UnknownImportance(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AgentId(String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Result<Self, ParseError> {
        let id = id.into();
        if id.is_empty() {
            Err(ParseError::EmptyAgentId)
        } else {
            Ok(Self(id))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for AgentId {
    /// Panics on the empty string; use [`AgentId::new`] for untrusted input.
    fn from(s: &str) -> Self {
        AgentId::new(s).expect("agent id must be non-empty")
    }
}

impl TryFrom<String> for AgentId {
    type Error = ParseError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        AgentId::new(s)
    }
}

impl From<AgentId> for String {
    fn from(id: AgentId) -> String {
        id.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl PartialEq<&str> for AgentId {
    fn eq(&self, other: &&str) -> bool {
        self.0 == *other
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageHeader {
    pub timestamp: DateTime<Utc>,
    pub agent_id: AgentId,
    pub importance: Importance,
}

impl MessageHeader {
    pub fn new(timestamp: DateTime<Utc>, agent_id: AgentId, importance: Importance) -> Self {
        Self { timestamp, agent_id, importance }
    }

    /// Build a header from its wire strings, rejecting anything outside the
    /// closed vocabularies.
    pub fn parse(timestamp: &str, agent_id: &str, importance: &str) -> Result<Self, ParseError> {
        let timestamp =
            DateTime::parse_from_rfc3339(timestamp).map_err(|_| ParseError::Timestamp(timestamp.to_owned()))?.with_timezone(&Utc);
        Ok(Self { timestamp, agent_id: AgentId::new(agent_id)?, importance: importance.parse()? })
    }

    pub fn timestamp_string(&self) -> String {
        self.timestamp.to_rfc3339_opts(SecondsFormat::AutoSi, true)
    }

    pub fn to_document(&self) -> Document {
        Document::object([
            ("agent_id", Document::from(self.agent_id.as_str())),
            ("importance", Document::from(self.importance.as_str())),
            ("timestamp", Document::from(self.timestamp_string())),
        ])
    }

    fn from_document(doc: &Document) -> Result<Self, ParseError> {
        let map = doc.as_object().ok_or_else(|| ParseError::Structure("header must be an object".into()))?;
        exact_keys("header", map.keys(), &["agent_id", "importance", "timestamp"])?;
        let field = |k: &str| map[k].as_str().ok_or_else(|| ParseError::Structure(format!("header.{k} must be a string")));
        Self::parse(field("timestamp")?, field("agent_id")?, field("importance")?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PayloadKind {
    SubtaskAssign,
    MotionPrimitive,
    HighLevelCommand,
    AgentResponse,
    HtnMemory,
    EnvObservation,
    ActionFeedback,
    ActionHistory,
    IntermediateText,
}

impl PayloadKind {
    pub const ALL: [PayloadKind; 9] = [
        PayloadKind::SubtaskAssign,
        PayloadKind::MotionPrimitive,
        PayloadKind::HighLevelCommand,
        PayloadKind::AgentResponse,
        PayloadKind::HtnMemory,
        PayloadKind::EnvObservation,
        PayloadKind::ActionFeedback,
        PayloadKind::ActionHistory,
        PayloadKind::IntermediateText,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PayloadKind::SubtaskAssign => "SubtaskAssign",
            PayloadKind::MotionPrimitive => "MotionPrimitive",
            PayloadKind::HighLevelCommand => "HighLevelCommand",
            PayloadKind::AgentResponse => "AgentResponse",
            PayloadKind::HtnMemory => "HtnMemory",
            PayloadKind::EnvObservation => "EnvObservation",
            PayloadKind::ActionFeedback => "ActionFeedback",
            PayloadKind::ActionHistory => "ActionHistory",
            PayloadKind::IntermediateText => "IntermediateText",
        }
    }
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PayloadKind {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PayloadKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| ParseError::UnknownKind(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Payload {
    pub kind: PayloadKind,
    pub body: Document,
}

impl Payload {
    pub fn new(kind: PayloadKind, body: Document) -> Self {
        Self { kind, body }
    }

    pub fn to_document(&self) -> Document {
        Document::object([("body", self.body.clone()), ("kind", Document::from(self.kind.as_str()))])
    }

    fn from_document(doc: &Document) -> Result<Self, ParseError> {
        let map = doc.as_object().ok_or_else(|| ParseError::Structure("payload must be an object".into()))?;
        exact_keys("payload", map.keys(), &["body", "kind"])?;
        let kind = map["kind"].as_str().ok_or_else(|| ParseError::Structure("payload.kind must be a string".into()))?.parse()?;
        Ok(Self { kind, body: map["body"].clone() })
    }
}

/// Per-runtime message identifier, rendered as `MSG_` plus at least five
/// decimal digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LogId(pub u64);

impl fmt::Display for LogId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MSG_{:05}", self.0)
    }
}

impl FromStr for LogId {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.strip_prefix("MSG_").ok_or_else(|| ParseError::LogId(s.to_owned()))?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ParseError::LogId(s.to_owned()));
        }
        let n = digits.parse().map_err(|_| ParseError::LogId(s.to_owned()))?;
        let id = LogId(n);
        // Reject alternative spellings of the same number ("MSG_7").
        if id.to_string() != s {
            return Err(ParseError::LogId(s.to_owned()));
        }
        Ok(id)
    }
}

/// Monotone source of log ids, shareable across threads.
#[derive(Debug, Clone)]
pub struct LogCounter {
    next: Arc<AtomicU64>,
}

impl Default for LogCounter {
    fn default() -> Self {
        Self::new()
    }
}

impl LogCounter {
    pub fn new() -> Self {
        Self::starting_at(1)
    }

    pub fn starting_at(first: u64) -> Self {
        Self { next: Arc::new(AtomicU64::new(first)) }
    }

    pub fn next_id(&self) -> LogId {
        LogId(self.next.fetch_add(1, Ordering::Relaxed))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub header: MessageHeader,
    pub payload: Payload,
    pub checksum: String,
    pub log_id: LogId,
}

impl Envelope {
    pub fn kind(&self) -> PayloadKind {
        self.payload.kind
    }

    pub fn sender(&self) -> &AgentId {
        &self.header.agent_id
    }

    pub fn importance(&self) -> Importance {
        self.header.importance
    }

    /// Wire bytes: `{"header":…,"payload":…,"checksum":"…","log_id":"…"}`.
    pub fn to_wire(&self) -> Result<Vec<u8>, CanonicalizationError> {
        let mut out = canonicalize(&self.header, &self.payload)?;
        out.pop();
        out.extend_from_slice(b",\"checksum\":");
        out.extend_from_slice(&json_string(&self.checksum));
        out.extend_from_slice(b",\"log_id\":");
        out.extend_from_slice(&json_string(&self.log_id.to_string()));
        out.push(b'}');
        Ok(out)
    }

    /// Recompute the checksum and compare it with the carried one.
    pub fn verify(&self) -> Result<(), ProtocolError> {
        let computed = envelope_checksum(&self.header, &self.payload, self.log_id)?;
        if computed == self.checksum {
            Ok(())
        } else {
            Err(ProtocolError::ChecksumMismatch { found: self.checksum.clone(), computed })
        }
    }
}

fn json_string(s: &str) -> Vec<u8> {
    serde_json::to_vec(s).expect("string serialization cannot fail")
}

fn exact_keys<'a>(what: &str, keys: impl Iterator<Item = &'a String>, expected: &[&str]) -> Result<(), ParseError> {
    let found: Vec<&str> = keys.map(String::as_str).collect();
    let mut want = expected.to_vec();
    want.sort_unstable();
    if found == want {
        Ok(())
    } else {
        Err(ParseError::Structure(format!("{what} must have exactly the keys {want:?}, found {found:?}")))
    }
}

/// Canonical bytes of `{"header":…,"payload":…}`: sorted keys, compact,
/// UTF-8. Non-finite numbers anywhere are rejected.
pub fn canonicalize(header: &MessageHeader, payload: &Payload) -> Result<Vec<u8>, CanonicalizationError> {
    Document::object([("header", header.to_document()), ("payload", payload.to_document())]).canonical_bytes()
}

/// CRC-32/IEEE of `bytes` as eight lowercase hex digits.
pub fn compute_checksum(bytes: &[u8]) -> String {
    format!("{:08x}", crc32fast::hash(bytes))
}

/// The checksum carried by an envelope. It covers the canonical
/// header+payload bytes followed by the log id, so that a corrupted log id
/// cannot pass as a different valid message.
pub fn envelope_checksum(header: &MessageHeader, payload: &Payload, log_id: LogId) -> Result<String, CanonicalizationError> {
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&canonicalize(header, payload)?);
    hasher.update(log_id.to_string().as_bytes());
    Ok(format!("{:08x}", hasher.finalize()))
}

/// Encoder/decoder bound to one runtime's log counter and schema context.
#[derive(Debug, Clone, Default)]
pub struct Codec {
    counter: LogCounter,
    schemas: Schemas,
}

impl Codec {
    pub fn new(schemas: Schemas) -> Self {
        Self { counter: LogCounter::new(), schemas }
    }

    pub fn with_counter(schemas: Schemas, counter: LogCounter) -> Self {
        Self { counter, schemas }
    }

    pub fn schemas(&self) -> &Schemas {
        &self.schemas
    }

    pub fn counter(&self) -> &LogCounter {
        &self.counter
    }

    /// Validate, assign a log id and checksum. The counter only advances
    /// once the payload is known to be encodable.
    pub fn seal(&self, header: MessageHeader, payload: Payload) -> Result<Envelope, ProtocolError> {
        validate_schema(payload.kind, &payload.body, &self.schemas)?;
        canonicalize(&header, &payload)?;
        let log_id = self.counter.next_id();
        let checksum = envelope_checksum(&header, &payload, log_id)?;
        Ok(Envelope { header, payload, checksum, log_id })
    }

    pub fn encode_envelope(&self, header: MessageHeader, payload: Payload) -> Result<Vec<u8>, ProtocolError> {
        Ok(self.seal(header, payload)?.to_wire()?)
    }

    pub fn decode_envelope(&self, bytes: &[u8]) -> Result<Envelope, ProtocolError> {
        decode_envelope(bytes, &self.schemas)
    }
}

/// Parse wire bytes, verify the checksum and validate the payload body.
///
/// The input must be byte-identical to the canonical encoding of the
/// envelope it parses to; any other spelling is a [`ParseError`].
pub fn decode_envelope(bytes: &[u8], schemas: &Schemas) -> Result<Envelope, ProtocolError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| ParseError::Malformed(e.to_string()))?;
    let Value::Object(map) = &value else {
        return Err(ParseError::Structure("top level must be an object".into()).into());
    };
    exact_keys("envelope", map.keys(), &["header", "payload", "checksum", "log_id"])?;
    let header = MessageHeader::from_document(&Document::from_json(&map["header"]))?;
    let payload = Payload::from_document(&Document::from_json(&map["payload"]))?;
    let checksum = map["checksum"].as_str().ok_or_else(|| ParseError::Structure("checksum must be a string".into()))?.to_owned();
    if checksum.len() != 8 || !checksum.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
        return Err(ParseError::ChecksumFormat(checksum).into());
    }
    let log_id: LogId = map["log_id"].as_str().ok_or_else(|| ParseError::Structure("log_id must be a string".into()))?.parse()?;
    let envelope = Envelope { header, payload, checksum, log_id };
    envelope.verify()?;
    if envelope.to_wire()? != bytes {
        return Err(ParseError::NonCanonical.into());
    }
    validate_schema(envelope.payload.kind, &envelope.payload.body, schemas)?;
    Ok(envelope)
}
