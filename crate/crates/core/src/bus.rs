//! Priority message bus. Publishing fans an envelope out to per-subscriber
//! inboxes (one FIFO per priority); subscribers pull with
//! [`Bus::next_message`], which always serves the highest non-empty
//! priority they listen to. Preemption happens at message boundaries.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, TimeZone, Utc};
use thiserror::Error;

use crate::clock::{Tick, VirtualClock};
use crate::protocol::{
    AgentId, Codec, Document, Envelope, Importance, LogId, MessageHeader, Payload, PayloadKind, ProtocolError,
};
use crate::registry::{AgentStatus, Registry, RegistryError};

#[derive(Debug, Error)]
pub enum BusError {
    #[error("sender {0} is not registered")]
    UnregisteredSender(AgentId),
    #[error("bus is closed")]
    ChannelClosed,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("audit log: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveryReceipt {
    pub log_id: LogId,
    pub enqueued_at: Tick,
    pub recipients: Vec<AgentId>,
    pub delivered_at: BTreeMap<AgentId, Tick>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuditRecord {
    Published { log_id: LogId, tick: Tick, wire: String },
    Delivered { log_id: LogId, subscriber: AgentId, tick: Tick },
}

impl AuditRecord {
    pub fn log_id(&self) -> LogId {
        match self {
            AuditRecord::Published { log_id, .. } | AuditRecord::Delivered { log_id, .. } => *log_id,
        }
    }

    fn to_line(&self) -> String {
        match self {
            AuditRecord::Published { wire, .. } => wire.clone(),
            AuditRecord::Delivered { log_id, subscriber, tick } => {
                let doc = Document::object([
                    ("delivered", Document::from(log_id.to_string())),
                    ("subscriber", Document::from(subscriber.as_str())),
                    ("tick", Document::from(tick.0)),
                ]);
                String::from_utf8(doc.canonical_bytes().expect("finite record")).expect("utf-8")
            }
        }
    }
}

#[derive(Debug, Default)]
struct Inbox {
    queues: [VecDeque<Arc<Envelope>>; 3],
}

#[derive(Debug, Default)]
struct State {
    inboxes: BTreeMap<AgentId, Inbox>,
    receipts: BTreeMap<LogId, DeliveryReceipt>,
    audit: Vec<AuditRecord>,
    audit_file: Option<File>,
    closed: bool,
}

impl State {
    fn audit(&mut self, record: AuditRecord) -> std::io::Result<()> {
        if let Some(file) = &mut self.audit_file {
            writeln!(file, "{}", record.to_line())?;
        }
        self.audit.push(record);
        Ok(())
    }
}

/// Fixed epoch mapping virtual ticks to envelope timestamps.
pub fn default_epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 5, 19, 14, 0, 0).unwrap()
}

#[derive(Debug)]
pub struct Bus {
    registry: Arc<Registry>,
    clock: VirtualClock,
    codec: Codec,
    epoch: DateTime<Utc>,
    state: Mutex<State>,
}

impl Bus {
    pub fn new(registry: Arc<Registry>, clock: VirtualClock, codec: Codec) -> Self {
        Self { registry, clock, codec, epoch: default_epoch(), state: Mutex::default() }
    }

    /// Mirror the audit trail to `path` as newline-delimited records.
    pub fn with_audit_file(self, path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.state.lock().unwrap().audit_file = Some(file);
        Ok(self)
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn clock(&self) -> &VirtualClock {
        &self.clock
    }

    pub fn codec(&self) -> &Codec {
        &self.codec
    }

    pub fn close(&self) {
        self.state.lock().unwrap().closed = true;
    }

    /// Seal a payload from `sender` at the current virtual time and publish it.
    pub fn send(
        &self,
        sender: &AgentId,
        importance: Importance,
        kind: PayloadKind,
        body: Document,
    ) -> Result<DeliveryReceipt, BusError> {
        if !self.registry.is_registered(sender) {
            return Err(BusError::UnregisteredSender(sender.clone()));
        }
        let header = MessageHeader::new(self.clock.now().to_utc(self.epoch), sender.clone(), importance);
        let envelope = self.codec.seal(header, Payload::new(kind, body))?;
        self.publish(envelope)
    }

    /// Enqueue `envelope` for every current subscriber of its priority
    /// channel other than the sender. The audit entry is written before the
    /// receipt is returned.
    pub fn publish(&self, envelope: Envelope) -> Result<DeliveryReceipt, BusError> {
        let sender = envelope.sender().clone();
        if !self.registry.is_registered(&sender) {
            return Err(BusError::UnregisteredSender(sender));
        }
        envelope.verify()?;
        let wire = String::from_utf8(envelope.to_wire().map_err(ProtocolError::from)?).expect("canonical bytes are utf-8");
        let level = envelope.importance();
        let mut state = self.state.lock().unwrap();
        if state.closed {
            return Err(BusError::ChannelClosed);
        }
        let now = self.clock.now();
        let recipients: Vec<AgentId> = self.registry.subscribers_of(level).into_iter().filter(|id| *id != sender).collect();
        let envelope = Arc::new(envelope);
        for id in &recipients {
            state.inboxes.entry(id.clone()).or_default().queues[level.rank()].push_back(Arc::clone(&envelope));
        }
        let receipt = DeliveryReceipt { log_id: envelope.log_id, enqueued_at: now, recipients, delivered_at: BTreeMap::new() };
        state.audit(AuditRecord::Published { log_id: envelope.log_id, tick: now, wire })?;
        state.receipts.insert(envelope.log_id, receipt.clone());
        Ok(receipt)
    }

    /// Pop the head of the highest-priority non-empty queue `subscriber`
    /// listens to. Agents that are not Active receive nothing; their queued
    /// messages wait for them.
    pub fn next_message(&self, subscriber: &AgentId) -> Option<Envelope> {
        if self.registry.status(subscriber) != Some(AgentStatus::Active) {
            return None;
        }
        let subscribed = self.registry.subscriptions(subscriber)?;
        let mut state = self.state.lock().unwrap();
        let inbox = state.inboxes.get_mut(subscriber)?;
        let envelope = Importance::ALL
            .into_iter()
            .filter(|level| subscribed.contains(level))
            .find_map(|level| inbox.queues[level.rank()].pop_front())?;
        let now = self.clock.now();
        if let Some(receipt) = state.receipts.get_mut(&envelope.log_id) {
            receipt.delivered_at.insert(subscriber.clone(), now);
        }
        // Delivery bookkeeping must not lose the message on an audit I/O error.
        let _ = state.audit(AuditRecord::Delivered { log_id: envelope.log_id, subscriber: subscriber.clone(), tick: now });
        drop(state);
        self.registry.record_delivery(subscriber, envelope.log_id);
        Some(Arc::unwrap_or_clone(envelope))
    }

    /// Drain everything currently deliverable to `subscriber`.
    pub fn drain(&self, subscriber: &AgentId) -> Vec<Envelope> {
        std::iter::from_fn(|| self.next_message(subscriber)).collect()
    }

    /// Replace the agent's priority set atomically. Messages already queued
    /// stay in the inbox and become deliverable whenever their priority is
    /// subscribed.
    pub fn reassign_channel(&self, agent: &AgentId, levels: BTreeSet<Importance>) -> Result<(), BusError> {
        let _guard = self.state.lock().unwrap();
        self.registry.set_subscriptions(agent, levels).map_err(|e| match e {
            RegistryError::UnknownAgent(id) => BusError::UnregisteredSender(id),
            other => unreachable!("set_subscriptions only fails on unknown agents: {other}"),
        })
    }

    /// Queued messages for `subscriber` across all priorities.
    pub fn pending(&self, subscriber: &AgentId) -> usize {
        let state = self.state.lock().unwrap();
        state.inboxes.get(subscriber).map_or(0, |i| i.queues.iter().map(VecDeque::len).sum())
    }

    pub fn pending_at(&self, subscriber: &AgentId, level: Importance) -> usize {
        let state = self.state.lock().unwrap();
        state.inboxes.get(subscriber).map_or(0, |i| i.queues[level.rank()].len())
    }

    pub fn receipt(&self, log_id: LogId) -> Option<DeliveryReceipt> {
        self.state.lock().unwrap().receipts.get(&log_id).cloned()
    }

    pub fn audit_log(&self) -> Vec<AuditRecord> {
        self.state.lock().unwrap().audit.clone()
    }

    pub fn published_count(&self) -> usize {
        self.state.lock().unwrap().receipts.len()
    }
}
