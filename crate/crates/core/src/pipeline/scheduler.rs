//! Virtual-clock scheduler binding the reactive, memory and deliberative
//! loops.

use std::collections::VecDeque;
use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Tick;
use crate::protocol::LogId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RateError {
    #[error("{0} period must be at least one tick")]
    ZeroPeriod(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateConfig {
    pub reactive_period: u64,
    pub memory_period: u64,
    pub deliberative_period: u64,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self { reactive_period: 1, memory_period: 1_000, deliberative_period: 100_000 }
    }
}

impl RateConfig {
    pub fn new(reactive_period: u64, memory_period: u64, deliberative_period: u64) -> Result<Self, RateError> {
        let r = Self { reactive_period, memory_period, deliberative_period };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), RateError> {
        for (name, p) in
            [("reactive", self.reactive_period), ("memory", self.memory_period), ("deliberative", self.deliberative_period)]
        {
            if p == 0 {
                return Err(RateError::ZeroPeriod(name));
            }
        }
        Ok(())
    }

    fn due(&self, tick: u64) -> [bool; 3] {
        [
            tick.is_multiple_of(self.reactive_period),
            tick.is_multiple_of(self.memory_period),
            tick.is_multiple_of(self.deliberative_period),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoopKind {
    Reactive,
    Memory,
    Deliberative,
}

impl fmt::Display for LoopKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LoopKind::Reactive => "reactive",
            LoopKind::Memory => "memory",
            LoopKind::Deliberative => "deliberative",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceEvent {
    /// The loop body ran at this tick.
    Fire,
    /// A deliberative result was handed back to the tick loop.
    Apply,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tick: u64,
    #[serde(rename = "loop")]
    pub kind: LoopKind,
    pub event: TraceEvent,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub log_id: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExecutionTrace {
    pub records: Vec<TraceRecord>,
}

impl ExecutionTrace {
    pub fn push(&mut self, tick: Tick, kind: LoopKind, event: TraceEvent, log_id: Option<LogId>) {
        self.records.push(TraceRecord { tick: tick.0, kind, event, log_id: log_id.map(|l| l.to_string()) });
    }

    pub fn firings(&self, kind: LoopKind) -> impl Iterator<Item = u64> + '_ {
        self.records.iter().filter(move |r| r.kind == kind && r.event == TraceEvent::Fire).map(|r| r.tick)
    }

    pub fn firing_count(&self, kind: LoopKind) -> usize {
        self.firings(kind).count()
    }

    /// Largest tick distance between consecutive firings (0 if fewer than two).
    pub fn max_gap(&self, kind: LoopKind) -> u64 {
        let ticks: Vec<u64> = self.firings(kind).collect();
        ticks.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_ndjson(&self, path: &Path) -> io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn from_ndjson(text: &str) -> Result<Self, serde_json::Error> {
        let records = text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect::<Result<_, _>>()?;
        Ok(Self { records })
    }
}

/// Deliberative work handed off the tick path.
pub type Job<P> = Box<dyn FnOnce() -> P + Send + 'static>;

/// The three loop bodies driven by the scheduler.
pub trait Loops {
    type Plan: Send + 'static;

    fn reactive(&mut self, tick: Tick) -> Option<LogId>;
    fn memory(&mut self, tick: Tick) -> Option<LogId>;
    /// Start a deliberative round. The returned job runs off the tick loop.
    fn deliberative(&mut self, tick: Tick) -> Option<Job<Self::Plan>>;
    /// Receive a finished round at a tick boundary.
    fn apply(&mut self, tick: Tick, plan: Self::Plan) -> Option<LogId>;
    /// Stop early (e.g. episode finished). Checked after every tick.
    fn finished(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecutionMode {
    /// Jobs run inline and their results are released `latency` ticks later.
    Deterministic { latency: u64 },
    /// Jobs run on worker threads; results are picked up at the first tick
    /// boundary after they complete.
    Threaded,
}

impl Default for ExecutionMode {
    fn default() -> Self {
        ExecutionMode::Deterministic { latency: 1 }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Scheduler {
    pub rates: RateConfig,
    pub mode: ExecutionMode,
}

impl Scheduler {
    pub fn new(rates: RateConfig, mode: ExecutionMode) -> Self {
        Self { rates, mode }
    }

    /// Drive `loops` over ticks `1..=horizon`. Outstanding jobs are collected
    /// at the final tick.
    pub fn run<L: Loops>(&self, loops: &mut L, horizon: u64) -> ExecutionTrace {
        let mut trace = ExecutionTrace::default();
        let mut inline: VecDeque<(u64, L::Plan)> = VecDeque::new();
        let (tx, rx) = mpsc::channel::<(u64, L::Plan)>();
        let mut handles = Vec::new();
        let mut next_job = 0u64;
        let mut next_apply = 0u64;
        let mut early: std::collections::BTreeMap<u64, L::Plan> = Default::default();
        let mut last = 0;

        for t in 1..=horizon {
            let tick = Tick(t);
            last = t;
            match self.mode {
                ExecutionMode::Deterministic { .. } => {
                    while inline.front().is_some_and(|(due, _)| *due <= t) {
                        let (_, plan) = inline.pop_front().expect("checked");
                        let id = loops.apply(tick, plan);
                        trace.push(tick, LoopKind::Deliberative, TraceEvent::Apply, id);
                    }
                }
                ExecutionMode::Threaded => {
                    while let Ok((seq, plan)) = rx.try_recv() {
                        early.insert(seq, plan);
                    }
                    // Apply in submission order.
                    while let Some(plan) = early.remove(&next_apply) {
                        next_apply += 1;
                        let id = loops.apply(tick, plan);
                        trace.push(tick, LoopKind::Deliberative, TraceEvent::Apply, id);
                    }
                }
            }
            let [reactive, memory, deliberative] = self.rates.due(t);
            if reactive {
                let id = loops.reactive(tick);
                trace.push(tick, LoopKind::Reactive, TraceEvent::Fire, id);
            }
            if memory {
                let id = loops.memory(tick);
                trace.push(tick, LoopKind::Memory, TraceEvent::Fire, id);
            }
            if deliberative {
                let job = loops.deliberative(tick);
                trace.push(tick, LoopKind::Deliberative, TraceEvent::Fire, None);
                if let Some(job) = job {
                    match self.mode {
                        ExecutionMode::Deterministic { latency } => inline.push_back((t + latency.max(1), job())),
                        ExecutionMode::Threaded => {
                            let tx = tx.clone();
                            let seq = next_job;
                            handles.push(thread::spawn(move || {
                                let _ = tx.send((seq, job()));
                            }));
                        }
                    }
                    next_job += 1;
                }
            }
            if loops.finished() {
                break;
            }
        }

        let tick = Tick(last);
        drop(tx);
        for h in handles {
            let _ = h.join();
        }
        if !loops.finished() {
            while let Ok((seq, plan)) = rx.try_recv() {
                early.insert(seq, plan);
            }
            for (_, plan) in std::mem::take(&mut early) {
                let id = loops.apply(tick, plan);
                trace.push(tick, LoopKind::Deliberative, TraceEvent::Apply, id);
            }
            for (_, plan) in inline {
                let id = loops.apply(tick, plan);
                trace.push(tick, LoopKind::Deliberative, TraceEvent::Apply, id);
            }
        }
        trace
    }
}

/// Loop bodies that do nothing; used to check scheduling on its own.
#[derive(Debug, Default)]
pub struct IdleLoops;

impl Loops for IdleLoops {
    type Plan = ();

    fn reactive(&mut self, _: Tick) -> Option<LogId> {
        None
    }

    fn memory(&mut self, _: Tick) -> Option<LogId> {
        None
    }

    fn deliberative(&mut self, _: Tick) -> Option<Job<()>> {
        Some(Box::new(|| ()))
    }

    fn apply(&mut self, _: Tick, _: ()) -> Option<LogId> {
        None
    }
}

pub fn run_scheduler(rates: RateConfig, horizon: u64) -> ExecutionTrace {
    Scheduler::new(rates, ExecutionMode::default()).run(&mut IdleLoops, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_ratio_counts() {
        let trace = run_scheduler(RateConfig::new(1, 10, 100).unwrap(), 1_000);
        assert_eq!(trace.firing_count(LoopKind::Reactive), 1_000);
        assert_eq!(trace.firing_count(LoopKind::Memory), 100);
        assert_eq!(trace.firing_count(LoopKind::Deliberative), 10);
        assert_eq!(trace.max_gap(LoopKind::Reactive), 1);
    }

    #[test]
    fn zero_period_rejected() {
        assert_eq!(RateConfig::new(1, 0, 5), Err(RateError::ZeroPeriod("memory")));
    }

    #[test]
    fn ndjson_round_trip() {
        let trace = run_scheduler(RateConfig::new(1, 2, 4).unwrap(), 8);
        let text = trace.to_ndjson();
        assert!(text.lines().next().unwrap().contains("\"loop\":\"reactive\""));
        assert_eq!(ExecutionTrace::from_ndjson(&text).unwrap(), trace);
    }
}
