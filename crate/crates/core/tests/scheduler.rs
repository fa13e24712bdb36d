use std::time::Duration;

use proptest::prelude::*;

use cortex_core::pipeline::{run_scheduler, ExecutionMode, Job, LoopKind, Loops, RateConfig, Scheduler};
use cortex_core::protocol::LogId;
use cortex_core::Tick;

#[test]
fn default_rates_over_two_hundred_thousand_ticks() {
    let trace = run_scheduler(RateConfig::default(), 200_000);
    assert_eq!(trace.firing_count(LoopKind::Reactive), 200_000);
    assert_eq!(trace.firing_count(LoopKind::Memory), 200);
    assert_eq!(trace.firing_count(LoopKind::Deliberative), 2);
    assert_eq!(trace.max_gap(LoopKind::Reactive), 1);
}

/// Deliberative rounds that take real time and report when they were
/// applied.
struct Slow {
    delay: Duration,
    applied: Vec<u64>,
}

impl Loops for Slow {
    type Plan = u64;

    fn reactive(&mut self, _: Tick) -> Option<LogId> {
        None
    }

    fn memory(&mut self, _: Tick) -> Option<LogId> {
        None
    }

    fn deliberative(&mut self, tick: Tick) -> Option<Job<u64>> {
        let delay = self.delay;
        Some(Box::new(move || {
            std::thread::sleep(delay);
            tick.0
        }))
    }

    fn apply(&mut self, _: Tick, plan: u64) -> Option<LogId> {
        self.applied.push(plan);
        None
    }
}

#[test]
fn threaded_deliberation_never_stalls_reactive_loop() {
    let mut loops = Slow { delay: Duration::from_millis(3), applied: Vec::new() };
    let rates = RateConfig::new(1, 100, 1_000).unwrap();
    let trace = Scheduler::new(rates, ExecutionMode::Threaded).run(&mut loops, 20_000);
    assert_eq!(trace.firing_count(LoopKind::Reactive), 20_000);
    assert_eq!(trace.max_gap(LoopKind::Reactive), 1);
    assert_eq!(loops.applied, (1..=20).map(|k| k * 1_000).collect::<Vec<_>>());
}

#[test]
fn deterministic_latency_delays_application() {
    let mut loops = Slow { delay: Duration::ZERO, applied: Vec::new() };
    let rates = RateConfig::new(1, 10, 100).unwrap();
    let trace = Scheduler::new(rates, ExecutionMode::Deterministic { latency: 250 }).run(&mut loops, 1_000);
    assert_eq!(trace.max_gap(LoopKind::Reactive), 1);
    let applies: Vec<u64> =
        trace.records.iter().filter(|r| r.event == cortex_core::pipeline::TraceEvent::Apply).map(|r| r.tick).collect();
    // Rounds started at 100..=700 land 250 ticks later; the rest are flushed
    // at the horizon.
    assert_eq!(&applies[..7], &[350, 450, 550, 650, 750, 850, 950]);
    assert!(applies[7..].iter().all(|t| *t == 1_000));
    assert_eq!(loops.applied.len(), 10);
}

proptest! {
    #[test]
    fn firing_counts_follow_periods(r in 1u64..5, m in 1u64..50, d in 1u64..500, horizon in 1u64..3_000) {
        let trace = run_scheduler(RateConfig::new(r, m, d).unwrap(), horizon);
        prop_assert_eq!(trace.firing_count(LoopKind::Reactive) as u64, horizon / r);
        prop_assert_eq!(trace.firing_count(LoopKind::Memory) as u64, horizon / m);
        prop_assert_eq!(trace.firing_count(LoopKind::Deliberative) as u64, horizon / d);
    }
}
