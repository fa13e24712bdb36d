//! One benchmark trial: a scenario driven through the full agent stack on
//! the multi-rate scheduler.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use cortex_core::agents::backend::{BackendError, CompletionBackend, ScriptedBackend};
use cortex_core::agents::contracts::{DecompositionPlan, Difficulty, ProviderRequest, SubtaskAssignment};
use cortex_core::agents::numeric::{ia_inspect, sa_interpret, Verdict, INSPECT_THRESHOLD};
use cortex_core::agents::roles::{
    default_roster, embed_plan, expertise_table, AgentError, Leader, MotorAgent, PlanOutput, WorkerAgent,
};
use cortex_core::bus::Bus;
use cortex_core::embed::FeatureHasher;
use cortex_core::estimator::{forward_filter, predict_state, prediction_error, BeliefState, DbnParams};
use cortex_core::linalg::{self, Matrix};
use cortex_core::memory::{ActionHistory, EpisodicMemory, MemoryState, TanhAffine, DEFAULT_HISTORY};
use cortex_core::pipeline::{
    pipeline_update, route_by_difficulty, state_review, ExecutionMode, ExecutionTrace, Job, LatentState, Loops, Pathway,
    RateConfig, Relay, ReviewDecision, Scheduler, Stage, REVIEW_THRESHOLD,
};
use cortex_core::planner::{build_htn_dag, generate_state_tree, select_action, HtnDag, ScoreWeights, TransitionModel, NO_OP};
use cortex_core::protocol::{Codec, Document, LogId, PayloadKind, Schemas};
use cortex_core::reactive::{Policy, ReactiveController, ReactiveGains};
use cortex_core::registry::{AgentDescriptor, Registry, Role};
use cortex_core::{AgentId, Importance, Tick, VirtualClock};
use cortex_sim::{
    load_scenario, phrase_vocabulary, Action, Belief, Goal, Observation, PlanningModel, ScenarioSpec, SimEvent, Simulator,
};

use crate::BenchError;

const SCRIPT: &str = include_str!("../assets/script.json");
const REFLEXES: &str = include_str!("../assets/reflexes.json");

const FACT_DIM: usize = 256;
const MEMORY_DIM: usize = 32;
const LATENT_DIM: usize = 16;
const PLAN_DIM: usize = 64;
/// Ticks to wait before a reflex retries a failed action.
const RETRY_BACKOFF: u64 = 100;
const RELAY_LAMBDA: f64 = 0.1;
const MEMORY_DECAY: f64 = 0.1;

/// Scripted leader, worker and provider answers for the eight scenarios,
/// layered over the core crate's examples.
pub fn bench_backend() -> ScriptedBackend {
    let mut backend = ScriptedBackend::builtin();
    backend.merge(ScriptedBackend::from_json(SCRIPT).expect("bundled bench script is valid"));
    backend
}

/// Fixed action lists used by the reactive-only configuration.
pub fn reflex_table() -> BTreeMap<String, Vec<String>> {
    serde_json::from_str(REFLEXES).expect("bundled reflex table is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AgentConfig {
    /// Leader, workers, planner, inspection and state review.
    Full,
    /// Fixed per-mission action lists with retries; no deliberation.
    ReactiveOnly,
    /// Full stack without the inspection agent and the state review.
    NoInspector,
}

impl AgentConfig {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentConfig::Full => "full",
            AgentConfig::ReactiveOnly => "reactive-only",
            AgentConfig::NoInspector => "no-inspector",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    Failure,
    /// The agents gave up on purpose after detecting the goal was out of reach.
    HandledAbort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub task_id: u8,
    pub seed: u64,
    pub outcome: Outcome,
    pub ticks_elapsed: u64,
    /// Ticks at which a replan request went out on the HIGH channel.
    pub replan_requests: Vec<u64>,
    /// Ticks at which a deliberative round installed a different plan.
    pub plan_changes: Vec<u64>,
    pub abort_tick: Option<u64>,
    /// Tick at which a scheduled removal fired, if it did.
    pub deletion_tick: Option<u64>,
    pub actions: Vec<String>,
    pub trace_path: Option<PathBuf>,
}

#[derive(Clone)]
pub struct EpisodeConfig {
    pub agents: AgentConfig,
    /// Periods in reactive ticks. The reactive loop must fire every tick.
    pub rates: RateConfig,
    pub mode: ExecutionMode,
    pub backend: Arc<dyn CompletionBackend>,
    pub gains: ReactiveGains,
    /// Overrides the scenario's removal tick.
    pub deletion_tick: Option<u64>,
    /// Write each execution trace as NDJSON into this directory.
    pub trace_dir: Option<PathBuf>,
}

impl EpisodeConfig {
    pub fn new(agents: AgentConfig) -> Self {
        Self {
            agents,
            rates: RateConfig { reactive_period: 1, memory_period: 100, deliberative_period: 1000 },
            mode: ExecutionMode::Deterministic { latency: 1 },
            backend: Arc::new(bench_backend()),
            gains: ReactiveGains::uniform(2, 0.2, 0.1, 0.5, 0.1).expect("valid gains"),
            deletion_tick: None,
            trace_dir: None,
        }
    }
}

/// Result of one deliberative round.
pub enum Deliberation {
    Keep,
    Replace { output: PlanOutput, key: String, responses: Vec<(PayloadKind, AgentId, Document)> },
    Abort { reason: String },
}

/// Reach toward the current move target at unit speed per axis. `s` is the
/// remaining displacement.
struct ReachPolicy;

impl Policy for ReachPolicy {
    fn act(&mut self, s: &[f64], _action: &str, _l: &[f64]) -> Vec<f64> {
        s.iter().map(|r| r.clamp(-1.0, 1.0)).collect()
    }
}

/// Three motion phases (cruise, approach, settled) observed through the
/// remaining distance. Predicts the per-tick progress toward the target.
struct MotionEstimator {
    params: DbnParams,
    belief: BeliefState,
    speeds: Vec<Vec<f64>>,
}

impl MotionEstimator {
    fn new() -> Self {
        let t = Matrix::from_rows(vec![vec![0.95, 0.05, 0.0], vec![0.0, 0.9, 0.1], vec![0.05, 0.05, 0.9]]).expect("square");
        let e = Matrix::from_rows(vec![vec![0.9, 0.09, 0.01], vec![0.1, 0.8, 0.1], vec![0.01, 0.19, 0.8]]).expect("square");
        let params = DbnParams::new(vec![t], e).expect("stochastic rows");
        Self { params, belief: BeliefState::uniform(3), speeds: vec![vec![1.0], vec![0.5], vec![0.0]] }
    }

    fn reset(&mut self) {
        self.belief = BeliefState::uniform(3);
    }

    /// Filter the distance bucket and return the expected speed.
    fn step(&mut self, distance: f64) -> f64 {
        let obs = if distance > 5.0 {
            0
        } else if distance > 0.5 {
            1
        } else {
            2
        };
        if let Ok(step) = forward_filter(&self.belief, 0, obs, &self.params) {
            self.belief = step.belief;
        }
        predict_state(&self.belief, &self.speeds).map_or(0.0, |v| v[0])
    }
}

struct Motion {
    controller: ReactiveController,
    estimator: MotionEstimator,
    prev_remaining: Option<Vec<f64>>,
}

fn fact_set(obs: &Observation) -> BTreeSet<String> {
    obs.facts().into_iter().collect()
}

fn embed_facts<'a>(hasher: &FeatureHasher, facts: impl IntoIterator<Item = &'a String>) -> Vec<f64> {
    hasher.bag(facts.into_iter().map(String::as_str))
}

/// Facts that the reviewer tracks: everything except where the gripper is.
fn reviewed(facts: &BTreeSet<String>) -> BTreeSet<String> {
    facts.iter().filter(|f| !f.starts_with("gripper:")).cloned().collect()
}

fn object_of(fact: &str) -> Option<&str> {
    fact.strip_prefix("visible:").and_then(|r| r.split('@').next())
}

/// Plan that grasps whatever the mission names among the visible objects,
/// used when the leader has no answer for a mission.
pub fn fallback_plan(mission: &str, obs: &Observation, registry: &Registry) -> Option<DecompositionPlan> {
    let lowered = mission.to_lowercase();
    let words: BTreeSet<&str> = lowered.split(|c: char| !c.is_alphanumeric() && c != '_').filter(|w| !w.is_empty()).collect();
    let by_label = obs.objects.iter().find(|o| o.label.as_deref().is_some_and(|l| lowered.contains(&l.to_lowercase())));
    let target = match by_label {
        Some(o) => o.id.clone(),
        None => obs.objects.iter().map(|o| o.kind.as_str()).find(|k| words.contains(k))?.to_owned(),
    };
    let description = if words.contains("fetch") || words.contains("bring") {
        format!("deliver {target} to user")
    } else if words.contains("lift") {
        format!("lift {target}")
    } else {
        format!("grasp {target}")
    };
    let worker = registry.lookup_by_expertise(&["grasping", "manipulation"]).into_iter().next()?;
    Some(DecompositionPlan {
        difficulty: Difficulty::Medium,
        subtasks: vec![SubtaskAssignment {
            subtask_id: "ST1".into(),
            assigned_worker: worker.to_string(),
            task_description: description,
            focus: vec!["grasping".into(), target],
            depends_on: None,
        }],
    })
}

/// Everything the off-loop leader round needs.
struct RoundInput {
    leader: Arc<Leader>,
    workers: Arc<BTreeMap<String, WorkerAgent>>,
    registry: Arc<Registry>,
    mission: String,
    reasons: Vec<String>,
    bootstrap: bool,
    observation: Observation,
}

fn deliberate(input: RoundInput) -> Deliberation {
    let RoundInput { leader, workers, registry, mission, reasons, bootstrap, observation } = input;
    let keys: Vec<String> =
        if bootstrap { vec![mission.clone()] } else { reasons.iter().map(|r| format!("{mission} | {r}")).collect() };
    let mut planned = None;
    for key in &keys {
        match leader.pfp_plan(key, &registry) {
            Ok(out) => {
                planned = Some((out, key.clone()));
                break;
            }
            Err(AgentError::Backend(BackendError::NoScript { .. })) => continue,
            Err(e) => return Deliberation::Abort { reason: format!("planning failed: {e}") },
        }
    }
    let (output, key) = match planned {
        Some(p) => p,
        None if bootstrap => match fallback_plan(&mission, &observation, &registry) {
            Some(plan) => {
                let vector = embed_plan(&FeatureHasher::new(PLAN_DIM), &plan);
                let text = String::from_utf8(plan.to_document().canonical_bytes().unwrap_or_default()).unwrap_or_default();
                (PlanOutput { vector, plan, text }, format!("{mission} | fallback"))
            }
            None => return Deliberation::Abort { reason: format!("no plan for {mission:?}") },
        },
        None => {
            return match reasons.iter().find(|r| r.starts_with("stuck")) {
                Some(r) => Deliberation::Abort { reason: r.clone() },
                None => Deliberation::Keep,
            };
        }
    };
    if output.plan.subtasks.is_empty() {
        return Deliberation::Abort { reason: format!("leader returned an empty plan for {key:?}") };
    }
    let mut responses = Vec::new();
    if route_by_difficulty(&output.plan).includes(Stage::Worker) {
        let table = expertise_table(&registry);
        for st in &output.plan.subtasks {
            let Some(worker) = workers.get(&st.assigned_worker) else { continue };
            let Ok(decision) = worker.worker_reflect(st, &table) else { continue };
            responses.push((PayloadKind::AgentResponse, worker.id.clone(), decision.to_document()));
            for req in &decision.requirement {
                let Some(provider) = workers.get(&req.worker_id) else { continue };
                let request = ProviderRequest {
                    request_id: req.request_id.clone(),
                    requester_id: worker.id.to_string(),
                    request_detail: req.request_detail.clone(),
                };
                if let Ok(answer) = provider.provider_execute(&request) {
                    responses.push((PayloadKind::AgentResponse, provider.id.clone(), answer.to_document()));
                }
            }
        }
    }
    Deliberation::Replace { output, key, responses }
}

struct ActivePlan {
    plan: DecompositionPlan,
    dag: HtnDag,
    pathway: Pathway,
    done: BTreeSet<String>,
}

/// Executing side of the episode: simulator, agents and bookkeeping.
pub struct Episode {
    cfg: EpisodeConfig,
    spec: ScenarioSpec,
    sim: Simulator,
    bus: Bus,
    clock: VirtualClock,
    registry: Arc<Registry>,
    leader: Arc<Leader>,
    workers: Arc<BTreeMap<String, WorkerAgent>>,
    motor: MotorAgent,
    history: ActionHistory,
    memory: EpisodicMemory,
    relay: Relay,
    latent: LatentState,
    hasher: FeatureHasher,
    small: FeatureHasher,
    semantic: Vec<f64>,
    motion: Motion,
    ids: Ids,
    plan: Option<ActivePlan>,
    reflexes: Vec<String>,
    reflex_index: usize,
    retry_at: u64,
    hint: String,
    searched: BTreeSet<String>,
    tried_views: BTreeSet<String>,
    /// Facts expected right after the running action succeeds.
    pre_action: Option<Belief>,
    /// Reviewed facts as of the last acknowledged observation.
    review_baseline: BTreeSet<String>,
    stuck_reported: bool,
    round_pending: bool,
    result: TrialResult,
    finished: bool,
}

struct Ids {
    hippocampus: AgentId,
    motor: AgentId,
    perception: AgentId,
    inspector: AgentId,
    planner: AgentId,
}

impl Episode {
    pub fn new(task_id: u8, seed: u64, cfg: EpisodeConfig) -> Result<Self, BenchError> {
        let mut spec = load_scenario(task_id, seed)?;
        if let Some(t) = cfg.deletion_tick {
            spec = spec.with_deletion_at(t);
        }
        let registry = Arc::new(Registry::new());
        registry.register_all(default_roster())?;
        for name in ["Hippocampus", "Motor", "Perception"] {
            registry.register_agent(AgentDescriptor::new(name, Role::System, Vec::<String>::new()))?;
        }
        let clock = VirtualClock::new();
        let bus = Bus::new(registry.clone(), clock.clone(), Codec::new(Schemas::with_actions(spec.action_vocab.clone())));
        let leader = Arc::new(Leader::new(AgentId::from("Leader"), cfg.backend.clone(), PLAN_DIM));
        let workers: BTreeMap<String, WorkerAgent> = registry
            .agents_with_role(Role::Worker)
            .into_iter()
            .map(|d| (d.agent_id.to_string(), WorkerAgent::new(d.agent_id.clone(), d.expertise.clone(), cfg.backend.clone())))
            .collect();
        let ids = Ids {
            hippocampus: AgentId::from("Hippocampus"),
            motor: AgentId::from("Motor"),
            perception: AgentId::from("Perception"),
            inspector: AgentId::from("Inspector"),
            planner: AgentId::from("Planner"),
        };
        let memory = EpisodicMemory::new(
            ids.hippocampus.clone(),
            MemoryState::zeros(MEMORY_DIM, MEMORY_DECAY)?,
            TanhAffine::seeded(MEMORY_DIM, LATENT_DIM, MEMORY_DIM, seed),
        );
        let relay = Relay::seeded(LATENT_DIM, LATENT_DIM, MEMORY_DIM, LATENT_DIM, seed ^ 0x0f0f);
        let reflexes = if cfg.agents == AgentConfig::ReactiveOnly {
            reflex_table().remove(&spec.mission).unwrap_or_default()
        } else {
            Vec::new()
        };
        let hint = spec.sensors.values().cloned().chain([spec.mission.clone()]).collect::<Vec<_>>().join(" ");
        let sim = Simulator::new(spec.clone());
        let hasher = FeatureHasher::new(FACT_DIM);
        let semantic = sim.observe().embedding(&hasher);
        let review_baseline = reviewed(&fact_set(&sim.observe()));
        let motion = Motion {
            controller: ReactiveController::new(cfg.gains.clone()),
            estimator: MotionEstimator::new(),
            prev_remaining: None,
        };
        let result = TrialResult {
            task_id,
            seed,
            outcome: Outcome::Failure,
            ticks_elapsed: 0,
            replan_requests: Vec::new(),
            plan_changes: Vec::new(),
            abort_tick: None,
            deletion_tick: None,
            actions: Vec::new(),
            trace_path: None,
        };
        Ok(Self {
            cfg,
            spec,
            sim,
            bus,
            clock,
            registry,
            leader,
            workers: Arc::new(workers),
            motor: MotorAgent::new(),
            history: ActionHistory::new(DEFAULT_HISTORY),
            memory,
            relay,
            latent: LatentState::zeros(LATENT_DIM),
            hasher,
            small: FeatureHasher::new(LATENT_DIM),
            semantic,
            motion,
            ids,
            plan: None,
            reflexes,
            reflex_index: 0,
            retry_at: 0,
            hint,
            searched: BTreeSet::new(),
            tried_views: BTreeSet::new(),
            pre_action: None,
            review_baseline,
            stuck_reported: false,
            round_pending: false,
            result,
            finished: false,
        })
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    fn deliberative_enabled(&self) -> bool {
        self.cfg.agents != AgentConfig::ReactiveOnly
    }

    fn inspection_enabled(&self) -> bool {
        self.cfg.agents == AgentConfig::Full && self.plan.as_ref().is_some_and(|p| p.pathway.includes(Stage::Inspector))
    }

    fn round_input(&self, reasons: Vec<String>, bootstrap: bool) -> RoundInput {
        RoundInput {
            leader: self.leader.clone(),
            workers: self.workers.clone(),
            registry: self.registry.clone(),
            mission: self.spec.mission.clone(),
            reasons,
            bootstrap,
            observation: self.sim.observe(),
        }
    }

    fn send(&self, sender: &AgentId, importance: Importance, kind: PayloadKind, body: Document) -> Option<LogId> {
        self.bus.send(sender, importance, kind, body).ok().map(|r| r.log_id)
    }

    fn request_replan(&mut self, tick: Tick, sender: AgentId, reason: String) -> Option<LogId> {
        self.result.replan_requests.push(tick.0);
        let body = Document::object([("goal", Document::from(self.spec.mission.as_str())), ("reason", Document::from(reason))]);
        self.send(&sender, Importance::High, PayloadKind::HighLevelCommand, body)
    }

    fn finish(&mut self, tick: Tick, outcome: Outcome) {
        if !self.finished {
            self.finished = true;
            self.result.outcome = outcome;
            self.result.ticks_elapsed = tick.0;
            if outcome == Outcome::HandledAbort {
                self.result.abort_tick = Some(tick.0);
            }
        }
    }

    /// Current subtask: first frontier node of the active plan, skipping
    /// nodes whose goal already holds in what the agent can see.
    fn current_subtask(&mut self, belief: &Belief) -> Option<(String, Goal)> {
        let plan = self.plan.as_mut()?;
        loop {
            let node = plan.dag.frontier(&plan.done).into_iter().next()?.clone();
            let goal = Goal::parse(&node.label, &self.spec.world)?;
            if goal.holds(&belief.world) {
                plan.done.insert(node.node_id);
                continue;
            }
            return Some((node.label, goal));
        }
    }

    fn belief(&self) -> Belief {
        Belief::from_observation(&self.sim.observe(), &self.spec.world, &self.searched, &self.tried_views)
    }

    fn begin(&mut self, tick: Tick, action: &str) -> Option<LogId> {
        self.pre_action = Some(self.belief());
        self.history.push(action);
        self.result.actions.push(action.to_owned());
        match self.sim.begin(action) {
            Ok(Some(fb)) => self.on_feedback(tick, fb),
            Ok(None) => {
                if action.starts_with("move to") {
                    self.motion.controller.reset();
                    self.motion.estimator.reset();
                    self.motion.prev_remaining = None;
                }
                None
            }
            Err(_) => {
                self.motor.reset();
                None
            }
        }
    }

    /// Pick and start the next action from the plan.
    fn decide(&mut self, tick: Tick) -> Option<LogId> {
        let belief = self.belief();
        let Some((subtask, goal)) = self.current_subtask(&belief) else {
            if self.plan.is_some() && !self.stuck_reported {
                self.stuck_reported = true;
                return self.request_replan(tick, self.ids.planner.clone(), "stuck: plan complete".into());
            }
            return None;
        };
        let model = PlanningModel::new(goal, self.spec.vocab(), self.spec.transitions.clone(), self.spec.world.clone())
            .with_hint(&self.hint);
        let key = belief.key();
        let available = model.applicable(&key);
        let choice = if available.is_empty() {
            None
        } else {
            generate_state_tree(&key, &available, &model, 2, &ScoreWeights::default()).ok().and_then(|tree| {
                let root = tree.root.score;
                let best = cortex_core::planner::action_values(&tree, cortex_core::planner::DISCOUNT)
                    .into_values()
                    .fold(f64::NEG_INFINITY, f64::max);
                select_action(&tree, &available).ok().filter(|_| best > root + 1e-9)
            })
        };
        let Some(choice) = choice else {
            if !self.stuck_reported {
                self.stuck_reported = true;
                return self.request_replan(tick, self.ids.planner.clone(), format!("stuck: {subtask}"));
            }
            return None;
        };
        if choice.selected_action == NO_OP {
            return None;
        }
        self.send(&self.ids.planner, Importance::Medium, PayloadKind::AgentResponse, choice.to_document());
        let vocab = self.spec.action_vocab.clone();
        let proposal = self.motor.ma_act(&[choice.selected_action], &vocab).ok()?;
        self.begin(tick, &proposal.action)
    }

    fn on_feedback(&mut self, tick: Tick, fb: cortex_sim::Feedback) -> Option<LogId> {
        self.motor.complete();
        let mut last = self.send(&self.ids.motor, Importance::Medium, PayloadKind::ActionFeedback, fb.to_document());
        let obs = self.sim.observe();
        let observed = fact_set(&obs);
        if fb.success {
            match fb.action.parse::<Action>() {
                Ok(Action::Open(c)) => {
                    self.searched.insert(c);
                }
                Ok(Action::LookFrom(v)) => {
                    self.tried_views.insert(v);
                }
                _ => {}
            }
            if self.cfg.agents == AgentConfig::ReactiveOnly {
                self.reflex_index += 1;
            }
        } else {
            self.retry_at = tick.0 + RETRY_BACKOFF;
        }
        let pre = self.pre_action.take();
        if self.inspection_enabled() {
            if let (Some(pre), Ok(action)) = (pre, fb.action.parse::<Action>()) {
                // What the world should look like had the action worked.
                let mut expected_world = pre.world.clone();
                cortex_sim::action::apply_success(&mut expected_world, &action);
                let before = fact_set(&cortex_sim::observe(&pre.world));
                let mut expected = fact_set(&cortex_sim::observe(&expected_world));
                expected.extend(observed.iter().filter(|f| f.starts_with("visible:") && !before.contains(*f)).cloned());
                let p = embed_facts(&self.hasher, &expected);
                let z = obs.embedding(&self.hasher);
                let m = linalg::project(&self.memory.state().vector, FACT_DIM);
                if let Ok(h) = sa_interpret(&z, &m, &self.semantic) {
                    self.semantic = h;
                }
                if let Ok(inspection) = ia_inspect(&p, &self.semantic, INSPECT_THRESHOLD) {
                    if inspection.verdict == Verdict::Replan {
                        let reason =
                            if fb.success { format!("diverged: {}", fb.action) } else { format!("failed: {}", fb.action) };
                        last = self.request_replan(tick, self.ids.inspector.clone(), reason).or(last);
                    }
                }
            }
        }
        self.review_baseline = reviewed(&observed);
        last
    }

    fn control(&mut self) -> Option<(f64, f64)> {
        let target = self.sim.motion_target()?;
        let (x, y) = self.sim.world().gripper.position;
        let remaining = vec![target.0 - x, target.1 - y];
        let distance = linalg::norm_inf(&remaining);
        let speed = self.motion.estimator.step(distance);
        let prev = self.motion.prev_remaining.clone().unwrap_or_else(|| remaining.clone());
        let direction = linalg::normalize(&prev);
        let predicted: Vec<f64> = prev.iter().zip(&direction).map(|(r, d)| r - speed * d).collect();
        let e = prediction_error(&remaining, &predicted).unwrap_or_else(|_| vec![0.0; 2]);
        self.motion.prev_remaining = Some(remaining.clone());
        let action = self.sim.current_action().map(ToString::to_string).unwrap_or_default();
        let out = self.motion.controller.rvla_step(&mut ReachPolicy, &remaining, &action, &self.latent.vector, &e).ok()?;
        Some((out.u[0], out.u[1]))
    }
}

impl Loops for Episode {
    type Plan = Deliberation;

    fn reactive(&mut self, tick: Tick) -> Option<LogId> {
        if self.finished {
            return None;
        }
        self.clock.advance_to(tick);
        let u = self.control();
        let mut last = None;
        for event in self.sim.tick(u) {
            match event {
                SimEvent::Feedback(fb) => last = self.on_feedback(tick, fb).or(last),
                SimEvent::Fired(_) => {
                    self.result.deletion_tick.get_or_insert(tick.0);
                }
            }
        }
        if self.sim.is_success() {
            self.finish(tick, Outcome::Success);
            return last;
        }
        if tick.0 >= self.spec.timeout_ticks {
            self.finish(tick, Outcome::Failure);
            return last;
        }
        if self.sim.busy() || tick.0 < self.retry_at {
            return last;
        }
        if self.cfg.agents == AgentConfig::ReactiveOnly {
            if let Some(action) = self.reflexes.get(self.reflex_index).cloned() {
                last = self.begin(tick, &action).or(last);
            }
            return last;
        }
        self.decide(tick).or(last)
    }

    fn memory(&mut self, tick: Tick) -> Option<LogId> {
        if self.finished {
            return None;
        }
        let obs = self.sim.observe();
        let z_full = obs.embedding(&self.hasher);
        let z = linalg::project(&z_full, MEMORY_DIM);
        let _ = self.memory.update(&self.latent.vector, &z, tick);
        let last = self.memory.broadcast(&self.bus).ok().map(|r| r.log_id);
        if let Ok(h) = sa_interpret(&z_full, &linalg::project(&self.memory.state().vector, FACT_DIM), &self.semantic) {
            self.semantic = h;
        }

        let action = self.motor.in_progress().map(|p| p.action.clone()).unwrap_or_else(|| NO_OP.to_owned());
        let frontier: Vec<String> = self
            .plan
            .as_ref()
            .map(|p| p.dag.frontier(&p.done).into_iter().map(|n| n.label.clone()).collect())
            .unwrap_or_default();
        let dbn = linalg::project(&self.motion.estimator.belief.0, LATENT_DIM);
        if let Ok(next) = pipeline_update(
            &self.relay,
            &self.latent,
            &self.small.text(&action),
            &self.memory.state().vector,
            &self.small.text(&frontier.join(" ")),
            &dbn,
            RELAY_LAMBDA,
        ) {
            self.latent = next;
        }

        self.send(&self.ids.perception, Importance::Low, PayloadKind::EnvObservation, obs.to_document());
        let u = self.motion.controller.window().back().cloned().unwrap_or_else(|| vec![0.0, 0.0]);
        let primitive = Document::object([("primitive", Document::from(action.as_str())), ("values", Document::floats(&u))]);
        self.send(&self.ids.motor, Importance::Low, PayloadKind::MotionPrimitive, primitive);
        self.send(&self.ids.hippocampus, Importance::Low, PayloadKind::ActionHistory, self.history.to_document());

        let mut last = last;
        if self.cfg.agents == AgentConfig::Full && self.plan.is_some() {
            let current = reviewed(&fact_set(&obs));
            let expected = linalg::normalize(&embed_facts(&self.hasher, &self.review_baseline));
            let observed = linalg::normalize(&embed_facts(&self.hasher, &current));
            if let Ok(verdict) = state_review(&expected, &observed, REVIEW_THRESHOLD) {
                if verdict.decision == ReviewDecision::Replan {
                    let missing: BTreeSet<&str> = self
                        .review_baseline
                        .iter()
                        .filter(|f| !current.contains(*f))
                        .filter_map(|f| object_of(f))
                        .filter(|id| !obs.sees(id))
                        .collect();
                    let reason = if missing.is_empty() {
                        format!("drift: {:.3}", verdict.drift)
                    } else {
                        format!("missing: {}", missing.into_iter().collect::<Vec<_>>().join(", "))
                    };
                    last = self.request_replan(tick, self.ids.hippocampus.clone(), reason).or(last);
                    self.review_baseline = current;
                }
            }
        }
        // Everyone but the leader consumes their inbox at this rate.
        for id in self.registry.active_agents() {
            if id.as_str() != "Leader" {
                self.bus.drain(&id);
            }
        }
        last
    }

    fn deliberative(&mut self, _tick: Tick) -> Option<Job<Deliberation>> {
        if self.finished || !self.deliberative_enabled() {
            return None;
        }
        let mut reasons = Vec::new();
        for env in self.bus.drain(&AgentId::from("Leader")) {
            if env.kind() == PayloadKind::HighLevelCommand {
                if let Some(r) = env.payload.body.get("reason").and_then(Document::as_str) {
                    if !reasons.iter().any(|x| x == r) {
                        reasons.push(r.to_owned());
                    }
                }
            }
        }
        if reasons.is_empty() || self.round_pending {
            return None;
        }
        self.round_pending = true;
        let input = self.round_input(reasons, false);
        Some(Box::new(move || deliberate(input)))
    }

    fn apply(&mut self, tick: Tick, plan: Deliberation) -> Option<LogId> {
        self.round_pending = false;
        if self.finished {
            return None;
        }
        match plan {
            Deliberation::Keep => {
                self.stuck_reported = false;
                None
            }
            Deliberation::Abort { reason } => {
                let body = Document::object([("text", Document::from(format!("abort: {reason}")))]);
                let id = self.send(&self.ids.planner, Importance::High, PayloadKind::IntermediateText, body);
                self.sim.cancel();
                self.finish(tick, Outcome::HandledAbort);
                id
            }
            Deliberation::Replace { output, key: _, responses } => {
                if self.plan.as_ref().is_some_and(|p| p.plan == output.plan) {
                    self.stuck_reported = false;
                    return None;
                }
                let vocab: Vec<String> = phrase_vocabulary(&self.spec.world).into_iter().collect();
                let Ok(dag) = build_htn_dag(&output.plan, &vocab) else {
                    return None;
                };
                let had_plan = self.plan.is_some();
                self.plan = Some(ActivePlan {
                    pathway: route_by_difficulty(&output.plan),
                    plan: output.plan.clone(),
                    dag,
                    done: BTreeSet::new(),
                });
                self.stuck_reported = false;
                if had_plan {
                    self.result.plan_changes.push(tick.0);
                    self.sim.cancel();
                    self.motor.reset();
                    self.pre_action = None;
                    self.retry_at = 0;
                }
                let id = self.send(
                    &AgentId::from("Leader"),
                    Importance::Medium,
                    PayloadKind::SubtaskAssign,
                    output.plan.to_document(),
                );
                for (kind, sender, body) in responses {
                    self.send(&sender, Importance::Medium, kind, body);
                }
                id
            }
        }
    }

    fn finished(&self) -> bool {
        self.finished
    }
}

/// Run one trial to completion.
pub fn run_episode(task_id: u8, seed: u64, cfg: &EpisodeConfig) -> Result<TrialResult, BenchError> {
    let (result, _) = run_episode_traced(task_id, seed, cfg)?;
    Ok(result)
}

/// Run one trial and also return its scheduler trace.
pub fn run_episode_traced(task_id: u8, seed: u64, cfg: &EpisodeConfig) -> Result<(TrialResult, ExecutionTrace), BenchError> {
    cfg.rates.validate()?;
    let mut episode = Episode::new(task_id, seed, cfg.clone())?;
    if episode.deliberative_enabled() {
        let plan = deliberate(episode.round_input(Vec::new(), true));
        episode.apply(Tick::ZERO, plan);
    }
    let horizon = episode.spec.timeout_ticks;
    let trace = Scheduler { rates: cfg.rates, mode: cfg.mode }.run(&mut episode, horizon);
    if !episode.finished {
        episode.finish(Tick(horizon), Outcome::Failure);
    }
    if let Some(dir) = &cfg.trace_dir {
        let path = dir.join(format!("trace_task{task_id}_seed{seed}_{}.ndjson", cfg.agents.as_str()));
        trace.write_ndjson(&path)?;
        episode.result.trace_path = Some(path);
    }
    Ok((episode.result, trace))
}
