//! Batches of seeded trials, per-eval success rates and report output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use cortex_core::embed::fnv1a;
use cortex_sim::scenario::{CATEGORIES, MISSIONS};

use crate::episode::{run_episode, AgentConfig, EpisodeConfig, Outcome, TrialResult};
use crate::BenchError;

#[derive(Clone)]
pub struct BenchConfig {
    pub tasks: Vec<u8>,
    pub evals: usize,
    pub trials_per_eval: usize,
    pub base_seed: u64,
    /// Worker threads; trials are independent so the batch does not depend
    /// on this.
    pub threads: usize,
    pub episode: EpisodeConfig,
    /// Directory for `batch.json` (and traces if the episode config asks).
    pub out: Option<PathBuf>,
}

impl BenchConfig {
    pub fn new(tasks: Vec<u8>, agents: AgentConfig) -> Self {
        Self {
            tasks,
            evals: 8,
            trials_per_eval: 25,
            base_seed: 0,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            episode: EpisodeConfig::new(agents),
            out: None,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.tasks.is_empty() {
            return Err(BenchError::Config("no tasks selected".into()));
        }
        if let Some(t) = self.tasks.iter().find(|t| !(1..=8).contains(*t)) {
            return Err(BenchError::Config(format!("task {t} is not in 1..=8")));
        }
        if self.evals == 0 || self.trials_per_eval == 0 {
            return Err(BenchError::Config("evals and trials per eval must be positive".into()));
        }
        self.episode.rates.validate()?;
        Ok(())
    }

    /// Seed of trial `k` in eval `e`.
    pub fn seed(&self, eval: usize, trial: usize) -> u64 {
        self.base_seed + (eval * self.trials_per_eval + trial) as u64
    }

    pub fn metadata(&self) -> RunMetadata {
        let mut meta = RunMetadata {
            agents: self.episode.agents,
            tasks: self.tasks.clone(),
            evals: self.evals,
            trials_per_eval: self.trials_per_eval,
            base_seed: self.base_seed,
            seeds: (self.base_seed, self.seed(self.evals - 1, self.trials_per_eval - 1)),
            rates: (self.episode.rates.reactive_period, self.episode.rates.memory_period, self.episode.rates.deliberative_period),
            deletion_tick: self.episode.deletion_tick,
            config_hash: String::new(),
        };
        let bytes = serde_json::to_vec(&meta).expect("metadata serializes");
        meta.config_hash = format!("{:016x}", fnv1a(&bytes));
        meta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub agents: AgentConfig,
    pub tasks: Vec<u8>,
    pub evals: usize,
    pub trials_per_eval: usize,
    pub base_seed: u64,
    /// First and last seed, inclusive.
    pub seeds: (u64, u64),
    pub rates: (u64, u64, u64),
    pub deletion_tick: Option<u64>,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub task_id: u8,
    pub category: String,
    pub task: String,
    /// Success percentage of each eval.
    pub evals: Vec<f64>,
    pub avg: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalBatch {
    pub metadata: RunMetadata,
    pub rows: Vec<EvalRow>,
    pub trials: Vec<TrialResult>,
}

impl EvalBatch {
    pub fn row(&self, task_id: u8) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.task_id == task_id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("batch serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Arithmetic mean and sample standard deviation (n − 1 denominator; 0 for
/// a single value). Values are summed in sorted order so the result does not
/// depend on input order.
pub fn aggregate(values: &[f64]) -> Result<(f64, f64), BenchError> {
    if values.is_empty() {
        return Err(BenchError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    if sorted.len() == 1 {
        return Ok((mean, 0.0));
    }
    let mut sq: Vec<f64> = sorted.iter().map(|v| (v - mean).powi(2)).collect();
    sq.sort_by(f64::total_cmp);
    Ok((mean, (sq.iter().sum::<f64>() / (n - 1.0)).sqrt()))
}

fn trim(x: f64, decimals: usize) -> String {
    let s = format!("{x:.decimals$}");
    let s = if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.').to_owned() } else { s };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

/// Table cell `mean±std`, e.g. `100±0` or `76.5±1.41`.
pub fn format_cell(avg: f64, std: f64) -> String {
    format!("{}±{}", trim(avg, 2), trim(std, 2))
}

/// Run every trial of the batch. Identical configs give identical batches.
pub fn run_bench(cfg: &BenchConfig) -> Result<EvalBatch, BenchError> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for &task in &cfg.tasks {
        for e in 0..cfg.evals {
            for k in 0..cfg.trials_per_eval {
                jobs.push((task, cfg.seed(e, k)));
            }
        }
    }
    let threads = cfg.threads.clamp(1, jobs.len().max(1));
    let chunk = jobs.len().div_ceil(threads);
    let results: Vec<Result<TrialResult, BenchError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk.max(1))
            .map(|part| scope.spawn(move || part.iter().map(|(t, s)| run_episode(*t, *s, &cfg.episode)).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("trial thread panicked")).collect()
    });
    let trials = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    for &task in &cfg.tasks {
        let evals: Vec<f64> = (0..cfg.evals)
            .map(|e| {
                let seeds: Vec<u64> = (0..cfg.trials_per_eval).map(|k| cfg.seed(e, k)).collect();
                let wins = trials
                    .iter()
                    .filter(|r| r.task_id == task && seeds.contains(&r.seed) && r.outcome == Outcome::Success)
                    .count();
                100.0 * wins as f64 / cfg.trials_per_eval as f64
            })
            .collect();
        let (avg, std) = aggregate(&evals)?;
        let idx = usize::from(task - 1);
        rows.push(EvalRow { task_id: task, category: CATEGORIES[idx].into(), task: MISSIONS[idx].into(), evals, avg, std });
    }
    let batch = EvalBatch { metadata: cfg.metadata(), rows, trials };
    if let Some(dir) = &cfg.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("batch.json"), batch.to_json())?;
    }
    Ok(batch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    JsonDoc,
}

impl FromStr for ReportFormat {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json-doc" | "json" => Ok(ReportFormat::JsonDoc),
            other => Err(BenchError::Config(format!("unknown report format {other:?}"))),
        }
    }
}

fn render(batch: &EvalBatch, format: ReportFormat) -> String {
    let m = &batch.metadata;
    let mut out = String::new();
    match format {
        ReportFormat::Markdown => {
            let _ = writeln!(out, "| Category | Task | Success (%) |");
            let _ = writeln!(out, "|---|---|---|");
            for r in &batch.rows {
                let _ = writeln!(out, "| {} | {} | {} |", r.category, r.task, format_cell(r.avg, r.std));
            }
            let _ = writeln!(out);
            let _ = writeln!(
                out,
                "Config `{}` ({}), seeds {}..={}, {} evals x {} trials, rates {}:{}:{}.",
                m.config_hash,
                m.agents.as_str(),
                m.seeds.0,
                m.seeds.1,
                m.evals,
                m.trials_per_eval,
                m.rates.0,
                m.rates.1,
                m.rates.2
            );
            let _ = writeln!(out);
            let _ = writeln!(out, "± is the sample standard deviation (n−1) of the per-eval success rates.");
        }
        ReportFormat::Csv => {
            let _ =
                writeln!(out, "# config_hash={} agents={} seeds={}..={}", m.config_hash, m.agents.as_str(), m.seeds.0, m.seeds.1);
            let _ = writeln!(out, "category,task,avg,std,cell");
            for r in &batch.rows {
                let _ = writeln!(
                    out,
                    "{},\"{}\",{},{},{}",
                    r.category,
                    r.task,
                    trim(r.avg, 2),
                    trim(r.std, 2),
                    format_cell(r.avg, r.std)
                );
            }
        }
        ReportFormat::JsonDoc => {
            let rows: Vec<_> = batch
                .rows
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "category": r.category, "task": r.task, "evals": r.evals,
                        "avg": r.avg, "std": r.std, "cell": format_cell(r.avg, r.std),
                    })
                })
                .collect();
            let doc = serde_json::json!({ "metadata": m, "rows": rows, "std_convention": "sample (n-1)" });
            out = serde_json::to_string_pretty(&doc).expect("report serializes");
            out.push('\n');
        }
    }
    out
}

/// Write the batch as a table in `format` to `path`.
pub fn emit_report(batch: &EvalBatch, format: ReportFormat, path: &Path) -> Result<(), BenchError> {
    std::fs::write(path, render(batch, format))?;
    Ok(())
}

/// The report text without writing it anywhere.
pub fn render_report(batch: &EvalBatch, format: ReportFormat) -> String {
    render(batch, format)
}
