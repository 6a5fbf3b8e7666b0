//! Episode loop, experiment runs and sweeps.
//!
//! Each decision goes observe → suggest → arbiter → step → (optional) TD
//! update on the executed action → trace line. The Q-table is carried across
//! the episodes of a run, so a hybrid run keeps learning.

use std::collections::{HashSet, VecDeque};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use narrarl_core::arbiter::DEFAULT_HISTORY;
use narrarl_core::narratives::{self, RenderOptions, BUILTIN_IDS};
use narrarl_core::rng::{self, Stream};
use narrarl_core::{
    compute_metrics, env, generate_grid, init_qtable, observe, suggest, td_update, ArbiterRequest, EpisodeRecord,
    GridError, GridWorld, Metrics, QTable, RlParams,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arbiter::{Arbiter, ArbiterError, FailurePolicy, LlmArbiter};
use crate::files::{self, FileError};
use crate::llm_client::{ChatClient, ChatConfig, ChatError, HttpChatClient};
use crate::trace::{DecisionRecord, TraceError, TraceWriter};

/// `grid` section: either `{n, density, seed}` or `{path}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl GridSpec {
    pub fn generated(n: usize, density: f64, seed: u64) -> Self {
        Self { n: Some(n), density: Some(density), seed: Some(seed), path: None }
    }

    pub fn file(path: impl Into<PathBuf>) -> Self {
        Self { path: Some(path.into()), ..Self::default() }
    }
}

/// `rl` section. `max_steps` defaults to 4·n².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlSection {
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    #[serde(default = "defaults::epsilon")]
    pub epsilon: f64,
    #[serde(default = "defaults::episodes")]
    pub episodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
}

impl Default for RlSection {
    fn default() -> Self {
        Self {
            alpha: defaults::alpha(),
            gamma: defaults::gamma(),
            epsilon: defaults::epsilon(),
            episodes: defaults::episodes(),
            max_steps: None,
        }
    }
}

impl RlSection {
    pub fn params_for(&self, n: usize) -> RlParams {
        RlParams {
            alpha: self.alpha,
            gamma: self.gamma,
            epsilon: self.epsilon,
            episodes: self.episodes,
            max_steps: self.max_steps.unwrap_or(4 * n * n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArbiterKind {
    Passthrough,
    Scripted,
    Llm,
}

/// `arbiter` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArbiterConfig {
    pub kind: ArbiterKind,
    /// A built-in narrative id, or a path to a framework JSON file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub narrative: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chat: Option<ChatConfig>,
    #[serde(default = "defaults::retries")]
    pub retries: u32,
    #[serde(default)]
    pub on_transport_failure: FailurePolicy,
    #[serde(default = "defaults::yes")]
    pub include_goal_delta: bool,
    #[serde(default = "defaults::history")]
    pub history: usize,
}

impl ArbiterConfig {
    pub fn local(kind: ArbiterKind) -> Self {
        Self {
            kind,
            narrative: None,
            chat: None,
            retries: defaults::retries(),
            on_transport_failure: FailurePolicy::default(),
            include_goal_delta: true,
            history: DEFAULT_HISTORY,
        }
    }
}

mod defaults {
    pub fn alpha() -> f64 {
        0.5
    }
    pub fn gamma() -> f64 {
        0.9
    }
    pub fn epsilon() -> f64 {
        0.2
    }
    pub fn episodes() -> usize {
        10
    }
    pub fn retries() -> u32 {
        2
    }
    pub fn history() -> usize {
        narrarl_core::arbiter::DEFAULT_HISTORY
    }
    pub fn yes() -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridSpec,
    #[serde(default)]
    pub rl: RlSection,
    pub arbiter: ArbiterConfig,
    pub run_seed: u64,
    pub log_path: PathBuf,
    /// Start from a saved Q-table instead of a fresh one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_qtable: Option<PathBuf>,
    #[serde(default = "defaults::yes")]
    pub learn_during_run: bool,
    /// Store the outbound messages of chat-backed decisions in the trace.
    #[serde(default)]
    pub capture_prompts: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("config `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

fn is_framework_path(narrative: &str) -> bool {
    narrative.ends_with(".json")
}

impl ExperimentConfig {
    /// Read a config file. Relative paths inside it are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut config: ExperimentConfig = files::read_json(path).map_err(|e| match e {
            FileError::Io { source, .. } => ConfigError::new(path.display().to_string(), source.to_string()),
            other => ConfigError::new(path.display().to_string(), other.to_string()),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut self.log_path);
        if let Some(p) = self.initial_qtable.as_mut() {
            resolve(p);
        }
        if let Some(p) = self.grid.path.as_mut() {
            resolve(p);
        }
        if let Some(n) = self.arbiter.narrative.as_mut().filter(|n| is_framework_path(n)) {
            let mut p = PathBuf::from(&*n);
            resolve(&mut p);
            *n = p.display().to_string();
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.grid;
        match (&g.path, g.n, g.density, g.seed) {
            (Some(_), None, None, None) => {}
            (Some(_), ..) => {
                return Err(ConfigError::new("grid", "give either `path` or `n`/`density`/`seed`, not both"))
            }
            (None, Some(n), Some(d), Some(_)) => {
                if !(env::MIN_SIDE..=env::MAX_SIDE).contains(&n) {
                    return Err(ConfigError::new(
                        "grid.n",
                        format!("must lie in {}..={}", env::MIN_SIDE, env::MAX_SIDE),
                    ));
                }
                if !(0.0..=1.0).contains(&d) {
                    return Err(ConfigError::new("grid.density", "must lie in [0, 1]"));
                }
            }
            (None, n, d, _) => {
                let missing = if n.is_none() {
                    "grid.n"
                } else if d.is_none() {
                    "grid.density"
                } else {
                    "grid.seed"
                };
                return Err(ConfigError::new(missing, "required when no grid path is given"));
            }
        }
        self.rl
            .params_for(g.n.unwrap_or(env::MIN_SIDE))
            .validate()
            .map_err(|e| ConfigError::new(format!("rl.{}", e.field()), e.to_string()))?;
        if self.log_path.as_os_str().is_empty() {
            return Err(ConfigError::new("log_path", "must not be empty"));
        }
        let a = &self.arbiter;
        if a.kind == ArbiterKind::Llm {
            let narrative = a
                .narrative
                .as_deref()
                .ok_or_else(|| ConfigError::new("arbiter.narrative", "required when kind is llm"))?;
            if !BUILTIN_IDS.contains(&narrative) && !is_framework_path(narrative) {
                return Err(ConfigError::new("arbiter.narrative", format!("unknown narrative `{narrative}`")));
            }
            let chat = a.chat.as_ref().ok_or_else(|| ConfigError::new("arbiter.chat", "required when kind is llm"))?;
            chat.validate().map_err(|field| ConfigError::new(format!("arbiter.chat.{field}"), "invalid value"))?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    File(#[from] FileError),
    #[error("grid generation failed: {0}")]
    Grid(#[from] GridError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("arbiter failed: {0}")]
    Arbiter(#[from] ArbiterError),
    #[error(transparent)]
    Chat(#[from] ChatError),
}

impl ExperimentError {
    /// Problems with the inputs, as opposed to failures while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            ExperimentError::Config(_)
                | ExperimentError::Grid(_)
                | ExperimentError::File(
                    FileError::Parse { .. } | FileError::Grid { .. } | FileError::Validation { .. }
                )
                | ExperimentError::Chat(ChatError::AuthMissing)
        ) || matches!(self, ExperimentError::File(e) if e.is_not_found())
    }
}

/// Aggregated outcome of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub run_id: String,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub total_wall_clock_ms: f64,
    pub per_episode: Vec<EpisodeRecord>,
    pub config: ExperimentConfig,
}

impl Report {
    /// Copy with run id, wall clock and latency zeroed, for determinism checks.
    pub fn without_volatile(&self) -> Report {
        let mut r = self.clone();
        r.run_id.clear();
        r.total_wall_clock_ms = 0.0;
        r.metrics.llm_latency_ms_total = 0;
        for e in &mut r.per_episode {
            e.llm_latency_ms_total = 0;
        }
        r
    }
}

/// `run.jsonl` → `run.report.json`.
pub fn report_path(log_path: &Path) -> PathBuf {
    log_path.with_extension("report.json")
}

/// Fixed per-run settings of the decision loop.
pub struct EpisodeRunner<'a> {
    pub grid: &'a GridWorld,
    pub params: RlParams,
    pub arbiter: &'a Arbiter,
    pub learn: bool,
    pub history: usize,
    pub capture_prompts: bool,
    pub run_id: &'a str,
}

impl EpisodeRunner<'_> {
    /// Play one episode from the grid start, logging every decision.
    pub fn run<R: Rng + ?Sized, W: Write>(
        &self,
        episode: usize,
        qtable: &mut QTable,
        rng: &mut R,
        sink: &mut TraceWriter<W>,
    ) -> Result<EpisodeRecord, ExperimentError> {
        let grid = self.grid;
        let p = &self.params;
        let narrative_id = self.arbiter.narrative_id().map(str::to_owned);
        let mut recent: VecDeque<narrarl_core::Position> = VecDeque::with_capacity(self.history + 1);
        let mut record = EpisodeRecord {
            episode,
            success: false,
            steps: 0,
            return_: 0.0,
            decisions: 0,
            followed: 0,
            fallbacks: 0,
            llm_latency_ms_total: 0,
        };
        let mut pos = grid.start();
        while record.steps < p.max_steps {
            let observation = observe(grid, pos);
            let suggestion = suggest(qtable, pos, p.epsilon, rng);
            let request = ArbiterRequest {
                episode,
                step: record.steps,
                observation,
                suggestion,
                narrative_id: narrative_id.clone(),
                recent_positions: recent.iter().copied().collect(),
            };
            let decision = self.arbiter.decide(&request)?;
            let verdict = decision.verdict;
            let t = env::step(grid, pos, verdict.action);
            if self.learn {
                td_update(qtable, pos, verdict.action, &t, p.alpha, p.gamma);
            }
            sink.append(&DecisionRecord {
                run_id: self.run_id.to_owned(),
                episode,
                step: record.steps,
                position: pos,
                q_values: suggestion.q_values,
                suggested: suggestion.action,
                exploratory: suggestion.exploratory,
                observation,
                narrative_id: narrative_id.clone(),
                chosen: verdict.action,
                followed: verdict.followed_suggestion,
                fallback: verdict.fallback,
                rationale: verdict.rationale,
                latency_ms: verdict.latency_ms,
                reward: t.reward,
                next_position: t.next,
                terminal: t.terminal,
                prompt: if self.capture_prompts { decision.prompt } else { None },
            })?;
            record.steps += 1;
            record.decisions += 1;
            record.return_ += t.reward;
            record.followed += verdict.followed_suggestion as usize;
            record.fallbacks += verdict.fallback as usize;
            record.llm_latency_ms_total += verdict.latency_ms;
            if self.history > 0 {
                if recent.len() == self.history {
                    recent.pop_front();
                }
                recent.push_back(pos);
            }
            pos = t.next;
            if t.terminal {
                record.success = true;
                break;
            }
        }
        sink.end_episode()?;
        Ok(record)
    }
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: Report,
    pub grid: GridWorld,
    pub qtable: QTable,
}

fn new_run_id(seed: u64) -> String {
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
    format!("{seed:016x}-{nanos:x}-{:x}", std::process::id())
}

pub fn build_grid(spec: &GridSpec) -> Result<GridWorld, ExperimentError> {
    match (&spec.path, spec.n, spec.density, spec.seed) {
        (Some(path), ..) => Ok(files::load_grid(path)?),
        (None, Some(n), Some(d), Some(s)) => Ok(generate_grid(n, d, s)?),
        _ => Err(ConfigError::new("grid", "incomplete grid section").into()),
    }
}

/// Build the arbiter named by `config`. A chat-backed arbiter uses `client`
/// when given, otherwise an HTTP client keyed from the environment.
pub fn build_arbiter(config: &ArbiterConfig, client: Option<Arc<dyn ChatClient>>) -> Result<Arbiter, ExperimentError> {
    Ok(match config.kind {
        ArbiterKind::Passthrough => Arbiter::Passthrough,
        ArbiterKind::Scripted => Arbiter::Scripted,
        ArbiterKind::Llm => {
            let narrative = config
                .narrative
                .as_deref()
                .ok_or_else(|| ConfigError::new("arbiter.narrative", "required when kind is llm"))?;
            let framework = if is_framework_path(narrative) {
                files::load_framework(Path::new(narrative))?
            } else {
                narratives::builtin(narrative).map_err(|e| ConfigError::new("arbiter.narrative", e.to_string()))?
            };
            let client = match client {
                Some(c) => c,
                None => {
                    let chat = config
                        .chat
                        .clone()
                        .ok_or_else(|| ConfigError::new("arbiter.chat", "required when kind is llm"))?;
                    Arc::new(HttpChatClient::from_env(chat)?)
                }
            };
            Arbiter::Llm(LlmArbiter {
                framework,
                client,
                retries: config.retries,
                options: RenderOptions { include_goal_delta: config.include_goal_delta },
                on_transport_failure: config.on_transport_failure,
            })
        }
    })
}

/// Run with an HTTP chat client when the arbiter needs one.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report, ExperimentError> {
    run_experiment_with(config, None).map(|o| o.report)
}

/// Run `config`, writing the trace to `log_path` and the report beside it.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    client: Option<Arc<dyn ChatClient>>,
) -> Result<RunOutcome, ExperimentError> {
    config.validate()?;
    let started = Instant::now();
    let grid = build_grid(&config.grid)?;
    let params = config.rl.params_for(grid.n());
    params.validate().map_err(|e| ConfigError::new(format!("rl.{}", e.field()), e.to_string()))?;
    let arbiter = build_arbiter(&config.arbiter, client)?;
    let run_id = new_run_id(config.run_seed);

    let mut qtable = match &config.initial_qtable {
        Some(path) => {
            let q = files::load_qtable(path)?;
            if q.n() != grid.n() {
                return Err(ConfigError::new(
                    "initial_qtable",
                    format!("table is for n={}, grid has n={}", q.n(), grid.n()),
                )
                .into());
            }
            q
        }
        None => init_qtable(grid.n(), rng::derive_seed(config.run_seed, Stream::QInit)),
    };
    let mut actions = rng::stream_rng(config.run_seed, Stream::Actions);
    let mut sink: TraceWriter<File> = TraceWriter::create(&config.log_path)?;
    let runner = EpisodeRunner {
        grid: &grid,
        params,
        arbiter: &arbiter,
        learn: config.learn_during_run,
        history: config.arbiter.history,
        capture_prompts: config.capture_prompts,
        run_id: &run_id,
    };
    let per_episode = (0..params.episodes)
        .map(|e| runner.run(e, &mut qtable, &mut actions, &mut sink))
        .collect::<Result<Vec<_>, _>>()?;
    drop(sink);

    let metrics = compute_metrics(&per_episode)
        .map_err(|_| ConfigError::new("rl.episodes", "must be at least 1 to compute metrics"))?;
    let report = Report {
        run_id,
        metrics,
        total_wall_clock_ms: started.elapsed().as_secs_f64() * 1000.0,
        per_episode,
        config: config.clone(),
    };
    files::write_json(&report_path(&config.log_path), &report)?;
    Ok(RunOutcome { report, grid, qtable })
}

/// Run every config, `parallelism` at a time, returning results in input
/// order. One config failing does not stop the others.
pub fn sweep(
    configs: &[ExperimentConfig],
    parallelism: usize,
) -> Result<Vec<Result<Report, ExperimentError>>, ConfigError> {
    sweep_with(configs, parallelism, None)
}

pub fn sweep_with(
    configs: &[ExperimentConfig],
    parallelism: usize,
    client: Option<Arc<dyn ChatClient>>,
) -> Result<Vec<Result<Report, ExperimentError>>, ConfigError> {
    if configs.is_empty() {
        return Err(ConfigError::new("configs", "at least one config is required"));
    }
    let mut seen = HashSet::new();
    for c in configs {
        if !seen.insert(&c.log_path) {
            return Err(ConfigError::new(
                "log_path",
                format!("{} is used by more than one config", c.log_path.display()),
            ));
        }
    }
    let workers = parallelism.clamp(1, configs.len());
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<Report, ExperimentError>>>> =
        Mutex::new((0..configs.len()).map(|_| None).collect());
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(config) = configs.get(i) else { break };
                let result = run_experiment_with(config, client.clone()).map(|o| o.report);
                slots.lock().unwrap()[i] = Some(result);
            });
        }
    });
    Ok(slots.into_inner().unwrap().into_iter().map(|r| r.expect("every slot filled")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_client::{StubClient, StubReply};
    use narrarl_core::{Action, Position};

    fn config(dir: &Path, kind: ArbiterKind, episodes: usize) -> ExperimentConfig {
        ExperimentConfig {
            grid: GridSpec::generated(5, 0.3, 3),
            rl: RlSection { episodes, ..RlSection::default() },
            arbiter: ArbiterConfig::local(kind),
            run_seed: 17,
            log_path: dir.join("run.jsonl"),
            initial_qtable: None,
            learn_during_run: true,
            capture_prompts: false,
        }
    }

    #[test]
    fn passthrough_adheres_fully() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_experiment(&config(dir.path(), ArbiterKind::Passthrough, 10)).unwrap();
        assert_eq!(report.per_episode.len(), 10);
        assert_eq!(report.metrics.adherence_rate, 1.0);
        assert_eq!(report.metrics.fallback_rate, 0.0);
        assert!(report_path(&dir.path().join("run.jsonl")).exists());
    }

    #[test]
    fn budget_of_one_step_fails() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path(), ArbiterKind::Scripted, 1);
        c.rl.max_steps = Some(1);
        let r = run_experiment(&c).unwrap();
        assert!(!r.per_episode[0].success);
        assert_eq!(r.per_episode[0].steps, 1);
        assert_eq!(r.metrics.avg_steps_successful, None);
    }

    #[test]
    fn scripted_overrides_blocked_greedy_start() {
        // Obstacle right of the start; make Right the greedy choice there.
        let grid = GridWorld::from_parts(4, Position::new(0, 0), Position::new(3, 3), [Position::new(1, 0)]).unwrap();
        let mut q = init_qtable(4, 1);
        q.set(Position::new(0, 0), Action::Right, 10.0);
        let arbiter = Arbiter::Scripted;
        let runner = EpisodeRunner {
            grid: &grid,
            params: RlParams { epsilon: 0.0, ..RlParams::defaults_for(4, 1) },
            arbiter: &arbiter,
            learn: true,
            history: 5,
            capture_prompts: false,
            run_id: "t",
        };
        let mut sink = TraceWriter::new(Vec::new(), "mem");
        let rec = runner.run(0, &mut q, &mut rng::seeded(0), &mut sink).unwrap();
        let bytes = sink.into_inner().unwrap();
        let records = crate::trace::parse_log(&bytes[..], Path::new("mem")).unwrap();
        assert_eq!(records[0].suggested, Action::Right);
        assert_eq!(records[0].chosen, Action::Down);
        assert!(!records[0].followed);
        assert_eq!(rec.decisions, records.len());
    }

    #[test]
    fn overridden_blocked_suggestion_keeps_its_value() {
        // Only the executed action is updated, so a wall move the scripted
        // arbiter keeps refusing never loses its initial value.
        let grid = GridWorld::from_parts(4, Position::new(0, 0), Position::new(3, 3), [Position::new(1, 0)]).unwrap();
        let mut q = init_qtable(4, 1);
        let before = q.values_at(Position::new(0, 0));
        let arbiter = Arbiter::Scripted;
        let runner = EpisodeRunner {
            grid: &grid,
            params: RlParams { epsilon: 0.0, max_steps: 40, ..RlParams::defaults_for(4, 1) },
            arbiter: &arbiter,
            learn: true,
            history: 5,
            capture_prompts: false,
            run_id: "t",
        };
        let mut sink = TraceWriter::new(Vec::new(), "mem");
        runner.run(0, &mut q, &mut rng::seeded(0), &mut sink).unwrap();
        let after = q.values_at(Position::new(0, 0));
        for a in [Action::Up, Action::Left, Action::Right] {
            assert_eq!(before[a.index()].to_bits(), after[a.index()].to_bits(), "{a}");
        }
        assert_ne!(before[Action::Down.index()], after[Action::Down.index()]);
    }

    #[test]
    fn validation_names_fields() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path(), ArbiterKind::Llm, 1);
        assert_eq!(c.validate().unwrap_err().field, "arbiter.narrative");
        c.arbiter.narrative = Some("minotaur".into());
        assert_eq!(c.validate().unwrap_err().field, "arbiter.narrative");
        c.arbiter.narrative = Some("sherlock".into());
        assert_eq!(c.validate().unwrap_err().field, "arbiter.chat");
        let mut chat = ChatConfig::new("http://localhost", "m");
        chat.max_attempts = 0;
        c.arbiter.chat = Some(chat);
        assert_eq!(c.validate().unwrap_err().field, "arbiter.chat.max_attempts");

        let mut c = config(dir.path(), ArbiterKind::Scripted, 1);
        c.rl.alpha = 2.0;
        assert_eq!(c.validate().unwrap_err().field, "rl.alpha");
        let mut c = config(dir.path(), ArbiterKind::Scripted, 1);
        c.grid.seed = None;
        assert_eq!(c.validate().unwrap_err().field, "grid.seed");
        c.grid.path = Some("g.json".into());
        assert_eq!(c.validate().unwrap_err().field, "grid");
    }

    #[test]
    fn missing_api_key_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path(), ArbiterKind::Llm, 1);
        c.arbiter.narrative = Some("direct".into());
        c.arbiter.chat = Some(ChatConfig::new("http://127.0.0.1:9", "m"));
        if std::env::var(crate::llm_client::API_KEY_VAR).is_err() {
            let err = run_experiment(&c).unwrap_err();
            assert!(matches!(err, ExperimentError::Chat(ChatError::AuthMissing)));
            assert!(err.is_validation());
        }
    }

    #[test]
    fn llm_run_with_stub_records_narrative_and_prompts() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path(), ArbiterKind::Llm, 2);
        c.arbiter.narrative = Some("westworld".into());
        c.arbiter.chat = Some(ChatConfig::new("http://unused", "m"));
        c.capture_prompts = true;
        c.rl.max_steps = Some(6);
        let stub = Arc::new(StubClient::cycling([StubReply::from("ACTION: RIGHT"), "ACTION: DOWN".into()]));
        let out = run_experiment_with(&c, Some(stub.clone())).unwrap();
        let records = crate::trace::read_log(&c.log_path).unwrap();
        assert!(records.iter().all(|r| r.narrative_id.as_deref() == Some("westworld")));
        assert!(records.iter().all(|r| r.prompt.as_ref().is_some_and(|p| p.len() == 2)));
        assert_eq!(stub.call_count(), records.len());
        assert_eq!(out.report.per_episode.iter().map(|e| e.decisions).sum::<usize>(), records.len());
    }

    #[test]
    fn recent_positions_window_is_bounded() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path(), ArbiterKind::Llm, 1);
        c.arbiter.narrative = Some("direct".into());
        c.arbiter.chat = Some(ChatConfig::new("http://unused", "m"));
        c.arbiter.history = 2;
        c.rl.max_steps = Some(5);
        let framework_path = dir.path().join("hist.json");
        files::write_json(
            &framework_path,
            &narrarl_core::NarrativeFramework::new("hist", "p", "{recent_positions}\nACTION: <UP|DOWN|LEFT|RIGHT>")
                .unwrap(),
        )
        .unwrap();
        c.arbiter.narrative = Some(framework_path.display().to_string());
        let stub = Arc::new(StubClient::cycling(["ACTION: DOWN".into()]));
        run_experiment_with(&c, Some(stub.clone())).unwrap();
        let calls = stub.calls();
        assert_eq!(calls[0][1].content.lines().next(), Some("none"));
        for call in &calls[2..] {
            let line = call[1].content.lines().next().unwrap();
            assert_eq!(line.matches('(').count(), 2, "{line}");
        }
    }

    #[test]
    fn duplicate_log_paths_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path(), ArbiterKind::Scripted, 1);
        let err = sweep(&[c.clone(), c], 2).unwrap_err();
        assert_eq!(err.field, "log_path");
        assert!(sweep(&[], 1).is_err());
    }

    #[test]
    fn parallel_sweep_matches_sequential() {
        let dir = tempfile::tempdir().unwrap();
        let make = |tag: &str| -> Vec<ExperimentConfig> {
            (0..3u64)
                .map(|i| ExperimentConfig {
                    grid: GridSpec::generated(5 + 2 * i as usize, 0.3, i),
                    run_seed: 100 + i,
                    log_path: dir.path().join(format!("{tag}{i}.jsonl")),
                    ..config(dir.path(), ArbiterKind::Scripted, 4)
                })
                .collect()
        };
        let strip =
            |r: Report| Report { config: ExperimentConfig { log_path: PathBuf::new(), ..r.config.clone() }, ..r };
        let seq: Vec<_> =
            sweep(&make("s"), 1).unwrap().into_iter().map(|r| strip(r.unwrap()).without_volatile()).collect();
        let par: Vec<_> =
            sweep(&make("p"), 3).unwrap().into_iter().map(|r| strip(r.unwrap()).without_volatile()).collect();
        assert_eq!(seq, par);
    }

    #[test]
    fn sweep_over_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let configs: Vec<_> = [5usize, 7, 9, 11]
            .into_iter()
            .map(|n| ExperimentConfig {
                grid: GridSpec::generated(n, 0.3, n as u64),
                log_path: dir.path().join(format!("n{n}.jsonl")),
                ..config(dir.path(), ArbiterKind::Scripted, 2)
            })
            .collect();
        let reports = sweep(&configs, 4).unwrap();
        assert_eq!(reports.len(), 4);
        for (r, n) in reports.iter().zip([5, 7, 9, 11]) {
            assert_eq!(r.as_ref().unwrap().config.grid.n, Some(n));
        }
    }

    #[test]
    fn episode_totals_match_logged_records() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path(), ArbiterKind::Scripted, 6);
        let report = run_experiment(&c).unwrap();
        let records = crate::trace::read_log(&c.log_path).unwrap();
        for e in &report.per_episode {
            let mine: Vec<_> = records.iter().filter(|r| r.episode == e.episode).collect();
            assert_eq!(mine.len(), e.steps);
            assert_eq!(mine.iter().map(|r| r.reward).sum::<f64>().to_bits(), e.return_.to_bits());
            assert_eq!(mine.iter().filter(|r| r.followed).count(), e.followed);
        }
    }

    #[test]
    fn sweep_collects_failures_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let good = config(dir.path(), ArbiterKind::Scripted, 2);
        let mut bad = config(dir.path(), ArbiterKind::Scripted, 2);
        bad.grid = GridSpec::file(dir.path().join("missing.json"));
        bad.log_path = dir.path().join("bad.jsonl");
        let results = sweep(&[bad, good], 2).unwrap();
        assert!(results[0].is_err());
        assert!(results[1].is_ok());
    }

    #[test]
    fn config_file_round_trip_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(
            &path,
            r#"{"grid":{"n":5,"density":0.3,"seed":1},
                "rl":{"alpha":0.5,"gamma":0.9,"epsilon":0.2,"episodes":3,"max_steps":50},
                "arbiter":{"kind":"scripted"},
                "run_seed":4,"log_path":"out/run.jsonl","learn_during_run":true}"#,
        )
        .unwrap();
        let c = ExperimentConfig::load(&path).unwrap();
        assert_eq!(c.log_path, dir.path().join("out/run.jsonl"));
        assert_eq!(c.rl.max_steps, Some(50));
        let r = run_experiment(&c).unwrap();
        assert_eq!(r.per_episode.len(), 3);

        std::fs::write(&path, r#"{"grid":{"n":5},"arbiter":{"kind":"scripted"},"run_seed":1,"log_path":"x","typo":1}"#)
            .unwrap();
        assert!(ExperimentConfig::load(&path).unwrap_err().message.contains("typo"));
        let err = ExperimentConfig::load(&dir.path().join("missing.json")).unwrap_err();
        assert!(err.field.contains("missing.json"));
    }

    #[test]
    fn report_serializes_null_average() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path(), ArbiterKind::Scripted, 1);
        c.rl.max_steps = Some(1);
        run_experiment(&c).unwrap();
        let v: serde_json::Value = files::read_json(&report_path(&c.log_path)).unwrap();
        assert!(v["avg_steps_successful"].is_null());
        assert_eq!(v["success_rate"], 0.0);
        assert!(v["config"]["arbiter"]["kind"] == "scripted");
    }
}
