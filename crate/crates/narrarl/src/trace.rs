//! JSONL decision trace.
//!
//! One flat JSON object per executed step. Keys appear in the order of the
//! fields of [`DecisionRecord`]. `run_id` and `latency_ms` are the only
//! volatile fields; everything else is reproducible from the run config.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use narrarl_core::{compute_metrics, Action, EpisodeRecord, Message, Metrics, MetricsError, Observation, Position};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fields masked when comparing logs across runs.
pub const VOLATILE_FIELDS: [&str; 2] = ["run_id", "latency_ms"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub run_id: String,
    pub episode: usize,
    pub step: usize,
    pub position: Position,
    pub q_values: [f64; 4],
    pub suggested: Action,
    pub exploratory: bool,
    pub observation: Observation,
    pub narrative_id: Option<String>,
    pub chosen: Action,
    pub followed: bool,
    pub fallback: bool,
    pub rationale: String,
    pub latency_ms: u64,
    pub reward: f64,
    pub next_position: Position,
    pub terminal: bool,
    /// Outbound messages, present only when prompt capture is enabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<Vec<Message>>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{}:{line}: record (episode {episode}, step {step}) violates `{field}`: {message}", path.display())]
    InvariantViolation { path: PathBuf, line: usize, episode: usize, step: usize, field: &'static str, message: String },
    #[error("{}: log contains no decisions", path.display())]
    EmptyInput { path: PathBuf },
}

/// Append-only JSONL writer. Lines are buffered and flushed at episode ends.
pub struct TraceWriter<W: Write> {
    out: BufWriter<W>,
    path: PathBuf,
    lines: usize,
}

impl TraceWriter<File> {
    /// Create (truncating) the log at `path`, creating parent directories.
    pub fn create(path: &Path) -> Result<Self, TraceError> {
        let io_err = |source| TraceError::Io { path: path.to_owned(), source };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err)?;
        }
        let file = File::create(path).map_err(io_err)?;
        Ok(Self::new(file, path))
    }
}

impl<W: Write> TraceWriter<W> {
    /// Wrap any writer; `label` names it in error messages.
    pub fn new(writer: W, label: impl Into<PathBuf>) -> Self {
        Self { out: BufWriter::new(writer), path: label.into(), lines: 0 }
    }

    pub fn append(&mut self, record: &DecisionRecord) -> Result<(), TraceError> {
        let io_err = |source| TraceError::Io { path: self.path.clone(), source };
        serde_json::to_writer(&mut self.out, record).map_err(|e| io_err(e.into()))?;
        self.out.write_all(b"\n").map_err(io_err)?;
        self.lines += 1;
        Ok(())
    }

    pub fn end_episode(&mut self) -> Result<(), TraceError> {
        self.out.flush().map_err(|source| TraceError::Io { path: self.path.clone(), source })
    }

    pub fn lines_written(&self) -> usize {
        self.lines
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn into_inner(self) -> Result<W, TraceError> {
        let path = self.path;
        self.out.into_inner().map_err(|e| TraceError::Io { path, source: e.into_error() })
    }
}

/// Parse and validate every line of the log at `path`.
pub fn read_log(path: &Path) -> Result<Vec<DecisionRecord>, TraceError> {
    let file = File::open(path).map_err(|source| TraceError::Io { path: path.to_owned(), source })?;
    parse_log(BufReader::new(file), path)
}

/// [`read_log`] over any reader; `label` names it in errors.
pub fn parse_log(reader: impl BufRead, label: &Path) -> Result<Vec<DecisionRecord>, TraceError> {
    let mut records: Vec<DecisionRecord> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| TraceError::Io { path: label.to_owned(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DecisionRecord = serde_json::from_str(&line).map_err(|e| TraceError::Parse {
            path: label.to_owned(),
            line: line_no,
            message: e.to_string(),
        })?;
        let violation = |field, message: String| TraceError::InvariantViolation {
            path: label.to_owned(),
            line: line_no,
            episode: record.episode,
            step: record.step,
            field,
            message,
        };
        if record.followed != (record.chosen == record.suggested) {
            return Err(violation("followed", format!("chosen {} vs suggested {}", record.chosen, record.suggested)));
        }
        if record.fallback && !record.followed {
            return Err(violation("fallback", "fallback record must follow the suggestion".into()));
        }
        let expected_step = match records.last() {
            Some(prev) if prev.episode == record.episode => {
                if prev.terminal {
                    return Err(violation("episode", "decision after a terminal step".into()));
                }
                prev.step + 1
            }
            Some(prev) if record.episode < prev.episode => {
                return Err(violation("episode", format!("episode {} after episode {}", record.episode, prev.episode)));
            }
            _ => 0,
        };
        if record.step != expected_step {
            return Err(violation("step", format!("expected step {expected_step}")));
        }
        records.push(record);
    }
    Ok(records)
}

/// Per-episode totals rebuilt from decision records. An episode succeeded
/// when its last decision was terminal.
pub fn episodes_from_records(records: &[DecisionRecord]) -> Vec<EpisodeRecord> {
    let mut out: Vec<EpisodeRecord> = Vec::new();
    for r in records {
        if out.last().map(|e| e.episode) != Some(r.episode) {
            out.push(EpisodeRecord {
                episode: r.episode,
                success: false,
                steps: 0,
                return_: 0.0,
                decisions: 0,
                followed: 0,
                fallbacks: 0,
                llm_latency_ms_total: 0,
            });
        }
        let e = out.last_mut().expect("pushed above");
        e.steps += 1;
        e.decisions += 1;
        e.return_ += r.reward;
        e.followed += r.followed as usize;
        e.fallbacks += r.fallback as usize;
        e.llm_latency_ms_total += r.latency_ms;
        e.success = r.terminal;
    }
    out
}

/// Metrics and per-episode records reconstructed from a log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogReport {
    #[serde(flatten)]
    pub metrics: Metrics,
    pub per_episode: Vec<EpisodeRecord>,
}

pub fn report_from_log(path: &Path) -> Result<LogReport, TraceError> {
    let records = read_log(path)?;
    let per_episode = episodes_from_records(&records);
    let metrics =
        compute_metrics(&per_episode).map_err(|MetricsError| TraceError::EmptyInput { path: path.to_owned() })?;
    Ok(LogReport { metrics, per_episode })
}

/// A log line with the volatile fields replaced by fixed values.
pub fn mask_volatile(line: &str) -> Result<String, serde_json::Error> {
    let mut v: serde_json::Value = serde_json::from_str(line)?;
    if let Some(obj) = v.as_object_mut() {
        obj.insert("run_id".into(), serde_json::Value::from("*"));
        obj.insert("latency_ms".into(), serde_json::Value::from(0));
    }
    serde_json::to_string(&v)
}
