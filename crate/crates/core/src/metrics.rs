//! Per-episode records and their aggregates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Totals for one episode of an experiment run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub success: bool,
    pub steps: usize,
    #[serde(rename = "return")]
    pub return_: f64,
    pub decisions: usize,
    pub followed: usize,
    pub fallbacks: usize,
    pub llm_latency_ms_total: u64,
}

/// Aggregates over a list of episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub episodes: usize,
    pub success_rate: f64,
    /// Mean steps over successful episodes only; `None` without successes.
    pub avg_steps_successful: Option<f64>,
    pub adherence_rate: f64,
    pub fallback_rate: f64,
    pub llm_latency_ms_total: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot compute metrics over zero episodes")]
pub struct MetricsError;

pub fn compute_metrics(records: &[EpisodeRecord]) -> Result<Metrics, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError);
    }
    let mut successes = 0usize;
    let mut success_steps = 0usize;
    let mut decisions = 0usize;
    let mut followed = 0usize;
    let mut fallbacks = 0usize;
    let mut latency = 0u64;
    for r in records {
        if r.success {
            successes += 1;
            success_steps += r.steps;
        }
        decisions += r.decisions;
        followed += r.followed;
        fallbacks += r.fallbacks;
        latency += r.llm_latency_ms_total;
    }
    let ratio = |num: usize, den: usize, empty: f64| if den == 0 { empty } else { num as f64 / den as f64 };
    Ok(Metrics {
        episodes: records.len(),
        success_rate: successes as f64 / records.len() as f64,
        avg_steps_successful: (successes > 0).then(|| success_steps as f64 / successes as f64),
        adherence_rate: ratio(followed, decisions, 1.0),
        fallback_rate: ratio(fallbacks, decisions, 0.0),
        llm_latency_ms_total: latency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn rec(episode: usize, success: bool, steps: usize) -> EpisodeRecord {
        EpisodeRecord {
            episode,
            success,
            steps,
            return_: 0.0,
            decisions: steps,
            followed: steps,
            fallbacks: 0,
            llm_latency_ms_total: 0,
        }
    }

    #[test]
    fn success_rate_counts_goal_episodes() {
        let records: Vec<_> = (0..10).map(|i| rec(i, i < 7, 5)).collect();
        assert_eq!(compute_metrics(&records).unwrap().success_rate, 0.7);
    }

    #[test]
    fn average_steps_uses_successes_only() {
        let records = [rec(0, true, 10), rec(1, false, 99), rec(2, true, 12), rec(3, true, 14)];
        let m = compute_metrics(&records).unwrap();
        assert_eq!(m.avg_steps_successful, Some(12.0));
        assert_eq!(m.success_rate, 0.75);
    }

    #[test]
    fn no_successes_means_no_average() {
        let m = compute_metrics(&[rec(0, false, 4), rec(1, false, 4)]).unwrap();
        assert_eq!(m.avg_steps_successful, None);
        assert_eq!(m.success_rate, 0.0);
    }

    #[test]
    fn adherence_and_fallback_are_pooled() {
        let mut a = rec(0, true, 4);
        a.followed = 3;
        a.fallbacks = 1;
        let mut b = rec(1, true, 6);
        b.followed = 6;
        b.fallbacks = 2;
        let m = compute_metrics(&[a, b]).unwrap();
        assert_eq!(m.adherence_rate, 9.0 / 10.0);
        assert_eq!(m.fallback_rate, 3.0 / 10.0);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert_eq!(compute_metrics(&[]), Err(MetricsError));
    }
}
