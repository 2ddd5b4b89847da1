use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Repaired boundary estimates and the transitions derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionEstimate {
    pub starts: Vec<f64>,
    pub ends: Vec<f64>,
    /// `transitions[i]` is the switch from task `i+1` to task `i+2`.
    pub transitions: Vec<f64>,
}

/// Merges per-task start/end estimates into task-to-task transitions.
///
/// Starts are clamped forward so no task starts before its predecessor; each
/// end is clamped to the following task's end in one ascending pass. The
/// transition between tasks `i` and `i+1` is the midpoint of the end of `i`
/// and the start of `i+1`.
pub fn estimate_transitions(starts: &[f64], ends: &[f64]) -> Result<TransitionEstimate> {
    if starts.is_empty() {
        return Err(Error::Arity {
            what: "boundary estimates",
            expected: 1,
            got: 0,
        });
    }
    if starts.len() != ends.len() {
        return Err(Error::Arity {
            what: "end estimates",
            expected: starts.len(),
            got: ends.len(),
        });
    }

    let mut starts = starts.to_vec();
    for i in 0..starts.len() - 1 {
        if starts[i + 1] < starts[i] {
            starts[i + 1] = starts[i];
        }
    }

    let mut ends = ends.to_vec();
    for i in 0..ends.len() - 1 {
        if ends[i] > ends[i + 1] {
            ends[i] = ends[i + 1];
        }
    }

    let transitions = (0..starts.len() - 1)
        .map(|i| (ends[i] + starts[i + 1]) / 2.0)
        .collect();

    Ok(TransitionEstimate {
        starts,
        ends,
        transitions,
    })
}

/// Equal-length split of the video into `n_tasks` segments.
pub fn uniform_baseline(duration_s: f64, n_tasks: usize) -> Vec<f64> {
    (1..n_tasks)
        .map(|i| i as f64 * duration_s / n_tasks as f64)
        .collect()
}

/// Forces transitions into `[0, duration]` and non-decreasing order.
pub fn monotone_transitions(transitions: &[f64], duration_s: f64) -> Vec<f64> {
    let mut floor = 0.0f64;
    transitions
        .iter()
        .map(|t| {
            floor = t.clamp(floor, duration_s);
            floor
        })
        .collect()
}
