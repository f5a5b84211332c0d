//! The experiment lifecycle transition table.

use super::types::{Experiment, LifecycleEvent as Ev, LifecycleState as St};
use super::BoardError;

/// Target state for `event` from `state`, or `None` when the table has no edge.
///
/// `fix_attempts` and `k_max` only matter for the `failed + fix` edge, which
/// goes back to `implementing` while attempts remain and to `failed_terminal`
/// once the cap is reached. Terminal states have no outgoing edges.
pub fn next_state(state: St, event: Ev, fix_attempts: u32, k_max: u32) -> Option<St> {
    if state.is_terminal() {
        return None;
    }
    let to = match (state, event) {
        (_, Ev::Cancel) => St::Cancelled,
        (St::ToImplement, Ev::Assign) => St::Implementing,
        (St::Implementing, Ev::CodeWritten) => St::Implemented,
        (St::Implemented, Ev::CheckPassed) => St::Checked,
        (St::Checked, Ev::Enqueue) => St::Queued,
        (St::Queued, Ev::JobLaunched) => St::Running,
        (St::Running, Ev::JobSucceeded) => St::Finished,
        (St::Running, Ev::JobFailed) => St::Failed,
        (St::Finished, Ev::DebriefWritten) => St::Analyzed,
        (St::Analyzed, Ev::Acknowledge) => St::Done,
        (St::Failed, Ev::Fix) if fix_attempts < k_max => St::Implementing,
        (St::Failed, Ev::Fix) => St::FailedTerminal,
        (St::Implementing | St::Implemented | St::Finished, Ev::WorkerFailed) => St::Failed,
        _ => return None,
    };
    Some(to)
}

/// Applies `event` to a copy of `exp`. The original is left untouched on error.
pub fn transition(exp: &Experiment, event: Ev, k_max: u32) -> Result<Experiment, BoardError> {
    if exp.state.is_terminal() {
        return Err(BoardError::TerminalMutation {
            experiment: exp.id.clone(),
            state: exp.state,
        });
    }
    let to = next_state(exp.state, event, exp.fix_attempts, k_max).ok_or(
        BoardError::IllegalTransition {
            experiment: exp.id.clone(),
            from: exp.state,
            event,
        },
    )?;
    let mut next = exp.clone();
    if exp.state == St::Failed && to == St::Implementing {
        next.fix_attempts += 1;
    }
    next.state = to;
    Ok(next)
}
