//! What a strategist turn produces and how it lands on the board.

use serde::{Deserialize, Serialize};

use crate::board::{
    Board, BoardError, ExperimentId, LifecycleState, PlaybookAuthor, ProposalOutcome,
};
use crate::clock::Timestamp;
use crate::tools::valid_name;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalSpec {
    pub name: String,
    pub hypothesis: String,
    pub priority_hint: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cancellation {
    /// Experiment id or name.
    pub experiment: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StrategistOutput {
    pub proposals: Vec<ProposalSpec>,
    pub cancellations: Vec<Cancellation>,
    pub playbook_update: Option<String>,
}

fn field(parts: &[&str], i: usize) -> String {
    parts.get(i).map(|s| s.trim().to_string()).unwrap_or_default()
}

/// Parses `PROPOSE:`, `CANCEL:` and `PLAYBOOK:` lines from a final report.
/// The playbook block runs to an `END` line, the next directive, or the end.
pub fn parse_strategist_report(text: &str) -> StrategistOutput {
    let mut out = StrategistOutput::default();
    let mut playbook: Option<Vec<&str>> = None;
    for line in text.lines() {
        let t = line.trim();
        let directive = ["PROPOSE:", "CANCEL:", "PLAYBOOK:"]
            .into_iter()
            .find(|d| t.len() >= d.len() && t[..d.len()].eq_ignore_ascii_case(d));
        if let Some(lines) = playbook.as_mut() {
            if t == "END" {
                out.playbook_update = Some(lines.join("\n"));
                playbook = None;
                continue;
            }
            if directive.is_none() {
                lines.push(line);
                continue;
            }
            out.playbook_update = Some(lines.join("\n"));
            playbook = None;
        }
        let Some(d) = directive else { continue };
        let rest = t[d.len()..].trim();
        match d {
            "PROPOSE:" => {
                let parts: Vec<&str> = rest.split('|').collect();
                let name = field(&parts, 0);
                if name.is_empty() {
                    continue;
                }
                out.proposals.push(ProposalSpec {
                    name,
                    hypothesis: field(&parts, 1),
                    priority_hint: parts.get(2).and_then(|p| p.trim().parse().ok()),
                });
            }
            "CANCEL:" => {
                let parts: Vec<&str> = rest.splitn(2, '|').collect();
                let experiment = field(&parts, 0);
                if !experiment.is_empty() {
                    out.cancellations.push(Cancellation {
                        experiment,
                        reason: field(&parts, 1),
                    });
                }
            }
            _ => {
                let mut lines = Vec::new();
                if !rest.is_empty() {
                    lines.push(rest);
                }
                playbook = Some(lines);
            }
        }
    }
    if let Some(lines) = playbook {
        out.playbook_update = Some(lines.join("\n"));
    }
    out.playbook_update = out
        .playbook_update
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty());
    out
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ApplyReport {
    pub accepted: Vec<ExperimentId>,
    pub rejected: Vec<(String, ProposalOutcome)>,
    pub invalid_names: Vec<String>,
    /// Cancelled experiments with the state they were in.
    pub cancelled: Vec<(ExperimentId, LifecycleState)>,
    pub cancel_rejected: Vec<(String, String)>,
    pub playbook_seq: Option<u32>,
}

/// Applies a turn item by item; a bad item never aborts the rest.
pub fn apply_strategist_output(board: &mut Board, out: &StrategistOutput, at: Timestamp) -> ApplyReport {
    let mut report = ApplyReport::default();
    for p in &out.proposals {
        if !valid_name(&p.name) {
            report.invalid_names.push(p.name.clone());
            continue;
        }
        let r = board.propose(&p.name, &p.hypothesis, p.priority_hint, at);
        match r.experiment {
            Some(id) => report.accepted.push(id),
            None => report.rejected.push((p.name.clone(), r.outcome)),
        }
    }
    for c in &out.cancellations {
        let id = board
            .experiment(&ExperimentId(c.experiment.clone()))
            .or_else(|| board.experiment_by_name(&c.experiment))
            .map(|e| e.id.clone());
        let Some(id) = id else {
            report.cancel_rejected.push((c.experiment.clone(), "unknown experiment".into()));
            continue;
        };
        let reason = if c.reason.is_empty() { "cancelled by strategist" } else { &c.reason };
        match board.cancel(&id, reason, at) {
            Ok(from) => report.cancelled.push((id, from)),
            Err(e @ (BoardError::TerminalMutation { .. } | BoardError::IllegalTransition { .. })) => {
                report.cancel_rejected.push((c.experiment.clone(), e.to_string()))
            }
            Err(e) => report.cancel_rejected.push((c.experiment.clone(), e.to_string())),
        }
    }
    if let Some(text) = &out.playbook_update
        && let Ok(v) = board.append_playbook(text, PlaybookAuthor::Strategist, at) {
            report.playbook_seq = Some(v.seq);
        }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::board::{Direction, MetricSpec, Phase, Policy};

    fn board(budget: u32) -> Board {
        let mut b = Board::new("c", budget, MetricSpec::single("mase", Direction::Min), Policy::default(), 0);
        b.set_phase(Phase::Phase3, 0);
        b
    }

    #[test]
    fn parses_all_directives() {
        let out = parse_strategist_report(
            "Thoughts first.\nPROPOSE: tft_small | smaller TFT | 2\npropose: nbeats | N-BEATS baseline\nCANCEL: exp-0003 | dominated\nPLAYBOOK:\n- TFT beats LSTM\n- use MASE\nEND\ntrailing",
        );
        assert_eq!(out.proposals.len(), 2);
        assert_eq!(out.proposals[0].priority_hint, Some(2));
        assert_eq!(out.proposals[1].priority_hint, None);
        assert_eq!(out.cancellations[0].experiment, "exp-0003");
        assert_eq!(out.playbook_update.as_deref(), Some("- TFT beats LSTM\n- use MASE"));
    }

    #[test]
    fn playbook_block_stops_at_next_directive() {
        let out = parse_strategist_report("PLAYBOOK: first line\nsecond\nPROPOSE: a | b");
        assert_eq!(out.playbook_update.as_deref(), Some("first line\nsecond"));
        assert_eq!(out.proposals.len(), 1);
    }

    #[test]
    fn proposals_capped_by_budget() {
        let mut b = board(2);
        let out = StrategistOutput {
            proposals: ["a", "b", "c"]
                .iter()
                .map(|n| ProposalSpec {
                    name: n.to_string(),
                    hypothesis: String::new(),
                    priority_hint: None,
                })
                .collect(),
            ..Default::default()
        };
        let r = apply_strategist_output(&mut b, &out, 1);
        assert_eq!(r.accepted.len(), 2);
        assert_eq!(r.rejected, vec![("c".to_string(), ProposalOutcome::BudgetExhausted)]);
        assert_eq!(b.campaign().budget_remaining, 0);
    }

    #[test]
    fn terminal_cancel_rejected_others_proceed() {
        let mut b = board(5);
        let a = b.propose("a", "", None, 1).experiment.unwrap();
        let c = b.propose("c", "", None, 1).experiment.unwrap();
        b.cancel(&a, "gone", 2).unwrap();
        let out = StrategistOutput {
            cancellations: vec![
                Cancellation {
                    experiment: a.to_string(),
                    reason: "again".into(),
                },
                Cancellation {
                    experiment: "c".into(),
                    reason: String::new(),
                },
            ],
            playbook_update: Some("notes".into()),
            ..Default::default()
        };
        let r = apply_strategist_output(&mut b, &out, 3);
        assert_eq!(r.cancel_rejected.len(), 1);
        assert_eq!(r.cancelled, vec![(c, LifecycleState::ToImplement)]);
        assert_eq!(r.playbook_seq, Some(1));
    }
}
