use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::board::{BoardEvent, EventPayload, ExperimentId, LifecycleState};

/// One experiment's final outcome as the supervisor counts it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowEntry {
    pub experiment: ExperimentId,
    pub failed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("failure rate of an empty window")]
pub struct EmptyWindow;

/// The last `capacity` terminal outcomes, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthWindow {
    capacity: usize,
    entries: VecDeque<WindowEntry>,
}

impl HealthWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "window capacity must be positive");
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &WindowEntry> {
        self.entries.iter()
    }

    pub fn push(&mut self, entry: WindowEntry) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn failures(&self) -> usize {
        self.entries.iter().filter(|e| e.failed).count()
    }

    pub fn failure_rate(&self) -> Result<f64, EmptyWindow> {
        if self.entries.is_empty() {
            return Err(EmptyWindow);
        }
        Ok(self.failures() as f64 / self.entries.len() as f64)
    }

    /// Strictly above `tau`, and only once `min_fill` outcomes are in.
    pub fn should_trigger(&self, tau: f64, min_fill: usize) -> bool {
        self.entries.len() >= min_fill.max(1) && self.failure_rate().is_ok_and(|r| r > tau)
    }
}

/// Window sizing and intervention pacing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupervisorConfig {
    pub window: usize,
    pub min_fill: usize,
    /// Terminal outcomes that must accrue between interventions.
    pub cooldown: usize,
    /// Lets the supervisor append to files under `harness/` as well.
    pub allow_harness_patches: bool,
    /// Bytes of each failure log shown to the supervisor.
    pub log_excerpt_bytes: usize,
}

impl Default for SupervisorConfig {
    fn default() -> Self {
        Self {
            window: 10,
            min_fill: 5,
            cooldown: 5,
            allow_harness_patches: false,
            log_excerpt_bytes: 2048,
        }
    }
}

/// Folds the board journal into the health window. Each experiment counts
/// once: as a success when it reaches `analyzed`, as a failure when it
/// reaches `failed_terminal`, as a success when it is cancelled first.
/// A supervisor record resets the window and the cooldown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HealthMonitor {
    config_window: usize,
    window: HealthWindow,
    counted: BTreeSet<ExperimentId>,
    since_intervention: usize,
    interventions: u32,
    last_seq: u64,
}

impl HealthMonitor {
    pub fn new(config: &SupervisorConfig) -> Self {
        Self {
            config_window: config.window,
            window: HealthWindow::new(config.window),
            counted: BTreeSet::new(),
            // The first intervention does not wait for a cooldown.
            since_intervention: usize::MAX,
            interventions: 0,
            last_seq: 0,
        }
    }

    pub fn window(&self) -> &HealthWindow {
        &self.window
    }

    pub fn interventions(&self) -> u32 {
        self.interventions
    }

    /// Processes journal events newer than the last one seen. Returns the
    /// outcomes added.
    pub fn observe(&mut self, events: &[BoardEvent]) -> Vec<WindowEntry> {
        let mut added = Vec::new();
        let from = self.last_seq;
        for ev in events.iter().filter(|e| e.seq > from) {
            self.last_seq = ev.seq;
            let entry = match &ev.payload {
                EventPayload::Transition { experiment, to, .. } => match to {
                    LifecycleState::Analyzed => Some((experiment, false)),
                    LifecycleState::FailedTerminal => Some((experiment, true)),
                    _ => None,
                },
                EventPayload::Cancel { experiment, .. } => Some((experiment, false)),
                EventPayload::Supervisor { number, .. } => {
                    self.window.clear();
                    self.since_intervention = 0;
                    self.interventions = *number;
                    None
                }
                _ => None,
            };
            if let Some((id, failed)) = entry
                && self.counted.insert(id.clone()) {
                    let e = WindowEntry {
                        experiment: id.clone(),
                        failed,
                    };
                    self.window.push(e.clone());
                    self.since_intervention = self.since_intervention.saturating_add(1);
                    added.push(e);
                }
        }
        added
    }

    pub fn should_intervene(&self, tau: f64, config: &SupervisorConfig) -> bool {
        debug_assert_eq!(config.window, self.config_window);
        self.since_intervention >= config.cooldown && self.window.should_trigger(tau, config.min_fill)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(failed: usize, total: usize) -> HealthWindow {
        let mut w = HealthWindow::new(10);
        for i in 0..total {
            w.push(WindowEntry {
                experiment: ExperimentId::from_index(i as u32 + 1),
                failed: i < failed,
            });
        }
        w
    }

    #[test]
    fn rates() {
        assert_eq!(window(5, 10).failure_rate(), Ok(0.5));
        assert_eq!(window(0, 10).failure_rate(), Ok(0.0));
        assert_eq!(window(4, 10).failure_rate(), Ok(0.4));
        assert_eq!(HealthWindow::new(10).failure_rate(), Err(EmptyWindow));
    }

    #[test]
    fn strict_threshold_and_cold_start() {
        assert!(window(5, 10).should_trigger(0.4, 5));
        assert!(!window(4, 10).should_trigger(0.4, 5));
        assert!(!window(4, 4).should_trigger(0.4, 5));
        assert!(window(3, 5).should_trigger(0.4, 5));
    }

    #[test]
    fn capacity_drops_oldest() {
        let mut w = window(10, 10);
        w.push(WindowEntry {
            experiment: "x".into(),
            failed: false,
        });
        assert_eq!(w.len(), 10);
        assert_eq!(w.failures(), 9);
    }
}
