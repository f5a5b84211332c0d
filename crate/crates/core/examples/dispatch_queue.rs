//! Task ordering and budget bands as the dispatcher sees them.
//!
//!     cargo run --example dispatch_queue

use campaign::board::{ExperimentId, TaskKind};
use campaign::dispatcher::{budget_band, TaskQueue};

fn main() {
    let mut q = TaskQueue::new();
    let tasks = [
        (TaskKind::Implement, 1, 10),
        (TaskKind::Analyze, 2, 30),
        (TaskKind::Implement, 3, 5),
        (TaskKind::Fix, 4, 40),
        (TaskKind::Analyze, 5, 20),
    ];
    for (kind, n, at) in tasks {
        q.push(kind, ExperimentId::from_index(n), at);
    }
    // A second task for the same experiment is refused.
    assert!(!q.push(TaskKind::Fix, ExperimentId::from_index(4), 50));

    println!("dispatch order:");
    while let Some(t) = q.pop_next() {
        println!("  {:<9} {} (created {})", format!("{:?}", t.kind), t.experiment, t.created_at);
    }

    println!("budget bands:");
    for remaining in [50, 20, 19, 10, 9, 1, 0] {
        let band = budget_band(remaining);
        println!("  {remaining:>2} left -> {:<8} {}", band.as_str(), band.guidance());
    }
}
