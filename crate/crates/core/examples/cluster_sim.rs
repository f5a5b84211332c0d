//! Six jobs on a four-GPU simulated cluster: jobs queue when the pool is
//! full, a fix job jumps the line, and the log shows occupancy per event.
//!
//!     cargo run --example cluster_sim

use std::sync::Arc;

use campaign::board::ExperimentId;
use campaign::clock::{SharedClock, VirtualClock};
use campaign::cluster::sim::SimBackend;
use campaign::cluster::{Cluster, JobPriority, JobSpec};
use campaign::fixtures::OutcomeTable;

const OUTCOMES: &str = r#"
- pattern: "wide_*"
  attempts:
    - {duration_s: 1800, metrics: {mase: 0.91}}
- pattern: "flaky_*"
  attempts:
    - {duration_s: 300, exit_code: 1, log: "CUDA out of memory"}
    - {duration_s: 600, metrics: {mase: 0.88}}
- pattern: "*"
  attempts:
    - {duration_s: 900, metrics: {mase: 1.02}}
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ws = tempfile::tempdir()?;
    let clock = Arc::new(VirtualClock::new(0));
    let shared: SharedClock = clock.clone();
    let table: OutcomeTable = serde_yaml::from_str(OUTCOMES)?;
    let mut cluster = Cluster::new(Box::new(SimBackend::new(table, shared.clone())), 4, shared);

    let spec = |n: u32, name: &str, gpus: u32, priority: JobPriority| JobSpec {
        experiment: ExperimentId::from_index(n),
        name: name.into(),
        command: "python harness/train.py".into(),
        workdir: ws.path().join(name),
        gpus_requested: gpus,
        time_limit_s: 3600,
        env: Default::default(),
        priority,
    };
    let mut jobs = Vec::new();
    for (n, (name, gpus)) in [("wide_a", 2), ("flaky_b", 1), ("base_c", 1), ("wide_d", 2), ("base_e", 1)]
        .into_iter()
        .enumerate()
    {
        jobs.push(cluster.submit(spec(n as u32 + 1, name, gpus, JobPriority::Normal))?.id);
    }

    let mut refixed = false;
    while jobs.iter().any(|id| !cluster.handle(id).is_some_and(|h| h.state.is_terminal())) {
        clock.advance(60_000);
        for id in jobs.clone() {
            let state = cluster.poll(&id)?;
            if state.is_failure() && !refixed {
                // Resubmit the failed job as a fix; it outranks waiting work.
                refixed = true;
                let name = cluster.spec(&id).map(|s| s.name.clone()).unwrap_or_default();
                jobs.push(cluster.submit(spec(2, &name, 1, JobPriority::Fix))?.id);
            }
        }
    }

    for ev in cluster.log() {
        println!(
            "{:>6}s {:<8} {:<9} {:<10} gpus={:<8} allocated={} free={}",
            ev.at / 1000,
            ev.job,
            format!("{:?}", ev.kind),
            ev.state.to_string(),
            format!("{:?}", ev.gpus),
            ev.allocated,
            ev.free
        );
    }
    Ok(())
}
