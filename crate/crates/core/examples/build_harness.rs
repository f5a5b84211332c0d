//! Phases 0 to 2 with the shipped scripts: customize the built-in time
//! series adapter, explore the data, then build and review the harness.
//!
//!     cargo run --example build_harness

use std::sync::Arc;

use campaign::adapter::BuiltinSet;
use campaign::agent::Runtime;
use campaign::board::Policy;
use campaign::clock::{SharedClock, VirtualClock};
use campaign::fixtures::{fixtures_root, ScriptedFactory};
use campaign::pipeline::{run_phase0, run_phase1, run_phase2, CampaignBrief};
use campaign::tools::Toolbelt;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ws = tempfile::tempdir()?;
    let mut scripts = ScriptedFactory::new([]);
    scripts.load_dir(&fixtures_root().join("common/scripts"))?;
    let clock: SharedClock = Arc::new(VirtualClock::new(0));
    let tools = Arc::new(Toolbelt::new(ws.path(), clock.clone()));
    let runtime = Runtime::new(Arc::new(scripts), tools, clock).with_logs(ws.path());
    let brief = CampaignBrief {
        domain: "time_series".into(),
        objective: "beat seasonal naive on hourly load".into(),
        dataset: None,
    };

    let p0 = run_phase0(&runtime, ws.path(), &brief, &BuiltinSet::shipped())?;
    println!("phase 0: {:?} via {} session(s)", p0.path, p0.sessions.len());
    let p1 = run_phase1(&runtime, &p0.bundle, ws.path(), &brief, false)?;
    println!("phase 1: {} session(s), {} warning(s)", p1.sessions.len(), p1.warnings.len());
    let p2 = run_phase2(&runtime, &p0.bundle, ws.path(), Policy::default().i_max)?;
    println!(
        "phase 2: {} iteration(s), tests passed: {}, tester runs: {}",
        p2.iterations, p2.passed, p2.tester_runs
    );
    for v in &p2.verdicts {
        println!("  iteration {}: {:?}", v.iteration, v.verdict.verdict);
    }
    for entry in walkdir::WalkDir::new(ws.path().join("harness")).sort_by_file_name() {
        let entry = entry?;
        if entry.file_type().is_file() {
            println!("  {}", entry.path().strip_prefix(ws.path())?.display());
        }
    }
    Ok(())
}
