//! Feeds a stream of outcomes through the supervisor's health window and
//! parses a supervisor reply into adapter patches.
//!
//!     cargo run --example health_window

use campaign::board::{ExperimentId, Policy};
use campaign::supervisor::{parse_supervisor_reply, HealthWindow, SupervisorConfig, WindowEntry};

const REPLY: &str = "\
DIAGNOSIS: five of the last eight runs passed an unknown kwarg to the model constructor
APPEND domain_knowledge.md:
- Check constructor keyword names against the installed library before submitting.
END
";

fn main() {
    let tau = Policy::default().tau;
    let cfg = SupervisorConfig::default();
    let mut window = HealthWindow::new(cfg.window);
    // o = success, x = failure
    let outcomes = "ooxoxxoxxxox";
    for (i, c) in outcomes.chars().enumerate() {
        window.push(WindowEntry {
            experiment: ExperimentId::from_index(i as u32 + 1),
            failed: c == 'x',
        });
        let rate = window.failure_rate().unwrap_or(0.0);
        let fire = window.should_trigger(tau, cfg.min_fill);
        println!(
            "{:>2} {c}  fill {:>2}/{}  rate {rate:.2}{}",
            i + 1,
            window.len(),
            window.capacity(),
            if fire { "  -> intervene" } else { "" }
        );
    }

    let reply = parse_supervisor_reply(REPLY);
    println!("\ndiagnosis: {}", reply.diagnosis);
    for p in reply.patches {
        print!("patch {}:\n{}", p.target, p.text);
    }
}
