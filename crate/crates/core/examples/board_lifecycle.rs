//! Walks experiments through the lifecycle by hand, records metrics and
//! shows that the journal replays to the same board.
//!
//!     cargo run --example board_lifecycle

use campaign::board::journal::{decode, encode};
use campaign::board::{Board, Direction, LifecycleEvent as Ev, MetricScope, MetricSpec, Phase, Policy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut board = Board::new("demo", 3, MetricSpec::single("mase", Direction::Min), Policy::default(), 0);
    board.set_phase(Phase::Phase3, 0);

    let mut ids = Vec::new();
    for (name, hypothesis) in [
        ("seasonal_naive", "period-24 naive is a fair floor"),
        ("patch_tst", "patching helps long horizons"),
        ("lstm_small", "a small LSTM is enough"),
    ] {
        ids.push(board.propose(name, hypothesis, None, 0).experiment.expect("budget left"));
    }
    let rejected = board.propose("one_too_many", "over budget", None, 0);
    println!("fourth proposal: {:?}", rejected.outcome);

    let mut t = 1;
    for (id, mase) in ids.iter().take(2).zip([1.00, 0.82]) {
        for ev in [Ev::Assign, Ev::CodeWritten, Ev::CheckPassed, Ev::Enqueue, Ev::JobLaunched, Ev::JobSucceeded] {
            board.transition(id, ev, Some("worker-1".into()), t)?;
            t += 1;
        }
        board.record_metric(id, "mase", mase, MetricScope::Full, t)?;
        board.transition(id, Ev::DebriefWritten, None, t)?;
    }

    // The third fails until the fix budget runs out.
    let lstm = &ids[2];
    for ev in [Ev::Assign, Ev::CodeWritten, Ev::CheckPassed, Ev::Enqueue, Ev::JobLaunched] {
        board.transition(lstm, ev, None, t)?;
    }
    loop {
        board.transition(lstm, Ev::JobFailed, None, t)?;
        let state = board.transition(lstm, Ev::Fix, None, t)?.state;
        println!("lstm_small after fix: {state}");
        if state.is_terminal() {
            break;
        }
        for ev in [Ev::CodeWritten, Ev::CheckPassed, Ev::Enqueue, Ev::JobLaunched] {
            board.transition(lstm, ev, None, t)?;
        }
        t += 1;
    }

    for row in board.leaderboard(None) {
        println!("#{} {} mase={}", row.rank, row.name, row.value);
    }
    let text = encode(&board);
    let replayed = Board::replay(decode(&text)?)?;
    println!("{} events, replay equal: {}", board.events().len(), replayed == board);
    Ok(())
}
