//! Runs a short scripted campaign, then serves its board over HTTP and
//! WebSocket until interrupted.
//!
//!     cargo run --example serve_board -- 127.0.0.1:8470
//!     curl localhost:8470/api/v1/leaderboard

use campaign::campaign::run_profile;
use campaign::fixtures::Profile;
use campaign::gateway::{http, Gateway};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let bind = std::env::args().nth(1).unwrap_or_else(|| "127.0.0.1:8470".into());
    let ws = tempfile::tempdir()?;
    let path = ws.path().to_path_buf();
    let (campaign, outcome) =
        tokio::task::spawn_blocking(move || run_profile(Profile::shipped("budget_exhaustion")?, &path)).await??;
    println!("{} analyzed, halted: {:?}", outcome.analyzed_count, outcome.halt_reason);

    let board = campaign.board().expect("launched").clone();
    let gateway = Gateway::new(board, ws.path(), campaign.clock.clone()).read_only();
    println!("serving http://{bind}/api/v1/board");
    http::serve(gateway, &bind).await?;
    Ok(())
}
