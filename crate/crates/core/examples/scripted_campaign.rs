//! Runs a fixture profile end to end on the virtual clock.
//!
//!     cargo run --example scripted_campaign -- happy_path

use campaign::campaign::run_profile;
use campaign::fixtures::Profile;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let name = std::env::args().nth(1).unwrap_or_else(|| "happy_path".into());
    let ws = tempfile::tempdir()?;
    let started = std::time::Instant::now();
    let (_campaign, outcome) = run_profile(Profile::shipped(&name)?, ws.path())?;
    println!("{}", serde_json::to_string_pretty(&outcome)?);
    println!("wall clock: {:.2?}", started.elapsed());
    Ok(())
}
