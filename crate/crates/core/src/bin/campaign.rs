use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use campaign::board::{journal, SharedBoard};
use campaign::campaign::{request_halt, Campaign, CampaignOutcome, JOURNAL};
use campaign::clock::{SharedClock, SystemClock};
use campaign::config::{CampaignConfig, GatewayConfig};
use campaign::events::EventBus;
use campaign::gateway::{http, CampaignSummary, Gateway};

#[derive(Parser)]
#[command(name = "campaign", version, about = "Run and steer autonomous experiment campaigns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a campaign in an empty workspace and run it until it halts.
    Launch(RunArgs),
    /// Continue a stopped campaign from its journal.
    Resume(RunArgs),
    /// Print the campaign summary from the journal.
    Status {
        config: PathBuf,
        /// Serve the read-only gateway over the journal until interrupted.
        #[arg(long)]
        serve: bool,
    },
    /// Ask a running campaign to halt at its next tick.
    Halt {
        config: PathBuf,
        #[arg(long, default_value = "")]
        reason: String,
    },
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Serve the gateway while the campaign runs.
    #[arg(long)]
    serve: bool,
    /// Override the bind address from the config.
    #[arg(long)]
    bind: Option<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type AnyResult<T> = Result<T, Box<dyn std::error::Error>>;

fn run(cli: Cli) -> AnyResult<()> {
    match cli.command {
        Command::Launch(args) => drive(args, true),
        Command::Resume(args) => drive(args, false),
        Command::Status { config, serve } => status(&config, serve),
        Command::Halt { config, reason } => {
            let cfg = CampaignConfig::load(&config)?;
            let ws = &cfg.campaign.workspace;
            if !ws.join(JOURNAL).exists() {
                return Err(format!("no campaign in {}", ws.display()).into());
            }
            if let Some(why) = journal::load(&ws.join(JOURNAL))?.campaign().halt_reason.clone() {
                println!("{} already halted: {why}", cfg.campaign.id);
                return Ok(());
            }
            request_halt(ws, reason.trim())?;
            println!("halt requested for {}", cfg.campaign.id);
            Ok(())
        }
    }
}

fn drive(args: RunArgs, fresh: bool) -> AnyResult<()> {
    let cfg = CampaignConfig::load(&args.config)?;
    let gw_cfg = GatewayConfig {
        bind: args.bind.unwrap_or_else(|| cfg.gateway.bind.clone()),
        ..cfg.gateway.clone()
    };
    let mut campaign = Campaign::from_config(cfg)?;
    if args.serve {
        let ws = campaign.workspace().to_path_buf();
        let clock = campaign.clock.clone();
        let runtime = campaign.runtime.clone();
        campaign.on_board(move |board| {
            let gateway = Gateway::new(board.clone(), &ws, clock.clone())
                .with_runtime(runtime.clone())
                .with_page_size(gw_cfg.page_size)
                .with_static_dir(gw_cfg.static_dir.clone());
            spawn_gateway(gateway, gw_cfg.bind.clone());
        });
    }
    let outcome = if fresh { campaign.launch()? } else { campaign.resume()? };
    print_outcome(&outcome);
    Ok(())
}

fn spawn_gateway(gateway: Gateway, bind: String) {
    std::thread::spawn(move || {
        let rt = match tokio::runtime::Runtime::new() {
            Ok(rt) => rt,
            Err(e) => return log::error!("gateway runtime: {e}"),
        };
        if let Err(e) = rt.block_on(http::serve(gateway, &bind)) {
            log::error!("gateway: {e}");
        }
    });
}

fn print_outcome(o: &CampaignOutcome) {
    println!("{}", serde_json::to_string_pretty(o).expect("outcome serializes"));
}

fn status(config: &Path, serve: bool) -> AnyResult<()> {
    let cfg = CampaignConfig::load(config)?;
    let ws = &cfg.campaign.workspace;
    let path = ws.join(JOURNAL);
    if !path.exists() {
        return Err(format!("no campaign in {}", ws.display()).into());
    }
    let mut board = journal::load(&path)?;
    board.set_workspace(ws);
    println!("{}", serde_json::to_string_pretty(&CampaignSummary::of(&board))?);
    if serve {
        let clock: SharedClock = Arc::new(SystemClock);
        let shared = SharedBoard::new(board, EventBus::new());
        let gateway = Gateway::new(shared, ws, clock)
            .read_only()
            .with_page_size(cfg.gateway.page_size)
            .with_static_dir(cfg.gateway.static_dir.clone());
        tokio::runtime::Runtime::new()?.block_on(http::serve(gateway, &cfg.gateway.bind))?;
    }
    Ok(())
}
