//! Runs a campaign from a config: phases 0 to 2, then the dispatcher, with
//! the journal in the workspace so a stopped campaign can be resumed.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterBundle, AdapterError, BuiltinSet, ADAPTER_DIR};
use crate::agent::{Accounting, BackendFactory, RemoteConfig, RemoteFactory, Runtime};
use crate::board::{journal, Board, BoardError, EventPayload, Phase, SharedBoard};
use crate::clock::{SharedClock, SystemClock, VirtualClock};
use crate::cluster::local::LocalBackend;
use crate::cluster::sim::SimBackend;
use crate::cluster::slurm::{SlurmBackend, SlurmCommands};
use crate::cluster::{Cluster, ClusterEvent};
use crate::config::{BackendConfig, CampaignConfig, ClusterKind};
use crate::dispatcher::{Dispatcher, HALT_FILE};
use crate::events::EventBus;
use crate::fixtures::{fixtures_root, OutcomeTable, Profile, ProfileError};
use crate::pipeline::{run_phase0, run_phase1, run_phase2, PipelineError};
use crate::supervisor::validate_phase_artifacts;
use crate::tools::Toolbelt;

pub const JOURNAL: &str = journal::JOURNAL_FILE;
pub const CLUSTER_LOG: &str = "logs/cluster.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum CampaignError {
    #[error("workspace {0} already holds a campaign; use resume")]
    AlreadyLaunched(PathBuf),
    #[error("no campaign journal in {0}")]
    NotLaunched(PathBuf),
    #[error("no agent backend configured: set backend.url or CAMPAIGN_BACKEND_URL")]
    NoBackend,
    #[error("the sim cluster needs a scripted backend profile for its outcome table")]
    SimWithoutProfile,
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Board(#[from] BoardError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// End state of a run, as printed by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignOutcome {
    pub campaign: String,
    pub halt_reason: Option<String>,
    pub accepted_proposals: u32,
    pub budget_remaining: u32,
    pub analyzed_count: u32,
    pub best_primary: Option<f64>,
    pub strategist_turns: u32,
    pub milestones: u32,
    pub interventions: u32,
    pub ticks: u64,
    pub digest: String,
    pub accounting: Accounting,
}

/// The pieces a campaign runs on. Built from a config by [`Campaign::from_config`],
/// or assembled directly by tests and examples.
pub struct Campaign {
    pub config: CampaignConfig,
    pub clock: SharedClock,
    pub bus: EventBus,
    pub runtime: Arc<Runtime>,
    /// Outcome table for the sim cluster.
    pub outcomes: Option<OutcomeTable>,
    board: Option<SharedBoard>,
    board_hooks: Vec<BoardHook>,
    cluster_log: Vec<ClusterEvent>,
}

type BoardHook = Box<dyn FnMut(&SharedBoard) + Send>;

fn backend_factory(cfg: &CampaignConfig) -> Result<(Arc<dyn BackendFactory>, Option<OutcomeTable>), CampaignError> {
    let ws = cfg.campaign.workspace.clone();
    match &cfg.backend {
        BackendConfig::Scripted { profile, fixtures } => {
            let root = fixtures.clone().unwrap_or_else(fixtures_root);
            let p = Profile::load(&root, profile)?;
            Ok((Arc::new(p.scripts), Some(p.outcomes)))
        }
        BackendConfig::Remote {
            url,
            model,
            api_key_env,
            timeout_s,
        } => {
            let env = RemoteConfig::from_env(ws.clone());
            let url = url.clone().or_else(|| env.as_ref().map(|e| e.url.clone())).ok_or(CampaignError::NoBackend)?;
            let api_key = match api_key_env {
                Some(var) => std::env::var(var).ok(),
                None => env.as_ref().and_then(|e| e.api_key.clone()),
            };
            let model = model
                .clone()
                .or_else(|| env.as_ref().map(|e| e.model.clone()))
                .unwrap_or_else(|| "default".into());
            Ok((
                Arc::new(RemoteFactory(RemoteConfig {
                    url,
                    api_key,
                    model,
                    timeout_s: *timeout_s,
                    workspace: ws,
                })),
                None,
            ))
        }
    }
}

/// Timestamp of the last journaled event, 0 without a journal. A resumed
/// virtual clock starts here so time never runs backwards.
pub fn journal_end(ws: &Path) -> crate::clock::Timestamp {
    fs::read_to_string(ws.join(JOURNAL))
        .ok()
        .and_then(|t| journal::decode(&t).ok())
        .and_then(|evs| evs.last().map(|e| e.at))
        .unwrap_or(0)
}

fn session_log_count(ws: &Path) -> u64 {
    fs::read_dir(ws.join("logs/sessions"))
        .map(|d| {
            d.filter_map(Result::ok)
                .filter(|e| e.file_name() != "index.jsonl")
                .count() as u64
        })
        .unwrap_or(0)
}

impl Campaign {
    pub fn from_config(config: CampaignConfig) -> Result<Self, CampaignError> {
        let ws = config.campaign.workspace.clone();
        fs::create_dir_all(&ws)?;
        let clock: SharedClock = if config.virtual_clock {
            Arc::new(VirtualClock::new(journal_end(&ws)))
        } else {
            Arc::new(SystemClock)
        };
        let (factory, outcomes) = backend_factory(&config)?;
        Ok(Self::assemble(config, clock, factory, outcomes))
    }

    pub fn assemble(
        config: CampaignConfig,
        clock: SharedClock,
        factory: Arc<dyn BackendFactory>,
        outcomes: Option<OutcomeTable>,
    ) -> Self {
        let ws = config.campaign.workspace.clone();
        let bus = EventBus::new();
        let tools = Arc::new(Toolbelt::new(ws.clone(), clock.clone()));
        let runtime = Runtime::new(factory, tools, clock.clone()).with_bus(bus.clone()).with_logs(&ws);
        runtime.skip_ids(session_log_count(&ws));
        Self {
            config,
            clock,
            bus,
            runtime: Arc::new(runtime),
            outcomes,
            board: None,
            board_hooks: Vec::new(),
            cluster_log: Vec::new(),
        }
    }

    /// Runs `hook` once the board exists: after phase 0 on launch, at once
    /// on resume. The CLI uses this to start the gateway.
    pub fn on_board(&mut self, hook: impl FnMut(&SharedBoard) + Send + 'static) {
        self.board_hooks.push(Box::new(hook));
    }

    pub fn workspace(&self) -> &Path {
        &self.config.campaign.workspace
    }

    /// The board, once phase 0 has fixed the metric spec (or after resume).
    pub fn board(&self) -> Option<&SharedBoard> {
        self.board.as_ref()
    }

    /// Cluster events of the last dispatcher run, also kept in
    /// `logs/cluster.jsonl`.
    pub fn cluster_log(&self) -> &[ClusterEvent] {
        &self.cluster_log
    }

    fn bind_board(&mut self, board: Board) -> Result<SharedBoard, CampaignError> {
        let mut board = board;
        board.set_workspace(self.workspace());
        let shared = SharedBoard::new(board, self.bus.clone());
        shared.attach_journal(&self.workspace().join(JOURNAL))?;
        self.runtime.tools().attach_board(shared.clone());
        self.board = Some(shared.clone());
        for hook in &mut self.board_hooks {
            hook(&shared);
        }
        Ok(shared)
    }

    fn warn(&self, board: &SharedBoard, message: String) {
        log::warn!("{message}");
        let now = self.clock.now();
        board.write(|b| b.record(EventPayload::Warning { message }, now));
    }

    fn cluster(&self) -> Result<Cluster, CampaignError> {
        let c = &self.config.cluster;
        let backend: Box<dyn crate::cluster::JobBackend> = match c.kind {
            ClusterKind::Sim => {
                let table = self.outcomes.clone().ok_or(CampaignError::SimWithoutProfile)?;
                Box::new(SimBackend::new(table, self.clock.clone()))
            }
            ClusterKind::Local => Box::new(LocalBackend::new()),
            ClusterKind::Slurm => Box::new(SlurmBackend::new(
                self.workspace().join("jobs"),
                SlurmCommands {
                    sbatch: c.sbatch.clone(),
                    squeue: c.squeue.clone(),
                    sacct: c.sacct.clone(),
                    scancel: c.scancel.clone(),
                    directives: c.directives.clone(),
                },
            )),
        };
        Ok(Cluster::new(backend, c.fleet, self.clock.clone()))
    }

    /// Starts a fresh campaign in an empty workspace and runs it to the end.
    pub fn launch(&mut self) -> Result<CampaignOutcome, CampaignError> {
        let ws = self.workspace().to_path_buf();
        if ws.join(JOURNAL).exists() {
            return Err(CampaignError::AlreadyLaunched(ws));
        }
        let brief = self.config.brief();
        let builtins = BuiltinSet::shipped();
        let phase0 = run_phase0(&self.runtime, &ws, &brief, &builtins)?;
        let mut bundle = phase0.bundle;
        bundle.enable_git(self.config.git_checkpoints);
        let spec = bundle.manifest.metric_spec()?;
        let c = &self.config.campaign;
        let board = Board::new(&c.id, c.budget, spec, self.config.policy.clone(), self.clock.now());
        let board = self.bind_board(board)?;
        self.warn_all(&board, phase0.warnings);
        let message = format!("adapter resolved by {:?}", phase0.path).to_lowercase();
        log::info!("{message}");
        self.run_from(Phase::Phase1, bundle)
    }

    fn warn_all(&self, board: &SharedBoard, warnings: Vec<String>) {
        for w in warnings {
            self.warn(board, w);
        }
    }

    /// Continues a campaign from its journal. A halted campaign is reported
    /// as it stands.
    pub fn resume(&mut self) -> Result<CampaignOutcome, CampaignError> {
        let ws = self.workspace().to_path_buf();
        let path = ws.join(JOURNAL);
        if !path.exists() {
            return Err(CampaignError::NotLaunched(ws));
        }
        let board = journal::load(&path)?;
        let phase = board.campaign().phase;
        let shared = self.bind_board(board)?;
        if shared.read(|b| b.is_halted()) {
            return Ok(self.outcome(0));
        }
        let mut bundle = AdapterBundle::load(&ws.join(ADAPTER_DIR))?;
        bundle.enable_git(self.config.git_checkpoints);
        let start = match phase {
            Phase::Phase0 => Phase::Phase1,
            p => p,
        };
        self.run_from(start, bundle)
    }

    fn run_from(&mut self, start: Phase, bundle: AdapterBundle) -> Result<CampaignOutcome, CampaignError> {
        let ws = self.workspace().to_path_buf();
        let board = self.board.clone().expect("board bound");
        let brief = self.config.brief();
        if start <= Phase::Phase1 {
            board.write(|b| b.set_phase(Phase::Phase1, self.clock.now()));
            let r = run_phase1(&self.runtime, &bundle, &ws, &brief, self.config.campaign.skip_phase1)?;
            self.warn_all(&board, r.warnings);
        }
        if start <= Phase::Phase2 {
            board.write(|b| b.set_phase(Phase::Phase2, self.clock.now()));
            let r = run_phase2(&self.runtime, &bundle, &ws, self.config.policy.i_max)?;
            let mut warnings: Vec<String> = r.warning.into_iter().collect();
            warnings.extend(r.reverted.iter().map(|p| format!("tester changed {p} outside harness/tests; reverted")));
            if !r.passed {
                warnings.extend(
                    validate_phase_artifacts(Phase::Phase2, &ws)
                        .into_iter()
                        .map(|i| format!("phase 2 artifact issue: {i:?}")),
                );
            }
            self.warn_all(&board, warnings);
        }
        let cluster = self.cluster()?;
        let mut dispatcher = Dispatcher::new(
            board.clone(),
            cluster,
            self.runtime.clone(),
            bundle,
            &ws,
            self.clock.clone(),
            self.config.dispatcher.clone(),
        );
        dispatcher.run();
        let ticks = dispatcher.ticks();
        self.cluster_log = dispatcher.cluster().log().to_vec();
        persist_cluster_log(&ws, &self.cluster_log)?;
        let _ = fs::remove_file(ws.join(HALT_FILE));
        board.read(|b| journal::write_snapshot(b, &ws.join(journal::SNAPSHOT_FILE)))?;
        Ok(self.outcome(ticks))
    }

    fn outcome(&self, ticks: u64) -> CampaignOutcome {
        let board = self.board.as_ref().expect("board bound");
        board.read(|b| {
            let c = b.campaign();
            CampaignOutcome {
                campaign: c.id.clone(),
                halt_reason: c.halt_reason.clone(),
                accepted_proposals: c.accepted_proposals,
                budget_remaining: c.budget_remaining,
                analyzed_count: c.analyzed_count,
                best_primary: c.best_primary,
                strategist_turns: c.strategist_turns,
                milestones: c.milestones,
                interventions: c.interventions,
                ticks,
                digest: journal::digest(b),
                accounting: self.runtime.account(),
            }
        })
    }
}

fn persist_cluster_log(ws: &Path, log: &[ClusterEvent]) -> std::io::Result<()> {
    use std::io::Write;
    fs::create_dir_all(ws.join("logs"))?;
    let mut f = fs::OpenOptions::new().create(true).append(true).open(ws.join(CLUSTER_LOG))?;
    for ev in log {
        writeln!(f, "{}", serde_json::to_string(ev).expect("cluster events serialize"))?;
    }
    Ok(())
}

/// Asks a running campaign to stop at its next tick.
pub fn request_halt(workspace: &Path, reason: &str) -> std::io::Result<()> {
    fs::write(workspace.join(HALT_FILE), format!("{reason}\n"))
}

/// Config for running a fixture profile on the virtual clock and sim cluster.
pub fn profile_config(profile: &Profile, workspace: &Path) -> CampaignConfig {
    let s = &profile.spec;
    CampaignConfig {
        campaign: crate::config::CampaignSection {
            id: profile.name.clone(),
            workspace: workspace.to_path_buf(),
            domain: s.domain.clone(),
            objective: s.objective.clone(),
            dataset: None,
            budget: s.budget,
            skip_phase1: s.skip_phase1,
        },
        policy: s.policy.clone(),
        dispatcher: s.dispatcher.clone(),
        backend: BackendConfig::Scripted {
            profile: profile.name.clone(),
            fixtures: profile.dir.parent().map(Path::to_path_buf),
        },
        cluster: crate::config::ClusterConfig {
            kind: ClusterKind::Sim,
            fleet: s.fleet,
            ..Default::default()
        },
        gateway: Default::default(),
        virtual_clock: true,
        git_checkpoints: false,
    }
}

/// Launches a shipped or custom profile in `workspace` and runs it to the end.
pub fn run_profile(profile: Profile, workspace: &Path) -> Result<(Campaign, CampaignOutcome), CampaignError> {
    let config = profile_config(&profile, workspace);
    fs::create_dir_all(workspace)?;
    let clock: SharedClock = Arc::new(VirtualClock::new(0));
    let mut campaign = Campaign::assemble(config, clock, Arc::new(profile.scripts), Some(profile.outcomes));
    let outcome = campaign.launch()?;
    Ok((campaign, outcome))
}
