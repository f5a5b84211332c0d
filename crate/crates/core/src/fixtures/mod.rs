//! Deterministic stand-ins for the model and the cluster: scripted agents,
//! job outcome tables and the campaign profiles built from them.

mod outcomes;
mod profile;
mod script;

pub use outcomes::{wildcard_match, FixtureValue, JobOutcome, OutcomeRule, OutcomeTable};
pub use profile::{fixtures_root, Expectations, Profile, ProfileError, ProfileSpec, PROFILES};
pub use script::{
    token_proxy, AgentScript, Predicate, ScriptAction, ScriptContext, ScriptError, ScriptRule, ScriptedBackend,
    ScriptedFactory,
};
