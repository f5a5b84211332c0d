//! Scripted agent backend. A script is a list of rules; the first rule whose
//! predicate holds for the session's starting context supplies the actions,
//! replayed one per backend call.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::sync::OnceLock;

use crate::adapter::Role;
use crate::agent::{AgentAction, AgentBackend, BackendError, BackendFactory, BackendReply, ToolCall, TranscriptRecord, Usage};
use crate::tools::ToolSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Always,
    ContextContains(String),
    VarEquals(String, String),
    VarAtLeast(String, i64),
    VarAtMost(String, i64),
    All(Vec<Predicate>),
    Any(Vec<Predicate>),
    Not(Box<Predicate>),
}

impl Predicate {
    pub fn holds(&self, ctx: &ScriptContext) -> bool {
        match self {
            Predicate::Always => true,
            Predicate::ContextContains(s) => ctx.text.contains(s.as_str()),
            Predicate::VarEquals(k, v) => ctx.vars.get(k) == Some(v),
            Predicate::VarAtLeast(k, n) => ctx.int(k).is_some_and(|v| v >= *n),
            Predicate::VarAtMost(k, n) => ctx.int(k).is_some_and(|v| v <= *n),
            Predicate::All(ps) => ps.iter().all(|p| p.holds(ctx)),
            Predicate::Any(ps) => ps.iter().any(|p| p.holds(ctx)),
            Predicate::Not(p) => !p.holds(ctx),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptAction {
    Tool {
        tool: String,
        #[serde(default = "empty_args")]
        args: Value,
        /// Emit this call `repeat` times; `{{index}}` counts from 0.
        #[serde(default = "one")]
        repeat: u32,
    },
    Report {
        report: String,
    },
    /// Ends with bare text instead of a report (protocol deviation).
    Text {
        text: String,
    },
}

fn empty_args() -> Value {
    Value::Object(Default::default())
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(with = "serde_yaml::with::singleton_map_recursive")]
    pub when: Predicate,
    pub actions: Vec<ScriptAction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentScript {
    pub role: Role,
    #[serde(default)]
    pub name: Option<String>,
    pub rules: Vec<ScriptRule>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("script for {role}: {reason}")]
    Invalid { role: Role, reason: String },
    #[error("{path}: {reason}")]
    Parse { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AgentScript {
    pub fn parse(text: &str) -> Result<Self, String> {
        let script: AgentScript = serde_yaml::from_str(text).map_err(|e| e.to_string())?;
        script.check().map_err(|e| e.to_string())?;
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text).map_err(|reason| ScriptError::Parse {
            path: path.display().to_string(),
            reason,
        })
    }

    /// Every rule ends in a report (or bare text) and the last rule is `always`.
    pub fn check(&self) -> Result<(), ScriptError> {
        let invalid = |reason: &str| ScriptError::Invalid {
            role: self.role,
            reason: reason.to_string(),
        };
        match self.rules.last() {
            Some(r) if r.when == Predicate::Always => {}
            _ => return Err(invalid("last rule must be `always`")),
        }
        for (i, r) in self.rules.iter().enumerate() {
            match r.actions.last() {
                Some(ScriptAction::Report { .. } | ScriptAction::Text { .. }) => {}
                _ => return Err(invalid(&format!("rule {i} does not end with a report"))),
            }
        }
        Ok(())
    }

    pub fn select(&self, ctx: &ScriptContext) -> &ScriptRule {
        self.rules
            .iter()
            .find(|r| r.when.holds(ctx))
            .expect("last rule is always")
    }
}

/// What a script can see of its starting context: the concatenated text
/// and `key: value` lines from non-adapter documents.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScriptContext {
    pub text: String,
    pub vars: BTreeMap<String, String>,
}

fn var_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^([a-z][a-z0-9_]*): (.+)$").expect("valid regex"))
}

fn placeholder() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{\s*([a-z0-9_+\s]+?)\s*(?::(\d+))?\s*\}\}").expect("valid regex"))
}

impl ScriptContext {
    pub fn from_transcript(transcript: &[TranscriptRecord]) -> Self {
        let mut ctx = ScriptContext::default();
        for rec in transcript {
            if let TranscriptRecord::Prompt { doc } = rec {
                ctx.text.push_str(&doc.body);
                ctx.text.push('\n');
                if doc.id.starts_with("adapter:") {
                    continue;
                }
                for line in doc.body.lines() {
                    if let Some(c) = var_line().captures(line.trim_end()) {
                        ctx.vars.entry(c[1].to_string()).or_insert_with(|| c[2].trim().to_string());
                    }
                }
            }
        }
        ctx
    }

    fn int(&self, k: &str) -> Option<i64> {
        self.vars.get(k)?.parse().ok()
    }

    /// Expands `{{name}}`, `{{a+b+3}}` and `{{expr:03}}` (zero-padded sum).
    pub fn render(&self, template: &str, index: u32) -> String {
        placeholder()
            .replace_all(template, |c: &regex::Captures<'_>| {
                let expr = c[1].trim();
                let terms: Vec<&str> = expr.split('+').map(str::trim).collect();
                
                if terms.len() == 1 && c.get(2).is_none() {
                    match terms[0] {
                        "index" => index.to_string(),
                        t => self.vars.get(t).cloned().unwrap_or_default(),
                    }
                } else {
                    let sum: i64 = terms
                        .iter()
                        .map(|t| match *t {
                            "index" => index as i64,
                            t => t.parse().ok().or_else(|| self.int(t)).unwrap_or(0),
                        })
                        .sum();
                    match c.get(2) {
                        Some(w) => format!("{sum:0width$}", width = w.as_str().parse().unwrap_or(0)),
                        None => sum.to_string(),
                    }
                }
            })
            .into_owned()
    }

    fn render_value(&self, v: &Value, index: u32) -> Value {
        match v {
            Value::String(s) => {
                let out = self.render(s, index);
                // A whole-string integer template stays an integer.
                if s.trim_start().starts_with("{{") && s.trim_end().ends_with("}}")
                    && let Ok(n) = out.parse::<i64>() {
                        return Value::from(n);
                    }
                Value::String(out)
            }
            Value::Array(a) => Value::Array(a.iter().map(|x| self.render_value(x, index)).collect()),
            Value::Object(o) => Value::Object(
                o.iter()
                    .map(|(k, x)| (k.clone(), self.render_value(x, index)))
                    .collect(),
            ),
            other => other.clone(),
        }
    }
}

/// Deterministic backend replaying one script. The step is the number of
/// tool calls already in the transcript, so replies depend only on the
/// script and the transcript prefix.
pub struct ScriptedBackend {
    script: Arc<AgentScript>,
}

impl ScriptedBackend {
    pub fn new(script: Arc<AgentScript>) -> Self {
        Self { script }
    }

    fn plan(&self, ctx: &ScriptContext) -> Vec<AgentAction> {
        let mut out = Vec::new();
        for a in &self.script.select(ctx).actions {
            match a {
                ScriptAction::Tool { tool, args, repeat } => {
                    for i in 0..*repeat {
                        out.push(AgentAction::ToolCall(ToolCall {
                            id: String::new(),
                            name: tool.clone(),
                            arguments: ctx.render_value(args, i),
                        }));
                    }
                }
                ScriptAction::Report { report } => out.push(AgentAction::ToolCall(ToolCall {
                    id: String::new(),
                    name: "report_to_user".into(),
                    arguments: serde_json::json!({ "message": ctx.render(report, 0) }),
                })),
                ScriptAction::Text { text } => out.push(AgentAction::FinalText(ctx.render(text, 0))),
            }
        }
        out
    }
}

/// Byte-length token proxy: one token per four bytes, rounded up.
pub fn token_proxy(bytes: usize) -> u64 {
    bytes.div_ceil(4) as u64
}

impl AgentBackend for ScriptedBackend {
    fn identity(&self) -> String {
        format!(
            "scripted:{}",
            self.script.name.clone().unwrap_or_else(|| self.script.role.to_string())
        )
    }

    fn next_action(&mut self, transcript: &[TranscriptRecord], _tools: &[ToolSpec]) -> Result<BackendReply, BackendError> {
        let ctx = ScriptContext::from_transcript(transcript);
        let plan = self.plan(&ctx);
        let step = transcript
            .iter()
            .filter(|r| matches!(r, TranscriptRecord::ToolCall { .. }))
            .count();
        let action = plan
            .get(step)
            .or(plan.last())
            .cloned()
            .expect("scripts have at least one action");
        let prompt_bytes: usize = transcript
            .iter()
            .map(|r| serde_json::to_string(r).map_or(0, |s| s.len()))
            .sum();
        let out_bytes = match &action {
            AgentAction::ToolCall(c) => c.name.len() + c.arguments.to_string().len(),
            AgentAction::FinalText(t) => t.len(),
        };
        Ok(BackendReply {
            action,
            usage: Usage {
                tokens_in: token_proxy(prompt_bytes),
                tokens_out: token_proxy(out_bytes),
            },
        })
    }
}

/// One script per role.
#[derive(Debug, Clone, Default)]
pub struct ScriptedFactory {
    scripts: BTreeMap<Role, Arc<AgentScript>>,
}

impl ScriptedFactory {
    pub fn new(scripts: impl IntoIterator<Item = AgentScript>) -> Self {
        Self {
            scripts: scripts.into_iter().map(|s| (s.role, Arc::new(s))).collect(),
        }
    }

    pub fn insert(&mut self, script: AgentScript) {
        self.scripts.insert(script.role, Arc::new(script));
    }

    pub fn get(&self, role: Role) -> Option<&AgentScript> {
        self.scripts.get(&role).map(|s| s.as_ref())
    }

    /// Loads every `<role>.yaml` in `dir`.
    pub fn load_dir(&mut self, dir: &Path) -> Result<(), ScriptError> {
        if !dir.is_dir() {
            return Ok(());
        }
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "yaml"))
            .collect();
        paths.sort();
        for p in paths {
            self.insert(AgentScript::load(&p)?);
        }
        Ok(())
    }
}

/// Stand-in used for roles without a script: reports immediately.
fn silent(role: Role) -> AgentScript {
    AgentScript {
        role,
        name: Some(format!("{role}-silent")),
        rules: vec![ScriptRule {
            when: Predicate::Always,
            actions: vec![ScriptAction::Report { report: String::new() }],
        }],
    }
}

impl BackendFactory for ScriptedFactory {
    fn create(&self, role: Role, _session_id: &str) -> Box<dyn AgentBackend> {
        let script = self
            .scripts
            .get(&role)
            .cloned()
            .unwrap_or_else(|| Arc::new(silent(role)));
        Box::new(ScriptedBackend::new(script))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::ContextDoc;

    const STRATEGIST: &str = r#"
role: strategist
rules:
  - when: {var_equals: [turn, "1"]}
    actions:
      - tool: propose_experiment
        args: {name: "exp_{{proposals_accepted+index+1:03}}", hypothesis: "variant {{index}}"}
        repeat: 3
      - report: "turn {{turn}} done"
  - when: always
    actions:
      - report: "nothing to do in band {{band}}"
"#;

    fn ctx_doc(body: &str) -> TranscriptRecord {
        TranscriptRecord::Prompt {
            doc: ContextDoc::new("turn", "turn", body),
        }
    }

    #[test]
    fn rule_selection_and_templates() {
        let script = Arc::new(AgentScript::parse(STRATEGIST).unwrap());
        let mut b = ScriptedBackend::new(script);
        let mut t = vec![ctx_doc("turn: 1\nproposals_accepted: 4\nband: explore\n")];
        let first = b.next_action(&t, &[]).unwrap();
        let AgentAction::ToolCall(call) = &first.action else { panic!() };
        assert_eq!(call.arguments["name"], "exp_005");
        t.push(TranscriptRecord::ToolCall { call: call.clone() });
        let AgentAction::ToolCall(second) = b.next_action(&t, &[]).unwrap().action else { panic!() };
        assert_eq!(second.arguments["name"], "exp_006");
        assert_eq!(second.arguments["hypothesis"], "variant 1");

        let other = vec![ctx_doc("turn: 2\nband: focus\n")];
        let AgentAction::ToolCall(r) = b.next_action(&other, &[]).unwrap().action else { panic!() };
        assert_eq!(r.arguments["message"], "nothing to do in band focus");
    }

    #[test]
    fn same_prefix_same_reply() {
        let script = Arc::new(AgentScript::parse(STRATEGIST).unwrap());
        let t = vec![ctx_doc("turn: 1\nproposals_accepted: 0\n")];
        let a = ScriptedBackend::new(script.clone()).next_action(&t, &[]).unwrap();
        let b = ScriptedBackend::new(script).next_action(&t, &[]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scripts_need_a_default_and_a_report() {
        let no_default = "role: worker\nrules:\n  - when: {context_contains: x}\n    actions:\n      - report: hi\n";
        assert!(AgentScript::parse(no_default).is_err());
        let no_report = "role: worker\nrules:\n  - when: always\n    actions:\n      - tool: read_board\n";
        assert!(AgentScript::parse(no_report).is_err());
    }

    #[test]
    fn token_proxy_rounds_up() {
        assert_eq!(token_proxy(0), 0);
        assert_eq!(token_proxy(1), 1);
        assert_eq!(token_proxy(8), 2);
        assert_eq!(token_proxy(9), 3);
    }
}
