use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

pub const TOOL_NAMES: [&str; 10] = [
    "shell_exec",
    "read_file",
    "grep_file",
    "web_search",
    "view_image",
    "spawn_agent",
    "read_board",
    "update_playbook",
    "propose_experiment",
    "report_to_user",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideEffect {
    PureRead,
    Shell,
    Network,
    BoardWrite,
    Control,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgKind {
    String,
    Integer,
    Number,
    Boolean,
}

impl ArgKind {
    fn json_type(self) -> &'static str {
        match self {
            ArgKind::String => "string",
            ArgKind::Integer => "integer",
            ArgKind::Number => "number",
            ArgKind::Boolean => "boolean",
        }
    }

    fn accepts(self, v: &Value) -> bool {
        match self {
            ArgKind::String => v.is_string(),
            ArgKind::Integer => v.is_i64() || v.is_u64(),
            ArgKind::Number => v.is_number(),
            ArgKind::Boolean => v.is_boolean(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgSpec {
    pub name: String,
    pub kind: ArgKind,
    pub required: bool,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub side_effect: SideEffect,
    pub args: Vec<ArgSpec>,
}

impl ToolSpec {
    /// JSON Schema for the arguments object.
    pub fn parameters(&self) -> Value {
        let mut props = Map::new();
        for a in &self.args {
            props.insert(
                a.name.clone(),
                json!({ "type": a.kind.json_type(), "description": a.description }),
            );
        }
        let required: Vec<&str> = self.args.iter().filter(|a| a.required).map(|a| a.name.as_str()).collect();
        json!({
            "type": "object",
            "properties": props,
            "required": required,
            "additionalProperties": false,
        })
    }

    /// Validates call arguments against the spec.
    pub fn check(&self, args: &Value) -> Result<(), String> {
        let Some(obj) = args.as_object() else {
            return Err(format!("`{}` expects an object of arguments", self.name));
        };
        for a in &self.args {
            match obj.get(&a.name) {
                None | Some(Value::Null) if a.required => {
                    return Err(format!("missing required argument `{}`", a.name));
                }
                Some(v) if !v.is_null() && !a.kind.accepts(v) => {
                    return Err(format!("argument `{}` must be a {}", a.name, a.kind.json_type()));
                }
                _ => {}
            }
        }
        if let Some(extra) = obj.keys().find(|k| !self.args.iter().any(|a| &a.name == *k)) {
            return Err(format!("unexpected argument `{extra}`"));
        }
        Ok(())
    }
}

fn arg(name: &str, kind: ArgKind, required: bool, description: &str) -> ArgSpec {
    ArgSpec {
        name: name.into(),
        kind,
        required,
        description: description.into(),
    }
}

fn tool(name: &str, side_effect: SideEffect, description: &str, args: Vec<ArgSpec>) -> ToolSpec {
    ToolSpec {
        name: name.into(),
        description: description.into(),
        side_effect,
        args,
    }
}

pub fn tool_specs() -> Vec<ToolSpec> {
    use ArgKind::*;
    use SideEffect::*;
    vec![
        tool(
            "shell_exec",
            Shell,
            "Run a shell command inside the workspace.",
            vec![
                arg("cmd", String, true, "command passed to sh -c"),
                arg("cwd", String, false, "working directory, relative to the workspace"),
                arg("timeout_s", Integer, false, "seconds before the process group is killed"),
            ],
        ),
        tool(
            "read_file",
            PureRead,
            "Read a text file, optionally a byte range.",
            vec![
                arg("path", String, true, "workspace-relative path"),
                arg("offset", Integer, false, "first byte to read"),
                arg("max_bytes", Integer, false, "bytes to read, capped"),
            ],
        ),
        tool(
            "grep_file",
            PureRead,
            "Search a file or directory tree with a regular expression.",
            vec![
                arg("pattern", String, true, "regular expression"),
                arg("path", String, true, "file or directory, workspace-relative"),
                arg("max_matches", Integer, false, "match cap"),
            ],
        ),
        tool(
            "web_search",
            Network,
            "Search the web.",
            vec![
                arg("query", String, true, "search query"),
                arg("max_results", Integer, false, "result cap"),
            ],
        ),
        tool(
            "view_image",
            PureRead,
            "Attach an image from the workspace so it can be looked at.",
            vec![arg("path", String, true, "workspace-relative image path")],
        ),
        tool(
            "spawn_agent",
            Control,
            "Start a sub-agent with only the given prompt as context; returns its final report.",
            vec![
                arg("prompt", String, true, "the sub-agent's whole context"),
                arg("max_tool_calls", Integer, false, "tool-call limit for the sub-agent"),
            ],
        ),
        tool("read_board", PureRead, "Read the leaderboard and campaign counters.", vec![]),
        tool(
            "update_playbook",
            BoardWrite,
            "Replace the playbook with a new version.",
            vec![arg("content", String, true, "full playbook text")],
        ),
        tool(
            "propose_experiment",
            BoardWrite,
            "Propose a new experiment. Consumes one unit of budget when accepted.",
            vec![
                arg("name", String, true, "unique experiment name"),
                arg("hypothesis", String, true, "what the experiment tests"),
                arg("priority_hint", Integer, false, "optional ordering hint"),
            ],
        ),
        tool(
            "report_to_user",
            Control,
            "Send the final report. Ends the session.",
            vec![arg("message", String, true, "report text")],
        ),
    ]
}

/// Machine-readable description of every tool: arguments as JSON Schema,
/// side-effect class, and the result envelope.
pub fn schema_document() -> Value {
    let tools: Vec<Value> = tool_specs()
        .iter()
        .map(|t| {
            json!({
                "name": t.name,
                "description": t.description,
                "side_effect": t.side_effect,
                "parameters": t.parameters(),
            })
        })
        .collect();
    json!({
        "version": 1,
        "tools": tools,
        "result": {
            "type": "object",
            "required": ["ok", "payload", "duration_s"],
            "properties": {
                "ok": {"type": "boolean"},
                "duration_s": {"type": "number"},
                "payload": {
                    "oneOf": [
                        {"type": "object", "required": ["type", "text"],
                         "properties": {"type": {"const": "text"}, "text": {"type": "string"}}},
                        {"type": "object", "required": ["type", "value"],
                         "properties": {"type": {"const": "record"}, "value": {}}},
                        {"type": "object", "required": ["type", "path", "digest", "media_type", "bytes"],
                         "properties": {"type": {"const": "image"}, "path": {"type": "string"},
                                        "digest": {"type": "string"}, "media_type": {"type": "string"},
                                        "bytes": {"type": "integer"}}}
                    ]
                }
            },
            "errors": ["unknown_tool", "role_forbidden", "argument_schema_violation", "invalid_argument",
                       "path_escape", "not_found", "timeout", "shell_disabled", "board_unavailable",
                       "spawn_depth_exceeded", "provider", "io"]
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_match_the_tool_set() {
        let names: Vec<_> = tool_specs().into_iter().map(|t| t.name).collect();
        assert_eq!(names, TOOL_NAMES);
    }

    #[test]
    fn shipped_schema_file_is_current() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/schema/tools.json");
        let shipped: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(shipped, schema_document());
    }

    #[test]
    fn argument_checks() {
        let specs = tool_specs();
        let shell = &specs[0];
        assert!(shell.check(&json!({"cmd": "ls"})).is_ok());
        assert!(shell.check(&json!({"cmd": 3})).is_err());
        assert!(shell.check(&json!({"cwd": "."})).is_err());
        assert!(shell.check(&json!({"cmd": "ls", "color": true})).is_err());
        assert!(shell.check(&json!("ls")).is_err());
    }
}
