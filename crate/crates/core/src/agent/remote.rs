//! Chat-completions style HTTP backend with function calling.
//!
//! Configured from `CAMPAIGN_BACKEND_URL`, `CAMPAIGN_BACKEND_KEY` and
//! `CAMPAIGN_BACKEND_MODEL`.

use std::path::PathBuf;
use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::{AgentAction, AgentBackend, BackendError, BackendFactory, BackendReply, ToolCall, TranscriptRecord, Usage};
use crate::adapter::Role;
use crate::tools::ToolSpec;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteConfig {
    /// Full endpoint, e.g. `https://host/v1/chat/completions`.
    pub url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout_s: u64,
    /// Workspace, for turning image attachments into inline data.
    pub workspace: PathBuf,
}

impl RemoteConfig {
    pub fn from_env(workspace: PathBuf) -> Option<Self> {
        let url = std::env::var("CAMPAIGN_BACKEND_URL").ok().filter(|s| !s.is_empty())?;
        Some(Self {
            url,
            api_key: std::env::var("CAMPAIGN_BACKEND_KEY").ok().filter(|s| !s.is_empty()),
            model: std::env::var("CAMPAIGN_BACKEND_MODEL").unwrap_or_else(|_| "default".into()),
            timeout_s: 600,
            workspace,
        })
    }
}

pub struct ChatCompletionsBackend {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
}

impl ChatCompletionsBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_s))
            .build()
            .expect("http client builds");
        Self { config, client }
    }

    /// Request body for a transcript.
    pub fn request_body(&self, transcript: &[TranscriptRecord], tools: &[ToolSpec]) -> Value {
        let tools: Vec<Value> = tools
            .iter()
            .map(|t| {
                json!({
                    "type": "function",
                    "function": { "name": t.name, "description": t.description, "parameters": t.parameters() },
                })
            })
            .collect();
        json!({
            "model": self.config.model,
            "messages": messages(transcript, &self.config.workspace),
            "tools": tools,
            "tool_choice": "auto",
        })
    }
}

/// Maps transcript records to chat messages. Context documents become the
/// system message; each tool call is an assistant message answered by a
/// tool message.
pub fn messages(transcript: &[TranscriptRecord], workspace: &std::path::Path) -> Vec<Value> {
    let mut system = String::new();
    let mut out = Vec::new();
    for rec in transcript {
        match rec {
            TranscriptRecord::Prompt { doc } => {
                if !system.is_empty() {
                    system.push_str("\n\n");
                }
                system.push_str(&format!("## {}\n\n{}", doc.title, doc.body));
            }
            TranscriptRecord::ToolCall { call } => out.push(json!({
                "role": "assistant",
                "content": null,
                "tool_calls": [{
                    "id": call.id,
                    "type": "function",
                    "function": { "name": call.name, "arguments": call.arguments.to_string() },
                }],
            })),
            TranscriptRecord::ToolResult { call_id, result, .. } => out.push(json!({
                "role": "tool",
                "tool_call_id": call_id,
                "content": serde_json::to_string(result).expect("tool results serialize"),
            })),
            TranscriptRecord::ImageAttachment { path, media_type, .. } => {
                let content = match std::fs::read(workspace.join(path)) {
                    Ok(bytes) => {
                        let data = base64::engine::general_purpose::STANDARD.encode(bytes);
                        json!([
                            { "type": "text", "text": format!("Image {path}:") },
                            { "type": "image_url", "image_url": { "url": format!("data:{media_type};base64,{data}") } },
                        ])
                    }
                    Err(e) => json!(format!("Image {path} could not be read: {e}")),
                };
                out.push(json!({ "role": "user", "content": content }));
            }
            TranscriptRecord::FinalText { text } => out.push(json!({ "role": "assistant", "content": text })),
        }
    }
    let mut all = vec![json!({ "role": "system", "content": system })];
    if out.is_empty() {
        all.push(json!({ "role": "user", "content": "Begin." }));
    }
    all.extend(out);
    all
}

/// Reads the first choice of a chat-completions response.
pub fn parse_response(body: &Value) -> Result<BackendReply, BackendError> {
    let message = body
        .pointer("/choices/0/message")
        .ok_or_else(|| BackendError::Parse("response has no choices[0].message".into()))?;
    let usage = Usage {
        tokens_in: body.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
        tokens_out: body.pointer("/usage/completion_tokens").and_then(Value::as_u64).unwrap_or(0),
    };
    if let Some(call) = message.pointer("/tool_calls/0") {
        let name = call
            .pointer("/function/name")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Parse("tool call without a function name".into()))?;
        let raw = call.pointer("/function/arguments").cloned().unwrap_or(json!("{}"));
        let arguments = match raw {
            Value::String(s) if s.trim().is_empty() => json!({}),
            Value::String(s) => serde_json::from_str(&s).map_err(|e| BackendError::Parse(format!("arguments: {e}")))?,
            other => other,
        };
        return Ok(BackendReply {
            action: AgentAction::ToolCall(ToolCall {
                id: call.get("id").and_then(Value::as_str).unwrap_or_default().to_string(),
                name: name.to_string(),
                arguments,
            }),
            usage,
        });
    }
    let text = message.get("content").and_then(Value::as_str).unwrap_or_default();
    Ok(BackendReply {
        action: AgentAction::FinalText(text.to_string()),
        usage,
    })
}

impl AgentBackend for ChatCompletionsBackend {
    fn identity(&self) -> String {
        self.config.model.clone()
    }

    fn next_action(&mut self, transcript: &[TranscriptRecord], tools: &[ToolSpec]) -> Result<BackendReply, BackendError> {
        let mut req = self.client.post(&self.config.url).json(&self.request_body(transcript, tools));
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(BackendError::Transport(format!("{status}: {text}")));
        }
        let body: Value = resp.json().map_err(|e| BackendError::Parse(e.to_string()))?;
        parse_response(&body)
    }
}

pub struct RemoteFactory(pub RemoteConfig);

impl BackendFactory for RemoteFactory {
    fn create(&self, _role: Role, _session_id: &str) -> Box<dyn AgentBackend> {
        Box::new(ChatCompletionsBackend::new(self.0.clone()))
    }
}
