use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::template::PromptRole;
use crate::error::{CpmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl DecodeParams {
    pub const PROPOSAL: DecodeParams = DecodeParams {
        temperature: 0.7,
        max_tokens: None,
    };
    pub const EXTRACTION: DecodeParams = DecodeParams {
        temperature: 0.0,
        max_tokens: None,
    };
}

/// Structured view of what a request asks for. Remote backends only see
/// the rendered prompt; the oracle mock answers from this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RequestContext {
    Keyphrase {
        note_id: String,
    },
    Proposal {
        top_keyphrases: Vec<String>,
        current_concepts: Vec<String>,
        count: usize,
    },
    Annotation {
        note_id: String,
        question: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub role: PromptRole,
    pub prompt: String,
    /// Content hash identifying this request in the cache.
    pub key: String,
    pub params: DecodeParams,
    pub context: RequestContext,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    /// Worth retrying: connection failures, timeouts, 429 and 5xx.
    #[error("transport error: {0}")]
    Transport(String),
    #[error("{0}")]
    Fatal(String),
}

pub trait ChatBackend: Send + Sync {
    /// Stable description that becomes part of every cache key.
    fn identity(&self) -> String;

    fn send(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

/// Chat-completions style HTTP endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteHttpConfig {
    pub endpoint: String,
    #[serde(default = "default_path")]
    pub path: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default = "default_token_env")]
    pub token_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_path() -> String {
    "/v1/chat/completions".to_string()
}

fn default_token_env() -> String {
    "CPM_LLM_TOKEN".to_string()
}

fn default_timeout() -> u64 {
    120
}

pub struct RemoteHttp {
    config: RemoteHttpConfig,
    token: Option<String>,
    agent: ureq::Agent,
}

impl RemoteHttp {
    pub fn new(config: RemoteHttpConfig) -> Self {
        let token = std::env::var(&config.token_env).ok();
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteHttp {
            config,
            token,
            agent,
        }
    }

    pub fn url(&self) -> String {
        format!(
            "{}{}",
            self.config.endpoint.trim_end_matches('/'),
            self.config.path
        )
    }

    pub fn request_body(&self, request: &ChatRequest) -> serde_json::Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.params.temperature,
        });
        if let Some(max) = request.params.max_tokens {
            body["max_tokens"] = json!(max);
        }
        body
    }
}

/// Pulls `choices[0].message.content` out of a chat-completions response.
pub fn completion_text(response: &serde_json::Value) -> Option<String> {
    response
        .get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
        .map(str::to_string)
}

impl ChatBackend for RemoteHttp {
    fn identity(&self) -> String {
        format!("remote-http:{}:{}", self.url(), self.config.model)
    }

    fn send(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let mut call = self.agent.post(self.url());
        if let Some(token) = &self.token {
            call = call.header("Authorization", format!("Bearer {token}"));
        }
        let mut response = call
            .send_json(self.request_body(request))
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(BackendError::Transport(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(BackendError::Fatal(format!("HTTP {status}")));
        }
        let value: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Fatal(format!("invalid JSON response: {e}")))?;
        completion_text(&value)
            .ok_or_else(|| BackendError::Fatal("response has no choices[0].message.content".into()))
    }
}

/// One line of a replay transcript (also the cache log line format).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub key: String,
    pub response: String,
}

/// Answers from a recorded transcript keyed by request key.
pub struct Replay {
    identity: String,
    responses: HashMap<String, String>,
}

impl Replay {
    pub const DEFAULT_IDENTITY: &'static str = "replay";

    pub fn new(identity: impl Into<String>, lines: impl IntoIterator<Item = TranscriptLine>) -> Self {
        Replay {
            identity: identity.into(),
            responses: lines.into_iter().map(|l| (l.key, l.response)).collect(),
        }
    }

    pub fn from_file(identity: impl Into<String>, path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| CpmError::io(path, e))?;
        let mut lines = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| CpmError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TranscriptLine = serde_json::from_str(&line).map_err(|e| {
                CpmError::InvalidArgument(format!("{}:{}: {e}", path.display(), n + 1))
            })?;
            lines.push(parsed);
        }
        Ok(Self::new(identity, lines))
    }
}

impl ChatBackend for Replay {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn send(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.responses
            .get(&request.key)
            .cloned()
            .ok_or_else(|| BackendError::Fatal(format!("no recorded response for key {}", request.key)))
    }
}

/// Serializable choice of backend, as stored alongside a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    RemoteHttp(RemoteHttpConfig),
    OracleMock {
        world: PathBuf,
        #[serde(default)]
        noise_rate: f64,
        #[serde(default)]
        seed: u64,
    },
    Replay {
        transcript: PathBuf,
        #[serde(default = "default_replay_identity")]
        identity: String,
    },
}

fn default_replay_identity() -> String {
    Replay::DEFAULT_IDENTITY.to_string()
}

impl BackendSpec {
    pub fn build(&self) -> Result<std::sync::Arc<dyn ChatBackend>> {
        Ok(match self {
            BackendSpec::RemoteHttp(cfg) => std::sync::Arc::new(RemoteHttp::new(cfg.clone())),
            BackendSpec::OracleMock {
                world,
                noise_rate,
                seed,
            } => {
                let world = super::oracle::OracleWorld::load(world)?;
                std::sync::Arc::new(super::oracle::OracleMock::new(world, *noise_rate, *seed)?)
            }
            BackendSpec::Replay {
                transcript,
                identity,
            } => std::sync::Arc::new(Replay::from_file(identity.clone(), transcript)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(key: &str) -> ChatRequest {
        ChatRequest {
            role: PromptRole::Annotation,
            prompt: "Q".into(),
            key: key.into(),
            params: DecodeParams::EXTRACTION,
            context: RequestContext::Annotation {
                note_id: "n".into(),
                question: "q?".into(),
            },
        }
    }

    #[test]
    fn replay_answers_by_key() {
        let replay = Replay::new(
            "replay",
            [TranscriptLine {
                key: "abc".into(),
                response: "yes".into(),
            }],
        );
        assert_eq!(replay.send(&request("abc")).unwrap(), "yes");
        assert!(matches!(replay.send(&request("zzz")), Err(BackendError::Fatal(_))));
    }

    #[test]
    fn remote_request_shape() {
        let remote = RemoteHttp::new(RemoteHttpConfig {
            endpoint: "http://127.0.0.1:9/".into(),
            path: default_path(),
            model: "m".into(),
            token_env: "CPM_TEST_UNSET_TOKEN".into(),
            timeout_secs: 1,
        });
        assert_eq!(remote.url(), "http://127.0.0.1:9/v1/chat/completions");
        let body = remote.request_body(&request("k"));
        assert_eq!(body["model"], "m");
        assert_eq!(body["messages"][0]["content"], "Q");
        assert_eq!(body["temperature"], 0.0);
        let sample = json!({"choices": [{"message": {"role": "assistant", "content": "no"}}]});
        assert_eq!(completion_text(&sample).as_deref(), Some("no"));
        assert!(matches!(remote.send(&request("k")), Err(BackendError::Transport(_))));
    }
}
