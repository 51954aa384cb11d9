use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    key_env_var, ErrorKind, FieldType, Provider, ProviderConfigError, ProviderError,
    ProviderRequest, ProviderResult, SettingField, SettingsSchema, Usage,
};
use crate::planner::{ChatMessage, Role};

fn default_text_path() -> String {
    "choices[0].message.content".into()
}

fn default_timeout() -> u64 {
    120
}

/// One entry of the provider registry file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpProviderConfig {
    pub id: String,
    pub base_url: String,
    /// Header carrying the key. `Authorization` gets a `Bearer ` prefix; a
    /// null header means the endpoint needs no key.
    #[serde(default)]
    pub auth_header: Option<String>,
    #[serde(default)]
    pub model_names: Vec<String>,
    #[serde(default)]
    pub rate_limit_rpm: Option<u32>,
    #[serde(default = "default_text_path")]
    pub text_path: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

/// Generic chat-completions adapter.
pub struct HttpProvider {
    config: HttpProviderConfig,
    api_key: Option<String>,
    client: reqwest::Client,
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig, api_key: Option<String>) -> Self {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .expect("http client");
        HttpProvider {
            config,
            api_key,
            client,
        }
    }

    pub fn config(&self) -> &HttpProviderConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        let base = self.config.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }

    fn body(&self, request: &ProviderRequest) -> Value {
        let settings = &request.model.settings;
        let mut messages: Vec<Value> = Vec::new();
        if let Some(Value::String(sys)) = settings.get("system_message") {
            messages.push(json!({"role": "system", "content": sys}));
        }
        messages.extend(request.messages.iter().map(message_json));
        let mut body = json!({
            "model": request.model.model,
            "messages": messages,
            "n": 1,
        });
        for key in ["temperature", "max_tokens"] {
            if let Some(v) = settings.get(key) {
                body[key] = v.clone();
            }
        }
        body
    }
}

fn message_json(m: &ChatMessage) -> Value {
    let role = match m.role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
    };
    json!({"role": role, "content": m.content})
}

#[derive(Debug, Clone, PartialEq)]
enum PathStep {
    Key(String),
    Index(usize),
}

fn parse_path(path: &str) -> Option<Vec<PathStep>> {
    let mut steps = Vec::new();
    for part in path.split('.') {
        let (name, mut rest) = match part.find('[') {
            Some(i) => (&part[..i], &part[i..]),
            None => (part, ""),
        };
        if !name.is_empty() {
            steps.push(PathStep::Key(name.to_string()));
        }
        while let Some(stripped) = rest.strip_prefix('[') {
            let end = stripped.find(']')?;
            steps.push(PathStep::Index(stripped[..end].parse().ok()?));
            rest = &stripped[end + 1..];
        }
        if !rest.is_empty() {
            return None;
        }
    }
    Some(steps)
}

/// Extracts a string at a dotted path such as `choices[0].message.content`.
pub(crate) fn extract_text(body: &Value, path: &str) -> Option<String> {
    let mut cur = body;
    for step in parse_path(path)? {
        cur = match step {
            PathStep::Key(k) => cur.get(&k)?,
            PathStep::Index(i) => cur.get(i)?,
        };
    }
    cur.as_str().map(str::to_string)
}

#[async_trait]
impl Provider for HttpProvider {
    fn id(&self) -> &str {
        &self.config.id
    }

    fn settings_schema(&self) -> SettingsSchema {
        SettingsSchema {
            provider: self.config.id.clone(),
            fields: vec![
                SettingField::float("temperature", 0.0, 2.0, Some(1.0)),
                SettingField::integer("max_tokens", 1, 1_000_000),
                SettingField::of("system_message", FieldType::String)
                    .describe("sent as a leading system message"),
            ],
        }
    }

    fn rate_limit_rpm(&self) -> Option<u32> {
        self.config.rate_limit_rpm
    }

    fn check_ready(&self) -> Result<(), ProviderConfigError> {
        if self.config.auth_header.is_some() && self.api_key.is_none() {
            return Err(ProviderConfigError::MissingKey {
                provider: self.config.id.clone(),
                var: key_env_var(&self.config.id),
            });
        }
        Ok(())
    }

    async fn complete(&self, request: &ProviderRequest) -> ProviderResult {
        let started = Instant::now();
        let mut builder = self.client.post(self.endpoint()).json(&self.body(request));
        if let (Some(header), Some(key)) = (&self.config.auth_header, &self.api_key) {
            let value = if header.eq_ignore_ascii_case("authorization") {
                format!("Bearer {key}")
            } else {
                key.clone()
            };
            builder = builder.header(header.as_str(), value);
        }

        let response = match builder.send().await {
            Ok(r) => r,
            Err(e) => {
                let kind = if e.is_timeout() {
                    ErrorKind::Timeout
                } else {
                    ErrorKind::Network
                };
                return ProviderResult::error(ProviderError::new(kind, e.to_string()), started.elapsed());
            }
        };
        let status = response.status().as_u16();
        let body = match response.text().await {
            Ok(b) => b,
            Err(e) => {
                return ProviderResult::error(
                    ProviderError::new(ErrorKind::Network, e.to_string()),
                    started.elapsed(),
                )
            }
        };
        if !(200..300).contains(&status) {
            return ProviderResult::error(ProviderError::from_status(status, &body), started.elapsed());
        }
        let parsed: Value = match serde_json::from_str(&body) {
            Ok(v) => v,
            Err(e) => {
                return ProviderResult::error(
                    ProviderError::new(ErrorKind::ProviderInternal, format!("invalid JSON: {e}")),
                    started.elapsed(),
                )
            }
        };
        let usage = parsed.get("usage").map(|u| Usage {
            prompt_tokens: u.get("prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
            completion_tokens: u.get("completion_tokens").and_then(Value::as_u64).unwrap_or(0),
        });
        match extract_text(&parsed, &self.config.text_path) {
            Some(text) => ProviderResult {
                outcome: Ok(text),
                usage,
                latency: started.elapsed(),
            },
            None => ProviderResult::error(
                ProviderError::new(
                    ErrorKind::ProviderInternal,
                    format!("no text at `{}`", self.config.text_path),
                ),
                started.elapsed(),
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::ModelSpec;
    use axum::{http::StatusCode, routing::post, Json, Router};

    fn config(url: String) -> HttpProviderConfig {
        HttpProviderConfig {
            id: "acme".into(),
            base_url: url,
            auth_header: Some("Authorization".into()),
            model_names: vec!["a1".into()],
            rate_limit_rpm: Some(60),
            text_path: default_text_path(),
            timeout_secs: 5,
        }
    }

    fn request() -> ProviderRequest {
        ProviderRequest {
            model: ModelSpec::new("acme", "a1").with_setting("temperature", json!(0.0)),
            messages: vec![ChatMessage::user("hi")],
            generation_index: 0,
        }
    }

    async fn serve(router: Router) -> String {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(async move { axum::serve(listener, router).await.unwrap() });
        format!("http://{addr}/v1")
    }

    #[test]
    fn text_paths() {
        let v = json!({"choices": [{"message": {"content": "yo"}}], "out": [[1, "x"]]});
        assert_eq!(extract_text(&v, "choices[0].message.content").as_deref(), Some("yo"));
        assert_eq!(extract_text(&v, "out[0][1]").as_deref(), Some("x"));
        assert_eq!(extract_text(&v, "choices[1].message.content"), None);
        assert_eq!(extract_text(&v, "choices[x]"), None);
    }

    #[tokio::test]
    async fn unreachable_host_is_network_error() {
        // Port 9 (discard) on loopback is closed in the sandbox.
        let p = HttpProvider::new(config("http://127.0.0.1:9".into()), Some("k".into()));
        let r = p.complete(&request()).await;
        let err = r.outcome.unwrap_err();
        assert_eq!(err.kind, ErrorKind::Network);
        assert!(err.retryable);
    }

    #[tokio::test]
    async fn status_codes_map_to_kinds() {
        let router = Router::new()
            .route("/v1/chat/completions", post(|| async { (StatusCode::TOO_MANY_REQUESTS, "slow down") }))
            .route("/auth/chat/completions", post(|| async { (StatusCode::UNAUTHORIZED, "no") }));
        let url = serve(router).await;
        let p = HttpProvider::new(config(url.clone()), Some("k".into()));
        let err = p.complete(&request()).await.outcome.unwrap_err();
        assert_eq!(err.kind, ErrorKind::RateLimited);
        assert!(err.retryable);

        let p = HttpProvider::new(config(url.replace("/v1", "/auth")), Some("k".into()));
        let err = p.complete(&request()).await.outcome.unwrap_err();
        assert_eq!(err.kind, ErrorKind::Auth);
        assert!(!err.retryable);
    }

    #[tokio::test]
    async fn sends_wire_format_and_reads_text() {
        let router = Router::new().route(
            "/v1/chat/completions",
            post(|headers: axum::http::HeaderMap, Json(body): Json<Value>| async move {
                assert_eq!(headers["authorization"], "Bearer sk-1");
                assert_eq!(body["model"], "a1");
                assert_eq!(body["n"], 1);
                assert_eq!(body["temperature"], 0.0);
                assert_eq!(body["messages"][0]["role"], "user");
                let reply = format!("echo: {}", body["messages"][0]["content"].as_str().unwrap());
                Json(json!({
                    "choices": [{"message": {"role": "assistant", "content": reply}}],
                    "usage": {"prompt_tokens": 3, "completion_tokens": 2}
                }))
            }),
        );
        let url = serve(router).await;
        let p = HttpProvider::new(config(url), Some("sk-1".into()));
        let r = p.complete(&request()).await;
        assert_eq!(r.outcome.unwrap(), "echo: hi");
        assert_eq!(r.usage.unwrap().completion_tokens, 2);
    }
}
