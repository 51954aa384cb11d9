use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use parking_lot::Mutex;
use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{
    ErrorKind, FieldType, Provider, ProviderError, ProviderRequest, ProviderResult, SettingField,
    SettingsSchema,
};
use crate::engine::Clock;

pub const MOCK_PROVIDER_ID: &str = "mock";

const WORDS: &[&str] = &[
    "apple", "river", "quiet", "signal", "orbit", "lantern", "maple", "copper", "harbor", "violet",
    "thunder", "meadow", "pixel", "granite", "echo", "saffron", "falcon", "ember", "tidal", "cobalt",
    "willow", "prism", "canyon", "velvet", "summit", "drift", "nectar", "basalt", "cipher", "glacier",
    "moss", "quartz",
];

fn default_fail_kind() -> ErrorKind {
    ErrorKind::ProviderInternal
}

/// Behaviour knobs for the offline mock provider.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockConfig {
    /// Regex; prompts matching it fail.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail_pattern: Option<String>,
    #[serde(default = "default_fail_kind")]
    pub fail_kind: ErrorKind,
    /// Fail only the first `k` attempts of a matching prompt, then succeed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail_attempts: Option<u32>,
    #[serde(default)]
    pub latency_ms: u64,
    /// Exact prompt text to reply.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub canned: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_limit_rpm: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockCall {
    pub model: String,
    pub alias: String,
    pub prompt: String,
    pub generation_index: u32,
    /// Time on the provider's clock when the call arrived, if one is set.
    pub at: Option<Duration>,
}

/// Deterministic offline provider. Replies are a pure function of the model
/// alias, the full prompt, the generation index and the config.
pub struct MockProvider {
    id: String,
    config: MockConfig,
    fail_re: Option<Regex>,
    calls: Mutex<Vec<MockCall>>,
    attempts: Mutex<BTreeMap<(String, String, u32), u32>>,
    clock: Option<Arc<dyn Clock>>,
}

impl MockProvider {
    pub fn new(id: impl Into<String>, config: MockConfig) -> Self {
        let fail_re = config
            .fail_pattern
            .as_deref()
            .map(|p| Regex::new(p).expect("mock fail_pattern must be a valid regex"));
        MockProvider {
            id: id.into(),
            config,
            fail_re,
            calls: Mutex::new(Vec::new()),
            attempts: Mutex::new(BTreeMap::new()),
            clock: None,
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = Some(clock);
        self
    }

    pub fn config(&self) -> &MockConfig {
        &self.config
    }

    pub fn calls(&self) -> Vec<MockCall> {
        self.calls.lock().clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().len()
    }

    pub fn clear_calls(&self) {
        self.calls.lock().clear();
    }

    /// The reply the mock gives, ignoring fault injection and latency.
    pub fn reply_for(&self, request: &ProviderRequest) -> String {
        let prompt = request.prompt();
        if let Some(Value::Object(canned)) = request.model.settings.get("canned") {
            if let Some(Value::String(t)) = canned.get(prompt) {
                return t.clone();
            }
        }
        if let Some(t) = self.config.canned.get(prompt) {
            return t.clone();
        }
        generated_text(request.model.display_name(), &full_prompt(request), request.generation_index)
    }

    fn should_fail(&self, request: &ProviderRequest) -> bool {
        let Some(re) = &self.fail_re else {
            return false;
        };
        if !re.is_match(request.prompt()) {
            return false;
        }
        match self.config.fail_attempts {
            None => true,
            Some(k) => {
                let mut attempts = self.attempts.lock();
                let n = attempts
                    .entry((
                        request.model.display_name().to_string(),
                        full_prompt(request),
                        request.generation_index,
                    ))
                    .or_insert(0);
                *n += 1;
                *n <= k
            }
        }
    }
}

fn full_prompt(request: &ProviderRequest) -> String {
    if request.messages.len() == 1 {
        return request.messages[0].content.clone();
    }
    let mut s = String::new();
    for m in &request.messages {
        s.push_str(&format!("{:?}\u{1f}{}\u{1e}", m.role, m.content));
    }
    s
}

/// Word-list text seeded by a stable 64-bit hash of the inputs.
pub fn generated_text(alias: &str, prompt: &str, index: u32) -> String {
    let mut h = Sha256::new();
    h.update(alias.as_bytes());
    h.update([0u8]);
    h.update(prompt.as_bytes());
    h.update([0u8]);
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = 5 + (rng.next_u64() % 16) as usize;
    let words: Vec<&str> = (0..len)
        .map(|_| WORDS[(rng.next_u64() % WORDS.len() as u64) as usize])
        .collect();
    let mut text = words.join(" ");
    if let Some(first) = text.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    text.push('.');
    text
}

#[async_trait]
impl Provider for MockProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn settings_schema(&self) -> SettingsSchema {
        SettingsSchema {
            provider: self.id.clone(),
            fields: vec![
                SettingField::float("temperature", 0.0, 2.0, Some(1.0)),
                SettingField::of("canned", FieldType::Map).describe("exact prompt text to reply"),
            ],
        }
    }

    fn rate_limit_rpm(&self) -> Option<u32> {
        self.config.rate_limit_rpm
    }

    async fn complete(&self, request: &ProviderRequest) -> ProviderResult {
        self.calls.lock().push(MockCall {
            model: request.model.model.clone(),
            alias: request.model.display_name().to_string(),
            prompt: request.prompt().to_string(),
            generation_index: request.generation_index,
            at: self.clock.as_ref().map(|c| c.now()),
        });
        let latency = Duration::from_millis(self.config.latency_ms);
        if !latency.is_zero() {
            tokio::time::sleep(latency).await;
        }
        if self.should_fail(request) {
            return ProviderResult::error(
                ProviderError::new(self.config.fail_kind, "injected mock failure"),
                latency,
            );
        }
        ProviderResult::text(self.reply_for(request), latency)
    }
}
