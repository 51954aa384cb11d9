use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{mpsc, Semaphore};
use tokio::task::JoinSet;

use super::record::now_ms;
use super::{
    CacheError, Clock, Outcome, QueryKey, RateLimiter, ResponseCache, ResponseRecord,
};
use crate::planner::{PlanEntry, QueryPlan};
use crate::provider::{Provider, ProviderConfigError, ProviderRegistry, ProviderRequest, ProviderResult};

pub const DEFAULT_MAX_IN_FLIGHT: usize = 32;

#[derive(Debug, Error)]
pub enum ExecuteError {
    #[error(transparent)]
    Config(#[from] ProviderConfigError),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

/// Queries of one plan key that still need a successful response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeltaItem {
    pub key: QueryKey,
    pub missing: Vec<u32>,
}

/// For each distinct plan key, the generation indices below N without a
/// successful cached record. Fully cached keys are omitted.
pub fn compute_delta(plan: &QueryPlan, cache: &ResponseCache) -> Vec<DeltaItem> {
    let mut seen = HashSet::new();
    plan.entries
        .iter()
        .filter(|e| seen.insert(e.key))
        .filter_map(|e| {
            let missing = cache.missing_indices(&e.key, plan.n_per_prompt);
            (!missing.is_empty()).then_some(DeltaItem {
                key: e.key,
                missing,
            })
        })
        .collect()
}

pub fn delta_size(delta: &[DeltaItem]) -> usize {
    delta.iter().map(|d| d.missing.len()).sum()
}

/// Records for a plan in plan order. Bindings and model display data come
/// from the plan entry, so identical prompts reached through different
/// inputs are reported under their own inputs.
pub fn records_for_plan(plan: &QueryPlan, cache: &ResponseCache) -> Vec<ResponseRecord> {
    plan.queries()
        .filter_map(|(entry, i)| {
            let mut r = cache.get(&entry.key, i)?;
            let (fill_history, metadata) = plan.bindings_for(entry);
            r.fill_history = fill_history;
            r.metadata = metadata;
            r.model = entry.model.clone();
            Some(r)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelProgress {
    pub completed: usize,
    pub errored: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressEvent {
    pub node_id: String,
    pub total: usize,
    pub completed: usize,
    pub errored: usize,
    pub per_model: BTreeMap<String, ModelProgress>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub succeeded: usize,
    pub failed: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base: Duration,
    pub factor: f64,
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base: Duration::from_secs(1),
            factor: 2.0,
            jitter: 0.2,
        }
    }
}

impl RetryPolicy {
    /// Delay after failed attempt number `attempt` (1-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let nominal = self.base.as_secs_f64() * self.factor.powi(attempt.saturating_sub(1) as i32);
        let scale = if self.jitter > 0.0 {
            1.0 + rand::thread_rng().gen_range(-self.jitter..=self.jitter)
        } else {
            1.0
        };
        Duration::from_secs_f64(nominal * scale)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExecuteOptions {
    /// Re-dispatch every query, ignoring cached results.
    pub force: bool,
}

/// Sends plan queries to providers under rate limits, stores every outcome
/// and reports progress.
pub struct Dispatcher {
    registry: Arc<ProviderRegistry>,
    limiter: Arc<RateLimiter>,
    in_flight: Arc<Semaphore>,
    retry: RetryPolicy,
}

impl Dispatcher {
    pub fn new(registry: Arc<ProviderRegistry>, clock: Arc<dyn Clock>) -> Self {
        let limiter = Arc::new(RateLimiter::from_registry(&registry, clock));
        Dispatcher {
            registry,
            limiter,
            in_flight: Arc::new(Semaphore::new(DEFAULT_MAX_IN_FLIGHT)),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_max_in_flight(mut self, cap: usize) -> Self {
        self.in_flight = Arc::new(Semaphore::new(cap.max(1)));
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn registry(&self) -> &Arc<ProviderRegistry> {
        &self.registry
    }

    pub fn limiter(&self) -> &Arc<RateLimiter> {
        &self.limiter
    }

    /// The `(entry, index)` pairs a run would dispatch.
    pub fn pending<'p>(
        &self,
        plan: &'p QueryPlan,
        cache: &ResponseCache,
        options: ExecuteOptions,
    ) -> Vec<(&'p PlanEntry, u32)> {
        let mut first: BTreeMap<QueryKey, &PlanEntry> = BTreeMap::new();
        for e in &plan.entries {
            first.entry(e.key).or_insert(e);
        }
        if options.force {
            let mut seen = HashSet::new();
            return plan
                .queries()
                .filter(|(e, i)| seen.insert((e.key, *i)))
                .collect();
        }
        let mut out = Vec::new();
        for item in compute_delta(plan, cache) {
            let entry = first[&item.key];
            out.extend(item.missing.into_iter().map(|i| (entry, i)));
        }
        out
    }

    /// Checks that every provider a plan touches is registered and usable.
    pub fn check_plan(&self, plan: &QueryPlan) -> Result<(), ProviderConfigError> {
        let mut seen = HashSet::new();
        for e in &plan.entries {
            if seen.insert(e.model.provider.as_str()) {
                self.registry.get(&e.model.provider)?.check_ready()?;
            }
        }
        Ok(())
    }

    pub async fn execute(
        &self,
        plan: &QueryPlan,
        cache: &Arc<ResponseCache>,
        options: ExecuteOptions,
        progress: Option<&mpsc::UnboundedSender<ProgressEvent>>,
    ) -> Result<BatchSummary, ExecuteError> {
        let work = self.pending(plan, cache, options);
        let mut providers: BTreeMap<String, Arc<dyn Provider>> = BTreeMap::new();
        for (e, _) in &work {
            if !providers.contains_key(&e.model.provider) {
                let p = self.registry.get(&e.model.provider)?;
                p.check_ready()?;
                providers.insert(e.model.provider.clone(), p);
            }
        }

        let mut event = ProgressEvent {
            node_id: plan.node_id.clone(),
            total: work.len(),
            completed: 0,
            errored: 0,
            per_model: BTreeMap::new(),
        };
        for (e, _) in &work {
            event
                .per_model
                .entry(e.model.display_name().to_string())
                .or_default();
        }
        let emit = |ev: &ProgressEvent| {
            if let Some(tx) = progress {
                let _ = tx.send(ev.clone());
            }
        };
        emit(&event);

        let mut tasks = JoinSet::new();
        for (entry, index) in &work {
            let request = ProviderRequest {
                model: entry.model.clone(),
                messages: plan.messages(entry),
                generation_index: *index,
            };
            let (fill_history, metadata) = plan.bindings_for(entry);
            let template = ResponseRecord {
                key: entry.key,
                index: *index,
                outcome: Outcome::Text(String::new()),
                model: entry.model.clone(),
                prompt: plan.prompts[entry.prompt].text.clone(),
                history: request.messages[..request.messages.len() - 1].to_vec(),
                fill_history,
                metadata,
                timestamp_ms: 0,
                scores: BTreeMap::new(),
            };
            let provider = providers[&entry.model.provider].clone();
            let limiter = self.limiter.clone();
            let in_flight = self.in_flight.clone();
            let retry = self.retry;
            tasks.spawn(async move {
                let result = send_with_retry(&*provider, &request, &limiter, &in_flight, retry).await;
                (template, result)
            });
        }

        let mut summary = BatchSummary {
            skipped: plan.len().saturating_sub(work.len()),
            ..Default::default()
        };
        let mut first_error: Option<CacheError> = None;
        while let Some(joined) = tasks.join_next().await {
            let (mut record, result) = joined.expect("dispatch task panicked");
            record.timestamp_ms = now_ms();
            let per_model = event
                .per_model
                .entry(record.model.display_name().to_string())
                .or_default();
            match result.outcome {
                Ok(text) => {
                    record.outcome = Outcome::Text(text);
                    summary.succeeded += 1;
                    event.completed += 1;
                    per_model.completed += 1;
                }
                Err(err) => {
                    record.outcome = Outcome::Error(err);
                    summary.failed += 1;
                    event.errored += 1;
                    per_model.errored += 1;
                }
            }
            if let Err(e) = cache.insert(record) {
                first_error.get_or_insert(e);
            }
            emit(&event);
        }
        cache.flush()?;
        match first_error {
            Some(e) => Err(e.into()),
            None => Ok(summary),
        }
    }
}

async fn send_with_retry(
    provider: &dyn Provider,
    request: &ProviderRequest,
    limiter: &RateLimiter,
    in_flight: &Semaphore,
    retry: RetryPolicy,
) -> ProviderResult {
    let mut attempt = 1;
    loop {
        let result = {
            let _slot = in_flight.acquire().await.expect("semaphore never closed");
            limiter.acquire(provider.id()).await;
            provider.complete(request).await
        };
        match &result.outcome {
            Err(e) if e.retryable && attempt < retry.max_attempts => {
                limiter.clock().sleep(retry.backoff(attempt)).await;
                attempt += 1;
            }
            _ => return result,
        }
    }
}
