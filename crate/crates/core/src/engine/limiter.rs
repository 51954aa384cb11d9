//! Per-provider token buckets on an injectable clock.
//!
//! Each acquire reserves the next token immediately and is told when it may
//! proceed, so waiting callers are served in arrival order. A bucket holds
//! `rpm` tokens and refills at `rpm / 60` per second.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use futures::future::BoxFuture;
use parking_lot::Mutex;

use crate::provider::ProviderRegistry;

pub trait Clock: Send + Sync {
    /// Time elapsed since the clock's origin.
    fn now(&self) -> Duration;

    fn sleep_until(&self, deadline: Duration) -> BoxFuture<'static, ()>;

    fn sleep(&self, duration: Duration) -> BoxFuture<'static, ()> {
        self.sleep_until(self.now() + duration)
    }
}

/// Wall clock backed by tokio's timer.
pub struct SystemClock {
    origin: tokio::time::Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock {
            origin: tokio::time::Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep_until(&self, deadline: Duration) -> BoxFuture<'static, ()> {
        let at = self.origin + deadline;
        Box::pin(tokio::time::sleep_until(at))
    }
}

/// Simulated clock: sleeping jumps time forward instead of waiting.
#[derive(Default)]
pub struct ManualClock {
    now: Mutex<Duration>,
}

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, by: Duration) {
        *self.now.lock() += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        *self.now.lock()
    }

    fn sleep_until(&self, deadline: Duration) -> BoxFuture<'static, ()> {
        {
            let mut now = self.now.lock();
            if deadline > *now {
                *now = deadline;
            }
        }
        Box::pin(async { tokio::task::yield_now().await })
    }
}

#[derive(Debug, Clone)]
struct Bucket {
    capacity: f64,
    per_second: f64,
    tokens: f64,
    last: Duration,
}

impl Bucket {
    fn new(rpm: u32, now: Duration) -> Self {
        let capacity = f64::from(rpm.max(1));
        Bucket {
            capacity,
            per_second: capacity / 60.0,
            tokens: capacity,
            last: now,
        }
    }

    /// Takes one token, going into debt if necessary; returns when the
    /// caller may proceed.
    fn reserve(&mut self, now: Duration) -> Duration {
        if now > self.last {
            let elapsed = (now - self.last).as_secs_f64();
            self.tokens = (self.tokens + elapsed * self.per_second).min(self.capacity);
            self.last = now;
        }
        self.tokens -= 1.0;
        if self.tokens >= 0.0 {
            now.max(self.last)
        } else {
            self.last + Duration::from_secs_f64(-self.tokens / self.per_second)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Permit {
    /// Clock time at which the request was allowed out.
    pub issued_at: Duration,
    pub waited: Duration,
}

pub struct RateLimiter {
    clock: Arc<dyn Clock>,
    limits: Mutex<HashMap<String, u32>>,
    buckets: Mutex<HashMap<String, Bucket>>,
}

impl RateLimiter {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        RateLimiter {
            clock,
            limits: Mutex::new(HashMap::new()),
            buckets: Mutex::new(HashMap::new()),
        }
    }

    pub fn from_registry(registry: &ProviderRegistry, clock: Arc<dyn Clock>) -> Self {
        let limiter = RateLimiter::new(clock);
        for id in registry.ids() {
            if let Some(rpm) = registry.get(id).ok().and_then(|p| p.rate_limit_rpm()) {
                limiter.set_limit(id, rpm);
            }
        }
        limiter
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn set_limit(&self, provider: &str, rpm: u32) {
        self.limits.lock().insert(provider.to_string(), rpm);
        self.buckets.lock().remove(provider);
    }

    pub fn limit(&self, provider: &str) -> Option<u32> {
        self.limits.lock().get(provider).copied()
    }

    /// Waits until `provider` has a token. Unlimited providers pass at once.
    pub async fn acquire(&self, provider: &str) -> Permit {
        let now = self.clock.now();
        let Some(rpm) = self.limit(provider) else {
            return Permit {
                issued_at: now,
                waited: Duration::ZERO,
            };
        };
        let ready = {
            let mut buckets = self.buckets.lock();
            buckets
                .entry(provider.to_string())
                .or_insert_with(|| Bucket::new(rpm, now))
                .reserve(now)
        };
        if ready > now {
            self.clock.sleep_until(ready).await;
        }
        Permit {
            issued_at: ready,
            waited: ready.saturating_sub(now),
        }
    }
}
