//! Query engine: response cache, delta computation, rate-limited concurrent
//! dispatch with retries, and progress events.

mod cache;
mod dispatch;
mod limiter;
mod record;

pub use cache::{CacheError, ResponseCache, INDEX_FILE, LOG_FILE};
pub use dispatch::{
    compute_delta, delta_size, records_for_plan, BatchSummary, DeltaItem, Dispatcher,
    ExecuteError, ExecuteOptions, ModelProgress, ProgressEvent, RetryPolicy,
    DEFAULT_MAX_IN_FLIGHT,
};
pub use limiter::{Clock, ManualClock, Permit, RateLimiter, SystemClock};
pub use record::{Outcome, QueryKey, ResponseRecord};
