//! Per-provider token buckets on a virtual clock.

use std::sync::Arc;
use std::time::Duration;

use forge::engine::{Clock, ManualClock, RateLimiter};

#[tokio::main]
async fn main() {
    let clock = Arc::new(ManualClock::new());
    let limiter = RateLimiter::new(clock.clone() as Arc<dyn Clock>);
    limiter.set_limit("slow", 6);
    limiter.set_limit("fast", 60);

    for i in 0..8 {
        let p = limiter.acquire("slow").await;
        println!("slow #{i}: issued at {:>4.1}s after waiting {:.1}s", p.issued_at.as_secs_f64(), p.waited.as_secs_f64());
    }
    let p = limiter.acquire("fast").await;
    println!("fast #0: issued at {:.1}s, waited {:?}", p.issued_at.as_secs_f64(), p.waited);
    assert_eq!(p.waited, Duration::ZERO);
}
