//! Circuit breaker backoff and asynchronous checkpoint flushing.

use asrm::policy::checkpoint::fold;
use asrm::policy::{AsyncCheckpointer, BreakerConfig, CircuitBreaker, Delta};

fn main() {
    let mut breaker = CircuitBreaker::new(BreakerConfig {
        window: 4,
        failure_threshold: 0.5,
        backoff_base: 1000,
        backoff_cap: 8000,
    });
    let mut now = 0;
    for step in 0..12 {
        let allowed = breaker.allow(now);
        if allowed {
            // Provisioning keeps failing for a while, then recovers.
            breaker.on_result(step >= 9, now);
        }
        println!("t={now:>6} allowed={allowed:<5} state={:?}", breaker.state());
        now += 1500;
    }

    let mut ck = AsyncCheckpointer::new();
    ck.record(Delta::from_iter([("colds", 3), ("reuses", 10)]));
    let first = ck.begin_flush();
    ck.record(Delta::from_iter([("colds", 1)]));
    let second = ck.begin_flush();
    // Flushes may land out of order; the committed state still matches.
    for batch in second.into_iter().chain(first) {
        ck.complete_flush(batch);
    }
    println!("committed {:?}", ck.committed());
    assert_eq!(ck.committed(), &fold(ck.log()));
}
