mod common;

use asrm::domain::{transition, HistoryWindow, LifecycleEvent, Slot, SystemState};
use asrm::policy::checkpoint::fold;
use asrm::policy::gc::{expired_idle, next_boundary};
use asrm::policy::{
    adaptive_idle_duration, adaptive_timeout, checkpoint_apply, gc_sweep, wait_probability, AsrmConfig, AsyncCheckpointer, BreakerConfig,
    BreakerState, CheckpointState, CircuitBreaker, Delta,
};
use asrm::predictor::{interarrival_quantile, KdeModel};
use common::rng;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp};

// ------------------------------------------------------------ wait probability

#[test]
fn wait_probability_examples() {
    assert_eq!(wait_probability(0.0, 1e6, &[]).unwrap(), 1.0);
    let v = wait_probability(0.5, 2.0, &[0.5]).unwrap();
    assert!((v - 0.183_939_720_585_721_2).abs() < 1e-15);
    assert_eq!(wait_probability(0.01, 3.0, &[0.2, 1.0]).unwrap(), 0.0);
    assert!(wait_probability(-1.0, 1.0, &[]).is_err());
    assert!(wait_probability(1.0, -1.0, &[]).is_err());
    assert!(wait_probability(1.0, 1.0, &[1.5]).is_err());
}

fn probs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, 0..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn wait_probability_in_unit_interval(l in 0.0f64..10.0, t in 0.0f64..1e4, p in probs()) {
        let v = wait_probability(l, t, &p).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn wait_probability_nonincreasing_in_t(l in 0.0f64..1.0, t in 0.0f64..1e4, dt in 0.0f64..1e4, p in probs()) {
        prop_assert!(wait_probability(l, t + dt, &p).unwrap() <= wait_probability(l, t, &p).unwrap());
    }

    #[test]
    fn wait_probability_nonincreasing_in_lambda(l in 0.0f64..1.0, dl in 0.0f64..1.0, t in 0.0f64..1e4, p in probs()) {
        prop_assert!(wait_probability(l + dl, t, &p).unwrap() <= wait_probability(l, t, &p).unwrap());
    }

    #[test]
    fn wait_probability_nonincreasing_in_each_competitor(
        l in 0.0f64..1.0,
        t in 0.0f64..1e3,
        p in prop::collection::vec(0.0f64..=1.0, 1..12),
        pick in any::<prop::sample::Index>(),
        bump in 0.0f64..=1.0,
    ) {
        let i = pick.index(p.len());
        let mut q = p.clone();
        q[i] = (q[i] + bump).min(1.0);
        prop_assert!(wait_probability(l, t, &q).unwrap() <= wait_probability(l, t, &p).unwrap());
    }
}

// ------------------------------------------------------------ timeouts and idle

#[test]
fn adaptive_timeout_examples() {
    let cfg = AsrmConfig::default();
    assert_eq!(adaptive_timeout(None, &cfg), cfg.timeout_base as f64);
    let mut h = HistoryWindow::new(16);
    for _ in 0..4 {
        h.push(10.0, 5.0);
    }
    assert_eq!(adaptive_timeout(Some(&h), &cfg), 1000.0);
    // cv = 1 up to the tiny positive floor on the first sample.
    let mut h = HistoryWindow::new(16);
    for e in [1e-9, 2.0] {
        h.push(10.0, e);
    }
    let t = adaptive_timeout(Some(&h), &cfg);
    assert!((t - 500.0).abs() < 1e-6, "t* = {t}");
}

#[test]
fn adaptive_idle_duration_examples() {
    let cfg = AsrmConfig::default();
    assert_eq!(adaptive_idle_duration(None, &cfg), cfg.idle_min);
    let mut dense = HistoryWindow::new(1024);
    for _ in 0..200 {
        dense.push(40.0, 5.0);
    }
    assert_eq!(adaptive_idle_duration(Some(&dense), &cfg), cfg.idle_min);

    // Wide gaps: the clamp is inactive and the quantile oracle must agree.
    let mut r = rng(11);
    let exp = Exp::new(1.0 / 5000.0).unwrap();
    let mut h = HistoryWindow::new(1024);
    let mut samples = Vec::new();
    for _ in 0..500 {
        let g: f64 = exp.sample(&mut r);
        samples.push(g);
        h.push(g, 20.0);
    }
    let want = interarrival_quantile(&KdeModel::with_silverman(samples).unwrap(), cfg.idle_quantile).unwrap();
    let got = adaptive_idle_duration(Some(&h), &cfg);
    assert!((got as f64 - want.clamp(cfg.idle_min as f64, cfg.idle_max as f64)).abs() <= 1.0, "{got} vs {want}");
}

// ------------------------------------------------------------ checkpoint

#[test]
fn checkpoint_examples() {
    let c = checkpoint_apply(CheckpointState::default(), &Delta::from_iter([("a", 1)]));
    let c = checkpoint_apply(c, &Delta::from_iter([("a", 2), ("b", 3)]));
    assert_eq!(c.value, Delta::from_iter([("a", 3), ("b", 3)]));
    assert_eq!(c.seq, 2);
    let same = checkpoint_apply(c.clone(), &Delta::new());
    assert_eq!(same.value, c.value);
    assert_eq!(same.seq, 3);
}

fn random_delta(r: &mut impl Rng) -> Delta {
    let keys = ["arrivals", "colds", "waits", "reuses", "fn-0", "fn-1"];
    (0..r.random_range(0..4))
        .map(|_| (keys[r.random_range(0..keys.len())], r.random_range(-50..50)))
        .collect()
}

#[test]
fn async_checkpoint_equals_left_fold() {
    for seed in 0..1000 {
        let mut r = rng(seed);
        let mut ck = AsyncCheckpointer::new();
        let mut open: Vec<u64> = Vec::new();
        for _ in 0..r.random_range(0..80) {
            ck.record(random_delta(&mut r));
            if r.random_bool(0.3) {
                open.extend(ck.begin_flush());
            }
            if !open.is_empty() && r.random_bool(0.3) {
                let i = r.random_range(0..open.len());
                ck.complete_flush(open.swap_remove(i));
            }
        }
        open.extend(ck.begin_flush());
        open.shuffle(&mut r);
        for b in open {
            ck.complete_flush(b);
        }
        assert!(!ck.has_unflushed());
        assert_eq!(ck.committed(), &fold(ck.log()), "seed {seed}");
        let mut shuffled = ck.log().to_vec();
        shuffled.shuffle(&mut r);
        assert_eq!(fold(&shuffled), fold(ck.log()));
    }
}

// ------------------------------------------------------------ breaker

fn breaker(window: usize) -> CircuitBreaker {
    CircuitBreaker::new(BreakerConfig {
        window,
        failure_threshold: 0.5,
        backoff_base: 1000,
        backoff_cap: 5000,
    })
}

fn open_at(b: &CircuitBreaker) -> (u64, u64) {
    match b.state() {
        BreakerState::Open { since, backoff_ms } => (since, backoff_ms),
        s => panic!("expected Open, got {s:?}"),
    }
}

#[test]
fn breaker_walk_with_doubling_and_cap() {
    let mut ok = breaker(4);
    for t in 0..20 {
        assert!(ok.allow(t));
        ok.on_result(true, t);
    }
    assert_eq!(ok.state(), BreakerState::Closed);

    // F, F, F, S: the window fills with a 0.75 failure rate.
    let mut b = breaker(4);
    for (t, ok) in [(20, false), (21, false), (22, false)] {
        b.on_result(ok, t);
        assert_eq!(b.state(), BreakerState::Closed);
    }
    b.on_result(true, 23);
    assert_eq!(open_at(&b), (23, 1000));
    assert!(!b.allow(23));
    assert!(!b.allow(1022));

    // Expired backoff admits exactly one probe.
    assert!(b.allow(1023));
    assert_eq!(b.state(), BreakerState::HalfOpen);
    assert!(!b.allow(1023));

    // Failed probes double the backoff up to the cap.
    let mut now = 1023;
    for want in [2000, 4000, 5000, 5000] {
        b.on_result(false, now);
        let (since, backoff) = open_at(&b);
        assert_eq!((since, backoff), (now, want));
        assert!(!b.allow(now + backoff - 1));
        now += backoff;
        assert!(b.allow(now));
    }

    // A successful probe closes and resets the count.
    b.on_result(true, now);
    assert_eq!(b.state(), BreakerState::Closed);
    assert_eq!(b.consecutive_open_count(), 0);
    for t in 0..4 {
        b.on_result(false, now + t);
    }
    assert_eq!(open_at(&b).1, 1000);
}

#[test]
fn breaker_never_admits_during_backoff() {
    for seed in 0..200 {
        let mut r = rng(seed);
        let mut b = breaker(r.random_range(1..10));
        let mut now = 0u64;
        for _ in 0..500 {
            now += r.random_range(0..700);
            let before = b.state();
            let allowed = b.allow(now);
            if let BreakerState::Open { since, backoff_ms } = before {
                assert_eq!(allowed, now >= since + backoff_ms);
                assert!(backoff_ms <= 5000);
            }
            if allowed {
                b.on_result(r.random_bool(0.4), now);
            }
        }
    }
}

// ------------------------------------------------------------ gc

fn idle(id: u64, deadline: u64) -> Slot {
    let mut s = transition(Slot::provisioning(id, "f", 1.0, 0), LifecycleEvent::Warmed, 0).unwrap();
    s.idle_deadline = deadline;
    s
}

#[test]
fn gc_terminates_only_on_boundaries() {
    let mut st = SystemState::new();
    st.slots.insert(1, idle(1, 149));
    assert!(gc_sweep(&mut st, 100, 100).unwrap().is_empty());
    assert!(gc_sweep(&mut st, 150, 100).is_err());
    let done = gc_sweep(&mut st, 200, 100).unwrap();
    assert_eq!(done[0].terminated_at, Some(200));
    assert_eq!(done[0].alive_time(200), 200);
    assert!(st.slots.is_empty());

    // Busy slots survive any sweep.
    let busy = transition(idle(2, 0), LifecycleEvent::Start, 0).unwrap();
    st.slots.insert(2, busy);
    assert!(gc_sweep(&mut st, 10_000, 100).unwrap().is_empty());
    assert!(expired_idle(&st, u64::MAX).is_empty());
    assert_eq!(next_boundary(149, 100), 200);
    assert_eq!(next_boundary(200, 100), 200);
}
