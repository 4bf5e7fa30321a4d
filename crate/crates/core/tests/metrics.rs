mod common;

use asrm::metrics::{cost_total, evaluate, nearest_rank, sliding_cost, CostModel, MetricsError};
use common::{brute_cost, brute_metrics, perturbed, random_report, rank_quantile, rel_err, rng};
use rand::Rng;

fn close(a: f64, b: f64) -> bool {
    rel_err(a, b) <= 1e-9
}

#[test]
fn metrics_match_brute_force_on_random_reports() {
    let model = CostModel::default();
    let mut checked = 0;
    let mut seed = 0;
    while checked < 100 {
        seed += 1;
        let base = random_report(seed, "fixed_keepalive");
        if base.cold_starts() == 0 {
            continue;
        }
        let opt = perturbed(&base, seed + 7777, "asrm");
        let got = evaluate(&opt, &base, &model).unwrap();
        let want = brute_metrics(&opt, &base, model.c_exec, model.c_mem, model.billing_granularity);
        assert!(close(got.csrr, want.csrr), "csrr seed {seed}: {} vs {}", got.csrr, want.csrr);
        assert!(close(got.rue, want.rue), "rue seed {seed}");
        assert!(close(got.arl, want.arl), "arl seed {seed}: {} vs {}", got.arl, want.arl);
        assert!(close(got.cpi, want.cpi), "cpi seed {seed}");
        assert!(close(got.pas.unwrap(), want.pas), "pas seed {seed}");
        assert!(close(got.cost_total, want.cost_total), "cost seed {seed}");
        checked += 1;
    }
}

#[test]
fn cost_rounds_each_slot_up_to_granularity() {
    let mut r = random_report(3, "x");
    r.requests.clear();
    r.slots.truncate(1);
    r.slots[0].created_at = 0;
    r.slots[0].terminated_at = 149;
    r.slots[0].memory_gb = 1.0;
    let m = CostModel { c_exec: 0.0, c_mem: 1.0, billing_granularity: 100 };
    assert_eq!(cost_total(&r, &m).unwrap(), 200.0);
    r.slots[0].terminated_at = 200;
    assert_eq!(cost_total(&r, &m).unwrap(), 200.0);
}

#[test]
fn nearest_rank_agrees_with_integer_ranks() {
    let mut r = rng(5);
    for _ in 0..500 {
        let n = r.random_range(1..300);
        let mut v: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1000.0)).collect();
        let p95 = rank_quantile(&v, 95, 100);
        let p50 = rank_quantile(&v, 50, 100);
        v.sort_by(f64::total_cmp);
        assert_eq!(nearest_rank(&v, 0.95), p95);
        assert_eq!(nearest_rank(&v, 0.50), p50);
    }
}

#[test]
fn baseline_without_colds_is_an_error() {
    let mut base = random_report(9, "b");
    for q in &mut base.requests {
        q.cold_start = false;
    }
    let mut opt = base.clone();
    opt.requests[0].cold_start = true;
    let err = evaluate(&opt, &base, &CostModel::default()).unwrap_err();
    assert_eq!(err, MetricsError::BaselineZeroColds(1));
}

#[test]
fn sliding_cost_matches_window_rescan() {
    let model = CostModel { c_exec: 2.0, c_mem: 3.0, billing_granularity: 1 };
    for seed in 0..5 {
        let rep = random_report(seed, "x");
        let series = sliding_cost(&rep, &model, 1000, 500);
        for &(t, v) in &series {
            let lo = t.saturating_sub(1000);
            let mut want = 0.0;
            // Millisecond-by-millisecond rescan.
            for ms in lo..t {
                for q in &rep.requests {
                    if q.start.unwrap() <= ms && ms < q.completion.unwrap() {
                        want += model.c_exec;
                    }
                }
                for s in &rep.slots {
                    if s.created_at <= ms && ms < s.terminated_at {
                        want += model.c_mem * s.memory_gb;
                    }
                }
            }
            assert!(rel_err(v, want) <= 1e-9, "seed {seed} t {t}: {v} vs {want}");
        }
        // A window spanning everything sees the unrounded total.
        let all = sliding_cost(&rep, &model, u64::MAX / 4, rep.end_time);
        let total = brute_cost(&rep, model.c_exec, model.c_mem, 1);
        assert!(rel_err(all.last().unwrap().1, total) <= 1e-9);
    }
}
