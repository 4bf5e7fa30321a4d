//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the code under test except for
//! plain data types.

#![allow(dead_code)]

use std::collections::BTreeMap;

use asrm::engine::{RequestOutcome, SimReport, SlotRecord};
use asrm::policy::CheckpointState;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

// ---------------------------------------------------------------- KDE

/// Direct double-loop Gaussian KDE.
pub fn naive_kde(samples: &[f64], h: f64, t: f64) -> f64 {
    let mut acc = 0.0;
    for &s in samples {
        let z = (t - s) / h;
        acc += (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    }
    acc / (samples.len() as f64 * h)
}

/// `E[T | T > elapsed]` by trapezoid integration with step `h / 100` over a
/// wider support than the implementation uses.
pub fn fine_grid_expected_after(samples: &[f64], h: f64, elapsed: f64) -> f64 {
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min) - 8.0 * h;
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 8.0 * h;
    let step = h / 100.0;
    let start = lo.max(elapsed);
    let n = ((hi - start) / step).ceil() as usize;
    let (mut mass, mut moment) = (0.0, 0.0);
    let mut prev_t = start;
    let mut prev_f = naive_kde(samples, h, start);
    for k in 1..=n {
        let t = (start + k as f64 * step).min(hi);
        let f = naive_kde(samples, h, t);
        let dt = t - prev_t;
        mass += 0.5 * (f + prev_f) * dt;
        moment += 0.5 * (f * t + prev_f * prev_t) * dt;
        prev_t = t;
        prev_f = f;
    }
    moment / mass
}

/// Nearest-rank empirical quantile over integers-in-disguise, without float
/// rank arithmetic: the rank is `ceil(num * n / den)`.
pub fn rank_quantile(values: &[f64], num: usize, den: usize) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    let rank = (num * n).div_ceil(den).clamp(1, n);
    v[rank - 1]
}

// ---------------------------------------------------------------- metrics

/// A self-consistent random report: starts after arrivals, completions equal
/// start plus service, slot lifetimes cover their requests.
pub fn random_report(seed: u64, policy: &str) -> SimReport {
    let mut r = rng(seed);
    let n_fn = r.random_range(1..4);
    let n_req = r.random_range(5..120);
    let mut requests = Vec::with_capacity(n_req);
    let mut slots = Vec::new();
    let mut t = 0u64;
    for id in 0..n_req as u64 {
        t += r.random_range(0..400);
        let service = r.random_range(1..300);
        let cold = r.random_bool(0.3);
        let wait = if r.random_bool(0.2) { r.random_range(0..50) } else { 0 };
        let start = t + wait + if cold { r.random_range(100..900) } else { 0 };
        let f = format!("fn-{}", r.random_range(0..n_fn));
        requests.push(RequestOutcome {
            id,
            function_id: f.clone(),
            arrival: t,
            service_time: service,
            start: Some(start),
            completion: Some(start + service),
            cold_start: cold,
            wait_ms: wait,
            rejected: false,
            slot: Some(slots.len() as u64),
        });
        let created = t;
        let end = start + service + r.random_range(0..5000);
        slots.push(SlotRecord {
            id: slots.len() as u64,
            function_id: f,
            memory_gb: [0.125, 0.5, 1.0, 2.0][r.random_range(0..4)],
            created_at: created,
            provision_done_at: Some(start),
            terminated_at: end,
            busy_time: service,
            busy_intervals: vec![(start, start + service)],
        });
    }
    let survival_pairs = (0..r.random_range(1..40))
        .map(|_| (r.random_range(1.0..5000.0), r.random_range(1.0..5000.0)))
        .collect();
    SimReport {
        policy: policy.into(),
        requests,
        slots,
        decisions: Vec::new(),
        survival_pairs,
        checkpoint: CheckpointState::default(),
        checkpoint_consistent: true,
        digest: String::new(),
        events: 0,
        end_time: t + 10_000,
    }
}

/// Same arrivals as `base`, with cold flags and latencies redrawn.
pub fn perturbed(base: &SimReport, seed: u64, policy: &str) -> SimReport {
    let mut r = rng(seed);
    let mut out = base.clone();
    out.policy = policy.into();
    for req in &mut out.requests {
        req.cold_start = r.random_bool(0.2);
        let start = req.arrival + if req.cold_start { r.random_range(50..700) } else { r.random_range(0..20) };
        req.start = Some(start);
        req.completion = Some(start + req.service_time);
    }
    for s in &mut out.slots {
        s.terminated_at = s.created_at + r.random_range(s.busy_time + 1000..s.busy_time + 20_000);
    }
    out
}

pub struct BruteMetrics {
    pub csrr: f64,
    pub rue: f64,
    pub arl: f64,
    pub cpi: f64,
    pub pas: f64,
    pub cost_total: f64,
}

pub fn brute_cost(rep: &SimReport, c_exec: f64, c_mem: f64, gran: u64) -> f64 {
    let mut total = 0.0;
    for q in &rep.requests {
        if q.completion.is_some() {
            total += c_exec * q.service_time as f64;
        }
    }
    for s in &rep.slots {
        let alive = s.terminated_at - s.created_at;
        let mut billed = 0;
        while billed < alive {
            billed += gran;
        }
        total += c_mem * s.memory_gb * billed as f64;
    }
    total
}

fn brute_mean_latency(rep: &SimReport) -> f64 {
    let l: Vec<f64> = rep
        .requests
        .iter()
        .filter_map(|q| Some((q.completion? - q.arrival) as f64))
        .collect();
    l.iter().sum::<f64>() / l.len() as f64
}

pub fn brute_metrics(opt: &SimReport, base: &SimReport, c_exec: f64, c_mem: f64, gran: u64) -> BruteMetrics {
    let colds = |r: &SimReport| r.requests.iter().filter(|q| q.cold_start).count() as f64;
    let csrr = 1.0 - colds(opt) / colds(base);

    let exec: f64 = opt.requests.iter().map(|q| q.service_time as f64).sum();
    let alive: f64 = opt.slots.iter().map(|s| (s.terminated_at - s.created_at) as f64).sum();
    let rue = exec / alive;

    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for q in &opt.requests {
        if let Some(c) = q.completion {
            groups.entry(&q.function_id).or_default().push((c - q.arrival) as f64);
        }
    }
    let arl = groups
        .values()
        .map(|v| {
            let p50 = rank_quantile(v, 50, 100);
            let p95 = rank_quantile(v, 95, 100);
            (p95 - p50) / p50
        })
        .sum::<f64>()
        / groups.len() as f64;

    let c_opt = brute_cost(opt, c_exec, c_mem, gran);
    let c_base = brute_cost(base, c_exec, c_mem, gran);
    let cpi = (brute_mean_latency(base) / brute_mean_latency(opt)) * (c_base / c_opt);

    let pas = 1.0
        - opt
            .survival_pairs
            .iter()
            .map(|&(p, a)| (p - a).abs() / if p > a { p } else { a })
            .sum::<f64>()
            / opt.survival_pairs.len() as f64;

    BruteMetrics {
        csrr,
        rue,
        arl,
        cpi,
        pas,
        cost_total: c_opt,
    }
}

// ---------------------------------------------------------------- PCA / clustering

/// Top-`p` eigenvectors of the sample covariance, as columns.
pub fn batch_pca(rows: &[Vec<f64>], p: usize) -> DMatrix<f64> {
    let n = rows.len();
    let d = rows[0].len();
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    DMatrix::from_fn(d, p, |i, k| eig.eigenvectors[(i, order[k])])
}

/// Orthonormal basis (columns) of the span of `vectors`.
pub fn orthonormal_columns(vectors: &[Vec<f64>]) -> DMatrix<f64> {
    let d = vectors[0].len();
    let m = DMatrix::from_fn(d, vectors.len(), |i, k| vectors[k][i]);
    m.qr().q()
}

/// Largest principal angle between two column subspaces, in degrees.
pub fn max_principal_angle_deg(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let m = a.transpose() * b;
    let sv = m.singular_values();
    let smallest = sv.iter().cloned().fold(f64::INFINITY, f64::min).clamp(-1.0, 1.0);
    smallest.acos().to_degrees()
}

/// Lloyd's algorithm seeded from the two mutually farthest of the first rows.
pub fn kmeans2(rows: &[Vec<f64>]) -> Vec<usize> {
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let first = rows[0].clone();
    let far = rows
        .iter()
        .max_by(|a, b| dist2(a, &first).partial_cmp(&dist2(b, &first)).unwrap())
        .unwrap()
        .clone();
    let mut centers = [first, far];
    let mut labels = vec![0usize; rows.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (i, x) in rows.iter().enumerate() {
            let l = usize::from(dist2(x, &centers[1]) < dist2(x, &centers[0]));
            if l != labels[i] {
                labels[i] = l;
                changed = true;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = rows.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(x, _)| x).collect();
            if members.is_empty() {
                continue;
            }
            for j in 0..center.len() {
                center[j] = members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

/// Fraction of rows on which two labelings agree, under the best matching of
/// label ids.
pub fn agreement(a: &[usize], b: &[usize]) -> f64 {
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    // Greedy matching is exact for the 2x2 case used here.
    let mut used_a = vec![false; ka];
    let mut used_b = vec![false; kb];
    let mut hit = 0;
    for _ in 0..ka.min(kb) {
        let mut best = (0, 0, 0);
        for i in 0..ka {
            for j in 0..kb {
                if !used_a[i] && !used_b[j] && table[i][j] >= best.2 {
                    best = (i, j, table[i][j]);
                }
            }
        }
        used_a[best.0] = true;
        used_b[best.1] = true;
        hit += best.2;
    }
    hit as f64 / a.len() as f64
}

pub fn two_gaussians(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    use rand_distr::{Distribution, Normal};
    let mut r = rng(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let centers = [[0.0, 0.0], [10.0, 10.0]];
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = r.random_range(0..2);
        rows.push(vec![centers[c][0] + noise.sample(&mut r), centers[c][1] + noise.sample(&mut r)]);
        labels.push(c);
    }
    (rows, labels)
}

/// Samples from a 2-D subspace of 10-D, plus small isotropic noise.
pub fn subspace_samples(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    use rand_distr::{Distribution, Normal};
    let mut r = rng(seed);
    let g = Normal::new(0.0, 1.0).unwrap();
    let d = 10;
    let basis: Vec<Vec<f64>> = (0..2).map(|_| (0..d).map(|_| g.sample(&mut r)).collect()).collect();
    let rows = (0..n)
        .map(|_| {
            let a = 5.0 * g.sample(&mut r);
            let b = 2.0 * g.sample(&mut r);
            (0..d)
                .map(|j| 3.0 + a * basis[0][j] + b * basis[1][j] + 0.05 * g.sample(&mut r))
                .collect()
        })
        .collect();
    (rows, basis)
}

// ---------------------------------------------------------------- tuner

pub const QUAD_OPT: [f64; 2] = [1.3, 6.2];

pub fn quadratic(theta: &[f64]) -> f64 {
    (theta[0] - QUAD_OPT[0]).powi(2) * 4.0 + (theta[1] - QUAD_OPT[1]).powi(2) * 0.5 + 0.3 * (theta[0] - QUAD_OPT[0]) * (theta[1] - QUAD_OPT[1])
}

/// Exhaustive grid minimum over `[lo, hi]^2` with `k` points per axis.
pub fn grid_argmin(f: impl Fn(&[f64]) -> f64, lo: [f64; 2], hi: [f64; 2], k: usize) -> Vec<f64> {
    let mut best = (f64::INFINITY, vec![0.0, 0.0]);
    for i in 0..k {
        for j in 0..k {
            let p = vec![
                lo[0] + (hi[0] - lo[0]) * i as f64 / (k - 1) as f64,
                lo[1] + (hi[1] - lo[1]) * j as f64 / (k - 1) as f64,
            ];
            let v = f(&p);
            if v < best.0 {
                best = (v, p);
            }
        }
    }
    best.1
}

// ---------------------------------------------------------------- gateway

pub mod wire {
    use std::io::{BufRead, BufReader, Write};
    use std::net::{SocketAddr, TcpStream};
    use std::thread::JoinHandle;

    use asrm::gateway::{Gateway, GatewayConfig};
    use serde_json::Value;

    pub fn start() -> (SocketAddr, JoinHandle<()>) {
        let cfg = GatewayConfig {
            bind: "127.0.0.1:0".into(),
            cold_start_ms: 5,
            default_service_ms: 1,
            ..GatewayConfig::default()
        };
        let gw = Gateway::bind(cfg).expect("bind");
        let addr = gw.local_addr().unwrap();
        (addr, std::thread::spawn(move || gw.run().unwrap()))
    }

    pub struct Client {
        reader: BufReader<TcpStream>,
        writer: TcpStream,
    }

    impl Client {
        pub fn connect(addr: SocketAddr) -> Client {
            let s = TcpStream::connect(addr).unwrap();
            s.set_nodelay(true).unwrap();
            s.set_read_timeout(Some(std::time::Duration::from_secs(20))).unwrap();
            Client {
                writer: s.try_clone().unwrap(),
                reader: BufReader::new(s),
            }
        }

        pub fn send_raw(&mut self, line: &str) {
            self.writer.write_all(format!("{line}\n").as_bytes()).unwrap();
        }

        pub fn recv(&mut self) -> Value {
            let mut buf = String::new();
            self.reader.read_line(&mut buf).unwrap();
            serde_json::from_str(&buf).unwrap_or_else(|e| panic!("bad response {buf:?}: {e}"))
        }

        pub fn call(&mut self, line: &str) -> Value {
            self.send_raw(line);
            self.recv()
        }
    }

    /// Runs the whole conformance script, returning the first violation.
    pub fn conformance(addr: SocketAddr) -> Result<(), String> {
        let check = |cond: bool, what: &str| if cond { Ok(()) } else { Err(what.to_string()) };
        let mut c = Client::connect(addr);

        let r = c.call(r#"{"op":"submit","req":1,"function_id":"f","service_hint_ms":2}"#);
        check(r["ok"] == true && r["req"] == 1, "submit ok")?;
        check(r["cold_start"] == true, "first submit is cold")?;
        let r = c.call(r#"{"op":"submit","req":2,"function_id":"f","service_hint_ms":2}"#);
        check(r["ok"] == true && r["cold_start"] == false, "second submit reuses the warm slot")?;

        let r = c.call("{this is not json");
        check(r["ok"] == false && r["err"] == "parse" && r["req"].is_null(), "malformed line answered with parse error")?;
        let r = c.call(r#"{"op":"dance","req":"x"}"#);
        check(r["err"] == "unknown_op" && r["req"] == "x", "unknown op")?;
        let r = c.call(r#"{"op":"submit","req":3}"#);
        check(r["err"] == "bad_request" && r["req"] == 3, "missing field")?;

        let r = c.call(r#"{"op":"stats","req":4}"#);
        check(r["ok"] == true && r["completed"] == 2 && r["requests"] == 2, "stats counts")?;

        let r = c.call(r#"{"op":"config_get","req":5}"#);
        check(r["config"]["wait_threshold"].is_number(), "config_get")?;
        let r = c.call(r#"{"op":"config_set","req":6,"config":{"wait_threshold":0.7}}"#);
        check(r["ok"] == true && r["config"]["wait_threshold"] == 0.7, "config_set applies")?;
        let r = c.call(r#"{"op":"config_set","req":7,"config":{"wait_threshold":7.0}}"#);
        check(r["ok"] == false && r["err"] == "config", "invalid config rejected")?;
        let r = c.call(r#"{"op":"config_get","req":8}"#);
        check(r["config"]["wait_threshold"] == 0.7, "rejected config leaves the old one")?;

        // Pipelined lines each get one response, in order.
        let mut batch = String::new();
        for i in 0..20 {
            if i % 5 == 0 {
                batch.push_str("garbage\n");
            }
            batch.push_str(&format!("{{\"op\":\"stats\",\"req\":{i}}}\n"));
        }
        c.writer.write_all(batch.as_bytes()).unwrap();
        for i in 0..20 {
            if i % 5 == 0 {
                check(c.recv()["err"] == "parse", "pipelined garbage")?;
            }
            check(c.recv()["req"] == i, "pipelined order")?;
        }

        // Two concurrent clients, 100 submissions each.
        let workers: Vec<_> = (0..2)
            .map(|w| {
                std::thread::spawn(move || {
                    let mut c = Client::connect(addr);
                    let mut seen = Vec::new();
                    for i in 0..100 {
                        let id = w * 1000 + i;
                        let r = c.call(&format!(
                            "{{\"op\":\"submit\",\"req\":{id},\"function_id\":\"g{w}\",\"service_hint_ms\":1}}"
                        ));
                        if r["ok"] == true {
                            seen.push(r["req"].as_u64().unwrap());
                        }
                    }
                    seen
                })
            })
            .collect();
        let mut total = 0;
        for (w, h) in workers.into_iter().enumerate() {
            let seen = h.join().map_err(|_| "client thread panicked".to_string())?;
            let want: Vec<u64> = (0..100).map(|i| w as u64 * 1000 + i).collect();
            check(seen == want, "every concurrent submission answered in order")?;
            total += seen.len();
        }
        check(total == 200, "200 concurrent submissions")?;
        let r = c.call(r#"{"op":"stats","req":9}"#);
        check(r["completed"] == 202, "stats after concurrent load")?;

        let r = c.call(r#"{"op":"shutdown","req":10}"#);
        check(r["ok"] == true && r["req"] == 10, "shutdown acknowledged")?;
        Ok(())
    }
}
