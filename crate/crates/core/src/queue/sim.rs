//! Discrete-event simulation of the single-server FIFO queue.
//!
//! Waiting and sojourn times come from the Lindley recursion; queue-length
//! and system-size averages come from a time-weighted scan of the arrival
//! and departure event streams. Confidence intervals use the method of batch
//! means with a fixed batch count, so every returned estimate carries a 95%
//! half width.

use super::{MetricKind, QueueError, QueueParams};
use crate::rng::SplitMix64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Number of batches used for confidence intervals.
const BATCHES: usize = 32;

/// 97.5% quantile of the t distribution with `BATCHES - 1 = 31` degrees of
/// freedom.
const T_CRIT_31: f64 = 2.039_513_446_396_407_7;

/// Service-time distribution of the simulated server.
///
/// The four families together cover every coefficient of variation the
/// closed forms accept: zero (deterministic), below one (uniform or a
/// two-point law), exactly one (exponential), and above one (two-point).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ServiceDist {
    Exponential { rate: f64 },
    Deterministic { value: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Takes `low` with probability `p_low`, otherwise `high`.
    TwoPoint { low: f64, high: f64, p_low: f64 },
}

impl ServiceDist {
    /// Exponential with the given mean.
    pub fn exponential_with_mean(mean: f64) -> Self {
        ServiceDist::Exponential { rate: 1.0 / mean }
    }

    /// Symmetric-free two-point law with a point at zero, matching the given
    /// mean and standard deviation. Works for any positive deviation.
    pub fn two_point_with_moments(mean: f64, sd: f64) -> Self {
        let cv2 = (sd / mean) * (sd / mean);
        ServiceDist::TwoPoint {
            low: 0.0,
            high: mean * (1.0 + cv2),
            p_low: cv2 / (1.0 + cv2),
        }
    }

    /// Uniform law matching the given mean and standard deviation.
    ///
    /// Only possible while `sd <= mean / sqrt(3)`; beyond that the lower
    /// endpoint would be negative.
    pub fn uniform_with_moments(mean: f64, sd: f64) -> Result<Self, QueueError> {
        let half = sd * 3f64.sqrt();
        if half > mean {
            return Err(QueueError::InvalidDistribution(format!(
                "uniform service law cannot reach sd {sd} at mean {mean}"
            )));
        }
        Ok(ServiceDist::Uniform {
            lo: mean - half,
            hi: mean + half,
        })
    }

    pub fn check(&self) -> Result<(), QueueError> {
        let bad = |msg: String| Err(QueueError::InvalidDistribution(msg));
        match *self {
            ServiceDist::Exponential { rate } => {
                if !(rate.is_finite() && rate > 0.0) {
                    return bad(format!("exponential rate must be positive, got {rate}"));
                }
            }
            ServiceDist::Deterministic { value } => {
                if !(value.is_finite() && value >= 0.0) {
                    return bad(format!("negative support mass: fixed service time {value}"));
                }
            }
            ServiceDist::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return bad(format!("bad uniform endpoints [{lo}, {hi}]"));
                }
                if lo < 0.0 {
                    return bad(format!("negative support mass: uniform lower endpoint {lo}"));
                }
            }
            ServiceDist::TwoPoint { low, high, p_low } => {
                if !(low.is_finite() && high.is_finite() && p_low.is_finite()) {
                    return bad("two-point parameters must be finite".into());
                }
                if low < 0.0 || high < 0.0 {
                    return bad(format!(
                        "negative support mass: two-point support ({low}, {high})"
                    ));
                }
                if !(0.0..=1.0).contains(&p_low) {
                    return bad(format!("two-point probability {p_low} outside [0, 1]"));
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ServiceDist::Exponential { rate } => 1.0 / rate,
            ServiceDist::Deterministic { value } => value,
            ServiceDist::Uniform { lo, hi } => 0.5 * (lo + hi),
            ServiceDist::TwoPoint { low, high, p_low } => p_low * low + (1.0 - p_low) * high,
        }
    }

    pub fn sd(&self) -> f64 {
        match *self {
            ServiceDist::Exponential { rate } => 1.0 / rate,
            ServiceDist::Deterministic { .. } => 0.0,
            ServiceDist::Uniform { lo, hi } => (hi - lo) / 12f64.sqrt(),
            ServiceDist::TwoPoint { low, high, p_low } => {
                (p_low * (1.0 - p_low)).sqrt() * (high - low).abs()
            }
        }
    }

    fn sample(&self, rng: &mut SplitMix64) -> f64 {
        match *self {
            ServiceDist::Exponential { rate } => rng.exponential(rate),
            ServiceDist::Deterministic { value } => value,
            ServiceDist::Uniform { lo, hi } => rng.uniform(lo, hi),
            ServiceDist::TwoPoint { low, high, p_low } => {
                if rng.next_f64() < p_low {
                    low
                } else {
                    high
                }
            }
        }
    }
}

/// Point estimate with a 95% batch-means half width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimEstimate {
    pub mean: f64,
    pub half_width: f64,
    pub samples: u64,
}

fn batch_estimate(means: &[f64], overall: f64, samples: u64) -> SimEstimate {
    let n = means.len() as f64;
    let var = means.iter().map(|m| (m - overall) * (m - overall)).sum::<f64>() / (n - 1.0);
    SimEstimate {
        mean: overall,
        half_width: T_CRIT_31 * (var / n).sqrt(),
        samples,
    }
}

/// Simulate `customers` arrivals through the queue and estimate all six
/// metrics.
///
/// `warmup` customers are discarded before statistics start; it defaults to
/// 10% of the run. The same seed always reproduces the same estimates. The
/// distribution must match the moments declared in `p` (mean `1/mu`,
/// standard deviation `sigma`). Saturated parameter sets are simulated as
/// given; their estimates simply grow with the run length.
pub fn simulate(
    p: &QueueParams,
    service: &ServiceDist,
    customers: u64,
    warmup: Option<u64>,
    seed: u64,
) -> Result<BTreeMap<MetricKind, SimEstimate>, QueueError> {
    p.check()?;
    service.check()?;
    if p.lambda == 0.0 {
        return Err(QueueError::NoArrivals);
    }
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    if rel(service.mean(), 1.0 / p.mu) > 1e-9 {
        return Err(QueueError::InvalidDistribution(format!(
            "service mean {} does not match 1/mu = {}",
            service.mean(),
            1.0 / p.mu
        )));
    }
    if rel(service.sd(), p.sigma) > 1e-9 {
        return Err(QueueError::InvalidDistribution(format!(
            "service deviation {} does not match sigma = {}",
            service.sd(),
            p.sigma
        )));
    }
    let warmup = warmup.unwrap_or(customers / 10);
    let n = customers as usize;
    let kept = n.saturating_sub(warmup as usize);
    if kept < BATCHES {
        return Err(QueueError::InvalidParams(format!(
            "run too short: {kept} post-warmup customers, need at least {BATCHES}"
        )));
    }

    let mut root = SplitMix64::new(seed);
    let mut arr_rng = root.split();
    let mut svc_rng = root.split();

    // Lindley recursion over arrival epochs and departure epochs. FIFO with
    // one server makes the departure sequence nondecreasing, which the
    // time-average scan below relies on.
    let mut arrivals = Vec::with_capacity(n);
    let mut departures = Vec::with_capacity(n);
    let mut waits = Vec::with_capacity(n);
    let mut sojourns = Vec::with_capacity(n);
    let mut t = 0.0f64;
    let mut prev_departure = 0.0f64;
    for _ in 0..n {
        t += arr_rng.exponential(p.lambda);
        let service_time = service.sample(&mut svc_rng);
        let start = t.max(prev_departure);
        let done = start + service_time;
        arrivals.push(t);
        departures.push(done);
        waits.push(start - t);
        sojourns.push(done - t);
        prev_departure = done;
    }

    let w0 = warmup as usize;
    let used = kept - kept % BATCHES;
    let batch = used / BATCHES;

    let mut wq_means = [0.0f64; BATCHES];
    let mut w_means = [0.0f64; BATCHES];
    for b in 0..BATCHES {
        let lo = w0 + b * batch;
        let hi = lo + batch;
        wq_means[b] = waits[lo..hi].iter().sum::<f64>() / batch as f64;
        w_means[b] = sojourns[lo..hi].iter().sum::<f64>() / batch as f64;
    }
    let wq_all = waits[w0..w0 + used].iter().sum::<f64>() / used as f64;
    let w_all = sojourns[w0..w0 + used].iter().sum::<f64>() / used as f64;

    // Time averages of system size and queue length over the window from the
    // first counted arrival to the last counted departure, split into equal
    // time batches.
    let t0 = arrivals[w0];
    let t1 = departures[w0 + used - 1];
    let span = t1 - t0;
    if !(span > 0.0) {
        return Err(QueueError::InvalidParams(
            "degenerate simulation window".into(),
        ));
    }
    let blen = span / BATCHES as f64;
    let mut l_area = [0.0f64; BATCHES];
    let mut lq_area = [0.0f64; BATCHES];

    let mut in_system = 0i64;
    let mut ia = 0usize;
    let mut id = 0usize;
    // Customers already present at t0 are counted by replaying all events
    // from time zero and only accumulating area past t0.
    let accumulate = |from: f64, to: f64, count: i64, l: &mut [f64], q: &mut [f64]| {
        let mut a = from.max(t0);
        let b = to.min(t1);
        while a < b {
            let bi = (((a - t0) / blen) as usize).min(BATCHES - 1);
            // Rounding can put the recomputed edge at or below `a` when `a`
            // sits exactly on a boundary; push one boundary further so the
            // segment always has positive width (the misattributed sliver is
            // at most an ulp of time).
            let mut edge = t0 + (bi + 1) as f64 * blen;
            if edge <= a {
                edge = t0 + (bi + 2) as f64 * blen;
            }
            let seg = b.min(edge);
            if seg <= a {
                break;
            }
            l[bi] += count as f64 * (seg - a);
            if count > 0 {
                q[bi] += (count - 1) as f64 * (seg - a);
            }
            a = seg;
        }
    };
    let total_events = arrivals.len() + departures.len();
    let mut prev_t = 0.0f64;
    for _ in 0..total_events {
        let next_arr = arrivals.get(ia).copied().unwrap_or(f64::INFINITY);
        let next_dep = departures.get(id).copied().unwrap_or(f64::INFINITY);
        let (et, delta) = if next_arr <= next_dep {
            ia += 1;
            (next_arr, 1)
        } else {
            id += 1;
            (next_dep, -1)
        };
        accumulate(prev_t, et, in_system, &mut l_area, &mut lq_area);
        in_system += delta;
        prev_t = et;
    }

    let l_means: Vec<f64> = l_area.iter().map(|a| a / blen).collect();
    let lq_means: Vec<f64> = lq_area.iter().map(|a| a / blen).collect();
    let l_all = l_area.iter().sum::<f64>() / span;
    let lq_all = lq_area.iter().sum::<f64>() / span;

    let samples = used as u64;
    let mut out = BTreeMap::new();
    let l_est = batch_estimate(&l_means, l_all, samples);
    let lq_est = batch_estimate(&lq_means, lq_all, samples);
    out.insert(MetricKind::Wq, batch_estimate(&wq_means, wq_all, samples));
    out.insert(MetricKind::W, batch_estimate(&w_means, w_all, samples));
    out.insert(MetricKind::L, l_est);
    out.insert(MetricKind::Lq, lq_est);
    out.insert(MetricKind::TW, l_est);
    out.insert(MetricKind::TWq, lq_est);
    Ok(out)
}
