//! Steady-state metrics of a single-server queue with Poisson arrivals and
//! general service times, in the moment form that only needs the service
//! mean 1/mu and standard deviation sigma.
//!
//! The four basic metrics are the expected number waiting (`lq`), number in
//! system (`l`), waiting time (`wq`), and sojourn time (`w`). The per-server
//! congestion measures used by the location model, [`MetricKind::TWq`] and
//! [`MetricKind::TW`], are by definition identical to `Lq` and `L`.

mod sim;

pub use sim::{simulate, ServiceDist, SimEstimate};

use serde::{Deserialize, Serialize};

/// Arrival rate, service rate, and service-time standard deviation of one
/// single-server queue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueParams {
    pub lambda: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl QueueParams {
    pub fn new(lambda: f64, mu: f64, sigma: f64) -> Result<Self, QueueError> {
        let p = QueueParams { lambda, mu, sigma };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<(), QueueError> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(QueueError::InvalidParams(format!(
                "arrival rate must be finite and nonnegative, got {}",
                self.lambda
            )));
        }
        if !self.mu.is_finite() || self.mu <= 0.0 {
            return Err(QueueError::InvalidParams(format!(
                "service rate must be finite and positive, got {}",
                self.mu
            )));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(QueueError::InvalidParams(format!(
                "service-time deviation must be finite and nonnegative, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    /// Server utilization lambda/mu.
    pub fn rho(&self) -> f64 {
        self.lambda / self.mu
    }

    fn check_stable(&self) -> Result<(), QueueError> {
        self.check()?;
        if self.lambda >= self.mu {
            return Err(QueueError::Unstable {
                lambda: self.lambda,
                mu: self.mu,
            });
        }
        Ok(())
    }
}

/// The six supported steady-state metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MetricKind {
    Lq,
    L,
    Wq,
    W,
    /// Per-server queue-length congestion measure; identical to `Lq`.
    TWq,
    /// Per-server system-size congestion measure; identical to `L`.
    TW,
}

impl MetricKind {
    pub const ALL: [MetricKind; 6] = [
        MetricKind::Lq,
        MetricKind::L,
        MetricKind::Wq,
        MetricKind::W,
        MetricKind::TWq,
        MetricKind::TW,
    ];
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MetricKind::Lq => "Lq",
            MetricKind::L => "L",
            MetricKind::Wq => "Wq",
            MetricKind::W => "W",
            MetricKind::TWq => "TWq",
            MetricKind::TW => "TW",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QueueError {
    #[error("invalid queue parameters: {0}")]
    InvalidParams(String),
    #[error("unstable queue: arrival rate {lambda} is not below service rate {mu}")]
    Unstable { lambda: f64, mu: f64 },
    #[error("invalid service distribution: {0}")]
    InvalidDistribution(String),
    #[error("simulation needs a positive arrival rate")]
    NoArrivals,
}

/// Expected number of customers waiting in queue.
pub fn lq(p: &QueueParams) -> Result<f64, QueueError> {
    p.check_stable()?;
    let rho = p.rho();
    let ls = p.lambda * p.sigma;
    Ok((rho * rho + ls * ls) / (2.0 * (1.0 - rho)))
}

/// Expected number of customers in the system: utilization plus `lq`.
pub fn l(p: &QueueParams) -> Result<f64, QueueError> {
    Ok(p.rho() + lq(p)?)
}

/// Expected time spent waiting in queue.
pub fn wq(p: &QueueParams) -> Result<f64, QueueError> {
    p.check_stable()?;
    let rho = p.rho();
    Ok((rho + p.lambda * p.mu * p.sigma * p.sigma) / (2.0 * (p.mu - p.lambda)))
}

/// Expected sojourn time: `wq` plus one mean service time.
pub fn w(p: &QueueParams) -> Result<f64, QueueError> {
    Ok(wq(p)? + 1.0 / p.mu)
}

/// Evaluate any of the six metrics.
pub fn metric(kind: MetricKind, p: &QueueParams) -> Result<f64, QueueError> {
    match kind {
        MetricKind::Lq | MetricKind::TWq => lq(p),
        MetricKind::L | MetricKind::TW => l(p),
        MetricKind::Wq => wq(p),
        MetricKind::W => w(p),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn p(lambda: f64, mu: f64, sigma: f64) -> QueueParams {
        QueueParams::new(lambda, mu, sigma).unwrap()
    }

    #[test]
    fn frozen_midrange_point() {
        let q = p(1.0, 2.0, 0.5);
        assert_eq!(lq(&q).unwrap(), 0.5);
        assert_eq!(l(&q).unwrap(), 1.0);
        assert_eq!(wq(&q).unwrap(), 0.5);
        assert_eq!(w(&q).unwrap(), 1.0);
    }

    #[test]
    fn frozen_idle_point() {
        let q = p(0.0, 2.0, 0.5);
        assert_eq!(lq(&q).unwrap(), 0.0);
        assert_eq!(l(&q).unwrap(), 0.0);
        assert_eq!(wq(&q).unwrap(), 0.0);
        assert_eq!(w(&q).unwrap(), 0.5);
    }

    #[test]
    fn frozen_deterministic_service_point() {
        let q = p(1.0, 2.0, 0.0);
        assert_eq!(lq(&q).unwrap(), 0.25);
        assert_eq!(l(&q).unwrap(), 0.75);
        assert_eq!(wq(&q).unwrap(), 0.25);
        assert_eq!(w(&q).unwrap(), 0.75);
    }

    #[test]
    fn unstable_rejected() {
        for (lam, mu) in [(2.0, 2.0), (3.0, 2.0)] {
            let q = p(lam, mu, 0.1);
            assert_eq!(
                lq(&q),
                Err(QueueError::Unstable { lambda: lam, mu })
            );
            assert!(w(&q).is_err());
        }
    }

    #[test]
    fn bad_params_rejected() {
        assert!(QueueParams::new(-1.0, 2.0, 0.0).is_err());
        assert!(QueueParams::new(1.0, 0.0, 0.0).is_err());
        assert!(QueueParams::new(1.0, 2.0, -0.5).is_err());
        assert!(QueueParams::new(f64::NAN, 2.0, 0.0).is_err());
    }

    #[test]
    fn exponential_service_closed_forms() {
        // With sigma = 1/mu the metrics collapse to the classical
        // utilization-only expressions.
        for (lam, mu) in [(0.2, 1.0), (1.0, 2.0), (3.0, 4.0), (9.0, 10.0)] {
            let q = p(lam, mu, 1.0 / mu);
            let rho: f64 = lam / mu;
            assert!((lq(&q).unwrap() - rho * rho / (1.0 - rho)).abs() < 1e-14);
            assert!((l(&q).unwrap() - rho / (1.0 - rho)).abs() < 1e-14);
            assert!((wq(&q).unwrap() - rho / (mu - lam)).abs() < 1e-14);
            assert!((w(&q).unwrap() - 1.0 / (mu - lam)).abs() < 1e-14);
        }
    }

    #[test]
    fn littles_law_and_decomposition_sampled() {
        let mut r = SplitMix64::new(20240);
        for _ in 0..10_000 {
            let mu = r.uniform(0.1, 20.0);
            let lam = mu * r.uniform(0.0, 0.999);
            let sigma = r.uniform(0.0, 3.0) / mu;
            let q = p(lam, mu, sigma);
            let (lq_v, l_v) = (lq(&q).unwrap(), l(&q).unwrap());
            let (wq_v, w_v) = (wq(&q).unwrap(), w(&q).unwrap());
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
            if lam > 0.0 && lq_v > 1e-300 {
                assert!(rel(l_v, lam * w_v) < 1e-12, "L = lambda W violated");
                assert!(rel(lq_v, lam * wq_v) < 1e-12, "Lq = lambda Wq violated");
            }
            // Exact decompositions, not merely approximate.
            assert_eq!(l_v, q.rho() + lq_v);
            assert_eq!(w_v, wq_v + 1.0 / mu);
        }
    }

    #[test]
    fn monotone_in_arrival_rate() {
        let mu = 3.0;
        let sigma = 0.4;
        let mut prev = -1.0;
        for i in 0..50 {
            let lam = mu * (i as f64) / 50.0 * 0.99;
            let v = lq(&p(lam, mu, sigma)).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn blows_up_approaching_saturation() {
        let mu = 2.0;
        let v = lq(&p(mu * (1.0 - 1e-9), mu, 0.5)).unwrap();
        assert!(v > 1e7);
    }

    #[test]
    fn congestion_aliases() {
        let q = p(1.3, 2.7, 0.21);
        assert_eq!(
            metric(MetricKind::TW, &q).unwrap(),
            metric(MetricKind::L, &q).unwrap()
        );
        assert_eq!(
            metric(MetricKind::TWq, &q).unwrap(),
            metric(MetricKind::Lq, &q).unwrap()
        );
    }
}
