//! Aggregation-weight strategies, registered by name.
//!
//! Every algorithm decides the per-round client weights from the reported
//! losses and optionally transforms each client's loss and gradient before
//! transmission. `ota-ffl` solves the box-constrained Chebyshev inner
//! maximization; the baselines keep size-proportional weights.

use crate::error::{Error, Result};
use crate::moo::{solve_inner_weights, ChebyshevConfig, ObjectiveVector, WeightVector};

/// Parameters selecting and configuring an aggregation algorithm.
#[derive(Debug, Clone, PartialEq)]
pub enum AlgorithmSpec {
    /// Adaptive fair weighting within an infinity-norm box around the
    /// size-proportional weights.
    Ffl { epsilon: f64, zeta: Vec<f64> },
    /// Static size-proportional weighting.
    FedAvg,
    /// Size-proportional weighting on exponentially tilted losses.
    Term { gamma: f64 },
    /// Size-proportional weighting on power-tilted losses.
    QFfl { gamma: f64, q_base: f64 },
}

impl AlgorithmSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            AlgorithmSpec::Ffl { .. } => "ota-ffl",
            AlgorithmSpec::FedAvg => "ota-fedavg",
            AlgorithmSpec::Term { .. } => "ota-term",
            AlgorithmSpec::QFfl { .. } => "ota-qffl",
        }
    }
}

/// A per-round weighting and loss-transform strategy.
pub trait Algorithm: Send + Sync {
    fn name(&self) -> &'static str;
    /// Aggregation weights over all clients for this round.
    fn round_weights(&self, losses: &[f64], fedavg: &WeightVector) -> Result<WeightVector>;
    /// Transformed loss actually optimized for a client with raw loss `f`.
    fn transform_loss(&self, f: f64) -> f64 {
        f
    }
    /// Chain factor scaling the raw gradient under the loss transform.
    fn gradient_factor(&self, f: f64) -> f64 {
        let _ = f;
        1.0
    }
}

/// Registered algorithm names, in registry order.
pub fn algorithm_names() -> &'static [&'static str] {
    &["ota-ffl", "ota-fedavg", "ota-term", "ota-qffl"]
}

/// Build an algorithm from its spec.
pub fn build_algorithm(spec: &AlgorithmSpec) -> Result<Box<dyn Algorithm>> {
    match spec {
        AlgorithmSpec::Ffl { epsilon, zeta } => Ok(Box::new(FflAlgorithm {
            epsilon: *epsilon,
            zeta: zeta.clone(),
        })),
        AlgorithmSpec::FedAvg => Ok(Box::new(FedAvgAlgorithm)),
        AlgorithmSpec::Term { gamma } => {
            if !gamma.is_finite() {
                return Err(Error::InvalidInput("term gamma must be finite".into()));
            }
            Ok(Box::new(TermAlgorithm { gamma: *gamma }))
        }
        AlgorithmSpec::QFfl { gamma, q_base } => {
            if !(q_base.is_finite() && *q_base > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "q_base must be positive, got {q_base}"
                )));
            }
            if !gamma.is_finite() {
                return Err(Error::InvalidInput("qffl gamma must be finite".into()));
            }
            Ok(Box::new(QFflAlgorithm {
                gamma: *gamma,
                log_q: q_base.ln(),
            }))
        }
    }
}

struct FflAlgorithm {
    epsilon: f64,
    zeta: Vec<f64>,
}

impl Algorithm for FflAlgorithm {
    fn name(&self) -> &'static str {
        "ota-ffl"
    }

    fn round_weights(&self, losses: &[f64], fedavg: &WeightVector) -> Result<WeightVector> {
        let objectives = ObjectiveVector::new(losses.to_vec())?;
        let zeta = if self.zeta.is_empty() {
            vec![0.0; fedavg.len()]
        } else {
            self.zeta.clone()
        };
        let cfg = ChebyshevConfig::new(self.epsilon, zeta, fedavg.clone())?;
        solve_inner_weights(&objectives, &cfg)
    }
}

struct FedAvgAlgorithm;

impl Algorithm for FedAvgAlgorithm {
    fn name(&self) -> &'static str {
        "ota-fedavg"
    }

    fn round_weights(&self, _losses: &[f64], fedavg: &WeightVector) -> Result<WeightVector> {
        Ok(fedavg.clone())
    }
}

struct TermAlgorithm {
    gamma: f64,
}

impl Algorithm for TermAlgorithm {
    fn name(&self) -> &'static str {
        "ota-term"
    }

    fn round_weights(&self, _losses: &[f64], fedavg: &WeightVector) -> Result<WeightVector> {
        Ok(fedavg.clone())
    }

    fn transform_loss(&self, f: f64) -> f64 {
        (self.gamma * f).exp()
    }

    fn gradient_factor(&self, f: f64) -> f64 {
        self.gamma * (self.gamma * f).exp()
    }
}

struct QFflAlgorithm {
    gamma: f64,
    log_q: f64,
}

impl Algorithm for QFflAlgorithm {
    fn name(&self) -> &'static str {
        "ota-qffl"
    }

    fn round_weights(&self, _losses: &[f64], fedavg: &WeightVector) -> Result<WeightVector> {
        Ok(fedavg.clone())
    }

    fn transform_loss(&self, f: f64) -> f64 {
        (self.gamma * f * self.log_q).exp()
    }

    fn gradient_factor(&self, f: f64) -> f64 {
        self.gamma * self.log_q * self.transform_loss(f)
    }
}
