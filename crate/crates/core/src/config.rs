//! Experiment configuration: TOML parsing, strict validation, defaults, and
//! a config echo that reproduces the run when fed back.
//!
//! Unknown keys are hard errors. Cross-field rules are enforced before any
//! work starts (for example `algorithm.epsilon` is only legal for
//! `ota-ffl`). The resolved config serializes back to the same schema via
//! [`ExperimentConfig::to_raw`], so `summary.json`'s embedded echo can be
//! re-run verbatim.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fedsim::{AlgorithmSpec, ChannelConfig, FadingLaw, NoiseMode, SchedulerSpec};

/// Default box radius for the fair weighting.
pub const DEFAULT_EPSILON: f64 = 0.3;
/// Default number of communication rounds.
pub const DEFAULT_ROUNDS: usize = 100;
/// Default transmit power budget.
pub const DEFAULT_POWER_BUDGET: f64 = 1.0;
/// Default global learning rate.
pub const DEFAULT_ETA: f64 = 0.1;

fn default_sigma_values() -> Vec<f64> {
    (1..=10).map(|i| 0.1 * i as f64).collect()
}

/// On-disk configuration schema. Every field is optional; resolution fills
/// documented defaults and rejects cross-field contradictions.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    #[serde(default)]
    pub algorithm: RawAlgorithm,
    #[serde(default)]
    pub scheduler: RawScheduler,
    #[serde(default)]
    pub dataset: RawDataset,
    #[serde(default)]
    pub model: RawModel,
    #[serde(default)]
    pub local: RawLocal,
    #[serde(default)]
    pub channel: RawChannel,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawAlgorithm {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_base: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawScheduler {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gibbs_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gibbs_temp0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gibbs_cooling: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gibbs_mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gibbs_grad_proxy: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDataset {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clients: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples_per_client: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skew: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dirichlet_beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_per_client: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawModel {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawLocal {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawChannel {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power_budget: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_values: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fading: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gains: Option<Vec<f64>>,
}

/// Where the training data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Synthetic {
        clients: usize,
        samples_per_client: usize,
        features: usize,
        classes: usize,
        skew: f64,
    },
    Idx {
        images: String,
        labels: String,
        clients: usize,
        dirichlet_beta: f64,
        min_per_client: usize,
    },
}

impl DatasetSpec {
    pub fn num_clients(&self) -> usize {
        match self {
            DatasetSpec::Synthetic { clients, .. } => *clients,
            DatasetSpec::Idx { clients, .. } => *clients,
        }
    }
}

/// Which model to train.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: String,
    pub hidden: Vec<usize>,
}

/// Local-training settings shared by all clients.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSpec {
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
}

/// A fully validated configuration with every default resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub rounds: usize,
    pub eta: f64,
    pub out_dir: Option<String>,
    pub algorithm: AlgorithmSpec,
    pub scheduler: SchedulerSpec,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub local: LocalSpec,
    pub channel: ChannelConfig,
}

fn forbid<T>(value: &Option<T>, key: &str, reason: &str) -> Result<()> {
    if value.is_some() {
        return Err(Error::Config(format!("`{key}` is not allowed {reason}")));
    }
    Ok(())
}

fn require<T: Clone>(value: &Option<T>, key: &str, reason: &str) -> Result<T> {
    value
        .clone()
        .ok_or_else(|| Error::Config(format!("`{key}` is required {reason}")))
}

fn check_positive(value: f64, key: &str) -> Result<f64> {
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::Config(format!("`{key}` must be positive, got {value}")));
    }
    Ok(value)
}

fn resolve_algorithm(raw: &RawAlgorithm, num_clients: usize) -> Result<AlgorithmSpec> {
    let kind = raw
        .kind
        .as_deref()
        .unwrap_or("ota-ffl")
        .to_ascii_lowercase();
    match kind.as_str() {
        "ota-ffl" => {
            forbid(&raw.gamma, "algorithm.gamma", "for algorithm `ota-ffl`")?;
            forbid(&raw.q_base, "algorithm.q_base", "for algorithm `ota-ffl`")?;
            let epsilon = raw.epsilon.unwrap_or(DEFAULT_EPSILON);
            if !(0.0..=1.0).contains(&epsilon) {
                return Err(Error::Config(format!(
                    "`algorithm.epsilon` must be in [0, 1], got {epsilon}"
                )));
            }
            let zeta = raw.zeta.clone().unwrap_or_default();
            if !zeta.is_empty() && zeta.len() != num_clients {
                return Err(Error::Config(format!(
                    "`algorithm.zeta` has {} entries but the experiment has {num_clients} clients",
                    zeta.len()
                )));
            }
            if zeta.iter().any(|z| !z.is_finite()) {
                return Err(Error::Config("`algorithm.zeta` has non-finite entries".into()));
            }
            Ok(AlgorithmSpec::Ffl { epsilon, zeta })
        }
        "ota-fedavg" => {
            forbid(&raw.epsilon, "algorithm.epsilon", "for algorithm `ota-fedavg`")?;
            forbid(&raw.zeta, "algorithm.zeta", "for algorithm `ota-fedavg`")?;
            forbid(&raw.gamma, "algorithm.gamma", "for algorithm `ota-fedavg`")?;
            forbid(&raw.q_base, "algorithm.q_base", "for algorithm `ota-fedavg`")?;
            Ok(AlgorithmSpec::FedAvg)
        }
        "ota-term" => {
            forbid(&raw.epsilon, "algorithm.epsilon", "for algorithm `ota-term`")?;
            forbid(&raw.zeta, "algorithm.zeta", "for algorithm `ota-term`")?;
            forbid(&raw.q_base, "algorithm.q_base", "for algorithm `ota-term`")?;
            let gamma = require(&raw.gamma, "algorithm.gamma", "for algorithm `ota-term`")?;
            Ok(AlgorithmSpec::Term { gamma })
        }
        "ota-qffl" | "ota-q-ffl" => {
            forbid(&raw.epsilon, "algorithm.epsilon", "for algorithm `ota-qffl`")?;
            forbid(&raw.zeta, "algorithm.zeta", "for algorithm `ota-qffl`")?;
            let gamma = require(&raw.gamma, "algorithm.gamma", "for algorithm `ota-qffl`")?;
            let q_base = require(&raw.q_base, "algorithm.q_base", "for algorithm `ota-qffl`")?;
            check_positive(q_base, "algorithm.q_base")?;
            Ok(AlgorithmSpec::QFfl { gamma, q_base })
        }
        other => Err(Error::Config(format!(
            "unknown `algorithm.kind` `{other}`; available: {}",
            crate::fedsim::algorithm_names().join(", ")
        ))),
    }
}

fn resolve_scheduler(raw: &RawScheduler, num_clients: usize) -> Result<SchedulerSpec> {
    let kind = raw.kind.as_deref().unwrap_or("full").to_ascii_lowercase();
    let forbid_gibbs_knobs = |reason: &str| -> Result<()> {
        forbid(&raw.gibbs_iters, "scheduler.gibbs_iters", reason)?;
        forbid(&raw.gibbs_temp0, "scheduler.gibbs_temp0", reason)?;
        forbid(&raw.gibbs_cooling, "scheduler.gibbs_cooling", reason)?;
        forbid(&raw.gibbs_mu, "scheduler.gibbs_mu", reason)?;
        forbid(&raw.gibbs_grad_proxy, "scheduler.gibbs_grad_proxy", reason)
    };
    let check_target = |target: usize| -> Result<usize> {
        if target == 0 || target > num_clients {
            return Err(Error::Config(format!(
                "`scheduler.target_size` must be in [1, {num_clients}], got {target}"
            )));
        }
        Ok(target)
    };
    match kind.as_str() {
        "full" => {
            forbid(&raw.target_size, "scheduler.target_size", "for scheduler `full`")?;
            forbid_gibbs_knobs("for scheduler `full`")?;
            Ok(SchedulerSpec::Full)
        }
        "channel-topk" => {
            forbid_gibbs_knobs("for scheduler `channel-topk`")?;
            let target = require(
                &raw.target_size,
                "scheduler.target_size",
                "for scheduler `channel-topk`",
            )?;
            Ok(SchedulerSpec::ChannelTopK {
                target_size: check_target(target)?,
            })
        }
        "gibbs" => {
            let target = require(
                &raw.target_size,
                "scheduler.target_size",
                "for scheduler `gibbs`",
            )?;
            Ok(SchedulerSpec::Gibbs {
                target_size: check_target(target)?,
                iters: raw.gibbs_iters.unwrap_or(200),
                temp0: check_positive(raw.gibbs_temp0.unwrap_or(1.0), "scheduler.gibbs_temp0")?,
                cooling: raw.gibbs_cooling.unwrap_or(0.97),
                mu: raw.gibbs_mu.unwrap_or(1.0),
                grad_norm_proxy: raw.gibbs_grad_proxy.unwrap_or(1.0),
            })
        }
        other => Err(Error::Config(format!(
            "unknown `scheduler.kind` `{other}`; available: {}",
            crate::fedsim::scheduler_names().join(", ")
        ))),
    }
}

fn resolve_dataset(raw: &RawDataset) -> Result<DatasetSpec> {
    let kind = raw.kind.as_deref().unwrap_or("synthetic").to_ascii_lowercase();
    match kind.as_str() {
        "synthetic" => {
            forbid(&raw.images, "dataset.images", "for dataset `synthetic`")?;
            forbid(&raw.labels, "dataset.labels", "for dataset `synthetic`")?;
            forbid(&raw.dirichlet_beta, "dataset.dirichlet_beta", "for dataset `synthetic`")?;
            forbid(&raw.min_per_client, "dataset.min_per_client", "for dataset `synthetic`")?;
            let clients = raw.clients.unwrap_or(10);
            if clients == 0 || clients > 128 {
                return Err(Error::Config(format!(
                    "`dataset.clients` must be in [1, 128], got {clients}"
                )));
            }
            Ok(DatasetSpec::Synthetic {
                clients,
                samples_per_client: raw.samples_per_client.unwrap_or(40).max(1),
                features: raw.features.unwrap_or(5).max(1),
                classes: raw.classes.unwrap_or(3).max(1),
                skew: {
                    let skew = raw.skew.unwrap_or(1.0);
                    if !(skew.is_finite() && skew >= 0.0) {
                        return Err(Error::Config(format!(
                            "`dataset.skew` must be non-negative, got {skew}"
                        )));
                    }
                    skew
                },
            })
        }
        "idx" => {
            forbid(&raw.samples_per_client, "dataset.samples_per_client", "for dataset `idx`")?;
            forbid(&raw.features, "dataset.features", "for dataset `idx`")?;
            forbid(&raw.classes, "dataset.classes", "for dataset `idx`")?;
            forbid(&raw.skew, "dataset.skew", "for dataset `idx`")?;
            let clients = raw.clients.unwrap_or(10);
            if clients == 0 || clients > 128 {
                return Err(Error::Config(format!(
                    "`dataset.clients` must be in [1, 128], got {clients}"
                )));
            }
            Ok(DatasetSpec::Idx {
                images: require(&raw.images, "dataset.images", "for dataset `idx`")?,
                labels: require(&raw.labels, "dataset.labels", "for dataset `idx`")?,
                clients,
                dirichlet_beta: check_positive(
                    raw.dirichlet_beta.unwrap_or(0.5),
                    "dataset.dirichlet_beta",
                )?,
                min_per_client: raw.min_per_client.unwrap_or(1).max(1),
            })
        }
        other => Err(Error::Config(format!(
            "unknown `dataset.kind` `{other}`; available: synthetic, idx"
        ))),
    }
}

fn resolve_model(raw: &RawModel) -> Result<ModelSpec> {
    let kind = raw.kind.as_deref().unwrap_or("logistic").to_ascii_lowercase();
    if !crate::models::model_names().contains(&kind.as_str()) {
        return Err(Error::Config(format!(
            "unknown `model.kind` `{kind}`; available: {}",
            crate::models::model_names().join(", ")
        )));
    }
    let hidden = if kind == "mlp" {
        let hidden = raw.hidden.clone().unwrap_or_else(|| vec![16, 16]);
        if hidden.len() != 2 || hidden.contains(&0) {
            return Err(Error::Config(format!(
                "`model.hidden` must list exactly two positive sizes, got {hidden:?}"
            )));
        }
        hidden
    } else {
        forbid(&raw.hidden, "model.hidden", &format!("for model `{kind}`"))?;
        Vec::new()
    };
    Ok(ModelSpec { kind, hidden })
}

fn resolve_local(raw: &RawLocal) -> Result<LocalSpec> {
    let lr = check_positive(raw.lr.unwrap_or(0.1), "local.lr")?;
    let steps = raw.steps.unwrap_or(1);
    if steps == 0 {
        return Err(Error::Config("`local.steps` must be at least one".into()));
    }
    Ok(LocalSpec {
        lr,
        steps,
        batch_size: raw.batch_size.unwrap_or(0),
    })
}

fn resolve_channel(raw: &RawChannel, num_clients: usize) -> Result<ChannelConfig> {
    let power_budget = check_positive(
        raw.power_budget.unwrap_or(DEFAULT_POWER_BUDGET),
        "channel.power_budget",
    )?;
    let sigma_mode = raw.sigma_mode.as_deref().unwrap_or("cycle").to_ascii_lowercase();
    let check_values = |values: &[f64], key: &str| -> Result<()> {
        if values.is_empty() {
            return Err(Error::Config(format!("`{key}` must not be empty")));
        }
        if values.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config(format!("`{key}` entries must be non-negative")));
        }
        Ok(())
    };
    let noise = match sigma_mode.as_str() {
        "fixed" => {
            forbid(&raw.sigma_values, "channel.sigma_values", "for sigma_mode `fixed`")?;
            let sigma = require(&raw.sigma, "channel.sigma", "for sigma_mode `fixed`")?;
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(Error::Config(format!(
                    "`channel.sigma` must be non-negative, got {sigma}"
                )));
            }
            NoiseMode::Fixed(sigma)
        }
        "cycle" => {
            forbid(&raw.sigma, "channel.sigma", "for sigma_mode `cycle`")?;
            let values = raw.sigma_values.clone().unwrap_or_else(default_sigma_values);
            check_values(&values, "channel.sigma_values")?;
            NoiseMode::Cycle(values)
        }
        "per-link" => {
            forbid(&raw.sigma, "channel.sigma", "for sigma_mode `per-link`")?;
            let values = raw.sigma_values.clone().unwrap_or_else(default_sigma_values);
            check_values(&values, "channel.sigma_values")?;
            NoiseMode::PerLink(values)
        }
        other => {
            return Err(Error::Config(format!(
                "unknown `channel.sigma_mode` `{other}`; available: fixed, cycle, per-link"
            )))
        }
    };
    let fading_kind = raw.fading.as_deref().unwrap_or("rayleigh").to_ascii_lowercase();
    let fading = match fading_kind.as_str() {
        "rayleigh" => {
            forbid(&raw.gains, "channel.gains", "for fading `rayleigh`")?;
            FadingLaw::Rayleigh
        }
        "fixed-gains" => {
            let gains = require(&raw.gains, "channel.gains", "for fading `fixed-gains`")?;
            if gains.len() != num_clients {
                return Err(Error::Config(format!(
                    "`channel.gains` has {} entries but the experiment has {num_clients} clients",
                    gains.len()
                )));
            }
            FadingLaw::FixedGains(gains)
        }
        "per-client-constant" => {
            forbid(&raw.gains, "channel.gains", "for fading `per-client-constant`")?;
            FadingLaw::PerClientConstant
        }
        other => {
            return Err(Error::Config(format!(
                "unknown `channel.fading` `{other}`; available: rayleigh, fixed-gains, per-client-constant"
            )))
        }
    };
    Ok(ChannelConfig {
        power_budget,
        noise,
        fading,
    })
}

/// Resolve and validate a raw configuration.
pub fn resolve(raw: &RawConfig) -> Result<ExperimentConfig> {
    let dataset = resolve_dataset(&raw.dataset)?;
    let num_clients = dataset.num_clients();
    Ok(ExperimentConfig {
        seed: raw.seed.unwrap_or(1),
        rounds: raw.rounds.unwrap_or(DEFAULT_ROUNDS),
        eta: check_positive(raw.eta.unwrap_or(DEFAULT_ETA), "eta")?,
        out_dir: raw.out_dir.clone(),
        algorithm: resolve_algorithm(&raw.algorithm, num_clients)?,
        scheduler: resolve_scheduler(&raw.scheduler, num_clients)?,
        dataset,
        model: resolve_model(&raw.model)?,
        local: resolve_local(&raw.local)?,
        channel: resolve_channel(&raw.channel, num_clients)?,
    })
}

/// Parse a TOML string into a validated configuration.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    resolve(&raw)
}

/// Read and parse a configuration file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_config_str(&text)
}

impl ExperimentConfig {
    /// Serialize back into the on-disk schema with every default explicit.
    pub fn to_raw(&self) -> RawConfig {
        let algorithm = match &self.algorithm {
            AlgorithmSpec::Ffl { epsilon, zeta } => RawAlgorithm {
                kind: Some("ota-ffl".into()),
                epsilon: Some(*epsilon),
                zeta: if zeta.is_empty() { None } else { Some(zeta.clone()) },
                ..Default::default()
            },
            AlgorithmSpec::FedAvg => RawAlgorithm {
                kind: Some("ota-fedavg".into()),
                ..Default::default()
            },
            AlgorithmSpec::Term { gamma } => RawAlgorithm {
                kind: Some("ota-term".into()),
                gamma: Some(*gamma),
                ..Default::default()
            },
            AlgorithmSpec::QFfl { gamma, q_base } => RawAlgorithm {
                kind: Some("ota-qffl".into()),
                gamma: Some(*gamma),
                q_base: Some(*q_base),
                ..Default::default()
            },
        };
        let scheduler = match &self.scheduler {
            SchedulerSpec::Full => RawScheduler {
                kind: Some("full".into()),
                ..Default::default()
            },
            SchedulerSpec::ChannelTopK { target_size } => RawScheduler {
                kind: Some("channel-topk".into()),
                target_size: Some(*target_size),
                ..Default::default()
            },
            SchedulerSpec::Gibbs {
                target_size,
                iters,
                temp0,
                cooling,
                mu,
                grad_norm_proxy,
            } => RawScheduler {
                kind: Some("gibbs".into()),
                target_size: Some(*target_size),
                gibbs_iters: Some(*iters),
                gibbs_temp0: Some(*temp0),
                gibbs_cooling: Some(*cooling),
                gibbs_mu: Some(*mu),
                gibbs_grad_proxy: Some(*grad_norm_proxy),
            },
        };
        let dataset = match &self.dataset {
            DatasetSpec::Synthetic {
                clients,
                samples_per_client,
                features,
                classes,
                skew,
            } => RawDataset {
                kind: Some("synthetic".into()),
                clients: Some(*clients),
                samples_per_client: Some(*samples_per_client),
                features: Some(*features),
                classes: Some(*classes),
                skew: Some(*skew),
                ..Default::default()
            },
            DatasetSpec::Idx {
                images,
                labels,
                clients,
                dirichlet_beta,
                min_per_client,
            } => RawDataset {
                kind: Some("idx".into()),
                clients: Some(*clients),
                images: Some(images.clone()),
                labels: Some(labels.clone()),
                dirichlet_beta: Some(*dirichlet_beta),
                min_per_client: Some(*min_per_client),
                ..Default::default()
            },
        };
        let model = RawModel {
            kind: Some(self.model.kind.clone()),
            hidden: if self.model.hidden.is_empty() {
                None
            } else {
                Some(self.model.hidden.clone())
            },
        };
        let local = RawLocal {
            lr: Some(self.local.lr),
            steps: Some(self.local.steps),
            batch_size: Some(self.local.batch_size),
        };
        let channel = {
            let (sigma_mode, sigma, sigma_values) = match &self.channel.noise {
                NoiseMode::Fixed(s) => ("fixed", Some(*s), None),
                NoiseMode::Cycle(v) => ("cycle", None, Some(v.clone())),
                NoiseMode::PerLink(v) => ("per-link", None, Some(v.clone())),
            };
            let (fading, gains) = match &self.channel.fading {
                FadingLaw::Rayleigh => ("rayleigh", None),
                FadingLaw::FixedGains(g) => ("fixed-gains", Some(g.clone())),
                FadingLaw::PerClientConstant => ("per-client-constant", None),
            };
            RawChannel {
                power_budget: Some(self.channel.power_budget),
                sigma_mode: Some(sigma_mode.into()),
                sigma,
                sigma_values,
                fading: Some(fading.into()),
                gains,
            }
        };
        RawConfig {
            seed: Some(self.seed),
            rounds: Some(self.rounds),
            eta: Some(self.eta),
            out_dir: self.out_dir.clone(),
            algorithm,
            scheduler,
            dataset,
            model,
            local,
            channel,
        }
    }

    /// The resolved config as a JSON value, for embedding in reports.
    pub fn echo_json(&self) -> Result<serde_json::Value> {
        serde_json::to_value(self.to_raw())
            .map_err(|e| Error::Config(format!("config echo failed: {e}")))
    }

    /// The resolved config as a TOML document that re-parses to `self`.
    pub fn echo_toml(&self) -> Result<String> {
        toml::to_string(&self.to_raw()).map_err(|e| Error::Config(format!("config echo failed: {e}")))
    }
}

/// Command-line overrides applied on top of a raw config before resolution.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<String>,
    pub epsilon: Option<f64>,
    pub rounds: Option<usize>,
    pub algorithm: Option<String>,
}

/// Apply overrides; flags win over file values.
pub fn apply_overrides(raw: &mut RawConfig, overrides: &Overrides) {
    if let Some(seed) = overrides.seed {
        raw.seed = Some(seed);
    }
    if let Some(out) = &overrides.out_dir {
        raw.out_dir = Some(out.clone());
    }
    if let Some(epsilon) = overrides.epsilon {
        raw.algorithm.epsilon = Some(epsilon);
    }
    if let Some(rounds) = overrides.rounds {
        raw.rounds = Some(rounds);
    }
    if let Some(algorithm) = &overrides.algorithm {
        raw.algorithm.kind = Some(algorithm.clone());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_resolves_to_documented_defaults() {
        let config = parse_config_str("").unwrap();
        assert_eq!(config.rounds, 100);
        assert_eq!(config.eta, 0.1);
        assert_eq!(config.seed, 1);
        assert_eq!(config.channel.power_budget, 1.0);
        match &config.algorithm {
            AlgorithmSpec::Ffl { epsilon, zeta } => {
                assert_eq!(*epsilon, 0.3);
                assert!(zeta.is_empty());
            }
            other => panic!("default algorithm should be ota-ffl, got {other:?}"),
        }
        assert_eq!(config.scheduler, SchedulerSpec::Full);
        assert_eq!(config.model.kind, "logistic");
        match &config.channel.noise {
            NoiseMode::Cycle(values) => {
                assert_eq!(values.len(), 10);
                assert!((values[0] - 0.1).abs() < 1e-12);
                assert!((values[9] - 1.0).abs() < 1e-12);
            }
            other => panic!("default noise should cycle, got {other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_named_in_the_error() {
        let err = parse_config_str("[algorithm]\nepsilonn = 0.3\n").unwrap_err();
        let message = err.to_string();
        assert!(message.contains("epsilonn"), "error does not name the key: {message}");
    }

    #[test]
    fn epsilon_with_fedavg_is_a_cross_field_error() {
        let err = parse_config_str("[algorithm]\nkind = \"ota-fedavg\"\nepsilon = 0.3\n").unwrap_err();
        let message = err.to_string();
        assert!(message.contains("algorithm.epsilon"), "{message}");
    }

    #[test]
    fn term_requires_gamma() {
        let err = parse_config_str("[algorithm]\nkind = \"ota-term\"\n").unwrap_err();
        assert!(err.to_string().contains("algorithm.gamma"));
        let ok = parse_config_str("[algorithm]\nkind = \"ota-term\"\ngamma = 2.0\n").unwrap();
        assert_eq!(ok.algorithm, AlgorithmSpec::Term { gamma: 2.0 });
    }

    #[test]
    fn qffl_requires_positive_base() {
        let err = parse_config_str(
            "[algorithm]\nkind = \"ota-qffl\"\ngamma = 1.0\nq_base = -1.0\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("algorithm.q_base"));
    }

    #[test]
    fn scheduler_target_must_fit_client_count() {
        let err = parse_config_str(
            "[scheduler]\nkind = \"gibbs\"\ntarget_size = 11\n[dataset]\nclients = 10\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("target_size"));
    }

    #[test]
    fn full_scheduler_rejects_target_size() {
        let err = parse_config_str("[scheduler]\ntarget_size = 3\n").unwrap_err();
        assert!(err.to_string().contains("scheduler.target_size"));
    }

    #[test]
    fn fixed_gains_must_match_client_count() {
        let err = parse_config_str(
            "[channel]\nfading = \"fixed-gains\"\ngains = [1.0, 0.5]\n[dataset]\nclients = 3\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("channel.gains"));
    }

    #[test]
    fn echo_round_trips_exactly() {
        let text = r#"
seed = 9
rounds = 25
eta = 0.05
[algorithm]
kind = "ota-ffl"
epsilon = 0.4
[scheduler]
kind = "gibbs"
target_size = 4
[dataset]
clients = 6
samples_per_client = 12
[model]
kind = "mlp"
hidden = [8, 4]
[channel]
sigma_mode = "fixed"
sigma = 0.2
"#;
        let config = parse_config_str(text).unwrap();
        let echoed = config.echo_toml().unwrap();
        let reparsed = parse_config_str(&echoed).unwrap();
        assert_eq!(config, reparsed);
    }

    #[test]
    fn overrides_win_over_file_values() {
        let mut raw: RawConfig = toml::from_str("seed = 1\nrounds = 10\n").unwrap();
        apply_overrides(
            &mut raw,
            &Overrides {
                seed: Some(5),
                rounds: Some(3),
                epsilon: Some(0.7),
                out_dir: Some("elsewhere".into()),
                algorithm: None,
            },
        );
        let config = resolve(&raw).unwrap();
        assert_eq!(config.seed, 5);
        assert_eq!(config.rounds, 3);
        assert_eq!(config.out_dir.as_deref(), Some("elsewhere"));
        assert_eq!(
            config.algorithm,
            AlgorithmSpec::Ffl {
                epsilon: 0.7,
                zeta: vec![]
            }
        );
    }

    #[test]
    fn epsilon_override_on_fedavg_still_fails_validation() {
        let mut raw: RawConfig = toml::from_str("[algorithm]\nkind = \"ota-fedavg\"\n").unwrap();
        apply_overrides(
            &mut raw,
            &Overrides {
                epsilon: Some(0.3),
                ..Default::default()
            },
        );
        assert!(resolve(&raw).is_err());
    }

    #[test]
    fn hidden_sizes_only_for_mlp() {
        let err = parse_config_str("[model]\nkind = \"logistic\"\nhidden = [4, 4]\n").unwrap_err();
        assert!(err.to_string().contains("model.hidden"));
        let err = parse_config_str("[model]\nkind = \"mlp\"\nhidden = [4]\n").unwrap_err();
        assert!(err.to_string().contains("model.hidden"));
    }
}
