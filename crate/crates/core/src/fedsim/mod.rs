//! The federated training engine: per-client local training, the two-tier
//! round loop (loss reporting, adaptive weighting, scheduling, analog
//! aggregation, global update), and whole-experiment orchestration.

pub mod algorithm;
pub mod scheduler;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{DatasetSpec, ExperimentConfig};
use crate::datasets::{dirichlet_partition, load_idx, synth_heterogeneous, LabeledDataset, PartitionSpec};
use crate::error::{Error, Result};
use crate::metrics::{summarize, EvalSummary, RoundRecord};
use crate::models::{build_model, Model};
use crate::moo::{compute_lambda_avg, WeightVector};
use crate::ota::{
    aggregate_stats, decode, normalize_gradient, optimal_plan, transmit_and_receive,
    ChannelRealization, NormalizationStats,
};
use crate::rng::derive_stream;

pub use algorithm::{algorithm_names, build_algorithm, Algorithm, AlgorithmSpec};
pub use scheduler::{
    build_scheduler, gibbs_energy, schedule, scheduler_names, ScheduleContext, Scheduler,
    SchedulerSpec,
};

/// The shared model parameters and the current round index.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub params: Vec<f64>,
    pub round: usize,
}

/// One client's data and local-training settings.
pub struct ClientState {
    pub id: usize,
    pub data: LabeledDataset,
    pub local_lr: f64,
    pub local_steps: usize,
    /// Mini-batch size; zero means full batch.
    pub batch_size: usize,
}

/// What a client sends up per round: its (pseudo-)gradient, raw loss, and
/// the gradient's normalization statistics.
#[derive(Debug, Clone)]
pub struct GradientReport {
    pub gradient: Vec<f64>,
    pub loss: f64,
    pub stats: NormalizationStats,
}

/// How each round's noise deviation is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseMode {
    /// One deviation for every round.
    Fixed(f64),
    /// Round `t` uses `values[t % len]` as the receiver deviation.
    Cycle(Vec<f64>),
    /// Client `k` contributes independent link noise with deviation
    /// `values[k % len]`; no receiver-side term.
    PerLink(Vec<f64>),
}

/// Fading law for the per-round channel coefficients.
#[derive(Debug, Clone, PartialEq)]
pub enum FadingLaw {
    /// Unit-variance circularly symmetric complex Gaussian, redrawn each
    /// round (Rayleigh-distributed magnitudes).
    Rayleigh,
    /// User-supplied constant real gains.
    FixedGains(Vec<f64>),
    /// One Rayleigh draw per client, held constant across rounds.
    PerClientConstant,
}

/// Channel configuration applied every round.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub power_budget: f64,
    pub noise: NoiseMode,
    pub fading: FadingLaw,
}

impl ChannelConfig {
    fn realize(&self, num_clients: usize, round: usize, master_seed: u64) -> Result<ChannelRealization> {
        let coefficients = match &self.fading {
            FadingLaw::Rayleigh => {
                let mut rng = derive_stream(master_seed, "channel", round as u64, 0);
                rayleigh_draw(num_clients, &mut rng)
            }
            FadingLaw::FixedGains(gains) => {
                if gains.len() != num_clients {
                    return Err(Error::DimensionMismatch(format!(
                        "{} fixed gains for {num_clients} clients",
                        gains.len()
                    )));
                }
                gains.iter().map(|&g| Complex64::new(g, 0.0)).collect()
            }
            FadingLaw::PerClientConstant => {
                let mut rng = derive_stream(master_seed, "channel-constant", 0, 0);
                rayleigh_draw(num_clients, &mut rng)
            }
        };
        let (sigma, per_link) = match &self.noise {
            NoiseMode::Fixed(s) => (*s, None),
            NoiseMode::Cycle(values) => {
                if values.is_empty() {
                    return Err(Error::InvalidInput("noise cycle has no values".into()));
                }
                (values[round % values.len()], None)
            }
            NoiseMode::PerLink(values) => {
                if values.is_empty() {
                    return Err(Error::InvalidInput("per-link noise has no values".into()));
                }
                let devs: Vec<f64> = (0..num_clients).map(|k| values[k % values.len()]).collect();
                (0.0, Some(devs))
            }
        };
        let mut channel = ChannelRealization::new(coefficients, sigma, self.power_budget)?;
        if let Some(devs) = per_link {
            channel = channel.with_per_link_deviations(devs)?;
        }
        Ok(channel)
    }
}

fn rayleigh_draw(num_clients: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    let axis = 1.0 / 2.0_f64.sqrt();
    (0..num_clients)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(axis * re, axis * im)
        })
        .collect()
}

/// Mean loss of the client's full local dataset at the given parameters.
pub fn local_loss(model: &dyn Model, client: &ClientState, params: &[f64]) -> Result<f64> {
    if params.len() != model.param_len() {
        return Err(Error::DimensionMismatch(format!(
            "{} parameters for a model of dimension {}",
            params.len(),
            model.param_len()
        )));
    }
    Ok(model.mean_loss(params, &client.data, None))
}

/// The client's uplink report at the given parameters: the exact gradient
/// for a single full-batch step, otherwise the pseudo-gradient
/// `(params - locally_trained) / local_lr` after `local_steps` epochs of
/// mini-batch descent.
pub fn local_gradient(
    model: &dyn Model,
    client: &ClientState,
    params: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<GradientReport> {
    if params.len() != model.param_len() {
        return Err(Error::DimensionMismatch(format!(
            "{} parameters for a model of dimension {}",
            params.len(),
            model.param_len()
        )));
    }
    let n = client.data.len();
    let full_batch = client.batch_size == 0 || client.batch_size >= n;
    let gradient = if client.local_steps == 1 && full_batch {
        model.mean_gradient(params, &client.data, None)
    } else {
        let mut local = params.to_vec();
        let batch = if full_batch { n } else { client.batch_size };
        for _ in 0..client.local_steps {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            for chunk in order.chunks(batch) {
                let grad = model.mean_gradient(&local, &client.data, Some(chunk));
                for (t, g) in local.iter_mut().zip(&grad) {
                    *t -= client.local_lr * g;
                }
            }
        }
        params
            .iter()
            .zip(&local)
            .map(|(orig, trained)| (orig - trained) / client.local_lr)
            .collect()
    };
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NumericFailure {
            what: format!("local gradient of client {}", client.id),
            residual: f64::NAN,
        });
    }
    let loss = model.mean_loss(params, &client.data, None);
    let stats = NormalizationStats::from_gradient(&gradient)?;
    Ok(GradientReport {
        gradient,
        loss,
        stats,
    })
}

/// The full simulation state for one experiment.
pub struct Engine {
    pub model: Box<dyn Model>,
    pub clients: Vec<ClientState>,
    pub algorithm: Box<dyn Algorithm>,
    pub scheduler_spec: SchedulerSpec,
    pub channel_cfg: ChannelConfig,
    pub eta: f64,
    pub master_seed: u64,
    pub global: GlobalModel,
    fedavg_weights: WeightVector,
}

impl Engine {
    pub fn new(
        model: Box<dyn Model>,
        clients: Vec<ClientState>,
        algorithm_spec: &AlgorithmSpec,
        scheduler_spec: SchedulerSpec,
        channel_cfg: ChannelConfig,
        eta: f64,
        master_seed: u64,
    ) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::InvalidInput("an experiment needs at least one client".into()));
        }
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::InvalidInput(format!(
                "learning rate must be positive, got {eta}"
            )));
        }
        let sizes: Vec<u64> = clients.iter().map(|c| c.data.len() as u64).collect();
        let fedavg_weights = compute_lambda_avg(&sizes)?;
        if let AlgorithmSpec::Ffl { zeta, .. } = algorithm_spec {
            if !zeta.is_empty() && zeta.len() != clients.len() {
                return Err(Error::DimensionMismatch(format!(
                    "reference point has {} entries for {} clients",
                    zeta.len(),
                    clients.len()
                )));
            }
        }
        let algorithm = build_algorithm(algorithm_spec)?;
        build_scheduler(&scheduler_spec)?;
        let params = model.init_params(&mut derive_stream(master_seed, "init", 0, 0));
        Ok(Self {
            model,
            clients,
            algorithm,
            scheduler_spec,
            channel_cfg,
            eta,
            master_seed,
            global: GlobalModel { params, round: 0 },
            fedavg_weights,
        })
    }

    pub fn fedavg_weights(&self) -> &WeightVector {
        &self.fedavg_weights
    }

    /// Execute one communication round and advance the global model.
    pub fn run_round(&mut self) -> Result<RoundRecord> {
        let started = std::time::Instant::now();
        let round = self.global.round;
        let num_clients = self.clients.len();

        // Every client reports its scalar loss over the ideal control link.
        let mut losses = Vec::with_capacity(num_clients);
        for client in &self.clients {
            losses.push(local_loss(self.model.as_ref(), client, &self.global.params)?);
        }

        // The server turns losses into this round's aggregation weights.
        let weights = self.algorithm.round_weights(&losses, &self.fedavg_weights)?;

        // Fresh channel state, then scheduling over it.
        let channel = self
            .channel_cfg
            .realize(num_clients, round, self.master_seed)?;
        let scheduler = build_scheduler(&self.scheduler_spec)?;
        let mut gibbs_rng = derive_stream(self.master_seed, "gibbs", round as u64, 0);
        let ctx = ScheduleContext {
            channel: &channel,
            weights: &weights,
            model_dim: self.model.param_len(),
        };
        let mut selected = scheduler.select(&ctx, &mut gibbs_rng)?;

        // Zero-weight clients cannot transmit (their scalars would vanish).
        selected.retain(|&k| weights.as_slice()[k] > 0.0);
        if selected.is_empty() {
            return Err(Error::EmptySelection(format!(
                "round {round}: no selected client carries positive weight"
            )));
        }
        let round_weights = weights.restrict_and_renormalize(&selected)?;
        let round_channel = channel.restrict(&selected)?;

        // Local training on the selected clients, with per-client streams so
        // execution order cannot matter.
        let mut reports = Vec::with_capacity(selected.len());
        for &k in &selected {
            let mut batch_rng = derive_stream(self.master_seed, "batch", round as u64, k as u64);
            let mut report = local_gradient(
                self.model.as_ref(),
                &self.clients[k],
                &self.global.params,
                &mut batch_rng,
            )?;
            let factor = self.algorithm.gradient_factor(report.loss);
            if factor != 1.0 {
                for g in &mut report.gradient {
                    *g *= factor;
                }
                report.stats = NormalizationStats::from_gradient(&report.gradient)?;
            }
            reports.push(report);
        }

        // Statistics exchange, normalization, transmission, decoding.
        let local_stats: Vec<NormalizationStats> = reports.iter().map(|r| r.stats).collect();
        let global_stats = aggregate_stats(&local_stats, &round_weights)?;
        let symbols: Vec<Vec<Complex64>> = reports
            .iter()
            .map(|r| {
                normalize_gradient(&r.gradient, &global_stats)
                    .into_iter()
                    .map(|x| Complex64::new(x, 0.0))
                    .collect()
            })
            .collect();
        let plan = optimal_plan(&round_channel, &round_weights)?;
        let mut noise_rng = derive_stream(self.master_seed, "noise", round as u64, 0);
        let received = transmit_and_receive(&symbols, &plan, &round_channel, &mut noise_rng)?;
        let estimate = decode(&received, &plan, &global_stats);

        // Realized estimation error against the exact weighted aggregate.
        let dim = self.model.param_len();
        let mut truth = vec![0.0; dim];
        for (report, w) in reports.iter().zip(round_weights.as_slice()) {
            for (t, g) in truth.iter_mut().zip(&report.gradient) {
                *t += w * g;
            }
        }
        let realized_error: f64 = estimate
            .estimate
            .iter()
            .zip(&truth)
            .map(|(e, t)| (e - Complex64::new(*t, 0.0)).norm_sqr())
            .sum();

        for (p, g) in self.global.params.iter_mut().zip(&estimate.estimate_real) {
            *p -= self.eta * g;
        }
        self.global.round += 1;

        Ok(RoundRecord {
            round,
            client_losses: losses,
            weights: weights.into_vec(),
            selected,
            denoise_scalar: plan.denoise_scalar,
            predicted_variance: estimate.predicted_variance,
            realized_error,
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Run `rounds` rounds, collecting one record per round.
    pub fn run(&mut self, rounds: usize) -> Result<Vec<RoundRecord>> {
        let mut records = Vec::with_capacity(rounds);
        for _ in 0..rounds {
            records.push(self.run_round()?);
        }
        Ok(records)
    }

    /// Per-client loss and accuracy of the current global model on each
    /// client's local data.
    pub fn evaluate(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut losses = Vec::with_capacity(self.clients.len());
        let mut accuracies = Vec::with_capacity(self.clients.len());
        for client in &self.clients {
            losses.push(local_loss(self.model.as_ref(), client, &self.global.params)?);
            accuracies.push(self.model.accuracy(&self.global.params, &client.data));
        }
        Ok((losses, accuracies))
    }
}

/// Everything an experiment produces.
pub struct ExperimentOutput {
    pub records: Vec<RoundRecord>,
    pub summary: EvalSummary,
    pub final_params: Vec<f64>,
}

/// Build the datasets an experiment trains on.
pub fn build_datasets(config: &ExperimentConfig) -> Result<Vec<LabeledDataset>> {
    match &config.dataset {
        DatasetSpec::Synthetic {
            clients,
            samples_per_client,
            features,
            classes,
            skew,
        } => synth_heterogeneous(
            *clients,
            *samples_per_client,
            *features,
            *classes,
            *skew,
            config.seed,
        ),
        DatasetSpec::Idx {
            images,
            labels,
            clients,
            dirichlet_beta,
            min_per_client,
        } => {
            let data = load_idx(std::path::Path::new(images), std::path::Path::new(labels))?;
            let spec = PartitionSpec {
                num_clients: *clients,
                dirichlet_beta: *dirichlet_beta,
                min_per_client: *min_per_client,
                seed: config.seed,
            };
            dirichlet_partition(&data, &spec)
        }
    }
}

/// Build the engine described by a resolved configuration.
pub fn build_engine(config: &ExperimentConfig) -> Result<Engine> {
    let datasets = build_datasets(config)?;
    let num_features = datasets[0].num_features();
    let num_classes = datasets.iter().map(LabeledDataset::num_classes).max().unwrap_or(0);
    let model = build_model(
        &config.model.kind,
        num_features,
        num_classes,
        &config.model.hidden,
    )?;
    let clients: Vec<ClientState> = datasets
        .into_iter()
        .enumerate()
        .map(|(id, data)| ClientState {
            id,
            data,
            local_lr: config.local.lr,
            local_steps: config.local.steps,
            batch_size: config.local.batch_size,
        })
        .collect();
    Engine::new(
        model,
        clients,
        &config.algorithm,
        config.scheduler.clone(),
        config.channel.clone(),
        config.eta,
        config.seed,
    )
}

/// Run a whole experiment: train for the configured number of rounds,
/// evaluate per client, and persist reports when an output directory is
/// configured.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut engine = build_engine(config)?;
    let records = engine.run(config.rounds)?;
    let (losses, accuracies) = engine.evaluate()?;
    let summary = summarize(&accuracies, &losses)?;
    if let Some(out_dir) = &config.out_dir {
        crate::metrics::emit_reports(
            &records,
            &summary,
            &config.echo_json()?,
            config.seed,
            std::path::Path::new(out_dir),
        )?;
    }
    Ok(ExperimentOutput {
        records,
        summary,
        final_params: engine.global.params,
    })
}
