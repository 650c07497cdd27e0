//! Client scheduling strategies, registered by name.
//!
//! `full` keeps every usable client, `channel-topk` keeps the strongest
//! channels, and `gibbs` anneals over fixed-size subsets of clients to trade
//! the aggregation's noise amplification against the weight mass left out.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::moo::WeightVector;
use crate::ota::{variance_formula, ChannelRealization, H_FLOOR};

/// Parameters selecting and configuring a scheduler.
#[derive(Debug, Clone, PartialEq)]
pub enum SchedulerSpec {
    /// All clients whose channel magnitude clears the floor.
    Full,
    /// The `target_size` clients with the largest channel magnitudes.
    ChannelTopK { target_size: usize },
    /// Annealed subset search of fixed size minimizing [`gibbs_energy`].
    Gibbs {
        target_size: usize,
        iters: usize,
        temp0: f64,
        cooling: f64,
        mu: f64,
        grad_norm_proxy: f64,
    },
}

impl SchedulerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            SchedulerSpec::Full => "full",
            SchedulerSpec::ChannelTopK { .. } => "channel-topk",
            SchedulerSpec::Gibbs { .. } => "gibbs",
        }
    }
}

/// Everything a scheduler may inspect when picking the round's clients.
pub struct ScheduleContext<'a> {
    /// Channel realization over all clients.
    pub channel: &'a ChannelRealization,
    /// This round's aggregation weights over all clients.
    pub weights: &'a WeightVector,
    /// Model dimension (number of channel uses per round).
    pub model_dim: usize,
}

/// A client-selection strategy. Returns ascending client indices.
pub trait Scheduler: Send + Sync {
    fn name(&self) -> &'static str;
    fn select(&self, ctx: &ScheduleContext, rng: &mut ChaCha8Rng) -> Result<Vec<usize>>;
}

/// Registered scheduler names, in registry order.
pub fn scheduler_names() -> &'static [&'static str] {
    &["full", "channel-topk", "gibbs"]
}

/// Build a scheduler from its spec.
pub fn build_scheduler(spec: &SchedulerSpec) -> Result<Box<dyn Scheduler>> {
    match spec {
        SchedulerSpec::Full => Ok(Box::new(FullScheduler)),
        SchedulerSpec::ChannelTopK { target_size } => {
            if *target_size == 0 {
                return Err(Error::InvalidInput("target size must be positive".into()));
            }
            Ok(Box::new(ChannelTopKScheduler {
                target_size: *target_size,
            }))
        }
        SchedulerSpec::Gibbs {
            target_size,
            iters,
            temp0,
            cooling,
            mu,
            grad_norm_proxy,
        } => {
            if *target_size == 0 {
                return Err(Error::InvalidInput("target size must be positive".into()));
            }
            if !(temp0.is_finite() && *temp0 > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "initial temperature must be positive, got {temp0}"
                )));
            }
            if !(cooling.is_finite() && *cooling > 0.0 && *cooling <= 1.0) {
                return Err(Error::InvalidInput(format!(
                    "cooling factor must be in (0, 1], got {cooling}"
                )));
            }
            Ok(Box::new(GibbsScheduler {
                target_size: *target_size,
                iters: *iters,
                temp0: *temp0,
                cooling: *cooling,
                mu: *mu,
                grad_norm_proxy: *grad_norm_proxy,
            }))
        }
    }
}

/// Convenience wrapper building and running a scheduler in one call.
pub fn schedule(
    spec: &SchedulerSpec,
    channel: &ChannelRealization,
    weights: &WeightVector,
    model_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let scheduler = build_scheduler(spec)?;
    let ctx = ScheduleContext {
        channel,
        weights,
        model_dim,
    };
    scheduler.select(&ctx, rng)
}

fn usable_clients(channel: &ChannelRealization) -> Vec<usize> {
    (0..channel.num_clients())
        .filter(|&k| channel.coefficients[k].norm() >= H_FLOOR)
        .collect()
}

struct FullScheduler;

impl Scheduler for FullScheduler {
    fn name(&self) -> &'static str {
        "full"
    }

    fn select(&self, ctx: &ScheduleContext, _rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        let usable = usable_clients(ctx.channel);
        if usable.is_empty() {
            return Err(Error::EmptySelection(
                "every client's channel is degenerate this round".into(),
            ));
        }
        Ok(usable)
    }
}

struct ChannelTopKScheduler {
    target_size: usize,
}

impl Scheduler for ChannelTopKScheduler {
    fn name(&self) -> &'static str {
        "channel-topk"
    }

    fn select(&self, ctx: &ScheduleContext, _rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        let mut usable = usable_clients(ctx.channel);
        if usable.len() < self.target_size {
            return Err(Error::EmptySelection(format!(
                "target size {} exceeds the {} usable clients",
                self.target_size,
                usable.len()
            )));
        }
        // Sort by magnitude descending; equal magnitudes keep index order.
        usable.sort_by(|&a, &b| {
            ctx.channel.coefficients[b]
                .norm()
                .partial_cmp(&ctx.channel.coefficients[a].norm())
                .unwrap()
        });
        let mut selected: Vec<usize> = usable[..self.target_size].to_vec();
        selected.sort_unstable();
        Ok(selected)
    }
}

/// Subset energy traded off by the annealed scheduler: the closed-form
/// estimator variance of the subset (at unit gradient variance) plus a
/// penalty `mu * grad_norm_proxy * sum of excluded weights`.
pub fn gibbs_energy(
    subset: &[usize],
    channel: &ChannelRealization,
    weights: &WeightVector,
    model_dim: usize,
    mu: f64,
    grad_norm_proxy: f64,
) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::EmptySelection("energy of an empty subset".into()));
    }
    if weights.len() != channel.num_clients() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights vs {} clients",
            weights.len(),
            channel.num_clients()
        )));
    }
    let w = weights.as_slice();
    let mass: f64 = subset.iter().map(|&k| w[k]).sum();
    let variance = if mass > 0.0 {
        variance_formula(
            model_dim,
            1.0,
            channel.noise_power(),
            channel.power_budget,
            subset.iter().map(|&k| channel.coefficients[k].norm_sqr()),
            subset.iter().map(|&k| w[k] / mass),
        )
    } else {
        f64::INFINITY
    };
    let excluded: f64 = (0..w.len()).filter(|k| !subset.contains(k)).map(|k| w[k]).sum();
    Ok(variance + mu * grad_norm_proxy * excluded)
}

struct GibbsScheduler {
    target_size: usize,
    iters: usize,
    temp0: f64,
    cooling: f64,
    mu: f64,
    grad_norm_proxy: f64,
}

impl Scheduler for GibbsScheduler {
    fn name(&self) -> &'static str {
        "gibbs"
    }

    fn select(&self, ctx: &ScheduleContext, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        let usable = usable_clients(ctx.channel);
        if usable.len() < self.target_size {
            return Err(Error::EmptySelection(format!(
                "target size {} exceeds the {} usable clients",
                self.target_size,
                usable.len()
            )));
        }
        let energy = |subset: &[usize]| -> Result<f64> {
            gibbs_energy(
                subset,
                ctx.channel,
                ctx.weights,
                ctx.model_dim,
                self.mu,
                self.grad_norm_proxy,
            )
        };
        let mut pool = usable.clone();
        pool.shuffle(rng);
        let mut current: Vec<usize> = pool[..self.target_size].to_vec();
        let mut outside: Vec<usize> = pool[self.target_size..].to_vec();
        let mut current_energy = energy(&current)?;
        let mut best = current.clone();
        let mut best_energy = current_energy;
        let mut temperature = self.temp0;
        for _ in 0..self.iters {
            if outside.is_empty() {
                break;
            }
            let swap_in = rng.random_range(0..outside.len());
            let swap_out = rng.random_range(0..current.len());
            std::mem::swap(&mut current[swap_out], &mut outside[swap_in]);
            let candidate_energy = energy(&current)?;
            let delta = candidate_energy - current_energy;
            let accept = delta <= 0.0 || rng.random::<f64>() < (-delta / temperature).exp();
            if accept {
                current_energy = candidate_energy;
                if candidate_energy < best_energy {
                    best_energy = candidate_energy;
                    best = current.clone();
                }
            } else {
                // Undo the swap.
                std::mem::swap(&mut current[swap_out], &mut outside[swap_in]);
            }
            temperature *= self.cooling;
        }
        best.sort_unstable();
        Ok(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;
    use num_complex::Complex64;

    fn channel_from_gains(gains: &[f64], sigma: f64) -> ChannelRealization {
        ChannelRealization::new(
            gains.iter().map(|&g| Complex64::new(g, 0.0)).collect(),
            sigma,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn full_returns_all_usable_clients() {
        let channel = channel_from_gains(&[0.5, 1.0, 0.9], 0.1);
        let w = WeightVector::uniform(3).unwrap();
        let mut rng = derive_stream(1, "sched", 0, 0);
        let selected = schedule(&SchedulerSpec::Full, &channel, &w, 10, &mut rng).unwrap();
        assert_eq!(selected, vec![0, 1, 2]);
    }

    #[test]
    fn full_drops_degenerate_channels() {
        let channel = channel_from_gains(&[0.5, 1e-9, 0.9], 0.1);
        let w = WeightVector::uniform(3).unwrap();
        let mut rng = derive_stream(1, "sched", 0, 0);
        let selected = schedule(&SchedulerSpec::Full, &channel, &w, 10, &mut rng).unwrap();
        assert_eq!(selected, vec![0, 2]);
    }

    #[test]
    fn full_errors_when_everything_degenerate() {
        let channel = channel_from_gains(&[1e-9, 1e-8], 0.1);
        let w = WeightVector::uniform(2).unwrap();
        let mut rng = derive_stream(1, "sched", 0, 0);
        assert!(matches!(
            schedule(&SchedulerSpec::Full, &channel, &w, 10, &mut rng),
            Err(Error::EmptySelection(_))
        ));
    }

    #[test]
    fn topk_picks_strongest_channels() {
        let channel = channel_from_gains(&[0.1, 0.9, 0.5], 0.1);
        let w = WeightVector::uniform(3).unwrap();
        let mut rng = derive_stream(1, "sched", 0, 0);
        let selected = schedule(
            &SchedulerSpec::ChannelTopK { target_size: 2 },
            &channel,
            &w,
            10,
            &mut rng,
        )
        .unwrap();
        assert_eq!(selected, vec![1, 2]);
    }

    #[test]
    fn topk_rejects_oversized_target() {
        let channel = channel_from_gains(&[0.1, 1e-9], 0.1);
        let w = WeightVector::uniform(2).unwrap();
        let mut rng = derive_stream(1, "sched", 0, 0);
        assert!(schedule(
            &SchedulerSpec::ChannelTopK { target_size: 2 },
            &channel,
            &w,
            10,
            &mut rng,
        )
        .is_err());
    }

    #[test]
    fn gibbs_energy_penalizes_exclusion_and_weak_channels() {
        let channel = channel_from_gains(&[1.0, 0.2, 1.0], 0.5);
        let w = WeightVector::new(vec![0.5, 0.25, 0.25]).unwrap();
        let strong = gibbs_energy(&[0, 2], &channel, &w, 10, 1.0, 1.0).unwrap();
        let weak = gibbs_energy(&[0, 1], &channel, &w, 10, 1.0, 1.0).unwrap();
        assert!(strong < weak, "subset through the weak channel must cost more");
    }

    #[test]
    fn gibbs_finds_near_optimal_subsets() {
        let mut hits = 0;
        for seed in 0..100u64 {
            let mut setup = derive_stream(seed, "gibbs-setup", 0, 0);
            let gains: Vec<f64> = (0..6).map(|_| setup.random_range(0.1..1.5)).collect();
            let raw: Vec<f64> = (0..6).map(|_| setup.random_range(0.05..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let w = WeightVector::new(raw.iter().map(|x| x / total).collect()).unwrap();
            let channel = channel_from_gains(&gains, 0.4);
            let spec = SchedulerSpec::Gibbs {
                target_size: 3,
                iters: 200,
                temp0: 1.0,
                cooling: 0.97,
                mu: 1.0,
                grad_norm_proxy: 1.0,
            };
            let mut rng = derive_stream(seed, "gibbs-run", 0, 0);
            let selected = schedule(&spec, &channel, &w, 20, &mut rng).unwrap();
            let achieved = gibbs_energy(&selected, &channel, &w, 20, 1.0, 1.0).unwrap();
            // Exhaustive minimum over all C(6,3) = 20 subsets.
            let mut minimum = f64::INFINITY;
            for a in 0..6 {
                for b in a + 1..6 {
                    for c in b + 1..6 {
                        let e = gibbs_energy(&[a, b, c], &channel, &w, 20, 1.0, 1.0).unwrap();
                        minimum = minimum.min(e);
                    }
                }
            }
            if achieved <= minimum * 1.05 {
                hits += 1;
            }
        }
        assert!(hits >= 95, "only {hits}/100 runs within 5% of the optimum");
    }

    #[test]
    fn gibbs_deterministic_under_seed() {
        let channel = channel_from_gains(&[0.3, 0.8, 1.2, 0.5], 0.2);
        let w = WeightVector::uniform(4).unwrap();
        let spec = SchedulerSpec::Gibbs {
            target_size: 2,
            iters: 100,
            temp0: 1.0,
            cooling: 0.95,
            mu: 1.0,
            grad_norm_proxy: 1.0,
        };
        let a = schedule(&spec, &channel, &w, 10, &mut derive_stream(4, "g", 0, 0)).unwrap();
        let b = schedule(&spec, &channel, &w, 10, &mut derive_stream(4, "g", 0, 0)).unwrap();
        assert_eq!(a, b);
    }
}
