//! Fading multiple-access channel simulation and the analog aggregation
//! codec: gradient normalization statistics, optimal transmit scalars, the
//! receiver de-noising scalar, the aggregated-gradient estimator, and its
//! closed-form error variance.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::moo::WeightVector;

/// Channel magnitudes below this floor are treated as unusable.
pub const H_FLOOR: f64 = 1e-6;
/// Floor applied to gradient variances before normalization divides by them.
pub const V_FLOOR: f64 = 1e-12;

/// One round's channel state over the participating clients: complex fading
/// coefficients, receiver noise deviation, and the per-symbol power budget.
///
/// `per_link_deviations`, when set, adds an independent noise term per uplink
/// before superposition; the receiver-side `noise_deviation` still applies on
/// top (set it to zero for a pure per-link model).
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub coefficients: Vec<Complex64>,
    pub noise_deviation: f64,
    pub power_budget: f64,
    pub per_link_deviations: Option<Vec<f64>>,
}

impl ChannelRealization {
    pub fn new(coefficients: Vec<Complex64>, noise_deviation: f64, power_budget: f64) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::InvalidInput("channel has no coefficients".into()));
        }
        if coefficients.iter().any(|h| !h.re.is_finite() || !h.im.is_finite()) {
            return Err(Error::InvalidInput("channel coefficient is not finite".into()));
        }
        if !(noise_deviation >= 0.0 && noise_deviation.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "noise deviation must be finite and non-negative, got {noise_deviation}"
            )));
        }
        if !(power_budget > 0.0 && power_budget.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "power budget must be positive, got {power_budget}"
            )));
        }
        Ok(Self {
            coefficients,
            noise_deviation,
            power_budget,
            per_link_deviations: None,
        })
    }

    pub fn with_per_link_deviations(mut self, deviations: Vec<f64>) -> Result<Self> {
        if deviations.len() != self.coefficients.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} per-link deviations vs {} coefficients",
                deviations.len(),
                self.coefficients.len()
            )));
        }
        if deviations.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidInput("per-link deviation must be non-negative".into()));
        }
        self.per_link_deviations = Some(deviations);
        Ok(self)
    }

    pub fn num_clients(&self) -> usize {
        self.coefficients.len()
    }

    /// Total noise power per received component: the receiver term plus any
    /// per-link terms, which add because the links are independent.
    pub fn noise_power(&self) -> f64 {
        let receiver = self.noise_deviation * self.noise_deviation;
        match &self.per_link_deviations {
            Some(devs) => receiver + devs.iter().map(|s| s * s).sum::<f64>(),
            None => receiver,
        }
    }

    /// Keep only the listed clients, in the given order.
    pub fn restrict(&self, indices: &[usize]) -> Result<ChannelRealization> {
        let mut coefficients = Vec::with_capacity(indices.len());
        for &i in indices {
            let h = self.coefficients.get(i).copied().ok_or_else(|| {
                Error::InvalidInput(format!("client index {i} out of range {}", self.num_clients()))
            })?;
            coefficients.push(h);
        }
        let per_link = self
            .per_link_deviations
            .as_ref()
            .map(|devs| indices.iter().map(|&i| devs[i]).collect());
        Ok(ChannelRealization {
            coefficients,
            noise_deviation: self.noise_deviation,
            power_budget: self.power_budget,
            per_link_deviations: per_link,
        })
    }
}

/// Mean and (floored) variance of a gradient's components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationStats {
    pub mean: f64,
    pub variance: f64,
}

impl NormalizationStats {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() || !variance.is_finite() || variance < 0.0 {
            return Err(Error::InvalidInput(format!(
                "invalid normalization stats: mean {mean}, variance {variance}"
            )));
        }
        Ok(Self {
            mean,
            variance: variance.max(V_FLOOR),
        })
    }

    /// Component mean and biased (1/d) variance of a gradient vector.
    pub fn from_gradient(gradient: &[f64]) -> Result<Self> {
        if gradient.is_empty() {
            return Err(Error::InvalidInput("cannot take stats of an empty gradient".into()));
        }
        let d = gradient.len() as f64;
        let mean = gradient.iter().sum::<f64>() / d;
        let variance = gradient.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / d;
        Self::new(mean, variance)
    }
}

/// Per-client transmit scalars and the receiver de-noising scalar, plus the
/// channel's total noise power for variance bookkeeping.
#[derive(Debug, Clone)]
pub struct TransmitPlan {
    pub transmit_scalars: Vec<Complex64>,
    pub denoise_scalar: f64,
    pub noise_power: f64,
}

/// Decoded aggregate: the complex estimator, its real part used for the
/// model update, and the closed-form error variance of the estimator.
#[derive(Debug, Clone)]
pub struct AggregateEstimate {
    pub estimate: Vec<Complex64>,
    pub estimate_real: Vec<f64>,
    pub predicted_variance: f64,
}

/// Weighted average of the selected clients' gradient statistics.
pub fn aggregate_stats(
    local_stats: &[NormalizationStats],
    weights: &WeightVector,
) -> Result<NormalizationStats> {
    if local_stats.is_empty() {
        return Err(Error::EmptySelection("no statistics to aggregate".into()));
    }
    if local_stats.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} stats vs {} weights",
            local_stats.len(),
            weights.len()
        )));
    }
    let mut mean = 0.0;
    let mut variance = 0.0;
    for (s, w) in local_stats.iter().zip(weights.as_slice()) {
        mean += w * s.mean;
        variance += w * s.variance;
    }
    NormalizationStats::new(mean, variance)
}

/// Center and scale a gradient by the global statistics.
pub fn normalize_gradient(gradient: &[f64], stats: &NormalizationStats) -> Vec<f64> {
    let scale = stats.variance.max(V_FLOOR).sqrt();
    gradient.iter().map(|g| (g - stats.mean) / scale).collect()
}

fn validate_plan_inputs(channel: &ChannelRealization, weights: &WeightVector) -> Result<()> {
    if channel.num_clients() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} channel coefficients vs {} weights",
            channel.num_clients(),
            weights.len()
        )));
    }
    for (k, h) in channel.coefficients.iter().enumerate() {
        let magnitude = h.norm();
        if magnitude < H_FLOOR {
            return Err(Error::ChannelDegenerate {
                client: k,
                magnitude,
                floor: H_FLOOR,
            });
        }
    }
    if let Some(k) = weights.as_slice().iter().position(|w| *w <= 0.0) {
        return Err(Error::InvalidInput(format!(
            "client {k} has zero aggregation weight; exclude it before planning transmission"
        )));
    }
    Ok(())
}

/// Transmit scalars and de-noising scalar that make the superposition an
/// unbiased weighted sum at minimal error variance: the de-noising scalar is
/// the largest value keeping every client inside the power budget, and each
/// transmit scalar inverts its own channel.
pub fn optimal_plan(channel: &ChannelRealization, weights: &WeightVector) -> Result<TransmitPlan> {
    validate_plan_inputs(channel, weights)?;
    let sqrt_power = channel.power_budget.sqrt();
    let denoise_scalar = channel
        .coefficients
        .iter()
        .zip(weights.as_slice())
        .map(|(h, w)| sqrt_power * h.norm() / w)
        .fold(f64::INFINITY, f64::min);
    let transmit_scalars = channel
        .coefficients
        .iter()
        .zip(weights.as_slice())
        .map(|(h, w)| Complex64::new(w * denoise_scalar, 0.0) / h)
        .collect();
    Ok(TransmitPlan {
        transmit_scalars,
        denoise_scalar,
        noise_power: channel.noise_power(),
    })
}

/// Superimpose the scaled symbol vectors through the channel and add
/// Gaussian noise (total per-component variance `sigma^2`, split evenly
/// between the real and imaginary axes). Deterministic for a given stream.
pub fn transmit_and_receive(
    symbols: &[Vec<Complex64>],
    plan: &TransmitPlan,
    channel: &ChannelRealization,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Complex64>> {
    if symbols.len() != channel.num_clients() || symbols.len() != plan.transmit_scalars.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} symbol vectors vs {} clients",
            symbols.len(),
            channel.num_clients()
        )));
    }
    let dim = symbols.first().map_or(0, Vec::len);
    if symbols.iter().any(|s| s.len() != dim) {
        return Err(Error::DimensionMismatch(
            "symbol vectors have unequal lengths".into(),
        ));
    }
    let mut received = vec![Complex64::new(0.0, 0.0); dim];
    for ((s, b), h) in symbols
        .iter()
        .zip(&plan.transmit_scalars)
        .zip(&channel.coefficients)
    {
        let gain = h * b;
        for (y, x) in received.iter_mut().zip(s) {
            *y += gain * x;
        }
    }
    if let Some(devs) = &channel.per_link_deviations {
        for &sigma in devs {
            add_noise(&mut received, sigma, rng);
        }
    }
    add_noise(&mut received, channel.noise_deviation, rng);
    Ok(received)
}

fn add_noise(received: &mut [Complex64], sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma == 0.0 {
        return;
    }
    let axis = sigma / 2.0_f64.sqrt();
    for y in received.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *y += Complex64::new(axis * re, axis * im);
    }
}

/// Rescale and re-center the received vector into the aggregate-gradient
/// estimate.
pub fn decode(y: &[Complex64], plan: &TransmitPlan, stats: &NormalizationStats) -> AggregateEstimate {
    let scale = stats.variance.max(V_FLOOR).sqrt() / plan.denoise_scalar;
    let estimate: Vec<Complex64> = y
        .iter()
        .map(|v| v * scale + Complex64::new(stats.mean, 0.0))
        .collect();
    let estimate_real = estimate.iter().map(|v| v.re).collect();
    let predicted_variance = y.len() as f64 * stats.variance * plan.noise_power
        / (plan.denoise_scalar * plan.denoise_scalar);
    AggregateEstimate {
        estimate,
        estimate_real,
        predicted_variance,
    }
}

/// Closed-form error variance of the optimally planned estimator:
/// `d * v * sigma^2 / P0 * max_k (w_k / |h_k|)^2`.
pub fn predict_variance(
    dim: usize,
    stats: &NormalizationStats,
    channel: &ChannelRealization,
    weights: &WeightVector,
) -> Result<f64> {
    validate_plan_inputs(channel, weights)?;
    Ok(variance_formula(
        dim,
        stats.variance,
        channel.noise_power(),
        channel.power_budget,
        channel.coefficients.iter().map(Complex64::norm_sqr),
        weights.as_slice().iter().copied(),
    ))
}

/// Shared kernel for the variance law, also used by the scheduler energy.
pub(crate) fn variance_formula(
    dim: usize,
    variance: f64,
    noise_power: f64,
    power_budget: f64,
    gain_squares: impl Iterator<Item = f64>,
    weights: impl Iterator<Item = f64>,
) -> f64 {
    let worst_ratio = gain_squares
        .zip(weights)
        .map(|(h2, w)| w * w / h2)
        .fold(0.0, f64::max);
    dim as f64 * variance * noise_power / power_budget * worst_ratio
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    fn assert_close(actual: f64, expected: f64, tol: f64) {
        assert!(
            (actual - expected).abs() <= tol,
            "expected {expected}, got {actual} (tol {tol})"
        );
    }

    fn real_channel(gains: &[f64], sigma: f64, power: f64) -> ChannelRealization {
        ChannelRealization::new(
            gains.iter().map(|&g| Complex64::new(g, 0.0)).collect(),
            sigma,
            power,
        )
        .unwrap()
    }

    #[test]
    fn aggregate_stats_weighted_mean() {
        let stats = [
            NormalizationStats::new(1.0, 2.0).unwrap(),
            NormalizationStats::new(3.0, 4.0).unwrap(),
        ];
        let w = WeightVector::new(vec![0.5, 0.5]).unwrap();
        let out = aggregate_stats(&stats, &w).unwrap();
        assert_close(out.mean, 2.0, 1e-15);
        assert_close(out.variance, 3.0, 1e-15);
    }

    #[test]
    fn aggregate_stats_single_client_identity() {
        let stats = [NormalizationStats::new(-0.5, 1.25).unwrap()];
        let w = WeightVector::new(vec![1.0]).unwrap();
        let out = aggregate_stats(&stats, &w).unwrap();
        assert_eq!(out, stats[0]);
    }

    #[test]
    fn aggregate_stats_homogeneous() {
        let stats = [
            NormalizationStats::new(0.0, 1.0).unwrap(),
            NormalizationStats::new(0.0, 1.0).unwrap(),
        ];
        let w = WeightVector::new(vec![0.3, 0.7]).unwrap();
        let out = aggregate_stats(&stats, &w).unwrap();
        assert_close(out.mean, 0.0, 1e-15);
        assert_close(out.variance, 1.0, 1e-15);
    }

    #[test]
    fn aggregate_stats_rejects_empty() {
        let w = WeightVector::new(vec![1.0]).unwrap();
        assert!(matches!(
            aggregate_stats(&[], &w),
            Err(Error::EmptySelection(_)) | Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn normalize_gradient_cases() {
        let stats = NormalizationStats::new(3.0, 1.0).unwrap();
        assert_eq!(normalize_gradient(&[2.0, 4.0], &stats), vec![-1.0, 1.0]);

        let stats = NormalizationStats::new(5.0, 2.0).unwrap();
        assert_eq!(normalize_gradient(&[5.0, 5.0, 5.0], &stats), vec![0.0, 0.0, 0.0]);

        let stats = NormalizationStats::new(1.0, 4.0).unwrap();
        assert_eq!(normalize_gradient(&[0.0, 2.0], &stats), vec![-0.5, 0.5]);
    }

    #[test]
    fn optimal_plan_two_clients() {
        let channel = real_channel(&[1.0, 0.5], 0.0, 1.0);
        let w = WeightVector::new(vec![0.5, 0.5]).unwrap();
        let plan = optimal_plan(&channel, &w).unwrap();
        assert_close(plan.denoise_scalar, 1.0, 1e-15);
        assert_close(plan.transmit_scalars[0].re, 0.5, 1e-15);
        assert_close(plan.transmit_scalars[1].re, 1.0, 1e-15);
    }

    #[test]
    fn optimal_plan_imaginary_channel_binds_power() {
        let channel = ChannelRealization::new(vec![Complex64::new(0.0, 0.5)], 0.0, 4.0).unwrap();
        let w = WeightVector::new(vec![1.0]).unwrap();
        let plan = optimal_plan(&channel, &w).unwrap();
        assert_close(plan.denoise_scalar, 1.0, 1e-15);
        assert_close(plan.transmit_scalars[0].re, 0.0, 1e-15);
        assert_close(plan.transmit_scalars[0].im, -2.0, 1e-15);
        assert_close(plan.transmit_scalars[0].norm_sqr(), 4.0, 1e-12);
    }

    #[test]
    fn optimal_plan_effective_gains_recover_weights() {
        use rand::Rng;
        let mut rng = derive_stream(21, "plan-test", 0, 0);
        for _ in 0..100 {
            let k = rng.random_range(1..8);
            let coeffs: Vec<Complex64> = (0..k)
                .map(|_| Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
                .collect();
            if coeffs.iter().any(|h| h.norm() < 1e-3) {
                continue;
            }
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let w = WeightVector::new(raw.iter().map(|x| x / total).collect()).unwrap();
            let power = rng.random_range(0.5..4.0);
            let channel = ChannelRealization::new(coeffs.clone(), 0.1, power).unwrap();
            let plan = optimal_plan(&channel, &w).unwrap();
            for i in 0..k {
                let effective = coeffs[i] * plan.transmit_scalars[i] / plan.denoise_scalar;
                assert_close(effective.re, w.as_slice()[i], 1e-12);
                assert_close(effective.im, 0.0, 1e-12);
                assert!(plan.transmit_scalars[i].norm_sqr() <= power + 1e-12);
            }
            let binding = plan
                .transmit_scalars
                .iter()
                .map(|b| (b.norm_sqr() - power).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(binding <= 1e-9, "no client binds the power budget");
        }
    }

    #[test]
    fn optimal_plan_flags_degenerate_channel() {
        let channel = real_channel(&[1.0, 1e-9], 0.1, 1.0);
        let w = WeightVector::new(vec![0.5, 0.5]).unwrap();
        match optimal_plan(&channel, &w) {
            Err(Error::ChannelDegenerate { client, .. }) => assert_eq!(client, 1),
            other => panic!("expected degenerate channel error, got {other:?}"),
        }
    }

    #[test]
    fn transmit_noiseless_identity() {
        let channel = real_channel(&[1.0], 0.0, 1.0);
        let w = WeightVector::new(vec![1.0]).unwrap();
        let plan = optimal_plan(&channel, &w).unwrap();
        let symbols = vec![vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(2.0, 0.0),
            Complex64::new(3.0, 0.0),
        ]];
        let mut rng = derive_stream(1, "noise", 0, 0);
        let y = transmit_and_receive(&symbols, &plan, &channel, &mut rng).unwrap();
        for (i, expected) in [1.0, 2.0, 3.0].iter().enumerate() {
            assert_close(y[i].re, *expected, 1e-12);
            assert_close(y[i].im, 0.0, 1e-12);
        }
    }

    #[test]
    fn transmit_noiseless_superposition() {
        let channel = real_channel(&[2.0, 0.5], 0.0, 4.0);
        let w = WeightVector::new(vec![0.25, 0.75]).unwrap();
        let plan = optimal_plan(&channel, &w).unwrap();
        let s1 = vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)];
        let s2 = vec![Complex64::new(2.0, 0.0), Complex64::new(0.5, 0.0)];
        let mut rng = derive_stream(1, "noise", 0, 0);
        let y = transmit_and_receive(&[s1.clone(), s2.clone()], &plan, &channel, &mut rng).unwrap();
        for i in 0..2 {
            let expected = 0.25 * s1[i].re + 0.75 * s2[i].re;
            assert_close(y[i].re / plan.denoise_scalar, expected, 1e-12);
        }
    }

    #[test]
    fn noise_component_variance_matches_declared_law() {
        let dim = 100;
        let draws = 1000;
        let channel = real_channel(&[1.0], 1.0, 1.0);
        let w = WeightVector::new(vec![1.0]).unwrap();
        let plan = optimal_plan(&channel, &w).unwrap();
        let symbols = vec![vec![Complex64::new(0.0, 0.0); dim]];
        let mut rng = derive_stream(42, "noise-mc", 0, 0);
        let mut acc = 0.0;
        for _ in 0..draws {
            let y = transmit_and_receive(&symbols, &plan, &channel, &mut rng).unwrap();
            acc += y.iter().map(Complex64::norm_sqr).sum::<f64>();
        }
        let sample_variance = acc / (dim * draws) as f64;
        assert!(
            (sample_variance - 1.0).abs() < 0.03,
            "sample variance {sample_variance} off by more than 3%"
        );
    }

    #[test]
    fn transmit_deterministic_given_seed() {
        let channel = real_channel(&[1.0, 0.8], 0.7, 1.0);
        let w = WeightVector::new(vec![0.4, 0.6]).unwrap();
        let plan = optimal_plan(&channel, &w).unwrap();
        let symbols = vec![
            vec![Complex64::new(0.3, 0.0); 8],
            vec![Complex64::new(-0.2, 0.0); 8],
        ];
        let mut r1 = derive_stream(9, "noise", 5, 0);
        let mut r2 = derive_stream(9, "noise", 5, 0);
        let y1 = transmit_and_receive(&symbols, &plan, &channel, &mut r1).unwrap();
        let y2 = transmit_and_receive(&symbols, &plan, &channel, &mut r2).unwrap();
        assert_eq!(y1, y2);
    }

    #[test]
    fn decode_identity_when_unit_stats() {
        let stats = NormalizationStats::new(0.0, 1.0).unwrap();
        let plan = TransmitPlan {
            transmit_scalars: vec![Complex64::new(1.0, 0.0)],
            denoise_scalar: 1.0,
            noise_power: 0.0,
        };
        let y = vec![Complex64::new(0.25, -0.5), Complex64::new(1.5, 0.0)];
        let out = decode(&y, &plan, &stats);
        assert_eq!(out.estimate, y);
        assert_eq!(out.estimate_real, vec![0.25, 1.5]);
        assert_close(out.predicted_variance, 0.0, 1e-15);
    }

    #[test]
    fn noiseless_roundtrip_recovers_weighted_sum() {
        let gradients = [vec![1.0, -2.0, 0.5], vec![3.0, 0.0, -1.0]];
        let channel = real_channel(&[1.3, 0.6], 0.0, 2.0);
        let w = WeightVector::new(vec![0.3, 0.7]).unwrap();
        let local: Vec<NormalizationStats> = gradients
            .iter()
            .map(|g| NormalizationStats::from_gradient(g).unwrap())
            .collect();
        let stats = aggregate_stats(&local, &w).unwrap();
        let symbols: Vec<Vec<Complex64>> = gradients
            .iter()
            .map(|g| {
                normalize_gradient(g, &stats)
                    .into_iter()
                    .map(|x| Complex64::new(x, 0.0))
                    .collect()
            })
            .collect();
        let plan = optimal_plan(&channel, &w).unwrap();
        let mut rng = derive_stream(3, "noise", 0, 0);
        let y = transmit_and_receive(&symbols, &plan, &channel, &mut rng).unwrap();
        let out = decode(&y, &plan, &stats);
        for i in 0..3 {
            let expected = 0.3 * gradients[0][i] + 0.7 * gradients[1][i];
            assert_close(out.estimate_real[i], expected, 1e-9);
        }
    }

    #[test]
    fn estimator_unbiased_under_noise() {
        let dim = 20;
        let draws = 10_000;
        let mut grads = [vec![0.8; 20], vec![-0.4; 20]];
        for (i, g) in grads.iter_mut().enumerate() {
            for (j, x) in g.iter_mut().enumerate() {
                *x += 0.1 * (i as f64 + 1.0) * (j as f64).sin();
            }
        }
        let channel = real_channel(&[1.0, 0.7], 0.3, 1.0);
        let w = WeightVector::new(vec![0.5, 0.5]).unwrap();
        let local: Vec<NormalizationStats> = grads
            .iter()
            .map(|g| NormalizationStats::from_gradient(g).unwrap())
            .collect();
        let stats = aggregate_stats(&local, &w).unwrap();
        let symbols: Vec<Vec<Complex64>> = grads
            .iter()
            .map(|g| {
                normalize_gradient(g, &stats)
                    .into_iter()
                    .map(|x| Complex64::new(x, 0.0))
                    .collect()
            })
            .collect();
        let plan = optimal_plan(&channel, &w).unwrap();
        let mut rng = derive_stream(8, "unbias-mc", 0, 0);
        let mut mean = vec![Complex64::new(0.0, 0.0); dim];
        for _ in 0..draws {
            let y = transmit_and_receive(&symbols, &plan, &channel, &mut rng).unwrap();
            let out = decode(&y, &plan, &stats);
            for (m, v) in mean.iter_mut().zip(&out.estimate) {
                *m += v;
            }
        }
        let truth: Vec<f64> = (0..dim)
            .map(|i| 0.5 * grads[0][i] + 0.5 * grads[1][i])
            .collect();
        let mut err = 0.0;
        let mut norm = 0.0;
        for i in 0..dim {
            let m = mean[i] / draws as f64;
            err += (m - Complex64::new(truth[i], 0.0)).norm_sqr();
            norm += truth[i] * truth[i];
        }
        assert!(
            (err.sqrt() / norm.sqrt()) <= 0.02,
            "relative bias {} above 2%",
            err.sqrt() / norm.sqrt()
        );
    }

    #[test]
    fn predicted_variance_plug_in_value() {
        // d = 10, v = 1, sigma^2 = 0.01, P0 = 1, worst weight-to-gain ratio 0.25.
        let channel = real_channel(&[1.0, 1.0], 0.1, 1.0);
        let stats = NormalizationStats::new(0.0, 1.0).unwrap();
        let w = WeightVector::new(vec![0.5, 0.5]).unwrap();
        let v = predict_variance(10, &stats, &channel, &w).unwrap();
        assert_close(v, 0.025, 1e-15);
    }

    #[test]
    fn predicted_variance_zero_noise() {
        let channel = real_channel(&[0.9, 1.1], 0.0, 1.0);
        let stats = NormalizationStats::new(0.2, 0.5).unwrap();
        let w = WeightVector::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(predict_variance(64, &stats, &channel, &w).unwrap(), 0.0);
    }

    #[test]
    fn predicted_variance_matches_monte_carlo() {
        let dim = 8;
        let draws = 100_000;
        let mut grads = [vec![0.5; 8], vec![-0.25; 8], vec![1.5; 8]];
        for (i, g) in grads.iter_mut().enumerate() {
            for (j, x) in g.iter_mut().enumerate() {
                *x += 0.3 * ((i + 2) as f64 * j as f64).cos();
            }
        }
        let channel = real_channel(&[1.2, 0.8, 0.5], 0.4, 2.0);
        let w = WeightVector::new(vec![0.2, 0.5, 0.3]).unwrap();
        let local: Vec<NormalizationStats> = grads
            .iter()
            .map(|g| NormalizationStats::from_gradient(g).unwrap())
            .collect();
        let stats = aggregate_stats(&local, &w).unwrap();
        let symbols: Vec<Vec<Complex64>> = grads
            .iter()
            .map(|g| {
                normalize_gradient(g, &stats)
                    .into_iter()
                    .map(|x| Complex64::new(x, 0.0))
                    .collect()
            })
            .collect();
        let plan = optimal_plan(&channel, &w).unwrap();
        let truth: Vec<f64> = (0..dim)
            .map(|i| 0.2 * grads[0][i] + 0.5 * grads[1][i] + 0.3 * grads[2][i])
            .collect();
        let mut rng = derive_stream(13, "var-mc", 0, 0);
        let mut acc = 0.0;
        for _ in 0..draws {
            let y = transmit_and_receive(&symbols, &plan, &channel, &mut rng).unwrap();
            let out = decode(&y, &plan, &stats);
            acc += out
                .estimate
                .iter()
                .zip(&truth)
                .map(|(e, t)| (e - Complex64::new(*t, 0.0)).norm_sqr())
                .sum::<f64>();
        }
        let empirical = acc / draws as f64;
        let predicted = predict_variance(dim, &stats, &channel, &w).unwrap();
        assert!(
            (empirical - predicted).abs() / predicted < 0.05,
            "empirical {empirical} vs predicted {predicted}"
        );
        // The decode-side bookkeeping agrees with the closed form.
        let mut rng2 = derive_stream(13, "var-mc2", 0, 0);
        let y = transmit_and_receive(&symbols, &plan, &channel, &mut rng2).unwrap();
        let out = decode(&y, &plan, &stats);
        assert_close(out.predicted_variance, predicted, 1e-12 * predicted.max(1.0));
    }

    #[test]
    fn variance_scaling_laws_are_exact() {
        let stats = NormalizationStats::new(0.1, 0.7).unwrap();
        let w = WeightVector::new(vec![0.6, 0.4]).unwrap();
        let base = real_channel(&[0.9, 1.4], 0.3, 1.5);
        let double_power = real_channel(&[0.9, 1.4], 0.3, 3.0);
        let double_sigma = real_channel(&[0.9, 1.4], 0.6, 1.5);
        let v0 = predict_variance(32, &stats, &base, &w).unwrap();
        let vp = predict_variance(32, &stats, &double_power, &w).unwrap();
        let vs = predict_variance(32, &stats, &double_sigma, &w).unwrap();
        assert_eq!(vp, v0 / 2.0);
        assert_eq!(vs, v0 * 4.0);
    }

    #[test]
    fn per_link_noise_adds_power() {
        let channel = real_channel(&[1.0, 1.0], 0.1, 1.0)
            .with_per_link_deviations(vec![0.2, 0.3])
            .unwrap();
        assert_close(channel.noise_power(), 0.01 + 0.04 + 0.09, 1e-15);

        let stats = NormalizationStats::new(0.0, 1.0).unwrap();
        let w = WeightVector::new(vec![0.5, 0.5]).unwrap();
        let plan = optimal_plan(&channel, &w).unwrap();
        let symbols = vec![vec![Complex64::new(0.0, 0.0); 4]; 2];
        let draws = 50_000;
        let mut rng = derive_stream(31, "per-link-mc", 0, 0);
        let mut acc = 0.0;
        for _ in 0..draws {
            let y = transmit_and_receive(&symbols, &plan, &channel, &mut rng).unwrap();
            let out = decode(&y, &plan, &stats);
            acc += out.estimate.iter().map(Complex64::norm_sqr).sum::<f64>();
        }
        let empirical = acc / draws as f64;
        let predicted = predict_variance(4, &stats, &channel, &w).unwrap();
        assert!(
            (empirical - predicted).abs() / predicted < 0.05,
            "empirical {empirical} vs predicted {predicted}"
        );
    }

    #[test]
    fn stats_flooring_prevents_zero_division() {
        let stats = NormalizationStats::from_gradient(&[0.0, 0.0, 0.0]).unwrap();
        assert!(stats.variance >= V_FLOOR);
        let normalized = normalize_gradient(&[0.0, 0.0, 0.0], &stats);
        assert!(normalized.iter().all(|x| x.is_finite()));
    }
}
