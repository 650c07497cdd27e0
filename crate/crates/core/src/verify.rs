//! Built-in verification suite behind the `verify` CLI subcommand.
//!
//! Each check re-derives an expected value through an independent route
//! (Monte-Carlo draws, exhaustive enumeration, lattice search, finite
//! differences) and compares the production code against it. All streams
//! are derived from the given seed, so a verify run is reproducible.

use num_complex::Complex64;
use rand::Rng;

use crate::datasets::synth_heterogeneous;
use crate::fedsim::{gibbs_energy, schedule, SchedulerSpec};
use crate::models::build_model;
use crate::moo::{
    linear_scalarize, project_simplex, solve_inner_weights, solve_inner_weights_pocs,
    ChebyshevConfig, ObjectiveVector, WeightVector,
};
use crate::ota::{
    aggregate_stats, decode, normalize_gradient, optimal_plan, predict_variance,
    transmit_and_receive, ChannelRealization, NormalizationStats,
};
use crate::rng::derive_stream;

/// Outcome of one verification check.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Check {
            name,
            passed,
            detail,
        }
    }
}

/// Run every built-in check with streams derived from `seed`.
pub fn run_all(seed: u64) -> Vec<Check> {
    vec![
        estimator_unbiasedness(seed),
        variance_law(seed),
        power_feasibility(seed),
        inner_solver_exactness(seed),
        pocs_agreement(seed),
        simplex_projection_optimality(seed),
        gradient_finite_differences(seed),
        gibbs_schedule_quality(seed),
    ]
}

struct Instance {
    channel: ChannelRealization,
    weights: WeightVector,
    stats: NormalizationStats,
    symbols: Vec<Vec<Complex64>>,
    truth: Vec<f64>,
}

fn random_instance(
    clients: usize,
    dim: usize,
    sigma: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Instance {
    let coefficients: Vec<Complex64> = (0..clients)
        .map(|_| {
            loop {
                let h = Complex64::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
                if h.norm() > 0.2 {
                    return h;
                }
            }
        })
        .collect();
    let channel = ChannelRealization::new(coefficients, sigma, 1.0).unwrap();
    let raw: Vec<f64> = (0..clients).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights = WeightVector::new(raw.iter().map(|x| x / total).collect()).unwrap();
    let gradients: Vec<Vec<f64>> = (0..clients)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let local: Vec<NormalizationStats> = gradients
        .iter()
        .map(|g| NormalizationStats::from_gradient(g).unwrap())
        .collect();
    let stats = aggregate_stats(&local, &weights).unwrap();
    let symbols: Vec<Vec<Complex64>> = gradients
        .iter()
        .map(|g| {
            normalize_gradient(g, &stats)
                .into_iter()
                .map(|x| Complex64::new(x, 0.0))
                .collect()
        })
        .collect();
    let mut truth = vec![0.0; dim];
    for (g, w) in gradients.iter().zip(weights.as_slice()) {
        for (t, gi) in truth.iter_mut().zip(g) {
            *t += w * gi;
        }
    }
    Instance {
        channel,
        weights,
        stats,
        symbols,
        truth,
    }
}

fn estimator_unbiasedness(seed: u64) -> Check {
    let draws = 10_000;
    let mut rng = derive_stream(seed, "verify-unbias", 0, 0);
    let instance = random_instance(5, 100, 0.3, &mut rng);
    let plan = optimal_plan(&instance.channel, &instance.weights).unwrap();
    let mut mean = vec![Complex64::new(0.0, 0.0); 100];
    let mut noise = derive_stream(seed, "verify-unbias", 1, 0);
    for _ in 0..draws {
        let y = transmit_and_receive(&instance.symbols, &plan, &instance.channel, &mut noise)
            .unwrap();
        let out = decode(&y, &plan, &instance.stats);
        for (m, v) in mean.iter_mut().zip(&out.estimate) {
            *m += v;
        }
    }
    let mut err = 0.0;
    let mut norm = 0.0;
    for (m, t) in mean.iter().zip(&instance.truth) {
        let avg = m / draws as f64;
        err += (avg - Complex64::new(*t, 0.0)).norm_sqr();
        norm += t * t;
    }
    let relative = err.sqrt() / norm.sqrt();
    Check::new(
        "estimator-unbiasedness",
        relative <= 0.02,
        format!("relative bias {relative:.2e} over {draws} draws (limit 2e-2)"),
    )
}

fn variance_law(seed: u64) -> Check {
    let draws = 20_000;
    let mut worst: f64 = 0.0;
    for case in 0..5 {
        let mut rng = derive_stream(seed, "verify-var", case, 0);
        let sigma = 0.2 + 0.15 * case as f64;
        let instance = random_instance(3, 8, sigma, &mut rng);
        let plan = optimal_plan(&instance.channel, &instance.weights).unwrap();
        let predicted =
            predict_variance(8, &instance.stats, &instance.channel, &instance.weights).unwrap();
        let mut acc = 0.0;
        let mut noise = derive_stream(seed, "verify-var", case, 1);
        for _ in 0..draws {
            let y = transmit_and_receive(&instance.symbols, &plan, &instance.channel, &mut noise)
                .unwrap();
            let out = decode(&y, &plan, &instance.stats);
            acc += out
                .estimate
                .iter()
                .zip(&instance.truth)
                .map(|(e, t)| (e - Complex64::new(*t, 0.0)).norm_sqr())
                .sum::<f64>();
        }
        let empirical = acc / draws as f64;
        worst = worst.max((empirical - predicted).abs() / predicted);
    }
    Check::new(
        "variance-law",
        worst <= 0.05,
        format!("worst relative deviation {worst:.2e} over 5 instances (limit 5e-2)"),
    )
}

fn power_feasibility(seed: u64) -> Check {
    let mut rng = derive_stream(seed, "verify-power", 0, 0);
    let mut worst_violation: f64 = 0.0;
    let mut worst_binding: f64 = 0.0;
    for _ in 0..300 {
        let clients = rng.random_range(1..8);
        let instance = random_instance(clients, 4, 0.1, &mut rng);
        let power = rng.random_range(0.25..4.0);
        let channel = ChannelRealization::new(instance.channel.coefficients.clone(), 0.1, power)
            .unwrap();
        let plan = optimal_plan(&channel, &instance.weights).unwrap();
        let mut binding = f64::INFINITY;
        for b in &plan.transmit_scalars {
            worst_violation = worst_violation.max(b.norm_sqr() - power);
            binding = binding.min((b.norm_sqr() - power).abs());
        }
        worst_binding = worst_binding.max(binding);
    }
    Check::new(
        "power-feasibility",
        worst_violation <= 1e-12 && worst_binding <= 1e-9,
        format!(
            "worst overshoot {worst_violation:.2e} (limit 1e-12), worst binding gap {worst_binding:.2e} (limit 1e-9)"
        ),
    )
}

/// Exhaustive lattice maximizer over the simplex for K = 3. Instances are
/// generated on the lattice so the optimum is a lattice point.
fn lattice_oracle(scores: &[f64; 3], avg: &[f64; 3], epsilon: f64, step_inv: i64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for i in 0..=step_inv {
        for j in 0..=(step_inv - i) {
            let k = step_inv - i - j;
            let w = [
                i as f64 / step_inv as f64,
                j as f64 / step_inv as f64,
                k as f64 / step_inv as f64,
            ];
            if w.iter().zip(avg).all(|(wi, ai)| (wi - ai).abs() <= epsilon + 1e-12) {
                let value: f64 = w.iter().zip(scores).map(|(a, b)| a * b).sum();
                best = best.max(value);
            }
        }
    }
    best
}

fn inner_solver_exactness(seed: u64) -> Check {
    let mut rng = derive_stream(seed, "verify-inner", 0, 0);
    let step_inv = 1000i64;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        // Lattice-valued averaging weights and radius keep the true optimum
        // on the grid the oracle enumerates.
        let a = rng.random_range(50..900);
        let b = rng.random_range(1..(999 - a).max(2));
        let avg = [
            a as f64 / step_inv as f64,
            b as f64 / step_inv as f64,
            (step_inv - a - b) as f64 / step_inv as f64,
        ];
        let epsilon = rng.random_range(1..=1000) as f64 / step_inv as f64;
        let scores = [
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        ];
        let objectives = ObjectiveVector::new(scores.to_vec()).unwrap();
        let cfg = ChebyshevConfig::with_zero_reference(
            epsilon,
            WeightVector::new(avg.to_vec()).unwrap(),
        )
        .unwrap();
        let solved = solve_inner_weights(&objectives, &cfg).unwrap();
        let achieved = linear_scalarize(&objectives, &solved).unwrap();
        let oracle = lattice_oracle(&scores, &avg, epsilon, step_inv);
        worst = worst.max((achieved - oracle).abs());
    }
    // Identity at zero radius and vertex at unit radius.
    let avg = WeightVector::new(vec![0.2, 0.3, 0.5]).unwrap();
    let objectives = ObjectiveVector::new(vec![2.0, -1.0, 0.5]).unwrap();
    let zero_cfg = ChebyshevConfig::with_zero_reference(0.0, avg.clone()).unwrap();
    let identity_ok =
        solve_inner_weights(&objectives, &zero_cfg).unwrap().as_slice() == avg.as_slice();
    let unit_cfg = ChebyshevConfig::with_zero_reference(1.0, avg).unwrap();
    let vertex_ok =
        solve_inner_weights(&objectives, &unit_cfg).unwrap().as_slice() == [1.0, 0.0, 0.0];
    Check::new(
        "inner-solver-exactness",
        worst <= 1e-6 && identity_ok && vertex_ok,
        format!(
            "worst grid deviation {worst:.2e} (limit 1e-6), zero-radius identity {identity_ok}, unit-radius vertex {vertex_ok}"
        ),
    )
}

fn pocs_agreement(seed: u64) -> Check {
    let mut rng = derive_stream(seed, "verify-pocs", 0, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let k = rng.random_range(2..=10);
        let f: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..3.0)).collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let avg: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let epsilon = rng.random_range(0.0..1.0f64);
        let objectives = ObjectiveVector::new(f).unwrap();
        let cfg = ChebyshevConfig::with_zero_reference(
            epsilon,
            WeightVector::new(avg).unwrap(),
        )
        .unwrap();
        let exact = solve_inner_weights(&objectives, &cfg).unwrap();
        let pocs = solve_inner_weights_pocs(&objectives, &cfg, 500.0, 2_000).unwrap();
        let gap = linear_scalarize(&objectives, &exact).unwrap()
            - linear_scalarize(&objectives, &pocs).unwrap();
        worst = worst.max(gap.abs());
    }
    Check::new(
        "pocs-agreement",
        worst <= 1e-6,
        format!("worst objective gap {worst:.2e} over 200 instances (limit 1e-6)"),
    )
}

fn simplex_projection_optimality(seed: u64) -> Check {
    let mut rng = derive_stream(seed, "verify-proj", 0, 0);
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let k = rng.random_range(2..8);
        let v: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = project_simplex(&v).unwrap();
        let d_proj: f64 = p
            .as_slice()
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        for _ in 0..20 {
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0f64)).collect();
            let total: f64 = raw.iter().sum();
            let z: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let d_z: f64 = z.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
            if d_proj > d_z + 1e-12 {
                ok = false;
                worst = worst.max(d_proj - d_z);
            }
        }
    }
    Check::new(
        "simplex-projection",
        ok,
        format!("worst suboptimality {worst:.2e} against sampled feasible points"),
    )
}

fn gradient_finite_differences(seed: u64) -> Check {
    let data = synth_heterogeneous(1, 24, 4, 3, 1.0, seed ^ 0x5eed).unwrap().remove(0);
    let models = [
        build_model("quadratic", 4, 0, &[]).unwrap(),
        build_model("linear", 4, 0, &[]).unwrap(),
        build_model("logistic", 4, 3, &[]).unwrap(),
        build_model("mlp", 4, 3, &[6, 5]).unwrap(),
    ];
    let mut rng = derive_stream(seed, "verify-fd", 0, 0);
    let mut worst: f64 = 0.0;
    for model in &models {
        for _ in 0..3 {
            let params: Vec<f64> = (0..model.param_len())
                .map(|_| rng.random_range(-0.8..0.8))
                .collect();
            let analytic = model.mean_gradient(&params, &data, None);
            let step = 1e-5;
            let mut probe = params.clone();
            let mut numeric = vec![0.0; params.len()];
            for i in 0..params.len() {
                probe[i] = params[i] + step;
                let plus = model.mean_loss(&probe, &data, None);
                probe[i] = params[i] - step;
                let minus = model.mean_loss(&probe, &data, None);
                probe[i] = params[i];
                numeric[i] = (plus - minus) / (2.0 * step);
            }
            let diff: f64 = analytic
                .iter()
                .zip(&numeric)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
            worst = worst.max(diff / norm.max(1e-12));
        }
    }
    Check::new(
        "gradient-finite-differences",
        worst <= 1e-6,
        format!("worst relative error {worst:.2e} across 4 models (limit 1e-6)"),
    )
}

fn gibbs_schedule_quality(seed: u64) -> Check {
    let mut hits = 0;
    let trials = 30;
    for trial in 0..trials {
        let mut setup = derive_stream(seed, "verify-gibbs", trial, 0);
        let coefficients: Vec<Complex64> = (0..6)
            .map(|_| Complex64::new(setup.random_range(0.1..1.5), 0.0))
            .collect();
        let channel = ChannelRealization::new(coefficients, 0.4, 1.0).unwrap();
        let raw: Vec<f64> = (0..6).map(|_| setup.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights = WeightVector::new(raw.iter().map(|x| x / total).collect()).unwrap();
        let spec = SchedulerSpec::Gibbs {
            target_size: 3,
            iters: 200,
            temp0: 1.0,
            cooling: 0.97,
            mu: 1.0,
            grad_norm_proxy: 1.0,
        };
        let mut rng = derive_stream(seed, "verify-gibbs", trial, 1);
        let selected = schedule(&spec, &channel, &weights, 20, &mut rng).unwrap();
        let achieved = gibbs_energy(&selected, &channel, &weights, 20, 1.0, 1.0).unwrap();
        let mut minimum = f64::INFINITY;
        for a in 0..6 {
            for b in a + 1..6 {
                for c in b + 1..6 {
                    minimum = minimum
                        .min(gibbs_energy(&[a, b, c], &channel, &weights, 20, 1.0, 1.0).unwrap());
                }
            }
        }
        if achieved <= minimum * 1.05 {
            hits += 1;
        }
    }
    Check::new(
        "gibbs-schedule-quality",
        hits * 100 >= trials * 90,
        format!("{hits}/{trials} runs within 5% of the exhaustive optimum (limit 90%)"),
    )
}
