//! Wall-clock scaling of the perturbation optimization with the horizon.

use std::time::Instant;

use nalgebra::DVector;

use afd_core::horizon::HorizonStats;
use afd_core::model::build_multimodel;
use afd_core::noise::{standard_normal_vector, step_rng, NoisePurpose};
use afd_core::optimizer::optimize_free;

use crate::config::Resolved;
use crate::CliError;

/// Horizon used as the normalization baseline.
pub const BASELINE_N: usize = 8;

/// Mean/stddev optimization wall time per horizon, normalized to the N = 8
/// mean.
#[derive(Debug, Clone)]
pub struct TimingReport {
    pub n_values: Vec<usize>,
    pub mean_ms: Vec<f64>,
    pub stddev_ms: Vec<f64>,
    pub normalized_mean: Vec<f64>,
}

/// Time `optimize_free` per horizon over `repetitions` solves with fresh
/// random baseline-difference perturbations (`d0 + 0.1 ‖d0‖∞ g`, seeded).
/// Statistics construction stays outside the timed region.
pub fn benchmark_horizon(
    resolved: &Resolved,
    n_set: &[usize],
    repetitions: usize,
) -> Result<TimingReport, CliError> {
    if n_set.is_empty() {
        return Err(CliError::Usage("timing: empty horizon set".into()));
    }
    if repetitions < 10 {
        return Err(CliError::Usage(format!(
            "timing: repetitions must be >= 10, got {repetitions}"
        )));
    }
    if !n_set.contains(&BASELINE_N) {
        return Err(CliError::Usage(format!(
            "timing: horizon set must include the N = {BASELINE_N} baseline"
        )));
    }

    let noise = resolved
        .noise_for(&resolved.params)
        .map_err(CliError::from)?;
    let mm = build_multimodel(
        &resolved.params,
        resolved.scenario.dt,
        noise,
        resolved.priors,
    )
    .map_err(CliError::from)?;
    let all_stats: Vec<HorizonStats> = n_set
        .iter()
        .map(|&n| HorizonStats::build(&mm, n).map_err(CliError::from))
        .collect::<Result<_, _>>()?;
    // One untimed warm-up solve per horizon, then interleaved timed rounds
    // so machine-load transients spread evenly over the horizon set.
    for stats in &all_stats {
        let plan = optimize_free(
            stats,
            resolved.priors,
            resolved.scenario.gamma,
            &resolved.optimize_options(0),
        )
        .map_err(CliError::from)?;
        std::hint::black_box(plan.phi);
    }
    let mut times = vec![Vec::with_capacity(repetitions); n_set.len()];
    for rep in 0..repetitions {
        for (slot, stats) in all_stats.iter().enumerate() {
            let scale = 0.1 * stats.d0.amax().max(1e-9);
            let mut rng = step_rng(
                resolved.scenario.seed,
                rep as u64,
                NoisePurpose::Aux,
                n_set[slot] as u64,
            );
            let jitter: DVector<f64> = standard_normal_vector(&mut rng, stats.d0.len()) * scale;
            let perturbed = stats.with_d0(&stats.d0 + jitter).map_err(CliError::from)?;
            let opts = resolved.optimize_options(rep as u64);
            let t0 = Instant::now();
            let plan = optimize_free(&perturbed, resolved.priors, resolved.scenario.gamma, &opts)
                .map_err(CliError::from)?;
            let dt = t0.elapsed().as_secs_f64() * 1e3;
            std::hint::black_box(plan.phi);
            times[slot].push(dt);
        }
    }
    let mut mean_ms = Vec::with_capacity(n_set.len());
    let mut stddev_ms = Vec::with_capacity(n_set.len());
    for series in &times {
        let mean = series.iter().sum::<f64>() / series.len() as f64;
        let var =
            series.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (series.len() - 1) as f64;
        mean_ms.push(mean);
        stddev_ms.push(var.sqrt());
    }
    let baseline = mean_ms[n_set.iter().position(|&n| n == BASELINE_N).unwrap()];
    let normalized_mean = mean_ms.iter().map(|m| m / baseline).collect();
    Ok(TimingReport {
        n_values: n_set.to_vec(),
        mean_ms,
        stddev_ms,
        normalized_mean,
    })
}
