//! Closed-loop stochastic simulation and detector execution.
//!
//! The state-space models are the plant: the truth is one mode simulated
//! with seeded Gaussian noise, the detector runs both steady-state filters
//! over the measured outputs and updates the mode posterior each step.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::kalman::{build_filter, filter_step, DareOptions, SteadyStateFilter};
use crate::mmkf::{decide, posterior_update, residuals, LikelihoodForm, PosteriorState, Residuals};
use crate::model::{
    build_multimodel, fault_onset_state, DiscreteMode, InverterParams, ModeId, MultiModel,
    NoiseSpec,
};
use crate::noise::{standard_normal_vector, step_rng, NoisePurpose};
use crate::optimizer::{optimize_free, OptimizeOptions, PerturbationPlan};

/// How scenario initial means are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitPolicy {
    /// Zero means for both modes (the library default).
    ZeroMean,
    /// Detection window starts at fault onset: the fault-free hypothesis at
    /// its closed-loop steady state, the faulty one with inherited currents
    /// clamped at the FCL limit (see [`fault_onset_state`]).
    FaultOnset,
    /// Keep whatever means the noise template already carries.
    AsConfigured,
}

/// Replace the initial means of a noise template according to the policy.
pub fn resolve_noise(
    params: &InverterParams,
    template: &NoiseSpec,
    policy: InitPolicy,
) -> Result<NoiseSpec> {
    let mut noise = template.clone();
    match policy {
        InitPolicy::ZeroMean => {
            noise.x0_mean = crate::model::InitialMean::Zero;
            Ok(noise)
        }
        InitPolicy::FaultOnset => {
            let (x_h, x_f) = fault_onset_state(params)?;
            Ok(noise.with_means(x_h, x_f))
        }
        InitPolicy::AsConfigured => Ok(noise),
    }
}

/// Multiplicative factors applied to selected parameters of the truth for
/// robustness runs. The FCL limits stay at their configured values: they are
/// controller settings, not functions of the actual plant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamPerturbations {
    pub kp_i: f64,
    pub ki_i: f64,
    pub kp_v: f64,
    pub ki_v: f64,
    pub r: f64,
}

impl Default for ParamPerturbations {
    fn default() -> Self {
        Self {
            kp_i: 1.0,
            ki_i: 1.0,
            kp_v: 1.0,
            ki_v: 1.0,
            r: 1.0,
        }
    }
}

impl ParamPerturbations {
    pub fn validate(&self) -> Result<()> {
        let all = [self.kp_i, self.ki_i, self.kp_v, self.ki_v, self.r];
        if all.iter().all(|f| f.is_finite() && *f > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidParams(
                "perturbation factors must be finite and positive".into(),
            ))
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }

    pub fn apply(&self, params: &InverterParams) -> InverterParams {
        let mut p = params.clone();
        p.kp_i *= self.kp_i;
        p.ki_i *= self.ki_i;
        p.kp_v *= self.kp_v;
        p.ki_v *= self.ki_v;
        p.r *= self.r;
        p
    }
}

/// One simulated detection scenario.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub true_mode: ModeId,
    /// Detection horizon N; traces have N+1 rows.
    pub n_steps: usize,
    pub dt: f64,
    pub gamma: f64,
    pub seed: u64,
    /// Posterior level defining "detected" (default 0.95).
    pub detect_threshold: f64,
    /// Trigger distance threshold in amps (default 5% of the largest FCL limit).
    pub trigger_threshold: f64,
    pub likelihood: LikelihoodForm,
    pub init: InitPolicy,
    pub param_perturbations: ParamPerturbations,
}

impl ScenarioConfig {
    pub fn new(true_mode: ModeId, n_steps: usize, params: &InverterParams) -> Self {
        Self {
            true_mode,
            n_steps,
            dt: 1e-3,
            gamma: 0.5,
            seed: 1,
            detect_threshold: 0.95,
            trigger_threshold: 0.05 * params.zeta_u_d.abs().max(params.zeta_u_q.abs()).max(1e-9),
            likelihood: LikelihoodForm::ExponentialNorm,
            init: InitPolicy::FaultOnset,
            param_perturbations: ParamPerturbations::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::InvalidParams("n_steps must be >= 1".into()));
        }
        if self.dt <= 0.0 || self.dt.is_nan() {
            return Err(Error::InvalidParams("dt must be > 0".into()));
        }
        if self.gamma < 0.0 || !self.gamma.is_finite() {
            return Err(Error::InvalidParams("gamma must be >= 0".into()));
        }
        if !(self.detect_threshold > 0.5 && self.detect_threshold < 1.0) {
            return Err(Error::InvalidParams(
                "detect_threshold must lie in (0.5, 1)".into(),
            ));
        }
        if self.trigger_threshold <= 0.0 || self.trigger_threshold.is_nan() {
            return Err(Error::InvalidParams("trigger_threshold must be > 0".into()));
        }
        self.param_perturbations.validate()
    }
}

/// Simulated outputs (and states, for diagnostics) of the true system.
#[derive(Debug, Clone)]
pub struct TruthTrace {
    /// `y_0..y_N`.
    pub y: Vec<DVector<f64>>,
    /// `x_0..x_N`.
    pub x: Vec<DVector<f64>>,
}

/// Simulate `x_{k+1} = Ad x_k + Bd u_k + w_k`, `y_k = C x_k + v_k` with the
/// plan entries injected into the perturbation columns. All noise is drawn
/// through the counter-based generator at `(seed, stream, purpose, k)`.
pub fn simulate_truth(
    mode: &DiscreteMode,
    delta_u: &[[f64; 2]],
    noise: &NoiseSpec,
    n_steps: usize,
    seed: u64,
    stream: u64,
) -> Result<TruthTrace> {
    if delta_u.len() != n_steps {
        return Err(Error::DimensionMismatch(format!(
            "plan has {} entries, horizon needs {n_steps}",
            delta_u.len()
        )));
    }
    let n = mode.n_states();
    let p = mode.n_outputs();
    let sqrt_w = noise.sigma_w.sqrt_diag(n)?;
    let sqrt_v = noise.sigma_v.sqrt_diag(p)?;
    let sqrt_0 = noise.sigma_0.sqrt_diag(n)?;
    let mean = noise.x0_mean.mean_for(mode.mode_id, n)?;

    let mut rng0 = step_rng(seed, stream, NoisePurpose::InitState, 0);
    let mut x = &mean + sqrt_0.component_mul(&standard_normal_vector(&mut rng0, n));
    let mut ys = Vec::with_capacity(n_steps + 1);
    let mut xs = Vec::with_capacity(n_steps + 1);
    for (k, du) in delta_u
        .iter()
        .chain(std::iter::once(&[0.0, 0.0]))
        .enumerate()
    {
        let mut rng_v = step_rng(seed, stream, NoisePurpose::Measurement, k as u64);
        let y = &mode.c * &x + sqrt_v.component_mul(&standard_normal_vector(&mut rng_v, p));
        ys.push(y);
        xs.push(x.clone());
        if k < n_steps {
            let u = mode.input_with_perturbation(*du);
            let mut rng_w = step_rng(seed, stream, NoisePurpose::Process, k as u64);
            x = &mode.ad * &x
                + &mode.bd * u
                + sqrt_w.component_mul(&standard_normal_vector(&mut rng_w, n));
        }
    }
    Ok(TruthTrace { y: ys, x: xs })
}

/// Reconstruction of the PCC voltage deviation from measured currents:
/// the load-side voltage for a current trajectory is `R·I_i`, so the
/// deviation channel is `vref − R·y`. The same map applies in both modes;
/// during a fault the realized current tracks `ζ_U`, which is what makes the
/// faulty deviation larger under the same perturbation.
#[derive(Debug, Clone, Copy)]
pub struct VoltageMap {
    pub vref: [f64; 2],
    pub load_r: f64,
}

impl VoltageMap {
    pub fn from_params(params: &InverterParams) -> Self {
        Self {
            vref: [params.vref_d, params.vref_q],
            load_r: params.r,
        }
    }

    pub fn deviation(&self, y: &DVector<f64>) -> [f64; 2] {
        [
            self.vref[0] - self.load_r * y[0],
            self.vref[1] - self.load_r * y[1],
        ]
    }
}

/// Per-step record of a detector run.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub step: usize,
    pub time_s: f64,
    pub y: [f64; 2],
    pub y_pred_h: [f64; 2],
    pub y_pred_f: [f64; 2],
    pub residuals: Residuals,
    /// Posterior after incorporating `y_k`.
    pub p_h: f64,
    pub p_f: f64,
    pub delta_u: [f64; 2],
    pub v_dev: [f64; 2],
}

/// Outcome of one detector run.
#[derive(Debug, Clone)]
pub struct DetectionReport {
    pub decided: ModeId,
    pub correct: bool,
    /// First step at which the true mode's posterior reached the threshold.
    pub detection_steps: Option<usize>,
    /// Per-element RMS of the voltage-deviation channel over the window.
    pub tracking_error_rms: f64,
    pub phi_used: f64,
    pub gamma_used: f64,
}

impl DetectionReport {
    /// Detection step with undetected runs mapped to the sentinel `N + 1`.
    pub fn detection_or_sentinel(&self, n_steps: usize) -> f64 {
        self.detection_steps
            .map_or((n_steps + 1) as f64, |k| k as f64)
    }
}

/// The two per-mode steady-state filters.
#[derive(Debug, Clone)]
pub struct FilterBank {
    pub h: SteadyStateFilter,
    pub f: SteadyStateFilter,
}

pub fn build_filter_bank(mm: &MultiModel, opts: DareOptions) -> Result<FilterBank> {
    Ok(FilterBank {
        h: build_filter(&mm.mode_h, &mm.noise, opts)?,
        f: build_filter(&mm.mode_f, &mm.noise, opts)?,
    })
}

/// Run the multiple-model detector over a measured output trace.
///
/// Both filters start at the multimodel's configured initial means. Each
/// step produces predictions, residual norms, and a posterior update; the
/// report records the final decision and the threshold-crossing step of the
/// true mode's posterior.
pub fn run_mmkf(
    trace: &TruthTrace,
    mm: &MultiModel,
    filters: &FilterBank,
    plan: &PerturbationPlan,
    scenario: &ScenarioConfig,
    vmap: &VoltageMap,
) -> Result<(Vec<TraceRecord>, DetectionReport)> {
    scenario.validate()?;
    let n = scenario.n_steps;
    if trace.y.len() != n + 1 {
        return Err(Error::DimensionMismatch(format!(
            "trace has {} outputs, horizon needs {}",
            trace.y.len(),
            n + 1
        )));
    }
    if plan.delta_u.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "plan has {} entries, horizon needs {n}",
            plan.delta_u.len()
        )));
    }
    if mm.mode_h.n_outputs() != 2 {
        return Err(Error::DimensionMismatch(
            "trace records assume the two-channel dq output".into(),
        ));
    }

    let mut xhat_h = mm
        .noise
        .x0_mean
        .mean_for(ModeId::FaultFree, mm.mode_h.n_states())?;
    let mut xhat_f = mm
        .noise
        .x0_mean
        .mean_for(ModeId::Faulty, mm.mode_f.n_states())?;
    let mut state = PosteriorState::new(mm.prior_h, mm.prior_f)?;
    let mut records = Vec::with_capacity(n + 1);
    let mut detection: Option<usize> = None;
    let mut sq_dev_sum = 0.0;

    for k in 0..=n {
        let y = &trace.y[k];
        let y_pred_h = &mm.mode_h.c * &xhat_h;
        let y_pred_f = &mm.mode_f.c * &xhat_f;
        let res = residuals(y, &y_pred_h, &y_pred_f)?;
        state = posterior_update(
            state,
            res,
            filters.h.beta,
            filters.f.beta,
            scenario.likelihood,
        )?;
        if detection.is_none() && state.prob(scenario.true_mode) >= scenario.detect_threshold {
            detection = Some(k);
        }
        let du = if k < n { plan.delta_u[k] } else { [0.0, 0.0] };
        let v_dev = vmap.deviation(y);
        sq_dev_sum += v_dev[0] * v_dev[0] + v_dev[1] * v_dev[1];
        records.push(TraceRecord {
            step: k,
            time_s: k as f64 * scenario.dt,
            y: [y[0], y[1]],
            y_pred_h: [y_pred_h[0], y_pred_h[1]],
            y_pred_f: [y_pred_f[0], y_pred_f[1]],
            residuals: res,
            p_h: state.p_h(),
            p_f: state.p_f(),
            delta_u: du,
            v_dev,
        });
        if k < n {
            let u_h = mm.mode_h.input_with_perturbation(plan.delta_u[k]);
            let u_f = mm.mode_f.input_with_perturbation(plan.delta_u[k]);
            xhat_h = filter_step(&filters.h, &mm.mode_h, &xhat_h, &u_h, y)?.xhat_next;
            xhat_f = filter_step(&filters.f, &mm.mode_f, &xhat_f, &u_f, y)?.xhat_next;
        }
    }

    let decided = decide(state);
    let report = DetectionReport {
        decided,
        correct: decided == scenario.true_mode,
        detection_steps: detection,
        tracking_error_rms: (sq_dev_sum / (2.0 * (n + 1) as f64)).sqrt(),
        phi_used: plan.phi,
        gamma_used: plan.gamma,
    };
    Ok((records, report))
}

/// Simulate the truth and run the detector in one call. `stream` separates
/// Monte Carlo repetitions under one scenario seed.
#[allow(clippy::too_many_arguments)]
pub fn run_scenario(
    truth_mode: &DiscreteMode,
    truth_noise: &NoiseSpec,
    mm: &MultiModel,
    filters: &FilterBank,
    plan: &PerturbationPlan,
    scenario: &ScenarioConfig,
    vmap: &VoltageMap,
    stream: u64,
) -> Result<(Vec<TraceRecord>, DetectionReport)> {
    let trace = simulate_truth(
        truth_mode,
        &plan.delta_u,
        truth_noise,
        scenario.n_steps,
        scenario.seed,
        stream,
    )?;
    run_mmkf(&trace, mm, filters, plan, scenario, vmap)
}

/// Passive trigger: true once the reference current comes within
/// `threshold` of the FCL limit on any limited axis at any step
/// (`m_k = min_axis |I_ref − ζ_U|`). Axes with a zero limit carry no
/// limiter and are skipped.
pub fn trigger_monitor(i_ref: &[[f64; 2]], zeta: [f64; 2], threshold: f64) -> Result<bool> {
    if threshold <= 0.0 || threshold.is_nan() {
        return Err(Error::InvalidParams("trigger threshold must be > 0".into()));
    }
    if zeta.iter().all(|z| *z == 0.0) {
        return Err(Error::InvalidParams(
            "trigger needs at least one nonzero FCL limit".into(),
        ));
    }
    Ok(i_ref.iter().any(|ir| {
        (0..2).any(|axis| zeta[axis] != 0.0 && (ir[axis] - zeta[axis]).abs() <= threshold)
    }))
}

/// Reference current produced by the fault-free voltage loop at a given
/// state: `I_ref = kp_v (vref − I) + x_int + Δu` per axis, with `x_int` the
/// voltage-PI integrator state. This is the proportional path as the state
/// matrices encode it, so at steady state the reference equals the current.
pub fn current_reference_fault_free(
    params: &InverterParams,
    x: &DVector<f64>,
    delta_u: [f64; 2],
) -> Result<[f64; 2]> {
    if x.len() != 6 {
        return Err(Error::DimensionMismatch(format!(
            "fault-free state must have 6 entries, got {}",
            x.len()
        )));
    }
    let vref = [params.vref_d, params.vref_q];
    let mut out = [0.0; 2];
    for axis in 0..2 {
        let current = x[1 + 3 * axis];
        out[axis] = params.kp_v * (vref[axis] - current) + x[2 + 3 * axis] + delta_u[axis];
    }
    Ok(out)
}

/// Per-element RMS deviation between a trace and a reference of equal length.
pub fn tracking_error(trace: &[DVector<f64>], reference: &[DVector<f64>]) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::InvalidParams("tracking_error: empty trace".into()));
    }
    if trace.len() != reference.len() {
        return Err(Error::DimensionMismatch(format!(
            "tracking_error: {} vs {} samples",
            trace.len(),
            reference.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (t, r) in trace.iter().zip(reference.iter()) {
        if t.len() != r.len() {
            return Err(Error::DimensionMismatch(
                "tracking_error: channel mismatch".into(),
            ));
        }
        for (a, b) in t.iter().zip(r.iter()) {
            sum += (a - b) * (a - b);
            count += 1;
        }
    }
    Ok((sum / count as f64).sqrt())
}

/// Median with the usual even-length average. Panics on empty input.
pub fn median_f64(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// One robustness case: a labelled set of truth-side parameter factors.
#[derive(Debug, Clone)]
pub struct RobustnessCase {
    pub label: String,
    pub factors: ParamPerturbations,
}

/// Aggregated outcome of one robustness case.
#[derive(Debug, Clone)]
pub struct RobustnessReport {
    pub label: String,
    pub correct_rate: f64,
    /// Median detection step over the runs (sentinel N+1 when undetected).
    pub median_detection_steps: f64,
    /// Mean |Δu| of the plan re-optimized under the perturbed parameters.
    pub replanned_mean_abs: f64,
    pub replanned_inf_norm: f64,
}

/// Detector built on the nominal models; truth simulated with perturbed
/// parameters (FCL limits pinned at nominal). Each case also re-optimizes
/// the plan under the perturbed parameters and records its magnitude.
#[allow(clippy::too_many_arguments)]
pub fn robustness_experiment(
    params: &InverterParams,
    scenario: &ScenarioConfig,
    noise_template: &NoiseSpec,
    priors: (f64, f64),
    plan: &PerturbationPlan,
    cases: &[RobustnessCase],
    runs: usize,
    dare_opts: DareOptions,
    opt_opts: &OptimizeOptions,
) -> Result<Vec<RobustnessReport>> {
    scenario.validate()?;
    if runs == 0 {
        return Err(Error::InvalidParams("robustness needs runs >= 1".into()));
    }
    let nominal_noise = resolve_noise(params, noise_template, scenario.init)?;
    let mm = build_multimodel(params, scenario.dt, nominal_noise, priors)?;
    let filters = build_filter_bank(&mm, dare_opts)?;
    let vmap = VoltageMap::from_params(params);

    let mut reports = Vec::with_capacity(cases.len());
    for case in cases {
        case.factors.validate()?;
        let perturbed = case.factors.apply(params);
        let truth_noise = resolve_noise(&perturbed, noise_template, scenario.init)?;
        let truth_mm = build_multimodel(&perturbed, scenario.dt, truth_noise.clone(), priors)?;
        let truth_mode = truth_mm.mode(scenario.true_mode).clone();

        let mut correct = 0usize;
        let mut detections = Vec::with_capacity(runs);
        for run in 0..runs {
            let (_, report) = run_scenario(
                &truth_mode,
                &truth_noise,
                &mm,
                &filters,
                plan,
                scenario,
                &vmap,
                run as u64,
            )?;
            correct += report.correct as usize;
            detections.push(report.detection_or_sentinel(scenario.n_steps));
        }

        let stats = crate::horizon::HorizonStats::build(&truth_mm, scenario.n_steps)?;
        let replanned = optimize_free(&stats, priors, plan.gamma, opt_opts)?;
        reports.push(RobustnessReport {
            label: case.label.clone(),
            correct_rate: correct as f64 / runs as f64,
            median_detection_steps: median_f64(&detections),
            replanned_mean_abs: replanned.mean_abs(),
            replanned_inf_norm: replanned.inf_norm(),
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::horizon::HorizonStats;
    use crate::model::{assemble_multimodel, fault_free_steady_state, CovSpec, InitialMean};

    fn params() -> InverterParams {
        InverterParams::nominal()
    }

    fn onset_mm() -> MultiModel {
        let p = params();
        let noise = resolve_noise(&p, &NoiseSpec::default_spec(), InitPolicy::FaultOnset).unwrap();
        build_multimodel(&p, 1e-3, noise, (0.5, 0.5)).unwrap()
    }

    fn zero_noise(mean_from: &NoiseSpec) -> NoiseSpec {
        NoiseSpec {
            sigma_w: CovSpec::Scalar(0.0),
            sigma_v: CovSpec::Scalar(0.0),
            sigma_0: CovSpec::Scalar(0.0),
            x0_mean: mean_from.x0_mean.clone(),
        }
    }

    #[test]
    fn deterministic_fixed_point_without_noise() {
        // Steady-state start, zero noise everywhere: the output is constant.
        let p = params();
        let xss = fault_free_steady_state(&p).unwrap();
        let mm = onset_mm();
        let mut noise = zero_noise(&mm.noise);
        noise.x0_mean = InitialMean::PerMode {
            fault_free: xss.iter().copied().collect(),
            faulty: vec![0.0; 4],
        };
        let plan = vec![[0.0, 0.0]; 6];
        let trace = simulate_truth(&mm.mode_h, &plan, &noise, 6, 9, 0).unwrap();
        // Constant up to fp drift from the 1e6-scale integrator state.
        for y in &trace.y {
            assert!((y - &trace.y[0]).amax() < 1e-6);
        }
        assert!((trace.y[0][0] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn same_seed_bitwise_identical() {
        let mm = onset_mm();
        let plan = vec![[0.1, -0.2]; 8];
        let a = simulate_truth(&mm.mode_f, &plan, &mm.noise, 8, 77, 3).unwrap();
        let b = simulate_truth(&mm.mode_f, &plan, &mm.noise, 8, 77, 3).unwrap();
        for (ya, yb) in a.y.iter().zip(b.y.iter()) {
            assert_eq!(ya, yb);
        }
        let c = simulate_truth(&mm.mode_f, &plan, &mm.noise, 8, 78, 3).unwrap();
        assert_ne!(a.y[0], c.y[0]);
    }

    #[test]
    fn monte_carlo_mean_matches_analytic() {
        // Sample mean of y at k = 3 against the analytic mean trajectory.
        let mm = onset_mm();
        let n = 3usize;
        let plan = vec![[0.3, -0.1]; n];
        let inputs: Vec<DVector<f64>> = plan
            .iter()
            .map(|du| mm.mode_f.input_with_perturbation(*du))
            .collect();
        let x0 = mm.noise.x0_mean.mean_for(ModeId::Faulty, 4).unwrap();
        let xs = crate::horizon::mean_state_trajectory(&mm.mode_f, &x0, &inputs).unwrap();
        let mean_y = &mm.mode_f.c * &xs[n];
        let runs = 100_000usize;
        let mut acc = DVector::<f64>::zeros(2);
        for r in 0..runs {
            let t = simulate_truth(&mm.mode_f, &plan, &mm.noise, n, 5, r as u64).unwrap();
            acc += &t.y[n];
        }
        acc /= runs as f64;
        // Output std at k=3 is below 0.12; four standard errors of the mean.
        let se = 0.12 / (runs as f64).sqrt();
        assert!(
            (acc[0] - mean_y[0]).abs() < 4.0 * se,
            "{} vs {}",
            acc[0],
            mean_y[0]
        );
        assert!(
            (acc[1] - mean_y[1]).abs() < 4.0 * se,
            "{} vs {}",
            acc[1],
            mean_y[1]
        );
    }

    #[test]
    fn identical_modes_keep_even_posterior() {
        let mm0 = onset_mm();
        let mut twin = mm0.mode_h.clone();
        twin.mode_id = ModeId::Faulty;
        let noise = NoiseSpec {
            x0_mean: InitialMean::PerMode {
                fault_free: mm0
                    .noise
                    .x0_mean
                    .mean_for(ModeId::FaultFree, 6)
                    .unwrap()
                    .iter()
                    .copied()
                    .collect(),
                faulty: mm0
                    .noise
                    .x0_mean
                    .mean_for(ModeId::FaultFree, 6)
                    .unwrap()
                    .iter()
                    .copied()
                    .collect(),
            },
            ..mm0.noise.clone()
        };
        let mm = assemble_multimodel(mm0.mode_h.clone(), twin, noise, (0.5, 0.5)).unwrap();
        let filters = build_filter_bank(&mm, DareOptions::default()).unwrap();
        let p = params();
        let scenario = ScenarioConfig::new(ModeId::Faulty, 8, &p);
        let stats = HorizonStats::build(&mm, 8).unwrap();
        let plan = PerturbationPlan::zero(&stats, (0.5, 0.5), 0.0).unwrap();
        let trace =
            simulate_truth(&mm.mode_f, &plan.delta_u, &mm.noise, 8, scenario.seed, 0).unwrap();
        let (records, _) = run_mmkf(
            &trace,
            &mm,
            &filters,
            &plan,
            &scenario,
            &VoltageMap::from_params(&p),
        )
        .unwrap();
        for r in &records {
            assert_eq!(r.p_h, 0.5);
            assert_eq!(r.p_f, 0.5);
        }
    }

    #[test]
    fn zero_noise_true_mode_posterior_nondecreasing() {
        // Matched faulty model, no noise: the faulty filter's residual is
        // identically zero and its posterior never decreases.
        let p = params();
        let mm = onset_mm();
        let filters = build_filter_bank(&mm, DareOptions::default()).unwrap();
        let scenario = ScenarioConfig::new(ModeId::Faulty, 8, &p);
        let stats = HorizonStats::build(&mm, 8).unwrap();
        let plan = optimize_free(&stats, (0.5, 0.5), 0.5, &OptimizeOptions::default()).unwrap();
        let noise = zero_noise(&mm.noise);
        let trace = simulate_truth(&mm.mode_f, &plan.delta_u, &noise, 8, 0, 0).unwrap();
        let (records, report) = run_mmkf(
            &trace,
            &mm,
            &filters,
            &plan,
            &scenario,
            &VoltageMap::from_params(&p),
        )
        .unwrap();
        let mut last = 0.0;
        for r in &records {
            assert!(r.residuals.alpha_f < 1e-9);
            assert!(r.p_f >= last - 1e-15);
            last = r.p_f;
        }
        assert!(report.correct);
    }

    #[test]
    fn current_reference_consistent_at_steady_state() {
        let p = params();
        let xss = fault_free_steady_state(&p).unwrap();
        let iref = current_reference_fault_free(&p, &xss, [0.0, 0.0]).unwrap();
        assert!((iref[0] - 6.0).abs() < 1e-9);
        assert!(iref[1].abs() < 1e-9);
        // Distance to the FCL limit at nominal operation is the onset gap.
        assert!(!trigger_monitor(&[iref], [p.zeta_u_d, p.zeta_u_q], 0.05 * p.zeta_u_d).unwrap());
        assert!(trigger_monitor(&[[7.0, 0.0]], [p.zeta_u_d, p.zeta_u_q], 0.36).unwrap());
    }

    #[test]
    fn trigger_monitor_cases() {
        let zeta = [7.2, 0.0];
        let far = vec![[6.0, 0.5]; 4];
        assert!(!trigger_monitor(&far, zeta, 0.36).unwrap());
        let mut touching = far.clone();
        touching.push([7.2, 0.5]);
        assert!(trigger_monitor(&touching, zeta, 0.36).unwrap());
        // Monotone in the threshold.
        for &thr in &[0.4, 0.6, 1.0, 2.0] {
            assert!(trigger_monitor(&touching, zeta, thr).unwrap());
        }
        assert!(trigger_monitor(&far, zeta, 0.0).is_err());
    }

    #[test]
    fn tracking_error_cases() {
        let zeros = vec![DVector::zeros(2); 5];
        assert_eq!(tracking_error(&zeros, &zeros).unwrap(), 0.0);
        let c = vec![DVector::from_vec(vec![3.0, 3.0]); 5];
        assert!((tracking_error(&c, &zeros).unwrap() - 3.0).abs() < 1e-14);
        assert!(tracking_error(&[], &[]).is_err());
    }

    #[test]
    fn tracking_rms_scales_linearly_without_noise() {
        // Fault-free truth from steady state, zero noise: the deviation is
        // linear in the plan, so RMS doubles when the plan doubles.
        let p = params();
        let mm = onset_mm();
        let filters = build_filter_bank(&mm, DareOptions::default()).unwrap();
        let mut scenario = ScenarioConfig::new(ModeId::FaultFree, 8, &p);
        scenario.gamma = 1.0;
        let stats = HorizonStats::build(&mm, 8).unwrap();
        let base = optimize_free(&stats, (0.5, 0.5), 0.5, &OptimizeOptions::default()).unwrap();
        let noise = zero_noise(&mm.noise);
        let mut rms = Vec::new();
        for scale in [1.0, 2.0] {
            let mut plan = base.clone();
            for du in &mut plan.delta_u {
                du[0] *= scale;
                du[1] *= scale;
            }
            plan.gamma = base.gamma * scale;
            let mut sc = scenario.clone();
            sc.gamma = plan.gamma;
            let trace = simulate_truth(&mm.mode_h, &plan.delta_u, &noise, 8, 0, 0).unwrap();
            let (_, report) = run_mmkf(
                &trace,
                &mm,
                &filters,
                &plan,
                &sc,
                &VoltageMap::from_params(&p),
            )
            .unwrap();
            rms.push(report.tracking_error_rms);
        }
        assert!(rms[1] > rms[0]);
        assert!((rms[1] / rms[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn unit_factors_reproduce_baseline() {
        let p = params();
        let scenario = ScenarioConfig::new(ModeId::Faulty, 8, &p);
        let noise = NoiseSpec::default_spec();
        let mm = build_multimodel(
            &p,
            scenario.dt,
            resolve_noise(&p, &noise, scenario.init).unwrap(),
            (0.5, 0.5),
        )
        .unwrap();
        let stats = HorizonStats::build(&mm, 8).unwrap();
        let plan = optimize_free(&stats, (0.5, 0.5), 0.5, &OptimizeOptions::default()).unwrap();
        let cases = vec![
            RobustnessCase {
                label: "nominal".into(),
                factors: ParamPerturbations::default(),
            },
            RobustnessCase {
                label: "again".into(),
                factors: ParamPerturbations {
                    kp_i: 1.0,
                    ..Default::default()
                },
            },
        ];
        let reports = robustness_experiment(
            &p,
            &scenario,
            &noise,
            (0.5, 0.5),
            &plan,
            &cases,
            20,
            DareOptions::default(),
            &OptimizeOptions::default(),
        )
        .unwrap();
        assert_eq!(reports[0].correct_rate, reports[1].correct_rate);
        assert_eq!(
            reports[0].median_detection_steps,
            reports[1].median_detection_steps
        );
        assert_eq!(reports[0].replanned_mean_abs, reports[1].replanned_mean_abs);
    }

    #[test]
    fn median_helper() {
        assert_eq!(median_f64(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median_f64(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
