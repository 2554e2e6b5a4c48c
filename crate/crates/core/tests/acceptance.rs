//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured margins (visible under `--nocapture`).
//!
//! Criteria 1–11 live here; criterion 12 (bit-identical preset CSVs) drives
//! the CLI binary and lives in the `afd-cli` crate's acceptance suite.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use afd_core::horizon::{output_covariance_block, HorizonStats};
use afd_core::kalman::{build_filter, dare_residual, solve_dare, DareOptions};
use afd_core::mmkf::{posterior_update, LikelihoodForm, PosteriorState, Residuals};
use afd_core::model::{build_multimodel, CovSpec, InverterParams, ModeId, MultiModel, NoiseSpec};
use afd_core::optimizer::{
    optimize_free, optimize_harmonic, vertex_oracle, HarmonicBasis, OptimizeOptions,
    PerturbationPlan,
};
use afd_core::sim::{
    build_filter_bank, median_f64, resolve_noise, robustness_experiment, run_scenario,
    simulate_truth, FilterBank, InitPolicy, ParamPerturbations, RobustnessCase, ScenarioConfig,
    VoltageMap,
};

const PRIORS: (f64, f64) = (0.5, 0.5);
const RUNS: usize = 100;

struct Bench {
    params: InverterParams,
    noise: NoiseSpec,
    mm: MultiModel,
    filters: FilterBank,
    vmap: VoltageMap,
}

fn bench(n_steps: usize) -> (Bench, HorizonStats) {
    let params = InverterParams::nominal();
    let noise = resolve_noise(&params, &NoiseSpec::default_spec(), InitPolicy::FaultOnset).unwrap();
    let mm = build_multimodel(&params, 1e-3, noise.clone(), PRIORS).unwrap();
    let filters = build_filter_bank(&mm, DareOptions::default()).unwrap();
    let stats = HorizonStats::build(&mm, n_steps).unwrap();
    let vmap = VoltageMap::from_params(&params);
    (
        Bench {
            params,
            noise,
            mm,
            filters,
            vmap,
        },
        stats,
    )
}

fn scenario(b: &Bench, mode: ModeId, n_steps: usize, gamma: f64) -> ScenarioConfig {
    let mut s = ScenarioConfig::new(mode, n_steps, &b.params);
    s.gamma = gamma;
    s.seed = 1;
    s
}

struct EnsembleOut {
    final_p_true: Vec<f64>,
    detections: Vec<f64>,
    tracking_rms: Vec<f64>,
    correct: usize,
}

fn ensemble(b: &Bench, plan: &PerturbationPlan, scenario: &ScenarioConfig) -> EnsembleOut {
    let truth = b.mm.mode(scenario.true_mode);
    let mut out = EnsembleOut {
        final_p_true: Vec::with_capacity(RUNS),
        detections: Vec::with_capacity(RUNS),
        tracking_rms: Vec::with_capacity(RUNS),
        correct: 0,
    };
    for run in 0..RUNS {
        let (records, report) = run_scenario(
            truth, &b.noise, &b.mm, &b.filters, plan, scenario, &b.vmap, run as u64,
        )
        .unwrap();
        let last = records.last().unwrap();
        out.final_p_true.push(match scenario.true_mode {
            ModeId::Faulty => last.p_f,
            ModeId::FaultFree => last.p_h,
        });
        out.detections
            .push(report.detection_or_sentinel(scenario.n_steps));
        out.tracking_rms.push(report.tracking_error_rms);
        out.correct += report.correct as usize;
    }
    out
}

#[test]
fn criterion_01_dare_correctness() {
    let t0 = Instant::now();
    let (b, _) = bench(8);
    let mut worst = 0f64;
    for mode in [&b.mm.mode_h, &b.mm.mode_f] {
        let n = mode.n_states();
        let sw = b.noise.sigma_w.expand(n).unwrap();
        let sv = b.noise.sigma_v.expand(2).unwrap();
        let f = build_filter(mode, &b.noise, DareOptions::default()).unwrap();
        let res = dare_residual(&mode.ad, &mode.c, &sw, &sv, &f.sigma).unwrap();
        assert!(res <= 1e-9, "residual {res:.3e} for {}", mode.mode_id);
        worst = worst.max(res);
    }
    let scalar = |x: f64| DMatrix::from_element(1, 1, x);
    let s = solve_dare(
        &scalar(0.0),
        &scalar(1.0),
        &scalar(0.37),
        &scalar(0.11),
        DareOptions::default(),
    )
    .unwrap();
    assert!((s[(0, 0)] - 0.37).abs() <= 1e-10);
    let s = solve_dare(
        &scalar(1.0),
        &scalar(1.0),
        &scalar(1.0),
        &scalar(1.0),
        DareOptions::default(),
    )
    .unwrap();
    assert!((s[(0, 0)] - (1.0 + 5f64.sqrt()) / 2.0).abs() <= 1e-10);
    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 1: PASS — DARE residual <= 1e-9 (worst {worst:.3e}), scalar closed forms to 1e-10, {:.0} ms < 1 s",
        elapsed.as_secs_f64() * 1e3
    );
}

#[test]
fn criterion_02_mmkf_normalization_and_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_sum = 0f64;
    let mut worst_inv = 0f64;
    for _ in 0..1_000_000u32 {
        let p_f: f64 = rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12);
        let state = PosteriorState::new(1.0 - p_f, p_f).unwrap();
        let res = Residuals {
            alpha_h: rng.random::<f64>() * 50.0,
            alpha_f: rng.random::<f64>() * 50.0,
        };
        let beta_h = 10f64.powf(rng.random::<f64>() * 6.0 - 3.0);
        let beta_f = 10f64.powf(rng.random::<f64>() * 6.0 - 3.0);
        let scale = 10f64.powf(rng.random::<f64>() * 6.0 - 3.0);
        let a =
            posterior_update(state, res, beta_h, beta_f, LikelihoodForm::ExponentialNorm).unwrap();
        let b = posterior_update(
            state,
            res,
            beta_h * scale,
            beta_f * scale,
            LikelihoodForm::ExponentialNorm,
        )
        .unwrap();
        worst_sum = worst_sum.max((a.p_h() + a.p_f() - 1.0).abs());
        worst_inv = worst_inv.max((a.p_h() - b.p_h()).abs().max((a.p_f() - b.p_f()).abs()));
    }
    assert!(worst_sum <= 1e-12, "sum deviation {worst_sum:.3e}");
    assert!(
        worst_inv <= 1e-12,
        "scale invariance deviation {worst_inv:.3e}"
    );
    println!(
        "ACCEPTANCE 2: PASS — 1e6 updates: |sum-1| <= {worst_sum:.2e}, β-scale invariance <= {worst_inv:.2e} (both <= 1e-12)"
    );
}

#[test]
fn criterion_03_horizon_statistics_monte_carlo() {
    let t0 = Instant::now();
    // Random (fixed-seed) stable 2-state / 1-output system, N = 3.
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut draw = |scale: f64| (rng.random::<f64>() * 2.0 - 1.0) * scale;
    let ad = DMatrix::from_fn(2, 2, |_, _| draw(0.45));
    let bd = DMatrix::from_fn(2, 2, |_, _| draw(1.0));
    let c = DMatrix::from_fn(1, 2, |_, _| draw(1.0));
    let mode = afd_core::model::DiscreteMode {
        mode_id: ModeId::Faulty,
        ad,
        bd,
        c,
        dt: 1.0,
        baseline_input: DVector::from_vec(vec![0.4, 0.0]),
        perturbation_columns: vec![1],
    };
    let noise = NoiseSpec {
        sigma_w: CovSpec::Diagonal(vec![0.02, 0.05]),
        sigma_v: CovSpec::Scalar(0.04),
        sigma_0: CovSpec::Diagonal(vec![0.3, 0.1]),
        x0_mean: afd_core::model::InitialMean::PerMode {
            fault_free: vec![0.0; 2],
            faulty: vec![0.2, -0.4],
        },
    };
    let n_steps = 3usize;
    // One perturbation column: entry [0] of each pair drives input column 1.
    let plan: Vec<[f64; 2]> = vec![[0.3, 0.0], [-0.2, 0.0], [0.1, 0.0]];

    // Analytic stacked mean and block covariance.
    let x0 = noise.x0_mean.mean_for(ModeId::Faulty, 2).unwrap();
    let inputs: Vec<DVector<f64>> = plan
        .iter()
        .map(|du| {
            let mut u = mode.baseline_input.clone();
            u[1] += du[0];
            u
        })
        .collect();
    let xs = afd_core::horizon::mean_state_trajectory(&mode, &x0, &inputs).unwrap();
    let mean: DVector<f64> =
        DVector::from_iterator(n_steps + 1, xs.iter().map(|x| (&mode.c * x)[0]));
    let cov = output_covariance_block(
        &mode,
        &noise.sigma_0.expand(2).unwrap(),
        &noise.sigma_w.expand(2).unwrap(),
        &noise.sigma_v.expand(1).unwrap(),
        n_steps,
    )
    .unwrap();

    // Monte Carlo over the counter-based sampler.
    let samples = 2_000_000usize;
    let dim = n_steps + 1;
    let mut sum = DVector::<f64>::zeros(dim);
    let mut outer = DMatrix::<f64>::zeros(dim, dim);
    let del: Vec<[f64; 2]> = plan.iter().map(|du| [du[0], du[1]]).collect();
    for r in 0..samples {
        let t = simulate_truth(&mode, &del, &noise, n_steps, 7, r as u64).unwrap();
        let y = DVector::from_iterator(dim, t.y.iter().map(|v| v[0]));
        sum += &y;
        outer += &y * y.transpose();
    }
    let mc_mean = &sum / samples as f64;
    let mc_cov = (&outer - &sum * sum.transpose() / samples as f64) / (samples as f64 - 1.0);

    let mut worst_sigmas = 0f64;
    for i in 0..dim {
        let se = (cov[(i, i)] / samples as f64).sqrt();
        let dev = (mc_mean[i] - mean[i]).abs() / se;
        worst_sigmas = worst_sigmas.max(dev);
        assert!(dev <= 4.0, "mean[{i}] off by {dev:.2} SE");
    }
    for i in 0..dim {
        for j in 0..dim {
            let se =
                ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)] * cov[(i, j)]) / samples as f64).sqrt();
            let dev = (mc_cov[(i, j)] - cov[(i, j)]).abs() / se;
            worst_sigmas = worst_sigmas.max(dev);
            assert!(dev <= 4.0, "cov[{i},{j}] off by {dev:.2} SE");
        }
    }
    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 3: PASS — 2e6-sample MC matches analytic ȳ and Σ_y (worst {worst_sigmas:.2} SE <= 4), {:.1} s < 30 s",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_04_optimizer_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_gap = 0f64;
    let mut worst_violation = 0f64;
    for trial in 0..50u64 {
        let n_steps = 1 + (rng.random::<u32>() % 6) as usize; // 2N <= 12
        let dim = 2 * n_steps;
        let rows = 2 + (rng.random::<u32>() % 5) as usize;
        let mut draw = |scale: f64| (rng.random::<f64>() * 2.0 - 1.0) * scale;
        let m = DMatrix::from_fn(rows, dim, |_, _| draw(1.0));
        let d0 = DVector::from_fn(rows, |_, _| draw(1.0));
        let l1 = DMatrix::from_fn(rows, rows, |_, _| draw(1.0));
        let l2 = DMatrix::from_fn(rows, rows, |_, _| draw(1.0));
        let s1 = &l1 * l1.transpose() + DMatrix::identity(rows, rows) * 0.1;
        let s2 = &l2 * l2.transpose() + DMatrix::identity(rows, rows) * 0.1;
        let stats = HorizonStats::from_raw(d0, m, s1, s2, n_steps, rows).unwrap();
        let gamma = 0.1 + 1.9 * rng.random::<f64>();
        let opts = OptimizeOptions {
            seed: trial,
            ..Default::default()
        };
        let free = optimize_free(&stats, PRIORS, gamma, &opts).unwrap();
        let oracle = vertex_oracle(&stats, PRIORS, gamma).unwrap();
        worst_gap = worst_gap.max((free.phi - oracle.phi).abs());
        worst_violation = worst_violation.max(free.inf_norm() - gamma);
        assert!(
            (free.phi - oracle.phi).abs() <= 1e-6,
            "trial {trial}: {} vs {}",
            free.phi,
            oracle.phi
        );
        assert!(free.inf_norm() <= gamma + 1e-12);
        assert!(oracle.inf_norm() <= gamma + 1e-12);
    }
    println!(
        "ACCEPTANCE 4: PASS — 50 instances (2N <= 12): |φ_pg − φ_vertex| <= {worst_gap:.2e} (<= 1e-6), box violation <= {worst_violation:.2e} (<= 1e-12)"
    );
}

#[test]
fn criterion_05_dominance_and_gamma_monotonicity() {
    let (b, stats) = bench(8);
    let opts = OptimizeOptions::default();
    let gamma = 0.5;
    let free = optimize_free(&stats, PRIORS, gamma, &opts).unwrap();
    let basis = HarmonicBasis::new(
        vec![3, 5, 7],
        b.params.omega0 / (2.0 * std::f64::consts::PI),
        1e-3,
        8,
    )
    .unwrap();
    let harm = optimize_harmonic(&stats, PRIORS, gamma, &basis, &opts).unwrap();
    let zero = PerturbationPlan::zero(&stats, PRIORS, gamma).unwrap();
    assert!(free.phi >= harm.phi - 1e-9, "{} < {}", free.phi, harm.phi);
    assert!(harm.phi >= zero.phi - 1e-12, "{} < {}", harm.phi, zero.phi);

    let mut last = f64::NEG_INFINITY;
    let mut curve = Vec::new();
    for g in [0.1, 0.25, 0.5, 1.0] {
        let plan = optimize_free(&stats, PRIORS, g, &opts).unwrap();
        assert!(plan.phi >= last - 1e-9, "phi*({g}) = {} < {last}", plan.phi);
        last = plan.phi;
        curve.push(format!("{:.1}", plan.phi));
    }
    println!(
        "ACCEPTANCE 5: PASS — φ(free)={:.2} >= φ(harmonic)={:.2} >= φ(zero)={:.2}; φ*(γ) nondecreasing: [{}]",
        free.phi,
        harm.phi,
        zero.phi,
        curve.join(", ")
    );
}

#[test]
fn criterion_06_example1_reproduction() {
    let t0 = Instant::now();
    let (b, stats) = bench(8);
    let sc = scenario(&b, ModeId::Faulty, 8, 0.5);
    let opt_plan = optimize_free(&stats, PRIORS, 0.5, &OptimizeOptions::default()).unwrap();
    let zero_plan = PerturbationPlan::zero(&stats, PRIORS, 0.5).unwrap();
    let with_opt = ensemble(&b, &opt_plan, &sc);
    let with_zero = ensemble(&b, &zero_plan, &sc);
    let pf_opt = median_f64(&with_opt.final_p_true);
    let pf_zero = median_f64(&with_zero.final_p_true);
    let det_opt = median_f64(&with_opt.detections);
    let det_zero = median_f64(&with_zero.detections);
    assert!(pf_opt > pf_zero, "final pF medians: {pf_opt} vs {pf_zero}");
    assert!(
        det_opt < det_zero,
        "detection medians: {det_opt} vs {det_zero}"
    );
    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 6: PASS — median final pF {pf_opt:.4} (optimal) > {pf_zero:.4} (zero); median detection {det_opt} < {det_zero} steps (sentinel 9 = none); {:.1} s < 1 min",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_07_detection_within_one_cycle() {
    // One 60 Hz cycle at dt = 1 ms is ~17 steps.
    let (b, _) = bench(8);
    let stats = HorizonStats::build(&b.mm, 17).unwrap();
    let plan = optimize_free(&stats, PRIORS, 1.0, &OptimizeOptions::default()).unwrap();
    let mut medians = Vec::new();
    for mode in [ModeId::Faulty, ModeId::FaultFree] {
        let sc = scenario(&b, mode, 17, 1.0);
        let out = ensemble(&b, &plan, &sc);
        let med = median_f64(&out.detections);
        assert!(med <= 17.0, "{mode}: median detection {med}");
        medians.push(format!("{mode}: {med}"));
    }
    println!(
        "ACCEPTANCE 7: PASS — γ=1, dt=1 ms: median detection within one 60 Hz cycle ({}; both <= 17 steps)",
        medians.join(", ")
    );
}

#[test]
fn criterion_08_tradeoff_shape() {
    let (b, stats) = bench(8);
    let mut det_medians = Vec::new();
    let mut rms_medians = Vec::new();
    for gamma in [0.1, 0.5, 1.0] {
        let plan = optimize_free(&stats, PRIORS, gamma, &OptimizeOptions::default()).unwrap();
        // Detection speed is measured on the faulty system, tracking
        // degradation on the fault-free one.
        let out_f = ensemble(&b, &plan, &scenario(&b, ModeId::Faulty, 8, gamma));
        let out_h = ensemble(&b, &plan, &scenario(&b, ModeId::FaultFree, 8, gamma));
        det_medians.push(median_f64(&out_f.detections));
        rms_medians.push(median_f64(&out_h.tracking_rms));
    }
    for w in det_medians.windows(2) {
        assert!(
            w[1] <= w[0],
            "detection medians not nonincreasing: {det_medians:?}"
        );
    }
    for w in rms_medians.windows(2) {
        assert!(
            w[1] >= w[0],
            "tracking RMS not nondecreasing: {rms_medians:?}"
        );
    }
    println!(
        "ACCEPTANCE 8: PASS — over γ ∈ {{0.1, 0.5, 1.0}}: median detection {det_medians:?} nonincreasing, median tracking RMS {rms_medians:?} nondecreasing"
    );
}

#[test]
fn criterion_09_voltage_deviation_indicator() {
    let (b, stats) = bench(8);
    let plan = optimize_free(&stats, PRIORS, 1.0, &OptimizeOptions::default()).unwrap();
    let out_f = ensemble(&b, &plan, &scenario(&b, ModeId::Faulty, 8, 1.0));
    let out_h = ensemble(&b, &plan, &scenario(&b, ModeId::FaultFree, 8, 1.0));
    let rms_f = median_f64(&out_f.tracking_rms);
    let rms_h = median_f64(&out_h.tracking_rms);
    let factor = rms_f / rms_h;
    assert!(factor >= 1.5, "factor {factor:.3}");
    println!(
        "ACCEPTANCE 9: PASS — same ‖Δu‖∞ <= 1 plan: median RMS voltage deviation faulty {rms_f:.3} V vs fault-free {rms_h:.3} V (factor {factor:.2} >= 1.5)"
    );
}

#[test]
fn criterion_10_robustness() {
    let (b, stats) = bench(8);
    let sc = scenario(&b, ModeId::Faulty, 8, 0.5);
    let plan = optimize_free(&stats, PRIORS, 0.5, &OptimizeOptions::default()).unwrap();
    let cases = vec![
        RobustnessCase {
            label: "nominal".into(),
            factors: ParamPerturbations::default(),
        },
        RobustnessCase {
            label: "current-gains-x1.1".into(),
            factors: ParamPerturbations {
                kp_i: 1.1,
                ki_i: 1.1,
                ..Default::default()
            },
        },
        RobustnessCase {
            label: "load-x0.8".into(),
            factors: ParamPerturbations {
                r: 0.8,
                ..Default::default()
            },
        },
        RobustnessCase {
            label: "load-x1.2".into(),
            factors: ParamPerturbations {
                r: 1.2,
                ..Default::default()
            },
        },
    ];
    let reports = robustness_experiment(
        &b.params,
        &sc,
        &NoiseSpec::default_spec(),
        PRIORS,
        &plan,
        &cases,
        RUNS,
        DareOptions::default(),
        &OptimizeOptions::default(),
    )
    .unwrap();
    let nominal_rate = reports[0].correct_rate;
    for rep in &reports[1..] {
        assert!(
            rep.correct_rate >= 0.95 * nominal_rate,
            "{}: rate {} vs nominal {}",
            rep.label,
            rep.correct_rate,
            nominal_rate
        );
    }
    let load_up = reports.iter().find(|r| r.label == "load-x1.2").unwrap();
    assert!(
        load_up.replanned_mean_abs <= plan.mean_abs() + 1e-12,
        "replanned mean |Δu| {} vs nominal {}",
        load_up.replanned_mean_abs,
        plan.mean_abs()
    );
    let rates: Vec<String> = reports
        .iter()
        .map(|r| format!("{} {:.2}", r.label, r.correct_rate))
        .collect();
    println!(
        "ACCEPTANCE 10: PASS — correct-detection rates [{}] all >= 95% of nominal; load×1.2 replanned mean|Δu| {:.3} <= nominal {:.3}",
        rates.join(", "),
        load_up.replanned_mean_abs,
        plan.mean_abs()
    );
}
