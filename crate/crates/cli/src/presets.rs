//! Preset experiments. Each preset writes one or more CSVs plus a manifest
//! that echoes the fully-resolved configuration.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use afd_core::horizon::HorizonStats;
use afd_core::kalman::DareOptions;
use afd_core::model::{build_multimodel, ModeId, MultiModel, NoiseSpec};
use afd_core::optimizer::{optimize_free, optimize_harmonic, HarmonicBasis, PerturbationPlan};
use afd_core::sim::{
    build_filter_bank, median_f64, robustness_experiment, run_scenario, FilterBank,
    ParamPerturbations, RobustnessCase, ScenarioConfig, TraceRecord, VoltageMap,
};

use crate::bench::benchmark_horizon;
use crate::config::{Overrides, Resolved, RunConfig};
use crate::csvout::{emit_csv, emit_table, fmt_f64, write_manifest, Manifest};
use crate::CliError;

pub const PRESETS: &[&str] = &[
    "example1",
    "tradeoff",
    "voltage-indicator",
    "harmonic-compare",
    "robustness",
    "horizon-timing",
];

/// Run a preset end to end: compute, write CSVs, write the manifest.
pub fn run_preset(name: &str, cfg: &RunConfig, overrides: &Overrides) -> Result<(), CliError> {
    if !PRESETS.contains(&name) {
        return Err(CliError::Usage(format!(
            "unknown preset \"{name}\"; available: {}",
            PRESETS.join(", ")
        )));
    }
    let resolved = cfg.resolve()?;
    let out = PathBuf::from(&resolved.out_dir);
    let mut ctx = PresetCtx {
        resolved,
        out,
        outputs: Vec::new(),
        timings: BTreeMap::new(),
        total: Instant::now(),
    };
    match name {
        "example1" => example1(&mut ctx)?,
        "tradeoff" => tradeoff(&mut ctx, overrides)?,
        "voltage-indicator" => voltage_indicator(&mut ctx, overrides)?,
        "harmonic-compare" => harmonic_compare(&mut ctx)?,
        "robustness" => robustness(&mut ctx)?,
        "horizon-timing" => horizon_timing(&mut ctx)?,
        _ => unreachable!(),
    }
    ctx.timings
        .insert("total".into(), ctx.total.elapsed().as_secs_f64() * 1e3);
    let manifest = Manifest {
        preset: name.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: ctx.resolved.scenario.seed,
        config: cfg.echo_resolved(&ctx.resolved),
        outputs: ctx.outputs.clone(),
        timings_ms: ctx.timings.clone(),
    };
    write_manifest(&manifest, &ctx.out.join(format!("{name}_manifest.json")))?;
    Ok(())
}

struct PresetCtx {
    resolved: Resolved,
    out: PathBuf,
    outputs: Vec<String>,
    timings: BTreeMap<String, f64>,
    total: Instant,
}

impl PresetCtx {
    fn emit_trace(&mut self, name: &str, records: &[TraceRecord]) -> Result<(), CliError> {
        emit_csv(records, &self.out.join(name))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn emit_summary(
        &mut self,
        name: &str,
        header: &[&str],
        rows: &[Vec<String>],
    ) -> Result<(), CliError> {
        emit_table(header, rows, &self.out.join(name))?;
        self.outputs.push(name.to_string());
        Ok(())
    }
}

/// Detector models/filters/statistics for the nominal parameters, plus the
/// truth models, which honor `scenario.param_perturbations` (FCL limits stay
/// nominal: they are controller settings).
struct Pipeline {
    mm: MultiModel,
    filters: FilterBank,
    stats: HorizonStats,
    truth_mm: MultiModel,
    truth_noise: NoiseSpec,
    vmap: VoltageMap,
}

fn build_pipeline(resolved: &Resolved) -> Result<Pipeline, CliError> {
    let noise = resolved.noise_for(&resolved.params)?;
    let mm = build_multimodel(
        &resolved.params,
        resolved.scenario.dt,
        noise.clone(),
        resolved.priors,
    )?;
    let filters = build_filter_bank(&mm, DareOptions::default())?;
    let stats = HorizonStats::build(&mm, resolved.scenario.n_steps)?;
    let factors = resolved.scenario.param_perturbations;
    let (truth_mm, truth_noise) = if factors.is_identity() {
        (mm.clone(), noise)
    } else {
        let perturbed = factors.apply(&resolved.params);
        let truth_noise = resolved.noise_for(&perturbed)?;
        let truth_mm = build_multimodel(
            &perturbed,
            resolved.scenario.dt,
            truth_noise.clone(),
            resolved.priors,
        )?;
        (truth_mm, truth_noise)
    };
    let vmap = VoltageMap::from_params(&resolved.params);
    Ok(Pipeline {
        mm,
        filters,
        stats,
        truth_mm,
        truth_noise,
        vmap,
    })
}

fn scenario_for_mode(base: &ScenarioConfig, mode: ModeId) -> ScenarioConfig {
    let mut s = base.clone();
    s.true_mode = mode;
    s
}

struct Ensemble {
    detect_rate: f64,
    median_detection: f64,
    median_final_p_true: f64,
    median_tracking_rms: f64,
}

fn run_ensemble(
    pipe: &Pipeline,
    plan: &PerturbationPlan,
    scenario: &ScenarioConfig,
    runs: usize,
) -> Result<Ensemble, CliError> {
    let truth = pipe.truth_mm.mode(scenario.true_mode);
    let mut detections = Vec::with_capacity(runs);
    let mut finals = Vec::with_capacity(runs);
    let mut rms = Vec::with_capacity(runs);
    let mut detected = 0usize;
    for run in 0..runs {
        let (records, report) = run_scenario(
            truth,
            &pipe.truth_noise,
            &pipe.mm,
            &pipe.filters,
            plan,
            scenario,
            &pipe.vmap,
            run as u64,
        )?;
        detected += report.detection_steps.is_some() as usize;
        detections.push(report.detection_or_sentinel(scenario.n_steps));
        let last = records.last().expect("nonempty trace");
        finals.push(match scenario.true_mode {
            ModeId::FaultFree => last.p_h,
            ModeId::Faulty => last.p_f,
        });
        rms.push(report.tracking_error_rms);
    }
    Ok(Ensemble {
        detect_rate: detected as f64 / runs as f64,
        median_detection: median_f64(&detections),
        median_final_p_true: median_f64(&finals),
        median_tracking_rms: median_f64(&rms),
    })
}

/// Posterior traces with and without the optimized perturbation for one
/// seeded run of the true mode.
fn example1(ctx: &mut PresetCtx) -> Result<(), CliError> {
    let r = ctx.resolved.clone();
    let r = &r;
    let pipe = build_pipeline(r)?;
    let t0 = Instant::now();
    let active = optimize_free(
        &pipe.stats,
        r.priors,
        r.scenario.gamma,
        &r.optimize_options(r.scenario.seed),
    )?;
    ctx.timings
        .insert("optimize".into(), t0.elapsed().as_secs_f64() * 1e3);
    let passive = PerturbationPlan::zero(&pipe.stats, r.priors, r.scenario.gamma)?;
    let truth = pipe.truth_mm.mode(r.scenario.true_mode);
    for (plan, label) in [(&active, "active"), (&passive, "passive")] {
        let (records, _) = run_scenario(
            truth,
            &pipe.truth_noise,
            &pipe.mm,
            &pipe.filters,
            plan,
            &r.scenario,
            &pipe.vmap,
            0,
        )?;
        ctx.emit_trace(&format!("example1_{label}.csv"), &records)?;
    }
    Ok(())
}

/// Detection-speed vs tracking-degradation sweep over γ, both true modes.
fn tradeoff(ctx: &mut PresetCtx, overrides: &Overrides) -> Result<(), CliError> {
    let r = ctx.resolved.clone();
    let pipe = build_pipeline(&r)?;
    let sweep: Vec<f64> = match overrides.gamma {
        Some(g) => vec![g],
        None => vec![0.1, 0.5, 1.0],
    };
    let mut rows = Vec::new();
    for &gamma in &sweep {
        let plan = optimize_free(
            &pipe.stats,
            r.priors,
            gamma,
            &r.optimize_options(r.scenario.seed),
        )?;
        for mode in [ModeId::Faulty, ModeId::FaultFree] {
            let mut scenario = scenario_for_mode(&r.scenario, mode);
            scenario.gamma = gamma;
            let ens = run_ensemble(&pipe, &plan, &scenario, r.runs)?;
            rows.push(vec![
                fmt_f64(gamma),
                mode.as_str().to_string(),
                fmt_f64(ens.detect_rate),
                fmt_f64(ens.median_detection),
                fmt_f64(ens.median_final_p_true),
                fmt_f64(ens.median_tracking_rms),
            ]);
        }
    }
    ctx.emit_summary(
        "tradeoff_summary.csv",
        &[
            "gamma",
            "true_mode",
            "detect_rate",
            "median_detection_steps",
            "median_final_p_true",
            "median_tracking_rms_v",
        ],
        &rows,
    )
}

/// RMS voltage deviation under the same plan in both modes (per run), plus
/// one representative trace per mode.
fn voltage_indicator(ctx: &mut PresetCtx, overrides: &Overrides) -> Result<(), CliError> {
    let mut r = ctx.resolved.clone();
    // This preset pins the bound at 1 A unless γ was overridden explicitly.
    if overrides.gamma.is_none() {
        r.scenario.gamma = 1.0;
    }
    let pipe = build_pipeline(&r)?;
    let plan = optimize_free(
        &pipe.stats,
        r.priors,
        r.scenario.gamma,
        &r.optimize_options(r.scenario.seed),
    )?;
    let mut rows = Vec::with_capacity(r.runs);
    for run in 0..r.runs {
        let mut per_mode = [0.0f64; 2];
        for (slot, mode) in [ModeId::Faulty, ModeId::FaultFree].iter().enumerate() {
            let scenario = scenario_for_mode(&r.scenario, *mode);
            let (_, report) = run_scenario(
                pipe.truth_mm.mode(*mode),
                &pipe.truth_noise,
                &pipe.mm,
                &pipe.filters,
                &plan,
                &scenario,
                &pipe.vmap,
                run as u64,
            )?;
            per_mode[slot] = report.tracking_error_rms;
        }
        rows.push(vec![
            run.to_string(),
            fmt_f64(per_mode[0]),
            fmt_f64(per_mode[1]),
        ]);
    }
    ctx.emit_summary(
        "voltage_indicator_summary.csv",
        &["run", "rms_v_dev_faulty", "rms_v_dev_fault_free"],
        &rows,
    )?;
    for mode in [ModeId::Faulty, ModeId::FaultFree] {
        let scenario = scenario_for_mode(&r.scenario, mode);
        let (records, _) = run_scenario(
            pipe.truth_mm.mode(mode),
            &pipe.truth_noise,
            &pipe.mm,
            &pipe.filters,
            &plan,
            &scenario,
            &pipe.vmap,
            0,
        )?;
        let label = match mode {
            ModeId::Faulty => "faulty",
            ModeId::FaultFree => "fault_free",
        };
        ctx.emit_trace(&format!("voltage_indicator_trace_{label}.csv"), &records)?;
    }
    Ok(())
}

/// Free vs harmonic-restricted perturbation: traces plus ensemble medians.
fn harmonic_compare(ctx: &mut PresetCtx) -> Result<(), CliError> {
    let r = ctx.resolved.clone();
    let pipe = build_pipeline(&r)?;
    let opts = r.optimize_options(r.scenario.seed);
    let free = optimize_free(&pipe.stats, r.priors, r.scenario.gamma, &opts)?;
    let fundamental_hz = r.params.omega0 / (2.0 * std::f64::consts::PI);
    let basis = HarmonicBasis::new(
        r.harmonics.clone(),
        fundamental_hz,
        r.scenario.dt,
        r.scenario.n_steps,
    )?;
    let harm = optimize_harmonic(&pipe.stats, r.priors, r.scenario.gamma, &basis, &opts)?;

    let mut rows = Vec::new();
    for (plan, label) in [(&free, "free"), (&harm, "harmonic")] {
        let ens = run_ensemble(&pipe, plan, &r.scenario, r.runs)?;
        rows.push(vec![
            label.to_string(),
            fmt_f64(plan.phi),
            fmt_f64(plan.j_hat),
            fmt_f64(ens.detect_rate),
            fmt_f64(ens.median_detection),
            fmt_f64(ens.median_final_p_true),
        ]);
        let (records, _) = run_scenario(
            pipe.truth_mm.mode(r.scenario.true_mode),
            &pipe.truth_noise,
            &pipe.mm,
            &pipe.filters,
            plan,
            &r.scenario,
            &pipe.vmap,
            0,
        )?;
        ctx.emit_trace(&format!("harmonic_compare_{label}.csv"), &records)?;
    }
    ctx.emit_summary(
        "harmonic_compare_summary.csv",
        &[
            "method",
            "phi",
            "j_hat",
            "detect_rate",
            "median_detection_steps",
            "median_final_p_true",
        ],
        &rows,
    )
}

/// Detector on nominal models, truth with perturbed parameters.
fn robustness(ctx: &mut PresetCtx) -> Result<(), CliError> {
    let r = ctx.resolved.clone();
    let pipe = build_pipeline(&r)?;
    let plan = optimize_free(
        &pipe.stats,
        r.priors,
        r.scenario.gamma,
        &r.optimize_options(r.scenario.seed),
    )?;
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
        RobustnessCase {
            label: "all-gains-x0.8".into(),
            factors: ParamPerturbations {
                kp_i: 0.8,
                ki_i: 0.8,
                kp_v: 0.8,
                ki_v: 0.8,
                r: 1.0,
            },
        },
        RobustnessCase {
            label: "all-gains-x1.2".into(),
            factors: ParamPerturbations {
                kp_i: 1.2,
                ki_i: 1.2,
                kp_v: 1.2,
                ki_v: 1.2,
                r: 1.0,
            },
        },
    ];
    let reports = robustness_experiment(
        &r.params,
        &r.scenario,
        &r.noise_template,
        r.priors,
        &plan,
        &cases,
        r.runs,
        DareOptions::default(),
        &r.optimize_options(r.scenario.seed),
    )?;
    let rows: Vec<Vec<String>> = cases
        .iter()
        .zip(reports.iter())
        .map(|(case, rep)| {
            vec![
                rep.label.clone(),
                fmt_f64(case.factors.kp_i),
                fmt_f64(case.factors.ki_i),
                fmt_f64(case.factors.kp_v),
                fmt_f64(case.factors.ki_v),
                fmt_f64(case.factors.r),
                fmt_f64(rep.correct_rate),
                fmt_f64(rep.median_detection_steps),
                fmt_f64(rep.replanned_mean_abs),
                fmt_f64(rep.replanned_inf_norm),
                fmt_f64(plan.mean_abs()),
            ]
        })
        .collect();
    ctx.emit_summary(
        "robustness_summary.csv",
        &[
            "case",
            "kp_i_factor",
            "ki_i_factor",
            "kp_v_factor",
            "ki_v_factor",
            "r_factor",
            "correct_rate",
            "median_detection_steps",
            "replanned_mean_abs_du",
            "replanned_inf_norm_du",
            "nominal_plan_mean_abs_du",
        ],
        &rows,
    )
}

/// Optimization wall time vs horizon, normalized to N = 8.
fn horizon_timing(ctx: &mut PresetCtx) -> Result<(), CliError> {
    let r = ctx.resolved.clone();
    let report = benchmark_horizon(&r, &[4, 8, 16, 32], r.runs)?;
    let rows: Vec<Vec<String>> = report
        .n_values
        .iter()
        .enumerate()
        .map(|(i, n)| {
            vec![
                n.to_string(),
                fmt_f64(report.mean_ms[i]),
                fmt_f64(report.stddev_ms[i]),
                fmt_f64(report.normalized_mean[i]),
            ]
        })
        .collect();
    ctx.emit_summary(
        "horizon_timing.csv",
        &["n", "mean_ms", "stddev_ms", "normalized_mean"],
        &rows,
    )
}
