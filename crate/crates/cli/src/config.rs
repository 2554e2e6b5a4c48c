//! JSON run configuration: schema, defaults, flag overrides, resolution.
//!
//! Every field has a documented default so a preset can run with no config
//! file at all; unknown keys are rejected. The manifest echoes the resolved
//! configuration, which fully determines every CSV byte (except wall-clock
//! timing measurements).

use serde::{Deserialize, Serialize};

use afd_core::mmkf::LikelihoodForm;
use afd_core::model::{CovSpec, InitialMean, InverterParams, ModeId, NoiseSpec};
use afd_core::sim::{InitPolicy, ParamPerturbations, ScenarioConfig};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub params: ParamsConfig,
    pub noise: NoiseConfig,
    pub scenario: ScenarioSection,
    pub optimizer: OptimizerConfig,
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: ParamsConfig::default(),
            noise: NoiseConfig::default(),
            scenario: ScenarioSection::default(),
            optimizer: OptimizerConfig::default(),
            out_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamsConfig {
    pub kp_v: f64,
    pub ki_v: f64,
    pub kp_i: f64,
    pub ki_i: f64,
    pub r: f64,
    pub r1: f64,
    pub l1: f64,
    pub vdc: f64,
    /// Fundamental angular frequency (rad/s).
    pub omega0: f64,
    pub vref_d: f64,
    pub vref_q: f64,
    /// FCL limits; `null` derives 1.2 × nominal steady current per axis.
    pub zeta_u_d: Option<f64>,
    pub zeta_u_q: Option<f64>,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        let p = InverterParams::nominal();
        Self {
            kp_v: p.kp_v,
            ki_v: p.ki_v,
            kp_i: p.kp_i,
            ki_i: p.ki_i,
            r: p.r,
            r1: p.r1,
            l1: p.l1,
            vdc: p.vdc,
            omega0: p.omega0,
            vref_d: p.vref_d,
            vref_q: p.vref_q,
            zeta_u_d: None,
            zeta_u_q: None,
        }
    }
}

/// Scalar (`1e-4`) or per-entry diagonal (`[..]`) covariance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovSpecConfig {
    Scalar(f64),
    Diagonal(Vec<f64>),
}

impl From<&CovSpecConfig> for CovSpec {
    fn from(c: &CovSpecConfig) -> Self {
        match c {
            CovSpecConfig::Scalar(s) => CovSpec::Scalar(*s),
            CovSpecConfig::Diagonal(d) => CovSpec::Diagonal(d.clone()),
        }
    }
}

/// Initial-mean policy: `"zero"`, `"fault_onset"`, or explicit per-mode
/// vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum X0MeanConfig {
    Policy(String),
    Explicit {
        fault_free: Vec<f64>,
        faulty: Vec<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub sigma_w: CovSpecConfig,
    pub sigma_v: CovSpecConfig,
    pub sigma_0: CovSpecConfig,
    pub x0_mean: X0MeanConfig,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma_w: CovSpecConfig::Scalar(1e-4),
            sigma_v: CovSpecConfig::Scalar(1e-4),
            sigma_0: CovSpecConfig::Scalar(1e-2),
            x0_mean: X0MeanConfig::Policy("fault_onset".into()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    /// `"faulty"` or `"fault-free"`.
    pub true_mode: String,
    pub horizon: usize,
    pub dt: f64,
    pub gamma: f64,
    pub seed: u64,
    pub detect_threshold: f64,
    /// Monte Carlo repetitions for ensemble presets and timing.
    pub runs: usize,
    /// `"exponential"` (the verbatim update) or `"gaussian"`.
    pub likelihood: String,
    /// Trigger distance in amps; `null` uses 5% of the largest FCL limit.
    pub trigger_threshold: Option<f64>,
    pub priors: (f64, f64),
    pub param_perturbations: PerturbationsConfig,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            true_mode: "faulty".into(),
            horizon: 8,
            dt: 1e-3,
            gamma: 0.5,
            seed: 1,
            detect_threshold: 0.95,
            runs: 100,
            likelihood: "exponential".into(),
            trigger_threshold: None,
            priors: (0.5, 0.5),
            param_perturbations: PerturbationsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationsConfig {
    pub kp_i: f64,
    pub ki_i: f64,
    pub kp_v: f64,
    pub ki_v: f64,
    pub r: f64,
}

impl Default for PerturbationsConfig {
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

impl From<&PerturbationsConfig> for ParamPerturbations {
    fn from(c: &PerturbationsConfig) -> Self {
        ParamPerturbations {
            kp_i: c.kp_i,
            ki_i: c.ki_i,
            kp_v: c.kp_v,
            ki_v: c.ki_v,
            r: c.r,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub n_starts: usize,
    pub max_iters: usize,
    pub harmonics: Vec<u32>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            n_starts: 16,
            max_iters: 10_000,
            harmonics: vec![3, 5, 7],
        }
    }
}

/// Command-line overrides; `Some` only for flags the user actually passed.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub gamma: Option<f64>,
    pub horizon: Option<usize>,
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub out: Option<String>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    /// Bake flag overrides into the config (so the manifest echo fully
    /// reproduces the run).
    pub fn apply_overrides(&mut self, ov: &Overrides) {
        if let Some(g) = ov.gamma {
            self.scenario.gamma = g;
        }
        if let Some(n) = ov.horizon {
            self.scenario.horizon = n;
        }
        if let Some(s) = ov.seed {
            self.scenario.seed = s;
        }
        if let Some(r) = ov.runs {
            self.scenario.runs = r;
        }
        if let Some(o) = &ov.out {
            self.out_dir = o.clone();
        }
    }

    /// Validate shape-level fields and produce the typed configuration.
    /// Domain-level numeric failures surface later from the core library.
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let mut params = InverterParams {
            kp_v: self.params.kp_v,
            ki_v: self.params.ki_v,
            kp_i: self.params.kp_i,
            ki_i: self.params.ki_i,
            r: self.params.r,
            r1: self.params.r1,
            l1: self.params.l1,
            vdc: self.params.vdc,
            zeta_u_d: 0.0,
            zeta_u_q: 0.0,
            omega0: self.params.omega0,
            vref_d: self.params.vref_d,
            vref_q: self.params.vref_q,
        };
        let derived = params.derived_fcl_limits();
        params.zeta_u_d = self.params.zeta_u_d.unwrap_or(derived[0]);
        params.zeta_u_q = self.params.zeta_u_q.unwrap_or(derived[1]);

        let true_mode = match self.scenario.true_mode.as_str() {
            "faulty" => ModeId::Faulty,
            "fault-free" | "fault_free" => ModeId::FaultFree,
            other => {
                return Err(CliError::Usage(format!(
                    "scenario.true_mode must be \"faulty\" or \"fault-free\", got \"{other}\""
                )))
            }
        };
        let likelihood = match self.scenario.likelihood.as_str() {
            "exponential" => LikelihoodForm::ExponentialNorm,
            "gaussian" => LikelihoodForm::Gaussian,
            other => {
                return Err(CliError::Usage(format!(
                    "scenario.likelihood must be \"exponential\" or \"gaussian\", got \"{other}\""
                )))
            }
        };
        let (init, explicit_means) = match &self.noise.x0_mean {
            X0MeanConfig::Policy(p) => match p.as_str() {
                "zero" => (InitPolicy::ZeroMean, None),
                "fault_onset" => (InitPolicy::FaultOnset, None),
                other => {
                    return Err(CliError::Usage(format!(
                        "noise.x0_mean must be \"zero\", \"fault_onset\" or explicit vectors, got \"{other}\""
                    )))
                }
            },
            X0MeanConfig::Explicit { fault_free, faulty } => (
                InitPolicy::AsConfigured,
                Some(InitialMean::PerMode {
                    fault_free: fault_free.clone(),
                    faulty: faulty.clone(),
                }),
            ),
        };

        let mut scenario = ScenarioConfig::new(true_mode, self.scenario.horizon.max(1), &params);
        scenario.n_steps = self.scenario.horizon;
        scenario.dt = self.scenario.dt;
        scenario.gamma = self.scenario.gamma;
        scenario.seed = self.scenario.seed;
        scenario.detect_threshold = self.scenario.detect_threshold;
        scenario.likelihood = likelihood;
        scenario.init = init;
        scenario.param_perturbations = (&self.scenario.param_perturbations).into();
        if let Some(t) = self.scenario.trigger_threshold {
            scenario.trigger_threshold = t;
        }

        Ok(Resolved {
            params,
            noise_template: NoiseSpec {
                sigma_w: (&self.noise.sigma_w).into(),
                sigma_v: (&self.noise.sigma_v).into(),
                sigma_0: (&self.noise.sigma_0).into(),
                x0_mean: explicit_means.unwrap_or(InitialMean::Zero),
            },
            scenario,
            priors: self.scenario.priors,
            runs: self.scenario.runs,
            n_starts: self.optimizer.n_starts,
            max_iters: self.optimizer.max_iters,
            harmonics: self.optimizer.harmonics.clone(),
            out_dir: self.out_dir.clone(),
        })
    }

    /// Echo with the derived FCL limits filled in.
    pub fn echo_resolved(&self, resolved: &Resolved) -> RunConfig {
        let mut echo = self.clone();
        echo.params.zeta_u_d = Some(resolved.params.zeta_u_d);
        echo.params.zeta_u_q = Some(resolved.params.zeta_u_q);
        echo
    }
}

/// Typed, fully-defaulted configuration used by the presets.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub params: InverterParams,
    pub noise_template: NoiseSpec,
    pub scenario: ScenarioConfig,
    pub priors: (f64, f64),
    pub runs: usize,
    pub n_starts: usize,
    pub max_iters: usize,
    pub harmonics: Vec<u32>,
    pub out_dir: String,
}

impl Resolved {
    /// Noise spec with initial means resolved for the given parameter set
    /// (robustness cases re-resolve onset means for perturbed truths).
    pub fn noise_for(&self, params: &InverterParams) -> Result<NoiseSpec, afd_core::Error> {
        afd_core::sim::resolve_noise(params, &self.noise_template, self.scenario.init)
    }

    pub fn optimize_options(&self, seed: u64) -> afd_core::optimizer::OptimizeOptions {
        afd_core::optimizer::OptimizeOptions {
            n_starts: self.n_starts,
            max_iters: self.max_iters,
            seed,
        }
    }
}
