//! dq-frame inverter models for fault-free and faulty operation.
//!
//! Both modes are linear time-invariant systems with the Kronecker structure
//! `I2 ⊗ A_mode` (identical, decoupled d- and q-axis blocks). The fault-free
//! mode has six states per the cascaded voltage/current PI loops; the faulty
//! mode has four because the fault current limiter replaces the voltage loop
//! with a constant current setpoint. The measured output is the inverter
//! current `(I_d, I_q)` in both modes.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::expm;

/// Hypothesized operating mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModeId {
    FaultFree,
    Faulty,
}

impl ModeId {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModeId::FaultFree => "fault-free",
            ModeId::Faulty => "faulty",
        }
    }
}

impl std::fmt::Display for ModeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Physical and controller constants shared by both mode models.
///
/// Gains are the PI coefficients of the outer voltage loop (`kp_v`, `ki_v`)
/// and inner current loop (`kp_i`, `ki_i`). `zeta_u_*` are the fault current
/// limiter's upper limits, which become the current setpoints in the faulty
/// mode. `vref_*` are the PCC voltage references driving the fault-free mode.
#[derive(Debug, Clone, PartialEq)]
pub struct InverterParams {
    pub kp_v: f64,
    pub ki_v: f64,
    pub kp_i: f64,
    pub ki_i: f64,
    /// Load resistance (Ω).
    pub r: f64,
    /// Converter resistance (Ω).
    pub r1: f64,
    /// Converter inductance (H).
    pub l1: f64,
    /// DC-link voltage (V).
    pub vdc: f64,
    /// FCL upper limit, d axis (A).
    pub zeta_u_d: f64,
    /// FCL upper limit, q axis (A).
    pub zeta_u_q: f64,
    /// Fundamental angular frequency (rad/s).
    pub omega0: f64,
    /// PCC voltage reference, d axis (V).
    pub vref_d: f64,
    /// PCC voltage reference, q axis (V).
    pub vref_q: f64,
}

/// Ratio of the default FCL limit to the nominal steady current.
pub const FCL_MARGIN: f64 = 1.2;

impl InverterParams {
    /// The benchmark parameter set: kp_i = 170, ki_i = 100, kp_v = 0.1,
    /// ki_v = 8, R = 10 Ω, R1 = 1.5 mΩ, L1 = 300 mH, Vdc = 150 V, 60 Hz,
    /// with vref = (60, 0) V and FCL limits derived via [`Self::derived_fcl_limits`].
    pub fn nominal() -> Self {
        let mut p = Self {
            kp_v: 0.1,
            ki_v: 8.0,
            kp_i: 170.0,
            ki_i: 100.0,
            r: 10.0,
            r1: 1.5e-3,
            l1: 0.3,
            vdc: 150.0,
            zeta_u_d: 0.0,
            zeta_u_q: 0.0,
            omega0: 2.0 * std::f64::consts::PI * 60.0,
            vref_d: 60.0,
            vref_q: 0.0,
        };
        let [zd, zq] = p.derived_fcl_limits();
        p.zeta_u_d = zd;
        p.zeta_u_q = zq;
        p
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.kp_v,
            self.ki_v,
            self.kp_i,
            self.ki_i,
            self.r,
            self.r1,
            self.l1,
            self.vdc,
            self.zeta_u_d,
            self.zeta_u_q,
            self.omega0,
            self.vref_d,
            self.vref_q,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidParams("non-finite inverter parameter".into()));
        }
        if self.l1 <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "L1 must be > 0, got {}",
                self.l1
            )));
        }
        if self.vdc <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "Vdc must be > 0, got {}",
                self.vdc
            )));
        }
        if self.r < 0.0 {
            return Err(Error::InvalidParams(format!(
                "R must be >= 0, got {}",
                self.r
            )));
        }
        if self.omega0 <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "omega0 must be > 0, got {}",
                self.omega0
            )));
        }
        Ok(())
    }

    /// Nominal steady-state current per axis. The voltage-loop integrator
    /// forces `vref - R * I = 0` in steady state, so this is `vref / R`.
    pub fn steady_current(&self) -> Result<[f64; 2]> {
        if self.r <= 0.0 {
            return Err(Error::InvalidParams(
                "steady current vref/R needs R > 0".into(),
            ));
        }
        Ok([self.vref_d / self.r, self.vref_q / self.r])
    }

    /// Default per-axis FCL limits: the limiter sits [`FCL_MARGIN`] times
    /// above the nominal steady current magnitude.
    pub fn derived_fcl_limits(&self) -> [f64; 2] {
        if self.r <= 0.0 {
            return [0.0, 0.0];
        }
        [
            FCL_MARGIN * (self.vref_d / self.r).abs(),
            FCL_MARGIN * (self.vref_q / self.r).abs(),
        ]
    }
}

/// Continuous-time LTI model of one mode.
#[derive(Debug, Clone)]
pub struct ContinuousMode {
    pub mode_id: ModeId,
    /// State matrix, `I2 ⊗ A_mode`.
    pub a: DMatrix<f64>,
    /// Input matrix, `I2 ⊗ B_mode`.
    pub b: DMatrix<f64>,
    /// Output matrix selecting the current states.
    pub c: DMatrix<f64>,
    /// Constant input entries: voltage references for the fault-free mode,
    /// FCL limits for the faulty mode. Perturbation entries are zero here.
    pub baseline_input: DVector<f64>,
    /// Zero-based input columns that carry the perturbation `(Δu_d, Δu_q)`.
    pub perturbation_columns: Vec<usize>,
}

/// Discrete-time LTI model of one mode (exact zero-order hold).
#[derive(Debug, Clone)]
pub struct DiscreteMode {
    pub mode_id: ModeId,
    pub ad: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// Discretization step (s).
    pub dt: f64,
    pub baseline_input: DVector<f64>,
    pub perturbation_columns: Vec<usize>,
}

impl DiscreteMode {
    pub fn n_states(&self) -> usize {
        self.ad.nrows()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    /// Baseline input with the perturbation entries set to `delta_u`.
    pub fn input_with_perturbation(&self, delta_u: [f64; 2]) -> DVector<f64> {
        let mut u = self.baseline_input.clone();
        for (axis, &col) in self.perturbation_columns.iter().enumerate() {
            u[col] += delta_u[axis];
        }
        u
    }
}

fn kron_i2(block: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = block.shape();
    let mut out = DMatrix::zeros(2 * r, 2 * c);
    out.view_mut((0, 0), (r, c)).copy_from(block);
    out.view_mut((r, c), (r, c)).copy_from(block);
    out
}

/// Construct the six-state fault-free model.
///
/// Per-axis states are (current-PI integrator, inverter current, voltage-PI
/// integrator); the output picks the current state of each axis. The input
/// layout is `[vref_d, Δu_d, vref_q, Δu_q]`.
pub fn build_fault_free(params: &InverterParams) -> Result<ContinuousMode> {
    params.validate()?;
    let g = params.vdc / (2.0 * params.l1);
    let a_block = DMatrix::from_row_slice(
        3,
        3,
        &[
            0.0,
            -params.ki_i - params.ki_i * params.kp_v,
            params.ki_i,
            g,
            -(params.kp_i * g
                + params.r1 / params.l1
                + params.kp_i * params.kp_v * params.vdc * params.r / (2.0 * params.l1)),
            params.kp_i * g,
            0.0,
            -params.ki_v * params.r,
            0.0,
        ],
    );
    let b_block = DMatrix::from_row_slice(
        3,
        2,
        &[
            params.ki_i * params.kp_v,
            params.ki_i,
            params.kp_i * params.ki_i * params.vdc / (2.0 * params.l1),
            params.kp_i * g,
            params.ki_v,
            0.0,
        ],
    );
    let mut c = DMatrix::zeros(2, 6);
    c[(0, 1)] = 1.0;
    c[(1, 4)] = 1.0;
    Ok(ContinuousMode {
        mode_id: ModeId::FaultFree,
        a: kron_i2(&a_block),
        b: kron_i2(&b_block),
        c,
        baseline_input: DVector::from_vec(vec![params.vref_d, 0.0, params.vref_q, 0.0]),
        perturbation_columns: vec![1, 3],
    })
}

/// Construct the four-state faulty model.
///
/// The FCL is active: the current setpoint is the limit `ζ_U` and the load
/// drops out of the dynamics. Per-axis states are (current-PI integrator,
/// inverter current). The input layout is `[ζ_U_d, Δu_d, ζ_U_q, Δu_q]`.
pub fn build_faulty(params: &InverterParams) -> Result<ContinuousMode> {
    params.validate()?;
    let g = params.vdc / (2.0 * params.l1);
    let a_block = DMatrix::from_row_slice(
        2,
        2,
        &[
            0.0,
            -params.ki_i,
            g,
            -(params.kp_i * g + params.r1 / params.l1),
        ],
    );
    let b_block = DMatrix::from_row_slice(
        2,
        2,
        &[params.ki_i, params.ki_i, params.kp_i * g, params.kp_i * g],
    );
    let mut c = DMatrix::zeros(2, 4);
    c[(0, 1)] = 1.0;
    c[(1, 3)] = 1.0;
    Ok(ContinuousMode {
        mode_id: ModeId::Faulty,
        a: kron_i2(&a_block),
        b: kron_i2(&b_block),
        c,
        baseline_input: DVector::from_vec(vec![params.zeta_u_d, 0.0, params.zeta_u_q, 0.0]),
        perturbation_columns: vec![1, 3],
    })
}

/// Exact zero-order-hold discretization via the augmented matrix exponential:
/// `exp([[A, B], [0, 0]] dt) = [[Ad, Bd], [0, I]]`.
pub fn discretize(mode: &ContinuousMode, dt: f64) -> Result<DiscreteMode> {
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::InvalidParams(format!("dt must be > 0, got {dt}")));
    }
    let n = mode.a.nrows();
    let m = mode.b.ncols();
    if mode.a.ncols() != n || mode.b.nrows() != n {
        return Err(Error::DimensionMismatch(
            "A must be square and B row-conformal".into(),
        ));
    }
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(&mode.a * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(&mode.b * dt));
    let e = expm(&aug)?;
    Ok(DiscreteMode {
        mode_id: mode.mode_id,
        ad: e.view((0, 0), (n, n)).into_owned(),
        bd: e.view((0, n), (n, m)).into_owned(),
        c: mode.c.clone(),
        dt,
        baseline_input: mode.baseline_input.clone(),
        perturbation_columns: mode.perturbation_columns.clone(),
    })
}

/// Covariance specification expanded per state dimension.
#[derive(Debug, Clone, PartialEq)]
pub enum CovSpec {
    /// `scale * I`.
    Scalar(f64),
    /// Diagonal with the given entries.
    Diagonal(Vec<f64>),
}

impl CovSpec {
    pub fn validate(&self, require_pd: bool, what: &str) -> Result<()> {
        let ok = match self {
            CovSpec::Scalar(s) => s.is_finite() && (*s > 0.0 || (!require_pd && *s >= 0.0)),
            CovSpec::Diagonal(d) => {
                !d.is_empty()
                    && d.iter()
                        .all(|x| x.is_finite() && (*x > 0.0 || (!require_pd && *x >= 0.0)))
            }
        };
        if ok {
            Ok(())
        } else if require_pd {
            Err(Error::NotPositiveDefinite(what.to_string()))
        } else {
            Err(Error::InvalidParams(format!(
                "{what}: covariance entries must be finite and nonnegative"
            )))
        }
    }

    /// Dense covariance matrix of dimension `n`.
    pub fn expand(&self, n: usize) -> Result<DMatrix<f64>> {
        match self {
            CovSpec::Scalar(s) => Ok(DMatrix::identity(n, n) * *s),
            CovSpec::Diagonal(d) => {
                if d.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "diagonal covariance has {} entries, expected {n}",
                        d.len()
                    )));
                }
                Ok(DMatrix::from_diagonal(&DVector::from_vec(d.clone())))
            }
        }
    }

    /// Entrywise square root of the diagonal, for sampling.
    pub fn sqrt_diag(&self, n: usize) -> Result<DVector<f64>> {
        match self {
            CovSpec::Scalar(s) => Ok(DVector::from_element(n, s.sqrt())),
            CovSpec::Diagonal(d) => {
                if d.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "diagonal covariance has {} entries, expected {n}",
                        d.len()
                    )));
                }
                Ok(DVector::from_iterator(n, d.iter().map(|x| x.sqrt())))
            }
        }
    }
}

/// Initial state mean, per mode (the two modes have different dimensions).
#[derive(Debug, Clone, PartialEq)]
pub enum InitialMean {
    Zero,
    PerMode {
        fault_free: Vec<f64>,
        faulty: Vec<f64>,
    },
}

impl InitialMean {
    pub fn mean_for(&self, mode: ModeId, n: usize) -> Result<DVector<f64>> {
        match self {
            InitialMean::Zero => Ok(DVector::zeros(n)),
            InitialMean::PerMode { fault_free, faulty } => {
                let v = match mode {
                    ModeId::FaultFree => fault_free,
                    ModeId::Faulty => faulty,
                };
                if v.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "initial mean for {mode} has {} entries, expected {n}",
                        v.len()
                    )));
                }
                Ok(DVector::from_vec(v.clone()))
            }
        }
    }
}

/// Noise and initial-condition specification shared by both modes.
///
/// Process and initial covariances are specified once and expanded to each
/// mode's state dimension; scalar specs work for both modes, diagonal specs
/// require matching dimensions per use.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub sigma_w: CovSpec,
    pub sigma_v: CovSpec,
    pub sigma_0: CovSpec,
    pub x0_mean: InitialMean,
}

impl NoiseSpec {
    /// Default noise levels: `Σ_w = 1e-4 I`, `Σ_v = 1e-4 I`, `Σ_0 = 1e-2 I`,
    /// zero initial mean.
    pub fn default_spec() -> Self {
        Self {
            sigma_w: CovSpec::Scalar(1e-4),
            sigma_v: CovSpec::Scalar(1e-4),
            sigma_0: CovSpec::Scalar(1e-2),
            x0_mean: InitialMean::Zero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sigma_w.validate(false, "sigma_w")?;
        self.sigma_v.validate(true, "sigma_v")?;
        self.sigma_0.validate(false, "sigma_0")?;
        Ok(())
    }

    pub fn with_means(mut self, fault_free: DVector<f64>, faulty: DVector<f64>) -> Self {
        self.x0_mean = InitialMean::PerMode {
            fault_free: fault_free.iter().copied().collect(),
            faulty: faulty.iter().copied().collect(),
        };
        self
    }
}

/// The combined two-mode stochastic system consumed by the filter bank and
/// the perturbation optimizer.
#[derive(Debug, Clone)]
pub struct MultiModel {
    pub mode_h: DiscreteMode,
    pub mode_f: DiscreteMode,
    pub noise: NoiseSpec,
    pub prior_h: f64,
    pub prior_f: f64,
}

impl MultiModel {
    pub fn mode(&self, id: ModeId) -> &DiscreteMode {
        match id {
            ModeId::FaultFree => &self.mode_h,
            ModeId::Faulty => &self.mode_f,
        }
    }
}

/// Validate and assemble a [`MultiModel`]. Priors must be interior and sum
/// to one; the modes must agree on output dimension and perturbation count.
pub fn assemble_multimodel(
    mode_h: DiscreteMode,
    mode_f: DiscreteMode,
    noise: NoiseSpec,
    priors: (f64, f64),
) -> Result<MultiModel> {
    let (prior_h, prior_f) = priors;
    if !prior_h.is_finite() || !prior_f.is_finite() || (prior_h + prior_f - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParams(format!(
            "priors must sum to 1, got ({prior_h}, {prior_f})"
        )));
    }
    if prior_h <= 0.0 || prior_h >= 1.0 {
        return Err(Error::InvalidParams(
            "priors must be interior to (0, 1)".into(),
        ));
    }
    if mode_h.n_outputs() != mode_f.n_outputs() {
        return Err(Error::DimensionMismatch(format!(
            "output dimensions differ: {} vs {}",
            mode_h.n_outputs(),
            mode_f.n_outputs()
        )));
    }
    if mode_h.perturbation_columns.len() != mode_f.perturbation_columns.len() {
        return Err(Error::DimensionMismatch(
            "perturbation column counts differ".into(),
        ));
    }
    if (mode_h.dt - mode_f.dt).abs() > f64::EPSILON * mode_h.dt.abs() {
        return Err(Error::InvalidParams("modes have different dt".into()));
    }
    noise.validate()?;
    // Fail early if diagonal specs cannot expand to either mode.
    noise.sigma_w.expand(mode_h.n_states())?;
    noise.sigma_w.expand(mode_f.n_states())?;
    noise.sigma_v.expand(mode_h.n_outputs())?;
    noise.sigma_0.expand(mode_h.n_states())?;
    noise.sigma_0.expand(mode_f.n_states())?;
    noise
        .x0_mean
        .mean_for(ModeId::FaultFree, mode_h.n_states())?;
    noise.x0_mean.mean_for(ModeId::Faulty, mode_f.n_states())?;
    Ok(MultiModel {
        mode_h,
        mode_f,
        noise,
        prior_h,
        prior_f,
    })
}

/// Build, discretize and assemble both modes in one call.
pub fn build_multimodel(
    params: &InverterParams,
    dt: f64,
    noise: NoiseSpec,
    priors: (f64, f64),
) -> Result<MultiModel> {
    let h = discretize(&build_fault_free(params)?, dt)?;
    let f = discretize(&build_faulty(params)?, dt)?;
    assemble_multimodel(h, f, noise, priors)
}

/// Closed-loop steady state of the fault-free mode under its baseline input.
pub fn fault_free_steady_state(params: &InverterParams) -> Result<DVector<f64>> {
    let mode = build_fault_free(params)?;
    let rhs = -(&mode.b * &mode.baseline_input);
    mode.a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("fault-free A matrix is singular".into()))
}

/// Initial means for a detection window that starts at fault onset.
///
/// The fault-free hypothesis sits at its closed-loop steady state. The
/// faulty hypothesis inherits the per-axis current, clamped in magnitude at
/// the FCL limit (the limiter bounds the pre-fault reference), with the
/// current-PI integrator set so the fast current dynamics start balanced;
/// from there the current drifts slowly toward `ζ_U`. Integrator states are
/// not carried across models: each printed model has its own integrator
/// operating point.
pub fn fault_onset_state(params: &InverterParams) -> Result<(DVector<f64>, DVector<f64>)> {
    let x_h = fault_free_steady_state(params)?;
    let g = params.vdc / (2.0 * params.l1);
    let a_fast = params.kp_i * g + params.r1 / params.l1;
    let zeta = [params.zeta_u_d, params.zeta_u_q];
    let mut x_f = DVector::zeros(4);
    for axis in 0..2 {
        // Fault-free current state per axis: index 1 of each 3-state block.
        let mut i0: f64 = x_h[1 + 3 * axis];
        if i0.abs() > zeta[axis].abs() {
            i0 = i0.signum() * zeta[axis].abs();
        }
        x_f[2 * axis + 1] = i0;
        x_f[2 * axis] = (a_fast * i0 - g * params.kp_i * zeta[axis]) / g;
    }
    Ok((x_h, x_f))
}
