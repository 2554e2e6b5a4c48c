//! Horizon-stacked statistics and the mode-separation measure.
//!
//! Over a detection horizon of `N` steps the stacked output
//! `y_{0:N}` of each mode is Gaussian with mean `ȳ_i` and a block
//! covariance whose `(k, l)` block is `C Σ_{x,(k,l)} C^T` plus `Σ_v` on the
//! diagonal. Because the dynamics are linear, the difference of the two
//! modes' stacked means is affine in the perturbation sequence:
//! `ȳ_h − ȳ_f = d0 + M vec(Δu)`. The separation
//!
//! ```text
//! φ(Δu) = ¼ dᵀ (Σ_h + Σ_f)⁻¹ d + ½ ln( det((Σ_h+Σ_f)/2) / √(det Σ_h det Σ_f) )
//! ```
//!
//! with `d = d0 + M vec(Δu)` bounds the misidentification objective through
//! `Ĵ_d = √(p_h p_f) e^{−φ}`; the covariances do not depend on `Δu`, so only
//! the quadratic mean term moves under optimization.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_spd, log_det, sym_eigenvalues};
use crate::model::{DiscreteMode, ModeId, MultiModel};

/// Stacked horizon statistics for both modes plus cached solver state.
#[derive(Debug, Clone)]
pub struct HorizonStats {
    /// Detection horizon N (the perturbation has N entries per axis).
    pub n_steps: usize,
    /// Output dimension p per step; stacked vectors have length `p (N+1)`.
    pub p_outputs: usize,
    /// Stacked mean output of the fault-free mode under baseline inputs.
    pub y_bar_h: DVector<f64>,
    /// Stacked mean output of the faulty mode under baseline inputs.
    pub y_bar_f: DVector<f64>,
    /// Baseline mean difference `ȳ_h − ȳ_f` at `Δu = 0`.
    pub d0: DVector<f64>,
    /// Map from `vec(Δu)` (step-major `[Δu_0^d, Δu_0^q, Δu_1^d, …]`) to the
    /// mean-output difference.
    pub m: DMatrix<f64>,
    pub sigma_y_h: DMatrix<f64>,
    pub sigma_y_f: DMatrix<f64>,
    sum_chol: Cholesky<f64, Dyn>,
    /// `(Σ_h + Σ_f)^{-1} M`, cached.
    w: DMatrix<f64>,
    /// `M^T (Σ_h + Σ_f)^{-1} M`, cached (Δu-independent).
    q: DMatrix<f64>,
    /// The Δu-independent log-determinant term of φ.
    log_det_term: f64,
}

impl HorizonStats {
    /// Build the stacked statistics for a multi-model over `n_steps`.
    pub fn build(mm: &MultiModel, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidParams("n_steps must be >= 1".into()));
        }
        let p = mm.mode_h.n_outputs();
        let (d0, m, y_bar_h, y_bar_f) = mean_difference_parts(mm, n_steps)?;
        let sigma_y_h = output_covariance_block_for(mm, ModeId::FaultFree, n_steps)?;
        let sigma_y_f = output_covariance_block_for(mm, ModeId::Faulty, n_steps)?;
        Self::assemble(n_steps, p, y_bar_h, y_bar_f, d0, m, sigma_y_h, sigma_y_f)
    }

    /// Assemble from raw pieces. Intended for synthetic instances; the mean
    /// vectors are reconstructed as `ȳ_f = 0`, `ȳ_h = d0`.
    pub fn from_raw(
        d0: DVector<f64>,
        m: DMatrix<f64>,
        sigma_y_h: DMatrix<f64>,
        sigma_y_f: DMatrix<f64>,
        n_steps: usize,
        p_outputs: usize,
    ) -> Result<Self> {
        let y_bar_f = DVector::zeros(d0.len());
        let y_bar_h = d0.clone();
        Self::assemble(
            n_steps, p_outputs, y_bar_h, y_bar_f, d0, m, sigma_y_h, sigma_y_f,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        n_steps: usize,
        p_outputs: usize,
        y_bar_h: DVector<f64>,
        y_bar_f: DVector<f64>,
        d0: DVector<f64>,
        m: DMatrix<f64>,
        sigma_y_h: DMatrix<f64>,
        sigma_y_f: DMatrix<f64>,
    ) -> Result<Self> {
        let dim = d0.len();
        if m.nrows() != dim || sigma_y_h.shape() != (dim, dim) || sigma_y_f.shape() != (dim, dim) {
            return Err(Error::DimensionMismatch(
                "horizon stats: d0 / M / Σ shapes disagree".into(),
            ));
        }
        for (name, s) in [("sigma_y_h", &sigma_y_h), ("sigma_y_f", &sigma_y_f)] {
            let min_eig = sym_eigenvalues(s)[0];
            if min_eig < -1e-10 * s.amax().max(1.0) {
                return Err(Error::NotPositiveDefinite(format!(
                    "{name}: min eigenvalue {min_eig:.3e}"
                )));
            }
        }
        let sum = &sigma_y_h + &sigma_y_f;
        let sum_chol = cholesky_spd(&sum, "sigma_y_h + sigma_y_f")?;
        let chol_h = cholesky_spd(&sigma_y_h, "sigma_y_h")?;
        let chol_f = cholesky_spd(&sigma_y_f, "sigma_y_f")?;
        // det(S/2) = det(S) / 2^dim, accumulated as log-determinants.
        let log_det_half_sum = log_det(&sum_chol) - dim as f64 * 2f64.ln();
        let log_det_term = 0.5 * (log_det_half_sum - 0.5 * (log_det(&chol_h) + log_det(&chol_f)));
        let w = sum_chol.solve(&m);
        let q = m.transpose() * &w;
        Ok(Self {
            n_steps,
            p_outputs,
            y_bar_h,
            y_bar_f,
            d0,
            m,
            sigma_y_h,
            sigma_y_f,
            sum_chol,
            w,
            q,
            log_det_term,
        })
    }

    /// Clone with a replaced baseline difference, reusing every cached
    /// factorization. `ȳ_h` is shifted to stay consistent with the new `d0`.
    pub fn with_d0(&self, d0: DVector<f64>) -> Result<Self> {
        if d0.len() != self.d0.len() {
            return Err(Error::DimensionMismatch("with_d0: length".into()));
        }
        let mut out = self.clone();
        out.y_bar_h = &out.y_bar_f + &d0;
        out.d0 = d0;
        Ok(out)
    }

    /// Coefficients of the quadratic mean term of φ as a function of
    /// `v = vec(Δu)`: `quad(v) = ¼ (c0 + 2 bᵀv + vᵀQv)` with `Q` PSD.
    pub fn quad_coefficients(&self) -> (f64, DVector<f64>, &DMatrix<f64>) {
        let b = self.w.transpose() * &self.d0;
        let c0 = self.d0.dot(&self.sum_chol.solve(&self.d0));
        (c0, b, &self.q)
    }

    /// The Δu-independent log-determinant term of φ.
    pub fn log_det_term(&self) -> f64 {
        self.log_det_term
    }

    /// φ evaluated at a stacked perturbation vector of length `M.ncols()`.
    pub fn phi_of_vec(&self, v: &DVector<f64>) -> Result<f64> {
        if v.len() != self.m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "phi: vec(Δu) length {} vs M columns {}",
                v.len(),
                self.m.ncols()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParams("phi: non-finite Δu".into()));
        }
        let d = &self.d0 + &self.m * v;
        let quad = 0.25 * d.dot(&self.sum_chol.solve(&d));
        Ok(quad + self.log_det_term)
    }
}

/// Flatten an N×2 perturbation sequence step-major.
pub fn vec_of_sequence(delta_u: &[[f64; 2]]) -> DVector<f64> {
    let mut v = DVector::zeros(2 * delta_u.len());
    for (k, du) in delta_u.iter().enumerate() {
        v[2 * k] = du[0];
        v[2 * k + 1] = du[1];
    }
    v
}

/// The separation φ for a perturbation sequence of `stats.n_steps` entries.
pub fn phi(stats: &HorizonStats, delta_u: &[[f64; 2]]) -> Result<f64> {
    if delta_u.len() != stats.n_steps {
        return Err(Error::DimensionMismatch(format!(
            "phi: sequence length {} vs horizon {}",
            delta_u.len(),
            stats.n_steps
        )));
    }
    stats.phi_of_vec(&vec_of_sequence(delta_u))
}

/// Misidentification bound `Ĵ_d = √(p_h p_f) e^{−φ}`.
pub fn j_hat(prior_h: f64, prior_f: f64, phi_value: f64) -> f64 {
    (prior_h * prior_f).sqrt() * (-phi_value).exp()
}

/// Mean state trajectory `x̄_0..x̄_N` under the given inputs
/// (`x̄_{k+1} = Ad x̄_k + Bd u_k`).
pub fn mean_state_trajectory(
    mode: &DiscreteMode,
    x0_mean: &DVector<f64>,
    inputs: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let n = mode.n_states();
    if x0_mean.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "mean_state_trajectory: x0 length {} vs {n}",
            x0_mean.len()
        )));
    }
    if inputs.is_empty() {
        return Err(Error::InvalidParams(
            "input sequence must be nonempty".into(),
        ));
    }
    let mut xs = Vec::with_capacity(inputs.len() + 1);
    xs.push(x0_mean.clone());
    for u in inputs {
        if u.len() != mode.bd.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "mean_state_trajectory: input length {} vs {}",
                u.len(),
                mode.bd.ncols()
            )));
        }
        let next = &mode.ad * xs.last().unwrap() + &mode.bd * u;
        xs.push(next);
    }
    Ok(xs)
}

/// State cross-time covariance for `k >= l`, evaluated as the printed sum
/// `A^k Σ_0 (A^l)^T + Σ_{j=1..l} A^{k-j} Σ_w (A^{l-j})^T`. Callers obtain
/// `k < l` blocks by transpose symmetry.
pub fn state_covariance(
    mode: &DiscreteMode,
    sigma_0: &DMatrix<f64>,
    sigma_w: &DMatrix<f64>,
    k: usize,
    l: usize,
) -> Result<DMatrix<f64>> {
    if k < l {
        return Err(Error::InvalidParams(format!(
            "state_covariance requires k >= l, got k={k}, l={l}"
        )));
    }
    let n = mode.n_states();
    if sigma_0.shape() != (n, n) || sigma_w.shape() != (n, n) {
        return Err(Error::DimensionMismatch(
            "state_covariance: Σ shapes".into(),
        ));
    }
    let pow = |e: usize| -> DMatrix<f64> {
        let mut acc = DMatrix::identity(n, n);
        for _ in 0..e {
            acc = &mode.ad * acc;
        }
        acc
    };
    let mut total = pow(k) * sigma_0 * pow(l).transpose();
    for j in 1..=l {
        total += pow(k - j) * sigma_w * pow(l - j).transpose();
    }
    Ok(total)
}

/// Stacked output covariance over `k, l ∈ {0..N}`: block `(k,l)` is
/// `C Σ_{x,(k,l)} C^T`, plus `Σ_v` on diagonal blocks.
pub fn output_covariance_block(
    mode: &DiscreteMode,
    sigma_0: &DMatrix<f64>,
    sigma_w: &DMatrix<f64>,
    sigma_v: &DMatrix<f64>,
    n_steps: usize,
) -> Result<DMatrix<f64>> {
    if n_steps == 0 {
        return Err(Error::InvalidParams("n_steps must be >= 1".into()));
    }
    let n = mode.n_states();
    let p = mode.n_outputs();
    if sigma_0.shape() != (n, n) || sigma_w.shape() != (n, n) || sigma_v.shape() != (p, p) {
        return Err(Error::DimensionMismatch(
            "output_covariance_block: Σ shapes".into(),
        ));
    }
    let blocks = n_steps + 1;
    let dim = p * blocks;
    let mut big = DMatrix::zeros(dim, dim);

    // Diagonal state covariances by the Lyapunov recursion, then columns
    // upward via Σ_{x,(k+1,l)} = Ad Σ_{x,(k,l)}.
    let mut diag = Vec::with_capacity(blocks);
    diag.push(sigma_0.clone());
    for _ in 0..n_steps {
        let last = diag.last().unwrap();
        let mut next = &mode.ad * last * mode.ad.transpose() + sigma_w;
        crate::linalg::symmetrize(&mut next);
        diag.push(next);
    }
    for (l, diag_l) in diag.iter().enumerate() {
        let mut skl = diag_l.clone();
        for k in l..blocks {
            let mut block = &mode.c * &skl * mode.c.transpose();
            if k == l {
                block += sigma_v;
            }
            big.view_mut((k * p, l * p), (p, p)).copy_from(&block);
            big.view_mut((l * p, k * p), (p, p))
                .copy_from(&block.transpose());
            skl = &mode.ad * skl;
        }
    }
    let min_eig = sym_eigenvalues(&big)[0];
    if min_eig < -1e-10 * big.amax().max(1.0) {
        return Err(Error::NotPositiveDefinite(format!(
            "stacked output covariance: min eigenvalue {min_eig:.3e}"
        )));
    }
    Ok(big)
}

fn output_covariance_block_for(
    mm: &MultiModel,
    mode_id: ModeId,
    n_steps: usize,
) -> Result<DMatrix<f64>> {
    let mode = mm.mode(mode_id);
    let n = mode.n_states();
    let p = mode.n_outputs();
    output_covariance_block(
        mode,
        &mm.noise.sigma_0.expand(n)?,
        &mm.noise.sigma_w.expand(n)?,
        &mm.noise.sigma_v.expand(p)?,
        n_steps,
    )
}

/// Baseline difference `d0` and the affine map `M` from the stacked
/// perturbation (step-major, two axes) to the mean-output difference.
pub fn mean_difference_map(
    mm: &MultiModel,
    n_steps: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (d0, m, _, _) = mean_difference_parts(mm, n_steps)?;
    Ok((d0, m))
}

fn stacked_mean_output(
    mode: &DiscreteMode,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
) -> Result<DVector<f64>> {
    let xs = mean_state_trajectory(mode, x0, inputs)?;
    let p = mode.n_outputs();
    let mut out = DVector::zeros(p * xs.len());
    for (k, x) in xs.iter().enumerate() {
        out.rows_mut(k * p, p).copy_from(&(&mode.c * x));
    }
    Ok(out)
}

type MeanParts = (DVector<f64>, DMatrix<f64>, DVector<f64>, DVector<f64>);

fn mean_difference_parts(mm: &MultiModel, n_steps: usize) -> Result<MeanParts> {
    let p = mm.mode_h.n_outputs();
    let n_axes = mm.mode_h.perturbation_columns.len();
    let x0_h = mm
        .noise
        .x0_mean
        .mean_for(ModeId::FaultFree, mm.mode_h.n_states())?;
    let x0_f = mm
        .noise
        .x0_mean
        .mean_for(ModeId::Faulty, mm.mode_f.n_states())?;
    let base_h: Vec<DVector<f64>> = (0..n_steps)
        .map(|_| mm.mode_h.baseline_input.clone())
        .collect();
    let base_f: Vec<DVector<f64>> = (0..n_steps)
        .map(|_| mm.mode_f.baseline_input.clone())
        .collect();
    let y_h = stacked_mean_output(&mm.mode_h, &x0_h, &base_h)?;
    let y_f = stacked_mean_output(&mm.mode_f, &x0_f, &base_f)?;
    let d0 = &y_h - &y_f;

    // Unit-impulse responses of each mode through its perturbation columns;
    // by linearity, the column of M for (step s, axis a) is the response
    // difference shifted to start at block s+1.
    let dim = p * (n_steps + 1);
    let mut m = DMatrix::zeros(dim, n_axes * n_steps);
    let mut impulse_diff = vec![DMatrix::zeros(p, n_steps); n_axes];
    for (axis, slot) in impulse_diff.iter_mut().enumerate() {
        let resp = |mode: &DiscreteMode| -> DMatrix<f64> {
            let col = mode.perturbation_columns[axis];
            let mut v = mode.bd.column(col).into_owned();
            let mut out = DMatrix::zeros(p, n_steps);
            for tau in 0..n_steps {
                out.column_mut(tau).copy_from(&(&mode.c * &v));
                v = &mode.ad * v;
            }
            out
        };
        *slot = resp(&mm.mode_h) - resp(&mm.mode_f);
    }
    for s in 0..n_steps {
        for (axis, diff) in impulse_diff.iter().enumerate() {
            let col = n_axes * s + axis;
            for tau in 0..(n_steps - s) {
                let block_row = (s + 1 + tau) * p;
                m.view_mut((block_row, col), (p, 1))
                    .copy_from(&diff.column(tau));
            }
        }
    }
    Ok((d0, m, y_h, y_f))
}
