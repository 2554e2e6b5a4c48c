//! Steady-state Kalman filter per mode.
//!
//! The posterior error covariance is the fixed point of the Riccati
//! recursion, found by iterating from `Σ⁽⁰⁾ = Σ_w` with symmetrization each
//! step. The gain, output-residual covariance and likelihood coefficient β
//! all derive from that solution.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_spd, log_det, sym_condition, symmetrize};
use crate::model::{DiscreteMode, ModeId, NoiseSpec};

/// Condition-estimate limit for the output residual covariance.
const SIGMA_Y_MAX_COND: f64 = 1e12;

/// Steady-state filter for one hypothesized mode.
#[derive(Debug, Clone)]
pub struct SteadyStateFilter {
    pub mode_id: ModeId,
    /// Kalman gain `H = Σ C^T (C Σ C^T + Σ_v)^{-1}`, n×p.
    pub gain: DMatrix<f64>,
    /// Steady-state error covariance, n×n.
    pub sigma: DMatrix<f64>,
    /// Output residual covariance `C Σ C^T + Σ_v`, p×p.
    pub sigma_y: DMatrix<f64>,
    /// Likelihood coefficient `1 / sqrt(det Σ_y)`.
    pub beta: f64,
}

/// Riccati-iteration settings. The defaults are `tol = 1e-10`,
/// `max_iter = 100_000`.
#[derive(Debug, Clone, Copy)]
pub struct DareOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DareOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

/// Solve the filter Riccati equation
/// `Σ = A Σ A^T + Σ_w − A Σ C^T (C Σ C^T + Σ_v)^{-1} C Σ A^T`
/// by fixed-point iteration from `Σ⁽⁰⁾ = Σ_w`, stopping once successive
/// iterates differ by less than `opts.tol` (max-abs).
pub fn solve_dare(
    ad: &DMatrix<f64>,
    c: &DMatrix<f64>,
    sigma_w: &DMatrix<f64>,
    sigma_v: &DMatrix<f64>,
    opts: DareOptions,
) -> Result<DMatrix<f64>> {
    let n = ad.nrows();
    if ad.ncols() != n || sigma_w.shape() != (n, n) || c.ncols() != n {
        return Err(Error::DimensionMismatch(
            "solve_dare: A/C/Σ_w shapes".into(),
        ));
    }
    let p = c.nrows();
    if sigma_v.shape() != (p, p) {
        return Err(Error::DimensionMismatch("solve_dare: Σ_v shape".into()));
    }
    if opts.tol <= 0.0 {
        return Err(Error::InvalidParams("solve_dare: tol must be > 0".into()));
    }
    cholesky_spd(sigma_v, "sigma_v")?;

    let mut sigma = sigma_w.clone();
    let mut delta = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let next = riccati_step(ad, c, sigma_w, sigma_v, &sigma)?;
        delta = (&next - &sigma).amax();
        sigma = next;
        if delta < opts.tol {
            return Ok(sigma);
        }
    }
    Err(Error::DareNoConvergence {
        max_iter: opts.max_iter,
        delta,
    })
}

fn riccati_step(
    ad: &DMatrix<f64>,
    c: &DMatrix<f64>,
    sigma_w: &DMatrix<f64>,
    sigma_v: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let sigma_y = c * sigma * c.transpose() + sigma_v;
    let chol = cholesky_spd(&sigma_y, "C Σ C^T + Σ_v")?;
    let cs = c * sigma; // p×n
    let gain_term = chol.solve(&cs); // (CΣC^T+Σv)^{-1} C Σ
    let mut next =
        ad * sigma * ad.transpose() + sigma_w - ad * cs.transpose() * gain_term * ad.transpose();
    symmetrize(&mut next);
    Ok(next)
}

/// Frobenius norm of the Riccati fixed-point residual at `sigma`; used to
/// verify solutions by direct substitution.
pub fn dare_residual(
    ad: &DMatrix<f64>,
    c: &DMatrix<f64>,
    sigma_w: &DMatrix<f64>,
    sigma_v: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
) -> Result<f64> {
    let next = riccati_step(ad, c, sigma_w, sigma_v, sigma)?;
    Ok((next - sigma).norm())
}

/// Build the steady-state filter for one mode from the Riccati solution.
pub fn build_filter(
    mode: &DiscreteMode,
    noise: &NoiseSpec,
    opts: DareOptions,
) -> Result<SteadyStateFilter> {
    let n = mode.n_states();
    let p = mode.n_outputs();
    let sigma_w = noise.sigma_w.expand(n)?;
    let sigma_v = noise.sigma_v.expand(p)?;
    let sigma = solve_dare(&mode.ad, &mode.c, &sigma_w, &sigma_v, opts)?;

    let mut sigma_y = &mode.c * &sigma * mode.c.transpose() + &sigma_v;
    symmetrize(&mut sigma_y);
    let cond = sym_condition(&sigma_y);
    if !cond.is_finite() || cond > SIGMA_Y_MAX_COND {
        return Err(Error::IllConditioned(format!(
            "sigma_y condition estimate {cond:.3e}"
        )));
    }
    let chol = cholesky_spd(&sigma_y, "sigma_y")?;
    let beta = (-0.5 * log_det(&chol)).exp();
    let gain = chol.solve(&(&mode.c * &sigma)).transpose(); // Σ C^T (C Σ C^T + Σ_v)^{-1}
    Ok(SteadyStateFilter {
        mode_id: mode.mode_id,
        gain,
        sigma,
        sigma_y,
        beta,
    })
}

/// One filter update: the next estimate and the output prediction used to
/// form the residual.
#[derive(Debug, Clone)]
pub struct FilterStep {
    /// `x̂_{k+1} = A x̂_k + B u_k + H (y_k − C x̂_k)`.
    pub xhat_next: DVector<f64>,
    /// `ŷ_k = C x̂_k`.
    pub y_pred: DVector<f64>,
}

pub fn filter_step(
    filter: &SteadyStateFilter,
    mode: &DiscreteMode,
    xhat: &DVector<f64>,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<FilterStep> {
    let n = mode.n_states();
    let p = mode.n_outputs();
    if xhat.len() != n || u.len() != mode.bd.ncols() || y.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "filter_step: xhat {} (want {n}), u {} (want {}), y {} (want {p})",
            xhat.len(),
            u.len(),
            mode.bd.ncols(),
            y.len()
        )));
    }
    let y_pred = &mode.c * xhat;
    let innovation = y - &y_pred;
    let xhat_next = &mode.ad * xhat + &mode.bd * u + &filter.gain * innovation;
    Ok(FilterStep { xhat_next, y_pred })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_multimodel, CovSpec, InitialMean, InverterParams};
    use nalgebra::dmatrix;

    fn scalar(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    #[test]
    fn dare_scalar_zero_dynamics() {
        // A = 0 kills the propagation terms, so Σ = Σ_w.
        let s = solve_dare(
            &scalar(0.0),
            &scalar(1.0),
            &scalar(0.3),
            &scalar(0.7),
            DareOptions::default(),
        )
        .unwrap();
        assert!((s[(0, 0)] - 0.3).abs() < 1e-10);
    }

    #[test]
    fn dare_scalar_golden_ratio() {
        // A = C = Σ_w = Σ_v = 1: the fixed point solves Σ² − Σ − 1 = 0.
        let s = solve_dare(
            &scalar(1.0),
            &scalar(1.0),
            &scalar(1.0),
            &scalar(1.0),
            DareOptions::default(),
        )
        .unwrap();
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((s[(0, 0)] - golden).abs() < 1e-10);
    }

    #[test]
    fn dare_scalar_lyapunov_limit() {
        // C = 0: Σ = A² Σ + Σ_w, so Σ = 0.75 / (1 − 0.25) = 1.
        let s = solve_dare(
            &scalar(0.5),
            &scalar(0.0),
            &scalar(0.75),
            &scalar(1.0),
            DareOptions::default(),
        )
        .unwrap();
        assert!((s[(0, 0)] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn dare_rejects_indefinite_sigma_v() {
        let r = solve_dare(
            &scalar(0.5),
            &scalar(1.0),
            &scalar(1.0),
            &scalar(0.0),
            DareOptions::default(),
        );
        assert!(matches!(r, Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn dare_residual_small_at_solution() {
        let ad = dmatrix![0.9, 0.1; 0.0, 0.8];
        let c = dmatrix![1.0, 0.0];
        let q = DMatrix::identity(2, 2) * 0.1;
        let r = DMatrix::identity(1, 1) * 0.2;
        let s = solve_dare(&ad, &c, &q, &r, DareOptions::default()).unwrap();
        assert!(dare_residual(&ad, &c, &q, &r, &s).unwrap() < 1e-9);
        // Each of ten extra iterations moves the solution by less than tol.
        let mut s2 = s.clone();
        for _ in 0..10 {
            let next = super::riccati_step(&ad, &c, &q, &r, &s2).unwrap();
            assert!((&next - &s2).amax() < 1e-10);
            s2 = next;
        }
        assert!((s2 - s).amax() < 1e-9);
    }

    fn unit_mode(ad: DMatrix<f64>, c: DMatrix<f64>) -> DiscreteMode {
        let n = ad.nrows();
        DiscreteMode {
            mode_id: ModeId::FaultFree,
            bd: DMatrix::zeros(n, 1),
            c,
            ad,
            dt: 1.0,
            baseline_input: DVector::zeros(1),
            perturbation_columns: vec![0],
        }
    }

    #[test]
    fn filter_scalar_values() {
        let mode = unit_mode(scalar(0.0), scalar(1.0));
        let noise = NoiseSpec {
            sigma_w: CovSpec::Scalar(1.0),
            sigma_v: CovSpec::Scalar(1.0),
            sigma_0: CovSpec::Scalar(0.0),
            x0_mean: InitialMean::Zero,
        };
        let f = build_filter(&mode, &noise, DareOptions::default()).unwrap();
        assert!((f.gain[(0, 0)] - 0.5).abs() < 1e-10);
        assert!((f.sigma_y[(0, 0)] - 2.0).abs() < 1e-10);
        assert!((f.beta - 1.0 / 2f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn filter_no_measurement() {
        let mode = unit_mode(scalar(0.5), scalar(0.0));
        let noise = NoiseSpec {
            sigma_w: CovSpec::Scalar(0.75),
            sigma_v: CovSpec::Scalar(1.0),
            sigma_0: CovSpec::Scalar(0.0),
            x0_mean: InitialMean::Zero,
        };
        let f = build_filter(&mode, &noise, DareOptions::default()).unwrap();
        assert!(f.gain.amax() < 1e-12);
        assert!((f.sigma_y[(0, 0)] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn inverter_sigma_y_positive_definite() {
        let mm = build_multimodel(
            &InverterParams::nominal(),
            1e-3,
            NoiseSpec::default_spec(),
            (0.5, 0.5),
        )
        .unwrap();
        for mode in [&mm.mode_h, &mm.mode_f] {
            let f = build_filter(mode, &mm.noise, DareOptions::default()).unwrap();
            assert!((f.sigma_y.clone() - f.sigma_y.transpose()).amax() < 1e-14);
            assert!(crate::linalg::sym_eigenvalues(&f.sigma_y)[0] > 0.0);
            assert!(f.beta > 0.0);
            let sw = mm.noise.sigma_w.expand(mode.n_states()).unwrap();
            let sv = mm.noise.sigma_v.expand(2).unwrap();
            assert!(dare_residual(&mode.ad, &mode.c, &sw, &sv, &f.sigma).unwrap() < 1e-9);
        }
    }

    #[test]
    fn beta_invariant_under_output_permutation() {
        let mm = build_multimodel(
            &InverterParams::nominal(),
            1e-3,
            NoiseSpec::default_spec(),
            (0.5, 0.5),
        )
        .unwrap();
        let mut swapped = mm.mode_h.clone();
        let c = swapped.c.clone();
        swapped.c.set_row(0, &c.row(1));
        swapped.c.set_row(1, &c.row(0));
        let f0 = build_filter(&mm.mode_h, &mm.noise, DareOptions::default()).unwrap();
        let f1 = build_filter(&swapped, &mm.noise, DareOptions::default()).unwrap();
        assert!((f0.beta - f1.beta).abs() < 1e-10 * f0.beta);
    }

    #[test]
    fn filter_step_open_loop_and_zero_innovation() {
        let ad = dmatrix![0.9, 0.1; 0.0, 0.8];
        let mut mode = unit_mode(ad.clone(), dmatrix![1.0, 0.0]);
        mode.bd = DMatrix::zeros(2, 1);
        let mut f = SteadyStateFilter {
            mode_id: ModeId::FaultFree,
            gain: DMatrix::zeros(2, 1),
            sigma: DMatrix::identity(2, 2),
            sigma_y: DMatrix::identity(1, 1),
            beta: 1.0,
        };
        let x = DVector::from_vec(vec![1.0, -2.0]);
        let u = DVector::zeros(1);
        let y = DVector::from_vec(vec![5.0]);
        // H = 0: pure open-loop prediction.
        let s = filter_step(&f, &mode, &x, &u, &y).unwrap();
        assert_eq!(s.xhat_next, &ad * &x);
        // y = C x̂: the innovation term vanishes regardless of the gain.
        f.gain = DMatrix::from_element(2, 1, 3.0);
        let y_match = &mode.c * &x;
        let s = filter_step(&f, &mode, &x, &u, &y_match).unwrap();
        assert_eq!(s.xhat_next, &ad * &x);
    }

    #[test]
    fn filter_step_linearity() {
        let ad = dmatrix![0.9, 0.1; -0.2, 0.8];
        let mut mode = unit_mode(ad, dmatrix![1.0, 1.0]);
        mode.bd = DMatrix::from_column_slice(2, 1, &[0.5, 1.5]);
        let f = SteadyStateFilter {
            mode_id: ModeId::FaultFree,
            gain: DMatrix::from_column_slice(2, 1, &[0.3, 0.7]),
            sigma: DMatrix::identity(2, 2),
            sigma_y: DMatrix::identity(1, 1),
            beta: 1.0,
        };
        let x1 = DVector::from_vec(vec![1.0, 2.0]);
        let x2 = DVector::from_vec(vec![-0.5, 0.25]);
        let u1 = DVector::from_vec(vec![2.0]);
        let u2 = DVector::from_vec(vec![-1.0]);
        let y1 = DVector::from_vec(vec![0.7]);
        let y2 = DVector::from_vec(vec![-0.1]);
        let s1 = filter_step(&f, &mode, &x1, &u1, &y1).unwrap();
        let s2 = filter_step(&f, &mode, &x2, &u2, &y2).unwrap();
        let s12 = filter_step(&f, &mode, &(&x1 + &x2), &(&u1 + &u2), &(&y1 + &y2)).unwrap();
        assert!((s12.xhat_next - (s1.xhat_next + s2.xhat_next)).amax() < 1e-12);
    }

    #[test]
    fn filter_step_rejects_dimension_mismatch() {
        let mode = unit_mode(scalar(1.0), scalar(1.0));
        let f = SteadyStateFilter {
            mode_id: ModeId::FaultFree,
            gain: DMatrix::zeros(1, 1),
            sigma: DMatrix::identity(1, 1),
            sigma_y: DMatrix::identity(1, 1),
            beta: 1.0,
        };
        let bad = filter_step(
            &f,
            &mode,
            &DVector::zeros(2),
            &DVector::zeros(1),
            &DVector::zeros(1),
        );
        assert!(matches!(bad, Err(Error::DimensionMismatch(_))));
    }
}
