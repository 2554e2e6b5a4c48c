//! Multiple-model posterior tracking: residuals, Bayesian update, decision.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::ModeId;

/// Posterior probabilities never leave `[PROB_FLOOR, 1 - PROB_FLOOR]`; the
/// multiplicative update cannot recover from an exact zero.
pub const PROB_FLOOR: f64 = 1e-12;

/// Posterior over the two modes. Always normalized and floored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorState {
    p_h: f64,
    p_f: f64,
}

impl PosteriorState {
    pub fn new(p_h: f64, p_f: f64) -> Result<Self> {
        if !p_h.is_finite() || !p_f.is_finite() || (p_h + p_f - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParams(format!(
                "posterior must sum to 1, got ({p_h}, {p_f})"
            )));
        }
        Ok(Self::floored(p_h, p_f))
    }

    // Clamping p_f and deriving p_h keeps the pair summing to one exactly.
    fn floored(_p_h: f64, p_f: f64) -> Self {
        let p_f = p_f.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        Self {
            p_h: 1.0 - p_f,
            p_f,
        }
    }

    pub fn p_h(&self) -> f64 {
        self.p_h
    }

    pub fn p_f(&self) -> f64 {
        self.p_f
    }

    pub fn prob(&self, mode: ModeId) -> f64 {
        match mode {
            ModeId::FaultFree => self.p_h,
            ModeId::Faulty => self.p_f,
        }
    }
}

/// Residual norms of the two mode filters at one step.
#[derive(Debug, Clone, Copy)]
pub struct Residuals {
    pub alpha_h: f64,
    pub alpha_f: f64,
}

/// Shape of the per-mode likelihood used in the posterior update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LikelihoodForm {
    /// `β e^{−α}` with the unsquared residual norm, implemented verbatim.
    #[default]
    ExponentialNorm,
    /// The Gaussian alternative `β e^{−α²/2}`, selectable for comparison.
    Gaussian,
}

/// Euclidean residual norms `α_i = ‖y − ŷ_i‖`.
pub fn residuals(
    y: &DVector<f64>,
    yhat_h: &DVector<f64>,
    yhat_f: &DVector<f64>,
) -> Result<Residuals> {
    if y.len() != yhat_h.len() || y.len() != yhat_f.len() {
        return Err(Error::DimensionMismatch(format!(
            "residuals: y {} vs predictions {}/{}",
            y.len(),
            yhat_h.len(),
            yhat_f.len()
        )));
    }
    Ok(Residuals {
        alpha_h: (y - yhat_h).norm(),
        alpha_f: (y - yhat_f).norm(),
    })
}

/// Bayesian posterior update
/// `p⁺_i ∝ β_i e^{−α_i} p_i`, then floor and renormalize.
pub fn posterior_update(
    state: PosteriorState,
    res: Residuals,
    beta_h: f64,
    beta_f: f64,
    form: LikelihoodForm,
) -> Result<PosteriorState> {
    if beta_h <= 0.0 || beta_f <= 0.0 || beta_h.is_nan() || beta_f.is_nan() {
        return Err(Error::InvalidParams(format!(
            "betas must be > 0, got ({beta_h}, {beta_f})"
        )));
    }
    if !res.alpha_h.is_finite()
        || !res.alpha_f.is_finite()
        || res.alpha_h < 0.0
        || res.alpha_f < 0.0
    {
        return Err(Error::InvalidParams(
            "residuals must be finite and >= 0".into(),
        ));
    }
    let weight = |alpha: f64| match form {
        LikelihoodForm::ExponentialNorm => (-alpha).exp(),
        LikelihoodForm::Gaussian => (-0.5 * alpha * alpha).exp(),
    };
    let lh = beta_h * weight(res.alpha_h);
    let lf = beta_f * weight(res.alpha_f);
    let den = state.p_h * lh + state.p_f * lf;
    if den <= 0.0 || !den.is_finite() {
        return Err(Error::LikelihoodUnderflow);
    }
    Ok(PosteriorState::floored(
        state.p_h * lh / den,
        state.p_f * lf / den,
    ))
}

/// Maximum-posterior decision; an exact tie returns the fault-free mode.
pub fn decide(state: PosteriorState) -> ModeId {
    if state.p_f > state.p_h {
        ModeId::Faulty
    } else {
        ModeId::FaultFree
    }
}
