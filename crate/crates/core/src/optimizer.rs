//! Box-constrained maximization of the separation φ.
//!
//! The covariances in φ do not depend on the perturbation, so minimizing the
//! misidentification bound over `‖Δu‖∞ ≤ γ` is maximization of a convex
//! quadratic over a box, attained at a vertex. The solver is multi-start
//! projected gradient ascent with backtracking, plus an exhaustive vertex
//! oracle for small instances and a harmonic-restricted variant that
//! optimizes sin/cos coefficients instead of raw samples.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::horizon::{j_hat, HorizonStats};

/// How a plan was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanMethod {
    Free,
    Harmonic,
    VertexOracle,
    Zero,
}

impl PlanMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            PlanMethod::Free => "free",
            PlanMethod::Harmonic => "harmonic",
            PlanMethod::VertexOracle => "vertex-oracle",
            PlanMethod::Zero => "zero",
        }
    }
}

/// An N-step perturbation sequence with its bound and achieved separation.
#[derive(Debug, Clone)]
pub struct PerturbationPlan {
    /// `Δu_k = (Δu_d, Δu_q)` for `k = 0..N-1`.
    pub delta_u: Vec<[f64; 2]>,
    pub gamma: f64,
    pub n_steps: usize,
    pub phi: f64,
    pub j_hat: f64,
    pub method: PlanMethod,
}

impl PerturbationPlan {
    /// The all-zero (passive) plan.
    pub fn zero(stats: &HorizonStats, priors: (f64, f64), gamma: f64) -> Result<Self> {
        let v = DVector::zeros(stats.m.ncols());
        let phi = stats.phi_of_vec(&v)?;
        Ok(Self {
            delta_u: vec![[0.0, 0.0]; stats.n_steps],
            gamma,
            n_steps: stats.n_steps,
            phi,
            j_hat: j_hat(priors.0, priors.1, phi),
            method: PlanMethod::Zero,
        })
    }

    pub fn inf_norm(&self) -> f64 {
        self.delta_u
            .iter()
            .flat_map(|du| du.iter())
            .fold(0.0, |acc, x| acc.max(x.abs()))
    }

    pub fn mean_abs(&self) -> f64 {
        if self.delta_u.is_empty() {
            return 0.0;
        }
        let sum: f64 = self
            .delta_u
            .iter()
            .flat_map(|du| du.iter())
            .map(|x| x.abs())
            .sum();
        sum / (2 * self.delta_u.len()) as f64
    }

    pub fn to_vec(&self) -> DVector<f64> {
        crate::horizon::vec_of_sequence(&self.delta_u)
    }
}

/// Multi-start settings. Defaults: 16 random vertex starts (plus the zero
/// and aligned starts that are always included), 10 000 ascent iterations,
/// seed 0.
#[derive(Debug, Clone, Copy)]
pub struct OptimizeOptions {
    pub n_starts: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            n_starts: 16,
            max_iters: 10_000,
            seed: 0,
        }
    }
}

/// Quadratic form `quad(v) = ¼ (c0 + 2 bᵀv + vᵀQv)` — the mean term of φ.
struct QuadForm<'a> {
    c0: f64,
    b: DVector<f64>,
    q: &'a DMatrix<f64>,
}

impl QuadForm<'_> {
    fn value(&self, v: &DVector<f64>) -> f64 {
        0.25 * (self.c0 + 2.0 * self.b.dot(v) + (self.q * v).dot(v))
    }

    fn gradient(&self, v: &DVector<f64>) -> DVector<f64> {
        (&self.b + self.q * v) * 0.5
    }
}

fn clamp_box(v: &mut DVector<f64>, gamma: f64) {
    for x in v.iter_mut() {
        *x = x.clamp(-gamma, gamma);
    }
}

fn lex_smaller(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    for (x, y) in a.iter().zip(b.iter()) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// Projected gradient ascent from one start; returns the reached point and
/// its quad value. Ascent alternates with greedy single- and paired-
/// coordinate passes (pinning coordinates at ±γ) because plain projected
/// ascent can park at a vertex that a one- or two-coordinate move still
/// improves. The passes evaluate move gains in O(1) via a cached `Q v`.
fn ascend(
    quad: &QuadForm<'_>,
    start: DVector<f64>,
    gamma: f64,
    max_iters: usize,
) -> (DVector<f64>, f64) {
    let mut v = start;
    clamp_box(&mut v, gamma);
    let mut f = quad.value(&v);
    loop {
        let mut moved = false;
        for _ in 0..max_iters {
            let g = quad.gradient(&v);
            let mut t = 1.0;
            let mut improved = false;
            while t > 1e-16 {
                let mut vn = &v + &g * t;
                clamp_box(&mut vn, gamma);
                let fnew = quad.value(&vn);
                if fnew > f + 1e-12 {
                    v = vn;
                    f = fnew;
                    improved = true;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !improved {
                break;
            }
        }
        if coordinate_polish(quad, &mut v, gamma) {
            f = quad.value(&v);
            moved = true;
        }
        if !moved {
            break;
        }
    }
    (v, f)
}

/// Greedy 1- and 2-coordinate improvement over the box vertices; returns
/// whether anything moved. Gain of moving coordinate i by δ is
/// `¼ (2 b_i δ + 2 δ w_i + Q_ii δ²)` with `w = Q v`, and a pair move adds
/// the cross term `½ δ_i δ_j Q_ij`.
fn coordinate_polish(quad: &QuadForm<'_>, v: &mut DVector<f64>, gamma: f64) -> bool {
    if gamma == 0.0 {
        return false;
    }
    let dim = v.len();
    let q = quad.q;
    let b = &quad.b;
    let mut w = q * &*v;
    let single_gain = |w: &DVector<f64>, i: usize, d: f64| {
        0.25 * (2.0 * b[i] * d + 2.0 * d * w[i] + q[(i, i)] * d * d)
    };
    let mut moved_any = false;
    loop {
        let mut improved = false;
        for i in 0..dim {
            for cand in [gamma, -gamma] {
                let d = cand - v[i];
                if d == 0.0 {
                    continue;
                }
                if single_gain(&w, i, d) > 1e-12 {
                    v[i] = cand;
                    w += q.column(i) * d;
                    improved = true;
                    break;
                }
            }
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                let mut best: Option<(f64, f64, f64, f64, f64)> = None;
                for ci in [gamma, -gamma] {
                    for cj in [gamma, -gamma] {
                        let di = ci - v[i];
                        let dj = cj - v[j];
                        if di == 0.0 && dj == 0.0 {
                            continue;
                        }
                        let gain = single_gain(&w, i, di)
                            + single_gain(&w, j, dj)
                            + 0.5 * di * dj * q[(i, j)];
                        if gain > 1e-12 && best.is_none_or(|(g, ..)| gain > g) {
                            best = Some((gain, ci, cj, di, dj));
                        }
                    }
                }
                if let Some((_, ci, cj, di, dj)) = best {
                    v[i] = ci;
                    v[j] = cj;
                    w += q.column(i) * di + q.column(j) * dj;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
        moved_any = true;
    }
    moved_any
}

/// Maximize the quadratic mean term over the box `[-γ, γ]^dim` by
/// multi-start projected gradient ascent. Starts: the origin, the aligned
/// vertex `γ·sign(b)`, and `n_starts` seeded random vertices. Ties are broken
/// toward the lexicographically smallest vector.
pub fn maximize_quad_over_box(
    c0: f64,
    b: &DVector<f64>,
    q: &DMatrix<f64>,
    gamma: f64,
    opts: &OptimizeOptions,
) -> (DVector<f64>, f64) {
    let dim = b.len();
    let quad = QuadForm {
        c0,
        b: b.clone(),
        q,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts: Vec<DVector<f64>> = Vec::with_capacity(opts.n_starts + 2);
    starts.push(DVector::zeros(dim));
    starts.push(DVector::from_fn(dim, |i, _| gamma * sign0(b[i])));
    for _ in 0..opts.n_starts {
        starts.push(DVector::from_fn(dim, |_, _| {
            if rng.random::<bool>() {
                gamma
            } else {
                -gamma
            }
        }));
    }
    let mut best: Option<(DVector<f64>, f64)> = None;
    for start in starts {
        let (v, f) = ascend(&quad, start, gamma, opts.max_iters);
        best = Some(match best {
            None => (v, f),
            Some((bv, bf)) => {
                if f > bf || (f == bf && lex_smaller(&v, &bv)) {
                    (v, f)
                } else {
                    (bv, bf)
                }
            }
        });
    }
    best.unwrap()
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn plan_from_vec(
    stats: &HorizonStats,
    priors: (f64, f64),
    gamma: f64,
    v: &DVector<f64>,
    method: PlanMethod,
) -> Result<PerturbationPlan> {
    if stats.m.ncols() != 2 * stats.n_steps {
        return Err(Error::DimensionMismatch(format!(
            "plan reshape: M has {} columns, expected {}",
            stats.m.ncols(),
            2 * stats.n_steps
        )));
    }
    let phi = stats.phi_of_vec(v)?;
    let delta_u = (0..stats.n_steps)
        .map(|k| [v[2 * k], v[2 * k + 1]])
        .collect();
    Ok(PerturbationPlan {
        delta_u,
        gamma,
        n_steps: stats.n_steps,
        phi,
        j_hat: j_hat(priors.0, priors.1, phi),
        method,
    })
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::InvalidParams(format!(
            "gamma must be >= 0, got {gamma}"
        )));
    }
    Ok(())
}

/// Free-form bound minimization over the box `‖Δu_k‖∞ ≤ γ`.
///
/// The returned plan always satisfies `φ(plan) ≥ φ(0)` because the origin is
/// one of the ascent starts.
pub fn optimize_free(
    stats: &HorizonStats,
    priors: (f64, f64),
    gamma: f64,
    opts: &OptimizeOptions,
) -> Result<PerturbationPlan> {
    check_gamma(gamma)?;
    let (c0, b, q) = stats.quad_coefficients();
    let (v, _) = maximize_quad_over_box(c0, &b, q, gamma, opts);
    plan_from_vec(stats, priors, gamma, &v, PlanMethod::Free)
}

/// Exact maximizer by enumerating all `2^{2N}` box vertices plus the origin.
/// Limited to `2N ≤ 16`.
pub fn vertex_oracle(
    stats: &HorizonStats,
    priors: (f64, f64),
    gamma: f64,
) -> Result<PerturbationPlan> {
    check_gamma(gamma)?;
    let dim = stats.m.ncols();
    if dim > 16 {
        return Err(Error::TooLarge(format!(
            "vertex oracle enumerates 2^{dim} points; limit is 2N <= 16"
        )));
    }
    let (c0, b, q) = stats.quad_coefficients();
    let quad = QuadForm { c0, b, q };
    let mut best_v = DVector::zeros(dim);
    let mut best_f = quad.value(&best_v);
    let mut v = DVector::zeros(dim);
    for mask in 0u32..(1u32 << dim) {
        for i in 0..dim {
            v[i] = if mask >> i & 1 == 1 { gamma } else { -gamma };
        }
        let f = quad.value(&v);
        if f > best_f || (f == best_f && lex_smaller(&v, &best_v)) {
            best_f = f;
            best_v.copy_from(&v);
        }
    }
    plan_from_vec(stats, priors, gamma, &best_v, PlanMethod::VertexOracle)
}

/// Sampled sin/cos basis at integer multiples of the fundamental frequency.
///
/// Columns are ordered per order as (d-sin, d-cos, q-sin, q-cos); the
/// coefficient dimension is `4 × |orders|` and the matrix maps coefficients
/// to the step-major stacked sequence of length `2N`.
#[derive(Debug, Clone)]
pub struct HarmonicBasis {
    pub orders: Vec<u32>,
    pub fundamental_hz: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub matrix: DMatrix<f64>,
}

impl HarmonicBasis {
    pub fn new(orders: Vec<u32>, fundamental_hz: f64, dt: f64, n_steps: usize) -> Result<Self> {
        if orders.is_empty() {
            return Err(Error::InvalidParams("harmonic order set is empty".into()));
        }
        if fundamental_hz <= 0.0
            || fundamental_hz.is_nan()
            || dt <= 0.0
            || dt.is_nan()
            || n_steps == 0
        {
            return Err(Error::InvalidParams(
                "harmonic basis needs fundamental > 0, dt > 0, n_steps >= 1".into(),
            ));
        }
        let mut matrix = DMatrix::zeros(2 * n_steps, 4 * orders.len());
        for (oi, &order) in orders.iter().enumerate() {
            let w = 2.0 * std::f64::consts::PI * order as f64 * fundamental_hz;
            for k in 0..n_steps {
                let (s, c) = (w * k as f64 * dt).sin_cos();
                for axis in 0..2 {
                    matrix[(2 * k + axis, 4 * oi + 2 * axis)] = s;
                    matrix[(2 * k + axis, 4 * oi + 2 * axis + 1)] = c;
                }
            }
        }
        Ok(Self {
            orders,
            fundamental_hz,
            dt,
            n_steps,
            matrix,
        })
    }

    /// The default restriction: 3rd, 5th and 7th harmonics of 60 Hz.
    pub fn default_orders(dt: f64, n_steps: usize) -> Result<Self> {
        Self::new(vec![3, 5, 7], 60.0, dt, n_steps)
    }
}

/// Bound minimization restricted to the harmonic span. Gradient steps act on
/// the sin/cos coefficients; after each step the coefficients are rescaled so
/// the realized sequence satisfies the ∞-norm box.
pub fn optimize_harmonic(
    stats: &HorizonStats,
    priors: (f64, f64),
    gamma: f64,
    basis: &HarmonicBasis,
    opts: &OptimizeOptions,
) -> Result<PerturbationPlan> {
    check_gamma(gamma)?;
    if basis.n_steps != stats.n_steps || basis.matrix.nrows() != stats.m.ncols() {
        return Err(Error::DimensionMismatch(
            "harmonic basis does not match the horizon".into(),
        ));
    }
    let phi_m = &basis.matrix;
    let n_coef = phi_m.ncols();
    let (c0, b, q) = stats.quad_coefficients();
    let bc = phi_m.transpose() * &b;
    let qc = phi_m.transpose() * q * phi_m;
    let quad = QuadForm { c0, b: bc, q: &qc };

    let feasible = |c: &DVector<f64>| -> DVector<f64> {
        let realized = phi_m * c;
        let peak = realized.amax();
        if peak > gamma {
            if gamma == 0.0 {
                DVector::zeros(n_coef)
            } else {
                c * (gamma / peak)
            }
        } else {
            c.clone()
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts: Vec<DVector<f64>> = vec![DVector::zeros(n_coef)];
    let svd = phi_m.clone().svd(true, true);
    // Least-squares images of the aligned vertex and of the free optimum;
    // when the basis spans the whole sequence space these land on the
    // corresponding vertices exactly.
    let aligned = DVector::from_fn(b.len(), |i, _| gamma * sign0(b[i]));
    if let Ok(c) = svd.solve(&aligned, 1e-12) {
        starts.push(feasible(&c.column(0).into_owned()));
    }
    let (free_v, _) = maximize_quad_over_box(c0, &b, q, gamma, opts);
    if let Ok(c) = svd.solve(&free_v, 1e-12) {
        starts.push(feasible(&c.column(0).into_owned()));
    }
    for _ in 0..opts.n_starts {
        let c = DVector::from_fn(n_coef, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        starts.push(feasible(&c));
    }

    let mut best: Option<(DVector<f64>, f64)> = None;
    for start in starts {
        let mut c = feasible(&start);
        let mut f = quad.value(&c);
        for _ in 0..opts.max_iters {
            let g = quad.gradient(&c);
            let mut t = 1.0;
            let mut improved = false;
            while t > 1e-16 {
                let cn = feasible(&(&c + &g * t));
                let fnew = quad.value(&cn);
                if fnew > f + 1e-12 {
                    c = cn;
                    f = fnew;
                    improved = true;
                    break;
                }
                t *= 0.5;
            }
            if !improved {
                break;
            }
        }
        best = Some(match best {
            None => (c, f),
            Some((bv, bf)) => {
                if f > bf || (f == bf && lex_smaller(&(phi_m * &c), &(phi_m * &bv))) {
                    (c, f)
                } else {
                    (bv, bf)
                }
            }
        });
    }
    let (coef, _) = best.unwrap();
    let v = phi_m * coef;
    plan_from_vec(stats, priors, gamma, &v, PlanMethod::Harmonic)
}
