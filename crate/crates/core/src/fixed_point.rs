//! Picard iteration `S ← 𝒢(S)` in the Thompson metric, an optional trace
//! scaling that keeps `tr(S⁻¹𝒢(S)) = d`, and empirical contraction factors.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};
use crate::manifold::dist_thompson;
use crate::optim::{Status, TraceRow};
use crate::random::{random_spd, random_spd_near, trial_rng};
use crate::spd::{SpdMatrix, SymMatrix};

/// A self-map of the SPD cone.
pub trait FixedPointMap: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, s: &SpdMatrix) -> Result<SpdMatrix>;

    /// Objective recorded in traces, if the map comes from one.
    fn objective(&self, _s: &SpdMatrix) -> Option<f64> {
        None
    }

    /// `𝒢(S)` together with the objective at `S`; override when both come
    /// from one computation.
    fn apply_with_objective(&self, s: &SpdMatrix) -> Result<(SpdMatrix, Option<f64>)> {
        Ok((self.apply(s)?, self.objective(s)))
    }
}

/// Adapts a closure to [`FixedPointMap`].
pub struct FnMap<F> {
    dim: usize,
    f: F,
}

impl<F> FnMap<F>
where
    F: Fn(&SpdMatrix) -> Result<SpdMatrix> + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> FixedPointMap for FnMap<F>
where
    F: Fn(&SpdMatrix) -> Result<SpdMatrix> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, s: &SpdMatrix) -> Result<SpdMatrix> {
        (self.f)(s)
    }
}

/// `S ↦ 𝒢(S) + ℱ(S)`.
pub struct SumMap<'a> {
    pub g: &'a dyn FixedPointMap,
    pub f: &'a dyn FixedPointMap,
}

impl FixedPointMap for SumMap<'_> {
    fn dim(&self) -> usize {
        self.g.dim()
    }

    fn apply(&self, s: &SpdMatrix) -> Result<SpdMatrix> {
        self.g.apply(s)?.add(&self.f.apply(s)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    Off,
    TraceD,
}

impl fmt::Display for Scaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scaling::Off => "off",
            Scaling::TraceD => "trace_d",
        })
    }
}

impl FromStr for Scaling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(Scaling::Off),
            "trace_d" => Ok(Scaling::TraceD),
            other => Err(Error::InvalidInput(format!("unknown scaling `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FpConfig {
    /// Stop once `δ_T(𝒢(S), S) ≤ step_tol`.
    pub step_tol: f64,
    pub max_iter: usize,
    pub scaling: Scaling,
    pub initial: Option<SpdMatrix>,
}

impl Default for FpConfig {
    fn default() -> Self {
        Self {
            step_tol: 1e-8,
            max_iter: 5000,
            scaling: Scaling::Off,
            initial: None,
        }
    }
}

impl FpConfig {
    pub fn scaled() -> Self {
        Self {
            scaling: Scaling::TraceD,
            ..Self::default()
        }
    }
}

/// Largest number of map evaluations spent on one scaling factor.
pub const MAX_SCALING_EVALS: usize = 8;

/// Tolerance on `tr(S⁻¹𝒢(S)) − d` accepted by the scaling search.
pub const SCALING_TOL: f64 = 1e-10;

/// Result of [`picard_solve`].
///
/// Trace rows hold the Thompson step `δ_T(S_k, S_{k−1})` and, in the
/// `grad_norm` column, the diagnostic `‖M(S_k) − I‖_F` with
/// `M(S) = S^{-1/2} 𝒢(S) S^{-1/2}`. `cost` is the map's objective or NaN.
#[derive(Debug, Clone)]
pub struct FpReport {
    pub fixed_point: SpdMatrix,
    pub trace: Vec<TraceRow>,
    pub status: Status,
    /// `δ_T(𝒢(S*), S*)` at the returned point.
    pub residual: f64,
    /// Map evaluations, including those spent on scaling.
    pub evaluations: usize,
    /// Iterations where the scaling search gave up and the plain step was taken.
    pub scaling_fallbacks: usize,
}

impl FpReport {
    pub fn iterations(&self) -> usize {
        self.trace.last().map_or(0, |r| r.iter)
    }
}

fn checked_apply<G: FixedPointMap + ?Sized>(g: &G, s: &SpdMatrix) -> Result<SpdMatrix> {
    check_output(s, g.apply(s).map_err(left_cone)?)
}

/// Map value and objective (NaN when absent) at `s`.
fn checked_eval<G: FixedPointMap + ?Sized>(g: &G, s: &SpdMatrix) -> Result<(SpdMatrix, f64)> {
    let (out, obj) = g.apply_with_objective(s).map_err(left_cone)?;
    Ok((check_output(s, out)?, obj.unwrap_or(f64::NAN)))
}

fn left_cone(e: Error) -> Error {
    match e {
        Error::Domain(m) => Error::NonFinite(format!("map left the PD cone: {m}")),
        other => other,
    }
}

fn check_output(s: &SpdMatrix, out: SpdMatrix) -> Result<SpdMatrix> {
    if out.dim() != s.dim() {
        return Err(dim_mismatch(s.dim(), out.dim()));
    }
    if !out.as_matrix().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("map output".into()));
    }
    Ok(out)
}

/// `L⁻¹ G L⁻ᵀ` for `S = L Lᵀ`, orthogonally similar to `M(S)`.
fn whitened(s: &SpdMatrix, g: &SpdMatrix) -> DMatrix<f64> {
    s.whiten(g.as_matrix())
}

/// `‖M(S) − I‖_F`.
pub fn diagnostic(s: &SpdMatrix, g: &SpdMatrix) -> f64 {
    let d = s.dim();
    (whitened(s, g) - DMatrix::<f64>::identity(d, d)).norm()
}

/// `tr(S⁻¹ 𝒢(S)) − d`.
fn trace_gap(s: &SpdMatrix, g: &SpdMatrix) -> f64 {
    whitened(s, g).trace() - s.dim() as f64
}

struct Scaled {
    /// Scaled point, its map value and its objective.
    found: Option<(SpdMatrix, SpdMatrix, f64)>,
    evals: usize,
}

/// Finds `α` with `ψ(α) = tr((αT)⁻¹𝒢(αT)) − d = 0` on `u = log α`.
///
/// The search starts from `α = 1`, where `𝒢(T)` is already known, and
/// `α₀ = tr(T⁻¹𝒢(T))/d`, which is exact when `𝒢` is constant. Until the root is
/// bracketed the secant is extrapolated (at most `e²` per step); afterwards the
/// Illinois variant of regula falsi is used. The map value at the accepted
/// point is returned with it.
fn scale_step<G: FixedPointMap + ?Sized>(g: &G, t: &SpdMatrix, g_t: &SpdMatrix, cost_t: f64) -> Result<Scaled> {
    let d = t.dim() as f64;
    let tol = SCALING_TOL * d;
    let psi1 = trace_gap(t, g_t);
    if psi1.abs() <= tol {
        return Ok(Scaled { found: Some((t.clone(), g_t.clone(), cost_t)), evals: 0 });
    }
    let alpha0 = (psi1 + d) / d;
    if !(alpha0 > 0.0 && alpha0.is_finite()) {
        return Ok(Scaled { found: None, evals: 0 });
    }

    let mut evals = 0usize;
    let mut prev = (0.0f64, psi1);
    let mut u = alpha0.ln();
    let mut bracket: Option<((f64, f64), (f64, f64))> = None;
    let mut last_side = 0i8;
    // 𝒢(T) is the first of the budgeted evaluations
    while evals < MAX_SCALING_EVALS - 1 {
        evals += 1;
        let p = t.scale(u.exp())?;
        let (gp, cost_p) = checked_eval(g, &p)?;
        let psi = trace_gap(&p, &gp);
        if !psi.is_finite() {
            break;
        }
        if psi.abs() <= tol {
            return Ok(Scaled { found: Some((p, gp, cost_p)), evals });
        }
        let cur = (u, psi);
        match bracket {
            None if psi.signum() != prev.1.signum() => {
                bracket = Some((prev, cur));
                u = secant(prev, cur);
            }
            None => {
                let step = secant(prev, cur) - cur.0;
                let step = if step.is_finite() { step.clamp(-2.0, 2.0) } else { -2.0 * psi.signum() };
                prev = cur;
                u = cur.0 + step;
            }
            Some((mut lo, mut hi)) => {
                if psi.signum() == lo.1.signum() {
                    lo = cur;
                    if last_side == -1 {
                        hi.1 *= 0.5;
                    }
                    last_side = -1;
                } else {
                    hi = cur;
                    if last_side == 1 {
                        lo.1 *= 0.5;
                    }
                    last_side = 1;
                }
                bracket = Some((lo, hi));
                u = secant(lo, hi);
            }
        }
        if let Some((lo, hi)) = bracket {
            let (l, h) = (lo.0.min(hi.0), lo.0.max(hi.0));
            if !(u > l && u < h) {
                u = 0.5 * (l + h);
            }
        }
    }
    Ok(Scaled { found: None, evals })
}

fn secant(a: (f64, f64), b: (f64, f64)) -> f64 {
    b.0 - b.1 * (b.0 - a.0) / (b.1 - a.1)
}

/// Picard iteration, optionally with trace scaling.
///
/// Each step computes `T = 𝒢(S_k)`; unscaled, `S_{k+1} = T`, scaled,
/// `S_{k+1} = α_k T` with `tr(S_{k+1}⁻¹ 𝒢(S_{k+1})) = d`. The map value at the
/// new iterate is kept for the next step, so the stopping test
/// `δ_T(𝒢(S_k), S_k) ≤ step_tol` costs nothing extra.
pub fn picard_solve<G: FixedPointMap + ?Sized>(g: &G, cfg: &FpConfig) -> Result<FpReport> {
    if !(cfg.step_tol > 0.0) {
        return Err(Error::InvalidInput("step_tol must be positive".into()));
    }
    let d = g.dim();
    let start = Instant::now();
    let mut s = cfg.initial.clone().unwrap_or_else(|| SpdMatrix::identity(d));
    if s.dim() != d {
        return Err(dim_mismatch(d, s.dim()));
    }
    let (mut g_s, mut cost_s) = checked_eval(g, &s)?;
    let mut evals = 1usize;
    let mut fallbacks = 0usize;
    let mut trace = vec![TraceRow {
        iter: 0,
        cost: cost_s,
        grad_norm: diagnostic(&s, &g_s),
        delta_t_step: 0.0,
        time_s: start.elapsed().as_secs_f64(),
    }];
    let mut residual = dist_thompson(&g_s, &s)?;
    let mut status = if residual <= cfg.step_tol { Status::Converged } else { Status::MaxIter };

    let mut iter = 0;
    while status != Status::Converged && iter < cfg.max_iter {
        iter += 1;
        let (next, g_next, cost_next) = match cfg.scaling {
            Scaling::Off => {
                let (g_next, cost_next) = checked_eval(g, &g_s)?;
                evals += 1;
                (g_s, g_next, cost_next)
            }
            Scaling::TraceD => {
                let (g_t, cost_t) = checked_eval(g, &g_s)?;
                evals += 1;
                let sc = scale_step(g, &g_s, &g_t, cost_t)?;
                evals += sc.evals;
                match sc.found {
                    Some(found) => found,
                    None => {
                        fallbacks += 1;
                        (g_s, g_t, cost_t)
                    }
                }
            }
        };
        let step = dist_thompson(&next, &s)?;
        s = next;
        g_s = g_next;
        cost_s = cost_next;
        residual = dist_thompson(&g_s, &s)?;
        trace.push(TraceRow {
            iter,
            cost: cost_s,
            grad_norm: diagnostic(&s, &g_s),
            delta_t_step: step,
            time_s: start.elapsed().as_secs_f64(),
        });
        if residual <= cfg.step_tol {
            status = Status::Converged;
        }
    }

    Ok(FpReport {
        fixed_point: s,
        trace,
        status,
        residual,
        evaluations: evals,
        scaling_fallbacks: fallbacks,
    })
}

fn contraction_ratio<G: FixedPointMap + ?Sized>(g: &G, a: &SpdMatrix, b: &SpdMatrix) -> Result<Option<f64>> {
    let dist = dist_thompson(a, b)?;
    if dist <= 1e-12 {
        return Ok(None);
    }
    let ga = checked_apply(g, a)?;
    let gb = checked_apply(g, b)?;
    Ok(Some(dist_thompson(&ga, &gb)? / dist))
}

fn max_ratio<G, P>(g: &G, n_pairs: usize, seed: u64, sample: P) -> Result<f64>
where
    G: FixedPointMap + ?Sized,
    P: Fn(&mut rand_chacha::ChaCha8Rng) -> (SpdMatrix, SpdMatrix) + Sync,
{
    if n_pairs == 0 {
        return Err(Error::InvalidInput("n_pairs must be at least 1".into()));
    }
    let ratios: Result<Vec<f64>> = (0..n_pairs as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, trial);
            loop {
                let (a, b) = sample(&mut rng);
                if let Some(r) = contraction_ratio(g, &a, &b)? {
                    return Ok(r);
                }
            }
        })
        .collect();
    Ok(ratios?.into_iter().fold(0.0, f64::max))
}

/// `max δ_T(𝒢(A), 𝒢(B)) / δ_T(A, B)` over random PD pairs from the shared
/// generator (pairs at distance below `1e-12` are redrawn).
pub fn estimate_contraction<G: FixedPointMap + ?Sized>(g: &G, n_pairs: usize, seed: u64) -> Result<f64> {
    let d = g.dim();
    max_ratio(g, n_pairs, seed, |rng| (random_spd(rng, d), random_spd(rng, d)))
}

/// As [`estimate_contraction`], with both points drawn as
/// `C^{1/2} exp(E) C^{1/2}` around `center`.
pub fn estimate_contraction_near<G: FixedPointMap + ?Sized>(
    g: &G,
    center: &SpdMatrix,
    spread: f64,
    n_pairs: usize,
    seed: u64,
) -> Result<f64> {
    if center.dim() != g.dim() {
        return Err(dim_mismatch(g.dim(), center.dim()));
    }
    max_ratio(g, n_pairs, seed, |rng| {
        (random_spd_near(rng, center, spread), random_spd_near(rng, center, spread))
    })
}

/// `S ↦ S^p`.
pub fn power_map(dim: usize, p: f64) -> FnMap<impl Fn(&SpdMatrix) -> Result<SpdMatrix> + Sync> {
    FnMap::new(dim, move |s: &SpdMatrix| Ok(s.pow(p)))
}

/// `S ↦ S`.
pub fn identity_map(dim: usize) -> FnMap<impl Fn(&SpdMatrix) -> Result<SpdMatrix> + Sync> {
    FnMap::new(dim, |s: &SpdMatrix| Ok(s.clone()))
}

/// Symmetric part of `M(S) = S^{-1/2}𝒢(S)S^{-1/2}`.
pub fn m_matrix(s: &SpdMatrix, g_s: &SpdMatrix) -> SymMatrix {
    let ih = s.inv_sqrt();
    SymMatrix::symmetrize(ih.as_matrix() * g_s.as_matrix() * ih.as_matrix())
}
