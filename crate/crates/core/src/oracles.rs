//! Randomized numerical checks of matrix inequalities: midpoint g-convexity,
//! log-g-convexity, eigenvalue log-majorization, Thompson metric properties,
//! contraction of maps and the Kronecker identity for geometric means.
//!
//! Each trial yields a slack: nonnegative when the inequality holds, divided by
//! the largest magnitude among `1` and the terms compared. A trial is a
//! violation when its slack is below `−tol`.

use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed_point::{identity_map, power_map, FixedPointMap, SumMap};
use crate::manifold;
use crate::optim::s_divergence;
use crate::random::{random_full_rank, random_spd, rng, trial_rng};
use crate::spd::{self, SpdMatrix, SymMatrix};

/// Default violation tolerance.
pub const DEFAULT_TOL: f64 = 1e-9;
/// Default trial count for shipped suites.
pub const DEFAULT_TRIALS: usize = 1000;
/// Default seed for shipped suites.
pub const DEFAULT_SEED: u64 = 1;

/// Largest condition number of `M` in the congruence equality checks.
const CONGRUENCE_CONDITION: f64 = 1e2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub trials: usize,
    pub violations: usize,
    /// Most negative margin observed (the smallest slack).
    pub worst_slack: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} trials={} violations={} worst_slack={:.3e}", self.name, self.trials, self.violations, self.worst_slack)
    }
}

/// The numeric kernels the checks rely on. Swapping one for a faulty version
/// must make some check fail.
#[derive(Clone, Copy)]
pub struct Kernels {
    /// `A #_t B`.
    pub geodesic: fn(&SpdMatrix, &SpdMatrix, f64) -> Result<SpdMatrix>,
    pub dist_thompson: fn(&SpdMatrix, &SpdMatrix) -> Result<f64>,
}

impl Default for Kernels {
    fn default() -> Self {
        Self { geodesic: spd::geodesic, dist_thompson: manifold::dist_thompson }
    }
}

impl Kernels {
    fn mean(&self, a: &SpdMatrix, b: &SpdMatrix) -> Result<SpdMatrix> {
        (self.geodesic)(a, b, 0.5)
    }
}

fn rel_slack(rhs: f64, lhs: f64) -> f64 {
    (rhs - lhs) / rhs.abs().max(lhs.abs()).max(1.0)
}

/// Slack of `lhs ≤ ½(a + b)` relative to the magnitudes of all three terms.
fn midpoint_slack(lhs: f64, a: f64, b: f64) -> f64 {
    (0.5 * (a + b) - lhs) / a.abs().max(b.abs()).max(lhs.abs()).max(1.0)
}

/// Runs `trials` independent trials in parallel; trial `k` draws from stream
/// `k` of `seed`, so the report does not depend on scheduling.
fn run_trials<F>(name: String, trials: usize, seed: u64, tol: f64, trial: F) -> Result<CheckReport>
where
    F: Fn(&mut ChaCha8Rng) -> Result<f64> + Sync,
{
    run_trials_by(name, trials, seed, |s| !(s >= -tol), trial)
}

fn run_trials_by<F, V>(name: String, trials: usize, seed: u64, violated: V, trial: F) -> Result<CheckReport>
where
    F: Fn(&mut ChaCha8Rng) -> Result<f64> + Sync,
    V: Fn(f64) -> bool,
{
    let slacks: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|k| trial(&mut trial_rng(seed, k)))
        .collect::<Result<_>>()?;
    let violations = slacks.iter().filter(|s| violated(**s)).count();
    let worst_slack = slacks.iter().copied().fold(f64::INFINITY, |a, b| if b.is_nan() { f64::NEG_INFINITY } else { a.min(b) });
    Ok(CheckReport { name, trials, violations, worst_slack })
}

/// `Σ_{j≤k} f(λ_j↓)` for eigenvalues sorted descending.
fn top_k_sum(a: &SpdMatrix, k: usize, f: impl Fn(f64) -> f64) -> f64 {
    a.eig().eigenvalues.iter().take(k).map(|&l| f(l)).sum()
}

/// Functions with a midpoint g-convexity test. Fixed data (maps, anchors) is
/// drawn once per check from the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GcvxFn {
    TraceExp,
    TracePower,
    LambdaMax,
    LambdaMaxExp,
    KyFanPower,
    LogDet,
    NegLogDet,
    LogDetComposite,
    SDivergenceFirst,
    SDivergenceSecond,
    LogSquares,
    KyFanLogPositiveSquares,
    KyFanAbsLog,
    RiemannianDistance,
    CompositePositive,
    CompositeInverse,
}

impl GcvxFn {
    pub const ALL: [GcvxFn; 16] = [
        GcvxFn::TraceExp,
        GcvxFn::TracePower,
        GcvxFn::LambdaMax,
        GcvxFn::LambdaMaxExp,
        GcvxFn::KyFanPower,
        GcvxFn::LogDet,
        GcvxFn::NegLogDet,
        GcvxFn::LogDetComposite,
        GcvxFn::SDivergenceFirst,
        GcvxFn::SDivergenceSecond,
        GcvxFn::LogSquares,
        GcvxFn::KyFanLogPositiveSquares,
        GcvxFn::KyFanAbsLog,
        GcvxFn::RiemannianDistance,
        GcvxFn::CompositePositive,
        GcvxFn::CompositeInverse,
    ];

    pub fn id(self) -> &'static str {
        match self {
            GcvxFn::TraceExp => "trace_exp",
            GcvxFn::TracePower => "trace_power",
            GcvxFn::LambdaMax => "lambda_max",
            GcvxFn::LambdaMaxExp => "lambda_max_exp",
            GcvxFn::KyFanPower => "ky_fan_power",
            GcvxFn::LogDet => "logdet",
            GcvxFn::NegLogDet => "neg_logdet",
            GcvxFn::LogDetComposite => "logdet_composite",
            GcvxFn::SDivergenceFirst => "s_divergence_first",
            GcvxFn::SDivergenceSecond => "s_divergence_second",
            GcvxFn::LogSquares => "log_squares",
            GcvxFn::KyFanLogPositiveSquares => "ky_fan_log_positive_squares",
            GcvxFn::KyFanAbsLog => "ky_fan_abs_log",
            GcvxFn::RiemannianDistance => "riemannian_distance",
            GcvxFn::CompositePositive => "composite_positive",
            GcvxFn::CompositeInverse => "composite_inverse",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.id() == id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown g-convex function `{id}`")))
    }
}

/// Fixed data for the parametrized catalog members.
struct Anchors {
    anchor: SpdMatrix,
    shift: SpdMatrix,
    blocks: Vec<DMatrix<f64>>,
    tall: DMatrix<f64>,
}

impl Anchors {
    fn draw(d: usize, seed: u64) -> Self {
        let mut r = rng(seed ^ 0x5eed_a11c);
        let k = d.div_ceil(2);
        // [A₁ A₂] of rank k: each block is d × k and the first has full column rank
        let blocks = (0..2).map(|_| random_full_rank(&mut r, d, k, 1e3)).collect();
        let shift = SpdMatrix::from_matrix_unchecked(random_spd(&mut r, k).as_matrix() * 1e-2);
        Self { anchor: random_spd(&mut r, d), shift, blocks, tall: random_full_rank(&mut r, d, k, 1e3) }
    }
}

fn eval_gcvx(f: GcvxFn, a: &SpdMatrix, fixed: &Anchors) -> Result<f64> {
    let d = a.dim();
    let k = d.div_ceil(2);
    Ok(match f {
        GcvxFn::TraceExp => a.eig().eigenvalues.iter().map(|l| l.exp()).sum(),
        GcvxFn::TracePower => a.eig().eigenvalues.iter().map(|l| l.powf(1.5)).sum(),
        GcvxFn::LambdaMax => a.eig().max_eigenvalue(),
        GcvxFn::LambdaMaxExp => a.eig().max_eigenvalue().exp(),
        GcvxFn::KyFanPower => top_k_sum(a, k, |l| l * l),
        GcvxFn::LogDet => a.logdet(),
        GcvxFn::NegLogDet => -a.logdet(),
        GcvxFn::LogDetComposite => {
            let mut m = fixed.shift.as_matrix().clone_owned();
            for blk in &fixed.blocks {
                m += blk.transpose() * a.as_matrix() * blk;
            }
            SpdMatrix::new(SymMatrix::symmetrize(m).into_matrix())?.logdet()
        }
        GcvxFn::SDivergenceFirst => s_divergence(a, &fixed.anchor)?,
        GcvxFn::SDivergenceSecond => s_divergence(&fixed.anchor, a)?,
        // a convex f needs the full sum; partial sums need f nondecreasing too
        GcvxFn::LogSquares => top_k_sum(a, d, |l| l.ln().powi(2)),
        GcvxFn::KyFanLogPositiveSquares => top_k_sum(a, k, |l| l.ln().max(0.0).powi(2)),
        GcvxFn::KyFanAbsLog => {
            let mut logs: Vec<f64> = a.eig().eigenvalues.iter().map(|l| l.ln().abs()).collect();
            logs.sort_by(|x, y| y.total_cmp(x));
            logs.iter().take(k).sum()
        }
        GcvxFn::RiemannianDistance => manifold::dist_riem(a, &fixed.anchor)?,
        GcvxFn::CompositePositive => a.congruence(&fixed.tall)?.eig().max_eigenvalue(),
        GcvxFn::CompositeInverse => a.inverse().congruence(&fixed.tall)?.eig().max_eigenvalue(),
    })
}

/// `f(A # B) ≤ ½ f(A) + ½ f(B)` on random PD pairs.
pub fn midpoint_gconvexity_check(f: GcvxFn, d: usize, trials: usize, seed: u64, tol: f64) -> Result<CheckReport> {
    midpoint_gconvexity_check_with(&Kernels::default(), f, d, trials, seed, tol)
}

pub fn midpoint_gconvexity_check_with(
    k: &Kernels,
    f: GcvxFn,
    d: usize,
    trials: usize,
    seed: u64,
    tol: f64,
) -> Result<CheckReport> {
    let fixed = Anchors::draw(d, seed);
    run_trials(format!("gconvex.{} d={d}", f.id()), trials, seed, tol, |r| {
        let a = random_spd(r, d);
        let b = random_spd(r, d);
        let m = k.mean(&a, &b)?;
        Ok(midpoint_slack(eval_gcvx(f, &m, &fixed)?, eval_gcvx(f, &a, &fixed)?, eval_gcvx(f, &b, &fixed)?))
    })
}

/// Functions with a log-g-convexity test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogGcvxFn {
    TraceCongruence,
    ProductExp,
    ProductSinh,
    ProductCosh,
}

impl LogGcvxFn {
    pub const ALL: [LogGcvxFn; 4] =
        [LogGcvxFn::TraceCongruence, LogGcvxFn::ProductExp, LogGcvxFn::ProductSinh, LogGcvxFn::ProductCosh];

    pub fn id(self) -> &'static str {
        match self {
            LogGcvxFn::TraceCongruence => "trace_congruence",
            LogGcvxFn::ProductExp => "product_exp",
            LogGcvxFn::ProductSinh => "product_sinh",
            LogGcvxFn::ProductCosh => "product_cosh",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.id() == id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown log-g-convex function `{id}`")))
    }
}

/// `log f(A)`; products are evaluated as sums of logs.
fn eval_log(f: LogGcvxFn, a: &SpdMatrix, tall: &DMatrix<f64>) -> Result<f64> {
    let lam = a.eig().eigenvalues;
    Ok(match f {
        LogGcvxFn::TraceCongruence => a.congruence(tall)?.trace().ln(),
        LogGcvxFn::ProductExp => lam.iter().sum(),
        // log sinh(x) = x + log(1 − e^{−2x}) − log 2
        LogGcvxFn::ProductSinh => lam.iter().map(|&l| l + (-(-2.0 * l).exp()).ln_1p() - 2f64.ln()).sum(),
        LogGcvxFn::ProductCosh => lam.iter().map(|&l| l + (-2.0 * l).exp().ln_1p() - 2f64.ln()).sum(),
    })
}

/// `f(A # B) ≤ √(f(A) f(B))`, compared in log space.
pub fn log_gconvexity_check(f: LogGcvxFn, d: usize, trials: usize, seed: u64, tol: f64) -> Result<CheckReport> {
    log_gconvexity_check_with(&Kernels::default(), f, d, trials, seed, tol)
}

pub fn log_gconvexity_check_with(
    k: &Kernels,
    f: LogGcvxFn,
    d: usize,
    trials: usize,
    seed: u64,
    tol: f64,
) -> Result<CheckReport> {
    let tall = random_full_rank(&mut rng(seed ^ 0x7a11), d, d.div_ceil(2), 1e3);
    run_trials(format!("log_gconvex.{} d={d}", f.id()), trials, seed, tol, |r| {
        let a = random_spd(r, d);
        let b = random_spd(r, d);
        let m = k.mean(&a, &b)?;
        Ok(midpoint_slack(eval_log(f, &m, &tall)?, eval_log(f, &a, &tall)?, eval_log(f, &b, &tall)?))
    })
}

/// Worst relative slack of `x ≺_log y` (both sorted descending, positive):
/// prefix sums of logs must not exceed those of `y`, and the totals must agree.
fn log_majorization_slack(x: &[f64], y: &[f64]) -> f64 {
    let (mut sx, mut sy) = (0.0, 0.0);
    let mut worst = f64::INFINITY;
    for (i, (a, b)) in x.iter().zip(y).enumerate() {
        sx += a.ln();
        sy += b.ln();
        let slack = if i + 1 == x.len() { -(sy - sx).abs() / sy.abs().max(1.0) } else { rel_slack(sy, sx) };
        worst = worst.min(slack);
    }
    worst
}

fn sorted_desc(v: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = v.into_iter().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// `λ(A #_t B) ≺_log λ(A^{1−t} B^t) ≺_log λ(A^{1−t}) λ(B^t)`.
pub fn log_majorization_check(d: usize, t: f64, trials: usize, seed: u64) -> Result<CheckReport> {
    log_majorization_check_with(&Kernels::default(), d, t, trials, seed)
}

pub fn log_majorization_check_with(k: &Kernels, d: usize, t: f64, trials: usize, seed: u64) -> Result<CheckReport> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("t must lie in [0, 1], got {t}")));
    }
    run_trials(format!("log_majorization d={d} t={t}"), trials, seed, DEFAULT_TOL, |r| {
        let a = random_spd(r, d);
        let b = random_spd(r, d);
        let gm = sorted_desc((k.geodesic)(&a, &b, t)?.eig().eigenvalues.iter().copied());
        // A^{1−t}B^t is similar to A^{(1−t)/2} B^t A^{(1−t)/2}
        let half = a.pow(0.5 * (1.0 - t));
        let prod = b.pow(t).congruence(half.as_matrix())?;
        let mid = sorted_desc(prod.eig().eigenvalues.iter().copied());
        let ea = a.pow(1.0 - t).eig().eigenvalues;
        let eb = b.pow(t).eig().eigenvalues;
        let outer = sorted_desc(ea.iter().zip(eb.iter()).map(|(x, y)| x * y));
        Ok(log_majorization_slack(&gm, &mid).min(log_majorization_slack(&mid, &outer)))
    })
}

/// Thompson metric properties checked by [`thompson_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThompsonProperty {
    /// `δ_T(A⁻¹, B⁻¹) = δ_T(A, B)`
    Inverse,
    /// `δ_T(MᵀAM, MᵀBM) = δ_T(A, B)` for invertible `M`
    Congruence,
    /// `δ_T(Aᵗ, Bᵗ) ≤ |t| δ_T(A, B)` for `t ∈ [−1, 1]`
    Power,
    /// `δ_T(Σ wᵢAᵢ, Σ wᵢBᵢ) ≤ maxᵢ δ_T(Aᵢ, Bᵢ)`
    WeightedSum,
    /// `δ_T(X + C, Y + C) ≤ α/(α + β) δ_T(X, Y)`
    Translation,
    /// `δ_T(MᵀAM, MᵀBM) ≤ δ_T(A, B)` for tall full-rank `M`
    Compression,
    /// `δ_T(Aʳ, Bʳ) ≤ δ_T(A, B)` for `r ∈ (0, 1)`
    OperatorMonotone,
}

impl ThompsonProperty {
    pub const ALL: [ThompsonProperty; 7] = [
        ThompsonProperty::Inverse,
        ThompsonProperty::Congruence,
        ThompsonProperty::Power,
        ThompsonProperty::WeightedSum,
        ThompsonProperty::Translation,
        ThompsonProperty::Compression,
        ThompsonProperty::OperatorMonotone,
    ];

    pub fn id(self) -> &'static str {
        match self {
            ThompsonProperty::Inverse => "inverse",
            ThompsonProperty::Congruence => "congruence",
            ThompsonProperty::Power => "power",
            ThompsonProperty::WeightedSum => "weighted_sum",
            ThompsonProperty::Translation => "translation",
            ThompsonProperty::Compression => "compression",
            ThompsonProperty::OperatorMonotone => "operator_monotone",
        }
    }
}

fn equality_slack(lhs: f64, rhs: f64) -> f64 {
    -(lhs - rhs).abs() / rhs.abs().max(lhs.abs()).max(1.0)
}

fn thompson_trial(k: &Kernels, prop: ThompsonProperty, d: usize, r: &mut ChaCha8Rng) -> Result<f64> {
    let dist = k.dist_thompson;
    let a = random_spd(r, d);
    let b = random_spd(r, d);
    Ok(match prop {
        ThompsonProperty::Inverse => equality_slack(dist(&a.inverse(), &b.inverse())?, dist(&a, &b)?),
        ThompsonProperty::Congruence => {
            let m = random_full_rank(r, d, d, CONGRUENCE_CONDITION);
            equality_slack(dist(&a.congruence(&m)?, &b.congruence(&m)?)?, dist(&a, &b)?)
        }
        ThompsonProperty::Power => {
            let t: f64 = r.random_range(-1.0..=1.0);
            rel_slack(t.abs() * dist(&a, &b)?, dist(&a.pow(t), &b.pow(t))?)
        }
        ThompsonProperty::WeightedSum => {
            let m = 3;
            let extra: Vec<(SpdMatrix, SpdMatrix)> = (1..m).map(|_| (random_spd(r, d), random_spd(r, d))).collect();
            let pairs: Vec<(&SpdMatrix, &SpdMatrix)> =
                std::iter::once((&a, &b)).chain(extra.iter().map(|(x, y)| (x, y))).collect();
            let w: Vec<f64> = (0..m).map(|_| r.random_range(0.05..1.0)).collect();
            let mut sa = DMatrix::zeros(d, d);
            let mut sb = DMatrix::zeros(d, d);
            let mut worst: f64 = 0.0;
            for ((x, y), wi) in pairs.iter().zip(&w) {
                sa += x.as_matrix() * *wi;
                sb += y.as_matrix() * *wi;
                worst = worst.max(dist(x, y)?);
            }
            let sa = SpdMatrix::new(SymMatrix::symmetrize(sa).into_matrix())?;
            let sb = SpdMatrix::new(SymMatrix::symmetrize(sb).into_matrix())?;
            rel_slack(worst, dist(&sa, &sb)?)
        }
        ThompsonProperty::Translation => {
            let c = random_spd(r, d);
            let alpha = a.eig().max_eigenvalue().max(b.eig().max_eigenvalue());
            let beta = c.eig().min_eigenvalue();
            let ac = a.add(&c)?;
            let bc = b.add(&c)?;
            rel_slack(alpha / (alpha + beta) * dist(&a, &b)?, dist(&ac, &bc)?)
        }
        ThompsonProperty::Compression => {
            let cols = r.random_range(1..=d);
            let m = random_full_rank(r, d, cols, 1e3);
            rel_slack(dist(&a, &b)?, dist(&a.congruence(&m)?, &b.congruence(&m)?)?)
        }
        ThompsonProperty::OperatorMonotone => {
            let p: f64 = r.random_range(0.0..1.0);
            rel_slack(dist(&a, &b)?, dist(&a.pow(p), &b.pow(p))?)
        }
    })
}

pub fn thompson_check(prop: ThompsonProperty, d: usize, trials: usize, seed: u64, tol: f64) -> Result<CheckReport> {
    thompson_check_with(&Kernels::default(), prop, d, trials, seed, tol)
}

pub fn thompson_check_with(
    k: &Kernels,
    prop: ThompsonProperty,
    d: usize,
    trials: usize,
    seed: u64,
    tol: f64,
) -> Result<CheckReport> {
    run_trials(format!("thompson.{} d={d}", prop.id()), trials, seed, tol, |r| thompson_trial(k, prop, d, r))
}

/// Compression with a square invertible `M`, where equality must hold.
pub fn compression_equality_check(d: usize, trials: usize, seed: u64, tol: f64) -> Result<CheckReport> {
    let dist = Kernels::default().dist_thompson;
    run_trials(format!("thompson.compression_square d={d}"), trials, seed, tol, |r| {
        let a = random_spd(r, d);
        let b = random_spd(r, d);
        let m = random_full_rank(r, d, d, CONGRUENCE_CONDITION);
        Ok(equality_slack(dist(&a.congruence(&m)?, &b.congruence(&m)?)?, dist(&a, &b)?))
    })
}

/// `δ_T(𝒢(A) + ℱ(A), 𝒢(B) + ℱ(B)) < δ_T(A, B)` for `𝒢 = id` and
/// `ℱ(S) = S^{1/2}`. The slack is `1 − ratio` and must be strictly positive.
pub fn sum_log_contractive_check(d: usize, trials: usize, seed: u64) -> Result<CheckReport> {
    sum_log_contractive_check_with(&Kernels::default(), d, trials, seed)
}

pub fn sum_log_contractive_check_with(k: &Kernels, d: usize, trials: usize, seed: u64) -> Result<CheckReport> {
    let g = identity_map(d);
    let f = power_map(d, 0.5);
    let sum = SumMap { g: &g, f: &f };
    let dist = k.dist_thompson;
    run_trials_by(format!("contraction.sum d={d}"), trials, seed, |s| !(s > 0.0), |r| loop {
        let a = random_spd(r, d);
        let b = random_spd(r, d);
        let den = dist(&a, &b)?;
        if den > 1e-12 {
            return Ok(1.0 - dist(&sum.apply(&a)?, &sum.apply(&b)?)? / den);
        }
    })
}

/// `(A # B) ⊗ (C # D) = (A ⊗ C) # (B ⊗ D)` to relative Frobenius error `1e-10`.
pub fn kron_gm_identity_check(d1: usize, d2: usize, trials: usize, seed: u64) -> Result<CheckReport> {
    kron_gm_identity_check_with(&Kernels::default(), d1, d2, trials, seed)
}

pub fn kron_gm_identity_check_with(k: &Kernels, d1: usize, d2: usize, trials: usize, seed: u64) -> Result<CheckReport> {
    if d1 * d2 > 64 {
        return Err(Error::InvalidInput(format!("Kronecker dimension {} exceeds 64", d1 * d2)));
    }
    let tol = 1e-10;
    run_trials(format!("kronecker d1={d1} d2={d2}"), trials, seed, tol, |r| {
        let (a, b) = (random_spd(r, d1), random_spd(r, d1));
        let (c, dd) = (random_spd(r, d2), random_spd(r, d2));
        let lhs = k.mean(&a, &b)?.as_matrix().kronecker(k.mean(&c, &dd)?.as_matrix());
        let ac = SpdMatrix::new(a.as_matrix().kronecker(c.as_matrix()))?;
        let bd = SpdMatrix::new(b.as_matrix().kronecker(dd.as_matrix()))?;
        let rhs = k.mean(&ac, &bd)?;
        Ok(-spd::rel_frobenius(&lhs, rhs.as_matrix()))
    })
}

/// Named groups of checks run by the command-line front end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    All,
    Thompson,
    Gconvex,
    LogGconvex,
    Majorization,
    Kronecker,
    Contraction,
}

impl Suite {
    pub fn id(self) -> &'static str {
        match self {
            Suite::All => "all",
            Suite::Thompson => "thompson",
            Suite::Gconvex => "gconvex",
            Suite::LogGconvex => "log_gconvex",
            Suite::Majorization => "majorization",
            Suite::Kronecker => "kronecker",
            Suite::Contraction => "contraction",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Suite::All,
            Suite::Thompson,
            Suite::Gconvex,
            Suite::LogGconvex,
            Suite::Majorization,
            Suite::Kronecker,
            Suite::Contraction,
        ]
        .into_iter()
        .find(|x| x.id() == s)
        .ok_or_else(|| Error::InvalidInput(format!("unknown suite `{s}`")))
    }
}

/// Dimensions used by the shipped suites.
pub const SUITE_DIMS: [usize; 3] = [2, 5, 8];

pub fn run_suite(suite: Suite, trials: usize, seed: u64) -> Result<Vec<CheckReport>> {
    run_suite_with(&Kernels::default(), suite, trials, seed)
}

pub fn run_suite_with(k: &Kernels, suite: Suite, trials: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    let wants = |s: Suite| suite == Suite::All || suite == s;
    if wants(Suite::Thompson) {
        for d in SUITE_DIMS {
            for prop in ThompsonProperty::ALL {
                out.push(thompson_check_with(k, prop, d, trials, seed, DEFAULT_TOL)?);
            }
        }
    }
    if wants(Suite::Gconvex) {
        for d in SUITE_DIMS {
            for f in GcvxFn::ALL {
                out.push(midpoint_gconvexity_check_with(k, f, d, trials, seed, DEFAULT_TOL)?);
            }
        }
    }
    if wants(Suite::LogGconvex) {
        for d in SUITE_DIMS {
            for f in LogGcvxFn::ALL {
                out.push(log_gconvexity_check_with(k, f, d, trials, seed, DEFAULT_TOL)?);
            }
        }
    }
    if wants(Suite::Majorization) {
        for d in [2, 3, 4] {
            for t in [0.0, 0.25, 0.5, 0.9] {
                out.push(log_majorization_check_with(k, d, t, trials, seed)?);
            }
        }
    }
    if wants(Suite::Kronecker) {
        for (d1, d2) in [(2, 2), (3, 2), (4, 4), (2, 4)] {
            out.push(kron_gm_identity_check_with(k, d1, d2, trials, seed)?);
        }
    }
    if wants(Suite::Contraction) {
        for d in SUITE_DIMS {
            out.push(sum_log_contractive_check_with(k, d, trials, seed)?);
        }
    }
    Ok(out)
}
