//! Line-search solvers on the SPD manifold: steepest descent, Fletcher–Reeves
//! conjugate gradient and limited-memory Riemannian BFGS, all stepping along
//! exponential-map geodesics and measuring the Wolfe conditions exactly through
//! the geodesic velocity.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};
use crate::manifold::{self, GeodesicRay, ManifoldPoint, Transport};
use crate::spd::{self, SpdMatrix, SymMatrix};

/// Smooth cost on the SPD cone.
///
/// `egrad` returns the symmetrized Euclidean gradient. Implementations may
/// override [`Problem::cost_and_egrad`] when the two share work.
pub trait Problem: Sync {
    fn dim(&self) -> usize;
    fn cost(&self, x: &ManifoldPoint) -> Result<f64>;
    fn egrad(&self, x: &ManifoldPoint) -> Result<SymMatrix>;

    fn cost_and_egrad(&self, x: &ManifoldPoint) -> Result<(f64, SymMatrix)> {
        Ok((self.cost(x)?, self.egrad(x)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sd,
    Cg,
    Lbfgs,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Sd, Method::Cg, Method::Lbfgs];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sd => "sd",
            Method::Cg => "cg",
            Method::Lbfgs => "lbfgs",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sd" => Ok(Method::Sd),
            "cg" => Ok(Method::Cg),
            "lbfgs" => Ok(Method::Lbfgs),
            other => Err(Error::InvalidInput(format!("unknown manifold method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub method: Method,
    pub max_iter: usize,
    /// Tolerance on the Riemannian gradient norm.
    pub grad_tol: f64,
    pub memory: usize,
    pub c1: f64,
    pub c2: f64,
    pub max_ls_steps: usize,
    pub initial_point: Option<SpdMatrix>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::Lbfgs,
            max_iter: 1000,
            grad_tol: 1e-6,
            memory: 10,
            c1: 1e-4,
            c2: 0.9,
            max_ls_steps: 50,
            initial_point: None,
        }
    }
}

impl SolverConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::InvalidInput(format!(
                "Wolfe constants need 0 < c1 < c2 < 1, got c1={} c2={}",
                self.c1, self.c2
            )));
        }
        if self.memory == 0 {
            return Err(Error::InvalidInput("memory must be at least 1".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidInput("grad_tol must be positive".into()));
        }
        if self.max_ls_steps == 0 {
            return Err(Error::InvalidInput("max_ls_steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIter,
    LineSearchFail,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Status::Converged => "converged",
            Status::MaxIter => "max_iter",
            Status::LineSearchFail => "line_search_fail",
        };
        f.write_str(s)
    }
}

/// One iteration of a solver trace. `delta_t_step` is the Thompson distance
/// to the previous iterate (zero on the first row).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub delta_t_step: f64,
    pub time_s: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub minimizer: SpdMatrix,
    pub trace: Vec<TraceRow>,
    pub status: Status,
}

impl SolveReport {
    /// Number of accepted steps.
    pub fn iterations(&self) -> usize {
        self.trace.last().map_or(0, |r| r.iter)
    }

    pub fn final_cost(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.cost)
    }

    pub fn final_grad_norm(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.grad_norm)
    }
}

/// Writes `iter,cost,grad_norm,time_s`, plus `delta_t_step` when requested.
pub fn write_trace_csv<W: Write>(mut w: W, trace: &[TraceRow], with_step: bool) -> std::io::Result<()> {
    if with_step {
        writeln!(w, "iter,cost,grad_norm,delta_t_step,time_s")?;
    } else {
        writeln!(w, "iter,cost,grad_norm,time_s")?;
    }
    for r in trace {
        if with_step {
            writeln!(w, "{},{},{},{},{}", r.iter, r.cost, r.grad_norm, r.delta_t_step, r.time_s)?;
        } else {
            writeln!(w, "{},{},{},{}", r.iter, r.cost, r.grad_norm, r.time_s)?;
        }
    }
    Ok(())
}

/// Point, cost and gradients bundled for reuse between line search and solver.
#[derive(Debug, Clone)]
pub struct Evaluated {
    pub point: Arc<ManifoldPoint>,
    pub cost: f64,
    pub egrad: SymMatrix,
}

impl Evaluated {
    pub fn new<P: Problem + ?Sized>(p: &P, x: SpdMatrix) -> Result<Self> {
        if x.dim() != p.dim() {
            return Err(dim_mismatch(p.dim(), x.dim()));
        }
        let point = Arc::new(ManifoldPoint::new(x));
        let (cost, egrad) = p.cost_and_egrad(&point)?;
        if !cost.is_finite() {
            return Err(Error::NonFinite(format!("cost {cost}")));
        }
        check_finite_grad(&egrad)?;
        Ok(Self { point, cost, egrad })
    }

    pub fn rgrad(&self) -> SymMatrix {
        manifold::egrad_to_rgrad(&self.point, &self.egrad).expect("dims checked on construction")
    }
}

fn check_finite_grad(g: &SymMatrix) -> Result<()> {
    if g.as_matrix().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("gradient".into()))
    }
}

#[derive(Debug, Clone)]
pub struct LineSearchResult {
    pub alpha: f64,
    pub next: Evaluated,
    /// Velocity of the search geodesic at `alpha`, i.e. the direction
    /// transported to the new point.
    pub transported_dir: SymMatrix,
    pub evaluations: usize,
}

struct Trial {
    alpha: f64,
    phi: f64,
    dphi: f64,
    eval: Option<(Evaluated, SymMatrix)>,
}

/// Strong Wolfe line search along `t ↦ R_X(t ξ)`.
///
/// `φ(t) = f(R_X(tξ))` and `φ'(t) = tr(∇f(Y) γ'(t))` with `γ'` the geodesic
/// velocity, which is also `ξ` parallel-transported to the trial point.
/// Bracketing and zoom follow the classical scheme; every evaluation counts
/// against `cfg.max_ls_steps`.
pub fn wolfe_line_search<P: Problem + ?Sized>(
    p: &P,
    x: &Evaluated,
    xi: &SymMatrix,
    alpha0: f64,
    cfg: &SolverConfig,
) -> Result<LineSearchResult> {
    let phi0 = x.cost;
    let dphi0 = x.egrad.trace_product(xi);
    if !(dphi0 < 0.0) {
        return Err(Error::NotDescent(dphi0));
    }
    let ray = GeodesicRay::new(&x.point, xi)?;
    let evals = std::cell::Cell::new(0usize);

    let eval = |alpha: f64| -> Result<Trial> {
        evals.set(evals.get() + 1);
        let y = match ray.point(alpha) {
            Ok(y) => y,
            Err(Error::StepTooLarge) => {
                return Ok(Trial { alpha, phi: f64::INFINITY, dphi: f64::NAN, eval: None });
            }
            Err(e) => return Err(e),
        };
        let point = Arc::new(ManifoldPoint::new(y));
        let (cost, egrad) = p.cost_and_egrad(&point)?;
        if cost.is_nan() {
            return Err(Error::NonFinite("cost is NaN".into()));
        }
        if cost == f64::INFINITY {
            return Ok(Trial { alpha, phi: cost, dphi: f64::NAN, eval: None });
        }
        if !cost.is_finite() {
            return Err(Error::NonFinite(format!("cost {cost}")));
        }
        check_finite_grad(&egrad)?;
        let v = ray.velocity(alpha);
        let dphi = egrad.trace_product(&v);
        Ok(Trial { alpha, phi: cost, dphi, eval: Some((Evaluated { point, cost, egrad }, v)) })
    };

    // Near a minimizer the Armijo decrease falls below the cost's rounding
    // error; then the approximate Wolfe test (slope ≤ (2c₁−1)φ'(0) with cost
    // within rounding of φ(0)) stands in for it.
    let eps_f = 1e-12 * phi0.abs();
    let armijo = |t: &Trial| {
        t.phi <= phi0 + cfg.c1 * t.alpha * dphi0
            || (t.phi <= phi0 + eps_f && t.dphi <= (2.0 * cfg.c1 - 1.0) * dphi0)
    };
    let curvature = |t: &Trial| t.dphi.abs() <= -cfg.c2 * dphi0;
    let done = |t: Trial, evals: usize| -> LineSearchResult {
        let (next, v) = t.eval.expect("accepted trial is evaluated");
        LineSearchResult { alpha: t.alpha, next, transported_dir: v, evaluations: evals }
    };

    let mut prev = Trial { alpha: 0.0, phi: phi0, dphi: dphi0, eval: None };
    let mut alpha = alpha0;
    let mut first = true;
    let (mut lo, mut hi);
    loop {
        if evals.get() >= cfg.max_ls_steps {
            return Err(Error::LineSearchFail(evals.get()));
        }
        let t = eval(alpha)?;
        if !armijo(&t) || (!first && t.phi > prev.phi + eps_f) {
            lo = prev;
            hi = t;
            break;
        }
        if curvature(&t) {
            return Ok(done(t, evals.get()));
        }
        if t.dphi >= 0.0 {
            lo = t;
            hi = prev;
            break;
        }
        first = false;
        alpha = 2.0 * t.alpha;
        prev = t;
    }

    // zoom: lo satisfies Armijo and has the lowest cost seen; the minimizer lies
    // between lo and hi
    loop {
        if evals.get() >= cfg.max_ls_steps {
            return Err(Error::LineSearchFail(evals.get()));
        }
        let a = interpolate(&lo, &hi);
        let t = eval(a)?;
        if !armijo(&t) || t.phi > lo.phi + eps_f {
            hi = t;
        } else if curvature(&t) {
            return Ok(done(t, evals.get()));
        } else if t.phi >= lo.phi - eps_f {
            // tie within rounding: only the slope is informative
            if t.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                hi = t;
            } else {
                lo = t;
            }
        } else {
            if t.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
        if (hi.alpha - lo.alpha).abs() <= 1e-14 * lo.alpha.abs().max(hi.alpha.abs()) {
            return Err(Error::LineSearchFail(evals.get()));
        }
    }
}

/// Safeguarded cubic (or quadratic) interpolation inside `[lo, hi]`.
fn interpolate(lo: &Trial, hi: &Trial) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let width = (b - a).abs();
    let (left, right) = (a.min(b), a.max(b));
    let bisect = 0.5 * (a + b);
    let safe = |c: f64| {
        if c.is_finite() && c > left + 0.1 * width && c < right - 0.1 * width {
            c
        } else {
            bisect
        }
    };
    if !hi.phi.is_finite() {
        return bisect;
    }
    if hi.dphi.is_finite() {
        let d1 = lo.dphi + hi.dphi - 3.0 * (lo.phi - hi.phi) / (a - b);
        let disc = d1 * d1 - lo.dphi * hi.dphi;
        if disc >= 0.0 {
            let d2 = (b - a).signum() * disc.sqrt();
            let c = b - (b - a) * (hi.dphi + d2 - d1) / (hi.dphi - lo.dphi + 2.0 * d2);
            return safe(c);
        }
    }
    // quadratic through φ(a), φ'(a), φ(b)
    let h = b - a;
    let denom = 2.0 * (hi.phi - lo.phi - lo.dphi * h);
    if denom > 0.0 {
        return safe(a - lo.dphi * h * h / denom);
    }
    bisect
}

struct Pair {
    /// Point at which `s`, `y` live (the end point of the step).
    at: Arc<ManifoldPoint>,
    s: SymMatrix,
    y: SymMatrix,
    rho: f64,
}

/// One accepted step: the transport from its start to its end and, unless the
/// curvature pair was rejected, the pair itself.
struct Step {
    transport: Transport,
    pair: Option<Pair>,
}

struct LbfgsMemory {
    steps: VecDeque<Step>,
    capacity: usize,
    h_diag: f64,
}

impl LbfgsMemory {
    fn new(capacity: usize) -> Self {
        Self { steps: VecDeque::new(), capacity, h_diag: 1.0 }
    }

    fn clear(&mut self) {
        self.steps.clear();
    }

    fn pairs(&self) -> usize {
        self.steps.iter().filter(|s| s.pair.is_some()).count()
    }

    fn push(&mut self, step: Step) {
        self.steps.push_back(step);
        while self.pairs() > self.capacity {
            self.steps.pop_front();
        }
        while self.steps.front().is_some_and(|s| s.pair.is_none()) {
            self.steps.pop_front();
        }
    }

    /// Two-loop recursion: returns `H grad` at the newest point.
    ///
    /// The first loop walks pairs from newest to oldest, moving the working
    /// vector backwards with `𝒯⁻¹` between the points where pairs were stored;
    /// the second walks forward with `𝒯`. Each inner product is taken at the
    /// point the pair lives at.
    fn apply(&self, grad: &SymMatrix) -> Result<SymMatrix> {
        let n = self.steps.len();
        let mut q = grad.clone();
        let mut coeffs = vec![0.0; n];
        for k in (0..n).rev() {
            let step = &self.steps[k];
            if let Some(pair) = &step.pair {
                let a = pair.rho * manifold::inner(&pair.at, &pair.s, &q)?;
                q = &q - &(&pair.y * a);
                coeffs[k] = a;
            }
            if k > 0 {
                q = step.transport.apply_inv(&q);
            }
        }
        let mut r = &q * self.h_diag;
        for k in 0..n {
            let step = &self.steps[k];
            if k > 0 {
                r = step.transport.apply(&r);
            }
            if let Some(pair) = &step.pair {
                let b = pair.rho * manifold::inner(&pair.at, &pair.y, &r)?;
                r = &r + &(&pair.s * (coeffs[k] - b));
            }
        }
        Ok(r)
    }
}

/// Curvature constant used by CG when the configured `c2` is larger.
pub const CG_MAX_C2: f64 = 0.45;

/// Minimizes `p` with the configured method.
///
/// Every accepted step satisfies the strong Wolfe conditions, so the recorded
/// cost strictly decreases. A direction that fails to descend resets CG and
/// LBFGS to steepest descent.
pub fn solve<P: Problem + ?Sized>(p: &P, cfg: &SolverConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let d = p.dim();
    let start = Instant::now();
    let x0 = cfg.initial_point.clone().unwrap_or_else(|| SpdMatrix::identity(d));
    let mut x = Evaluated::new(p, x0)?;
    let mut grad = x.rgrad();
    let mut gnorm = manifold::norm(&x.point, &grad)?;
    let mut trace = vec![TraceRow {
        iter: 0,
        cost: x.cost,
        grad_norm: gnorm,
        delta_t_step: 0.0,
        time_s: start.elapsed().as_secs_f64(),
    }];

    // Fletcher–Reeves directions are guaranteed to descend only under strong
    // Wolfe steps with c2 < 1/2
    let cg_cfg;
    let ls_cfg = if cfg.method == Method::Cg && cfg.c2 > CG_MAX_C2 {
        cg_cfg = SolverConfig { c2: CG_MAX_C2, c1: cfg.c1.min(CG_MAX_C2 / 2.0), ..cfg.clone() };
        &cg_cfg
    } else {
        cfg
    };
    let restart_every = d * (d + 1) / 2;
    let mut memory = LbfgsMemory::new(cfg.memory);
    memory.h_diag = 1.0 / gnorm.max(f64::MIN_POSITIVE);
    // CG state: previous direction transported to the current point
    let mut cg_dir: Option<SymMatrix> = None;
    let mut since_restart = 0usize;
    let mut prev_slope: Option<(f64, f64)> = None;

    let mut status = Status::MaxIter;
    for iter in 1..=cfg.max_iter + 1 {
        if gnorm <= cfg.grad_tol {
            status = Status::Converged;
            break;
        }
        if iter > cfg.max_iter {
            break;
        }

        let neg_grad = -&grad;
        let mut dir = match cfg.method {
            Method::Sd => neg_grad.clone(),
            Method::Cg => match cg_dir.take() {
                Some(prev) if since_restart < restart_every => prev,
                _ => {
                    since_restart = 0;
                    neg_grad.clone()
                }
            },
            Method::Lbfgs => -memory.apply(&grad)?,
        };
        let mut slope = manifold::inner(&x.point, &grad, &dir)?;
        if !(slope < 0.0) {
            memory.clear();
            memory.h_diag = 1.0 / gnorm;
            since_restart = 0;
            dir = neg_grad;
            slope = -gnorm * gnorm;
        }

        let alpha0 = match cfg.method {
            Method::Lbfgs => 1.0,
            _ => match prev_slope {
                Some((alpha, s)) => (alpha * s / slope).clamp(1e-10, 1e10),
                None => 1.0 / gnorm,
            },
        };

        let ls = match wolfe_line_search(p, &x, &dir, alpha0, ls_cfg) {
            Ok(ls) => ls,
            Err(Error::LineSearchFail(_)) => {
                status = Status::LineSearchFail;
                break;
            }
            Err(e) => return Err(e),
        };
        prev_slope = Some((ls.alpha, slope));

        let next = ls.next;
        let next_grad = next.rgrad();
        let next_norm = manifold::norm(&next.point, &next_grad)?;
        let step_t = manifold::dist_thompson(x.point.value(), next.point.value())?;

        match cfg.method {
            Method::Sd => {}
            Method::Cg => {
                let beta = (next_norm * next_norm) / (gnorm * gnorm);
                cg_dir = Some(&(-&next_grad) + &(&ls.transported_dir * beta));
                since_restart += 1;
            }
            Method::Lbfgs => {
                let transport = Transport::between(&x.point, &next.point)?;
                let s = &ls.transported_dir * ls.alpha;
                let y = &next_grad - &transport.apply(&grad);
                let sy = manifold::inner(&next.point, &s, &y)?;
                let yy = manifold::inner(&next.point, &y, &y)?;
                let pair = if sy > 0.0 && yy > 0.0 {
                    memory.h_diag = sy / yy;
                    Some(Pair { at: next.point.clone(), s, y, rho: 1.0 / sy })
                } else {
                    None
                };
                memory.push(Step { transport, pair });
            }
        }

        x = next;
        grad = next_grad;
        gnorm = next_norm;
        trace.push(TraceRow {
            iter,
            cost: x.cost,
            grad_norm: gnorm,
            delta_t_step: step_t,
            time_s: start.elapsed().as_secs_f64(),
        });
    }

    Ok(SolveReport {
        minimizer: x.point.value().clone(),
        trace,
        status,
    })
}

fn validate_weighted(mats: &[SpdMatrix], weights: &[f64]) -> Result<usize> {
    if mats.is_empty() {
        return Err(Error::InvalidInput("need at least one matrix".into()));
    }
    if weights.len() != mats.len() {
        return Err(Error::InvalidInput(format!(
            "{} weights for {} matrices",
            weights.len(),
            mats.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidInput("weights must be non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidInput(format!("weights sum to {total}, expected 1")));
    }
    let d = mats[0].dim();
    for m in mats {
        if m.dim() != d {
            return Err(dim_mismatch(d, m.dim()));
        }
    }
    Ok(d)
}

pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// For each `A_i`: `δ_R²(X, A_i)` and `X⁻¹ Log_X(A_i) X⁻¹ = L⁻ᵀ log(L⁻¹A_iL⁻ᵀ) L⁻¹`.
fn log_terms(x: &ManifoldPoint, mats: &[SpdMatrix]) -> Result<Vec<(f64, nalgebra::DMatrix<f64>)>> {
    let l = x.cholesky_factor();
    let l_inv = l
        .clone()
        .solve_lower_triangular(&nalgebra::DMatrix::identity(x.dim(), x.dim()))
        .ok_or_else(|| Error::Domain("singular Cholesky factor".into()))?;
    mats.iter()
        .map(|a| {
            if a.dim() != x.dim() {
                return Err(dim_mismatch(x.dim(), a.dim()));
            }
            let w = x.value().whiten(a.as_matrix());
            let e = spd::eig_sym(&w)?;
            let d2: f64 = e.eigenvalues.iter().map(|v| v.ln().powi(2)).sum();
            let lg = e.map(f64::ln);
            Ok((d2, l_inv.transpose() * lg * &l_inv))
        })
        .collect()
}

/// Weighted Karcher (Fréchet) mean objective `Σ wᵢ δ_R²(X, Aᵢ)`.
#[derive(Debug, Clone)]
pub struct KarcherProblem {
    mats: Vec<SpdMatrix>,
    weights: Vec<f64>,
    dim: usize,
}

impl KarcherProblem {
    pub fn new(mats: Vec<SpdMatrix>, weights: Vec<f64>) -> Result<Self> {
        let dim = validate_weighted(&mats, &weights)?;
        Ok(Self { mats, weights, dim })
    }

    /// `δ_R²(·, C)`, minimized at `C`.
    pub fn distance_to(c: SpdMatrix) -> Self {
        let dim = c.dim();
        Self { mats: vec![c], weights: vec![1.0], dim }
    }

    pub fn mats(&self) -> &[SpdMatrix] {
        &self.mats
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl Problem for KarcherProblem {
    fn dim(&self) -> usize {
        self.dim
    }

    fn cost(&self, x: &ManifoldPoint) -> Result<f64> {
        Ok(self.cost_and_egrad(x)?.0)
    }

    fn egrad(&self, x: &ManifoldPoint) -> Result<SymMatrix> {
        Ok(self.cost_and_egrad(x)?.1)
    }

    fn cost_and_egrad(&self, x: &ManifoldPoint) -> Result<(f64, SymMatrix)> {
        let terms = log_terms(x, &self.mats)?;
        let mut cost = 0.0;
        let mut g = nalgebra::DMatrix::zeros(self.dim, self.dim);
        for ((d2, lg), w) in terms.into_iter().zip(&self.weights) {
            cost += w * d2;
            g -= lg * (2.0 * w);
        }
        Ok((cost, SymMatrix::symmetrize(g)))
    }
}

/// Smoothing used by [`MedianProblem`] at the data points.
pub const MEDIAN_EPS: f64 = 1e-9;

/// Weighted geometric median objective `Σ wᵢ √(δ_R²(X, Aᵢ) + ε²)`.
#[derive(Debug, Clone)]
pub struct MedianProblem {
    mats: Vec<SpdMatrix>,
    weights: Vec<f64>,
    dim: usize,
    eps: f64,
}

impl MedianProblem {
    pub fn new(mats: Vec<SpdMatrix>, weights: Vec<f64>) -> Result<Self> {
        let dim = validate_weighted(&mats, &weights)?;
        Ok(Self { mats, weights, dim, eps: MEDIAN_EPS })
    }
}

impl Problem for MedianProblem {
    fn dim(&self) -> usize {
        self.dim
    }

    fn cost(&self, x: &ManifoldPoint) -> Result<f64> {
        Ok(self.cost_and_egrad(x)?.0)
    }

    fn egrad(&self, x: &ManifoldPoint) -> Result<SymMatrix> {
        Ok(self.cost_and_egrad(x)?.1)
    }

    fn cost_and_egrad(&self, x: &ManifoldPoint) -> Result<(f64, SymMatrix)> {
        let terms = log_terms(x, &self.mats)?;
        let mut cost = 0.0;
        let mut g = nalgebra::DMatrix::zeros(self.dim, self.dim);
        let e2 = self.eps * self.eps;
        for ((d2, lg), w) in terms.into_iter().zip(&self.weights) {
            let r = (d2 + e2).sqrt();
            cost += w * r;
            // ∇√(δ²+ε²) = ∇δ² / (2√(δ²+ε²)) and ∇δ² = −2 X⁻¹Log_X(A)X⁻¹
            g -= lg * (w / r);
        }
        Ok((cost, SymMatrix::symmetrize(g)))
    }
}

/// Weighted S-divergence mean: `Σ wᵢ [logdet((X+Aᵢ)/2) − ½ logdet(X Aᵢ)]`.
#[derive(Debug, Clone)]
pub struct SDivergenceProblem {
    mats: Vec<SpdMatrix>,
    weights: Vec<f64>,
    dim: usize,
}

impl SDivergenceProblem {
    pub fn new(mats: Vec<SpdMatrix>, weights: Vec<f64>) -> Result<Self> {
        let dim = validate_weighted(&mats, &weights)?;
        Ok(Self { mats, weights, dim })
    }
}

/// `logdet((X+Y)/2) − ½ logdet(X) − ½ logdet(Y)`.
pub fn s_divergence(x: &SpdMatrix, y: &SpdMatrix) -> Result<f64> {
    let mid = x.add(y)?.scale(0.5)?;
    Ok(mid.logdet() - 0.5 * x.logdet() - 0.5 * y.logdet())
}

impl Problem for SDivergenceProblem {
    fn dim(&self) -> usize {
        self.dim
    }

    fn cost(&self, x: &ManifoldPoint) -> Result<f64> {
        let mut c = 0.0;
        for (a, w) in self.mats.iter().zip(&self.weights) {
            c += w * s_divergence(x.value(), a)?;
        }
        Ok(c)
    }

    fn egrad(&self, x: &ManifoldPoint) -> Result<SymMatrix> {
        let mut g = x.inverse() * -0.5;
        for (a, w) in self.mats.iter().zip(&self.weights) {
            g += x.value().add(a)?.inverse().into_matrix() * *w;
        }
        Ok(SymMatrix::symmetrize(g))
    }
}

/// `‖Σ wᵢ log(X^{-1/2} Aᵢ X^{-1/2})‖_F`, zero exactly at the Karcher mean.
pub fn karcher_residual(x: &SpdMatrix, mats: &[SpdMatrix], weights: &[f64]) -> Result<f64> {
    validate_weighted(mats, weights)?;
    let xp = ManifoldPoint::new(x.clone());
    let ih = xp.inv_sqrt();
    let mut acc = nalgebra::DMatrix::zeros(x.dim(), x.dim());
    for (a, w) in mats.iter().zip(weights) {
        let m = SymMatrix::symmetrize(ih * a.as_matrix() * ih);
        acc += spd::mat_fn(&m, spd::MatFn::Log)?.into_matrix() * *w;
    }
    Ok(acc.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_spd, random_sym, rng};

    #[test]
    fn method_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("newton".parse::<Method>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig { c1: 0.5, c2: 0.4, ..SolverConfig::default() };
        assert!(bad.validate().is_err());
        let bad = SolverConfig { memory: 0, ..SolverConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn line_search_accepts_unit_step_when_wolfe_holds() {
        // δ_R²(·, C) from X along ξ = Log_X(C): φ(t) = (1−t)² δ², minimized at t=1
        let mut r = rng(1);
        let c = random_spd(&mut r, 3);
        let p = KarcherProblem::distance_to(c.clone());
        let x = Evaluated::new(&p, random_spd(&mut r, 3)).unwrap();
        let xi = manifold::log_map(&x.point, &c).unwrap();
        let ls = wolfe_line_search(&p, &x, &xi, 1.0, &SolverConfig::default()).unwrap();
        assert_eq!(ls.alpha, 1.0);
        assert_eq!(ls.evaluations, 1);
        assert!(manifold::dist_thompson(ls.next.point.value(), &c).unwrap() < 1e-8);
    }

    #[test]
    fn line_search_rejects_ascent() {
        let mut r = rng(2);
        let p = KarcherProblem::distance_to(random_spd(&mut r, 3));
        let x = Evaluated::new(&p, random_spd(&mut r, 3)).unwrap();
        let up = x.rgrad();
        let err = wolfe_line_search(&p, &x, &up, 1.0, &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NotDescent(s) if s > 0.0));
    }

    #[test]
    fn line_search_satisfies_strong_wolfe() {
        let mut r = rng(3);
        let mats: Vec<_> = (0..4).map(|_| random_spd(&mut r, 4)).collect();
        let p = KarcherProblem::new(mats, uniform_weights(4)).unwrap();
        let cfg = SolverConfig::default();
        for alpha0 in [1e-4, 1e-2, 1.0, 50.0] {
            let x = Evaluated::new(&p, random_spd(&mut r, 4)).unwrap();
            let xi = -x.rgrad();
            let slope0 = x.egrad.trace_product(&xi);
            let ls = wolfe_line_search(&p, &x, &xi, alpha0, &cfg).unwrap();
            assert!(ls.next.cost <= x.cost + cfg.c1 * ls.alpha * slope0);
            let slope = ls.next.egrad.trace_product(&ls.transported_dir);
            assert!(slope.abs() <= -cfg.c2 * slope0 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn karcher_gradient_matches_finite_differences() {
        let mut r = rng(4);
        let mats: Vec<_> = (0..3).map(|_| random_spd(&mut r, 3)).collect();
        let p = KarcherProblem::new(mats, vec![0.2, 0.3, 0.5]).unwrap();
        let x = random_spd(&mut r, 3);
        let g = p.egrad(&ManifoldPoint::new(x.clone())).unwrap();
        let e = random_sym(&mut r, 3, 1.0);
        let h = 1e-6 * x.as_matrix().norm();
        let plus = SpdMatrix::new(x.as_matrix() + e.as_matrix() * h).unwrap();
        let minus = SpdMatrix::new(x.as_matrix() - e.as_matrix() * h).unwrap();
        let fd = (p.cost(&plus.into()).unwrap() - p.cost(&minus.into()).unwrap()) / (2.0 * h);
        let an = g.trace_product(&e);
        assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0), "{fd} vs {an}");
    }

    #[test]
    fn lbfgs_direction_satisfies_secant_equation() {
        let mut r = rng(5);
        let mats: Vec<_> = (0..3).map(|_| random_spd(&mut r, 3)).collect();
        let p = KarcherProblem::new(mats, uniform_weights(3)).unwrap();
        let x0 = Evaluated::new(&p, SpdMatrix::identity(3)).unwrap();
        let g0 = x0.rgrad();
        let xi = -&g0;
        let ls = wolfe_line_search(&p, &x0, &xi, 0.5, &SolverConfig::default()).unwrap();
        let g1 = ls.next.rgrad();
        let t = Transport::between(&x0.point, &ls.next.point).unwrap();
        let s = &ls.transported_dir * ls.alpha;
        let y = &g1 - &t.apply(&g0);
        let sy = manifold::inner(&ls.next.point, &s, &y).unwrap();
        let mut mem = LbfgsMemory::new(5);
        mem.h_diag = 0.37;
        mem.push(Step { transport: t, pair: Some(Pair { at: ls.next.point.clone(), s: s.clone(), y: y.clone(), rho: 1.0 / sy }) });
        let hy = mem.apply(&y).unwrap();
        assert!(spd::rel_frobenius(hy.as_matrix(), s.as_matrix()) < 1e-10);
    }

    #[test]
    fn solvers_find_two_point_mean() {
        let mut r = rng(6);
        let a = random_spd(&mut r, 4);
        let b = random_spd(&mut r, 4);
        let gm = spd::geometric_mean(&a, &b).unwrap();
        let p = KarcherProblem::new(vec![a, b], vec![0.5, 0.5]).unwrap();
        for m in Method::ALL {
            let rep = solve(&p, &SolverConfig { grad_tol: 1e-9, ..SolverConfig::new(m) }).unwrap();
            assert_eq!(rep.status, Status::Converged, "{m}");
            let dt = manifold::dist_thompson(&rep.minimizer, &gm).unwrap();
            assert!(dt < 1e-8, "{m}: {dt}");
            for w in rep.trace.windows(2) {
                assert!(w[1].cost <= w[0].cost * (1.0 + 1e-12), "{m}: cost increased");
            }
        }
    }

    #[test]
    fn median_and_sdivergence_solve() {
        let mut r = rng(7);
        let mats: Vec<_> = (0..5).map(|_| random_spd(&mut r, 3)).collect();
        let w = uniform_weights(5);
        let med = MedianProblem::new(mats.clone(), w.clone()).unwrap();
        let rep = solve(&med, &SolverConfig::new(Method::Lbfgs)).unwrap();
        assert_eq!(rep.status, Status::Converged);
        let sd = SDivergenceProblem::new(mats, w).unwrap();
        let rep = solve(&sd, &SolverConfig::new(Method::Lbfgs)).unwrap();
        assert_eq!(rep.status, Status::Converged);
    }

    #[test]
    fn empty_problem_rejected() {
        assert!(KarcherProblem::new(vec![], vec![]).is_err());
        assert!(MedianProblem::new(vec![SpdMatrix::identity(2)], vec![0.5]).is_err());
    }

    #[test]
    fn trace_csv_columns() {
        let rows = [TraceRow { iter: 0, cost: 1.5, grad_norm: 0.25, delta_t_step: 0.0, time_s: 0.0 }];
        let mut out = Vec::new();
        write_trace_csv(&mut out, &rows, false).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "iter,cost,grad_norm,time_s\n0,1.5,0.25,0\n");
    }
}
