//! Zero-mean elliptically contoured distributions with density
//! `∝ det(S)^{-1/2} φ(xᵀS⁻¹x)`: the dgf catalog, the negative log-likelihood
//! `Φ(S) = (n/2) logdet S − Σ log φ(tᵢ)`, its gradient, the fixed-point and
//! CCCP updates, class dispatch, existence diagnostics and a seeded sampler.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};
use crate::fixed_point::{self, FixedPointMap, FpConfig, Scaling};
use crate::manifold::{self, ManifoldPoint};
use crate::optim::{self, Method, Problem, SolverConfig, Status, TraceRow};
use crate::random::rng;
use crate::spd::{SpdMatrix, SymMatrix};

/// Density generating function. Normalizing constants are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Dgf {
    /// `φ(t) = t^{α−d/2} exp(−(t/b)^β)`
    Kotz { alpha: f64, b: f64, beta: f64 },
    /// `φ(t) = (1 + t/ν)^{−(ν+d)/2}`
    StudentT { nu: f64 },
    /// `φ(t) = exp(−t^ν / b)`
    PowerExponential { nu: f64, b: f64 },
    /// `φ(t) = t^{ν−1} exp(−t^ν / b)`
    WDist { nu: f64, b: f64 },
    /// `φ(t) = t^{ν−d/2} exp(−t / b)`
    EllipticalGamma { nu: f64, b: f64 },
    /// `φ(t) = (1 − t)^ν` on `[0, 1)`
    PearsonII { nu: f64 },
    /// `φ(t) = e^{−√t} / (1 + e^{−√t})²`
    Logistic,
}

/// Kotz parameters `(α, b, β)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KotzParams {
    pub alpha: f64,
    pub b: f64,
    pub beta: f64,
}

impl Dgf {
    /// The Gaussian law as a Kotz dgf: `α = d/2, β = 1, b = 2`.
    pub fn gaussian(d: usize) -> Self {
        Dgf::Kotz { alpha: d as f64 / 2.0, b: 2.0, beta: 1.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Dgf::Kotz { .. } => "kotz",
            Dgf::StudentT { .. } => "student_t",
            Dgf::PowerExponential { .. } => "power_exponential",
            Dgf::WDist { .. } => "w_dist",
            Dgf::EllipticalGamma { .. } => "elliptical_gamma",
            Dgf::PearsonII { .. } => "pearson_ii",
            Dgf::Logistic => "logistic",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{} needs {name} > 0, got {v}", self.name())))
            }
        };
        match *self {
            Dgf::Kotz { alpha, b, beta } => {
                pos("alpha", alpha)?;
                pos("b", b)?;
                pos("beta", beta)
            }
            Dgf::StudentT { nu } => pos("nu", nu),
            Dgf::PowerExponential { nu, b } | Dgf::WDist { nu, b } | Dgf::EllipticalGamma { nu, b } => {
                pos("nu", nu)?;
                pos("b", b)
            }
            Dgf::PearsonII { nu } => {
                if nu > -1.0 && nu.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidInput(format!("pearson_ii needs nu > -1, got {nu}")))
                }
            }
            Dgf::Logistic => Ok(()),
        }
    }

    /// The Kotz parameters of the Kotz-family members.
    pub fn kotz_equivalent(&self, d: usize) -> Option<KotzParams> {
        let half = d as f64 / 2.0;
        match *self {
            Dgf::Kotz { alpha, b, beta } => Some(KotzParams { alpha, b, beta }),
            Dgf::PowerExponential { nu, b } => Some(KotzParams { alpha: half, b: b.powf(1.0 / nu), beta: nu }),
            Dgf::WDist { nu, b } => Some(KotzParams { alpha: nu - 1.0 + half, b: b.powf(1.0 / nu), beta: nu }),
            Dgf::EllipticalGamma { nu, b } => Some(KotzParams { alpha: nu, b, beta: 1.0 }),
            _ => None,
        }
    }

    /// `−log φ(t)` for dimension `d`; `+∞` outside the support.
    pub fn neg_log_phi(&self, t: f64, d: usize) -> f64 {
        if let Some(k) = self.kotz_equivalent(d) {
            let c = d as f64 / 2.0 - k.alpha;
            let log_part = if c == 0.0 { 0.0 } else { c * t.ln() };
            return log_part + (t / k.b).powf(k.beta);
        }
        match *self {
            Dgf::StudentT { nu } => 0.5 * (nu + d as f64) * (t / nu).ln_1p(),
            Dgf::PearsonII { nu } => {
                if t >= 1.0 {
                    f64::INFINITY
                } else {
                    -nu * (-t).ln_1p()
                }
            }
            Dgf::Logistic => {
                let s = t.sqrt();
                s + 2.0 * (-s).exp().ln_1p()
            }
            _ => unreachable!("Kotz-family handled above"),
        }
    }

    /// `h(t) = −φ′(t)/φ(t)`, the derivative of [`Dgf::neg_log_phi`].
    pub fn h(&self, t: f64, d: usize) -> f64 {
        if let Some(k) = self.kotz_equivalent(d) {
            let c = d as f64 / 2.0 - k.alpha;
            let first = if c == 0.0 { 0.0 } else { c / t };
            return first + k.beta / k.b.powf(k.beta) * t.powf(k.beta - 1.0);
        }
        match *self {
            Dgf::StudentT { nu } => (nu + d as f64) / (2.0 * (nu + t)),
            Dgf::PearsonII { nu } => nu / (1.0 - t),
            Dgf::Logistic => {
                let s = t.sqrt();
                (0.5 * s).tanh() / (2.0 * s)
            }
            _ => unreachable!("Kotz-family handled above"),
        }
    }

    /// Largest `t` in the support, if bounded.
    pub fn support_max(&self) -> Option<f64> {
        match self {
            Dgf::PearsonII { .. } => Some(1.0),
            _ => None,
        }
    }
}

impl fmt::Display for Dgf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Dgf::Kotz { alpha, b, beta } => write!(f, "kotz(alpha={alpha}, b={b}, beta={beta})"),
            Dgf::StudentT { nu } => write!(f, "student_t(nu={nu})"),
            Dgf::PowerExponential { nu, b } => write!(f, "power_exponential(nu={nu}, b={b})"),
            Dgf::WDist { nu, b } => write!(f, "w_dist(nu={nu}, b={b})"),
            Dgf::EllipticalGamma { nu, b } => write!(f, "elliptical_gamma(nu={nu}, b={b})"),
            Dgf::PearsonII { nu } => write!(f, "pearson_ii(nu={nu})"),
            Dgf::Logistic => write!(f, "logistic"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    FixedPoint,
    Cccp,
    Manifold,
}

/// Class flags of a dgf at a given dimension.
///
/// `gconvex`: `Φ` is geodesically convex; `ln`: the fixed-point map is
/// log-nonexpansive; `lc`: the CCCP split applies (`h ≥ 0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DgfClass {
    pub gconvex: bool,
    pub ln: bool,
    pub lc: bool,
    pub recommended_solver: Solver,
}

pub fn classify(dgf: &Dgf, d: usize) -> DgfClass {
    let (gconvex, ln, lc) = match (dgf.kotz_equivalent(d), *dgf) {
        (Some(k), _) => {
            let inside = k.alpha <= d as f64 / 2.0;
            (inside, inside && k.beta < 2.0, inside && k.beta >= 1.0)
        }
        (None, Dgf::StudentT { .. }) | (None, Dgf::Logistic) => (true, true, true),
        (None, Dgf::PearsonII { nu }) => (nu > 0.0, false, false),
        _ => (false, false, false),
    };
    DgfClass {
        gconvex,
        ln,
        lc,
        recommended_solver: if ln || lc { Solver::FixedPoint } else { Solver::Manifold },
    }
}

/// Samples as the columns of a `d × n` matrix, with optional provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    samples: DMatrix<f64>,
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub dgf: Dgf,
    /// Row-major true scatter.
    pub scatter: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from a `d × n` matrix whose columns are samples.
    pub fn from_columns(samples: DMatrix<f64>) -> Result<Self> {
        if samples.nrows() == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        if !samples.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("dataset has non-finite entries".into()));
        }
        if let Some(i) = samples.column_iter().position(|c| c.iter().all(|v| *v == 0.0)) {
            return Err(Error::InvalidInput(format!("sample {i} is the zero vector")));
        }
        Ok(Self { samples, provenance: None })
    }

    /// Builds a dataset from an `n × d` matrix whose rows are samples.
    pub fn from_rows(rows: &DMatrix<f64>) -> Result<Self> {
        Self::from_columns(rows.transpose())
    }

    pub fn dim(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> DVector<f64> {
        self.samples.column(i).into_owned()
    }

    /// Numerical rank, counting singular values above `max(d, n) ε σ_max`.
    pub fn rank(&self) -> usize {
        if self.is_empty() {
            return 0;
        }
        let sv = crate::spd::singular_values(&self.samples);
        let smax = sv[0];
        let tol = self.dim().max(self.len()) as f64 * f64::EPSILON * smax;
        sv.iter().filter(|s| **s > tol).count()
    }

    /// `(1/n) Σ xᵢxᵢᵀ`.
    pub fn second_moment(&self) -> Result<SpdMatrix> {
        let n = self.len() as f64;
        SpdMatrix::new(SymMatrix::symmetrize(&self.samples * self.samples.transpose() / n).into_matrix())
    }

    /// Dataset with samples `M xᵢ`.
    pub fn transformed(&self, m: &DMatrix<f64>) -> Result<Self> {
        if m.ncols() != self.dim() {
            return Err(dim_mismatch(self.dim(), m.ncols()));
        }
        Self::from_columns(m * &self.samples)
    }
}

const CHUNK: usize = 512;

/// What a pass over the data accumulates besides `Σ −log φ(tᵢ)`.
#[derive(Clone, Copy, PartialEq)]
enum Accumulate {
    None,
    /// `Σ h(tᵢ) yᵢyᵢᵀ` over the transformed samples.
    Transformed,
    /// `Σ h(tᵢ) xᵢxᵢᵀ` over the raw samples.
    Raw,
}

struct PassOut {
    psi: f64,
    sum: Option<DMatrix<f64>>,
    h_min: f64,
}

/// Negative log-likelihood of a dgf on a fixed dataset.
#[derive(Debug, Clone)]
pub struct EcdProblem {
    dgf: Dgf,
    data: Dataset,
}

impl EcdProblem {
    /// Fails with [`Error::Rank`] unless the samples span `ℝ^d`.
    pub fn new(dgf: Dgf, data: Dataset) -> Result<Self> {
        dgf.validate()?;
        let rank = data.rank();
        if rank < data.dim() {
            return Err(Error::Rank { rank, dim: data.dim() });
        }
        Ok(Self { dgf, data })
    }

    pub fn dgf(&self) -> &Dgf {
        &self.dgf
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn n(&self) -> usize {
        self.data.len()
    }

    fn check(&self, s: &SpdMatrix) -> Result<()> {
        if s.dim() != self.data.dim() {
            return Err(dim_mismatch(self.data.dim(), s.dim()));
        }
        Ok(())
    }

    /// One pass over the data in fixed chunks. `transform` maps a chunk of
    /// samples to vectors `yᵢ` with `tᵢ = ‖yᵢ‖²`. Partial results are
    /// combined in chunk order, so the outcome does not depend on scheduling.
    fn pass<T>(&self, transform: T, acc: Accumulate) -> PassOut
    where
        T: Fn(&DMatrix<f64>) -> DMatrix<f64> + Sync,
    {
        let d = self.data.dim();
        let x = self.data.columns();
        let n = x.ncols();
        let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
        let parts: Vec<PassOut> = starts
            .par_iter()
            .map(|&start| {
                let len = CHUNK.min(n - start);
                let xc = x.columns(start, len).into_owned();
                let y = transform(&xc);
                let mut psi = 0.0;
                let mut h_min = f64::INFINITY;
                let mut weights = Vec::with_capacity(if acc == Accumulate::None { 0 } else { len });
                for j in 0..len {
                    let t = y.column(j).norm_squared();
                    psi += self.dgf.neg_log_phi(t, d);
                    if acc != Accumulate::None {
                        let h = self.dgf.h(t, d);
                        h_min = h_min.min(h);
                        weights.push(h);
                    }
                }
                let sum = match acc {
                    Accumulate::None => None,
                    Accumulate::Transformed | Accumulate::Raw => {
                        let base = if acc == Accumulate::Raw { &xc } else { &y };
                        let mut scaled = base.clone();
                        for (j, w) in weights.iter().enumerate() {
                            scaled.column_mut(j).scale_mut(*w);
                        }
                        Some(scaled * base.transpose())
                    }
                };
                PassOut { psi, sum, h_min }
            })
            .collect();
        let mut out = PassOut {
            psi: 0.0,
            sum: (acc != Accumulate::None).then(|| DMatrix::zeros(d, d)),
            h_min: f64::INFINITY,
        };
        for p in parts {
            out.psi += p.psi;
            out.h_min = out.h_min.min(p.h_min);
            if let (Some(total), Some(part)) = (out.sum.as_mut(), p.sum) {
                *total += part;
            }
        }
        out
    }

    fn whitening(l: &DMatrix<f64>) -> impl Fn(&DMatrix<f64>) -> DMatrix<f64> + Sync + '_ {
        move |xc: &DMatrix<f64>| {
            l.solve_lower_triangular(xc).expect("Cholesky factor of a PD matrix is invertible")
        }
    }

    fn nll_with_factor(&self, l: &DMatrix<f64>) -> f64 {
        let logdet = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        0.5 * self.n() as f64 * logdet + self.pass(Self::whitening(l), Accumulate::None).psi
    }

    /// `Φ(S) = (n/2) logdet S + Σ −log φ(xᵢᵀS⁻¹xᵢ)`.
    pub fn nll(&self, s: &SpdMatrix) -> Result<f64> {
        self.check(s)?;
        Ok(self.nll_with_factor(&s.cholesky_factor()))
    }

    fn nll_and_egrad_with_factor(&self, l: &DMatrix<f64>) -> (f64, SymMatrix) {
        let d = self.data.dim();
        let n = self.n() as f64;
        let out = self.pass(Self::whitening(l), Accumulate::Transformed);
        let logdet = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let w = out.sum.expect("requested");
        // ∇Φ = (n/2)S⁻¹ − S⁻¹(Σ h xxᵀ)S⁻¹ = L⁻ᵀ((n/2)I − W)L⁻¹ with W = Σ h yyᵀ
        let inner = DMatrix::<f64>::identity(d, d) * (0.5 * n) - w;
        let l_inv = l
            .solve_lower_triangular(&DMatrix::identity(d, d))
            .expect("Cholesky factor of a PD matrix is invertible");
        let g = l_inv.transpose() * inner * l_inv;
        (0.5 * n * logdet + out.psi, SymMatrix::symmetrize(g))
    }

    /// `∇Φ(S) = (n/2)S⁻¹ − Σ h(tᵢ) S⁻¹xᵢxᵢᵀS⁻¹`.
    pub fn nll_egrad(&self, s: &SpdMatrix) -> Result<SymMatrix> {
        self.check(s)?;
        Ok(self.nll_and_egrad_with_factor(&s.cholesky_factor()).1)
    }

    /// `𝒢(S) = (2/n) Σ h(xᵢᵀS⁻¹xᵢ) xᵢxᵢᵀ`.
    pub fn fp_map(&self, s: &SpdMatrix) -> Result<SpdMatrix> {
        Ok(self.fp_map_and_nll(s)?.0)
    }

    /// `𝒢(S)` and `Φ(S)` from a single pass over the data.
    pub fn fp_map_and_nll(&self, s: &SpdMatrix) -> Result<(SpdMatrix, f64)> {
        self.check(s)?;
        let l = s.cholesky_factor();
        let out = self.pass(Self::whitening(&l), Accumulate::Raw);
        let logdet = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let g = out.sum.expect("requested") * (2.0 / self.n() as f64);
        let g = SpdMatrix::new(SymMatrix::symmetrize(g).into_matrix())?;
        Ok((g, 0.5 * self.n() as f64 * logdet + out.psi))
    }

    /// `P⁺ = ((2/n) Σ h(xᵢᵀPxᵢ) xᵢxᵢᵀ)⁻¹`.
    pub fn cccp_step(&self, p: &SpdMatrix) -> Result<SpdMatrix> {
        self.check(p)?;
        let lp = p.cholesky_factor();
        let out = self.pass(|xc: &DMatrix<f64>| lp.transpose() * xc, Accumulate::Raw);
        if out.h_min < 0.0 {
            return Err(Error::ClassViolation(format!("h took the negative value {}", out.h_min)));
        }
        let g = out.sum.expect("requested") * (2.0 / self.n() as f64);
        Ok(SpdMatrix::new(SymMatrix::symmetrize(g).into_matrix())?.inverse())
    }

    /// `c I` with `c = (1/(nd)) Σ ‖xᵢ‖²`, enlarged for bounded supports so
    /// every `tᵢ ≤ 1/2`.
    pub fn default_initial(&self) -> SpdMatrix {
        let d = self.data.dim();
        let x = self.data.columns();
        let norms: Vec<f64> = x.column_iter().map(|c| c.norm_squared()).collect();
        let mut c = norms.iter().sum::<f64>() / (norms.len() as f64 * d as f64);
        if let Some(tmax) = self.dgf.support_max() {
            let biggest = norms.iter().copied().fold(0.0, f64::max);
            c = c.max(2.0 * biggest / tmax);
        }
        SpdMatrix::scaled_identity(d, c).expect("data are nonzero")
    }
}

impl Problem for EcdProblem {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn cost(&self, x: &ManifoldPoint) -> Result<f64> {
        self.check(x.value())?;
        Ok(self.nll_with_factor(x.cholesky_factor()))
    }

    fn egrad(&self, x: &ManifoldPoint) -> Result<SymMatrix> {
        Ok(self.cost_and_egrad(x)?.1)
    }

    fn cost_and_egrad(&self, x: &ManifoldPoint) -> Result<(f64, SymMatrix)> {
        self.check(x.value())?;
        Ok(self.nll_and_egrad_with_factor(x.cholesky_factor()))
    }
}

impl FixedPointMap for EcdProblem {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn apply(&self, s: &SpdMatrix) -> Result<SpdMatrix> {
        self.fp_map(s)
    }

    fn objective(&self, s: &SpdMatrix) -> Option<f64> {
        self.nll(s).ok()
    }

    fn apply_with_objective(&self, s: &SpdMatrix) -> Result<(SpdMatrix, Option<f64>)> {
        let (g, nll) = self.fp_map_and_nll(s)?;
        Ok((g, Some(nll)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    Auto,
    Fp,
    Fp2,
    Cccp,
    Sd,
    Cg,
    Lbfgs,
}

impl FitMethod {
    pub const ALL: [FitMethod; 6] =
        [FitMethod::Fp, FitMethod::Fp2, FitMethod::Cccp, FitMethod::Sd, FitMethod::Cg, FitMethod::Lbfgs];

    pub fn name(self) -> &'static str {
        match self {
            FitMethod::Auto => "auto",
            FitMethod::Fp => "fp",
            FitMethod::Fp2 => "fp2",
            FitMethod::Cccp => "cccp",
            FitMethod::Sd => "sd",
            FitMethod::Cg => "cg",
            FitMethod::Lbfgs => "lbfgs",
        }
    }

    fn manifold(self) -> Option<Method> {
        match self {
            FitMethod::Sd => Some(Method::Sd),
            FitMethod::Cg => Some(Method::Cg),
            FitMethod::Lbfgs => Some(Method::Lbfgs),
            _ => None,
        }
    }
}

impl fmt::Display for FitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(FitMethod::Auto),
            "fp" => Ok(FitMethod::Fp),
            "fp2" => Ok(FitMethod::Fp2),
            "cccp" => Ok(FitMethod::Cccp),
            "sd" => Ok(FitMethod::Sd),
            "cg" => Ok(FitMethod::Cg),
            "lbfgs" => Ok(FitMethod::Lbfgs),
            other => Err(Error::InvalidInput(format!("unknown method `{other}`"))),
        }
    }
}

/// Resolves `auto` and rejects methods the class flags do not support.
pub fn resolve_method(method: FitMethod, class: &DgfClass) -> Result<FitMethod> {
    let incompatible = |reason: &str| Error::IncompatibleMethod {
        method: method.name().to_string(),
        reason: reason.to_string(),
    };
    match method {
        FitMethod::Auto => Ok(match class.recommended_solver {
            Solver::FixedPoint => FitMethod::Fp,
            Solver::Cccp => FitMethod::Cccp,
            Solver::Manifold => FitMethod::Lbfgs,
        }),
        FitMethod::Fp | FitMethod::Fp2 if !(class.ln || class.lc) => {
            Err(incompatible("fixed-point iteration needs an LN or LC dgf"))
        }
        FitMethod::Cccp if !class.lc => Err(incompatible("CCCP needs an LC dgf")),
        m => Ok(m),
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub method: FitMethod,
    /// Fixed-point settings; `scaling` is set from the method.
    pub fp: FpConfig,
    /// Manifold settings; `grad_tol` is multiplied by `n` and `method` is set
    /// from the fit method.
    pub solver: SolverConfig,
    pub initial: Option<SpdMatrix>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            method: FitMethod::Auto,
            fp: FpConfig { max_iter: 20_000, ..FpConfig::default() },
            solver: SolverConfig { grad_tol: 1e-8, max_iter: 5000, ..SolverConfig::default() },
            initial: None,
        }
    }
}

impl FitOptions {
    pub fn with_method(method: FitMethod) -> Self {
        Self { method, ..Self::default() }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub scatter: SpdMatrix,
    pub method: FitMethod,
    pub status: Status,
    /// `grad_norm` is the Riemannian gradient norm of `Φ` for every method.
    pub trace: Vec<TraceRow>,
    pub class: DgfClass,
    pub existence: ExistenceReport,
    pub final_nll: f64,
}

impl FitReport {
    pub fn iterations(&self) -> usize {
        self.trace.last().map_or(0, |r| r.iter)
    }

    pub fn final_grad_norm(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.grad_norm)
    }
}

/// CCCP iterations `P ← cccp_step(P)` reported in terms of `S = P⁻¹`, with the
/// cost `Φ(S_k)` recorded at every iterate.
pub fn cccp_solve(p: &EcdProblem, initial: &SpdMatrix, cfg: &FpConfig) -> Result<(SpdMatrix, Vec<TraceRow>, Status)> {
    let start = Instant::now();
    let half_n = 0.5 * p.n() as f64;
    let mut prec = initial.inverse();
    let mut s = initial.clone();
    let row = |iter: usize, s: &SpdMatrix, g_s: &SpdMatrix, step: f64| -> Result<TraceRow> {
        Ok(TraceRow {
            iter,
            cost: p.nll(s)?,
            grad_norm: half_n * fixed_point::diagnostic(s, g_s),
            delta_t_step: step,
            time_s: start.elapsed().as_secs_f64(),
        })
    };
    let mut next_prec = p.cccp_step(&prec)?;
    let mut next_s = next_prec.inverse();
    let mut trace = vec![row(0, &s, &next_s, 0.0)?];
    for iter in 1..=cfg.max_iter {
        let step = manifold::dist_thompson(&next_s, &s)?;
        prec = next_prec;
        s = next_s;
        next_prec = p.cccp_step(&prec)?;
        next_s = next_prec.inverse();
        trace.push(row(iter, &s, &next_s, step)?);
        if manifold::dist_thompson(&next_s, &s)? <= cfg.step_tol {
            return Ok((s, trace, Status::Converged));
        }
    }
    Ok((s, trace, Status::MaxIter))
}

/// Maximum-likelihood scatter estimate.
///
/// Existence diagnostics are computed and reported but never block the fit.
pub fn mle_fit(dgf: &Dgf, data: &Dataset, opts: &FitOptions) -> Result<FitReport> {
    let problem = EcdProblem::new(*dgf, data.clone())?;
    let d = data.dim();
    let n = data.len() as f64;
    let class = classify(dgf, d);
    let method = resolve_method(opts.method, &class)?;
    let initial = match &opts.initial {
        Some(s) => {
            problem.check(s)?;
            s.clone()
        }
        None => problem.default_initial(),
    };
    let alpha = dgf.kotz_equivalent(d).map_or(d as f64 / 2.0, |k| k.alpha);
    let existence = existence_check(data, alpha);

    let (scatter, status, trace) = match method {
        FitMethod::Fp | FitMethod::Fp2 => {
            let cfg = FpConfig {
                scaling: if method == FitMethod::Fp2 { Scaling::TraceD } else { Scaling::Off },
                initial: Some(initial),
                ..opts.fp.clone()
            };
            let rep = fixed_point::picard_solve(&problem, &cfg)?;
            let trace = rep
                .trace
                .into_iter()
                .map(|r| TraceRow { grad_norm: 0.5 * n * r.grad_norm, ..r })
                .collect();
            (rep.fixed_point, rep.status, trace)
        }
        FitMethod::Cccp => {
            let (s, trace, status) = cccp_solve(&problem, &initial, &opts.fp)?;
            (s, status, trace)
        }
        m => {
            let cfg = SolverConfig {
                method: m.manifold().expect("resolved to a manifold method"),
                grad_tol: opts.solver.grad_tol * n,
                initial_point: Some(initial),
                ..opts.solver.clone()
            };
            let rep = optim::solve(&problem, &cfg)?;
            (rep.minimizer, rep.status, rep.trace)
        }
    };
    let final_nll = problem.nll(&scatter)?;
    Ok(FitReport { scatter, method, status, trace, class, existence, final_nll })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubspaceKind {
    Span,
    Line,
    Plane,
    Hyperplane,
}

/// A subspace holding more samples than the existence condition allows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExistenceWarning {
    pub kind: SubspaceKind,
    pub subspace_dim: usize,
    pub count: usize,
    /// Largest count the condition allows (exclusive).
    pub bound: f64,
    /// Orthonormal basis of the subspace (one vector per entry).
    pub witness: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExistenceReport {
    pub ok: bool,
    /// True when every subspace was examined (`d ≤ 3`).
    pub exact: bool,
    pub warnings: Vec<ExistenceWarning>,
}

const DIRECTION_TOL: f64 = 1e-9;

/// Sign-normalized unit vector: first entry of magnitude above the tolerance is positive.
fn canonical_direction(v: &DVector<f64>) -> DVector<f64> {
    let u = v / v.norm();
    let lead = u.iter().copied().find(|c| c.abs() > DIRECTION_TOL).unwrap_or(1.0);
    if lead < 0.0 {
        -u
    } else {
        u
    }
}

/// Groups vectors by the line they span; returns `(direction, count)` per line.
fn line_groups(vectors: &[DVector<f64>]) -> Vec<(DVector<f64>, usize)> {
    let mut dirs: Vec<DVector<f64>> = vectors.iter().map(canonical_direction).collect();
    dirs.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut groups: Vec<(DVector<f64>, usize)> = Vec::new();
    for u in dirs {
        match groups.last_mut() {
            Some((rep, count)) if (&u - &*rep).norm() <= DIRECTION_TOL.sqrt() => *count += 1,
            _ => groups.push((u, 1)),
        }
    }
    groups
}

fn basis_of(vectors: &[&DVector<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::new();
    for v in vectors {
        let mut w = (*v).clone();
        for b in &out {
            let c = b.dot(&w);
            w -= b * c;
        }
        let nrm = w.norm();
        if nrm > 1e-10 * v.norm() {
            out.push(w / nrm);
        }
    }
    out.into_iter().map(|v| v.iter().copied().collect()).collect()
}

/// Checks `|𝒳 ∩ L| / n < dim L / (d − 2α)` for proper subspaces `L`, plus the
/// requirement that the samples span `ℝ^d`.
///
/// For `d ≤ 3` every line and plane spanned by samples is examined (planes
/// through a pivot sample, grouping the others by direction in the pivot's
/// orthogonal complement). For larger `d` the test covers the span, lines, and
/// the hyperplanes orthogonal to the eigenvectors of the sample second moment.
pub fn existence_check(data: &Dataset, alpha: f64) -> ExistenceReport {
    let d = data.dim();
    let n = data.len();
    let mut warnings = Vec::new();
    let rank = data.rank();
    if rank < d {
        let vecs: Vec<DVector<f64>> = (0..n).map(|i| data.sample(i)).collect();
        let refs: Vec<&DVector<f64>> = vecs.iter().collect();
        warnings.push(ExistenceWarning {
            kind: SubspaceKind::Span,
            subspace_dim: rank,
            count: n,
            bound: n as f64,
            witness: basis_of(&refs),
        });
        return ExistenceReport { ok: false, exact: d <= 3, warnings };
    }
    let gap = d as f64 - 2.0 * alpha;
    if gap <= 0.0 {
        return ExistenceReport { ok: true, exact: true, warnings };
    }
    let bound = |k: usize| n as f64 * k as f64 / gap;
    let vecs: Vec<DVector<f64>> = (0..n).map(|i| data.sample(i)).collect();

    // lines
    if bound(1) <= n as f64 {
        for (dir, count) in line_groups(&vecs) {
            if count as f64 >= bound(1) {
                warnings.push(ExistenceWarning {
                    kind: SubspaceKind::Line,
                    subspace_dim: 1,
                    count,
                    bound: bound(1),
                    witness: vec![dir.iter().copied().collect()],
                });
            }
        }
    }

    if d == 3 && bound(2) <= n as f64 {
        if let Some(w) = densest_plane(&vecs, bound(2)) {
            warnings.push(w);
        }
    } else if d > 3 && bound(d - 1) <= n as f64 {
        if let Ok(m) = data.second_moment() {
            let e = m.eig();
            for k in 0..d {
                let u = e.eigenvectors.column(k).into_owned();
                let count = vecs
                    .iter()
                    .filter(|x| u.dot(x).abs() <= DIRECTION_TOL.sqrt() * x.norm())
                    .count();
                if count as f64 >= bound(d - 1) {
                    warnings.push(ExistenceWarning {
                        kind: SubspaceKind::Hyperplane,
                        subspace_dim: d - 1,
                        count,
                        bound: bound(d - 1),
                        witness: vec![u.iter().copied().collect()],
                    });
                }
            }
        }
    }
    ExistenceReport { ok: warnings.is_empty(), exact: d <= 3, warnings }
}

/// Densest plane in `ℝ³` when it holds at least `threshold` samples.
///
/// A plane with `m` samples contains one of any `n − m + 1` samples, so only
/// that many pivots are needed.
fn densest_plane(vecs: &[DVector<f64>], threshold: f64) -> Option<ExistenceWarning> {
    let n = vecs.len();
    let need = threshold.ceil() as usize;
    if need > n {
        return None;
    }
    let pivots = (n - need + 1).min(n);
    let mut best: Option<(usize, DVector<f64>, DVector<f64>)> = None;
    for p in vecs.iter().take(pivots) {
        let u = p / p.norm();
        let mut on_line = 0usize;
        let mut projected = Vec::with_capacity(n);
        for x in vecs {
            let r = x - &u * u.dot(x);
            if r.norm() <= DIRECTION_TOL.sqrt() * x.norm() {
                on_line += 1;
            } else {
                projected.push(r);
            }
        }
        let (count, dir) = line_groups(&projected)
            .into_iter()
            .max_by_key(|(_, c)| *c)
            .map(|(dir, c)| (c + on_line, dir))
            .unwrap_or((on_line, u.clone()));
        if best.as_ref().is_none_or(|b| count > b.0) {
            best = Some((count, u, dir));
        }
    }
    let (count, u, v) = best?;
    (count >= need).then(|| ExistenceWarning {
        kind: SubspaceKind::Plane,
        subspace_dim: 2,
        count,
        bound: threshold,
        witness: basis_of(&[&u, &v]),
    })
}

/// Draws `n` samples `x = r S^{1/2} u` with `u` uniform on the sphere.
///
/// Kotz-family dgfs use `y ~ Gamma(α/β, 1)`, `r = √b y^{1/(2β)}`; the
/// Student t law uses `x = z / √(w/ν)` with `z ~ N(0, S)`, `w ~ χ²_ν`.
pub fn sample(dgf: &Dgf, scatter: &SpdMatrix, n: usize, seed: u64) -> Result<Dataset> {
    dgf.validate()?;
    let d = scatter.dim();
    let l = scatter.cholesky_factor();
    let mut r = rng(seed);
    let mut cols = DMatrix::zeros(d, n);
    let gaussian = |r: &mut rand_chacha::ChaCha8Rng| DVector::<f64>::from_fn(d, |_, _| r.sample(StandardNormal));
    match (dgf.kotz_equivalent(d), dgf) {
        (Some(k), _) => {
            let gamma = Gamma::new(k.alpha / k.beta, 1.0)
                .map_err(|e| Error::InvalidInput(format!("radial law: {e}")))?;
            for j in 0..n {
                let y: f64 = gamma.sample(&mut r);
                let radius = k.b.sqrt() * y.powf(1.0 / (2.0 * k.beta));
                let mut z = gaussian(&mut r);
                let nz = z.norm();
                z /= nz;
                cols.set_column(j, &(&l * z * radius));
            }
        }
        (None, Dgf::StudentT { nu }) => {
            let chi = ChiSquared::new(*nu).map_err(|e| Error::InvalidInput(format!("chi-squared: {e}")))?;
            for j in 0..n {
                let z = gaussian(&mut r);
                let w: f64 = chi.sample(&mut r);
                cols.set_column(j, &(&l * z / (w / nu).sqrt()));
            }
        }
        _ => return Err(Error::Unsupported(format!("sampling from {}", dgf.name()))),
    }
    let mut data = Dataset::from_columns(cols)?;
    data.provenance = Some(Provenance {
        seed,
        dgf: *dgf,
        scatter: scatter.as_matrix().transpose().iter().copied().collect(),
    });
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::random_spd;
    use approx::assert_relative_eq;

    fn catalog() -> Vec<Dgf> {
        vec![
            Dgf::Kotz { alpha: 1.0, b: 2.0, beta: 0.5 },
            Dgf::Kotz { alpha: 3.0, b: 1.5, beta: 3.0 },
            Dgf::StudentT { nu: 3.0 },
            Dgf::PowerExponential { nu: 0.7, b: 2.0 },
            Dgf::WDist { nu: 0.8, b: 1.0 },
            Dgf::EllipticalGamma { nu: 1.2, b: 2.0 },
            Dgf::PearsonII { nu: 2.0 },
            Dgf::Logistic,
        ]
    }

    fn problem(dgf: Dgf, d: usize, n: usize, seed: u64) -> EcdProblem {
        let mut r = rng(seed);
        let x = DMatrix::from_fn(d, n, |_, _| r.sample::<f64, _>(StandardNormal));
        EcdProblem::new(dgf, Dataset::from_columns(x).unwrap()).unwrap()
    }

    #[test]
    fn h_is_the_derivative_of_neg_log_phi() {
        for dgf in catalog() {
            for &t in &[0.05, 0.3, 0.7, 2.0, 9.0] {
                if dgf.support_max().is_some_and(|m| t >= m) {
                    continue;
                }
                let e = 1e-6 * t;
                let fd = (dgf.neg_log_phi(t + e, 4) - dgf.neg_log_phi(t - e, 4)) / (2.0 * e);
                assert_relative_eq!(dgf.h(t, 4), fd, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn kotz_members_match_their_kotz_form() {
        let d = 5;
        for dgf in [
            Dgf::PowerExponential { nu: 0.7, b: 2.0 },
            Dgf::WDist { nu: 1.3, b: 0.5 },
            Dgf::EllipticalGamma { nu: 2.0, b: 3.0 },
        ] {
            let k = dgf.kotz_equivalent(d).unwrap();
            let kotz = Dgf::Kotz { alpha: k.alpha, b: k.b, beta: k.beta };
            for &t in &[0.1, 1.0, 4.0] {
                assert_relative_eq!(dgf.neg_log_phi(t, d), kotz.neg_log_phi(t, d), max_relative = 1e-12);
            }
        }
        // φ(t) = exp(−t^ν/b) evaluated directly
        let pe = Dgf::PowerExponential { nu: 0.7, b: 2.0 };
        assert_relative_eq!(pe.neg_log_phi(3.0, d), 3f64.powf(0.7) / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn class_examples() {
        let g = classify(&Dgf::gaussian(4), 4);
        assert!(g.gconvex && g.ln && g.lc);
        assert_eq!(g.recommended_solver, Solver::FixedPoint);
        let c = classify(&Dgf::Kotz { alpha: 1.0, b: 1.0, beta: 3.0 }, 4);
        assert!(!c.ln && c.lc);
        let c = classify(&Dgf::Kotz { alpha: 3.0, b: 1.0, beta: 1.0 }, 4);
        assert!(!c.gconvex && !c.ln && !c.lc);
        assert_eq!(c.recommended_solver, Solver::Manifold);
        let c = classify(&Dgf::PearsonII { nu: 2.0 }, 4);
        assert!(c.gconvex && !c.ln && !c.lc);
        let c = classify(&Dgf::Kotz { alpha: 1.0, b: 1.0, beta: 0.5 }, 4);
        assert!(c.gconvex && c.ln && !c.lc);
    }

    #[test]
    fn incompatible_methods_are_rejected() {
        let class = classify(&Dgf::PearsonII { nu: 2.0 }, 3);
        assert!(matches!(resolve_method(FitMethod::Fp, &class), Err(Error::IncompatibleMethod { .. })));
        assert!(matches!(resolve_method(FitMethod::Cccp, &class), Err(Error::IncompatibleMethod { .. })));
        assert_eq!(resolve_method(FitMethod::Auto, &class).unwrap(), FitMethod::Lbfgs);
        let ln_only = classify(&Dgf::Kotz { alpha: 1.0, b: 1.0, beta: 0.5 }, 4);
        assert!(resolve_method(FitMethod::Cccp, &ln_only).is_err());
        assert_eq!(resolve_method(FitMethod::Auto, &ln_only).unwrap(), FitMethod::Fp);
    }

    #[test]
    fn egrad_matches_directional_derivative() {
        for dgf in catalog() {
            let p = problem(dgf, 3, 40, 1);
            let mut r = rng(2);
            let s = p.default_initial().congruence(random_spd(&mut r, 3).sqrt().as_matrix()).unwrap();
            let s = if dgf.support_max().is_some() { s.scale(20.0).unwrap() } else { s };
            let xi = crate::random::random_sym(&mut r, 3, 1.0);
            let e = 1e-5;
            let plus = SpdMatrix::from_sym(s.to_sym() + xi.scale(e)).unwrap();
            let minus = SpdMatrix::from_sym(s.to_sym() - xi.scale(e)).unwrap();
            let fd = (p.nll(&plus).unwrap() - p.nll(&minus).unwrap()) / (2.0 * e);
            let an = p.nll_egrad(&s).unwrap().trace_product(&xi);
            assert_relative_eq!(an, fd, max_relative = 1e-5, epsilon = 1e-6);
        }
    }

    #[test]
    fn egrad_vanishes_exactly_where_fp_map_is_fixed() {
        // ∇Φ(S) = (n/2) S⁻¹ (S − 𝒢(S)) S⁻¹
        let p = problem(Dgf::StudentT { nu: 4.0 }, 3, 30, 3);
        let s = random_spd(&mut rng(4), 3);
        let g = p.fp_map(&s).unwrap();
        let si = s.inverse();
        let expect = si.as_matrix() * (s.as_matrix() - g.as_matrix()) * si.as_matrix() * 15.0;
        let got = p.nll_egrad(&s).unwrap();
        assert_relative_eq!(got.as_matrix(), &expect, max_relative = 1e-9, epsilon = 1e-9);
    }

    #[test]
    fn cccp_step_inverts_fp_map() {
        let p = problem(Dgf::Logistic, 4, 50, 5);
        let s = random_spd(&mut rng(6), 4);
        let a = p.cccp_step(&s.inverse()).unwrap();
        let b = p.fp_map(&s).unwrap().inverse();
        assert_relative_eq!(a.as_matrix(), b.as_matrix(), max_relative = 1e-9);
    }

    #[test]
    fn cccp_rejects_negative_h() {
        let p = problem(Dgf::PearsonII { nu: -0.5 }, 2, 10, 7);
        let big = p.default_initial();
        assert!(matches!(p.cccp_step(&big.inverse()), Err(Error::ClassViolation(_))));
    }

    #[test]
    fn gaussian_fixed_point_is_the_sample_covariance() {
        let p = problem(Dgf::gaussian(3), 3, 25, 8);
        let s = random_spd(&mut rng(9), 3);
        let g = p.fp_map(&s).unwrap();
        let c = p.data().second_moment().unwrap();
        assert_relative_eq!(g.as_matrix(), c.as_matrix(), max_relative = 1e-12);
    }

    #[test]
    fn rank_deficient_data_is_rejected() {
        let x = DMatrix::from_row_slice(3, 4, &[1.0, 2.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let data = Dataset::from_columns(x).unwrap();
        assert_eq!(data.rank(), 2);
        assert!(matches!(EcdProblem::new(Dgf::gaussian(3), data), Err(Error::Rank { rank: 2, dim: 3 })));
    }

    #[test]
    fn zero_samples_are_rejected() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        assert!(Dataset::from_columns(x).is_err());
    }

    #[test]
    fn sampling_is_reproducible() {
        let s = random_spd(&mut rng(1), 3);
        let a = sample(&Dgf::Kotz { alpha: 1.0, b: 2.0, beta: 0.5 }, &s, 50, 11).unwrap();
        let b = sample(&Dgf::Kotz { alpha: 1.0, b: 2.0, beta: 0.5 }, &s, 50, 11).unwrap();
        assert_eq!(a.columns(), b.columns());
        assert!(sample(&Dgf::Logistic, &s, 5, 1).is_err());
    }

    #[test]
    fn line_concentration_is_flagged() {
        // 6 of 10 points on one line, d = 3, α = 0.5: bound is n/2
        let mut cols = Vec::new();
        for k in 1..=6 {
            cols.extend_from_slice(&[k as f64, -(k as f64), 0.5 * k as f64]);
        }
        cols.extend_from_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let data = Dataset::from_columns(DMatrix::from_column_slice(3, 10, &cols)).unwrap();
        let rep = existence_check(&data, 0.5);
        assert!(!rep.ok && rep.exact);
        let w = &rep.warnings[0];
        assert_eq!((w.kind, w.count), (SubspaceKind::Line, 6));
        assert!(existence_check(&data, 1.5).ok);
    }

    #[test]
    fn plane_concentration_is_flagged() {
        // 8 of 10 points in the plane z = 0; α = 0.25 gives bound 2n/2.5 = 8
        let mut cols = Vec::new();
        for k in 0..8 {
            let a = k as f64 * 0.7 + 0.1;
            cols.extend_from_slice(&[a.cos(), a.sin(), 0.0]);
        }
        cols.extend_from_slice(&[0.0, 0.3, 1.0, 0.5, 0.0, -1.0]);
        let data = Dataset::from_columns(DMatrix::from_column_slice(3, 10, &cols)).unwrap();
        let rep = existence_check(&data, 0.25);
        let plane = rep.warnings.iter().find(|w| w.kind == SubspaceKind::Plane).unwrap();
        assert_eq!(plane.count, 8);
        assert_eq!(plane.witness.len(), 2);
    }
}
