//! Riemannian geometry of the SPD cone under the affine-invariant metric
//! `g_X(η, ξ) = tr(η X⁻¹ ξ X⁻¹)`, together with the Riemannian distance `δ_R`
//! and the Thompson part metric `δ_T`.

use std::sync::OnceLock;

use nalgebra::DMatrix;

use crate::error::{dim_mismatch, Error, Result};
use crate::spd::{self, EigDecomp, SpdMatrix, SymMatrix};

#[derive(Debug, Clone)]
struct PointCache {
    eig: EigDecomp,
    inv: DMatrix<f64>,
    sqrt: DMatrix<f64>,
    inv_sqrt: DMatrix<f64>,
    chol: DMatrix<f64>,
}

/// A point of the manifold with lazily computed spectral data.
///
/// The cache is filled at most once (through a `OnceLock`), so points can be
/// shared between threads.
#[derive(Debug, Clone)]
pub struct ManifoldPoint {
    value: SpdMatrix,
    cache: OnceLock<PointCache>,
}

impl From<SpdMatrix> for ManifoldPoint {
    fn from(value: SpdMatrix) -> Self {
        Self::new(value)
    }
}

impl ManifoldPoint {
    pub fn new(value: SpdMatrix) -> Self {
        Self {
            value,
            cache: OnceLock::new(),
        }
    }

    pub fn value(&self) -> &SpdMatrix {
        &self.value
    }

    pub fn into_value(self) -> SpdMatrix {
        self.value
    }

    pub fn dim(&self) -> usize {
        self.value.dim()
    }

    fn cache(&self) -> &PointCache {
        self.cache.get_or_init(|| {
            let eig = self.value.eig();
            debug_assert!(
                spd::rel_frobenius(&eig.reconstruct(), self.value.as_matrix()) <= 1e-10,
                "cached eigendecomposition does not reconstruct the point"
            );
            PointCache {
                inv: eig.map(|l| 1.0 / l),
                sqrt: eig.map(f64::sqrt),
                inv_sqrt: eig.map(|l| 1.0 / l.sqrt()),
                chol: self.value.cholesky_factor(),
                eig,
            }
        })
    }

    pub fn eig(&self) -> &EigDecomp {
        &self.cache().eig
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.cache().inv
    }

    pub fn sqrt(&self) -> &DMatrix<f64> {
        &self.cache().sqrt
    }

    pub fn inv_sqrt(&self) -> &DMatrix<f64> {
        &self.cache().inv_sqrt
    }

    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.cache().chol
    }
}

fn check_dims(x: &ManifoldPoint, v: &SymMatrix) -> Result<()> {
    if x.dim() != v.dim() {
        return Err(dim_mismatch(x.dim(), v.dim()));
    }
    Ok(())
}

/// Intrinsic inner product `tr(η X⁻¹ ξ X⁻¹)`.
pub fn inner(x: &ManifoldPoint, eta: &SymMatrix, xi: &SymMatrix) -> Result<f64> {
    check_dims(x, eta)?;
    check_dims(x, xi)?;
    let xi_inv = x.inverse();
    let a = xi_inv * eta.as_matrix();
    let b = xi_inv * xi.as_matrix();
    // tr(a b) = Σ a_ij b_ji
    Ok(a.dot(&b.transpose()))
}

/// Norm induced by [`inner`].
pub fn norm(x: &ManifoldPoint, xi: &SymMatrix) -> Result<f64> {
    Ok(inner(x, xi, xi)?.max(0.0).sqrt())
}

/// Riemannian gradient `X · g_euc · X` from the symmetrized Euclidean gradient.
pub fn egrad_to_rgrad(x: &ManifoldPoint, g_euc: &SymMatrix) -> Result<SymMatrix> {
    check_dims(x, g_euc)?;
    let xm = x.value().as_matrix();
    Ok(SymMatrix::symmetrize(xm * g_euc.as_matrix() * xm))
}

/// Retraction `R_X(ξ) = X exp(X⁻¹ ξ)`, which is also the exponential map.
pub fn retract(x: &ManifoldPoint, xi: &SymMatrix) -> Result<SpdMatrix> {
    GeodesicRay::new(x, xi)?.point(1.0)
}

/// The geodesic `t ↦ X exp(t X⁻¹ ξ)` with its velocity.
///
/// With `X = L Lᵀ` and `L⁻¹ ξ L⁻ᵀ = Q Λ Qᵀ`, `X⁻¹ξ = L⁻ᵀ Q Λ Qᵀ Lᵀ`, so the
/// point at time `t` is `(LQ) e^{tΛ} (LQ)ᵀ` and its velocity is
/// `(LQ) Λ e^{tΛ} (LQ)ᵀ`. The velocity at `t` equals the parallel transport of
/// `ξ` from `X` to the point at `t`.
#[derive(Debug, Clone)]
pub struct GeodesicRay {
    lq: DMatrix<f64>,
    lambda: Vec<f64>,
    log_cond: f64,
}

impl GeodesicRay {
    pub fn new(x: &ManifoldPoint, xi: &SymMatrix) -> Result<Self> {
        check_dims(x, xi)?;
        let whitened = x.value().whiten(xi.as_matrix());
        let e = spd::eig_sym(&whitened)?;
        let lq = x.cholesky_factor() * &e.eigenvectors;
        let ex = x.eig();
        Ok(Self {
            lq,
            lambda: e.eigenvalues.iter().copied().collect(),
            log_cond: (ex.max_eigenvalue() / ex.min_eigenvalue()).ln(),
        })
    }

    fn spread(&self) -> (f64, f64) {
        let hi = self.lambda.first().copied().unwrap_or(0.0);
        let lo = self.lambda.last().copied().unwrap_or(0.0);
        (hi, lo)
    }

    fn weighted(&self, w: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut m = self.lq.clone();
        for (j, &l) in self.lambda.iter().enumerate() {
            m.column_mut(j).scale_mut(w(l));
        }
        &m * self.lq.transpose()
    }

    pub fn point(&self, t: f64) -> Result<SpdMatrix> {
        let (hi, lo) = self.spread();
        let (a, b) = ((t * hi).max(t * lo), (t * hi).min(t * lo));
        if !(a < 700.0) || !(b > -700.0) {
            return Err(Error::StepTooLarge);
        }
        let y = SymMatrix::symmetrize(self.weighted(|l| (t * l).exp()));
        // cond(Y) ≤ cond(X) e^{|t|(λ_max − λ_min)}; only near the PD threshold is
        // a spectral check needed
        if self.log_cond + (a - b) < 13.0 * std::f64::consts::LN_10 {
            Ok(SpdMatrix::from_matrix_unchecked(y.into_matrix()))
        } else {
            SpdMatrix::from_sym(y).map_err(|_| Error::StepTooLarge)
        }
    }

    pub fn velocity(&self, t: f64) -> SymMatrix {
        SymMatrix::symmetrize(self.weighted(|l| l * (t * l).exp()))
    }
}

/// Riemannian logarithm `Log_X(Y) = X^{1/2} log(X^{-1/2} Y X^{-1/2}) X^{1/2}`.
pub fn log_map(x: &ManifoldPoint, y: &SpdMatrix) -> Result<SymMatrix> {
    if x.dim() != y.dim() {
        return Err(dim_mismatch(x.dim(), y.dim()));
    }
    let l = x.cholesky_factor();
    let w = x.value().whiten(y.as_matrix());
    let lg = spd::eig_sym(&w)?.map(f64::ln);
    Ok(SymMatrix::symmetrize(l * lg * l.transpose()))
}

/// Parallel transport `T_{X,Y}(η) = E η Eᵀ` with `E = (Y X⁻¹)^{1/2}`.
///
/// `E` is the principal square root of a matrix with positive spectrum, formed as
/// `E = Y^{1/2} W^{1/2} Y^{-1/2}` with `W = Y^{1/2} X⁻¹ Y^{1/2}` symmetric
/// positive definite. Both `E` and `E⁻¹` are kept so a transport can be applied
/// in either direction repeatedly.
#[derive(Debug, Clone)]
pub struct Transport {
    e: DMatrix<f64>,
    e_inv: DMatrix<f64>,
}

impl Transport {
    pub fn between(x: &ManifoldPoint, y: &ManifoldPoint) -> Result<Self> {
        if x.dim() != y.dim() {
            return Err(dim_mismatch(x.dim(), y.dim()));
        }
        let yh = y.sqrt();
        let yih = y.inv_sqrt();
        let w = SymMatrix::symmetrize(yh * x.inverse() * yh);
        let we = w.eig();
        let wh = we.map(f64::sqrt);
        let wih = we.map(|l| 1.0 / l.sqrt());
        Ok(Self {
            e: yh * wh * yih,
            e_inv: yh * wih * yih,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.e
    }

    pub fn apply(&self, eta: &SymMatrix) -> SymMatrix {
        SymMatrix::symmetrize(&self.e * eta.as_matrix() * self.e.transpose())
    }

    pub fn apply_inv(&self, eta: &SymMatrix) -> SymMatrix {
        SymMatrix::symmetrize(&self.e_inv * eta.as_matrix() * self.e_inv.transpose())
    }
}

pub fn transport(x: &ManifoldPoint, y: &ManifoldPoint, eta: &SymMatrix) -> Result<SymMatrix> {
    check_dims(x, eta)?;
    Ok(Transport::between(x, y)?.apply(eta))
}

/// Inverse of [`transport`]: maps a tangent vector at `Y` back to `X`.
pub fn transport_inv(x: &ManifoldPoint, y: &ManifoldPoint, eta: &SymMatrix) -> Result<SymMatrix> {
    check_dims(y, eta)?;
    Ok(Transport::between(x, y)?.apply_inv(eta))
}

/// Riemannian distance `‖log(A^{-1/2} B A^{-1/2})‖_F`.
pub fn dist_riem(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    let ev = spd::generalized_eigenvalues(b, a)?;
    Ok(ev.iter().map(|l| l.ln().powi(2)).sum::<f64>().sqrt())
}

/// Thompson part metric `‖log(B^{-1/2} A B^{-1/2})‖₂ = max |log λ(A, B)|`.
pub fn dist_thompson(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    let ev = spd::generalized_eigenvalues(a, b)?;
    let hi = ev[0].ln();
    let lo = ev[ev.len() - 1].ln();
    Ok(hi.abs().max(lo.abs()))
}

/// `max(log W(A/B), log W(B/A))` with `W(A/B) = inf{λ > 0 : A ⪯ λB}`.
///
/// Independent of [`dist_thompson`]: each `W` is found by bisection on the
/// Löwner order, so this routine is only meant for verification.
pub fn dist_thompson_by_order(a: &SpdMatrix, b: &SpdMatrix, rel_tol: f64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(dim_mismatch(a.dim(), b.dim()));
    }
    let w = |p: &SpdMatrix, q: &SpdMatrix| -> f64 {
        // smallest λ with p ⪯ λ q, found on log λ
        let leq = |lam: f64| {
            spd::loewner_leq(&p.to_sym(), &(&q.to_sym() * lam), 0.0)
        };
        let (mut lo, mut hi) = (-1.0f64, 1.0f64);
        while !leq(hi.exp()) {
            hi *= 2.0;
        }
        while leq(lo.exp()) {
            lo *= 2.0;
        }
        while hi - lo > rel_tol {
            let mid = 0.5 * (lo + hi);
            if leq(mid.exp()) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    };
    Ok(w(a, b).max(w(b, a)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_spd, random_sym, rng};
    use approx::assert_relative_eq;

    fn pt(s: SpdMatrix) -> ManifoldPoint {
        ManifoldPoint::new(s)
    }

    #[test]
    fn inner_examples() {
        let i = pt(SpdMatrix::identity(3));
        let mut r = rng(11);
        let eta = random_sym(&mut r, 3, 1.0);
        let xi = random_sym(&mut r, 3, 1.0);
        let expected = (eta.as_matrix() * xi.as_matrix()).trace();
        assert_relative_eq!(inner(&i, &eta, &xi).unwrap(), expected, epsilon = 1e-14);
        assert_eq!(inner(&i, &SymMatrix::zeros(3), &xi).unwrap(), 0.0);

        // X = 2I: tr(I (1/2)I I (1/2)I) = 2 * 1/4
        let x = pt(SpdMatrix::scaled_identity(2, 2.0).unwrap());
        let id = SymMatrix::identity(2);
        assert_relative_eq!(inner(&x, &id, &id).unwrap(), 0.5, epsilon = 1e-15);
        assert!(inner(&x, &SymMatrix::identity(3), &id).is_err());
    }

    #[test]
    fn rgrad_examples() {
        let mut r = rng(2);
        let g = random_sym(&mut r, 3, 1.0);
        let i = pt(SpdMatrix::identity(3));
        assert_eq!(egrad_to_rgrad(&i, &g).unwrap(), g);

        let x = random_spd(&mut r, 3);
        let xp = pt(x.clone());
        let rg = egrad_to_rgrad(&xp, &SymMatrix::identity(3)).unwrap();
        let x2 = x.as_matrix() * x.as_matrix();
        assert!(spd::rel_frobenius(rg.as_matrix(), &x2) < 1e-13);
        assert!(egrad_to_rgrad(&xp, &SymMatrix::zeros(3)).unwrap().as_matrix().amax() == 0.0);
    }

    #[test]
    fn rgrad_duality_with_euclidean_derivative() {
        let mut r = rng(3);
        let x = pt(random_spd(&mut r, 4));
        let g = random_sym(&mut r, 4, 1.0);
        let rg = egrad_to_rgrad(&x, &g).unwrap();
        for _ in 0..5 {
            let xi = random_sym(&mut r, 4, 1.0);
            let lhs = inner(&x, &rg, &xi).unwrap();
            let rhs = g.trace_product(&xi);
            assert_relative_eq!(lhs, rhs, max_relative = 1e-8, epsilon = 1e-10);
        }
    }

    #[test]
    fn retract_examples() {
        let mut r = rng(5);
        let x = pt(random_spd(&mut r, 3));
        let y = retract(&x, &SymMatrix::zeros(3)).unwrap();
        assert!(spd::rel_frobenius(y.as_matrix(), x.value().as_matrix()) < 1e-13);

        let y = retract(&pt(SpdMatrix::identity(2)), &SymMatrix::from_diagonal(&[1.0, 0.0])).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[std::f64::consts::E, 0.0, 0.0, 1.0]);
        assert!((y.as_matrix() - expected).amax() < 1e-14);
    }

    #[test]
    fn retract_matches_symmetric_exponential_map() {
        let mut r = rng(6);
        for _ in 0..20 {
            let x = pt(random_spd(&mut r, 4));
            let e = random_sym(&mut r, 4, 0.7);
            let xi = SymMatrix::symmetrize(x.sqrt() * e.as_matrix() * x.sqrt());
            let got = retract(&x, &xi).unwrap();
            let inner_m = SymMatrix::symmetrize(x.inv_sqrt() * xi.as_matrix() * x.inv_sqrt());
            let ex = inner_m.exp().unwrap();
            let expected = x.sqrt() * ex.as_matrix() * x.sqrt();
            assert!(spd::rel_frobenius(got.as_matrix(), &expected) < 1e-9);
        }
    }

    #[test]
    fn ray_velocity_is_transported_direction() {
        let mut r = rng(12);
        for _ in 0..10 {
            let x = pt(random_spd(&mut r, 4));
            let e = random_sym(&mut r, 4, 0.5);
            let xi = SymMatrix::symmetrize(x.sqrt() * e.as_matrix() * x.sqrt());
            let ray = GeodesicRay::new(&x, &xi).unwrap();
            let v0 = ray.velocity(0.0);
            assert!(spd::rel_frobenius(v0.as_matrix(), xi.as_matrix()) < 1e-9);
            let t = 0.8;
            let y = pt(ray.point(t).unwrap());
            let tv = transport(&x, &y, &xi).unwrap();
            assert!(spd::rel_frobenius(ray.velocity(t).as_matrix(), tv.as_matrix()) < 1e-8);
        }
    }

    #[test]
    fn retract_overflow_is_reported() {
        let x = pt(SpdMatrix::identity(2));
        let huge = SymMatrix::from_diagonal(&[800.0, 0.0]);
        assert_eq!(retract(&x, &huge).unwrap_err(), Error::StepTooLarge);
    }

    #[test]
    fn transport_examples() {
        let mut r = rng(7);
        let x = pt(random_spd(&mut r, 3));
        let eta = random_sym(&mut r, 3, 1.0);
        let same = transport(&x, &x, &eta).unwrap();
        assert!(spd::rel_frobenius(same.as_matrix(), eta.as_matrix()) < 1e-10);
        let back = transport_inv(&x, &x, &eta).unwrap();
        assert!(spd::rel_frobenius(back.as_matrix(), eta.as_matrix()) < 1e-10);

        let i = pt(SpdMatrix::identity(3));
        let y = random_spd(&mut r, 3);
        let yh = y.sqrt();
        let yp = pt(y);
        let t = transport(&i, &yp, &eta).unwrap();
        let expected = yh.as_matrix() * eta.as_matrix() * yh.as_matrix();
        assert!(spd::rel_frobenius(t.as_matrix(), &expected) < 1e-10);

        let ti = transport_inv(&i, &yp, &eta).unwrap();
        let yih = yp.inv_sqrt();
        let expected = yih * eta.as_matrix() * yih;
        assert!(spd::rel_frobenius(ti.as_matrix(), &expected) < 1e-10);
    }

    #[test]
    fn transport_matrix_squares_to_y_x_inverse() {
        let mut r = rng(8);
        let x = pt(random_spd(&mut r, 4));
        let y = pt(random_spd(&mut r, 4));
        let t = Transport::between(&x, &y).unwrap();
        let e2 = t.matrix() * t.matrix();
        let target = y.value().as_matrix() * x.inverse();
        assert!(spd::rel_frobenius(&e2, &target) < 1e-9);
    }

    #[test]
    fn distance_examples() {
        let mut r = rng(9);
        let a = random_spd(&mut r, 3);
        let b = random_spd(&mut r, 3);
        assert!(dist_riem(&a, &a).unwrap() < 1e-7);
        let e2 = std::f64::consts::E.powi(2);
        let d = dist_riem(&SpdMatrix::from_diagonal(&[1.0, e2]).unwrap(), &SpdMatrix::identity(2)).unwrap();
        assert_relative_eq!(d, 2.0, epsilon = 1e-13);
        let c = 3.7;
        assert_relative_eq!(
            dist_riem(&a.scale(c).unwrap(), &b.scale(c).unwrap()).unwrap(),
            dist_riem(&a, &b).unwrap(),
            max_relative = 1e-10
        );

        let two = SpdMatrix::scaled_identity(2, 2.0).unwrap();
        assert_relative_eq!(
            dist_thompson(&two, &SpdMatrix::identity(2)).unwrap(),
            2f64.ln(),
            epsilon = 1e-15
        );
        let d = dist_thompson(
            &SpdMatrix::from_diagonal(&[1.0, 8.0]).unwrap(),
            &SpdMatrix::from_diagonal(&[2.0, 2.0]).unwrap(),
        )
        .unwrap();
        assert_relative_eq!(d, 4f64.ln(), epsilon = 1e-14);
        assert!(dist_thompson(&a, &a).unwrap() < 1e-7);
    }

    #[test]
    fn thompson_agrees_with_order_form() {
        let mut r = rng(10);
        for _ in 0..10 {
            let a = random_spd(&mut r, 3);
            let b = random_spd(&mut r, 3);
            let spectral = dist_thompson(&a, &b).unwrap();
            let order = dist_thompson_by_order(&a, &b, 1e-10).unwrap();
            assert!((spectral - order).abs() < 1e-7, "{spectral} vs {order}");
        }
    }
}
