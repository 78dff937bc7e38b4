//! Seeded random generators shared by the oracles, samplers and tests.
//!
//! All streams are ChaCha8 seeded from a `u64`; per-trial streams are selected
//! with `set_stream(trial)` so trial `k` is reproducible in isolation.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::spd::{SpdMatrix, SymMatrix};

/// Largest condition number accepted by [`random_spd`].
pub const MAX_CONDITION: f64 = 1e6;

/// Diagonal shift added to `M Mᵀ` by [`random_spd`].
pub const SPD_SHIFT: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` derived from `seed`.
pub fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub fn random_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `M Mᵀ + 10⁻³ I` with standard normal `M`, resampled until `κ ≤ 10⁶`.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, d: usize) -> SpdMatrix {
    loop {
        let m = random_matrix(rng, d, d);
        let s = &m * m.transpose() + DMatrix::identity(d, d) * SPD_SHIFT;
        let s = SymMatrix::symmetrize(s);
        let e = s.eig();
        if e.max_eigenvalue() <= MAX_CONDITION * e.min_eigenvalue() {
            if let Ok(p) = SpdMatrix::from_sym(s) {
                return p;
            }
        }
    }
}

/// Symmetric matrix with i.i.d. `N(0, scale²)` entries on and above the diagonal.
pub fn random_sym<R: Rng + ?Sized>(rng: &mut R, d: usize, scale: f64) -> SymMatrix {
    let mut m = DMatrix::zeros(d, d);
    for j in 0..d {
        for i in j..d {
            let v: f64 = rng.sample(StandardNormal);
            m[(i, j)] = v * scale;
            m[(j, i)] = v * scale;
        }
    }
    SymMatrix::symmetrize(m)
}

/// Gaussian `rows × cols` matrix (`rows ≥ cols`) whose singular values satisfy
/// `σ_max ≤ max_cond · σ_min`.
pub fn random_full_rank<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    max_cond: f64,
) -> DMatrix<f64> {
    assert!(rows >= cols, "random_full_rank needs rows >= cols");
    loop {
        let m = random_matrix(rng, rows, cols);
        let sv = crate::spd::singular_values(&m);
        let (smax, smin) = (sv[0], sv[sv.len() - 1]);
        if smin > 0.0 && smax <= max_cond * smin {
            return m;
        }
    }
}

/// A point `C^{1/2} exp(E) C^{1/2}` with `E` symmetric Gaussian of entry scale
/// `spread`, i.e. a random point at Riemannian distance `O(spread · d)` from `C`.
pub fn random_spd_near<R: Rng + ?Sized>(rng: &mut R, center: &SpdMatrix, spread: f64) -> SpdMatrix {
    let d = center.dim();
    let e = random_sym(rng, d, spread);
    let ex = e.exp().expect("exp of a symmetric matrix is positive definite");
    let c = center.sqrt();
    SpdMatrix::from_matrix_unchecked(c.as_matrix() * ex.as_matrix() * c.as_matrix())
}
