//! Complex dense linear algebra helpers shared by the simulator.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CVector = DVector<C64>;
pub type CMatrix = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Row-major K×L container indexed by `(ue, ap)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGrid<T> {
    ues: usize,
    aps: usize,
    data: Vec<T>,
}

impl<T> PairGrid<T> {
    pub fn from_fn(ues: usize, aps: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(ues * aps);
        for k in 0..ues {
            for l in 0..aps {
                data.push(f(k, l));
            }
        }
        Self { ues, aps, data }
    }

    pub fn from_vec(ues: usize, aps: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), ues * aps, "grid data length mismatch");
        Self { ues, aps, data }
    }

    pub fn ues(&self) -> usize {
        self.ues
    }

    pub fn aps(&self) -> usize {
        self.aps
    }

    pub fn get(&self, ue: usize, ap: usize) -> &T {
        &self.data[ue * self.aps + ap]
    }

    pub fn get_mut(&mut self, ue: usize, ap: usize) -> &mut T {
        &mut self.data[ue * self.aps + ap]
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &T)> {
        let aps = self.aps;
        self.data.iter().enumerate().map(move |(i, v)| ((i / aps, i % aps), v))
    }

    pub fn map<U>(&self, mut f: impl FnMut(usize, usize, &T) -> U) -> PairGrid<U> {
        PairGrid::from_fn(self.ues, self.aps, |k, l| f(k, l, self.get(k, l)))
    }
}

/// One standard circularly-symmetric complex normal sample, CN(0, 1).
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn complex_normal_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CVector {
    CVector::from_fn(n, |_, _| complex_normal(rng))
}

/// Returns `(a + aᴴ) / 2`.
pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()).scale(0.5)
}

pub fn trace_re(a: &CMatrix) -> f64 {
    a.diagonal().iter().map(|z| z.re).sum()
}

/// Eigenvalues of a Hermitian matrix (the strictly lower triangle is ignored
/// only up to symmetrization).
pub fn hermitian_eigenvalues(a: &CMatrix) -> DVector<f64> {
    SymmetricEigen::new(hermitian_part(a)).eigenvalues
}

pub fn min_eigenvalue(a: &CMatrix) -> f64 {
    hermitian_eigenvalues(a).min()
}

/// Clips negative eigenvalues of a Hermitian matrix to zero.
pub fn clip_to_psd(a: &CMatrix) -> CMatrix {
    let eig = SymmetricEigen::new(hermitian_part(a));
    if eig.eigenvalues.min() >= 0.0 {
        return hermitian_part(a);
    }
    let clipped = eig.eigenvalues.map(|v| C64::new(v.max(0.0), 0.0));
    let u = &eig.eigenvectors;
    hermitian_part(&(u * CMatrix::from_diagonal(&clipped) * u.adjoint()))
}

/// Returns `L` with `L Lᴴ = a` for a Hermitian PSD matrix.
///
/// Uses Cholesky when the matrix is positive definite and falls back to the
/// eigen-decomposition square root for singular matrices.
pub fn psd_factor(a: &CMatrix) -> Result<CMatrix> {
    let n = a.nrows();
    if a.iter().all(|z| *z == ZERO) {
        return Ok(CMatrix::zeros(n, n));
    }
    if let Some(chol) = checked_cholesky(a) {
        return Ok(chol.l());
    }
    let eig = SymmetricEigen::new(hermitian_part(a));
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if eig.eigenvalues.min() < -1e-10 * scale.max(f64::MIN_POSITIVE) * n as f64 {
        return Err(Error::numerical(format!(
            "matrix is not positive semidefinite (min eigenvalue {:e})",
            eig.eigenvalues.min()
        )));
    }
    let roots = eig.eigenvalues.map(|v| C64::new(v.max(0.0).sqrt(), 0.0));
    Ok(&eig.eigenvectors * CMatrix::from_diagonal(&roots))
}

/// nalgebra takes complex square roots of the pivots, so an indefinite
/// matrix can still "factor". Reject any pivot that is not real positive.
fn checked_cholesky(a: &CMatrix) -> Option<Cholesky<C64, Dyn>> {
    let chol = hermitian_part(a).cholesky()?;
    let l = chol.l_dirty();
    let ok = (0..l.nrows()).all(|i| {
        let d = l[(i, i)];
        d.re > 0.0 && d.re.is_finite() && d.im.abs() <= 1e-12 * d.re
    });
    ok.then_some(chol)
}

/// Cholesky factorization of a Hermitian positive definite matrix.
pub fn hermitian_factor(a: &CMatrix) -> Result<Cholesky<C64, Dyn>> {
    checked_cholesky(a).ok_or_else(|| Error::numerical("Hermitian system is not positive definite"))
}

/// Solves `a x = b` for Hermitian positive definite `a`.
pub fn hermitian_solve(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    Ok(hermitian_factor(a)?.solve(b))
}

pub fn hermitian_solve_vec(a: &CMatrix, b: &CVector) -> Result<CVector> {
    Ok(hermitian_factor(a)?.solve(b))
}

/// Relative Frobenius distance `‖a − b‖ / max(‖b‖, tiny)`.
pub fn relative_error(a: &CMatrix, b: &CMatrix) -> f64 {
    let denom = b.norm().max(f64::MIN_POSITIVE);
    (a - b).norm() / denom
}
